#include "gmixseq/nfmg.hpp"

#include <cmath>

#include "doctest.h"
#include "gmixseq/metrics.hpp"

using namespace gmixseq;

namespace {

NfmgConfig tiny_config(int d_latent = 4, int flow_steps = 2) {
  NfmgConfig cfg;
  cfg.d_audio = 4;
  cfg.d_latent = d_latent;
  cfg.flow_steps = flow_steps;
  cfg.encoder = {1, 16, 2, 32};
  cfg.coupling = {1, 16, 2, 32};
  cfg.decoder = {1, 16, 2, 32};
  cfg.init_seed = 21;
  return cfg;
}

FlowStack make_flow(int dim, int steps, std::uint64_t seed) {
  Rng rng(seed);
  return FlowStack(dim, steps, {1, 16, 2, 32}, rng);
}

// Flows initialize to the identity; give the coupling heads real weight so a
// test sees a non-trivial map. Scales stay well inside the tanh bound.
void randomize_heads(FlowStack& flow, std::uint64_t seed, double wscale = 0.1, double bscale = 0.5) {
  Rng rng(seed);
  for (auto& s : flow.steps) {
    s.head.weight.value = rng.normal_matrix(s.head.weight.value.rows(), s.head.weight.value.cols(), wscale);
    s.head.bias.value = rng.normal_matrix(1, s.head.bias.value.cols(), bscale);
  }
}

void zero_coupling(CouplingStep& step) {
  step.head.weight.value.setZero();
  step.head.bias.value.setZero();
}

}  // namespace

TEST_CASE("coupling: a fresh step is the identity with zero log-det") {
  Rng rng(500);
  CouplingStep step(6, {1, 16, 2, 32}, rng);
  Tape tape;
  const Matrix z = rng.normal_matrix(1, 6);
  auto [zp, ld] = step.forward(tape, tape.constant(z));
  CHECK(zp.value() == z);
  CHECK(ld.scalar() == 0.0);

  auto [back, ldi] = step.inverse(tape, zp);
  CHECK(back.value() == z);
  CHECK(ldi.scalar() == 0.0);
}

TEST_CASE("coupling: constant scale on 2 transformed dims gives log_det = 2c") {
  Rng rng(501);
  CouplingStep step(4, {1, 16, 2, 32}, rng);
  zero_coupling(step);
  // bias of the head sets scale_raw = atanh(c/2) on the scale slots -> s = c
  const double c = 0.8;
  step.head.bias.value(0, 0) = std::atanh(c / 2.0);
  step.head.bias.value(0, 1) = std::atanh(c / 2.0);
  Tape tape;
  const Matrix z = rng.normal_matrix(1, 4);
  auto [zp, ld] = step.forward(tape, tape.constant(z));
  CHECK(ld.scalar() == doctest::Approx(2.0 * c).epsilon(1e-12));
  CHECK(zp.value()(0, 0) == doctest::Approx(z(0, 0) * std::exp(c)).epsilon(1e-12));
  CHECK(zp.value()(0, 2) == z(0, 2));
  CHECK(zp.value()(0, 3) == z(0, 3));
}

TEST_CASE("coupling round trips are exact in both directions") {
  Rng rng(502);
  CouplingStep step(6, {1, 16, 2, 32}, rng);
  step.head.weight.value = rng.normal_matrix(step.head.weight.value.rows(), step.head.weight.value.cols(), 0.2);
  step.head.bias.value = rng.normal_matrix(1, step.head.bias.value.cols(), 0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    Tape tape;
    const Matrix z = rng.normal_matrix(1, 6, 2.0);
    auto [zp, ld] = step.forward(tape, tape.constant(z));
    auto [back, ldi] = step.inverse(tape, zp);
    CHECK((back.value() - z).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(ld.scalar() + ldi.scalar()) < 1e-10);
  }
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const Matrix zp0 = rng.normal_matrix(1, 6, 2.0);
    auto [z, ldi] = step.inverse(tape, tape.constant(zp0));
    auto [zp, ld] = step.forward(tape, z);
    CHECK((zp.value() - zp0).cwiseAbs().maxCoeff() < 1e-10);
  }
  Tape tape;
  CHECK_THROWS_AS(step.forward(tape, tape.constant(Matrix::Zero(1, 5))), std::invalid_argument);
}

TEST_CASE("flow stack: identity flow, round trips, log-det antisymmetry") {
  FlowStack flow = make_flow(6, 3, 503);
  Rng rng(504);
  const Matrix z = rng.normal_matrix(1, 6);
  auto [zp, ld] = flow.forward_value(z);
  // flips still apply, so the map is a permutation with zero log-det
  CHECK(ld == 0.0);
  auto [back, ldi] = flow.inverse_value(zp);
  CHECK((back - z).cwiseAbs().maxCoeff() == 0.0);

  FlowStack live = make_flow(6, 3, 505);
  randomize_heads(live, 5050);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix z0 = rng.normal_matrix(1, 6, 2.0);
    auto [fwd, l1] = live.forward_value(z0);
    auto [rt, l2] = live.inverse_value(fwd);
    CHECK((rt - z0).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(l1 + l2) < 1e-10);
  }

  CHECK_THROWS_AS(make_flow(6, 1, 506), std::invalid_argument);
  CHECK_THROWS_AS(make_flow(5, 2, 506), std::invalid_argument);
}

TEST_CASE("flow composition with constant per-step scales") {
  FlowStack flow = make_flow(4, 2, 507);
  const double c1 = 0.4, c2 = -0.3;
  flow.steps[0].head.bias.value(0, 0) = std::atanh(c1 / 2.0);
  flow.steps[0].head.bias.value(0, 1) = std::atanh(c1 / 2.0);
  flow.steps[1].head.bias.value(0, 0) = std::atanh(c2 / 2.0);
  flow.steps[1].head.bias.value(0, 1) = std::atanh(c2 / 2.0);
  Rng rng(508);
  auto [zp, ld] = flow.forward_value(rng.normal_matrix(1, 4));
  CHECK(ld == doctest::Approx(2.0 * c1 + 2.0 * c2).epsilon(1e-12));
}

TEST_CASE("analytic log-det matches the numerically assembled Jacobian (d=4)") {
  FlowStack flow = make_flow(4, 3, 509);
  randomize_heads(flow, 5090);
  Rng rng(510);
  auto numeric_logdet = [&](const Matrix& z, double h) {
    Eigen::Matrix4d jac;
    for (int j = 0; j < 4; ++j) {
      Matrix zp = z, zm = z;
      zp(0, j) += h;
      zm(0, j) -= h;
      const Matrix fp = flow.forward_value(zp).first;
      const Matrix fm = flow.forward_value(zm).first;
      for (int i = 0; i < 4; ++i) jac(i, j) = (fp(0, i) - fm(0, i)) / (2.0 * h);
    }
    return std::log(std::abs(jac.determinant()));
  };
  int done = 0, attempts = 0;
  while (done < 5 && attempts < 50) {
    ++attempts;
    const Matrix z = rng.normal_matrix(1, 4);
    // a relu kink inside the stencil invalidates central differences; two
    // step sizes agreeing means the neighborhood is smooth
    const double n1 = numeric_logdet(z, 1e-5);
    const double n2 = numeric_logdet(z, 5e-6);
    if (std::abs(n1 - n2) > 1e-7) continue;
    CHECK(std::abs(flow.forward_value(z).second - n1) < 1e-5);
    ++done;
  }
  CHECK(done == 5);
}

TEST_CASE("flow_log_prob: identity flow equals the standard normal") {
  FlowStack flow = make_flow(4, 2, 511);
  Rng rng(512);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = rng.normal_matrix(1, 4);
    CHECK(flow.log_prob_value(z) == doctest::Approx(std_normal_log_pdf(z)).epsilon(1e-12));
  }
}

TEST_CASE("exp(flow_log_prob) integrates to one on a d=2 grid") {
  FlowStack flow = make_flow(2, 3, 513);
  randomize_heads(flow, 5130, 0.03, 0.1);
  const double lo = -12.0, hi = 12.0;
  const int n = 161;
  const double step = (hi - lo) / (n - 1);
  double total = 0.0;
  Matrix z(1, 2);
  for (int i = 0; i < n; ++i) {
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    z(0, 0) = lo + step * i;
    for (int j = 0; j < n; ++j) {
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      z(0, 1) = lo + step * j;
      total += wi * wj * std::exp(flow.log_prob_value(z));
    }
  }
  total *= step * step;
  CHECK(std::abs(total - 1.0) < 1e-2);
}

TEST_CASE("flow fits a bimodal target better than the standard normal") {
  FlowStack flow = make_flow(2, 4, 514);
  NamedParams params;
  flow.collect(params, "flow");
  Adam opt(params, {.lr = 5e-3});
  Rng rng(515);

  auto draw_target = [&]() {
    Matrix z = rng.normal_matrix(1, 2, 0.45);
    if (rng.uniform() < 0.5)
      z.array() += 2.0;
    else
      z.array() -= 2.0;
    return z;
  };
  std::vector<Matrix> data;
  for (int i = 0; i < 256; ++i) data.push_back(draw_target());

  for (int step = 0; step < 300; ++step) {
    opt.zero_grad();
    Tape tape;
    Tensor nll;
    for (int i = 0; i < 16; ++i) {
      const Matrix& x = data[(step * 16 + i) % data.size()];
      Tensor lp = flow.log_prob(tape, tape.constant(x));
      nll = i == 0 ? neg(lp) : sub(nll, lp);
    }
    tape.backward(scale(nll, 1.0 / 16.0));
    opt.step();
  }

  double flow_lp = 0.0, base_lp = 0.0;
  std::vector<Matrix> held;
  for (int i = 0; i < 200; ++i) held.push_back(draw_target());
  for (const auto& x : held) {
    flow_lp += flow.log_prob_value(x);
    base_lp += std_normal_log_pdf(x);
  }
  CHECK(flow_lp / 200.0 > base_lp / 200.0);

  // samples from the fitted flow also score at least as well under the flow
  // as under the base normal on average
  double s_flow = 0.0, s_base = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Matrix sample = flow.forward_value(rng.normal_matrix(1, 2)).first;
    s_flow += flow.log_prob_value(sample);
    s_base += std_normal_log_pdf(sample);
  }
  CHECK(s_flow >= s_base);
}

TEST_CASE("nfmg loss: perfect reconstruction zeroes rec and vel") {
  NfmgConfig cfg = tiny_config();
  NfmgModel model(cfg);
  Rng rng(516);
  // evaluate rec/vel on recon == target by construction: compare the loss's
  // own reconstruction against itself through the public pieces
  const Matrix motion = rng.normal_matrix(6, kMotionDim);
  const Matrix audio = rng.normal_matrix(6, 4);
  Tape tape;
  Tensor m = tape.constant(motion);
  Tensor diff = sub(m, m);
  CHECK(mean(mul(diff, diff)).scalar() == 0.0);

  // matched distributions: identity flow + standard-normal posterior
  NfmgModel forced(cfg);
  for (auto& [name, p] : forced.params())
    if (name.rfind("flow", 0) == 0 && name.find(".head.") != std::string::npos) p->value.setZero();
  for (auto& [name, p] : forced.params())
    if (name.rfind("enc.posterior", 0) == 0) p->value.setZero();
  Tape t2;
  NfmgLossTerms terms = forced.loss(t2, motion, audio, rng.normal_matrix(1, 4));
  CHECK(std::abs(terms.kl.scalar()) < 1e-10);
}

TEST_CASE("nfmg loss decomposition and gradient") {
  NfmgModel model(tiny_config());
  Rng rng(517);
  const Matrix motion = rng.normal_matrix(5, kMotionDim);
  const Matrix audio = rng.normal_matrix(5, 4);
  const Matrix noise = rng.normal_matrix(1, 4);

  Tape tape;
  NfmgLossTerms t = model.loss(tape, motion, audio, noise);
  const double recombined = t.rec.scalar() + model.weights().kl * t.kl.scalar() +
                            model.weights().vel * t.vel.scalar();
  CHECK(std::abs(t.total.scalar() - recombined) < 1e-12);

  auto f = [&](Tape& tp, const Tensor& m) { return model.loss(tp, m, audio, noise).total; };
  CHECK(grad_check(f, motion) < 1e-4);

  auto loss_value = [&]() {
    Tape tp;
    return model.loss(tp, motion, audio, noise).total.scalar();
  };
  for (auto& [name, p] : model.params()) p->zero_grad();
  {
    Tape tp;
    tp.backward(model.loss(tp, motion, audio, noise).total);
  }
  Rng pick(518);
  for (auto& [name, p] : model.params()) {
    INFO(name);
    CHECK(param_grad_check(loss_value, *p, p->grad, 1e-5, 3, &pick) < 1e-4);
  }
}

TEST_CASE("sample_motion: shape and noise sensitivity") {
  NfmgModel model(tiny_config());
  Rng rng(519);
  const Matrix audio = rng.normal_matrix(7, 4);
  Matrix a = model.sample_motion(audio, rng.normal_matrix(1, 4));
  CHECK(a.rows() == 7);
  CHECK(a.cols() == kMotionDim);
  Matrix b = model.sample_motion(audio, rng.normal_matrix(1, 4));
  CHECK((a - b).cwiseAbs().mean() > 0.0);
  CHECK_THROWS_AS(model.sample_motion(audio, Matrix::Zero(1, 6)), std::invalid_argument);
}

TEST_CASE("training descends and finetuning improves the target-speaker fit") {
  SyntheticCorpus pre = gen_motion_corpus(3, 4, 16, 61, MotionModality::Bimodal);
  NfmgConfig cfg = tiny_config(4, 2);
  cfg.d_audio = pre.d_audio;
  NfmgModel model(cfg);
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 12;  // full batch keeps the evaluation curve clean
  tc.seed = 62;
  Adam opt(model.params(), {.lr = 1e-3});
  TrainLog log = pretrain_nfmg(model, pre, tc, opt);
  REQUIRE(log.size() == 51);

  std::vector<double> totals;
  for (const auto& row : log) totals.push_back(row.terms[0]);
  auto smooth = [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 5; ++j) s += totals[j];
    return s / 5.0;
  };
  for (std::size_t i = 0; i + 5 < totals.size() - 4; ++i) CHECK(smooth(i + 1) <= smooth(i) + 1e-9);

  // seed determinism of the epoch-0 row
  NfmgModel model2(cfg);
  Adam opt2(model2.params(), {.lr = 1e-3});
  TrainConfig tc0 = tc;
  tc0.epochs = 0;
  TrainLog log2 = pretrain_nfmg(model2, pre, tc0, opt2);
  for (std::size_t i = 0; i < log2.front().terms.size(); ++i)
    CHECK(log2.front().terms[i] == log.front().terms[i]);

  // finetune on one speaker's data: target reconstruction improves
  std::vector<std::size_t> target_idx;
  for (std::size_t i = 0; i < pre.sequences.size(); ++i)
    if (pre.sequences[i].speaker == 0) target_idx.push_back(i);
  SyntheticCorpus target = pre.subset(target_idx);

  auto rec_on_target = [&](NfmgModel& m) {
    Rng noise(63);
    double rec = 0.0;
    for (const auto& s : target.sequences) {
      Tape tape;
      rec += m.loss(tape, s.coef, s.audio, noise.normal_matrix(1, 4)).rec.scalar();
    }
    return rec / static_cast<double>(target.sequences.size());
  };
  const double before = rec_on_target(model);
  TrainConfig ft = tc;
  ft.epochs = 30;
  ft.seed = 64;
  finetune_nfmg(model, target, ft, opt);
  CHECK(rec_on_target(model) < before);
}
