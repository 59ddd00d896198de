#include "gmixseq/nfmg.hpp"

#include <cmath>
#include <numeric>

namespace gmixseq {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Tensor std_normal_log_pdf(Tape& tape, const Tensor& z) {
  (void)tape;
  const double c = static_cast<double>(z.cols()) * kLog2Pi;
  return scale(add(sum(mul(z, z)), c), -0.5);
}

CouplingStep::CouplingStep(int latent_dim, const StackConfig& cfg, Rng& rng)
    : in_proj(latent_dim / 2, cfg.model_dim, rng), net(cfg, rng), head(cfg.model_dim, latent_dim, rng) {
  if (latent_dim % 2 != 0) throw std::invalid_argument("CouplingStep: latent dimension must be even");
  // Identity start: a freshly built flow is the identity map, and the scale
  // saturation bound only engages as training grows the head.
  head.weight.value.setZero();
  head.bias.value.setZero();
}

std::pair<Tensor, Tensor> CouplingStep::scale_shift(Tape& tape, const Tensor& cond_half) {
  Tensor token = in_proj.forward(tape, cond_half);
  Tensor enc = net.forward(tape, token);
  Tensor both = head.forward(tape, enc);
  const Eigen::Index h = cond_half.cols();
  Tensor s = scale(tanh(slice_cols(both, 0, h)), 2.0);
  Tensor t = slice_cols(both, h, h);
  return {s, t};
}

std::pair<Tensor, Tensor> CouplingStep::forward(Tape& tape, const Tensor& z) {
  if (z.rows() != 1 || z.cols() % 2 != 0) throw std::invalid_argument("coupling_forward: z must be 1 x even");
  const Eigen::Index h = z.cols() / 2;
  Tensor z1 = slice_cols(z, 0, h);
  Tensor z2 = slice_cols(z, h, h);
  auto [s, t] = scale_shift(tape, z2);
  Tensor z1p = add(mul(z1, exp(s)), t);
  return {concat_cols({z1p, z2}), sum(s)};
}

std::pair<Tensor, Tensor> CouplingStep::inverse(Tape& tape, const Tensor& z_prime) {
  if (z_prime.rows() != 1 || z_prime.cols() % 2 != 0)
    throw std::invalid_argument("coupling_inverse: z' must be 1 x even");
  const Eigen::Index h = z_prime.cols() / 2;
  Tensor z1p = slice_cols(z_prime, 0, h);
  Tensor z2 = slice_cols(z_prime, h, h);
  auto [s, t] = scale_shift(tape, z2);
  Tensor z1 = mul(sub(z1p, t), exp(neg(s)));
  return {concat_cols({z1, z2}), sum(neg(s))};
}

void CouplingStep::collect(NamedParams& out, const std::string& prefix) {
  in_proj.collect(out, prefix + ".in");
  net.collect(out, prefix + ".net");
  head.collect(out, prefix + ".head");
}

FlowStack::FlowStack(int latent_dim, int n_steps, const StackConfig& coupling_cfg, Rng& rng) : dim(latent_dim) {
  if (latent_dim % 2 != 0) throw std::invalid_argument("FlowStack: latent dimension must be even");
  if (n_steps < 2) throw std::invalid_argument("FlowStack: need at least 2 steps so all dims transform");
  steps.reserve(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) steps.emplace_back(latent_dim, coupling_cfg, rng);
}

std::pair<Tensor, Tensor> FlowStack::forward(Tape& tape, Tensor z) {
  Tensor total = tape.constant(0.0);
  for (auto& step : steps) {
    auto [zp, ld] = step.forward(tape, z);
    z = step.flip_after ? reverse_cols(zp) : zp;
    total = add(total, ld);
  }
  return {z, total};
}

std::pair<Tensor, Tensor> FlowStack::inverse(Tape& tape, Tensor z_prime) {
  Tensor total = tape.constant(0.0);
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    if (it->flip_after) z_prime = reverse_cols(z_prime);
    auto [z, ld] = it->inverse(tape, z_prime);
    z_prime = z;
    total = add(total, ld);
  }
  return {z_prime, total};
}

Tensor FlowStack::log_prob(Tape& tape, const Tensor& z_prime) {
  auto [base, log_det_inv] = inverse(tape, z_prime);
  return add(std_normal_log_pdf(tape, base), log_det_inv);
}

std::pair<Matrix, double> FlowStack::forward_value(const Matrix& z) {
  Tape tape;
  auto [zp, ld] = forward(tape, tape.constant(z));
  return {zp.value(), ld.scalar()};
}

std::pair<Matrix, double> FlowStack::inverse_value(const Matrix& z_prime) {
  Tape tape;
  auto [z, ld] = inverse(tape, tape.constant(z_prime));
  return {z.value(), ld.scalar()};
}

double FlowStack::log_prob_value(const Matrix& z_prime) {
  Tape tape;
  return log_prob(tape, tape.constant(z_prime)).scalar();
}

void FlowStack::collect(NamedParams& out, const std::string& prefix) {
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i].collect(out, prefix + ".step" + std::to_string(i));
}

NfmgModel::NfmgModel(NfmgConfig cfg, NfmgWeights weights) : cfg_(cfg), weights_(weights) {
  if (cfg_.d_latent % 2 != 0) throw std::invalid_argument("NfmgModel: latent dimension must be even");
  Rng rng(cfg_.init_seed);
  motion_in_ = Linear(cfg_.d_motion, cfg_.encoder.model_dim, rng);
  audio_enc_in_ = Linear(cfg_.d_audio, cfg_.encoder.model_dim, rng);
  encoder_ = EncoderStack(cfg_.encoder, rng);
  posterior_head_ = Linear(cfg_.encoder.model_dim, 2 * cfg_.d_latent, rng);
  flow_ = FlowStack(cfg_.d_latent, cfg_.flow_steps, cfg_.coupling, rng);
  prev_in_ = Linear(cfg_.d_motion, cfg_.decoder.model_dim, rng);
  lat_in_ = Linear(cfg_.d_latent, cfg_.decoder.model_dim, rng);
  mem_in_ = Linear(cfg_.d_audio, cfg_.decoder.model_dim, rng);
  decoder_ = DecoderStack(cfg_.decoder, rng);
  out_ = Linear(cfg_.decoder.model_dim, cfg_.d_motion, rng);
  start_token_ = Param(Matrix::Zero(1, cfg_.d_motion));
}

DiagGaussian NfmgModel::encode(Tape& tape, const Tensor& motion, const Matrix& audio) {
  if (motion.rows() != audio.rows()) throw std::invalid_argument("NfmgModel::encode: length mismatch");
  if (motion.cols() != cfg_.d_motion || audio.cols() != cfg_.d_audio)
    throw std::invalid_argument("NfmgModel::encode: wrong feature dimension");
  Tensor x = add(motion_in_.forward(tape, motion), audio_enc_in_.forward(tape, tape.constant(audio)));
  x = add(x, tape.constant(positional_encoding(motion.rows(), cfg_.encoder.model_dim)));
  Tensor pooled = mean_rows(encoder_.forward(tape, x));
  Tensor both = posterior_head_.forward(tape, pooled);
  return {slice_cols(both, 0, cfg_.d_latent), slice_cols(both, cfg_.d_latent, cfg_.d_latent)};
}

DiagGaussian NfmgModel::encode(Tape& tape, const Matrix& motion, const Matrix& audio) {
  return encode(tape, tape.constant(motion), audio);
}

DiagGaussianValue NfmgModel::encode_values(const Matrix& motion, const Matrix& audio) {
  Tape tape;
  return DiagGaussianValue::from(encode(tape, motion, audio));
}

Tensor NfmgModel::decoder_inputs(Tape& tape, const Tensor& z, const Tensor& prev) {
  Tensor emb = add(prev_in_.forward(tape, prev), lat_in_.forward(tape, z));
  return add(emb, tape.constant(positional_encoding(prev.rows(), cfg_.decoder.model_dim)));
}

Tensor NfmgModel::audio_memory(Tape& tape, const Matrix& audio) {
  Tensor mem = mem_in_.forward(tape, tape.constant(audio));
  return add(mem, tape.constant(positional_encoding(audio.rows(), cfg_.decoder.model_dim)));
}

Tensor NfmgModel::decode_teacher(Tape& tape, const Tensor& z, const Tensor& motion, const Matrix& audio) {
  const Eigen::Index t = motion.rows();
  if (t != audio.rows()) throw std::invalid_argument("NfmgModel::decode_teacher: length mismatch");
  Tensor start = tape.param(start_token_);
  Tensor prev = t > 1 ? concat_rows({start, slice_rows(motion, 0, t - 1)}) : start;
  Tensor h = decoder_.forward(tape, decoder_inputs(tape, z, prev), audio_memory(tape, audio));
  return out_.forward(tape, h);
}

Matrix NfmgModel::decode(const Matrix& z, const Matrix& audio) {
  const Eigen::Index t = audio.rows();
  if (t < 1) throw std::invalid_argument("NfmgModel::decode: empty audio");
  Matrix result(t, cfg_.d_motion);
  Matrix prev(t, cfg_.d_motion);
  prev.row(0) = start_token_.value.row(0);
  for (Eigen::Index step = 1; step <= t; ++step) {
    Tape tape;
    Tensor emb = decoder_inputs(tape, tape.constant(z), tape.constant(Matrix(prev.topRows(step))));
    Tensor h = decoder_.forward(tape, emb, audio_memory(tape, Matrix(audio.topRows(step))));
    Tensor frame = out_.forward(tape, slice_rows(h, step - 1, 1));
    result.row(step - 1) = frame.value().row(0);
    if (step < t) prev.row(step) = result.row(step - 1);
  }
  return result;
}

NfmgLossTerms NfmgModel::loss(Tape& tape, const Tensor& motion, const Matrix& audio, const Matrix& noise) {
  DiagGaussian post = encode(tape, motion, audio);
  Tensor z = reparam_sample(post, tape.constant(noise));

  Tensor recon = decode_teacher(tape, z, motion, audio);
  Tensor diff = sub(recon, motion);
  NfmgLossTerms terms;
  terms.rec = mean(mul(diff, diff));

  // Single-sample KL estimate against the flow prior: log q(z'|rho,a) - log p_psi(z').
  terms.kl = sub(log_pdf(post, z), flow_.log_prob(tape, z));

  const Eigen::Index t = motion.rows();
  if (t >= 2) {
    Tensor dv = sub(sub(slice_rows(motion, 1, t - 1), slice_rows(motion, 0, t - 1)),
                    sub(slice_rows(recon, 1, t - 1), slice_rows(recon, 0, t - 1)));
    terms.vel = mean(mul(dv, dv));
  } else {
    terms.vel = tape.constant(0.0);
  }
  terms.total = add(terms.rec, add(scale(terms.kl, weights_.kl), scale(terms.vel, weights_.vel)));
  return terms;
}

NfmgLossTerms NfmgModel::loss(Tape& tape, const Matrix& motion, const Matrix& audio, const Matrix& noise) {
  return loss(tape, tape.constant(motion), audio, noise);
}

Matrix NfmgModel::sample_motion(const Matrix& audio, const Matrix& noise, bool use_flow) {
  if (noise.rows() != 1 || noise.cols() != cfg_.d_latent)
    throw std::invalid_argument("NfmgModel::sample_motion: noise must be 1 x d_latent");
  const Matrix z = use_flow ? flow_.forward_value(noise).first : noise;
  return decode(z, audio);
}

NamedParams NfmgModel::params() {
  NamedParams out;
  motion_in_.collect(out, "enc.motion_in");
  audio_enc_in_.collect(out, "enc.audio_in");
  encoder_.collect(out, "enc.stack");
  posterior_head_.collect(out, "enc.posterior");
  flow_.collect(out, "flow");
  prev_in_.collect(out, "dec.prev_in");
  lat_in_.collect(out, "dec.lat_in");
  mem_in_.collect(out, "dec.mem_in");
  decoder_.collect(out, "dec.stack");
  out_.collect(out, "dec.out");
  out.emplace_back("dec.start", &start_token_);
  return out;
}

std::map<std::string, double> NfmgModel::hparams() const {
  std::map<std::string, double> h;
  h["d_motion"] = cfg_.d_motion;
  h["d_audio"] = cfg_.d_audio;
  h["d_latent"] = cfg_.d_latent;
  h["flow_steps"] = cfg_.flow_steps;
  h["init_seed"] = static_cast<double>(cfg_.init_seed);
  auto stack = [&](const char* name, const StackConfig& s) {
    h[std::string(name) + ".layers"] = s.n_layers;
    h[std::string(name) + ".dim"] = s.model_dim;
    h[std::string(name) + ".heads"] = s.n_heads;
    h[std::string(name) + ".ff"] = s.ff_dim;
  };
  stack("encoder", cfg_.encoder);
  stack("coupling", cfg_.coupling);
  stack("decoder", cfg_.decoder);
  h["w.kl"] = weights_.kl;
  h["w.vel"] = weights_.vel;
  return h;
}

NfmgConfig NfmgModel::config_from_hparams(const std::map<std::string, double>& h) {
  NfmgConfig cfg;
  auto get = [&](const std::string& key) {
    auto it = h.find(key);
    if (it == h.end()) throw std::runtime_error("checkpoint: missing hyperparameter " + key);
    return it->second;
  };
  cfg.d_motion = static_cast<int>(get("d_motion"));
  cfg.d_audio = static_cast<int>(get("d_audio"));
  cfg.d_latent = static_cast<int>(get("d_latent"));
  cfg.flow_steps = static_cast<int>(get("flow_steps"));
  cfg.init_seed = static_cast<std::uint64_t>(get("init_seed"));
  auto stack = [&](const char* name, StackConfig& s) {
    s.n_layers = static_cast<int>(get(std::string(name) + ".layers"));
    s.model_dim = static_cast<int>(get(std::string(name) + ".dim"));
    s.n_heads = static_cast<int>(get(std::string(name) + ".heads"));
    s.ff_dim = static_cast<int>(get(std::string(name) + ".ff"));
  };
  stack("encoder", cfg.encoder);
  stack("coupling", cfg.coupling);
  stack("decoder", cfg.decoder);
  return cfg;
}

TrainLog train_nfmg(NfmgModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg, Adam& opt,
                    const EpochHook& on_epoch) {
  if (corpus.sequences.empty()) throw std::invalid_argument("train_nfmg: empty corpus");
  if (corpus.kind != CorpusKind::Motion) throw std::invalid_argument("train_nfmg: needs a motion corpus");

  Rng shuffle_rng = Rng(cfg.seed).fork(11);
  Rng train_noise = Rng(cfg.seed).fork(12);
  Rng eval_noise_rng = Rng(cfg.seed).fork(13);

  const int d = model.config().d_latent;
  std::vector<Matrix> eval_noise;
  eval_noise.reserve(corpus.sequences.size());
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) eval_noise.push_back(eval_noise_rng.normal_matrix(1, d));

  auto evaluate = [&]() {
    std::vector<double> acc(4, 0.0);
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
      const Sequence& s = corpus.sequences[i];
      Tape tape;
      NfmgLossTerms t = model.loss(tape, s.coef, s.audio, eval_noise[i]);
      acc[0] += t.total.scalar();
      acc[1] += t.rec.scalar();
      acc[2] += t.kl.scalar();
      acc[3] += t.vel.scalar();
    }
    for (double& v : acc) v /= static_cast<double>(corpus.sequences.size());
    return acc;
  };

  TrainLog log;
  log.push_back({0, evaluate()});
  if (on_epoch) on_epoch(0, log.back());

  std::vector<std::size_t> order(corpus.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    try {
      shuffle_rng.shuffle(order);
      for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
        opt.zero_grad();
        Tape tape;
        Tensor batch_loss;
        for (std::size_t i = at; i < end; ++i) {
          const Sequence& s = corpus.sequences[order[i]];
          NfmgLossTerms t = model.loss(tape, s.coef, s.audio, train_noise.normal_matrix(1, d));
          batch_loss = i == at ? t.total : add(batch_loss, t.total);
        }
        tape.backward(scale(batch_loss, 1.0 / static_cast<double>(end - at)));
        opt.step();
      }
      log.push_back({epoch, evaluate()});
    } catch (const std::domain_error& e) {
      throw std::runtime_error("nfmg training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                               ": " + e.what());
    }
    if (on_epoch) on_epoch(epoch, log.back());
  }
  return log;
}

}  // namespace gmixseq
