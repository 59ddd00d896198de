#include "gmixseq/distributions.hpp"

#include <cmath>

#include "doctest.h"

using namespace gmixseq;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

DiagGaussianValue random_gaussian(Rng& rng, Eigen::Index d) {
  return {rng.normal_matrix(1, d), rng.uniform_matrix(1, d, -1.0, 1.0)};
}

MixtureValues random_mixture(Rng& rng, int k, Eigen::Index d) {
  MixtureValues m;
  for (int i = 0; i < k; ++i) m.components.push_back(random_gaussian(rng, d));
  m.weights = MixtureParams::uniform_weights(k);
  return m;
}

}  // namespace

TEST_CASE("log_pdf analytic values") {
  DiagGaussianValue std1{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  CHECK(log_pdf(std1, Matrix::Zero(1, 1)) == doctest::Approx(-kHalfLog2Pi).epsilon(1e-14));
  CHECK(log_pdf(std1, Matrix::Constant(1, 1, 1.0)) == doctest::Approx(-kHalfLog2Pi - 0.5).epsilon(1e-14));
}

TEST_CASE("log_pdf rejects dimension mismatch") {
  Tape tape;
  DiagGaussian g{tape.constant(Matrix::Zero(1, 3)), tape.constant(Matrix::Zero(1, 3))};
  CHECK_THROWS_AS(log_pdf(g, tape.constant(Matrix::Zero(1, 2))), std::invalid_argument);
}

TEST_CASE("density integrates to one: 4-d trapezoid quadrature oracle") {
  Rng rng(101);
  DiagGaussianValue g{rng.normal_matrix(1, 4, 0.5), rng.uniform_matrix(1, 4, -0.6, 0.6)};
  const Eigen::Array4d sigma = g.log_var.row(0).transpose().array().exp().sqrt() * 1.0;

  // Trapezoid with h = 0.5 sigma over +-8 sigma per axis; error way below 1e-6.
  const int n = 33;
  std::array<std::vector<double>, 4> nodes;
  std::array<double, 4> step{};
  for (int d = 0; d < 4; ++d) {
    const double lo = g.mean(0, d) - 8.0 * sigma(d);
    const double hi = g.mean(0, d) + 8.0 * sigma(d);
    step[d] = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) nodes[d].push_back(lo + step[d] * i);
  }
  double total = 0.0;
  Matrix z(1, 4);
  for (int i0 = 0; i0 < n; ++i0) {
    z(0, 0) = nodes[0][i0];
    const double w0 = (i0 == 0 || i0 == n - 1) ? 0.5 : 1.0;
    for (int i1 = 0; i1 < n; ++i1) {
      z(0, 1) = nodes[1][i1];
      const double w1 = w0 * ((i1 == 0 || i1 == n - 1) ? 0.5 : 1.0);
      for (int i2 = 0; i2 < n; ++i2) {
        z(0, 2) = nodes[2][i2];
        const double w2 = w1 * ((i2 == 0 || i2 == n - 1) ? 0.5 : 1.0);
        for (int i3 = 0; i3 < n; ++i3) {
          z(0, 3) = nodes[3][i3];
          const double w3 = w2 * ((i3 == 0 || i3 == n - 1) ? 0.5 : 1.0);
          total += w3 * std::exp(log_pdf(g, z));
        }
      }
    }
  }
  total *= step[0] * step[1] * step[2] * step[3];
  CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("mixture_log_pdf degenerate and symmetric cases") {
  Rng rng(102);
  MixtureValues one = random_mixture(rng, 1, 3);
  const Matrix z = rng.normal_matrix(1, 3);
  CHECK(mixture_log_pdf(one, z) == doctest::Approx(log_pdf(one.components[0], z)).epsilon(1e-14));

  MixtureValues twin;
  twin.components = {one.components[0], one.components[0]};
  twin.weights = MixtureParams::uniform_weights(2);
  CHECK(mixture_log_pdf(twin, z) == doctest::Approx(log_pdf(one.components[0], z)).epsilon(1e-13));
}

TEST_CASE("mixture_log_pdf vs direct linear-space summation") {
  Rng rng(103);
  MixtureValues m = random_mixture(rng, 3, 3);
  const Matrix z = m.components[1].mean;  // far from underflow
  double linear = 0.0;
  for (int k = 0; k < 3; ++k) linear += m.weights(k) * std::exp(log_pdf(m.components[k], z));
  const double got = mixture_log_pdf(m, z);
  CHECK(std::abs(got - std::log(linear)) / std::abs(std::log(linear)) < 1e-12);
}

TEST_CASE("responsibilities: symmetry, separation, brute force") {
  SUBCASE("equidistant equal components give a half split") {
    MixtureValues m;
    m.components.push_back({Matrix::Constant(1, 2, -1.0), Matrix::Zero(1, 2)});
    m.components.push_back({Matrix::Constant(1, 2, 1.0), Matrix::Zero(1, 2)});
    m.weights = MixtureParams::uniform_weights(2);
    Eigen::VectorXd r = responsibilities(m, Matrix::Zero(1, 2));
    CHECK(r(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(r(1) == doctest::Approx(0.5).epsilon(1e-14));
  }

  SUBCASE("far separation underflows cleanly to a one-hot") {
    MixtureValues m;
    m.components.push_back({Matrix::Zero(1, 1), Matrix::Zero(1, 1)});
    m.components.push_back({Matrix::Constant(1, 1, 100.0), Matrix::Zero(1, 1)});
    m.weights = MixtureParams::uniform_weights(2);
    Eigen::VectorXd r = responsibilities(m, Matrix::Zero(1, 1));
    CHECK(r(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r(1) < 1e-300);
    CHECK(std::abs(r.sum() - 1.0) < 1e-12);
  }

  SUBCASE("random K=4 case vs brute-force linear normalization") {
    Rng rng(104);
    MixtureValues m = random_mixture(rng, 4, 3);
    const Matrix z = rng.normal_matrix(1, 3, 0.5);
    Eigen::VectorXd direct(4);
    for (int k = 0; k < 4; ++k) direct(k) = m.weights(k) * std::exp(log_pdf(m.components[k], z));
    direct /= direct.sum();
    Eigen::VectorXd got = responsibilities(m, z);
    CHECK((got - direct).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("property: responsibilities sum to one on random inputs") {
    Rng rng(105);
    for (int i = 0; i < 20; ++i) {
      MixtureValues m = random_mixture(rng, 2 + static_cast<int>(rng.integer(4)), 3);
      Eigen::VectorXd r = responsibilities(m, rng.normal_matrix(1, 3, 3.0));
      CHECK(std::abs(r.sum() - 1.0) < 1e-12);
      CHECK((r.array() >= 0.0).all());
    }
  }
}

TEST_CASE("mixture log-pdf bracketed by component extremes") {
  Rng rng(106);
  for (int i = 0; i < 20; ++i) {
    MixtureValues m = random_mixture(rng, 3, 2);
    const Matrix z = rng.normal_matrix(1, 2, 2.0);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      const double lp = std::log(m.weights(k)) + log_pdf(m.components[k], z);
      lo = std::min(lo, lp);
      hi = std::max(hi, log_pdf(m.components[k], z));
    }
    const double v = mixture_log_pdf(m, z);
    CHECK(v >= lo - 1e-12);
    CHECK(v <= std::log(m.weights.sum()) + hi + 1e-12);
  }
}

TEST_CASE("kl_to_std_normal analytic and Monte Carlo") {
  DiagGaussianValue std3{Matrix::Zero(1, 3), Matrix::Zero(1, 3)};
  CHECK(kl_to_std_normal(std3) == doctest::Approx(0.0).epsilon(1e-15));

  DiagGaussianValue shifted{Matrix::Constant(1, 1, 2.0), Matrix::Zero(1, 1)};
  CHECK(kl_to_std_normal(shifted) == doctest::Approx(2.0).epsilon(1e-14));

  // MC oracle: E_q[log q(z) - log N(z;0,I)] with 1e6 samples.
  Rng rng(107);
  DiagGaussianValue g = random_gaussian(rng, 3);
  const Eigen::ArrayXd mu = g.mean.row(0).transpose().array();
  const Eigen::ArrayXd lv = g.log_var.row(0).transpose().array();
  const Eigen::ArrayXd sd = (lv / 2).exp();
  double acc = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    Eigen::ArrayXd eps(3);
    for (int d = 0; d < 3; ++d) eps(d) = rng.normal();
    const Eigen::ArrayXd z = mu + sd * eps;
    const double logq = -0.5 * (3 * std::log(2 * M_PI) + lv.sum() + eps.square().sum());
    const double logp = -0.5 * (3 * std::log(2 * M_PI) + z.square().sum());
    acc += logq - logp;
  }
  CHECK(std::abs(acc / n - kl_to_std_normal(g)) < 1e-2);
}

TEST_CASE("kl_to_std_normal is nonnegative, zero only at the standard normal") {
  Rng rng(108);
  for (int i = 0; i < 50; ++i) {
    DiagGaussianValue g = random_gaussian(rng, 4);
    CHECK(kl_to_std_normal(g) >= 0.0);
  }
  DiagGaussianValue almost{Matrix::Constant(1, 2, 1e-9), Matrix::Zero(1, 2)};
  CHECK(kl_to_std_normal(almost) < 1e-12);
}

TEST_CASE("kl_categorical_to_uniform values") {
  CHECK(kl_categorical_to_uniform(Eigen::VectorXd::Constant(5, 0.2)) == doctest::Approx(0.0).epsilon(1e-15));

  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(8);
  onehot(3) = 1.0;
  CHECK(kl_categorical_to_uniform(onehot) == doctest::Approx(std::log(8.0)).epsilon(1e-14));

  Rng rng(109);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(4);
    for (int k = 0; k < 4; ++k) r(k) = rng.uniform() + 1e-6;
    r /= r.sum();
    double direct = std::log(4.0);
    for (int k = 0; k < 4; ++k) direct += r(k) * std::log(r(k));
    CHECK(std::abs(kl_categorical_to_uniform(r) - direct) < 1e-12);
    CHECK(kl_categorical_to_uniform(r) >= 0.0);
    CHECK(kl_categorical_to_uniform(r) <= std::log(4.0) + 1e-12);
  }
}

TEST_CASE("kl_categorical_to_uniform_from_logits agrees and survives separation") {
  Rng rng(110);
  Tape tape;
  Tensor logits = tape.constant(rng.normal_matrix(1, 5, 2.0));
  Tensor a = kl_categorical_to_uniform_from_logits(logits);
  Tensor b = kl_categorical_to_uniform(softmax(logits, 1));
  CHECK(a.scalar() == doctest::Approx(b.scalar()).epsilon(1e-12));

  Tensor extreme = tape.constant((Matrix(1, 3) << 0.0, -2000.0, -3000.0).finished());
  CHECK(kl_categorical_to_uniform_from_logits(extreme).scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("reparam_sample basics and sampling oracle") {
  Rng rng(111);
  DiagGaussianValue g = random_gaussian(rng, 3);
  CHECK(reparam_sample(g, Matrix::Zero(1, 3)) == g.mean);

  DiagGaussianValue std3{Matrix::Zero(1, 3), Matrix::Zero(1, 3)};
  const Matrix noise = rng.normal_matrix(1, 3);
  CHECK(reparam_sample(std3, noise) == noise);

  // Empirical mean and variance over 1e5 draws within 3 standard errors.
  const int n = 100000;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(3);
  Eigen::ArrayXd sumsq = Eigen::ArrayXd::Zero(3);
  for (int i = 0; i < n; ++i) {
    const Matrix s = reparam_sample(g, rng.normal_matrix(1, 3));
    sum += s.row(0).transpose().array();
    sumsq += s.row(0).transpose().array().square();
  }
  const Eigen::ArrayXd mean = sum / n;
  const Eigen::ArrayXd var = sumsq / n - mean.square();
  const Eigen::ArrayXd want_var = g.log_var.row(0).transpose().array().exp();
  for (int d = 0; d < 3; ++d) {
    const double se_mean = std::sqrt(want_var(d) / n);
    CHECK(std::abs(mean(d) - g.mean(0, d)) < 3 * se_mean);
    const double se_var = want_var(d) * std::sqrt(2.0 / n);
    CHECK(std::abs(var(d) - want_var(d)) < 3 * se_var);
  }
}

TEST_CASE("distribution ops are differentiable") {
  Rng rng(112);
  const Matrix noise = rng.normal_matrix(1, 3);
  const Matrix z0 = rng.normal_matrix(1, 3);

  auto through_gaussian = [&](Tape& t, const Tensor& x) {
    DiagGaussian g{slice_cols(x, 0, 3), slice_cols(x, 3, 3)};
    Tensor s = reparam_sample(g, t.constant(noise));
    return add(add(log_pdf(g, s), kl_to_std_normal(g)), log_pdf(g, t.constant(z0)));
  };
  CHECK(grad_check(through_gaussian, rng.normal_matrix(1, 6, 0.5)) < 1e-5);

  const Matrix z_fixed = rng.normal_matrix(1, 2);
  const Matrix probe = rng.normal_matrix(1, 2);
  auto through_mixture = [&](Tape& t, const Tensor& x) {
    MixtureParams m;
    m.weights = MixtureParams::uniform_weights(2);
    m.components.push_back({slice_cols(x, 0, 2), slice_cols(x, 2, 2)});
    m.components.push_back({slice_cols(x, 4, 2), slice_cols(x, 6, 2)});
    Tensor z = t.constant(z_fixed);
    Tensor logits = mixture_component_logits(m, z);
    return add(add(mixture_log_pdf(m, z), kl_categorical_to_uniform_from_logits(logits)),
               sum(mul(responsibilities(m, z), t.constant(probe))));
  };
  CHECK(grad_check(through_mixture, rng.normal_matrix(1, 8, 0.7)) < 1e-5);
}
