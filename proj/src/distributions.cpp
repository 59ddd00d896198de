#include "gmixseq/distributions.hpp"

#include <cmath>
#include <numbers>

namespace gmixseq {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

void check_dims(const DiagGaussian& g, const Tensor& z, const char* op) {
  if (g.mean.cols() != g.log_var.cols() || g.mean.rows() != 1 || g.log_var.rows() != 1)
    throw std::invalid_argument(std::string(op) + ": malformed Gaussian parameters");
  if (z.rows() != 1 || z.cols() != g.mean.cols())
    throw std::invalid_argument(std::string(op) + ": point dimension does not match distribution");
}

void check_mixture(const MixtureParams& m, const char* op) {
  if (m.components.empty()) throw std::invalid_argument(std::string(op) + ": mixture needs K >= 1");
  if (m.weights.size() != m.k()) throw std::invalid_argument(std::string(op) + ": weight count != K");
  if ((m.weights.array() < 0.0).any() || std::abs(m.weights.sum() - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(op) + ": weights must be a distribution");
  for (const auto& c : m.components)
    if (c.dim() != m.components.front().dim())
      throw std::invalid_argument(std::string(op) + ": components must share one dimension");
}

}  // namespace

MixtureValues MixtureValues::from(const MixtureParams& m) {
  MixtureValues v;
  v.weights = m.weights;
  v.components.reserve(m.components.size());
  for (const auto& c : m.components) v.components.push_back(DiagGaussianValue::from(c));
  return v;
}

Tensor log_pdf(const DiagGaussian& g, const Tensor& z) {
  check_dims(g, z, "log_pdf");
  Tensor diff = sub(z, g.mean);
  Tensor quad = mul(mul(diff, diff), exp(neg(g.log_var)));
  // -1/2 * sum_d [ log(2*pi) + log_var_d + (z-mu)^2 / var_d ]
  Tensor per_dim = add(add(g.log_var, quad), kLog2Pi);
  return scale(sum(per_dim), -0.5);
}

Tensor mixture_component_logits(const MixtureParams& m, const Tensor& z) {
  check_mixture(m, "mixture_component_logits");
  std::vector<Tensor> parts;
  parts.reserve(m.components.size());
  for (int k = 0; k < m.k(); ++k)
    parts.push_back(add(log_pdf(m.components[static_cast<std::size_t>(k)], z), std::log(m.weights(k))));
  return concat_cols(std::span<const Tensor>(parts.data(), parts.size()));
}

Tensor mixture_log_pdf(const MixtureParams& m, const Tensor& z) {
  return logsumexp(mixture_component_logits(m, z), 1);
}

Tensor responsibilities(const MixtureParams& m, const Tensor& z) {
  return softmax(mixture_component_logits(m, z), 1);
}

Tensor kl_to_std_normal(const DiagGaussian& g) {
  Tensor term = add(sub(sub(g.log_var, mul(g.mean, g.mean)), exp(g.log_var)), 1.0);
  return scale(sum(term), -0.5);
}

Tensor kl_categorical_to_uniform(const Tensor& r) {
  Tape& tape = *r.tape();
  const Matrix& rv = r.value();
  if (rv.rows() != 1) throw std::invalid_argument("kl_categorical_to_uniform: expected a 1 x K row");
  if ((rv.array() < -1e-12).any() || std::abs(rv.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("kl_categorical_to_uniform: input is not a probability vector");
  const double log_k = std::log(static_cast<double>(rv.cols()));
  double v = log_k;
  for (Eigen::Index j = 0; j < rv.cols(); ++j)
    if (rv(0, j) > 0.0) v += rv(0, j) * std::log(rv(0, j));
  const int ri = r.index();
  return tape.emit(Matrix::Constant(1, 1, v), r.requires_grad(),
                   [ri, log_k](Tape& t, int self) {
                     const double g = t.grad_at(self)(0, 0);
                     const Matrix& rv2 = t.value_at(ri);
                     Matrix dr(1, rv2.cols());
                     for (Eigen::Index j = 0; j < rv2.cols(); ++j)
                       dr(0, j) = rv2(0, j) > 0.0 ? g * (std::log(rv2(0, j)) + 1.0 + log_k) : 0.0;
                     t.add_grad(ri, dr);
                   },
                   {r.index()});
}

Tensor kl_categorical_to_uniform_from_logits(const Tensor& logits) {
  const double log_k = std::log(static_cast<double>(logits.cols()));
  Tensor r = softmax(logits, 1);
  Tensor lse = matmul(logsumexp(logits, 1), logits.tape()->constant(Matrix::Ones(1, logits.cols())));
  Tensor log_r = sub(logits, lse);  // finite even where r underflows
  return add(sum(mul(r, log_r)), log_k);
}

Tensor reparam_sample(const DiagGaussian& g, const Tensor& noise) {
  check_dims(g, noise, "reparam_sample");
  return add(g.mean, mul(exp(scale(g.log_var, 0.5)), noise));
}

// --- plain-value forms ------------------------------------------------------

namespace {

DiagGaussian bind(Tape& tape, const DiagGaussianValue& g) {
  return {tape.constant(g.mean), tape.constant(g.log_var)};
}

MixtureParams bind(Tape& tape, const MixtureValues& m) {
  MixtureParams p;
  p.weights = m.weights;
  for (const auto& c : m.components) p.components.push_back(bind(tape, c));
  return p;
}

}  // namespace

double log_pdf(const DiagGaussianValue& g, const Matrix& z) {
  Tape tape;
  return log_pdf(bind(tape, g), tape.constant(z)).scalar();
}

double mixture_log_pdf(const MixtureValues& m, const Matrix& z) {
  Tape tape;
  return mixture_log_pdf(bind(tape, m), tape.constant(z)).scalar();
}

Eigen::VectorXd responsibilities(const MixtureValues& m, const Matrix& z) {
  Tape tape;
  const Matrix r = responsibilities(bind(tape, m), tape.constant(z)).value();
  return r.row(0).transpose();
}

double kl_to_std_normal(const DiagGaussianValue& g) {
  Tape tape;
  return kl_to_std_normal(bind(tape, g)).scalar();
}

double kl_categorical_to_uniform(const Eigen::VectorXd& r) {
  Tape tape;
  return kl_categorical_to_uniform(tape.constant(r.transpose())).scalar();
}

Matrix reparam_sample(const DiagGaussianValue& g, const Matrix& noise) {
  Tape tape;
  return reparam_sample(bind(tape, g), tape.constant(noise)).value();
}

double std_normal_log_pdf(const Matrix& z) {
  return -0.5 * (static_cast<double>(z.cols()) * kLog2Pi + z.row(0).squaredNorm());
}

}  // namespace gmixseq
