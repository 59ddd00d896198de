#pragma once

#include <vector>

#include "gmixseq/tensor.hpp"

namespace gmixseq {

/// Diagonal Gaussian with tape-bound parameters (1 x d rows). Variance is
/// carried as log-variance so positivity holds by construction.
struct DiagGaussian {
  Tensor mean;
  Tensor log_var;

  Eigen::Index dim() const { return mean.cols(); }
};

/// Plain-value snapshot of a diagonal Gaussian (inference / analysis side).
struct DiagGaussianValue {
  Matrix mean;     // 1 x d
  Matrix log_var;  // 1 x d

  Eigen::Index dim() const { return mean.cols(); }
  static DiagGaussianValue from(const DiagGaussian& g) { return {g.mean.value(), g.log_var.value()}; }
};

/// K diagonal Gaussians with fixed (non-learned) prior weights, uniform by
/// default. All components share one dimension.
struct MixtureParams {
  std::vector<DiagGaussian> components;
  Eigen::VectorXd weights;  // pi_k >= 0, sums to 1

  int k() const { return static_cast<int>(components.size()); }
  static Eigen::VectorXd uniform_weights(int k) { return Eigen::VectorXd::Constant(k, 1.0 / k); }
};

struct MixtureValues {
  std::vector<DiagGaussianValue> components;
  Eigen::VectorXd weights;

  int k() const { return static_cast<int>(components.size()); }
  static MixtureValues from(const MixtureParams& m);
};

// --- differentiable (tape) forms -------------------------------------------

/// Exact diagonal-Gaussian log-density of a 1 x d point.
Tensor log_pdf(const DiagGaussian& g, const Tensor& z);

/// log sum_k pi_k N(z; mu_k, Sigma_k), via log-sum-exp.
Tensor mixture_log_pdf(const MixtureParams& m, const Tensor& z);

/// Per-component log(pi_k) + component log-density, as a 1 x K row. The
/// responsibilities are the softmax of this row.
Tensor mixture_component_logits(const MixtureParams& m, const Tensor& z);

/// Posterior component probabilities (1 x K), computed in log space.
Tensor responsibilities(const MixtureParams& m, const Tensor& z);

/// KL(N(mu, sigma^2) || N(0, I)) in closed form.
Tensor kl_to_std_normal(const DiagGaussian& g);

/// KL(categorical(r) || uniform) = sum_k r_k (log r_k + log K), 0 log 0 := 0.
Tensor kl_categorical_to_uniform(const Tensor& r);

/// Same KL evaluated from unnormalized log-probabilities; never forms a log
/// of an underflowed probability, so it is safe for far-separated components.
Tensor kl_categorical_to_uniform_from_logits(const Tensor& logits);

/// mean + exp(log_var / 2) * noise; differentiable in mean and log_var.
Tensor reparam_sample(const DiagGaussian& g, const Tensor& noise);

// --- plain-value forms (delegate to the tape implementations) --------------

double log_pdf(const DiagGaussianValue& g, const Matrix& z);
double mixture_log_pdf(const MixtureValues& m, const Matrix& z);
Eigen::VectorXd responsibilities(const MixtureValues& m, const Matrix& z);
double kl_to_std_normal(const DiagGaussianValue& g);
double kl_categorical_to_uniform(const Eigen::VectorXd& r);
Matrix reparam_sample(const DiagGaussianValue& g, const Matrix& noise);

/// log N(z; 0, I) for a 1 x d row.
double std_normal_log_pdf(const Matrix& z);

}  // namespace gmixseq
