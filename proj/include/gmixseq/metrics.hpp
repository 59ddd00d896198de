#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmixseq/rng.hpp"

namespace gmixseq {

/// Paper-default interpolation path length for the smoothness metrics.
constexpr int kDefaultInterpPathLength = 17;

/// Mean pairwise L1 distance over a batch of embeddings:
/// 2/(B(B-1)) * sum_{i<j} |m_i - m_j|_1. Requires B >= 2.
double div_score(const std::vector<Eigen::VectorXd>& embeddings);

/// Mean over motion beats of exp(-min_j (b_i^m - b_j^a)^2 / (2 sigma^2)).
/// Motion track must be non-empty; sigma defaults to 3 frames.
double beat_align(const std::vector<int>& motion_beats, const std::vector<int>& audio_beats, double sigma = 3.0);

/// Beat frames of a motion sequence: strict local minima of the L2 velocity
/// of the head-rotation channels. Needs at least 3 frames.
std::vector<int> extract_motion_beats(const Matrix& motion);

/// First head-rotation channels of a motion sequence (per-frame embedding).
Matrix motion_embedding(const Matrix& motion);
/// Per-sequence summary: mean over frames of the per-frame embedding.
Eigen::VectorXd motion_embedding_summary(const Matrix& motion);

/// Fraction of per-frame, per-dimension entries with |pred - gt| < tau.
double pcm(const Matrix& predicted, const Matrix& ground_truth, double tau = 1.0);

/// Mean embedding-space distance between adjacent path points. Path length
/// must be >= 2.
double e_ppl(const std::vector<Eigen::VectorXd>& embedded_path);
/// Population variance of the adjacent-pair distances. Path length >= 3.
double e_pdv(const std::vector<Eigen::VectorXd>& embedded_path);

using EmbedFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
double e_ppl(const std::vector<Eigen::VectorXd>& path, const EmbedFn& embed);
double e_pdv(const std::vector<Eigen::VectorXd>& path, const EmbedFn& embed);

/// Standard silhouette coefficient with Euclidean distance, in [-1, 1].
/// Needs >= 2 distinct labels and >= 2 points per label.
double cluster_separation(const std::vector<Eigen::VectorXd>& points, const std::vector<int>& labels);

/// Spearman rank correlation (average ranks on ties).
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

/// One evaluated metric with its parameters and input provenance.
struct MetricEntry {
  std::string name;
  double value = 0.0;
  std::map<std::string, double> params;
  std::string provenance;  // hex hash of the input file(s)
};

struct MetricReport {
  std::vector<MetricEntry> entries;

  /// Line-delimited text: name value key=val... provenance=hash
  void write(const std::string& path) const;
  static MetricReport read(const std::string& path);
};

}  // namespace gmixseq
