#include "gmixseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gmixseq/synthdata.hpp"

namespace gmixseq {

double div_score(const std::vector<Eigen::VectorXd>& embeddings) {
  const std::size_t b = embeddings.size();
  if (b < 2) throw std::invalid_argument("div: need a batch of at least 2 embeddings");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) total += (embeddings[i] - embeddings[j]).lpNorm<1>();
  return 2.0 * total / (static_cast<double>(b) * static_cast<double>(b - 1));
}

double beat_align(const std::vector<int>& motion_beats, const std::vector<int>& audio_beats, double sigma) {
  if (motion_beats.empty()) throw std::invalid_argument("beat_align: empty motion beat track");
  if (audio_beats.empty()) return 0.0;
  double total = 0.0;
  for (int bm : motion_beats) {
    double nearest = std::numeric_limits<double>::infinity();
    for (int ba : audio_beats) nearest = std::min(nearest, std::pow(double(bm) - double(ba), 2.0));
    total += std::exp(-nearest / (2.0 * sigma * sigma));
  }
  return total / static_cast<double>(motion_beats.size());
}

Matrix motion_embedding(const Matrix& motion) {
  if (motion.cols() < kHeadRotationDims) throw std::invalid_argument("motion_embedding: too few channels");
  return motion.leftCols(kHeadRotationDims);
}

Eigen::VectorXd motion_embedding_summary(const Matrix& motion) {
  return motion_embedding(motion).colwise().mean().row(0).transpose();
}

std::vector<int> extract_motion_beats(const Matrix& motion) {
  if (motion.rows() < 3) throw std::invalid_argument("extract_motion_beats: need at least 3 frames");
  const Matrix emb = motion_embedding(motion);
  // velocity[i] = |emb[i+1] - emb[i]|_2, one value per transition
  const Eigen::Index n = emb.rows() - 1;
  Eigen::VectorXd vel(n);
  for (Eigen::Index i = 0; i < n; ++i) vel(i) = (emb.row(i + 1) - emb.row(i)).norm();
  std::vector<int> beats;
  for (Eigen::Index i = 1; i + 1 < n; ++i)
    if (vel(i) < vel(i - 1) && vel(i) < vel(i + 1)) beats.push_back(static_cast<int>(i));
  return beats;
}

double pcm(const Matrix& predicted, const Matrix& ground_truth, double tau) {
  if (predicted.rows() != ground_truth.rows() || predicted.cols() != ground_truth.cols())
    throw std::invalid_argument("pcm: shape mismatch between prediction and ground truth");
  if (predicted.size() == 0) throw std::invalid_argument("pcm: empty input");
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < predicted.rows(); ++i)
    for (Eigen::Index j = 0; j < predicted.cols(); ++j)
      if (std::abs(predicted(i, j) - ground_truth(i, j)) < tau) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

namespace {

std::vector<double> adjacent_distances(const std::vector<Eigen::VectorXd>& path) {
  std::vector<double> d;
  d.reserve(path.size() - 1);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) d.push_back((path[i + 1] - path[i]).norm());
  return d;
}

std::vector<Eigen::VectorXd> map_path(const std::vector<Eigen::VectorXd>& path, const EmbedFn& embed) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(path.size());
  for (const auto& p : path) out.push_back(embed(p));
  return out;
}

}  // namespace

double e_ppl(const std::vector<Eigen::VectorXd>& embedded_path) {
  if (embedded_path.size() < 2) throw std::invalid_argument("e_ppl: path needs at least 2 points");
  const auto d = adjacent_distances(embedded_path);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double e_pdv(const std::vector<Eigen::VectorXd>& embedded_path) {
  if (embedded_path.size() < 3) throw std::invalid_argument("e_pdv: path needs at least 3 points");
  const auto d = adjacent_distances(embedded_path);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  return var / static_cast<double>(d.size());
}

double e_ppl(const std::vector<Eigen::VectorXd>& path, const EmbedFn& embed) { return e_ppl(map_path(path, embed)); }
double e_pdv(const std::vector<Eigen::VectorXd>& path, const EmbedFn& embed) { return e_pdv(map_path(path, embed)); }

double cluster_separation(const std::vector<Eigen::VectorXd>& points, const std::vector<int>& labels) {
  if (points.size() != labels.size()) throw std::invalid_argument("cluster_separation: size mismatch");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  if (by_label.size() < 2) throw std::invalid_argument("cluster_separation: need at least 2 labels");
  for (const auto& [label, members] : by_label)
    if (members.size() < 2) throw std::invalid_argument("cluster_separation: need >= 2 points per label");

  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double a = 0.0;
    const auto& own = by_label[labels[i]];
    for (std::size_t j : own)
      if (j != i) a += (points[i] - points[j]).norm();
    a /= static_cast<double>(own.size() - 1);

    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, members] : by_label) {
      if (label == labels[i]) continue;
      double mean = 0.0;
      for (std::size_t j : members) mean += (points[i] - points[j]).norm();
      b = std::min(b, mean / static_cast<double>(members.size()));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(points.size());
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 3) throw std::invalid_argument("spearman_rho: need matched lists of >= 3");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

void MetricReport::write(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.precision(17);
  for (const auto& e : entries) {
    out << e.name << " value=" << e.value;
    for (const auto& [k, v] : e.params) out << " " << k << "=" << v;
    out << " provenance=" << e.provenance << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

MetricReport MetricReport::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  MetricReport report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricEntry e;
    ss >> e.name;
    std::string token;
    while (ss >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) throw std::runtime_error("metric report: malformed token '" + token + "'");
      const std::string key = token.substr(0, eq);
      const std::string val = token.substr(eq + 1);
      if (key == "value")
        e.value = std::stod(val);
      else if (key == "provenance")
        e.provenance = val;
      else
        e.params[key] = std::stod(val);
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace gmixseq
