#include "gmixseq/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gmixseq/io.hpp"

namespace gmixseq {

namespace {

constexpr char kCorpusMagic[9] = "GMSQDATA";

Matrix smoothed_random_walk(Rng& rng, int t, int d) {
  Matrix steps = rng.normal_matrix(t, d);
  Matrix walk(t, d);
  walk.row(0) = steps.row(0);
  for (int i = 1; i < t; ++i) walk.row(i) = walk.row(i - 1) + steps.row(i);
  Matrix smooth = Matrix::Zero(t, d);
  const int w = 2;  // +-2 frame moving average
  for (int i = 0; i < t; ++i) {
    int n = 0;
    for (int j = std::max(0, i - w); j <= std::min(t - 1, i + w); ++j, ++n) smooth.row(i) += walk.row(j);
    smooth.row(i) /= n;
  }
  // Center and scale per channel so the audio statistics do not drift with T.
  for (int c = 0; c < d; ++c) {
    const double mean = smooth.col(c).mean();
    const double sd = std::sqrt((smooth.col(c).array() - mean).square().mean());
    smooth.col(c) = (smooth.col(c).array() - mean) / (sd > 1e-12 ? sd : 1.0);
  }
  return smooth;
}

// K orthonormal rows (K <= D), from Gram-Schmidt over seeded Gaussian draws.
Matrix orthonormal_rows(Rng& rng, int k, int d) {
  Matrix q(k, d);
  for (int i = 0; i < k; ++i) {
    Eigen::RowVectorXd v = rng.normal_matrix(1, d).row(0);
    for (int j = 0; j < i; ++j) v -= v.dot(q.row(j)) * q.row(j);
    const double n = v.norm();
    if (n < 1e-8) throw std::runtime_error("archetype construction: degenerate direction");
    q.row(i) = v / n;
  }
  return q;
}

double min_pairwise_distance(const Matrix& rows) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = i + 1; j < rows.rows(); ++j) best = std::min(best, (rows.row(i) - rows.row(j)).norm());
  return best;
}

}  // namespace

int SyntheticCorpus::n_speakers() const {
  std::set<int> ids;
  for (const auto& s : sequences) ids.insert(s.speaker);
  return static_cast<int>(ids.size());
}

SyntheticCorpus SyntheticCorpus::subset(const std::vector<std::size_t>& indices) const {
  SyntheticCorpus out = *this;
  out.sequences.clear();
  for (std::size_t i : indices) out.sequences.push_back(sequences.at(i));
  return out;
}

std::pair<SyntheticCorpus, SyntheticCorpus> SyntheticCorpus::split(std::size_t n_held_out,
                                                                   std::uint64_t split_seed) const {
  if (n_held_out >= sequences.size())
    throw std::invalid_argument("split: held-out size must be smaller than the corpus");
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  rng.shuffle(order);
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_held_out));
  std::vector<std::size_t> held(order.end() - static_cast<std::ptrdiff_t>(n_held_out), order.end());
  return {subset(train), subset(held)};
}

SyntheticCorpus gen_emotion_corpus(int k, int n_per_class, int t, int d_beta, std::uint64_t seed, int d_audio,
                                   int n_speakers, double noise_scale) {
  if (k < 2) throw std::invalid_argument("gen_emotion_corpus: need k >= 2 emotion classes");
  if (k > d_beta) throw std::invalid_argument("gen_emotion_corpus: need k <= d_beta for archetype separation");
  if (n_per_class < 1 || t < 2 || d_audio < 1 || n_speakers < 1)
    throw std::invalid_argument("gen_emotion_corpus: bad sizes");

  Rng rng(seed);
  const double radius = 3.0;
  Matrix offsets = radius * orthonormal_rows(rng, k, d_beta);
  const double separation = min_pairwise_distance(offsets);
  if (separation <= 4.0 * noise_scale)
    throw std::runtime_error("gen_emotion_corpus: archetype separation invariant violated");

  // Integer cycle counts make the oscillation average to exactly zero over T,
  // so the class mean frame is the archetype offset itself.
  Matrix freqs(k, 1);
  for (int c = 0; c < k; ++c) freqs(c, 0) = 1.0 + c;
  Matrix amps(k, d_beta);
  for (int c = 0; c < k; ++c) amps.row(c) = rng.uniform_matrix(1, d_beta, 0.15, 0.35).row(0);
  Matrix audio_map = rng.normal_matrix(d_audio, d_beta, 0.3 / std::sqrt(static_cast<double>(d_audio)));

  SyntheticCorpus corpus;
  corpus.kind = CorpusKind::Emotion;
  corpus.k = k;
  corpus.t = t;
  corpus.d_coef = d_beta;
  corpus.d_audio = d_audio;
  corpus.seed = seed;

  const int n_seq = k * n_per_class;
  Matrix phases(n_seq, 1);
  int idx = 0;
  for (int label = 0; label < k; ++label) {
    for (int i = 0; i < n_per_class; ++i, ++idx) {
      Sequence seq;
      seq.label = label;
      seq.speaker = idx % n_speakers;
      seq.audio = smoothed_random_walk(rng, t, d_audio);
      const double phase = 2.0 * M_PI * rng.uniform();
      phases(idx, 0) = phase;
      seq.coef = Matrix(t, d_beta);
      const double omega = 2.0 * M_PI * freqs(label, 0) / static_cast<double>(t);
      for (int f = 0; f < t; ++f) {
        const double osc = std::sin(omega * f + phase);
        seq.coef.row(f) = offsets.row(label) + osc * amps.row(label) + seq.audio.row(f) * audio_map +
                          rng.normal_matrix(1, d_beta, noise_scale).row(0);
      }
      corpus.sequences.push_back(std::move(seq));
    }
  }

  corpus.params["offsets"] = offsets;
  corpus.params["freqs"] = freqs;
  corpus.params["amps"] = amps;
  corpus.params["audio_map"] = audio_map;
  corpus.params["phases"] = phases;
  corpus.params["noise_scale"] = Matrix::Constant(1, 1, noise_scale);
  corpus.params["temperature"] = Matrix::Constant(1, 1, 0.25 * separation);
  return corpus;
}

SyntheticCorpus gen_motion_corpus(int n_speakers, int n_per_speaker, int t, std::uint64_t seed,
                                  MotionModality modality, double jitter) {
  if (n_speakers < 1 || n_per_speaker < 1 || t < 8) throw std::invalid_argument("gen_motion_corpus: bad sizes");
  Rng rng(seed);

  // Two head-rotation regimes, separated in center, amplitude, and period.
  Matrix centers(2, kHeadRotationDims);
  centers << -0.6, -0.4, -0.5, 0.6, 0.4, 0.5;
  Matrix amps(2, kHeadRotationDims);
  amps << 0.80, 0.55, 0.65, 0.25, 0.18, 0.21;
  Matrix periods(2, 1);
  periods << 16.0, 6.0;
  const double beat_period = 8.0;
  const int d_audio = 8;
  const double noise = 0.02;

  SyntheticCorpus corpus;
  corpus.kind = CorpusKind::Motion;
  corpus.k = modality == MotionModality::Bimodal ? 2 : 1;
  corpus.t = t;
  corpus.d_coef = kMotionDim;
  corpus.d_audio = d_audio;
  corpus.seed = seed;

  const int n_seq = n_speakers * n_per_speaker;
  Matrix phases(n_seq, 1);
  int idx = 0;
  for (int sp = 0; sp < n_speakers; ++sp) {
    for (int i = 0; i < n_per_speaker; ++i, ++idx) {
      const int regime = modality == MotionModality::Bimodal ? static_cast<int>(rng.integer(2)) : 0;
      Sequence seq;
      seq.label = regime;
      seq.speaker = sp;

      // Audio: channel 0 is the beat pulse train, the rest a smoothed walk.
      seq.audio = smoothed_random_walk(rng, t, d_audio);
      const double first_beat = 2.0 + rng.uniform() * 2.0;
      Eigen::VectorXd pulse = Eigen::VectorXd::Zero(t);
      for (double b = first_beat; b < t; b += beat_period)
        for (int f = 0; f < t; ++f) pulse(f) += std::exp(-0.5 * std::pow((f - b) / 1.0, 2));
      seq.audio.col(0) = pulse;

      // Head rotation: oscillation whose extrema (velocity minima) land on
      // the beat track up to `jitter` frames of displacement.
      const double omega = 2.0 * M_PI / periods(regime, 0);
      const double shift = jitter * rng.normal();
      const double phase = M_PI / 2.0 - omega * (first_beat + shift);
      phases(idx, 0) = phase;
      seq.coef = Matrix(t, kMotionDim);
      for (int f = 0; f < t; ++f) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kMotionDim);
        const double osc = std::sin(omega * f + phase);
        for (int d = 0; d < kHeadRotationDims; ++d) row(d) = centers(regime, d) + osc * amps(regime, d);
        for (int d = 3; d < 6; ++d) row(d) = 0.05 * seq.audio(f, 1 + (d - 3) % (d_audio - 1));
        for (int d = 6; d < 10; ++d) row(d) = 0.1 * std::sin(2.0 * M_PI * f / 11.0 + phase + d);
        const double blink = 0.1 + 0.85 * std::pow(std::max(0.0, std::sin(2.0 * M_PI * f / 24.0 + phase)), 8.0);
        row(10) = blink;
        row(11) = blink;
        seq.coef.row(f) = row + rng.normal_matrix(1, kMotionDim, noise).row(0);
        seq.coef(f, 10) = std::clamp(seq.coef(f, 10), 0.0, 1.0);
        seq.coef(f, 11) = std::clamp(seq.coef(f, 11), 0.0, 1.0);
      }
      corpus.sequences.push_back(std::move(seq));
    }
  }

  corpus.params["regime_centers"] = centers;
  corpus.params["regime_amps"] = amps;
  corpus.params["regime_periods"] = periods;
  corpus.params["beat_period"] = Matrix::Constant(1, 1, beat_period);
  corpus.params["jitter"] = Matrix::Constant(1, 1, jitter);
  corpus.params["phases"] = phases;
  corpus.params["noise_scale"] = Matrix::Constant(1, 1, noise);
  return corpus;
}

std::vector<int> extract_audio_beats(const Matrix& audio) {
  std::vector<int> beats;
  if (audio.rows() < 3) return beats;
  const Eigen::VectorXd ch = audio.col(0);
  const double floor = 0.5 * ch.maxCoeff();
  for (int f = 1; f + 1 < ch.size(); ++f)
    if (ch(f) > floor && ch(f) > ch(f - 1) && ch(f) >= ch(f + 1)) beats.push_back(f);
  return beats;
}

OracleClassifier::OracleClassifier(const SyntheticCorpus& corpus) {
  if (corpus.kind != CorpusKind::Emotion)
    throw std::invalid_argument("OracleClassifier: needs an emotion corpus");
  offsets_ = corpus.params.at("offsets");
  audio_map_ = corpus.params.at("audio_map");
  temperature_ = corpus.params.at("temperature")(0, 0);
  for (const auto& s : corpus.sequences)
    if (s.label < 0) throw std::invalid_argument("OracleClassifier: corpus has unlabeled sequences");
}

Eigen::VectorXd OracleClassifier::logits(const Matrix& feature_row) const {
  Eigen::VectorXd out(offsets_.rows());
  for (Eigen::Index c = 0; c < offsets_.rows(); ++c)
    out(c) = -(feature_row.row(0) - offsets_.row(c)).squaredNorm() / (2.0 * temperature_ * temperature_);
  return out;
}

Eigen::VectorXd OracleClassifier::embed_sequence(const Matrix& coef, const Matrix& audio) const {
  Matrix residual = coef - audio * audio_map_;
  Matrix feature = residual.colwise().mean();
  return logits(feature);
}

Eigen::VectorXd OracleClassifier::embed_frame(const Matrix& coef_row, const Matrix& audio_row) const {
  Matrix residual = coef_row - audio_row * audio_map_;
  return logits(residual);
}

Eigen::VectorXd OracleClassifier::log_probs(const Sequence& seq) const {
  Eigen::VectorXd l = embed_sequence(seq.coef, seq.audio);
  const double m = l.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.size(); ++i) s += std::exp(l(i) - m);
  return (l.array() - m - std::log(s)).matrix();
}

Eigen::VectorXd OracleClassifier::probabilities(const Sequence& seq) const {
  return log_probs(seq).array().exp().matrix();
}

int OracleClassifier::classify(const Sequence& seq) const {
  Eigen::Index best;
  embed_sequence(seq.coef, seq.audio).maxCoeff(&best);
  return static_cast<int>(best);
}

double OracleClassifier::accuracy(const SyntheticCorpus& corpus) const {
  if (corpus.sequences.empty()) throw std::invalid_argument("accuracy: empty corpus");
  int hits = 0;
  for (const auto& s : corpus.sequences) hits += classify(s) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(corpus.sequences.size());
}

void save_corpus(const std::string& path, const SyntheticCorpus& corpus) {
  BinaryWriter w;
  w.u32(1);  // format version
  w.u8(static_cast<std::uint8_t>(corpus.kind));
  w.u32(static_cast<std::uint32_t>(corpus.k));
  w.u32(static_cast<std::uint32_t>(corpus.t));
  w.u32(static_cast<std::uint32_t>(corpus.d_coef));
  w.u32(static_cast<std::uint32_t>(corpus.d_audio));
  w.u64(corpus.seed);
  w.named_matrices(corpus.params);
  w.u64(corpus.sequences.size());
  for (const auto& s : corpus.sequences) {
    w.i64(s.label);
    w.i64(s.speaker);
    w.matrix(s.audio);
    w.matrix(s.coef);
  }
  w.write_file(path, kCorpusMagic);
}

SyntheticCorpus load_corpus(const std::string& path) {
  BinaryReader r(path, kCorpusMagic);
  const std::uint32_t version = r.u32();
  if (version != 1) throw std::runtime_error("corpus file: unknown format version " + std::to_string(version));
  SyntheticCorpus corpus;
  corpus.kind = static_cast<CorpusKind>(r.u8());
  corpus.k = static_cast<int>(r.u32());
  corpus.t = static_cast<int>(r.u32());
  corpus.d_coef = static_cast<int>(r.u32());
  corpus.d_audio = static_cast<int>(r.u32());
  corpus.seed = r.u64();
  corpus.params = r.named_matrices();
  const std::uint64_t n = r.u64();
  corpus.sequences.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Sequence s;
    s.label = static_cast<int>(r.i64());
    s.speaker = static_cast<int>(r.i64());
    s.audio = r.matrix();
    s.coef = r.matrix();
    corpus.sequences.push_back(std::move(s));
  }
  if (!r.at_end()) throw std::runtime_error("corpus file: trailing bytes after last record");
  return corpus;
}

void export_corpus_text(const std::string& path, const SyntheticCorpus& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.precision(17);
  out << "corpus version=1 kind=" << (corpus.kind == CorpusKind::Emotion ? "emotion" : "motion")
      << " k=" << corpus.k << " t=" << corpus.t << " d_coef=" << corpus.d_coef << " d_audio=" << corpus.d_audio
      << " seed=" << corpus.seed << " sequences=" << corpus.sequences.size() << "\n";
  for (const auto& [name, m] : corpus.params) {
    out << "param " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out << "  ";
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << m(i, j) << (j + 1 < m.cols() ? " " : "");
      out << "\n";
    }
  }
  for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
    const Sequence& seq = corpus.sequences[s];
    out << "sequence " << s << " label=" << seq.label << " speaker=" << seq.speaker << "\n";
    auto dump = [&](const char* tag, const Matrix& m) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << tag << " " << i << " ";
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << m(i, j) << (j + 1 < m.cols() ? " " : "");
        out << "\n";
      }
    };
    dump("audio", seq.audio);
    dump("coef", seq.coef);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace gmixseq
