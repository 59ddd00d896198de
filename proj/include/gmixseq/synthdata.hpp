#pragma once

#include <map>
#include <string>
#include <vector>

#include "gmixseq/rng.hpp"

namespace gmixseq {

enum class CorpusKind : std::uint8_t { Emotion = 0, Motion = 1 };
enum class MotionModality { Unimodal, Bimodal };

/// One paired (audio, coefficient) sequence. `label` is the emotion class for
/// emotion corpora and the dynamics regime for motion corpora.
struct Sequence {
  Matrix audio;  // T x D_a
  Matrix coef;   // T x D_beta or T x 12
  int label = -1;
  int speaker = 0;
};

/// Synthetic corpus with every generator parameter recorded, so oracle tests
/// can reconstruct the ground truth that produced each sequence.
struct SyntheticCorpus {
  CorpusKind kind = CorpusKind::Emotion;
  int k = 0;        // emotion classes (emotion) or regimes (motion)
  int t = 0;        // frames per sequence
  int d_coef = 0;   // coefficient dimension
  int d_audio = 0;  // audio feature dimension
  std::uint64_t seed = 0;
  std::map<std::string, Matrix> params;
  std::vector<Sequence> sequences;

  int n_speakers() const;
  SyntheticCorpus subset(const std::vector<std::size_t>& indices) const;
  /// Deterministic shuffle-split; returns {train, held_out}.
  std::pair<SyntheticCorpus, SyntheticCorpus> split(std::size_t n_held_out, std::uint64_t seed) const;
};

// Motion coefficient layout: [r1(3), t(3), r2(2), r3(2), blink(2)].
constexpr int kMotionDim = 12;
constexpr int kHeadRotationDims = 3;

/// Emotion corpus: K archetype classes, audio-correlated expressions, known
/// class geometry. Archetypes are placed so the minimum pairwise offset
/// distance exceeds 4x the noise scale (throws if the invariant fails).
/// Requires k >= 2 and k <= d_beta.
SyntheticCorpus gen_emotion_corpus(int k, int n_per_class, int t, int d_beta, std::uint64_t seed,
                                   int d_audio = 8, int n_speakers = 1, double noise_scale = 0.1);

/// Motion corpus; bimodal mode draws each sequence's head dynamics from one
/// of two separated regimes so mean-collapse is detectable. Audio channel 0
/// carries the beat pulse track; motion extrema align to it up to `jitter`
/// frames of Gaussian displacement.
SyntheticCorpus gen_motion_corpus(int n_speakers, int n_per_speaker, int t, std::uint64_t seed,
                                  MotionModality modality, double jitter = 1.0);

/// Beat frames of a synthetic audio track: local maxima of channel 0 above
/// half its peak value.
std::vector<int> extract_audio_beats(const Matrix& audio);

/// Nearest-archetype classifier built from the corpus' recorded generator
/// parameters. Subtracts the known audio component, averages frames, and
/// scores classes by distance to each archetype offset. Its pre-softmax
/// logits double as the embedding used by the interpolation metrics.
class OracleClassifier {
 public:
  explicit OracleClassifier(const SyntheticCorpus& corpus);

  int classify(const Sequence& seq) const;
  Eigen::VectorXd log_probs(const Sequence& seq) const;   // normalized
  Eigen::VectorXd probabilities(const Sequence& seq) const;

  /// Penultimate representation (logits before normalization).
  Eigen::VectorXd embed_sequence(const Matrix& coef, const Matrix& audio) const;
  Eigen::VectorXd embed_frame(const Matrix& coef_row, const Matrix& audio_row) const;

  /// Fraction of sequences whose argmax class matches the stored label.
  double accuracy(const SyntheticCorpus& corpus) const;

  int k() const { return static_cast<int>(offsets_.rows()); }

 private:
  Eigen::VectorXd logits(const Matrix& feature_row) const;
  Matrix offsets_;    // K x D
  Matrix audio_map_;  // D_a x D
  double temperature_ = 1.0;
};

// Dataset container I/O. The binary layout round-trips bit-exactly; the text
// export is line-delimited and for inspection only.
void save_corpus(const std::string& path, const SyntheticCorpus& corpus);
SyntheticCorpus load_corpus(const std::string& path);
void export_corpus_text(const std::string& path, const SyntheticCorpus& corpus);

}  // namespace gmixseq
