#pragma once

#include <functional>
#include <map>
#include <optional>

#include "gmixseq/blocks.hpp"
#include "gmixseq/distributions.hpp"
#include "gmixseq/optim.hpp"
#include "gmixseq/synthdata.hpp"

namespace gmixseq {

struct LossWeights {
  double rec = 1.0;
  double cond = 0.5;
  double w = 0.5;
  double emo = 0.5;
};

/// How the conditional regularizer weights the mixture components: by the
/// observed emotion label (default; ties component k to emotion k) or by the
/// computed posterior responsibilities.
enum class CondWeighting { LabelSelected, PosteriorSoft };

enum class InterpolationMode { MomentBlend, MixtureSample };

struct GmegConfig {
  int d_beta = 16;
  int d_audio = 8;
  int k = 3;
  int d_z = 16;
  int d_w = 16;
  StackConfig encoder{2, 64, 4, 128};
  StackConfig mapper{2, 64, 4, 128};
  StackConfig decoder{2, 64, 4, 128};
  int n_speakers = 1;
  /// Ablation ("w/o GM"): unimodal N(0,I) prior on z and the emotion label
  /// injected into the decoder as a one-hot input instead.
  bool unimodal_baseline = false;
  std::uint64_t init_seed = 1;
};

struct GmegPosterior {
  DiagGaussian z;
  DiagGaussian w;
};

struct GmegLossTerms {
  Tensor total, rec, cond, w, emo;
};

/// Gaussian-mixture expression generator: sequence encoder with two posterior
/// heads, a mixture-of-Gaussians mapper over the w latent, and a causal
/// cross-attending expression decoder.
class GmegModel {
 public:
  explicit GmegModel(GmegConfig cfg, LossWeights weights = {});

  /// Posterior parameters for (z, w) from a paired (expression, audio)
  /// sequence. Lengths must match.
  GmegPosterior encode(Tape& tape, const Tensor& beta, const Matrix& audio);
  GmegPosterior encode(Tape& tape, const Matrix& beta, const Matrix& audio);

  /// K mixture components conditioned on w; uniform prior weights.
  MixtureParams mog_map(Tape& tape, const Tensor& w);
  MixtureValues mog_map_values(const Matrix& w);

  /// Teacher-forced reconstruction of the full sequence (training path).
  /// prev_keep, when given, multiplies the shifted teacher inputs row-wise
  /// (1 = keep, 0 = drop); dropping frames forces the latent to carry what
  /// the decoder would otherwise copy from the ground truth.
  Tensor decode_teacher(Tape& tape, const Tensor& z, const Tensor& beta, const Matrix& audio, int speaker,
                        const Matrix* label_vec = nullptr, const Matrix* prev_keep = nullptr);

  /// Autoregressive rollout of audio.rows() frames (inference path).
  Matrix decode(const Matrix& z, const Matrix& audio, int speaker, const Matrix* label_vec = nullptr);

  GmegLossTerms loss(Tape& tape, const Tensor& beta, const Matrix& audio, int label, int speaker,
                     const Matrix& noise_w, const Matrix& noise_z,
                     CondWeighting weighting = CondWeighting::LabelSelected, const Matrix* prev_keep = nullptr);
  GmegLossTerms loss(Tape& tape, const Matrix& beta, const Matrix& audio, int label, int speaker,
                     const Matrix& noise_w, const Matrix& noise_z,
                     CondWeighting weighting = CondWeighting::LabelSelected, const Matrix* prev_keep = nullptr);

  /// z drawn from component `label` of the mixture at w = noise_w.
  Matrix sample_latent(int label, const Matrix& noise_w, const Matrix& noise_z);

  /// Latent on the blend between components e1 (weight alpha) and e2. Exact
  /// endpoints short-circuit to sample_latent so they are bitwise equal.
  /// MixtureSample mode instead picks component e1 with probability alpha,
  /// decided by the caller-supplied uniform draw.
  Matrix interpolate_latent(int e1, int e2, double alpha, const Matrix& noise_w, const Matrix& noise_z,
                            InterpolationMode mode = InterpolationMode::MomentBlend, double mixture_u = 0.0);

  Matrix generate(const Matrix& audio, int label, int speaker, const Matrix& noise_w, const Matrix& noise_z);
  Matrix generate_interpolated(const Matrix& audio, int e1, int e2, double alpha, int speaker,
                               const Matrix& noise_w, const Matrix& noise_z,
                               InterpolationMode mode = InterpolationMode::MomentBlend, double mixture_u = 0.0);

  /// One-hot emotion vector blended at weight alpha (baseline decoder input).
  Matrix label_blend(int e1, int e2, double alpha) const;

  NamedParams params();
  const GmegConfig& config() const { return cfg_; }
  LossWeights& weights() { return weights_; }
  const LossWeights& weights() const { return weights_; }

  std::map<std::string, double> hparams() const;
  static GmegConfig config_from_hparams(const std::map<std::string, double>& h);

 private:
  Tensor decoder_inputs(Tape& tape, const Tensor& z, const Tensor& prev, const Matrix* label_vec);
  Tensor audio_memory(Tape& tape, const Matrix& audio);
  void check_speaker(int speaker) const;

  GmegConfig cfg_;
  LossWeights weights_;

  Linear expr_in_, audio_enc_in_;
  EncoderStack encoder_;
  Linear head_mu_z_, head_logvar_z_, head_mu_w_, head_logvar_w_;

  Linear w_in_;
  Param comp_tokens_;  // K x model_dim
  EncoderStack mapper_;
  Linear head_comp_mu_, head_comp_logvar_;

  Linear prev_in_, lat_in_, mem_in_, emo_in_;
  DecoderStack decoder_;
  Linear out_;
  std::vector<Param> speaker_embed_;  // each 1 x d_beta
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  std::uint64_t seed = 0;
  CondWeighting weighting = CondWeighting::LabelSelected;
  /// Probability of dropping each teacher-forced previous frame during GMEG
  /// training. Keeps the latent from being bypassed; evaluation rows are
  /// always computed without dropout.
  double prev_dropout = 0.0;
};

struct TrainRow {
  int epoch = 0;
  std::vector<double> terms;  // model-specific order, see column names
};

using TrainLog = std::vector<TrainRow>;
using EpochHook = std::function<void(int epoch, const TrainRow&)>;

inline const std::vector<std::string>& gmeg_log_columns() {
  static const std::vector<std::string> cols{"total", "rec", "cond", "w", "emo"};
  return cols;
}

/// Minibatch training. Log rows are full-corpus evaluations under a fixed
/// eval-noise stream: row 0 before any update, one row after each epoch.
/// Throws std::runtime_error with a diagnostic if the loss goes non-finite.
TrainLog train_gmeg(GmegModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg, Adam& opt,
                    const EpochHook& on_epoch = nullptr);

}  // namespace gmixseq
