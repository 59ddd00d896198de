#pragma once

#include <map>

#include "gmixseq/blocks.hpp"
#include "gmixseq/distributions.hpp"
#include "gmixseq/gmeg.hpp"
#include "gmixseq/optim.hpp"
#include "gmixseq/synthdata.hpp"

namespace gmixseq {

/// One invertible flow step: an affine coupling layer driven by a small
/// Transformer encoder, followed (optionally) by a feature-order flip.
/// The first half of the latent is scaled/shifted as a function of the
/// second half; the scale passes through 2*tanh before exp, bounding each
/// step's per-dimension stretch to e^(+-2).
struct CouplingStep {
  Linear in_proj;    // d/2 -> model_dim
  EncoderStack net;  // single-token encoder
  Linear head;       // model_dim -> d  (scale_raw | shift)
  bool flip_after = true;

  CouplingStep() = default;
  CouplingStep(int latent_dim, const StackConfig& cfg, Rng& rng);

  /// (z', log_det): z1' = z1 * exp(s(z2)) + t(z2); z2 untouched; log_det = sum(s).
  std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& z);
  /// Exact algebraic inverse; returned log_det is the inverse direction's.
  std::pair<Tensor, Tensor> inverse(Tape& tape, const Tensor& z_prime);

  void collect(NamedParams& out, const std::string& prefix);

 private:
  std::pair<Tensor, Tensor> scale_shift(Tape& tape, const Tensor& cond_half);
};

/// Ordered coupling steps with interleaved flips; needs >= 2 steps so every
/// dimension is transformed. The flip contributes zero to the log-det.
struct FlowStack {
  std::vector<CouplingStep> steps;
  int dim = 0;

  FlowStack() = default;
  FlowStack(int latent_dim, int n_steps, const StackConfig& coupling_cfg, Rng& rng);

  std::pair<Tensor, Tensor> forward(Tape& tape, Tensor z);
  std::pair<Tensor, Tensor> inverse(Tape& tape, Tensor z_prime);
  /// log N(inverse(z'); 0, I) + log|det d inverse / d z'|.
  Tensor log_prob(Tape& tape, const Tensor& z_prime);

  std::pair<Matrix, double> forward_value(const Matrix& z);
  std::pair<Matrix, double> inverse_value(const Matrix& z_prime);
  double log_prob_value(const Matrix& z_prime);

  void collect(NamedParams& out, const std::string& prefix);
};

/// Standard-normal log-density as a differentiable scalar.
Tensor std_normal_log_pdf(Tape& tape, const Tensor& z);

struct NfmgWeights {
  double kl = 1.0;
  double vel = 0.1;
};

struct NfmgConfig {
  int d_motion = kMotionDim;
  int d_audio = 8;
  int d_latent = 16;  // must be even (coupling halves)
  int flow_steps = 4;
  StackConfig encoder{2, 64, 4, 128};
  StackConfig coupling{1, 32, 2, 64};
  StackConfig decoder{2, 64, 4, 128};
  std::uint64_t init_seed = 2;
};

struct NfmgLossTerms {
  Tensor total, rec, kl, vel;
};

/// Normalizing-flow motion generator: sequence encoder with a single linear
/// posterior head, an unconditional flow prior, and a causal motion decoder.
class NfmgModel {
 public:
  explicit NfmgModel(NfmgConfig cfg, NfmgWeights weights = {});

  DiagGaussian encode(Tape& tape, const Tensor& motion, const Matrix& audio);
  DiagGaussian encode(Tape& tape, const Matrix& motion, const Matrix& audio);
  DiagGaussianValue encode_values(const Matrix& motion, const Matrix& audio);

  Tensor decode_teacher(Tape& tape, const Tensor& z, const Tensor& motion, const Matrix& audio);
  Matrix decode(const Matrix& z, const Matrix& audio);

  NfmgLossTerms loss(Tape& tape, const Tensor& motion, const Matrix& audio, const Matrix& noise);
  NfmgLossTerms loss(Tape& tape, const Matrix& motion, const Matrix& audio, const Matrix& noise);

  /// Draws a motion sequence for the audio; noise is the base-normal sample.
  /// With use_flow=false the flow is bypassed (ablation prior).
  Matrix sample_motion(const Matrix& audio, const Matrix& noise, bool use_flow = true);

  FlowStack& flow() { return flow_; }
  NamedParams params();
  const NfmgConfig& config() const { return cfg_; }
  NfmgWeights& weights() { return weights_; }

  std::map<std::string, double> hparams() const;
  static NfmgConfig config_from_hparams(const std::map<std::string, double>& h);

 private:
  Tensor decoder_inputs(Tape& tape, const Tensor& z, const Tensor& prev);
  Tensor audio_memory(Tape& tape, const Matrix& audio);

  NfmgConfig cfg_;
  NfmgWeights weights_;

  Linear motion_in_, audio_enc_in_;
  EncoderStack encoder_;
  Linear posterior_head_;  // the single linear layer -> (mu | log_var)

  FlowStack flow_;

  Linear prev_in_, lat_in_, mem_in_;
  DecoderStack decoder_;
  Linear out_;
  Param start_token_;  // 1 x d_motion
};

inline const std::vector<std::string>& nfmg_log_columns() {
  static const std::vector<std::string> cols{"total", "rec", "kl", "vel"};
  return cols;
}

/// Same protocol as train_gmeg: epoch-0 row is a pre-update evaluation.
TrainLog train_nfmg(NfmgModel& model, const SyntheticCorpus& corpus, const TrainConfig& cfg, Adam& opt,
                    const EpochHook& on_epoch = nullptr);

/// Workflow wrappers: pretraining starts from init, finetuning continues
/// from the model's current weights on target-speaker data.
inline TrainLog pretrain_nfmg(NfmgModel& m, const SyntheticCorpus& corpus, const TrainConfig& cfg, Adam& opt) {
  return train_nfmg(m, corpus, cfg, opt);
}
inline TrainLog finetune_nfmg(NfmgModel& m, const SyntheticCorpus& target, const TrainConfig& cfg, Adam& opt) {
  return train_nfmg(m, target, cfg, opt);
}

}  // namespace gmixseq
