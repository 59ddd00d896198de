#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gmixseq/tensor.hpp"

namespace gmixseq {

/// Sinusoidal position table, T x d, canonical 10000^(2i/d) frequencies.
/// d must be even.
Matrix positional_encoding(Eigen::Index t_len, Eigen::Index dim);

/// Additive attention masks: 0 where attending is allowed, -1e9 where not.
Matrix causal_mask(Eigen::Index n);
/// Query position i may attend memory positions j <= i.
Matrix aligned_memory_mask(Eigen::Index t, Eigen::Index t_mem);

struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, Rng& rng)
      : weight(rng.xavier(in, out)), bias(Matrix::Zero(1, out)) {}

  Tensor forward(Tape& tape, const Tensor& x);
  void collect(NamedParams& out, const std::string& prefix);
};

struct LayerNorm {
  Param gain;   // 1 x d
  Param shift;  // 1 x d

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d) : gain(Matrix::Ones(1, d)), shift(Matrix::Zero(1, d)) {}

  Tensor forward(Tape& tape, const Tensor& x);
  void collect(NamedParams& out, const std::string& prefix);
};

struct StackConfig {
  int n_layers = 2;
  int model_dim = 64;
  int n_heads = 4;
  int ff_dim = 128;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int n_heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(int model_dim, int heads, Rng& rng);

  /// q_in: n x d, kv_in: m x d, mask: optional n x m additive bias.
  Tensor forward(Tape& tape, const Tensor& q_in, const Tensor& kv_in, const Matrix* mask);
  void collect(NamedParams& out, const std::string& prefix);
};

/// Pre-norm encoder layer: x + attn(ln1(x)); then x + ff(ln2(x)).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  EncoderLayer() = default;
  EncoderLayer(const StackConfig& cfg, Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Matrix* mask);
  void collect(NamedParams& out, const std::string& prefix);
};

struct EncoderStack {
  StackConfig cfg;
  std::vector<EncoderLayer> layers;

  EncoderStack() = default;
  EncoderStack(const StackConfig& cfg, Rng& rng);

  /// Shape preserving; with no mask and no positional input, permutation
  /// equivariant. Positional encodings are the caller's business.
  Tensor forward(Tape& tape, const Tensor& x, const Matrix* mask = nullptr);
  void collect(NamedParams& out, const std::string& prefix);
};

/// Pre-norm decoder layer: causal self-attention, then cross attention over
/// the memory, then feed-forward.
struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  Linear ff1, ff2;

  DecoderLayer() = default;
  DecoderLayer(const StackConfig& cfg, Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& memory, const Matrix* self_mask,
                 const Matrix* cross_mask);
  void collect(NamedParams& out, const std::string& prefix);
};

struct DecoderStack {
  StackConfig cfg;
  std::vector<DecoderLayer> layers;

  DecoderStack() = default;
  DecoderStack(const StackConfig& cfg, Rng& rng);

  /// x: t x d target embeddings, memory: T x d. Both attentions are causally
  /// masked, so row t of the output depends only on x[0..t] and memory[0..t].
  /// Throws if t exceeds the memory length.
  Tensor forward(Tape& tape, const Tensor& x, const Tensor& memory);

  /// Output at the last position only (1 x d).
  Tensor decode_step(Tape& tape, const Tensor& prev, const Tensor& memory);

  void collect(NamedParams& out, const std::string& prefix);
};

}  // namespace gmixseq
