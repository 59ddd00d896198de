#include "gmixseq/blocks.hpp"

#include <cmath>

namespace gmixseq {

namespace {
constexpr double kMaskedOut = -1e9;
}

Matrix positional_encoding(Eigen::Index t_len, Eigen::Index dim) {
  if (t_len < 1) throw std::invalid_argument("positional_encoding: length must be >= 1");
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("positional_encoding: dim must be even and >= 2");
  Matrix pe(t_len, dim);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (Eigen::Index i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe(t, 2 * i) = std::sin(static_cast<double>(t) * freq);
      pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

Matrix causal_mask(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = kMaskedOut;
  return m;
}

Matrix aligned_memory_mask(Eigen::Index t, Eigen::Index t_mem) {
  Matrix m = Matrix::Zero(t, t_mem);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = i + 1; j < t_mem; ++j) m(i, j) = kMaskedOut;
  return m;
}

Tensor Linear::forward(Tape& tape, const Tensor& x) {
  return add(matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".w", &weight);
  out.emplace_back(prefix + ".b", &bias);
}

Tensor LayerNorm::forward(Tape& tape, const Tensor& x) {
  return layer_norm(x, tape.param(gain), tape.param(shift));
}

void LayerNorm::collect(NamedParams& out, const std::string& prefix) {
  out.emplace_back(prefix + ".gain", &gain);
  out.emplace_back(prefix + ".shift", &shift);
}

MultiHeadAttention::MultiHeadAttention(int model_dim, int heads, Rng& rng)
    : wq(model_dim, model_dim, rng),
      wk(model_dim, model_dim, rng),
      wv(model_dim, model_dim, rng),
      wo(model_dim, model_dim, rng),
      n_heads(heads) {
  if (model_dim % heads != 0) throw std::invalid_argument("attention: model_dim must divide by n_heads");
}

Tensor MultiHeadAttention::forward(Tape& tape, const Tensor& q_in, const Tensor& kv_in, const Matrix* mask) {
  const Eigen::Index d = q_in.cols();
  const Eigen::Index dh = d / n_heads;
  Tensor q = wq.forward(tape, q_in);
  Tensor k = wk.forward(tape, kv_in);
  Tensor v = wv.forward(tape, kv_in);
  std::optional<Tensor> mask_t;
  if (mask != nullptr) {
    if (mask->rows() != q_in.rows() || mask->cols() != kv_in.rows())
      throw std::invalid_argument("attention: mask shape must be n_query x n_key");
    mask_t = tape.constant(*mask);
  }
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask_t) scores = add(scores, *mask_t);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return wo.forward(tape, concat_cols(std::span<const Tensor>(heads.data(), heads.size())));
}

void MultiHeadAttention::collect(NamedParams& out, const std::string& prefix) {
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
}

EncoderLayer::EncoderLayer(const StackConfig& cfg, Rng& rng)
    : ln1(cfg.model_dim),
      ln2(cfg.model_dim),
      attn(cfg.model_dim, cfg.n_heads, rng),
      ff1(cfg.model_dim, cfg.ff_dim, rng),
      ff2(cfg.ff_dim, cfg.model_dim, rng) {}

Tensor EncoderLayer::forward(Tape& tape, const Tensor& x, const Matrix* mask) {
  Tensor n1 = ln1.forward(tape, x);
  Tensor h = add(x, attn.forward(tape, n1, n1, mask));
  Tensor n2 = ln2.forward(tape, h);
  return add(h, ff2.forward(tape, relu(ff1.forward(tape, n2))));
}

void EncoderLayer::collect(NamedParams& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  attn.collect(out, prefix + ".attn");
  ff1.collect(out, prefix + ".ff1");
  ff2.collect(out, prefix + ".ff2");
}

EncoderStack::EncoderStack(const StackConfig& c, Rng& rng) : cfg(c) {
  layers.reserve(static_cast<std::size_t>(c.n_layers));
  for (int i = 0; i < c.n_layers; ++i) layers.emplace_back(c, rng);
}

Tensor EncoderStack::forward(Tape& tape, const Tensor& x, const Matrix* mask) {
  Tensor h = x;
  for (auto& layer : layers) h = layer.forward(tape, h, mask);
  return h;
}

void EncoderStack::collect(NamedParams& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
}

DecoderLayer::DecoderLayer(const StackConfig& cfg, Rng& rng)
    : ln1(cfg.model_dim),
      ln2(cfg.model_dim),
      ln3(cfg.model_dim),
      self_attn(cfg.model_dim, cfg.n_heads, rng),
      cross_attn(cfg.model_dim, cfg.n_heads, rng),
      ff1(cfg.model_dim, cfg.ff_dim, rng),
      ff2(cfg.ff_dim, cfg.model_dim, rng) {}

Tensor DecoderLayer::forward(Tape& tape, const Tensor& x, const Tensor& memory, const Matrix* self_mask,
                             const Matrix* cross_mask) {
  Tensor n1 = ln1.forward(tape, x);
  Tensor h = add(x, self_attn.forward(tape, n1, n1, self_mask));
  Tensor h2 = add(h, cross_attn.forward(tape, ln2.forward(tape, h), memory, cross_mask));
  return add(h2, ff2.forward(tape, relu(ff1.forward(tape, ln3.forward(tape, h2)))));
}

void DecoderLayer::collect(NamedParams& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  ln3.collect(out, prefix + ".ln3");
  self_attn.collect(out, prefix + ".self");
  cross_attn.collect(out, prefix + ".cross");
  ff1.collect(out, prefix + ".ff1");
  ff2.collect(out, prefix + ".ff2");
}

DecoderStack::DecoderStack(const StackConfig& c, Rng& rng) : cfg(c) {
  layers.reserve(static_cast<std::size_t>(c.n_layers));
  for (int i = 0; i < c.n_layers; ++i) layers.emplace_back(c, rng);
}

Tensor DecoderStack::forward(Tape& tape, const Tensor& x, const Tensor& memory) {
  if (x.rows() > memory.rows())
    throw std::invalid_argument("decoder: target length exceeds memory length (audio exhausted)");
  const Matrix self_mask = causal_mask(x.rows());
  const Matrix cross_mask = aligned_memory_mask(x.rows(), memory.rows());
  Tensor h = x;
  for (auto& layer : layers) h = layer.forward(tape, h, memory, &self_mask, &cross_mask);
  return h;
}

Tensor DecoderStack::decode_step(Tape& tape, const Tensor& prev, const Tensor& memory) {
  if (prev.rows() < 1) throw std::invalid_argument("decode_step: need at least one previous position");
  Tensor out = forward(tape, prev, memory);
  return slice_rows(out, out.rows() - 1, 1);
}

void DecoderStack::collect(NamedParams& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
}

}  // namespace gmixseq
