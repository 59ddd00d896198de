#include "gmixseq/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace gmixseq {

namespace {

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw std::domain_error(std::string(op) + ": non-finite result");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + ")");
}

Tape& same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": operands must live on the same tape");
  return *a.tape();
}

Tape& tape_of(const Tensor& a, const char* op) {
  if (a.tape() == nullptr) throw std::invalid_argument(std::string(op) + ": unbound tensor");
  return *a.tape();
}

// Broadcast classification for elementwise binops: equal shapes, or one side
// is a single row repeated over the other's rows.
enum class Bcast { None, A, B };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::None;
  if (a.cols() == b.cols() && b.rows() == 1 && a.rows() > 1) return Bcast::B;
  if (a.cols() == b.cols() && a.rows() == 1 && b.rows() > 1) return Bcast::A;
  shape_error(op, a, b);
}

}  // namespace

const Matrix& Tensor::value() const {
  if (tape_ == nullptr) throw std::logic_error("Tensor::value: unbound tensor");
  return tape_->value_at(idx_);
}

const Matrix& Tensor::grad() const {
  if (tape_ == nullptr) throw std::logic_error("Tensor::grad: unbound tensor");
  return tape_->grad_at(idx_);
}

bool Tensor::requires_grad() const { return tape_ != nullptr && tape_->requires_grad_at(idx_); }

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("Tensor::scalar: tensor is not 1x1");
  return v(0, 0);
}

Tensor Tape::leaf(Matrix v, bool requires_grad) {
  check_finite(v, "leaf");
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::param(Param& p) {
  if (auto it = param_cache_.find(&p); it != param_cache_.end()) return Tensor(this, it->second);
  Tensor t = leaf(p.value, true);
  nodes_.back().sink = &p;
  param_cache_[&p] = t.index();
  return t;
}

Tensor Tape::emit(Matrix value, bool requires_grad, BackFn back, std::vector<int> parents) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) {
    n.back = std::move(back);
    n.parents = std::move(parents);
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad_at(int idx) const { return nodes_[static_cast<std::size_t>(idx)].grad; }

void Tape::add_grad(int idx, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad += delta;
  n.touched = true;
}

void Tape::backward(const Tensor& loss) {
  if (backward_run_) throw std::logic_error("Tape::backward: tape already differentiated (single-shot)");
  if (loss.tape() != this) throw std::invalid_argument("Tape::backward: loss lives on another tape");
  if (loss.value().size() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
  backward_run_ = true;

  Node& top = nodes_[static_cast<std::size_t>(loss.index())];
  if (!top.requires_grad) return;  // nothing depends on any leaf
  top.grad = Matrix::Constant(1, 1, 1.0);
  top.touched = true;

  // Creation order is topological, so one reverse sweep visits each node once.
  for (int i = loss.index(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.touched || !n.requires_grad) continue;
    if (n.back) n.back(*this, i);
    if (n.sink != nullptr) n.sink->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd>
Tensor binop(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Tape::BackFn back) {
  Tape& tape = same_tape(a, b, op);
  const Bcast bc = classify(a, b, op);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (bc == Bcast::None)
    out = fwd(av, bv);
  else if (bc == Bcast::B)
    out = fwd(av, bv.replicate(av.rows(), 1).eval());
  else
    out = fwd(av.replicate(bv.rows(), 1).eval(), bv);
  check_finite(out, op);
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.emit(std::move(out), rg, std::move(back), {a.index(), b.index()});
}

// Reduce a full-shape gradient back onto a possibly broadcast operand.
Matrix reduce_to(const Matrix& g, Eigen::Index rows) {
  if (g.rows() == rows) return g;
  return g.colwise().sum();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const int ai = a.index(), bi = b.index();
  return binop(a, b, "add", [](const Matrix& x, const Matrix& y) { return (x + y).eval(); },
               [ai, bi](Tape& t, int self) {
                 const Matrix& g = t.grad_at(self);
                 t.add_grad(ai, reduce_to(g, t.value_at(ai).rows()));
                 t.add_grad(bi, reduce_to(g, t.value_at(bi).rows()));
               });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const int ai = a.index(), bi = b.index();
  return binop(a, b, "sub", [](const Matrix& x, const Matrix& y) { return (x - y).eval(); },
               [ai, bi](Tape& t, int self) {
                 const Matrix& g = t.grad_at(self);
                 t.add_grad(ai, reduce_to(g, t.value_at(ai).rows()));
                 t.add_grad(bi, reduce_to((-g).eval(), t.value_at(bi).rows()));
               });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const int ai = a.index(), bi = b.index();
  return binop(a, b, "mul", [](const Matrix& x, const Matrix& y) { return x.cwiseProduct(y).eval(); },
               [ai, bi](Tape& t, int self) {
                 const Matrix& g = t.grad_at(self);
                 const Matrix& av = t.value_at(ai);
                 const Matrix& bv = t.value_at(bi);
                 Matrix bfull = bv.rows() == g.rows() ? bv : bv.replicate(g.rows(), 1).eval();
                 Matrix afull = av.rows() == g.rows() ? av : av.replicate(g.rows(), 1).eval();
                 t.add_grad(ai, reduce_to(g.cwiseProduct(bfull).eval(), av.rows()));
                 t.add_grad(bi, reduce_to(g.cwiseProduct(afull).eval(), bv.rows()));
               });
}

Tensor add(const Tensor& a, double c) {
  Tape& tape = tape_of(a, "add_scalar");
  Matrix out = a.value().array() + c;
  check_finite(out, "add_scalar");
  const int ai = a.index();
  return tape.emit(std::move(out), a.requires_grad(),
                   [ai](Tape& t, int self) { t.add_grad(ai, t.grad_at(self)); }, {a.index()});
}

Tensor scale(const Tensor& a, double c) {
  Tape& tape = tape_of(a, "scale");
  Matrix out = a.value() * c;
  check_finite(out, "scale");
  const int ai = a.index();
  return tape.emit(std::move(out), a.requires_grad(),
                   [ai, c](Tape& t, int self) { t.add_grad(ai, (t.grad_at(self) * c).eval()); }, {a.index()});
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

namespace {

// Row-i of the product accumulates sequentially over k, so it is a bitwise
// function of (row i of a, all of b) no matter how many rows a has. Masked
// attention relies on this: exact zero weights leave prefixes untouched when
// the sequence is truncated.
Matrix rowwise_product(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) out.row(i) += a(i, k) * b.row(k);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix out = rowwise_product(a.value(), b.value());
  check_finite(out, "matmul");
  const int ai = a.index(), bi = b.index();
  return tape.emit(std::move(out), a.requires_grad() || b.requires_grad(),
                   [ai, bi](Tape& t, int self) {
                     const Matrix& g = t.grad_at(self);
                     t.add_grad(ai, (g * t.value_at(bi).transpose()).eval());
                     t.add_grad(bi, (t.value_at(ai).transpose() * g).eval());
                   },
                   {a.index(), b.index()});
}

Tensor transpose(const Tensor& a) {
  Tape& tape = tape_of(a, "transpose");
  const int ai = a.index();
  return tape.emit(a.value().transpose(), a.requires_grad(),
                   [ai](Tape& t, int self) { t.add_grad(ai, t.grad_at(self).transpose().eval()); }, {a.index()});
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Tape::BackFn back) {
  Tape& tape = tape_of(a, op);
  Matrix out = fwd(a.value());
  check_finite(out, op);
  return tape.emit(std::move(out), a.requires_grad(), std::move(back), {a.index()});
}

}  // namespace

Tensor exp(const Tensor& a) {
  const int ai = a.index();
  // std::exp per element: Eigen's packet exp clamps large-magnitude inputs
  // instead of over/underflowing, which would turn exact zeros into denormals.
  return unary(a, "exp", [](const Matrix& x) { return x.unaryExpr([](double v) { return std::exp(v); }).eval(); },
               [ai](Tape& t, int self) {
                 t.add_grad(ai, t.grad_at(self).cwiseProduct(t.value_at(self)).eval());
               });
}

Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw std::domain_error("log: non-positive input");
  const int ai = a.index();
  return unary(a, "log", [](const Matrix& x) { return x.unaryExpr([](double v) { return std::log(v); }).eval(); },
               [ai](Tape& t, int self) {
                 t.add_grad(ai, t.grad_at(self).cwiseQuotient(t.value_at(ai)).eval());
               });
}

Tensor tanh(const Tensor& a) {
  const int ai = a.index();
  return unary(a, "tanh", [](const Matrix& x) { return x.unaryExpr([](double v) { return std::tanh(v); }).eval(); },
               [ai](Tape& t, int self) {
                 const Matrix& y = t.value_at(self);
                 t.add_grad(ai, t.grad_at(self).cwiseProduct((1.0 - y.array().square()).matrix()).eval());
               });
}

Tensor relu(const Tensor& a) {
  const int ai = a.index();
  return unary(a, "relu", [](const Matrix& x) { return x.cwiseMax(0.0).eval(); },
               [ai](Tape& t, int self) {
                 const Matrix mask = (t.value_at(ai).array() > 0.0).cast<double>();
                 t.add_grad(ai, t.grad_at(self).cwiseProduct(mask).eval());
               });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value().array() < 0.0).any()) throw std::domain_error("sqrt: negative input");
  const int ai = a.index();
  return unary(a, "sqrt", [](const Matrix& x) { return x.array().sqrt().matrix().eval(); },
               [ai](Tape& t, int self) {
                 t.add_grad(ai, (t.grad_at(self).array() * 0.5 / t.value_at(self).array()).matrix().eval());
               });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  Tape& tape = tape_of(a, "softmax");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) e(j) = std::exp(x(i, j) - m);
    // Sequential sum: rows that only differ by trailing masked-out (exactly
    // zero) entries normalize bitwise-identically.
    double denom = 0.0;
    for (Eigen::Index j = 0; j < e.size(); ++j) denom += e(j);
    out.row(i) = (e / denom).matrix();
  }
  check_finite(out, "softmax");
  const int ai = a.index();
  return tape.emit(std::move(out), a.requires_grad(),
                   [ai](Tape& t, int self) {
                     const Matrix& y = t.value_at(self);
                     const Matrix& g = t.grad_at(self);
                     Matrix dx(y.rows(), y.cols());
                     for (Eigen::Index i = 0; i < y.rows(); ++i) {
                       const double dot = g.row(i).dot(y.row(i));
                       dx.row(i) = (g.row(i).array() - dot).matrix().cwiseProduct(y.row(i));
                     }
                     t.add_grad(ai, dx);
                   },
                   {a.index()});
}

Tensor logsumexp(const Tensor& a, int axis) {
  if (axis == 0) return transpose(logsumexp(transpose(a), 1));
  if (axis != 1) throw std::invalid_argument("logsumexp: axis must be 0 or 1");
  Tape& tape = tape_of(a, "logsumexp");
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m);
    out(i, 0) = m + std::log(s);
  }
  check_finite(out, "logsumexp");
  const int ai = a.index();
  return tape.emit(std::move(out), a.requires_grad(),
                   [ai](Tape& t, int self) {
                     const Matrix& x2 = t.value_at(ai);
                     const Matrix& y = t.value_at(self);
                     const Matrix& g = t.grad_at(self);
                     Matrix dx(x2.rows(), x2.cols());
                     for (Eigen::Index i = 0; i < x2.rows(); ++i)
                       for (Eigen::Index j = 0; j < x2.cols(); ++j)
                         dx(i, j) = g(i, 0) * std::exp(x2(i, j) - y(i, 0));
                     t.add_grad(ai, dx);
                   },
                   {a.index()});
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Tape& tape = tape_of(a, "sum");
  const int ai = a.index();
  return tape.emit(Matrix::Constant(1, 1, a.value().sum()), a.requires_grad(),
                   [ai](Tape& t, int self) {
                     const double g = t.grad_at(self)(0, 0);
                     const Matrix& v = t.value_at(ai);
                     t.add_grad(ai, Matrix::Constant(v.rows(), v.cols(), g));
                   },
                   {a.index()});
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Tensor sum_rows(const Tensor& a) {
  Tape& tape = tape_of(a, "sum_rows");
  const int ai = a.index();
  return tape.emit(a.value().colwise().sum(), a.requires_grad(),
                   [ai](Tape& t, int self) {
                     const Matrix& g = t.grad_at(self);
                     t.add_grad(ai, g.replicate(t.value_at(ai).rows(), 1).eval());
                   },
                   {a.index()});
}

Tensor mean_rows(const Tensor& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().rows())); }

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n) {
  Tape& tape = tape_of(a, "slice_rows");
  if (r0 < 0 || n < 0 || r0 + n > a.rows()) throw std::invalid_argument("slice_rows: range out of bounds");
  const int ai = a.index();
  return tape.emit(a.value().middleRows(r0, n), a.requires_grad(),
                   [ai, r0, n](Tape& t, int self) {
                     const Matrix& v = t.value_at(ai);
                     Matrix pad = Matrix::Zero(v.rows(), v.cols());
                     pad.middleRows(r0, n) = t.grad_at(self);
                     t.add_grad(ai, pad);
                   },
                   {a.index()});
}

Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n) {
  Tape& tape = tape_of(a, "slice_cols");
  if (c0 < 0 || n < 0 || c0 + n > a.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
  const int ai = a.index();
  return tape.emit(a.value().middleCols(c0, n), a.requires_grad(),
                   [ai, c0, n](Tape& t, int self) {
                     const Matrix& v = t.value_at(ai);
                     Matrix pad = Matrix::Zero(v.rows(), v.cols());
                     pad.middleCols(c0, n) = t.grad_at(self);
                     t.add_grad(ai, pad);
                   },
                   {a.index()});
}

namespace {

Tensor concat_impl(std::span<const Tensor> parts, bool rows) {
  if (parts.empty()) throw std::invalid_argument("concat: empty part list");
  Tape& tape = tape_of(parts[0], "concat");
  Eigen::Index total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat: parts on different tapes");
    if (rows ? p.cols() != parts[0].cols() : p.rows() != parts[0].rows())
      throw std::invalid_argument("concat: incompatible part shapes");
    total += rows ? p.rows() : p.cols();
    rg = rg || p.requires_grad();
  }
  Matrix out = rows ? Matrix(total, parts[0].cols()) : Matrix(parts[0].rows(), total);
  std::vector<int> idx;
  std::vector<Eigen::Index> extent;
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    const Eigen::Index n = rows ? p.rows() : p.cols();
    if (rows)
      out.middleRows(at, n) = p.value();
    else
      out.middleCols(at, n) = p.value();
    idx.push_back(p.index());
    extent.push_back(n);
    at += n;
  }
  return tape.emit(std::move(out), rg,
                   [idx, extent, rows](Tape& t, int self) {
                     const Matrix& g = t.grad_at(self);
                     Eigen::Index at2 = 0;
                     for (std::size_t k = 0; k < idx.size(); ++k) {
                       if (rows)
                         t.add_grad(idx[k], g.middleRows(at2, extent[k]).eval());
                       else
                         t.add_grad(idx[k], g.middleCols(at2, extent[k]).eval());
                       at2 += extent[k];
                     }
                   },
                   idx);
}

}  // namespace

Tensor concat_rows(std::span<const Tensor> parts) { return concat_impl(parts, true); }
Tensor concat_cols(std::span<const Tensor> parts) { return concat_impl(parts, false); }

Tensor reverse_cols(const Tensor& a) {
  Tape& tape = tape_of(a, "reverse_cols");
  const int ai = a.index();
  return tape.emit(a.value().rowwise().reverse(), a.requires_grad(),
                   [ai](Tape& t, int self) { t.add_grad(ai, t.grad_at(self).rowwise().reverse().eval()); },
                   {a.index()});
}

// ---------------------------------------------------------------------------
// Layer norm (fused: row-wise normalize, then gain/shift)
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  Tape& tape = tape_of(x, "layer_norm");
  if (gain.rows() != 1 || shift.rows() != 1 || gain.cols() != x.cols() || shift.cols() != x.cols())
    throw std::invalid_argument("layer_norm: gain/shift must be 1 x cols");
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  Matrix xhat(xv.rows(), d);
  Matrix inv_std(xv.rows(), 1);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i, 0) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = ((xv.row(i).array() - mu) * inv_std(i, 0)).matrix();
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + shift.value().row(0).array();
  check_finite(out, "layer_norm");
  const int xi = x.index(), gi = gain.index(), si = shift.index();
  const bool rg = x.requires_grad() || gain.requires_grad() || shift.requires_grad();
  return tape.emit(std::move(out), rg,
                   [xi, gi, si, xhat, inv_std](Tape& t, int self) {
                     const Matrix& g = t.grad_at(self);
                     const Matrix& gainv = t.value_at(gi);
                     t.add_grad(si, g.colwise().sum().eval());
                     t.add_grad(gi, g.cwiseProduct(xhat).colwise().sum().eval());
                     Matrix dxhat = g.array().rowwise() * gainv.row(0).array();
                     Matrix dx(dxhat.rows(), dxhat.cols());
                     const double d2 = static_cast<double>(dxhat.cols());
                     for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                       const double m1 = dxhat.row(i).mean();
                       const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / d2;
                       dx.row(i) =
                           inv_std(i, 0) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
                     }
                     t.add_grad(xi, dx);
                   },
                   {x.index(), gain.index(), shift.index()});
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double h) {
  if (h < 1e-6 || h > 1e-4) throw std::invalid_argument("grad_check: h must be in [1e-6, 1e-4]");
  Matrix analytic;
  {
    Tape tape;
    Tensor xt = tape.leaf(x, true);
    Tensor loss = f(tape, xt);
    if (loss.value().size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    tape.backward(loss);
    analytic = xt.grad().size() > 0 ? xt.grad() : Matrix::Zero(x.rows(), x.cols());
  }
  auto eval = [&](const Matrix& xp) {
    Tape tape;
    Tensor xt = tape.leaf(xp, false);
    return f(tape, xt).scalar();
  };
  double worst = 0.0;
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      xp(i, j) = x(i, j) + h;
      const double fp = eval(xp);
      xp(i, j) = x(i, j) - h;
      const double fm = eval(xp);
      xp(i, j) = x(i, j);
      const double fd = (fp - fm) / (2.0 * h);
      if (!std::isfinite(fd)) throw std::domain_error("grad_check: non-finite finite-difference value");
      worst = std::max(worst, std::abs(analytic(i, j) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

double param_grad_check(const std::function<double()>& loss_value, Param& p, const Matrix& analytic, double h,
                        int max_coords, Rng* rng) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> coords;
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) coords.emplace_back(i, j);
  if (max_coords > 0 && static_cast<std::size_t>(max_coords) < coords.size()) {
    if (rng == nullptr) throw std::invalid_argument("param_grad_check: sampling requires an rng");
    rng->shuffle(coords);
    coords.resize(static_cast<std::size_t>(max_coords));
  }
  double worst = 0.0;
  for (auto [i, j] : coords) {
    const double keep = p.value(i, j);
    p.value(i, j) = keep + h;
    const double fp = loss_value();
    p.value(i, j) = keep - h;
    const double fm = loss_value();
    p.value(i, j) = keep;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic(i, j) - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace gmixseq
