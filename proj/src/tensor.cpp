#include "signclip/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "signclip/error.hpp"

namespace signclip {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string shape_string(Index rows, Index cols) { return shape_string(Shape{rows, cols}); }

namespace {

Index storage_cols(const Shape& shape) {
  Index c = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
  return c;
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  }
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape();
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, Matrix values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (shape_.empty() || shape_.size() > 3) {
    throw DimensionError("Tensor: rank must be 1..3, got " + shape_string(shape_));
  }
  for (Index d : shape_) {
    if (d <= 0) throw DimensionError("Tensor: non-positive dimension in " + shape_string(shape_));
  }
  if (values_.rows() != shape_[0] || values_.cols() != storage_cols(shape_)) {
    throw DimensionError("Tensor: storage " + shape_string(values_.rows(), values_.cols()) +
                         " does not hold shape " + shape_string(shape_));
  }
}

Tensor::Tensor(Matrix values, bool requires_grad)
    : Tensor(Shape{values.rows(), values.cols()}, values, requires_grad) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Matrix m = Matrix::Zero(shape.empty() ? 0 : shape[0], storage_cols(shape));
  return Tensor(std::move(shape), std::move(m), requires_grad);
}

const Matrix& Tensor::grad() {
  if (!grad_) grad_ = Matrix::Zero(values_.rows(), values_.cols());
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) grad_->setZero();
}

void Tensor::accumulate_grad(const Matrix& g) {
  require_same_shape("Tensor::accumulate_grad", values_, g);
  if (!grad_) {
    grad_ = g;
  } else {
    *grad_ += g;
  }
}

std::uint64_t Tensor::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
  const std::size_t n = static_cast<std::size_t>(values_.size()) * sizeof(Scalar);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  for (Index d : shape_) {
    h ^= static_cast<std::uint64_t>(d);
    h *= 1099511628211ULL;
  }
  return h;
}

// --- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

Scalar Var::item() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("Var::item on non-scalar " + shape_string(v.rows(), v.cols()));
  }
  return v(0, 0);
}

Matrix Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor& t) {
  Node n;
  n.value = t.value();
  n.needs_grad = record_gradients_ && t.requires_grad();
  n.leaf = n.needs_grad ? &t : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].needs_grad; });
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_string(lv.rows(), lv.cols()));
  }
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.leaf) {
      n.leaf->accumulate_grad(n.grad);
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
  // Leaves off the loss path still expose a (zero) gradient.
  for (Node& n : nodes_) {
    if (n.leaf) (void)n.leaf->grad();
  }
}

// --- operations ------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.rows(), av.cols()) + " and " +
                         shape_string(bv.rows(), bv.cols()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(av * bv, {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(Var a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().transpose(), {ia},
                          [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transpose()); });
}

Var add(Var a, Var b) {
  Tape& t = same_tape("add", a, b);
  require_same_shape("add", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape("sub", a, b);
  require_same_shape("sub", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape("mul", a, b);
  require_same_shape("mul", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(Var a, Scalar c) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * c, {ia}, [ia, c](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * c); });
}

Var add_scalar(Var a, Scalar c) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().array() + c, {ia}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape("add_row", a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.rows(), rv.cols()) + " does not broadcast over " +
                         shape_string(av.rows(), av.cols()));
  }
  const std::size_t ia = a.id(), ir = row.id();
  Matrix out = av.rowwise() + rv.row(0);
  return t.record(std::move(out), {ia, ir}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var a) {
  const std::size_t ia = a.id();
  Matrix y = a.value().unaryExpr([](Scalar v) { return stable_sigmoid(v); });
  const std::size_t out = a.tape()->size();
  return a.tape()->record(std::move(y), {ia}, [ia, out](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    tp.accumulate(ia, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var relu(Var a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().cwiseMax(0.0), {ia}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, (tp.value(ia).array() > 0.0).select(g, 0.0));
  });
}

Var tanh(Var a) {
  const std::size_t ia = a.id();
  const std::size_t out = a.tape()->size();
  return a.tape()->record(a.value().array().tanh().matrix(), {ia}, [ia, out](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    tp.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

namespace {

Matrix masked_softmax(const Matrix& x, SoftmaxMask mask) {
  if (mask == SoftmaxMask::none) return softmax_rows_value(x);
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index n = std::min<Index>(i + 1, x.cols());
    const Scalar m = x.row(i).head(n).maxCoeff();
    y.row(i).head(n) = (x.row(i).head(n).array() - m).exp();
    y.row(i).head(n) /= y.row(i).head(n).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(Var x, SoftmaxMask mask) {
  const std::size_t ix = x.id();
  const std::size_t out = x.tape()->size();
  return x.tape()->record(masked_softmax(x.value(), mask), {ix}, [ix, out](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const Scalar dot = g.row(i).dot(y.row(i));
      dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    tp.accumulate(ix, dx);
  });
}

Var log_softmax_rows(Var x) {
  const std::size_t ix = x.id();
  const Matrix& xv = x.value();
  Matrix y(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    const Scalar m = xv.row(i).maxCoeff();
    const Scalar lse = m + std::log((xv.row(i).array() - m).exp().sum());
    y.row(i) = xv.row(i).array() - lse;
  }
  const std::size_t out = x.tape()->size();
  return x.tape()->record(std::move(y), {ix}, [ix, out](Tape& tp, const Matrix& g) {
    const Matrix p = tp.value(out).array().exp();
    Matrix dx = g;
    for (Index i = 0; i < g.rows(); ++i) dx.row(i) -= p.row(i) * g.row(i).sum();
    tp.accumulate(ix, dx);
  });
}

Var layer_norm_rows(Var x, Scalar eps) {
  const std::size_t ix = x.id();
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  Matrix y(xv.rows(), n);
  RowVector inv_std(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    const Scalar mu = xv.row(i).mean();
    const Scalar var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    y.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  const std::size_t out = x.tape()->size();
  return x.tape()->record(std::move(y), {ix}, [ix, out, inv_std](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const Scalar gm = g.row(i).mean();
      const Scalar gy = g.row(i).dot(y.row(i)) / static_cast<Scalar>(y.cols());
      dx.row(i) = (g.row(i).array() - gm - y.row(i).array() * gy) * inv_std(i);
    }
    tp.accumulate(ix, dx);
  });
}

Var l2_normalize_rows(Var x) {
  const std::size_t ix = x.id();
  const Matrix& xv = x.value();
  RowVector norms(xv.rows());
  for (Index i = 0; i < xv.rows(); ++i) {
    norms(i) = xv.row(i).norm();
    if (!std::isfinite(norms(i))) {
      throw DivergenceError("l2_normalize_rows: row " + std::to_string(i) + " is not finite");
    }
    if (!(norms(i) > 0.0)) {
      throw DegenerateEmbeddingError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
  }
  Matrix y = xv;
  for (Index i = 0; i < xv.rows(); ++i) y.row(i) /= norms(i);
  const std::size_t out = x.tape()->size();
  return x.tape()->record(std::move(y), {ix}, [ix, out, norms](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      dx.row(i) = (g.row(i) - y.row(i) * g.row(i).dot(y.row(i))) / norms(i);
    }
    tp.accumulate(ix, dx);
  });
}

namespace {

// (d * width) x T patch matrix for same-padded correlation.
Matrix im2col(const Matrix& x, Index width) {
  const Index d = x.rows(), T = x.cols(), pad = width / 2;
  Matrix cols = Matrix::Zero(d * width, T);
  for (Index c = 0; c < d; ++c) {
    for (Index j = 0; j < width; ++j) {
      for (Index t = 0; t < T; ++t) {
        const Index src = t + j - pad;
        if (src >= 0 && src < T) cols(c * width + j, t) = x(c, src);
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, Index d, Index T, Index width) {
  const Index pad = width / 2;
  Matrix x = Matrix::Zero(d, T);
  for (Index c = 0; c < d; ++c) {
    for (Index j = 0; j < width; ++j) {
      for (Index t = 0; t < T; ++t) {
        const Index src = t + j - pad;
        if (src >= 0 && src < T) x(c, src) += cols(c * width + j, t);
      }
    }
  }
  return x;
}

}  // namespace

Var conv1d(Var x, Var kernels, Index width) {
  Tape& t = same_tape("conv1d", x, kernels);
  if (width < 1 || width % 2 == 0) {
    throw ConfigError("conv1d: kernel width must be odd for same padding, got " + std::to_string(width));
  }
  const Matrix& xv = x.value();
  const Matrix& kv = kernels.value();
  if (kv.cols() != xv.rows() * width) {
    throw DimensionError("conv1d: kernel bank " + shape_string(kv.rows(), kv.cols()) + " does not match input " +
                         shape_string(xv.rows(), xv.cols()) + " with width " + std::to_string(width));
  }
  Matrix cols = im2col(xv, width);
  Matrix y = kv * cols;
  const std::size_t ix = x.id(), ik = kernels.id();
  const Index d = xv.rows(), T = xv.cols();
  return t.record(std::move(y), {ix, ik}, [ix, ik, d, T, width, cols = std::move(cols)](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ik)) tp.accumulate(ik, g * cols.transpose());
    if (tp.needs_grad(ix)) tp.accumulate(ix, col2im(tp.value(ik).transpose() * g, d, T, width));
  });
}

Var mean_rows(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows() == 0) throw ContractError("mean_rows: empty sequence");
  const std::size_t ix = x.id();
  const Index T = xv.rows();
  return x.tape()->record(xv.colwise().mean(), {ix}, [ix, T](Tape& tp, const Matrix& g) {
    tp.accumulate(ix, Matrix::Ones(T, 1) * (g / static_cast<Scalar>(T)));
  });
}

Var sum(Var x) {
  const std::size_t ix = x.id();
  const Index r = x.rows(), c = x.cols();
  Matrix s(1, 1);
  s(0, 0) = x.value().sum();
  return x.tape()->record(std::move(s), {ix}, [ix, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ix, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<Scalar>(x.value().size()));
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape("concat_cols", a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ " + shape_string(av.rows(), av.cols()) + " vs " +
                         shape_string(bv.rows(), bv.cols()));
  }
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const std::size_t ia = a.id(), ib = b.id();
  const Index ca = av.cols(), cb = bv.cols();
  return t.record(std::move(out), {ia, ib}, [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.leftCols(ca));
    tp.accumulate(ib, g.rightCols(cb));
  });
}

Var concat_rows(Var a, Var b) {
  const std::array<Var, 2> parts{a, b};
  return concat_rows(std::span<const Var>(parts));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_rows: operands recorded on different tapes");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column counts differ " + shape_string(parts.front().rows(), cols) + " vs " +
                           shape_string(p.rows(), p.cols()));
    }
    ids.push_back(p.id());
    offsets.push_back(rows);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  std::vector<std::size_t> inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.needs_grad(ids[i])) tp.accumulate(ids[i], g.middleRows(offsets[i], tp.value(ids[i]).rows()));
    }
  });
}

Var slice_rows(Var x, Index start, Index count) {
  const Matrix& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_string(xv.rows(), xv.cols()));
  }
  const std::size_t ix = x.id();
  const Index r = xv.rows(), c = xv.cols();
  return x.tape()->record(xv.middleRows(start, count), {ix}, [ix, r, c, start, count](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(r, c);
    dx.middleRows(start, count) = g;
    tp.accumulate(ix, dx);
  });
}

Var slice_cols(Var x, Index start, Index count) {
  const Matrix& xv = x.value();
  if (start < 0 || count < 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_string(xv.rows(), xv.cols()));
  }
  const std::size_t ix = x.id();
  const Index r = xv.rows(), c = xv.cols();
  return x.tape()->record(xv.middleCols(start, count), {ix}, [ix, r, c, start, count](Tape& tp, const Matrix& g) {
    Matrix dx = Matrix::Zero(r, c);
    dx.middleCols(start, count) = g;
    tp.accumulate(ix, dx);
  });
}

Var gather_rows(Var table, std::span<const Index> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  const std::size_t it = table.id();
  std::vector<Index> rows(ids.begin(), ids.end());
  const Index r = tv.rows();
  return table.tape()->record(std::move(out), {it}, [it, r, rows = std::move(rows)](Tape& tp, const Matrix& g) {
    Matrix dt = Matrix::Zero(r, g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) dt.row(rows[i]) += g.row(static_cast<Index>(i));
    tp.accumulate(it, dt);
  });
}

Var cross_entropy_rows(Var logits, std::span<const Index> targets, Index ignore_id) {
  const Matrix& lv = logits.value();
  if (static_cast<Index>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(lv.rows()) + " rows");
  }
  Matrix probs = softmax_rows_value(lv);
  Scalar total = 0.0;
  Index counted = 0;
  for (Index i = 0; i < lv.rows(); ++i) {
    const Index tgt = targets[static_cast<std::size_t>(i)];
    if (tgt == ignore_id) continue;
    if (tgt < 0 || tgt >= lv.cols()) {
      throw DimensionError("cross_entropy_rows: target " + std::to_string(tgt) + " outside " +
                           std::to_string(lv.cols()) + " classes");
    }
    const Scalar m = lv.row(i).maxCoeff();
    const Scalar lse = m + std::log((lv.row(i).array() - m).exp().sum());
    total += lse - lv(i, tgt);
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy_rows: every target position is ignored");
  Matrix loss(1, 1);
  loss(0, 0) = total / static_cast<Scalar>(counted);
  const std::size_t il = logits.id();
  std::vector<Index> tg(targets.begin(), targets.end());
  return logits.tape()->record(
      std::move(loss), {il},
      [il, ignore_id, counted, probs = std::move(probs), tg = std::move(tg)](Tape& tp, const Matrix& g) {
        Matrix d = probs;
        for (Index i = 0; i < d.rows(); ++i) {
          const Index tgt = tg[static_cast<std::size_t>(i)];
          if (tgt == ignore_id) {
            d.row(i).setZero();
          } else {
            d(i, tgt) -= 1.0;
          }
        }
        tp.accumulate(il, d * (g(0, 0) / static_cast<Scalar>(counted)));
      });
}

}  // namespace signclip
