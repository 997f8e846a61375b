#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace signclip {

using Scalar = double;
using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
std::string shape_string(Index rows, Index cols);

/// Dense row-major tensor of rank 1..3.
///
/// Storage is a matrix view with `shape[0]` rows and `product(shape[1:])`
/// columns, so a [d_out, d, k] kernel bank is held as d_out x (d*k) and a
/// rank-1 vector of length n as n x 1. The flat data is always the row-major
/// order of the full shape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Matrix values, bool requires_grad = false);
  explicit Tensor(Matrix values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  Index numel() const { return values_.size(); }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

  const Matrix& value() const { return values_; }
  /// Mutable access for initialisation and optimiser updates. Must not change
  /// the storage dimensions.
  Matrix& mutable_value() { return values_; }
  std::span<const Scalar> data() const { return {values_.data(), static_cast<std::size_t>(values_.size())}; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  /// Gradient store; zero-filled on first access.
  const Matrix& grad();
  void zero_grad();
  void accumulate_grad(const Matrix& g);

  /// FNV-1a over the raw bytes of the values; used to prove frozen weights
  /// stay untouched.
  std::uint64_t checksum() const;

 private:
  Shape shape_;
  Matrix values_;
  bool requires_grad_ = false;
  std::optional<Matrix> grad_;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid for the lifetime
/// of its tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const;
  /// Gradient after Tape::backward; zeros if the node was not reached.
  Matrix grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records differentiable operations in execution order. Since every node is
/// appended after its inputs, the record is already topologically sorted and
/// backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  /// With `record_gradients` false every leaf is treated as a constant, so
  /// no backward closures are kept (evaluation mode).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a leaf. If `t.requires_grad()`, backward accumulates into
  /// `t`'s gradient store (which must outlive the tape).
  Var leaf(Tensor& t);
  Var constant(Matrix value);

  Var record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Reverse sweep from a 1x1 node. Every requires_grad leaf on this tape
  /// receives `+= dloss/dleaf`, zeros when unreachable.
  void backward(Var loss);

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  Matrix grad(std::size_t id) const;
  /// Adds `g` into node `id`'s gradient if it participates in backward.
  void accumulate(std::size_t id, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Tensor* leaf = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool record_gradients_ = true;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Binary operations require both operands to live
// on the same tape.

enum class SoftmaxMask { none, causal };

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar c);
Var add_scalar(Var a, Scalar c);
/// a[m x n] + row[1 x n] broadcast over rows.
Var add_row(Var a, Var row);

Var sigmoid(Var a);
Var relu(Var a);
Var tanh(Var a);

Var softmax_rows(Var x, SoftmaxMask mask = SoftmaxMask::none);
Var log_softmax_rows(Var x);
/// Zero-mean, unit-variance normalisation of each row (no affine terms).
Var layer_norm_rows(Var x, Scalar eps = 1e-5);
/// Divides each row by its Euclidean norm; throws DegenerateEmbeddingError on
/// a zero row.
Var l2_normalize_rows(Var x);

/// Same-padded cross-correlation along time. `x` is d x T, `kernels` is the
/// d_out x (d * width) storage of a [d_out, d, width] bank.
Var conv1d(Var x, Var kernels, Index width);

Var mean_rows(Var x);  // T x d -> 1 x d
Var sum(Var x);        // -> 1 x 1
Var mean(Var x);       // -> 1 x 1
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, Index start, Index count);
Var slice_cols(Var x, Index start, Index count);
Var gather_rows(Var table, std::span<const Index> ids);

/// Mean token cross-entropy of `logits` (rows) against `targets`; positions
/// whose target equals `ignore_id` are excluded from numerator and
/// denominator. Throws ContractError when every position is ignored.
Var cross_entropy_rows(Var logits, std::span<const Index> targets, Index ignore_id = -1);

// Non-differentiable numerics shared by ops and tests.
Scalar stable_sigmoid(Scalar x);
Matrix softmax_rows_value(const Matrix& x);

}  // namespace signclip
