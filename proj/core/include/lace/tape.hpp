#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace lace::ad {

using Matrix = Eigen::MatrixXd;

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  std::uint64_t tape = 0;
};

/// Records one forward pass over matrix-valued operations and replays it in
/// reverse. A tape is single-use: backward() may run once.
class Tape {
 public:
  Tape();

  Var constant(Matrix value);
  /// A value whose gradient is wanted after backward().
  Var leaf(Matrix value);

  const Matrix& value(Var v) const;
  /// Gradient after backward(); a zero matrix for leaves the output does not
  /// depend on.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const;

  void backward(Var output, const Matrix& seed);
  bool consumed() const { return consumed_; }
  std::uint64_t id() const { return id_; }
  size_t size() const { return nodes_.size(); }

  // ---- operations ----
  Var add(Var a, Var b);
  /// x + row, with `row` a 1 x cols vector broadcast over x's rows.
  Var add_row(Var x, Var row);
  Var matmul(Var a, Var b);
  /// x W + b with b a 1 x out row vector.
  Var affine(Var x, Var w, Var b);
  Var silu(Var x);
  /// Row-wise normalization to zero mean and unit variance (no affine part).
  Var layer_norm(Var x, double eps = 1e-5);
  /// (1 + scale[item]) o x + shift[item] where rows are grouped into items of
  /// `rows_per_item` consecutive rows; scale and shift have one row per item.
  Var modulate(Var x, Var scale, Var shift, int rows_per_item);
  /// Multi-head softmax attention without a causal mask, applied
  /// independently to every item of `seq` consecutive rows.
  Var attention(Var q, Var k, Var v, int seq, int heads);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix value, bool requires_grad);
  Node& node(Var v);
  const Node& node(Var v) const;
  /// Adds `g` into the gradient of v (allocating on first use).
  void accumulate(Var v, const Matrix& g);
  Matrix& grad_ref(Var v);

  std::vector<Node> nodes_;
  std::uint64_t id_;
  bool consumed_ = false;
};

}  // namespace lace::ad
