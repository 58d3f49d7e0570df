#include "lace/tape.hpp"

#include <atomic>
#include <cmath>

#include "lace/error.hpp"

namespace lace::ad {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Var Tape::push(Matrix value, bool requires_grad) {
  if (consumed_) throw Error(ErrorCode::kStaleTape, "tape already replayed; record a new pass");
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1, id_};
}

Tape::Node& Tape::node(Var v) {
  if (v.tape != id_ || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorCode::kStaleTape, "variable does not belong to this tape");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != id_ || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorCode::kStaleTape, "variable does not belong to this tape");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }
Var Tape::leaf(Matrix value) { return push(std::move(value), true); }

const Matrix& Tape::value(Var v) const { return node(v).value; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_ref(Var v) {
  Node& n = node(v);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!node(v).requires_grad) return;
  grad_ref(v) += g;
}

void Tape::backward(Var output, const Matrix& seed) {
  if (consumed_) throw Error(ErrorCode::kStaleTape, "backward() already ran on this tape");
  Node& out = node(output);
  if (seed.rows() != out.value.rows() || seed.cols() != out.value.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "backward seed shape does not match the output");
  }
  consumed_ = true;
  if (!out.requires_grad) return;
  grad_ref(output) = seed;
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw Error(ErrorCode::kShapeMismatch, "add: shape mismatch");
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out = push(value(a) + value(b), rg);
  if (rg) {
    node(out).backward = [this, a, b, out] {
      const Matrix& g = node(out).grad;
      accumulate(a, g);
      accumulate(b, g);
    };
  }
  return out;
}

Var Tape::add_row(Var x, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(x).cols()) {
    throw Error(ErrorCode::kShapeMismatch, "add_row: row vector shape mismatch");
  }
  const bool rg = requires_grad(x) || requires_grad(row);
  Var out = push(value(x).rowwise() + value(row).row(0), rg);
  if (rg) {
    node(out).backward = [this, x, row, out] {
      const Matrix& g = node(out).grad;
      accumulate(x, g);
      if (requires_grad(row)) grad_ref(row) += g.colwise().sum();
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) throw Error(ErrorCode::kShapeMismatch, "matmul: inner dims");
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out = push(value(a) * value(b), rg);
  if (rg) {
    node(out).backward = [this, a, b, out] {
      const Matrix& g = node(out).grad;
      if (requires_grad(a)) grad_ref(a).noalias() += g * value(b).transpose();
      if (requires_grad(b)) grad_ref(b).noalias() += value(a).transpose() * g;
    };
  }
  return out;
}

Var Tape::affine(Var x, Var w, Var b) {
  if (value(x).cols() != value(w).rows() || value(b).rows() != 1 ||
      value(b).cols() != value(w).cols()) {
    throw Error(ErrorCode::kShapeMismatch, "affine: shape mismatch");
  }
  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  Matrix y = value(x) * value(w);
  y.rowwise() += value(b).row(0);
  Var out = push(std::move(y), rg);
  if (rg) {
    node(out).backward = [this, x, w, b, out] {
      const Matrix& g = node(out).grad;
      if (requires_grad(x)) grad_ref(x).noalias() += g * value(w).transpose();
      if (requires_grad(w)) grad_ref(w).noalias() += value(x).transpose() * g;
      if (requires_grad(b)) grad_ref(b) += g.colwise().sum();
    };
  }
  return out;
}

Var Tape::silu(Var x) {
  const bool rg = requires_grad(x);
  Matrix s = sigmoid(value(x));
  Var out = push(value(x).cwiseProduct(s), rg);
  if (rg) {
    node(out).backward = [this, x, out, s = std::move(s)] {
      const auto xa = value(x).array();
      const auto sa = s.array();
      grad_ref(x).array() += node(out).grad.array() * sa * (1.0 + xa * (1.0 - sa));
    };
  }
  return out;
}

Var Tape::layer_norm(Var x, double eps) {
  const Matrix& xv = value(x);
  const auto cols = static_cast<double>(xv.cols());
  Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / cols) + eps).sqrt().inverse();
  Matrix y = centered.array().colwise() * inv_std.array();
  const bool rg = requires_grad(x);
  Var out = push(y, rg);
  if (rg) {
    node(out).backward = [this, x, out, y = std::move(y), inv_std = std::move(inv_std), cols] {
      const Matrix& g = node(out).grad;
      Eigen::VectorXd g_mean = g.rowwise().sum() / cols;
      Eigen::VectorXd gy_mean = g.cwiseProduct(y).rowwise().sum() / cols;
      Matrix dx = g;
      dx.colwise() -= g_mean;
      dx.array() -= y.array().colwise() * gy_mean.array();
      grad_ref(x) += (dx.array().colwise() * inv_std.array()).matrix();
    };
  }
  return out;
}

Var Tape::modulate(Var x, Var scale, Var shift, int rows_per_item) {
  const Matrix& xv = value(x);
  const Matrix& sv = value(scale);
  const Matrix& hv = value(shift);
  const Eigen::Index items = sv.rows();
  if (rows_per_item < 1 || xv.rows() != items * rows_per_item || hv.rows() != items ||
      sv.cols() != xv.cols() || hv.cols() != xv.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "modulate: shape mismatch");
  }
  Matrix y(xv.rows(), xv.cols());
  for (Eigen::Index b = 0; b < items; ++b) {
    auto block = xv.middleRows(b * rows_per_item, rows_per_item);
    y.middleRows(b * rows_per_item, rows_per_item) =
        (block.array().rowwise() * (1.0 + sv.row(b).array())).rowwise() + hv.row(b).array();
  }
  const bool rg = requires_grad(x) || requires_grad(scale) || requires_grad(shift);
  Var out = push(std::move(y), rg);
  if (rg) {
    node(out).backward = [this, x, scale, shift, out, rows_per_item, items] {
      const Matrix& g = node(out).grad;
      const Matrix& xv = value(x);
      const Matrix& sv = value(scale);
      for (Eigen::Index b = 0; b < items; ++b) {
        auto gb = g.middleRows(b * rows_per_item, rows_per_item);
        if (requires_grad(x)) {
          grad_ref(x).middleRows(b * rows_per_item, rows_per_item).array() +=
              gb.array().rowwise() * (1.0 + sv.row(b).array());
        }
        if (requires_grad(scale)) {
          grad_ref(scale).row(b) +=
              gb.cwiseProduct(xv.middleRows(b * rows_per_item, rows_per_item)).colwise().sum();
        }
        if (requires_grad(shift)) grad_ref(shift).row(b) += gb.colwise().sum();
      }
    };
  }
  return out;
}

Var Tape::attention(Var q, Var k, Var v, int seq, int heads) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  const Matrix& vv = value(v);
  if (qv.rows() != kv.rows() || qv.rows() != vv.rows() || qv.cols() != kv.cols() ||
      qv.cols() != vv.cols() || seq < 1 || heads < 1 || qv.rows() % seq != 0 ||
      qv.cols() % heads != 0) {
    throw Error(ErrorCode::kShapeMismatch, "attention: shape mismatch");
  }
  const Eigen::Index items = qv.rows() / seq;
  const Eigen::Index dh = qv.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<size_t>(items * heads));
  Matrix y(qv.rows(), qv.cols());
  for (Eigen::Index b = 0; b < items; ++b) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      auto qb = qv.block(b * seq, h * dh, seq, dh);
      auto kb = kv.block(b * seq, h * dh, seq, dh);
      auto vb = vv.block(b * seq, h * dh, seq, dh);
      Matrix s = (qb * kb.transpose()) * scale;
      Eigen::VectorXd row_max = s.rowwise().maxCoeff();
      s = (s.colwise() - row_max).array().exp();
      Eigen::VectorXd row_sum = s.rowwise().sum();
      s = s.array().colwise() / row_sum.array();
      y.block(b * seq, h * dh, seq, dh).noalias() = s * vb;
      probs[static_cast<size_t>(b * heads + h)] = std::move(s);
    }
  }
  const bool rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
  Var out = push(std::move(y), rg);
  if (rg) {
    node(out).backward = [this, q, k, v, out, seq, heads, items, dh, scale,
                          probs = std::move(probs)] {
      const Matrix& g = node(out).grad;
      const Matrix& qv = value(q);
      const Matrix& kv = value(k);
      const Matrix& vv = value(v);
      Matrix* gq = requires_grad(q) ? &grad_ref(q) : nullptr;
      Matrix* gk = requires_grad(k) ? &grad_ref(k) : nullptr;
      Matrix* gv = requires_grad(v) ? &grad_ref(v) : nullptr;
      for (Eigen::Index b = 0; b < items; ++b) {
        for (Eigen::Index h = 0; h < heads; ++h) {
          const Matrix& p = probs[static_cast<size_t>(b * heads + h)];
          auto go = g.block(b * seq, h * dh, seq, dh);
          auto vb = vv.block(b * seq, h * dh, seq, dh);
          if (gv) gv->block(b * seq, h * dh, seq, dh).noalias() += p.transpose() * go;
          Matrix dp = go * vb.transpose();
          Eigen::VectorXd inner = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = (p.array() * (dp.colwise() - inner).array()).matrix() * scale;
          if (gq) gq->block(b * seq, h * dh, seq, dh).noalias() += ds * kv.block(b * seq, h * dh, seq, dh);
          if (gk) gk->block(b * seq, h * dh, seq, dh).noalias() += ds.transpose() * qv.block(b * seq, h * dh, seq, dh);
        }
      }
    };
  }
  return out;
}

}  // namespace lace::ad
