#include "lace/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "lace/error.hpp"

namespace lace {

void PostConfig::validate() const {
  if (!(delta > 0.0)) throw Error(ErrorCode::kConfig, "post-processing delta must be positive");
  if (max_iters < 1) throw Error(ErrorCode::kConfig, "post-processing needs max_iters >= 1");
  if (!(max_shift_deltas > 0.0)) throw Error(ErrorCode::kConfig, "max_shift_deltas must be positive");
}

Eigen::MatrixXd scale_canvas_coords(const Eigen::MatrixX4d& boxes, Canvas canvas) {
  if (canvas.width <= 0 || canvas.height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "canvas dimensions must be positive");
  }
  const double longest = std::max(canvas.width, canvas.height);
  const double sx = canvas.width / longest, sy = canvas.height / longest;
  Eigen::MatrixXd out(boxes.rows(), kNumAlignTypes);
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
    const BoxEdges e = box_to_edges({boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)});
    out.row(i) << e.left * sx, e.x_center * sx, e.right * sx, e.top * sy, e.y_center * sy,
        e.bottom * sy;
  }
  return out;
}

AlignmentMask infer_alignment_mask(const Layout& layout, double delta) {
  const int rows = layout.max_len();
  const int n = layout.n_real();
  AlignmentMask mask;
  for (auto& m : mask.pairs) m = Eigen::MatrixXd::Zero(rows, rows);
  if (n < 2) return mask;
  const Eigen::MatrixXd scaled = scale_canvas_coords(layout.real_boxes(), layout.canvas());
  for (int type = 0; type < kNumAlignTypes; ++type) {
    auto& m = mask.pairs[static_cast<size_t>(type)];
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (std::abs(scaled(i, type) - scaled(j, type)) < delta) m(i, j) = m(j, i) = 1.0;
      }
    }
  }
  return mask;
}

namespace {

struct Objective {
  double value;
  Eigen::MatrixX4d grad;
};

Objective evaluate(const Eigen::MatrixX4d& boxes, const AlignmentMask& mask, int n_real,
                   bool use_overlap) {
  ConstraintReport r = global_alignment_loss(boxes, mask);
  if (use_overlap) {
    ConstraintReport o = overlap_loss(boxes, n_real);
    r.value += o.value;
    r.grad += o.grad;
  }
  return {r.value, std::move(r.grad)};
}

}  // namespace

PostResult optimize_layout(const Layout& layout, const AlignmentMask& mask, const PostConfig& config) {
  config.validate();
  if (mask.size() != layout.max_len()) {
    throw Error(ErrorCode::kShapeMismatch, "alignment mask does not match the layout length");
  }
  const int n = layout.n_real();
  const Eigen::MatrixX4d start = layout.all_boxes();
  Eigen::MatrixX4d x = start;
  const double max_shift = config.max_shift_deltas * config.delta;
  const double trust = config.delta / 4.0;
  double eta = std::min(config.effective_step(), trust);

  PostResult result{layout, 0, 0.0, 0.0, false};
  Objective cur = evaluate(x, mask, n, config.use_overlap);
  result.initial_loss = result.final_loss = cur.value;

  bool converged = false;
  for (int it = 0; it < config.max_iters && !converged; ++it) {
    result.iterations = it + 1;
    if (!std::isfinite(cur.value) || !cur.grad.allFinite()) {
      result.layout = layout;
      result.final_loss = result.initial_loss;
      result.aborted = true;
      return result;
    }
    if (n == 0) break;
    const double gmax = cur.grad.topRows(n).cwiseAbs().maxCoeff();
    if (gmax == 0.0) break;

    bool accepted = false;
    while (eta > 1e-12) {
      Eigen::MatrixX4d trial = x;
      trial.topRows(n) -= (eta / gmax) * cur.grad.topRows(n);
      // trust region per iteration and in total, then the unit canvas
      trial.topRows(n) = x.topRows(n) + (trial.topRows(n) - x.topRows(n)).cwiseMax(-trust).cwiseMin(trust);
      trial.topRows(n) = start.topRows(n) +
                         (trial.topRows(n) - start.topRows(n)).cwiseMax(-max_shift).cwiseMin(max_shift);
      trial.topRows(n) = trial.topRows(n).cwiseMax(0.0).cwiseMin(1.0);
      Objective next = evaluate(trial, mask, n, config.use_overlap);
      if (std::isfinite(next.value) && next.value < cur.value) {
        const double change = cur.value - next.value;
        x = std::move(trial);
        cur = std::move(next);
        accepted = true;
        converged = change < config.tolerance;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;
  }

  std::vector<Element> real;
  for (int i = 0; i < n; ++i) {
    real.push_back({layout[i].label, Box{x(i, 0), x(i, 1), x(i, 2), x(i, 3)}});
  }
  result.layout = Layout::from_elements(layout.shape(), layout.canvas(), std::move(real), -1.0);
  result.final_loss = cur.value;
  return result;
}

PostResult postprocess_layout(const Layout& layout, const PostConfig& config) {
  return optimize_layout(layout, infer_alignment_mask(layout, config.delta), config);
}

}  // namespace lace
