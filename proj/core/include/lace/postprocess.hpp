#pragma once

#include <Eigen/Core>

#include "lace/constraints.hpp"
#include "lace/layout.hpp"

namespace lace {

struct PostConfig {
  double delta = 1.0 / 64.0;
  int max_iters = 200;
  /// Largest per-iteration coordinate move; <= 0 selects 0.1 * delta.
  double step_size = 0.0;
  bool use_overlap = false;
  double tolerance = 1e-7;
  /// Total displacement bound per coordinate, as a multiple of delta.
  double max_shift_deltas = 2.0;

  void validate() const;
  double effective_step() const { return step_size > 0.0 ? step_size : 0.1 * delta; }
};

/// The six alignment coordinates of each real element with x-type values
/// scaled by W / max(W, H) and y-type values by H / max(W, H).
Eigen::MatrixXd scale_canvas_coords(const Eigen::MatrixX4d& boxes, Canvas canvas);

/// Marks real pairs whose scaled coordinate gap is strictly below delta.
/// Sized to the layout's padded length.
AlignmentMask infer_alignment_mask(const Layout& layout, double delta);

struct PostResult {
  Layout layout;
  int iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool aborted = false;  // non-finite gradient; layout is the input
};

/// Projected descent on geometry only: labels and element count are fixed.
/// The objective is the masked global alignment loss (plus overlap when
/// enabled); accepted steps strictly decrease it.
PostResult optimize_layout(const Layout& layout, const AlignmentMask& mask, const PostConfig& config);

/// infer_alignment_mask followed by optimize_layout.
PostResult postprocess_layout(const Layout& layout, const PostConfig& config);

}  // namespace lace
