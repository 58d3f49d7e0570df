#pragma once

#include <array>

#include <Eigen/Core>

#include "lace/layout.hpp"

namespace lace {

/// Loss value and d loss / d (cx, cy, w, h) for every input row. Rows past
/// n_real always carry zero gradient.
struct ConstraintReport {
  double value = 0.0;
  Eigen::MatrixX4d grad;
};

/// Per alignment type, a symmetric 0/1 matrix over element pairs. Diagonal
/// and rows/columns of padding elements are zero.
struct AlignmentMask {
  std::array<Eigen::MatrixXd, kNumAlignTypes> pairs;

  int size() const { return static_cast<int>(pairs[0].rows()); }
  double count() const;
};

/// Largest argument passed to g(x) = -log(1 - x).
inline constexpr double kAlignClampMax = 1.0 - 1e-8;

/// Coordinates closer than this in the reference layout count as aligned when
/// building the ground-truth mask.
inline constexpr double kExactAlignTol = 1e-9;

/// Sum over real elements of min over alignment types of g(nearest gap).
ConstraintReport local_alignment_loss(const Eigen::MatrixX4d& boxes, int n_real);

/// Ground-truth mask: pairs whose coordinates coincide in `true_boxes`.
AlignmentMask exact_alignment_mask(const Eigen::MatrixX4d& true_boxes, int n_real);

/// -log(1 - s) where s averages masked coordinate gaps of `pred_boxes` over
/// the six alignment types. Types with an empty mask contribute 0.
ConstraintReport global_alignment_loss(const Eigen::MatrixX4d& pred_boxes,
                                       const AlignmentMask& mask);

ConstraintReport global_alignment_loss(const Eigen::MatrixX4d& pred_boxes,
                                       const Eigen::MatrixX4d& true_boxes, int n_real);

/// Mean over ordered real pairs of IoU plus a center-distance penalty on
/// overlapping pairs.
ConstraintReport overlap_loss(const Eigen::MatrixX4d& boxes, int n_real);

/// Intersection over union of two boxes; 0 when the union is empty.
double box_iou(const Box& a, const Box& b);

enum class WeightOrientation {
  kSmallTActive,  // 1 - (1 - beta_w)^(T - t): largest at t = 0
  kLargeTActive,  // 1 - (1 - beta_w)^t
};

struct ConstraintWeightSchedule {
  // omega_t = 0.1 at t = 24 with T = 1000 (small-t-active).
  double beta_w = 1.08e-4;
  int steps = 1000;
  WeightOrientation orientation = WeightOrientation::kSmallTActive;
};

double constraint_weight(int t, const ConstraintWeightSchedule& schedule);

/// Integer step closest to the root of omega_t = target. Throws when the
/// target is not reached anywhere in [0, T].
int weight_crossing_step(double target, const ConstraintWeightSchedule& schedule);

WeightOrientation parse_orientation(const std::string& name);
std::string orientation_name(WeightOrientation o);

}  // namespace lace
