#include "lace/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lace/error.hpp"

namespace lace {

namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

double edge(const Eigen::MatrixX4d& boxes, int i, int type) {
  const auto c = edge_coefficients(type);
  return c[0] * boxes(i, 0) + c[1] * boxes(i, 1) + c[2] * boxes(i, 2) + c[3] * boxes(i, 3);
}

void add_edge_grad(Eigen::MatrixX4d& grad, int i, int type, double g) {
  const auto c = edge_coefficients(type);
  for (int k = 0; k < 4; ++k) grad(i, k) += c[k] * g;
}

void check_n(const Eigen::MatrixX4d& boxes, int n_real) {
  if (n_real < 0 || n_real > boxes.rows()) {
    throw Error(ErrorCode::kOutOfRange, "n_real outside [0, rows]");
  }
}

}  // namespace

double AlignmentMask::count() const {
  double total = 0.0;
  for (const auto& m : pairs) total += m.sum();
  return total;
}

ConstraintReport local_alignment_loss(const Eigen::MatrixX4d& boxes, int n_real) {
  check_n(boxes, n_real);
  ConstraintReport report{0.0, Eigen::MatrixX4d::Zero(boxes.rows(), 4)};
  if (n_real < 2) return report;

  for (int i = 0; i < n_real; ++i) {
    double best_gap = std::numeric_limits<double>::infinity();
    int best_type = 0;
    int best_j = -1;
    for (int type = 0; type < kNumAlignTypes; ++type) {
      const double ei = edge(boxes, i, type);
      for (int j = 0; j < n_real; ++j) {
        if (j == i) continue;
        const double gap = std::abs(ei - edge(boxes, j, type));
        if (gap < best_gap) {
          best_gap = gap;
          best_type = type;
          best_j = j;
        }
      }
    }
    const double x = std::min(best_gap, kAlignClampMax);
    report.value += -std::log1p(-x);
    if (best_gap < kAlignClampMax) {
      const double dg = 1.0 / (1.0 - x);
      const double s = sign(edge(boxes, i, best_type) - edge(boxes, best_j, best_type));
      add_edge_grad(report.grad, i, best_type, dg * s);
      add_edge_grad(report.grad, best_j, best_type, -dg * s);
    }
  }
  return report;
}

AlignmentMask exact_alignment_mask(const Eigen::MatrixX4d& true_boxes, int n_real) {
  check_n(true_boxes, n_real);
  const auto rows = true_boxes.rows();
  AlignmentMask mask;
  for (int type = 0; type < kNumAlignTypes; ++type) {
    Eigen::MatrixXd& m = mask.pairs[static_cast<size_t>(type)];
    m = Eigen::MatrixXd::Zero(rows, rows);
    for (int i = 0; i < n_real; ++i) {
      for (int j = i + 1; j < n_real; ++j) {
        if (std::abs(edge(true_boxes, i, type) - edge(true_boxes, j, type)) <= kExactAlignTol) {
          m(i, j) = m(j, i) = 1.0;
        }
      }
    }
  }
  return mask;
}

ConstraintReport global_alignment_loss(const Eigen::MatrixX4d& pred, const AlignmentMask& mask) {
  if (mask.size() != pred.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "alignment mask size does not match the boxes");
  }
  const auto rows = pred.rows();
  ConstraintReport report{0.0, Eigen::MatrixX4d::Zero(rows, 4)};
  // d s / d box, accumulated before the outer -log(1 - s)
  Eigen::MatrixX4d ds = Eigen::MatrixX4d::Zero(rows, 4);
  double s = 0.0;
  for (int type = 0; type < kNumAlignTypes; ++type) {
    const Eigen::MatrixXd& m = mask.pairs[static_cast<size_t>(type)];
    const double norm = m.sum();
    if (norm == 0.0) continue;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < rows; ++j) {
        if (m(i, j) == 0.0) continue;
        const double d = edge(pred, static_cast<int>(i), type) - edge(pred, static_cast<int>(j), type);
        acc += m(i, j) * std::abs(d);
        const double g = m(i, j) * sign(d) / (norm * kNumAlignTypes);
        add_edge_grad(ds, static_cast<int>(i), type, g);
        add_edge_grad(ds, static_cast<int>(j), type, -g);
      }
    }
    s += acc / norm / kNumAlignTypes;
  }
  const double x = std::clamp(s, 0.0, kAlignClampMax);
  report.value = -std::log1p(-x);
  if (s < kAlignClampMax) report.grad = ds / (1.0 - x);
  return report;
}

ConstraintReport global_alignment_loss(const Eigen::MatrixX4d& pred_boxes,
                                       const Eigen::MatrixX4d& true_boxes, int n_real) {
  if (pred_boxes.rows() != true_boxes.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "predicted and true layouts differ in length");
  }
  return global_alignment_loss(pred_boxes, exact_alignment_mask(true_boxes, n_real));
}

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                                      std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                                      std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = ix * iy;
  const double uni = std::max(a.w, 0.0) * std::max(a.h, 0.0) +
                     std::max(b.w, 0.0) * std::max(b.h, 0.0) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

ConstraintReport overlap_loss(const Eigen::MatrixX4d& boxes, int n_real) {
  check_n(boxes, n_real);
  ConstraintReport report{0.0, Eigen::MatrixX4d::Zero(boxes.rows(), 4)};
  if (n_real < 2) return report;
  // each unordered pair stands for the two symmetric ordered pairs
  const double pair_weight = 2.0 / (static_cast<double>(n_real) * (n_real - 1));
  Eigen::MatrixX4d& grad = report.grad;

  for (int i = 0; i < n_real; ++i) {
    for (int j = i + 1; j < n_real; ++j) {
      const double li = boxes(i, 0) - boxes(i, 2) / 2, ri = boxes(i, 0) + boxes(i, 2) / 2;
      const double ti = boxes(i, 1) - boxes(i, 3) / 2, bi = boxes(i, 1) + boxes(i, 3) / 2;
      const double lj = boxes(j, 0) - boxes(j, 2) / 2, rj = boxes(j, 0) + boxes(j, 2) / 2;
      const double tj = boxes(j, 1) - boxes(j, 3) / 2, bj = boxes(j, 1) + boxes(j, 3) / 2;
      const double ix = std::min(ri, rj) - std::max(li, lj);
      const double iy = std::min(bi, bj) - std::max(ti, tj);
      if (ix <= 0.0 || iy <= 0.0) continue;

      const double wi = std::max(boxes(i, 2), 0.0), hi = std::max(boxes(i, 3), 0.0);
      const double wj = std::max(boxes(j, 2), 0.0), hj = std::max(boxes(j, 3), 0.0);
      const double inter = ix * iy;
      const double uni = wi * hi + wj * hj - inter;
      if (uni <= 0.0) continue;
      const double iou = inter / uni;

      const double dx = boxes(i, 0) - boxes(j, 0), dy = boxes(i, 1) - boxes(j, 1);
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double d = std::exp(-dist);
      report.value += pair_weight * (iou + d);

      // IoU partials through intersection and the two areas
      const double d_inter = pair_weight * (uni + inter) / (uni * uni);
      const double d_area = -pair_weight * inter / (uni * uni);
      const double d_ix = d_inter * iy, d_iy = d_inter * ix;
      // ix = min(r) - max(l); ties resolved towards i
      const int rx = ri <= rj ? i : j, lx = li >= lj ? i : j;
      const int by = bi <= bj ? i : j, ty = ti >= tj ? i : j;
      grad(rx, 0) += d_ix;  grad(rx, 2) += 0.5 * d_ix;
      grad(lx, 0) -= d_ix;  grad(lx, 2) += 0.5 * d_ix;
      grad(by, 1) += d_iy;  grad(by, 3) += 0.5 * d_iy;
      grad(ty, 1) -= d_iy;  grad(ty, 3) += 0.5 * d_iy;
      if (boxes(i, 2) > 0.0) grad(i, 2) += d_area * hi;
      if (boxes(i, 3) > 0.0) grad(i, 3) += d_area * wi;
      if (boxes(j, 2) > 0.0) grad(j, 2) += d_area * hj;
      if (boxes(j, 3) > 0.0) grad(j, 3) += d_area * wj;

      if (dist > 0.0) {
        const double g = -pair_weight * d / dist;
        grad(i, 0) += g * dx;  grad(i, 1) += g * dy;
        grad(j, 0) -= g * dx;  grad(j, 1) -= g * dy;
      }
    }
  }
  return report;
}

double constraint_weight(int t, const ConstraintWeightSchedule& s) {
  if (t < 0 || t > s.steps) throw Error(ErrorCode::kOutOfRange, "constraint weight step out of range");
  const int exponent = s.orientation == WeightOrientation::kSmallTActive ? s.steps - t : t;
  return 1.0 - std::pow(1.0 - s.beta_w, exponent);
}

int weight_crossing_step(double target, const ConstraintWeightSchedule& s) {
  if (!(target > 0.0 && target < 1.0) || !(s.beta_w > 0.0 && s.beta_w < 1.0)) {
    throw Error(ErrorCode::kConfig, "weight crossing needs target and beta_w in (0, 1)");
  }
  const double span = std::log1p(-target) / std::log1p(-s.beta_w);
  const double root = s.orientation == WeightOrientation::kSmallTActive ? s.steps - span : span;
  if (root < 0.0 || root > s.steps) {
    throw Error(ErrorCode::kConfig, "constraint weight never reaches the requested value");
  }
  return static_cast<int>(std::lround(root));
}

WeightOrientation parse_orientation(const std::string& name) {
  if (name == "small-t-active") return WeightOrientation::kSmallTActive;
  if (name == "large-t-active") return WeightOrientation::kLargeTActive;
  throw Error(ErrorCode::kInvalidArgument, "unknown constraint orientation '" + name + "'");
}

std::string orientation_name(WeightOrientation o) {
  return o == WeightOrientation::kSmallTActive ? "small-t-active" : "large-t-active";
}

}  // namespace lace
