#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace lace {

/// Element geometry as canvas-relative ratios: center (cx, cy), size (w, h).
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const Box&, const Box&) = default;
};

/// The six alignment coordinates of a box, in the fixed order
/// left, x-center, right, top, y-center, bottom.
struct BoxEdges {
  double left = 0.0;
  double x_center = 0.0;
  double right = 0.0;
  double top = 0.0;
  double y_center = 0.0;
  double bottom = 0.0;

  double operator[](int type) const;
  friend bool operator==(const BoxEdges&, const BoxEdges&) = default;
};

inline constexpr int kNumAlignTypes = 6;
inline constexpr std::array<const char*, kNumAlignTypes> kAlignTypeNames = {
    "L", "XC", "R", "T", "YC", "B"};

BoxEdges box_to_edges(const Box& box);
Box edges_to_box(const BoxEdges& edges);

/// Coefficients of edge `type` as a linear function of (cx, cy, w, h).
std::array<double, 4> edge_coefficients(int type);

struct Element {
  int label = 0;
  Box box;

  friend bool operator==(const Element&, const Element&) = default;
};

struct Canvas {
  int width = 1;
  int height = 1;

  friend bool operator==(const Canvas&, const Canvas&) = default;
};

/// Dataset-level shape: N real classes (padding uses label N) and the padded
/// sequence length L.
struct LayoutShape {
  int num_classes = 5;
  int max_len = 25;

  int padding_label() const { return num_classes; }
  int state_dim() const { return num_classes + 5; }
  int geom_col() const { return num_classes + 1; }

  friend bool operator==(const LayoutShape&, const LayoutShape&) = default;
};

/// A padded layout: exactly L elements, real ones first, padding after.
class Layout {
 public:
  Layout() = default;

  /// Pads `real` out to shape.max_len. Throws on too many elements or a bad
  /// label. Boxes of real elements are validated against `eps_geom` unless it
  /// is negative (permissive ingestion).
  static Layout from_elements(const LayoutShape& shape, Canvas canvas,
                              std::vector<Element> real, double eps_geom = 0.0);

  const LayoutShape& shape() const { return shape_; }
  const Canvas& canvas() const { return canvas_; }
  const std::vector<Element>& elements() const { return elements_; }
  int n_real() const { return n_real_; }
  int max_len() const { return shape_.max_len; }

  const Element& operator[](int i) const { return elements_[static_cast<size_t>(i)]; }

  /// Geometry of the first n_real rows, one (cx, cy, w, h) row per element.
  Eigen::MatrixX4d real_boxes() const;
  /// Geometry of all L rows.
  Eigen::MatrixX4d all_boxes() const;
  std::vector<int> real_labels() const;

  friend bool operator==(const Layout&, const Layout&) = default;

 private:
  LayoutShape shape_;
  Canvas canvas_;
  std::vector<Element> elements_;
  int n_real_ = 0;
};

/// Continuous diffusion state: L rows of (N+1 label logits, cx, cy, w, h).
struct StateVector {
  Eigen::MatrixXd values;
  int timestep = 0;
};

StateVector encode_layout(const Layout& layout);

/// Argmax label decoding (ties to the lowest index), padding compaction and
/// box clamping to [0, 1]. Total: never throws for a correctly shaped state.
Layout decode_layout(const StateVector& state, const LayoutShape& shape,
                     Canvas canvas);

/// Extracts the L x 4 geometry block from state values.
Eigen::MatrixX4d state_boxes(const Eigen::MatrixXd& values,
                             const LayoutShape& shape);

nlohmann::json layout_to_json(const Layout& layout);
Layout layout_from_json(const nlohmann::json& j, const LayoutShape& shape,
                        double eps_geom = 0.0);

}  // namespace lace
