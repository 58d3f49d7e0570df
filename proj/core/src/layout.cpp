#include "lace/layout.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lace/error.hpp"

namespace lace {

double BoxEdges::operator[](int type) const {
  switch (type) {
    case 0: return left;
    case 1: return x_center;
    case 2: return right;
    case 3: return top;
    case 4: return y_center;
    case 5: return bottom;
  }
  throw Error(ErrorCode::kOutOfRange, "alignment type out of range");
}

BoxEdges box_to_edges(const Box& b) {
  return {b.cx - b.w / 2, b.cx, b.cx + b.w / 2,
          b.cy - b.h / 2, b.cy, b.cy + b.h / 2};
}

Box edges_to_box(const BoxEdges& e) {
  return {e.x_center, e.y_center, e.right - e.left, e.bottom - e.top};
}

std::array<double, 4> edge_coefficients(int type) {
  switch (type) {
    case 0: return {1.0, 0.0, -0.5, 0.0};
    case 1: return {1.0, 0.0, 0.0, 0.0};
    case 2: return {1.0, 0.0, 0.5, 0.0};
    case 3: return {0.0, 1.0, 0.0, -0.5};
    case 4: return {0.0, 1.0, 0.0, 0.0};
    case 5: return {0.0, 1.0, 0.0, 0.5};
  }
  throw Error(ErrorCode::kOutOfRange, "alignment type out of range");
}

namespace {

void validate_box(const Box& b, double eps, size_t index) {
  if (eps < 0) return;
  const double v[4] = {b.cx, b.cy, b.w, b.h};
  bool ok = std::all_of(std::begin(v), std::end(v),
                        [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; });
  ok = ok && b.cx - b.w / 2 >= -eps && b.cx + b.w / 2 <= 1.0 + eps &&
       b.cy - b.h / 2 >= -eps && b.cy + b.h / 2 <= 1.0 + eps;
  if (!ok) {
    std::ostringstream os;
    os << "element " << index << " box (" << b.cx << ", " << b.cy << ", " << b.w
       << ", " << b.h << ") is outside the canvas";
    throw Error(ErrorCode::kOutOfRange, os.str());
  }
}

}  // namespace

Layout Layout::from_elements(const LayoutShape& shape, Canvas canvas,
                             std::vector<Element> real, double eps_geom) {
  if (shape.num_classes < 1 || shape.max_len < 1) {
    throw Error(ErrorCode::kConfig, "layout shape needs num_classes >= 1 and max_len >= 1");
  }
  if (canvas.width <= 0 || canvas.height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "canvas dimensions must be positive");
  }
  if (real.size() > static_cast<size_t>(shape.max_len)) {
    throw Error(ErrorCode::kOutOfRange, "layout has " + std::to_string(real.size()) +
                                            " elements, more than L=" +
                                            std::to_string(shape.max_len));
  }
  for (size_t i = 0; i < real.size(); ++i) {
    const int label = real[i].label;
    if (label < 0 || label >= shape.num_classes) {
      throw Error(ErrorCode::kInvalidLabel,
                  "element " + std::to_string(i) + " has label " + std::to_string(label) +
                      ", expected [0, " + std::to_string(shape.num_classes) + ")");
    }
    validate_box(real[i].box, eps_geom, i);
  }
  Layout layout;
  layout.shape_ = shape;
  layout.canvas_ = canvas;
  layout.n_real_ = static_cast<int>(real.size());
  layout.elements_ = std::move(real);
  layout.elements_.resize(static_cast<size_t>(shape.max_len),
                          Element{shape.padding_label(), Box{}});
  return layout;
}

Eigen::MatrixX4d Layout::real_boxes() const {
  Eigen::MatrixX4d boxes(n_real_, 4);
  for (int i = 0; i < n_real_; ++i) {
    const Box& b = elements_[static_cast<size_t>(i)].box;
    boxes.row(i) << b.cx, b.cy, b.w, b.h;
  }
  return boxes;
}

Eigen::MatrixX4d Layout::all_boxes() const {
  Eigen::MatrixX4d boxes(max_len(), 4);
  for (int i = 0; i < max_len(); ++i) {
    const Box& b = elements_[static_cast<size_t>(i)].box;
    boxes.row(i) << b.cx, b.cy, b.w, b.h;
  }
  return boxes;
}

std::vector<int> Layout::real_labels() const {
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(n_real_));
  for (int i = 0; i < n_real_; ++i) labels.push_back(elements_[static_cast<size_t>(i)].label);
  return labels;
}

StateVector encode_layout(const Layout& layout) {
  const LayoutShape& shape = layout.shape();
  StateVector state{Eigen::MatrixXd::Zero(shape.max_len, shape.state_dim()), 0};
  const int g = shape.geom_col();
  for (int i = 0; i < shape.max_len; ++i) {
    const Element& e = layout[i];
    if (e.label < 0 || e.label > shape.num_classes) {
      throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(e.label) +
                                                " exceeds padding class " +
                                                std::to_string(shape.num_classes));
    }
    state.values(i, e.label) = 1.0;
    if (e.label != shape.padding_label()) {
      state.values.row(i).segment<4>(g) << e.box.cx, e.box.cy, e.box.w, e.box.h;
    }
  }
  return state;
}

Layout decode_layout(const StateVector& state, const LayoutShape& shape, Canvas canvas) {
  if (state.values.rows() != shape.max_len || state.values.cols() != shape.state_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "state shape does not match layout shape");
  }
  const int g = shape.geom_col();
  std::vector<Element> real;
  for (int i = 0; i < shape.max_len; ++i) {
    auto row = state.values.row(i);
    int best = 0;
    for (int c = 1; c <= shape.num_classes; ++c) {
      // strict comparison keeps the lowest index on ties
      if (row(c) > row(best)) best = c;
    }
    if (best == shape.padding_label()) continue;
    auto clamp01 = [](double v) { return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0); };
    real.push_back({best, Box{clamp01(row(g)), clamp01(row(g + 1)), clamp01(row(g + 2)),
                              clamp01(row(g + 3))}});
  }
  return Layout::from_elements(shape, canvas, std::move(real), -1.0);
}

Eigen::MatrixX4d state_boxes(const Eigen::MatrixXd& values, const LayoutShape& shape) {
  return values.middleCols<4>(shape.geom_col());
}

nlohmann::json layout_to_json(const Layout& layout) {
  nlohmann::json elements = nlohmann::json::array();
  for (int i = 0; i < layout.n_real(); ++i) {
    const Element& e = layout[i];
    elements.push_back({{"label", e.label}, {"box", {e.box.cx, e.box.cy, e.box.w, e.box.h}}});
  }
  return {{"canvas", {layout.canvas().width, layout.canvas().height}},
          {"elements", std::move(elements)}};
}

Layout layout_from_json(const nlohmann::json& j, const LayoutShape& shape, double eps_geom) {
  if (!j.is_object() || !j.contains("canvas") || !j.contains("elements")) {
    throw Error(ErrorCode::kParse, "layout object needs \"canvas\" and \"elements\"");
  }
  const auto& c = j.at("canvas");
  if (!c.is_array() || c.size() != 2) {
    throw Error(ErrorCode::kParse, "\"canvas\" must be [W, H]");
  }
  Canvas canvas{c[0].get<int>(), c[1].get<int>()};
  std::vector<Element> real;
  for (const auto& e : j.at("elements")) {
    const auto& b = e.at("box");
    if (!b.is_array() || b.size() != 4) throw Error(ErrorCode::kParse, "\"box\" must have 4 numbers");
    real.push_back({e.at("label").get<int>(),
                    Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                        b[3].get<double>()}});
  }
  return Layout::from_elements(shape, canvas, std::move(real), eps_geom);
}

}  // namespace lace
