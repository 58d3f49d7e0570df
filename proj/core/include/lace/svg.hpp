#pragma once

#include <string>
#include <vector>

#include "lace/layout.hpp"

namespace lace {

struct SvgStyle {
  std::vector<std::string> palette = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                      "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  std::vector<std::string> label_names;  // optional, used for <title>
  double fill_opacity = 0.5;
  double stroke_width = 2.0;
  std::string background = "#ffffff";
};

/// One rect per real element on a (0, 0, W, H) viewBox. Boxes are clamped to
/// the unit canvas first. Output is byte-deterministic.
std::string render_svg(const Layout& layout, const SvgStyle& style = {});

}  // namespace lace
