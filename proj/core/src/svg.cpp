#include "lace/svg.hpp"

#include <algorithm>
#include <cstdio>

namespace lace {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_svg(const Layout& layout, const SvgStyle& style) {
  const double W = layout.canvas().width, H = layout.canvas().height;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(layout.canvas().width) +
         "\" height=\"" + std::to_string(layout.canvas().height) + "\" viewBox=\"0 0 " +
         std::to_string(layout.canvas().width) + " " + std::to_string(layout.canvas().height) + "\">\n";
  out += "  <rect x=\"0\" y=\"0\" width=\"" + std::to_string(layout.canvas().width) + "\" height=\"" +
         std::to_string(layout.canvas().height) + "\" fill=\"" + style.background + "\"/>\n";
  for (int i = 0; i < layout.n_real(); ++i) {
    const Element& e = layout[i];
    const auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
    const double x0 = clamp01(e.box.cx - e.box.w / 2), x1 = clamp01(e.box.cx + e.box.w / 2);
    const double y0 = clamp01(e.box.cy - e.box.h / 2), y1 = clamp01(e.box.cy + e.box.h / 2);
    const std::string& color =
        style.palette.empty() ? std::string("#888888")
                              : style.palette[static_cast<size_t>(e.label) % style.palette.size()];
    const std::string name = static_cast<size_t>(e.label) < style.label_names.size()
                                 ? style.label_names[static_cast<size_t>(e.label)]
                                 : "class " + std::to_string(e.label);
    out += "  <rect x=\"" + fmt(x0 * W) + "\" y=\"" + fmt(y0 * H) + "\" width=\"" + fmt((x1 - x0) * W) +
           "\" height=\"" + fmt((y1 - y0) * H) + "\" fill=\"" + color + "\" fill-opacity=\"" +
           fmt(style.fill_opacity) + "\" stroke=\"" + color + "\" stroke-width=\"" +
           fmt(style.stroke_width) + "\"><title>" + name + "</title></rect>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace lace
