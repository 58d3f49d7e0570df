#include "lace/corpus.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lace/constraints.hpp"
#include "lace/error.hpp"
#include "lace/io_util.hpp"
#include "lace/rng.hpp"

namespace lace {

CorpusStats compute_stats(const std::vector<Layout>& layouts) {
  CorpusStats stats;
  stats.count = static_cast<int>(layouts.size());
  for (const Layout& layout : layouts) {
    ++stats.length_histogram[layout.n_real()];
    for (int i = 0; i < layout.n_real(); ++i) ++stats.class_histogram[layout[i].label];
  }
  return stats;
}

Corpus ingest_text(const std::string& text, const CorpusSpec& spec) {
  Corpus corpus;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int dropped = 0, skipped = 0;
  std::vector<std::string> log;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      ++skipped;
      log.push_back("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
      continue;
    }
    try {
      Layout layout = layout_from_json(j, spec.shape, spec.eps_geom);
      if (layout.n_real() < 1) throw Error(ErrorCode::kOutOfRange, "layout has no elements");
      corpus.layouts.push_back(std::move(layout));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kParse) {
        ++skipped;
        log.push_back("line " + std::to_string(line_no) + ": malformed layout (" + e.what() + ")");
        continue;
      }
      ++dropped;
      log.push_back("line " + std::to_string(line_no) + ": dropped (" +
                    std::string(error_code_name(e.code())) + "): " + e.what());
    } catch (const nlohmann::json::exception& e) {
      ++skipped;
      log.push_back("line " + std::to_string(line_no) + ": malformed layout (" + e.what() + ")");
    }
  }
  corpus.stats = compute_stats(corpus.layouts);
  corpus.stats.dropped = dropped;
  corpus.stats.skipped = skipped;
  corpus.stats.log = std::move(log);
  if (corpus.layouts.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "corpus is empty after validation (" + std::to_string(line_no) +
                                             " lines read, " + std::to_string(dropped) + " dropped, " +
                                             std::to_string(skipped) + " malformed)");
  }
  return corpus;
}

Corpus ingest(const std::filesystem::path& path, const CorpusSpec& spec) {
  return ingest_text(read_file(path), spec);
}

std::string to_jsonl(const std::vector<Layout>& layouts) {
  std::string out;
  for (const Layout& layout : layouts) {
    out += layout_to_json(layout).dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::vector<Layout>& layouts, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(layouts));
}

void SyntheticGridSpec::validate() const {
  if (columns < 0 || columns > 2) throw Error(ErrorCode::kConfig, "columns must be 1, 2 or 0 (mixed)");
  if (rows_min < 1 || rows_max < rows_min) throw Error(ErrorCode::kConfig, "need 1 <= rows_min <= rows_max");
  if (num_classes < 1) throw Error(ErrorCode::kConfig, "need at least one class");
  const int max_cols = columns == 0 ? 2 : columns;
  if (max_cols * rows_max > max_len) {
    throw Error(ErrorCode::kInfeasible, "grid holds more cells than the maximum layout length");
  }
  if (margin < 0.0 || gutter < 0.0 || row_gap <= 0.0) {
    throw Error(ErrorCode::kConfig, "margin and gutter must be >= 0, row_gap > 0");
  }
  if (2 * margin + (rows_max - 1) * row_gap >= 1.0 || 2 * margin + (max_cols - 1) * gutter >= 1.0) {
    throw Error(ErrorCode::kInfeasible, "margins and gaps leave no room on the canvas");
  }
  if (canvas.width <= 0 || canvas.height <= 0) throw Error(ErrorCode::kConfig, "canvas must be positive");
}

namespace {

int draw_label(Rng& rng, int num_classes, bool first_row) {
  if (num_classes == 5) {
    // text, title, list, table, figure
    if (first_row && rng.uniform() < 0.5) return 1;
    static constexpr double kCdf[] = {0.5, 0.5, 0.65, 0.8, 1.0};
    const double u = rng.uniform();
    for (int c = 0; c < 5; ++c) {
      if (u < kCdf[c]) return c;
    }
    return 4;
  }
  return rng.uniform_int(0, num_classes - 1);
}

}  // namespace

std::vector<Layout> generate_synthetic(const SyntheticGridSpec& spec, int count) {
  spec.validate();
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "count must be non-negative");
  const LayoutShape shape{spec.num_classes, spec.max_len};
  Rng rng(spec.seed);
  std::vector<Layout> layouts;
  layouts.reserve(static_cast<size_t>(count));
  for (int k = 0; k < count; ++k) {
    const int cols = spec.columns == 0 ? rng.uniform_int(1, 2) : spec.columns;
    const int rows = rng.uniform_int(spec.rows_min, spec.rows_max);
    const double col_w = (1.0 - 2 * spec.margin - (cols - 1) * spec.gutter) / cols;
    const double usable_h = 1.0 - 2 * spec.margin - (rows - 1) * spec.row_gap;
    std::vector<double> weights(static_cast<size_t>(rows));
    double total = 0.0;
    for (double& w : weights) total += (w = rng.uniform(1.0, 3.0));

    std::vector<Element> elements;
    double top = spec.margin;
    for (int r = 0; r < rows; ++r) {
      const double h = usable_h * weights[static_cast<size_t>(r)] / total;
      for (int c = 0; c < cols; ++c) {
        const double left = spec.margin + c * (col_w + spec.gutter);
        elements.push_back({draw_label(rng, spec.num_classes, r == 0),
                            Box{left + col_w / 2, top + h / 2, col_w, h}});
      }
      top += h + spec.row_gap;
    }
    Layout layout = Layout::from_elements(shape, spec.canvas, std::move(elements), 1e-12);
    const Eigen::MatrixX4d boxes = layout.real_boxes();
    if (local_alignment_loss(boxes, layout.n_real()).value != 0.0 ||
        overlap_loss(boxes, layout.n_real()).value != 0.0) {
      throw Error(ErrorCode::kInfeasible, "synthetic grid violated its alignment/overlap guarantee");
    }
    layouts.push_back(std::move(layout));
  }
  return layouts;
}

}  // namespace lace
