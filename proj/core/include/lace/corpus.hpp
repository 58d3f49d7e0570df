#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lace/layout.hpp"

namespace lace {

struct CorpusSpec {
  LayoutShape shape;
  /// Geometry tolerance for ingestion; negative accepts any box.
  double eps_geom = 0.0;
};

struct CorpusStats {
  int count = 0;
  int dropped = 0;  // valid JSON rejected by validation (too long, bad label, ...)
  int skipped = 0;  // malformed lines
  std::map<int, int> class_histogram;
  std::map<int, int> length_histogram;
  std::vector<std::string> log;  // one entry per skipped/dropped line
};

struct Corpus {
  std::vector<Layout> layouts;
  CorpusStats stats;
};

/// Reads newline-delimited layout JSON. Malformed lines are skipped and
/// invalid layouts dropped, each with a logged reason; an empty result
/// throws kEmptyCorpus.
Corpus ingest(const std::filesystem::path& path, const CorpusSpec& spec);
Corpus ingest_text(const std::string& text, const CorpusSpec& spec);

CorpusStats compute_stats(const std::vector<Layout>& layouts);

std::string to_jsonl(const std::vector<Layout>& layouts);
void write_jsonl(const std::vector<Layout>& layouts, const std::filesystem::path& path);

struct SyntheticGridSpec {
  int columns = 2;  // 1 or 2; 0 draws one of them per layout
  int rows_min = 2;
  int rows_max = 5;
  int num_classes = 5;
  int max_len = 25;
  double margin = 0.08;
  double gutter = 0.04;  // between columns
  double row_gap = 0.03;
  Canvas canvas{816, 1056};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Grid layouts: columns share left/right edges, rows share top/bottom edges,
/// cells never overlap. Every layout has zero local alignment and zero
/// overlap loss (checked).
std::vector<Layout> generate_synthetic(const SyntheticGridSpec& spec, int count);

}  // namespace lace
