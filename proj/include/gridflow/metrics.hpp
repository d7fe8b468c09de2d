#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "gridflow/losses.hpp"

namespace gridflow {

/// One evaluation snapshot. Absent values (no loss yet at step 0, no
/// samples, no entropy cache for the non-entropy objectives) are NaN and
/// serialize to empty CSV fields.
struct MetricsRow {
  std::int64_t step = 0;
  double loss_value = 0.0;
  double l1_exact = 0.0;
  double l1_empirical = 0.0;
  double log_z = 0.0;
  double mean_entropy = 0.0;
  std::int64_t modes_found = 0;
  double elapsed_ms = 0.0;
};

/// Identifies one sweep cell.
struct CellId {
  int dim = 2;
  int horizon = 8;
  LossKind loss = LossKind::kTb;
  std::uint64_t seed = 0;
};

[[nodiscard]] std::string csv_header();

/// Shortest round-trip decimal formatting (std::to_chars), so re-parsing a
/// row reproduces every double bit-for-bit and identical runs produce
/// byte-identical files. `with_timing` controls whether elapsed_ms is
/// written; the column is always present.
[[nodiscard]] std::string csv_row(const CellId& cell, const MetricsRow& row,
                                  bool with_timing);

/// Parses a csv_row line (not the header). Throws IoError on malformed input.
void parse_csv_row(std::string_view line, CellId& cell, MetricsRow& row);

/// NaN-aware float formatting shared by the CSV and manifest writers.
[[nodiscard]] std::string format_double(double value);

}  // namespace gridflow
