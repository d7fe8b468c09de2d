#include "gridflow/metrics.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <vector>

#include "gridflow/errors.hpp"

namespace gridflow {

std::string format_double(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_header() {
  return "step,dim,horizon,loss,seed,loss_value,l1_exact,l1_empirical,log_z,"
         "mean_entropy,modes_found,elapsed_ms";
}

std::string csv_row(const CellId& cell, const MetricsRow& row,
                    bool with_timing) {
  std::string out;
  out += std::to_string(row.step);
  out += ',';
  out += std::to_string(cell.dim);
  out += ',';
  out += std::to_string(cell.horizon);
  out += ',';
  out += loss_kind_name(cell.loss);
  out += ',';
  out += std::to_string(cell.seed);
  out += ',';
  out += format_double(row.loss_value);
  out += ',';
  out += format_double(row.l1_exact);
  out += ',';
  out += format_double(row.l1_empirical);
  out += ',';
  out += format_double(row.log_z);
  out += ',';
  out += format_double(row.mean_entropy);
  out += ',';
  out += std::to_string(row.modes_found);
  out += ',';
  out += format_double(with_timing ? row.elapsed_ms
                                   : std::numeric_limits<double>::quiet_NaN());
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double_field(std::string_view field) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw IoError("csv: malformed float field '" + std::string(field) + "'");
  return value;
}

template <typename Int>
Int parse_int_field(std::string_view field) {
  Int value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw IoError("csv: malformed integer field '" + std::string(field) + "'");
  return value;
}

}  // namespace

void parse_csv_row(std::string_view line, CellId& cell, MetricsRow& row) {
  const auto fields = split_fields(line);
  if (fields.size() != 12)
    throw IoError("csv: expected 12 fields, got " + std::to_string(fields.size()));
  row.step = parse_int_field<std::int64_t>(fields[0]);
  cell.dim = parse_int_field<int>(fields[1]);
  cell.horizon = parse_int_field<int>(fields[2]);
  cell.loss = loss_kind_from_name(std::string(fields[3]));
  cell.seed = parse_int_field<std::uint64_t>(fields[4]);
  row.loss_value = parse_double_field(fields[5]);
  row.l1_exact = parse_double_field(fields[6]);
  row.l1_empirical = parse_double_field(fields[7]);
  row.log_z = parse_double_field(fields[8]);
  row.mean_entropy = parse_double_field(fields[9]);
  row.modes_found = parse_int_field<std::int64_t>(fields[10]);
  row.elapsed_ms = parse_double_field(fields[11]);
}

}  // namespace gridflow
