#include "metasched/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <iterator>

#include "metasched/errors.hpp"
#include "metasched/io.hpp"

namespace metasched {

namespace {

void put(std::string& out, const std::optional<double>& value) {
  if (value) out += format_double(*value);
}

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

template <typename Int>
Int parse_int(std::string_view field, std::size_t line_no, const char* name) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("metrics line " + std::to_string(line_no) + ": bad " + name + " '" + std::string(field) + "'",
                     line_no);
  }
  return value;
}

std::optional<double> parse_optional(std::string_view field, std::size_t line_no, const char* name) {
  if (field.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError("metrics line " + std::to_string(line_no) + ": bad " + name + " '" + std::string(field) + "'",
                     line_no);
  }
  return value;
}

}  // namespace

std::string to_csv(const MetricsTable& table) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& row : table) {
    out += std::to_string(row.step);
    out += ',';
    out += std::to_string(row.epoch);
    out += row.phase == Phase::train ? ",train," : ",eval,";
    put(out, row.lr);
    out += ',';
    put(out, row.train_loss);
    out += ',';
    put(out, row.val_loss);
    out += ',';
    put(out, row.test_loss);
    out += ',';
    put(out, row.test_acc);
    out += ',';
    out += std::to_string(row.wall_us);
    out += '\n';
  }
  return out;
}

MetricsTable parse_csv(std::string_view text) {
  MetricsTable table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (!saw_header) {
      if (line != kMetricsHeader) throw ParseError("metrics line 1: unexpected header", line_no);
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    if (fields.size() != 9) {
      throw ParseError("metrics line " + std::to_string(line_no) + ": expected 9 fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    TrainStepRecord row;
    row.step = parse_int<std::int64_t>(fields[0], line_no, "step");
    row.epoch = parse_int<std::int64_t>(fields[1], line_no, "epoch");
    if (fields[2] == "train") {
      row.phase = Phase::train;
    } else if (fields[2] == "eval") {
      row.phase = Phase::eval;
    } else {
      throw ParseError("metrics line " + std::to_string(line_no) + ": bad phase '" + std::string(fields[2]) + "'",
                       line_no);
    }
    row.lr = parse_optional(fields[3], line_no, "lr");
    row.train_loss = parse_optional(fields[4], line_no, "train_loss");
    row.val_loss = parse_optional(fields[5], line_no, "val_loss");
    row.test_loss = parse_optional(fields[6], line_no, "test_loss");
    row.test_acc = parse_optional(fields[7], line_no, "test_acc");
    row.wall_us = parse_int<std::int64_t>(fields[8], line_no, "wall_us");
    if (!table.empty() && row.step < table.back().step) {
      throw ParseError("metrics line " + std::to_string(line_no) + ": step index decreases", line_no);
    }
    table.push_back(row);
  }
  if (!saw_header) throw ParseError("metrics: missing header", 1);
  return table;
}

void write_metrics(const MetricsTable& table, const std::filesystem::path& path) {
  write_file_atomic(path, to_csv(table));
}

MetricsTable read_metrics(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::vector<TrainStepRecord> eval_rows(const MetricsTable& table) {
  std::vector<TrainStepRecord> out;
  std::copy_if(table.begin(), table.end(), std::back_inserter(out),
               [](const TrainStepRecord& r) { return r.phase == Phase::eval; });
  return out;
}

std::optional<AccuracySummary> test_accuracy_summary(const MetricsTable& table) {
  std::optional<AccuracySummary> out;
  for (const auto& row : table) {
    if (row.phase != Phase::eval || row.epoch == 0 || !row.test_acc) continue;
    if (!out) {
      out = AccuracySummary{*row.test_acc, *row.test_acc};
    } else {
      out->best = std::max(out->best, *row.test_acc);
      out->last = *row.test_acc;
    }
  }
  return out;
}

}  // namespace metasched
