#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tda {

using MaybeValue = std::optional<double>;

// Result of one experiment. Keys are kept in insertion order, which the
// experiment drivers fix, so serialized reports are stable across runs.
// Absent values (undefined correlations, failed runs) are nullopt and
// serialize as JSON null / empty CSV cell.
struct EvalReport {
  std::string experiment;
  std::string status = "ok";
  std::vector<std::pair<std::string, MaybeValue>> aggregates;
  std::vector<std::pair<std::string, std::vector<MaybeValue>>> raw;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> fingerprints;

  void set(std::string key, MaybeValue value);
  void add_raw(std::string key, std::vector<MaybeValue> values);
  void echo(std::string key, std::string value);

  MaybeValue get(std::string_view key) const;
  bool has(std::string_view key) const;
  const std::vector<MaybeValue>* raw_values(std::string_view key) const;

  bool operator==(const EvalReport&) const = default;
};

enum class ReportFormat { kJson, kCsv };

std::string format_report_json(const EvalReport& report);
// Columns: experiment,key,value (one row per aggregate, report order);
// values printed with 17 significant digits.
std::string format_report_csv(const EvalReport& report);
EvalReport parse_report_json(std::string_view text);

void write_report(const EvalReport& report, const std::filesystem::path& path,
                  ReportFormat format);
EvalReport read_report(const std::filesystem::path& path);

// Mean of the present values; nullopt when none are present.
MaybeValue mean_of(const std::vector<MaybeValue>& values);

}  // namespace tda
