#include "tda/report.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "tda/data_io.hpp"
#include "tda/error.hpp"

namespace tda {

using ojson = nlohmann::ordered_json;

void EvalReport::set(std::string key, MaybeValue value) {
  if (value && !std::isfinite(*value)) value.reset();
  for (auto& [k, v] : aggregates)
    if (k == key) {
      v = value;
      return;
    }
  aggregates.emplace_back(std::move(key), value);
}

void EvalReport::add_raw(std::string key, std::vector<MaybeValue> values) {
  for (auto& v : values)
    if (v && !std::isfinite(*v)) v.reset();
  for (auto& [k, vs] : raw)
    if (k == key) {
      vs = std::move(values);
      return;
    }
  raw.emplace_back(std::move(key), std::move(values));
}

void EvalReport::echo(std::string key, std::string value) {
  for (auto& [k, v] : config)
    if (k == key) {
      v = std::move(value);
      return;
    }
  config.emplace_back(std::move(key), std::move(value));
}

MaybeValue EvalReport::get(std::string_view key) const {
  for (const auto& [k, v] : aggregates)
    if (k == key) return v;
  return std::nullopt;
}

bool EvalReport::has(std::string_view key) const {
  for (const auto& [k, v] : aggregates)
    if (k == key) return true;
  return false;
}

const std::vector<MaybeValue>* EvalReport::raw_values(std::string_view key) const {
  for (const auto& [k, vs] : raw)
    if (k == key) return &vs;
  return nullptr;
}

namespace {

std::string number(MaybeValue v) {
  if (!v || !std::isfinite(*v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string quoted(const std::string& s) { return ojson(s).dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void string_pairs(std::string& out, const char* name,
                  const std::vector<std::pair<std::string, std::string>>& pairs) {
  out += "  ";
  out += quoted(name);
  out += ": {";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    out += quoted(pairs[i].first) + ": " + quoted(pairs[i].second);
  }
  out += pairs.empty() ? "}" : "\n  }";
}

MaybeValue read_number(const ojson& v) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw ConfigError("report: expected a number or null");
  return v.get<double>();
}

}  // namespace

std::string format_report_json(const EvalReport& report) {
  std::string out = "{\n";
  out += "  \"experiment\": " + quoted(report.experiment) + ",\n";
  out += "  \"status\": " + quoted(report.status) + ",\n";
  out += "  \"aggregates\": {";
  for (std::size_t i = 0; i < report.aggregates.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    out += quoted(report.aggregates[i].first) + ": " + number(report.aggregates[i].second);
  }
  out += report.aggregates.empty() ? "},\n" : "\n  },\n";
  out += "  \"raw\": {";
  for (std::size_t i = 0; i < report.raw.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    out += quoted(report.raw[i].first) + ": [";
    const auto& values = report.raw[i].second;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (k) out += ", ";
      out += number(values[k]);
    }
    out += "]";
  }
  out += report.raw.empty() ? "},\n" : "\n  },\n";
  string_pairs(out, "config", report.config);
  out += ",\n";
  string_pairs(out, "fingerprints", report.fingerprints);
  out += "\n}\n";
  return out;
}

std::string format_report_csv(const EvalReport& report) {
  std::string out = "experiment,key,value\n";
  for (const auto& [key, value] : report.aggregates) {
    out += csv_field(report.experiment) + "," + csv_field(key) + ",";
    if (value) out += number(value);
    out += "\n";
  }
  return out;
}

EvalReport parse_report_json(std::string_view text) {
  try {
    const ojson j = ojson::parse(text);
    EvalReport r;
    r.experiment = j.at("experiment").get<std::string>();
    r.status = j.at("status").get<std::string>();
    for (const auto& [k, v] : j.at("aggregates").items()) r.aggregates.emplace_back(k, read_number(v));
    for (const auto& [k, v] : j.at("raw").items()) {
      std::vector<MaybeValue> values;
      for (const auto& x : v) values.push_back(read_number(x));
      r.raw.emplace_back(k, std::move(values));
    }
    for (const auto& [k, v] : j.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
    for (const auto& [k, v] : j.at("fingerprints").items())
      r.fingerprints.emplace_back(k, v.get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: malformed JSON: ") + e.what());
  }
}

void write_report(const EvalReport& report, const std::filesystem::path& path,
                  ReportFormat format) {
  write_text_file(path, format == ReportFormat::kJson ? format_report_json(report)
                                                      : format_report_csv(report));
}

EvalReport read_report(const std::filesystem::path& path) {
  try {
    return parse_report_json(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

MaybeValue mean_of(const std::vector<MaybeValue>& values) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace tda
