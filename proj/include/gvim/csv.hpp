#pragma once

// CSV reading and writing for Dataset.
//
// Format: comma-separated, header row, one column per feature plus the
// response column. Numbers are written with 17 significant digits, which
// round-trips every finite double exactly. Which columns are categorical and
// which one is the response is declared by a schema, stored as a JSON sidecar:
//
//   {"response": "y", "categorical": {"C1": 2, "C2": 3}}
//
// "categorical" may also be a plain list of names, in which case the level
// count is taken from the largest label present.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"

namespace gvim {

struct CsvSchema {
  std::string response = "y";
  std::map<std::string, int> categorical;  // level count, 0 = infer

  static CsvSchema from_json(const nlohmann::json& j) {
    CsvSchema s;
    if (!j.contains("response")) throw ParseError("schema: missing \"response\"");
    s.response = j.at("response").get<std::string>();
    if (j.contains("categorical")) {
      const auto& c = j.at("categorical");
      if (c.is_array()) {
        for (const auto& name : c) s.categorical[name.get<std::string>()] = 0;
      } else if (c.is_object()) {
        for (auto it = c.begin(); it != c.end(); ++it) s.categorical[it.key()] = it.value().get<int>();
      } else {
        throw ParseError("schema: \"categorical\" must be a list or an object");
      }
    }
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["response"] = response;
    j["categorical"] = nlohmann::json::object();
    for (const auto& [name, levels] : categorical) j["categorical"][name] = levels;
    return j;
  }

  static CsvSchema of(const Dataset& data) {
    CsvSchema s;
    s.response = data.response_name();
    for (const auto& f : data.features()) {
      if (f.is_categorical()) s.categorical[f.name] = f.levels;
    }
    return s;
  }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

inline double parse_number(std::string_view field, std::size_t line, std::size_t col,
                           const std::string& source) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError(source + ":" + std::to_string(line) + ": column " + std::to_string(col + 1) +
                     ": not a finite number: '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace detail

inline Dataset parse_csv(std::istream& in, const CsvSchema& schema,
                         const std::string& source = "<csv>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty input, expected a header row");
  std::vector<std::string> header;
  for (auto f : detail::split_fields(line)) header.emplace_back(f);

  std::size_t response_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) throw ParseError(source + ":1: column " + std::to_string(c + 1) + " has an empty name");
    if (header[c] == schema.response) response_col = c;
  }
  if (response_col == header.size()) {
    throw ParseError(source + ":1: response column '" + schema.response + "' not found in header");
  }
  for (const auto& [name, levels] : schema.categorical) {
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw ParseError(source + ":1: categorical column '" + name + "' not found in header");
    }
  }

  std::vector<std::vector<double>> values(header.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      values[c].push_back(detail::parse_number(fields[c], line_no, c, source));
    }
  }

  std::vector<FeatureMeta> features;
  std::vector<Dataset::Column> columns;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == response_col) continue;
    auto it = schema.categorical.find(header[c]);
    if (it == schema.categorical.end()) {
      features.push_back(FeatureMeta::continuous(header[c]));
    } else {
      int levels = it->second;
      if (levels == 0) {
        double top = 1.0;
        for (double v : values[c]) top = std::max(top, v);
        levels = std::max(2, static_cast<int>(top));
      }
      features.push_back(FeatureMeta::categorical(header[c], levels));
    }
    columns.push_back(std::move(values[c]));
  }
  try {
    return Dataset(std::move(features), std::move(columns), std::move(values[response_col]), schema.response);
  } catch (const SchemaError& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline Dataset read_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return parse_csv(in, schema, path.string());
}

inline CsvSchema read_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return CsvSchema::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_csv(const Dataset& data, std::ostream& out) {
  for (const auto& f : data.features()) out << f.name << ',';
  out << data.response_name() << '\n';
  const auto y = data.response();
  for (std::size_t i = 0; i < data.rows(); ++i) {
    for (std::size_t j = 0; j < data.num_features(); ++j) out << format_double(data.column(j)[i]) << ',';
    out << format_double(y[i]) << '\n';
  }
}

inline void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_csv(data, out);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_schema(const CsvSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << schema.to_json().dump(2) << '\n';
}

}  // namespace gvim
