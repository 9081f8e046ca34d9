#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "invlearn/types.hpp"

namespace invlearn {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    while (used < s.size() && (s[used] == ' ' || s[used] == '\t')) ++used;
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(fmt::format("{}: cannot parse '{}' as a number", what, s));
  }
}

inline std::string format_double(double v) { return fmt::format("{:.17g}", v); }

inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  std::size_t n = data.length();
  for (std::size_t t = 1; t <= n; ++t) os << (t > 1 ? "," : "") << 't' << t;
  os << '\n';
  for (const auto& d : data) {
    for (std::size_t t = 0; t < d.size(); ++t) os << (t ? "," : "") << format_double(d[t]);
    os << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("dataset CSV is empty");
  auto header = split_csv_line(line);
  for (std::size_t t = 0; t < header.size(); ++t)
    if (header[t] != fmt::format("t{}", t + 1))
      throw InputError(fmt::format("dataset CSV header column {} is '{}' (expected 't{}')",
                                   t + 1, header[t], t + 1));
  Dataset data;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError(fmt::format("dataset CSV row {} has {} columns (expected {})", row,
                                   cells.size(), header.size()));
    DemandSequence d;
    for (const auto& c : cells) d.push_back(parse_double(c, fmt::format("dataset CSV row {}", row)));
    data.sequences.push_back(std::move(d));
  }
  data.validate();
  return data;
}

inline void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  write_dataset_csv(os, data);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError(fmt::format("cannot open dataset '{}'", path));
  return read_dataset_csv(is);
}

}  // namespace invlearn
