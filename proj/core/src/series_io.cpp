/* Copyright 2026 The lapmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "lapmoe/series_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string_view>

namespace lapmoe {

namespace {

constexpr std::string_view kHeader = "channel_id,time,value";

template <typename T>
T parse_field(std::string_view field, int line, const char* what) {
  T value{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw std::invalid_argument("series line " + std::to_string(line) + ": cannot parse " + what + " '" +
                                std::string(field) + "'");
  }
  return value;
}

}  // namespace

IrregularSeries read_series(std::istream& in, int min_channels) {
  std::vector<std::pair<int, Observation>> rows;
  std::string text;
  int line = 0;
  int max_id = -1;
  while (std::getline(in, text)) {
    ++line;
    std::string_view v(text);
    if (!v.empty() && v.back() == '\r') {
      v.remove_suffix(1);
    }
    if (v.empty() || v.front() == '#' || (rows.empty() && v == kHeader)) {
      continue;
    }
    const auto c1 = v.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : v.find(',', c1 + 1);
    if (c2 == std::string_view::npos || v.find(',', c2 + 1) != std::string_view::npos) {
      throw std::invalid_argument("series line " + std::to_string(line) + ": expected channel_id,time,value");
    }
    const int id = parse_field<int>(v.substr(0, c1), line, "channel id");
    const double time = parse_field<double>(v.substr(c1 + 1, c2 - c1 - 1), line, "time");
    const double value = parse_field<double>(v.substr(c2 + 1), line, "value");
    if (id < 0) {
      throw std::invalid_argument("series line " + std::to_string(line) + ": negative channel id");
    }
    if (!std::isfinite(time) || !std::isfinite(value)) {
      throw std::invalid_argument("series line " + std::to_string(line) + ": non-finite time or value");
    }
    max_id = std::max(max_id, id);
    rows.push_back({id, {time, value}});
  }
  IrregularSeries s;
  s.channels.resize(static_cast<std::size_t>(std::max(min_channels, max_id + 1)));
  for (const auto& [id, obs] : rows) {
    s.channels[static_cast<std::size_t>(id)].push_back(obs);
  }
  for (auto& ch : s.channels) {
    std::stable_sort(ch.begin(), ch.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
  }
  return s;
}

IrregularSeries read_series_file(const std::string& path, int min_channels) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open series file '" + path + "'");
  }
  return read_series(in, min_channels);
}

void write_series(std::ostream& out, const IrregularSeries& series) {
  out << kHeader << '\n';
  for (std::size_t k = 0; k < series.channels.size(); ++k) {
    for (const Observation& o : series.channels[k]) {
      out << k << ',' << format_double(o.time) << ',' << format_double(o.value) << '\n';
    }
  }
}

}  // namespace lapmoe
