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

#include "lapmoe/measure_io.hpp"

#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace lapmoe {

namespace {

using nlohmann::json;

std::vector<double> to_list(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_list(const json& j, int expected, const char* what) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<int>(values.size()) != expected) {
    throw std::invalid_argument(std::string("measure: '") + what + "' has " + std::to_string(values.size()) +
                                " entries, expected " + std::to_string(expected));
  }
  return Eigen::Map<const Vector>(values.data(), expected);
}

}  // namespace

std::string measure_to_string(const MixingMeasure& g) {
  json j;
  j["k"] = g.k();
  j["d"] = g.dim();
  std::vector<double> beta;
  std::vector<double> b;
  std::vector<double> nu;
  json w = json::array();
  json a = json::array();
  for (const Atom& atom : g.atoms()) {
    beta.push_back(atom.beta);
    b.push_back(atom.b);
    nu.push_back(atom.nu);
    w.push_back(to_list(atom.w));
    a.push_back(to_list(atom.a));
  }
  j["beta"] = beta;
  j["W"] = w;
  j["a"] = a;
  j["b"] = b;
  j["nu"] = nu;
  return j.dump(2);
}

MixingMeasure measure_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    const int k = j.at("k").get<int>();
    const int d = j.at("d").get<int>();
    if (k < 1 || d < 1) {
      throw std::invalid_argument("measure: k and d must be positive");
    }
    const Vector beta = from_list(j.at("beta"), k, "beta");
    const Vector b = from_list(j.at("b"), k, "b");
    const Vector nu = from_list(j.at("nu"), k, "nu");
    const json& w = j.at("W");
    const json& a = j.at("a");
    if (!w.is_array() || !a.is_array() || static_cast<int>(w.size()) != k || static_cast<int>(a.size()) != k) {
      throw std::invalid_argument("measure: 'W' and 'a' must hold k rows");
    }
    std::vector<Atom> atoms;
    for (int i = 0; i < k; ++i) {
      atoms.push_back({beta(i), from_list(w[static_cast<std::size_t>(i)], d, "W"),
                       from_list(a[static_cast<std::size_t>(i)], d, "a"), b(i), nu(i)});
    }
    return MixingMeasure(std::move(atoms));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("measure: malformed JSON: ") + e.what());
  }
}

void write_measure(std::ostream& out, const MixingMeasure& g) { out << measure_to_string(g) << '\n'; }

MixingMeasure read_measure(std::istream& in) {
  return measure_from_string(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

}  // namespace lapmoe
