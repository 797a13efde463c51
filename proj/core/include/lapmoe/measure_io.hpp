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

// JSON serialisation of mixing measures:
//   {"k": 2, "d": 2, "beta": [...], "W": [[...], ...], "a": [[...], ...],
//    "b": [...], "nu": [...]}
// Doubles are written as the shortest decimal that parses back to the same
// value, so write followed by read reproduces the measure bit for bit.

#pragma once

#include <iosfwd>
#include <string>

#include "lapmoe/gmoe.hpp"

namespace lapmoe {

std::string measure_to_string(const MixingMeasure& g);
MixingMeasure measure_from_string(const std::string& text);

void write_measure(std::ostream& out, const MixingMeasure& g);
MixingMeasure read_measure(std::istream& in);

}  // namespace lapmoe
