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

// Line-oriented text format for irregular series: one "channel_id,time,value"
// record per line. Blank lines and lines starting with '#' are skipped, and a
// leading "channel_id,time,value" header is optional.

#pragma once

#include <iosfwd>
#include <string>

#include "lapmoe/irregularity.hpp"

namespace lapmoe {

/// Channels are numbered 0..N-1 where N is the larger of min_channels and the
/// largest id seen plus one. Observations are stably sorted by time within
/// each channel.
IrregularSeries read_series(std::istream& in, int min_channels = 0);
IrregularSeries read_series_file(const std::string& path, int min_channels = 0);

/// Writes the header followed by every observation, channel by channel.
void write_series(std::ostream& out, const IrregularSeries& series);

}  // namespace lapmoe
