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

// Finite-difference verification of the hand-written gradients in the
// gating, fusion and irregularity modules.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lapmoe/numeric.hpp"

namespace lapmoe {

enum class GradScope { Gating, Fusion, Irregularity };

std::string to_string(GradScope scope);
GradScope parse_grad_scope(const std::string& name);

struct GradcheckOptions {
  GradScope scope = GradScope::Gating;
  /// Instances per variant: per gate kind for gating, per router mode for
  /// fusion, total for irregularity.
  int instances = 100;
  std::uint64_t seed = 1;
  double tolerance = 1e-5;
  double step = 1e-6;
  /// Instances whose Top-K margin or Laplace distance falls below this are
  /// redrawn so finite differences never cross a selection boundary.
  double boundary_guard = 1e-3;
  /// Add 1 to one analytic gradient entry per instance.
  bool inject_fault = false;
};

/// max |analytic - numeric| / max(max|analytic|, max|numeric|, 1e-3) over a
/// parameter group.
double relative_error(const Matrix& analytic, const Matrix& numeric);

struct GroupError {
  std::string name;
  double rel_error = 0.0;
};

struct InstanceReport {
  int index = 0;
  std::string variant;
  std::vector<GroupError> groups;
  double max_rel_error = 0.0;
  bool passed = false;
  /// Draws rejected for lying near a selection tie or Laplace collision.
  int resampled = 0;
};

struct GradcheckReport {
  GradScope scope = GradScope::Gating;
  double tolerance = 0.0;
  std::vector<InstanceReport> instances;

  int failures() const;
  bool passed() const { return failures() == 0; }
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

/// One line per instance followed by a summary line.
void write_gradcheck_report(std::ostream& out, const GradcheckReport& report);

}  // namespace lapmoe
