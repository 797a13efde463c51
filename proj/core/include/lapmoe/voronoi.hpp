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

// Voronoi-cell discrepancies between a fitted and a true mixing measure.

#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <vector>

#include "lapmoe/gmoe.hpp"

namespace lapmoe {

struct VoronoiCells {
  /// cells[j] lists fitted components nearest to true atom j, ascending.
  std::vector<std::vector<int>> cells;
  /// owner[i] is the cell containing fitted component i.
  std::vector<int> owner;
};

/// Assign each fitted component to the nearest true atom in the stacked
/// (W, a, b, nu) space. Ties go to the smaller atom index.
VoronoiCells assign_cells(const MixingMeasure& fitted, const MixingMeasure& truth);

using PhiExponents = std::array<double, 4>;

/// ||dW||^r1 + ||da||^r2 + |db|^r3 + |dnu|^r4 between fitted component i and
/// true atom j.
double phi(const Atom& fitted, const Atom& truth, const PhiExponents& rho);

class MissingRBarEntry : public std::runtime_error {
 public:
  explicit MissingRBarEntry(int m);
  int cell_size() const { return m_; }

 private:
  int m_;
};

/// Lookup m -> rbar(m) for cells fitted by m >= 2 components.
class RBarTable {
 public:
  /// Seeded with the known values rbar(2) = 4 and rbar(3) = 6.
  RBarTable();

  void set(int m, int value);
  bool contains(int m) const { return table_.count(m) != 0; }
  /// Throws MissingRBarEntry when m has no entry.
  int at(int m) const;

 private:
  std::map<int, int> table_;
};

// Both losses evaluate the mass terms on mass-normalised copies of the two
// measures (sum exp(beta) == 1), which removes the common-shift degeneracy of
// the gate and makes the loss independent of which component carries the
// beta anchor.

/// Exact-specified loss: mass mismatch plus exp(beta_i) Phi(1,1,1,1) over
/// singleton cells.
double loss_d1(const MixingMeasure& fitted, const MixingMeasure& truth);

/// Over-specified loss: D1 terms plus exp(beta_i) Phi(2, 2, rbar, rbar/2)
/// over cells holding more than one component.
double loss_d2(const MixingMeasure& fitted, const MixingMeasure& truth, const RBarTable& table = RBarTable{});

}  // namespace lapmoe
