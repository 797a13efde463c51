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

#include "lapmoe/voronoi.hpp"

#include <cmath>
#include <string>

namespace lapmoe {

VoronoiCells assign_cells(const MixingMeasure& fitted, const MixingMeasure& truth) {
  if (fitted.dim() != truth.dim()) {
    throw std::invalid_argument("assign_cells: dimension mismatch (" + std::to_string(fitted.dim()) + " vs " +
                                std::to_string(truth.dim()) + ")");
  }
  VoronoiCells out;
  out.cells.resize(static_cast<std::size_t>(truth.k()));
  out.owner.resize(static_cast<std::size_t>(fitted.k()));
  std::vector<Vector> atoms;
  for (int j = 0; j < truth.k(); ++j) {
    atoms.push_back(truth.theta(j));
  }
  for (int i = 0; i < fitted.k(); ++i) {
    const Vector t = fitted.theta(i);
    int best = 0;
    double best_dist = (t - atoms[0]).squaredNorm();
    for (int j = 1; j < truth.k(); ++j) {
      const double dist = (t - atoms[static_cast<std::size_t>(j)]).squaredNorm();
      if (dist < best_dist) {
        best = j;
        best_dist = dist;
      }
    }
    out.owner[static_cast<std::size_t>(i)] = best;
    out.cells[static_cast<std::size_t>(best)].push_back(i);
  }
  return out;
}

double phi(const Atom& fitted, const Atom& truth, const PhiExponents& rho) {
  return std::pow((fitted.w - truth.w).norm(), rho[0]) + std::pow((fitted.a - truth.a).norm(), rho[1]) +
         std::pow(std::abs(fitted.b - truth.b), rho[2]) + std::pow(std::abs(fitted.nu - truth.nu), rho[3]);
}

MissingRBarEntry::MissingRBarEntry(int m)
    : std::runtime_error("no rbar entry for a Voronoi cell of size " + std::to_string(m) +
                         "; rbar(m) is unknown for m >= 4, add it with RBarTable::set"),
      m_(m) {}

RBarTable::RBarTable() : table_{{2, 4}, {3, 6}} {}

void RBarTable::set(int m, int value) {
  if (m < 2) {
    throw std::invalid_argument("RBarTable: entries are defined for m >= 2");
  }
  if (value < 1) {
    throw std::invalid_argument("RBarTable: rbar values must be >= 1");
  }
  table_[m] = value;
}

int RBarTable::at(int m) const {
  const auto it = table_.find(m);
  if (it == table_.end()) {
    throw MissingRBarEntry(m);
  }
  return it->second;
}

namespace {

double voronoi_loss(const MixingMeasure& fitted_raw, const MixingMeasure& truth_raw, const RBarTable* table) {
  const MixingMeasure fitted = fitted_raw.mass_normalized();
  const MixingMeasure truth = truth_raw.mass_normalized();
  const VoronoiCells vc = assign_cells(fitted, truth);
  double loss = 0.0;
  for (int j = 0; j < truth.k(); ++j) {
    const auto& cell = vc.cells[static_cast<std::size_t>(j)];
    double mass = 0.0;
    for (int i : cell) {
      mass += std::exp(fitted[i].beta);
    }
    loss += std::abs(mass - std::exp(truth[j].beta));
    if (cell.size() == 1) {
      const int i = cell.front();
      loss += std::exp(fitted[i].beta) * phi(fitted[i], truth[j], {1.0, 1.0, 1.0, 1.0});
    } else if (cell.size() > 1 && table != nullptr) {
      const double r = table->at(static_cast<int>(cell.size()));
      for (int i : cell) {
        loss += std::exp(fitted[i].beta) * phi(fitted[i], truth[j], {2.0, 2.0, r, r / 2.0});
      }
    }
  }
  return loss;
}

}  // namespace

double loss_d1(const MixingMeasure& fitted, const MixingMeasure& truth) {
  return voronoi_loss(fitted, truth, nullptr);
}

double loss_d2(const MixingMeasure& fitted, const MixingMeasure& truth, const RBarTable& table) {
  return voronoi_loss(fitted, truth, &table);
}

}  // namespace lapmoe
