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

// Parameter-estimation convergence study: sample a true measure once, then
// for every (n, replication) draw data, fit by EM from a near-truth start and
// record the Voronoi loss. The log-log slope of mean loss against n estimates
// the empirical rate.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lapmoe/gmoe.hpp"
#include "lapmoe/voronoi.hpp"

namespace lapmoe {

enum class Setting { Exact, Over };

std::string to_string(Setting s);
/// Accepts "exact" or "over".
Setting parse_setting(const std::string& s);

/// Five log-spaced sizes in [1e3, ~2.2e4].
std::vector<int> desk_grid();
/// Ten log-spaced sizes in [1e3, 1e5].
std::vector<int> paper_grid();

struct RateStudyConfig {
  Setting setting = Setting::Exact;
  int d = 2;
  int k_true = 2;
  /// Fitted components. 0 means k_true for Exact, k_true + 1 for Over.
  int k = 0;
  std::vector<int> n_grid = desk_grid();
  int replications = 5;
  std::uint64_t seed = 42;
  double perturb_std = 0.05;
  double em_tolerance = 1e-6;
  int em_max_iterations = 2000;
  /// Worker threads. 0 means std::thread::hardware_concurrency().
  int threads = 0;

  int fitted_k() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct RateStudyRecord {
  Setting setting = Setting::Exact;
  int n = 0;
  int replication = 0;
  std::uint64_t seed = 0;
  double loss = 0.0;
  int em_iterations = 0;
  double final_loglik = 0.0;
  bool converged = false;
};

struct SizeSummary {
  int n = 0;
  double mean_loss = 0.0;
  /// Sample standard deviation across replications (0 for one replication).
  double std_loss = 0.0;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Standard error of the slope; 0 when there are only two points.
  double stderr_slope = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
SlopeFit fit_slope(std::span<const double> xs, std::span<const double> ys);

struct RateStudyResult {
  MixingMeasure truth;
  std::vector<RateStudyRecord> records;
  std::vector<SizeSummary> summaries;
  SlopeFit fit;
};

/// Seed of the run for (n, replication). Independent of the rest of the grid.
std::uint64_t run_seed(std::uint64_t base, int n, int replication);
std::uint64_t truth_seed(std::uint64_t base);

/// Executes one (n, replication) cell of the study.
RateStudyRecord run_single(const RateStudyConfig& cfg, const MixingMeasure& truth, int n, int replication);

using ProgressFn = std::function<void(const RateStudyRecord&)>;

/// Runs the whole grid. Records are ordered by (n, replication) regardless of
/// thread scheduling. Throws MissingRBarEntry if an over-specified fit
/// produces a Voronoi cell with no rbar entry.
RateStudyResult run_rate_study(const RateStudyConfig& cfg, const ProgressFn& progress = {});

void write_records_csv(std::ostream& os, std::span<const RateStudyRecord> records);
void write_slope_csv(std::ostream& os, Setting setting, const SlopeFit& fit);
void write_summary_csv(std::ostream& os, Setting setting, std::span<const SizeSummary> summaries);

}  // namespace lapmoe
