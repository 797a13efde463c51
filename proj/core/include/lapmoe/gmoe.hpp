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

// Laplace-gated Gaussian mixture of experts:
//
//   p_G(y | x) = sum_i softmax_i(beta_i - ||W_i - x||) * N(y | a_i^T x + b_i, nu_i)
//
// with maximum likelihood estimation by a generalised EM scheme.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lapmoe/numeric.hpp"

namespace lapmoe {

/// One component (beta, W, a, b, nu). nu is a variance.
struct Atom {
  double beta = 0.0;
  Vector w;
  Vector a;
  double b = 0.0;
  double nu = 1.0;
};

/// A finite mixing measure sum_i exp(beta_i) delta_{(W_i, a_i, b_i, nu_i)}.
///
/// Construction validates shapes, finiteness and nu > 0. The identifiability
/// anchor (last beta == 0) is not enforced on construction so that shift
/// invariance can be exercised; use anchored() to canonicalise.
class MixingMeasure {
 public:
  MixingMeasure() = default;
  explicit MixingMeasure(std::vector<Atom> atoms);

  int k() const { return static_cast<int>(atoms_.size()); }
  int dim() const { return dim_; }

  const Atom& operator[](int i) const { return atoms_[static_cast<std::size_t>(i)]; }
  std::span<const Atom> atoms() const { return atoms_; }

  bool is_anchored() const;
  /// Shift every beta by the same constant so the last one is zero.
  MixingMeasure anchored() const;
  /// Shift every beta so that sum_i exp(beta_i) == 1.
  MixingMeasure mass_normalized() const;
  /// Component i of the result is component perm[i] of this measure.
  MixingMeasure permuted(std::span<const int> perm) const;
  /// Stacked (W, a, b, nu) parameter vector of component i.
  Vector theta(int i) const;

  bool operator==(const MixingMeasure& other) const;

 private:
  std::vector<Atom> atoms_;
  int dim_ = 0;
};

/// n samples; column j of x is X_j.
struct RegressionDataset {
  Matrix x;
  Vector y;

  int n() const { return static_cast<int>(y.size()); }
  int dim() const { return static_cast<int>(x.rows()); }
  void validate() const;
};

/// Dense Laplace gate softmax(beta_i - ||W_i - x||) over all components.
Vector gate_weights(const MixingMeasure& g, const Vector& x);

double conditional_density(const MixingMeasure& g, const Vector& x, double y);
double log_conditional_density(const MixingMeasure& g, const Vector& x, double y);

/// Average log-likelihood (1/n) sum_j log p_G(Y_j | X_j). Pointwise terms are
/// reduced with canonical_sum, so the value is exactly invariant under
/// permutations of the dataset.
double log_likelihood(const MixingMeasure& g, const RegressionDataset& data);

struct TruthPrior {
  int k = 2;
  double gate_variance = 0.01;    // divided by d
  double expert_variance = 1.0;   // divided by d
};

/// Draw the true measure: (W, beta) ~ N(0, gate_variance/d), (a, b) ~
/// N(0, expert_variance/d), nu = |N(0, expert_variance/d)| resampled while 0.
/// The result is anchored.
MixingMeasure sample_true_measure(int d, std::uint64_t seed, const TruthPrior& prior = {});

/// X ~ Uniform[0,1]^d, component ~ gate(X), Y ~ N(a^T X + b, nu).
RegressionDataset sample_synthetic(const MixingMeasure& truth, int n, std::uint64_t seed);

struct EmOptions {
  double tolerance = 1e-6;
  int max_iterations = 2000;
  int gate_passes = 5;
  double armijo = 1e-4;
  /// Trial step for every backtracking search, on the per-sample objective.
  double initial_step = 1.0;
  int max_halvings = 40;
  double nu_floor = 1e-8;
  double collapse_threshold = 1e-12;
};

struct EmResult {
  MixingMeasure fit;
  /// Average log-likelihood at the initial point followed by one entry per
  /// EM iteration.
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  /// Number of (iteration, component) pairs frozen due to responsibility collapse.
  int collapse_events = 0;

  double final_loglik() const { return trace.back(); }
};

/// Generalised EM. The E-step computes responsibilities under the dense
/// Laplace gate. The M-step solves weighted least squares for every (a_i, b_i),
/// sets nu_i to the weighted residual variance (floored), then runs block
/// coordinate gradient ascent on the gate parameters (W_i, beta_i) with an
/// Armijo backtracking line search. beta of the last component stays at 0.
EmResult em_fit(const RegressionDataset& data, const MixingMeasure& init, const EmOptions& options = {});

struct NearTruthInit {
  MixingMeasure measure;
  /// cell_of[i] is the true atom fitted component i was seeded from.
  std::vector<int> cell_of;
};

/// Randomly partition [k] into truth.k() nonempty cells and seed each fitted
/// component from its cell's true atom plus N(0, perturb_std^2) noise on every
/// coordinate. nu is reflected to |nu| and floored at nu_floor; beta is
/// re-anchored.
NearTruthInit init_near_truth(const MixingMeasure& truth, int k, double perturb_std, std::uint64_t seed,
                              double nu_floor = 1e-8);

}  // namespace lapmoe
