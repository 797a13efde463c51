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

// Sparse Top-K gating.
//
// Scores per expert s (W_s is column s of the D x S embedding matrix):
//   Softmax   h_s = x . W_s
//   Laplace   h_s = -||W_s - x||
//   Gaussian  h_s = -0.5 ||W_s - x||^2
// The K largest scores are kept (ties -> lower index) and renormalised with a
// max-subtracted softmax; every other weight is exactly zero.

#pragma once

#include <string>
#include <vector>

#include "lapmoe/numeric.hpp"

namespace lapmoe {

enum class GateKind { Softmax, Laplace, Gaussian };

std::string to_string(GateKind kind);
GateKind parse_gate_kind(const std::string& name);

class GateParams {
 public:
  GateParams(Matrix w, GateKind kind, int k);

  const Matrix& w() const { return w_; }
  Matrix& mutable_w() { return w_; }
  GateKind kind() const { return kind_; }
  int k() const { return k_; }
  int experts() const { return static_cast<int>(w_.cols()); }
  int dim() const { return static_cast<int>(w_.rows()); }

 private:
  Matrix w_;
  GateKind kind_;
  int k_;
};

struct SparseGateWeights {
  Vector weights;
  /// Selected expert indices in descending score order.
  std::vector<int> selected;
  /// The K-th and (K+1)-th scores are equal; selection was fixed by the tie rule.
  bool tie = false;
};

/// Raw scores h_s for every expert.
Vector gate_scores(const Vector& x, const GateParams& g);

/// Top-K selection plus restricted softmax over arbitrary scores.
SparseGateWeights sparse_softmax(const Vector& scores, int k);

SparseGateWeights topk_gate(const Vector& x, const GateParams& g);

/// Gap between the K-th and (K+1)-th largest score; +inf when K == S.
double selection_margin(const Vector& scores, int k);

struct GateJacobian {
  /// S x D. Row s is d weight_s / d x.
  Matrix d_x;
  /// S x (D*S). Column s*D + d is d / d W(d, s).
  Matrix d_w;
  bool tie = false;
  /// A Laplace score was evaluated at x == W_s, where the zero subgradient is used.
  bool subgradient = false;
};

/// Jacobians of topk_gate with the selection held fixed.
GateJacobian gate_jacobian(const Vector& x, const GateParams& g);

}  // namespace lapmoe
