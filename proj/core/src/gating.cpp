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

#include "lapmoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lapmoe {

std::string to_string(GateKind kind) {
  switch (kind) {
    case GateKind::Softmax:
      return "softmax";
    case GateKind::Laplace:
      return "laplace";
    case GateKind::Gaussian:
      return "gaussian";
  }
  return "unknown";
}

GateKind parse_gate_kind(const std::string& name) {
  if (name == "softmax") {
    return GateKind::Softmax;
  }
  if (name == "laplace") {
    return GateKind::Laplace;
  }
  if (name == "gaussian") {
    return GateKind::Gaussian;
  }
  throw std::invalid_argument("unknown gate kind '" + name + "'");
}

GateParams::GateParams(Matrix w, GateKind kind, int k) : w_(std::move(w)), kind_(kind), k_(k) {
  if (w_.cols() < 1 || w_.rows() < 1) {
    throw std::invalid_argument("GateParams: embedding matrix must be non-empty");
  }
  if (k_ < 1 || k_ > w_.cols()) {
    throw std::invalid_argument("GateParams: K=" + std::to_string(k_) + " must lie in [1, " +
                                std::to_string(w_.cols()) + "]");
  }
  if (!w_.allFinite()) {
    throw std::invalid_argument("GateParams: non-finite expert embedding");
  }
}

namespace {

void check_input(const Vector& x, const GateParams& g) {
  if (x.size() != g.dim()) {
    throw std::invalid_argument("topk_gate: input has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(g.dim()));
  }
  if (!x.allFinite()) {
    throw std::invalid_argument("topk_gate: non-finite input");
  }
}

// Indices sorted by descending score, ties by ascending index.
std::vector<int> ranking(const Vector& scores) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(a) > scores(b); });
  return order;
}

}  // namespace

Vector gate_scores(const Vector& x, const GateParams& g) {
  check_input(x, g);
  const Matrix& w = g.w();
  Vector h(g.experts());
  for (int s = 0; s < g.experts(); ++s) {
    switch (g.kind()) {
      case GateKind::Softmax:
        h(s) = x.dot(w.col(s));
        break;
      case GateKind::Laplace:
        h(s) = -(w.col(s) - x).norm();
        break;
      case GateKind::Gaussian:
        h(s) = -0.5 * (w.col(s) - x).squaredNorm();
        break;
    }
  }
  return h;
}

SparseGateWeights sparse_softmax(const Vector& scores, int k) {
  if (k < 1 || k > scores.size()) {
    throw std::invalid_argument("sparse_softmax: K out of range");
  }
  if (!scores.allFinite()) {
    throw std::invalid_argument("sparse_softmax: non-finite score");
  }
  const std::vector<int> order = ranking(scores);
  SparseGateWeights out;
  out.selected.assign(order.begin(), order.begin() + k);
  out.tie = k < scores.size() && scores(order[static_cast<std::size_t>(k - 1)]) == scores(order[static_cast<std::size_t>(k)]);
  out.weights = Vector::Zero(scores.size());
  const double top = scores(out.selected.front());
  double total = 0.0;
  for (int s : out.selected) {
    const double e = std::exp(scores(s) - top);
    out.weights(s) = e;
    total += e;
  }
  for (int s : out.selected) {
    out.weights(s) /= total;
  }
  return out;
}

SparseGateWeights topk_gate(const Vector& x, const GateParams& g) { return sparse_softmax(gate_scores(x, g), g.k()); }

double selection_margin(const Vector& scores, int k) {
  if (k >= scores.size()) {
    return std::numeric_limits<double>::infinity();
  }
  const std::vector<int> order = ranking(scores);
  return scores(order[static_cast<std::size_t>(k - 1)]) - scores(order[static_cast<std::size_t>(k)]);
}

GateJacobian gate_jacobian(const Vector& x, const GateParams& g) {
  const SparseGateWeights sg = topk_gate(x, g);
  const int S = g.experts();
  const int D = g.dim();
  const Matrix& w = g.w();

  // d h_s / d x for every selected s; d h_s / d W_s is the negation for the
  // distance kinds and x for the inner product.
  Matrix score_dx = Matrix::Zero(D, S);
  Matrix score_dw = Matrix::Zero(D, S);
  GateJacobian jac;
  jac.tie = sg.tie;
  for (int s : sg.selected) {
    switch (g.kind()) {
      case GateKind::Softmax:
        score_dx.col(s) = w.col(s);
        score_dw.col(s) = x;
        break;
      case GateKind::Laplace: {
        const Vector diff = w.col(s) - x;
        const double dist = diff.norm();
        if (dist > 0.0) {
          score_dx.col(s) = diff / dist;
          score_dw.col(s) = -diff / dist;
        } else {
          jac.subgradient = true;
        }
        break;
      }
      case GateKind::Gaussian: {
        const Vector diff = w.col(s) - x;
        score_dx.col(s) = diff;
        score_dw.col(s) = -diff;
        break;
      }
    }
  }

  jac.d_x = Matrix::Zero(S, D);
  jac.d_w = Matrix::Zero(S, static_cast<Eigen::Index>(D) * S);
  for (int i : sg.selected) {
    for (int j : sg.selected) {
      const double dg = sg.weights(i) * ((i == j ? 1.0 : 0.0) - sg.weights(j));
      jac.d_x.row(i) += dg * score_dx.col(j).transpose();
      jac.d_w.block(i, static_cast<Eigen::Index>(j) * D, 1, D) = dg * score_dw.col(j).transpose();
    }
  }
  return jac;
}

}  // namespace lapmoe
