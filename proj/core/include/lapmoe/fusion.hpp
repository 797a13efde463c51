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

// Multimodal MoE fusion layer: GeLU feed-forward experts, three router
// layouts, learnable substitution for missing modalities, auxiliary losses and
// hand-written reverse-mode gradients.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lapmoe/gating.hpp"
#include "lapmoe/numeric.hpp"

namespace lapmoe {

/// Two-layer FFN: W2 * GeLU(W1 z + b1) + b2.
struct ExpertParams {
  Matrix w1;  // H x D
  Vector b1;  // H
  Matrix w2;  // D_out x H
  Vector b2;  // D_out

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int out_dim() const { return static_cast<int>(w2.rows()); }
  void validate() const;
};

Vector expert_forward(const ExpertParams& e, const Vector& z);

/// Expert computing exactly z -> A z, using GeLU(u) - GeLU(-u) = u with
/// W1 = [I; -I] and W2 = [A, -A].
ExpertParams linear_expert(const Matrix& a);
ExpertParams zero_expert(int in_dim, int hidden, int out_dim);
/// Gaussian init with the given standard deviation, zero biases.
ExpertParams random_expert(int in_dim, int hidden, int out_dim, double stddev, std::uint64_t seed);

/// M modality embeddings, each tokens x dim.
struct ModalityBatch {
  std::vector<Matrix> embeddings;
  std::vector<bool> present;
  std::vector<std::string> ids;
  /// Set by substitute_missing for modalities whose rows now come from the
  /// learnable embedding.
  std::vector<bool> substituted;

  int modalities() const { return static_cast<int>(embeddings.size()); }
  int tokens() const { return embeddings.empty() ? 0 : static_cast<int>(embeddings.front().rows()); }
  int dim() const { return embeddings.empty() ? 0 : static_cast<int>(embeddings.front().cols()); }
  void validate() const;
};

struct MissingEmbedding {
  Matrix z;  // tokens x dim

  /// Entries i.i.d. N(0, stddev^2).
  static MissingEmbedding random(int tokens, int dim, std::uint64_t seed, double stddev = 0.02);
};

/// Replace every absent modality by the learnable embedding. Idempotent.
ModalityBatch substitute_missing(const ModalityBatch& batch, const MissingEmbedding& missing);

enum class RouterMode { Joint, PerModality, Disjoint };

std::string to_string(RouterMode mode);
RouterMode parse_router_mode(const std::string& name);

struct RouterConfig {
  RouterMode mode = RouterMode::Joint;
  /// Disjoint only: groups[m] is the expert pool of modality m.
  std::vector<std::vector<int>> groups;

  void validate(int modalities, int experts) const;
};

/// Split S experts into M contiguous groups of near-equal size.
std::vector<std::vector<int>> contiguous_groups(int experts, int modalities);

struct FusionOutput {
  /// Joint: one tokens x D_out matrix. Otherwise one per modality.
  std::vector<Matrix> fused;
  /// gate_records[r][t] is the length-S gate weight vector of router r at
  /// token t (zeros outside a Disjoint group).
  std::vector<std::vector<Vector>> gate_records;
  bool tie = false;
};

/// Joint: the router input is the feature-wise concatenation of all
/// modalities at each token. PerModality: gates[m] routes modality m over the
/// shared pool. Disjoint: gates[m] routes modality m within groups[m].
FusionOutput route_and_fuse(const ModalityBatch& batch, std::span<const ExpertParams> experts,
                            std::span<const GateParams> gates, const RouterConfig& router);

/// Mean per-modality expert entropy minus entropy of the mean distribution,
/// given the per-modality expert marginals p_hat.
double entropy_reg_loss_from_marginals(std::span<const Vector> marginals);
/// Same, with each p_hat taken as the mean of that modality's gate records.
double entropy_reg_loss(const std::vector<std::vector<Vector>>& gate_records);

/// Squared coefficient of variation of per-expert summed gate weight,
/// population variance.
double importance_loss(std::span<const Vector> gate_records);

struct FusionConfig {
  int experts = 16;
  int top_k = 4;
  int disjoint_top_k = 2;
  int hidden = 512;
  int layers = 3;
  GateKind gate = GateKind::Laplace;
  RouterMode router = RouterMode::Joint;
  double init_std = 0.02;
};

struct FusionLayer {
  std::vector<ExpertParams> experts;
  std::vector<GateParams> gates;
  RouterConfig router;
  MissingEmbedding missing;
};

/// Random layer for `modalities` inputs of shape tokens x dim. Experts map
/// their router input back to the same width so layers can be stacked.
FusionLayer make_fusion_layer(const FusionConfig& cfg, int modalities, int tokens, int dim, std::uint64_t seed);

/// substitute_missing followed by route_and_fuse.
FusionOutput fusion_forward(const ModalityBatch& batch, const FusionLayer& layer);

/// Run layers in sequence. Joint outputs are split back into per-modality
/// blocks before the next layer.
FusionOutput stack_forward(const ModalityBatch& batch, std::span<const FusionLayer> layers);

struct ExpertGradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

/// Loss on the fused outputs. Must write dL/d fused into *grad when grad is
/// non-null.
using OutputLoss = std::function<double(const std::vector<Matrix>& fused, std::vector<Matrix>* grad)>;

struct FusionGradients {
  double loss = 0.0;
  std::vector<ExpertGradients> experts;
  /// Same shape as each GateParams::w().
  std::vector<Matrix> gates;
  Matrix missing;
  /// Gradients w.r.t. present modality embeddings (zero for substituted ones).
  std::vector<Matrix> inputs;
  bool tie = false;
};

/// Reverse-mode gradients of loss(fusion_forward(batch, layer)) with every
/// Top-K selection held fixed.
FusionGradients fusion_gradients(const OutputLoss& loss, const ModalityBatch& batch, const FusionLayer& layer);

}  // namespace lapmoe
