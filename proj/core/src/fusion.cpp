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

#include "lapmoe/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace lapmoe {

void ExpertParams::validate() const {
  if (w1.rows() < 1 || w1.cols() < 1) {
    throw std::invalid_argument("ExpertParams: hidden and input sizes must be >= 1");
  }
  if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows()) {
    throw std::invalid_argument("ExpertParams: inconsistent layer shapes");
  }
  if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite()) {
    throw std::invalid_argument("ExpertParams: non-finite parameter");
  }
}

Vector expert_forward(const ExpertParams& e, const Vector& z) {
  if (z.size() != e.in_dim()) {
    throw std::invalid_argument("expert_forward: input has dimension " + std::to_string(z.size()) + ", expected " +
                                std::to_string(e.in_dim()));
  }
  const Vector pre = e.w1 * z + e.b1;
  return e.w2 * pre.unaryExpr([](double u) { return gelu(u); }) + e.b2;
}

ExpertParams linear_expert(const Matrix& a) {
  const auto d = a.cols();
  ExpertParams e;
  e.w1.resize(2 * d, d);
  e.w1 << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  e.b1 = Vector::Zero(2 * d);
  e.w2.resize(a.rows(), 2 * d);
  e.w2 << a, -a;
  e.b2 = Vector::Zero(a.rows());
  return e;
}

ExpertParams zero_expert(int in_dim, int hidden, int out_dim) {
  return {Matrix::Zero(hidden, in_dim), Vector::Zero(hidden), Matrix::Zero(out_dim, hidden), Vector::Zero(out_dim)};
}

ExpertParams random_expert(int in_dim, int hidden, int out_dim, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, stddev);
  ExpertParams e = zero_expert(in_dim, hidden, out_dim);
  e.w1 = e.w1.unaryExpr([&](double) { return nd(rng); });
  e.w2 = e.w2.unaryExpr([&](double) { return nd(rng); });
  return e;
}

void ModalityBatch::validate() const {
  if (embeddings.empty()) {
    throw std::invalid_argument("ModalityBatch: need at least one modality");
  }
  const auto m = embeddings.size();
  if (present.size() != m || (!ids.empty() && ids.size() != m) || (!substituted.empty() && substituted.size() != m)) {
    throw std::invalid_argument("ModalityBatch: mask/label sizes do not match the modality count");
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (embeddings[j].rows() != embeddings.front().rows() || embeddings[j].cols() != embeddings.front().cols()) {
      throw std::invalid_argument("ModalityBatch: modality embeddings differ in shape");
    }
    if (present[j] && !embeddings[j].allFinite()) {
      throw std::invalid_argument("ModalityBatch: non-finite embedding in a present modality");
    }
  }
  if (tokens() < 1 || dim() < 1) {
    throw std::invalid_argument("ModalityBatch: empty embeddings");
  }
}

MissingEmbedding MissingEmbedding::random(int tokens, int dim, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, stddev);
  MissingEmbedding m;
  m.z = Matrix(tokens, dim).unaryExpr([&](double) { return nd(rng); });
  return m;
}

ModalityBatch substitute_missing(const ModalityBatch& batch, const MissingEmbedding& missing) {
  batch.validate();
  ModalityBatch out = batch;
  out.substituted.resize(out.embeddings.size(), false);
  for (std::size_t j = 0; j < out.embeddings.size(); ++j) {
    if (out.present[j]) {
      continue;
    }
    if (missing.z.rows() != batch.tokens() || missing.z.cols() != batch.dim()) {
      throw std::invalid_argument("substitute_missing: learnable embedding is " + std::to_string(missing.z.rows()) +
                                  "x" + std::to_string(missing.z.cols()) + ", modality embeddings are " +
                                  std::to_string(batch.tokens()) + "x" + std::to_string(batch.dim()));
    }
    out.embeddings[j] = missing.z;
    out.substituted[j] = true;
  }
  return out;
}

std::string to_string(RouterMode mode) {
  switch (mode) {
    case RouterMode::Joint:
      return "joint";
    case RouterMode::PerModality:
      return "per-modality";
    case RouterMode::Disjoint:
      return "disjoint";
  }
  return "unknown";
}

RouterMode parse_router_mode(const std::string& name) {
  if (name == "joint") {
    return RouterMode::Joint;
  }
  if (name == "per-modality") {
    return RouterMode::PerModality;
  }
  if (name == "disjoint") {
    return RouterMode::Disjoint;
  }
  throw std::invalid_argument("unknown router mode '" + name + "'");
}

void RouterConfig::validate(int modalities, int experts) const {
  if (mode != RouterMode::Disjoint) {
    return;
  }
  if (static_cast<int>(groups.size()) != modalities) {
    throw std::invalid_argument("RouterConfig: disjoint mode needs one expert group per modality");
  }
  std::vector<int> seen(static_cast<std::size_t>(experts), 0);
  for (const auto& group : groups) {
    if (group.empty()) {
      throw std::invalid_argument("RouterConfig: empty expert group");
    }
    for (int e : group) {
      if (e < 0 || e >= experts) {
        throw std::invalid_argument("RouterConfig: expert index out of range");
      }
      if (seen[static_cast<std::size_t>(e)]++ != 0) {
        throw std::invalid_argument("RouterConfig: expert " + std::to_string(e) + " appears in two groups");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw std::invalid_argument("RouterConfig: groups do not cover every expert");
  }
}

std::vector<std::vector<int>> contiguous_groups(int experts, int modalities) {
  if (modalities < 1 || experts < modalities) {
    throw std::invalid_argument("contiguous_groups: need at least one expert per modality");
  }
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(modalities));
  for (int e = 0; e < experts; ++e) {
    groups[static_cast<std::size_t>(static_cast<long>(e) * modalities / experts)].push_back(e);
  }
  return groups;
}

namespace {

// One routing problem: a set of tokens (rows of `inputs`), one gate, and the
// global expert index of each gate column.
struct Route {
  int gate = 0;
  std::vector<int> pool;
};

struct Plan {
  std::vector<Matrix> inputs;  // one per router
  std::vector<Route> routes;
};

Plan make_plan(const ModalityBatch& batch, std::span<const ExpertParams> experts, std::span<const GateParams> gates,
               const RouterConfig& router) {
  batch.validate();
  const int m = batch.modalities();
  const int s = static_cast<int>(experts.size());
  if (s < 1) {
    throw std::invalid_argument("route_and_fuse: need at least one expert");
  }
  for (int j = 0; j < m; ++j) {
    const bool sub = j < static_cast<int>(batch.substituted.size()) && batch.substituted[static_cast<std::size_t>(j)];
    if (!batch.present[static_cast<std::size_t>(j)] && !sub) {
      throw std::invalid_argument("route_and_fuse: modality " + std::to_string(j) +
                                  " is missing and has not been substituted");
    }
  }
  router.validate(m, s);
  for (const ExpertParams& e : experts) {
    e.validate();
  }

  Plan plan;
  std::vector<int> all(static_cast<std::size_t>(s));
  for (int e = 0; e < s; ++e) {
    all[static_cast<std::size_t>(e)] = e;
  }
  switch (router.mode) {
    case RouterMode::Joint: {
      if (gates.size() != 1) {
        throw std::invalid_argument("route_and_fuse: joint mode takes exactly one gate");
      }
      Matrix cat(batch.tokens(), static_cast<Eigen::Index>(m) * batch.dim());
      for (int j = 0; j < m; ++j) {
        cat.middleCols(static_cast<Eigen::Index>(j) * batch.dim(), batch.dim()) = batch.embeddings[static_cast<std::size_t>(j)];
      }
      plan.inputs.push_back(std::move(cat));
      plan.routes.push_back({0, all});
      break;
    }
    case RouterMode::PerModality:
      if (static_cast<int>(gates.size()) != m) {
        throw std::invalid_argument("route_and_fuse: per-modality mode takes one gate per modality");
      }
      for (int j = 0; j < m; ++j) {
        plan.inputs.push_back(batch.embeddings[static_cast<std::size_t>(j)]);
        plan.routes.push_back({j, all});
      }
      break;
    case RouterMode::Disjoint:
      if (static_cast<int>(gates.size()) != m) {
        throw std::invalid_argument("route_and_fuse: disjoint mode takes one gate per modality");
      }
      for (int j = 0; j < m; ++j) {
        plan.inputs.push_back(batch.embeddings[static_cast<std::size_t>(j)]);
        plan.routes.push_back({j, router.groups[static_cast<std::size_t>(j)]});
      }
      break;
  }
  for (std::size_t r = 0; r < plan.routes.size(); ++r) {
    const GateParams& g = gates[static_cast<std::size_t>(plan.routes[r].gate)];
    if (g.experts() != static_cast<int>(plan.routes[r].pool.size())) {
      throw std::invalid_argument("route_and_fuse: gate " + std::to_string(r) + " scores " +
                                  std::to_string(g.experts()) + " experts but its pool has " +
                                  std::to_string(plan.routes[r].pool.size()));
    }
    if (g.dim() != plan.inputs[r].cols()) {
      throw std::invalid_argument("route_and_fuse: gate input dimension does not match router input");
    }
    for (int e : plan.routes[r].pool) {
      if (experts[static_cast<std::size_t>(e)].in_dim() != plan.inputs[r].cols() ||
          experts[static_cast<std::size_t>(e)].out_dim() != experts.front().out_dim()) {
        throw std::invalid_argument("route_and_fuse: expert " + std::to_string(e) +
                                    " shape does not match its router input");
      }
    }
  }
  return plan;
}

}  // namespace

FusionOutput route_and_fuse(const ModalityBatch& batch, std::span<const ExpertParams> experts,
                            std::span<const GateParams> gates, const RouterConfig& router) {
  const Plan plan = make_plan(batch, experts, gates, router);
  const int s = static_cast<int>(experts.size());
  FusionOutput out;
  for (std::size_t r = 0; r < plan.routes.size(); ++r) {
    const Route& route = plan.routes[r];
    const GateParams& gate = gates[static_cast<std::size_t>(route.gate)];
    const Matrix& in = plan.inputs[r];
    Matrix fused = Matrix::Zero(in.rows(), experts.front().out_dim());
    std::vector<Vector> records;
    records.reserve(static_cast<std::size_t>(in.rows()));
    for (Eigen::Index t = 0; t < in.rows(); ++t) {
      const Vector x = in.row(t).transpose();
      const SparseGateWeights sg = topk_gate(x, gate);
      out.tie = out.tie || sg.tie;
      Vector full = Vector::Zero(s);
      Vector y = Vector::Zero(fused.cols());
      for (int local : sg.selected) {
        const int e = route.pool[static_cast<std::size_t>(local)];
        full(e) = sg.weights(local);
        y += sg.weights(local) * expert_forward(experts[static_cast<std::size_t>(e)], x);
      }
      fused.row(t) = y.transpose();
      records.push_back(std::move(full));
    }
    out.fused.push_back(std::move(fused));
    out.gate_records.push_back(std::move(records));
  }
  return out;
}

namespace {

double entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) {
      h -= p(i) * std::log(p(i));
    }
  }
  return h;
}

}  // namespace

double entropy_reg_loss_from_marginals(std::span<const Vector> marginals) {
  if (marginals.empty()) {
    throw std::invalid_argument("entropy_reg_loss: need at least one modality");
  }
  Vector mean = Vector::Zero(marginals.front().size());
  double mean_entropy = 0.0;
  for (const Vector& p : marginals) {
    if (p.size() != mean.size()) {
      throw std::invalid_argument("entropy_reg_loss: distributions over different expert counts");
    }
    if (std::abs(p.sum() - 1.0) > 1e-9 || (p.array() < 0.0).any()) {
      throw std::invalid_argument("entropy_reg_loss: expert distribution does not sum to 1");
    }
    mean_entropy += entropy(p);
    mean += p;
  }
  const double m = static_cast<double>(marginals.size());
  return mean_entropy / m - entropy(mean / m);
}

double entropy_reg_loss(const std::vector<std::vector<Vector>>& gate_records) {
  std::vector<Vector> marginals;
  for (const auto& records : gate_records) {
    if (records.empty()) {
      throw std::invalid_argument("entropy_reg_loss: empty gate record list");
    }
    Vector p = Vector::Zero(records.front().size());
    for (const Vector& w : records) {
      p += w;
    }
    marginals.push_back(p / static_cast<double>(records.size()));
  }
  return entropy_reg_loss_from_marginals(marginals);
}

double importance_loss(std::span<const Vector> gate_records) {
  if (gate_records.empty()) {
    throw std::invalid_argument("importance_loss: no gate records");
  }
  Vector imp = Vector::Zero(gate_records.front().size());
  for (const Vector& w : gate_records) {
    imp += w;
  }
  const double mean = imp.mean();
  if (!(mean > 0.0)) {
    throw std::invalid_argument("importance_loss: all-zero importance");
  }
  const double var = (imp.array() - mean).square().mean();
  return var / (mean * mean);
}

FusionLayer make_fusion_layer(const FusionConfig& cfg, int modalities, int tokens, int dim, std::uint64_t seed) {
  if (modalities < 1 || tokens < 1 || dim < 1 || cfg.experts < 1 || cfg.hidden < 1) {
    throw std::invalid_argument("make_fusion_layer: sizes must be positive");
  }
  FusionLayer layer;
  layer.router.mode = cfg.router;
  const int width = cfg.router == RouterMode::Joint ? modalities * dim : dim;
  for (int e = 0; e < cfg.experts; ++e) {
    layer.experts.push_back(random_expert(width, cfg.hidden, width, cfg.init_std, derive_seed(seed, {1, static_cast<std::uint64_t>(e)})));
  }
  auto gate_matrix = [&](int experts, std::uint64_t tag) {
    std::mt19937_64 rng(derive_seed(seed, {2, tag}));
    std::normal_distribution<double> nd(0.0, 1.0);
    return Matrix(width, experts).unaryExpr([&](double) { return nd(rng); }).eval();
  };
  switch (cfg.router) {
    case RouterMode::Joint:
      layer.gates.emplace_back(gate_matrix(cfg.experts, 0), cfg.gate, std::min(cfg.top_k, cfg.experts));
      break;
    case RouterMode::PerModality:
      for (int j = 0; j < modalities; ++j) {
        layer.gates.emplace_back(gate_matrix(cfg.experts, static_cast<std::uint64_t>(j)), cfg.gate,
                                 std::min(cfg.top_k, cfg.experts));
      }
      break;
    case RouterMode::Disjoint:
      layer.router.groups = contiguous_groups(cfg.experts, modalities);
      for (int j = 0; j < modalities; ++j) {
        const int size = static_cast<int>(layer.router.groups[static_cast<std::size_t>(j)].size());
        layer.gates.emplace_back(gate_matrix(size, static_cast<std::uint64_t>(j)), cfg.gate,
                                 std::min(cfg.disjoint_top_k, size));
      }
      break;
  }
  layer.missing = MissingEmbedding::random(tokens, dim, derive_seed(seed, {3}));
  return layer;
}

FusionOutput fusion_forward(const ModalityBatch& batch, const FusionLayer& layer) {
  return route_and_fuse(substitute_missing(batch, layer.missing), layer.experts, layer.gates, layer.router);
}

FusionOutput stack_forward(const ModalityBatch& batch, std::span<const FusionLayer> layers) {
  if (layers.empty()) {
    throw std::invalid_argument("stack_forward: no layers");
  }
  ModalityBatch current = batch;
  FusionOutput out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out = l == 0 ? fusion_forward(current, layers[l])
                 : route_and_fuse(current, layers[l].experts, layers[l].gates, layers[l].router);
    const int m = current.modalities();
    const int dim = current.dim();
    ModalityBatch next = current;
    for (int j = 0; j < m; ++j) {
      next.embeddings[static_cast<std::size_t>(j)] =
          out.fused.size() == 1 ? Matrix(out.fused.front().middleCols(static_cast<Eigen::Index>(j) * dim, dim))
                                : out.fused[static_cast<std::size_t>(j)];
      next.present[static_cast<std::size_t>(j)] = true;
    }
    next.substituted.assign(static_cast<std::size_t>(m), false);
    current = std::move(next);
  }
  return out;
}

FusionGradients fusion_gradients(const OutputLoss& loss, const ModalityBatch& raw, const FusionLayer& layer) {
  const ModalityBatch batch = substitute_missing(raw, layer.missing);
  const std::span<const ExpertParams> experts = layer.experts;
  const std::span<const GateParams> gates = layer.gates;
  const Plan plan = make_plan(batch, experts, gates, layer.router);
  const FusionOutput fwd = route_and_fuse(batch, experts, gates, layer.router);

  FusionGradients grads;
  std::vector<Matrix> upstream;
  grads.loss = loss(fwd.fused, &upstream);
  grads.tie = fwd.tie;
  if (upstream.size() != fwd.fused.size()) {
    throw std::invalid_argument("fusion_gradients: loss returned the wrong number of gradient blocks");
  }
  for (const ExpertParams& e : experts) {
    grads.experts.push_back({Matrix::Zero(e.w1.rows(), e.w1.cols()), Vector::Zero(e.b1.size()),
                             Matrix::Zero(e.w2.rows(), e.w2.cols()), Vector::Zero(e.b2.size())});
  }
  for (const GateParams& g : gates) {
    grads.gates.push_back(Matrix::Zero(g.dim(), g.experts()));
  }

  std::vector<Matrix> input_grads;
  for (std::size_t r = 0; r < plan.routes.size(); ++r) {
    const Route& route = plan.routes[r];
    const GateParams& gate = gates[static_cast<std::size_t>(route.gate)];
    const Matrix& in = plan.inputs[r];
    const int pool = gate.experts();
    const int d = gate.dim();
    Matrix din = Matrix::Zero(in.rows(), in.cols());
    for (Eigen::Index t = 0; t < in.rows(); ++t) {
      const Vector x = in.row(t).transpose();
      const Vector u = upstream[r].row(t).transpose();
      const SparseGateWeights sg = topk_gate(x, gate);
      Vector dweights = Vector::Zero(pool);
      Vector dx = Vector::Zero(d);
      for (int local : sg.selected) {
        const int e = route.pool[static_cast<std::size_t>(local)];
        const ExpertParams& ex = experts[static_cast<std::size_t>(e)];
        ExpertGradients& eg = grads.experts[static_cast<std::size_t>(e)];
        const Vector pre = ex.w1 * x + ex.b1;
        const Vector act = pre.unaryExpr([](double v) { return gelu(v); });
        const Vector y = ex.w2 * act + ex.b2;
        dweights(local) = u.dot(y);
        const double g = sg.weights(local);
        const Vector dy = g * u;
        eg.w2 += dy * act.transpose();
        eg.b2 += dy;
        const Vector dpre = (ex.w2.transpose() * dy).cwiseProduct(pre.unaryExpr([](double v) { return gelu_derivative(v); }));
        eg.w1 += dpre * x.transpose();
        eg.b1 += dpre;
        dx += ex.w1.transpose() * dpre;
      }
      const GateJacobian jac = gate_jacobian(x, gate);
      dx += jac.d_x.transpose() * dweights;
      const Vector dw = jac.d_w.transpose() * dweights;
      grads.gates[static_cast<std::size_t>(route.gate)] += Eigen::Map<const Matrix>(dw.data(), d, pool);
      din.row(t) = dx.transpose();
    }
    input_grads.push_back(std::move(din));
  }

  const int m = batch.modalities();
  const int dim = batch.dim();
  grads.inputs.assign(static_cast<std::size_t>(m), Matrix::Zero(batch.tokens(), dim));
  for (int j = 0; j < m; ++j) {
    grads.inputs[static_cast<std::size_t>(j)] =
        layer.router.mode == RouterMode::Joint
            ? Matrix(input_grads.front().middleCols(static_cast<Eigen::Index>(j) * dim, dim))
            : input_grads[static_cast<std::size_t>(j)];
  }
  grads.missing = Matrix::Zero(layer.missing.z.rows(), layer.missing.z.cols());
  for (int j = 0; j < m; ++j) {
    if (batch.substituted[static_cast<std::size_t>(j)]) {
      grads.missing += grads.inputs[static_cast<std::size_t>(j)];
      grads.inputs[static_cast<std::size_t>(j)].setZero();
    }
  }
  return grads;
}

}  // namespace lapmoe
