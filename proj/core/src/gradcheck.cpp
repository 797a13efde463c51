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

#include "lapmoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "lapmoe/fusion.hpp"
#include "lapmoe/gating.hpp"
#include "lapmoe/irregularity.hpp"

namespace lapmoe {

std::string to_string(GradScope scope) {
  switch (scope) {
    case GradScope::Gating:
      return "gating";
    case GradScope::Fusion:
      return "fusion";
    case GradScope::Irregularity:
      return "irregularity";
  }
  return "unknown";
}

GradScope parse_grad_scope(const std::string& name) {
  if (name == "gating") {
    return GradScope::Gating;
  }
  if (name == "fusion") {
    return GradScope::Fusion;
  }
  if (name == "irregularity") {
    return GradScope::Irregularity;
  }
  throw std::invalid_argument("unknown gradcheck scope '" + name + "'");
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw std::invalid_argument("relative_error: shape mismatch");
  }
  if (analytic.size() == 0) {
    return 0.0;
  }
  const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-3});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

int GradcheckReport::failures() const {
  return static_cast<int>(std::count_if(instances.begin(), instances.end(), [](const InstanceReport& r) { return !r.passed; }));
}

namespace {

using Rng = std::mt19937_64;

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  return Matrix(rows, cols).unaryExpr([&](double) { return nd(rng); });
}

int uniform_int(int lo, int hi, Rng& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Central difference of a scalar function with respect to every entry of m.
template <typename Mat>
Matrix numeric_gradient(Mat& m, double h, const std::function<double()>& f) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double orig = m(i, j);
      m(i, j) = orig + h;
      const double up = f();
      m(i, j) = orig - h;
      const double down = f();
      m(i, j) = orig;
      out(i, j) = (up - down) / (2.0 * h);
    }
  }
  return out;
}

// Returns true when x sits far enough from every selection boundary and
// Laplace collision.
bool clear_of_boundaries(const Vector& x, const GateParams& g, double guard) {
  const Vector scores = gate_scores(x, g);
  if (selection_margin(scores, g.k()) < guard) {
    return false;
  }
  if (g.kind() == GateKind::Laplace) {
    for (int s = 0; s < g.experts(); ++s) {
      if ((g.w().col(s) - x).norm() < guard) {
        return false;
      }
    }
  }
  return true;
}


InstanceReport finish(int index, std::string variant, std::vector<std::pair<std::string, std::pair<Matrix, Matrix>>> groups,
                      const GradcheckOptions& opts, int resampled) {
  InstanceReport r;
  r.index = index;
  r.variant = std::move(variant);
  r.resampled = resampled;
  if (opts.inject_fault && !groups.empty() && groups.front().second.first.size() > 0) {
    groups.front().second.first(0, 0) += 1.0;
  }
  for (auto& [name, mats] : groups) {
    const double e = relative_error(mats.first, mats.second);
    r.groups.push_back({name, e});
    r.max_rel_error = std::max(r.max_rel_error, e);
  }
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error <= opts.tolerance;
  return r;
}

constexpr int kMaxDraws = 1000;

InstanceReport gating_instance(int index, GateKind kind, const GradcheckOptions& opts) {
  Rng rng(derive_seed(opts.seed, {1, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(index)}));
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    const int d = uniform_int(1, 4, rng);
    const int s = uniform_int(2, 6, rng);
    const int k = uniform_int(1, s, rng);
    Vector x = gaussian(d, 1, 1.0, rng);
    GateParams g(gaussian(d, s, 1.0, rng), kind, k);
    if (!clear_of_boundaries(x, g, opts.boundary_guard)) {
      continue;
    }
    const GateJacobian jac = gate_jacobian(x, g);
    Matrix num_dx(s, d);
    Matrix num_dw(s, static_cast<Eigen::Index>(d) * s);
    for (int e = 0; e < s; ++e) {
      num_dx.row(e) = numeric_gradient(x, opts.step, [&] { return topk_gate(x, g).weights(e); }).transpose();
      Matrix& w = g.mutable_w();
      const Matrix dw = numeric_gradient(w, opts.step, [&] { return topk_gate(x, g).weights(e); });
      num_dw.row(e) = Eigen::Map<const Vector>(dw.data(), dw.size()).transpose();
    }
    return finish(index, to_string(kind), {{"d_x", {jac.d_x, num_dx}}, {"d_w", {jac.d_w, num_dw}}}, opts, draw);
  }
  throw std::runtime_error("gradcheck: could not draw a gating instance clear of selection boundaries");
}

// Router inputs of a substituted batch, mirroring route_and_fuse.
std::vector<Matrix> router_inputs(const ModalityBatch& batch, RouterMode mode) {
  if (mode != RouterMode::Joint) {
    return batch.embeddings;
  }
  Matrix cat(batch.tokens(), static_cast<Eigen::Index>(batch.modalities()) * batch.dim());
  for (int j = 0; j < batch.modalities(); ++j) {
    cat.middleCols(static_cast<Eigen::Index>(j) * batch.dim(), batch.dim()) = batch.embeddings[static_cast<std::size_t>(j)];
  }
  return {cat};
}

double quadratic_loss(const std::vector<Matrix>& fused, const std::vector<Matrix>& weights, std::vector<Matrix>* grad) {
  double total = 0.0;
  if (grad != nullptr) {
    grad->clear();
  }
  for (std::size_t r = 0; r < fused.size(); ++r) {
    total += (weights[r].array() * fused[r].array()).sum() + 0.5 * fused[r].squaredNorm();
    if (grad != nullptr) {
      grad->push_back(weights[r] + fused[r]);
    }
  }
  return total;
}

InstanceReport fusion_instance(int index, RouterMode mode, const GradcheckOptions& opts) {
  Rng rng(derive_seed(opts.seed, {2, static_cast<std::uint64_t>(mode), static_cast<std::uint64_t>(index)}));
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    const int m = uniform_int(2, 3, rng);
    const int tokens = uniform_int(1, 3, rng);
    const int dim = uniform_int(1, 3, rng);
    const int s = mode == RouterMode::Disjoint ? 2 * m : 4;
    const int hidden = uniform_int(1, 4, rng);
    const GateKind kind = static_cast<GateKind>(uniform_int(0, 2, rng));
    const int width = mode == RouterMode::Joint ? m * dim : dim;

    FusionLayer layer;
    layer.router.mode = mode;
    for (int e = 0; e < s; ++e) {
      ExpertParams ex{gaussian(hidden, width, 0.7, rng), gaussian(hidden, 1, 0.3, rng), gaussian(width, hidden, 0.7, rng),
                      gaussian(width, 1, 0.3, rng)};
      layer.experts.push_back(std::move(ex));
    }
    switch (mode) {
      case RouterMode::Joint:
        layer.gates.emplace_back(gaussian(width, s, 1.0, rng), kind, 2);
        break;
      case RouterMode::PerModality:
        for (int j = 0; j < m; ++j) {
          layer.gates.emplace_back(gaussian(width, s, 1.0, rng), kind, uniform_int(1, s, rng));
        }
        break;
      case RouterMode::Disjoint:
        layer.router.groups = contiguous_groups(s, m);
        for (int j = 0; j < m; ++j) {
          layer.gates.emplace_back(gaussian(width, 2, 1.0, rng), kind, uniform_int(1, 2, rng));
        }
        break;
    }
    layer.missing.z = gaussian(tokens, dim, 0.5, rng);

    ModalityBatch batch;
    for (int j = 0; j < m; ++j) {
      batch.embeddings.push_back(gaussian(tokens, dim, 1.0, rng));
      batch.present.push_back(true);
    }
    // Every other instance drops one modality so Z_learn is exercised in each mode.
    if (index % 2 == 1) {
      batch.present[static_cast<std::size_t>(uniform_int(0, m - 1, rng))] = false;
    }

    const ModalityBatch sub = substitute_missing(batch, layer.missing);
    bool clear = true;
    const std::vector<Matrix> inputs = router_inputs(sub, mode);
    for (std::size_t r = 0; r < inputs.size() && clear; ++r) {
      for (Eigen::Index t = 0; t < inputs[r].rows() && clear; ++t) {
        clear = clear_of_boundaries(inputs[r].row(t).transpose(), layer.gates[r], opts.boundary_guard);
      }
    }
    if (!clear) {
      continue;
    }

    std::vector<Matrix> weights;
    for (const Matrix& in : inputs) {
      weights.push_back(gaussian(in.rows(), width, 1.0, rng));
    }
    const OutputLoss loss = [&](const std::vector<Matrix>& fused, std::vector<Matrix>* grad) {
      return quadratic_loss(fused, weights, grad);
    };
    const FusionGradients an = fusion_gradients(loss, batch, layer);
    auto f = [&] { return loss(fusion_forward(batch, layer).fused, nullptr); };

    std::vector<std::pair<std::string, std::pair<Matrix, Matrix>>> groups;
    auto stack = [](const std::vector<Matrix>& blocks) {
      Eigen::Index rows = 0;
      for (const Matrix& b : blocks) {
        rows += b.size();
      }
      Matrix out(rows, 1);
      Eigen::Index at = 0;
      for (const Matrix& b : blocks) {
        out.middleRows(at, b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
        at += b.size();
      }
      return out;
    };
    std::vector<Matrix> an_w1, an_b1, an_w2, an_b2, nu_w1, nu_b1, nu_w2, nu_b2;
    for (std::size_t e = 0; e < layer.experts.size(); ++e) {
      ExpertParams& ex = layer.experts[e];
      an_w1.push_back(an.experts[e].w1);
      an_b1.push_back(an.experts[e].b1);
      an_w2.push_back(an.experts[e].w2);
      an_b2.push_back(an.experts[e].b2);
      nu_w1.push_back(numeric_gradient(ex.w1, opts.step, f));
      nu_b1.push_back(numeric_gradient(ex.b1, opts.step, f));
      nu_w2.push_back(numeric_gradient(ex.w2, opts.step, f));
      nu_b2.push_back(numeric_gradient(ex.b2, opts.step, f));
    }
    groups.push_back({"expert.w1", {stack(an_w1), stack(nu_w1)}});
    groups.push_back({"expert.b1", {stack(an_b1), stack(nu_b1)}});
    groups.push_back({"expert.w2", {stack(an_w2), stack(nu_w2)}});
    groups.push_back({"expert.b2", {stack(an_b2), stack(nu_b2)}});
    std::vector<Matrix> nu_gates;
    for (GateParams& g : layer.gates) {
      nu_gates.push_back(numeric_gradient(g.mutable_w(), opts.step, f));
    }
    groups.push_back({"gate.w", {stack(an.gates), stack(nu_gates)}});
    groups.push_back({"missing", {an.missing, numeric_gradient(layer.missing.z, opts.step, f)}});
    std::vector<Matrix> nu_inputs;
    for (Matrix& emb : batch.embeddings) {
      nu_inputs.push_back(numeric_gradient(emb, opts.step, f));
    }
    groups.push_back({"inputs", {stack(an.inputs), stack(nu_inputs)}});
    std::string variant = to_string(mode);
    if (index % 2 == 1) {
      variant += "+missing";
    }
    return finish(index, variant, std::move(groups), opts, draw);
  }
  throw std::runtime_error("gradcheck: could not draw a fusion instance clear of selection boundaries");
}

InstanceReport irregularity_instance(int index, const GradcheckOptions& opts) {
  Rng rng(derive_seed(opts.seed, {3, static_cast<std::uint64_t>(index)}));
  const double t_max = 48.0;
  const int channels = uniform_int(1, 3, rng);
  const int heads = uniform_int(1, 3, rng);
  const int time_dim = uniform_int(2, 4, rng);
  const int attn_dim = uniform_int(1, 4, rng);
  const int embed_dim = uniform_int(1, 4, rng);
  const int bins = uniform_int(1, 5, rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  IrregularSeries series;
  series.channels.resize(static_cast<std::size_t>(channels));
  for (auto& ch : series.channels) {
    const int l = uniform_int(0, 5, rng);
    for (int i = 0; i < l; ++i) {
      ch.push_back({t_max * unit(rng), gaussian(1, 1, 1.0, rng)(0, 0)});
    }
    std::sort(ch.begin(), ch.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
  }
  MtandParams p;
  for (int h = 0; h < heads; ++h) {
    AttentionHead head;
    head.emb.freq = gaussian(time_dim, 1, 0.1, rng);
    head.emb.phase = gaussian(time_dim, 1, 1.0, rng);
    head.query = gaussian(time_dim, attn_dim, 0.7, rng);
    head.key = gaussian(time_dim, attn_dim, 0.7, rng);
    p.heads.push_back(std::move(head));
  }
  p.projection = gaussian(embed_dim, static_cast<Eigen::Index>(heads) * channels, 1.0, rng);
  const Vector queries = query_bins(bins, t_max);
  const Vector means = gaussian(channels, 1, 1.0, rng);
  const Matrix weights = gaussian(bins, embed_dim, 1.0, rng);

  auto f = [&] {
    const Matrix z = mtand_discretize(series, queries, p, means).z;
    return (weights.array() * z.array()).sum() + 0.5 * z.squaredNorm();
  };
  const Matrix z = mtand_discretize(series, queries, p, means).z;
  const MtandGradients an = mtand_gradients(series, queries, p, means, weights + z);

  Matrix an_freq(time_dim, heads), an_phase(time_dim, heads), nu_freq(time_dim, heads), nu_phase(time_dim, heads);
  Matrix an_q(time_dim, static_cast<Eigen::Index>(attn_dim) * heads), nu_q(an_q.rows(), an_q.cols());
  Matrix an_k(an_q.rows(), an_q.cols()), nu_k(an_q.rows(), an_q.cols());
  for (int h = 0; h < heads; ++h) {
    AttentionHead& head = p.heads[static_cast<std::size_t>(h)];
    const HeadGradients& hg = an.heads[static_cast<std::size_t>(h)];
    an_freq.col(h) = hg.freq;
    an_phase.col(h) = hg.phase;
    an_q.middleCols(static_cast<Eigen::Index>(h) * attn_dim, attn_dim) = hg.query;
    an_k.middleCols(static_cast<Eigen::Index>(h) * attn_dim, attn_dim) = hg.key;
    nu_freq.col(h) = numeric_gradient(head.emb.freq, opts.step, f);
    nu_phase.col(h) = numeric_gradient(head.emb.phase, opts.step, f);
    nu_q.middleCols(static_cast<Eigen::Index>(h) * attn_dim, attn_dim) = numeric_gradient(head.query, opts.step, f);
    nu_k.middleCols(static_cast<Eigen::Index>(h) * attn_dim, attn_dim) = numeric_gradient(head.key, opts.step, f);
  }
  const Matrix nu_p = numeric_gradient(p.projection, opts.step, f);
  return finish(index, "mtand",
                {{"projection", {an.projection, nu_p}},
                 {"freq", {an_freq, nu_freq}},
                 {"phase", {an_phase, nu_phase}},
                 {"query", {an_q, nu_q}},
                 {"key", {an_k, nu_k}}},
                opts, 0);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (!(options.tolerance > 0.0)) {
    throw std::invalid_argument("gradcheck: tolerance must be positive");
  }
  if (!(options.step > 0.0)) {
    throw std::invalid_argument("gradcheck: finite-difference step must be positive");
  }
  if (options.instances < 1) {
    throw std::invalid_argument("gradcheck: need at least one instance");
  }
  GradcheckReport report;
  report.scope = options.scope;
  report.tolerance = options.tolerance;
  switch (options.scope) {
    case GradScope::Gating:
      for (GateKind kind : {GateKind::Softmax, GateKind::Laplace, GateKind::Gaussian}) {
        for (int i = 0; i < options.instances; ++i) {
          report.instances.push_back(gating_instance(i, kind, options));
        }
      }
      break;
    case GradScope::Fusion:
      for (RouterMode mode : {RouterMode::Joint, RouterMode::PerModality, RouterMode::Disjoint}) {
        for (int i = 0; i < options.instances; ++i) {
          report.instances.push_back(fusion_instance(i, mode, options));
        }
      }
      break;
    case GradScope::Irregularity:
      for (int i = 0; i < options.instances; ++i) {
        report.instances.push_back(irregularity_instance(i, options));
      }
      break;
  }
  return report;
}

void write_gradcheck_report(std::ostream& out, const GradcheckReport& report) {
  for (const InstanceReport& r : report.instances) {
    out << (r.passed ? "ok   " : "FAIL ") << to_string(report.scope) << ' ' << r.variant << " #" << r.index
        << " max_rel_err=" << format_double(r.max_rel_error);
    if (r.resampled > 0) {
      out << " resampled=" << r.resampled;
    }
    if (!r.passed) {
      for (const GroupError& g : r.groups) {
        out << ' ' << g.name << '=' << format_double(g.rel_error);
      }
    }
    out << '\n';
  }
  double worst = 0.0;
  for (const InstanceReport& r : report.instances) {
    worst = std::max(worst, r.max_rel_error);
  }
  out << to_string(report.scope) << ": " << report.instances.size() - static_cast<std::size_t>(report.failures()) << '/'
      << report.instances.size() << " passed, worst relative error " << format_double(worst) << ", tolerance "
      << format_double(report.tolerance) << '\n';
}

}  // namespace lapmoe
