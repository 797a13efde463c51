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

#include "lapmoe/gmoe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace lapmoe {

MixingMeasure::MixingMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  if (atoms_.empty()) {
    throw std::invalid_argument("MixingMeasure: need at least one component");
  }
  dim_ = static_cast<int>(atoms_.front().w.size());
  if (dim_ < 1) {
    throw std::invalid_argument("MixingMeasure: dimension must be >= 1");
  }
  for (const Atom& atom : atoms_) {
    if (atom.w.size() != dim_ || atom.a.size() != dim_) {
      throw std::invalid_argument("MixingMeasure: inconsistent component dimensions");
    }
    if (!(atom.nu > 0.0)) {
      throw std::invalid_argument("MixingMeasure: variance nu must be positive");
    }
    if (!std::isfinite(atom.beta) || !std::isfinite(atom.b) || !std::isfinite(atom.nu) || !atom.w.allFinite() ||
        !atom.a.allFinite()) {
      throw std::invalid_argument("MixingMeasure: non-finite parameter");
    }
  }
}

bool MixingMeasure::is_anchored() const { return !atoms_.empty() && atoms_.back().beta == 0.0; }

MixingMeasure MixingMeasure::anchored() const {
  MixingMeasure out = *this;
  const double shift = atoms_.back().beta;
  for (Atom& atom : out.atoms_) {
    atom.beta -= shift;
  }
  out.atoms_.back().beta = 0.0;
  return out;
}

MixingMeasure MixingMeasure::mass_normalized() const {
  MixingMeasure out = *this;
  std::vector<double> betas;
  betas.reserve(atoms_.size());
  for (const Atom& atom : atoms_) {
    betas.push_back(atom.beta);
  }
  const double lse = canonical_log_sum_exp(betas);
  for (Atom& atom : out.atoms_) {
    atom.beta -= lse;
  }
  return out;
}

MixingMeasure MixingMeasure::permuted(std::span<const int> perm) const {
  if (perm.size() != atoms_.size()) {
    throw std::invalid_argument("MixingMeasure::permuted: permutation size mismatch");
  }
  std::vector<Atom> atoms;
  atoms.reserve(atoms_.size());
  for (int p : perm) {
    atoms.push_back(atoms_.at(static_cast<std::size_t>(p)));
  }
  return MixingMeasure(std::move(atoms));
}

Vector MixingMeasure::theta(int i) const {
  const Atom& atom = (*this)[i];
  Vector t(2 * dim_ + 2);
  t << atom.w, atom.a, atom.b, atom.nu;
  return t;
}

bool MixingMeasure::operator==(const MixingMeasure& other) const {
  if (k() != other.k() || dim_ != other.dim_) {
    return false;
  }
  for (int i = 0; i < k(); ++i) {
    const Atom& p = (*this)[i];
    const Atom& q = other[i];
    if (p.beta != q.beta || p.b != q.b || p.nu != q.nu || p.w != q.w || p.a != q.a) {
      return false;
    }
  }
  return true;
}

void RegressionDataset::validate() const {
  if (y.size() < 1) {
    throw std::invalid_argument("RegressionDataset: need at least one sample");
  }
  if (x.cols() != y.size()) {
    throw std::invalid_argument("RegressionDataset: x has " + std::to_string(x.cols()) + " columns but " +
                                std::to_string(y.size()) + " responses");
  }
  if (!x.allFinite() || !y.allFinite()) {
    throw std::invalid_argument("RegressionDataset: non-finite sample");
  }
}

namespace {

std::vector<double> gate_logits(const MixingMeasure& g, const Vector& x) {
  if (x.size() != g.dim()) {
    throw std::invalid_argument("gate: input dimension does not match measure");
  }
  std::vector<double> logits(static_cast<std::size_t>(g.k()));
  for (int i = 0; i < g.k(); ++i) {
    logits[static_cast<std::size_t>(i)] = g[i].beta - (g[i].w - x).norm();
  }
  return logits;
}

}  // namespace

Vector gate_weights(const MixingMeasure& g, const Vector& x) {
  const std::vector<double> logits = gate_logits(g, x);
  const double lse = canonical_log_sum_exp(logits);
  Vector out(g.k());
  for (int i = 0; i < g.k(); ++i) {
    out(i) = std::exp(logits[static_cast<std::size_t>(i)] - lse);
  }
  return out;
}

double log_conditional_density(const MixingMeasure& g, const Vector& x, double y) {
  std::vector<double> logits = gate_logits(g, x);
  std::vector<double> joint(logits.size());
  for (int i = 0; i < g.k(); ++i) {
    const Atom& atom = g[i];
    joint[static_cast<std::size_t>(i)] =
        logits[static_cast<std::size_t>(i)] + log_normal_pdf(y, atom.a.dot(x) + atom.b, atom.nu);
  }
  return canonical_log_sum_exp(std::move(joint)) - canonical_log_sum_exp(std::move(logits));
}

double conditional_density(const MixingMeasure& g, const Vector& x, double y) {
  return std::exp(log_conditional_density(g, x, y));
}

double log_likelihood(const MixingMeasure& g, const RegressionDataset& data) {
  data.validate();
  std::vector<double> terms(static_cast<std::size_t>(data.n()));
  for (int j = 0; j < data.n(); ++j) {
    terms[static_cast<std::size_t>(j)] = log_conditional_density(g, data.x.col(j), data.y(j));
  }
  return canonical_sum(std::move(terms)) / static_cast<double>(data.n());
}

MixingMeasure sample_true_measure(int d, std::uint64_t seed, const TruthPrior& prior) {
  if (d < 1) {
    throw std::invalid_argument("sample_true_measure: d must be >= 1");
  }
  if (prior.k < 1) {
    throw std::invalid_argument("sample_true_measure: k must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gate(0.0, std::sqrt(prior.gate_variance / d));
  std::normal_distribution<double> expert(0.0, std::sqrt(prior.expert_variance / d));
  std::vector<Atom> atoms(static_cast<std::size_t>(prior.k));
  for (Atom& atom : atoms) {
    atom.w.resize(d);
    atom.a.resize(d);
    for (int c = 0; c < d; ++c) {
      atom.w(c) = gate(rng);
    }
    atom.beta = gate(rng);
  }
  for (Atom& atom : atoms) {
    for (int c = 0; c < d; ++c) {
      atom.a(c) = expert(rng);
    }
    atom.b = expert(rng);
  }
  for (Atom& atom : atoms) {
    do {
      atom.nu = std::abs(expert(rng));
    } while (atom.nu == 0.0);
  }
  return MixingMeasure(std::move(atoms)).anchored();
}

RegressionDataset sample_synthetic(const MixingMeasure& truth, int n, std::uint64_t seed) {
  if (n < 1) {
    throw std::invalid_argument("sample_synthetic: n must be >= 1");
  }
  const int d = truth.dim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  RegressionDataset data{Matrix(d, n), Vector(n)};
  for (int j = 0; j < n; ++j) {
    for (int c = 0; c < d; ++c) {
      data.x(c, j) = unif(rng);
    }
    const Vector x = data.x.col(j);
    const Vector w = gate_weights(truth, x);
    const double u = unif(rng);
    int comp = truth.k() - 1;
    double acc = 0.0;
    for (int i = 0; i < truth.k(); ++i) {
      acc += w(i);
      if (u < acc) {
        comp = i;
        break;
      }
    }
    const Atom& atom = truth[comp];
    data.y(j) = atom.a.dot(x) + atom.b + std::sqrt(atom.nu) * noise(rng);
  }
  return data;
}

namespace {

// Working state of one EM run. Arrays are k x n, component-major.
class EmState {
 public:
  EmState(const RegressionDataset& data, const MixingMeasure& init, const EmOptions& opts)
      : data_(data), opts_(opts), k_(init.k()), n_(data.n()), d_(data.dim()) {
    for (const Atom& atom : init.atoms()) {
      atoms_.push_back(atom);
    }
    atoms_.back().beta = 0.0;
    dist_ = Matrix(k_, n_);
    logit_ = Matrix(k_, n_);
    joint_ = Matrix(k_, n_);
    resp_ = Matrix(k_, n_);
    gate_lse_ = Vector(n_);
  }

  // Refresh cached quantities for the current parameters and return the
  // average log-likelihood. Also fills responsibilities.
  double evaluate() {
    std::vector<double> pointwise(static_cast<std::size_t>(n_));
    for (int j = 0; j < n_; ++j) {
      const auto x = data_.x.col(j);
      double gmax = -std::numeric_limits<double>::infinity();
      double jmax = gmax;
      for (int i = 0; i < k_; ++i) {
        const Atom& atom = atoms_[static_cast<std::size_t>(i)];
        const double dist = (atom.w - x).norm();
        dist_(i, j) = dist;
        logit_(i, j) = atom.beta - dist;
        joint_(i, j) = logit_(i, j) + log_normal_pdf(data_.y(j), atom.a.dot(x) + atom.b, atom.nu);
        gmax = std::max(gmax, logit_(i, j));
        jmax = std::max(jmax, joint_(i, j));
      }
      double gs = 0.0;
      double js = 0.0;
      for (int i = 0; i < k_; ++i) {
        gs += std::exp(logit_(i, j) - gmax);
        const double e = std::exp(joint_(i, j) - jmax);
        resp_(i, j) = e;
        js += e;
      }
      for (int i = 0; i < k_; ++i) {
        resp_(i, j) /= js;
      }
      gate_lse_(j) = gmax + std::log(gs);
      pointwise[static_cast<std::size_t>(j)] = jmax + std::log(js) - gate_lse_(j);
    }
    return canonical_sum(std::move(pointwise)) / static_cast<double>(n_);
  }

  void m_step() {
    update_experts();
    update_gate();
  }

  int collapse_events() const { return collapse_events_; }

  MixingMeasure measure() const { return MixingMeasure(atoms_); }

 private:
  void update_experts() {
    const int p = d_ + 1;
    for (int i = 0; i < k_; ++i) {
      Atom& atom = atoms_[static_cast<std::size_t>(i)];
      const double total = resp_.row(i).sum();
      if (!(total >= opts_.collapse_threshold)) {
        ++collapse_events_;
        frozen_.push_back(i);
        continue;
      }
      Matrix gram = Matrix::Zero(p, p);
      Vector rhs = Vector::Zero(p);
      Vector z(p);
      for (int j = 0; j < n_; ++j) {
        const double r = resp_(i, j);
        z.head(d_) = data_.x.col(j);
        z(d_) = 1.0;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(z, r);
        rhs += r * data_.y(j) * z;
      }
      gram = gram.selfadjointView<Eigen::Lower>();
      Eigen::LDLT<Matrix> ldlt(gram);
      if (ldlt.info() != Eigen::Success) {
        continue;
      }
      const Vector coef = ldlt.solve(rhs);
      if (!coef.allFinite()) {
        continue;
      }
      double sse = 0.0;
      for (int j = 0; j < n_; ++j) {
        const double res = data_.y(j) - coef.head(d_).dot(data_.x.col(j)) - coef(d_);
        sse += resp_(i, j) * res * res;
      }
      // Accept only if the weighted expert objective does not decrease; guards
      // against an ill-conditioned solve breaking EM ascent.
      const double nu_new = std::max(sse / total, opts_.nu_floor);
      const double q_new = expert_objective(i, coef.head(d_), coef(d_), nu_new);
      const double q_old = expert_objective(i, atom.a, atom.b, atom.nu);
      if (q_new >= q_old) {
        atom.a = coef.head(d_);
        atom.b = coef(d_);
        atom.nu = nu_new;
      }
    }
  }

  double expert_objective(int i, const Vector& a, double b, double nu) const {
    double total = 0.0;
    double sse = 0.0;
    for (int j = 0; j < n_; ++j) {
      const double res = data_.y(j) - a.dot(data_.x.col(j)) - b;
      total += resp_(i, j);
      sse += resp_(i, j) * res * res;
    }
    return -0.5 * (total * std::log(2.0 * std::numbers::pi * nu) + sse / nu);
  }

  // Gate objective per sample: (1/n) sum_j [sum_i r_ij logit_ij - lse_j].
  // Only row i of the logits changes within a block.
  void update_gate() {
    if (k_ < 2) {
      frozen_.clear();
      return;
    }
    const double inv_n = 1.0 / static_cast<double>(n_);
    Vector trial_logit(n_);
    Vector trial_lse(n_);
    Vector trial_dist(n_);
    for (int pass = 0; pass < opts_.gate_passes; ++pass) {
      for (int i = 0; i < k_; ++i) {
        if (std::find(frozen_.begin(), frozen_.end(), i) != frozen_.end()) {
          continue;
        }
        Atom& atom = atoms_[static_cast<std::size_t>(i)];
        const bool free_beta = i != k_ - 1;
        Vector grad_w = Vector::Zero(d_);
        double grad_beta = 0.0;
        for (int j = 0; j < n_; ++j) {
          const double coef = resp_(i, j) - std::exp(logit_(i, j) - gate_lse_(j));
          grad_beta += coef;
          const double dist = dist_(i, j);
          if (dist > 0.0) {
            grad_w += (coef / dist) * (data_.x.col(j) - atom.w);
          }
        }
        grad_w *= inv_n;
        grad_beta = free_beta ? grad_beta * inv_n : 0.0;
        const double gnorm2 = grad_w.squaredNorm() + grad_beta * grad_beta;
        if (!(gnorm2 > 0.0) || !std::isfinite(gnorm2)) {
          continue;
        }
        double step = opts_.initial_step;
        for (int h = 0; h < opts_.max_halvings; ++h) {
          const Vector w_new = atom.w + step * grad_w;
          const double beta_new = atom.beta + step * grad_beta;
          double gain = 0.0;
          double lse_shift = 0.0;
          for (int j = 0; j < n_; ++j) {
            const double dist = (w_new - data_.x.col(j)).norm();
            trial_dist(j) = dist;
            trial_logit(j) = beta_new - dist;
            double m = trial_logit(j);
            for (int l = 0; l < k_; ++l) {
              if (l != i) {
                m = std::max(m, logit_(l, j));
              }
            }
            double s = std::exp(trial_logit(j) - m);
            for (int l = 0; l < k_; ++l) {
              if (l != i) {
                s += std::exp(logit_(l, j) - m);
              }
            }
            trial_lse(j) = m + std::log(s);
            gain += resp_(i, j) * (trial_logit(j) - logit_(i, j));
            lse_shift += trial_lse(j) - gate_lse_(j);
          }
          gain = (gain - lse_shift) * inv_n;
          if (std::isfinite(gain) && gain >= opts_.armijo * step * gnorm2) {
            atom.w = w_new;
            atom.beta = beta_new;
            logit_.row(i) = trial_logit.transpose();
            dist_.row(i) = trial_dist.transpose();
            gate_lse_ = trial_lse;
            break;
          }
          step *= 0.5;
        }
      }
    }
    frozen_.clear();
  }

  const RegressionDataset& data_;
  const EmOptions& opts_;
  int k_;
  int n_;
  int d_;
  std::vector<Atom> atoms_;
  Matrix dist_;
  Matrix logit_;
  Matrix joint_;
  Matrix resp_;
  Vector gate_lse_;
  std::vector<int> frozen_;
  int collapse_events_ = 0;
};

}  // namespace

EmResult em_fit(const RegressionDataset& data, const MixingMeasure& init, const EmOptions& options) {
  data.validate();
  if (init.dim() != data.dim()) {
    throw std::invalid_argument("em_fit: initial measure dimension does not match data");
  }
  if (options.max_iterations < 0 || !(options.tolerance > 0.0) || !(options.nu_floor > 0.0)) {
    throw std::invalid_argument("em_fit: invalid options");
  }
  MixingMeasure start = init.anchored();
  std::vector<Atom> floored(start.atoms().begin(), start.atoms().end());
  for (Atom& atom : floored) {
    atom.nu = std::max(atom.nu, options.nu_floor);
  }
  EmState state(data, MixingMeasure(std::move(floored)), options);

  EmResult result;
  double ll = state.evaluate();
  result.trace.push_back(ll);
  for (int it = 0; it < options.max_iterations; ++it) {
    state.m_step();
    const double next = state.evaluate();
    result.trace.push_back(next);
    result.iterations = it + 1;
    const double delta = next - ll;
    ll = next;
    if (std::abs(delta) < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.fit = state.measure();
  result.collapse_events = state.collapse_events();
  return result;
}

NearTruthInit init_near_truth(const MixingMeasure& truth, int k, double perturb_std, std::uint64_t seed,
                              double nu_floor) {
  const int k_true = truth.k();
  if (k < k_true) {
    throw std::invalid_argument("init_near_truth: k (" + std::to_string(k) + ") must be >= number of true atoms (" +
                                std::to_string(k_true) + ")");
  }
  if (perturb_std < 0.0) {
    throw std::invalid_argument("init_near_truth: perturb_std must be >= 0");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> cell_of(static_cast<std::size_t>(k));
  std::uniform_int_distribution<int> pick(0, k_true - 1);
  for (int idx = 0; idx < k; ++idx) {
    cell_of[static_cast<std::size_t>(order[static_cast<std::size_t>(idx)])] = idx < k_true ? idx : pick(rng);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  auto jitter = [&](double v) { return perturb_std > 0.0 ? v + perturb_std * noise(rng) : v; };
  std::vector<Atom> atoms;
  atoms.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Atom atom = truth[cell_of[static_cast<std::size_t>(i)]];
    atom.beta = jitter(atom.beta);
    for (int c = 0; c < atom.w.size(); ++c) {
      atom.w(c) = jitter(atom.w(c));
    }
    for (int c = 0; c < atom.a.size(); ++c) {
      atom.a(c) = jitter(atom.a(c));
    }
    atom.b = jitter(atom.b);
    atom.nu = std::max(std::abs(jitter(atom.nu)), nu_floor);
    atoms.push_back(std::move(atom));
  }
  return {MixingMeasure(std::move(atoms)).anchored(), std::move(cell_of)};
}

}  // namespace lapmoe
