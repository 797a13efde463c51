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

#include "lapmoe/rate_study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace lapmoe {

namespace {
constexpr std::uint64_t kTruthTag = 0x7472757468ULL;  // "truth"
constexpr std::uint64_t kDataTag = 1;
constexpr std::uint64_t kInitTag = 2;
}  // namespace

std::string to_string(Setting s) { return s == Setting::Exact ? "exact" : "over"; }

Setting parse_setting(const std::string& s) {
  if (s == "exact") {
    return Setting::Exact;
  }
  if (s == "over") {
    return Setting::Over;
  }
  throw std::invalid_argument("unknown setting '" + s + "' (expected exact or over)");
}

std::vector<int> desk_grid() { return {1000, 2154, 4642, 10000, 21544}; }

std::vector<int> paper_grid() {
  std::vector<int> grid;
  for (int i = 0; i < 10; ++i) {
    grid.push_back(static_cast<int>(std::lround(std::pow(10.0, 3.0 + 2.0 * i / 9.0))));
  }
  return grid;
}

int RateStudyConfig::fitted_k() const {
  if (k > 0) {
    return k;
  }
  return setting == Setting::Exact ? k_true : k_true + 1;
}

void RateStudyConfig::validate() const {
  if (d < 1) {
    throw std::invalid_argument("config: d must be >= 1");
  }
  if (k_true < 1) {
    throw std::invalid_argument("config: k_true must be >= 1");
  }
  if (k != 0 && k < k_true) {
    throw std::invalid_argument("config: k must be >= k_true");
  }
  if (setting == Setting::Exact && fitted_k() != k_true) {
    throw std::invalid_argument("config: the exact setting fits k == k_true components");
  }
  if (setting == Setting::Over && fitted_k() <= k_true) {
    throw std::invalid_argument("config: the over setting fits k > k_true components");
  }
  if (n_grid.size() < 2) {
    throw std::invalid_argument("config: n_grid needs at least two sizes");
  }
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 10) {
      throw std::invalid_argument("config: every n must be >= 10");
    }
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) {
      throw std::invalid_argument("config: n_grid must be strictly increasing");
    }
  }
  if (replications < 1) {
    throw std::invalid_argument("config: replications must be >= 1");
  }
  if (!(perturb_std >= 0.0)) {
    throw std::invalid_argument("config: perturb_std must be >= 0");
  }
  if (!(em_tolerance > 0.0) || em_max_iterations < 1) {
    throw std::invalid_argument("config: EM tolerance must be > 0 and max_iter >= 1");
  }
  if (threads < 0) {
    throw std::invalid_argument("config: threads must be >= 0");
  }
}

SlopeFit fit_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("fit_slope: xs and ys differ in length");
  }
  const std::size_t m = xs.size();
  if (m < 2) {
    throw std::invalid_argument("fit_slope: need at least two points");
  }
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) {
    throw std::invalid_argument("fit_slope: all xs are identical");
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (m > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = ys[i] - fit.intercept - fit.slope * xs[i];
      ssr += r * r;
    }
    fit.stderr_slope = std::sqrt(ssr / static_cast<double>(m - 2) / sxx);
  }
  return fit;
}

std::uint64_t run_seed(std::uint64_t base, int n, int replication) {
  return derive_seed(base, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(replication)});
}

std::uint64_t truth_seed(std::uint64_t base) { return derive_seed(base, {kTruthTag}); }

RateStudyRecord run_single(const RateStudyConfig& cfg, const MixingMeasure& truth, int n, int replication) {
  const std::uint64_t seed = run_seed(cfg.seed, n, replication);
  const RegressionDataset data = sample_synthetic(truth, n, derive_seed(seed, {kDataTag}));
  const NearTruthInit init = init_near_truth(truth, cfg.fitted_k(), cfg.perturb_std, derive_seed(seed, {kInitTag}));
  EmOptions opts;
  opts.tolerance = cfg.em_tolerance;
  opts.max_iterations = cfg.em_max_iterations;
  const EmResult em = em_fit(data, init.measure, opts);

  RateStudyRecord rec;
  rec.setting = cfg.setting;
  rec.n = n;
  rec.replication = replication;
  rec.seed = seed;
  rec.loss = cfg.setting == Setting::Exact ? loss_d1(em.fit, truth) : loss_d2(em.fit, truth);
  rec.em_iterations = em.iterations;
  rec.final_loglik = em.final_loglik();
  rec.converged = em.converged;
  return rec;
}

RateStudyResult run_rate_study(const RateStudyConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  RateStudyResult result;
  result.truth = sample_true_measure(cfg.d, truth_seed(cfg.seed), TruthPrior{cfg.k_true});

  struct Cell {
    int n;
    int rep;
  };
  std::vector<Cell> cells;
  for (int n : cfg.n_grid) {
    for (int r = 0; r < cfg.replications; ++r) {
      cells.push_back({n, r});
    }
  }
  result.records.resize(cells.size());

  unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::thread::hardware_concurrency();
  workers = std::clamp<unsigned>(workers, 1U, static_cast<unsigned>(cells.size()));

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cells.size()) {
        return;
      }
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) {
          return;
        }
      }
      try {
        result.records[idx] = run_single(cfg, result.truth, cells[idx].n, cells[idx].rep);
        if (progress) {
          std::lock_guard<std::mutex> lock(mu);
          progress(result.records[idx]);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) {
          failure = std::current_exception();
        }
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) {
      pool.emplace_back(work);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }

  std::vector<double> log_n;
  std::vector<double> log_loss;
  for (std::size_t g = 0; g < cfg.n_grid.size(); ++g) {
    const auto first = result.records.begin() + static_cast<std::ptrdiff_t>(g * cfg.replications);
    double mean = 0.0;
    for (int r = 0; r < cfg.replications; ++r) {
      mean += first[r].loss;
    }
    mean /= cfg.replications;
    double var = 0.0;
    for (int r = 0; r < cfg.replications; ++r) {
      var += (first[r].loss - mean) * (first[r].loss - mean);
    }
    const double sd = cfg.replications > 1 ? std::sqrt(var / (cfg.replications - 1)) : 0.0;
    result.summaries.push_back({cfg.n_grid[g], mean, sd});
    log_n.push_back(std::log(static_cast<double>(cfg.n_grid[g])));
    log_loss.push_back(std::log(mean));
  }
  result.fit = fit_slope(log_n, log_loss);
  return result;
}

void write_records_csv(std::ostream& os, std::span<const RateStudyRecord> records) {
  os << "setting,n,replication,seed,loss,em_iterations,final_loglik\n";
  for (const RateStudyRecord& r : records) {
    os << to_string(r.setting) << ',' << r.n << ',' << r.replication << ',' << r.seed << ',' << format_double(r.loss)
       << ',' << r.em_iterations << ',' << format_double(r.final_loglik) << '\n';
  }
}

void write_slope_csv(std::ostream& os, Setting setting, const SlopeFit& fit) {
  os << "setting,slope,intercept,stderr\n";
  os << to_string(setting) << ',' << format_double(fit.slope) << ',' << format_double(fit.intercept) << ','
     << format_double(fit.stderr_slope) << '\n';
}

void write_summary_csv(std::ostream& os, Setting setting, std::span<const SizeSummary> summaries) {
  os << "setting,n,mean_loss,std_loss\n";
  for (const SizeSummary& s : summaries) {
    os << to_string(setting) << ',' << s.n << ',' << format_double(s.mean_loss) << ',' << format_double(s.std_loss)
       << '\n';
  }
}

}  // namespace lapmoe
