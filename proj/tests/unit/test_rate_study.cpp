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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lapmoe/rate_study.hpp"
#include "oracles.hpp"

using namespace lapmoe;

namespace {

RateStudyConfig tiny(Setting s) {
  RateStudyConfig cfg;
  cfg.setting = s;
  cfg.n_grid = {200, 400};
  cfg.replications = 2;
  cfg.em_max_iterations = 50;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST(FitSlope, ExactLineAndFlat) {
  const std::vector<double> xs{0.0, 1.0, 2.5, 4.0};
  std::vector<double> ys;
  for (double x : xs) {
    ys.push_back(-0.5 * x + 1.0);
  }
  const SlopeFit f = fit_slope(xs, ys);
  EXPECT_NEAR(f.slope, -0.5, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.stderr_slope, 0.0, 1e-12);
  const std::vector<double> flat(4, 3.0);
  EXPECT_EQ(fit_slope(xs, flat).slope, 0.0);
  EXPECT_THROW(fit_slope(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(fit_slope(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  EXPECT_THROW(fit_slope(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
}

TEST(FitSlope, NoisyLineMatchesNormalEquations) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (int t = 0; t < 50; ++t) {
    const int m = 3 + static_cast<int>(rng() % 10);
    RegressionDataset data{Matrix(1, m), Vector(m)};
    std::vector<double> xs;
    std::vector<double> ys;
    for (int i = 0; i < m; ++i) {
      xs.push_back(std::log(1000.0 * (i + 1)));
      ys.push_back(-0.47 * xs.back() + 2.0 + nd(rng));
      data.x(0, i) = xs.back();
      data.y(i) = ys.back();
    }
    const SlopeFit f = fit_slope(xs, ys);
    const oracle::LeastSquares ls = oracle::least_squares(data);
    EXPECT_NEAR(f.slope, ls.a[0], 1e-10);
    EXPECT_NEAR(f.intercept, ls.b, 1e-10);
    double sxx = 0.0;
    double mx = 0.0;
    for (double x : xs) {
      mx += x / m;
    }
    for (double x : xs) {
      sxx += (x - mx) * (x - mx);
    }
    const double sigma2 = ls.residual_variance * m / (m - 2);
    EXPECT_NEAR(f.stderr_slope, std::sqrt(sigma2 / sxx), 1e-10);
  }
}

TEST(Grids, DeskAndPaper) {
  EXPECT_EQ(desk_grid(), (std::vector<int>{1000, 2154, 4642, 10000, 21544}));
  const std::vector<int> p = paper_grid();
  ASSERT_EQ(p.size(), 10u);
  EXPECT_EQ(p.front(), 1000);
  EXPECT_EQ(p.back(), 100000);
  EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
}

TEST(RateStudyConfig, DefaultsAndValidation) {
  RateStudyConfig cfg;
  EXPECT_EQ(cfg.d, 2);
  EXPECT_EQ(cfg.replications, 5);
  EXPECT_EQ(cfg.perturb_std, 0.05);
  EXPECT_EQ(cfg.em_tolerance, 1e-6);
  EXPECT_EQ(cfg.em_max_iterations, 2000);
  EXPECT_EQ(cfg.fitted_k(), 2);
  cfg.setting = Setting::Over;
  EXPECT_EQ(cfg.fitted_k(), 3);
  EXPECT_NO_THROW(cfg.validate());

  auto expect_invalid = [](auto mutate) {
    RateStudyConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), std::invalid_argument);
  };
  expect_invalid([](RateStudyConfig& c) { c.n_grid = {100, 100}; });
  expect_invalid([](RateStudyConfig& c) { c.n_grid = {5, 100}; });
  expect_invalid([](RateStudyConfig& c) { c.n_grid = {100}; });
  expect_invalid([](RateStudyConfig& c) { c.replications = 0; });
  expect_invalid([](RateStudyConfig& c) { c.k = 3; });
  expect_invalid([](RateStudyConfig& c) { c.d = 0; });
  expect_invalid([](RateStudyConfig& c) { c.em_tolerance = 0.0; });
  expect_invalid([](RateStudyConfig& c) {
    c.setting = Setting::Over;
    c.k = 2;
  });
  EXPECT_EQ(parse_setting("over"), Setting::Over);
  EXPECT_THROW(parse_setting("under"), std::invalid_argument);
}

TEST(RateStudy, SeedsIndependentOfGrid) {
  EXPECT_EQ(run_seed(42, 1000, 3), run_seed(42, 1000, 3));
  EXPECT_NE(run_seed(42, 1000, 3), run_seed(42, 1000, 4));
  EXPECT_NE(run_seed(42, 1000, 3), run_seed(43, 1000, 3));
  EXPECT_NE(truth_seed(42), run_seed(42, 0, 0));

  RateStudyConfig a = tiny(Setting::Exact);
  RateStudyConfig b = a;
  b.n_grid = {100, 200, 300, 400};
  const RateStudyResult ra = run_rate_study(a);
  const RateStudyResult rb = run_rate_study(b);
  for (const RateStudyRecord& r : ra.records) {
    const auto it = std::find_if(rb.records.begin(), rb.records.end(), [&](const RateStudyRecord& o) {
      return o.n == r.n && o.replication == r.replication;
    });
    ASSERT_NE(it, rb.records.end());
    EXPECT_EQ(it->loss, r.loss);
    EXPECT_EQ(it->seed, r.seed);
    EXPECT_EQ(it->final_loglik, r.final_loglik);
  }
}

TEST(RateStudy, ThreadCountDoesNotChangeOutput) {
  RateStudyConfig a = tiny(Setting::Over);
  RateStudyConfig b = a;
  a.threads = 1;
  b.threads = 4;
  std::ostringstream oa;
  std::ostringstream ob;
  write_records_csv(oa, run_rate_study(a).records);
  write_records_csv(ob, run_rate_study(b).records);
  EXPECT_EQ(oa.str(), ob.str());
}

TEST(RateStudy, RecordsAndSummaries) {
  const RateStudyConfig cfg = tiny(Setting::Exact);
  int progress = 0;
  const RateStudyResult r = run_rate_study(cfg, [&](const RateStudyRecord&) { ++progress; });
  EXPECT_EQ(progress, 4);
  ASSERT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.records[0].n, 200);
  EXPECT_EQ(r.records[1].replication, 1);
  EXPECT_EQ(r.records[2].n, 400);
  for (const auto& rec : r.records) {
    EXPECT_GE(rec.loss, 0.0);
    EXPECT_TRUE(std::isfinite(rec.final_loglik));
    EXPECT_GE(rec.em_iterations, 1);
  }
  ASSERT_EQ(r.summaries.size(), 2u);
  EXPECT_DOUBLE_EQ(r.summaries[0].mean_loss, 0.5 * (r.records[0].loss + r.records[1].loss));
  EXPECT_NEAR(r.summaries[0].std_loss, std::abs(r.records[0].loss - r.records[1].loss) / std::sqrt(2.0), 1e-15);
  const std::vector<double> xs{std::log(200.0), std::log(400.0)};
  const std::vector<double> ys{std::log(r.summaries[0].mean_loss), std::log(r.summaries[1].mean_loss)};
  EXPECT_DOUBLE_EQ(r.fit.slope, fit_slope(xs, ys).slope);
  EXPECT_EQ(r.truth, sample_true_measure(2, truth_seed(cfg.seed)));
}

TEST(RateStudy, MissingRBarAborts) {
  RateStudyConfig cfg = tiny(Setting::Over);
  cfg.k = 7;
  EXPECT_THROW(run_rate_study(cfg), MissingRBarEntry);
}

TEST(RateStudy, CsvShapes) {
  std::vector<RateStudyRecord> recs(1);
  recs[0].n = 10;
  recs[0].seed = 7;
  recs[0].loss = 0.125;
  recs[0].em_iterations = 3;
  recs[0].final_loglik = -1.5;
  std::ostringstream os;
  write_records_csv(os, recs);
  EXPECT_EQ(os.str(), "setting,n,replication,seed,loss,em_iterations,final_loglik\nexact,10,0,7,0.125,3,-1.5\n");
  std::ostringstream sl;
  write_slope_csv(sl, Setting::Over, SlopeFit{-0.5, 1.0, 0.25});
  EXPECT_EQ(sl.str(), "setting,slope,intercept,stderr\nover,-0.5,1,0.25\n");
}
