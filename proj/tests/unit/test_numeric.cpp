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

#include "lapmoe/numeric.hpp"
#include "oracles.hpp"

using namespace lapmoe;

TEST(Numeric, GeluMatchesDefinition) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), oracle::phi_cdf(1.0), 1e-15);
  EXPECT_NEAR(gelu(1.0), 0.84134, 1e-5);
  for (double u : {-6.0, -1.3, -0.2, 0.4, 2.5, 7.0}) {
    EXPECT_NEAR(gelu(u), u * oracle::phi_cdf(u), 1e-14);
    EXPECT_NEAR(gelu(u) - gelu(-u), u, 1e-14);
    const double h = 1e-6;
    EXPECT_NEAR(gelu_derivative(u), (gelu(u + h) - gelu(u - h)) / (2 * h), 1e-8);
  }
}

TEST(Numeric, SigmoidIsStable) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 4e-16);
}

TEST(Numeric, LogSumExp) {
  const std::vector<double> v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_NEAR(canonical_log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Numeric, CanonicalSumIgnoresOrder) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1e3);
  std::vector<double> v(1000);
  for (double& x : v) {
    x = nd(rng);
  }
  const double ref = canonical_sum(v);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(canonical_sum(v), ref);
  }
}

TEST(Numeric, LogNormalPdf) {
  EXPECT_NEAR(log_normal_pdf(0.0, 0.0, 1.0), -0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(log_normal_pdf(3.0, 1.0, 4.0), -0.5 * std::log(8 * M_PI) - 0.5, 1e-15);
}

TEST(Numeric, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
}

TEST(Numeric, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int t = 0; t < 1000; ++t) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}
