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
#include <numeric>
#include <random>

#include "lapmoe/voronoi.hpp"
#include "oracles.hpp"

using namespace lapmoe;

namespace {

Atom atom(double beta, std::initializer_list<double> w, std::initializer_list<double> a, double b, double nu) {
  Atom out;
  out.beta = beta;
  out.w = Vector(static_cast<Eigen::Index>(w.size()));
  std::copy(w.begin(), w.end(), out.w.data());
  out.a = Vector(static_cast<Eigen::Index>(a.size()));
  std::copy(a.begin(), a.end(), out.a.data());
  out.b = b;
  out.nu = nu;
  return out;
}

// Fitted measure built from truth atoms plus noise, so cells have the
// requested sizes with high probability.
MixingMeasure perturbed(const MixingMeasure& truth, const std::vector<int>& source, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, noise);
  std::vector<Atom> atoms;
  for (int j : source) {
    Atom a = truth[j];
    a.beta += nd(rng);
    for (Eigen::Index i = 0; i < a.w.size(); ++i) {
      a.w(i) += nd(rng);
      a.a(i) += nd(rng);
    }
    a.b += nd(rng);
    a.nu = std::abs(a.nu + nd(rng)) + 1e-6;
    atoms.push_back(a);
  }
  return MixingMeasure(atoms).anchored();
}

std::vector<int> brute_force_owner(const MixingMeasure& g, const MixingMeasure& t) {
  std::vector<int> owner;
  for (int i = 0; i < g.k(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int j = 0; j < t.k(); ++j) {
      double d = 0.0;
      const Vector a = g.theta(i);
      const Vector b = t.theta(j);
      for (Eigen::Index c = 0; c < a.size(); ++c) {
        d += (a(c) - b(c)) * (a(c) - b(c));
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    owner.push_back(best);
  }
  return owner;
}

}  // namespace

TEST(AssignCells, IdentityAndBruteForce) {
  std::mt19937_64 rng(1);
  const MixingMeasure truth = oracle::random_measure(2, 2, rng);
  const VoronoiCells self = assign_cells(truth, truth);
  EXPECT_EQ(self.cells, (std::vector<std::vector<int>>{{0}, {1}}));
  for (int t = 0; t < 300; ++t) {
    const MixingMeasure tr = oracle::random_measure(2, 2, rng);
    const MixingMeasure g = oracle::random_measure(4, 2, rng);
    const VoronoiCells c = assign_cells(g, tr);
    EXPECT_EQ(c.owner, brute_force_owner(g, tr));
    std::vector<int> all;
    for (std::size_t j = 0; j < c.cells.size(); ++j) {
      EXPECT_TRUE(std::is_sorted(c.cells[j].begin(), c.cells[j].end()));
      for (int i : c.cells[j]) {
        EXPECT_EQ(c.owner[static_cast<std::size_t>(i)], static_cast<int>(j));
        all.push_back(i);
      }
    }
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 3}));
  }
}

TEST(AssignCells, TieGoesToSmallerIndex) {
  const MixingMeasure truth({atom(0, {1}, {0}, 0, 1), atom(0, {-1}, {0}, 0, 1)});
  const MixingMeasure g({atom(0, {0}, {0}, 0, 1)});
  EXPECT_EQ(assign_cells(g, truth).owner, std::vector<int>{0});
  const MixingMeasure other_dim({atom(0, {0, 0}, {0, 0}, 0, 1)});
  EXPECT_THROW(assign_cells(other_dim, truth), std::invalid_argument);
}

TEST(Phi, Examples) {
  const Atom t = atom(0, {0, 0}, {0, 0}, 0, 1);
  EXPECT_EQ(phi(t, t, {1, 1, 1, 1}), 0.0);
  EXPECT_EQ(phi(t, t, {2, 3, 0.5, 7}), 0.0);
  const Atom u = atom(0, {1, 0}, {0, -1}, 1, 2);
  EXPECT_DOUBLE_EQ(phi(u, t, {1, 1, 1, 1}), 4.0);
  EXPECT_DOUBLE_EQ(phi(u, t, {2.5, 3, 0.7, 4}), 4.0);
  const Atom v = atom(0, {2, 0}, {0, 0}, 0, 1);
  EXPECT_DOUBLE_EQ(phi(v, t, {2, 1, 1, 1}), std::pow(std::sqrt(4.0), 2.0));
  EXPECT_DOUBLE_EQ(phi(v, t, {2, 1, 1, 1}), 4.0);
}

TEST(RBarTable, KnownValuesAndErrors) {
  const RBarTable table;
  EXPECT_EQ(table.at(2), 4);
  EXPECT_EQ(table.at(3), 6);
  EXPECT_FALSE(table.contains(4));
  try {
    table.at(4);
    FAIL();
  } catch (const MissingRBarEntry& e) {
    EXPECT_EQ(e.cell_size(), 4);
    EXPECT_NE(std::string(e.what()).find('4'), std::string::npos);
  }
  RBarTable custom;
  custom.set(4, 8);
  EXPECT_EQ(custom.at(4), 8);
  EXPECT_THROW(custom.set(1, 2), std::invalid_argument);
  EXPECT_THROW(custom.set(5, 0), std::invalid_argument);
}

TEST(Losses, ZeroAtTruth) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const MixingMeasure truth = oracle::random_measure(2 + static_cast<int>(rng() % 3), 2, rng);
    EXPECT_EQ(loss_d1(truth, truth), 0.0);
    EXPECT_EQ(loss_d2(truth, truth), 0.0);
  }
}

TEST(Losses, MatchNaiveOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const MixingMeasure truth = oracle::random_measure(2, 2, rng);
    const MixingMeasure exact = perturbed(truth, {0, 1}, 0.05, rng);
    EXPECT_NEAR(loss_d1(exact, truth), oracle::voronoi_loss(exact, truth, false), 1e-12);
    const MixingMeasure over = perturbed(truth, {0, 1, static_cast<int>(rng() % 2)}, 0.05, rng);
    EXPECT_NEAR(loss_d2(over, truth), oracle::voronoi_loss(over, truth, true), 1e-12);
    EXPECT_NEAR(loss_d1(over, truth), oracle::voronoi_loss(over, truth, false), 1e-12);
    EXPECT_GE(loss_d1(over, truth), 0.0);
    EXPECT_GE(loss_d2(over, truth), 0.0);
  }
}

TEST(Losses, DoubleCellUsesRBarTwo) {
  const MixingMeasure truth({atom(0, {0}, {0}, 0, 1), atom(0, {5}, {5}, 5, 1)});
  const MixingMeasure fitted({atom(0, {0.1}, {0.2}, 0.3, 1.4), atom(0, {-0.1}, {0.0}, 0.0, 1.0),
                              atom(0, {5}, {5}, 5, 1)});
  const MixingMeasure fm = fitted.mass_normalized();
  const MixingMeasure tm = truth.mass_normalized();
  const double mass = std::abs(std::exp(fm[0].beta) + std::exp(fm[1].beta) - std::exp(tm[0].beta)) +
                      std::abs(std::exp(fm[2].beta) - std::exp(tm[1].beta));
  const double multi = std::exp(fm[0].beta) * phi(fitted[0], truth[0], {2, 2, 4, 2}) +
                       std::exp(fm[1].beta) * phi(fitted[1], truth[0], {2, 2, 4, 2});
  EXPECT_NEAR(loss_d2(fitted, truth), mass + multi, 1e-14);
  RBarTable empty_like;
  EXPECT_NO_THROW(loss_d2(fitted, truth, empty_like));
}

TEST(Losses, MissingRBarThrows) {
  const MixingMeasure truth({atom(0, {0}, {0}, 0, 1), atom(0, {5}, {5}, 5, 1)});
  std::vector<Atom> atoms(4, atom(0, {0.01}, {0}, 0, 1));
  atoms.push_back(atom(0, {5}, {5}, 5, 1));
  const MixingMeasure fitted(atoms);
  EXPECT_THROW(loss_d2(fitted, truth), MissingRBarEntry);
  RBarTable table;
  table.set(4, 8);
  EXPECT_NO_THROW(loss_d2(fitted, truth, table));
}

TEST(Losses, PermutationInvariance) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const MixingMeasure truth = oracle::random_measure(2, 2, rng);
    const MixingMeasure g = perturbed(truth, {0, 1, 1}, 0.05, rng);
    std::vector<int> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::vector<int> swap{1, 0};
    EXPECT_NEAR(loss_d1(g.permuted(perm), truth), loss_d1(g, truth), 1e-14);
    EXPECT_NEAR(loss_d2(g.permuted(perm), truth), loss_d2(g, truth), 1e-14);
    EXPECT_NEAR(loss_d2(g, truth.permuted(swap)), loss_d2(g, truth), 1e-14);
    EXPECT_NEAR(loss_d1(g, truth.permuted(swap)), loss_d1(g, truth), 1e-14);
  }
}

TEST(Losses, CoincideForSingletonCells) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const MixingMeasure truth = oracle::random_measure(2, 2, rng);
    const MixingMeasure g = perturbed(truth, {0, 1}, 0.02, rng);
    ASSERT_EQ(assign_cells(g, truth).cells[0].size(), 1u);
    EXPECT_EQ(loss_d1(g, truth), loss_d2(g, truth));
  }
}

TEST(Losses, AnchorIndependent) {
  std::mt19937_64 rng(6);
  const MixingMeasure truth = oracle::random_measure(2, 2, rng);
  const MixingMeasure g = perturbed(truth, {0, 1, 0}, 0.05, rng);
  std::vector<Atom> shifted(g.atoms().begin(), g.atoms().end());
  for (auto& a : shifted) {
    a.beta += 1.25;
  }
  EXPECT_NEAR(loss_d2(MixingMeasure(shifted), truth), loss_d2(g, truth), 1e-14);
}
