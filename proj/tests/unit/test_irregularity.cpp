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
#include <numbers>
#include <random>

#include "lapmoe/gradcheck.hpp"
#include "lapmoe/irregularity.hpp"
#include "oracles.hpp"

using namespace lapmoe;

namespace {

IrregularSeries random_series(int channels, int max_len, double t_max, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> when(0.0, t_max);
  std::normal_distribution<double> value(0.0, 2.0);
  IrregularSeries s;
  s.channels.resize(static_cast<std::size_t>(channels));
  for (auto& ch : s.channels) {
    const int l = static_cast<int>(rng() % static_cast<unsigned>(max_len + 1));
    for (int i = 0; i < l; ++i) {
      ch.push_back({when(rng), value(rng)});
    }
    std::sort(ch.begin(), ch.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
  }
  return s;
}

MtandConfig small_config() {
  MtandConfig cfg;
  cfg.heads = 2;
  cfg.time_dim = 4;
  cfg.attention_dim = 3;
  cfg.embed_dim = 5;
  cfg.bins = 7;
  return cfg;
}

}  // namespace

TEST(TimeEmbed, Components) {
  TimeEmbedding e{Vector::Zero(3), Vector::Zero(3)};
  e.freq(0) = 2.0;
  EXPECT_EQ(time_embed(3.0, e)(0), 6.0);
  EXPECT_EQ(time_embed(3.0, e)(1), 0.0);
  e.freq(2) = std::numbers::pi / 2.0;
  EXPECT_NEAR(time_embed(1.0, e)(2), 1.0, 1e-15);
  e.phase(1) = 0.3;
  e.freq(1) = 0.7;
  EXPECT_NEAR(time_embed(2.0, e)(1), std::sin(1.4 + 0.3), 1e-15);
  EXPECT_THROW(time_embed(std::numeric_limits<double>::quiet_NaN(), e), std::invalid_argument);
  EXPECT_THROW(time_embed(1.0, TimeEmbedding{Vector::Zero(1), Vector::Zero(1)}), std::invalid_argument);
}

TEST(Mtand, DefaultsAndBins) {
  const MtandConfig cfg;
  EXPECT_EQ(cfg.time_dim, 64);
  EXPECT_EQ(cfg.attention_dim, 128);
  EXPECT_EQ(cfg.heads, 8);
  EXPECT_EQ(cfg.t_max, 48.0);
  const Vector bins = query_bins(cfg.bins, cfg.t_max);
  EXPECT_EQ(bins(0), 0.0);
  EXPECT_EQ(bins(bins.size() - 1), 48.0);
  EXPECT_NEAR(bins(1) - bins(0), bins(2) - bins(1), 1e-12);
  EXPECT_THROW(query_bins(0, 48.0), std::invalid_argument);
}

TEST(Mtand, SingleObservationFillsEveryBin) {
  const MtandConfig cfg = small_config();
  const MtandParams p = random_mtand_params(cfg, 1, 3);
  IrregularSeries s;
  s.channels = {{{12.5, -3.25}}};
  const Matrix interp = mtand_interpolate(s, query_bins(cfg.bins, cfg.t_max), p, Vector::Zero(1));
  EXPECT_EQ((interp.array() + 3.25).abs().maxCoeff(), 0.0);
}

TEST(Mtand, AttentionRowsSumToOne) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const MtandParams p = random_mtand_params(small_config(), 1, rng());
    const IrregularSeries s = random_series(1, 15, 48.0, rng);
    if (s.channels[0].empty()) {
      continue;
    }
    std::vector<double> times;
    for (const auto& o : s.channels[0]) {
      times.push_back(o.time);
    }
    const Matrix a = mtand_attention(query_bins(9, 48.0), times, p.heads[0]);
    EXPECT_LT((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_TRUE((a.array() >= 0.0).all());
  }
}

TEST(Mtand, TwoObservationsMatchDenseOracle) {
  AttentionHead head;
  head.emb.freq = Vector(3);
  head.emb.freq << 0.05, 0.3, 1.1;
  head.emb.phase = Vector(3);
  head.emb.phase << 0.0, 0.4, -0.2;
  head.query = Matrix::Identity(3, 3);
  head.key = Matrix::Identity(3, 3);
  const std::vector<double> times{3.0, 17.5};
  const Vector queries = query_bins(5, 48.0);
  const Matrix a = mtand_attention(queries, times, head);
  const oracle::Mat expect = oracle::attention({queries.data(), queries.data() + 5}, times, head);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(a(i, j), expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-12);
    }
  }
}

TEST(Mtand, RandomAttentionMatchesDenseOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const MtandParams p = random_mtand_params(small_config(), 1, rng());
    const IrregularSeries s = random_series(1, 10, 48.0, rng);
    if (s.channels[0].empty()) {
      continue;
    }
    std::vector<double> times;
    for (const auto& o : s.channels[0]) {
      times.push_back(o.time);
    }
    const Vector q = query_bins(6, 48.0);
    const Matrix a = mtand_attention(q, times, p.heads[1]);
    const oracle::Mat expect = oracle::attention({q.data(), q.data() + 6}, times, p.heads[1]);
    for (int i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < times.size(); ++j) {
        EXPECT_NEAR(a(i, static_cast<Eigen::Index>(j)), expect[static_cast<std::size_t>(i)][j], 1e-12);
      }
    }
  }
}

TEST(Mtand, ValueShiftEquivariance) {
  std::mt19937_64 rng(6);
  const MtandConfig cfg = small_config();
  for (int t = 0; t < 50; ++t) {
    const IrregularSeries s = random_series(3, 8, 48.0, rng);
    const MtandParams p = random_mtand_params(cfg, 3, rng());
    const Vector q = query_bins(cfg.bins, cfg.t_max);
    const Vector means = Vector::Zero(3);
    IrregularSeries shifted = s;
    for (auto& o : shifted.channels[1]) {
      o.value += 2.5;
    }
    const Matrix a = mtand_interpolate(s, q, p, means);
    const Matrix b = mtand_interpolate(shifted, q, p, means);
    for (int h = 0; h < cfg.heads; ++h) {
      for (int k = 0; k < 3; ++k) {
        const Eigen::Index col = h * 3 + k;
        const double c = (k == 1 && !s.channels[1].empty()) ? 2.5 : 0.0;
        EXPECT_LT(((b.col(col) - a.col(col)).array() - c).abs().maxCoeff(), 1e-12);
      }
    }
  }
}

TEST(Mtand, EmptyChannelUsesGlobalMean) {
  const MtandConfig cfg = small_config();
  const MtandParams p = random_mtand_params(cfg, 2, 8);
  IrregularSeries s;
  s.channels = {{{1.0, 2.0}, {5.0, 3.0}}, {}};
  Vector means(2);
  means << 0.0, 7.5;
  const Matrix interp = mtand_interpolate(s, query_bins(cfg.bins, cfg.t_max), p, means);
  for (int h = 0; h < cfg.heads; ++h) {
    EXPECT_EQ((interp.col(h * 2 + 1).array() - 7.5).abs().maxCoeff(), 0.0);
  }
  const DiscretizedEmbedding z = mtand_discretize(s, query_bins(cfg.bins, cfg.t_max), p, means);
  EXPECT_EQ(z.z.rows(), cfg.bins);
  EXPECT_EQ(z.z.cols(), cfg.embed_dim);
  EXPECT_TRUE(z.z.allFinite());
}

TEST(Mtand, RejectsBadShapes) {
  const MtandParams p = random_mtand_params(small_config(), 2, 9);
  IrregularSeries s;
  s.channels = {{{1.0, 2.0}}, {{2.0, 1.0}}};
  EXPECT_THROW(mtand_discretize(s, Vector(0), p, Vector::Zero(2)), std::invalid_argument);
  EXPECT_THROW(mtand_discretize(s, query_bins(4, 48.0), p, Vector::Zero(3)), std::invalid_argument);
  s.channels.push_back({});
  EXPECT_THROW(mtand_discretize(s, query_bins(4, 48.0), p, Vector::Zero(3)), std::invalid_argument);
}

TEST(Mtand, GradientsAgreeWithFiniteDifferences) {
  GradcheckOptions opts;
  opts.scope = GradScope::Irregularity;
  opts.instances = 30;
  opts.seed = 5;
  EXPECT_EQ(run_gradcheck(opts).failures(), 0);
}

TEST(UtdeImpute, Examples) {
  IrregularSeries s;
  s.channels = {{{0.5, 5.0}}, {}};
  Vector bins(3);
  bins << 0.0, 1.0, 2.0;
  Vector means(2);
  means << 9.0, -1.0;
  const Matrix m = utde_impute(s, bins, means);
  EXPECT_EQ(m(0, 0), 9.0);
  EXPECT_EQ(m(1, 0), 5.0);
  EXPECT_EQ(m(2, 0), 5.0);
  EXPECT_EQ(m.col(1), Vector::Constant(3, -1.0));
  Vector unsorted(2);
  unsorted << 1.0, 0.0;
  EXPECT_THROW(utde_impute(s, unsorted, means), std::invalid_argument);
}

TEST(UtdeImpute, ObservationAtBinTimeCounts) {
  IrregularSeries s;
  s.channels = {{{1.0, 4.0}, {1.0, 6.0}, {2.0, 8.0}}};
  Vector bins(3);
  bins << 0.0, 1.0, 2.0;
  const Matrix m = utde_impute(s, bins, Vector::Zero(1));
  EXPECT_EQ(m(1, 0), 6.0);
  EXPECT_EQ(m(2, 0), 8.0);
}

TEST(UtdeImpute, MatchesLinearScanOracle) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 300; ++t) {
    const IrregularSeries s = random_series(4, 12, 48.0, rng);
    const Vector bins = query_bins(1 + static_cast<int>(rng() % 30), 48.0);
    std::normal_distribution<double> nd;
    const Vector means = Vector(4).unaryExpr([&](double) { return nd(rng); });
    const Matrix m = utde_impute(s, bins, means);
    const oracle::Mat expect =
        oracle::forward_fill(s, {bins.data(), bins.data() + bins.size()}, {means.data(), means.data() + 4});
    for (Eigen::Index i = 0; i < bins.size(); ++i) {
      for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(m(i, k), expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
      }
    }
  }
}

TEST(UtdeImpute, PiecewiseConstantAndMeanIndependentWhenCovered) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    IrregularSeries s = random_series(2, 6, 48.0, rng);
    for (auto& ch : s.channels) {
      ch.insert(ch.begin(), Observation{0.0, 1.0});
    }
    const Vector bins = query_bins(40, 48.0);
    const Matrix a = utde_impute(s, bins, Vector::Zero(2));
    const Matrix b = utde_impute(s, bins, Vector::Constant(2, 100.0));
    EXPECT_EQ(a, b);
    for (int k = 0; k < 2; ++k) {
      const auto& ch = s.channels[static_cast<std::size_t>(k)];
      for (Eigen::Index i = 1; i < bins.size(); ++i) {
        const bool crosses = std::any_of(ch.begin(), ch.end(), [&](const Observation& o) {
          return o.time > bins(i - 1) && o.time <= bins(i);
        });
        if (!crosses) {
          EXPECT_EQ(a(i, k), a(i - 1, k));
        }
      }
    }
  }
}

TEST(UtdeCombine, ConvexEndpointsAndMidpoint) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  const Matrix e1 = Matrix(6, 3).unaryExpr([&](double) { return nd(rng); });
  const Matrix e2 = Matrix(6, 3).unaryExpr([&](double) { return nd(rng); });
  GateMlp gate{Matrix::Zero(3, 6), Vector::Constant(3, 1000.0)};
  EXPECT_EQ(utde_combine(e1, e2, gate), e1);
  gate.b.setConstant(-1000.0);
  EXPECT_EQ(utde_combine(e1, e2, gate), e2);
  gate.b.setZero();
  EXPECT_LT((utde_combine(e1, e2, gate) - 0.5 * (e1 + e2)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(utde_combine(e1, Matrix::Zero(6, 2), gate), std::invalid_argument);
  EXPECT_THROW(utde_combine(e1, e2, GateMlp{Matrix::Zero(3, 3), Vector::Zero(3)}), std::invalid_argument);
}

TEST(UtdeCombine, OutputBetweenInputs) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 100; ++t) {
    const Matrix e1 = Matrix(4, 3).unaryExpr([&](double) { return nd(rng); });
    const Matrix e2 = Matrix(4, 3).unaryExpr([&](double) { return nd(rng); });
    const GateMlp gate{Matrix(3, 6).unaryExpr([&](double) { return 2.0 * nd(rng); }),
                       Vector(3).unaryExpr([&](double) { return nd(rng); })};
    const Matrix out = utde_combine(e1, e2, gate);
    EXPECT_TRUE((out.array() >= e1.array().min(e2.array()) - 1e-15).all());
    EXPECT_TRUE((out.array() <= e1.array().max(e2.array()) + 1e-15).all());
  }
}

TEST(Utde, EncoderShape) {
  MtandConfig cfg = small_config();
  std::mt19937_64 rng(14);
  const IrregularSeries s = random_series(3, 6, 48.0, rng);
  const UtdeParams p = random_utde_params(cfg, 3, 1);
  const Vector means = channel_means(std::span<const IrregularSeries>(&s, 1));
  const Matrix z = utde_encode(s, query_bins(cfg.bins, cfg.t_max), p, means);
  EXPECT_EQ(z.rows(), cfg.bins);
  EXPECT_EQ(z.cols(), cfg.embed_dim);
  EXPECT_TRUE(z.allFinite());
}

TEST(IrregularSeries, Validation) {
  IrregularSeries s;
  s.channels = {{{1.0, 0.0}, {0.5, 0.0}}};
  EXPECT_THROW(s.validate(48.0), std::invalid_argument);
  s.channels = {{{49.0, 0.0}}};
  EXPECT_THROW(s.validate(48.0), std::invalid_argument);
  s.channels = {{{1.0, std::numeric_limits<double>::infinity()}}};
  EXPECT_THROW(s.validate(48.0), std::invalid_argument);
  s.channels = {{{1.0, 2.0}, {1.0, 3.0}}, {}};
  EXPECT_NO_THROW(s.validate(48.0));
}
