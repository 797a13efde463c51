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

// Irregular time-series encoder. Observations per channel are resampled onto
// regular query bins by multi-time attention over learned time embeddings,
// and separately by forward-fill imputation; a sigmoid gate mixes the two.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lapmoe/numeric.hpp"

namespace lapmoe {

struct Observation {
  double time = 0.0;
  double value = 0.0;
};

struct IrregularSeries {
  /// channels[k] holds the observations of channel k, times nondecreasing.
  std::vector<std::vector<Observation>> channels;

  int num_channels() const { return static_cast<int>(channels.size()); }
  void validate(double t_max) const;
};

/// Component 0 is freq[0] * tau; component i > 0 is sin(freq[i] * tau + phase[i]).
struct TimeEmbedding {
  Vector freq;
  Vector phase;

  int dim() const { return static_cast<int>(freq.size()); }
};

Vector time_embed(double tau, const TimeEmbedding& emb);
/// One row per time.
Matrix embed_times(std::span<const double> times, const TimeEmbedding& emb);

struct AttentionHead {
  TimeEmbedding emb;
  Matrix query;  // time_dim x attention_dim
  Matrix key;    // time_dim x attention_dim
};

struct MtandParams {
  std::vector<AttentionHead> heads;
  /// embed_dim x (heads * channels). Column h * channels + k reads head h, channel k.
  Matrix projection;

  int num_heads() const { return static_cast<int>(heads.size()); }
  int embed_dim() const { return static_cast<int>(projection.rows()); }
  void validate(int channels) const;
};

struct MtandConfig {
  int heads = 8;
  int time_dim = 64;
  int attention_dim = 128;
  int embed_dim = 128;
  int bins = 48;
  double t_max = 48.0;
};

MtandParams random_mtand_params(const MtandConfig& cfg, int channels, std::uint64_t seed);

/// `count` equally spaced times on [0, t_max], endpoints included.
Vector query_bins(int count, double t_max);

/// Per-channel mean over every observation in the given series; channels with
/// no observations anywhere get 0.
Vector channel_means(std::span<const IrregularSeries> data);

/// Row-stochastic gamma x l attention of the query times over one channel's
/// observation times.
Matrix mtand_attention(const Vector& queries, std::span<const double> times, const AttentionHead& head);

struct DiscretizedEmbedding {
  Matrix z;  // gamma x embed_dim
  Vector bin_times;
};

/// gamma x (heads * channels) interpolation matrix before projection. A
/// channel without observations is filled with its global mean.
Matrix mtand_interpolate(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                         const Vector& global_means);

DiscretizedEmbedding mtand_discretize(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                                      const Vector& global_means);

struct HeadGradients {
  Vector freq;
  Vector phase;
  Matrix query;
  Matrix key;
};

struct MtandGradients {
  std::vector<HeadGradients> heads;
  Matrix projection;
};

/// Gradients of sum(upstream .* Z) with respect to every learnable parameter.
MtandGradients mtand_gradients(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                               const Vector& global_means, const Matrix& upstream);

/// gamma x channels forward-fill: the latest value observed at or before each
/// bin, otherwise the channel's global mean. Bins must be ascending.
Matrix utde_impute(const IrregularSeries& series, const Vector& bins, const Vector& global_means);

/// Single affine layer on the concatenation [E_imp, E_mtand], then sigmoid.
struct GateMlp {
  Matrix w;  // dim x 2 dim
  Vector b;  // dim
};

Matrix utde_gate(const Matrix& e_imp, const Matrix& e_mtand, const GateMlp& gate);
/// g .* E_imp + (1 - g) .* E_mtand.
Matrix utde_combine(const Matrix& e_imp, const Matrix& e_mtand, const GateMlp& gate);

struct UtdeParams {
  MtandParams mtand;
  /// embed_dim x channels, lifts the imputed values into the embedding space.
  Matrix imputation_projection;
  GateMlp gate;
};

UtdeParams random_utde_params(const MtandConfig& cfg, int channels, std::uint64_t seed);

Matrix utde_encode(const IrregularSeries& series, const Vector& bins, const UtdeParams& p, const Vector& global_means);

}  // namespace lapmoe
