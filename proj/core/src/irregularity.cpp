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

#include "lapmoe/irregularity.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace lapmoe {

void IrregularSeries::validate(double t_max) const {
  for (std::size_t k = 0; k < channels.size(); ++k) {
    double prev = 0.0;
    for (const Observation& o : channels[k]) {
      if (!std::isfinite(o.time) || !std::isfinite(o.value)) {
        throw std::invalid_argument("IrregularSeries: non-finite observation in channel " + std::to_string(k));
      }
      if (o.time < 0.0 || o.time > t_max) {
        throw std::invalid_argument("IrregularSeries: time " + std::to_string(o.time) + " outside [0, " +
                                    std::to_string(t_max) + "] in channel " + std::to_string(k));
      }
      if (o.time < prev) {
        throw std::invalid_argument("IrregularSeries: times decrease in channel " + std::to_string(k));
      }
      prev = o.time;
    }
  }
}

Vector time_embed(double tau, const TimeEmbedding& emb) {
  if (!std::isfinite(tau)) {
    throw std::invalid_argument("time_embed: non-finite time");
  }
  if (emb.dim() < 2 || emb.phase.size() != emb.freq.size()) {
    throw std::invalid_argument("time_embed: embedding needs matching freq/phase of length >= 2");
  }
  Vector out(emb.dim());
  out(0) = emb.freq(0) * tau;
  for (int i = 1; i < emb.dim(); ++i) {
    out(i) = std::sin(emb.freq(i) * tau + emb.phase(i));
  }
  return out;
}

Matrix embed_times(std::span<const double> times, const TimeEmbedding& emb) {
  Matrix out(static_cast<Eigen::Index>(times.size()), emb.dim());
  for (std::size_t r = 0; r < times.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = time_embed(times[r], emb).transpose();
  }
  return out;
}

void MtandParams::validate(int channels) const {
  if (heads.empty()) {
    throw std::invalid_argument("MtandParams: need at least one head");
  }
  for (const AttentionHead& h : heads) {
    if (h.emb.dim() < 2 || h.emb.phase.size() != h.emb.freq.size()) {
      throw std::invalid_argument("MtandParams: time embedding must have dimension >= 2");
    }
    if (h.query.rows() != h.emb.dim() || h.key.rows() != h.emb.dim() || h.query.cols() != h.key.cols()) {
      throw std::invalid_argument("MtandParams: query/key shapes do not match the time embedding");
    }
    if (!h.emb.freq.allFinite() || !h.emb.phase.allFinite() || !h.query.allFinite() || !h.key.allFinite()) {
      throw std::invalid_argument("MtandParams: non-finite head parameter");
    }
  }
  if (projection.cols() != static_cast<Eigen::Index>(heads.size()) * channels || projection.rows() < 1) {
    throw std::invalid_argument("MtandParams: projection must be embed_dim x (heads * channels) = ? x " +
                                std::to_string(heads.size() * static_cast<std::size_t>(channels)));
  }
  if (!projection.allFinite()) {
    throw std::invalid_argument("MtandParams: non-finite projection");
  }
}

namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  return Matrix(rows, cols).unaryExpr([&](double) { return nd(rng); });
}

}  // namespace

MtandParams random_mtand_params(const MtandConfig& cfg, int channels, std::uint64_t seed) {
  if (cfg.heads < 1 || cfg.time_dim < 2 || cfg.attention_dim < 1 || cfg.embed_dim < 1 || channels < 1) {
    throw std::invalid_argument("random_mtand_params: invalid sizes");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  MtandParams p;
  for (int h = 0; h < cfg.heads; ++h) {
    AttentionHead head;
    head.emb.freq = gaussian_matrix(cfg.time_dim, 1, 0.1, rng);
    head.emb.phase = Vector(cfg.time_dim).unaryExpr([&](double) { return phase(rng); });
    head.emb.phase(0) = 0.0;
    head.query = gaussian_matrix(cfg.time_dim, cfg.attention_dim, 1.0 / std::sqrt(cfg.time_dim), rng);
    head.key = gaussian_matrix(cfg.time_dim, cfg.attention_dim, 1.0 / std::sqrt(cfg.time_dim), rng);
    p.heads.push_back(std::move(head));
  }
  p.projection = gaussian_matrix(cfg.embed_dim, static_cast<Eigen::Index>(cfg.heads) * channels,
                                 1.0 / std::sqrt(static_cast<double>(cfg.heads) * channels), rng);
  return p;
}

Vector query_bins(int count, double t_max) {
  if (count < 1) {
    throw std::invalid_argument("query_bins: need at least one bin");
  }
  if (!(t_max > 0.0) || !std::isfinite(t_max)) {
    throw std::invalid_argument("query_bins: t_max must be positive");
  }
  if (count == 1) {
    return Vector::Zero(1);
  }
  Vector out(count);
  for (int i = 0; i < count; ++i) {
    out(i) = t_max * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return out;
}

Vector channel_means(std::span<const IrregularSeries> data) {
  if (data.empty()) {
    throw std::invalid_argument("channel_means: no series");
  }
  const int channels = data.front().num_channels();
  Vector sum = Vector::Zero(channels);
  Vector count = Vector::Zero(channels);
  for (const IrregularSeries& s : data) {
    if (s.num_channels() != channels) {
      throw std::invalid_argument("channel_means: series differ in channel count");
    }
    for (int k = 0; k < channels; ++k) {
      for (const Observation& o : s.channels[static_cast<std::size_t>(k)]) {
        sum(k) += o.value;
        count(k) += 1.0;
      }
    }
  }
  Vector out = Vector::Zero(channels);
  for (int k = 0; k < channels; ++k) {
    if (count(k) > 0.0) {
      out(k) = sum(k) / count(k);
    }
  }
  return out;
}

namespace {

struct ChannelData {
  std::vector<double> times;
  Vector values;
};

ChannelData split(const std::vector<Observation>& obs) {
  ChannelData c;
  c.times.reserve(obs.size());
  c.values.resize(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    c.times.push_back(obs[i].time);
    c.values(static_cast<Eigen::Index>(i)) = obs[i].value;
  }
  return c;
}

void row_softmax(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double top = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - top).exp();
    s.row(r) /= s.row(r).sum();
  }
}

void check_queries(const Vector& queries) {
  if (queries.size() < 1) {
    throw std::invalid_argument("mtand: need at least one query bin");
  }
  if (!queries.allFinite()) {
    throw std::invalid_argument("mtand: non-finite query time");
  }
}

void check_inputs(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                  const Vector& global_means) {
  check_queries(queries);
  p.validate(series.num_channels());
  if (global_means.size() != series.num_channels()) {
    throw std::invalid_argument("mtand: global means have length " + std::to_string(global_means.size()) +
                                ", series has " + std::to_string(series.num_channels()) + " channels");
  }
  for (std::size_t k = 0; k < series.channels.size(); ++k) {
    for (const Observation& o : series.channels[k]) {
      if (!std::isfinite(o.time) || !std::isfinite(o.value)) {
        throw std::invalid_argument("mtand: non-finite observation in channel " + std::to_string(k));
      }
    }
  }
}

}  // namespace

Matrix mtand_attention(const Vector& queries, std::span<const double> times, const AttentionHead& head) {
  check_queries(queries);
  if (times.empty()) {
    throw std::invalid_argument("mtand_attention: channel has no observations");
  }
  const std::span<const double> q(queries.data(), static_cast<std::size_t>(queries.size()));
  const Matrix eq = embed_times(q, head.emb);
  const Matrix ek = embed_times(times, head.emb);
  Matrix s = (eq * head.query) * (ek * head.key).transpose() / std::sqrt(static_cast<double>(times.size()));
  row_softmax(s);
  return s;
}

Matrix mtand_interpolate(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                         const Vector& global_means) {
  check_inputs(series, queries, p, global_means);
  const int m = series.num_channels();
  Matrix out(queries.size(), static_cast<Eigen::Index>(p.num_heads()) * m);
  for (int k = 0; k < m; ++k) {
    const ChannelData c = split(series.channels[static_cast<std::size_t>(k)]);
    for (int h = 0; h < p.num_heads(); ++h) {
      const Eigen::Index col = static_cast<Eigen::Index>(h) * m + k;
      if (c.times.empty()) {
        out.col(col).setConstant(global_means(k));
      } else {
        out.col(col) = mtand_attention(queries, c.times, p.heads[static_cast<std::size_t>(h)]) * c.values;
      }
    }
  }
  return out;
}

DiscretizedEmbedding mtand_discretize(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                                      const Vector& global_means) {
  DiscretizedEmbedding out;
  out.z = mtand_interpolate(series, queries, p, global_means) * p.projection.transpose();
  out.bin_times = queries;
  return out;
}

namespace {

// Accumulate d/d(freq, phase) of a block of embedded times given d/d(embedding).
void embedding_backward(std::span<const double> times, const TimeEmbedding& emb, const Matrix& grad,
                        HeadGradients& out) {
  for (std::size_t r = 0; r < times.size(); ++r) {
    const double tau = times[r];
    const auto row = static_cast<Eigen::Index>(r);
    out.freq(0) += grad(row, 0) * tau;
    for (int i = 1; i < emb.dim(); ++i) {
      const double c = std::cos(emb.freq(i) * tau + emb.phase(i)) * grad(row, i);
      out.freq(i) += c * tau;
      out.phase(i) += c;
    }
  }
}

}  // namespace

MtandGradients mtand_gradients(const IrregularSeries& series, const Vector& queries, const MtandParams& p,
                               const Vector& global_means, const Matrix& upstream) {
  const Matrix interp = mtand_interpolate(series, queries, p, global_means);
  if (upstream.rows() != queries.size() || upstream.cols() != p.embed_dim()) {
    throw std::invalid_argument("mtand_gradients: upstream gradient has the wrong shape");
  }
  MtandGradients g;
  g.projection = upstream.transpose() * interp;
  const Matrix d_interp = upstream * p.projection;

  const int m = series.num_channels();
  const std::span<const double> q(queries.data(), static_cast<std::size_t>(queries.size()));
  for (int h = 0; h < p.num_heads(); ++h) {
    const AttentionHead& head = p.heads[static_cast<std::size_t>(h)];
    HeadGradients hg{Vector::Zero(head.emb.dim()), Vector::Zero(head.emb.dim()),
                     Matrix::Zero(head.query.rows(), head.query.cols()), Matrix::Zero(head.key.rows(), head.key.cols())};
    const Matrix eq = embed_times(q, head.emb);
    const Matrix mix = head.query * head.key.transpose();
    Matrix d_eq = Matrix::Zero(eq.rows(), eq.cols());
    Matrix d_mix = Matrix::Zero(mix.rows(), mix.cols());
    for (int k = 0; k < m; ++k) {
      const ChannelData c = split(series.channels[static_cast<std::size_t>(k)]);
      if (c.times.empty()) {
        continue;
      }
      const double scale = 1.0 / std::sqrt(static_cast<double>(c.times.size()));
      const Matrix ek = embed_times(c.times, head.emb);
      Matrix attn = scale * eq * mix * ek.transpose();
      row_softmax(attn);
      const Vector dx = d_interp.col(static_cast<Eigen::Index>(h) * m + k);
      const Matrix d_attn = dx * c.values.transpose();
      const Vector inner = (d_attn.array() * attn.array()).rowwise().sum();
      const Matrix d_score = scale * (attn.array() * (d_attn.colwise() - inner).array()).matrix();
      d_eq += d_score * ek * mix.transpose();
      d_mix += eq.transpose() * d_score * ek;
      const Matrix d_ek = d_score.transpose() * eq * mix;
      embedding_backward(c.times, head.emb, d_ek, hg);
    }
    embedding_backward(q, head.emb, d_eq, hg);
    hg.query = d_mix * head.key;
    hg.key = d_mix.transpose() * head.query;
    g.heads.push_back(std::move(hg));
  }
  return g;
}

Matrix utde_impute(const IrregularSeries& series, const Vector& bins, const Vector& global_means) {
  if (global_means.size() != series.num_channels()) {
    throw std::invalid_argument("utde_impute: global means do not match the channel count");
  }
  for (Eigen::Index i = 1; i < bins.size(); ++i) {
    if (bins(i) < bins(i - 1)) {
      throw std::invalid_argument("utde_impute: bins must be ascending");
    }
  }
  Matrix out(bins.size(), series.num_channels());
  for (int k = 0; k < series.num_channels(); ++k) {
    const auto& obs = series.channels[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < bins.size(); ++i) {
      // First observation strictly after the bin; the one before it is the latest at or before.
      const auto it = std::upper_bound(obs.begin(), obs.end(), bins(i),
                                       [](double t, const Observation& o) { return t < o.time; });
      out(i, k) = it == obs.begin() ? global_means(k) : std::prev(it)->value;
    }
  }
  return out;
}

Matrix utde_gate(const Matrix& e_imp, const Matrix& e_mtand, const GateMlp& gate) {
  if (e_imp.rows() != e_mtand.rows() || e_imp.cols() != e_mtand.cols()) {
    throw std::invalid_argument("utde_combine: embeddings differ in shape");
  }
  const Eigen::Index d = e_imp.cols();
  if (gate.w.rows() != d || gate.w.cols() != 2 * d || gate.b.size() != d) {
    throw std::invalid_argument("utde_combine: gate must map 2*" + std::to_string(d) + " -> " + std::to_string(d));
  }
  Matrix cat(e_imp.rows(), 2 * d);
  cat << e_imp, e_mtand;
  Matrix pre = cat * gate.w.transpose();
  pre.rowwise() += gate.b.transpose();
  return pre.unaryExpr([](double u) { return sigmoid(u); });
}

Matrix utde_combine(const Matrix& e_imp, const Matrix& e_mtand, const GateMlp& gate) {
  const Matrix g = utde_gate(e_imp, e_mtand, gate);
  return (g.array() * e_imp.array() + (1.0 - g.array()) * e_mtand.array()).matrix();
}

UtdeParams random_utde_params(const MtandConfig& cfg, int channels, std::uint64_t seed) {
  UtdeParams p;
  p.mtand = random_mtand_params(cfg, channels, derive_seed(seed, {1}));
  std::mt19937_64 rng(derive_seed(seed, {2}));
  p.imputation_projection = gaussian_matrix(cfg.embed_dim, channels, 1.0 / std::sqrt(channels), rng);
  p.gate.w = gaussian_matrix(cfg.embed_dim, 2 * static_cast<Eigen::Index>(cfg.embed_dim),
                             1.0 / std::sqrt(2.0 * cfg.embed_dim), rng);
  p.gate.b = Vector::Zero(cfg.embed_dim);
  return p;
}

Matrix utde_encode(const IrregularSeries& series, const Vector& bins, const UtdeParams& p, const Vector& global_means) {
  if (p.imputation_projection.cols() != series.num_channels() ||
      p.imputation_projection.rows() != p.mtand.embed_dim()) {
    throw std::invalid_argument("utde_encode: imputation projection must be embed_dim x channels");
  }
  const Matrix e_imp = utde_impute(series, bins, global_means) * p.imputation_projection.transpose();
  const Matrix e_mtand = mtand_discretize(series, bins, p.mtand, global_means).z;
  return utde_combine(e_imp, e_mtand, p.gate);
}

}  // namespace lapmoe
