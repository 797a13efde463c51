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

// Command-line driver for the lapmoe library.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lapmoe/fusion.hpp"
#include "lapmoe/gating.hpp"
#include "lapmoe/gmoe.hpp"
#include "lapmoe/gradcheck.hpp"
#include "lapmoe/irregularity.hpp"
#include "lapmoe/measure_io.hpp"
#include "lapmoe/rate_study.hpp"
#include "lapmoe/series_io.hpp"
#include "lapmoe/voronoi.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitGradcheck = 3;
constexpr int kExitMissingRBar = 4;

using namespace lapmoe;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot write '" + path.string() + "'");
  }
  return out;
}

void make_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
}

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + format_double(v(i));
  }
  return out;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  return Matrix(rows, cols).unaryExpr([&](double) { return nd(rng); });
}

// rate-study ---------------------------------------------------------------

struct RateStudyArgs {
  std::string setting = "exact";
  RateStudyConfig cfg;
  std::vector<int> n_grid;
  bool paper_scale = false;
  std::string out = "rate_study";
  bool verbose = false;
};

void add_rate_study(CLI::App& app, RateStudyArgs& a) {
  auto* sub = app.add_subcommand("rate-study", "Convergence-rate study of the EM estimator under the Voronoi loss");
  sub->add_option("--setting", a.setting, "exact (k = k_true) or over (k = k_true + 1)")->capture_default_str();
  sub->add_option("--d", a.cfg.d, "Input dimension")->capture_default_str();
  sub->add_option("--k-true", a.cfg.k_true, "Components of the true measure")->capture_default_str();
  sub->add_option("--k", a.cfg.k, "Fitted components (0: derived from the setting)")->capture_default_str();
  sub->add_option("--n-grid", a.n_grid, "Sample sizes, strictly increasing");
  sub->add_flag("--paper-scale", a.paper_scale, "Use ten log-spaced sizes from 1e3 to 1e5");
  sub->add_option("--replications", a.cfg.replications, "Datasets per sample size")->capture_default_str();
  sub->add_option("--seed", a.cfg.seed, "Base seed")->capture_default_str();
  sub->add_option("--perturb-std", a.cfg.perturb_std, "Initialisation noise around the truth")->capture_default_str();
  sub->add_option("--em-tolerance", a.cfg.em_tolerance, "EM stop when |delta loglik| falls below this")
      ->capture_default_str();
  sub->add_option("--em-max-iterations", a.cfg.em_max_iterations, "EM iteration cap")->capture_default_str();
  sub->add_option("--threads", a.cfg.threads, "Worker threads (0: all cores)")->capture_default_str();
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_flag("--verbose", a.verbose, "Print one line per finished run to stderr");
}

int run_rate_study_cmd(RateStudyArgs& a) {
  try {
    a.cfg.setting = parse_setting(a.setting);
    if (a.paper_scale && !a.n_grid.empty()) {
      throw std::invalid_argument("--paper-scale and --n-grid are mutually exclusive");
    }
    if (a.paper_scale) {
      a.cfg.n_grid = paper_grid();
    } else if (!a.n_grid.empty()) {
      a.cfg.n_grid = a.n_grid;
    }
    a.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::filesystem::path dir(a.out);
  make_directory(dir);

  ProgressFn progress;
  if (a.verbose) {
    progress = [](const RateStudyRecord& r) {
      std::cerr << "n=" << r.n << " rep=" << r.replication << " loss=" << format_double(r.loss)
                << " iterations=" << r.em_iterations << (r.converged ? "" : " (not converged)") << '\n';
    };
  }
  const RateStudyResult res = run_rate_study(a.cfg, progress);

  auto records = open_output(dir / "records.csv");
  write_records_csv(records, res.records);
  auto slope = open_output(dir / "slope.csv");
  write_slope_csv(slope, a.cfg.setting, res.fit);
  auto summary = open_output(dir / "summary.csv");
  write_summary_csv(summary, a.cfg.setting, res.summaries);
  auto truth = open_output(dir / "truth.json");
  write_measure(truth, res.truth);

  int unconverged = 0;
  for (const RateStudyRecord& r : res.records) {
    unconverged += r.converged ? 0 : 1;
  }
  std::cout << to_string(a.cfg.setting) << " slope " << format_double(res.fit.slope) << " (stderr "
            << format_double(res.fit.stderr_slope) << ") over " << res.records.size() << " runs";
  if (unconverged > 0) {
    std::cout << ", " << unconverged << " hit the EM iteration cap";
  }
  std::cout << "\nwrote " << (dir / "records.csv").string() << ", slope.csv, summary.csv, truth.json\n";
  return kExitOk;
}

// em-fit ------------------------------------------------------------------

struct EmFitArgs {
  std::string setting = "exact";
  int d = 2;
  int k_true = 2;
  int k = 0;
  int n = 2000;
  std::uint64_t seed = 42;
  double perturb_std = 0.05;
  std::string truth;
  std::string out;
};

void add_em_fit(CLI::App& app, EmFitArgs& a) {
  auto* sub = app.add_subcommand("em-fit", "Fit one synthetic dataset by EM from a near-truth start");
  sub->add_option("--setting", a.setting, "exact or over")->capture_default_str();
  sub->add_option("--d", a.d, "Input dimension")->capture_default_str();
  sub->add_option("--k-true", a.k_true, "Components of the sampled true measure")->capture_default_str();
  sub->add_option("--k", a.k, "Fitted components (0: derived from the setting)")->capture_default_str();
  sub->add_option("--n", a.n, "Sample size")->capture_default_str();
  sub->add_option("--seed", a.seed, "Seed")->capture_default_str();
  sub->add_option("--perturb-std", a.perturb_std, "Initialisation noise")->capture_default_str();
  sub->add_option("--truth", a.truth, "Read the true measure from this JSON file instead of sampling it");
  sub->add_option("--out", a.out, "Write the fitted measure as JSON");
}

int run_em_fit_cmd(const EmFitArgs& a) {
  Setting setting;
  MixingMeasure truth;
  try {
    setting = parse_setting(a.setting);
    if (a.n < 10) {
      throw std::invalid_argument("--n must be >= 10");
    }
    if (a.truth.empty()) {
      truth = sample_true_measure(a.d, derive_seed(a.seed, {0}), TruthPrior{a.k_true});
    } else {
      std::ifstream in(a.truth);
      if (!in) {
        throw std::invalid_argument("cannot open '" + a.truth + "'");
      }
      truth = read_measure(in).anchored();
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const int k = a.k > 0 ? a.k : (setting == Setting::Exact ? truth.k() : truth.k() + 1);
  if (k < truth.k()) {
    throw ConfigError("--k must be at least the number of true components");
  }
  const RegressionDataset data = sample_synthetic(truth, a.n, derive_seed(a.seed, {1}));
  const NearTruthInit init = init_near_truth(truth, k, a.perturb_std, derive_seed(a.seed, {2}));
  const EmResult fit = em_fit(data, init.measure);
  const double loss = setting == Setting::Exact && k == truth.k() ? loss_d1(fit.fit, truth) : loss_d2(fit.fit, truth);

  std::cout << "n=" << a.n << " k=" << k << " iterations=" << fit.iterations
            << (fit.converged ? " converged" : " stopped at the iteration cap") << '\n';
  std::cout << "loglik init=" << format_double(fit.trace.front()) << " final=" << format_double(fit.final_loglik())
            << " truth=" << format_double(log_likelihood(truth, data)) << '\n';
  std::cout << (setting == Setting::Exact && k == truth.k() ? "D1=" : "D2=") << format_double(loss) << '\n';
  if (!a.out.empty()) {
    auto out = open_output(a.out);
    write_measure(out, fit.fit);
  } else {
    write_measure(std::cout, fit.fit);
  }
  return kExitOk;
}

// gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  std::vector<std::string> scopes{"gating", "fusion", "irregularity"};
  GradcheckOptions opts;
  bool verbose = false;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
  auto* sub = app.add_subcommand("gradcheck", "Compare analytic gradients against central finite differences");
  sub->add_option("--scope", a.scopes, "Any of gating, fusion, irregularity")->capture_default_str();
  sub->add_option("--instances", a.opts.instances, "Random instances per variant")->capture_default_str();
  sub->add_option("--seed", a.opts.seed, "Seed")->capture_default_str();
  sub->add_option("--tolerance", a.opts.tolerance, "Maximum relative error")->capture_default_str();
  sub->add_option("--step", a.opts.step, "Finite-difference step")->capture_default_str();
  sub->add_flag("--inject-fault", a.opts.inject_fault, "Corrupt one analytic entry per instance");
  sub->add_flag("--verbose", a.verbose, "Print every instance, not only failures");
}

int run_gradcheck_cmd(const GradcheckArgs& a) {
  std::vector<GradScope> scopes;
  try {
    for (const std::string& s : a.scopes) {
      scopes.push_back(parse_grad_scope(s));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  bool ok = true;
  for (GradScope scope : scopes) {
    GradcheckOptions opts = a.opts;
    opts.scope = scope;
    GradcheckReport report;
    try {
      report = run_gradcheck(opts);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (a.verbose) {
      write_gradcheck_report(std::cout, report);
    } else {
      std::ostringstream all;
      write_gradcheck_report(all, report);
      std::istringstream lines(all.str());
      std::string line;
      while (std::getline(lines, line)) {
        if (line.rfind("ok   ", 0) != 0) {
          std::cout << line << '\n';
        }
      }
    }
    ok = ok && report.passed();
  }
  return ok ? kExitOk : kExitGradcheck;
}

// gate-demo ---------------------------------------------------------------

struct GateDemoArgs {
  std::string kind = "laplace";
  int experts = 16;
  int k = 4;
  int dim = 8;
  std::uint64_t seed = 42;
};

void add_gate_demo(CLI::App& app, GateDemoArgs& a) {
  auto* sub = app.add_subcommand("gate-demo", "Route one random input through a random Top-K gate");
  sub->add_option("--kind", a.kind, "softmax, laplace or gaussian")->capture_default_str();
  sub->add_option("--experts", a.experts, "Number of experts")->capture_default_str();
  sub->add_option("--top-k", a.k, "Experts kept per input")->capture_default_str();
  sub->add_option("--dim", a.dim, "Input dimension")->capture_default_str();
  sub->add_option("--seed", a.seed, "Seed")->capture_default_str();
}

int run_gate_demo_cmd(const GateDemoArgs& a) {
  std::mt19937_64 rng(a.seed);
  GateKind kind;
  std::optional<GateParams> gate;
  try {
    kind = parse_gate_kind(a.kind);
    if (a.dim < 1) {
      throw std::invalid_argument("--dim must be >= 1");
    }
    if (a.experts < 1) {
      throw std::invalid_argument("--experts must be >= 1");
    }
    gate.emplace(gaussian(a.dim, a.experts, 1.0, rng), kind, a.k);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Vector x = gaussian(a.dim, 1, 1.0, rng);
  const Vector scores = gate_scores(x, *gate);
  const SparseGateWeights sg = topk_gate(x, *gate);
  std::cout << "gate " << to_string(kind) << ", " << a.experts << " experts, top-" << a.k << '\n';
  std::cout << "expert,score,weight\n";
  for (int s = 0; s < a.experts; ++s) {
    std::cout << s << ',' << format_double(scores(s)) << ',' << format_double(sg.weights(s)) << '\n';
  }
  std::cout << "selected:";
  for (int s : sg.selected) {
    std::cout << ' ' << s;
  }
  std::cout << "\nselection margin " << format_double(selection_margin(scores, a.k)) << (sg.tie ? " (tie)" : "")
            << '\n';
  return kExitOk;
}

// fusion-demo -------------------------------------------------------------

struct FusionDemoArgs {
  FusionConfig cfg;
  std::string gate = "laplace";
  std::string router = "joint";
  int modalities = 3;
  int tokens = 48;
  int dim = 32;
  std::vector<int> missing;
  std::uint64_t seed = 42;
};

void add_fusion_demo(CLI::App& app, FusionDemoArgs& a) {
  auto* sub = app.add_subcommand("fusion-demo", "Run a random stacked MoE fusion network on random modalities");
  sub->add_option("--gate", a.gate, "softmax, laplace or gaussian")->capture_default_str();
  sub->add_option("--router", a.router, "joint, per-modality or disjoint")->capture_default_str();
  sub->add_option("--experts", a.cfg.experts, "Experts per layer")->capture_default_str();
  sub->add_option("--top-k", a.cfg.top_k, "Experts kept per token (joint, per-modality)")->capture_default_str();
  sub->add_option("--disjoint-top-k", a.cfg.disjoint_top_k, "Experts kept per token within a group")
      ->capture_default_str();
  sub->add_option("--hidden", a.cfg.hidden, "Expert hidden width")->capture_default_str();
  sub->add_option("--layers", a.cfg.layers, "Stacked MoE layers")->capture_default_str();
  sub->add_option("--modalities", a.modalities, "Number of modalities")->capture_default_str();
  sub->add_option("--tokens", a.tokens, "Time bins per modality")->capture_default_str();
  sub->add_option("--dim", a.dim, "Embedding width per modality")->capture_default_str();
  sub->add_option("--missing", a.missing, "Indices of absent modalities");
  sub->add_option("--seed", a.seed, "Seed")->capture_default_str();
}

int run_fusion_demo_cmd(FusionDemoArgs& a) {
  std::vector<FusionLayer> layers;
  ModalityBatch batch;
  try {
    a.cfg.gate = parse_gate_kind(a.gate);
    a.cfg.router = parse_router_mode(a.router);
    if (a.cfg.layers < 1) {
      throw std::invalid_argument("--layers must be >= 1");
    }
    for (int l = 0; l < a.cfg.layers; ++l) {
      layers.push_back(make_fusion_layer(a.cfg, a.modalities, a.tokens, a.dim, derive_seed(a.seed, {1, static_cast<std::uint64_t>(l)})));
    }
    std::mt19937_64 rng(derive_seed(a.seed, {2}));
    for (int j = 0; j < a.modalities; ++j) {
      batch.embeddings.push_back(gaussian(a.tokens, a.dim, 1.0, rng));
      batch.present.push_back(true);
      batch.ids.push_back("m" + std::to_string(j));
    }
    for (int j : a.missing) {
      if (j < 0 || j >= a.modalities) {
        throw std::invalid_argument("--missing index " + std::to_string(j) + " out of range");
      }
      batch.present[static_cast<std::size_t>(j)] = false;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const FusionOutput out = stack_forward(batch, layers);
  std::cout << a.cfg.layers << " layer(s), " << a.cfg.experts << " experts, router " << to_string(a.cfg.router)
            << ", gate " << to_string(a.cfg.gate) << '\n';
  std::cout << "fused outputs:";
  for (const Matrix& f : out.fused) {
    std::cout << ' ' << f.rows() << 'x' << f.cols();
  }
  std::cout << '\n';
  std::cout << "last-layer expert usage (mean gate weight per router):\n";
  std::vector<Vector> all;
  for (std::size_t r = 0; r < out.gate_records.size(); ++r) {
    Vector p = Vector::Zero(a.cfg.experts);
    for (const Vector& w : out.gate_records[r]) {
      p += w;
      all.push_back(w);
    }
    p /= static_cast<double>(out.gate_records[r].size());
    std::cout << "  router " << r << ": " << join(p) << '\n';
  }
  if (out.gate_records.size() > 1) {
    std::cout << "entropy loss " << format_double(entropy_reg_loss(out.gate_records)) << '\n';
  }
  std::cout << "importance loss " << format_double(importance_loss(all)) << '\n';
  return kExitOk;
}

// encode-demo -------------------------------------------------------------

struct EncodeDemoArgs {
  MtandConfig cfg;
  std::string series;
  int channels = 4;
  std::uint64_t seed = 42;
  std::string out;
};

void add_encode_demo(CLI::App& app, EncodeDemoArgs& a) {
  auto* sub = app.add_subcommand("encode-demo", "Encode an irregular series onto regular bins");
  sub->add_option("--series", a.series, "channel_id,time,value file (random series when omitted)");
  sub->add_option("--channels", a.channels, "Channels of the random series")->capture_default_str();
  sub->add_option("--bins", a.cfg.bins, "Query bins on [0, t-max]")->capture_default_str();
  sub->add_option("--t-max", a.cfg.t_max, "Largest observation time")->capture_default_str();
  sub->add_option("--heads", a.cfg.heads, "Attention heads")->capture_default_str();
  sub->add_option("--time-dim", a.cfg.time_dim, "Time embedding width")->capture_default_str();
  sub->add_option("--attention-dim", a.cfg.attention_dim, "Attention width")->capture_default_str();
  sub->add_option("--embed-dim", a.cfg.embed_dim, "Output embedding width")->capture_default_str();
  sub->add_option("--seed", a.seed, "Seed")->capture_default_str();
  sub->add_option("--out", a.out, "Write the gamma x embed-dim embedding as CSV");
}

int run_encode_demo_cmd(const EncodeDemoArgs& a) {
  IrregularSeries series;
  UtdeParams params;
  Vector bins;
  try {
    if (!a.series.empty()) {
      series = read_series_file(a.series);
    } else {
      if (a.channels < 1) {
        throw std::invalid_argument("--channels must be >= 1");
      }
      std::mt19937_64 rng(derive_seed(a.seed, {1}));
      std::uniform_real_distribution<double> when(0.0, a.cfg.t_max);
      std::normal_distribution<double> value(0.0, 1.0);
      std::poisson_distribution<int> count(6.0);
      series.channels.resize(static_cast<std::size_t>(a.channels));
      for (auto& ch : series.channels) {
        const int l = count(rng);
        for (int i = 0; i < l; ++i) {
          ch.push_back({when(rng), value(rng)});
        }
        std::sort(ch.begin(), ch.end(), [](const Observation& x, const Observation& y) { return x.time < y.time; });
      }
    }
    series.validate(a.cfg.t_max);
    if (series.num_channels() < 1) {
      throw std::invalid_argument("series has no channels");
    }
    params = random_utde_params(a.cfg, series.num_channels(), derive_seed(a.seed, {2}));
    bins = query_bins(a.cfg.bins, a.cfg.t_max);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Vector means = channel_means(std::span<const IrregularSeries>(&series, 1));
  const Matrix z = utde_encode(series, bins, params, means);
  int empty = 0;
  std::size_t total = 0;
  for (const auto& ch : series.channels) {
    empty += ch.empty() ? 1 : 0;
    total += ch.size();
  }
  std::cout << series.num_channels() << " channels, " << total << " observations (" << empty
            << " empty channels) -> " << z.rows() << 'x' << z.cols() << " embedding\n";
  std::cout << "embedding norm " << format_double(z.norm()) << ", mean " << format_double(z.mean()) << '\n';
  if (!a.out.empty()) {
    auto out = open_output(a.out);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      out << join(z.row(r).transpose()) << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lapmoe: sparse MoE gating, fusion, irregular-series encoding and EM rate studies"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file; a [rate-study] section takes the rate-study long options as keys");
  RateStudyArgs rate;
  EmFitArgs em;
  GradcheckArgs grad;
  GateDemoArgs gate;
  FusionDemoArgs fusion;
  EncodeDemoArgs encode;
  add_rate_study(app, rate);
  add_em_fit(app, em);
  add_gradcheck(app, grad);
  add_gate_demo(app, gate);
  add_fusion_demo(app, fusion);
  add_encode_demo(app, encode);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (app.got_subcommand("rate-study")) {
      return run_rate_study_cmd(rate);
    }
    if (app.got_subcommand("em-fit")) {
      return run_em_fit_cmd(em);
    }
    if (app.got_subcommand("gradcheck")) {
      return run_gradcheck_cmd(grad);
    }
    if (app.got_subcommand("gate-demo")) {
      return run_gate_demo_cmd(gate);
    }
    if (app.got_subcommand("fusion-demo")) {
      return run_fusion_demo_cmd(fusion);
    }
    if (app.got_subcommand("encode-demo")) {
      return run_encode_demo_cmd(encode);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingRBarEntry& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingRBar;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
