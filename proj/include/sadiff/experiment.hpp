#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/checkpoint.hpp"
#include "sadiff/datasets.hpp"
#include "sadiff/gap.hpp"
#include "sadiff/metrics.hpp"
#include "sadiff/predictor.hpp"
#include "sadiff/report.hpp"
#include "sadiff/sampler.hpp"
#include "sadiff/schedule.hpp"
#include "sadiff/serialization.hpp"
#include "sadiff/training.hpp"

namespace sadiff {

/// splitmix64 of (base, stream): independent-looking seeds for each stage of one replicate.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kDataStream = 1, kHoldoutStream, kSampleStream, kGapStream, kProjectionStream };

struct RunSpec {
  std::string name;
  TrainConfig train;
};

struct SamplerSpec {
  SamplerKind kind = SamplerKind::ddpm;
  VarianceKind variance = VarianceKind::beta_tilde;
  std::vector<int> n_steps{10, 100};
  int batch = 4096;
};

struct MetricSpec {
  int n_projections = 128;
  double mode_radius = 0.15;
  int holdout_points = 4096;
};

struct GapSpec {
  bool enabled = true;
  int t_start = 30;
  int batch = 2000;
  SamplerKind kind = SamplerKind::ddpm;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ScheduleSpec schedule;
  MlpConfig model;
  DatasetSpec dataset;
  std::vector<RunSpec> runs;
  SamplerSpec sampler;
  MetricSpec metrics;
  GapSpec gap;
  std::vector<std::uint64_t> seeds{0};
  std::string baseline;  // run name used as denominator of the terminal-gap ratio
  std::string out_dir;
};

namespace detail {

inline std::string lambda_label(double v) { return "lambda_" + format_double(v); }

}  // namespace detail

/// Parses an experiment config. `runs` entries override keys of `train`; `lambda_sweep`
/// expands into one sequence-aware run per listed lambda.
inline ExperimentConfig experiment_config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"name", "seed", "seeds", "out_dir", "schedule", "model", "dataset", "train", "runs",
                      "lambda_sweep", "sampler", "metrics", "gap", "baseline"},
                     "config");
  ExperimentConfig c;
  detail::read_opt(j, "name", c.name, "config");
  detail::read_opt(j, "out_dir", c.out_dir, "config");
  detail::read_opt(j, "baseline", c.baseline, "config");
  if (j.contains("seed")) c.seeds = {j.at("seed").get<std::uint64_t>()};
  detail::read_opt(j, "seeds", c.seeds, "config");
  if (c.seeds.empty()) throw ConfigError("config.seeds: must list at least one seed");

  if (j.contains("schedule")) c.schedule = schedule_spec_from_json(j.at("schedule"));
  c.schedule.build();  // validates
  c.model = mlp_config_from_json(j.value("model", Json::object()), c.schedule.T);
  if (c.model.T != c.schedule.T) throw ConfigError("model.T: must equal schedule.T");
  if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"));
  if (c.dataset.dim != c.model.data_dim) throw ConfigError("model.data_dim: must equal dataset.dim");

  TrainConfig base;
  if (j.contains("train")) {
    detail::check_keys(j.at("train"), train_config_keys(), "train");
    base = apply_train_overrides(base, j.at("train"), "train");
  }
  if (j.contains("runs")) {
    for (std::size_t i = 0; i < j.at("runs").size(); ++i) {
      const Json& r = j.at("runs")[i];
      const std::string section = "runs[" + std::to_string(i) + "]";
      auto keys = train_config_keys();
      keys.insert("name");
      detail::check_keys(r, keys, section);
      RunSpec run{r.value("name", "run" + std::to_string(i)), apply_train_overrides(base, r, section)};
      run.train.validate();
      c.runs.push_back(std::move(run));
    }
  }
  if (j.contains("lambda_sweep")) {
    for (double lam : j.at("lambda_sweep").get<std::vector<double>>()) {
      RunSpec run{detail::lambda_label(lam), base};
      run.train.loss_kind = LossKind::sequence_aware;
      run.train.lambda = lam;
      run.train.validate();
      c.runs.push_back(std::move(run));
    }
  }
  if (c.runs.empty()) {
    base.validate();
    c.runs.push_back({"run0", base});
  }
  for (std::size_t a = 0; a < c.runs.size(); ++a) {
    for (std::size_t b = a + 1; b < c.runs.size(); ++b) {
      if (c.runs[a].name == c.runs[b].name) throw ConfigError("runs: duplicate run name '" + c.runs[a].name + "'");
    }
  }

  if (j.contains("sampler")) {
    const Json& s = j.at("sampler");
    detail::check_keys(s, {"kind", "variance", "n_steps", "batch"}, "sampler");
    std::string kind = to_string(c.sampler.kind), var = to_string(c.sampler.variance);
    detail::read_opt(s, "kind", kind, "sampler");
    detail::read_opt(s, "variance", var, "sampler");
    c.sampler.kind = parse_sampler_kind(kind);
    c.sampler.variance = parse_variance_kind(var);
    detail::read_opt(s, "n_steps", c.sampler.n_steps, "sampler");
    detail::read_opt(s, "batch", c.sampler.batch, "sampler");
  }
  for (int n : c.sampler.n_steps) {
    if (n < 1 || n > c.schedule.T) throw ConfigError("sampler.n_steps: " + std::to_string(n) + " outside 1..T");
  }
  if (c.sampler.batch < 1) throw ConfigError("sampler.batch: must be >= 1");

  if (j.contains("metrics")) {
    const Json& m = j.at("metrics");
    detail::check_keys(m, {"n_projections", "mode_radius", "holdout_points"}, "metrics");
    detail::read_opt(m, "n_projections", c.metrics.n_projections, "metrics");
    detail::read_opt(m, "mode_radius", c.metrics.mode_radius, "metrics");
    detail::read_opt(m, "holdout_points", c.metrics.holdout_points, "metrics");
  }
  if (c.metrics.n_projections < 1) throw ConfigError("metrics.n_projections: must be >= 1");
  if (c.metrics.holdout_points < 1) throw ConfigError("metrics.holdout_points: must be >= 1");

  if (j.contains("gap")) {
    const Json& g = j.at("gap");
    detail::check_keys(g, {"enabled", "t_start", "batch", "kind"}, "gap");
    detail::read_opt(g, "enabled", c.gap.enabled, "gap");
    detail::read_opt(g, "t_start", c.gap.t_start, "gap");
    detail::read_opt(g, "batch", c.gap.batch, "gap");
    std::string kind = to_string(c.gap.kind);
    detail::read_opt(g, "kind", kind, "gap");
    c.gap.kind = parse_sampler_kind(kind);
  }
  if (c.gap.enabled && (c.gap.t_start < 2 || c.gap.t_start > c.schedule.T)) {
    throw ConfigError("gap.t_start: must lie in 2..T");
  }
  if (c.gap.batch < 1) throw ConfigError("gap.batch: must be >= 1");

  if (c.baseline.empty()) {
    for (const auto& r : c.runs) {
      if (!r.train.sequence_term_active()) {
        c.baseline = r.name;
        break;
      }
    }
  } else {
    bool found = false;
    for (const auto& r : c.runs) found = found || r.name == c.baseline;
    if (!found) throw ConfigError("config.baseline: no run named '" + c.baseline + "'");
  }
  return c;
}

/// Metrics of one trained replicate.
struct SeedResult {
  std::uint64_t seed = 0;
  double final_l_simple = 0.0;
  double final_l_sa = 0.0;
  std::map<int, double> sliced_wasserstein;  // by n_steps
  std::map<int, int> mode_coverage;          // by n_steps; empty unless the dataset has modes
  double terminal_gap = 0.0;
  GapReport gap;
};

struct RunResult {
  RunSpec spec;
  std::vector<SeedResult> seeds;

  double mean_terminal_gap() const {
    double s = 0.0;
    for (const auto& r : seeds) s += r.terminal_gap;
    return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
  }
  double mean_sliced_wasserstein(int n) const {
    double s = 0.0;
    for (const auto& r : seeds) s += r.sliced_wasserstein.at(n);
    return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
  }
  double mean_mode_coverage(int n) const {
    double s = 0.0;
    for (const auto& r : seeds) s += r.mode_coverage.at(n);
    return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
  }
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunResult> runs;
  Json summary;
};

namespace detail {

inline Batch take_rows(const Batch& data, int n) {
  Batch out(n, data.cols());
  for (int i = 0; i < n; ++i) out.row(i) = data.row(i % data.rows());
  return out;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) { write_text_file(p.string(), text); }

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

/// Runs `fn`, prefixing any error with the stage name and config key.
template <class F>
auto stage(const std::string& name, const std::string& key, F&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error("stage '" + name + "' (config key '" + key + "') failed: " + e.what());
  }
}

}  // namespace detail

/// Executes train -> sample -> metrics -> gap-eval for every (run, seed) pair and writes the
/// artifacts under `out_dir`. All outputs are functions of the config alone.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  detail::stage("setup", "out_dir", [&] { fs::create_directories(out_dir); return 0; });
  const NoiseSchedule sched = detail::stage("schedule", "schedule", [&] { return cfg.schedule.build(); });

  ExperimentResult result{cfg, {}, {}};
  for (const auto& run : cfg.runs) {
    RunResult rr{run, {}};
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path dir = out_dir / run.name / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      const auto data = detail::stage("dataset", "dataset",
                                      [&] { return generate_dataset(cfg.dataset, derive_seed(seed, kDataStream)); });
      DatasetSpec holdout_spec = cfg.dataset;
      holdout_spec.n_points = cfg.metrics.holdout_points;
      const auto holdout = detail::stage("dataset", "metrics.holdout_points", [&] {
        return generate_dataset(holdout_spec, derive_seed(seed, kHoldoutStream));
      });

      TrainConfig tc = run.train;
      tc.seed = seed;
      if (progress) *progress << "[" << cfg.name << "] " << run.name << " seed " << seed << ": training " << tc.steps
                              << " steps\n";
      const TrainResult trained =
          detail::stage("train", "runs." + run.name, [&] { return train(tc, cfg.model, data.points, sched); });
      detail::write_file(dir / "metrics.csv", detail::render([&](std::ostream& os) { write_metrics_csv(os, trained.log); }));
      detail::stage("checkpoint", "out_dir", [&] {
        save_checkpoint((dir / "checkpoint.json").string(), Checkpoint::from_state(trained.state, cfg.schedule, tc, cfg.dataset));
        return 0;
      });

      SeedResult sr;
      sr.seed = seed;
      if (!trained.log.empty()) {
        sr.final_l_simple = trained.log.back().l_simple;
        sr.final_l_sa = trained.log.back().l_sa;
      }
      const Mlp model = trained.state.ema_model();

      std::ostringstream samples_csv;
      samples_csv << "n_steps," << sample_header(cfg.model.data_dim) << '\n';
      Batch scatter_points;
      for (int n : cfg.sampler.n_steps) {
        Rng rng(derive_seed(seed, kSampleStream));
        const SamplerOptions opts{cfg.sampler.kind, cfg.sampler.variance, false};
        const Trajectory traj = detail::stage("sample", "sampler", [&] {
          return sample(model, sched, opts, n, cfg.sampler.batch, cfg.model.data_dim, rng);
        });
        const Batch& x = traj.final_state();
        if (!x.allFinite()) throw std::runtime_error("stage 'sample' (config key 'sampler') produced non-finite samples");
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          samples_csv << n;
          for (Eigen::Index d = 0; d < x.cols(); ++d) samples_csv << ',' << format_double(x(i, d));
          samples_csv << '\n';
        }
        sr.sliced_wasserstein[n] = detail::stage("metrics", "metrics.n_projections", [&] {
          return sliced_wasserstein(x, holdout.points, cfg.metrics.n_projections, derive_seed(seed, kProjectionStream));
        });
        if (!holdout.mode_centers.empty()) {
          sr.mode_coverage[n] = mode_coverage(x, holdout.mode_centers, cfg.metrics.mode_radius);
        }
        scatter_points = x;
      }
      detail::write_file(dir / "samples.csv", samples_csv.str());

      if (cfg.gap.enabled) {
        Rng rng(derive_seed(seed, kGapStream));
        const Batch x0 = detail::take_rows(holdout.points, cfg.gap.batch);
        const SamplerOptions opts{cfg.gap.kind, cfg.sampler.variance, false};
        sr.gap = detail::stage("gap-eval", "gap",
                               [&] { return gap_experiment_x_start(model, sched, x0, cfg.gap.t_start, opts, rng); });
        sr.terminal_gap = sr.gap.terminal_gap_norm;
        detail::write_file(dir / "gaps.csv", detail::render([&](std::ostream& os) { write_gap_csv(os, sr.gap); }));
      }

      SvgPlot plot(run.name + " samples (n_steps=" + std::to_string(cfg.sampler.n_steps.back()) + ")");
      plot.scatter(holdout.points.topRows(std::min<Eigen::Index>(holdout.points.rows(), 2000)), "#bbbbbb");
      plot.scatter(scatter_points, "#1f77b4");
      detail::write_file(dir / "samples.svg", plot.render());
      if (cfg.gap.enabled) {
        SvgPlot gp(run.name + " cumulative gap from t=" + std::to_string(cfg.gap.t_start));
        std::vector<double> ts(sr.gap.timesteps.begin(), sr.gap.timesteps.end());
        gp.line(ts, sr.gap.cumulative_gap_norm, palette(0), "cumulative");
        gp.line(ts, sr.gap.per_step_gap_norm, palette(1), "per-step");
        detail::write_file(dir / "gaps.svg", gp.render());
      }
      rr.seeds.push_back(std::move(sr));
    }
    result.runs.push_back(std::move(rr));
  }

  // Summary: one entry per run, means over seeds, gap ratio against the baseline run.
  const RunResult* baseline = nullptr;
  for (const auto& r : result.runs) {
    if (r.spec.name == cfg.baseline) baseline = &r;
  }
  Json runs = Json::array();
  std::ostringstream csv;
  csv << "run,loss_kind,K,lambda,use_tau_weights,terminal_gap,terminal_gap_ratio,mean_seed_gap_ratio";
  for (int n : cfg.sampler.n_steps) csv << ",sw_n" << n;
  if (cfg.dataset.kind == DatasetKind::gaussian_ring) {
    for (int n : cfg.sampler.n_steps) csv << ",modes_n" << n;
  }
  csv << '\n';
  for (const auto& r : result.runs) {
    Json jr{{"name", r.spec.name}, {"train", to_json(r.spec.train)}};
    Json per_seed = Json::array();
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      const auto& s = r.seeds[i];
      Json js{{"seed", s.seed}, {"final_l_simple", s.final_l_simple}, {"final_l_sa", s.final_l_sa}};
      Json sw = Json::object(), mc = Json::object();
      for (const auto& [n, v] : s.sliced_wasserstein) sw[std::to_string(n)] = v;
      for (const auto& [n, v] : s.mode_coverage) mc[std::to_string(n)] = v;
      js["sliced_wasserstein"] = sw;
      if (!s.mode_coverage.empty()) js["mode_coverage"] = mc;
      if (cfg.gap.enabled) {
        js["terminal_gap"] = s.terminal_gap;
        if (baseline) js["terminal_gap_ratio"] = s.terminal_gap / baseline->seeds[i].terminal_gap;
      }
      per_seed.push_back(js);
    }
    jr["per_seed"] = per_seed;
    Json mean_sw = Json::object(), mean_mc = Json::object();
    for (int n : cfg.sampler.n_steps) {
      mean_sw[std::to_string(n)] = r.mean_sliced_wasserstein(n);
      if (!r.seeds.front().mode_coverage.empty()) mean_mc[std::to_string(n)] = r.mean_mode_coverage(n);
    }
    jr["mean_sliced_wasserstein"] = mean_sw;
    if (!mean_mc.empty()) jr["mean_mode_coverage"] = mean_mc;
    double ratio = 0.0, mean_seed_ratio = 0.0;
    if (cfg.gap.enabled) {
      jr["mean_terminal_gap"] = r.mean_terminal_gap();
      if (baseline) {
        ratio = r.mean_terminal_gap() / baseline->mean_terminal_gap();
        for (std::size_t i = 0; i < r.seeds.size(); ++i) {
          mean_seed_ratio += r.seeds[i].terminal_gap / baseline->seeds[i].terminal_gap;
        }
        mean_seed_ratio /= static_cast<double>(r.seeds.size());
        jr["terminal_gap_ratio"] = ratio;
        jr["mean_seed_terminal_gap_ratio"] = mean_seed_ratio;
      }
    }
    runs.push_back(jr);

    csv << r.spec.name << ',' << to_string(r.spec.train.loss_kind) << ',' << r.spec.train.K << ','
        << format_double(r.spec.train.lambda) << ',' << (r.spec.train.use_tau_weights ? 1 : 0) << ','
        << format_double(r.mean_terminal_gap()) << ',' << format_double(ratio) << ',' << format_double(mean_seed_ratio);
    for (int n : cfg.sampler.n_steps) csv << ',' << format_double(r.mean_sliced_wasserstein(n));
    if (cfg.dataset.kind == DatasetKind::gaussian_ring) {
      for (int n : cfg.sampler.n_steps) csv << ',' << format_double(r.mean_mode_coverage(n));
    }
    csv << '\n';
  }
  result.summary = {{"name", cfg.name},
                    {"baseline", cfg.baseline},
                    {"seeds", cfg.seeds},
                    {"schedule", to_json(cfg.schedule)},
                    {"model", to_json(cfg.model)},
                    {"dataset", to_json(cfg.dataset)},
                    {"runs", runs}};
  detail::write_file(out_dir / "summary.json", result.summary.dump(2) + "\n");
  detail::write_file(out_dir / "summary.csv", csv.str());

  if (cfg.gap.enabled) {
    SvgPlot gp(cfg.name + ": mean cumulative gap from t=" + std::to_string(cfg.gap.t_start));
    for (std::size_t k = 0; k < result.runs.size(); ++k) {
      const auto& r = result.runs[k];
      const auto& ts_int = r.seeds.front().gap.timesteps;
      std::vector<double> ts(ts_int.begin(), ts_int.end()), mean(ts.size(), 0.0);
      for (const auto& s : r.seeds) {
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s.gap.cumulative_gap_norm[i] / r.seeds.size();
      }
      gp.line(ts, mean, palette(k), r.spec.name);
    }
    detail::write_file(out_dir / "gaps.svg", gp.render());
  }
  return result;
}

inline ExperimentResult run_experiment_file(const std::string& config_path, const std::string& out_override = "",
                                            std::ostream* progress = nullptr) {
  const Json j = read_json_file(config_path);
  ExperimentConfig cfg;
  try {
    cfg = experiment_config_from_json(j);
  } catch (const std::exception& e) {
    throw ConfigError(config_path + ": " + e.what());
  }
  std::string out = out_override.empty() ? cfg.out_dir : out_override;
  if (out.empty()) throw ConfigError(config_path + ": no output directory (set out_dir or pass --out)");
  return run_experiment(cfg, out, progress);
}

}  // namespace sadiff
