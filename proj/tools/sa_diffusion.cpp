// sa-diffusion: train, sample and analyse small diffusion models with the sequence-aware loss.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "sadiff/sadiff.hpp"

namespace fs = std::filesystem;
using namespace sadiff;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

/// --out, else $SA_DIFFUSION_OUT/<command>, else empty.
std::string output_dir(const GlobalOptions& g, const std::string& command) {
  if (!g.out.empty()) return g.out;
  if (const char* root = std::getenv("SA_DIFFUSION_OUT"); root && *root) return (fs::path(root) / command).string();
  return {};
}

std::string require_output_dir(const GlobalOptions& g, const std::string& command) {
  auto dir = output_dir(g, command);
  if (dir.empty()) throw ConfigError("--out: no output directory given (and SA_DIFFUSION_OUT is unset)");
  fs::create_directories(dir);
  return dir;
}

void write_to(const fs::path& p, const std::string& text) { write_text_file(p.string(), text); }

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

int cmd_schedule_dump(const GlobalOptions& g, ScheduleSpec spec, const std::string& kind_flag) {
  if (!g.config.empty()) {
    const Json j = read_json_file(g.config);
    spec = schedule_spec_from_json(j.contains("schedule") ? j.at("schedule") : j);
  }
  if (!kind_flag.empty()) spec.kind = parse_schedule_kind(kind_flag);
  const NoiseSchedule sched = spec.build();
  const std::string csv = render([&](std::ostream& os) { write_schedule_csv(os, sched); });
  const std::string dir = output_dir(g, "schedule-dump");
  if (dir.empty()) {
    std::cout << csv;
  } else {
    fs::create_directories(dir);
    write_to(fs::path(dir) / "schedule.csv", csv);
    std::cout << "wrote " << (fs::path(dir) / "schedule.csv").string() << "\n";
  }
  return 0;
}

int cmd_train(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config: train needs a JSON config");
  const Json j = read_json_file(g.config);
  auto keys = train_config_keys();
  keys.insert({"schedule", "model", "dataset"});
  detail::check_keys(j, keys, g.config);
  ScheduleSpec sspec = j.contains("schedule") ? schedule_spec_from_json(j.at("schedule")) : ScheduleSpec{};
  const NoiseSchedule sched = sspec.build();
  MlpConfig mcfg = mlp_config_from_json(j.value("model", Json::object()), sspec.T);
  DatasetSpec dspec = j.contains("dataset") ? dataset_spec_from_json(j.at("dataset")) : DatasetSpec{};
  TrainConfig tcfg = apply_train_overrides(TrainConfig{}, j, g.config);
  if (g.seed) tcfg.seed = *g.seed;
  tcfg.validate();
  const std::string dir = require_output_dir(g, "train");

  const auto data = generate_dataset(dspec, derive_seed(tcfg.seed, kDataStream));
  std::cerr << "training " << tcfg.steps << " steps (" << to_string(tcfg.loss_kind) << ", K=" << tcfg.K
            << ", lambda=" << tcfg.lambda << ") on " << to_string(dspec.kind) << "\n";
  const long report_every = std::max<long>(1, tcfg.steps / 10);
  const TrainResult r = train(tcfg, mcfg, data.points, sched, [&](long step, const LossBreakdown& l) {
    if (step % report_every == 0) std::cerr << "  step " << step << " l_simple=" << l.l_simple << " l_sa=" << l.l_sa << "\n";
  });
  write_to(fs::path(dir) / "metrics.csv", render([&](std::ostream& os) { write_metrics_csv(os, r.log); }));
  save_checkpoint((fs::path(dir) / "checkpoint.json").string(), Checkpoint::from_state(r.state, sspec, tcfg, dspec));
  std::cout << "wrote " << (fs::path(dir) / "checkpoint.json").string() << " and metrics.csv\n";
  return 0;
}

struct SampleOptions {
  std::string checkpoint;
  std::string kind = "ddpm";
  std::string variance = "beta_tilde";
  int n_steps = 0;
  int batch = 1024;
  bool trajectory = false;
};

int cmd_sample(const GlobalOptions& g, const SampleOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const NoiseSchedule sched = ck.schedule.build();
  const int n_steps = o.n_steps > 0 ? o.n_steps : sched.T();
  const SamplerOptions opts{parse_sampler_kind(o.kind), parse_variance_kind(o.variance), false};
  Rng rng(derive_seed(g.seed.value_or(0), kSampleStream));
  const Trajectory traj = sample(ck.ema_model(), sched, opts, n_steps, o.batch, ck.model.data_dim, rng);
  const std::string dir = require_output_dir(g, "sample");
  write_to(fs::path(dir) / "samples.csv", render([&](std::ostream& os) { write_samples_csv(os, traj.final_state()); }));
  if (o.trajectory) {
    write_to(fs::path(dir) / "trajectory.csv", render([&](std::ostream& os) { write_trajectory_csv(os, traj); }));
  }
  std::cout << "wrote " << o.batch << " samples to " << (fs::path(dir) / "samples.csv").string() << "\n";
  return 0;
}

struct GapOptions {
  std::string checkpoint;
  std::string kind = "ddpm";
  std::string variance = "beta_tilde";
  int t_start = 30;
  int batch = 2000;
};

int cmd_gap_eval(const GlobalOptions& g, const GapOptions& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const NoiseSchedule sched = ck.schedule.build();
  const std::uint64_t seed = g.seed.value_or(0);
  DatasetSpec spec = ck.dataset;
  spec.n_points = o.batch;
  const auto data = generate_dataset(spec, derive_seed(seed, kHoldoutStream));
  Rng rng(derive_seed(seed, kGapStream));
  const SamplerOptions opts{parse_sampler_kind(o.kind), parse_variance_kind(o.variance), false};
  const GapReport rep = gap_experiment_x_start(ck.ema_model(), sched, data.points, o.t_start, opts, rng);
  const std::string dir = require_output_dir(g, "gap-eval");
  write_to(fs::path(dir) / "gaps.csv", render([&](std::ostream& os) { write_gap_csv(os, rep); }));
  std::cout << "terminal cumulative gap (t=2): " << format_double(rep.terminal_gap_norm) << "\n"
            << "wrote " << (fs::path(dir) / "gaps.csv").string() << "\n";
  return 0;
}

struct BoundsOptions {
  std::string checkpoint;
  std::string mode = "exact";
  int K = 2;
  int n_mc = 20000;
  int batch = 16;
  ScheduleSpec schedule{ScheduleKind::linear, 16, 1e-4, 0.02, 0.008};
  std::string schedule_kind;
};

int cmd_bounds_check(const GlobalOptions& g, BoundsOptions o) {
  const std::uint64_t seed = g.seed.value_or(0);
  std::optional<Checkpoint> ck;
  if (!o.checkpoint.empty()) ck = load_checkpoint(o.checkpoint);
  if (!o.schedule_kind.empty()) o.schedule.kind = parse_schedule_kind(o.schedule_kind);
  const ScheduleSpec sspec = ck ? ck->schedule : o.schedule;
  const NoiseSchedule sched = sspec.build();

  Mlp model = [&] {
    if (ck) return ck->ema_model();
    // Untrained network with a randomised output layer, so prediction errors are nonzero.
    MlpConfig mc;
    mc.T = sched.T();
    mc.hidden = {32, 32};
    Rng rng(derive_seed(seed, 11));
    Mlp m = Mlp::initialize(mc, rng);
    std::normal_distribution<double> normal(0.0, 0.3);
    auto& last = m.params().layers.back();
    for (Eigen::Index k = 0; k < last.weight.size(); ++k) last.weight.data()[k] = normal(rng);
    for (Eigen::Index k = 0; k < last.bias.size(); ++k) last.bias[k] = normal(rng);
    return m;
  }();
  DatasetSpec dspec = ck ? ck->dataset : DatasetSpec{};
  dspec.n_points = o.mode == "exact" ? o.batch : std::max(o.batch, 1024);
  const auto data = generate_dataset(dspec, derive_seed(seed, kHoldoutStream));

  BoundsReport rep;
  Rng rng(derive_seed(seed, kGapStream));
  if (o.mode == "exact") {
    const NoiseSequence eps = NoiseSequence::draw(sched.T(), data.points.rows(), data.points.cols(), rng);
    rep = bounds_check_exact(model, sched, o.K, data.points, eps);
  } else if (o.mode == "mc") {
    rep = bounds_check_monte_carlo(model, sched, o.K, data.points, o.n_mc, rng);
  } else {
    throw ConfigError("--mode: expected exact|mc, got '" + o.mode + "'");
  }
  std::ostringstream os;
  os << "mode=" << o.mode << " T=" << rep.T << " K=" << rep.K << "\n";
  os << "L_simple^tau = " << format_double(rep.l_simple_tau) << " (se " << format_double(rep.se_simple_tau) << ")\n";
  os << "L_sa         = " << format_double(rep.l_sa) << " (se " << format_double(rep.se_sa) << ")\n";
  os << "L_theta      = " << format_double(rep.l_theta) << " (se " << format_double(rep.se_theta) << ")\n";
  os << "(T-1)/(T+K) L_simple^tau >= L_sa : " << format_double(rep.upper_lhs) << " >= " << format_double(rep.upper_rhs)
     << " : " << (rep.upper_holds ? "PASS" : "FAIL") << "\n";
  os << "L_sa >= L_theta/(T+K)^2          : " << format_double(rep.lower_lhs) << " >= " << format_double(rep.lower_rhs)
     << " : " << (rep.lower_holds ? "PASS" : "FAIL") << "\n";
  std::cout << os.str();
  if (const auto dir = output_dir(g, "bounds-check"); !dir.empty()) {
    fs::create_directories(dir);
    const Json j{{"mode", o.mode},           {"T", rep.T},
                 {"K", rep.K},               {"l_simple_tau", rep.l_simple_tau},
                 {"l_sa", rep.l_sa},         {"l_theta", rep.l_theta},
                 {"se_simple_tau", rep.se_simple_tau}, {"se_sa", rep.se_sa},
                 {"se_theta", rep.se_theta}, {"upper_holds", rep.upper_holds},
                 {"lower_holds", rep.lower_holds}};
    write_to(fs::path(dir) / "bounds.json", j.dump(2) + "\n");
  }
  return rep.upper_holds && rep.lower_holds ? 0 : 2;
}

int cmd_run(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config: run needs an experiment config");
  const Json j = read_json_file(g.config);
  ExperimentConfig cfg;
  try {
    cfg = experiment_config_from_json(j);
  } catch (const std::exception& e) {
    throw ConfigError(g.config + ": " + e.what());
  }
  if (g.seed) cfg.seeds = {*g.seed};
  std::string out = !g.out.empty() ? g.out : cfg.out_dir;
  if (out.empty()) out = output_dir(g, "run");
  if (out.empty()) throw ConfigError(g.config + ": no output directory (set out_dir, --out or SA_DIFFUSION_OUT)");
  const auto result = run_experiment(cfg, out, &std::cerr);
  std::cout << render([&](std::ostream& os) {
    for (const auto& r : result.runs) {
      os << r.spec.name << ": mean terminal gap " << format_double(r.mean_terminal_gap());
      for (int n : cfg.sampler.n_steps) os << ", sw@" << n << " " << format_double(r.mean_sliced_wasserstein(n));
      os << "\n";
    }
  });
  std::cout << "wrote " << (fs::path(out) / "summary.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sa-diffusion: sequence-aware diffusion training and estimation-gap analysis"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed")->expected(1);
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out", g.out, "Output directory (default: $SA_DIFFUSION_OUT/<command>)");
  app.fallthrough();

  ScheduleSpec dump_spec;
  std::string dump_kind;
  auto* dump = app.add_subcommand("schedule-dump", "Write every schedule coefficient as CSV");
  dump->add_option("--kind", dump_kind, "linear|cosine");
  dump->add_option("--T", dump_spec.T, "Number of timesteps");
  dump->add_option("--beta-start", dump_spec.beta_start, "Linear schedule beta_1");
  dump->add_option("--beta-end", dump_spec.beta_end, "Linear schedule beta_T");
  dump->add_option("--s", dump_spec.s, "Cosine schedule offset");

  auto* train_cmd = app.add_subcommand("train", "Train a noise predictor from a JSON config");

  SampleOptions so;
  auto* sample_cmd = app.add_subcommand("sample", "Generate samples from a checkpoint");
  sample_cmd->add_option("--checkpoint", so.checkpoint, "Checkpoint path")->required();
  sample_cmd->add_option("--kind", so.kind, "ddpm|ddim");
  sample_cmd->add_option("--variance", so.variance, "beta_tilde|beta (ddpm only)");
  sample_cmd->add_option("--n-steps", so.n_steps, "Sampling steps (default: T)");
  sample_cmd->add_option("--batch", so.batch, "Number of samples");
  sample_cmd->add_flag("--trajectory", so.trajectory, "Also write every intermediate state");

  GapOptions go;
  auto* gap_cmd = app.add_subcommand("gap-eval", "Cumulative estimation gap from noised data");
  gap_cmd->add_option("--checkpoint", go.checkpoint, "Checkpoint path")->required();
  gap_cmd->add_option("--kind", go.kind, "ddpm|ddim");
  gap_cmd->add_option("--variance", go.variance, "beta_tilde|beta");
  gap_cmd->add_option("--t-start", go.t_start, "Timestep the data is noised to");
  gap_cmd->add_option("--batch", go.batch, "Number of data points");

  BoundsOptions bo;
  auto* bounds_cmd = app.add_subcommand("bounds-check", "Check the loss sandwich inequality");
  bounds_cmd->add_option("--checkpoint", bo.checkpoint, "Checkpoint (default: random predictor)");
  bounds_cmd->add_option("--mode", bo.mode, "exact|mc");
  bounds_cmd->add_option("--K", bo.K, "Window length (>= 2)");
  bounds_cmd->add_option("--n-mc", bo.n_mc, "Monte-Carlo samples per quantity");
  bounds_cmd->add_option("--batch", bo.batch, "Data points (exact mode)");
  bounds_cmd->add_option("--T", bo.schedule.T, "Timesteps when no checkpoint is given");
  bounds_cmd->add_option("--schedule", bo.schedule_kind, "linear|cosine when no checkpoint is given");

  auto* run_cmd = app.add_subcommand("run", "Run a full experiment config");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (dump->parsed()) return cmd_schedule_dump(g, dump_spec, dump_kind);
    if (train_cmd->parsed()) return cmd_train(g);
    if (sample_cmd->parsed()) return cmd_sample(g, so);
    if (gap_cmd->parsed()) return cmd_gap_eval(g, go);
    if (bounds_cmd->parsed()) return cmd_bounds_check(g, bo);
    if (run_cmd->parsed()) return cmd_run(g);
  } catch (const std::exception& e) {
    std::cerr << "sa-diffusion " << name << ": error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
