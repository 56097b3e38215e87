// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//
//   acceptance [--work-dir DIR] [--only 1,4,9]

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace sadiff;
using namespace sadiff::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> check;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

fs::path g_work_dir = fs::temp_directory_path() / "sadiff_acceptance";

// 1
Outcome coefficient_identities() {
  double worst = 0.0;
  for (const auto& s : {build_linear(1000, 1e-4, 0.02), build_cosine(1000, 0.008)}) {
    for (int t = 2; t <= s.T(); ++t) {
      const double g2 = s.gamma2(t);
      worst = std::max(worst, relative_error(s.gamma1(t) + g2 * std::sqrt(s.alpha_bar(t)), std::sqrt(s.alpha_bar(t - 1))));
      worst = std::max(worst, relative_error(g2 * g2 * (1.0 - s.alpha_bar(t)) + s.beta_tilde(t), 1.0 - s.alpha_bar(t - 1)));
    }
  }
  const auto ab = alpha_bar_extended(linear_betas_extended(1000, 1e-4L, 0.02L));
  const double ab_err = relative_error(build_linear(1000).alpha_bar(1000), static_cast<double>(ab[1000]));
  return {worst <= 1e-12 && ab_err <= 1e-12,
          "worst identity rel err " + num(worst) + ", alpha_bar[1000] rel err " + num(ab_err)};
}

// 2
Outcome gradient_correctness() {
  const auto s = build_linear(20, 1e-3, 0.2);
  Rng rng(2024);
  double worst = 0.0;
  int configs = 0;
  for (int rep = 0; rep < 50; ++rep) {
    TrainConfig cfg;
    cfg.loss_kind = LossKind::sequence_aware;
    cfg.K = 2 + rep % 3;
    cfg.use_tau_weights = (rep / 3) % 2 == 1;
    cfg.lambda = 1.0;
    MlpConfig mc = tiny_config(20, rep % 2 ? Activation::tanh : Activation::silu);
    Mlp m = random_mlp(mc, 7000 + rep);
    const Batch x0 = standard_normal(3, 2, rng);
    std::uniform_int_distribution<int> pick_t(1, 20);
    const int t = pick_t(rng);
    std::vector<Batch> eps;
    for (int k = 0; k < cfg.K; ++k) eps.push_back(standard_normal(3, 2, rng));

    // L_sa alone and L_simple alone
    const auto sa = sa_loss(m, s, x0, t, std::span<const Batch>(eps), cfg.use_tau_weights);
    worst = std::max(worst, check_gradients(m, sa.gradients, [&](const Mlp& mm) {
                              return sa_loss(mm, s, x0, t, std::span<const Batch>(eps), cfg.use_tau_weights).loss;
                            }).worst_relative);
    const auto simple = simple_loss(m, s, x0, t, eps[0]);
    worst = std::max(worst, check_gradients(m, simple.gradients, [&](const Mlp& mm) {
                              return simple_loss(mm, s, x0, t, eps[0]).loss;
                            }).worst_relative);
    LossBreakdown b;
    const auto comb = combined_loss(m, s, cfg, x0, t, std::span<const Batch>(eps), b);
    worst = std::max(worst, check_gradients(m, comb.gradients, [&](const Mlp& mm) {
                              LossBreakdown bb;
                              return combined_loss(mm, s, cfg, x0, t, std::span<const Batch>(eps), bb).loss;
                            }).worst_relative);
    ++configs;
  }
  return {worst < 1e-4, std::to_string(configs) + " configs, worst rel err " + num(worst)};
}

// 3
Outcome recursion_closed_form() {
  Rng rng(303);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    std::uniform_int_distribution<int> pick_T(2, 64);
    const int T = pick_T(rng);
    const auto s = random_schedule(T, rng);
    const Batch x0 = standard_normal(4, 2, rng);
    const auto eps = NoiseSequence::draw(T, 4, 2, rng);
    Batch dbar, closed;
    if (rep % 2 == 0) {
      const Mlp m = random_mlp(tiny_config(T), 3000 + rep);
      dbar = cumulative_gap(m, s, x0, eps, T).terminal_gap;
      closed = total_gap(m, s, x0, eps);
    } else {
      Vector c = Vector::Random(2);
      const NoiseOracle stub(s, x0, c);
      dbar = cumulative_gap(stub, s, x0, eps, T).terminal_gap;
      closed = total_gap(stub, s, x0, eps);
    }
    const double scale = std::max(dbar.norm(), closed.norm());
    worst = std::max(worst, scale == 0.0 ? 0.0 : (dbar - closed).norm() / scale);
  }
  return {worst <= 1e-9, "100 configs, worst rel err " + num(worst)};
}

// 4
Outcome theorem_two() {
  Rng rng(404);
  int checked = 0, failed = 0;
  double min_upper = 1e300, min_lower = 1e300;
  for (int T : {8, 16, 32}) {
    for (int K : {2, 3, 4}) {
      for (int rep = 0; rep < 20; ++rep) {
        const auto s = random_schedule(T, rng);
        MlpConfig mc = tiny_config(T);
        mc.hidden = {16, 16};
        const Mlp m = random_mlp(mc, static_cast<std::uint64_t>(T) * 1000 + K * 100 + rep, 0.2 + rep * 0.1);
        const Batch x0 = standard_normal(8, 2, rng);
        const auto r = bounds_check_exact(m, s, K, x0, NoiseSequence::draw(T, 8, 2, rng));
        ++checked;
        if (!r.upper_holds || !r.lower_holds) ++failed;
        min_upper = std::min(min_upper, r.upper_lhs / r.upper_rhs);
        min_lower = std::min(min_lower, r.lower_lhs / r.lower_rhs);
      }
    }
  }
  return {failed == 0, std::to_string(checked) + " predictors, " + std::to_string(failed) +
                           " violations, tightest ratios upper " + num(min_upper) + " lower " + num(min_lower)};
}

// 5
Outcome appendix_a() {
  Rng rng(505);
  const int n = 100000;
  const int T = 32;
  double worst_z = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = random_schedule(T, rng);
    std::uniform_int_distribution<int> pick_t(2, T);
    const int t = pick_t(rng);
    const auto c = reverse_dist_coeffs(s);
    Vector x0v(2), epsT(2);
    x0v << 0.9, -0.4;
    epsT << -1.1, 0.7;
    const Batch x0 = x0v.transpose().replicate(n, 1);
    Batch x = (std::sqrt(s.alpha_bar(T)) * x0v + std::sqrt(1.0 - s.alpha_bar(T)) * epsT).transpose().replicate(n, 1);
    for (int k = T; k >= t; --k) {
      x = posterior_mean(s, x0, x, k) + std::sqrt(s.beta_tilde(k)) * standard_normal(n, 2, rng);
    }
    for (int d = 0; d < 2; ++d) {
      const double mu = c.mu_prime_x0_coeff[t] * x0v[d] + c.mu_prime_eps_coeff[t] * epsT[d];
      const double mean = x.col(d).mean();
      const double var = (x.col(d).array() - mean).square().sum() / (n - 1);
      worst_z = std::max(worst_z, std::abs(mean - mu) / std::sqrt(c.beta_prime[t] / n));
      worst_z = std::max(worst_z, std::abs(var - c.beta_prime[t]) / (c.beta_prime[t] * std::sqrt(2.0 / (n - 1))));
    }
  }
  return {worst_z <= 4.0, "5 (schedule, t) pairs, worst deviation " + num(worst_z) + " standard errors"};
}

// 6
Outcome oracle_rollout() {
  DatasetSpec spec;
  spec.kind = DatasetKind::delta_point;
  spec.n_points = 1;
  const Batch x0 = generate_dataset(spec, 0).points;
  double worst = 0.0;
  int rollouts = 0;
  for (const auto& s : {build_linear(100), build_cosine(100), build_linear(1000), build_cosine(1000)}) {
    const NoiseOracle oracle(s, x0);
    for (int n : {1, 2, 5, 10, 50, 100, 200, 1000}) {
      if (n > s.T()) continue;
      Rng rng(static_cast<std::uint64_t>(n));
      const auto traj = sample(oracle, s, {SamplerKind::ddim}, n, 256, 2, rng);
      worst = std::max(worst, (traj.final_state().rowwise() - x0.row(0)).cwiseAbs().maxCoeff());
      ++rollouts;
    }
    Rng rng(99);
    Batch x = standard_normal(256, 2, rng);
    for (int t = s.T(); t >= 1; --t) x = ddpm_step(oracle, s, x, t, Batch::Zero(256, 2));
    worst = std::max(worst, (x.rowwise() - x0.row(0)).cwiseAbs().maxCoeff());
    ++rollouts;
  }
  return {worst <= 1e-6, std::to_string(rollouts) + " rollouts, worst |x - x0| " + num(worst)};
}

// 7 and 8 share one paired training run.
struct PairedRun {
  bool done = false;
  std::string error;
  ExperimentResult result;
  double seconds_per_seed = 0.0;
};

PairedRun& paired_run() {
  static PairedRun pr;
  if (pr.done) return pr;
  pr.done = true;
  try {
    const std::string path = std::string(SADIFF_CONFIG_DIR) + "/paired_ring.json";
    const auto cfg = experiment_config_from_json(read_json_file(path));
    const auto start = std::chrono::steady_clock::now();
    pr.result = run_experiment(cfg, g_work_dir / "paired_ring", &std::cerr);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    pr.seconds_per_seed = secs / static_cast<double>(cfg.seeds.size());
  } catch (const std::exception& e) {
    pr.error = e.what();
  }
  return pr;
}

const RunResult* find_run(const ExperimentResult& r, const std::string& name) {
  for (const auto& run : r.runs) {
    if (run.spec.name == name) return &run;
  }
  return nullptr;
}

Outcome gap_reduction() {
  auto& pr = paired_run();
  if (!pr.error.empty()) return {false, pr.error};
  const auto* van = find_run(pr.result, "vanilla");
  const auto* sa = find_run(pr.result, "sa");
  if (!van || !sa) return {false, "config must define runs 'vanilla' and 'sa'"};
  double mean_ratio = 0.0;
  std::string per_seed;
  for (std::size_t i = 0; i < sa->seeds.size(); ++i) {
    const double ratio = sa->seeds[i].terminal_gap / van->seeds[i].terminal_gap;
    mean_ratio += ratio / static_cast<double>(sa->seeds.size());
    per_seed += (i ? " " : "") + num(ratio);
  }
  const double ratio_of_means = sa->mean_terminal_gap() / van->mean_terminal_gap();
  const bool in_budget = pr.seconds_per_seed < 15 * 60;
  return {mean_ratio < 1.0 && in_budget,
          "mean SA/vanilla terminal gap ratio " + num(mean_ratio) + " (per seed " + per_seed + "; ratio of means " +
              num(ratio_of_means) + "), " + num(pr.seconds_per_seed) + " s per seed"};
}

Outcome sample_quality() {
  auto& pr = paired_run();
  if (!pr.error.empty()) return {false, pr.error};
  const auto* van = find_run(pr.result, "vanilla");
  const auto* sa = find_run(pr.result, "sa");
  if (!van || !sa) return {false, "config must define runs 'vanilla' and 'sa'"};
  const double sw_sa = sa->mean_sliced_wasserstein(10);
  const double sw_van = van->mean_sliced_wasserstein(10);
  int min_modes = 8;
  for (const auto& s : sa->seeds) min_modes = std::min(min_modes, s.mode_coverage.at(100));
  const bool in_budget = pr.seconds_per_seed < 15 * 60;
  return {sw_sa <= sw_van && min_modes >= 7 && in_budget,
          "SW@10 SA " + num(sw_sa) + " vs vanilla " + num(sw_van) + ", SA modes@100 min over seeds " +
              std::to_string(min_modes) + "/8"};
}

// 9
struct Shell {
  int status;
  std::string output;
};

Shell shell(const std::string& cmd) {
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome cli_determinism() {
  const fs::path root = g_work_dir / "determinism";
  fs::remove_all(root);
  const std::string cli = "\"" SADIFF_CLI "\"";
  const std::string cfg_dir = SADIFF_CONFIG_DIR;
  std::vector<std::string> commands;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path out = root / ("rep" + std::to_string(rep));
    const std::string o = out.string();
    commands = {
        cli + " schedule-dump --kind cosine --T 100 --out " + o + "/dump",
        cli + " train --config " + cfg_dir + "/train_small.json --seed 7 --out " + o + "/train",
        cli + " sample --checkpoint " + o + "/train/checkpoint.json --kind ddpm --n-steps 10 --batch 256 --trajectory"
              " --seed 3 --out " + o + "/sample_ddpm",
        cli + " sample --checkpoint " + o + "/train/checkpoint.json --kind ddim --n-steps 10 --batch 256 --seed 3"
              " --out " + o + "/sample_ddim",
        cli + " gap-eval --checkpoint " + o + "/train/checkpoint.json --t-start 30 --batch 256 --seed 5 --out " + o +
            "/gap",
        cli + " bounds-check --mode exact --T 16 --K 2 --seed 1 --out " + o + "/bounds",
        cli + " run --config " + cfg_dir + "/smoke.json --seed 11 --out " + o + "/run",
    };
    for (const auto& c : commands) {
      const auto r = shell(c);
      if (r.status != 0) return {false, "command failed (" + std::to_string(r.status) + "): " + c + "\n" + r.output};
    }
  }
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "rep0")) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext != ".csv" && ext != ".json") continue;
    const fs::path rel = fs::relative(entry.path(), root / "rep0");
    if (slurp(entry.path()) != slurp(root / "rep1" / rel)) return {false, "outputs differ: " + rel.string()};
    ++compared;
  }
  return {compared >= 10, std::to_string(commands.size()) + " subcommand runs repeated, " + std::to_string(compared) +
                              " CSV/JSON files byte-identical"};
}

std::set<int> parse_only(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work-dir" && i + 1 < argc) {
      g_work_dir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--work-dir DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(g_work_dir);

  const std::vector<Criterion> criteria{
      {1, "coefficient identities", 1.0, coefficient_identities},
      {2, "gradient correctness", 30.0, gradient_correctness},
      {3, "recursive gap equals tau-weighted closed form", 30.0, recursion_closed_form},
      {4, "loss sandwich inequality, exact mode", 120.0, theorem_two},
      {5, "reverse-distribution moments vs Monte Carlo", 120.0, appendix_a},
      {6, "oracle rollout recovers x0", 10.0, oracle_rollout},
      {7, "SA lowers terminal cumulative gap (x_start=30)", 1e9, gap_reduction},
      {8, "SA sample quality: SW@10 and mode coverage", 1e9, sample_quality},
      {9, "CLI determinism", 1e9, cli_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over time budget of " + num(c.budget_seconds) + " s";
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << c.id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << c.title << "  [" << o.detail
              << "; " << num(secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
