#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcdi/config.hpp"
#include "mcdi/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitViolation = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "key=value experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--out", opts.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", opts.seed, "overrides experiment.base_seed");
  cmd->add_option("--set", opts.overrides, "extra key=value override (repeatable)");
}

mcdi::ExperimentConfig resolve(const CommonOptions& opts) try {
  mcdi::ExperimentConfig cfg = opts.config.empty() ? mcdi::parse_config("")
                                                   : mcdi::load_config(opts.config);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw mcdi::SpecError("--set expects key=value, got '" + kv + "'");
    mcdi::set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.base_seed = *opts.seed;
  cfg.prep.k = cfg.k;
  mcdi::validate(cfg);
  return cfg;
} catch (const mcdi::Error& e) {
  throw UsageError(e.what());
}

void print_record(const mcdi::MetricsRecord& r) {
  std::cout << r.variant << ": recon_mse " << r.recon_mse << " (std " << r.recon_std
            << "), query_metric " << r.query_metric << " (std " << r.query_std << ")";
  for (std::size_t i = 0; i < r.readout_mse.size(); ++i) {
    std::cout << ", readout_" << i + 1 << ' ' << r.readout_mse[i];
  }
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-supervised diffusion weight generation"};
  app.require_subcommand(1);

  CommonOptions prepare_opts, train_opts, eval_opts, ablate_opts, verify_opts;
  std::string train_traj = "out";
  std::string eval_traj = "out";
  std::string checkpoint;
  std::optional<int> finetune_steps;
  double rhs_scale = 1.0;

  auto* prepare = app.add_subcommand("prepare", "collect trajectories for train and eval tasks");
  add_common(prepare, prepare_opts);

  auto* train = app.add_subcommand("train", "meta-train the denoiser on prepared trajectories");
  add_common(train, train_opts);
  train->add_option("--traj", train_traj, "directory written by prepare")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "generate weights for held-out tasks and score them");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "denoiser checkpoint")->required();
  eval->add_option("--traj", eval_traj, "directory written by prepare")->capture_default_str();
  eval->add_option("--finetune-steps", finetune_steps,
                   "SGD steps on the support set after generation");

  auto* ablate = app.add_subcommand("ablate", "variant ladder and segment-number sweep");
  add_common(ablate, ablate_opts);

  auto* verify = app.add_subcommand("verify", "bound sweeps, k=1 loss equivalence and gradient checks");
  add_common(verify, verify_opts);
  verify->add_option("--rhs-scale", rhs_scale, "scale bound right-hand sides (self-test)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (prepare->parsed()) {
      const auto cfg = resolve(prepare_opts);
      const auto summary = mcdi::run_prepare(cfg, prepare_opts.out);
      std::cout << "wrote " << summary.written << " of " << summary.requested
                << " trajectories to " << prepare_opts.out << '\n';
      for (const auto& f : summary.failures) {
        std::cerr << (f.split == mcdi::Split::Train ? "train" : "eval") << " task " << f.index
                  << " diverged: " << f.reason << '\n';
      }
      return summary.too_many_failures() ? kExitRuntime : kExitOk;
    }
    if (train->parsed()) {
      const auto cfg = resolve(train_opts);
      const auto log = mcdi::run_train(cfg, train_traj, train_opts.out);
      if (!log.records.empty()) {
        const auto& last = log.records.back();
        std::cout << "epoch " << last.epoch << " mean_loss " << last.mean_loss << '\n';
      }
      std::cout << "checkpoint " << (std::filesystem::path(train_opts.out) / "denoiser.ckpt")
                << '\n';
      return kExitOk;
    }
    if (eval->parsed()) {
      auto cfg = resolve(eval_opts);
      if (finetune_steps) {
        if (*finetune_steps < 0) throw UsageError("--finetune-steps must be nonnegative");
        cfg.finetune_steps = *finetune_steps;
      }
      for (const auto& r : mcdi::run_eval(cfg, checkpoint, eval_traj, eval_opts.out)) {
        print_record(r);
      }
      return kExitOk;
    }
    if (ablate->parsed()) {
      const auto cfg = resolve(ablate_opts);
      const auto rows = mcdi::run_ablation(cfg, ablate_opts.out);
      std::cout << "wrote " << rows.size() << " rows to "
                << (std::filesystem::path(ablate_opts.out) / "ablation.csv") << '\n';
      return kExitOk;
    }
    if (verify->parsed()) {
      const auto cfg = resolve(verify_opts);
      const auto report = mcdi::run_verify(cfg, rhs_scale);
      mcdi::write_verify_report(report, verify_opts.out);
      for (const auto& v : report.violations) std::cerr << "violation: " << v << '\n';
      std::cout << report.violations.size() << " violations\n";
      return report.ok() ? kExitOk : kExitViolation;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
