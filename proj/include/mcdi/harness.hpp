#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mcdi/config.hpp"
#include "mcdi/diffusion.hpp"
#include "mcdi/meta.hpp"
#include "mcdi/theory.hpp"

namespace mcdi {

enum class Split : std::uint8_t { Train = 0, Eval = 1 };

/// Seed streams derived from base_seed; every random choice of the pipeline
/// draws from exactly one of these.
enum SeedStream : std::uint64_t {
  kTrainTaskStream = 0,
  kEvalTaskStream = 1,
  kInitStream = 2,
  kDenoiserStream = 3,
  kMetaStream = 4,
  kChainStream = 5,
  kReptileStream = 6,
  kAblationStream = 7,
};

std::uint64_t task_seed(const ExperimentConfig& cfg, Split split, int index);

NetworkSpec downstream_spec(const ExperimentConfig& cfg);
NoiseSchedule make_schedule(const ExperimentConfig& cfg);
int task_embedding_dim(const ExperimentConfig& cfg);
TaskInstance make_task(const ExperimentConfig& cfg, std::uint64_t seed);

/// theta_0 shared by every trajectory when cfg.shared_init is set.
WeightVector shared_theta0(const ExperimentConfig& cfg);

struct PreparedTask {
  int index = 0;
  TaskInstance task;
  Trajectory trajectory;
};

struct PrepareFailure {
  Split split = Split::Train;
  int index = 0;
  std::string reason;
};

struct PreparedSplit {
  std::vector<PreparedTask> tasks;
  std::vector<PrepareFailure> failures;
  double failure_rate(int requested) const {
    return requested == 0 ? 0.0 : static_cast<double>(failures.size()) / requested;
  }
};

/// Samples `count` tasks of one split and collects their trajectories.
/// Divergent tasks are recorded in `failures` and skipped.
PreparedSplit prepare_split(const ExperimentConfig& cfg, Split split, int count);

std::vector<TrainingTask> training_store(const ExperimentConfig& cfg,
                                         const std::vector<PreparedTask>& tasks);

DenoiserState initial_denoiser(const ExperimentConfig& cfg);

MetaResult train_denoiser(const ExperimentConfig& cfg, const std::vector<TrainingTask>& store);

/// Mean over eval tasks; readout_mse[i-1] is the segment-i readout error.
struct MetricsRecord {
  std::string variant;
  int k = 0;
  int T = 0;
  std::uint64_t seed = 0;
  double recon_mse = 0.0;
  double recon_std = 0.0;
  std::vector<double> readout_mse;
  double query_metric = 0.0;
  double query_std = 0.0;
  std::int64_t denoiser_evals = 0;
  std::int64_t chains = 0;
};

/// Query accuracy (blobs) or query MSE (sine) of `w` on the task.
double query_metric(const ExperimentConfig& cfg, const TaskInstance& task, const WeightVector& w);

/// Generates cfg.chains_per_task chains per eval task from fresh Gaussian
/// starts and scores x_T against theta_M and each readout against theta_{i*d}.
/// With cfg.finetune_steps > 0 the generated weights are fine-tuned on the
/// support set before the query metric is taken.
MetricsRecord evaluate_denoiser(const ExperimentConfig& cfg, const DenoiserState& den,
                                const std::vector<PreparedTask>& eval_tasks,
                                const std::string& variant);

using WeightProducer = std::function<WeightVector(const PreparedTask&)>;

/// Scores one weight vector per eval task (no chain, no readouts).
MetricsRecord evaluate_weights(const ExperimentConfig& cfg,
                               const std::vector<PreparedTask>& eval_tasks,
                               const std::string& variant, const WeightProducer& produce);

/// CSV columns: variant,k,T,seed,recon_mse,readout_mse_1..readout_mse_{k_max},
/// query_metric,denoiser_evals. Unused readout columns are left empty.
void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// File-based stages used by the CLI. Each writes the resolved config next to
// its outputs.

struct PrepareSummary {
  int written = 0;
  int requested = 0;
  std::vector<PrepareFailure> failures;
  /// True when more than 10% of the requested tasks diverged.
  bool too_many_failures() const;
};

/// Writes train_NNNN.traj and eval_NNNN.traj plus manifest.csv
/// (split,index,task_seed,file,M,k,d,final_loss,status).
PrepareSummary run_prepare(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Loads the trajectories of one split from a prepare directory, regenerating
/// each task from the seed stored in its file.
std::vector<PreparedTask> load_prepared(const ExperimentConfig& cfg,
                                        const std::filesystem::path& dir, Split split);

/// Writes denoiser.ckpt and train_log.csv.
TrainLog run_train(const ExperimentConfig& cfg, const std::filesystem::path& traj_dir,
                   const std::filesystem::path& out_dir);

/// Writes metrics.csv with the trained denoiser plus the ground-truth and
/// random-weight reference rows.
std::vector<MetricsRecord> run_eval(const ExperimentConfig& cfg,
                                    const std::filesystem::path& checkpoint,
                                    const std::filesystem::path& traj_dir,
                                    const std::filesystem::path& out_dir);

/// Four variants per seed on one trajectory set, then the Mc-Di k sweep.
/// Writes ablation.csv.
std::vector<MetricsRecord> run_ablation(const ExperimentConfig& cfg,
                                        const std::filesystem::path& out_dir);

/// Ablation variants trained and scored on one prepared trajectory set.
struct AblationSeedResult {
  MetricsRecord reptile;
  MetricsRecord mv_di;
  MetricsRecord tw_di;
  MetricsRecord mc_di;
};

AblationSeedResult ablation_seed(const ExperimentConfig& cfg,
                                 const std::vector<PreparedTask>& train,
                                 const std::vector<PreparedTask>& eval);

/// Config for the k sweep: T raised to the next multiple of k when k does not
/// divide it, alpha endpoints unchanged.
ExperimentConfig sweep_config(const ExperimentConfig& cfg, int k);

struct VerifyReport {
  Prop1Report prop1;
  std::vector<BoundReport> lemma1;
  std::vector<BoundReport> theorem2;
  std::vector<double> grad_errors_vanilla;
  std::vector<double> grad_errors_local;
  std::vector<double> grad_errors_task;
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline constexpr double kProp1Tolerance = 1e-12;
inline constexpr double kGradTolerance = 1e-4;

/// k=1 local/vanilla equivalence check, bound sweeps and finite-difference gradient checks.
/// `rhs_scale` multiplies the bound right-hand sides (self-test of the verifier).
VerifyReport run_verify(const ExperimentConfig& cfg, double rhs_scale = 1.0);

/// Writes verify_lemma1.csv, verify_theorem2.csv and verify_summary.txt.
void write_verify_report(const VerifyReport& report, const std::filesystem::path& out_dir);

}  // namespace mcdi
