#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mcdi/diffusion.hpp"
#include "mcdi/tasks.hpp"

namespace mcdi {

/// Training objective of the meta-learner.
enum class LossKind : std::uint8_t {
  LocalConsistency,   // local targets, local consistency loss
  VanillaOnLocals,    // local targets each treated as a full-horizon endpoint
  VanillaGlobalOnly,  // only the final target theta_M, vanilla loss
};

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct MetaConfig {
  double eta = 0.005;   // inner learning rate
  double zeta = 0.001;  // outer learning rate
  int K = 3;            // inner steps
  int B = 5;            // meta-batch size
  int epochs = 6000;
  LossKind loss_kind = LossKind::LocalConsistency;
  int n_mc = 1;         // diffusion draws per inner gradient step
  LocalScaling scaling = LocalScaling::Normalized;
  int log_every = 0;    // 0 disables per-segment monitoring
  int log_samples = 64; // monitoring draws per segment
  std::uint64_t monitor_seed = 0x5eedULL;
};

void validate(const MetaConfig& cfg);

/// One meta-training task: its local targets and conditioning vector.
struct TrainingTask {
  LocalTargetSet targets;
  Eigen::VectorXd embedding;
};

struct TrainRecord {
  int epoch = 0;
  double mean_loss = 0.0;            // mean inner-step loss since the previous record
  std::vector<double> segment_loss;  // L_1 .. L_k on the monitoring bank
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::uint64_t seed = 0;
  std::int64_t denoiser_grad_evals = 0;  // per-draw gradient evaluations

  /// First logged epoch at which segment i's loss falls below `fraction`
  /// of its first logged value; -1 if it never does.
  int first_epoch_below(int segment, double fraction) const;
};

/// CSV columns: epoch,mean_loss,loss_seg_1..loss_seg_k,seed.
void export_train_log_csv(const TrainLog& log, int k, const std::filesystem::path& path);

struct InnerResult {
  WeightVector phi;
  double mean_loss = 0.0;
  std::int64_t grad_evals = 0;
};

/// K plain gradient steps from `phi` on the objective of `kind` for segment
/// i of one task, with fresh (t, eps) draws at every step.
InnerResult inner_loop(const DenoiserState& den, const WeightVector& phi,
                       const LocalTargetSet& targets, int i, const Eigen::VectorXd& emb,
                       const NoiseSchedule& s, const MetaConfig& cfg, Rng& rng);

/// phi + (zeta / B) * sum(deltas).
WeightVector outer_update(const WeightVector& phi, const std::vector<WeightVector>& deltas,
                          double zeta);

struct MetaResult {
  DenoiserState denoiser;
  TrainLog log;
};

MetaResult meta_train(const std::vector<TrainingTask>& store, const DenoiserState& den,
                      const NoiseSchedule& s, const MetaConfig& cfg, Rng& rng);

/// Per-segment objective values of `den` on a fixed bank of draws.
std::vector<double> segment_losses(const DenoiserState& den, const NoiseSchedule& s,
                                   const std::vector<TrainingTask>& store,
                                   const MetaConfig& cfg);

struct ReptileConfig {
  double inner_lr = 0.05;
  double outer_lr = 1.0;
  int K = 5;
  int B = 5;
  int epochs = 200;
};

/// REPTILE directly on downstream weights: inner SGD on each sampled task's
/// support loss, outer interpolation toward the adapted weights.
WeightVector reptile_baseline(const std::vector<TaskInstance>& tasks, const NetworkSpec& spec,
                              const WeightVector& init, const ReptileConfig& cfg, Rng& rng);

/// `steps` full-batch SGD steps on the support set.
WeightVector finetune(const NetworkSpec& spec, const WeightVector& w, const Batch& support,
                      double lr, int steps);

}  // namespace mcdi
