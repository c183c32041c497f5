#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mcdi/nn.hpp"
#include "mcdi/rng.hpp"
#include "mcdi/tasks.hpp"

namespace mcdi {

/// Recorded optimization path theta_0..theta_M of one downstream task.
struct Trajectory {
  std::uint64_t task_id = 0;
  NetworkSpec spec;
  int M = 0;
  std::vector<WeightVector> thetas;  // M + 1 entries
  double final_loss = 0.0;

  const WeightVector& optimum() const { return thetas.back(); }
};

/// Uniformly spaced snapshots theta_d, theta_2d, ..., theta_{k*d}, d = M / k.
struct LocalTargetSet {
  int k = 0;
  int d = 0;
  std::vector<WeightVector> targets;

  /// Target of segment i in (0, k].
  const WeightVector& target(int i) const { return targets.at(i - 1); }
};

struct PrepConfig {
  double lr = 0.005;
  double rho = 0.05;
  double noise_std = 0.0;
  bool rotate = false;
  int max_epochs = 60;
  int patience = 5;
  int k = 3;
  double init_std = 0.1;
};

void validate(const PrepConfig& cfg);

/// Minimum decrease of the best support loss that counts as improvement.
inline constexpr double kEarlyStopMinDelta = 1e-4;

/// `loss_history[e-1]` is the support loss after epoch e. Returns the epoch at
/// which the loss has failed to improve on its best value for `patience`
/// consecutive epochs (or the history length), rounded down to a multiple of
/// k and never below k.
int determine_M(const std::vector<double>& loss_history, int patience, int k);

/// Runs the SAM-perturbed Adam loop from `theta0` on the support set:
/// per epoch, augment the support batch, take epsilon = rho * g / ||g|| at
/// theta_t, and step Adam with the gradient evaluated at theta_t + epsilon.
Trajectory collect_trajectory(const TaskInstance& task, const NetworkSpec& spec,
                              const PrepConfig& cfg, const WeightVector& theta0, Rng& rng);

/// Same, drawing theta_0 ~ N(0, init_std^2) from `rng` first.
Trajectory collect_trajectory(const TaskInstance& task, const NetworkSpec& spec,
                              const PrepConfig& cfg, Rng& rng);

LocalTargetSet sample_local_targets(const Trajectory& traj, int k);

// Binary little-endian trajectory files:
//   "MCDITRAJ" | u32 version | u64 task_id | u32 n_layers | u32 sizes[n_layers]
//   | u8 activation | u64 M | u64 D | f64 weights[(M+1)*D] | f64 final_loss
inline constexpr std::uint32_t kTrajectoryVersion = 1;

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);

/// The file does not record the output head; it is taken from `head`.
Trajectory load_trajectory(const std::filesystem::path& path,
                           OutputHead head = OutputHead::SoftmaxCrossEntropy);

}  // namespace mcdi
