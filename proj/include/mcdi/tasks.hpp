#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "mcdi/nn.hpp"
#include "mcdi/rng.hpp"

namespace mcdi {

enum class TaskFamily : std::uint8_t { Blobs = 0, Sine = 1 };

/// Blobs: planar Gaussian clusters with std 0.5 and centers in [-3, 3]^2.
inline constexpr double kBlobStd = 0.5;
inline constexpr double kBlobRange = 3.0;
/// Minimum distance between two cluster centers (4 standard deviations).
inline constexpr double kBlobMinSeparation = 4.0 * kBlobStd;

struct TaskInstance {
  TaskFamily family = TaskFamily::Blobs;
  Batch support;
  Batch query;
  int n_way = 1;
  int k_shot = 1;
  std::uint64_t task_seed = 0;

  Eigen::MatrixXd centers;  // blobs: one cluster mean per row
  double amplitude = 0.0;   // sine
  double phase = 0.0;       // sine

  int input_dim() const { return static_cast<int>(support.inputs.cols()); }
};

/// Output head matching the family (softmax for blobs, MSE for sine).
OutputHead head_for(TaskFamily family);

/// Draw one task. For blobs, `query_size` is the number of query points per
/// class and support holds exactly `k_shot` points per class; for sine,
/// support holds `k_shot` points and the query `query_size` points.
TaskInstance sample_task(TaskFamily family, int n_way, int k_shot, int query_size,
                         std::uint64_t task_seed);

/// Per-class mean followed by per-class variance of the support inputs, for
/// classes 0..n_way-1 in label order. Length n_way * 2 * input_dim.
Eigen::VectorXd embed_task(const TaskInstance& task);

inline Index embedding_dim(int n_way, int input_dim) {
  return static_cast<Index>(n_way) * 2 * input_dim;
}

/// Adds i.i.d. N(0, noise_std^2) input noise and, when `rotate`, rotates the
/// whole batch by one uniformly drawn planar angle. Labels are untouched.
Batch augment(const Batch& batch, double noise_std, bool rotate, Rng& rng);

/// Rotates every 2-D input row by `angle` radians (counter-clockwise).
Batch rotate_batch(const Batch& batch, double angle);

}  // namespace mcdi
