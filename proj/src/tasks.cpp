#include "mcdi/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace mcdi {

OutputHead head_for(TaskFamily family) {
  return family == TaskFamily::Blobs ? OutputHead::SoftmaxCrossEntropy
                                     : OutputHead::MeanSquaredError;
}

namespace {

Eigen::MatrixXd draw_centers(int n_way, Rng& rng) {
  Eigen::MatrixXd centers(n_way, 2);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    for (int c = 0; c < n_way; ++c) {
      centers(c, 0) = uniform_real(-kBlobRange, kBlobRange, rng);
      centers(c, 1) = uniform_real(-kBlobRange, kBlobRange, rng);
    }
    bool separated = true;
    for (int a = 0; a < n_way && separated; ++a) {
      for (int b = a + 1; b < n_way; ++b) {
        if ((centers.row(a) - centers.row(b)).norm() < kBlobMinSeparation) {
          separated = false;
          break;
        }
      }
    }
    if (separated) return centers;
  }
  throw SpecError("cannot place " + std::to_string(n_way) +
                  " separated blob centers in the sampling square");
}

Batch draw_blobs(const Eigen::MatrixXd& centers, int per_class, Rng& rng) {
  const int n_way = static_cast<int>(centers.rows());
  std::normal_distribution<double> noise(0.0, kBlobStd);
  Batch b;
  b.inputs.resize(static_cast<Index>(n_way) * per_class, 2);
  b.labels.reserve(b.inputs.rows());
  Index r = 0;
  for (int c = 0; c < n_way; ++c) {
    for (int s = 0; s < per_class; ++s, ++r) {
      b.inputs(r, 0) = centers(c, 0) + noise(rng);
      b.inputs(r, 1) = centers(c, 1) + noise(rng);
      b.labels.push_back(c);
    }
  }
  return b;
}

Batch draw_sine(double amplitude, double phase, int n, Rng& rng) {
  Batch b;
  b.inputs.resize(n, 1);
  b.targets.resize(n, 1);
  for (int s = 0; s < n; ++s) {
    const double x = uniform_real(-5.0, 5.0, rng);
    b.inputs(s, 0) = x;
    b.targets(s, 0) = amplitude * std::sin(x + phase);
  }
  return b;
}

}  // namespace

TaskInstance sample_task(TaskFamily family, int n_way, int k_shot, int query_size,
                         std::uint64_t task_seed) {
  if (n_way < 1 || k_shot < 1 || query_size < 1) {
    throw SpecError("sample_task parameters must be positive");
  }
  Rng rng(task_seed);
  TaskInstance task;
  task.family = family;
  task.k_shot = k_shot;
  task.task_seed = task_seed;
  if (family == TaskFamily::Blobs) {
    task.n_way = n_way;
    task.centers = draw_centers(n_way, rng);
    task.support = draw_blobs(task.centers, k_shot, rng);
    task.query = draw_blobs(task.centers, query_size, rng);
  } else {
    task.n_way = 1;
    task.amplitude = uniform_real(0.1, 5.0, rng);
    task.phase = uniform_real(0.0, std::numbers::pi, rng);
    task.support = draw_sine(task.amplitude, task.phase, k_shot, rng);
    task.query = draw_sine(task.amplitude, task.phase, query_size, rng);
    task.support.labels.assign(k_shot, 0);
    task.query.labels.assign(query_size, 0);
  }
  return task;
}

Eigen::VectorXd embed_task(const TaskInstance& task) {
  const Batch& s = task.support;
  const int dim = static_cast<int>(s.inputs.cols());
  if (s.size() == 0) throw DimensionError("embed_task needs a nonempty support set");
  Eigen::VectorXd emb(embedding_dim(task.n_way, dim));
  for (int c = 0; c < task.n_way; ++c) {
    // Rows are sorted before reduction so the result does not depend on the
    // order of samples within a class, down to the last bit.
    std::vector<std::vector<double>> rows;
    for (Index r = 0; r < s.size(); ++r) {
      const int label = s.labels.empty() ? 0 : s.labels[r];
      if (label != c) continue;
      auto& row = rows.emplace_back(dim);
      for (int j = 0; j < dim; ++j) row[j] = s.inputs(r, j);
    }
    if (rows.empty()) {
      throw DimensionError("class " + std::to_string(c) + " has no support samples");
    }
    std::sort(rows.begin(), rows.end());
    const double n = static_cast<double>(rows.size());
    for (int j = 0; j < dim; ++j) {
      double sum = 0.0;
      for (const auto& row : rows) sum += row[j];
      const double mean = sum / n;
      double sq = 0.0;
      for (const auto& row : rows) sq += (row[j] - mean) * (row[j] - mean);
      emb[c * dim + j] = mean;
      emb[static_cast<Index>(task.n_way) * dim + c * dim + j] = sq / n;
    }
  }
  return emb;
}

Batch rotate_batch(const Batch& batch, double angle) {
  if (batch.inputs.cols() != 2) {
    throw DimensionError("rotation augmentation needs 2-D inputs");
  }
  Eigen::Matrix2d rot;
  rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  Batch out = batch;
  out.inputs = batch.inputs * rot.transpose();
  return out;
}

Batch augment(const Batch& batch, double noise_std, bool rotate, Rng& rng) {
  if (noise_std < 0) throw SpecError("augmentation noise_std must be nonnegative");
  if (rotate && batch.inputs.cols() != 2) {
    throw DimensionError("rotation augmentation needs 2-D inputs");
  }
  Batch out = batch;
  if (rotate) {
    out = rotate_batch(out, uniform_real(0.0, 2.0 * std::numbers::pi, rng));
  }
  if (noise_std > 0) {
    std::normal_distribution<double> noise(0.0, noise_std);
    for (Index i = 0; i < out.inputs.size(); ++i) out.inputs.data()[i] += noise(rng);
  }
  return out;
}

}  // namespace mcdi
