#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include <unistd.h>

#include "mcdi/weightprep.hpp"

namespace mcdi {
namespace {

namespace fs = std::filesystem;

const NetworkSpec kSpec{{2, 8, 2}, Activation::Tanh, OutputHead::SoftmaxCrossEntropy};

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("mcdi_wp_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> plateau_history(int decreasing, int total) {
  std::vector<double> h;
  for (int e = 1; e <= total; ++e) h.push_back(e <= decreasing ? 10.0 - 0.1 * e : 10.0 - 0.1 * decreasing);
  return h;
}

TEST(DetermineM, MonotoneHistoryUsesFullLength) {
  std::vector<double> h;
  for (int e = 1; e <= 30; ++e) h.push_back(1.0 / e);
  EXPECT_EQ(determine_M(h, 5, 3), 30);
}

TEST(DetermineM, PlateauStopsAfterPatience) {
  EXPECT_EQ(determine_M(plateau_history(10, 40), 5, 3), 15);
}

TEST(DetermineM, RoundsDownToMultipleOfK) {
  EXPECT_EQ(determine_M(plateau_history(5, 40), 5, 3), 9);
}

TEST(DetermineM, NeverBelowK) {
  EXPECT_EQ(determine_M(plateau_history(1, 40), 1, 4), 4);
}

TEST(DetermineM, TinyImprovementsCountAsStale) {
  std::vector<double> h;
  for (int e = 1; e <= 30; ++e) h.push_back(1.0 - 1e-6 * e);
  EXPECT_EQ(determine_M(h, 5, 3), 6);
}

TEST(DetermineM, RejectsBadArguments) {
  EXPECT_THROW(determine_M({}, 5, 3), SpecError);
  EXPECT_THROW(determine_M({1.0}, 0, 3), SpecError);
}

TEST(CollectTrajectory, ReducesToPlainAdam) {
  const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, 3);
  PrepConfig cfg;
  cfg.rho = 0.0;
  cfg.max_epochs = 30;
  Rng init(8);
  const WeightVector theta0 = init_network(kSpec, cfg.init_std, init);
  Rng rng(1);
  const Trajectory traj = collect_trajectory(task, kSpec, cfg, theta0, rng);

  auto adam = make_adam<double>(theta0.size(), cfg.lr);
  WeightVector w = theta0;
  for (int e = 1; e <= traj.M; ++e) {
    auto step = adam_step(adam, w, task_loss_grad(kSpec, w, task.support).grad);
    adam = step.state;
    w = step.weights;
    EXPECT_EQ(traj.thetas[e], w) << "epoch " << e;
  }
}

TEST(CollectTrajectory, SamDiffersFromPlainAdam) {
  const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, 3);
  PrepConfig sam, plain;
  plain.rho = 0.0;
  Rng a(1), b(1);
  const Trajectory ts = collect_trajectory(task, kSpec, sam, a);
  const Trajectory tp = collect_trajectory(task, kSpec, plain, b);
  EXPECT_EQ(ts.thetas[0], tp.thetas[0]);
  EXPECT_NE(ts.thetas[1], tp.thetas[1]);
}

TEST(CollectTrajectory, ConvergesOnSeparableBlobs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, seed);
    PrepConfig cfg;
    Rng rng(seed);
    const Trajectory traj = collect_trajectory(task, kSpec, cfg, rng);
    EXPECT_GT(accuracy(kSpec, traj.optimum(), task.support), 0.95) << "seed " << seed;
    EXPECT_EQ(traj.M % cfg.k, 0);
    EXPECT_EQ(static_cast<int>(traj.thetas.size()), traj.M + 1);
    EXPECT_DOUBLE_EQ(traj.final_loss, task_loss(kSpec, traj.optimum(), task.support));
  }
}

TEST(CollectTrajectory, Deterministic) {
  const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, 4);
  PrepConfig cfg;
  cfg.noise_std = 0.1;
  cfg.rotate = true;
  Rng a(5), b(5);
  const Trajectory ta = collect_trajectory(task, kSpec, cfg, a);
  const Trajectory tb = collect_trajectory(task, kSpec, cfg, b);
  ASSERT_EQ(ta.M, tb.M);
  for (int e = 0; e <= ta.M; ++e) EXPECT_EQ(ta.thetas[e], tb.thetas[e]);
}

TEST(CollectTrajectory, DivergenceIsReported) {
  const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, 4);
  PrepConfig cfg;
  Rng rng(1);
  WeightVector theta0 = WeightVector::Zero(parameter_count(kSpec));
  theta0[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(collect_trajectory(task, kSpec, cfg, theta0, rng), NumericError);
}

TEST(CollectTrajectory, RejectsInvalidConfig) {
  const TaskInstance task = sample_task(TaskFamily::Blobs, 2, 5, 10, 4);
  PrepConfig cfg;
  cfg.max_epochs = 2;
  Rng rng(1);
  EXPECT_THROW(collect_trajectory(task, kSpec, cfg, rng), SpecError);
}

Trajectory synthetic(int M) {
  Trajectory t;
  t.task_id = 77;
  t.spec = kSpec;
  t.M = M;
  for (int e = 0; e <= M; ++e) {
    t.thetas.push_back(WeightVector::Constant(parameter_count(kSpec), static_cast<double>(e)));
  }
  t.final_loss = 0.25;
  return t;
}

TEST(LocalTargets, EvenlySpaced) {
  const Trajectory t = synthetic(9);
  const LocalTargetSet set = sample_local_targets(t, 3);
  EXPECT_EQ(set.d, 3);
  ASSERT_EQ(set.targets.size(), 3u);
  EXPECT_EQ(set.target(1), t.thetas[3]);
  EXPECT_EQ(set.target(2), t.thetas[6]);
  EXPECT_EQ(set.target(3), t.optimum());
}

TEST(LocalTargets, SingleSegmentIsOptimum) {
  const Trajectory t = synthetic(9);
  const LocalTargetSet set = sample_local_targets(t, 1);
  ASSERT_EQ(set.targets.size(), 1u);
  EXPECT_EQ(set.target(1), t.optimum());
}

TEST(LocalTargets, RequiresDivisibility) {
  EXPECT_THROW(sample_local_targets(synthetic(9), 2), SpecError);
  EXPECT_THROW(sample_local_targets(synthetic(9), 0), SpecError);
}

TEST(TrajectoryFile, RoundTrip) {
  const Trajectory t = synthetic(6);
  const fs::path p = temp_path("rt.traj");
  save_trajectory(t, p);
  const Trajectory u = load_trajectory(p);
  EXPECT_EQ(u.task_id, t.task_id);
  EXPECT_EQ(u.spec, t.spec);
  EXPECT_EQ(u.M, t.M);
  EXPECT_EQ(u.final_loss, t.final_loss);
  ASSERT_EQ(u.thetas.size(), t.thetas.size());
  for (std::size_t e = 0; e < t.thetas.size(); ++e) EXPECT_EQ(u.thetas[e], t.thetas[e]);
  fs::remove(p);
}

TEST(TrajectoryFile, TruncatedFileIsFormatError) {
  const fs::path p = temp_path("trunc.traj");
  save_trajectory(synthetic(3), p);
  std::vector<char> bytes = read_bytes(p);
  bytes.resize(bytes.size() - 5);
  write_bytes(p, bytes);
  EXPECT_THROW(load_trajectory(p), FormatError);
  bytes.resize(20);
  write_bytes(p, bytes);
  EXPECT_THROW(load_trajectory(p), FormatError);
  fs::remove(p);
}

TEST(TrajectoryFile, HeaderDimensionMismatchIsFormatError) {
  const fs::path p = temp_path("dim.traj");
  save_trajectory(synthetic(3), p);
  std::vector<char> bytes = read_bytes(p);
  // magic 8 | version 4 | task_id 8 | n_layers 4 | sizes 12 | activation 1 | M 8 -> D at 45
  bytes[45] = static_cast<char>(bytes[45] + 1);
  write_bytes(p, bytes);
  try {
    load_trajectory(p);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'D'"), std::string::npos) << e.what();
  }
  fs::remove(p);
}

TEST(TrajectoryFile, BadMagicIsFormatError) {
  const fs::path p = temp_path("magic.traj");
  save_trajectory(synthetic(3), p);
  std::vector<char> bytes = read_bytes(p);
  bytes[0] = 'X';
  write_bytes(p, bytes);
  EXPECT_THROW(load_trajectory(p), FormatError);
  fs::remove(p);
}

TEST(TrajectoryFile, MissingFileIsError) {
  EXPECT_THROW(load_trajectory(temp_path("missing.traj")), Error);
}

}  // namespace
}  // namespace mcdi
