#include "mcdi/weightprep.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trajectory_format.hpp"

namespace mcdi {

void validate(const PrepConfig& cfg) {
  if (!(cfg.lr > 0)) throw SpecError("prep.lr must be positive");
  if (cfg.rho < 0) throw SpecError("prep.rho must be nonnegative");
  if (cfg.noise_std < 0) throw SpecError("prep.noise_std must be nonnegative");
  if (cfg.k < 1) throw SpecError("prep.k must be positive");
  if (cfg.patience < 1) throw SpecError("prep.patience must be positive");
  if (cfg.max_epochs < cfg.k) throw SpecError("prep.max_epochs must be >= k");
  if (!(cfg.init_std > 0)) throw SpecError("prep.init_std must be positive");
}

namespace {

// Epoch (1-based) at which the early-stopping rule fires, or 0 if it never does.
int early_stop_epoch(const std::vector<double>& history, int patience) {
  double best = history.front();
  int stale = 0;
  for (std::size_t e = 1; e < history.size(); ++e) {
    if (history[e] < best - kEarlyStopMinDelta) {
      best = history[e];
      stale = 0;
    } else if (++stale >= patience) {
      return static_cast<int>(e) + 1;
    }
  }
  return 0;
}

}  // namespace

int determine_M(const std::vector<double>& loss_history, int patience, int k) {
  if (loss_history.empty()) throw SpecError("determine_M needs a nonempty history");
  if (k < 1 || patience < 1) throw SpecError("determine_M needs positive patience and k");
  int stop = early_stop_epoch(loss_history, patience);
  if (stop == 0) stop = static_cast<int>(loss_history.size());
  return std::max(k, (stop / k) * k);
}

Trajectory collect_trajectory(const TaskInstance& task, const NetworkSpec& spec,
                              const PrepConfig& cfg, const WeightVector& theta0, Rng& rng) {
  validate(cfg);
  validate(spec);
  if (task.support.size() == 0) throw DimensionError("task has an empty support set");
  if (theta0.size() != parameter_count(spec)) {
    throw DimensionError("theta_0 does not match the network spec");
  }

  Trajectory traj;
  traj.task_id = task.task_seed;
  traj.spec = spec;
  traj.thetas.reserve(cfg.max_epochs + 1);
  traj.thetas.push_back(theta0);

  auto adam = make_adam<double>(theta0.size(), cfg.lr);
  std::vector<double> history;
  history.reserve(cfg.max_epochs);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const WeightVector& theta = traj.thetas.back();
    try {
      const Batch batch = augment(task.support, cfg.noise_std, cfg.rotate, rng);
      GradResult<double> at_theta = task_loss_grad(spec, theta, batch);
      const WeightVector eps = sam_perturb(at_theta.grad, cfg.rho);
      const WeightVector grad = eps.isZero(0.0)
                                    ? std::move(at_theta.grad)
                                    : task_loss_grad(spec, WeightVector(theta + eps), batch).grad;
      auto step = adam_step(adam, theta, grad);
      adam = std::move(step.state);
      traj.thetas.push_back(std::move(step.weights));
      history.push_back(task_loss(spec, traj.thetas.back(), task.support));
    } catch (const NumericError& e) {
      throw NumericError("trajectory diverged at epoch " + std::to_string(epoch) + ": " +
                         e.what());
    }
    if (!std::isfinite(history.back())) {
      throw NumericError("trajectory diverged at epoch " + std::to_string(epoch) +
                         ": non-finite support loss");
    }
    if (!traj.thetas.back().allFinite()) {
      throw NumericError("trajectory diverged at epoch " + std::to_string(epoch) +
                         ": non-finite weights");
    }
    if (epoch >= cfg.k && early_stop_epoch(history, cfg.patience) != 0) break;
  }

  traj.M = determine_M(history, cfg.patience, cfg.k);
  traj.thetas.resize(traj.M + 1);
  traj.final_loss = history[traj.M - 1];
  return traj;
}

Trajectory collect_trajectory(const TaskInstance& task, const NetworkSpec& spec,
                              const PrepConfig& cfg, Rng& rng) {
  const WeightVector theta0 = init_network(spec, cfg.init_std, rng);
  return collect_trajectory(task, spec, cfg, theta0, rng);
}

LocalTargetSet sample_local_targets(const Trajectory& traj, int k) {
  if (k < 1) throw SpecError("segment number k must be positive");
  if (traj.M < 1 || traj.M % k != 0) {
    throw SpecError("k=" + std::to_string(k) + " does not divide M=" +
                    std::to_string(traj.M));
  }
  if (static_cast<int>(traj.thetas.size()) != traj.M + 1) {
    throw DimensionError("trajectory holds " + std::to_string(traj.thetas.size()) +
                         " iterates, expected M+1");
  }
  LocalTargetSet set;
  set.k = k;
  set.d = traj.M / k;
  set.targets.reserve(k);
  for (int i = 1; i <= k; ++i) set.targets.push_back(traj.thetas[i * set.d]);
  return set;
}

namespace {
constexpr std::string_view kMagic = "MCDITRAJ";
}

void write_trajectory(io::Writer& w, const Trajectory& traj) {
  validate(traj.spec);
  const Index D = parameter_count(traj.spec);
  if (static_cast<int>(traj.thetas.size()) != traj.M + 1) {
    throw DimensionError("trajectory holds " + std::to_string(traj.thetas.size()) +
                         " iterates, expected M+1");
  }
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kTrajectoryVersion);
  w.put<std::uint64_t>(traj.task_id);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(traj.spec.layer_sizes.size()));
  for (int s : traj.spec.layer_sizes) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(traj.spec.activation));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(traj.M));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(D));
  for (const auto& theta : traj.thetas) {
    if (theta.size() != D) throw DimensionError("trajectory iterate has wrong dimension");
    w.put_doubles(theta.data(), static_cast<std::size_t>(D));
  }
  w.put<double>(traj.final_loss);
}

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  io::Writer w;
  write_trajectory(w, traj);
  w.write_file(path);
}

Trajectory read_trajectory(io::Reader& r, OutputHead head, std::size_t trailer_bytes) {
  if (r.get_bytes(kMagic.size(), "magic") != kMagic) {
    throw FormatError("field 'magic' at offset 0: not a trajectory file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kTrajectoryVersion) r.fail("version", "unsupported version " + std::to_string(version));

  Trajectory traj;
  traj.task_id = r.get<std::uint64_t>("task_id");
  const auto n_layers = r.get<std::uint32_t>("layer_count");
  if (n_layers < 2 || n_layers > 1024) r.fail("layer_count", "implausible layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    traj.spec.layer_sizes.push_back(static_cast<int>(r.get<std::uint32_t>("layer_sizes")));
  }
  const auto act = r.get<std::uint8_t>("activation");
  if (act > 1) r.fail("activation", "unknown activation code " + std::to_string(act));
  traj.spec.activation = static_cast<Activation>(act);
  traj.spec.output_head = head;
  try {
    validate(traj.spec);
  } catch (const SpecError& e) {
    r.fail("layer_sizes", e.what());
  }

  const auto M = r.get<std::uint64_t>("M");
  const auto D = r.get<std::uint64_t>("D");
  if (D != static_cast<std::uint64_t>(parameter_count(traj.spec))) {
    r.fail("D", "header D=" + std::to_string(D) + " disagrees with layer sizes (" +
                    std::to_string(parameter_count(traj.spec)) + ")");
  }
  if (M > (1u << 24)) r.fail("M", "implausible trajectory length");
  const std::size_t expected = (M + 1) * D * sizeof(double) + sizeof(double) + trailer_bytes;
  if (expected != r.remaining()) {
    r.fail("weights", "payload holds " + std::to_string(r.remaining()) +
                          " bytes, header implies " + std::to_string(expected));
  }
  traj.M = static_cast<int>(M);
  traj.thetas.resize(M + 1);
  for (auto& theta : traj.thetas) {
    theta.resize(static_cast<Index>(D));
    r.get_doubles(theta.data(), D, "weights");
  }
  traj.final_loss = r.get<double>("final_loss");
  return traj;
}

Trajectory load_trajectory(const std::filesystem::path& path, OutputHead head) {
  io::Reader r(path);
  return read_trajectory(r, head, 0);
}

}  // namespace mcdi
