#include "mcdi/meta.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace mcdi {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::LocalConsistency: return "local_consistency";
    case LossKind::VanillaOnLocals: return "vanilla_on_locals";
    case LossKind::VanillaGlobalOnly: return "vanilla_global_only";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "local_consistency") return LossKind::LocalConsistency;
  if (name == "vanilla_on_locals") return LossKind::VanillaOnLocals;
  if (name == "vanilla_global_only") return LossKind::VanillaGlobalOnly;
  throw SpecError("unknown loss kind '" + name + "'");
}

void validate(const MetaConfig& cfg) {
  if (cfg.eta < 0) throw SpecError("meta.eta must be nonnegative");
  if (cfg.zeta < 0) throw SpecError("meta.zeta must be nonnegative");
  if (cfg.K < 0) throw SpecError("meta.K must be nonnegative");
  if (cfg.B < 1) throw SpecError("meta.B must be positive");
  if (cfg.epochs < 0) throw SpecError("meta.epochs must be nonnegative");
  if (cfg.n_mc < 1) throw SpecError("meta.n_mc must be positive");
  if (cfg.log_every < 0 || cfg.log_samples < 1) throw SpecError("invalid logging settings");
}

int TrainLog::first_epoch_below(int segment, double fraction) const {
  if (records.empty()) return -1;
  const double initial = records.front().segment_loss.at(segment - 1);
  for (const auto& r : records) {
    if (r.segment_loss.at(segment - 1) < fraction * initial) return r.epoch;
  }
  return -1;
}

void export_train_log_csv(const TrainLog& log, int k, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "epoch,mean_loss";
  for (int i = 1; i <= k; ++i) out << ",loss_seg_" << i;
  out << ",seed\n" << std::setprecision(17);
  for (const auto& r : log.records) {
    out << r.epoch << ',' << r.mean_loss;
    for (int i = 0; i < k; ++i) {
      out << ',';
      if (i < static_cast<int>(r.segment_loss.size())) out << r.segment_loss[i];
    }
    out << ',' << log.seed << '\n';
  }
}

namespace {

LossForm form_of(LossKind kind) {
  return kind == LossKind::LocalConsistency ? LossForm::LocalConsistency : LossForm::Vanilla;
}

// Upper bound (exclusive) of the timestep range sampled for segment i.
int step_limit(LossKind kind, const NoiseSchedule& s, int i) {
  return kind == LossKind::LocalConsistency ? s.segment_end(i) : s.T();
}

}  // namespace

InnerResult inner_loop(const DenoiserState& den, const WeightVector& phi,
                       const LocalTargetSet& targets, int i, const Eigen::VectorXd& emb,
                       const NoiseSchedule& s, const MetaConfig& cfg, Rng& rng) {
  if (i < 1 || i > targets.k) throw SpecError("segment index outside (0, k]");
  InnerResult result{phi, 0.0, 0};
  if (cfg.K == 0) return result;

  DenoiserState local = den;
  local.phi = phi;
  const LossForm form = form_of(cfg.loss_kind);
  const int limit = step_limit(cfg.loss_kind, s, i);
  std::vector<NoisedDraw> draws(cfg.n_mc);
  for (int step = 0; step < cfg.K; ++step) {
    for (auto& d : draws) {
      d.target = &targets.target(i);
      d.segment = i;
      d.t = uniform_int(0, limit - 1, rng);
      d.eps = standard_normal(den.weight_dim, rng);
    }
    const LossSample ls = mean_loss(local, s, draws, emb, form, cfg.scaling);
    if (!std::isfinite(ls.value)) throw NumericError("non-finite inner-loop loss");
    local.phi -= cfg.eta * ls.grad_phi;
    result.mean_loss += ls.value;
    result.grad_evals += cfg.n_mc;
  }
  result.mean_loss /= cfg.K;
  result.phi = std::move(local.phi);
  return result;
}

WeightVector outer_update(const WeightVector& phi, const std::vector<WeightVector>& deltas,
                          double zeta) {
  if (deltas.empty()) throw SpecError("outer_update needs at least one delta");
  WeightVector sum = WeightVector::Zero(phi.size());
  for (const auto& d : deltas) {
    if (d.size() != phi.size()) throw DimensionError("outer_update: delta dimension mismatch");
    sum += d;
  }
  return phi + (zeta / static_cast<double>(deltas.size())) * sum;
}

std::vector<double> segment_losses(const DenoiserState& den, const NoiseSchedule& s,
                                   const std::vector<TrainingTask>& store,
                                   const MetaConfig& cfg) {
  Rng bank(cfg.monitor_seed);
  const LossForm form = form_of(cfg.loss_kind);
  std::vector<double> out;
  for (int i = 1; i <= s.k(); ++i) {
    // Draws grouped by task so that each batch shares one embedding.
    std::vector<std::vector<NoisedDraw>> per_task(store.size());
    for (int n = 0; n < cfg.log_samples; ++n) {
      const int j = uniform_int(0, static_cast<int>(store.size()) - 1, bank);
      NoisedDraw d;
      d.target = &store[j].targets.target(i);
      d.segment = i;
      d.t = uniform_int(0, step_limit(cfg.loss_kind, s, i) - 1, bank);
      d.eps = standard_normal(den.weight_dim, bank);
      per_task[j].push_back(std::move(d));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < store.size(); ++j) {
      if (per_task[j].empty()) continue;
      const LossSample ls = mean_loss(den, s, per_task[j], store[j].embedding, form, cfg.scaling);
      total += ls.value * static_cast<double>(per_task[j].size());
    }
    out.push_back(total / cfg.log_samples);
  }
  return out;
}

MetaResult meta_train(const std::vector<TrainingTask>& store, const DenoiserState& den,
                      const NoiseSchedule& s, const MetaConfig& cfg, Rng& rng) {
  validate(cfg);
  if (store.empty()) throw SpecError("meta_train needs at least one training task");
  for (const auto& task : store) {
    if (task.targets.k != s.k()) throw SpecError("training task k differs from the schedule's k");
    if (task.embedding.size() != den.task_embed_dim) {
      throw DimensionError("training task embedding width differs from the denoiser's");
    }
  }

  MetaResult result{den, {}};
  TrainLog& log = result.log;
  const auto start = std::chrono::steady_clock::now();
  auto record = [&](int epoch, double mean_loss) {
    TrainRecord r;
    r.epoch = epoch;
    r.mean_loss = mean_loss;
    r.segment_loss = segment_losses(result.denoiser, s, store, cfg);
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
    log.records.push_back(std::move(r));
  };
  if (cfg.log_every > 0) record(0, std::numeric_limits<double>::quiet_NaN());

  const int n = static_cast<int>(store.size());
  double loss_acc = 0.0;
  int loss_count = 0;
  std::vector<WeightVector> deltas(cfg.B);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int b = 0; b < cfg.B; ++b) {
      const int j = uniform_int(0, n - 1, rng);
      int i = uniform_int(1, s.k(), rng);
      if (cfg.loss_kind == LossKind::VanillaGlobalOnly) i = s.k();
      InnerResult inner = inner_loop(result.denoiser, result.denoiser.phi, store[j].targets, i,
                                     store[j].embedding, s, cfg, rng);
      deltas[b] = inner.phi - result.denoiser.phi;
      loss_acc += inner.mean_loss;
      ++loss_count;
      log.denoiser_grad_evals += inner.grad_evals;
    }
    result.denoiser.phi = outer_update(result.denoiser.phi, deltas, cfg.zeta);
    if (cfg.log_every > 0 && epoch % cfg.log_every == 0) {
      record(epoch, loss_acc / loss_count);
      loss_acc = 0.0;
      loss_count = 0;
    }
  }
  return result;
}

WeightVector finetune(const NetworkSpec& spec, const WeightVector& w, const Batch& support,
                      double lr, int steps) {
  WeightVector out = w;
  for (int s = 0; s < steps; ++s) out -= lr * task_loss_grad(spec, out, support).grad;
  return out;
}

WeightVector reptile_baseline(const std::vector<TaskInstance>& tasks, const NetworkSpec& spec,
                              const WeightVector& init, const ReptileConfig& cfg, Rng& rng) {
  if (tasks.empty()) throw SpecError("reptile_baseline needs at least one task");
  if (init.size() != parameter_count(spec)) throw DimensionError("REPTILE init has wrong dimension");
  WeightVector theta = init;
  std::vector<WeightVector> deltas(cfg.B);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int b = 0; b < cfg.B; ++b) {
      const auto& task = tasks[uniform_int(0, static_cast<int>(tasks.size()) - 1, rng)];
      deltas[b] = finetune(spec, theta, task.support, cfg.inner_lr, cfg.K) - theta;
    }
    theta = outer_update(theta, deltas, cfg.outer_lr);
  }
  return theta;
}

}  // namespace mcdi
