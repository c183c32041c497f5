#include "mcdi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mcdi {

namespace fs = std::filesystem;

std::uint64_t task_seed(const ExperimentConfig& cfg, Split split, int index) {
  const auto stream = split == Split::Train ? kTrainTaskStream : kEvalTaskStream;
  return derive_seed(cfg.base_seed, static_cast<std::uint64_t>(index), stream);
}

NetworkSpec downstream_spec(const ExperimentConfig& cfg) {
  NetworkSpec spec;
  const bool blobs = cfg.family == TaskFamily::Blobs;
  spec.layer_sizes.push_back(blobs ? 2 : 1);
  for (int h : cfg.hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(blobs ? cfg.n_way : 1);
  spec.activation = cfg.activation;
  spec.output_head = head_for(cfg.family);
  return spec;
}

NoiseSchedule make_schedule(const ExperimentConfig& cfg) {
  return linear_alpha_schedule(cfg.T, cfg.k, cfg.alpha_min, cfg.alpha_max);
}

int task_embedding_dim(const ExperimentConfig& cfg) {
  const bool blobs = cfg.family == TaskFamily::Blobs;
  return static_cast<int>(embedding_dim(blobs ? cfg.n_way : 1, blobs ? 2 : 1));
}

TaskInstance make_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  return sample_task(cfg.family, cfg.n_way, cfg.k_shot, cfg.query_size, seed);
}

WeightVector shared_theta0(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.base_seed, 0, kInitStream));
  return init_network(downstream_spec(cfg), cfg.prep.init_std, rng);
}

namespace {

PrepConfig prep_config(const ExperimentConfig& cfg) {
  PrepConfig prep = cfg.prep;
  prep.k = cfg.k;
  return prep;
}

std::string split_name(Split split) { return split == Split::Train ? "train" : "eval"; }

std::string traj_file_name(Split split, int index) {
  std::ostringstream name;
  name << split_name(split) << '_' << std::setw(4) << std::setfill('0') << index << ".traj";
  return name.str();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

PreparedSplit prepare_split(const ExperimentConfig& cfg, Split split, int count) {
  const NetworkSpec spec = downstream_spec(cfg);
  const PrepConfig prep = prep_config(cfg);
  const WeightVector theta0 = shared_theta0(cfg);
  PreparedSplit out;
  for (int j = 0; j < count; ++j) {
    const std::uint64_t seed = task_seed(cfg, split, j);
    PreparedTask pt;
    pt.index = j;
    pt.task = make_task(cfg, seed);
    Rng rng(seed);
    try {
      pt.trajectory = cfg.shared_init ? collect_trajectory(pt.task, spec, prep, theta0, rng)
                                      : collect_trajectory(pt.task, spec, prep, rng);
    } catch (const NumericError& e) {
      out.failures.push_back({split, j, e.what()});
      continue;
    }
    out.tasks.push_back(std::move(pt));
  }
  return out;
}

std::vector<TrainingTask> training_store(const ExperimentConfig& cfg,
                                         const std::vector<PreparedTask>& tasks) {
  std::vector<TrainingTask> store;
  store.reserve(tasks.size());
  for (const auto& pt : tasks) {
    store.push_back({sample_local_targets(pt.trajectory, cfg.k), embed_task(pt.task)});
  }
  return store;
}

DenoiserState initial_denoiser(const ExperimentConfig& cfg) {
  Rng rng(derive_seed(cfg.base_seed, 0, kDenoiserStream));
  return init_denoiser(static_cast<int>(parameter_count(downstream_spec(cfg))), cfg.t_embed_dim,
                       task_embedding_dim(cfg), cfg.denoiser_hidden, cfg.T,
                       cfg.denoiser_init_std, rng);
}

MetaResult train_denoiser(const ExperimentConfig& cfg, const std::vector<TrainingTask>& store) {
  const std::uint64_t seed = derive_seed(cfg.base_seed, 0, kMetaStream);
  Rng rng(seed);
  MetaResult result = meta_train(store, initial_denoiser(cfg), make_schedule(cfg), cfg.meta, rng);
  result.log.seed = cfg.base_seed;
  return result;
}

double query_metric(const ExperimentConfig& cfg, const TaskInstance& task,
                    const WeightVector& w) {
  const NetworkSpec spec = downstream_spec(cfg);
  if (cfg.family == TaskFamily::Blobs) return accuracy(spec, w, task.query);
  return task_loss(spec, w, task.query);
}

namespace {

WeightVector maybe_finetune(const ExperimentConfig& cfg, const PreparedTask& pt,
                            const WeightVector& w) {
  if (cfg.finetune_steps == 0) return w;
  return finetune(downstream_spec(cfg), w, pt.task.support, cfg.finetune_lr, cfg.finetune_steps);
}

double weight_mse(const WeightVector& a, const WeightVector& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

MetricsRecord evaluate_denoiser(const ExperimentConfig& cfg, const DenoiserState& den,
                                const std::vector<PreparedTask>& eval_tasks,
                                const std::string& variant) {
  if (eval_tasks.empty()) throw SpecError("evaluation needs at least one task");
  const NoiseSchedule s = make_schedule(cfg);
  if (den.horizon != s.T()) throw SpecError("checkpoint horizon differs from schedule.T");
  MetricsRecord rec;
  rec.variant = variant;
  rec.k = cfg.k;
  rec.T = cfg.T;
  rec.seed = cfg.base_seed;
  rec.readout_mse.assign(cfg.k, 0.0);

  std::vector<double> recon, query;
  for (const auto& pt : eval_tasks) {
    const LocalTargetSet targets = sample_local_targets(pt.trajectory, cfg.k);
    const Eigen::VectorXd emb = embed_task(pt.task);
    double task_recon = 0.0, task_query = 0.0;
    for (int c = 0; c < cfg.chains_per_task; ++c) {
      const auto index = static_cast<std::uint64_t>(pt.index) * cfg.chains_per_task + c;
      Rng rng(derive_seed(cfg.base_seed, index, kChainStream));
      const Eigen::VectorXd x0 = standard_normal(den.weight_dim, rng);
      const InferenceChain chain = generate_chain(den, s, x0, emb, cfg.inference);
      rec.denoiser_evals += s.T();
      ++rec.chains;
      task_recon += weight_mse(chain.final_state(), pt.trajectory.optimum());
      for (int i = 1; i <= cfg.k; ++i) {
        rec.readout_mse[i - 1] += weight_mse(chain.readouts[i - 1], targets.target(i));
      }
      task_query += query_metric(cfg, pt.task, maybe_finetune(cfg, pt, chain.final_state()));
    }
    recon.push_back(task_recon / cfg.chains_per_task);
    query.push_back(task_query / cfg.chains_per_task);
  }
  for (double& r : rec.readout_mse) r /= static_cast<double>(rec.chains);
  rec.recon_mse = mean(recon);
  rec.recon_std = stddev(recon);
  rec.query_metric = mean(query);
  rec.query_std = stddev(query);
  return rec;
}

MetricsRecord evaluate_weights(const ExperimentConfig& cfg,
                               const std::vector<PreparedTask>& eval_tasks,
                               const std::string& variant, const WeightProducer& produce) {
  if (eval_tasks.empty()) throw SpecError("evaluation needs at least one task");
  MetricsRecord rec;
  rec.variant = variant;
  rec.k = cfg.k;
  rec.T = cfg.T;
  rec.seed = cfg.base_seed;
  std::vector<double> recon, query;
  for (const auto& pt : eval_tasks) {
    const WeightVector w = produce(pt);
    recon.push_back(weight_mse(w, pt.trajectory.optimum()));
    query.push_back(query_metric(cfg, pt.task, w));
  }
  rec.recon_mse = mean(recon);
  rec.recon_std = stddev(recon);
  rec.query_metric = mean(query);
  rec.query_std = stddev(query);
  return rec;
}

void write_metrics_csv(const std::vector<MetricsRecord>& records, const fs::path& path) {
  std::size_t k_max = 0;
  for (const auto& r : records) k_max = std::max(k_max, r.readout_mse.size());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "variant,k,T,seed,recon_mse";
  for (std::size_t i = 1; i <= k_max; ++i) out << ",readout_mse_" << i;
  out << ",query_metric,denoiser_evals\n" << std::setprecision(17);
  for (const auto& r : records) {
    out << r.variant << ',' << r.k << ',' << r.T << ',' << r.seed << ',' << r.recon_mse;
    for (std::size_t i = 0; i < k_max; ++i) {
      out << ',';
      if (i < r.readout_mse.size()) out << r.readout_mse[i];
    }
    out << ',' << r.query_metric << ',' << r.denoiser_evals << '\n';
  }
}

bool PrepareSummary::too_many_failures() const {
  return static_cast<double>(failures.size()) > 0.1 * requested;
}

PrepareSummary run_prepare(const ExperimentConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  fs::create_directories(out_dir);
  save_config(cfg, out_dir / "config.txt");
  std::ofstream manifest(out_dir / "manifest.csv");
  if (!manifest) throw Error("cannot write manifest in " + out_dir.string());
  manifest << "split,index,task_seed,file,M,k,d,final_loss,status\n" << std::setprecision(17);

  PrepareSummary summary;
  for (Split split : {Split::Train, Split::Eval}) {
    const int count = split == Split::Train ? cfg.n_train_tasks : cfg.n_eval_tasks;
    summary.requested += count;
    PreparedSplit prepared = prepare_split(cfg, split, count);
    for (const auto& pt : prepared.tasks) {
      const std::string file = traj_file_name(split, pt.index);
      save_trajectory(pt.trajectory, out_dir / file);
      ++summary.written;
      manifest << split_name(split) << ',' << pt.index << ',' << pt.task.task_seed << ',' << file
               << ',' << pt.trajectory.M << ',' << cfg.k << ',' << pt.trajectory.M / cfg.k << ','
               << pt.trajectory.final_loss << ",ok\n";
    }
    for (const auto& f : prepared.failures) {
      manifest << split_name(split) << ',' << f.index << ',' << task_seed(cfg, split, f.index)
               << ",,,,,,diverged\n";
      summary.failures.push_back(f);
    }
  }
  return summary;
}

std::vector<PreparedTask> load_prepared(const ExperimentConfig& cfg, const fs::path& dir,
                                        Split split) {
  if (!fs::is_directory(dir)) throw Error("trajectory directory " + dir.string() + " not found");
  const std::string prefix = split_name(split) + "_";
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with(prefix) && entry.path().extension() == ".traj") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  const NetworkSpec spec = downstream_spec(cfg);
  std::vector<PreparedTask> out;
  for (const auto& file : files) {
    PreparedTask pt;
    pt.trajectory = load_trajectory(file, spec.output_head);
    if (!(pt.trajectory.spec == spec)) {
      throw DimensionError(file.filename().string() +
                           " was prepared for a different network than the config describes");
    }
    pt.index = std::stoi(file.stem().string().substr(prefix.size()));
    pt.task = make_task(cfg, pt.trajectory.task_id);
    out.push_back(std::move(pt));
  }
  return out;
}

TrainLog run_train(const ExperimentConfig& cfg, const fs::path& traj_dir,
                   const fs::path& out_dir) {
  validate(cfg);
  const std::vector<PreparedTask> tasks = load_prepared(cfg, traj_dir, Split::Train);
  if (tasks.empty()) throw Error("no training trajectories in " + traj_dir.string());
  fs::create_directories(out_dir);
  save_config(cfg, out_dir / "config.txt");
  MetaResult result = train_denoiser(cfg, training_store(cfg, tasks));
  save_denoiser(result.denoiser, out_dir / "denoiser.ckpt");
  export_train_log_csv(result.log, cfg.k, out_dir / "train_log.csv");
  return result.log;
}

std::vector<MetricsRecord> run_eval(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                    const fs::path& traj_dir, const fs::path& out_dir) {
  validate(cfg);
  const DenoiserState den = load_denoiser(checkpoint);
  const std::vector<PreparedTask> tasks = load_prepared(cfg, traj_dir, Split::Eval);
  if (tasks.empty()) throw Error("no evaluation trajectories in " + traj_dir.string());
  fs::create_directories(out_dir);

  std::vector<MetricsRecord> records;
  records.push_back(evaluate_denoiser(cfg, den, tasks, to_string(cfg.meta.loss_kind)));
  records.push_back(evaluate_weights(cfg, tasks, "ground_truth", [](const PreparedTask& pt) {
    return pt.trajectory.optimum();
  }));
  const NetworkSpec spec = downstream_spec(cfg);
  records.push_back(evaluate_weights(cfg, tasks, "random", [&](const PreparedTask& pt) {
    Rng rng(derive_seed(cfg.base_seed, static_cast<std::uint64_t>(pt.index), kReptileStream));
    return init_network(spec, 1.0, rng);
  }));
  write_metrics_csv(records, out_dir / "metrics.csv");
  return records;
}

namespace {

ExperimentConfig variant_config(const ExperimentConfig& cfg, int k, LossKind kind) {
  ExperimentConfig v = cfg;
  v.k = k;
  v.prep.k = k;
  v.meta.loss_kind = kind;
  return v;
}

MetricsRecord train_and_evaluate(const ExperimentConfig& cfg,
                                 const std::vector<PreparedTask>& train,
                                 const std::vector<PreparedTask>& eval,
                                 const std::string& variant, std::int64_t* grad_evals) {
  MetaResult result = train_denoiser(cfg, training_store(cfg, train));
  if (grad_evals != nullptr) *grad_evals = result.log.denoiser_grad_evals;
  return evaluate_denoiser(cfg, result.denoiser, eval, variant);
}

}  // namespace

AblationSeedResult ablation_seed(const ExperimentConfig& cfg,
                                 const std::vector<PreparedTask>& train,
                                 const std::vector<PreparedTask>& eval) {
  AblationSeedResult out;
  std::int64_t evals_mc = 0, evals_mv = 0, evals_tw = 0;
  out.mc_di = train_and_evaluate(variant_config(cfg, cfg.k, LossKind::LocalConsistency), train,
                                 eval, "mc_di", &evals_mc);
  out.mv_di = train_and_evaluate(variant_config(cfg, 1, LossKind::LocalConsistency), train, eval,
                                 "mv_di", &evals_mv);
  out.tw_di = train_and_evaluate(variant_config(cfg, cfg.k, LossKind::VanillaOnLocals), train,
                                 eval, "tw_di", &evals_tw);
  if (evals_mc != evals_mv || evals_mc != evals_tw) {
    throw Error("ablation variants consumed different gradient budgets");
  }

  // REPTILE gets the same number of gradient evaluations on downstream weights.
  ReptileConfig rc = cfg.reptile;
  const std::int64_t per_epoch = static_cast<std::int64_t>(rc.B) * std::max(rc.K, 1);
  rc.epochs = static_cast<int>((evals_mc + per_epoch - 1) / per_epoch);
  std::vector<TaskInstance> tasks;
  for (const auto& pt : train) tasks.push_back(pt.task);
  const NetworkSpec spec = downstream_spec(cfg);
  Rng rng(derive_seed(cfg.base_seed, 0, kReptileStream));
  const WeightVector init = reptile_baseline(tasks, spec, shared_theta0(cfg), rc, rng);
  const int steps = std::max(cfg.finetune_steps, cfg.reptile.K);
  const double lr = cfg.finetune_steps > 0 ? cfg.finetune_lr : cfg.reptile.inner_lr;
  out.reptile = evaluate_weights(cfg, eval, "reptile", [&](const PreparedTask& pt) {
    return finetune(spec, init, pt.task.support, lr, steps);
  });
  return out;
}

ExperimentConfig sweep_config(const ExperimentConfig& cfg, int k) {
  if (k < 1) throw SpecError("sweep k must be positive");
  ExperimentConfig v = variant_config(cfg, k, LossKind::LocalConsistency);
  v.T = (cfg.T + k - 1) / k * k;
  return v;
}

std::vector<MetricsRecord> run_ablation(const ExperimentConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  fs::create_directories(out_dir);
  save_config(cfg, out_dir / "config.txt");
  std::vector<MetricsRecord> rows;
  std::vector<MetricsRecord> sweep_rows;
  for (int s = 0; s < cfg.ablation_seeds; ++s) {
    ExperimentConfig seed_cfg = cfg;
    seed_cfg.base_seed = derive_seed(cfg.base_seed, static_cast<std::uint64_t>(s), kAblationStream);
    const PreparedSplit train = prepare_split(seed_cfg, Split::Train, cfg.n_train_tasks);
    const PreparedSplit eval = prepare_split(seed_cfg, Split::Eval, cfg.n_eval_tasks);
    const AblationSeedResult r = ablation_seed(seed_cfg, train.tasks, eval.tasks);
    rows.insert(rows.end(), {r.reptile, r.mv_di, r.tw_di, r.mc_di});

    for (int k : cfg.sweep_k) {
      const ExperimentConfig kc = sweep_config(seed_cfg, k);
      const PreparedSplit ktrain = prepare_split(kc, Split::Train, cfg.n_train_tasks);
      const PreparedSplit keval = prepare_split(kc, Split::Eval, cfg.n_eval_tasks);
      sweep_rows.push_back(
          train_and_evaluate(kc, ktrain.tasks, keval.tasks, "mc_di_sweep", nullptr));
    }
  }
  rows.insert(rows.end(), sweep_rows.begin(), sweep_rows.end());
  write_metrics_csv(rows, out_dir / "ablation.csv");
  return rows;
}

VerifyReport run_verify(const ExperimentConfig& cfg, double rhs_scale) {
  VerifyReport rep;
  Rng rng(cfg.base_seed);

  {
    const NoiseSchedule s = linear_alpha_schedule(cfg.T, 1, cfg.alpha_min, cfg.alpha_max);
    Rng init_rng(derive_seed(cfg.base_seed, 0, kDenoiserStream));
    const DenoiserState den = init_denoiser(static_cast<int>(parameter_count(downstream_spec(cfg))),
                                            cfg.t_embed_dim, task_embedding_dim(cfg), {16}, cfg.T,
                                            cfg.denoiser_init_std, init_rng);
    rep.prop1 = prop1_check(s, den, cfg.verify_instances, rng);
    if (rep.prop1.max_coeff_diff != 0.0) {
      rep.violations.push_back("prop1: abar^1 differs from abar");
    }
    if (rep.prop1.max_loss_rel_diff > kProp1Tolerance) {
      rep.violations.push_back("prop1: loss relative difference " +
                               std::to_string(rep.prop1.max_loss_rel_diff));
    }
    if (rep.prop1.max_grad_rel_diff > kProp1Tolerance) {
      rep.violations.push_back("prop1: gradient relative difference " +
                               std::to_string(rep.prop1.max_grad_rel_diff));
    }
  }

  rep.lemma1 = lemma1_sweep(cfg.verify_instances, cfg.base_seed, rhs_scale);
  rep.theorem2 = theorem2_sweep(cfg.verify_instances, cfg.base_seed + 1, rhs_scale);
  for (std::size_t i = 0; i < rep.lemma1.size(); ++i) {
    if (!rep.lemma1[i].holds) rep.violations.push_back("lemma1 instance " + std::to_string(i));
  }
  for (std::size_t i = 0; i < rep.theorem2.size(); ++i) {
    if (!rep.theorem2[i].holds) rep.violations.push_back("theorem2 instance " + std::to_string(i));
  }

  constexpr double h = 1e-5;
  for (int n = 0; n < cfg.verify_grad_instances; ++n) {
    const int k = uniform_int(1, 4, rng);
    const int T = k * uniform_int(1, 5, rng);
    const NoiseSchedule s = linear_alpha_schedule(T, k, 0.5, 0.95);
    const int D = uniform_int(2, 30, rng);
    const int E = uniform_int(1, 8, rng);
    DenoiserState den = init_denoiser(D, 4, E, {uniform_int(4, 16, rng)}, T, 0.3, rng);
    const WeightVector theta = standard_normal(D, rng);
    const Eigen::VectorXd eps = standard_normal(D, rng);
    const Eigen::VectorXd emb = standard_normal(E, rng);
    const int i = uniform_int(1, k, rng);
    const int t_local = uniform_int(0, s.segment_end(i) - 1, rng);
    const int t_global = uniform_int(0, T - 1, rng);

    auto at = [&](const WeightVector& phi) {
      DenoiserState d = den;
      d.phi = phi;
      return d;
    };
    const LossSample van = vanilla_loss_sample(den, s, theta, t_global, eps, emb);
    const WeightVector van_fd = central_difference<double>(
        [&](const WeightVector& phi) {
          return vanilla_loss_sample(at(phi), s, theta, t_global, eps, emb).value;
        },
        den.phi, h);
    rep.grad_errors_vanilla.push_back(relative_error(van.grad_phi, van_fd));

    const LossSample loc = local_loss_sample(den, s, theta, i, t_local, eps, emb);
    const WeightVector loc_fd = central_difference<double>(
        [&](const WeightVector& phi) {
          return local_loss_sample(at(phi), s, theta, i, t_local, eps, emb).value;
        },
        den.phi, h);
    rep.grad_errors_local.push_back(relative_error(loc.grad_phi, loc_fd));

    const int n_way = uniform_int(2, 4, rng);
    const TaskInstance task = sample_task(TaskFamily::Blobs, n_way, 5, 5, rng());
    const NetworkSpec spec{{2, uniform_int(2, 12, rng), n_way}, Activation::Tanh,
                           OutputHead::SoftmaxCrossEntropy};
    const WeightVector w = init_network(spec, 0.5, rng);
    rep.grad_errors_task.push_back(relative_error(task_loss_grad(spec, w, task.support).grad,
                                                  finite_diff_grad(spec, w, task.support, h)));
  }
  auto check = [&](const std::vector<double>& errs, const std::string& name) {
    for (std::size_t n = 0; n < errs.size(); ++n) {
      if (errs[n] > kGradTolerance) {
        rep.violations.push_back(name + " gradient instance " + std::to_string(n) +
                                 ": relative error " + std::to_string(errs[n]));
      }
    }
  };
  check(rep.grad_errors_vanilla, "vanilla loss");
  check(rep.grad_errors_local, "local loss");
  check(rep.grad_errors_task, "task loss");
  return rep;
}

void write_verify_report(const VerifyReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  export_bound_csv(report.lemma1, out_dir / "verify_lemma1.csv");
  export_bound_csv(report.theorem2, out_dir / "verify_theorem2.csv");
  std::ofstream out(out_dir / "verify_summary.txt");
  if (!out) throw Error("cannot write verify summary in " + out_dir.string());
  auto worst = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  };
  out << std::setprecision(6);
  out << "prop1 max_loss_rel_diff " << report.prop1.max_loss_rel_diff << '\n'
      << "prop1 max_grad_rel_diff " << report.prop1.max_grad_rel_diff << '\n'
      << "prop1 max_coeff_diff " << report.prop1.max_coeff_diff << '\n'
      << "lemma1 instances " << report.lemma1.size() << '\n'
      << "theorem2 instances " << report.theorem2.size() << '\n'
      << "grad vanilla max_rel_error " << worst(report.grad_errors_vanilla) << '\n'
      << "grad local max_rel_error " << worst(report.grad_errors_local) << '\n'
      << "grad task max_rel_error " << worst(report.grad_errors_task) << '\n'
      << "violations " << report.violations.size() << '\n';
  for (const auto& v : report.violations) out << "  " << v << '\n';
}

}  // namespace mcdi
