#include <gtest/gtest.h>

#include "mcdi/meta.hpp"

namespace mcdi {
namespace {

struct Fixture {
  NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  DenoiserState den;
  std::vector<TrainingTask> store;

  explicit Fixture(int k = 3, std::uint64_t seed = 1) : s(linear_alpha_schedule(12, k, 0.5, 0.95)) {
    Rng rng(seed);
    den = init_denoiser(6, 4, 2, {16}, 12, 0.1, rng);
    for (int j = 0; j < 2; ++j) {
      LocalTargetSet set{k, 1, {}};
      for (int i = 0; i < k; ++i) set.targets.push_back(standard_normal(6, rng));
      store.push_back({set, standard_normal(2, rng)});
    }
  }
};

MetaConfig small_config() {
  MetaConfig cfg;
  cfg.eta = 0.01;
  cfg.zeta = 1.0;
  cfg.K = 2;
  cfg.B = 3;
  cfg.epochs = 5;
  return cfg;
}

TEST(OuterUpdate, ZeroDeltasKeepPhi) {
  const WeightVector phi = WeightVector::LinSpaced(4, 0, 3);
  EXPECT_EQ(outer_update(phi, {WeightVector::Zero(4), WeightVector::Zero(4)}, 0.7), phi);
}

TEST(OuterUpdate, HandExamples) {
  WeightVector d(2);
  d << 1, 0;
  const WeightVector a = outer_update(WeightVector::Zero(2), {d}, 0.5);
  EXPECT_EQ(a[0], 0.5);
  EXPECT_EQ(a[1], 0.0);
  const WeightVector b = outer_update(WeightVector::Constant(1, 1.0), {WeightVector::Constant(1, 1.0),
                                                                     WeightVector::Constant(1, 3.0)},
                                      1.0);
  EXPECT_EQ(b[0], 3.0);
}

TEST(OuterUpdate, Errors) {
  EXPECT_THROW(outer_update(WeightVector::Zero(2), {}, 1.0), SpecError);
  EXPECT_THROW(outer_update(WeightVector::Zero(2), {WeightVector::Zero(3)}, 1.0), DimensionError);
}

TEST(InnerLoop, NoStepsOrZeroRateKeepsPhi) {
  Fixture f;
  MetaConfig cfg = small_config();
  Rng rng(1);
  cfg.K = 0;
  EXPECT_EQ(inner_loop(f.den, f.den.phi, f.store[0].targets, 2, f.store[0].embedding, f.s, cfg, rng).phi,
            f.den.phi);
  cfg.K = 3;
  cfg.eta = 0.0;
  EXPECT_EQ(inner_loop(f.den, f.den.phi, f.store[0].targets, 2, f.store[0].embedding, f.s, cfg, rng).phi,
            f.den.phi);
}

TEST(InnerLoop, SingleStepMatchesManualTrace) {
  Fixture f;
  MetaConfig cfg = small_config();
  cfg.K = 1;
  Rng rng(42);
  Rng trace = rng;
  const InnerResult r =
      inner_loop(f.den, f.den.phi, f.store[1].targets, 2, f.store[1].embedding, f.s, cfg, rng);
  const int t = uniform_int(0, f.s.segment_end(2) - 1, trace);
  const Eigen::VectorXd eps = standard_normal(6, trace);
  const LossSample ls =
      local_loss_sample(f.den, f.s, f.store[1].targets.target(2), 2, t, eps, f.store[1].embedding);
  EXPECT_EQ(r.phi, (f.den.phi - cfg.eta * ls.grad_phi).eval());
  EXPECT_EQ(r.mean_loss, ls.value);
  EXPECT_EQ(r.grad_evals, 1);
}

TEST(InnerLoop, RejectsBadSegment) {
  Fixture f;
  Rng rng(1);
  EXPECT_THROW(inner_loop(f.den, f.den.phi, f.store[0].targets, 4, f.store[0].embedding, f.s,
                          small_config(), rng),
               SpecError);
}

TEST(MetaTrain, ZeroEpochsReturnsInitialization) {
  Fixture f;
  MetaConfig cfg = small_config();
  cfg.epochs = 0;
  Rng rng(1);
  EXPECT_EQ(meta_train(f.store, f.den, f.s, cfg, rng).denoiser.phi, f.den.phi);
}

TEST(MetaTrain, ZeroOuterRateReturnsInitialization) {
  Fixture f;
  MetaConfig cfg = small_config();
  cfg.zeta = 0.0;
  Rng rng(1);
  EXPECT_EQ(meta_train(f.store, f.den, f.s, cfg, rng).denoiser.phi, f.den.phi);
}

TEST(MetaTrain, CountsGradientEvaluationsAndLogs) {
  Fixture f;
  MetaConfig cfg = small_config();
  cfg.n_mc = 4;
  cfg.epochs = 6;
  cfg.log_every = 2;
  Rng rng(1);
  const MetaResult r = meta_train(f.store, f.den, f.s, cfg, rng);
  EXPECT_EQ(r.log.denoiser_grad_evals, 6 * 3 * 2 * 4);
  ASSERT_EQ(r.log.records.size(), 4u);
  for (std::size_t n = 0; n < r.log.records.size(); ++n) {
    EXPECT_EQ(r.log.records[n].epoch, static_cast<int>(2 * n));
    EXPECT_EQ(r.log.records[n].segment_loss.size(), 3u);
  }
}

TEST(MetaTrain, Deterministic) {
  Fixture f;
  Rng a(5), b(5);
  EXPECT_EQ(meta_train(f.store, f.den, f.s, small_config(), a).denoiser.phi,
            meta_train(f.store, f.den, f.s, small_config(), b).denoiser.phi);
}

TEST(MetaTrain, SingleSegmentLocalEqualsVanillaGlobalOnly) {
  Fixture f(1);
  MetaConfig local = small_config();
  local.log_every = 1;
  MetaConfig vanilla = local;
  vanilla.loss_kind = LossKind::VanillaGlobalOnly;
  Rng a(9), b(9);
  const MetaResult ra = meta_train(f.store, f.den, f.s, local, a);
  const MetaResult rb = meta_train(f.store, f.den, f.s, vanilla, b);
  EXPECT_EQ(ra.denoiser.phi, rb.denoiser.phi);
  ASSERT_EQ(ra.log.records.size(), rb.log.records.size());
  for (std::size_t n = 1; n < ra.log.records.size(); ++n) {
    EXPECT_EQ(ra.log.records[n].mean_loss, rb.log.records[n].mean_loss);
    EXPECT_EQ(ra.log.records[n].segment_loss, rb.log.records[n].segment_loss);
  }
}

TEST(MetaTrain, LossDecreasesOnSingleTrajectory) {
  Fixture f(3, 2);
  std::vector<TrainingTask> one{f.store[0]};
  MetaConfig cfg;
  cfg.eta = 0.01;
  cfg.zeta = 1.0;
  cfg.K = 3;
  cfg.B = 5;
  cfg.epochs = 500;
  cfg.n_mc = 4;
  cfg.log_every = 250;
  Rng rng(3);
  const MetaResult r = meta_train(one, f.den, f.s, cfg, rng);
  const auto& first = r.log.records.front().segment_loss;
  const auto& last = r.log.records.back().segment_loss;
  for (int i = 0; i < 3; ++i) EXPECT_LT(last[i], 0.5 * first[i]) << "segment " << i + 1;
}

TEST(MetaTrain, RejectsMismatchedStore) {
  Fixture f;
  Rng rng(1);
  EXPECT_THROW(meta_train({}, f.den, f.s, small_config(), rng), SpecError);
  Fixture g(1);
  EXPECT_THROW(meta_train(g.store, f.den, f.s, small_config(), rng), SpecError);
}

TEST(TrainLog, FirstEpochBelow) {
  TrainLog log;
  log.records = {{0, 0, {10.0, 8.0}, 0}, {5, 0, {6.0, 3.9}, 0}, {10, 0, {4.9, 3.0}, 0}};
  EXPECT_EQ(log.first_epoch_below(1, 0.5), 10);
  EXPECT_EQ(log.first_epoch_below(2, 0.5), 5);
  EXPECT_EQ(log.first_epoch_below(1, 0.1), -1);
}

TEST(LossKind, NamesRoundTrip) {
  for (auto k : {LossKind::LocalConsistency, LossKind::VanillaOnLocals, LossKind::VanillaGlobalOnly}) {
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_loss_kind("nope"), SpecError);
}

TEST(Reptile, NoInnerStepsReturnsInit) {
  const NetworkSpec spec{{2, 4, 2}, Activation::Tanh, OutputHead::SoftmaxCrossEntropy};
  std::vector<TaskInstance> tasks{sample_task(TaskFamily::Blobs, 2, 5, 5, 1)};
  Rng rng(1);
  const WeightVector init = init_network(spec, 0.1, rng);
  ReptileConfig cfg;
  cfg.K = 0;
  EXPECT_EQ(reptile_baseline(tasks, spec, init, cfg, rng), init);
}

TEST(Reptile, Deterministic) {
  const NetworkSpec spec{{2, 4, 2}, Activation::Tanh, OutputHead::SoftmaxCrossEntropy};
  std::vector<TaskInstance> tasks{sample_task(TaskFamily::Blobs, 2, 5, 5, 1),
                                  sample_task(TaskFamily::Blobs, 2, 5, 5, 2)};
  const WeightVector init = WeightVector::Constant(parameter_count(spec), 0.01);
  ReptileConfig cfg;
  cfg.epochs = 20;
  Rng a(3), b(3);
  EXPECT_EQ(reptile_baseline(tasks, spec, init, cfg, a), reptile_baseline(tasks, spec, init, cfg, b));
}

// Blob tasks whose class 0 always sits in the lower-left: there is shared
// structure for the meta-initialization to pick up.
TEST(Reptile, MetaInitBeatsRandomInitAfterFewSteps) {
  const NetworkSpec spec{{2, 8, 2}, Activation::Tanh, OutputHead::SoftmaxCrossEntropy};
  auto oriented = [](std::uint64_t seed) {
    TaskInstance t = sample_task(TaskFamily::Blobs, 2, 5, 20, seed);
    if (t.centers.row(0).sum() > t.centers.row(1).sum()) {
      for (auto* b : {&t.support, &t.query}) {
        for (auto& l : b->labels) l = 1 - l;
      }
      t.centers.row(0).swap(t.centers.row(1));
    }
    return t;
  };
  std::vector<TaskInstance> train;
  for (std::uint64_t s = 0; s < 32; ++s) train.push_back(oriented(1000 + s));
  ReptileConfig cfg;
  cfg.epochs = 300;
  Rng rng(1);
  const WeightVector random_init = init_network(spec, 0.1, rng);
  const WeightVector meta = reptile_baseline(train, spec, random_init, cfg, rng);

  double acc_meta = 0.0, acc_random = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const TaskInstance t = oriented(5000 + s);
    acc_meta += accuracy(spec, finetune(spec, meta, t.support, 0.05, 5), t.query) / 20;
    acc_random += accuracy(spec, finetune(spec, random_init, t.support, 0.05, 5), t.query) / 20;
  }
  EXPECT_GT(acc_meta, acc_random);
}

}  // namespace
}  // namespace mcdi
