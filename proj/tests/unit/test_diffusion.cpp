#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "mcdi/diffusion.hpp"

namespace mcdi {
namespace {

NoiseSchedule halves(int T, int k) { return NoiseSchedule(k, std::vector<double>(T, 0.5)); }

Eigen::VectorXd vec1(double v) { return Eigen::VectorXd::Constant(1, v); }

struct Instance {
  DenoiserState den;
  WeightVector theta;
  Eigen::VectorXd eps;
  Eigen::VectorXd emb;
};

Instance random_instance(Rng& rng, int D = 5, int E = 3) {
  Instance in;
  in.den = init_denoiser(D, 4, E, {12}, 12, 0.4, rng);
  in.theta = standard_normal(D, rng);
  in.eps = standard_normal(D, rng);
  in.emb = standard_normal(E, rng);
  return in;
}

DenoiserState with_phi(DenoiserState den, const WeightVector& phi) {
  den.phi = phi;
  return den;
}

TEST(LossValue, VerbatimHandExample) {
  const NoiseSchedule s = halves(4, 2);
  const double v = loss_value(s, LossForm::LocalConsistency, 1, 0, vec1(1.0), vec1(1.0),
                              LocalScaling::Verbatim);
  const double expected = std::pow(std::sqrt(0.75) - std::sqrt(0.9375), 2);
  EXPECT_NEAR(v, expected, 1e-15);
  EXPECT_NEAR(v, 0.010449, 1e-6);
}

TEST(LossValue, NormalizedIsVerbatimOverGlobalNoise) {
  const NoiseSchedule s = halves(4, 2);
  const double verbatim = loss_value(s, LossForm::LocalConsistency, 1, 0, vec1(1.0), vec1(1.0),
                                     LocalScaling::Verbatim);
  const double normalized = loss_value(s, LossForm::LocalConsistency, 1, 0, vec1(1.0),
                                       vec1(1.0), LocalScaling::Normalized);
  EXPECT_NEAR(normalized, verbatim / 0.9375, 1e-15);
}

TEST(LossValue, ScaledPredictionCancels) {
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  Rng rng(3);
  const Eigen::VectorXd eps = standard_normal(4, rng);
  for (int i = 1; i <= 3; ++i) {
    for (int t = 0; t < s.segment_end(i); ++t) {
      const double ratio =
          std::sqrt(1.0 - s.alpha_bar(t)) / std::sqrt(1.0 - s.alpha_bar_local(t, i));
      for (auto scaling : {LocalScaling::Normalized, LocalScaling::Verbatim}) {
        EXPECT_NEAR(loss_value(s, LossForm::LocalConsistency, i, t, eps, ratio * eps, scaling),
                    0.0, 1e-24);
      }
    }
  }
}

TEST(LossValue, PerfectVanillaPredictor) {
  const NoiseSchedule s = halves(4, 1);
  const Eigen::Vector3d eps(0.1, -2.0, 0.7);
  EXPECT_EQ(loss_value(s, LossForm::Vanilla, 1, 2, eps, eps), 0.0);
}

TEST(LossValue, StepRangeChecked) {
  const NoiseSchedule s = halves(4, 2);
  EXPECT_THROW(loss_value(s, LossForm::LocalConsistency, 1, 2, vec1(1), vec1(1)), SpecError);
  EXPECT_THROW(loss_value(s, LossForm::Vanilla, 1, 4, vec1(1), vec1(1)), SpecError);
}

TEST(VanillaLoss, ZeroDenoiserGivesNoiseNorm) {
  Rng rng(1);
  Instance in = random_instance(rng);
  in.den.phi.setZero();
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  EXPECT_NEAR(vanilla_loss_sample(in.den, s, in.theta, 4, in.eps, in.emb).value,
              in.eps.squaredNorm(), 1e-14);
}

TEST(LocalLoss, SingleSegmentEqualsVanillaBitwise) {
  Rng rng(2);
  const NoiseSchedule s = linear_alpha_schedule(12, 1, 0.4, 0.99);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    const int t = uniform_int(0, 11, rng);
    const DenoiserState den = with_phi(in.den, standard_normal(in.den.phi.size(), rng));
    const LossSample a = local_loss_sample(den, s, in.theta, 1, t, in.eps, in.emb);
    const LossSample b = vanilla_loss_sample(den, s, in.theta, t, in.eps, in.emb);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.grad_phi, b.grad_phi);
  }
}

TEST(LossGradients, MatchFiniteDifferences) {
  Rng rng(5);
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    const int i = uniform_int(1, 3, rng);
    const int t = uniform_int(0, s.segment_end(i) - 1, rng);
    for (auto scaling : {LocalScaling::Normalized, LocalScaling::Verbatim}) {
      const LossSample ls = local_loss_sample(in.den, s, in.theta, i, t, in.eps, in.emb, scaling);
      const WeightVector fd = central_difference<double>(
          [&](const WeightVector& phi) {
            return local_loss_sample(with_phi(in.den, phi), s, in.theta, i, t, in.eps, in.emb,
                                     scaling)
                .value;
          },
          in.den.phi, 1e-5);
      EXPECT_LT(relative_error(ls.grad_phi, fd), 1e-4);
    }
    const LossSample vs = vanilla_loss_sample(in.den, s, in.theta, t, in.eps, in.emb);
    const WeightVector fd = central_difference<double>(
        [&](const WeightVector& phi) {
          return vanilla_loss_sample(with_phi(in.den, phi), s, in.theta, t, in.eps, in.emb).value;
        },
        in.den.phi, 1e-5);
    EXPECT_LT(relative_error(vs.grad_phi, fd), 1e-4);
  }
}

TEST(MeanLoss, AveragesSingleDraws) {
  Rng rng(6);
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  const Instance in = random_instance(rng);
  std::vector<WeightVector> targets{standard_normal(5, rng), standard_normal(5, rng)};
  std::vector<NoisedDraw> draws;
  double value = 0.0;
  WeightVector grad = WeightVector::Zero(in.den.phi.size());
  for (int n = 0; n < 4; ++n) {
    NoisedDraw d{&targets[n % 2], 1 + n % 3, n, standard_normal(5, rng)};
    const LossSample one = local_loss_sample(in.den, s, *d.target, d.segment, d.t, d.eps, in.emb);
    value += one.value / 4;
    grad += one.grad_phi / 4;
    draws.push_back(std::move(d));
  }
  const LossSample all = mean_loss(in.den, s, draws, in.emb, LossForm::LocalConsistency);
  EXPECT_NEAR(all.value, value, 1e-12);
  EXPECT_LT(relative_error(all.grad_phi, grad), 1e-12);
}

TEST(ExpectedLocalLoss, Reproducible) {
  Rng init(1);
  const Instance in = random_instance(init);
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  LocalTargetSet targets{3, 1, {in.theta, 2 * in.theta, 3 * in.theta}};
  Rng a(10), b(10);
  const LossSample x = expected_local_loss(in.den, s, targets, in.emb, 8, a);
  const LossSample y = expected_local_loss(in.den, s, targets, in.emb, 8, b);
  EXPECT_EQ(x.value, y.value);
  EXPECT_EQ(x.grad_phi, y.grad_phi);
}

TEST(ExpectedLocalLoss, VarianceShrinksWithSamples) {
  Rng init(2);
  const Instance in = random_instance(init);
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  LocalTargetSet targets{3, 1, {in.theta, 2 * in.theta, 3 * in.theta}};
  auto variance = [&](int n_mc) {
    std::vector<double> v;
    for (int r = 0; r < 400; ++r) {
      Rng rng(1000 + r);
      v.push_back(expected_local_loss(in.den, s, targets, in.emb, n_mc, rng).value);
    }
    double m = 0.0;
    for (double x : v) m += x / v.size();
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m) / (v.size() - 1);
    return var;
  };
  const double v1 = variance(1);
  const double v16 = variance(16);
  const double v256 = variance(256);
  EXPECT_GT(v1 / v16, 16.0 / 2.5);
  EXPECT_LT(v1 / v16, 16.0 * 2.5);
  EXPECT_GT(v16 / v256, 16.0 / 2.5);
  EXPECT_LT(v16 / v256, 16.0 * 2.5);
}

TEST(InferenceUpdate, ZeroPredictionPosterior) {
  const NoiseSchedule s = linear_alpha_schedule(8, 2, 0.5, 0.9);
  const Eigen::Vector2d x(1.5, -0.5);
  for (int t = 0; t < 8; ++t) {
    EXPECT_TRUE(inference_update(s, x, t, Eigen::Vector2d::Zero(), InferenceMode::Posterior)
                    .isApprox(x / std::sqrt(s.alpha(t)), 1e-15));
  }
}

TEST(InferenceUpdate, ZeroPredictionEq2) {
  const NoiseSchedule s = linear_alpha_schedule(8, 2, 0.5, 0.9);
  const Eigen::Vector2d x(1.5, -0.5);
  for (int t = 0; t < 8; ++t) {
    EXPECT_TRUE(inference_update(s, x, t, Eigen::Vector2d::Zero(), InferenceMode::Eq2)
                    .isApprox(x / std::sqrt(s.alpha_bar(t + 1)), 1e-15));
  }
}

TEST(InferenceUpdate, PosteriorHandExample) {
  const NoiseSchedule s = halves(4, 1);
  const double x = inference_update(s, vec1(1.0), 0, vec1(1.0), InferenceMode::Posterior)[0];
  const double expected = 1.0 / std::sqrt(0.5) - 0.5 / (std::sqrt(0.9375) * std::sqrt(0.5));
  EXPECT_NEAR(x, expected, 1e-15);
  EXPECT_NEAR(x, 0.683917, 1e-6);
}

TEST(InferenceUpdate, RangeAndDimensionChecks) {
  const NoiseSchedule s = halves(4, 1);
  EXPECT_THROW(inference_update(s, vec1(1), 4, vec1(1), InferenceMode::Posterior), SpecError);
  EXPECT_THROW(inference_update(s, vec1(1), 0, Eigen::Vector2d::Zero(), InferenceMode::Posterior),
               DimensionError);
}

// With the per-segment minimizer of the local loss for a single known target
// in place of the network, the posterior chain lands exactly on each target at
// the end of its segment.
TEST(InferenceChainProperty, IdealPredictorHitsLocalTargets) {
  Rng rng(8);
  for (int k : {1, 2, 3, 4}) {
    const NoiseSchedule s = linear_alpha_schedule(12, k, 0.3, 0.97);
    std::vector<Eigen::VectorXd> targets;
    for (int i = 0; i < k; ++i) targets.push_back(standard_normal(6, rng));
    Eigen::VectorXd x = standard_normal(6, rng);
    for (int t = 0; t < s.T(); ++t) {
      const int i = t / s.segment_length() + 1;
      const double abl = s.alpha_bar_local(t, i);
      const Eigen::VectorXd eps_true = (x - std::sqrt(abl) * targets[i - 1]) / std::sqrt(1 - abl);
      const Eigen::VectorXd eps_hat =
          eps_true * std::sqrt((1 - s.alpha_bar(t)) / (1 - abl));
      x = inference_update(s, x, t, eps_hat, InferenceMode::Posterior);
      if ((t + 1) % s.segment_length() == 0) {
        EXPECT_LT((x - targets[i - 1]).norm(), 1e-10) << "k=" << k << " segment " << i;
      }
    }
  }
}

TEST(GenerateChain, LengthReadoutsAndDeterminism) {
  Rng rng(11);
  const DenoiserState den = init_denoiser(5, 4, 2, {8}, 12, 0.2, rng);
  const NoiseSchedule s = linear_alpha_schedule(12, 3, 0.5, 0.95);
  const Eigen::VectorXd x0 = standard_normal(5, rng);
  const Eigen::VectorXd emb = standard_normal(2, rng);
  for (auto mode : {InferenceMode::Posterior, InferenceMode::Eq2}) {
    const InferenceChain a = generate_chain(den, s, x0, emb, mode);
    const InferenceChain b = generate_chain(den, s, x0, emb, mode);
    ASSERT_EQ(a.states.size(), 13u);
    EXPECT_EQ(a.states[0], x0);
    ASSERT_EQ(a.readouts.size(), 3u);
    for (int i = 1; i <= 3; ++i) EXPECT_EQ(a.readouts[i - 1], a.states[4 * i]);
    EXPECT_EQ(a.final_state(), a.states.back());
    for (std::size_t n = 0; n < a.states.size(); ++n) EXPECT_EQ(a.states[n], b.states[n]);
  }
  EXPECT_THROW(generate_chain(den, s, Eigen::VectorXd::Zero(4), emb, InferenceMode::Posterior),
               DimensionError);
}

TEST(GenerateChain, CsvExport) {
  Rng rng(12);
  const DenoiserState den = init_denoiser(3, 4, 2, {8}, 4, 0.2, rng);
  const NoiseSchedule s = linear_alpha_schedule(4, 2, 0.5, 0.95);
  const InferenceChain c =
      generate_chain(den, s, standard_normal(3, rng), standard_normal(2, rng),
                     InferenceMode::Posterior);
  const auto p = std::filesystem::temp_directory_path() /
                 ("mcdi_chain_" + std::to_string(::getpid()) + ".csv");
  export_chain_csv(c, p);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,coordinate,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5 * 3);
  std::filesystem::remove(p);
}

}  // namespace
}  // namespace mcdi
