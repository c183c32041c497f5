#include "mcdi/diffusion.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

namespace mcdi {

DrawCoefficients draw_coefficients(const NoiseSchedule& s, LossForm form, int segment,
                                   int t, LocalScaling scaling) {
  DrawCoefficients c;
  if (form == LossForm::Vanilla) {
    if (t < 0 || t >= s.T()) {
      throw SpecError("vanilla loss step " + std::to_string(t) + " outside [0, T)");
    }
    const double ab = s.alpha_bar(t);
    c.signal = std::sqrt(ab);
    c.noise = std::sqrt(1.0 - ab);
    return c;
  }
  const int end = s.segment_end(segment);
  if (t < 0 || t >= end) {
    throw SpecError("local loss step " + std::to_string(t) + " outside [0, " +
                    std::to_string(end) + ")");
  }
  const double ab_local = s.alpha_bar_local(t, segment);
  const double ab_global = s.alpha_bar(t);
  c.signal = std::sqrt(ab_local);
  c.noise = std::sqrt(1.0 - ab_local);
  if (scaling == LocalScaling::Verbatim) {
    c.model = std::sqrt(1.0 - ab_local);
    c.target = std::sqrt(1.0 - ab_global);
  } else {
    c.model = std::sqrt((1.0 - ab_local) / (1.0 - ab_global));
    c.target = 1.0;
  }
  return c;
}

double loss_value(const NoiseSchedule& s, LossForm form, int segment, int t,
                  const Eigen::VectorXd& eps, const Eigen::VectorXd& eps_hat,
                  LocalScaling scaling) {
  if (eps.size() != eps_hat.size()) throw DimensionError("loss_value: dimension mismatch");
  const DrawCoefficients c = draw_coefficients(s, form, segment, t, scaling);
  return (c.model * eps_hat - c.target * eps).squaredNorm();
}

LossSample mean_loss(const DenoiserState& den, const NoiseSchedule& s,
                     std::span<const NoisedDraw> draws, const Eigen::VectorXd& emb,
                     LossForm form, LocalScaling scaling) {
  if (draws.empty()) throw SpecError("mean_loss needs at least one draw");
  const Index n = static_cast<Index>(draws.size());
  const Index D = den.weight_dim;

  Eigen::MatrixXd x(n, D);
  Eigen::MatrixXd noise(n, D);
  Eigen::VectorXd model_scale(n);
  Eigen::VectorXd target_scale(n);
  std::vector<int> steps(n);
  for (Index r = 0; r < n; ++r) {
    const NoisedDraw& d = draws[r];
    if (d.target == nullptr || d.target->size() != D || d.eps.size() != D) {
      throw DimensionError("diffusion draw does not match the denoiser width");
    }
    const DrawCoefficients c = draw_coefficients(s, form, d.segment, d.t, scaling);
    x.row(r) = (c.signal * *d.target + c.noise * d.eps).transpose();
    noise.row(r) = d.eps.transpose();
    model_scale[r] = c.model;
    target_scale[r] = c.target;
    steps[r] = d.t;
  }

  const auto cache = forward_cached(den.spec, den.phi, denoiser_inputs(den, x, steps, emb));
  const Eigen::MatrixXd residual = model_scale.asDiagonal() * cache.output() -
                                   target_scale.asDiagonal() * noise;
  const double inv_n = 1.0 / static_cast<double>(n);
  LossSample out;
  out.value = residual.squaredNorm() * inv_n;
  if (!std::isfinite(out.value)) throw NumericError("non-finite diffusion loss");
  Eigen::MatrixXd upstream = (2.0 * inv_n) * (model_scale.asDiagonal() * residual);
  out.grad_phi = backward(den.spec, den.phi, cache, std::move(upstream));
  return out;
}

LossSample vanilla_loss_sample(const DenoiserState& den, const NoiseSchedule& s,
                               const WeightVector& theta_target, int t,
                               const Eigen::VectorXd& eps, const Eigen::VectorXd& emb) {
  const NoisedDraw d{&theta_target, s.k(), t, eps};
  return mean_loss(den, s, std::span(&d, 1), emb, LossForm::Vanilla);
}

LossSample local_loss_sample(const DenoiserState& den, const NoiseSchedule& s,
                             const WeightVector& theta_local, int i, int t,
                             const Eigen::VectorXd& eps, const Eigen::VectorXd& emb,
                             LocalScaling scaling) {
  const NoisedDraw d{&theta_local, i, t, eps};
  return mean_loss(den, s, std::span(&d, 1), emb, LossForm::LocalConsistency, scaling);
}

LossSample expected_local_loss(const DenoiserState& den, const NoiseSchedule& s,
                               const LocalTargetSet& targets, const Eigen::VectorXd& emb,
                               int n_mc, Rng& rng, LocalScaling scaling) {
  if (n_mc < 1) throw SpecError("n_mc must be >= 1");
  if (targets.k != s.k()) throw SpecError("target set and schedule disagree on k");
  std::vector<NoisedDraw> draws(n_mc);
  for (auto& d : draws) {
    d.segment = uniform_int(1, s.k(), rng);
    d.t = uniform_int(0, s.segment_end(d.segment) - 1, rng);
    d.target = &targets.target(d.segment);
    d.eps = standard_normal(den.weight_dim, rng);
  }
  return mean_loss(den, s, draws, emb, LossForm::LocalConsistency, scaling);
}

Eigen::VectorXd inference_update(const NoiseSchedule& s, const Eigen::VectorXd& x_t, int t,
                                 const Eigen::VectorXd& eps_hat, InferenceMode mode) {
  if (t < 0 || t >= s.T()) {
    throw SpecError("inference step " + std::to_string(t) + " outside [0, T)");
  }
  if (x_t.size() != eps_hat.size()) throw DimensionError("inference_update: dimension mismatch");
  if (mode == InferenceMode::Posterior) {
    const double a = s.alpha(t);
    const double ab = s.alpha_bar(t);
    return x_t / std::sqrt(a) - ((1.0 - a) / (std::sqrt(1.0 - ab) * std::sqrt(a))) * eps_hat;
  }
  const double ab_next = s.alpha_bar(t + 1);
  return (x_t - std::sqrt(1.0 - ab_next) * eps_hat) / std::sqrt(ab_next);
}

Eigen::VectorXd inference_step(const DenoiserState& den, const NoiseSchedule& s,
                               const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& emb,
                               InferenceMode mode) {
  return inference_update(s, x_t, t, predict_eps(den, x_t, t, emb), mode);
}

InferenceChain generate_chain(const DenoiserState& den, const NoiseSchedule& s,
                              const Eigen::VectorXd& x0, const Eigen::VectorXd& emb,
                              InferenceMode mode) {
  if (x0.size() != den.weight_dim) {
    throw DimensionError("chain start has dimension " + std::to_string(x0.size()) +
                         ", denoiser generates " + std::to_string(den.weight_dim));
  }
  InferenceChain chain;
  chain.states.reserve(s.T() + 1);
  chain.states.push_back(x0);
  for (int t = 0; t < s.T(); ++t) {
    Eigen::VectorXd next;
    try {
      next = inference_step(den, s, chain.states.back(), t, emb, mode);
    } catch (const NumericError& e) {
      throw NumericError("inference chain failed at step " + std::to_string(t) + ": " + e.what());
    }
    if (!next.allFinite()) {
      throw NumericError("non-finite state at inference step " + std::to_string(t + 1));
    }
    chain.states.push_back(std::move(next));
  }
  for (int i = 1; i <= s.k(); ++i) chain.readouts.push_back(chain.states[s.segment_end(i)]);
  return chain;
}

void export_chain_csv(const InferenceChain& chain, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "step,coordinate,value\n" << std::setprecision(17);
  for (std::size_t step = 0; step < chain.states.size(); ++step) {
    const auto& x = chain.states[step];
    for (Index c = 0; c < x.size(); ++c) out << step << ',' << c << ',' << x[c] << '\n';
  }
}

}  // namespace mcdi
