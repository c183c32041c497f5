#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mcdi/denoiser.hpp"
#include "mcdi/schedule.hpp"
#include "mcdi/weightprep.hpp"

namespace mcdi {

struct LossSample {
  double value = 0.0;
  WeightVector grad_phi;
};

/// Which noising coefficients a training sample uses.
///  Vanilla:          x_t = sqrt(abar_t) theta + sqrt(1-abar_t) eps,
///                    L = ||eps_hat - eps||^2
///  LocalConsistency: x_t = sqrt(abar_t^i) theta + sqrt(1-abar_t^i) eps,
///                    L = ||sqrt(1-abar_t^i) eps_hat - sqrt(1-abar_t) eps||^2
enum class LossForm : std::uint8_t { Vanilla, LocalConsistency };

/// How the local consistency residual is weighted across timesteps.
/// `Verbatim` is the residual above. `Normalized` divides it by the common
/// factor (1 - abar_t), i.e. ||sqrt((1-abar_t^i)/(1-abar_t)) eps_hat - eps||^2,
/// which has the same per-step minimizer and coincides exactly with the
/// vanilla loss when k = 1.
enum class LocalScaling : std::uint8_t { Normalized, Verbatim };

/// One Monte-Carlo draw of the diffusion objective.
struct NoisedDraw {
  const WeightVector* target = nullptr;
  int segment = 1;  // i in (0, k]
  int t = 0;
  Eigen::VectorXd eps;
};

/// Per-row coefficients of one draw.
struct DrawCoefficients {
  double signal = 0.0;  // multiplies theta in x_t
  double noise = 0.0;   // multiplies eps in x_t
  double model = 1.0;   // multiplies eps_hat in the residual
  double target = 1.0;  // multiplies eps in the residual
};

DrawCoefficients draw_coefficients(const NoiseSchedule& s, LossForm form, int segment,
                                   int t, LocalScaling scaling = LocalScaling::Normalized);

/// Residual loss for an externally supplied prediction eps_hat.
double loss_value(const NoiseSchedule& s, LossForm form, int segment, int t,
                  const Eigen::VectorXd& eps, const Eigen::VectorXd& eps_hat,
                  LocalScaling scaling = LocalScaling::Normalized);

/// Mean loss over the draws and its exact gradient with respect to phi.
LossSample mean_loss(const DenoiserState& den, const NoiseSchedule& s,
                     std::span<const NoisedDraw> draws, const Eigen::VectorXd& emb,
                     LossForm form, LocalScaling scaling = LocalScaling::Normalized);

LossSample vanilla_loss_sample(const DenoiserState& den, const NoiseSchedule& s,
                               const WeightVector& theta_target, int t,
                               const Eigen::VectorXd& eps, const Eigen::VectorXd& emb);

LossSample local_loss_sample(const DenoiserState& den, const NoiseSchedule& s,
                             const WeightVector& theta_local, int i, int t,
                             const Eigen::VectorXd& eps, const Eigen::VectorXd& emb,
                             LocalScaling scaling = LocalScaling::Normalized);

/// Monte-Carlo estimate with i ~ U{1..k}, t ~ U{0..i*T/k-1}, eps ~ N(0, I).
LossSample expected_local_loss(const DenoiserState& den, const NoiseSchedule& s,
                               const LocalTargetSet& targets, const Eigen::VectorXd& emb,
                               int n_mc, Rng& rng,
                               LocalScaling scaling = LocalScaling::Normalized);

enum class InferenceMode : std::uint8_t {
  Posterior,  // x' = x/sqrt(a_t) - (1-a_t)/(sqrt(1-abar_t) sqrt(a_t)) eps_hat
  Eq2,        // x' = (x - sqrt(1-abar_{t+1}) eps_hat) / sqrt(abar_{t+1})
};

/// Deterministic reverse update for a given prediction.
Eigen::VectorXd inference_update(const NoiseSchedule& s, const Eigen::VectorXd& x_t, int t,
                                 const Eigen::VectorXd& eps_hat, InferenceMode mode);

Eigen::VectorXd inference_step(const DenoiserState& den, const NoiseSchedule& s,
                               const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& emb,
                               InferenceMode mode);

struct InferenceChain {
  std::vector<Eigen::VectorXd> states;    // x_0 .. x_T
  std::vector<Eigen::VectorXd> readouts;  // readouts[i-1] = x_{i*T/k}

  const Eigen::VectorXd& final_state() const { return states.back(); }
};

InferenceChain generate_chain(const DenoiserState& den, const NoiseSchedule& s,
                              const Eigen::VectorXd& x0, const Eigen::VectorXd& emb,
                              InferenceMode mode);

/// CSV with columns step,coordinate,value.
void export_chain_csv(const InferenceChain& chain, const std::filesystem::path& path);

}  // namespace mcdi
