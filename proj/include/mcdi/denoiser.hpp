#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "mcdi/nn.hpp"
#include "mcdi/rng.hpp"

namespace mcdi {

/// Conditional noise predictor eps_phi(x_t, t, emb): a dense tanh network over
/// [x_t | timestep features | task embedding] with a linear D-wide output.
struct DenoiserState {
  NetworkSpec spec;
  WeightVector phi;
  int weight_dim = 0;     // D
  int t_embed_dim = 0;
  int task_embed_dim = 0; // E
  int horizon = 1;        // T used by the timestep features

  int input_dim() const { return weight_dim + t_embed_dim + task_embed_dim; }
};

/// Sinusoidal features [sin(t w_0), cos(t w_0), sin(t w_1), ...] with
/// w_p = (1/T) * 10000^(-2p/dim).
Eigen::VectorXd timestep_embed(int t, int T, int dim);

DenoiserState init_denoiser(int D, int t_embed_dim, int E, const std::vector<int>& hidden,
                            int T, double init_std, Rng& rng);

/// One input row per (x_t, t) pair, all conditioned on the same embedding.
Eigen::MatrixXd denoiser_inputs(const DenoiserState& den, const Eigen::MatrixXd& x_rows,
                                const std::vector<int>& steps, const Eigen::VectorXd& emb);

Eigen::VectorXd predict_eps(const DenoiserState& den, const Eigen::VectorXd& x_t, int t,
                            const Eigen::VectorXd& emb);

// Checkpoint: the trajectory layout with M = 0 holding phi, followed by
// u32 t_embed_dim | u32 task_embed_dim | u32 horizon.
void save_denoiser(const DenoiserState& den, const std::filesystem::path& path);
DenoiserState load_denoiser(const std::filesystem::path& path);

}  // namespace mcdi
