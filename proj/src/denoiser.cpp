#include "mcdi/denoiser.hpp"

#include <cmath>
#include <string>

#include "trajectory_format.hpp"

namespace mcdi {

Eigen::VectorXd timestep_embed(int t, int T, int dim) {
  if (dim < 2 || dim % 2 != 0) throw SpecError("timestep embedding dim must be even and >= 2");
  if (T < 1 || t < 0 || t > T) {
    throw SpecError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  }
  Eigen::VectorXd out(dim);
  for (int p = 0; p < dim / 2; ++p) {
    const double omega = std::pow(10000.0, -2.0 * p / dim) / T;
    out[2 * p] = std::sin(t * omega);
    out[2 * p + 1] = std::cos(t * omega);
  }
  return out;
}

DenoiserState init_denoiser(int D, int t_embed_dim, int E, const std::vector<int>& hidden,
                            int T, double init_std, Rng& rng) {
  if (D < 1 || E < 1) throw SpecError("denoiser needs D >= 1 and E >= 1");
  if (t_embed_dim < 2 || t_embed_dim % 2 != 0) {
    throw SpecError("timestep embedding dim must be even and >= 2");
  }
  if (T < 1) throw SpecError("denoiser horizon must be positive");
  DenoiserState den;
  den.weight_dim = D;
  den.t_embed_dim = t_embed_dim;
  den.task_embed_dim = E;
  den.horizon = T;
  den.spec.layer_sizes.push_back(D + t_embed_dim + E);
  den.spec.layer_sizes.insert(den.spec.layer_sizes.end(), hidden.begin(), hidden.end());
  den.spec.layer_sizes.push_back(D);
  den.spec.activation = Activation::Tanh;
  den.spec.output_head = OutputHead::Linear;
  den.phi = init_network(den.spec, init_std, rng);
  return den;
}

Eigen::MatrixXd denoiser_inputs(const DenoiserState& den, const Eigen::MatrixXd& x_rows,
                                const std::vector<int>& steps, const Eigen::VectorXd& emb) {
  if (x_rows.cols() != den.weight_dim) {
    throw DimensionError("noisy weights have width " + std::to_string(x_rows.cols()) +
                         ", denoiser expects " + std::to_string(den.weight_dim));
  }
  if (emb.size() != den.task_embed_dim) {
    throw DimensionError("task embedding has length " + std::to_string(emb.size()) +
                         ", denoiser expects " + std::to_string(den.task_embed_dim));
  }
  if (static_cast<Index>(steps.size()) != x_rows.rows()) {
    throw DimensionError("one timestep per input row required");
  }
  Eigen::MatrixXd in(x_rows.rows(), den.input_dim());
  in.leftCols(den.weight_dim) = x_rows;
  for (Index r = 0; r < x_rows.rows(); ++r) {
    in.row(r).segment(den.weight_dim, den.t_embed_dim) =
        timestep_embed(steps[r], den.horizon, den.t_embed_dim).transpose();
  }
  in.rightCols(den.task_embed_dim).rowwise() = emb.transpose();
  return in;
}

Eigen::VectorXd predict_eps(const DenoiserState& den, const Eigen::VectorXd& x_t, int t,
                            const Eigen::VectorXd& emb) {
  const Eigen::MatrixXd in = denoiser_inputs(den, x_t.transpose(), {t}, emb);
  return forward(den.spec, den.phi, in).row(0).transpose();
}

void save_denoiser(const DenoiserState& den, const std::filesystem::path& path) {
  Trajectory as_traj;
  as_traj.spec = den.spec;
  as_traj.M = 0;
  as_traj.thetas = {den.phi};
  io::Writer w;
  write_trajectory(w, as_traj);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(den.t_embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(den.task_embed_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(den.horizon));
  w.write_file(path);
}

DenoiserState load_denoiser(const std::filesystem::path& path) {
  io::Reader r(path);
  Trajectory as_traj = read_trajectory(r, OutputHead::Linear, 3 * sizeof(std::uint32_t));
  if (as_traj.M != 0) r.fail("M", "denoiser checkpoints hold a single weight vector");
  DenoiserState den;
  den.spec = as_traj.spec;
  den.phi = std::move(as_traj.thetas.front());
  den.t_embed_dim = static_cast<int>(r.get<std::uint32_t>("t_embed_dim"));
  den.task_embed_dim = static_cast<int>(r.get<std::uint32_t>("task_embed_dim"));
  den.horizon = static_cast<int>(r.get<std::uint32_t>("horizon"));
  den.weight_dim = den.spec.output_dim();
  if (den.input_dim() != den.spec.input_dim()) {
    r.fail("t_embed_dim", "embedding widths do not add up to the network input width");
  }
  return den;
}

}  // namespace mcdi
