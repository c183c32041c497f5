#pragma once

#include <vector>

#include <Eigen/Core>

#include "mcdi/nn.hpp"

namespace mcdi {

/// Per-step factors alpha_0..alpha_{T-1} over a horizon of T steps split into
/// k equal segments, together with the cumulative products
///
///   alpha_bar(t)          = prod_{j=t}^{T-1}       alpha_j
///   alpha_bar_local(t, i) = prod_{j=t}^{i*T/k - 1} alpha_j
///
/// Step indices run from noise (t = 0) toward data (t = T). Immutable once
/// constructed.
class NoiseSchedule {
 public:
  NoiseSchedule(int k, std::vector<double> alphas);

  int T() const { return static_cast<int>(alphas_.size()); }
  int k() const { return k_; }
  int segment_length() const { return T() / k_; }
  /// Step index at which segment i ends, i * T / k.
  int segment_end(int i) const;

  double alpha(int j) const;
  const std::vector<double>& alphas() const { return alphas_; }

  double alpha_bar(int t) const;
  double alpha_bar_local(int t, int i) const;

 private:
  int k_;
  std::vector<double> alphas_;
  // local_[i-1][t] for t in [0, i*T/k]; local_[k-1] doubles as the global table.
  std::vector<std::vector<double>> local_;
};

/// alpha_j linearly interpolated from alpha_min (j = 0) to alpha_max (j = T-1).
NoiseSchedule linear_alpha_schedule(int T, int k, double alpha_min, double alpha_max);

/// sqrt(abar_local(t,i)) * theta + sqrt(1 - abar_local(t,i)) * eps, for
/// t in [0, i*T/k].
Eigen::VectorXd forward_noise(const NoiseSchedule& s, const Eigen::VectorXd& theta_target,
                              int t, int i, const Eigen::VectorXd& eps);

}  // namespace mcdi
