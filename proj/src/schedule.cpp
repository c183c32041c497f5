#include "mcdi/schedule.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace mcdi {

NoiseSchedule::NoiseSchedule(int k, std::vector<double> alphas)
    : k_(k), alphas_(std::move(alphas)) {
  const int T = static_cast<int>(alphas_.size());
  if (T < 1) throw SpecError("noise schedule needs at least one step");
  if (k_ < 1) throw SpecError("segment number k must be positive");
  if (T % k_ != 0) {
    throw SpecError("segment number k=" + std::to_string(k_) +
                    " does not divide T=" + std::to_string(T));
  }
  for (int j = 0; j < T; ++j) {
    if (!(alphas_[j] > 0.0 && alphas_[j] < 1.0)) {
      throw SpecError("alpha_" + std::to_string(j) + " outside (0, 1)");
    }
    if (j > 0 && alphas_[j] < alphas_[j - 1]) {
      throw SpecError("alpha schedule must be nondecreasing");
    }
  }
  local_.resize(k_);
  for (int i = 1; i <= k_; ++i) {
    const int end = segment_end(i);
    std::vector<double>& table = local_[i - 1];
    table.assign(end + 1, 1.0);
    for (int t = end - 1; t >= 0; --t) table[t] = alphas_[t] * table[t + 1];
  }
}

int NoiseSchedule::segment_end(int i) const {
  if (i < 1 || i > k_) {
    throw SpecError("segment index " + std::to_string(i) + " outside (0, " +
                    std::to_string(k_) + "]");
  }
  return i * segment_length();
}

double NoiseSchedule::alpha(int j) const {
  if (j < 0 || j >= T()) throw SpecError("alpha index out of range");
  return alphas_[j];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T()) {
    throw SpecError("alpha_bar step " + std::to_string(t) + " outside [0, T]");
  }
  return local_[k_ - 1][t];
}

double NoiseSchedule::alpha_bar_local(int t, int i) const {
  const int end = segment_end(i);
  if (t < 0 || t > end) {
    throw SpecError("alpha_bar_local step " + std::to_string(t) + " outside [0, " +
                    std::to_string(end) + "]");
  }
  return local_[i - 1][t];
}

NoiseSchedule linear_alpha_schedule(int T, int k, double alpha_min, double alpha_max) {
  if (T < 1) throw SpecError("T must be positive");
  if (!(alpha_min > 0.0 && alpha_min < 1.0 && alpha_max > 0.0 && alpha_max < 1.0)) {
    throw SpecError("alpha bounds must lie in (0, 1)");
  }
  if (alpha_min > alpha_max) throw SpecError("alpha_min exceeds alpha_max");
  std::vector<double> alphas(T);
  for (int j = 0; j < T; ++j) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(j) / (T - 1);
    alphas[j] = alpha_min + frac * (alpha_max - alpha_min);
  }
  return NoiseSchedule(k, std::move(alphas));
}

Eigen::VectorXd forward_noise(const NoiseSchedule& s, const Eigen::VectorXd& theta_target,
                              int t, int i, const Eigen::VectorXd& eps) {
  if (theta_target.size() != eps.size()) {
    throw DimensionError("forward_noise: target and noise dimensions differ");
  }
  const double ab = s.alpha_bar_local(t, i);
  return std::sqrt(ab) * theta_target + std::sqrt(1.0 - ab) * eps;
}

}  // namespace mcdi
