#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "mcdi/denoiser.hpp"
#include "mcdi/nn.hpp"
#include "mcdi/schedule.hpp"

namespace mcdi {

/// L(theta) = 1/2 (theta - theta*)^T diag(eigenvalues) (theta - theta*),
/// with eigenvalues in [mu, l].
struct QuadraticProblem {
  Eigen::VectorXd eigenvalues;
  double mu = 1.0;
  double l = 1.0;
  Eigen::VectorXd theta_star;
  Eigen::VectorXd theta_0;

  int n() const { return static_cast<int>(eigenvalues.size()); }
  double loss(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const;
  /// Initial suboptimality L(theta_0) - L(theta*).
  double psi() const { return loss(theta_0); }
  double lambda_max() const { return eigenvalues.maxCoeff(); }
};

void validate(const QuadraticProblem& p);

/// Random instance of dimension n: mu ~ U[0.1, 1], l = mu * U[1, 10], the
/// remaining eigenvalues uniform in [mu, l], theta* ~ N(0, I),
/// theta_0 - theta* ~ N(0, I).
QuadraticProblem random_quadratic(int n, Rng& rng);

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double margin = 0.0;  // rhs - lhs
  // Instance parameters, for logging.
  int n = 0;
  int M = 0;
  double c = 0.0;
};

BoundReport make_report(double lhs, double rhs);

/// Exact gradient descent with step 1/l for M steps.
Eigen::VectorXd gradient_descent(const QuadraticProblem& p, int M);

/// ||theta_M - theta*||^2 <= (2 psi / mu) (1 - mu/l)^M.
BoundReport lemma1_verify(const QuadraticProblem& p, int M);

/// L(theta_hat) - L(theta*) <= (lambda/2) [c + (2 psi / mu)(1 - mu/l)^M] with
/// theta_hat = theta_M + r, r uniform in direction with ||r|| = sqrt(c) * U[0,1].
BoundReport theorem2_verify(const QuadraticProblem& p, double c, int M, Rng& rng);

/// Same bound for a caller-chosen reconstruction error r (requires ||r||^2 <= c).
BoundReport theorem2_verify(const QuadraticProblem& p, double c, int M,
                            const Eigen::VectorXd& r);

/// Sweeps over random instances with n in [1, 20] and M in [0, 50]; the
/// theorem sweep also draws c ~ U[0, 1]. `rhs_scale` multiplies every
/// right-hand side (values < 1 inject a faulty bound).
std::vector<BoundReport> lemma1_sweep(int count, std::uint64_t seed, double rhs_scale = 1.0);
std::vector<BoundReport> theorem2_sweep(int count, std::uint64_t seed, double rhs_scale = 1.0);

/// CSV columns: instance,n,M,c,lhs,rhs,margin,holds.
void export_bound_csv(const std::vector<BoundReport>& reports, const std::filesystem::path& path);

struct Prop1Report {
  double max_loss_rel_diff = 0.0;
  double max_grad_rel_diff = 0.0;
  double max_coeff_diff = 0.0;
};

/// Compares local and vanilla losses (and their phi-gradients) on random
/// (phi, theta, t, eps, emb) draws, plus abar^1_t against abar_t for all t.
/// Requires s.k() == 1.
Prop1Report prop1_check(const NoiseSchedule& s, const DenoiserState& den, int n_trials, Rng& rng);

using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Top Hessian eigenvalue by power iteration on finite-difference
/// Hessian-vector products Hv ~ [g(w + h v) - g(w - h v)] / 2h,
/// h = 1e-4 (1 + ||w||). Returns the final Rayleigh quotient.
double hessian_max_eig(const GradientFn& grad, const Eigen::VectorXd& w, int iters, Rng& rng);

double hessian_max_eig(const NetworkSpec& spec, const WeightVector& w, const Batch& batch,
                       int iters, Rng& rng);

}  // namespace mcdi
