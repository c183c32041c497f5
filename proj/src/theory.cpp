#include "mcdi/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

#include "mcdi/diffusion.hpp"

namespace mcdi {

double QuadraticProblem::loss(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd e = theta - theta_star;
  return 0.5 * e.dot(eigenvalues.cwiseProduct(e));
}

Eigen::VectorXd QuadraticProblem::grad(const Eigen::VectorXd& theta) const {
  return eigenvalues.cwiseProduct(theta - theta_star);
}

void validate(const QuadraticProblem& p) {
  if (p.n() < 1) throw SpecError("quadratic problem needs n >= 1");
  if (!(p.mu > 0) || p.l < p.mu) throw SpecError("need 0 < mu <= l");
  if (p.eigenvalues.minCoeff() < p.mu || p.eigenvalues.maxCoeff() > p.l) {
    throw SpecError("eigenvalues must lie in [mu, l]");
  }
  if (p.theta_star.size() != p.n() || p.theta_0.size() != p.n()) {
    throw DimensionError("quadratic problem vectors must have dimension n");
  }
}

QuadraticProblem random_quadratic(int n, Rng& rng) {
  if (n < 1) throw SpecError("quadratic problem needs n >= 1");
  QuadraticProblem p;
  p.mu = uniform_real(0.1, 1.0, rng);
  p.l = p.mu * uniform_real(1.0, 10.0, rng);
  p.eigenvalues.resize(n);
  for (int j = 0; j < n; ++j) p.eigenvalues[j] = uniform_real(p.mu, p.l, rng);
  p.eigenvalues[0] = p.mu;
  p.eigenvalues[n - 1] = p.l;
  p.theta_star = standard_normal(n, rng);
  p.theta_0 = p.theta_star + standard_normal(n, rng);
  return p;
}

BoundReport make_report(double lhs, double rhs) {
  BoundReport r;
  r.lhs = lhs;
  r.rhs = rhs;
  r.margin = rhs - lhs;
  r.holds = lhs <= rhs + 1e-12;
  return r;
}

Eigen::VectorXd gradient_descent(const QuadraticProblem& p, int M) {
  Eigen::VectorXd theta = p.theta_0;
  for (int step = 0; step < M; ++step) theta -= p.grad(theta) / p.l;
  return theta;
}

namespace {

double contraction_term(const QuadraticProblem& p, int M) {
  return 2.0 * p.psi() / p.mu * std::pow(1.0 - p.mu / p.l, M);
}

}  // namespace

BoundReport lemma1_verify(const QuadraticProblem& p, int M) {
  validate(p);
  if (M < 0) throw SpecError("M must be nonnegative");
  const Eigen::VectorXd theta_M = gradient_descent(p, M);
  BoundReport r = make_report((theta_M - p.theta_star).squaredNorm(), contraction_term(p, M));
  r.n = p.n();
  r.M = M;
  return r;
}

BoundReport theorem2_verify(const QuadraticProblem& p, double c, int M,
                            const Eigen::VectorXd& r) {
  validate(p);
  if (c < 0) throw SpecError("reconstruction bound c must be nonnegative");
  if (r.size() != p.n()) throw DimensionError("reconstruction error has wrong dimension");
  if (r.squaredNorm() > c * (1.0 + 1e-12)) {
    throw SpecError("reconstruction error exceeds the bound c");
  }
  const Eigen::VectorXd theta_hat = gradient_descent(p, M) + r;
  const double lhs = p.loss(theta_hat) - p.loss(p.theta_star);
  const double rhs = 0.5 * p.lambda_max() * (c + contraction_term(p, M));
  BoundReport rep = make_report(lhs, rhs);
  rep.n = p.n();
  rep.M = M;
  rep.c = c;
  return rep;
}

BoundReport theorem2_verify(const QuadraticProblem& p, double c, int M, Rng& rng) {
  if (c < 0) throw SpecError("reconstruction bound c must be nonnegative");
  Eigen::VectorXd dir = standard_normal(p.n(), rng);
  dir.normalize();
  const double radius = std::sqrt(c) * uniform_real(0.0, 1.0, rng);
  return theorem2_verify(p, c, M, Eigen::VectorXd(radius * dir));
}

namespace {

BoundReport rescale(BoundReport r, double rhs_scale) {
  BoundReport out = make_report(r.lhs, r.rhs * rhs_scale);
  out.n = r.n;
  out.M = r.M;
  out.c = r.c;
  return out;
}

}  // namespace

std::vector<BoundReport> lemma1_sweep(int count, std::uint64_t seed, double rhs_scale) {
  Rng rng(seed);
  std::vector<BoundReport> out;
  for (int i = 0; i < count; ++i) {
    const int n = uniform_int(1, 20, rng);
    const int M = uniform_int(0, 50, rng);
    const QuadraticProblem p = random_quadratic(n, rng);
    out.push_back(rescale(lemma1_verify(p, M), rhs_scale));
  }
  return out;
}

std::vector<BoundReport> theorem2_sweep(int count, std::uint64_t seed, double rhs_scale) {
  Rng rng(seed);
  std::vector<BoundReport> out;
  for (int i = 0; i < count; ++i) {
    const int n = uniform_int(1, 20, rng);
    const int M = uniform_int(0, 50, rng);
    const double c = uniform_real(0.0, 1.0, rng);
    const QuadraticProblem p = random_quadratic(n, rng);
    out.push_back(rescale(theorem2_verify(p, c, M, rng), rhs_scale));
  }
  return out;
}

void export_bound_csv(const std::vector<BoundReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "instance,n,M,c,lhs,rhs,margin,holds\n" << std::setprecision(17);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << i << ',' << r.n << ',' << r.M << ',' << r.c << ',' << r.lhs << ',' << r.rhs << ','
        << r.margin << ',' << (r.holds ? 1 : 0) << '\n';
  }
}

Prop1Report prop1_check(const NoiseSchedule& s, const DenoiserState& den, int n_trials, Rng& rng) {
  if (s.k() != 1) throw SpecError("prop1_check requires a schedule with k = 1");
  Prop1Report rep;
  for (int t = 0; t <= s.T(); ++t) {
    rep.max_coeff_diff =
        std::max(rep.max_coeff_diff, std::abs(s.alpha_bar_local(t, 1) - s.alpha_bar(t)));
  }
  DenoiserState trial = den;
  for (int n = 0; n < n_trials; ++n) {
    trial.phi = 0.3 * standard_normal(den.phi.size(), rng);
    const Eigen::VectorXd theta = standard_normal(den.weight_dim, rng);
    const Eigen::VectorXd eps = standard_normal(den.weight_dim, rng);
    const Eigen::VectorXd emb = standard_normal(den.task_embed_dim, rng);
    const int t = uniform_int(0, s.T() - 1, rng);
    const LossSample local = local_loss_sample(trial, s, theta, 1, t, eps, emb);
    const LossSample vanilla = vanilla_loss_sample(trial, s, theta, t, eps, emb);
    rep.max_loss_rel_diff =
        std::max(rep.max_loss_rel_diff,
                 std::abs(local.value - vanilla.value) / std::max(std::abs(vanilla.value), 1e-300));
    rep.max_grad_rel_diff = std::max(
        rep.max_grad_rel_diff,
        (local.grad_phi - vanilla.grad_phi).norm() / std::max(vanilla.grad_phi.norm(), 1e-300));
  }
  return rep;
}

double hessian_max_eig(const GradientFn& grad, const Eigen::VectorXd& w, int iters, Rng& rng) {
  if (iters < 1) throw SpecError("hessian_max_eig needs iters >= 1");
  const double h = 1e-4 * (1.0 + w.norm());
  auto hvp = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return (grad(w + h * v) - grad(w - h * v)) / (2.0 * h);
  };

  for (int restart = 0; restart <= 3; ++restart) {
    Eigen::VectorXd v = standard_normal(w.size(), rng);
    v.normalize();
    bool broke_down = false;
    for (int it = 0; it < iters; ++it) {
      const Eigen::VectorXd hv = hvp(v);
      const double norm = hv.norm();
      if (!(norm > 1e-300) || !std::isfinite(norm)) {
        broke_down = true;
        break;
      }
      v = hv / norm;
    }
    if (!broke_down) return v.dot(hvp(v));
  }
  throw NumericError("power iteration broke down after 3 restarts");
}

double hessian_max_eig(const NetworkSpec& spec, const WeightVector& w, const Batch& batch,
                       int iters, Rng& rng) {
  return hessian_max_eig(
      [&](const Eigen::VectorXd& p) { return task_loss_grad(spec, p, batch).grad; }, w, iters,
      rng);
}

}  // namespace mcdi
