#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "designz/estfun.hpp"
#include "designz/finitepop.hpp"

namespace designz {

struct SolveOptions {
  /// Convergence threshold on max_k |Psi_k(theta)|.
  double tol = 1e-10;
  int max_iter = 100;
  /// Backtracking line search; false takes full Newton steps.
  bool damping = true;
  /// A converged iterate must also have Newton step <= step_tol * (1 + |theta|_inf).
  double step_tol = 1e-6;
  /// Compute the sandwich covariance of a converged fit.
  bool with_sandwich = true;
};

struct ZFit {
  Vector theta_hat;
  bool converged = false;
  int iterations = 0;
  double psi_norm = std::numeric_limits<double>::infinity();
  Matrix jac_at_root;
  /// Empty when not converged or when the sandwich could not be formed.
  Matrix sigma_hat;
  std::size_t n = 0;
  std::string diagnostic;

  bool has_sigma() const { return sigma_hat.size() > 0; }
};

/// r1 E^1 psi_1 + r0 E^0 psi_0 = N^{-1} sum_i psi_{Z_i}(Y_i, X_i; theta).
Vector empirical_psi(const Dataset& d, const EstimatingFunction& f, const Vector& theta);
/// d Psi / d theta: analytic when f carries Jacobians, central differences otherwise.
Matrix empirical_jacobian(const Dataset& d, const EstimatingFunction& f, const Vector& theta);
/// Central-difference Jacobian of empirical_psi.
Matrix numeric_jacobian(const Dataset& d, const EstimatingFunction& f, const Vector& theta);
/// r1 E^1 l_1 + r0 E^0 l_0; requires losses.
double empirical_risk(const Dataset& d, const EstimatingFunction& f, const Vector& theta);
/// r1 E_N psi_1(Y_i(1)) + r0 E_N psi_0(Y_i(0)) over the whole population.
Vector population_psi(const PotentialTable& pot, const EstimatingFunction& f, const Vector& theta, double r1);

/// Damped Newton root finder for empirical_psi. Never throws on numerical failure;
/// check `converged` and `diagnostic`.
ZFit solve(const Dataset& d, const EstimatingFunction& f, const Vector& theta0, const SolveOptions& opts = {});

/// J^{-1} [r0 Cov^1 psi_1 + r1 Cov^0 psi_0] J^{-T}, symmetrized.
Matrix sandwich(const Dataset& d, const EstimatingFunction& f, const ZFit& fit);

struct Interval {
  double low = 0.0;
  double high = 0.0;
  bool contains(double v) const { return low <= v && v <= high; }
  double width() const { return high - low; }
};

struct WaldSet {
  Vector estimate;
  /// v' Sigma v / N.
  Matrix cov;
  double chi2_crit = 0.0;
  double alpha = 0.05;
  std::vector<Interval> intervals;

  bool contains(const Vector& omega) const;
};

WaldSet wald_set(const ZFit& fit, const Matrix& v, double alpha);

double normal_quantile(double p);
double chi2_quantile(std::size_t dof, double p);

/// {"theta": [...], "sigma": [[...]], "converged": b, "iterations": k, "psi_norm": x}
std::string zfit_to_json(const ZFit& fit);

}  // namespace designz
