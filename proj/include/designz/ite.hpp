#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "designz/estfun.hpp"
#include "designz/finitepop.hpp"
#include "designz/zestim.hpp"

namespace designz {

using ScalarFn = std::function<double(ConstRow x, const Vector& theta)>;
using GradFn = std::function<void(ConstRow x, const Vector& theta, Eigen::Ref<Vector> out)>;
using HessFn = std::function<void(ConstRow x, const Vector& theta, Eigen::Ref<Matrix> out)>;

/// Exponential-dispersion working model for individual effects:
/// log f(tau | x) = {tau v(x; theta) - u(x; theta)} / a(phi) + c(tau, x, phi).
/// Only v and u enter estimation.
struct EdfTauModel {
  std::size_t dim = 0;
  std::string tag;
  ScalarFn v;
  GradFn vdot;
  ScalarFn u;
  GradFn udot;
  /// Optional second derivatives; when both are set the estimating function carries Jacobians.
  HessFn vhess;
  HessFn uhess;
  /// E(tau | x; theta) = du/dv, the fitted effect.
  ScalarFn mean;
};

/// v = x~'theta, u = (x~'theta)^2 / 2 with x~ = (1, x); the root is least squares of tau on x~.
EdfTauModel normal_linear_model(std::size_t d);
/// v = x~'beta, u = log(exp(x~'beta) + exp(-x~'beta) + gamma); effects in {-1, 0, 1}.
EdfTauModel ternary_model(std::size_t d, double gamma = 2.0);

/// Z_i Y_i / r1 - (1 - Z_i) Y_i / r0.
Vector pseudo_effects(const Dataset& d);
/// h1_i - h0_i + Z_i (Y_i - h1_i) / r1 - (1 - Z_i)(Y_i - h0_i) / r0 for predetermined h.
Vector pseudo_effects_adjusted(const Dataset& d, const Vector& h1, const Vector& h0);
Vector pseudo_effects_adjusted(const Dataset& d, const MeanSpec& spec, const Vector& theta_fixed);

/// psi_1 = y / r1 vdot - udot, psi_0 = -y / r0 vdot - udot.
EstimatingFunction ite_estfun(const EdfTauModel& m, double r1);

struct IteFit {
  std::string kind;
  ZFit fit;
  /// E(tau | X_i; theta_hat) for every unit.
  Vector fitted;

  const Vector& theta() const { return fit.theta_hat; }
  const Matrix& sigma() const { return fit.sigma_hat; }
};

/// Closed-form least squares of the pseudo effects on (1, design), certified as the
/// root of the estimating equation; sandwich covariance attached.
IteFit fit_normal_linear(const Dataset& d);
IteFit fit_normal_linear(const Dataset& d, const CovariateMatrix& design);
/// Closed-form coefficients only.
Vector normal_linear_closed_form(const Dataset& d);

/// Ternary working model for binary outcomes; throws ConvergenceError when the solver fails.
IteFit fit_ternary(const Dataset& d, double gamma = 2.0, const SolveOptions& opts = {});

std::string ite_fit_to_json(const IteFit& f);

enum class DecompositionMode { oracle, pseudo };

struct VarianceDecomposition {
  double var_tau = 0.0;
  double var_u = 0.0;
  double var_resid = 0.0;
  /// 1 - sum (tau - u)^2 / sum tau^2; 1 when both sums vanish, 0 when only the denominator does.
  double r2 = 0.0;
  /// Pseudo mode: var_tau overstates the variance of the true effects.
  bool diagnostic_only = false;
};

VarianceDecomposition effect_variance_decomposition(const Vector& tau, const Vector& u,
                                                    DecompositionMode mode = DecompositionMode::oracle);

/// Fitted values of the least-squares projection of `target` on (1, design).
Vector linear_projection(const Vector& target, const CovariateMatrix& design);

}  // namespace designz
