#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "designz/finitepop.hpp"

namespace designz {

/// psi_z(y, x; theta) written into `out` (length dim; every entry is overwritten).
using ScoreFn = std::function<void(double y, ConstRow x, const Vector& theta, Eigen::Ref<Vector> out)>;
/// d psi_z / d theta written into `out` (dim x dim; every entry is overwritten).
using JacobianFn = std::function<void(double y, ConstRow x, const Vector& theta, Eigen::Ref<Matrix> out)>;
/// Loss l_z(y, x; theta) whose theta-gradient is psi_z.
using LossFn = std::function<double(double y, ConstRow x, const Vector& theta)>;

/// The Z-estimation contract: a pair of arm-specific estimating functions,
/// with optional analytic Jacobians and losses.
struct EstimatingFunction {
  std::size_t dim = 0;
  ScoreFn psi1;
  ScoreFn psi0;
  JacobianFn jac1;
  JacobianFn jac0;
  LossFn loss1;
  LossFn loss0;
  std::string name;

  bool has_jacobian() const { return static_cast<bool>(jac1) && static_cast<bool>(jac0); }
  bool has_loss() const { return static_cast<bool>(loss1) && static_cast<bool>(loss0); }
  const ScoreFn& psi(int arm) const { return arm == 1 ? psi1 : psi0; }
  const JacobianFn& jac(int arm) const { return arm == 1 ? jac1 : jac0; }
  const LossFn& loss(int arm) const { return arm == 1 ? loss1 : loss0; }
};

enum class FamilyKind { gaussian, binomial, poisson, negbin };

/// Linear predictors are clipped to [-kEtaClamp, kEtaClamp] before exp/logistic;
/// outside that band mean derivatives are treated as zero.
inline constexpr double kEtaClamp = 35.0;

/// Exponential-dispersion working family with its (log or canonical) link.
/// Scores are normalized so the residual y - mean enters with coefficient 1
/// (dispersion divided out).
class GlmFamily {
 public:
  static GlmFamily gaussian() { return GlmFamily(FamilyKind::gaussian, 0.0); }
  static GlmFamily binomial() { return GlmFamily(FamilyKind::binomial, 0.0); }
  static GlmFamily poisson() { return GlmFamily(FamilyKind::poisson, 0.0); }
  /// Negative binomial with log link and fixed size parameter kappa (Var = mu + mu^2 / kappa).
  static GlmFamily negbin(double kappa);

  FamilyKind kind() const { return kind_; }
  double kappa() const { return kappa_; }
  /// True when the link is canonical, i.e. g = (b')^{-1}.
  bool canonical() const { return kind_ != FamilyKind::negbin; }
  std::string name() const;

  /// Mean function b'(eta).
  double mean(double eta) const;
  /// d mean / d eta; zero outside the clamp band.
  double mean_derivative(double eta) const;
  /// Link g(mu) mapping a mean back to the linear-predictor scale.
  double link(double mu) const;
  /// Cumulant b(eta) of a canonical family.
  double cumulant(double eta) const;
  /// Minus log-density up to terms free of eta.
  double loss(double y, double eta) const;
  /// Working residual r(y, eta) = d(-loss)/d eta; psi = -r * (1, x).
  double residual(double y, double eta) const;
  /// d r / d eta.
  double residual_derivative(double y, double eta) const;

 private:
  GlmFamily(FamilyKind kind, double kappa) : kind_(kind), kappa_(kappa) {}
  FamilyKind kind_;
  double kappa_;
};

/// Arm-specific GLM mean h_z(x; theta) = b'(alpha_z + beta_z' x).
///
/// Parameter layout: theta = (alpha_1, alpha_0, beta_1, beta_0) with
/// interaction, (alpha_1, alpha_0, beta) without.
struct MeanSpec {
  GlmFamily family = GlmFamily::gaussian();
  bool interaction = true;
  std::size_t d = 0;

  std::size_t dim() const { return 2 + (interaction ? 2 : 1) * d; }
  std::size_t alpha_index(int arm) const { return arm == 1 ? 0 : 1; }
  std::size_t beta_offset(int arm) const { return 2 + ((interaction && arm == 0) ? d : 0); }
  double linear_predictor(int arm, ConstRow x, const Vector& theta) const;
};

/// h_arm(x; theta).
double glm_mean(const MeanSpec& spec, int arm, ConstRow x, const Vector& theta);
/// h_arm(X_i; theta) for every row of `x`.
Vector glm_predictions(const MeanSpec& spec, int arm, const CovariateMatrix& x, const Vector& theta);

/// Minus-log-likelihood scores of the working GLM with analytic Jacobians and losses.
EstimatingFunction glm_score_estfun(const MeanSpec& spec);

/// Vectors q_1, q_0 with q_z' psi_z = y - h_z and q_z' psi_{1-z} = 0 (canonical families only).
std::pair<Vector, Vector> canonical_q_vectors(const MeanSpec& spec, const Vector& theta);

/// Parsed model string `family[:interact][:kappa=<v>]`.
struct ModelSpec {
  FamilyKind family = FamilyKind::gaussian;
  bool interaction = false;
  std::optional<double> kappa;
};
ModelSpec parse_model_spec(const std::string& text);
std::string family_name(FamilyKind kind);
FamilyKind parse_family(const std::string& text);

/// Adjustment function h(x; phi) over its own local parameter block.
struct MeanForm {
  std::size_t dim = 0;
  bool has_intercept = false;
  std::string name;
  std::function<double(ConstRow x, std::span<const double> phi)> value;
  std::function<void(ConstRow x, std::span<const double> phi, Eigen::Ref<Vector> grad)> gradient;
  /// Optional; squared-loss Jacobians fall back to finite differences without it.
  std::function<void(ConstRow x, std::span<const double> phi, Eigen::Ref<Matrix> hess)> hessian;
};

/// h(x) = a + b' x, phi = (a, b).
MeanForm linear_form(std::size_t d);
/// h(x) = c + exp(a + b' x), phi = (c, a, b); without the additive intercept phi = (a, b).
MeanForm exp_form(std::size_t d, bool additive_intercept = true);

struct ParamSlice {
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Where each arm's adjustment parameters live inside theta.
struct ArmLayout {
  ParamSlice arm1;
  ParamSlice arm0;
  std::size_t dim = 0;
};

/// theta = (phi_1, phi_0).
ArmLayout default_layout(const MeanForm& h1, const MeanForm& h0);

/// h(X_i; phi) for every row, where phi is the slice of theta.
Vector form_predictions(const MeanForm& h, const ParamSlice& slice, const CovariateMatrix& x, const Vector& theta);

/// Squared losses l_z = (y - h_z)^2 and their gradients psi_z = -2 (y - h_z) dh_z/dtheta.
/// The two forms must occupy disjoint slices and each carry an intercept.
EstimatingFunction squared_loss_estfun(const MeanForm& h1, const MeanForm& h0, const ArmLayout& layout);
EstimatingFunction squared_loss_estfun(const MeanForm& h1, const MeanForm& h0);

}  // namespace designz
