#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "designz/estfun.hpp"
#include "designz/finitepop.hpp"
#include "designz/zestim.hpp"

namespace designz {

enum class GKind { identity, log, logit };

/// Scale on which treatment effects are contrasted: tau_g = g(mean Y(1)) - g(mean Y(0)).
class GScale {
 public:
  GScale() = default;
  explicit GScale(GKind kind) : kind_(kind) {}
  static GScale parse(const std::string& text);

  GKind kind() const { return kind_; }
  std::string name() const;
  bool in_domain(double y) const;
  /// Throws DomainError outside the domain.
  double g(double y) const;
  double gdot(double y) const;

  friend bool operator==(const GScale&, const GScale&) = default;

 private:
  GKind kind_ = GKind::identity;
};

enum class EstimatorKind { model_based, model_imputed, model_assisted, adjusted_imputation, unadjusted };
/// "B", "I", "A", "AI", "unadjusted".
std::string estimator_label(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string& text);

struct AteResult {
  double tau_hat = 0.0;
  /// Estimated variance of sqrt(N) (tau_hat - tau_g).
  double variance_hat = 0.0;
  std::size_t n = 0;
  EstimatorKind kind = EstimatorKind::unadjusted;
  GScale g;
  std::vector<ZFit> fits;
  std::vector<std::string> warnings;

  double se() const;
  Interval ci(double alpha) const;
};

/// tau_hat +/- z_{1 - alpha/2} sqrt(variance_hat / N).
Interval ate_confidence_interval(const AteResult& r, double alpha);

/// Maximum-likelihood fit of the working GLM (scores of glm_score_estfun),
/// started from the arm means on the link scale.
ZFit fit_glm(const Dataset& d, const MeanSpec& spec, const SolveOptions& opts = {});

/// Maximum-likelihood negative-binomial size kappa (jointly with the mean parameters),
/// started from the Pearson moment estimate at Poisson-fitted means.
/// Returns kMaxKappa when the data show no overdispersion.
double estimate_negbin_kappa(const Dataset& d, bool interaction, const SolveOptions& opts = {});
inline constexpr double kMaxKappa = 1e8;

/// Model-based estimator E_N{g(h_1) - g(h_0)} with delta-method variance.
AteResult tau_model_based(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g);
/// g(E_N h_1) - g(E_N h_0) with delta-method variance.
AteResult tau_model_imputed(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g);

/// Y_i - h_{Z_i}(X_i) + E_N h_{Z_i}, given h_1 and h_0 evaluated at every unit.
Vector adjusted_outcomes(const Dataset& d, const Vector& h1, const Vector& h0);

/// Model-assisted estimator from adjustment values h_z(X_i) at all N units.
AteResult tau_model_assisted(const Dataset& d, const Vector& h1, const Vector& h0, const GScale& g,
                             EstimatorKind kind = EstimatorKind::model_assisted);
AteResult tau_model_assisted(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g);
AteResult tau_model_assisted(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const ArmLayout& layout,
                             const Vector& theta, const GScale& g);
/// Difference of arm means on the g-scale (model-assisted with h = 0).
AteResult tau_unadjusted(const Dataset& d, const GScale& g);

/// Squared-loss fit of the adjustment forms (default layout).
ZFit fit_optimal_adjustment(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const Vector& theta0,
                            const SolveOptions& opts = {});
ZFit fit_optimal_adjustment(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const SolveOptions& opts = {});

enum class FitMethod { mle, squared_loss };
std::string method_name(FitMethod m);
FitMethod parse_method(const std::string& text);

/// A working model fitted to one dataset, with its predictions at every unit.
struct FittedModel {
  ModelSpec model;
  FitMethod method = FitMethod::mle;
  /// Set for maximum-likelihood fits.
  std::optional<MeanSpec> spec;
  ZFit fit;
  Vector pred1;
  Vector pred0;
  /// Negative-binomial size used by the fit (0 otherwise).
  double kappa = 0.0;
};

/// Fits `model` by `method`. Maximum likelihood supports every family; squared loss
/// uses h = a + b'x for gaussian and h = c + exp(a + b'x) for poisson/negbin, arm-specific.
/// Throws ConvergenceError when the solver fails.
FittedModel fit_working_model(const Dataset& d, const ModelSpec& model, FitMethod method,
                              const SolveOptions& opts = {});

/// Memoizes fit_working_model on one dataset.
class FitCache {
 public:
  FitCache(const Dataset& d, SolveOptions opts = {}) : d_(d), opts_(opts) {}
  const FittedModel& get(const ModelSpec& model, FitMethod method);

 private:
  const Dataset& d_;
  SolveOptions opts_;
  std::map<std::string, FittedModel> fits_;
};

struct ImputationModel {
  ModelSpec model;
  FitMethod method = FitMethod::mle;
};

/// Two-step estimator: fit J imputation models, regress Y per arm on the 2J imputed
/// columns by least squares, then apply the model-assisted estimator.
AteResult adjusted_imputation(const Dataset& d, const std::vector<ImputationModel>& models, const GScale& g,
                              const SolveOptions& opts = {});
AteResult adjusted_imputation(FitCache& cache, const Dataset& d, const std::vector<ImputationModel>& models,
                              const GScale& g);

/// One configured ATE estimator.
struct AteRequest {
  EstimatorKind kind = EstimatorKind::unadjusted;
  ModelSpec model;
  FitMethod method = FitMethod::mle;
  GScale g;
  /// Adjusted imputation only.
  std::vector<ImputationModel> imputations;
};

AteResult run_estimator(const Dataset& d, const AteRequest& req, const SolveOptions& opts = {});
AteResult run_estimator(FitCache& cache, const Dataset& d, const AteRequest& req);

}  // namespace designz
