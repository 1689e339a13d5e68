#include "designz/ate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "designz/errors.hpp"

namespace designz {

GScale GScale::parse(const std::string& text) {
  if (text == "identity" || text == "id") return GScale(GKind::identity);
  if (text == "log") return GScale(GKind::log);
  if (text == "logit") return GScale(GKind::logit);
  throw ArgumentError("unknown g-scale '" + text + "' (expected identity, log or logit)");
}

std::string GScale::name() const {
  switch (kind_) {
    case GKind::identity:
      return "identity";
    case GKind::log:
      return "log";
    case GKind::logit:
      return "logit";
  }
  return "?";
}

bool GScale::in_domain(double y) const {
  switch (kind_) {
    case GKind::identity:
      return std::isfinite(y);
    case GKind::log:
      return y > 0.0 && std::isfinite(y);
    case GKind::logit:
      return y > 0.0 && y < 1.0;
  }
  return false;
}

double GScale::g(double y) const {
  if (!in_domain(y)) {
    std::ostringstream msg;
    msg << "g = " << name() << " is undefined at " << y;
    throw DomainError(msg.str());
  }
  switch (kind_) {
    case GKind::identity:
      return y;
    case GKind::log:
      return std::log(y);
    case GKind::logit:
      return std::log(y / (1.0 - y));
  }
  return y;
}

double GScale::gdot(double y) const {
  if (!in_domain(y)) {
    std::ostringstream msg;
    msg << "g = " << name() << " is undefined at " << y;
    throw DomainError(msg.str());
  }
  switch (kind_) {
    case GKind::identity:
      return 1.0;
    case GKind::log:
      return 1.0 / y;
    case GKind::logit:
      return 1.0 / (y * (1.0 - y));
  }
  return 1.0;
}

std::string estimator_label(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::model_based:
      return "B";
    case EstimatorKind::model_imputed:
      return "I";
    case EstimatorKind::model_assisted:
      return "A";
    case EstimatorKind::adjusted_imputation:
      return "AI";
    case EstimatorKind::unadjusted:
      return "unadjusted";
  }
  return "?";
}

EstimatorKind parse_estimator_kind(const std::string& text) {
  if (text == "B" || text == "b" || text == "mb" || text == "model-based") return EstimatorKind::model_based;
  if (text == "I" || text == "i" || text == "mi" || text == "model-imputed") return EstimatorKind::model_imputed;
  if (text == "A" || text == "a" || text == "ma" || text == "model-assisted") return EstimatorKind::model_assisted;
  if (text == "AI" || text == "ai" || text == "adjusted-imputation") return EstimatorKind::adjusted_imputation;
  if (text == "unadjusted" || text == "dim") return EstimatorKind::unadjusted;
  throw ArgumentError("unknown estimator '" + text + "' (expected B, I, A, AI or unadjusted)");
}

double AteResult::se() const { return n ? std::sqrt(std::max(variance_hat, 0.0) / static_cast<double>(n)) : 0.0; }

Interval AteResult::ci(double alpha) const { return ate_confidence_interval(*this, alpha); }

Interval ate_confidence_interval(const AteResult& r, double alpha) {
  const double half = normal_quantile(1.0 - alpha / 2.0) * r.se();
  return {r.tau_hat - half, r.tau_hat + half};
}

namespace {

void require_sigma(const ZFit& fit, const char* who) {
  if (!fit.converged) throw ConvergenceError(std::string(who) + ": working-model fit did not converge: " + fit.diagnostic);
  if (!fit.has_sigma()) throw SingularMatrixError(std::string(who) + ": " + fit.diagnostic);
}

// Throws DomainError naming up to 20 units whose value lies outside the g-domain.
void check_domain(const GScale& g, const Vector& v, int arm, const char* what) {
  std::vector<Eigen::Index> bad;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!g.in_domain(v[i])) bad.push_back(i);
  }
  if (bad.empty()) return;
  std::ostringstream msg;
  msg << "g = " << g.name() << " undefined for " << what << " h_" << arm << " at " << bad.size() << " unit(s):";
  for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 20); ++k) msg << ' ' << bad[k];
  if (bad.size() > 20) msg << " ...";
  throw DomainError(msg.str());
}

// Central-difference gradient of a scalar function of theta.
Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& theta) {
  Vector grad(theta.size());
  Vector t = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(theta[j]));
    t[j] = theta[j] + h;
    const double plus = fn(t);
    t[j] = theta[j] - h;
    const double minus = fn(t);
    t[j] = theta[j];
    grad[j] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

double quad_form(const Vector& grad, const Matrix& sigma) {
  return std::max(0.0, static_cast<double>(grad.transpose() * sigma * grad));
}

MeanSpec spec_for(const ModelSpec& m, std::size_t d, double kappa) {
  MeanSpec s;
  s.family = m.family == FamilyKind::gaussian   ? GlmFamily::gaussian()
             : m.family == FamilyKind::binomial ? GlmFamily::binomial()
             : m.family == FamilyKind::poisson  ? GlmFamily::poisson()
                                                : GlmFamily::negbin(kappa);
  s.interaction = m.interaction;
  s.d = d;
  return s;
}

std::string cache_key(const ModelSpec& m, FitMethod method) {
  std::ostringstream k;
  k.precision(17);
  k << family_name(m.family) << '|' << m.interaction << '|' << (m.kappa ? *m.kappa : -1.0) << '|' << method_name(method);
  return k.str();
}


std::vector<double> arm_means(const Dataset& d, const MeanSpec& spec, const Vector& theta) {
  const Vector m1 = glm_predictions(spec, 1, d.x(), theta);
  const Vector m0 = glm_predictions(spec, 0, d.x(), theta);
  std::vector<double> mu(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) mu[i] = d.arm(i) == 1 ? m1[static_cast<Eigen::Index>(i)] : m0[static_cast<Eigen::Index>(i)];
  return mu;
}

// Root of sum (y - mu)^2 / (mu + mu^2 / kappa) = target, used as a starting value.
double pearson_kappa(const std::vector<double>& y, const std::vector<double>& mu, double target) {
  auto pearson = [&](double kappa) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += (y[i] - mu[i]) * (y[i] - mu[i]) / (mu[i] + mu[i] * mu[i] / kappa);
    return s;
  };
  if (target <= 0.0 || pearson(kMaxKappa) <= target) return kMaxKappa;
  double lo = std::log(1e-8);
  double hi = std::log(kMaxKappa);
  for (int it = 0; it < 100 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    (pearson(std::exp(mid)) < target ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

// d loglik / d kappa of the negative binomial at fixed means.
double kappa_score(const std::vector<double>& y, const std::vector<double>& mu, double kappa) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += boost::math::digamma(y[i] + kappa) - boost::math::digamma(kappa) + std::log(kappa / (kappa + mu[i])) +
         (mu[i] - y[i]) / (kappa + mu[i]);
  }
  return s;
}

// d score / d kappa.
double kappa_score_slope(const std::vector<double>& y, const std::vector<double>& mu, double kappa) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double km = kappa + mu[i];
    s += boost::math::trigamma(y[i] + kappa) - boost::math::trigamma(kappa) + 1.0 / kappa - 1.0 / km -
         (mu[i] - y[i]) / (km * km);
  }
  return s;
}

// Maximizer of the negative-binomial log likelihood in kappa at fixed means: safeguarded
// Newton on t = log kappa inside a bracket where the score changes sign.
double profile_kappa(const std::vector<double>& y, const std::vector<double>& mu, double start) {
  double lo = std::log(1e-6);
  double hi = std::log(kMaxKappa);
  if (kappa_score(y, mu, std::exp(hi)) >= 0.0) return kMaxKappa;
  if (kappa_score(y, mu, std::exp(lo)) <= 0.0) return std::exp(lo);
  double t = std::clamp(std::log(start), lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double k = std::exp(t);
    const double s = kappa_score(y, mu, k);
    if (s > 0.0) {
      lo = t;
    } else {
      hi = t;
    }
    // d score / dt = kappa * d score / d kappa.
    const double slope = k * kappa_score_slope(y, mu, k);
    double next = slope < 0.0 ? t - s / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-12 || hi - lo < 1e-12) return std::exp(next);
    t = next;
  }
  return std::exp(t);
}

}  // namespace

ZFit fit_glm(const Dataset& d, const MeanSpec& spec, const SolveOptions& opts) {
  if (spec.d != d.d()) throw DimensionError("fit_glm: model covariate count differs from the dataset");
  Vector theta0 = Vector::Zero(static_cast<Eigen::Index>(spec.dim()));
  for (int arm : {1, 0}) {
    const double m = group_mean(d, arm, std::span<const double>(d.y().data(), d.n()));
    double start = 0.0;
    switch (spec.family.kind()) {
      case FamilyKind::gaussian:
        start = m;
        break;
      case FamilyKind::binomial:
        start = spec.family.link(std::clamp(m, 1e-3, 1.0 - 1e-3));
        break;
      case FamilyKind::poisson:
      case FamilyKind::negbin:
        start = std::log(std::max(m, 1e-3));
        break;
    }
    theta0[static_cast<Eigen::Index>(spec.alpha_index(arm))] = start;
  }
  return solve(d, glm_score_estfun(spec), theta0, opts);
}

double estimate_negbin_kappa(const Dataset& d, bool interaction, const SolveOptions& opts) {
  MeanSpec pois;
  pois.family = GlmFamily::poisson();
  pois.interaction = interaction;
  pois.d = d.d();
  SolveOptions o = opts;
  o.with_sandwich = false;
  const ZFit fit = fit_glm(d, pois, o);
  if (!fit.converged) throw ConvergenceError("estimate_negbin_kappa: Poisson pilot fit failed: " + fit.diagnostic);
  std::vector<double> mu = arm_means(d, pois, fit.theta_hat);
  const std::vector<double> y(d.y().data(), d.y().data() + d.n());
  double kappa = pearson_kappa(y, mu, static_cast<double>(d.n()) - static_cast<double>(pois.dim()));
  if (kappa >= kMaxKappa) return kMaxKappa;
  Vector start = fit.theta_hat;

  // Alternate the mean fit at fixed kappa with the profile update of kappa at fixed means;
  // the fixed point is the joint maximum-likelihood estimate.
  for (int round = 0; round < 50; ++round) {
    const MeanSpec nb{GlmFamily::negbin(kappa), interaction, d.d()};
    const ZFit nb_fit = solve(d, glm_score_estfun(nb), start, o);
    if (!nb_fit.converged) throw ConvergenceError("estimate_negbin_kappa: negative binomial fit failed: " + nb_fit.diagnostic);
    start = nb_fit.theta_hat;
    mu = arm_means(d, nb, nb_fit.theta_hat);
    const double next = profile_kappa(y, mu, kappa);
    if (next >= kMaxKappa) return kMaxKappa;
    const bool done = std::abs(std::log(next / kappa)) < 1e-9;
    kappa = next;
    if (done) return kappa;
  }
  throw ConvergenceError("estimate_negbin_kappa: alternating maximum likelihood did not settle");
}

AteResult tau_model_based(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g) {
  require_sigma(fit, "tau_model_based");
  const Vector h1 = glm_predictions(spec, 1, d.x(), fit.theta_hat);
  const Vector h0 = glm_predictions(spec, 0, d.x(), fit.theta_hat);
  check_domain(g, h1, 1, "fitted means");
  check_domain(g, h0, 0, "fitted means");
  auto gb = [&](const Vector& theta) {
    const Vector a = glm_predictions(spec, 1, d.x(), theta);
    const Vector b = glm_predictions(spec, 0, d.x(), theta);
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += g.g(a[i]) - g.g(b[i]);
    return s / static_cast<double>(a.size());
  };
  AteResult r;
  r.kind = EstimatorKind::model_based;
  r.g = g;
  r.n = d.n();
  r.tau_hat = gb(fit.theta_hat);
  r.variance_hat = quad_form(fd_gradient(gb, fit.theta_hat), fit.sigma_hat);
  r.fits.push_back(fit);
  return r;
}

AteResult tau_model_imputed(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g) {
  require_sigma(fit, "tau_model_imputed");
  auto gi = [&](const Vector& theta) {
    const double m1 = glm_predictions(spec, 1, d.x(), theta).mean();
    const double m0 = glm_predictions(spec, 0, d.x(), theta).mean();
    return g.g(m1) - g.g(m0);
  };
  const double m1 = glm_predictions(spec, 1, d.x(), fit.theta_hat).mean();
  const double m0 = glm_predictions(spec, 0, d.x(), fit.theta_hat).mean();
  check_domain(g, Vector::Constant(1, m1), 1, "the imputed mean of");
  check_domain(g, Vector::Constant(1, m0), 0, "the imputed mean of");
  AteResult r;
  r.kind = EstimatorKind::model_imputed;
  r.g = g;
  r.n = d.n();
  r.tau_hat = gi(fit.theta_hat);
  r.variance_hat = quad_form(fd_gradient(gi, fit.theta_hat), fit.sigma_hat);
  r.fits.push_back(fit);
  return r;
}

Vector adjusted_outcomes(const Dataset& d, const Vector& h1, const Vector& h0) {
  const auto n = static_cast<Eigen::Index>(d.n());
  if (h1.size() != n || h0.size() != n) throw DimensionError("adjusted_outcomes: predictions must cover all N units");
  const double m1 = h1.mean();
  const double m0 = h0.mean();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] = d.arm(static_cast<std::size_t>(i)) == 1 ? d.y()[i] - h1[i] + m1 : d.y()[i] - h0[i] + m0;
  }
  return out;
}

AteResult tau_model_assisted(const Dataset& d, const Vector& h1, const Vector& h0, const GScale& g,
                             EstimatorKind kind) {
  const Vector adj = adjusted_outcomes(d, h1, h0);
  const std::span<const double> values(adj.data(), d.n());
  const GroupMoments a1 = group_moments(d, 1, values);
  const GroupMoments a0 = group_moments(d, 0, values);
  if (!g.in_domain(a1.mean) || !g.in_domain(a0.mean)) {
    std::ostringstream msg;
    msg << "g = " << g.name() << " undefined at the adjusted arm mean(s):";
    if (!g.in_domain(a1.mean)) msg << " treated " << a1.mean;
    if (!g.in_domain(a0.mean)) msg << " control " << a0.mean;
    throw DomainError(msg.str());
  }
  const double s1 = g.gdot(a1.mean);
  const double s0 = g.gdot(a0.mean);
  AteResult r;
  r.kind = kind;
  r.g = g;
  r.n = d.n();
  r.tau_hat = g.g(a1.mean) - g.g(a0.mean);
  r.variance_hat = s1 * s1 * a1.var / d.r1() + s0 * s0 * a0.var / d.r0();
  return r;
}

AteResult tau_model_assisted(const Dataset& d, const MeanSpec& spec, const ZFit& fit, const GScale& g) {
  AteResult r = tau_model_assisted(d, glm_predictions(spec, 1, d.x(), fit.theta_hat),
                                   glm_predictions(spec, 0, d.x(), fit.theta_hat), g);
  r.fits.push_back(fit);
  return r;
}

AteResult tau_model_assisted(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const ArmLayout& layout,
                             const Vector& theta, const GScale& g) {
  if (static_cast<std::size_t>(theta.size()) != layout.dim) throw DimensionError("tau_model_assisted: theta has wrong length");
  return tau_model_assisted(d, form_predictions(h1, layout.arm1, d.x(), theta),
                            form_predictions(h0, layout.arm0, d.x(), theta), g);
}

AteResult tau_unadjusted(const Dataset& d, const GScale& g) {
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(d.n()));
  return tau_model_assisted(d, zero, zero, g, EstimatorKind::unadjusted);
}

ZFit fit_optimal_adjustment(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const Vector& theta0,
                            const SolveOptions& opts) {
  return solve(d, squared_loss_estfun(h1, h0), theta0, opts);
}

ZFit fit_optimal_adjustment(const Dataset& d, const MeanForm& h1, const MeanForm& h0, const SolveOptions& opts) {
  return fit_optimal_adjustment(d, h1, h0, Vector::Zero(static_cast<Eigen::Index>(h1.dim + h0.dim)), opts);
}

std::string method_name(FitMethod m) { return m == FitMethod::mle ? "mle" : "squared-loss"; }

FitMethod parse_method(const std::string& text) {
  if (text == "mle" || text == "MLE") return FitMethod::mle;
  if (text == "squared-loss" || text == "squared_loss" || text == "ls" || text == "sq") return FitMethod::squared_loss;
  throw ArgumentError("unknown fitting method '" + text + "' (expected mle or squared-loss)");
}

FittedModel fit_working_model(const Dataset& d, const ModelSpec& model, FitMethod method, const SolveOptions& opts) {
  FittedModel out;
  out.model = model;
  out.method = method;
  if (method == FitMethod::mle) {
    if (model.family == FamilyKind::negbin) {
      out.kappa = model.kappa ? *model.kappa : estimate_negbin_kappa(d, model.interaction, opts);
    }
    const MeanSpec spec = spec_for(model, d.d(), out.kappa);
    out.fit = fit_glm(d, spec, opts);
    if (!out.fit.converged) {
      throw ConvergenceError(family_name(model.family) + " maximum-likelihood fit did not converge: " + out.fit.diagnostic);
    }
    out.pred1 = glm_predictions(spec, 1, d.x(), out.fit.theta_hat);
    out.pred0 = glm_predictions(spec, 0, d.x(), out.fit.theta_hat);
    out.spec = spec;
    return out;
  }
  if (!model.interaction) {
    throw UnsupportedError("squared-loss adjustment needs arm-specific parameters; use ':interact'");
  }
  const std::size_t p = d.d();
  MeanForm form;
  Vector theta0;
  if (model.family == FamilyKind::gaussian) {
    form = linear_form(p);
    theta0 = Vector::Zero(static_cast<Eigen::Index>(2 * form.dim));
  } else if (model.family == FamilyKind::poisson || model.family == FamilyKind::negbin) {
    form = exp_form(p, true);
    const auto k = static_cast<Eigen::Index>(form.dim);
    theta0 = Vector::Zero(2 * k);
    MeanSpec pois = spec_for(ModelSpec{FamilyKind::poisson, true, std::nullopt}, p, 0.0);
    SolveOptions o = opts;
    o.with_sandwich = false;
    const ZFit pilot = fit_glm(d, pois, o);
    for (int arm : {1, 0}) {
      const Eigen::Index off = arm == 1 ? 0 : k;
      if (pilot.converged) {
        theta0[off + 1] = pilot.theta_hat[static_cast<Eigen::Index>(pois.alpha_index(arm))];
        theta0.segment(off + 2, static_cast<Eigen::Index>(p)) =
            pilot.theta_hat.segment(static_cast<Eigen::Index>(pois.beta_offset(arm)), static_cast<Eigen::Index>(p));
      } else {
        theta0[off + 1] = std::log(std::max(group_mean(d, arm, std::span<const double>(d.y().data(), d.n())), 1e-3));
      }
    }
  } else {
    throw UnsupportedError("squared-loss adjustment is available for gaussian, poisson and negbin mean forms");
  }
  out.fit = fit_optimal_adjustment(d, form, form, theta0, opts);
  if (!out.fit.converged) throw ConvergenceError("squared-loss adjustment fit did not converge: " + out.fit.diagnostic);
  const ArmLayout layout = default_layout(form, form);
  out.pred1 = form_predictions(form, layout.arm1, d.x(), out.fit.theta_hat);
  out.pred0 = form_predictions(form, layout.arm0, d.x(), out.fit.theta_hat);
  return out;
}

const FittedModel& FitCache::get(const ModelSpec& model, FitMethod method) {
  const std::string key = cache_key(model, method);
  auto it = fits_.find(key);
  if (it != fits_.end()) return it->second;
  return fits_.emplace(key, fit_working_model(d_, model, method, opts_)).first->second;
}

AteResult adjusted_imputation(FitCache& cache, const Dataset& d, const std::vector<ImputationModel>& models,
                              const GScale& g) {
  if (models.empty()) throw ArgumentError("adjusted_imputation: need at least one imputation model");
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto cols = static_cast<Eigen::Index>(2 * models.size());
  CovariateMatrix h(n, cols);
  std::vector<ZFit> stage1;
  for (std::size_t j = 0; j < models.size(); ++j) {
    const FittedModel& fm = cache.get(models[j].model, models[j].method);
    h.col(static_cast<Eigen::Index>(2 * j)) = fm.pred1;
    h.col(static_cast<Eigen::Index>(2 * j + 1)) = fm.pred0;
    stage1.push_back(fm.fit);
  }
  const Dataset dh = d.with_covariates(h);
  const MeanForm form = linear_form(static_cast<std::size_t>(cols));
  const auto k = cols + 1;

  // Per-arm least squares of Y on (1, H), ridge-regularized when H is collinear in that arm.
  std::vector<std::string> warnings;
  Vector theta(2 * k);
  for (int arm : {1, 0}) {
    const auto& units = d.units(arm);
    Matrix xa(static_cast<Eigen::Index>(units.size()), k);
    Vector ya(static_cast<Eigen::Index>(units.size()));
    for (std::size_t r = 0; r < units.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(units[r]);
      xa(static_cast<Eigen::Index>(r), 0) = 1.0;
      xa.row(static_cast<Eigen::Index>(r)).tail(cols) = h.row(i);
      ya[static_cast<Eigen::Index>(r)] = d.y()[i];
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(xa);
    qr.setThreshold(1e-10);
    Vector coef;
    if (qr.rank() == k) {
      coef = qr.solve(ya);
    } else {
      Matrix xtx = xa.transpose() * xa;
      const double lambda = 1e-8 * xtx.trace() / static_cast<double>(k);
      xtx.diagonal().array() += lambda;
      coef = xtx.ldlt().solve(xa.transpose() * ya);
      warnings.push_back("imputed columns are collinear in arm " + std::to_string(arm) +
                         "; second stage ridge-regularized");
    }
    theta.segment(arm == 1 ? 0 : k, k) = coef;
  }
  const ZFit stage2 = solve(dh, squared_loss_estfun(form, form), theta);
  const Vector& used = stage2.converged ? stage2.theta_hat : theta;
  const ArmLayout layout = default_layout(form, form);
  AteResult r = tau_model_assisted(d, form_predictions(form, layout.arm1, h, used),
                                   form_predictions(form, layout.arm0, h, used), g,
                                   EstimatorKind::adjusted_imputation);
  r.fits = stage1;
  r.fits.push_back(stage2);
  r.warnings = warnings;
  if (!stage2.converged) r.warnings.push_back("second-stage root not certified: " + stage2.diagnostic);
  return r;
}

AteResult adjusted_imputation(const Dataset& d, const std::vector<ImputationModel>& models, const GScale& g,
                              const SolveOptions& opts) {
  FitCache cache(d, opts);
  return adjusted_imputation(cache, d, models, g);
}

AteResult run_estimator(FitCache& cache, const Dataset& d, const AteRequest& req) {
  switch (req.kind) {
    case EstimatorKind::unadjusted:
      return tau_unadjusted(d, req.g);
    case EstimatorKind::model_based:
    case EstimatorKind::model_imputed: {
      if (req.method != FitMethod::mle) {
        throw UnsupportedError("model-based and model-imputed estimators use maximum-likelihood fits");
      }
      const FittedModel& fm = cache.get(req.model, req.method);
      return req.kind == EstimatorKind::model_based ? tau_model_based(d, *fm.spec, fm.fit, req.g)
                                                    : tau_model_imputed(d, *fm.spec, fm.fit, req.g);
    }
    case EstimatorKind::model_assisted: {
      const FittedModel& fm = cache.get(req.model, req.method);
      AteResult r = tau_model_assisted(d, fm.pred1, fm.pred0, req.g);
      r.fits.push_back(fm.fit);
      return r;
    }
    case EstimatorKind::adjusted_imputation:
      return adjusted_imputation(cache, d, req.imputations, req.g);
  }
  throw ArgumentError("run_estimator: unknown estimator kind");
}

AteResult run_estimator(const Dataset& d, const AteRequest& req, const SolveOptions& opts) {
  FitCache cache(d, opts);
  return run_estimator(cache, d, req);
}

}  // namespace designz
