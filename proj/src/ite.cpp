#include "designz/ite.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "designz/errors.hpp"

namespace designz {

namespace {

double xt_theta(ConstRow x, const Vector& theta) {
  double e = theta[0];
  for (std::size_t k = 0; k < x.size(); ++k) e += theta[static_cast<Eigen::Index>(k + 1)] * x[k];
  return e;
}

void fill_xtilde(ConstRow x, Eigen::Ref<Vector> out, double scale) {
  out[0] = scale;
  for (std::size_t k = 0; k < x.size(); ++k) out[static_cast<Eigen::Index>(k + 1)] = scale * x[k];
}

void fill_outer(ConstRow x, Eigen::Ref<Matrix> out, double scale) {
  const auto p = static_cast<Eigen::Index>(x.size() + 1);
  for (Eigen::Index a = 0; a < p; ++a) {
    const double xa = a == 0 ? 1.0 : x[static_cast<std::size_t>(a - 1)];
    for (Eigen::Index b = 0; b < p; ++b) {
      const double xb = b == 0 ? 1.0 : x[static_cast<std::size_t>(b - 1)];
      out(a, b) = scale * xa * xb;
    }
  }
}

Matrix with_intercept(const CovariateMatrix& design) {
  Matrix x(design.rows(), design.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(design.cols()) = design;
  return x;
}

}  // namespace

EdfTauModel normal_linear_model(std::size_t d) {
  EdfTauModel m;
  m.dim = d + 1;
  m.tag = "normal-linear";
  m.v = [](ConstRow x, const Vector& t) { return xt_theta(x, t); };
  m.vdot = [](ConstRow x, const Vector&, Eigen::Ref<Vector> out) { fill_xtilde(x, out, 1.0); };
  m.vhess = [](ConstRow, const Vector&, Eigen::Ref<Matrix> out) { out.setZero(); };
  m.u = [](ConstRow x, const Vector& t) {
    const double e = xt_theta(x, t);
    return 0.5 * e * e;
  };
  m.udot = [](ConstRow x, const Vector& t, Eigen::Ref<Vector> out) { fill_xtilde(x, out, xt_theta(x, t)); };
  m.uhess = [](ConstRow x, const Vector&, Eigen::Ref<Matrix> out) { fill_outer(x, out, 1.0); };
  m.mean = [](ConstRow x, const Vector& t) { return xt_theta(x, t); };
  return m;
}

EdfTauModel ternary_model(std::size_t d, double gamma) {
  if (!(gamma > 0.0)) throw ArgumentError("ternary_model: gamma must be positive");
  EdfTauModel m;
  m.dim = d + 1;
  m.tag = "ternary";
  // With a = |eta|, e1 = exp(-a), e2 = exp(-2a): u = a + log(1 + e2 + gamma e1).
  auto mean_of = [gamma](double eta) {
    const double a = std::abs(eta);
    const double e1 = std::exp(-a);
    const double e2 = e1 * e1;
    const double mu = (1.0 - e2) / (1.0 + e2 + gamma * e1);
    return eta < 0 ? -mu : mu;
  };
  auto slope_of = [gamma](double eta) {
    const double a = std::abs(eta);
    const double e1 = std::exp(-a);
    const double e2 = e1 * e1;
    const double den = 1.0 + e2 + gamma * e1;
    return (4.0 * e2 + gamma * (e1 + e1 * e2)) / (den * den);
  };
  m.v = [](ConstRow x, const Vector& t) { return xt_theta(x, t); };
  m.vdot = [](ConstRow x, const Vector&, Eigen::Ref<Vector> out) { fill_xtilde(x, out, 1.0); };
  m.vhess = [](ConstRow, const Vector&, Eigen::Ref<Matrix> out) { out.setZero(); };
  m.u = [gamma](ConstRow x, const Vector& t) {
    const double a = std::abs(xt_theta(x, t));
    const double e1 = std::exp(-a);
    return a + std::log1p(e1 * e1 + gamma * e1);
  };
  m.udot = [mean_of](ConstRow x, const Vector& t, Eigen::Ref<Vector> out) {
    fill_xtilde(x, out, mean_of(xt_theta(x, t)));
  };
  m.uhess = [slope_of](ConstRow x, const Vector& t, Eigen::Ref<Matrix> out) {
    fill_outer(x, out, slope_of(xt_theta(x, t)));
  };
  m.mean = [mean_of](ConstRow x, const Vector& t) { return mean_of(xt_theta(x, t)); };
  return m;
}

Vector pseudo_effects(const Dataset& d) {
  const double r1 = d.r1();
  const double r0 = d.r0();
  Vector out(static_cast<Eigen::Index>(d.n()));
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out[k] = d.arm(i) == 1 ? d.y()[k] / r1 : -d.y()[k] / r0;
  }
  return out;
}

Vector pseudo_effects_adjusted(const Dataset& d, const Vector& h1, const Vector& h0) {
  const auto n = static_cast<Eigen::Index>(d.n());
  if (h1.size() != n || h0.size() != n) throw DimensionError("pseudo_effects_adjusted: predictions must cover all units");
  const double r1 = d.r1();
  const double r0 = d.r0();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double base = h1[i] - h0[i];
    out[i] = d.arm(static_cast<std::size_t>(i)) == 1 ? base + (d.y()[i] - h1[i]) / r1 : base - (d.y()[i] - h0[i]) / r0;
  }
  return out;
}

Vector pseudo_effects_adjusted(const Dataset& d, const MeanSpec& spec, const Vector& theta_fixed) {
  return pseudo_effects_adjusted(d, glm_predictions(spec, 1, d.x(), theta_fixed),
                                 glm_predictions(spec, 0, d.x(), theta_fixed));
}

EstimatingFunction ite_estfun(const EdfTauModel& m, double r1) {
  if (!(r1 > 0.0 && r1 < 1.0)) throw ArgumentError("ite_estfun: r1 must lie in (0, 1)");
  const double r0 = 1.0 - r1;
  EstimatingFunction f;
  f.dim = m.dim;
  f.name = m.tag + " effect model";
  const auto p = static_cast<Eigen::Index>(m.dim);
  for (int arm : {1, 0}) {
    const double w = arm == 1 ? 1.0 / r1 : -1.0 / r0;
    ScoreFn psi = [m, w, p](double y, ConstRow x, const Vector& theta, Eigen::Ref<Vector> out) {
      Vector ud(p);
      m.vdot(x, theta, out);
      m.udot(x, theta, ud);
      out = y * w * out - ud;
    };
    if (arm == 1) {
      f.psi1 = std::move(psi);
    } else {
      f.psi0 = std::move(psi);
    }
    if (m.vhess && m.uhess) {
      JacobianFn jac = [m, w, p](double y, ConstRow x, const Vector& theta, Eigen::Ref<Matrix> out) {
        Matrix uh(p, p);
        m.vhess(x, theta, out);
        m.uhess(x, theta, uh);
        out = y * w * out - uh;
      };
      (arm == 1 ? f.jac1 : f.jac0) = std::move(jac);
    }
  }
  return f;
}

Vector normal_linear_closed_form(const Dataset& d) {
  const Matrix x = with_intercept(d.x());
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) {
    throw SingularMatrixError("fit_normal_linear: design with intercept has rank " + std::to_string(qr.rank()) +
                              " < " + std::to_string(x.cols()));
  }
  return qr.solve(pseudo_effects(d));
}

IteFit fit_normal_linear(const Dataset& d) {
  const EdfTauModel m = normal_linear_model(d.d());
  const Vector theta = normal_linear_closed_form(d);
  IteFit out;
  out.kind = m.tag;
  out.fit = solve(d, ite_estfun(m, d.r1()), theta);
  if (!out.fit.converged) throw ConvergenceError("fit_normal_linear: " + out.fit.diagnostic);
  out.fitted = with_intercept(d.x()) * out.fit.theta_hat;
  return out;
}

IteFit fit_normal_linear(const Dataset& d, const CovariateMatrix& design) {
  if (static_cast<std::size_t>(design.rows()) != d.n()) throw DimensionError("fit_normal_linear: design has wrong row count");
  return fit_normal_linear(d.with_covariates(design));
}

IteFit fit_ternary(const Dataset& d, double gamma, const SolveOptions& opts) {
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double y = d.y()[static_cast<Eigen::Index>(i)];
    if (y != 0.0 && y != 1.0) {
      throw PreconditionError("fit_ternary: outcomes must be binary; unit " + std::to_string(i) + " has y = " +
                              std::to_string(y));
    }
  }
  const EdfTauModel m = ternary_model(d.d(), gamma);
  IteFit out;
  out.kind = m.tag;
  out.fit = solve(d, ite_estfun(m, d.r1()), Vector::Zero(static_cast<Eigen::Index>(m.dim)), opts);
  if (!out.fit.converged) throw ConvergenceError("fit_ternary: " + out.fit.diagnostic);
  out.fitted.resize(static_cast<Eigen::Index>(d.n()));
  for (std::size_t i = 0; i < d.n(); ++i) out.fitted[static_cast<Eigen::Index>(i)] = m.mean(d.row(i), out.fit.theta_hat);
  return out;
}

std::string ite_fit_to_json(const IteFit& f) {
  nlohmann::json j = nlohmann::json::parse(zfit_to_json(f.fit));
  j["model_kind"] = f.kind;
  j["fitted"] = std::vector<double>(f.fitted.data(), f.fitted.data() + f.fitted.size());
  return j.dump(2);
}

VarianceDecomposition effect_variance_decomposition(const Vector& tau, const Vector& u, DecompositionMode mode) {
  if (tau.size() != u.size()) throw DimensionError("effect_variance_decomposition: tau and u differ in length");
  VarianceDecomposition out;
  const Vector resid = tau - u;
  out.var_tau = fp_var(tau);
  out.var_u = fp_var(u);
  out.var_resid = fp_var(resid);
  const double num = resid.squaredNorm();
  const double den = tau.squaredNorm();
  out.r2 = den > 0.0 ? 1.0 - num / den : (num == 0.0 ? 1.0 : 0.0);
  out.diagnostic_only = mode == DecompositionMode::pseudo;
  return out;
}

Vector linear_projection(const Vector& target, const CovariateMatrix& design) {
  if (target.size() != design.rows()) throw DimensionError("linear_projection: row count mismatch");
  const Matrix x = with_intercept(design);
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) throw SingularMatrixError("linear_projection: design is rank deficient");
  return x * qr.solve(target);
}

}  // namespace designz
