#include "designz/zestim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "designz/errors.hpp"

namespace designz {

namespace {

constexpr double kStationaryStepTol = 1e-3;

void check_dim(const EstimatingFunction& f, const Vector& theta, const char* who) {
  if (static_cast<std::size_t>(theta.size()) != f.dim) {
    std::ostringstream msg;
    msg << who << ": theta has length " << theta.size() << ", estimating function expects " << f.dim;
    throw DimensionError(msg.str());
  }
}

[[noreturn]] void rethrow_at_unit(std::size_t i, const std::exception& e) {
  throw Error("estimating function failed at unit " + std::to_string(i) + ": " + e.what());
}

bool all_finite(const Vector& v) { return v.allFinite(); }

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct StepSolve {
  Vector step;
  bool ok = false;
  /// The ridge was needed; such a step cannot certify a root.
  bool ridged = false;
};

// Solves (J + mu I) s = b, adding a scaled ridge once when J is numerically singular.
StepSolve newton_step(const Matrix& jac, const Vector& psi, double mu) {
  const auto p = jac.rows();
  Matrix a = jac;
  if (mu > 0) a.diagonal().array() += mu;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    qr.setThreshold(1e-13);
    if (qr.rank() == p) {
      Vector s = qr.solve(psi);
      if (s.allFinite()) return {s, true, attempt > 0};
    }
    const double scale = std::abs(jac.trace()) / static_cast<double>(std::max<Eigen::Index>(p, 1));
    a.diagonal().array() += 1e-8 * (scale > 0 ? scale : 1.0);
  }
  return {Vector(), false};
}

}  // namespace

Vector empirical_psi(const Dataset& d, const EstimatingFunction& f, const Vector& theta) {
  check_dim(f, theta, "empirical_psi");
  const auto p = static_cast<Eigen::Index>(f.dim);
  Vector total = Vector::Zero(p);
  Vector buf(p);
  for (std::size_t i = 0; i < d.n(); ++i) {
    try {
      f.psi(d.arm(i))(d.y()[static_cast<Eigen::Index>(i)], d.row(i), theta, buf);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      rethrow_at_unit(i, e);
    }
    total += buf;
  }
  return total / static_cast<double>(d.n());
}

Matrix numeric_jacobian(const Dataset& d, const EstimatingFunction& f, const Vector& theta) {
  check_dim(f, theta, "numeric_jacobian");
  const auto p = static_cast<Eigen::Index>(f.dim);
  Matrix jac(p, p);
  Vector t = theta;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double h = 6e-6 * (1.0 + std::abs(theta[j]));
    t[j] = theta[j] + h;
    const Vector plus = empirical_psi(d, f, t);
    t[j] = theta[j] - h;
    const Vector minus = empirical_psi(d, f, t);
    t[j] = theta[j];
    jac.col(j) = (plus - minus) / (2.0 * h);
  }
  return jac;
}

Matrix empirical_jacobian(const Dataset& d, const EstimatingFunction& f, const Vector& theta) {
  if (!f.has_jacobian()) return numeric_jacobian(d, f, theta);
  check_dim(f, theta, "empirical_jacobian");
  const auto p = static_cast<Eigen::Index>(f.dim);
  Matrix total = Matrix::Zero(p, p);
  Matrix buf(p, p);
  for (std::size_t i = 0; i < d.n(); ++i) {
    f.jac(d.arm(i))(d.y()[static_cast<Eigen::Index>(i)], d.row(i), theta, buf);
    total += buf;
  }
  return total / static_cast<double>(d.n());
}

double empirical_risk(const Dataset& d, const EstimatingFunction& f, const Vector& theta) {
  if (!f.has_loss()) throw PreconditionError("empirical_risk: estimating function carries no losses");
  check_dim(f, theta, "empirical_risk");
  double total = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) total += f.loss(d.arm(i))(d.y()[static_cast<Eigen::Index>(i)], d.row(i), theta);
  return total / static_cast<double>(d.n());
}

Vector population_psi(const PotentialTable& pot, const EstimatingFunction& f, const Vector& theta, double r1) {
  check_dim(f, theta, "population_psi");
  if (!(r1 > 0.0 && r1 < 1.0)) throw ArgumentError("population_psi: r1 must lie in (0, 1)");
  const auto p = static_cast<Eigen::Index>(f.dim);
  Vector s1 = Vector::Zero(p);
  Vector s0 = Vector::Zero(p);
  Vector buf(p);
  for (std::size_t i = 0; i < pot.n(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    f.psi1(pot.y1()[k], pot.row(i), theta, buf);
    s1 += buf;
    f.psi0(pot.y0()[k], pot.row(i), theta, buf);
    s0 += buf;
  }
  const double n = static_cast<double>(pot.n());
  return r1 * s1 / n + (1.0 - r1) * s0 / n;
}

ZFit solve(const Dataset& d, const EstimatingFunction& f, const Vector& theta0, const SolveOptions& opts) {
  check_dim(f, theta0, "solve");
  ZFit fit;
  fit.n = d.n();
  fit.theta_hat = theta0;
  if (!theta0.allFinite()) {
    fit.diagnostic = "starting value is not finite";
    return fit;
  }
  const bool use_loss = f.has_loss();
  Vector theta = theta0;
  Vector psi = empirical_psi(d, f, theta);
  if (!all_finite(psi)) {
    fit.diagnostic = "estimating function is not finite at the starting value";
    return fit;
  }
  double risk = use_loss ? empirical_risk(d, f, theta) : 0.0;
  Matrix jac;

  auto accept = [&](const Vector& psi_new, double risk_new) {
    if (!all_finite(psi_new)) return false;
    if (!use_loss) return psi_new.norm() < psi.norm();
    if (!std::isfinite(risk_new)) return false;
    if (risk_new > risk + 1e-12 * (1.0 + std::abs(risk))) return false;
    return risk_new < risk || psi_new.norm() < psi.norm();
  };

  // Tries theta - lambda * step with halving; on success updates the state.
  auto line_search = [&](const Vector& step, int halvings) {
    double lambda = 1.0;
    for (int k = 0; k <= halvings; ++k, lambda *= 0.5) {
      const Vector cand = theta - lambda * step;
      const Vector psi_new = empirical_psi(d, f, cand);
      const double risk_new = use_loss && all_finite(psi_new) ? empirical_risk(d, f, cand) : 0.0;
      if (!opts.damping || accept(psi_new, risk_new)) {
        if (!all_finite(psi_new)) return false;
        theta = cand;
        psi = psi_new;
        risk = risk_new;
        return true;
      }
    }
    return false;
  };

  std::string failure;
  int it = 0;
  for (;; ++it) {
    jac = empirical_jacobian(d, f, theta);
    const StepSolve ns = newton_step(jac, psi, 0.0);
    const double psi_inf = inf_norm(psi);
    if (ns.ok && !ns.ridged && psi_inf <= opts.tol && inf_norm(ns.step) <= opts.step_tol * (1.0 + inf_norm(theta))) {
      fit.converged = true;
      break;
    }
    if (it >= opts.max_iter) {
      failure = "iteration limit reached";
      break;
    }
    bool moved = ns.ok && line_search(ns.step, 30);
    if (!moved && opts.damping) {
      const double scale = std::max(std::abs(jac.trace()) / static_cast<double>(f.dim), 1e-12);
      for (int k = 0; k < 10 && !moved; ++k) {
        const StepSolve lm = newton_step(jac, psi, 1e-4 * std::pow(10.0, k) * scale);
        moved = lm.ok && line_search(lm.step, 10);
      }
    }
    if (!moved) {
      failure = ns.ok ? "line search failed to make progress" : "Jacobian is singular after regularization";
      if (psi_inf <= opts.tol && ns.ok && !ns.ridged && inf_norm(ns.step) <= kStationaryStepTol * (1.0 + inf_norm(theta))) {
        // Stationary to machine precision: no representable step improves the equation.
        // A large pending Newton step means the root lies at infinity instead.
        fit.converged = true;
        failure.clear();
      }
      break;
    }
  }

  fit.theta_hat = theta;
  fit.iterations = it;
  fit.psi_norm = inf_norm(psi);
  fit.jac_at_root = jac;
  if (!fit.converged) {
    std::ostringstream msg;
    msg << failure << " after " << it << " iterations; |psi|_inf = " << fit.psi_norm
        << ", |theta|_inf = " << inf_norm(theta);
    if (inf_norm(theta) > 20.0) msg << " (parameters diverging; the root may not exist)";
    fit.diagnostic = msg.str();
    return fit;
  }
  if (opts.with_sandwich) {
    try {
      fit.sigma_hat = sandwich(d, f, fit);
    } catch (const Error& e) {
      fit.diagnostic = std::string("sandwich unavailable: ") + e.what();
    }
  }
  return fit;
}

Matrix sandwich(const Dataset& d, const EstimatingFunction& f, const ZFit& fit) {
  if (!fit.converged) throw PreconditionError("sandwich: fit did not converge");
  check_dim(f, fit.theta_hat, "sandwich");
  if (d.n1() < 2 || d.n0() < 2) throw DegenerateInputError("sandwich: each arm needs at least two units");
  const auto p = static_cast<Eigen::Index>(f.dim);
  const Matrix& jac = fit.jac_at_root.size() == p * p ? fit.jac_at_root : empirical_jacobian(d, f, fit.theta_hat);

  Eigen::JacobiSVD<Matrix> svd(jac, Eigen::ComputeFullV);
  const Vector sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  std::vector<Eigen::Index> null_dirs;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (!(sv[k] > 1e-12 * smax) || smax == 0.0) null_dirs.push_back(k);
  }
  if (!null_dirs.empty()) {
    std::ostringstream msg;
    msg << "sandwich: Jacobian at the root is singular; null directions:";
    Eigen::IOFormat fmt(6, Eigen::DontAlignCols, ", ", ", ", "", "", "(", ")");
    for (auto k : null_dirs) msg << ' ' << svd.matrixV().col(k).transpose().format(fmt);
    throw SingularMatrixError(msg.str());
  }

  Matrix meat = Matrix::Zero(p, p);
  Vector buf(p);
  for (int arm : {1, 0}) {
    const auto& units = d.units(arm);
    Matrix rows(static_cast<Eigen::Index>(units.size()), p);
    for (std::size_t j = 0; j < units.size(); ++j) {
      const std::size_t i = units[j];
      f.psi(arm)(d.y()[static_cast<Eigen::Index>(i)], d.row(i), fit.theta_hat, buf);
      rows.row(static_cast<Eigen::Index>(j)) = buf.transpose();
    }
    // Each arm's covariance is weighted by the other arm's proportion.
    meat += d.r_arm(1 - arm) * fp_cov_matrix(rows);
  }
  const Eigen::PartialPivLU<Matrix> lu(jac);
  const Matrix jinv = lu.inverse();
  const Matrix s = jinv * meat * jinv.transpose();
  return 0.5 * (s + s.transpose());
}

bool WaldSet::contains(const Vector& omega) const {
  if (omega.size() != estimate.size()) throw DimensionError("WaldSet::contains: wrong dimension");
  const Vector diff = omega - estimate;
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector& ev = es.eigenvalues();
  const double emax = ev.size() ? std::max(ev.maxCoeff(), 0.0) : 0.0;
  const Vector proj = es.eigenvectors().transpose() * diff;
  double q = 0.0;
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev[k] <= 1e-14 * emax || ev[k] <= 0.0) {
      // Degenerate direction: only the center itself is in the set.
      if (std::abs(proj[k]) > 1e-12 * (1.0 + estimate.cwiseAbs().maxCoeff())) return false;
    } else {
      q += proj[k] * proj[k] / ev[k];
    }
  }
  return q <= chi2_crit;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double chi2_quantile(std::size_t dof, double p) {
  if (dof == 0) throw ArgumentError("chi2_quantile: degrees of freedom must be positive");
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("chi2_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(static_cast<double>(dof)), p);
}

WaldSet wald_set(const ZFit& fit, const Matrix& v, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("wald_set: alpha must lie in (0, 1)");
  if (!fit.has_sigma()) throw PreconditionError("wald_set: fit has no sandwich covariance");
  if (v.rows() != fit.theta_hat.size() || v.cols() == 0) throw DimensionError("wald_set: contrast matrix must be p x m");
  Eigen::ColPivHouseholderQR<Matrix> qr(v);
  if (qr.rank() < v.cols()) throw ArgumentError("wald_set: contrast matrix is rank deficient");
  WaldSet w;
  w.alpha = alpha;
  w.estimate = v.transpose() * fit.theta_hat;
  w.cov = v.transpose() * fit.sigma_hat * v / static_cast<double>(fit.n);
  w.cov = 0.5 * (w.cov + w.cov.transpose());
  w.chi2_crit = chi2_quantile(static_cast<std::size_t>(v.cols()), 1.0 - alpha);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  for (Eigen::Index k = 0; k < w.estimate.size(); ++k) {
    const double half = z * std::sqrt(std::max(w.cov(k, k), 0.0));
    w.intervals.push_back({w.estimate[k] - half, w.estimate[k] + half});
  }
  return w;
}

std::string zfit_to_json(const ZFit& fit) {
  nlohmann::json j;
  j["theta"] = std::vector<double>(fit.theta_hat.data(), fit.theta_hat.data() + fit.theta_hat.size());
  nlohmann::json sigma = nlohmann::json::array();
  for (Eigen::Index r = 0; r < fit.sigma_hat.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(fit.sigma_hat.cols()));
    for (Eigen::Index c = 0; c < fit.sigma_hat.cols(); ++c) row[static_cast<std::size_t>(c)] = fit.sigma_hat(r, c);
    sigma.push_back(row);
  }
  j["sigma"] = sigma;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["psi_norm"] = fit.psi_norm;
  return j.dump(2);
}

}  // namespace designz
