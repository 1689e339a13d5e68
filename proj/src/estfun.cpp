#include "designz/estfun.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "designz/errors.hpp"

namespace designz {

namespace {

double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }
bool inside_band(double eta) { return eta > -kEtaClamp && eta < kEtaClamp; }

double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

}  // namespace

GlmFamily GlmFamily::negbin(double kappa) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ArgumentError("negbin: kappa must be a positive finite real");
  return GlmFamily(FamilyKind::negbin, kappa);
}

std::string GlmFamily::name() const { return family_name(kind_); }

double GlmFamily::mean(double eta) const {
  switch (kind_) {
    case FamilyKind::gaussian:
      return eta;
    case FamilyKind::binomial:
      return logistic(clamp_eta(eta));
    case FamilyKind::poisson:
    case FamilyKind::negbin:
      return std::exp(clamp_eta(eta));
  }
  return eta;
}

double GlmFamily::mean_derivative(double eta) const {
  if (kind_ == FamilyKind::gaussian) return 1.0;
  if (!inside_band(eta)) return 0.0;
  if (kind_ == FamilyKind::binomial) {
    const double p = logistic(eta);
    return p * (1.0 - p);
  }
  return std::exp(eta);
}

double GlmFamily::link(double mu) const {
  switch (kind_) {
    case FamilyKind::gaussian:
      return mu;
    case FamilyKind::binomial:
      return std::log(mu / (1.0 - mu));
    case FamilyKind::poisson:
    case FamilyKind::negbin:
      return std::log(mu);
  }
  return mu;
}

double GlmFamily::cumulant(double eta) const {
  switch (kind_) {
    case FamilyKind::gaussian:
      return 0.5 * eta * eta;
    case FamilyKind::binomial:
      return softplus(clamp_eta(eta));
    case FamilyKind::poisson:
      return std::exp(clamp_eta(eta));
    case FamilyKind::negbin:
      break;
  }
  throw UnsupportedError("cumulant: negative binomial with log link is not a canonical family");
}

double GlmFamily::loss(double y, double eta) const {
  switch (kind_) {
    case FamilyKind::gaussian:
      return 0.5 * (y - eta) * (y - eta);
    case FamilyKind::binomial: {
      const double e = clamp_eta(eta);
      return softplus(e) - y * e;
    }
    case FamilyKind::poisson: {
      const double e = clamp_eta(eta);
      return std::exp(e) - y * e;
    }
    case FamilyKind::negbin: {
      const double e = clamp_eta(eta);
      return (y + kappa_) * std::log(std::exp(e) + kappa_) - y * e;
    }
  }
  return 0.0;
}

double GlmFamily::residual(double y, double eta) const {
  if (kind_ == FamilyKind::negbin) {
    const double mu = mean(eta);
    return kappa_ * (y - mu) / (mu + kappa_);
  }
  return y - mean(eta);
}

double GlmFamily::residual_derivative(double y, double eta) const {
  if (kind_ == FamilyKind::negbin) {
    if (!inside_band(eta)) return 0.0;
    const double mu = std::exp(eta);
    const double s = mu + kappa_;
    return -kappa_ * mu * (kappa_ + y) / (s * s);
  }
  return -mean_derivative(eta);
}

double MeanSpec::linear_predictor(int arm, ConstRow x, const Vector& theta) const {
  double eta = theta[static_cast<Eigen::Index>(alpha_index(arm))];
  const auto off = static_cast<Eigen::Index>(beta_offset(arm));
  for (std::size_t k = 0; k < d; ++k) eta += theta[off + static_cast<Eigen::Index>(k)] * x[k];
  return eta;
}

double glm_mean(const MeanSpec& spec, int arm, ConstRow x, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != spec.dim()) throw DimensionError("glm_mean: theta has wrong length");
  if (x.size() != spec.d) throw DimensionError("glm_mean: covariate row has wrong length");
  return spec.family.mean(spec.linear_predictor(arm, x, theta));
}

Vector glm_predictions(const MeanSpec& spec, int arm, const CovariateMatrix& x, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != spec.dim()) {
    throw DimensionError("glm_predictions: theta has wrong length");
  }
  if (static_cast<std::size_t>(x.cols()) != spec.d) throw DimensionError("glm_predictions: wrong covariate count");
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const ConstRow row(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols()));
    out[i] = spec.family.mean(spec.linear_predictor(arm, row, theta));
  }
  return out;
}

EstimatingFunction glm_score_estfun(const MeanSpec& spec) {
  EstimatingFunction f;
  f.dim = spec.dim();
  f.name = spec.family.name() + (spec.interaction ? ":interact" : "") + " score";
  for (int arm : {1, 0}) {
    ScoreFn psi = [spec, arm](double y, ConstRow x, const Vector& theta, Eigen::Ref<Vector> out) {
      out.setZero();
      const double r = spec.family.residual(y, spec.linear_predictor(arm, x, theta));
      out[static_cast<Eigen::Index>(spec.alpha_index(arm))] = -r;
      const auto off = static_cast<Eigen::Index>(spec.beta_offset(arm));
      for (std::size_t k = 0; k < spec.d; ++k) out[off + static_cast<Eigen::Index>(k)] = -r * x[k];
    };
    JacobianFn jac = [spec, arm](double y, ConstRow x, const Vector& theta, Eigen::Ref<Matrix> out) {
      out.setZero();
      const double w = -spec.family.residual_derivative(y, spec.linear_predictor(arm, x, theta));
      const auto a = static_cast<Eigen::Index>(spec.alpha_index(arm));
      const auto off = static_cast<Eigen::Index>(spec.beta_offset(arm));
      const auto dd = static_cast<Eigen::Index>(spec.d);
      out(a, a) = w;
      for (Eigen::Index k = 0; k < dd; ++k) {
        const double xk = x[static_cast<std::size_t>(k)];
        out(a, off + k) += w * xk;
        out(off + k, a) += w * xk;
        for (Eigen::Index l = 0; l < dd; ++l) out(off + k, off + l) += w * xk * x[static_cast<std::size_t>(l)];
      }
    };
    LossFn loss = [spec, arm](double y, ConstRow x, const Vector& theta) {
      return spec.family.loss(y, spec.linear_predictor(arm, x, theta));
    };
    if (arm == 1) {
      f.psi1 = std::move(psi);
      f.jac1 = std::move(jac);
      f.loss1 = std::move(loss);
    } else {
      f.psi0 = std::move(psi);
      f.jac0 = std::move(jac);
      f.loss0 = std::move(loss);
    }
  }
  return f;
}

std::pair<Vector, Vector> canonical_q_vectors(const MeanSpec& spec, const Vector& theta) {
  if (!spec.family.canonical()) {
    throw UnsupportedError("canonical_q_vectors: " + spec.family.name() +
                           " with log link is not canonical; its scores admit no q-vectors");
  }
  if (static_cast<std::size_t>(theta.size()) != spec.dim()) {
    throw DimensionError("canonical_q_vectors: theta has wrong length");
  }
  Vector q1 = Vector::Zero(theta.size());
  Vector q0 = Vector::Zero(theta.size());
  q1[static_cast<Eigen::Index>(spec.alpha_index(1))] = -1.0;
  q0[static_cast<Eigen::Index>(spec.alpha_index(0))] = -1.0;
  return {q1, q0};
}

std::string family_name(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::gaussian:
      return "gaussian";
    case FamilyKind::binomial:
      return "binomial";
    case FamilyKind::poisson:
      return "poisson";
    case FamilyKind::negbin:
      return "negbin";
  }
  return "?";
}

FamilyKind parse_family(const std::string& text) {
  if (text == "gaussian" || text == "linear" || text == "identity") return FamilyKind::gaussian;
  if (text == "binomial" || text == "logistic" || text == "logit") return FamilyKind::binomial;
  if (text == "poisson") return FamilyKind::poisson;
  if (text == "negbin" || text == "nbin" || text == "negative-binomial") return FamilyKind::negbin;
  throw ArgumentError("unknown family '" + text + "' (expected gaussian, binomial, poisson or negbin)");
}

ModelSpec parse_model_spec(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  if (parts.empty() || parts[0].empty()) throw ArgumentError("empty model specification");
  ModelSpec out;
  out.family = parse_family(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p == "interact" || p == "interaction") {
      out.interaction = true;
    } else if (p == "nointeract" || p == "additive") {
      out.interaction = false;
    } else if (p.rfind("kappa=", 0) == 0) {
      try {
        std::size_t used = 0;
        const double k = std::stod(p.substr(6), &used);
        if (used != p.size() - 6 || !(k > 0.0)) throw ArgumentError("");
        out.kappa = k;
      } catch (const std::exception&) {
        throw ArgumentError("model specification '" + text + "': kappa must be a positive real");
      }
    } else {
      throw ArgumentError("model specification '" + text + "': unknown option '" + p + "'");
    }
  }
  if (out.kappa && out.family != FamilyKind::negbin) {
    throw ArgumentError("model specification '" + text + "': kappa applies to negbin only");
  }
  return out;
}

MeanForm linear_form(std::size_t d) {
  MeanForm h;
  h.dim = d + 1;
  h.has_intercept = true;
  h.name = "linear";
  h.value = [d](ConstRow x, std::span<const double> phi) {
    double v = phi[0];
    for (std::size_t k = 0; k < d; ++k) v += phi[k + 1] * x[k];
    return v;
  };
  h.gradient = [d](ConstRow x, std::span<const double>, Eigen::Ref<Vector> g) {
    g[0] = 1.0;
    for (std::size_t k = 0; k < d; ++k) g[static_cast<Eigen::Index>(k + 1)] = x[k];
  };
  h.hessian = [](ConstRow, std::span<const double>, Eigen::Ref<Matrix> hess) { hess.setZero(); };
  return h;
}

MeanForm exp_form(std::size_t d, bool additive_intercept) {
  MeanForm h;
  const std::size_t off = additive_intercept ? 1 : 0;
  h.dim = d + 1 + off;
  h.has_intercept = additive_intercept;
  h.name = additive_intercept ? "intercept+exp" : "exp";
  auto eta = [d, off](ConstRow x, std::span<const double> phi) {
    double e = phi[off];
    for (std::size_t k = 0; k < d; ++k) e += phi[off + 1 + k] * x[k];
    return e;
  };
  h.value = [eta, off](ConstRow x, std::span<const double> phi) {
    return (off ? phi[0] : 0.0) + std::exp(clamp_eta(eta(x, phi)));
  };
  h.gradient = [eta, d, off](ConstRow x, std::span<const double> phi, Eigen::Ref<Vector> g) {
    const double e = eta(x, phi);
    const double m = inside_band(e) ? std::exp(e) : 0.0;
    if (off) g[0] = 1.0;
    g[static_cast<Eigen::Index>(off)] = m;
    for (std::size_t k = 0; k < d; ++k) g[static_cast<Eigen::Index>(off + 1 + k)] = m * x[k];
  };
  h.hessian = [eta, d, off](ConstRow x, std::span<const double> phi, Eigen::Ref<Matrix> hess) {
    hess.setZero();
    const double e = eta(x, phi);
    if (!inside_band(e)) return;
    const double m = std::exp(e);
    for (std::size_t a = 0; a <= d; ++a) {
      const double xa = a == 0 ? 1.0 : x[a - 1];
      for (std::size_t b = 0; b <= d; ++b) {
        const double xb = b == 0 ? 1.0 : x[b - 1];
        hess(static_cast<Eigen::Index>(off + a), static_cast<Eigen::Index>(off + b)) = m * xa * xb;
      }
    }
  };
  return h;
}

ArmLayout default_layout(const MeanForm& h1, const MeanForm& h0) {
  return ArmLayout{ParamSlice{0, h1.dim}, ParamSlice{h1.dim, h0.dim}, h1.dim + h0.dim};
}

Vector form_predictions(const MeanForm& h, const ParamSlice& slice, const CovariateMatrix& x, const Vector& theta) {
  if (slice.offset + slice.size > static_cast<std::size_t>(theta.size()) || slice.size != h.dim) {
    throw DimensionError("form_predictions: parameter slice does not match the form");
  }
  const std::span<const double> phi(theta.data() + slice.offset, slice.size);
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out[i] = h.value(ConstRow(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())), phi);
  }
  return out;
}

namespace {

void check_layout(const MeanForm& h1, const MeanForm& h0, const ArmLayout& layout) {
  const auto& s1 = layout.arm1;
  const auto& s0 = layout.arm0;
  if (s1.size != h1.dim || s0.size != h0.dim) {
    throw PreconditionError("squared_loss_estfun: slice sizes do not match the adjustment forms");
  }
  if (s1.offset + s1.size > layout.dim || s0.offset + s0.size > layout.dim) {
    throw PreconditionError("squared_loss_estfun: slice outside the parameter vector");
  }
  const bool disjoint = s1.offset + s1.size <= s0.offset || s0.offset + s0.size <= s1.offset;
  if (!disjoint) {
    throw PreconditionError("squared_loss_estfun: arm-specific forms must depend on disjoint parameters");
  }
  if (s1.size + s0.size != layout.dim) {
    throw PreconditionError("squared_loss_estfun: slices must cover the parameter vector exactly");
  }
  if (!h1.has_intercept || !h0.has_intercept) {
    throw PreconditionError("squared_loss_estfun: each adjustment form must include an intercept");
  }
}

}  // namespace

EstimatingFunction squared_loss_estfun(const MeanForm& h1, const MeanForm& h0, const ArmLayout& layout) {
  check_layout(h1, h0, layout);
  EstimatingFunction f;
  f.dim = layout.dim;
  f.name = "squared loss (" + h1.name + ", " + h0.name + ")";
  for (int arm : {1, 0}) {
    const MeanForm h = arm == 1 ? h1 : h0;
    const ParamSlice s = arm == 1 ? layout.arm1 : layout.arm0;
    const auto off = static_cast<Eigen::Index>(s.offset);
    const auto k = static_cast<Eigen::Index>(s.size);
    ScoreFn psi = [h, s, off, k](double y, ConstRow x, const Vector& theta, Eigen::Ref<Vector> out) {
      out.setZero();
      const std::span<const double> phi(theta.data() + s.offset, s.size);
      const double resid = y - h.value(x, phi);
      auto seg = out.segment(off, k);
      h.gradient(x, phi, seg);
      seg *= -2.0 * resid;
    };
    JacobianFn jac = [h, s, off, k](double y, ConstRow x, const Vector& theta, Eigen::Ref<Matrix> out) {
      out.setZero();
      const std::span<const double> phi(theta.data() + s.offset, s.size);
      const double resid = y - h.value(x, phi);
      Vector g(k);
      h.gradient(x, phi, g);
      Matrix hess(k, k);
      if (h.hessian) {
        h.hessian(x, phi, hess);
      } else {
        std::vector<double> work(phi.begin(), phi.end());
        Vector gp(k), gm(k);
        for (Eigen::Index j = 0; j < k; ++j) {
          const double step = 1e-6 * (1.0 + std::abs(work[static_cast<std::size_t>(j)]));
          const double saved = work[static_cast<std::size_t>(j)];
          work[static_cast<std::size_t>(j)] = saved + step;
          h.gradient(x, work, gp);
          work[static_cast<std::size_t>(j)] = saved - step;
          h.gradient(x, work, gm);
          work[static_cast<std::size_t>(j)] = saved;
          hess.col(j) = (gp - gm) / (2.0 * step);
        }
      }
      out.block(off, off, k, k) = 2.0 * (g * g.transpose() - resid * hess);
    };
    LossFn loss = [h, s](double y, ConstRow x, const Vector& theta) {
      const double resid = y - h.value(x, std::span<const double>(theta.data() + s.offset, s.size));
      return resid * resid;
    };
    if (arm == 1) {
      f.psi1 = std::move(psi);
      f.jac1 = std::move(jac);
      f.loss1 = std::move(loss);
    } else {
      f.psi0 = std::move(psi);
      f.jac0 = std::move(jac);
      f.loss0 = std::move(loss);
    }
  }
  return f;
}

EstimatingFunction squared_loss_estfun(const MeanForm& h1, const MeanForm& h0) {
  return squared_loss_estfun(h1, h0, default_layout(h1, h0));
}

}  // namespace designz
