#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "designz/estfun.hpp"
#include "designz/finitepop.hpp"
#include "designz/rng.hpp"

namespace designz::testing {

inline CovariateMatrix random_covariates(Rng& rng, std::size_t n, std::size_t d) {
  CovariateMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  return x;
}

inline Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
  return v;
}

/// Outcome drawn from a family with mean depending mildly on x; arm 1 shifted.
inline double draw_outcome(Rng& rng, FamilyKind family, ConstRow x, int arm) {
  double eta = arm == 1 ? 0.3 : -0.2;
  for (std::size_t j = 0; j < x.size(); ++j) eta += (arm == 1 ? 0.4 : -0.3) * x[j] / static_cast<double>(j + 1);
  switch (family) {
    case FamilyKind::gaussian:
      return eta + rng.normal();
    case FamilyKind::binomial:
      return rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    case FamilyKind::poisson:
    case FamilyKind::negbin: {
      const double mu = std::exp(1.0 + 0.5 * eta);
      // Knuth's product-of-uniforms Poisson draw; means are small here.
      const double limit = std::exp(-mu);
      double prod = rng.uniform();
      double k = 0.0;
      while (prod > limit) {
        prod *= rng.uniform();
        k += 1.0;
      }
      return k;
    }
  }
  return 0.0;
}

inline PotentialTable random_population(Rng& rng, std::size_t n, std::size_t d, FamilyKind family) {
  CovariateMatrix x = random_covariates(rng, n, d);
  Vector y1(static_cast<Eigen::Index>(n));
  Vector y0(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    ConstRow row(x.data() + i * d, d);
    y1[static_cast<Eigen::Index>(i)] = draw_outcome(rng, family, row, 1);
    y0[static_cast<Eigen::Index>(i)] = draw_outcome(rng, family, row, 0);
  }
  return PotentialTable(std::move(y1), std::move(y0), std::move(x));
}

/// Binary potential outcomes whose effects tau in {-1, 0, 1} follow the ternary working
/// model with v = (1, x)'beta; tau = 0 units get Y(1) = Y(0), equal to 1 with probability 1/2.
inline PotentialTable ternary_population(Rng& rng, std::size_t n, const Vector& beta, double gamma) {
  const std::size_t d = static_cast<std::size_t>(beta.size()) - 1;
  CovariateMatrix x = random_covariates(rng, n, d);
  Vector y1(static_cast<Eigen::Index>(n));
  Vector y0(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    double v = beta[0];
    for (std::size_t j = 0; j < d; ++j) v += beta[static_cast<Eigen::Index>(j + 1)] * x(k, static_cast<Eigen::Index>(j));
    const double up = std::exp(v), down = std::exp(-v);
    const double u = rng.uniform() * (up + down + gamma);
    if (u < up) {
      y1[k] = 1.0;
      y0[k] = 0.0;
    } else if (u < up + down) {
      y1[k] = 0.0;
      y0[k] = 1.0;
    } else {
      y1[k] = y0[k] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
  }
  return PotentialTable(std::move(y1), std::move(y0), std::move(x));
}

inline Dataset random_dataset(Rng& rng, std::size_t n, std::size_t n1, std::size_t d, FamilyKind family) {
  const PotentialTable pot = random_population(rng, n, d, family);
  return observe(pot, draw_assignment(rng, n, n1));
}

inline Assignment make_assignment(std::initializer_list<int> z) {
  std::vector<std::uint8_t> v;
  for (int e : z) v.push_back(static_cast<std::uint8_t>(e));
  return Assignment(std::move(v));
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

inline double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace designz::testing
