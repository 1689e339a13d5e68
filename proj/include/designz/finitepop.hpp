#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "designz/rng.hpp"

namespace designz {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Covariates: one row per unit. d = 0 columns is legal.
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Covariate row of a single unit.
using ConstRow = std::span<const double>;

inline constexpr unsigned long long kDefaultEnumerationCap = 1'000'000ULL;

/// Oracle finite population: both potential outcomes and covariates of every unit.
class PotentialTable {
 public:
  PotentialTable(Vector y1, Vector y0, CovariateMatrix x);
  /// Population without covariates.
  PotentialTable(Vector y1, Vector y0);

  std::size_t n() const { return static_cast<std::size_t>(y1_.size()); }
  std::size_t d() const { return static_cast<std::size_t>(x_.cols()); }
  const Vector& y1() const { return y1_; }
  const Vector& y0() const { return y0_; }
  const CovariateMatrix& x() const { return x_; }
  ConstRow row(std::size_t i) const { return {x_.data() + i * d(), d()}; }

  /// Individual effects Y_i(1) - Y_i(0).
  Vector effects() const { return y1_ - y0_; }

 private:
  Vector y1_;
  Vector y0_;
  CovariateMatrix x_;
};

/// Treatment indicators of a completely randomized experiment.
class Assignment {
 public:
  explicit Assignment(std::vector<std::uint8_t> z);

  std::size_t size() const { return z_.size(); }
  std::size_t n1() const { return n1_; }
  std::size_t n0() const { return z_.size() - n1_; }
  bool treated(std::size_t i) const { return z_[i] != 0; }
  const std::vector<std::uint8_t>& z() const { return z_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::vector<std::uint8_t> z_;
  std::size_t n1_ = 0;
};

/// Observed experiment: assignment, observed outcome and covariates.
class Dataset {
 public:
  Dataset(Assignment z, Vector y, CovariateMatrix x);

  std::size_t n() const { return z_.size(); }
  std::size_t d() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t n1() const { return z_.n1(); }
  std::size_t n0() const { return z_.n0(); }
  std::size_t n_arm(int arm) const { return arm == 1 ? n1() : n0(); }
  double r1() const { return static_cast<double>(n1()) / static_cast<double>(n()); }
  double r0() const { return static_cast<double>(n0()) / static_cast<double>(n()); }
  double r_arm(int arm) const { return arm == 1 ? r1() : r0(); }

  const Assignment& assignment() const { return z_; }
  int arm(std::size_t i) const { return z_.treated(i) ? 1 : 0; }
  const Vector& y() const { return y_; }
  const CovariateMatrix& x() const { return x_; }
  ConstRow row(std::size_t i) const { return {x_.data() + i * d(), d()}; }

  /// Unit indices in the given arm, in increasing order.
  const std::vector<std::size_t>& units(int arm) const { return arm == 1 ? treated_ : control_; }

  /// Same assignment and outcomes with a different covariate matrix.
  Dataset with_covariates(CovariateMatrix x) const;
  /// Same assignment and covariates with a different outcome vector.
  Dataset with_outcomes(Vector y) const;

 private:
  Assignment z_;
  Vector y_;
  CovariateMatrix x_;
  std::vector<std::size_t> treated_;
  std::vector<std::size_t> control_;
};

/// Observed data implied by an assignment: Y_i = Z_i Y_i(1) + (1 - Z_i) Y_i(0).
Dataset observe(const PotentialTable& pot, const Assignment& a);

/// Finite-population mean (divisor N).
double fp_mean(std::span<const double> v);
/// Finite-population variance (divisor N - 1).
double fp_var(std::span<const double> v);
/// Finite-population covariance (divisor N - 1).
double fp_cov(std::span<const double> a, std::span<const double> b);
/// Covariance matrix of the rows of `rows` (divisor rows - 1).
Matrix fp_cov_matrix(const Matrix& rows);

inline double fp_mean(const Vector& v) { return fp_mean(std::span<const double>(v.data(), v.size())); }
inline double fp_var(const Vector& v) { return fp_var(std::span<const double>(v.data(), v.size())); }

struct GroupMoments {
  double mean = 0.0;
  double var = 0.0;
};

/// Within-arm mean E_N^z and variance Var_N^z (divisor n_z - 1).
GroupMoments group_moments(const Dataset& d, int arm, std::span<const double> values);
/// Within-arm mean only; needs a single unit.
double group_mean(const Dataset& d, int arm, std::span<const double> values);

/// C(n, k), saturating at ULLONG_MAX.
unsigned long long binomial_coefficient(std::size_t n, std::size_t k);

/// The assignment of rank `rank` in lexicographic order among the C(N, n1) assignments.
Assignment assignment_at(std::size_t n, std::size_t n1, unsigned long long rank);

/// Visits every assignment with n1 treated units exactly once, in lexicographic order of z.
void for_each_assignment(std::size_t n, std::size_t n1, const std::function<void(const Assignment&)>& visit,
                         unsigned long long cap = kDefaultEnumerationCap);

/// All assignments with n1 treated units, in lexicographic order of z.
std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n1,
                                              unsigned long long cap = kDefaultEnumerationCap);

/// Uniform draw over the C(N, n1) assignments (Fisher-Yates shuffle of n1 ones).
Assignment draw_assignment(Rng& rng, std::size_t n, std::size_t n1);

}  // namespace designz
