#include "designz/finitepop.hpp"

#include <algorithm>
#include <climits>
#include <numeric>
#include <string>

#include "designz/errors.hpp"

namespace designz {

PotentialTable::PotentialTable(Vector y1, Vector y0, CovariateMatrix x)
    : y1_(std::move(y1)), y0_(std::move(y0)), x_(std::move(x)) {
  if (y1_.size() != y0_.size() || x_.rows() != y1_.size()) {
    throw DimensionError("potential table: y1, y0 and x must have the same number of units (got " +
                         std::to_string(y1_.size()) + ", " + std::to_string(y0_.size()) + ", " +
                         std::to_string(x_.rows()) + ")");
  }
  if (y1_.size() < 2) throw DegenerateInputError("potential table: need at least 2 units");
}

PotentialTable::PotentialTable(Vector y1, Vector y0)
    : PotentialTable(y1, y0, CovariateMatrix(y1.size(), 0)) {}

Assignment::Assignment(std::vector<std::uint8_t> z) : z_(std::move(z)) {
  for (std::size_t i = 0; i < z_.size(); ++i) {
    if (z_[i] > 1) throw ArgumentError("assignment: entry " + std::to_string(i) + " is not 0 or 1");
    n1_ += z_[i];
  }
  if (n1_ < 1 || n1_ + 1 > z_.size()) {
    throw ArgumentError("assignment: need 1 <= n1 <= N-1 (n1=" + std::to_string(n1_) +
                        ", N=" + std::to_string(z_.size()) + ")");
  }
}

Dataset::Dataset(Assignment z, Vector y, CovariateMatrix x) : z_(std::move(z)), y_(std::move(y)), x_(std::move(x)) {
  if (static_cast<std::size_t>(y_.size()) != z_.size() || static_cast<std::size_t>(x_.rows()) != z_.size()) {
    throw DimensionError("dataset: z, y and x must have the same number of units (got " +
                         std::to_string(z_.size()) + ", " + std::to_string(y_.size()) + ", " +
                         std::to_string(x_.rows()) + ")");
  }
  treated_.reserve(z_.n1());
  control_.reserve(z_.n0());
  for (std::size_t i = 0; i < z_.size(); ++i) (z_.treated(i) ? treated_ : control_).push_back(i);
}

Dataset Dataset::with_covariates(CovariateMatrix x) const { return Dataset(z_, y_, std::move(x)); }

Dataset Dataset::with_outcomes(Vector y) const { return Dataset(z_, std::move(y), x_); }

Dataset observe(const PotentialTable& pot, const Assignment& a) {
  if (a.size() != pot.n()) {
    throw DimensionError("observe: assignment has " + std::to_string(a.size()) + " units, population has " +
                         std::to_string(pot.n()));
  }
  Vector y(pot.n());
  for (std::size_t i = 0; i < pot.n(); ++i) y[i] = a.treated(i) ? pot.y1()[i] : pot.y0()[i];
  return Dataset(a, std::move(y), pot.x());
}

double fp_mean(std::span<const double> v) {
  if (v.empty()) throw DegenerateInputError("fp_mean: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double fp_cov(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("fp_cov: length mismatch");
  if (a.size() < 2) throw DegenerateInputError("fp_cov: need at least 2 values");
  const double ma = fp_mean(a);
  const double mb = fp_mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

double fp_var(std::span<const double> v) {
  if (v.size() < 2) throw DegenerateInputError("fp_var: need at least 2 values");
  const double m = fp_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

Matrix fp_cov_matrix(const Matrix& rows) {
  if (rows.rows() < 2) throw DegenerateInputError("fp_cov_matrix: need at least 2 rows");
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Matrix centered = rows.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
}

double group_mean(const Dataset& d, int arm, std::span<const double> values) {
  if (values.size() != d.n()) throw DimensionError("group_mean: values must have one entry per unit");
  const auto& idx = d.units(arm);
  double s = 0.0;
  for (std::size_t i : idx) s += values[i];
  return s / static_cast<double>(idx.size());
}

GroupMoments group_moments(const Dataset& d, int arm, std::span<const double> values) {
  const auto& idx = d.units(arm);
  if (idx.size() < 2) {
    throw DegenerateInputError("group_moments: arm " + std::to_string(arm) + " has " + std::to_string(idx.size()) +
                               " unit(s); variance needs at least 2");
  }
  GroupMoments out;
  out.mean = group_mean(d, arm, values);
  double s = 0.0;
  for (std::size_t i : idx) s += (values[i] - out.mean) * (values[i] - out.mean);
  out.var = s / static_cast<double>(idx.size() - 1);
  return out;
}

unsigned long long binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned long long result = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // result * (n - k + i) / i is exact at every step.
    const unsigned long long num = n - k + i;
    const unsigned long long g = std::gcd(result, static_cast<unsigned long long>(i));
    const unsigned long long r = result / g;
    const unsigned long long den = i / g;
    const unsigned long long numr = num / den;
    if (numr != 0 && r > ULLONG_MAX / numr) return ULLONG_MAX;
    result = r * numr;
  }
  return result;
}

namespace {

void check_counts(std::size_t n, std::size_t n1) {
  if (n1 < 1 || n1 + 1 > n) {
    throw ArgumentError("need 1 <= n1 <= N-1 (n1=" + std::to_string(n1) + ", N=" + std::to_string(n) + ")");
  }
}

void check_cap(std::size_t n, std::size_t n1, unsigned long long cap) {
  const auto count = binomial_coefficient(n, n1);
  if (count > cap) {
    throw EnumerationTooLargeError("enumeration of C(" + std::to_string(n) + ", " + std::to_string(n1) +
                                       ") assignments exceeds the cap of " + std::to_string(cap),
                                   cap);
  }
}

}  // namespace

Assignment assignment_at(std::size_t n, std::size_t n1, unsigned long long rank) {
  check_counts(n, n1);
  if (rank >= binomial_coefficient(n, n1)) throw ArgumentError("assignment_at: rank out of range");
  std::vector<std::uint8_t> z(n, 0);
  std::size_t ones = n1;
  for (std::size_t i = 0; i < n && ones > 0; ++i) {
    // Completions that put a 0 at position i come first.
    const auto with_zero = binomial_coefficient(n - i - 1, ones);
    if (rank < with_zero) continue;
    z[i] = 1;
    rank -= with_zero;
    --ones;
  }
  return Assignment(std::move(z));
}

void for_each_assignment(std::size_t n, std::size_t n1, const std::function<void(const Assignment&)>& visit,
                         unsigned long long cap) {
  check_counts(n, n1);
  check_cap(n, n1, cap);
  std::vector<std::uint8_t> z(n, 0);
  std::fill(z.end() - static_cast<std::ptrdiff_t>(n1), z.end(), 1);
  do {
    visit(Assignment(z));
  } while (std::next_permutation(z.begin(), z.end()));
}

std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n1, unsigned long long cap) {
  std::vector<Assignment> out;
  for_each_assignment(
      n, n1, [&](const Assignment& a) { out.push_back(a); }, cap);
  return out;
}

Assignment draw_assignment(Rng& rng, std::size_t n, std::size_t n1) {
  check_counts(n, n1);
  std::vector<std::uint8_t> z(n, 0);
  std::fill(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(n1), 1);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(z[i], z[j]);
  }
  return Assignment(std::move(z));
}

}  // namespace designz
