#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "designz/errors.hpp"
#include "designz/estfun.hpp"
#include "designz/zestim.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace designz;
using designz::testing::make_assignment;
using designz::testing::vec;

namespace {

/// psi_z(y; theta) = y - theta for both arms.
EstimatingFunction common_mean() {
  EstimatingFunction f;
  f.dim = 1;
  f.name = "common-mean";
  auto psi = [](double y, ConstRow, const Vector& t, Eigen::Ref<Vector> out) { out[0] = y - t[0]; };
  auto jac = [](double, ConstRow, const Vector&, Eigen::Ref<Matrix> out) { out(0, 0) = -1.0; };
  f.psi1 = psi;
  f.psi0 = psi;
  f.jac1 = jac;
  f.jac0 = jac;
  return f;
}

Dataset no_covariates(std::initializer_list<int> z, std::initializer_list<double> y) {
  return Dataset(make_assignment(z), vec(y), CovariateMatrix(static_cast<Eigen::Index>(y.size()), 0));
}

}  // namespace

TEST(EmpiricalPsi, CommonMeanClosedForm) {
  const Dataset d = no_covariates({1, 1, 0, 0}, {1, 3, 0, 2});
  EXPECT_NEAR(empirical_psi(d, common_mean(), vec({1.5}))[0], 0.0, 1e-15);
  EXPECT_NEAR(empirical_psi(d, common_mean(), vec({0.0}))[0], 1.5, 1e-15);
}

TEST(EmpiricalPsi, EnumerationMeanIsPopulationPsi) {
  Rng rng(31);
  const PotentialTable pot = designz::testing::random_population(rng, 6, 1, FamilyKind::poisson);
  for (bool inter : {true, false}) {
    const EstimatingFunction f = glm_score_estfun(MeanSpec{GlmFamily::poisson(), inter, 1});
    for (int rep = 0; rep < 10; ++rep) {
      const Vector theta = designz::testing::random_vector(rng, f.dim, 0.5);
      const Vector avg = designz::testing::enumeration_mean_psi(pot, 3, f, theta);
      EXPECT_LT(designz::testing::max_abs_diff(avg, population_psi(pot, f, theta, 0.5)), 1e-12);
    }
  }
}

TEST(PopulationPsi, CommonMeanRoot) {
  const PotentialTable pot(vec({4, 6, 8, 2}), vec({1, 1, 2, 0}));
  const double r1 = 0.25;
  const double root = r1 * 5.0 + (1 - r1) * 1.0;
  EXPECT_NEAR(population_psi(pot, common_mean(), vec({root}), r1)[0], 0.0, 1e-15);
}

TEST(PopulationPsi, NullEffectIndependentOfShare) {
  Rng rng(32);
  const PotentialTable base = designz::testing::random_population(rng, 10, 2, FamilyKind::gaussian);
  const PotentialTable pot(base.y1(), base.y1(), base.x());
  const EstimatingFunction f = common_mean();
  for (double t : {-1.0, 0.2, 3.0}) {
    const double single = fp_mean(base.y1()) - t;
    for (double r1 : {0.1, 0.3, 0.7}) EXPECT_NEAR(population_psi(pot, f, vec({t}), r1)[0], single, 1e-14);
  }
}

TEST(Solve, CommonMeanConvergesFast) {
  const Dataset d = no_covariates({1, 0, 1, 0, 0}, {4, 1, 2, 3, 5});
  const ZFit fit = solve(d, common_mean(), vec({0.0}));
  ASSERT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 2);
  EXPECT_NEAR(fit.theta_hat[0], 3.0, 1e-12);
  EXPECT_LE(fit.psi_norm, 1e-8);
}

TEST(Solve, GaussianScoreIsPerArmOls) {
  Rng rng(33);
  const Dataset d = designz::testing::random_dataset(rng, 80, 30, 2, FamilyKind::gaussian);
  const MeanSpec spec{GlmFamily::gaussian(), true, 2};
  const ZFit fit = solve(d, glm_score_estfun(spec), Vector::Zero(6));
  ASSERT_TRUE(fit.converged);
  for (int arm : {1, 0}) {
    const auto& idx = d.units(arm);
    Matrix xt(static_cast<Eigen::Index>(idx.size()), 3);
    Vector yt(xt.rows());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      const auto i = static_cast<Eigen::Index>(idx[k]);
      xt.row(r) << 1.0, d.x()(i, 0), d.x()(i, 1);
      yt[r] = d.y()[i];
    }
    const Vector ols = xt.colPivHouseholderQr().solve(yt);
    const auto a = static_cast<Eigen::Index>(spec.alpha_index(arm));
    const auto b = static_cast<Eigen::Index>(spec.beta_offset(arm));
    EXPECT_NEAR(fit.theta_hat[a], ols[0], 1e-9);
    EXPECT_NEAR(fit.theta_hat[b], ols[1], 1e-9);
    EXPECT_NEAR(fit.theta_hat[b + 1], ols[2], 1e-9);
  }
}

TEST(Solve, SeparableLogisticDoesNotConverge) {
  CovariateMatrix x(8, 1);
  x << -2, -1.5, -1, -0.5, 0.5, 1, 1.5, 2;
  const Dataset d(make_assignment({1, 0, 1, 0, 1, 0, 1, 0}), vec({0, 0, 0, 0, 1, 1, 1, 1}), x);
  const ZFit fit = solve(d, glm_score_estfun(MeanSpec{GlmFamily::binomial(), true, 1}), Vector::Zero(4));
  EXPECT_FALSE(fit.converged);
  EXPECT_NE(fit.diagnostic.find("diverging"), std::string::npos) << fit.diagnostic;
  EXPECT_FALSE(fit.has_sigma());
}

TEST(Solve, NonFiniteStartIsReported) {
  const Dataset d = no_covariates({1, 0, 1, 0}, {1, 2, 3, 4});
  const ZFit fit = solve(d, common_mean(), vec({std::nan("")}));
  EXPECT_FALSE(fit.converged);
  EXPECT_FALSE(fit.diagnostic.empty());
}

TEST(Solve, RootCertificateAndJacobianCheck) {
  Rng rng(34);
  for (FamilyKind k : {FamilyKind::gaussian, FamilyKind::binomial, FamilyKind::poisson}) {
    const Dataset d = designz::testing::random_dataset(rng, 200, 90, 2, k);
    const EstimatingFunction f = glm_score_estfun(MeanSpec{
        k == FamilyKind::binomial ? GlmFamily::binomial()
                                  : (k == FamilyKind::poisson ? GlmFamily::poisson() : GlmFamily::gaussian()),
        true, 2});
    const ZFit fit = solve(d, f, Vector::Zero(6));
    ASSERT_TRUE(fit.converged) << fit.diagnostic;
    EXPECT_LE(empirical_psi(d, f, fit.theta_hat).cwiseAbs().maxCoeff(), SolveOptions{}.tol);
    EXPECT_LT(designz::testing::relative_error(fit.jac_at_root, numeric_jacobian(d, f, fit.theta_hat)), 1e-6);
  }
}

TEST(Solve, PermutationEquivariance) {
  Rng rng(35);
  const Dataset d = designz::testing::random_dataset(rng, 120, 50, 2, FamilyKind::poisson);
  std::vector<std::size_t> perm(d.n());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[70]);
  std::vector<std::uint8_t> z(d.n());
  Vector y(static_cast<Eigen::Index>(d.n()));
  CovariateMatrix x(static_cast<Eigen::Index>(d.n()), 2);
  for (std::size_t k = 0; k < d.n(); ++k) {
    const auto i = static_cast<Eigen::Index>(perm[k]);
    z[k] = d.assignment().z()[perm[k]];
    y[static_cast<Eigen::Index>(k)] = d.y()[i];
    x.row(static_cast<Eigen::Index>(k)) = d.x().row(i);
  }
  const Dataset p(Assignment(z), y, x);
  const EstimatingFunction f = glm_score_estfun(MeanSpec{GlmFamily::poisson(), true, 2});
  const ZFit a = solve(d, f, Vector::Zero(6));
  const ZFit b = solve(p, f, Vector::Zero(6));
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_LT(designz::testing::max_abs_diff(a.theta_hat, b.theta_hat), 1e-12);
  EXPECT_LT((a.sigma_hat - b.sigma_hat).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sandwich, CommonMeanFormula) {
  // Var^1 = Var^0 = 1 with r1 = r0 = 1/2 gives Sigma = 1.
  const Dataset d = no_covariates({1, 1, 1, 0, 0, 0}, {1, 2, 3, 4, 5, 6});
  const ZFit fit = solve(d, common_mean(), vec({0.0}));
  ASSERT_TRUE(fit.has_sigma());
  EXPECT_NEAR(fit.sigma_hat(0, 0), 1.0, 1e-12);
}

TEST(Sandwich, CommonMeanUnequalArms) {
  Rng rng(36);
  const Dataset d = designz::testing::random_dataset(rng, 30, 11, 0, FamilyKind::gaussian);
  const ZFit fit = solve(d, common_mean(), vec({0.0}));
  const Vector& y = d.y();
  const double v1 = group_moments(d, 1, {y.data(), d.n()}).var;
  const double v0 = group_moments(d, 0, {y.data(), d.n()}).var;
  EXPECT_NEAR(fit.sigma_hat(0, 0), d.r0() * v1 + d.r1() * v0, 1e-12);
}

TEST(Sandwich, ConstantOutcomesGiveZero) {
  const Dataset d = no_covariates({1, 0, 1, 0, 1}, {2, 7, 2, 7, 2});
  const EstimatingFunction f = glm_score_estfun(MeanSpec{GlmFamily::gaussian(), true, 0});
  const ZFit fit = solve(d, f, Vector::Zero(2));
  ASSERT_TRUE(fit.has_sigma());
  EXPECT_EQ(fit.sigma_hat.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sandwich, Preconditions) {
  const Dataset d = no_covariates({1, 0, 0, 0}, {1, 2, 3, 4});
  ZFit fit = solve(d, common_mean(), vec({0.0}), SolveOptions{.with_sandwich = false});
  ASSERT_TRUE(fit.converged);
  EXPECT_THROW(sandwich(d, common_mean(), fit), DegenerateInputError);
  fit.converged = false;
  EXPECT_THROW(sandwich(d, common_mean(), fit), PreconditionError);
}

TEST(Sandwich, SingularBreadNamesDirections) {
  EstimatingFunction f;
  f.dim = 2;
  auto psi = [](double y, ConstRow, const Vector& t, Eigen::Ref<Vector> out) {
    out[0] = y - t[0] - t[1];
    out[1] = 2.0 * (y - t[0] - t[1]);
  };
  f.psi1 = psi;
  f.psi0 = psi;
  const Dataset d = no_covariates({1, 0, 1, 0}, {1, 2, 3, 4});
  ZFit fit;
  fit.converged = true;
  fit.theta_hat = vec({2.5, 0.0});
  try {
    sandwich(d, f, fit);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_NE(std::string(e.what()).find("null directions"), std::string::npos);
  }
}

TEST(Sandwich, SymmetricPsdOnRandomFits) {
  Rng rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset d = designz::testing::random_dataset(rng, 100, 40 + rep, 3, FamilyKind::poisson);
    const ZFit fit = solve(d, glm_score_estfun(MeanSpec{GlmFamily::poisson(), rep % 2 == 0, 3}),
                           Vector::Zero(rep % 2 == 0 ? 8 : 5));
    ASSERT_TRUE(fit.has_sigma());
    EXPECT_TRUE(designz::testing::symmetric_psd(fit.sigma_hat));
  }
}

TEST(Sandwich, NullEffectMonteCarloCalibration) {
  Rng pop_rng(38);
  const PotentialTable base = designz::testing::random_population(pop_rng, 1000, 2, FamilyKind::gaussian);
  const PotentialTable pot(base.y0(), base.y0(), base.x());
  const MeanSpec spec{GlmFamily::gaussian(), true, 2};
  const EstimatingFunction f = glm_score_estfun(spec);
  Vector v = Vector::Zero(6);
  v[0] = 1.0;
  v[1] = -1.0;
  const int reps = 1000;
  std::vector<double> est;
  double mean_sigma = 0.0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = Rng::for_stream(38, static_cast<std::uint64_t>(r));
    const ZFit fit = solve(observe(pot, draw_assignment(rng, 1000, 500)), f, Vector::Zero(6));
    ASSERT_TRUE(fit.has_sigma());
    est.push_back(v.dot(fit.theta_hat));
    mean_sigma += v.dot(fit.sigma_hat * v) / reps;
  }
  const Vector e = Eigen::Map<const Vector>(est.data(), reps);
  const double nvar = 1000.0 * fp_var(e);
  const double mc_error = nvar * std::sqrt(2.0 / (reps - 1));
  EXPECT_LE(nvar, mean_sigma + 3.0 * mc_error);
  EXPECT_NEAR(nvar / mean_sigma, 1.0, 0.10);
}

TEST(Wald, ScalarInterval) {
  ZFit fit;
  fit.converged = true;
  fit.theta_hat = vec({0.0});
  fit.sigma_hat = Matrix::Ones(1, 1);
  fit.n = 100;
  const WaldSet w = wald_set(fit, Matrix::Ones(1, 1), 0.05);
  ASSERT_EQ(w.intervals.size(), 1u);
  EXPECT_NEAR(w.intervals[0].high, 0.195996398454005, 1e-10);
  EXPECT_NEAR(w.intervals[0].low, -0.195996398454005, 1e-10);
  EXPECT_NEAR(w.chi2_crit, 3.841458820694124, 1e-10);
  EXPECT_NEAR(w.chi2_crit, std::pow(normal_quantile(0.975), 2), 1e-10);
}

TEST(Wald, ScalarSetEqualsInterval) {
  ZFit fit;
  fit.converged = true;
  fit.theta_hat = vec({0.7, -0.3});
  fit.sigma_hat = (Matrix(2, 2) << 2.0, 0.4, 0.4, 1.0).finished();
  fit.n = 50;
  const Matrix v = (Matrix(2, 1) << 1.0, -1.0).finished();
  const WaldSet w = wald_set(fit, v, 0.1);
  const double half = normal_quantile(0.95) * std::sqrt((2.0 + 1.0 - 0.8) / 50.0);
  EXPECT_NEAR(w.intervals[0].low, 1.0 - half, 1e-10);
  EXPECT_NEAR(w.intervals[0].high, 1.0 + half, 1e-10);
  EXPECT_TRUE(w.contains(vec({1.0 + 0.999 * half})));
  EXPECT_FALSE(w.contains(vec({1.0 + 1.001 * half})));
}

TEST(Wald, CenterAlwaysInside) {
  Rng rng(39);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset d = designz::testing::random_dataset(rng, 60, 30, 2, FamilyKind::gaussian);
    const ZFit fit = solve(d, glm_score_estfun(MeanSpec{GlmFamily::gaussian(), true, 2}), Vector::Zero(6));
    Matrix v(6, 2);
    for (int i = 0; i < 12; ++i) v(i % 6, i / 6) = rng.normal();
    const WaldSet w = wald_set(fit, v, 0.05);
    EXPECT_TRUE(w.contains(w.estimate));
    EXPECT_NEAR(w.chi2_crit, chi2_quantile(2, 0.95), 1e-12);
  }
}

TEST(Wald, ArgumentErrors) {
  ZFit fit;
  fit.converged = true;
  fit.theta_hat = vec({0.0, 1.0});
  fit.sigma_hat = Matrix::Identity(2, 2);
  fit.n = 10;
  const Matrix v = (Matrix(2, 2) << 1, 2, 1, 2).finished();
  EXPECT_THROW(wald_set(fit, v, 0.05), ArgumentError);
  EXPECT_THROW(wald_set(fit, Matrix::Identity(2, 2), 1.5), ArgumentError);
  ZFit bare = fit;
  bare.sigma_hat.resize(0, 0);
  EXPECT_THROW(wald_set(bare, Matrix::Identity(2, 2), 0.05), PreconditionError);
}

TEST(Serialization, ZFitJson) {
  const Dataset d = no_covariates({1, 1, 1, 0, 0, 0}, {1, 2, 3, 4, 5, 6});
  const std::string s = zfit_to_json(solve(d, common_mean(), vec({0.0})));
  for (const char* key : {"\"theta\"", "\"sigma\"", "\"converged\"", "\"iterations\"", "\"psi_norm\""}) {
    EXPECT_NE(s.find(key), std::string::npos) << key;
  }
}
