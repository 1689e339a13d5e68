#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "designz/ate.hpp"
#include "designz/errors.hpp"
#include "designz/estfun.hpp"
#include "designz/simlab.hpp"
#include "designz/zestim.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace designz;
using designz::testing::make_assignment;
using designz::testing::vec;

namespace {

MeanSpec spec_for(FamilyKind k, bool inter, std::size_t d) {
  switch (k) {
    case FamilyKind::binomial:
      return {GlmFamily::binomial(), inter, d};
    case FamilyKind::poisson:
      return {GlmFamily::poisson(), inter, d};
    default:
      return {GlmFamily::gaussian(), inter, d};
  }
}

GScale natural_scale(FamilyKind k) {
  switch (k) {
    case FamilyKind::binomial:
      return GScale(GKind::logit);
    case FamilyKind::poisson:
      return GScale(GKind::log);
    default:
      return GScale(GKind::identity);
  }
}

}  // namespace

TEST(GScaleOps, ValuesDomainsAndDerivatives) {
  const GScale id(GKind::identity), lg(GKind::log), lt(GKind::logit);
  EXPECT_EQ(id.g(-3.0), -3.0);
  EXPECT_EQ(id.gdot(-3.0), 1.0);
  EXPECT_THROW(lg.g(0.0), DomainError);
  EXPECT_THROW(lt.g(1.0), DomainError);
  EXPECT_NEAR(lt.g(0.5), 0.0, 1e-15);
  for (const GScale& g : {id, lg, lt}) {
    for (double y : {0.05, 0.3, 0.5, 0.81, 0.97}) {
      const double h = 1e-6 * y;
      const double fd = (g.g(y + h) - g.g(y - h)) / (2 * h);
      EXPECT_NEAR(g.gdot(y), fd, 1e-8 * std::abs(fd)) << g.name();
    }
  }
  EXPECT_EQ(GScale::parse("log").kind(), GKind::log);
  EXPECT_THROW(GScale::parse("sqrt"), ArgumentError);
}

TEST(Labels, EstimatorKinds) {
  EXPECT_EQ(estimator_label(EstimatorKind::adjusted_imputation), "AI");
  EXPECT_EQ(parse_estimator_kind("ma"), EstimatorKind::model_assisted);
  EXPECT_EQ(parse_estimator_kind("B"), EstimatorKind::model_based);
  EXPECT_THROW(parse_estimator_kind("zz"), ArgumentError);
}

TEST(ConfidenceInterval, Arithmetic) {
  AteResult r;
  r.tau_hat = 0.4;
  r.n = 100;
  r.variance_hat = 1.0;
  const Interval ci = ate_confidence_interval(r, 0.05);
  EXPECT_NEAR(ci.low, 0.4 - 0.195996398454005, 1e-12);
  EXPECT_NEAR(ci.high, 0.4 + 0.195996398454005, 1e-12);
  r.variance_hat = 0.0;
  const Interval point = r.ci(0.05);
  EXPECT_EQ(point.low, 0.4);
  EXPECT_EQ(point.high, 0.4);
}

TEST(ModelBased, GaussianIdentityClosedForm) {
  Rng rng(41);
  const Dataset d = designz::testing::random_dataset(rng, 50, 20, 2, FamilyKind::gaussian);
  const MeanSpec spec{GlmFamily::gaussian(), true, 2};
  const ZFit fit = fit_glm(d, spec);
  const AteResult r = tau_model_based(d, spec, fit, GScale(GKind::identity));
  const Vector& t = fit.theta_hat;
  const Eigen::RowVectorXd xbar = d.x().colwise().mean();
  EXPECT_NEAR(r.tau_hat, t[0] - t[1] + (t[2] - t[4]) * xbar[0] + (t[3] - t[5]) * xbar[1], 1e-12);
  EXPECT_GE(r.variance_hat, 0.0);
  EXPECT_TRUE(r.ci(0.05).contains(r.tau_hat));
}

TEST(ModelBased, DomainErrorListsUnits) {
  // A gaussian fit on outcomes near zero predicts negative means for some units.
  CovariateMatrix x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  const Dataset d(make_assignment({1, 0, 1, 0, 1, 0}), vec({0.1, 0.1, 0.5, 0.5, 3, 3}), x);
  const MeanSpec spec{GlmFamily::gaussian(), false, 1};
  const ZFit fit = fit_glm(d, spec);
  try {
    tau_model_based(d, spec, fit, GScale(GKind::log));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("unit"), std::string::npos) << e.what();
  }
}

TEST(ModelImputed, EqualsModelAssistedForCanonicalMle) {
  Rng rng(42);
  for (FamilyKind k : {FamilyKind::gaussian, FamilyKind::binomial, FamilyKind::poisson}) {
    for (bool inter : {true, false}) {
      for (int rep = 0; rep < 5; ++rep) {
        const Dataset d = designz::testing::random_dataset(rng, 120, 55, 2, k);
        const MeanSpec spec = spec_for(k, inter, 2);
        const ZFit fit = fit_glm(d, spec);
        ASSERT_TRUE(fit.converged) << fit.diagnostic;
        const GScale g = natural_scale(k);
        const AteResult mi = tau_model_imputed(d, spec, fit, g);
        const AteResult ma = tau_model_assisted(d, spec, fit, g);
        EXPECT_NEAR(mi.tau_hat, ma.tau_hat, 1e-8);
        for (int arm : {0, 1}) {
          const Vector h = glm_predictions(spec, arm, d.x(), fit.theta_hat);
          EXPECT_NEAR(group_mean(d, arm, {h.data(), d.n()}), group_mean(d, arm, {d.y().data(), d.n()}), 1e-8);
        }
      }
    }
  }
}

TEST(ModelImputed, InterceptOnlyIsUnadjusted) {
  Rng rng(43);
  const Dataset d = designz::testing::random_dataset(rng, 40, 18, 0, FamilyKind::poisson);
  const MeanSpec spec{GlmFamily::poisson(), true, 0};
  const ZFit fit = fit_glm(d, spec);
  const GScale g(GKind::log);
  EXPECT_NEAR(tau_model_imputed(d, spec, fit, g).tau_hat, tau_unadjusted(d, g).tau_hat, 1e-12);
}

TEST(ModelAssisted, ZeroAdjustmentIsNeymanUnadjusted) {
  Rng rng(44);
  const Dataset d = designz::testing::random_dataset(rng, 30, 12, 1, FamilyKind::gaussian);
  const Vector zero = Vector::Zero(30);
  const AteResult r = tau_model_assisted(d, zero, zero, GScale(GKind::identity));
  const GroupMoments m1 = group_moments(d, 1, {d.y().data(), 30});
  const GroupMoments m0 = group_moments(d, 0, {d.y().data(), 30});
  EXPECT_NEAR(r.tau_hat, m1.mean - m0.mean, 1e-13);
  EXPECT_NEAR(r.variance_hat, m1.var / d.r1() + m0.var / d.r0(), 1e-12);
  EXPECT_NEAR(tau_unadjusted(d, GScale(GKind::identity)).tau_hat, r.tau_hat, 1e-15);
}

TEST(ModelAssisted, ConstantShiftInvariance) {
  Rng rng(45);
  const Dataset d = designz::testing::random_dataset(rng, 60, 25, 2, FamilyKind::poisson);
  const Vector h1 = designz::testing::random_vector(rng, 60);
  const Vector h0 = designz::testing::random_vector(rng, 60);
  for (const GScale g : {GScale(GKind::identity), GScale(GKind::log)}) {
    const AteResult base = tau_model_assisted(d, h1, h0, g);
    const AteResult shifted =
        tau_model_assisted(d, (h1.array() + 3.7).matrix(), (h0.array() - 1.9).matrix(), g);
    EXPECT_NEAR(base.tau_hat, shifted.tau_hat, 1e-12);
    EXPECT_NEAR(base.variance_hat, shifted.variance_hat, 1e-10);
  }
}

TEST(ModelAssisted, EnumerationUnbiasedForFixedTheta) {
  Rng rng(46);
  const PotentialTable pot = designz::testing::random_population(rng, 6, 1, FamilyKind::gaussian);
  const Vector h1 = designz::testing::random_vector(rng, 6);
  const Vector h0 = designz::testing::random_vector(rng, 6);
  double m1 = 0.0, m0 = 0.0, tau = 0.0;
  const auto all = enumerate_assignments(6, 3);
  for (const Assignment& a : all) {
    const Dataset d = observe(pot, a);
    const Vector adj = adjusted_outcomes(d, h1, h0);
    m1 += group_mean(d, 1, {adj.data(), 6}) / static_cast<double>(all.size());
    m0 += group_mean(d, 0, {adj.data(), 6}) / static_cast<double>(all.size());
    tau += tau_model_assisted(d, h1, h0, GScale(GKind::identity)).tau_hat / static_cast<double>(all.size());
  }
  EXPECT_NEAR(m1, fp_mean(pot.y1()), 1e-12);
  EXPECT_NEAR(m0, fp_mean(pot.y0()), 1e-12);
  EXPECT_NEAR(tau, fp_mean(pot.y1()) - fp_mean(pot.y0()), 1e-12);
}

TEST(OptimalAdjustment, LinearFormsAreOlsAndBeatUnadjusted) {
  Rng rng(47);
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset d = designz::testing::random_dataset(rng, 80, 35, 2, FamilyKind::gaussian);
    const MeanForm h = linear_form(2);
    const ZFit fit = fit_optimal_adjustment(d, h, h);
    ASSERT_TRUE(fit.converged);
    const GScale g(GKind::identity);
    const AteResult opt = tau_model_assisted(d, h, h, default_layout(h, h), fit.theta_hat, g);
    EXPECT_LE(opt.variance_hat, tau_unadjusted(d, g).variance_hat + 1e-8);
    for (int k = 0; k < 20; ++k) {
      const Vector t = fit.theta_hat + designz::testing::random_vector(rng, 6, 0.3);
      EXPECT_LE(opt.variance_hat, tau_model_assisted(d, h, h, default_layout(h, h), t, g).variance_hat + 1e-8);
    }
  }
}

TEST(OptimalAdjustment, PerfectFitHasZeroVariance) {
  Rng rng(48);
  const std::size_t n = 40;
  CovariateMatrix x = designz::testing::random_covariates(rng, n, 1);
  const MeanForm h = exp_form(1);
  const Vector star = vec({1.0, 0.2, 0.5, 2.0, -0.1, 0.3});
  const ArmLayout lay = default_layout(h, h);
  const Vector y1 = form_predictions(h, lay.arm1, x, star);
  const Vector y0 = form_predictions(h, lay.arm0, x, star);
  const Dataset d = observe(PotentialTable(y1, y0, x), draw_assignment(rng, n, 20));
  const ZFit fit = fit_optimal_adjustment(d, h, h, star + designz::testing::random_vector(rng, 6, 0.05));
  ASSERT_TRUE(fit.converged) << fit.diagnostic;
  EXPECT_LT(designz::testing::max_abs_diff(fit.theta_hat, star), 1e-6);
  EXPECT_NEAR(tau_model_assisted(d, h, h, lay, fit.theta_hat, GScale(GKind::identity)).variance_hat, 0.0, 1e-12);
}

TEST(WorkingModels, SquaredLossNeedsInteraction) {
  Rng rng(49);
  const Dataset d = observe(gen_population(DgpKind::heterogeneous, 400, rng), draw_assignment(rng, 400, 200));
  EXPECT_THROW(fit_working_model(d, parse_model_spec("poisson"), FitMethod::squared_loss), UnsupportedError);
  EXPECT_NO_THROW(fit_working_model(d, parse_model_spec("poisson:interact"), FitMethod::squared_loss));
}

TEST(WorkingModels, NegbinKappaFixedOrEstimated) {
  Rng rng(50);
  const Dataset d = designz::testing::random_dataset(rng, 200, 100, 2, FamilyKind::poisson);
  const FittedModel fixed = fit_working_model(d, parse_model_spec("negbin:interact:kappa=3"), FitMethod::mle);
  EXPECT_DOUBLE_EQ(fixed.kappa, 3.0);
  const FittedModel est = fit_working_model(d, parse_model_spec("negbin:interact"), FitMethod::mle);
  EXPECT_GT(est.kappa, 0.0);
  EXPECT_TRUE(est.fit.converged);
}

TEST(WorkingModels, NegbinKappaRecoversOverdispersion) {
  // Gamma-Poisson mixture with size 2 gives Var = mu + mu^2 / 2.
  Rng rng(51);
  const std::size_t n = 4000;
  CovariateMatrix x = designz::testing::random_covariates(rng, n, 1);
  Vector y(static_cast<Eigen::Index>(n));
  std::mt19937_64 eng(51);
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = std::exp(1.5 + 0.3 * x(static_cast<Eigen::Index>(i), 0));
    std::gamma_distribution<double> gam(2.0, mu / 2.0);
    std::poisson_distribution<int> pois(gam(eng));
    y[static_cast<Eigen::Index>(i)] = pois(eng);
  }
  const Dataset d(draw_assignment(rng, n, n / 2), y, x);
  const double kappa = estimate_negbin_kappa(d, true);
  EXPECT_NEAR(kappa, 2.0, 0.3);
}

TEST(WorkingModels, NoOverdispersionGivesMaxKappa) {
  const Dataset d(make_assignment({1, 0, 1, 0, 1, 0}), vec({3, 3, 3, 3, 3, 3}), CovariateMatrix(6, 0));
  EXPECT_EQ(estimate_negbin_kappa(d, true), kMaxKappa);
}

TEST(AdjustedImputation, LinearImputationIsLinearAdjustment) {
  // Arm-specific gaussian fits impute two linear forms spanning the covariates, so the
  // second stage regresses on a nonsingular reparametrization of (1, x1, x2).
  Rng rng(52);
  const Dataset d = designz::testing::random_dataset(rng, 70, 30, 2, FamilyKind::gaussian);
  const GScale g(GKind::identity);
  const AteResult ai =
      adjusted_imputation(d, {ImputationModel{parse_model_spec("gaussian:interact"), FitMethod::mle}}, g);
  const MeanForm h = linear_form(2);
  const ZFit lin = fit_optimal_adjustment(d, h, h);
  const AteResult ma = tau_model_assisted(d, h, h, default_layout(h, h), lin.theta_hat, g);
  EXPECT_TRUE(ai.warnings.empty());
  EXPECT_NEAR(ai.tau_hat, ma.tau_hat, 1e-9);
  EXPECT_NEAR(ai.variance_hat, ma.variance_hat, 1e-8);
  EXPECT_EQ(ai.kind, EstimatorKind::adjusted_imputation);
}

TEST(AdjustedImputation, CollinearColumnsFallBackToRidge) {
  // A shared-slope fit imputes h1 - h0 = constant, so (1, h1, h0) is rank deficient.
  Rng rng(55);
  const Dataset d = designz::testing::random_dataset(rng, 70, 30, 1, FamilyKind::gaussian);
  const GScale g(GKind::identity);
  const AteResult ai = adjusted_imputation(d, {ImputationModel{parse_model_spec("gaussian"), FitMethod::mle}}, g);
  ASSERT_FALSE(ai.warnings.empty());
  EXPECT_NE(ai.warnings[0].find("ridge"), std::string::npos);
  const MeanForm h = linear_form(1);
  const AteResult ma =
      tau_model_assisted(d, h, h, default_layout(h, h), fit_optimal_adjustment(d, h, h).theta_hat, g);
  EXPECT_NEAR(ai.tau_hat, ma.tau_hat, 1e-6);
}

TEST(AdjustedImputation, DistinctModelsWithoutWarnings) {
  Rng rng(53);
  const Dataset d = designz::testing::random_dataset(rng, 150, 70, 2, FamilyKind::poisson);
  const AteResult r = adjusted_imputation(
      d, {ImputationModel{parse_model_spec("poisson:interact"), FitMethod::mle}}, GScale(GKind::log));
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_GE(r.variance_hat, 0.0);
  ASSERT_EQ(r.fits.size(), 2u);
  EXPECT_TRUE(r.fits.back().converged);
}

TEST(RunEstimator, DispatchesAndCaches) {
  Rng rng(54);
  const Dataset d = designz::testing::random_dataset(rng, 150, 70, 2, FamilyKind::poisson);
  FitCache cache(d);
  AteRequest b{EstimatorKind::model_based, parse_model_spec("poisson:interact"), FitMethod::mle, GScale(GKind::log), {}};
  AteRequest i = b;
  i.kind = EstimatorKind::model_imputed;
  AteRequest a = b;
  a.kind = EstimatorKind::model_assisted;
  const AteResult rb = run_estimator(cache, d, b);
  const AteResult ri = run_estimator(cache, d, i);
  const AteResult ra = run_estimator(cache, d, a);
  EXPECT_EQ(rb.kind, EstimatorKind::model_based);
  EXPECT_NEAR(ri.tau_hat, ra.tau_hat, 1e-8);
  EXPECT_NEAR(run_estimator(d, a).tau_hat, ra.tau_hat, 1e-15);
  AteRequest bad = b;
  bad.method = FitMethod::squared_loss;
  EXPECT_THROW(run_estimator(cache, d, bad), UnsupportedError);
}

TEST(NullScenario, ModelBasedSharedSlopeCoverage) {
  Scenario s;
  s.dgp.kind = DgpKind::null;
  s.n = 1000;
  s.n1 = 500;
  EstimatorConfig c;
  c.model_label = "Pois";
  c.interaction_label = "No";
  c.estimation_label = "B";
  c.request = AteRequest{EstimatorKind::model_based, parse_model_spec("poisson"), FitMethod::mle, GScale(GKind::log), {}};
  s.roster = {c};
  const StudyTable t = run_study(s, 2000, 777);
  const StudyRow& row = t.rows[0];
  EXPECT_NEAR(row.truth, 0.0, 1e-15);
  EXPECT_GE(row.coverage, 0.94 - 3.0 * std::sqrt(0.95 * 0.05 / 2000));
}
