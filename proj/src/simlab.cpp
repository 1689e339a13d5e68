#include "designz/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "designz/errors.hpp"
#include "designz/io.hpp"
#include "designz/ite.hpp"

namespace designz {

void Scenario::validate() const {
  if (n < 2) throw ArgumentError("scenario: N must be at least 2");
  if (n1 < 1 || n1 >= n) throw ArgumentError("scenario: need 1 <= n1 <= N-1");
  if (roster.empty()) throw ArgumentError("scenario: estimator roster is empty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("scenario: alpha must lie in (0, 1)");
  if (dgp.kind == DgpKind::custom && !dgp.custom) throw ArgumentError("scenario: custom DGP without a generator");
}

PotentialTable gen_population(DgpKind kind, std::size_t n, Rng& rng) {
  if (kind == DgpKind::custom) throw ArgumentError("gen_population: custom DGP needs a generator");
  Vector y1(static_cast<Eigen::Index>(n));
  Vector y0(static_cast<Eigen::Index>(n));
  CovariateMatrix x(static_cast<Eigen::Index>(n), 2);
  auto outcome = [](double v) { return std::max(0.0, std::round(v)); };
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double x1 = rng.normal();
    const double x2 = rng.normal();
    x(k, 0) = x1;
    x(k, 1) = x2;
    if (kind == DgpKind::heterogeneous) {
      const double e0 = rng.normal();
      const double e1 = rng.normal();
      y0[k] = outcome(6.0 + std::exp(1.0 + x1 + x2) + 3.0 * e0);
      y1[k] = outcome(11.0 + std::exp(3.0 - x1 * x1 - x2) + 3.0 * e1);
    } else {
      const double e = rng.normal();
      y0[k] = outcome(10.0 + std::exp(1.0 + x1 - 0.5 * x2) + 3.0 * e);
      y1[k] = y0[k];
    }
  }
  return PotentialTable(std::move(y1), std::move(y0), std::move(x));
}

PotentialTable gen_population(const Scenario& s, Rng& rng) {
  if (s.dgp.kind == DgpKind::custom) {
    if (!s.dgp.custom) throw ArgumentError("gen_population: custom DGP needs a generator");
    return s.dgp.custom(rng, s.n);
  }
  return gen_population(s.dgp.kind, s.n, rng);
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DESIGNZ_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

struct Outcome {
  double estimate = 0.0;
  double se = 0.0;
  bool covered = false;
  bool ok = false;
};

double truth_for(const PotentialTable& pop, const GScale& g) {
  return g.g(pop.y1().mean()) - g.g(pop.y0().mean());
}

}  // namespace

StudyTable run_study(const Scenario& s, const PotentialTable& pop, std::size_t replications, std::uint64_t seed,
                     const RunOptions& opts) {
  s.validate();
  if (replications < 2) throw ArgumentError("run_study: need at least 2 replications");
  if (pop.n() != s.n) throw DimensionError("run_study: population size differs from the scenario");
  const std::size_t n_est = s.roster.size();
  std::vector<double> truth(n_est);
  for (std::size_t e = 0; e < n_est; ++e) truth[e] = truth_for(pop, s.roster[e].request.g);

  std::vector<Outcome> results(replications * n_est);
  std::vector<std::string> errors(replications * n_est);
  const double z = normal_quantile(1.0 - s.alpha / 2.0);

  auto replicate = [&](std::size_t r) {
    Rng rng = Rng::for_stream(seed, r);
    const Dataset d = observe(pop, draw_assignment(rng, s.n, s.n1));
    FitCache cache(d);
    for (std::size_t e = 0; e < n_est; ++e) {
      Outcome& out = results[r * n_est + e];
      try {
        const AteResult res = run_estimator(cache, d, s.roster[e].request);
        out.estimate = res.tau_hat;
        out.se = res.se();
        out.covered = std::abs(res.tau_hat - truth[e]) <= z * out.se;
        out.ok = std::isfinite(res.tau_hat) && std::isfinite(out.se);
        if (!out.ok) errors[r * n_est + e] = "non-finite estimate";
      } catch (const std::exception& ex) {
        errors[r * n_est + e] = ex.what();
      }
    }
  };

  const auto count = static_cast<long long>(replications);
  if (opts.execution == Execution::parallel) {
#ifdef _OPENMP
    const int threads = resolve_threads(opts.threads);
#pragma omp parallel for schedule(dynamic, 4) num_threads(threads)
    for (long long r = 0; r < count; ++r) replicate(static_cast<std::size_t>(r));
#else
    for (long long r = 0; r < count; ++r) replicate(static_cast<std::size_t>(r));
#endif
  } else {
    for (long long r = 0; r < count; ++r) replicate(static_cast<std::size_t>(r));
  }

  StudyTable table;
  table.n = s.n;
  table.replications = replications;
  table.seed = seed;
  const double root_n = std::sqrt(static_cast<double>(s.n));
  for (std::size_t e = 0; e < n_est; ++e) {
    StudyRow row;
    row.model_label = s.roster[e].model_label;
    row.interaction_label = s.roster[e].interaction_label;
    row.estimation_label = s.roster[e].estimation_label;
    row.truth = truth[e];
    double sum = 0.0, sum_se = 0.0, sum_sq = 0.0, covered = 0.0;
    std::size_t used = 0;
    for (std::size_t r = 0; r < replications; ++r) {
      const Outcome& o = results[r * n_est + e];
      if (!o.ok) {
        ++row.failures;
        if (row.first_failure.empty()) row.first_failure = "replication " + std::to_string(r) + ": " + errors[r * n_est + e];
        continue;
      }
      ++used;
      sum += o.estimate;
      sum_se += o.se;
      sum_sq += (o.estimate - truth[e]) * (o.estimate - truth[e]);
      covered += o.covered ? 1.0 : 0.0;
    }
    row.replications = used;
    if (used >= 2) {
      const double mean = sum / static_cast<double>(used);
      double ss = 0.0;
      for (std::size_t r = 0; r < replications; ++r) {
        const Outcome& o = results[r * n_est + e];
        if (o.ok) ss += (o.estimate - mean) * (o.estimate - mean);
      }
      const double sd = std::sqrt(ss / static_cast<double>(used - 1));
      row.sqrt_n_bias = root_n * (mean - truth[e]);
      row.sqrt_n_sd = root_n * sd;
      row.sqrt_n_rmse = root_n * std::sqrt(sum_sq / static_cast<double>(used));
      row.sqrt_n_ese = root_n * sum_se / static_cast<double>(used);
      row.coverage = covered / static_cast<double>(used);
      row.sqrt_n_bias_mcse = row.sqrt_n_sd / std::sqrt(static_cast<double>(used));
    } else {
      const double nan = std::nan("");
      row.sqrt_n_bias = row.sqrt_n_sd = row.sqrt_n_rmse = row.sqrt_n_ese = row.coverage = row.sqrt_n_bias_mcse = nan;
    }
    if (static_cast<double>(row.failures) > 0.01 * static_cast<double>(replications)) {
      std::ostringstream msg;
      msg << row.model_label << ' ' << row.interaction_label << ' ' << row.estimation_label << ": " << row.failures
          << " of " << replications << " replications failed (" << row.first_failure << ")";
      table.warnings.push_back(msg.str());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

StudyTable run_study(const Scenario& s, std::size_t replications, std::uint64_t seed, const RunOptions& opts) {
  s.validate();
  Rng rng = Rng::for_stream(seed, kPopulationStream);
  const PotentialTable pop = gen_population(s, rng);
  return run_study(s, pop, replications, seed, opts);
}

StudyTable run_study(const Scenario& s, const RunOptions& opts) { return run_study(s, s.replications, s.seed, opts); }

const StudyRow& StudyTable::row(const std::string& model, const std::string& interaction,
                                const std::string& estimation) const {
  for (const auto& r : rows) {
    if (r.model_label == model && r.interaction_label == interaction && r.estimation_label == estimation) return r;
  }
  throw ArgumentError("study table has no row " + model + " / " + interaction + " / " + estimation);
}

void write_study_csv(const StudyTable& t, std::ostream& out) {
  out << "Model,Interaction,Estimation,Bias,SD,RMSE,ESE,Coverage\n";
  char buf[256];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f,%.3f,%.3f,%.4f", r.sqrt_n_bias, r.sqrt_n_sd, r.sqrt_n_rmse,
                  r.sqrt_n_ese, r.coverage);
    out << r.model_label << ',' << r.interaction_label << ',' << r.estimation_label << ',' << buf << '\n';
  }
}

RandomizationDistribution exact_randomization_distribution(const PotentialTable& pot, std::size_t n1,
                                                           const ScalarEstimator& estimator,
                                                           unsigned long long cap, const RunOptions& opts) {
  const std::size_t n = pot.n();
  RandomizationDistribution out;
  if (opts.execution == Execution::serial) {
    for_each_assignment(
        n, n1, [&](const Assignment& a) { out.values.push_back(estimator(observe(pot, a))); }, cap);
  } else {
    if (n1 < 1 || n1 >= n) throw ArgumentError("exact_randomization_distribution: need 1 <= n1 <= N-1");
    const unsigned long long total = binomial_coefficient(n, n1);
    if (total > cap) {
      throw EnumerationTooLargeError("enumeration of C(" + std::to_string(n) + ", " + std::to_string(n1) +
                                         ") assignments exceeds the cap of " + std::to_string(cap),
                                     cap);
    }
    out.values.assign(static_cast<std::size_t>(total), 0.0);
    const int threads = resolve_threads(opts.threads);
    const auto chunks = static_cast<long long>(std::min<unsigned long long>(total, 64ULL * threads));
    std::vector<std::string> errors(static_cast<std::size_t>(chunks));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (long long c = 0; c < chunks; ++c) {
      const unsigned long long lo = total * static_cast<unsigned long long>(c) / static_cast<unsigned long long>(chunks);
      const unsigned long long hi =
          total * static_cast<unsigned long long>(c + 1) / static_cast<unsigned long long>(chunks);
      try {
        std::vector<std::uint8_t> z = assignment_at(n, n1, lo).z();
        for (unsigned long long k = lo; k < hi; ++k) {
          out.values[static_cast<std::size_t>(k)] = estimator(observe(pot, Assignment(z)));
          std::next_permutation(z.begin(), z.end());
        }
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(c)] = e.what();
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw Error("exact_randomization_distribution: " + e);
    }
  }
  double sum = 0.0;
  for (double v : out.values) sum += v;
  out.mean = sum / static_cast<double>(out.values.size());
  double ss = 0.0;
  for (double v : out.values) ss += (v - out.mean) * (v - out.mean);
  out.var = ss / static_cast<double>(out.values.size());
  return out;
}

RandomizationDistribution exact_randomization_distribution(const PotentialTable& pot, std::size_t n1,
                                                           const AteRequest& request, unsigned long long cap,
                                                           const RunOptions& opts) {
  return exact_randomization_distribution(
      pot, n1, [&](const Dataset& d) { return run_estimator(d, request).tau_hat; }, cap, opts);
}

HeterogeneityR2 heterogeneity_r2(const PotentialTable& pop, const Assignment& a) {
  const Dataset d = observe(pop, a);
  ModelSpec pois{FamilyKind::poisson, true, std::nullopt};
  const FittedModel fm = fit_working_model(d, pois, FitMethod::mle);
  CovariateMatrix transformed(static_cast<Eigen::Index>(pop.n()), 2);
  transformed.col(0) = fm.pred1;
  transformed.col(1) = fm.pred0;
  const Vector tau = pop.effects();
  HeterogeneityR2 out;
  out.original = effect_variance_decomposition(tau, linear_projection(tau, pop.x())).r2;
  out.transformed = effect_variance_decomposition(tau, linear_projection(tau, transformed)).r2;
  return out;
}

namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* key, const T& fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

ModelSpec model_from_json(const json& j) {
  ModelSpec m;
  if (j.contains("model")) {
    m = parse_model_spec(j.at("model").get<std::string>());
  } else {
    m.family = parse_family(field<std::string>(j, "family", "gaussian"));
    m.interaction = field<bool>(j, "interaction", false);
  }
  if (j.contains("kappa")) m.kappa = j.at("kappa").get<double>();
  return m;
}

EstimatorConfig estimator_from_json(const json& j, const GScale& default_g) {
  EstimatorConfig c;
  c.request.kind = parse_estimator_kind(field<std::string>(j, "kind", "A"));
  c.request.g = j.contains("g") ? GScale::parse(j.at("g").get<std::string>()) : default_g;
  if (c.request.kind != EstimatorKind::unadjusted && c.request.kind != EstimatorKind::adjusted_imputation) {
    c.request.model = model_from_json(j);
  }
  c.request.method = parse_method(field<std::string>(j, "method", "mle"));
  if (j.contains("imputations")) {
    for (const auto& im : j.at("imputations")) {
      c.request.imputations.push_back({model_from_json(im), parse_method(field<std::string>(im, "method", "mle"))});
    }
  }
  if (c.request.kind == EstimatorKind::adjusted_imputation && c.request.imputations.empty()) {
    throw ArgumentError("scenario: AI estimator needs an 'imputations' list");
  }
  if (j.contains("label")) {
    const auto& l = j.at("label");
    if (!l.is_array() || l.size() != 3) throw ArgumentError("scenario: 'label' must be [model, interaction, estimation]");
    c.model_label = l[0].get<std::string>();
    c.interaction_label = l[1].get<std::string>();
    c.estimation_label = l[2].get<std::string>();
  } else {
    c.model_label = c.request.kind == EstimatorKind::unadjusted ? "Unadjusted" : family_name(c.request.model.family);
    c.interaction_label = c.request.model.interaction ? "Yes" : "No";
    c.estimation_label = estimator_label(c.request.kind);
  }
  return c;
}

}  // namespace

Scenario parse_scenario(const std::string& json_text, const std::string& base_dir) {
  Scenario s;
  try {
    const json j = json::parse(json_text);
    const std::string dgp = field<std::string>(j, "dgp", "heterogeneous");
    if (dgp == "heterogeneous") {
      s.dgp.kind = DgpKind::heterogeneous;
    } else if (dgp == "null") {
      s.dgp.kind = DgpKind::null;
    } else if (dgp == "custom") {
      s.dgp.kind = DgpKind::custom;
      if (!j.contains("population")) throw ArgumentError("scenario: custom DGP needs a 'population' CSV path");
      std::string path = j.at("population").get<std::string>();
      if (!path.empty() && path[0] != '/') path = base_dir + "/" + path;
      const auto pop = std::make_shared<PotentialTable>(read_potential_csv(path));
      s.dgp.custom = [pop](Rng&, std::size_t) { return *pop; };
      s.n = pop->n();
    } else {
      throw ArgumentError("scenario: unknown dgp '" + dgp + "' (expected heterogeneous, null or custom)");
    }
    s.n = field<std::size_t>(j, "N", s.n);
    s.n1 = field<std::size_t>(j, "n1", s.n / 2);
    s.seed = field<std::uint64_t>(j, "seed", s.seed);
    s.replications = field<std::size_t>(j, "replications", s.replications);
    s.alpha = field<double>(j, "alpha", s.alpha);
    const GScale g = GScale::parse(field<std::string>(j, "g", "identity"));
    if (!j.contains("estimators") || !j.at("estimators").is_array()) {
      throw ArgumentError("scenario: 'estimators' must be a list");
    }
    for (const auto& e : j.at("estimators")) s.roster.push_back(estimator_from_json(e, g));
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto slash = path.find_last_of('/');
  return parse_scenario(buf.str(), slash == std::string::npos ? "." : path.substr(0, slash));
}

}  // namespace designz
