// designz: design-based estimation, simulation studies and exact enumeration.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "designz/ate.hpp"
#include "designz/errors.hpp"
#include "designz/io.hpp"
#include "designz/ite.hpp"
#include "designz/simlab.hpp"

namespace {

using namespace designz;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitData = 2;
constexpr int kExitSolver = 3;

struct EstimateArgs {
  std::string input;
  std::string estimator = "A";
  std::string model = "gaussian:interact";
  std::string method = "mle";
  std::vector<std::string> impute;
  std::string g = "identity";
  double alpha = 0.05;
  double gamma = 2.0;
  std::string output;
  std::string format = "json";
};

struct SimulateArgs {
  std::string scenario;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  bool serial = false;
  std::string output;
};

struct EnumerateArgs {
  std::string input;
  std::size_t n1 = 0;
  std::string estimator = "unadjusted";
  std::string model = "gaussian:interact";
  std::string method = "mle";
  std::string g = "identity";
  unsigned long long cap = kDefaultEnumerationCap;
  int threads = 0;
  std::string output;
};

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

// "family[:interact][:kappa=v][/method]"
ImputationModel parse_imputation(const std::string& text) {
  const auto slash = text.find('/');
  ImputationModel m;
  m.model = parse_model_spec(text.substr(0, slash));
  if (slash != std::string::npos) m.method = parse_method(text.substr(slash + 1));
  return m;
}

int cmd_estimate(const EstimateArgs& a) {
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ArgumentError("--alpha must lie in (0, 1)");
  const Dataset d = read_dataset_csv(a.input);

  if (a.estimator == "ite-linear" || a.estimator == "ite-ternary") {
    const IteFit f = a.estimator == "ite-linear" ? fit_normal_linear(d) : fit_ternary(d, a.gamma);
    if (a.format == "csv") {
      std::ostringstream out;
      out << "unit,fitted\n";
      out.precision(17);
      for (Eigen::Index i = 0; i < f.fitted.size(); ++i) out << i << ',' << f.fitted[i] << '\n';
      emit(out.str(), a.output);
    } else {
      emit(ite_fit_to_json(f) + "\n", a.output);
    }
    return kExitOk;
  }

  AteRequest req;
  req.kind = parse_estimator_kind(a.estimator);
  req.g = GScale::parse(a.g);
  req.method = parse_method(a.method);
  if (req.kind != EstimatorKind::unadjusted) req.model = parse_model_spec(a.model);
  if (req.kind == EstimatorKind::adjusted_imputation) {
    for (const auto& s : a.impute) req.imputations.push_back(parse_imputation(s));
    if (req.imputations.empty()) req.imputations.push_back({req.model, req.method});
  }
  const AteResult r = run_estimator(d, req);
  const Interval ci = r.ci(a.alpha);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';

  if (a.format == "csv") {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g", r.tau_hat, r.se(), ci.low, ci.high,
                  r.variance_hat);
    emit("tau_hat,se,ci_low,ci_high,variance_hat,estimator_kind,g_scale\n" + std::string(buf) + "," +
             estimator_label(r.kind) + "," + r.g.name() + "\n",
         a.output);
  } else {
    json j;
    j["tau_hat"] = r.tau_hat;
    j["se"] = r.se();
    j["ci_low"] = ci.low;
    j["ci_high"] = ci.high;
    j["variance_hat"] = r.variance_hat;
    j["n"] = r.n;
    j["alpha"] = a.alpha;
    j["estimator_kind"] = estimator_label(r.kind);
    j["g_scale"] = r.g.name();
    j["warnings"] = r.warnings;
    emit(j.dump(2) + "\n", a.output);
  }
  return kExitOk;
}

int cmd_simulate(const SimulateArgs& a) {
  const Scenario s = load_scenario(a.scenario);
  const std::size_t reps = a.replications ? a.replications : s.replications;
  const std::uint64_t seed = a.seed_given ? a.seed : s.seed;
  RunOptions opts;
  opts.execution = a.serial ? Execution::serial : Execution::parallel;
  opts.threads = a.threads;
  const StudyTable t = run_study(s, reps, seed, opts);
  for (const auto& w : t.warnings) std::cerr << "warning: " << w << '\n';
  std::ostringstream out;
  write_study_csv(t, out);
  emit(out.str(), a.output);
  return kExitOk;
}

int cmd_enumerate(const EnumerateArgs& a) {
  const PotentialTable pot = read_potential_csv(a.input);
  const std::size_t n1 = a.n1 ? a.n1 : pot.n() / 2;
  AteRequest req;
  req.kind = parse_estimator_kind(a.estimator);
  req.g = GScale::parse(a.g);
  req.method = parse_method(a.method);
  if (req.kind != EstimatorKind::unadjusted) req.model = parse_model_spec(a.model);
  if (req.kind == EstimatorKind::adjusted_imputation) req.imputations.push_back({req.model, req.method});
  RunOptions opts;
  opts.threads = a.threads;
  const RandomizationDistribution dist = exact_randomization_distribution(pot, n1, req, a.cap, opts);
  json j;
  j["mean"] = dist.mean;
  j["var"] = dist.var;
  j["assignments"] = dist.values.size();
  j["truth"] = req.g.g(pot.y1().mean()) - req.g.g(pot.y0().mean());
  j["estimator_kind"] = estimator_label(req.kind);
  j["g_scale"] = req.g.name();
  emit(j.dump(2) + "\n", a.output);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Design-based estimation for completely randomized experiments"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate a treatment effect from observed data (CSV z,y,x...)");
  e->add_option("--input", est.input, "Observed data CSV")->required();
  e->add_option("--estimator", est.estimator, "B, I, A (ma), AI, unadjusted, ite-linear or ite-ternary");
  e->add_option("--model", est.model, "Working model: family[:interact][:kappa=v]");
  e->add_option("--method", est.method, "Parameter estimation: mle or squared-loss");
  e->add_option("--impute", est.impute, "AI imputation model, model[/method]; repeatable");
  e->add_option("--g", est.g, "Effect scale: identity, log or logit");
  e->add_option("--alpha", est.alpha, "Confidence level 1 - alpha");
  e->add_option("--gamma", est.gamma, "Ternary model constant");
  e->add_option("--output", est.output, "Write the result here instead of standard output");
  e->add_option("--format", est.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a Monte Carlo study from a scenario file");
  s->add_option("--scenario", sim.scenario, "Scenario JSON")->required();
  s->add_option("--replications", sim.replications, "Override the scenario's replication count");
  auto* seed_opt = s->add_option("--seed", sim.seed, "Override the scenario's master seed");
  s->add_option("--threads", sim.threads, "Worker threads (default: DESIGNZ_THREADS or all cores)");
  s->add_flag("--serial", sim.serial, "Use the serial reference path");
  s->add_option("--output", sim.output, "Write the table CSV here instead of standard output");

  EnumerateArgs en;
  auto* n = app.add_subcommand("enumerate", "Exact randomization distribution over all assignments");
  n->add_option("--input", en.input, "Potential-outcome CSV (y1,y0,x...)")->required();
  n->add_option("--n1", en.n1, "Treated units (default N/2)");
  n->add_option("--estimator", en.estimator, "B, I, A, AI or unadjusted");
  n->add_option("--model", en.model, "Working model: family[:interact][:kappa=v]");
  n->add_option("--method", en.method, "mle or squared-loss");
  n->add_option("--g", en.g, "Effect scale: identity, log or logit");
  n->add_option("--cap", en.cap, "Maximum number of assignments");
  n->add_option("--threads", en.threads, "Worker threads");
  n->add_option("--output", en.output, "Write the result here instead of standard output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitData;
  }
  sim.seed_given = seed_opt->count() > 0;

  try {
    if (*e) return cmd_estimate(est);
    if (*s) return cmd_simulate(sim);
    if (*n) return cmd_enumerate(en);
  } catch (const EnumerationTooLargeError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  } catch (const ConvergenceError& err) {
    std::cerr << "error: solver did not converge: " << err.what() << '\n';
    return kExitSolver;
  } catch (const SingularMatrixError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitSolver;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
  return kExitData;
}
