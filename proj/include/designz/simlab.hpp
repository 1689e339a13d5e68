#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "designz/ate.hpp"
#include "designz/finitepop.hpp"
#include "designz/rng.hpp"

namespace designz {

enum class DgpKind { heterogeneous, null, custom };

struct Dgp {
  DgpKind kind = DgpKind::heterogeneous;
  /// Required for DgpKind::custom.
  std::function<PotentialTable(Rng&, std::size_t n)> custom;
};

/// One roster entry: the three label columns of the output table plus the estimator.
struct EstimatorConfig {
  std::string model_label;
  std::string interaction_label;
  std::string estimation_label;
  AteRequest request;
};

struct Scenario {
  Dgp dgp;
  std::size_t n = 1000;
  std::size_t n1 = 500;
  std::vector<EstimatorConfig> roster;
  std::uint64_t seed = 1;
  std::size_t replications = 10000;
  double alpha = 0.05;

  /// Throws ArgumentError when sizes or the roster are invalid.
  void validate() const;
};

/// heterogeneous: Y(0) = 6 + exp(1 + X1 + X2) + 3 e0, Y(1) = 11 + exp(3 - X1^2 - X2) + 3 e1;
/// null: Y(1) = Y(0) = 10 + exp(1 + X1 - X2 / 2) + 3 e. Outcomes are rounded to the
/// nearest integer and floored at zero; covariates are (X1, X2).
PotentialTable gen_population(const Scenario& s, Rng& rng);
PotentialTable gen_population(DgpKind kind, std::size_t n, Rng& rng);

/// Stream index reserved for the population draw; replication r uses stream r.
inline constexpr std::uint64_t kPopulationStream = ~0ULL;

enum class Execution { serial, parallel };

struct RunOptions {
  Execution execution = Execution::parallel;
  /// 0: DESIGNZ_THREADS if set, else the OpenMP default.
  int threads = 0;
};

struct StudyRow {
  std::string model_label;
  std::string interaction_label;
  std::string estimation_label;
  double truth = 0.0;
  double sqrt_n_bias = 0.0;
  double sqrt_n_sd = 0.0;
  double sqrt_n_rmse = 0.0;
  /// Mean of sqrt(N) * estimated SE.
  double sqrt_n_ese = 0.0;
  double coverage = 0.0;
  /// Monte Carlo standard error of sqrt_n_bias.
  double sqrt_n_bias_mcse = 0.0;
  std::size_t replications = 0;
  std::size_t failures = 0;
  std::string first_failure;
};

struct StudyTable {
  std::size_t n = 0;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  std::vector<StudyRow> rows;
  std::vector<std::string> warnings;

  const StudyRow& row(const std::string& model, const std::string& interaction, const std::string& estimation) const;
};

/// Draws one population from stream kPopulationStream of `seed`, then runs every roster
/// estimator on R assignments. Results are identical for serial and parallel execution.
StudyTable run_study(const Scenario& s, std::size_t replications, std::uint64_t seed, const RunOptions& opts = {});
StudyTable run_study(const Scenario& s, const RunOptions& opts = {});
/// Same, on a caller-supplied fixed population.
StudyTable run_study(const Scenario& s, const PotentialTable& pop, std::size_t replications, std::uint64_t seed,
                     const RunOptions& opts = {});

/// Columns Model,Interaction,Estimation,Bias,SD,RMSE,ESE,Coverage.
void write_study_csv(const StudyTable& t, std::ostream& out);

struct RandomizationDistribution {
  double mean = 0.0;
  /// Exact variance over assignments (divisor = number of assignments).
  double var = 0.0;
  /// Estimates in lexicographic order of the assignment.
  std::vector<double> values;
};

using ScalarEstimator = std::function<double(const Dataset&)>;

/// Evaluates `estimator` on every assignment with n1 treated units. The estimator must be
/// safe to call concurrently when execution is parallel.
RandomizationDistribution exact_randomization_distribution(const PotentialTable& pot, std::size_t n1,
                                                           const ScalarEstimator& estimator,
                                                           unsigned long long cap = kDefaultEnumerationCap,
                                                           const RunOptions& opts = {});
RandomizationDistribution exact_randomization_distribution(const PotentialTable& pot, std::size_t n1,
                                                           const AteRequest& request,
                                                           unsigned long long cap = kDefaultEnumerationCap,
                                                           const RunOptions& opts = {});

/// Oracle R^2 of the linear projection of the true effects on the original covariates
/// and on Poisson-imputed potential outcomes (h1(X), h0(X)) fitted on one assignment.
struct HeterogeneityR2 {
  double original = 0.0;
  double transformed = 0.0;
};
HeterogeneityR2 heterogeneity_r2(const PotentialTable& pop, const Assignment& a);

/// Parses a JSON scenario document.
Scenario parse_scenario(const std::string& json_text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

int resolve_threads(int requested);

}  // namespace designz
