#pragma once

// Experiment runner and statistical validation suites. Speed is always
// simulated time (invocation counts times declared costs).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "specens/analysis.hpp"
#include "specens/decoding.hpp"

namespace specens {

inline constexpr const char* kEngineVersion = "0.3.0";

struct ModelSpec {
  std::string kind = "random";  // random | file | ngram | fixed
  std::string name;
  std::uint64_t seed = 0;
  std::size_t vocab_size = 0;
  std::size_t context_length = 0;
  double concentration = 1.0;
  double cost = 1.0;
  std::string path;  // model file (file) or corpus (ngram)
  std::size_t order = 1;
  double delta = 1.0;
  std::vector<double> probs;  // fixed
};

// Relative paths resolve against base_dir.
ModelPtr build_model(const ModelSpec& spec, const std::filesystem::path& base_dir = {});

struct StrategySpec {
  Strategy strategy = Strategy::kVanillaEnsemble;
  std::vector<std::size_t> models;  // indices into ExperimentConfig::models; empty = all
  std::vector<std::size_t> gammas;
  std::size_t default_proposer = 0;
  std::optional<EnsembleSpec> ensemble;  // overrides the experiment-wide spec
  std::string label;
};

enum class SweepParameter { kLambda, kMu, kGamma, kTemperature };
const char* sweep_parameter_name(SweepParameter p);

struct Sweep {
  SweepParameter parameter = SweepParameter::kLambda;
  std::vector<double> values;
};

struct ExperimentConfig {
  std::vector<ModelSpec> models;
  EnsembleSpec ensemble;
  std::vector<StrategySpec> strategies;
  std::optional<Sweep> sweep;
  std::size_t sessions = 100;
  std::size_t tokens_per_session = 64;
  TokenSeq prefix;
  std::uint64_t seed = 0;
  std::string output_path;
  std::string output_format = "csv";
  unsigned threads = 0;  // 0 = hardware concurrency
};

struct CellRecord {
  std::size_t cell_index = 0;
  std::string strategy;
  std::string label;
  std::vector<std::size_t> models;
  std::vector<std::size_t> gammas;
  std::string parameter;  // empty when there is no sweep
  double value = 0.0;
  std::size_t sessions = 0;
  std::uint64_t tokens = 0;
  double simulated_time = 0.0;
  double tokens_per_time = 0.0;
  double speedup = 0.0;
  double empirical_alpha = 0.0;  // NaN when nothing was verified
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  double cost_ratio = 0.0;             // proposer cost / verifier cost; NaN if not two-model
  double predicted_alpha_bound = 0.0;  // NaN when no bound applies
  double predicted_factor = 0.0;       // NaN when no closed form applies
  std::vector<std::uint64_t> invocations;
  bool implicit_baseline = false;
};

struct ExperimentReport {
  std::vector<CellRecord> cells;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string engine_version = kEngineVersion;
};

// Per-session seed: seed ^ mix(cell) ^ mix(mix(session)).
std::uint64_t session_seed(std::uint64_t seed, std::size_t cell, std::size_t session);

// Throws ConfigError on an invalid config; model and decode errors are
// rethrown with the failing cell's coordinates.
ExperimentReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& base_dir = {});
ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<ModelPtr>& models);

// Session-level aggregate of one decode configuration.
struct RunTotals {
  std::size_t sessions = 0;
  std::uint64_t tokens = 0;
  double simulated_time = 0.0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  std::vector<std::uint64_t> invocations;

  double tokens_per_time() const { return static_cast<double>(tokens) / simulated_time; }
  double alpha() const;
};

RunTotals run_sessions(ModelList models, const DecodeConfig& base, std::size_t sessions, std::uint64_t seed,
                       std::size_t cell, unsigned threads = 0);

// --- validation suites ---

struct StrategyUnderTest {
  Strategy strategy = Strategy::kSpecEnsemble;
  std::vector<std::size_t> gammas;
  std::size_t default_proposer = 0;
};

struct PositionCheck {
  std::size_t position = 0;
  double tv = 0.0;  // pooled over retained strata, sum of |.| (not halved)
  std::size_t strata = 0;
  std::size_t sessions = 0;
  double top_stratum_tv = 0.0;  // the single most frequent prefix
  std::size_t top_stratum_sessions = 0;
};

struct DistributionCheck {
  std::vector<PositionCheck> positions;
  double tolerance = 0.0;
  bool passed = false;
};

struct DistributionCheckOptions {
  std::size_t sessions = 200000;
  double tolerance = 0.02;
  std::size_t positions = 3;
  std::size_t min_stratum = 1000;
  std::size_t min_sessions = 100000;
  std::uint64_t seed = 1;
  TokenSeq prefix;
  unsigned threads = 0;
};

// Empirical next-token law per position, conditioned on the realized
// prefix, against the exact ensemble distribution. Strata (distinct
// realized prefixes) below min_stratum sessions are dropped; the retained
// ones are pooled. Throws InsufficientSamples when a position keeps none.
DistributionCheck validate_distributional_correctness(ModelList models, const EnsembleSpec& ensemble,
                                                      const StrategyUnderTest& strategy,
                                                      const DistributionCheckOptions& options);

struct AcceptanceGroup {
  std::size_t origin_model = 0;
  std::uint64_t events = 0;
  std::uint64_t accepted = 0;
  double empirical = 0.0;
  double exact = 0.0;
  bool scored = false;  // events >= min_group_events
};

struct AcceptanceCheck {
  std::vector<AcceptanceGroup> groups;
  std::uint64_t events = 0;
  double overall_alpha = 0.0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct AcceptanceCheckOptions {
  std::uint64_t events = 100000;
  double tolerance = 0.01;
  std::uint64_t min_group_events = 20000;
  std::uint64_t min_events = 100000;
  std::size_t tokens_per_session = 64;
  std::uint64_t seed = 1;
  TokenSeq prefix;
};

// Groups verification events by their exact (origin, q, r) and compares
// each group's acceptance frequency with sum min(q, r).
AcceptanceCheck validate_acceptance_identity(ModelList models, const EnsembleSpec& ensemble,
                                             const StrategyUnderTest& strategy, const AcceptanceCheckOptions& options);

struct NeverSlowerCheck {
  std::size_t comparisons = 0;
  std::size_t violations = 0;
  std::size_t strict = 0;
  double strict_fraction = 0.0;
  double max_excess = 0.0;  // max over runs of time(alternate) - time(vanilla)
  bool passed = false;
};

// Alternate proposal with gamma_q = gamma_p = 1 against the vanilla
// ensemble on every pair and seed, at equal emitted-token counts.
NeverSlowerCheck validate_never_slower(const std::vector<std::pair<ModelPtr, ModelPtr>>& pairs,
                                       const std::vector<std::uint64_t>& seeds, const EnsembleSpec& ensemble,
                                       std::size_t tokens = 256);

struct TradeoffOptions {
  std::size_t gamma = 5;
  std::size_t sessions = 200;
  std::size_t tokens_per_session = 128;
  TokenSeq prefix;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

// Speculative ensemble over a weighted-lambda sweep with the proposer as q;
// reports acceptance and simulated speedup per lambda.
ExperimentReport tradeoff_sweep(const ModelPtr& proposer, const ModelPtr& target, const std::vector<double>& lambdas,
                                const TradeoffOptions& options);

}  // namespace specens
