#include "specens/validation.hpp"

#include <cmath>
#include <functional>

#include "specens/analysis.hpp"
#include "specens/errors.hpp"
#include "specens/harness.hpp"

namespace specens {

using nlohmann::json;

namespace {

constexpr std::size_t kFixtureVocab = 16;

std::vector<ModelPtr> stock_pair(std::uint64_t seed) {
  return {std::make_shared<TableModel>(random_table_model(seed, kFixtureVocab, 1, 1.0, 0.1, "q")),
          std::make_shared<TableModel>(random_table_model(seed + 1, kFixtureVocab, 1, 1.0, 1.0, "p"))};
}

json distribution_check_json(const std::string& name, const DistributionCheck& c) {
  json positions = json::array();
  for (const PositionCheck& p : c.positions) {
    positions.push_back({{"position", p.position},
                         {"tv", p.tv},
                         {"strata", p.strata},
                         {"sessions", p.sessions},
                         {"top_stratum_tv", p.top_stratum_tv},
                         {"top_stratum_sessions", p.top_stratum_sessions}});
  }
  return {{"name", name}, {"passed", c.passed}, {"tolerance", c.tolerance}, {"positions", positions}};
}

json acceptance_check_json(const std::string& name, const AcceptanceCheck& c) {
  std::size_t scored = 0;
  for (const AcceptanceGroup& g : c.groups) scored += g.scored;
  return {{"name", name},
          {"passed", c.passed},
          {"tolerance", c.tolerance},
          {"events", c.events},
          {"overall_alpha", c.overall_alpha},
          {"max_deviation", c.max_deviation},
          {"groups", c.groups.size()},
          {"scored_groups", scored}};
}

json distribution_suite(const SuiteOptions& o) {
  DistributionCheckOptions opt;
  if (o.sessions) opt.sessions = o.sessions;
  if (!std::isnan(o.tolerance)) opt.tolerance = o.tolerance;
  opt.seed = o.seed;
  opt.threads = o.threads;
  const auto models = stock_pair(101);
  const EnsembleSpec ensemble = EnsembleSpec::weighted(0.5);
  json checks = json::array();
  checks.push_back(distribution_check_json(
      "distribution/spec-ensemble",
      validate_distributional_correctness(models, ensemble, {Strategy::kSpecEnsemble, {5, 1}, 0}, opt)));
  checks.push_back(distribution_check_json(
      "distribution/alternate",
      validate_distributional_correctness(models, ensemble, {Strategy::kAlternateProposal, {5, 2}, 0}, opt)));
  return checks;
}

json acceptance_suite(const SuiteOptions& o) {
  AcceptanceCheckOptions opt;
  if (o.sessions) opt.events = o.sessions;
  if (!std::isnan(o.tolerance)) opt.tolerance = o.tolerance;
  opt.seed = o.seed;
  json checks = json::array();

  std::vector<ModelPtr> fixed{
      std::make_shared<TableModel>(context_free_model(Distribution::from_normalized({0.8, 0.2}), 0.1, "q")),
      std::make_shared<TableModel>(context_free_model(Distribution::from_normalized({0.2, 0.8}), 1.0, "p"))};
  checks.push_back(acceptance_check_json(
      "acceptance/context-free",
      validate_acceptance_identity(fixed, EnsembleSpec::weighted(0.5), {Strategy::kSpecEnsemble, {5, 1}, 0}, opt)));

  // Context-1 tables spread events over 16 contexts; only the well-sampled
  // ones are scored.
  AcceptanceCheckOptions table_opt = opt;
  table_opt.events = std::max<std::uint64_t>(opt.events, 1000000);
  table_opt.min_group_events = 20000;
  checks.push_back(acceptance_check_json(
      "acceptance/random-tables",
      validate_acceptance_identity(stock_pair(202), EnsembleSpec::weighted(0.5),
                                   {Strategy::kSpecEnsemble, {3, 1}, 0}, table_opt)));
  return checks;
}

json never_slower_suite(const SuiteOptions& o) {
  std::vector<std::pair<ModelPtr, ModelPtr>> pairs;
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto pair = stock_pair(mix_seed(o.seed + 1000 * i));
    pairs.emplace_back(pair[0], pair[1]);
  }
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(o.seed * 10 + s);
  NeverSlowerCheck c = validate_never_slower(pairs, seeds, EnsembleSpec::weighted(0.5));
  json check = {{"name", "never-slower"},
                {"passed", c.passed},
                {"comparisons", c.comparisons},
                {"violations", c.violations},
                {"strict", c.strict},
                {"strict_fraction", c.strict_fraction},
                {"max_excess", c.max_excess}};
  return json::array({check});
}

// Mean emitted tokens over every accept/reject path of one cycle.
double enumerate_cycle(double alpha, std::size_t gamma) {
  double total = 0.0;
  std::function<void(std::size_t, double)> walk = [&](std::size_t accepted, double mass) {
    if (accepted == gamma) {
      total += mass * static_cast<double>(gamma);
      return;
    }
    total += mass * (1.0 - alpha) * static_cast<double>(accepted + 1);
    walk(accepted + 1, mass * alpha);
  };
  walk(0, 1.0);
  return total;
}

json formulas_suite() {
  json checks = json::array();
  auto add = [&](const std::string& name, bool passed, double worst) {
    checks.push_back({{"name", name}, {"passed", passed}, {"worst", worst}});
  };

  double worst = 0.0;
  for (int i = 0; i <= 100; ++i) {
    for (int j = 1; j <= 100; ++j) {
      worst = std::max(worst, std::abs(improvement_factor_se(i / 100.0, 1, j / 20.0) - 1.0));
    }
  }
  add("formulas/se-gamma-one-is-unity", worst <= 1e-12, worst);

  double lowest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      lowest = std::min(lowest, improvement_factor_alternate(i / 99.0, 1, 1, 0.01 + j * 0.05));
    }
  }
  add("formulas/alternate-never-below-one", lowest >= 1.0 - 1e-12, lowest);

  worst = 0.0;
  for (std::size_t g = 1; g <= 6; ++g) {
    for (int i = 0; i <= 100; ++i) {
      double a = i / 100.0;
      worst = std::max(worst, std::abs(expected_accepted_tokens(a, g) - enumerate_cycle(a, g)));
    }
  }
  add("formulas/expected-tokens-enumeration", worst <= 1e-12, worst);

  double d = std::abs(improvement_factor_se(0.0, 5, 0.1) - 1.1 / 1.5);
  add("formulas/se-at-alpha-zero", d <= 1e-12, d);
  d = std::abs(improvement_factor_se(1.0, 4, 0.25) - 2.5);
  add("formulas/se-at-alpha-one", d <= 1e-12, d);

  bool ok = true;
  for (int i = 0; i <= 100; ++i) {
    double l = i / 100.0;
    BestSide b = best_side(l);
    ok = ok && b.bound == std::max(l, 1.0 - l) && weighted_alpha_lower_bound(l) == l;
  }
  add("formulas/best-side", ok, 0.0);

  ok = !speedup_exists_condition(0.5, 1.0) && speedup_exists_condition(0.51, 1.0) &&
       speedup_exists_condition(0.1, 0.1) && !speedup_exists_condition(0.0, 0.1);
  add("formulas/speedup-condition", ok, 0.0);

  Distribution q = Distribution::from_normalized({0.8, 0.2});
  Distribution r = Distribution::from_normalized({0.5, 0.5});
  d = std::abs(acceptance_rate_exact(q, r) - 0.7) + std::abs(tv_distance(q, r) - 0.6);
  add("formulas/acceptance-identity", d <= 1e-12, d);
  return checks;
}

}  // namespace

json run_validation_suite(const std::string& suite, const SuiteOptions& options) {
  json checks = json::array();
  auto append = [&](const json& more) {
    for (const json& c : more) checks.push_back(c);
  };
  bool all = suite == "all";
  if (!all && suite != "distribution" && suite != "acceptance" && suite != "never-slower" && suite != "formulas") {
    throw ConfigError("unknown suite '" + suite + "' (distribution, acceptance, never-slower, formulas, all)");
  }
  if (all || suite == "formulas") append(formulas_suite());
  if (all || suite == "acceptance") append(acceptance_suite(options));
  if (all || suite == "never-slower") append(never_slower_suite(options));
  if (all || suite == "distribution") append(distribution_suite(options));
  bool passed = true;
  for (const json& c : checks) passed = passed && c.at("passed").get<bool>();
  return {{"suite", suite}, {"passed", passed}, {"checks", checks}};
}

}  // namespace specens
