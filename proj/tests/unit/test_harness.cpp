#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "specens/harness.hpp"
#include "specens/io.hpp"

using namespace specens;

namespace {

ModelPtr fixed(std::vector<double> probs, double cost = 1.0) {
  return std::make_shared<TableModel>(context_free_model(Distribution::from_normalized(std::move(probs)), cost));
}

ModelPtr table(std::uint64_t seed, std::size_t vocab = 16, double cost = 1.0) {
  return std::make_shared<TableModel>(random_table_model(seed, vocab, 1, 1.0, cost));
}

const char* kPairConfig = R"({
  "models": [
    {"kind": "random", "seed": 11, "vocab_size": 8, "context_length": 1, "cost": 0.1},
    {"kind": "random", "seed": 12, "vocab_size": 8, "context_length": 1, "cost": 1.0}
  ],
  "ensemble": {"kind": "weighted", "lambda": 0.5},
  "strategies": [
    {"strategy": "vanilla-ensemble"},
    {"strategy": "spec-ensemble", "gammas": [3, 1]},
    {"strategy": "alternate", "gammas": [3, 2], "label": "alt, 3/2"}
  ],
  "sweep": {"parameter": "lambda", "values": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
  "sessions": 20,
  "tokens_per_session": 32,
  "seed": 5
})";

}  // namespace

TEST(SessionSeed, MixesCellAndSession) {
  EXPECT_NE(session_seed(1, 0, 1), session_seed(1, 1, 0));
  EXPECT_EQ(session_seed(9, 2, 3), 9 ^ mix_seed(2) ^ mix_seed(mix_seed(3)));
}

TEST(RunExperiment, VanillaOnlyHasUnitSpeedup) {
  auto cfg = parse_experiment_config(std::string(R"({
    "models": [{"kind": "random", "seed": 1, "vocab_size": 4}, {"kind": "random", "seed": 2, "vocab_size": 4}],
    "strategies": [{"strategy": "vanilla"}],
    "sweep": {"parameter": "temperature", "values": [0, 0.5, 1]},
    "sessions": 3, "tokens_per_session": 5
  })"));
  auto report = run_experiment(cfg);
  ASSERT_EQ(report.cells.size(), 3u);
  for (const auto& c : report.cells) {
    EXPECT_EQ(c.speedup, 1.0);
    EXPECT_GT(c.simulated_time, 0.0);
    EXPECT_FALSE(c.implicit_baseline);
  }
  EXPECT_NE(report_summary(report).find("1.00"), std::string::npos);
}

TEST(RunExperiment, LambdaSweepCellCountsAndDeterminism) {
  auto cfg = parse_experiment_config(std::string(kPairConfig));
  auto a = run_experiment(cfg);
  EXPECT_EQ(a.cells.size(), 27u);
  std::string csv = report_to_csv(a);
  std::size_t rows = 0;
  for (char ch : csv) rows += ch == '\n';
  EXPECT_EQ(rows, 1u + 27u);
  EXPECT_NE(csv.find("\"alt, 3/2\""), std::string::npos);
  cfg.threads = 1;
  auto b = run_experiment(cfg);
  cfg.threads = 4;
  auto c = run_experiment(cfg);
  EXPECT_EQ(report_to_csv(b), csv);
  EXPECT_EQ(report_to_csv(c), csv);
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(c).dump());
  for (const auto& cell : a.cells) {
    if (cell.strategy == "spec-ensemble") EXPECT_GE(cell.empirical_alpha, cell.value);
  }
}

TEST(RunExperiment, AddsImplicitBaselinePerModelSet) {
  auto cfg = parse_experiment_config(std::string(R"({
    "models": [{"kind": "random", "seed": 1, "vocab_size": 4, "cost": 0.2},
               {"kind": "random", "seed": 2, "vocab_size": 4},
               {"kind": "random", "seed": 3, "vocab_size": 4}],
    "ensemble": {"kind": "general", "weights": [0.2, 0.3, 0.5]},
    "strategies": [{"strategy": "nmodel-se", "gammas": [3, 1, 1]},
                   {"strategy": "spec-ensemble", "models": [0, 1], "gammas": [2, 1],
                    "ensemble": {"kind": "contrastive", "mu": 0.1}}],
    "sessions": 4, "tokens_per_session": 16
  })"));
  auto report = run_experiment(cfg);
  ASSERT_EQ(report.cells.size(), 4u);
  std::size_t implicit = 0;
  for (const auto& c : report.cells) {
    implicit += c.implicit_baseline;
    if (c.implicit_baseline) EXPECT_EQ(c.speedup, 1.0);
    EXPECT_TRUE(std::isfinite(c.speedup));
  }
  EXPECT_EQ(implicit, 2u);
}

TEST(RunExperiment, GammaSweepSetsDefaultProposerGamma) {
  auto cfg = parse_experiment_config(std::string(R"({
    "models": [{"kind": "random", "seed": 1, "vocab_size": 4, "cost": 0.2},
               {"kind": "random", "seed": 2, "vocab_size": 4}],
    "strategies": [{"strategy": "spec-ensemble", "gammas": [1, 1]}],
    "sweep": {"parameter": "gamma", "values": [1, 2, 3, 4, 5]},
    "sessions": 2, "tokens_per_session": 8
  })"));
  auto report = run_experiment(cfg);
  std::size_t g = 1;
  for (const auto& c : report.cells) {
    if (c.strategy != "spec-ensemble") continue;
    EXPECT_EQ(c.gammas, (std::vector<std::size_t>{g, 1}));
    ++g;
  }
  EXPECT_EQ(g, 6u);
}

TEST(RunExperiment, IdenticalModelsAlternateApproachesTwo) {
  auto q = table(3, 8, 1.0);
  ExperimentConfig cfg;
  StrategySpec alt;
  alt.strategy = Strategy::kAlternateProposal;
  alt.gammas = {1, 1};
  cfg.strategies = {alt};
  cfg.sessions = 3;
  cfg.tokens_per_session = 200;
  cfg.models = {ModelSpec{}, ModelSpec{}};
  auto report = run_experiment(cfg, std::vector<ModelPtr>{q, q});
  ASSERT_EQ(report.cells.size(), 2u);
  EXPECT_DOUBLE_EQ(report.cells[0].speedup, 2.0 * 200 / 201);
}

TEST(RunExperiment, ErrorsCarryCellCoordinates) {
  auto cfg = parse_experiment_config(std::string(R"({
    "models": [{"kind": "random", "seed": 1, "vocab_size": 4}, {"kind": "random", "seed": 2, "vocab_size": 5}],
    "strategies": [{"strategy": "spec-ensemble"}],
    "sessions": 1, "tokens_per_session": 4
  })"));
  try {
    run_experiment(cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabMismatch);
    EXPECT_NE(std::string(e.what()).find("cell 0"), std::string::npos) << e.what();
  }
}

TEST(Config, RejectsInvalidDocuments) {
  auto expect_config_error = [](const std::string& text, const std::string& needle) {
    try {
      parse_experiment_config(text);
      FAIL() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  const std::string models = R"("models": [{"kind": "random", "seed": 1, "vocab_size": 4}])";
  expect_config_error("{", "JSON");
  expect_config_error(R"({"strategies": [{"strategy": "vanilla"}]})", "models");
  expect_config_error("{" + models + R"(, "strategies": []})", "strategies");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "beam"}]})", "strategies[0].strategy");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "vanilla", "models": [0, 3]}]})",
                      "undeclared model 3");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "vanilla"}], "sessions": 0})", "sessions");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "vanilla"}], "bogus": 1})", "bogus");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "vanilla"}],
      "ensemble": {"kind": "weighted", "mu": 0.2}})",
                      "ensemble.mu");
  expect_config_error("{" + models + R"(, "strategies": [{"strategy": "vanilla"}],
      "sweep": {"parameter": "beta", "values": [1]}})",
                      "sweep.parameter");
  expect_config_error(R"({"models": [{"kind": "random", "vocab_size": 1}], "strategies": [{"strategy": "vanilla"}]})",
                      "models[0].vocab_size");
}

TEST(Config, SweepRangeCheckedAtRun) {
  auto cfg = parse_experiment_config(std::string(R"({
    "models": [{"kind": "random", "seed": 1, "vocab_size": 4}, {"kind": "random", "seed": 2, "vocab_size": 4}],
    "strategies": [{"strategy": "vanilla"}],
    "sweep": {"parameter": "lambda", "values": [0.5, 1.5]}
  })"));
  EXPECT_THROW(run_experiment(cfg), ConfigError);
  cfg.sweep->values = {0.5};
  cfg.ensemble = EnsembleSpec::contrastive(0.1);
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(Config, HashIgnoresOutputAndIsStable) {
  auto a = parse_experiment_config(std::string(kPairConfig));
  auto b = a;
  b.output_path = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 6;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto round = parse_experiment_config(config_to_json(a));
  EXPECT_EQ(config_hash(round), config_hash(a));
}

TEST(Csv, Escaping) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(format_number(NAN), "");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(std::stod(format_number(1.0 / 3)), 1.0 / 3);
}

TEST(ModelSpecs, BuildFromFileAndCorpus) {
  auto dir = std::filesystem::temp_directory_path() / "specens_harness_test";
  std::filesystem::create_directories(dir);
  save_table_model(random_table_model(4, 5, 1, 1.0, 0.5, "saved"), dir / "m.json");
  std::ofstream(dir / "corpus.txt") << "0 1 2 0 1 2 0 1";
  ModelSpec file;
  file.kind = "file";
  file.path = "m.json";
  EXPECT_EQ(build_model(file, dir)->name(), "saved");
  ModelSpec ngram;
  ngram.kind = "ngram";
  ngram.path = "corpus.txt";
  ngram.order = 1;
  auto m = build_model(ngram, dir);
  EXPECT_EQ(m->vocab_size(), 3u);
  ModelSpec missing = file;
  missing.path = "nope.json";
  EXPECT_THROW(build_model(missing, dir), IoError);
}

TEST(Validation, DistributionPassesForSpeculativeAndVanilla) {
  std::vector<ModelPtr> m{table(101, 16, 0.1), table(102, 16, 1.0)};
  DistributionCheckOptions opt;
  for (Strategy s : {Strategy::kVanillaEnsemble, Strategy::kSpecEnsemble}) {
    auto check = validate_distributional_correctness(m, EnsembleSpec::weighted(0.5), {s, {5, 1}, 0}, opt);
    EXPECT_TRUE(check.passed) << strategy_name(s);
    ASSERT_EQ(check.positions.size(), 3u);
    for (const auto& p : check.positions) EXPECT_LE(p.tv, 0.02);
  }
}

TEST(Validation, DistributionCatchesVerifierMutation) {
  // Vanilla SD verifies against p, not the ensemble: TV(q, p) >= 0.5 makes
  // the discrepancy visible.
  std::vector<ModelPtr> m{fixed({0.7, 0.1, 0.1, 0.1}), fixed({0.1, 0.1, 0.1, 0.7})};
  ASSERT_GE(tv_distance(m[0]->distribution_for({}), m[1]->distribution_for({})), 0.5);
  DistributionCheckOptions opt;
  auto check = validate_distributional_correctness(m, EnsembleSpec::weighted(0.5), {Strategy::kVanillaSD, {3, 1}, 0},
                                                   opt);
  EXPECT_FALSE(check.passed);
  EXPECT_GT(check.positions[0].tv, 0.2);
}

TEST(Validation, DistributionRequiresSamples) {
  std::vector<ModelPtr> m{table(1), table(2)};
  DistributionCheckOptions opt;
  opt.sessions = 1000;
  EXPECT_THROW(validate_distributional_correctness(m, EnsembleSpec::weighted(0.5), {}, opt), InsufficientSamples);
  opt.sessions = 100000;
  opt.min_stratum = 100000;
  opt.positions = 2;
  EXPECT_THROW(validate_distributional_correctness(m, EnsembleSpec::weighted(0.5), {}, opt), InsufficientSamples);
}

TEST(Validation, AcceptanceIdentityContextFree) {
  std::vector<ModelPtr> m{fixed({0.8, 0.2}), fixed({0.2, 0.8})};
  AcceptanceCheckOptions opt;
  auto check =
      validate_acceptance_identity(m, EnsembleSpec::weighted(0.5), {Strategy::kSpecEnsemble, {4, 1}, 0}, opt);
  EXPECT_TRUE(check.passed);
  EXPECT_NEAR(check.overall_alpha, 0.7, 0.01);
  EXPECT_GE(check.events, 100000u);
}

TEST(Validation, AcceptanceIdenticalModelsIsExactlyOne) {
  auto q = table(5, 8);
  std::vector<ModelPtr> m{q, q};
  AcceptanceCheckOptions opt;
  opt.events = 400000;
  auto check = validate_acceptance_identity(m, EnsembleSpec::weighted(0.5), {Strategy::kSpecEnsemble, {4, 1}, 0}, opt);
  EXPECT_EQ(check.overall_alpha, 1.0);
  EXPECT_NEAR(check.max_deviation, 0.0, 1e-12);
}

TEST(Validation, AcceptanceNeedsVerifications) {
  std::vector<ModelPtr> m{table(1), table(2)};
  EXPECT_THROW(validate_acceptance_identity(m, EnsembleSpec::weighted(0.5), {Strategy::kVanillaEnsemble, {}, 0}, {}),
               InsufficientSamples);
  AcceptanceCheckOptions few;
  few.events = 10;
  EXPECT_THROW(validate_acceptance_identity(m, EnsembleSpec::weighted(0.5), {}, few), InsufficientSamples);
}

TEST(Validation, NeverSlowerOnDisjointAndIdentical) {
  auto q = fixed({1, 0}, 0.3);
  auto p = fixed({0, 1}, 1.0);
  auto same = table(7, 8, 0.5);
  auto check = validate_never_slower({{q, p}}, {1, 2, 3}, EnsembleSpec::weighted(0.5), 64);
  EXPECT_TRUE(check.passed);
  EXPECT_EQ(check.comparisons, 3u);
  EXPECT_EQ(check.violations, 0u);
  EXPECT_LT(check.max_excess, 0.0);
  auto ident = validate_never_slower({{same, same}}, {1, 2, 3}, EnsembleSpec::weighted(0.5), 64);
  EXPECT_EQ(ident.strict_fraction, 1.0);
}

TEST(Tradeoff, AlphaNondecreasingInLambdaAndEndpoints) {
  auto q = table(21, 8, 0.1);
  auto p = table(22, 8, 1.0);
  TradeoffOptions opt;
  opt.sessions = 200;
  auto report = tradeoff_sweep(q, p, {0.0, 0.25, 0.5, 0.75, 1.0}, opt);
  std::vector<double> alphas;
  for (const auto& c : report.cells) {
    if (c.strategy == "spec-ensemble") alphas.push_back(c.empirical_alpha);
  }
  ASSERT_EQ(alphas.size(), 5u);
  EXPECT_EQ(alphas.back(), 1.0);
  for (std::size_t i = 1; i < alphas.size(); ++i) EXPECT_GE(alphas[i] + 0.01, alphas[i - 1]);
  for (std::size_t i = 0; i < alphas.size(); ++i) EXPECT_GE(alphas[i], 0.25 * double(i));
}

TEST(Tradeoff, LambdaZeroIsVanillaSD) {
  auto q = table(21, 8, 0.1);
  auto p = table(22, 8, 1.0);
  TradeoffOptions opt;
  opt.sessions = 300;
  auto report = tradeoff_sweep(q, p, {0.0}, opt);
  DecodeConfig sd;
  sd.strategy = Strategy::kVanillaSD;
  sd.gammas = {opt.gamma, 1};
  sd.max_tokens = opt.tokens_per_session;
  std::vector<ModelPtr> models{q, p};
  auto totals = run_sessions(models, sd, 300, 999, 0);
  const CellRecord* se = nullptr;
  for (const auto& c : report.cells) {
    if (c.strategy == "spec-ensemble") se = &c;
  }
  ASSERT_NE(se, nullptr);
  EXPECT_NEAR(se->empirical_alpha, totals.alpha(), 0.02);
}

TEST(TraceJson, FieldNamesMatchTrace) {
  std::vector<ModelPtr> m{table(1, 4), table(2, 4)};
  DecodeConfig c;
  c.strategy = Strategy::kAlternateProposal;
  c.gammas = {2, 2};
  c.max_tokens = 6;
  auto j = trace_to_json(decode(m, c));
  for (const char* k : {"tokens", "steps", "invocations", "simulated_time", "empirical_alpha"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["tokens"].size(), 6u);
  EXPECT_TRUE(j["steps"][0].contains("verifications"));
}
