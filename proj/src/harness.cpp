#include "specens/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "specens/io.hpp"

namespace specens {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

unsigned resolve_threads(unsigned requested, std::size_t work) {
  unsigned t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(work, 1)));
}

// Runs fn(i) for i in [0, n) on `threads` workers; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = resolve_threads(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

[[noreturn]] void rethrow_annotated(const Error& e, const std::string& where) {
  throw Error(e.code(), where + ": " + e.what());
}

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

void check_sweep(const Sweep& sweep) {
  if (sweep.values.empty()) throw ConfigError("sweep needs at least one value");
  for (double v : sweep.values) {
    bool ok = std::isfinite(v);
    switch (sweep.parameter) {
      case SweepParameter::kLambda: ok = ok && v >= 0.0 && v <= 1.0; break;
      case SweepParameter::kMu: ok = ok && v >= 0.0; break;
      case SweepParameter::kGamma: ok = ok && v >= 1.0 && v == std::floor(v); break;
      case SweepParameter::kTemperature: ok = ok && v >= 0.0; break;
    }
    if (!ok) {
      throw ConfigError(std::string("sweep value ") + format_number(v) + " out of range for " +
                        sweep_parameter_name(sweep.parameter));
    }
  }
}

}  // namespace

const char* sweep_parameter_name(SweepParameter p) {
  switch (p) {
    case SweepParameter::kLambda: return "lambda";
    case SweepParameter::kMu: return "mu";
    case SweepParameter::kGamma: return "gamma";
    case SweepParameter::kTemperature: return "temperature";
  }
  return "unknown";
}

ModelPtr build_model(const ModelSpec& spec, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  std::string name = spec.name.empty() ? spec.kind : spec.name;
  if (spec.kind == "random") {
    return std::make_shared<TableModel>(
        random_table_model(spec.seed, spec.vocab_size, spec.context_length, spec.concentration, spec.cost, name));
  }
  if (spec.kind == "file") return std::make_shared<TableModel>(load_table_model(resolve(spec.path)));
  if (spec.kind == "ngram") {
    TokenSeq stream = read_token_stream(resolve(spec.path));
    std::size_t vocab = spec.vocab_size;
    if (vocab == 0 && !stream.empty()) vocab = std::max<std::size_t>(2, static_cast<std::size_t>(*std::max_element(stream.begin(), stream.end())) + 1);
    return std::make_shared<NGramModel>(train_ngram(stream, spec.order, spec.delta, vocab, spec.cost, name));
  }
  if (spec.kind == "fixed") {
    return std::make_shared<TableModel>(context_free_model(normalize(spec.probs), spec.cost, name));
  }
  throw ConfigError("unknown model kind '" + spec.kind + "'");
}

std::uint64_t session_seed(std::uint64_t seed, std::size_t cell, std::size_t session) {
  return seed ^ mix_seed(cell) ^ mix_seed(mix_seed(session));
}

double RunTotals::alpha() const {
  std::uint64_t events = accepted + rejected;
  return events ? static_cast<double>(accepted) / static_cast<double>(events) : kNaN;
}

RunTotals run_sessions(ModelList models, const DecodeConfig& base, std::size_t sessions, std::uint64_t seed,
                       std::size_t cell, unsigned threads) {
  validate_decode(models, base);
  std::vector<DecodeTrace> traces(sessions);
  parallel_for(sessions, threads, [&](std::size_t i) {
    DecodeConfig cfg = base;
    cfg.record_steps = false;
    cfg.seed = session_seed(seed, cell, i);
    traces[i] = decode(models, cfg);
    traces[i].tokens.clear();
    traces[i].tokens.shrink_to_fit();
  });
  RunTotals totals;
  totals.sessions = sessions;
  totals.invocations.assign(models.size(), 0);
  for (const DecodeTrace& t : traces) {
    totals.simulated_time += t.simulated_time;
    totals.accepted += t.accepted;
    totals.rejected += t.rejected;
    for (std::size_t k = 0; k < models.size(); ++k) totals.invocations[k] += t.invocations[k];
  }
  // Every session runs to max_tokens.
  totals.tokens = static_cast<std::uint64_t>(sessions) * base.max_tokens;
  return totals;
}

// --- experiments ---

ExperimentReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& base_dir) {
  if (config.models.empty()) throw ConfigError("config declares no models");
  std::vector<ModelPtr> models;
  for (std::size_t i = 0; i < config.models.size(); ++i) {
    try {
      models.push_back(build_model(config.models[i], base_dir));
    } catch (const Error& e) {
      rethrow_annotated(e, "models[" + std::to_string(i) + "]");
    }
  }
  return run_experiment(config, models);
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<ModelPtr>& models) {
  if (config.strategies.empty()) throw ConfigError("config declares no strategies");
  if (config.sessions < 1) throw ConfigError("sessions must be >= 1");
  if (config.tokens_per_session < 1) throw ConfigError("tokens_per_session must be >= 1");
  if (config.sweep) check_sweep(*config.sweep);

  struct CellPlan {
    StrategySpec strategy;
    std::size_t value_index;
    double value;
    EnsembleSpec ensemble;
    std::vector<std::size_t> model_ids;
    std::vector<std::size_t> gammas;
    bool implicit;
  };

  const std::vector<double> values = config.sweep ? config.sweep->values : std::vector<double>{kNaN};
  std::vector<CellPlan> plans;
  auto baseline_key = [](const CellPlan& p) {
    return join_indices(p.model_ids) + "|" + ensemble_to_json(p.ensemble).dump();
  };

  for (std::size_t v = 0; v < values.size(); ++v) {
    std::vector<std::string> with_baseline;
    std::vector<CellPlan> needing;
    for (std::size_t s = 0; s < config.strategies.size(); ++s) {
      const StrategySpec& spec = config.strategies[s];
      CellPlan plan{spec, v, values[v], spec.ensemble.value_or(config.ensemble), spec.models, spec.gammas, false};
      if (plan.model_ids.empty()) {
        for (std::size_t k = 0; k < models.size(); ++k) plan.model_ids.push_back(k);
      }
      for (std::size_t id : plan.model_ids) {
        if (id >= models.size()) {
          throw ConfigError("strategies[" + std::to_string(s) + "] references undeclared model " + std::to_string(id));
        }
      }
      if (plan.gammas.empty()) plan.gammas.assign(plan.model_ids.size(), 1);
      if (config.sweep) {
        switch (config.sweep->parameter) {
          case SweepParameter::kLambda:
            if (plan.ensemble.kind != EnsembleKind::kWeighted) {
              throw ConfigError("strategies[" + std::to_string(s) + "]: lambda sweep needs a weighted ensemble");
            }
            plan.ensemble.lambda = values[v];
            break;
          case SweepParameter::kMu:
            if (plan.ensemble.kind != EnsembleKind::kContrastive) {
              throw ConfigError("strategies[" + std::to_string(s) + "]: mu sweep needs a contrastive ensemble");
            }
            plan.ensemble.mu = values[v];
            break;
          case SweepParameter::kTemperature: plan.ensemble.temperature = values[v]; break;
          case SweepParameter::kGamma:
            if (spec.default_proposer < plan.gammas.size()) {
              plan.gammas[spec.default_proposer] = static_cast<std::size_t>(values[v]);
            }
            break;
        }
      }
      if (spec.strategy == Strategy::kVanillaEnsemble) with_baseline.push_back(baseline_key(plan));
      plans.push_back(plan);
      needing.push_back(std::move(plan));
    }
    for (const CellPlan& p : needing) {
      std::string key = baseline_key(p);
      if (std::find(with_baseline.begin(), with_baseline.end(), key) != with_baseline.end()) continue;
      CellPlan base = p;
      base.strategy = StrategySpec{};
      base.strategy.strategy = Strategy::kVanillaEnsemble;
      base.strategy.label = "baseline";
      base.gammas.assign(p.model_ids.size(), 1);
      base.implicit = true;
      with_baseline.push_back(key);
      plans.push_back(std::move(base));
    }
  }

  ExperimentReport report;
  report.config_hash = config_hash(config);
  report.seed = config.seed;

  for (std::size_t c = 0; c < plans.size(); ++c) {
    const CellPlan& plan = plans[c];
    std::vector<ModelPtr> subset;
    for (std::size_t id : plan.model_ids) subset.push_back(models[id]);

    DecodeConfig dc;
    dc.strategy = plan.strategy.strategy;
    dc.ensemble = plan.ensemble;
    dc.gammas = plan.gammas;
    dc.max_tokens = config.tokens_per_session;
    dc.default_proposer_index = plan.strategy.default_proposer;
    dc.prefix = config.prefix;
    dc.record_steps = false;

    std::string where = "cell " + std::to_string(c) + " (" + strategy_name(dc.strategy) +
                        (config.sweep ? std::string(", ") + sweep_parameter_name(config.sweep->parameter) + "=" +
                                            format_number(plan.value)
                                      : std::string()) +
                        ")";
    RunTotals totals;
    try {
      totals = run_sessions(subset, dc, config.sessions, config.seed, c, config.threads);
    } catch (const Error& e) {
      rethrow_annotated(e, where);
    }

    CellRecord rec;
    rec.cell_index = c;
    rec.strategy = strategy_name(dc.strategy);
    rec.label = plan.strategy.label;
    rec.models = plan.model_ids;
    rec.gammas = plan.gammas;
    rec.parameter = config.sweep ? sweep_parameter_name(config.sweep->parameter) : "";
    rec.value = config.sweep ? plan.value : kNaN;
    rec.sessions = totals.sessions;
    rec.tokens = totals.tokens;
    rec.simulated_time = totals.simulated_time;
    rec.tokens_per_time = totals.tokens_per_time();
    rec.empirical_alpha = totals.alpha();
    rec.accepted = totals.accepted;
    rec.rejected = totals.rejected;
    rec.invocations = totals.invocations;
    rec.implicit_baseline = plan.implicit;
    rec.cost_ratio = kNaN;
    rec.predicted_alpha_bound = kNaN;
    rec.predicted_factor = kNaN;
    if (is_speculative(dc.strategy) && subset.size() == 2) {
      const std::size_t proposer = dc.default_proposer_index;
      const std::size_t verifier = 1 - proposer;
      const double c_ratio = subset[proposer]->cost() / subset[verifier]->cost();
      rec.cost_ratio = c_ratio;
      if (dc.strategy != Strategy::kVanillaSD && dc.ensemble.kind == EnsembleKind::kWeighted) {
        rec.predicted_alpha_bound = proposer == 0 ? dc.ensemble.lambda : 1.0 - dc.ensemble.lambda;
      }
      if (!std::isnan(rec.empirical_alpha)) {
        if (dc.strategy == Strategy::kSpecEnsemble) {
          rec.predicted_factor = improvement_factor_se(rec.empirical_alpha, plan.gammas[proposer], c_ratio);
        } else if (dc.strategy == Strategy::kAlternateProposal) {
          rec.predicted_factor = improvement_factor_alternate(rec.empirical_alpha, plan.gammas[proposer],
                                                              plan.gammas[verifier], c_ratio);
        }
      }
    }
    report.cells.push_back(std::move(rec));
  }

  // Speedups against the matching vanilla-ensemble cell.
  for (std::size_t c = 0; c < plans.size(); ++c) {
    const std::string key = baseline_key(plans[c]);
    for (std::size_t b = 0; b < plans.size(); ++b) {
      if (plans[b].value_index == plans[c].value_index &&
          plans[b].strategy.strategy == Strategy::kVanillaEnsemble && baseline_key(plans[b]) == key) {
        report.cells[c].speedup = report.cells[c].tokens_per_time / report.cells[b].tokens_per_time;
        break;
      }
    }
  }
  return report;
}

ExperimentReport tradeoff_sweep(const ModelPtr& proposer, const ModelPtr& target, const std::vector<double>& lambdas,
                                const TradeoffOptions& options) {
  ExperimentConfig config;
  config.ensemble = EnsembleSpec::weighted(0.5, options.temperature);
  StrategySpec baseline;
  baseline.strategy = Strategy::kVanillaEnsemble;
  StrategySpec se;
  se.strategy = Strategy::kSpecEnsemble;
  se.gammas = {options.gamma, 1};
  config.strategies = {baseline, se};
  config.sweep = Sweep{SweepParameter::kLambda, lambdas};
  config.sessions = options.sessions;
  config.tokens_per_session = options.tokens_per_session;
  config.prefix = options.prefix;
  config.seed = options.seed;
  ModelSpec q;
  q.kind = "external";
  q.name = proposer->name();
  ModelSpec p = q;
  p.name = target->name();
  config.models = {q, p};
  return run_experiment(config, std::vector<ModelPtr>{proposer, target});
}

// --- validation suites ---

namespace {

DecodeConfig config_under_test(const EnsembleSpec& ensemble, const StrategyUnderTest& s, std::size_t max_tokens,
                               const TokenSeq& prefix) {
  DecodeConfig dc;
  dc.strategy = s.strategy;
  dc.ensemble = ensemble;
  dc.gammas = s.gammas;
  dc.default_proposer_index = s.default_proposer;
  dc.max_tokens = max_tokens;
  dc.prefix = prefix;
  dc.record_steps = false;
  return dc;
}

}  // namespace

DistributionCheck validate_distributional_correctness(ModelList models, const EnsembleSpec& ensemble,
                                                      const StrategyUnderTest& strategy,
                                                      const DistributionCheckOptions& options) {
  if (models.empty()) throw ConfigError("no models");
  if (models[0]->vocab_size() > 64) throw InvalidArgument("distributional check supports vocabularies up to 64");
  if (options.sessions < options.min_sessions) {
    throw InsufficientSamples("distributional check needs >= " + std::to_string(options.min_sessions) +
                              " sessions, got " + std::to_string(options.sessions));
  }
  if (options.positions < 1) throw InvalidArgument("positions must be >= 1");
  DecodeConfig dc = config_under_test(ensemble, strategy, options.positions, options.prefix);
  validate_decode(models, dc);
  const Ensemble exact(ensemble, models.size());
  const std::size_t vocab = models[0]->vocab_size();

  std::vector<TokenSeq> outputs(options.sessions);
  parallel_for(options.sessions, options.threads, [&](std::size_t i) {
    DecodeConfig cfg = dc;
    cfg.seed = session_seed(options.seed, 0, i);
    outputs[i] = decode(models, cfg).tokens;
  });

  DistributionCheck check;
  check.tolerance = options.tolerance;
  check.passed = true;
  for (std::size_t pos = 0; pos < options.positions; ++pos) {
    std::map<TokenSeq, std::vector<std::uint64_t>> strata;
    for (const TokenSeq& out : outputs) {
      auto& counts = strata[TokenSeq(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(pos))];
      if (counts.empty()) counts.assign(vocab, 0);
      ++counts[static_cast<std::size_t>(out[pos])];
    }
    PositionCheck pc;
    pc.position = pos;
    std::vector<double> diff(vocab, 0.0);
    for (const auto& [stratum, counts] : strata) {
      std::uint64_t n = 0;
      for (auto c : counts) n += c;
      if (n < options.min_stratum) continue;
      TokenSeq context = options.prefix;
      context.insert(context.end(), stratum.begin(), stratum.end());
      Distribution r = exact_next_distribution(models, exact, context);
      double stratum_tv = 0.0;
      for (std::size_t x = 0; x < vocab; ++x) {
        double expected = static_cast<double>(n) * r.probs()[x];
        diff[x] += static_cast<double>(counts[x]) - expected;
        stratum_tv += std::abs(static_cast<double>(counts[x]) / static_cast<double>(n) - r.probs()[x]);
      }
      ++pc.strata;
      pc.sessions += n;
      if (n > pc.top_stratum_sessions) {
        pc.top_stratum_sessions = n;
        pc.top_stratum_tv = stratum_tv;
      }
    }
    if (pc.strata == 0) {
      throw InsufficientSamples("position " + std::to_string(pos) + ": no realized prefix reached " +
                                std::to_string(options.min_stratum) + " sessions");
    }
    for (double d : diff) pc.tv += std::abs(d);
    pc.tv /= static_cast<double>(pc.sessions);
    check.passed = check.passed && pc.tv <= options.tolerance;
    check.positions.push_back(pc);
  }
  return check;
}

AcceptanceCheck validate_acceptance_identity(ModelList models, const EnsembleSpec& ensemble,
                                             const StrategyUnderTest& strategy,
                                             const AcceptanceCheckOptions& options) {
  if (options.events < options.min_events) {
    throw InsufficientSamples("acceptance check needs >= " + std::to_string(options.min_events) + " events");
  }
  DecodeConfig dc = config_under_test(ensemble, strategy, options.tokens_per_session, options.prefix);
  validate_decode(models, dc);

  struct Group {
    AcceptanceGroup stats;
    Distribution q;
    Distribution r;
  };
  std::map<std::vector<double>, Group> groups;
  std::uint64_t total = 0;
  std::uint64_t accepted = 0;
  std::vector<double> key;
  VerificationObserver observer = [&](const VerificationEvent& ev) {
    key.assign(1, static_cast<double>(ev.origin_model));
    key.insert(key.end(), ev.q.probs().begin(), ev.q.probs().end());
    key.insert(key.end(), ev.r.probs().begin(), ev.r.probs().end());
    auto it = groups.find(key);
    if (it == groups.end()) it = groups.emplace(key, Group{{ev.origin_model}, ev.q, ev.r}).first;
    ++it->second.stats.events;
    ++total;
    if (ev.accepted) {
      ++it->second.stats.accepted;
      ++accepted;
    }
  };
  for (std::size_t session = 0; total < options.events; ++session) {
    if (session >= 1000 && total == 0) {
      throw InsufficientSamples(std::string(strategy_name(strategy.strategy)) + " produced no verification events");
    }
    DecodeConfig cfg = dc;
    cfg.seed = session_seed(options.seed, 0, session);
    decode(models, cfg, observer);
  }

  AcceptanceCheck check;
  check.events = total;
  check.tolerance = options.tolerance;
  check.overall_alpha = static_cast<double>(accepted) / static_cast<double>(total);
  std::size_t scored = 0;
  for (auto& [_, g] : groups) {
    AcceptanceGroup a = g.stats;
    a.empirical = static_cast<double>(a.accepted) / static_cast<double>(a.events);
    a.exact = acceptance_rate_exact(g.q, g.r);
    a.scored = a.events >= options.min_group_events;
    if (a.scored) {
      ++scored;
      check.max_deviation = std::max(check.max_deviation, std::abs(a.empirical - a.exact));
    }
    check.groups.push_back(a);
  }
  if (scored == 0) {
    throw InsufficientSamples("no (q, r) context collected " + std::to_string(options.min_group_events) + " events");
  }
  std::sort(check.groups.begin(), check.groups.end(),
            [](const AcceptanceGroup& a, const AcceptanceGroup& b) { return a.events > b.events; });
  check.passed = check.max_deviation <= options.tolerance;
  return check;
}

NeverSlowerCheck validate_never_slower(const std::vector<std::pair<ModelPtr, ModelPtr>>& pairs,
                                       const std::vector<std::uint64_t>& seeds, const EnsembleSpec& ensemble,
                                       std::size_t tokens) {
  NeverSlowerCheck check;
  check.max_excess = -std::numeric_limits<double>::infinity();
  for (const auto& [q, p] : pairs) {
    std::vector<ModelPtr> models{q, p};
    for (std::uint64_t seed : seeds) {
      DecodeConfig dc;
      dc.ensemble = ensemble;
      dc.gammas = {1, 1};
      dc.max_tokens = tokens;
      dc.seed = seed;
      dc.record_steps = false;
      dc.strategy = Strategy::kAlternateProposal;
      DecodeTrace alt = decode(models, dc);
      dc.strategy = Strategy::kVanillaEnsemble;
      DecodeTrace van = decode(models, dc);
      if (alt.tokens.size() != van.tokens.size()) throw InternalError("runs emitted different token counts");
      ++check.comparisons;
      double excess = alt.simulated_time - van.simulated_time;
      check.max_excess = std::max(check.max_excess, excess);
      if (alt.simulated_time > van.simulated_time) ++check.violations;
      if (alt.simulated_time < van.simulated_time) ++check.strict;
    }
  }
  check.strict_fraction =
      check.comparisons ? static_cast<double>(check.strict) / static_cast<double>(check.comparisons) : 0.0;
  check.passed = check.violations == 0;
  return check;
}

}  // namespace specens
