#include "specens/specens.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "specens/analysis.hpp"
#include "specens/decoding.hpp"
#include "specens/errors.hpp"
#include "specens/harness.hpp"
#include "specens/io.hpp"
#include "specens/models.hpp"
#include "specens/validation.hpp"

struct se_model {
  specens::ModelPtr model;
};

struct se_trace {
  specens::DecodeTrace trace;
};

namespace {

thread_local std::string last_error;

static_assert(static_cast<int>(specens::ErrorCode::kInternal) == SE_INTERNAL);

se_status fail(se_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Runs body, translating exceptions into a status and se_last_error().
template <typename Fn>
se_status guarded(Fn&& body) {
  try {
    body();
    last_error.clear();
    return SE_OK;
  } catch (const specens::Error& e) {
    return fail(static_cast<se_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(SE_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SE_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw specens::InvalidArgument(std::string(what) + " must not be NULL");
}

specens::EnsembleSpec to_spec(const se_ensemble& e) {
  specens::EnsembleSpec spec;
  spec.kind = specens::parse_ensemble_kind(e.kind ? e.kind : "weighted");
  spec.lambda = e.lambda;
  spec.mu = e.mu;
  if (e.weight_count) {
    require(e.weights, "ensemble.weights");
    spec.weights.assign(e.weights, e.weights + e.weight_count);
  }
  spec.temperature = e.temperature;
  return spec;
}

se_model* wrap(specens::ModelPtr m) { return new se_model{std::move(m)}; }

}  // namespace

extern "C" {

const char* se_version(void) { return specens::kEngineVersion; }

const char* se_status_name(se_status status) {
  if (status < SE_OK || status > SE_INTERNAL) return "unknown";
  return specens::error_code_name(static_cast<specens::ErrorCode>(status));
}

const char* se_last_error(void) { return last_error.c_str(); }

void se_string_free(char* s) { std::free(s); }

se_status se_model_random_table(uint64_t seed, size_t vocab_size, size_t context_length, double concentration,
                                double cost, const char* name, se_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = wrap(std::make_shared<specens::TableModel>(specens::random_table_model(
        seed, vocab_size, context_length, concentration, cost, name ? name : "table")));
  });
}

se_status se_model_train_ngram(const char* corpus_path, size_t order, double delta, size_t vocab_size, double cost,
                               const char* name, se_model** out) {
  return guarded([&] {
    require(corpus_path, "corpus_path");
    require(out, "out");
    specens::ModelSpec spec;
    spec.kind = "ngram";
    spec.path = corpus_path;
    spec.order = order;
    spec.delta = delta;
    spec.vocab_size = vocab_size;
    spec.cost = cost;
    spec.name = name ? name : "ngram";
    *out = wrap(specens::build_model(spec));
  });
}

se_status se_model_fixed(const double* probs, size_t vocab_size, double cost, const char* name, se_model** out) {
  return guarded([&] {
    require(probs, "probs");
    require(out, "out");
    std::vector<double> row(probs, probs + vocab_size);
    *out = wrap(std::make_shared<specens::TableModel>(
        specens::context_free_model(specens::normalize(row), cost, name ? name : "fixed")));
  });
}

se_status se_model_load(const char* path, se_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = wrap(std::make_shared<specens::TableModel>(specens::load_table_model(path)));
  });
}

se_status se_model_save(const se_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    if (auto table = dynamic_cast<const specens::TableModel*>(model->model.get())) {
      specens::save_table_model(*table, path);
    } else if (auto ngram = dynamic_cast<const specens::NGramModel*>(model->model.get())) {
      specens::save_table_model(ngram->to_table(), path);
    } else {
      throw specens::InvalidArgument("model kind cannot be saved");
    }
  });
}

se_status se_model_info_get(const se_model* model, se_model_info* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    out->vocab_size = model->model->vocab_size();
    out->context_length = model->model->context_length();
    out->cost = model->model->cost();
    out->name = model->model->name().c_str();
  });
}

se_status se_model_logits(const se_model* model, const int32_t* prefix, size_t prefix_length, double* out,
                          size_t capacity) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    if (prefix_length) require(prefix, "prefix");
    if (capacity < model->model->vocab_size()) throw specens::InvalidArgument("output buffer smaller than vocabulary");
    std::span<const specens::Token> p(prefix, prefix_length);
    specens::LogitsVec logits = model->model->logits_for(p);
    std::copy(logits.values().begin(), logits.values().end(), out);
  });
}

void se_model_free(se_model* model) { delete model; }

void se_decode_config_init(se_decode_config* config) {
  if (!config) return;
  *config = se_decode_config{};
  config->strategy = "vanilla-ensemble";
  config->ensemble.kind = "weighted";
  config->ensemble.lambda = 0.5;
  config->ensemble.mu = 0.1;
  config->ensemble.temperature = 1.0;
  config->max_tokens = 16;
  config->record_steps = 1;
}

se_status se_decode(const se_model* const* models, size_t model_count, const se_decode_config* config,
                    se_trace** out) {
  return guarded([&] {
    require(models, "models");
    require(config, "config");
    require(out, "out");
    std::vector<specens::ModelPtr> list;
    for (size_t i = 0; i < model_count; ++i) {
      require(models[i], "models[i]");
      list.push_back(models[i]->model);
    }
    specens::DecodeConfig dc;
    dc.strategy = specens::parse_strategy(config->strategy ? config->strategy : "vanilla-ensemble");
    dc.ensemble = to_spec(config->ensemble);
    if (config->gamma_count) {
      require(config->gammas, "gammas");
      dc.gammas.assign(config->gammas, config->gammas + config->gamma_count);
    }
    dc.max_tokens = config->max_tokens;
    dc.seed = config->seed;
    dc.default_proposer_index = config->default_proposer;
    if (config->prefix_length) {
      require(config->prefix, "prefix");
      dc.prefix.assign(config->prefix, config->prefix + config->prefix_length);
    }
    dc.record_steps = config->record_steps != 0;
    auto trace = std::make_unique<se_trace>();
    trace->trace = specens::decode(list, dc);
    *out = trace.release();
  });
}

size_t se_trace_length(const se_trace* trace) { return trace ? trace->trace.tokens.size() : 0; }

const int32_t* se_trace_tokens(const se_trace* trace) { return trace ? trace->trace.tokens.data() : nullptr; }

double se_trace_simulated_time(const se_trace* trace) { return trace ? trace->trace.simulated_time : 0.0; }

double se_trace_alpha(const se_trace* trace) { return trace ? trace->trace.empirical_alpha() : std::nan(""); }

size_t se_trace_invocation_count(const se_trace* trace, size_t model_index) {
  if (!trace || model_index >= trace->trace.invocations.size()) return 0;
  return trace->trace.invocations[model_index];
}

se_status se_trace_json(const se_trace* trace, char** out) {
  return guarded([&] {
    require(trace, "trace");
    require(out, "out");
    *out = dup_string(specens::trace_to_json(trace->trace).dump(2) + "\n");
  });
}

void se_trace_free(se_trace* trace) { delete trace; }

se_status se_experiment_run(const char* config_json, const char* base_dir, unsigned threads, char** csv, char** json,
                            char** summary) {
  return guarded([&] {
    require(config_json, "config_json");
    specens::ExperimentConfig config = specens::parse_experiment_config(std::string(config_json));
    if (threads) config.threads = threads;
    specens::ExperimentReport report = specens::run_experiment(config, base_dir ? base_dir : "");
    std::unique_ptr<char, decltype(&std::free)> c(nullptr, &std::free), j(nullptr, &std::free),
        s(nullptr, &std::free);
    if (csv) c.reset(dup_string(specens::report_to_csv(report)));
    if (json) j.reset(dup_string(specens::report_to_json(report).dump(2) + "\n"));
    if (summary) s.reset(dup_string(specens::report_summary(report)));
    if (csv) *csv = c.release();
    if (json) *json = j.release();
    if (summary) *summary = s.release();
  });
}

se_status se_validate(const char* suite, size_t sessions, double tolerance, uint64_t seed, unsigned threads,
                      char** verdict_json, int* passed) {
  return guarded([&] {
    require(suite, "suite");
    specens::SuiteOptions options;
    options.sessions = sessions;
    options.tolerance = tolerance;
    options.seed = seed;
    options.threads = threads;
    nlohmann::json verdict = specens::run_validation_suite(suite, options);
    if (passed) *passed = verdict.at("passed").get<bool>() ? 1 : 0;
    if (verdict_json) *verdict_json = dup_string(verdict.dump(2) + "\n");
  });
}

se_status se_formulas(double alpha, size_t gamma, size_t gamma_q, size_t gamma_p, double c, double lambda,
                      se_formulas_result* out) {
  return guarded([&] {
    require(out, "out");
    out->expected_tokens = specens::expected_accepted_tokens(alpha, gamma);
    out->factor_spec_ensemble = specens::improvement_factor_se(alpha, gamma, c);
    out->factor_alternate = specens::improvement_factor_alternate(alpha, gamma_q, gamma_p, c);
    out->lambda_bound = specens::weighted_alpha_lower_bound(lambda);
    specens::BestSide best = specens::best_side(lambda);
    out->best_side_bound = best.bound;
    out->best_side_is_q = best.proposer == specens::Proposer::kQ;
    out->speedup_possible = specens::speedup_exists_condition(lambda, c);
  });
}

}  // extern "C"
