// specens command line: fixture models, decodes, experiments, validation
// suites and the formula calculator. Talks to the engine only through the
// C API.
//
// Exit codes: 0 success, 1 validation failure, 2 usage/config error,
// 3 runtime error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "specens/specens.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(se_status s) {
  switch (s) {
    case SE_OK: return kExitOk;
    case SE_INVALID_ARGUMENT:
    case SE_VOCAB_MISMATCH:
    case SE_WEIGHT:
    case SE_TOKEN_OUT_OF_RANGE:
    case SE_CONFIG: return kExitUsage;
    default: return kExitRuntime;
  }
}

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

void check(se_status s) {
  if (s != SE_OK) throw Failure(exit_code_for(s), std::string(se_status_name(s)) + ": " + se_last_error());
}

struct ModelHandle {
  se_model* ptr = nullptr;
  ModelHandle() = default;
  ModelHandle(const ModelHandle&) = delete;
  ModelHandle& operator=(const ModelHandle&) = delete;
  ModelHandle(ModelHandle&& o) noexcept : ptr(o.ptr) { o.ptr = nullptr; }
  ~ModelHandle() { se_model_free(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { se_string_free(ptr); }
  std::string str() const { return ptr ? ptr : ""; }
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  for (const std::string& item : split(text, ',')) {
    std::istringstream is(item);
    T value{};
    if (!(is >> value) || !(is >> std::ws).eof()) throw UsageError(std::string(flag) + ": bad entry '" + item + "'");
    if constexpr (std::is_integral_v<T>) {
      if (item.find('-') != std::string::npos) throw UsageError(std::string(flag) + ": ids must be non-negative");
    }
    out.push_back(value);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Failure(kExitRuntime, "cannot write " + path.string());
  out << content;
  if (!out) throw Failure(kExitRuntime, "write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure(kExitRuntime, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// --- gen-model ---

struct GenModelArgs {
  std::string kind = "table";
  uint64_t seed = 0;
  size_t vocab = 0;
  size_t context = 1;
  double concentration = 1.0;
  std::string corpus;
  size_t order = 1;
  double delta = 1.0;
  double cost = 1.0;
  std::string name;
  std::string out;
};

void add_gen_model(CLI::App& app, GenModelArgs& a) {
  app.add_option("--kind", a.kind, "Model kind: table (random Dirichlet rows) or ngram (trained on --corpus)")
      ->check(CLI::IsMember({"table", "ngram"}));
  app.add_option("--seed", a.seed, "RNG seed for table rows (table only)");
  app.add_option("--vocab", a.vocab, "Vocabulary size, >= 2 (ngram: 0 or omitted infers max id + 1)");
  app.add_option("--context", a.context, "Context length in tokens (table only)");
  app.add_option("--concentration", a.concentration, "Symmetric Dirichlet concentration (table only)");
  app.add_option("--corpus", a.corpus, "Token-id corpus, whitespace or comma separated (ngram only)");
  app.add_option("--order", a.order, "Number of conditioning tokens (ngram only)");
  app.add_option("--delta", a.delta, "Additive smoothing constant (ngram only)");
  app.add_option("--cost", a.cost, "Declared cost of one invocation, > 0");
  app.add_option("--name", a.name, "Model name stored in the file (default: the kind)");
  app.add_option("--out", a.out, "Output model file")->required();
}

int run_gen_model(const CLI::App& app, const GenModelArgs& a) {
  ModelHandle m;
  if (a.kind == "table") {
    for (const char* flag : {"--corpus", "--order", "--delta"}) {
      if (app.count(flag)) throw UsageError(std::string(flag) + " is only valid with --kind ngram");
    }
    if (!app.count("--vocab")) throw UsageError("--vocab is required with --kind table");
    check(se_model_random_table(a.seed, a.vocab, a.context, a.concentration, a.cost,
                                a.name.empty() ? "table" : a.name.c_str(), &m.ptr));
  } else {
    for (const char* flag : {"--seed", "--context", "--concentration"}) {
      if (app.count(flag)) throw UsageError(std::string(flag) + " is only valid with --kind table");
    }
    if (a.corpus.empty()) throw UsageError("--corpus is required with --kind ngram");
    if (app.count("--vocab") && a.vocab < 2) throw UsageError("--vocab must be >= 2");
    check(se_model_train_ngram(a.corpus.c_str(), a.order, a.delta, a.vocab, a.cost,
                               a.name.empty() ? "ngram" : a.name.c_str(), &m.ptr));
  }
  check(se_model_save(m.ptr, a.out.c_str()));
  se_model_info info;
  check(se_model_info_get(m.ptr, &info));
  std::printf("%s vocab=%zu context=%zu cost=%g -> %s\n", info.name, info.vocab_size, info.context_length, info.cost,
              a.out.c_str());
  return kExitOk;
}

// --- decode ---

struct DecodeArgs {
  std::string strategy = "vanilla-ensemble";
  std::string models;
  std::string ensemble = "weighted";
  double lambda = 0.5;
  double mu = 0.1;
  std::string weights;
  double temperature = 1.0;
  std::string gammas;
  size_t max_tokens = 16;
  uint64_t seed = 0;
  size_t proposer = 0;
  std::string prefix;
  std::string trace;
};

void add_decode(CLI::App& app, DecodeArgs& a) {
  app.add_option("--strategy", a.strategy,
                 "vanilla-ensemble | vanilla-sd | spec-ensemble | alternate | nmodel-se");
  app.add_option("--models", a.models, "Comma-separated model files; the first is the default proposer")->required();
  app.add_option("--ensemble", a.ensemble, "Ensemble function: weighted | contrastive | general")
      ->check(CLI::IsMember({"weighted", "contrastive", "general"}));
  app.add_option("--lambda", a.lambda, "Weight of model 0 in the weighted ensemble (weighted only)");
  app.add_option("--mu", a.mu, "Amateur coefficient in the contrastive ensemble (contrastive only)");
  app.add_option("--weights", a.weights, "Comma-separated per-model weights (general only)");
  app.add_option("--temperature", a.temperature, "Sampling temperature; 0 is greedy");
  app.add_option("--gammas", a.gammas, "Comma-separated proposal length per model (default: all 1)");
  app.add_option("--max-tokens", a.max_tokens, "Number of tokens to emit");
  app.add_option("--seed", a.seed, "RNG seed");
  app.add_option("--proposer", a.proposer, "Index of the default proposer model");
  app.add_option("--prefix", a.prefix, "Comma-separated prompt token ids");
  app.add_option("--trace", a.trace, "Write the full decode trace as JSON to this file");
}

int run_decode(const CLI::App& app, const DecodeArgs& a) {
  if (app.count("--lambda") && a.ensemble != "weighted") throw UsageError("--lambda requires --ensemble weighted");
  if (app.count("--mu") && a.ensemble != "contrastive") throw UsageError("--mu requires --ensemble contrastive");
  if (app.count("--weights") && a.ensemble != "general") throw UsageError("--weights requires --ensemble general");
  if (a.ensemble == "general" && !app.count("--weights")) throw UsageError("--ensemble general needs --weights");

  std::vector<std::string> paths = split(a.models, ',');
  if (paths.empty()) throw UsageError("--models lists no files");
  std::vector<double> weights = parse_list<double>(a.weights, "--weights");
  std::vector<size_t> gammas = parse_list<size_t>(a.gammas, "--gammas");
  std::vector<int32_t> prefix = parse_list<int32_t>(a.prefix, "--prefix");

  std::vector<ModelHandle> models(paths.size());
  std::vector<const se_model*> raw;
  for (size_t i = 0; i < paths.size(); ++i) {
    check(se_model_load(paths[i].c_str(), &models[i].ptr));
    raw.push_back(models[i].ptr);
  }

  se_decode_config cfg;
  se_decode_config_init(&cfg);
  cfg.strategy = a.strategy.c_str();
  cfg.ensemble.kind = a.ensemble.c_str();
  cfg.ensemble.lambda = a.lambda;
  cfg.ensemble.mu = a.mu;
  cfg.ensemble.weights = weights.data();
  cfg.ensemble.weight_count = weights.size();
  cfg.ensemble.temperature = a.temperature;
  cfg.gammas = gammas.data();
  cfg.gamma_count = gammas.size();
  cfg.max_tokens = a.max_tokens;
  cfg.seed = a.seed;
  cfg.default_proposer = a.proposer;
  cfg.prefix = prefix.data();
  cfg.prefix_length = prefix.size();
  cfg.record_steps = a.trace.empty() ? 0 : 1;

  se_trace* trace = nullptr;
  check(se_decode(raw.data(), raw.size(), &cfg, &trace));
  std::unique_ptr<se_trace, decltype(&se_trace_free)> guard(trace, &se_trace_free);
  const int32_t* tokens = se_trace_tokens(trace);
  std::string line;
  for (size_t i = 0; i < se_trace_length(trace); ++i) line += (i ? " " : "") + std::to_string(tokens[i]);
  std::printf("%s\n", line.c_str());
  if (!a.trace.empty()) {
    OwnedString json;
    check(se_trace_json(trace, &json.ptr));
    write_file(a.trace, json.str());
  }
  return kExitOk;
}

// --- experiment ---

struct ExperimentArgs {
  std::string config;
  std::string out_dir;
  std::string format;
  unsigned threads = 0;
};

void add_experiment(CLI::App& app, ExperimentArgs& a) {
  app.add_option("--config", a.config, "Experiment config (JSON)")->required();
  app.add_option("--out-dir", a.out_dir,
                 "Directory for report.csv / report.json (default: the config's output.path, else .)");
  app.add_option("--format", a.format, "Report format: csv | json | both (default: the config's output.format)")
      ->check(CLI::IsMember({"csv", "json", "both"}));
  app.add_option("--threads", a.threads, "Worker threads (0: config setting / hardware concurrency)");
}

int run_experiment(const ExperimentArgs& a) {
  const std::filesystem::path config_path(a.config);
  const std::string text = read_file(config_path);
  std::string out_dir = a.out_dir;
  std::string format = a.format;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.is_object() && j.contains("output") && j["output"].is_object()) {
      const auto& o = j["output"];
      if (out_dir.empty() && o.contains("path") && o["path"].is_string()) out_dir = o["path"].get<std::string>();
      if (format.empty() && o.contains("format") && o["format"].is_string()) format = o["format"].get<std::string>();
    }
  } catch (const nlohmann::json::exception&) {
    // the engine reports the parse error
  }
  if (out_dir.empty()) out_dir = ".";
  if (format.empty()) format = "csv";

  const std::string base = config_path.parent_path().string();
  OwnedString csv, json, summary;
  const bool want_csv = format == "csv" || format == "both";
  const bool want_json = format == "json" || format == "both";
  check(se_experiment_run(text.c_str(), base.c_str(), a.threads, want_csv ? &csv.ptr : nullptr,
                          want_json ? &json.ptr : nullptr, &summary.ptr));
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Failure(kExitRuntime, "cannot create " + out_dir + ": " + ec.message());
  if (want_csv) write_file(std::filesystem::path(out_dir) / "report.csv", csv.str());
  if (want_json) write_file(std::filesystem::path(out_dir) / "report.json", json.str());
  std::fputs(summary.str().c_str(), stdout);
  return kExitOk;
}

// --- validate ---

struct ValidateArgs {
  std::string suite = "all";
  size_t sessions = 0;
  double tolerance = NAN;
  uint64_t seed = 1;
  unsigned threads = 0;
};

void add_validate(CLI::App& app, ValidateArgs& a) {
  app.add_option("--suite", a.suite, "distribution | acceptance | never-slower | formulas | all")
      ->check(CLI::IsMember({"distribution", "acceptance", "never-slower", "formulas", "all"}));
  app.add_option("--sessions", a.sessions,
                 "Sessions (distribution) or verification events (acceptance); 0 = suite default");
  app.add_option("--tolerance", a.tolerance, "Pass threshold: TV (distribution) or |deviation| (acceptance)");
  app.add_option("--seed", a.seed, "RNG seed");
  app.add_option("--threads", a.threads, "Worker threads (0: hardware concurrency)");
}

int run_validate(const ValidateArgs& a) {
  OwnedString verdict;
  int passed = 0;
  se_status s = se_validate(a.suite.c_str(), a.sessions, a.tolerance, a.seed, a.threads, &verdict.ptr, &passed);
  if (s == SE_INSUFFICIENT_SAMPLES) throw Failure(kExitUsage, std::string("insufficient samples: ") + se_last_error());
  check(s);
  std::fputs(verdict.str().c_str(), stdout);
  return passed ? kExitOk : kExitValidation;
}

// --- formulas ---

struct FormulaArgs {
  double alpha = 0.5;
  size_t gamma = 1;
  size_t gamma_q = 0;
  size_t gamma_p = 1;
  double c = 0.1;
  double lambda = 0.5;
};

void add_formulas(CLI::App& app, FormulaArgs& a) {
  app.add_option("--alpha", a.alpha, "Acceptance rate in [0, 1]");
  app.add_option("--gamma", a.gamma, "Proposal length for the speculative-ensemble factor");
  app.add_option("--gamma-q", a.gamma_q, "Proposal length of q for the alternate factor (default: --gamma)");
  app.add_option("--gamma-p", a.gamma_p, "Proposal length of p for the alternate factor");
  app.add_option("--c", a.c, "Cost coefficient: proposer cost / verifier cost, > 0");
  app.add_option("--lambda", a.lambda, "Weighted-ensemble lambda for the acceptance bound");
}

int run_formulas(const FormulaArgs& a) {
  se_formulas_result r;
  check(se_formulas(a.alpha, a.gamma, a.gamma_q ? a.gamma_q : a.gamma, a.gamma_p, a.c, a.lambda, &r));
  std::printf("expected_tokens       %.12g\n", r.expected_tokens);
  std::printf("factor_spec_ensemble  %.12g\n", r.factor_spec_ensemble);
  std::printf("factor_alternate      %.12g\n", r.factor_alternate);
  std::printf("lambda_bound          %.12g\n", r.lambda_bound);
  std::printf("best_side             %s %.12g\n", r.best_side_is_q ? "q" : "p", r.best_side_bound);
  std::printf("speedup_possible      %s\n", r.speedup_possible ? "yes" : "no");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speculative-ensemble decoding engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", se_version());

  GenModelArgs gen;
  DecodeArgs dec;
  ExperimentArgs exp;
  ValidateArgs val;
  FormulaArgs form;
  CLI::App* gen_cmd = app.add_subcommand("gen-model", "Write a fixture model file");
  add_gen_model(*gen_cmd, gen);
  CLI::App* dec_cmd = app.add_subcommand("decode", "Decode with one strategy and print the token ids");
  add_decode(*dec_cmd, dec);
  CLI::App* exp_cmd = app.add_subcommand("experiment", "Run an experiment config and write reports");
  add_experiment(*exp_cmd, exp);
  CLI::App* val_cmd = app.add_subcommand("validate", "Run validation suites; prints a JSON verdict");
  add_validate(*val_cmd, val);
  CLI::App* form_cmd = app.add_subcommand("formulas", "Evaluate the closed-form speed and acceptance formulas");
  add_formulas(*form_cmd, form);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_model(*gen_cmd, gen);
    if (dec_cmd->parsed()) return run_decode(*dec_cmd, dec);
    if (exp_cmd->parsed()) return run_experiment(exp);
    if (val_cmd->parsed()) return run_validate(val);
    if (form_cmd->parsed()) return run_formulas(form);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const Failure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
