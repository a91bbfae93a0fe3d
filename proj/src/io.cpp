#include "specens/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "specens/errors.hpp"

namespace specens {

using nlohmann::json;

namespace {

json number_or_null(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string describe(const json& j) {
  switch (j.type()) {
    case json::value_t::null: return "null";
    case json::value_t::boolean: return "a boolean";
    case json::value_t::string: return "a string";
    case json::value_t::array: return "an array";
    case json::value_t::object: return "an object";
    default: return "a number";
  }
}

// Field readers; `where` names the field in error messages.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected an object, got " + describe(obj_));
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [key, _] : obj_.items()) {
      if (!known.count(key)) throw ConfigError(field(key) + ": unknown field");
    }
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& at(const char* key) const { return obj_.at(key); }
  std::string field(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number, got " + describe(v));
    double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(field(key) + ": must be finite");
    return x;
  }

  std::uint64_t unsigned_int(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return as_unsigned(obj_.at(key), field(key));
  }

  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string, got " + describe(v));
    return v.get<std::string>();
  }

  std::vector<double> numbers(const char* key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + ": expected an array, got " + describe(v));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::size_t> indices(const char* key) const {
    std::vector<std::size_t> out;
    if (!has(key)) return out;
    const json& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + ": expected an array, got " + describe(v));
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(static_cast<std::size_t>(as_unsigned(v[i], field(key) + "[" + std::to_string(i) + "]")));
    }
    return out;
  }

  static std::uint64_t as_unsigned(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError(where + ": must be non-negative");
    if (v.is_number_float()) {
      double x = v.get<double>();
      if (x >= 0 && x == std::floor(x) && x < 1.8e19) return static_cast<std::uint64_t>(x);
    }
    throw ConfigError(where + ": expected a non-negative integer, got " + describe(v));
  }

 private:
  const json& obj_;
  std::string where_;
};

TokenSeq parse_prefix(const json& v, const std::string& where) {
  if (v.is_string()) {
    try {
      return parse_token_list(v.get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  if (!v.is_array()) throw ConfigError(where + ": expected an array of token ids or a comma-separated string");
  TokenSeq out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t t = Reader::as_unsigned(v[i], where + "[" + std::to_string(i) + "]");
    if (t > static_cast<std::uint64_t>(std::numeric_limits<Token>::max())) {
      throw ConfigError(where + "[" + std::to_string(i) + "]: token id too large");
    }
    out.push_back(static_cast<Token>(t));
  }
  return out;
}

EnsembleSpec parse_ensemble_at(const json& j, const std::string& where) {
  Reader r(j, where);
  r.allow({"kind", "lambda", "mu", "weights", "temperature"});
  EnsembleSpec spec;
  try {
    spec.kind = parse_ensemble_kind(r.string("kind", "weighted"));
  } catch (const Error& e) {
    throw ConfigError(r.field("kind") + ": " + e.what());
  }
  spec.lambda = r.number("lambda", spec.lambda);
  spec.mu = r.number("mu", spec.mu);
  spec.weights = r.numbers("weights");
  spec.temperature = r.number("temperature", spec.temperature);
  if (spec.kind != EnsembleKind::kWeighted && r.has("lambda")) {
    throw ConfigError(r.field("lambda") + ": only valid for the weighted ensemble");
  }
  if (spec.kind != EnsembleKind::kContrastive && r.has("mu")) {
    throw ConfigError(r.field("mu") + ": only valid for the contrastive ensemble");
  }
  if (spec.kind != EnsembleKind::kGeneralWeighted && r.has("weights")) {
    throw ConfigError(r.field("weights") + ": only valid for the general ensemble");
  }
  return spec;
}

ModelSpec parse_model_spec(const json& j, const std::string& where) {
  Reader r(j, where);
  r.allow({"kind", "name", "seed", "vocab_size", "context_length", "concentration", "cost", "path", "order", "delta",
           "probs"});
  ModelSpec m;
  m.kind = r.string("kind", m.kind);
  m.name = r.string("name", "");
  m.seed = r.unsigned_int("seed", 0);
  m.vocab_size = r.unsigned_int("vocab_size", 0);
  m.context_length = r.unsigned_int("context_length", 0);
  m.concentration = r.number("concentration", m.concentration);
  m.cost = r.number("cost", m.cost);
  m.path = r.string("path", "");
  m.order = r.unsigned_int("order", m.order);
  m.delta = r.number("delta", m.delta);
  m.probs = r.numbers("probs");
  if (m.kind == "random") {
    if (m.vocab_size < 2) throw ConfigError(r.field("vocab_size") + ": must be >= 2");
  } else if (m.kind == "file" || m.kind == "ngram") {
    if (m.path.empty()) throw ConfigError(r.field("path") + ": required for kind '" + m.kind + "'");
  } else if (m.kind == "fixed") {
    if (m.probs.size() < 2) throw ConfigError(r.field("probs") + ": needs at least 2 entries");
  } else {
    throw ConfigError(r.field("kind") + ": unknown model kind '" + m.kind + "'");
  }
  if (!(m.cost > 0.0)) throw ConfigError(r.field("cost") + ": must be > 0");
  return m;
}

StrategySpec parse_strategy_spec(const json& j, const std::string& where, std::size_t model_count) {
  Reader r(j, where);
  r.allow({"strategy", "models", "gammas", "default_proposer", "ensemble", "label"});
  StrategySpec s;
  if (!r.has("strategy")) throw ConfigError(r.field("strategy") + ": required");
  try {
    s.strategy = parse_strategy(r.string("strategy", ""));
  } catch (const Error& e) {
    throw ConfigError(r.field("strategy") + ": " + e.what());
  }
  s.models = r.indices("models");
  for (std::size_t i = 0; i < s.models.size(); ++i) {
    if (s.models[i] >= model_count) {
      throw ConfigError(r.field("models") + "[" + std::to_string(i) + "]: references undeclared model " +
                        std::to_string(s.models[i]));
    }
  }
  s.gammas = r.indices("gammas");
  for (std::size_t i = 0; i < s.gammas.size(); ++i) {
    if (s.gammas[i] < 1) throw ConfigError(r.field("gammas") + "[" + std::to_string(i) + "]: must be >= 1");
  }
  s.default_proposer = r.unsigned_int("default_proposer", 0);
  if (r.has("ensemble")) s.ensemble = parse_ensemble_at(r.at("ensemble"), r.field("ensemble"));
  s.label = r.string("label", "");
  return s;
}

SweepParameter parse_sweep_parameter(const std::string& name, const std::string& where) {
  if (name == "lambda") return SweepParameter::kLambda;
  if (name == "mu") return SweepParameter::kMu;
  if (name == "gamma") return SweepParameter::kGamma;
  if (name == "temperature") return SweepParameter::kTemperature;
  throw ConfigError(where + ": unknown sweep parameter '" + name + "' (lambda, mu, gamma, temperature)");
}

json model_spec_to_json(const ModelSpec& m) {
  json j = {{"kind", m.kind}, {"name", m.name}, {"cost", m.cost}};
  if (m.kind == "random") {
    j["seed"] = m.seed;
    j["vocab_size"] = m.vocab_size;
    j["context_length"] = m.context_length;
    j["concentration"] = m.concentration;
  } else if (m.kind == "file") {
    j["path"] = m.path;
  } else if (m.kind == "ngram") {
    j["path"] = m.path;
    j["order"] = m.order;
    j["delta"] = m.delta;
    if (m.vocab_size) j["vocab_size"] = m.vocab_size;
  } else if (m.kind == "fixed") {
    j["probs"] = m.probs;
  }
  return j;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + std::to_string(v[i]);
  return out;
}

std::string fixed2(double x) {
  if (std::isnan(x)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

// --- traces ---

json trace_to_json(const DecodeTrace& trace) {
  json steps = json::array();
  for (const StepRecord& s : trace.steps) {
    json verifications = json::array();
    for (const Verification& v : s.verifications) {
      verifications.push_back({{"position", v.position},
                               {"token", v.token},
                               {"origin_model", v.origin_model},
                               {"u", v.u},
                               {"ratio", v.ratio},
                               {"accepted", v.accepted}});
    }
    steps.push_back({{"model_index", s.model_index},
                     {"prefix_length", s.prefix_length},
                     {"action", step_action_name(s.action)},
                     {"proposals", s.proposals},
                     {"verifications", verifications},
                     {"resampled", optional_json(s.resampled)},
                     {"bonus", optional_json(s.bonus)},
                     {"sampled", optional_json(s.sampled)}});
  }
  return {{"tokens", trace.tokens},
          {"steps", steps},
          {"invocations", trace.invocations},
          {"simulated_time", trace.simulated_time},
          {"accepted", trace.accepted},
          {"rejected", trace.rejected},
          {"empirical_alpha", number_or_null(trace.empirical_alpha())}};
}

// --- configs ---

EnsembleSpec parse_ensemble_spec(const json& j) { return parse_ensemble_at(j, "ensemble"); }

json ensemble_to_json(const EnsembleSpec& spec) {
  json j = {{"kind", ensemble_kind_name(spec.kind)}, {"temperature", spec.temperature}};
  switch (spec.kind) {
    case EnsembleKind::kWeighted: j["lambda"] = spec.lambda; break;
    case EnsembleKind::kContrastive: j["mu"] = spec.mu; break;
    case EnsembleKind::kGeneralWeighted: j["weights"] = spec.weights; break;
  }
  return j;
}

ExperimentConfig parse_experiment_config(const json& j) {
  Reader r(j, "");
  r.allow({"models", "ensemble", "strategies", "sweep", "sessions", "tokens_per_session", "prefix", "seed", "output",
           "threads"});
  ExperimentConfig c;

  if (!r.has("models") || !r.at("models").is_array() || r.at("models").empty()) {
    throw ConfigError("models: expected a non-empty array");
  }
  const json& models = r.at("models");
  for (std::size_t i = 0; i < models.size(); ++i) {
    c.models.push_back(parse_model_spec(models[i], "models[" + std::to_string(i) + "]"));
  }

  if (r.has("ensemble")) c.ensemble = parse_ensemble_spec(r.at("ensemble"));

  if (!r.has("strategies") || !r.at("strategies").is_array() || r.at("strategies").empty()) {
    throw ConfigError("strategies: expected a non-empty array");
  }
  const json& strategies = r.at("strategies");
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    c.strategies.push_back(
        parse_strategy_spec(strategies[i], "strategies[" + std::to_string(i) + "]", c.models.size()));
  }

  if (r.has("sweep")) {
    Reader s(r.at("sweep"), "sweep");
    s.allow({"parameter", "values"});
    Sweep sweep;
    sweep.parameter = parse_sweep_parameter(s.string("parameter", ""), "sweep.parameter");
    sweep.values = s.numbers("values");
    if (sweep.values.empty()) throw ConfigError("sweep.values: expected a non-empty array");
    c.sweep = sweep;
  }

  c.sessions = r.unsigned_int("sessions", c.sessions);
  if (c.sessions < 1) throw ConfigError("sessions: must be >= 1");
  c.tokens_per_session = r.unsigned_int("tokens_per_session", c.tokens_per_session);
  if (c.tokens_per_session < 1) throw ConfigError("tokens_per_session: must be >= 1");
  if (r.has("prefix")) c.prefix = parse_prefix(r.at("prefix"), "prefix");
  c.seed = r.unsigned_int("seed", 0);
  c.threads = static_cast<unsigned>(r.unsigned_int("threads", 0));
  if (r.has("output")) {
    Reader o(r.at("output"), "output");
    o.allow({"path", "format"});
    c.output_path = o.string("path", "");
    c.output_format = o.string("format", c.output_format);
    if (c.output_format != "csv" && c.output_format != "json" && c.output_format != "both") {
      throw ConfigError("output.format: expected csv, json or both");
    }
  }
  return c;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_experiment_config(os.str());
}

json config_to_json(const ExperimentConfig& c) {
  json models = json::array();
  for (const ModelSpec& m : c.models) models.push_back(model_spec_to_json(m));
  json strategies = json::array();
  for (const StrategySpec& s : c.strategies) {
    json j = {{"strategy", strategy_name(s.strategy)},
              {"models", s.models},
              {"gammas", s.gammas},
              {"default_proposer", s.default_proposer},
              {"label", s.label}};
    if (s.ensemble) j["ensemble"] = ensemble_to_json(*s.ensemble);
    strategies.push_back(j);
  }
  json j = {{"models", models},
            {"ensemble", ensemble_to_json(c.ensemble)},
            {"strategies", strategies},
            {"sessions", c.sessions},
            {"tokens_per_session", c.tokens_per_session},
            {"prefix", c.prefix},
            {"seed", c.seed},
            {"output", {{"path", c.output_path}, {"format", c.output_format}}}};
  if (c.sweep) j["sweep"] = {{"parameter", sweep_parameter_name(c.sweep->parameter)}, {"values", c.sweep->values}};
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  json j = config_to_json(config);
  j.erase("output");  // where the report goes does not change it
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- reports ---

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "cell_index,strategy,label,models,gammas,parameter,value,sessions,tokens,simulated_time,tokens_per_time,"
        "speedup,empirical_alpha,accepted,rejected,cost_ratio,predicted_alpha_bound,predicted_factor,invocations,"
        "implicit_baseline\r\n";
  for (const CellRecord& c : report.cells) {
    os << c.cell_index << ',' << csv_escape(c.strategy) << ',' << csv_escape(c.label) << ',' << join(c.models) << ','
       << join(c.gammas) << ',' << csv_escape(c.parameter) << ',' << format_number(c.value) << ',' << c.sessions
       << ',' << c.tokens << ',' << format_number(c.simulated_time) << ',' << format_number(c.tokens_per_time) << ','
       << format_number(c.speedup) << ',' << format_number(c.empirical_alpha) << ',' << c.accepted << ','
       << c.rejected << ',' << format_number(c.cost_ratio) << ',' << format_number(c.predicted_alpha_bound) << ','
       << format_number(c.predicted_factor) << ',' << join(c.invocations) << ','
       << (c.implicit_baseline ? "true" : "false") << "\r\n";
  }
  return os.str();
}

json report_to_json(const ExperimentReport& report) {
  json cells = json::array();
  for (const CellRecord& c : report.cells) {
    cells.push_back({{"cell_index", c.cell_index},
                     {"strategy", c.strategy},
                     {"label", c.label},
                     {"models", c.models},
                     {"gammas", c.gammas},
                     {"parameter", c.parameter.empty() ? json(nullptr) : json(c.parameter)},
                     {"value", number_or_null(c.value)},
                     {"sessions", c.sessions},
                     {"tokens", c.tokens},
                     {"simulated_time", c.simulated_time},
                     {"tokens_per_time", c.tokens_per_time},
                     {"speedup", number_or_null(c.speedup)},
                     {"empirical_alpha", number_or_null(c.empirical_alpha)},
                     {"accepted", c.accepted},
                     {"rejected", c.rejected},
                     {"cost_ratio", number_or_null(c.cost_ratio)},
                     {"predicted_alpha_bound", number_or_null(c.predicted_alpha_bound)},
                     {"predicted_factor", number_or_null(c.predicted_factor)},
                     {"invocations", c.invocations},
                     {"implicit_baseline", c.implicit_baseline}});
  }
  return {{"metadata",
           {{"config_hash", report.config_hash}, {"seed", report.seed}, {"engine_version", report.engine_version}}},
          {"cells", cells}};
}

std::string report_summary(const ExperimentReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %-17s %-12s %-18s %8s %8s %9s\n", "cell", "strategy", "label", "parameter",
                "speedup", "alpha", "predicted");
  os << line;
  for (const CellRecord& c : report.cells) {
    std::string param = c.parameter.empty() ? "-" : c.parameter + "=" + format_number(c.value);
    std::string label = c.label.empty() ? "-" : c.label;
    std::snprintf(line, sizeof line, "%-5zu %-17s %-12s %-18s %8s %8s %9s\n", c.cell_index, c.strategy.c_str(),
                  label.c_str(), param.c_str(), fixed2(c.speedup).c_str(), fixed2(c.empirical_alpha).c_str(),
                  fixed2(c.predicted_factor).c_str());
    os << line;
  }
  return os.str();
}

}  // namespace specens
