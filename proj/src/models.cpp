#include "specens/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace specens {

namespace {

using nlohmann::json;

void check_token(Token t, std::size_t vocab_size) {
  if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
    throw TokenOutOfRange("token id " + std::to_string(t) + " outside vocabulary of size " +
                          std::to_string(vocab_size));
  }
}

void check_context_space(std::size_t vocab_size, std::size_t context_length) {
  long double space = std::pow(static_cast<long double>(vocab_size), static_cast<long double>(context_length));
  if (space >= static_cast<long double>(std::numeric_limits<std::int64_t>::max())) {
    throw InvariantError("vocab_size^context_length does not fit a 63-bit context key");
  }
}

std::span<const Token> trailing(std::span<const Token> prefix, std::size_t k) {
  return prefix.subspan(prefix.size() - std::min(k, prefix.size()));
}

double standard_normal(RandomSource& rng) {
  double u1 = rng.uniform();
  double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// log of a Gamma(shape, 1) draw (Marsaglia-Tsang, with the shape+1 boost
// below 1). Log space keeps tiny concentrations from underflowing.
double log_gamma_draw(double shape, RandomSource& rng) {
  if (shape < 1.0) {
    double boosted = log_gamma_draw(shape + 1.0, rng);
    return boosted + std::log(rng.uniform()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d) + std::log(v);
  }
}

Distribution dirichlet_row(std::size_t vocab_size, double concentration, RandomSource& rng) {
  std::vector<double> logs(vocab_size);
  for (double& x : logs) x = log_gamma_draw(concentration, rng);
  return softmax(logs);
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string context_key(const TokenSeq& context) {
  std::string key;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i) key += ',';
    key += std::to_string(context[i]);
  }
  return key;
}

void append_row(std::string& out, const Distribution& d) {
  out += '[';
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) out += ", ";
    out += format_double(d.probs()[i]);
  }
  out += ']';
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

const json& require(const json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end()) throw FormatError(std::string("missing field '") + field + "'");
  return *it;
}

std::size_t require_count(const json& doc, const char* field, std::size_t minimum) {
  const json& v = require(doc, field);
  if (!v.is_number_integer() || v.get<std::int64_t>() < static_cast<std::int64_t>(minimum)) {
    throw FormatError(std::string("field '") + field + "' must be an integer >= " + std::to_string(minimum));
  }
  return v.get<std::size_t>();
}

Distribution parse_row(const json& v, std::size_t vocab_size, const std::string& where) {
  if (!v.is_array()) throw FormatError("field '" + where + "' must be an array of probabilities");
  if (v.size() != vocab_size) {
    throw FormatError("field '" + where + "' has " + std::to_string(v.size()) + " entries, expected " +
                      std::to_string(vocab_size));
  }
  std::vector<double> probs;
  probs.reserve(vocab_size);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw FormatError("field '" + where + "' entry " + std::to_string(i) + " is not a number");
    double p = v[i].get<double>();
    if (!std::isfinite(p) || p < 0.0) {
      throw InvariantError("field '" + where + "' entry " + std::to_string(i) + " is negative or non-finite");
    }
    probs.push_back(p);
  }
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "field '" << where << "' sums to " << total << " (tolerance 1e-6)";
    throw InvariantError(os.str());
  }
  // Rows written by this library are exact; only visibly-off rows rescale.
  if (std::abs(total - 1.0) > kZeroMassCutoff) return normalize(probs);
  return Distribution::from_normalized(std::move(probs));
}

TokenSeq parse_key(const std::string& key, std::size_t vocab_size, std::size_t context_length) {
  TokenSeq ids;
  if (!key.empty()) {
    std::size_t start = 0;
    for (;;) {
      std::size_t comma = key.find(',', start);
      std::string part = key.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      Token t = 0;
      auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), t);
      if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
        throw FormatError("table key '" + key + "' is not a comma-joined list of token ids");
      }
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
        throw FormatError("table key '" + key + "' holds token id " + part + " outside the vocabulary");
      }
      ids.push_back(t);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  if (ids.size() != context_length) {
    throw FormatError("table key '" + key + "' has " + std::to_string(ids.size()) + " ids, expected context_length " +
                      std::to_string(context_length));
  }
  return ids;
}

}  // namespace

LanguageModel::LanguageModel(std::string name, std::size_t vocab_size, std::size_t context_length, double cost)
    : name_(std::move(name)), vocab_(vocab_size), context_length_(context_length), cost_(cost) {
  if (!(cost_ > 0.0) || !std::isfinite(cost_)) throw InvariantError("model cost must be finite and > 0");
}

LogitsVec LanguageModel::logits_for(std::span<const Token> prefix) const {
  for (Token t : prefix) check_token(t, vocab_size());
  return window_logits(trailing(prefix, context_length_));
}

Distribution LanguageModel::distribution_for(std::span<const Token> prefix) const {
  return apply_temperature(logits_for(prefix), 1.0);
}

LogitsVec LanguageModel::logits_at(std::span<const Token> prefix) const {
  auto window = trailing(prefix, context_length_);
  for (Token t : window) check_token(t, vocab_size());
  return window_logits(window);
}

std::uint64_t encode_context(std::span<const Token> window, std::size_t vocab_size) {
  std::uint64_t code = 0;
  for (Token t : window) code = code * vocab_size + static_cast<std::uint64_t>(t);
  return code;
}

// --- TableModel ---

TableModel::TableModel(std::string name, std::size_t vocab_size, std::size_t context_length, double cost,
                       Distribution default_row, std::vector<Entry> entries)
    : LanguageModel(std::move(name), vocab_size, context_length, cost),
      default_{default_row, logits_from_probs(default_row)},
      entries_(std::move(entries)) {
  check_context_space(vocab_size, context_length);
  if (default_.probs.size() != vocab_size) throw VocabMismatchError("default row size differs from vocab_size");
  std::sort(entries_.begin(), entries_.end(),
            [](const Entry& a, const Entry& b) { return a.context < b.context; });
  rows_.reserve(entries_.size());
  for (const Entry& e : entries_) {
    if (e.context.size() != context_length) throw InvariantError("table context length mismatch");
    for (Token t : e.context) check_token(t, vocab_size);
    if (e.probs.size() != vocab_size) throw VocabMismatchError("table row size differs from vocab_size");
    auto [it, inserted] = index_.emplace(encode_context(e.context, vocab_size), rows_.size());
    if (!inserted) throw InvariantError("duplicate table context '" + context_key(e.context) + "'");
    rows_.push_back({e.probs, logits_from_probs(e.probs)});
  }
}

const TableModel::CachedRow& TableModel::lookup(std::span<const Token> window) const {
  if (window.size() < context_length()) return default_;
  auto it = index_.find(encode_context(window, vocab_size()));
  return it == index_.end() ? default_ : rows_[it->second];
}

const Distribution& TableModel::row_for(std::span<const Token> prefix) const {
  for (Token t : prefix) check_token(t, vocab_size());
  return lookup(trailing(prefix, context_length())).probs;
}

LogitsVec TableModel::window_logits(std::span<const Token> window) const { return lookup(window).logits; }

// --- NGramModel ---

NGramModel::NGramModel(std::string name, std::size_t vocab_size, std::size_t order, double delta, double cost,
                       std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> counts)
    : LanguageModel(std::move(name), vocab_size, order, cost), delta_(delta), counts_(std::move(counts)) {
  if (!(delta_ > 0.0) || !std::isfinite(delta_)) throw InvariantError("smoothing delta must be > 0");
  check_context_space(vocab_size, order);
}

std::uint64_t NGramModel::count(std::span<const Token> context, Token next) const {
  check_token(next, vocab_size());
  if (context.size() != order()) return 0;
  auto it = counts_.find(encode_context(context, vocab_size()));
  return it == counts_.end() ? 0 : it->second[static_cast<std::size_t>(next)];
}

std::uint64_t NGramModel::context_count(std::span<const Token> context) const {
  if (context.size() != order()) return 0;
  auto it = counts_.find(encode_context(context, vocab_size()));
  if (it == counts_.end()) return 0;
  return std::accumulate(it->second.begin(), it->second.end(), std::uint64_t{0});
}

double NGramModel::conditional(std::span<const Token> context, Token next) const {
  double v = static_cast<double>(vocab_size());
  return (static_cast<double>(count(context, next)) + delta_) /
         (static_cast<double>(context_count(context)) + delta_ * v);
}

Distribution NGramModel::row(std::span<const Token> window) const {
  std::vector<double> probs(vocab_size());
  for (std::size_t x = 0; x < probs.size(); ++x) probs[x] = conditional(window, static_cast<Token>(x));
  return normalize(probs);
}

LogitsVec NGramModel::window_logits(std::span<const Token> window) const {
  return logits_from_probs(row(window));
}

TableModel NGramModel::to_table() const {
  std::vector<TableModel::Entry> entries;
  entries.reserve(counts_.size());
  for (const auto& [code, _] : counts_) {
    TokenSeq context(order());
    std::uint64_t c = code;
    for (std::size_t i = order(); i-- > 0;) {
      context[i] = static_cast<Token>(c % vocab_size());
      c /= vocab_size();
    }
    entries.push_back({context, row(context)});
  }
  return TableModel(name(), vocab_size(), order(), cost(), Distribution::uniform(vocab_size()), std::move(entries));
}

// --- factories ---

TableModel random_table_model(std::uint64_t seed, std::size_t vocab_size, std::size_t context_length,
                              double concentration, double cost, std::string name) {
  if (vocab_size < 2) throw InvalidArgument("vocabulary size must be >= 2");
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw InvalidArgument("concentration must be finite and > 0");
  }
  long double space = std::pow(static_cast<long double>(vocab_size), static_cast<long double>(context_length));
  if (space > (1 << 22)) throw BudgetExceeded("random table would hold more than 2^22 contexts");
  RandomSource rng(seed);
  Distribution default_row = dirichlet_row(vocab_size, concentration, rng);
  std::size_t contexts = static_cast<std::size_t>(space);
  std::vector<TableModel::Entry> entries;
  entries.reserve(contexts);
  TokenSeq context(context_length, 0);
  for (std::size_t n = 0; n < contexts; ++n) {
    entries.push_back({context, dirichlet_row(vocab_size, concentration, rng)});
    // odometer increment, last position fastest
    for (std::size_t i = context_length; i-- > 0;) {
      if (static_cast<std::size_t>(++context[i]) < vocab_size) break;
      context[i] = 0;
    }
  }
  return TableModel(std::move(name), vocab_size, context_length, cost, std::move(default_row), std::move(entries));
}

TableModel context_free_model(const Distribution& row, double cost, std::string name) {
  return TableModel(std::move(name), row.size(), 0, cost, row, {{TokenSeq{}, row}});
}

NGramModel train_ngram(std::span<const Token> stream, std::size_t order, double delta, std::size_t vocab_size,
                       double cost, std::string name) {
  if (stream.empty() || stream.size() < order) {
    throw EmptyStream("training stream has " + std::to_string(stream.size()) + " tokens; order " +
                      std::to_string(order) + " needs at least that many");
  }
  if (vocab_size < 2) throw InvalidArgument("vocabulary size must be >= 2");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("smoothing delta must be > 0");
  for (Token t : stream) check_token(t, vocab_size);
  check_context_space(vocab_size, order);
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> counts;
  for (std::size_t i = order; i < stream.size(); ++i) {
    auto context = stream.subspan(i - order, order);
    auto& row = counts[encode_context(context, vocab_size)];
    if (row.empty()) row.assign(vocab_size, 0);
    ++row[static_cast<std::size_t>(stream[i])];
  }
  return NGramModel(std::move(name), vocab_size, order, delta, cost, std::move(counts));
}

// --- file format ---

std::string serialize_table_model(const TableModel& model) {
  std::string out = "{\n";
  out += "  \"vocab_size\": " + std::to_string(model.vocab_size()) + ",\n";
  out += "  \"context_length\": " + std::to_string(model.context_length()) + ",\n";
  out += "  \"name\": " + json(model.name()).dump() + ",\n";
  out += "  \"cost\": " + format_double(model.cost()) + ",\n";
  out += "  \"default\": ";
  append_row(out, model.default_row());
  out += ",\n  \"table\": {";
  const auto& entries = model.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out += i ? ",\n    " : "\n    ";
    out += json(context_key(entries[i].context)).dump() + ": ";
    append_row(out, entries[i].probs);
  }
  out += entries.empty() ? "}\n}\n" : "\n  }\n}\n";
  return out;
}

TableModel parse_table_model(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("line " + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object()) throw FormatError("model file must hold a JSON object");
  std::size_t vocab_size = require_count(doc, "vocab_size", 2);
  std::size_t context_length = require_count(doc, "context_length", 0);
  const json& name = require(doc, "name");
  if (!name.is_string()) throw FormatError("field 'name' must be a string");
  const json& cost = require(doc, "cost");
  if (!cost.is_number() || !(cost.get<double>() > 0.0)) throw FormatError("field 'cost' must be a number > 0");
  check_context_space(vocab_size, context_length);
  Distribution default_row = parse_row(require(doc, "default"), vocab_size, "default");
  const json& table = require(doc, "table");
  if (!table.is_object()) throw FormatError("field 'table' must be an object");
  std::vector<TableModel::Entry> entries;
  entries.reserve(table.size());
  for (const auto& [key, value] : table.items()) {
    entries.push_back({parse_key(key, vocab_size, context_length),
                       parse_row(value, vocab_size, "table[\"" + key + "\"]")});
  }
  return TableModel(name.get<std::string>(), vocab_size, context_length, cost.get<double>(),
                    std::move(default_row), std::move(entries));
}

TableModel load_table_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_table_model(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const InvariantError& e) {
    throw InvariantError(path.string() + ": " + e.what());
  }
}

void save_table_model(const TableModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file '" + path.string() + "'");
  out << serialize_table_model(model);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TokenSeq parse_token_list(const std::string& text) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    char ch = text[i];
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      ++i;
      continue;
    }
    Token t = 0;
    auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), t);
    if (ec != std::errc() || t < 0) {
      throw FormatError("token list: cannot parse id at offset " + std::to_string(i));
    }
    std::size_t next = static_cast<std::size_t>(ptr - text.data());
    if (next < text.size() && text[next] != ',' && !std::isspace(static_cast<unsigned char>(text[next]))) {
      throw FormatError("token list: unexpected character at offset " + std::to_string(next));
    }
    out.push_back(t);
    i = next;
  }
  return out;
}

TokenSeq read_token_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_token_list(buf.str());
}

}  // namespace specens
