#include "specens/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace specens {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kZeroMass: return "ZeroMassError";
    case ErrorCode::kVocabMismatch: return "VocabMismatchError";
    case ErrorCode::kWeight: return "WeightError";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kFormat: return "FormatError";
    case ErrorCode::kInvariant: return "InvariantError";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kEmptyStream: return "EmptyStream";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kInternal: return "InternalError";
  }
  return "Unknown";
}

Vocabulary::Vocabulary(std::size_t size, std::vector<std::string> labels)
    : size_(size), labels_(std::move(labels)) {
  if (size_ < 2) throw InvariantError("vocabulary size must be >= 2");
  if (!labels_.empty()) {
    if (labels_.size() != size_) throw InvariantError("label count must equal vocabulary size");
    std::set<std::string> unique(labels_.begin(), labels_.end());
    if (unique.size() != labels_.size()) throw InvariantError("vocabulary labels must be unique");
  }
}

const std::string& Vocabulary::label(Token t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= size_) throw TokenOutOfRange("token id out of range");
  if (labels_.empty()) throw InvalidArgument("vocabulary has no labels");
  return labels_[static_cast<std::size_t>(t)];
}

namespace {

void check_entries(std::span<const double> v) {
  if (v.size() < 2) throw InvariantError("a distribution needs at least 2 entries");
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) throw InvariantError("probabilities must be finite and >= 0");
  }
}

void check_same_size(std::size_t a, std::size_t b) {
  if (a != b) {
    std::ostringstream os;
    os << "vocabulary sizes differ: " << a << " vs " << b;
    throw VocabMismatchError(os.str());
  }
}

Distribution collapse_greedy(const Distribution& d) {
  return Distribution::one_hot(d.size(), argmax(d.probs()));
}

}  // namespace

Distribution Distribution::from_normalized(std::vector<double> probs) {
  check_entries(probs);
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(total - 1.0) > kNormTolerance) {
    std::ostringstream os;
    os << "probabilities sum to " << total << ", not 1";
    throw InvariantError(os.str());
  }
  return Distribution(std::move(probs));
}

Distribution Distribution::one_hot(std::size_t vocab_size, Token t) {
  if (vocab_size < 2) throw InvariantError("a distribution needs at least 2 entries");
  if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw TokenOutOfRange("token id out of range");
  std::vector<double> probs(vocab_size, 0.0);
  probs[static_cast<std::size_t>(t)] = 1.0;
  return Distribution(std::move(probs));
}

Distribution Distribution::uniform(std::size_t vocab_size) {
  if (vocab_size < 2) throw InvariantError("a distribution needs at least 2 entries");
  return Distribution(std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)));
}

LogitsVec::LogitsVec(std::vector<double> logits) : logits_(std::move(logits)) {
  if (logits_.empty()) throw InvariantError("logits must not be empty");
  for (double x : logits_) {
    if (!std::isfinite(x)) throw InvariantError("logits must be finite");
  }
}

const char* ensemble_kind_name(EnsembleKind kind) {
  switch (kind) {
    case EnsembleKind::kWeighted: return "weighted";
    case EnsembleKind::kContrastive: return "contrastive";
    case EnsembleKind::kGeneralWeighted: return "general";
  }
  return "unknown";
}

EnsembleKind parse_ensemble_kind(const std::string& name) {
  if (name == "weighted") return EnsembleKind::kWeighted;
  if (name == "contrastive") return EnsembleKind::kContrastive;
  if (name == "general" || name == "general-weighted") return EnsembleKind::kGeneralWeighted;
  throw ConfigError("unknown ensemble kind '" + name + "'");
}

EnsembleSpec EnsembleSpec::weighted(double lambda, double temperature) {
  EnsembleSpec s;
  s.kind = EnsembleKind::kWeighted;
  s.lambda = lambda;
  s.temperature = temperature;
  return s;
}

EnsembleSpec EnsembleSpec::contrastive(double mu, double temperature) {
  EnsembleSpec s;
  s.kind = EnsembleKind::kContrastive;
  s.mu = mu;
  s.temperature = temperature;
  return s;
}

EnsembleSpec EnsembleSpec::general(std::vector<double> weights, double temperature) {
  EnsembleSpec s;
  s.kind = EnsembleKind::kGeneralWeighted;
  s.weights = std::move(weights);
  s.temperature = temperature;
  return s;
}

void EnsembleSpec::validate(std::size_t model_count) const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be finite and >= 0");
  }
  switch (kind) {
    case EnsembleKind::kWeighted:
      if (model_count != 2) throw ConfigError("weighted ensemble requires exactly 2 models");
      if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
      break;
    case EnsembleKind::kContrastive:
      if (model_count != 2) throw ConfigError("contrastive ensemble requires exactly 2 models");
      if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be finite and >= 0");
      break;
    case EnsembleKind::kGeneralWeighted: {
      if (model_count < 2) throw ConfigError("general weighted ensemble requires >= 2 models");
      if (weights.size() != model_count) {
        throw WeightError("general weighted ensemble needs one weight per model");
      }
      double total = 0.0;
      for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) throw WeightError("weights must lie in [0, 1]");
        total += w;
      }
      if (std::abs(total - 1.0) > kNormTolerance) throw WeightError("weights must sum to 1");
      break;
    }
  }
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Distribution normalize(std::span<const double> raw) {
  check_entries(raw);
  double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (total <= kZeroMassCutoff) throw ZeroMassError("distribution has no mass to normalize");
  std::vector<double> probs(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) probs[i] = raw[i] / total;
  return Distribution(std::move(probs));
}

Distribution softmax(std::span<const double> logits) {
  double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp(logits[i] - top);
  return normalize(e);
}

Token argmax(std::span<const double> values) {
  auto it = std::max_element(values.begin(), values.end());
  return static_cast<Token>(it - values.begin());
}

Distribution apply_temperature(const LogitsVec& logits, double temperature) {
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  if (temperature == 0.0) return Distribution::one_hot(logits.size(), argmax(logits.values()));
  if (temperature == 1.0) return softmax(logits.values());
  std::vector<double> scaled(logits.values().begin(), logits.values().end());
  for (double& x : scaled) x /= temperature;
  return softmax(scaled);
}

LogitsVec logits_from_probs(const Distribution& d) {
  std::vector<double> l(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) l[i] = std::log(std::max(d.probs()[i], kLogFloor));
  return LogitsVec(std::move(l));
}

Distribution weighted_ensemble(const Distribution& q, const Distribution& p, double lambda) {
  check_same_size(q.size(), p.size());
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0, 1]");
  std::vector<double> r(q.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = lambda * q.probs()[i] + (1.0 - lambda) * p.probs()[i];
  }
  return normalize(r);
}

Distribution contrastive_ensemble(const LogitsVec& l_q, const LogitsVec& l_p, double mu,
                                  double temperature) {
  check_same_size(l_q.size(), l_p.size());
  if (!(mu >= 0.0)) throw InvalidArgument("mu must be >= 0");
  std::vector<double> combined(l_p.size());
  for (std::size_t i = 0; i < combined.size(); ++i) {
    combined[i] = l_p.values()[i] - mu * l_q.values()[i];
  }
  return apply_temperature(LogitsVec(std::move(combined)), temperature);
}

Distribution general_weighted_ensemble(std::span<const Distribution> dists,
                                       std::span<const double> weights) {
  if (dists.size() < 2) throw InvalidArgument("general weighted ensemble needs >= 2 distributions");
  if (weights.size() != dists.size()) throw WeightError("one weight per distribution is required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw WeightError("weights must lie in [0, 1]");
    total += w;
  }
  if (std::abs(total - 1.0) > kNormTolerance) throw WeightError("weights must sum to 1");
  std::vector<double> r(dists.front().size(), 0.0);
  for (std::size_t k = 0; k < dists.size(); ++k) {
    check_same_size(dists[k].size(), r.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += weights[k] * dists[k].probs()[i];
  }
  return normalize(r);
}

double tv_distance(const Distribution& a, const Distribution& b) {
  check_same_size(a.size(), b.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.probs()[i] - b.probs()[i]);
  return total;
}

Token inverse_cdf(const Distribution& d, double u) {
  double cdf = 0.0;
  Token last_positive = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double p = d.probs()[i];
    if (p <= 0.0) continue;
    cdf += p;
    last_positive = static_cast<Token>(i);
    if (u <= cdf) return last_positive;
  }
  // Rounding left the total a hair below u.
  return last_positive;
}

Token sample(const Distribution& d, RandomSource& rng) { return inverse_cdf(d, rng.uniform()); }

Distribution residual(const Distribution& r, const Distribution& q) {
  check_same_size(r.size(), q.size());
  std::vector<double> diff(r.size());
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = std::max(0.0, r.probs()[i] - q.probs()[i]);
  }
  return normalize(diff);
}

Ensemble::Ensemble(EnsembleSpec spec, std::size_t model_count)
    : spec_(std::move(spec)), model_count_(model_count) {
  spec_.validate(model_count_);
}

Distribution Ensemble::proposal(const LogitsVec& logits) const {
  return apply_temperature(logits, spec_.temperature);
}

Distribution Ensemble::combine(std::span<const LogitsVec* const> rows) const {
  if (rows.size() != model_count_) throw InternalError("ensemble row count does not match model count");
  switch (spec_.kind) {
    case EnsembleKind::kContrastive:
      return contrastive_ensemble(*rows[0], *rows[1], spec_.mu, spec_.temperature);
    case EnsembleKind::kWeighted: {
      Distribution r = weighted_ensemble(proposal(*rows[0]), proposal(*rows[1]), spec_.lambda);
      return spec_.temperature == 0.0 ? collapse_greedy(r) : r;
    }
    case EnsembleKind::kGeneralWeighted: {
      std::vector<Distribution> dists;
      dists.reserve(rows.size());
      for (const LogitsVec* row : rows) dists.push_back(proposal(*row));
      Distribution r = general_weighted_ensemble(dists, spec_.weights);
      return spec_.temperature == 0.0 ? collapse_greedy(r) : r;
    }
  }
  throw InternalError("unknown ensemble kind");
}

}  // namespace specens
