#pragma once

// Numeric substrate: vocabularies, distributions, logits, temperature,
// the ensemble functions and the seeded random stream.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "specens/errors.hpp"

namespace specens {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

inline constexpr double kNormTolerance = 1e-9;
inline constexpr double kZeroMassCutoff = 1e-12;
inline constexpr double kLogFloor = 1e-12;

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size, std::vector<std::string> labels = {});

  std::size_t size() const { return size_; }
  bool has_labels() const { return !labels_.empty(); }
  const std::string& label(Token t) const;

 private:
  std::size_t size_;
  std::vector<std::string> labels_;
};

// Normalized probability vector over token ids 0..size-1.
class Distribution {
 public:
  // Accepts probabilities that already sum to one within kNormTolerance.
  // The values are stored as given (no rescaling), so serialized rows
  // round-trip bitwise.
  static Distribution from_normalized(std::vector<double> probs);
  static Distribution one_hot(std::size_t vocab_size, Token t);
  static Distribution uniform(std::size_t vocab_size);

  std::size_t size() const { return probs_.size(); }
  double operator[](Token t) const { return probs_[static_cast<std::size_t>(t)]; }
  std::span<const double> probs() const { return probs_; }

  bool operator==(const Distribution&) const = default;

 private:
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {}
  friend Distribution normalize(std::span<const double> raw);

  std::vector<double> probs_;
};

class LogitsVec {
 public:
  explicit LogitsVec(std::vector<double> logits);

  std::size_t size() const { return logits_.size(); }
  double operator[](Token t) const { return logits_[static_cast<std::size_t>(t)]; }
  std::span<const double> values() const { return logits_; }

  bool operator==(const LogitsVec&) const = default;

 private:
  std::vector<double> logits_;
};

enum class EnsembleKind { kWeighted, kContrastive, kGeneralWeighted };

const char* ensemble_kind_name(EnsembleKind kind);
EnsembleKind parse_ensemble_kind(const std::string& name);

// Declarative ensemble function. For kContrastive, model 0 is the amateur
// (proposal) model and model 1 the expert.
struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::kWeighted;
  double lambda = 0.5;
  double mu = 0.1;
  std::vector<double> weights;
  double temperature = 1.0;

  static EnsembleSpec weighted(double lambda, double temperature = 1.0);
  static EnsembleSpec contrastive(double mu, double temperature = 1.0);
  static EnsembleSpec general(std::vector<double> weights, double temperature = 1.0);

  // Throws ConfigError / WeightError when the spec cannot drive
  // model_count models.
  void validate(std::size_t model_count) const;
};

// Seeded uniform stream. Backed by std::mt19937_64, whose output sequence
// is fixed by the C++ standard; a draw maps the top 53 bits of one 64-bit
// output onto the grid {1, 2, ..., 2^53} * 2^-53, i.e. the interval (0, 1].
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>((engine_() >> 11) + 1) * 0x1p-53; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Mixes an index into a seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t x);

// raw / sum(raw). Throws ZeroMassError when the mass is <= kZeroMassCutoff.
Distribution normalize(std::span<const double> raw);

Distribution softmax(std::span<const double> logits);

// Lowest id wins ties.
Token argmax(std::span<const double> values);

Distribution apply_temperature(const LogitsVec& logits, double temperature);

// ln(max(p, kLogFloor)), the logits of a probability-native model.
LogitsVec logits_from_probs(const Distribution& d);

Distribution weighted_ensemble(const Distribution& q, const Distribution& p, double lambda);
Distribution contrastive_ensemble(const LogitsVec& l_q, const LogitsVec& l_p, double mu,
                                  double temperature);
Distribution general_weighted_ensemble(std::span<const Distribution> dists,
                                       std::span<const double> weights);

// Sum of absolute differences (not halved); lies in [0, 2].
double tv_distance(const Distribution& a, const Distribution& b);

// Smallest id x with u <= cdf(x). Zero-probability ids are never returned.
Token inverse_cdf(const Distribution& d, double u);
Token sample(const Distribution& d, RandomSource& rng);

// norm(max(0, r - q)); throws ZeroMassError when r <= q everywhere.
Distribution residual(const Distribution& r, const Distribution& q);

// Applies an EnsembleSpec to per-model logits rows. Temperature is applied
// per model before mixing for the probability-level kinds and to the
// combined logits for kContrastive. At temperature 0 every result is a
// one-hot at the argmax.
class Ensemble {
 public:
  Ensemble(EnsembleSpec spec, std::size_t model_count);

  const EnsembleSpec& spec() const { return spec_; }
  std::size_t model_count() const { return model_count_; }

  // The distribution a single model samples from at the configured
  // temperature.
  Distribution proposal(const LogitsVec& logits) const;

  // rows[k] holds model k's logits at the position being combined.
  Distribution combine(std::span<const LogitsVec* const> rows) const;

 private:
  EnsembleSpec spec_;
  std::size_t model_count_;
};

}  // namespace specens
