#pragma once

// Decoding strategies. Every strategy emits a DecodeTrace whose
// simulated_time is the dot product of per-model invocation counts and
// declared model costs.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specens/core.hpp"
#include "specens/models.hpp"

namespace specens {

enum class Strategy { kVanillaEnsemble, kVanillaSD, kSpecEnsemble, kAlternateProposal, kNModelSE };

// CLI / config spelling: vanilla-ensemble, vanilla-sd, spec-ensemble,
// alternate, nmodel-se.
const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
bool is_speculative(Strategy s);

struct DecodeConfig {
  Strategy strategy = Strategy::kVanillaEnsemble;
  EnsembleSpec ensemble;
  // One proposal length per model; empty means all 1.
  std::vector<std::size_t> gammas;
  std::size_t max_tokens = 16;
  std::uint64_t seed = 0;
  // Default proposer. For the two-model strategies the other model verifies.
  std::size_t default_proposer_index = 0;
  TokenSeq prefix;
  // Harness sweeps turn this off; counts and tokens are still recorded.
  bool record_steps = true;
};

struct Verification {
  std::size_t position = 0;  // index into DecodeTrace::tokens
  Token token = 0;
  std::size_t origin_model = 0;
  double u = 0.0;
  double ratio = 0.0;
  bool accepted = false;
};

enum class StepAction { kEnsemble, kPropose, kScore };
const char* step_action_name(StepAction a);

// One model invocation.
struct StepRecord {
  std::size_t model_index = 0;
  std::size_t prefix_length = 0;
  StepAction action = StepAction::kEnsemble;
  TokenSeq proposals;
  std::vector<Verification> verifications;
  std::optional<Token> resampled;
  std::optional<Token> bonus;
  std::optional<Token> sampled;
};

struct DecodeTrace {
  TokenSeq tokens;
  std::vector<StepRecord> steps;
  std::vector<std::uint64_t> invocations;
  double simulated_time = 0.0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;

  // accepted / (accepted + rejected); NaN when nothing was verified.
  double empirical_alpha() const;
  // model_index of every step, in order.
  std::vector<std::size_t> invocation_sequence() const;
};

// Called once per verification with the proposal row of the token's origin
// model and the verification target.
struct VerificationEvent {
  const Distribution& q;
  const Distribution& r;
  std::size_t origin_model;
  Token token;
  bool accepted;
};
using VerificationObserver = std::function<void(const VerificationEvent&)>;

using ModelList = std::span<const ModelPtr>;

// Checks model count, shared vocabulary, gammas, prefix and ensemble
// against the strategy. Throws ConfigError / VocabMismatchError /
// TokenOutOfRange.
void validate_decode(ModelList models, const DecodeConfig& config);

DecodeTrace vanilla_ensemble_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                    const VerificationObserver& observer = {});
DecodeTrace vanilla_sd_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                              const VerificationObserver& observer = {});
DecodeTrace spec_ensemble_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                 const VerificationObserver& observer = {});
DecodeTrace alternate_proposal_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                      const VerificationObserver& observer = {});
DecodeTrace n_model_se_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                              const VerificationObserver& observer = {});

// Dispatches on config.strategy with RandomSource(config.seed).
DecodeTrace decode(ModelList models, const DecodeConfig& config, const VerificationObserver& observer = {});

}  // namespace specens
