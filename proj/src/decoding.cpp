#include "specens/decoding.hpp"

#include <algorithm>
#include <deque>
#include <cmath>
#include <limits>
#include <optional>

namespace specens {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kVanillaEnsemble: return "vanilla-ensemble";
    case Strategy::kVanillaSD: return "vanilla-sd";
    case Strategy::kSpecEnsemble: return "spec-ensemble";
    case Strategy::kAlternateProposal: return "alternate";
    case Strategy::kNModelSE: return "nmodel-se";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "vanilla-ensemble" || name == "vanilla") return Strategy::kVanillaEnsemble;
  if (name == "vanilla-sd") return Strategy::kVanillaSD;
  if (name == "spec-ensemble") return Strategy::kSpecEnsemble;
  if (name == "alternate" || name == "alternate-proposal") return Strategy::kAlternateProposal;
  if (name == "nmodel-se") return Strategy::kNModelSE;
  throw ConfigError("unknown strategy '" + name + "'");
}

bool is_speculative(Strategy s) { return s != Strategy::kVanillaEnsemble; }

const char* step_action_name(StepAction a) {
  switch (a) {
    case StepAction::kEnsemble: return "ensemble";
    case StepAction::kPropose: return "propose";
    case StepAction::kScore: return "score";
  }
  return "unknown";
}

double DecodeTrace::empirical_alpha() const {
  std::uint64_t events = accepted + rejected;
  if (events == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(accepted) / static_cast<double>(events);
}

std::vector<std::size_t> DecodeTrace::invocation_sequence() const {
  std::vector<std::size_t> out;
  out.reserve(steps.size());
  for (const StepRecord& s : steps) out.push_back(s.model_index);
  return out;
}

void validate_decode(ModelList models, const DecodeConfig& config) {
  const std::size_t n = models.size();
  const char* name = strategy_name(config.strategy);
  switch (config.strategy) {
    case Strategy::kVanillaEnsemble:
    case Strategy::kNModelSE:
      if (n < 2) throw ConfigError(std::string(name) + " needs at least 2 models, got " + std::to_string(n));
      break;
    default:
      if (n != 2) throw ConfigError(std::string(name) + " needs exactly 2 models, got " + std::to_string(n));
  }
  for (const ModelPtr& m : models) {
    if (!m) throw ConfigError("null model");
    if (m->vocab_size() != models[0]->vocab_size()) {
      throw VocabMismatchError("model '" + m->name() + "' has vocabulary " + std::to_string(m->vocab_size()) +
                               ", expected " + std::to_string(models[0]->vocab_size()));
    }
  }
  if (!config.gammas.empty()) {
    if (config.gammas.size() != n) {
      throw ConfigError("expected " + std::to_string(n) + " proposal lengths, got " +
                        std::to_string(config.gammas.size()));
    }
    for (std::size_t g : config.gammas) {
      if (g < 1) throw ConfigError("every proposal length must be >= 1");
    }
  }
  if (config.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (config.default_proposer_index >= n) throw ConfigError("default proposer index out of range");
  for (Token t : config.prefix) {
    if (t < 0 || static_cast<std::size_t>(t) >= models[0]->vocab_size()) {
      throw TokenOutOfRange("prefix token " + std::to_string(t) + " outside the vocabulary");
    }
  }
  if (config.strategy == Strategy::kVanillaSD) {
    if (!(config.ensemble.temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  } else {
    config.ensemble.validate(n);
  }
}

namespace {

struct Row {
  LogitsVec logits;
  Distribution dist;  // the model's own distribution at the session temperature
};

// Shared bookkeeping for one decode: committed sequence, invocation
// counting, draws, verification and trace assembly.
class Session {
 public:
  Session(ModelList models, const DecodeConfig& config, RandomSource& rng, const VerificationObserver& observer)
      : models_(models), config_(config), rng_(rng), observer_(observer), seq_(config.prefix) {
    validate_decode(models, config);
    if (config.strategy != Strategy::kVanillaSD) ensemble_.emplace(config.ensemble, models.size());
    trace_.invocations.assign(models.size(), 0);
    for (const ModelPtr& m : models) max_context_ = std::max(max_context_, m->context_length());
  }

  std::size_t model_count() const { return models_.size(); }
  std::size_t emitted() const { return trace_.tokens.size(); }
  std::size_t remaining() const { return config_.max_tokens - emitted(); }
  bool done() const { return emitted() >= config_.max_tokens; }
  std::size_t committed_length() const { return seq_.size(); }
  std::size_t gamma(std::size_t model) const { return config_.gammas.empty() ? 1 : config_.gammas[model]; }

  // Counts one invocation. The returned record stays valid until the next
  // call to invoke().
  StepRecord& invoke(std::size_t model, StepAction action, std::size_t prefix_length) {
    ++trace_.invocations[model];
    StepRecord rec;
    rec.model_index = model;
    rec.prefix_length = prefix_length;
    rec.action = action;
    if (config_.record_steps) {
      trace_.steps.push_back(std::move(rec));
      return trace_.steps.back();
    }
    scratch_ = std::move(rec);
    return scratch_;
  }

  // Row of `model` for the position after committed ++ pending.
  Row row(std::size_t model, std::span<const Token> pending) {
    LogitsVec l = models_[model]->logits_at(window(pending));
    Distribution d = apply_temperature(l, config_.ensemble.temperature);
    return {std::move(l), std::move(d)};
  }

  // One scoring pass: rows for pending positions [from, size] where the
  // last row is the bonus position. Not an invocation by itself.
  std::vector<Row> score(std::size_t model, std::span<const Token> pending, std::size_t from) {
    std::vector<Row> rows;
    rows.reserve(pending.size() + 1 - from);
    for (std::size_t j = from; j <= pending.size(); ++j) rows.push_back(row(model, pending.first(j)));
    return rows;
  }

  Distribution combine(std::span<const LogitsVec* const> rows) const { return ensemble_->combine(rows); }

  Token draw(const Distribution& d) { return sample(d, rng_); }

  bool verify(StepRecord& step, Token x, std::size_t origin, const Distribution& q, const Distribution& r) {
    double u = rng_.uniform();
    double ratio = r[x] / q[x];
    bool ok = u <= std::min(1.0, ratio);
    step.verifications.push_back({emitted(), x, origin, u, ratio, ok});
    ok ? ++trace_.accepted : ++trace_.rejected;
    if (observer_) observer_(VerificationEvent{q, r, origin, x, ok});
    return ok;
  }

  Token resample(StepRecord& step, const Distribution& r, const Distribution& q) {
    Token x;
    try {
      x = sample(residual(r, q), rng_);
    } catch (const ZeroMassError&) {
      // r <= q everywhere up to rounding: the rejection itself was a
      // rounding artifact, so r is the correct law.
      x = sample(r, rng_);
    }
    step.resampled = x;
    return x;
  }

  void emit(Token x) {
    seq_.push_back(x);
    trace_.tokens.push_back(x);
  }

  DecodeTrace finish() {
    double t = 0.0;
    for (std::size_t k = 0; k < models_.size(); ++k) {
      t += static_cast<double>(trace_.invocations[k]) * models_[k]->cost();
    }
    trace_.simulated_time = t;
    return std::move(trace_);
  }

 private:
  std::span<const Token> window(std::span<const Token> pending) {
    ctx_.clear();
    std::size_t from_pending = std::min(max_context_, pending.size());
    std::size_t from_seq = std::min(max_context_ - from_pending, seq_.size());
    ctx_.insert(ctx_.end(), seq_.end() - static_cast<std::ptrdiff_t>(from_seq), seq_.end());
    ctx_.insert(ctx_.end(), pending.end() - static_cast<std::ptrdiff_t>(from_pending), pending.end());
    return ctx_;
  }

  ModelList models_;
  const DecodeConfig& config_;
  RandomSource& rng_;
  const VerificationObserver& observer_;
  std::optional<Ensemble> ensemble_;
  TokenSeq seq_;
  TokenSeq ctx_;
  std::size_t max_context_ = 0;
  StepRecord scratch_;
  DecodeTrace trace_;
};

std::size_t saturating_sub(std::size_t a, std::size_t b) { return a > b ? a - b : 0; }

// Proposer drafts, verifier scores and verifies. Vanilla SD verifies
// against the verifier's own row and appends a bonus token; the
// speculative ensemble verifies against the ensemble and drops the bonus.
DecodeTrace two_model_speculative(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                  const VerificationObserver& observer, bool ensemble_target) {
  Session s(models, config, rng, observer);
  const std::size_t proposer = config.default_proposer_index;
  const std::size_t verifier = 1 - proposer;
  while (!s.done()) {
    const std::size_t g = std::min(s.gamma(proposer), s.remaining());
    TokenSeq drafts;
    std::vector<Row> draft_rows;
    for (std::size_t j = 0; j < g; ++j) {
      StepRecord& step = s.invoke(proposer, StepAction::kPropose, s.committed_length() + j);
      Row row = s.row(proposer, drafts);
      Token x = s.draw(row.dist);
      step.proposals.push_back(x);
      drafts.push_back(x);
      draft_rows.push_back(std::move(row));
    }
    StepRecord& step = s.invoke(verifier, StepAction::kScore, s.committed_length());
    std::vector<Row> rows = s.score(verifier, drafts, 0);
    bool all_accepted = true;
    for (std::size_t j = 0; j < g; ++j) {
      std::optional<Distribution> combined;
      if (ensemble_target) {
        const LogitsVec* by_model[2];
        by_model[proposer] = &draft_rows[j].logits;
        by_model[verifier] = &rows[j].logits;
        combined = s.combine(by_model);
      }
      const Distribution& target = ensemble_target ? *combined : rows[j].dist;
      if (s.verify(step, drafts[j], proposer, draft_rows[j].dist, target)) {
        s.emit(drafts[j]);
      } else {
        s.emit(s.resample(step, target, draft_rows[j].dist));
        all_accepted = false;
        break;
      }
    }
    if (all_accepted && !ensemble_target && !s.done()) {
      Token bonus = s.draw(rows.back().dist);
      step.bonus = bonus;
      s.emit(bonus);
    }
  }
  return s.finish();
}

}  // namespace

DecodeTrace vanilla_ensemble_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                    const VerificationObserver& observer) {
  Session s(models, config, rng, observer);
  std::vector<Row> rows;
  std::vector<const LogitsVec*> by_model(models.size());
  while (!s.done()) {
    rows.clear();
    StepRecord* last = nullptr;
    for (std::size_t k = 0; k < models.size(); ++k) {
      last = &s.invoke(k, StepAction::kEnsemble, s.committed_length());
      rows.push_back(s.row(k, {}));
    }
    for (std::size_t k = 0; k < models.size(); ++k) by_model[k] = &rows[k].logits;
    Token x = s.draw(s.combine(by_model));
    last->sampled = x;
    s.emit(x);
  }
  return s.finish();
}

DecodeTrace vanilla_sd_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                              const VerificationObserver& observer) {
  return two_model_speculative(models, config, rng, observer, false);
}

DecodeTrace spec_ensemble_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                 const VerificationObserver& observer) {
  return two_model_speculative(models, config, rng, observer, true);
}

DecodeTrace alternate_proposal_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                                      const VerificationObserver& observer) {
  Session s(models, config, rng, observer);
  struct Draft {
    Token token;
    Row row;  // proposer-side row the token was drawn from
  };
  const std::size_t default_proposer = config.default_proposer_index;
  std::size_t proposer = default_proposer;
  std::size_t verifier = 1 - proposer;
  std::optional<Draft> cached_bonus;

  while (!s.done()) {
    std::vector<Draft> drafts;
    std::size_t fresh;
    if (!cached_bonus) {
      proposer = default_proposer;
      verifier = 1 - proposer;
      fresh = std::min(s.gamma(proposer), s.remaining());
    } else {
      std::swap(proposer, verifier);
      drafts.push_back(std::move(*cached_bonus));
      cached_bonus.reset();
      fresh = std::min(saturating_sub(s.gamma(proposer), drafts.size()), s.remaining() - drafts.size());
    }
    TokenSeq tokens;
    for (const Draft& d : drafts) tokens.push_back(d.token);
    for (std::size_t j = 0; j < fresh; ++j) {
      StepRecord& step = s.invoke(proposer, StepAction::kPropose, s.committed_length() + tokens.size());
      Row row = s.row(proposer, tokens);
      Token x = s.draw(row.dist);
      step.proposals.push_back(x);
      tokens.push_back(x);
      drafts.push_back({x, std::move(row)});
    }

    StepRecord& step = s.invoke(verifier, StepAction::kScore, s.committed_length());
    std::vector<Row> rows = s.score(verifier, tokens, 0);
    bool all_accepted = true;
    for (std::size_t j = 0; j < drafts.size(); ++j) {
      const LogitsVec* by_model[2];
      by_model[proposer] = &drafts[j].row.logits;
      by_model[verifier] = &rows[j].logits;
      Distribution r = s.combine(by_model);
      if (s.verify(step, drafts[j].token, proposer, drafts[j].row.dist, r)) {
        s.emit(drafts[j].token);
      } else {
        s.emit(s.resample(step, r, drafts[j].row.dist));
        all_accepted = false;
        break;
      }
    }
    if (all_accepted && !s.done()) {
      Token bonus = s.draw(rows.back().dist);
      step.bonus = bonus;
      cached_bonus = Draft{bonus, std::move(rows.back())};
    }
  }
  return s.finish();
}

DecodeTrace n_model_se_decode(ModelList models, const DecodeConfig& config, RandomSource& rng,
                              const VerificationObserver& observer) {
  Session s(models, config, rng, observer);
  const std::size_t n = models.size();
  const std::size_t default_proposer = config.default_proposer_index;

  // Pending sequence with each token's proposing model, plus one row queue
  // per model aligned to the front of the pending sequence.
  TokenSeq pending;
  std::vector<std::size_t> origin;
  std::vector<std::deque<Row>> queues(n);
  auto clear_all = [&] {
    pending.clear();
    origin.clear();
    for (auto& q : queues) q.clear();
  };

  auto propose = [&](std::size_t model, std::size_t count) {
    for (std::size_t j = 0; j < count; ++j) {
      StepRecord& step = s.invoke(model, StepAction::kPropose, s.committed_length() + pending.size());
      Row row = s.row(model, pending);
      Token x = s.draw(row.dist);
      step.proposals.push_back(x);
      pending.push_back(x);
      origin.push_back(model);
      queues[model].push_back(std::move(row));
    }
  };

  std::vector<const LogitsVec*> by_model(n);
  while (!s.done()) {
    if (pending.empty()) {
      clear_all();
      propose(default_proposer, std::min(s.gamma(default_proposer), s.remaining()));
      continue;
    }

    std::size_t scorer = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (queues[k].size() < queues[scorer].size()) scorer = k;
    }
    const std::size_t from = queues[scorer].size();
    if (from > pending.size()) throw InternalError("scoring queue longer than the pending sequence");
    StepRecord& step = s.invoke(scorer, StepAction::kScore, s.committed_length() + from);
    for (Row& row : s.score(scorer, pending, from)) queues[scorer].push_back(std::move(row));
    // The bonus token joins the pending sequence now; its draw is deferred
    // until after verification. With n >= 2 no other model has scored its
    // position, so it cannot be verified in this pass.
    pending.push_back(0);
    origin.push_back(scorer);

    bool rejected = false;
    while (!s.done()) {
      bool all_scored = true;
      for (std::size_t k = 0; k < n; ++k) all_scored = all_scored && !queues[k].empty();
      if (!all_scored) break;
      if (pending.size() == 1) throw InternalError("bonus token reached verification before it was drawn");
      for (std::size_t k = 0; k < n; ++k) by_model[k] = &queues[k].front().logits;
      Distribution r = s.combine(by_model);
      const Distribution q = queues[origin.front()].front().dist;
      Token x = pending.front();
      if (s.verify(step, x, origin.front(), q, r)) {
        s.emit(x);
        pending.erase(pending.begin());
        origin.erase(origin.begin());
        for (auto& queue : queues) queue.pop_front();
      } else {
        s.emit(s.resample(step, r, q));
        clear_all();
        rejected = true;
        break;
      }
    }
    if (rejected || s.done()) continue;

    Token bonus = s.draw(queues[scorer].back().dist);
    pending.back() = bonus;
    step.bonus = bonus;
    propose(scorer, std::min(saturating_sub(s.gamma(scorer), 1), saturating_sub(s.remaining(), pending.size())));
  }
  return s.finish();
}

DecodeTrace decode(ModelList models, const DecodeConfig& config, const VerificationObserver& observer) {
  RandomSource rng(config.seed);
  switch (config.strategy) {
    case Strategy::kVanillaEnsemble: return vanilla_ensemble_decode(models, config, rng, observer);
    case Strategy::kVanillaSD: return vanilla_sd_decode(models, config, rng, observer);
    case Strategy::kSpecEnsemble: return spec_ensemble_decode(models, config, rng, observer);
    case Strategy::kAlternateProposal: return alternate_proposal_decode(models, config, rng, observer);
    case Strategy::kNModelSE: return n_model_se_decode(models, config, rng, observer);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace specens
