#include "specens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace specens {

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
}

void check_gamma(std::size_t gamma) {
  if (gamma < 1) throw InvalidArgument("proposal length must be >= 1");
}

void check_cost(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("cost coefficient must be finite and > 0");
}

double ipow(double base, std::size_t exp) { return std::pow(base, static_cast<double>(exp)); }

}  // namespace

double acceptance_rate_exact(const Distribution& q, const Distribution& r) {
  double tv = tv_distance(q, r);  // size check
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += std::min(q.probs()[i], r.probs()[i]);
  if (std::abs(total - (1.0 - 0.5 * tv)) > 1e-12) {
    std::ostringstream os;
    os.precision(17);
    os << "sum-min acceptance " << total << " disagrees with 1 - TV/2 = " << 1.0 - 0.5 * tv;
    throw InvariantError(os.str());
  }
  return total;
}

double expected_accepted_tokens(double alpha, std::size_t gamma) {
  check_alpha(alpha);
  check_gamma(gamma);
  if (alpha == 1.0) return static_cast<double>(gamma);
  return (1.0 - ipow(alpha, gamma)) / (1.0 - alpha);
}

double improvement_factor_se(double alpha, std::size_t gamma, double c) {
  check_cost(c);
  double g = static_cast<double>(gamma);
  return expected_accepted_tokens(alpha, gamma) * (1.0 + c) / (1.0 + c * g);
}

double improvement_factor_alternate(double alpha, std::size_t gamma_q, std::size_t gamma_p, double c) {
  check_cost(c);
  check_gamma(gamma_p);
  double gq = static_cast<double>(gamma_q);
  return expected_accepted_tokens(alpha, gamma_q) * (1.0 + c) / (1.0 + c * gq - ipow(alpha, gamma_p) * c);
}

double weighted_alpha_lower_bound(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0, 1]");
  return lambda;
}

BestSide best_side(double lambda) {
  double bound = weighted_alpha_lower_bound(lambda);
  if (lambda >= 0.5) return {bound, Proposer::kQ};
  return {1.0 - lambda, Proposer::kP};
}

bool speedup_exists_condition(double lambda, double c) {
  weighted_alpha_lower_bound(lambda);
  check_cost(c);
  return lambda > c / (1.0 + c);
}

Distribution exact_next_distribution(std::span<const ModelPtr> models, const Ensemble& ensemble,
                                     std::span<const Token> prefix) {
  std::vector<LogitsVec> rows;
  rows.reserve(models.size());
  for (const ModelPtr& m : models) rows.push_back(m->logits_for(prefix));
  std::vector<const LogitsVec*> ptrs;
  for (const LogitsVec& l : rows) ptrs.push_back(&l);
  return ensemble.combine(ptrs);
}

SequenceDistribution exact_sequence_distribution(std::span<const ModelPtr> models, const EnsembleSpec& spec,
                                                 std::span<const Token> prefix, std::size_t length) {
  if (models.empty()) throw ConfigError("no models");
  const std::size_t vocab = models[0]->vocab_size();
  for (const ModelPtr& m : models) {
    if (m->vocab_size() != vocab) throw VocabMismatchError("models disagree on vocabulary size");
  }
  if (std::pow(static_cast<double>(vocab), static_cast<double>(length)) > 1e6) {
    throw BudgetExceeded("vocab^length exceeds 10^6 sequences");
  }
  Ensemble ensemble(spec, models.size());
  SequenceDistribution out;
  TokenSeq seq(prefix.begin(), prefix.end());
  TokenSeq suffix;

  // Depth-first over continuations, carrying the running product.
  auto expand = [&](auto&& self, double mass) -> void {
    if (suffix.size() == length) {
      out.emplace(suffix, mass);
      return;
    }
    Distribution r = exact_next_distribution(models, ensemble, seq);
    for (std::size_t x = 0; x < vocab; ++x) {
      double p = r.probs()[x];
      if (p == 0.0) continue;
      seq.push_back(static_cast<Token>(x));
      suffix.push_back(static_cast<Token>(x));
      self(self, mass * p);
      seq.pop_back();
      suffix.pop_back();
    }
  };
  expand(expand, 1.0);
  return out;
}

}  // namespace specens
