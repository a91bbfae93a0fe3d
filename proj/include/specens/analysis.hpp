#pragma once

// Closed-form speed/acceptance quantities and the brute-force sequence
// oracle used by the validation suites.

#include <cstddef>
#include <map>
#include <span>

#include "specens/core.hpp"
#include "specens/models.hpp"

namespace specens {

// sum_x min(q(x), r(x)); cross-checked against 1 - tv_distance/2.
double acceptance_rate_exact(const Distribution& q, const Distribution& r);

// (1 - alpha^gamma) / (1 - alpha); gamma at alpha == 1.
double expected_accepted_tokens(double alpha, std::size_t gamma);

// Speculative ensemble vs vanilla ensemble, bonus token excluded:
// (1 - a^g)(1 + c) / ((1 - a)(1 + c g)).
double improvement_factor_se(double alpha, std::size_t gamma, double c);

// Alternate proposal vs vanilla ensemble:
// (1 - a^gq)(1 + c) / ((1 - a)(1 + c gq - a^gp c)).
double improvement_factor_alternate(double alpha, std::size_t gamma_q, std::size_t gamma_p, double c);

// Lower bound on acceptance for lambda*q + (1 - lambda)*p with q proposing.
double weighted_alpha_lower_bound(double lambda);

enum class Proposer { kQ, kP };

struct BestSide {
  double bound;
  Proposer proposer;
};

// max(lambda, 1 - lambda) and the proposer achieving it (q on ties).
BestSide best_side(double lambda);

// lambda > c / (1 + c), strict.
bool speedup_exists_condition(double lambda, double c);

using SequenceDistribution = std::map<TokenSeq, double>;

// Probability of every length-`length` continuation of `prefix` under the
// vanilla ensemble. Throws BudgetExceeded when vocab^length > 10^6.
SequenceDistribution exact_sequence_distribution(std::span<const ModelPtr> models, const EnsembleSpec& ensemble,
                                                 std::span<const Token> prefix, std::size_t length);

// The exact ensemble distribution of the next token after `prefix`.
Distribution exact_next_distribution(std::span<const ModelPtr> models, const Ensemble& ensemble,
                                     std::span<const Token> prefix);

}  // namespace specens
