#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "specens/core.hpp"

using namespace specens;

namespace {

std::vector<double> probs_of(const Distribution& d) { return {d.probs().begin(), d.probs().end()}; }

// Softmax in extended precision, independent of the engine's path.
std::vector<double> softmax_ld(const std::vector<long double>& l) {
  long double z = 0;
  for (long double x : l) z += std::exp(x);
  std::vector<double> out;
  for (long double x : l) out.push_back(static_cast<double>(std::exp(x) / z));
  return out;
}

Distribution random_distribution(std::mt19937_64& gen, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> raw(n);
  for (double& x : raw) x = e(gen);
  return normalize(raw);
}

void expect_valid(const Distribution& d) {
  double sum = 0;
  for (double x : d.probs()) {
    EXPECT_GE(x, 0.0);
    sum += x;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

}  // namespace

TEST(Vocabulary, RejectsTooSmallAndDuplicateLabels) {
  EXPECT_THROW(Vocabulary(1), InvariantError);
  EXPECT_THROW(Vocabulary(2, {"a"}), InvariantError);
  EXPECT_THROW(Vocabulary(2, {"a", "a"}), InvariantError);
  Vocabulary v(2, {"a", "b"});
  EXPECT_EQ(v.label(1), "b");
  EXPECT_THROW(v.label(2), TokenOutOfRange);
}

TEST(Normalize, Examples) {
  std::vector<double> a{0.2, 0.2};
  EXPECT_EQ(probs_of(normalize(a)), (std::vector<double>{0.5, 0.5}));
  std::vector<double> b{0.0, 0.3};
  EXPECT_EQ(probs_of(normalize(b)), (std::vector<double>{0.0, 1.0}));
  std::vector<double> c{0.0, 0.0};
  EXPECT_THROW(normalize(c), ZeroMassError);
  std::vector<double> neg{-0.1, 1.0};
  EXPECT_THROW(normalize(neg), InvariantError);
}

TEST(Distribution, FromNormalizedChecksSum) {
  EXPECT_THROW(Distribution::from_normalized({0.5, 0.4}), InvariantError);
  EXPECT_NO_THROW(Distribution::from_normalized({0.5, 0.5}));
  EXPECT_THROW(Distribution::one_hot(2, 2), TokenOutOfRange);
}

TEST(LogitsVec, RejectsNonFinite) {
  EXPECT_THROW(LogitsVec({0.0, NAN}), InvariantError);
  EXPECT_THROW(LogitsVec({0.0, INFINITY}), InvariantError);
}

TEST(WeightedEnsemble, Examples) {
  auto q = Distribution::from_normalized({0.7, 0.3});
  auto p = Distribution::from_normalized({0.1, 0.9});
  EXPECT_EQ(probs_of(weighted_ensemble(q, p, 0.0)), probs_of(p));
  EXPECT_EQ(probs_of(weighted_ensemble(q, p, 1.0)), probs_of(q));
  auto q2 = Distribution::from_normalized({0.8, 0.2});
  auto p2 = Distribution::from_normalized({0.2, 0.8});
  auto r = weighted_ensemble(q2, p2, 0.5);
  EXPECT_NEAR(r[0], 0.5, 1e-15);
  EXPECT_NEAR(r[1], 0.5, 1e-15);
  EXPECT_THROW(weighted_ensemble(q, Distribution::uniform(3), 0.5), VocabMismatchError);
}

TEST(WeightedEnsemble, SwapSymmetry) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 200; ++i) {
    auto q = random_distribution(gen, 7);
    auto p = random_distribution(gen, 7);
    double lambda = std::uniform_real_distribution<double>(0, 1)(gen);
    auto a = weighted_ensemble(q, p, lambda);
    auto b = weighted_ensemble(p, q, 1 - lambda);
    for (std::size_t x = 0; x < 7; ++x) EXPECT_NEAR(a.probs()[x], b.probs()[x], 1e-12);
    expect_valid(a);
  }
}

TEST(ContrastiveEnsemble, Examples) {
  auto r0 = contrastive_ensemble(LogitsVec({3.0, -2.0}), LogitsVec({0.0, 0.0}), 0.0, 1.0);
  EXPECT_NEAR(r0[0], 0.5, 1e-15);

  auto r = contrastive_ensemble(LogitsVec({1.0, -1.0}), LogitsVec({0.0, 0.0}), 0.1, 1.0);
  auto expected = softmax_ld({-0.1L, 0.1L});
  EXPECT_NEAR(r[0], expected[0], 1e-15);
  EXPECT_NEAR(r[1], expected[1], 1e-15);

  auto g = contrastive_ensemble(LogitsVec({0.0, 0.0}), LogitsVec({2.0, 0.0}), 0.1, 0.0);
  EXPECT_EQ(probs_of(g), (std::vector<double>{1.0, 0.0}));
}

TEST(ContrastiveEnsemble, ShiftInvariantInExpertLogits) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0, 2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> lq(6), lp(6), shifted(6);
    for (std::size_t k = 0; k < 6; ++k) {
      lq[k] = n(gen);
      lp[k] = n(gen);
    }
    double c = n(gen) * 10;
    for (std::size_t k = 0; k < 6; ++k) shifted[k] = lp[k] + c;
    auto a = contrastive_ensemble(LogitsVec(lq), LogitsVec(lp), 0.3, 0.7);
    auto b = contrastive_ensemble(LogitsVec(lq), LogitsVec(shifted), 0.3, 0.7);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(a.probs()[k], b.probs()[k], 1e-9);
  }
}

TEST(GeneralWeightedEnsemble, Examples) {
  std::vector<Distribution> ds{Distribution::from_normalized({0.3, 0.7}), Distribution::from_normalized({0.9, 0.1}),
                               Distribution::from_normalized({0.5, 0.5})};
  std::vector<double> w1{1, 0, 0};
  EXPECT_EQ(probs_of(general_weighted_ensemble(ds, w1)), probs_of(ds[0]));

  std::vector<Distribution> same(3, Distribution::from_normalized({0.4, 0.6}));
  std::vector<double> third{1.0 / 3, 1.0 / 3, 1.0 / 3};
  auto f = general_weighted_ensemble(same, third);
  EXPECT_NEAR(f[0], 0.4, 1e-15);

  std::vector<Distribution> mix{Distribution::one_hot(2, 0), Distribution::one_hot(2, 1),
                                Distribution::from_normalized({0.5, 0.5})};
  auto m = general_weighted_ensemble(mix, third);
  EXPECT_NEAR(m[0], 1.0 / 3 + 0.5 / 3, 1e-15);
  EXPECT_NEAR(m[1], 1.0 / 3 + 0.5 / 3, 1e-15);

  std::vector<double> bad{0.5, 0.4, 0.2};
  EXPECT_THROW(general_weighted_ensemble(mix, bad), WeightError);
  std::vector<double> short_w{0.5, 0.5};
  EXPECT_THROW(general_weighted_ensemble(mix, short_w), WeightError);
}

TEST(Temperature, Examples) {
  auto a = apply_temperature(LogitsVec({0.0, 0.0}), 1.0);
  EXPECT_EQ(probs_of(a), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(probs_of(apply_temperature(LogitsVec({3.0, 1.0}), 0.0)), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(probs_of(apply_temperature(LogitsVec({1.0, 1.0}), 0.0)), (std::vector<double>{1.0, 0.0}));
  EXPECT_THROW(apply_temperature(LogitsVec({1.0, 1.0}), -1.0), InvalidArgument);
}

TEST(Temperature, LogReextractionIsIdempotent) {
  std::mt19937_64 gen(9);
  for (int i = 0; i < 200; ++i) {
    auto d = random_distribution(gen, 8);
    auto once = apply_temperature(logits_from_probs(d), 1.0);
    auto twice = apply_temperature(logits_from_probs(once), 1.0);
    for (std::size_t x = 0; x < 8; ++x) {
      EXPECT_NEAR(once.probs()[x], d.probs()[x], 1e-9);
      EXPECT_NEAR(twice.probs()[x], once.probs()[x], 1e-9);
    }
  }
}

TEST(TvDistance, ExamplesAndProperties) {
  auto a = Distribution::from_normalized({0.8, 0.2});
  auto b = Distribution::from_normalized({0.5, 0.5});
  EXPECT_NEAR(tv_distance(a, b), 0.6, 1e-15);
  EXPECT_EQ(tv_distance(a, a), 0.0);
  EXPECT_EQ(tv_distance(Distribution::one_hot(2, 0), Distribution::one_hot(2, 1)), 2.0);
  EXPECT_THROW(tv_distance(a, Distribution::uniform(3)), VocabMismatchError);

  std::mt19937_64 gen(11);
  for (int i = 0; i < 500; ++i) {
    auto x = random_distribution(gen, 5);
    auto y = random_distribution(gen, 5);
    double t = tv_distance(x, y);
    EXPECT_EQ(t, tv_distance(y, x));
    EXPECT_GT(t, 0.0);
    EXPECT_LE(t, 2.0);
  }
}

TEST(Sample, InverseCdfExamples) {
  RandomSource rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(sample(Distribution::one_hot(2, 0), rng), 0);
    EXPECT_EQ(sample(Distribution::one_hot(2, 1), rng), 1);
  }
  auto half = Distribution::from_normalized({0.5, 0.5});
  EXPECT_EQ(inverse_cdf(half, 0.75), 1);
  EXPECT_EQ(inverse_cdf(half, 0.5), 0);
  EXPECT_EQ(inverse_cdf(half, 0.25), 0);
  // Zero-probability ids are skipped even at u exactly on a cdf step.
  auto gap = Distribution::from_normalized({0.5, 0.0, 0.5});
  EXPECT_EQ(inverse_cdf(gap, 0.5), 0);
  EXPECT_EQ(inverse_cdf(gap, 0.5000001), 2);
  EXPECT_EQ(inverse_cdf(gap, 1.0), 2);
}

TEST(Sample, ReproducibleAndMatchesDistribution) {
  auto d = Distribution::from_normalized({0.1, 0.2, 0.3, 0.4});
  RandomSource a(77), b(77);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    Token x = sample(d, a);
    ASSERT_EQ(x, sample(d, b));
    ++counts[x];
  }
  double tv = 0;
  for (int x = 0; x < 4; ++x) tv += std::abs(counts[x] / double(n) - d.probs()[x]);
  EXPECT_LE(tv, 0.02);
}

TEST(RandomSource, UniformInHalfOpenUnitInterval) {
  RandomSource rng(0);
  for (int i = 0; i < 100000; ++i) {
    double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
  }
  // mt19937_64 is fixed by the standard: the 10000th output of the
  // default-seeded engine is 9981545732273789042.
  std::mt19937_64 reference;
  reference.discard(9999);
  RandomSource fixed(5489);
  for (int i = 0; i < 9999; ++i) fixed.next_u64();
  EXPECT_EQ(fixed.next_u64(), 9981545732273789042ULL);
  EXPECT_EQ(reference(), 9981545732273789042ULL);
}

TEST(Residual, NormalizedPositivePart) {
  auto r = Distribution::from_normalized({0.5, 0.5});
  auto q = Distribution::from_normalized({0.8, 0.2});
  auto res = residual(r, q);
  EXPECT_EQ(probs_of(res), (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(residual(r, r), ZeroMassError);
}

TEST(EnsembleSpec, Validation) {
  EXPECT_THROW(EnsembleSpec::weighted(0.5).validate(3), ConfigError);
  EXPECT_THROW(EnsembleSpec::weighted(1.5).validate(2), ConfigError);
  EXPECT_THROW(EnsembleSpec::contrastive(-0.1).validate(2), ConfigError);
  EXPECT_THROW(EnsembleSpec::general({0.5, 0.6}).validate(2), WeightError);
  EXPECT_THROW(EnsembleSpec::general({0.5, 0.5}).validate(3), WeightError);
  EXPECT_THROW(EnsembleSpec::weighted(0.5, -1).validate(2), ConfigError);
  EXPECT_NO_THROW(EnsembleSpec::general({0.25, 0.25, 0.5}).validate(3));
  EXPECT_EQ(parse_ensemble_kind("general-weighted"), EnsembleKind::kGeneralWeighted);
  EXPECT_THROW(parse_ensemble_kind("mean"), ConfigError);
}

TEST(Ensemble, TemperatureAppliedPerModelForWeighted) {
  LogitsVec lq({std::log(0.8), std::log(0.2)});
  LogitsVec lp({std::log(0.2), std::log(0.8)});
  const LogitsVec* rows[] = {&lq, &lp};
  Ensemble e(EnsembleSpec::weighted(0.5, 0.5), 2);
  auto r = e.combine(rows);
  // Each row sharpened separately: 0.8^2/(0.8^2+0.2^2) = 16/17.
  EXPECT_NEAR(r[0], 0.5 * 16.0 / 17 + 0.5 * 1.0 / 17, 1e-12);
}

TEST(Ensemble, GreedyCollapsesMixtureToOneHot) {
  LogitsVec lq({0.0, 1.0, 0.5});
  LogitsVec lp({2.0, 0.0, 1.9});
  const LogitsVec* rows[] = {&lq, &lp};
  Ensemble w(EnsembleSpec::weighted(0.7, 0.0), 2);
  auto r = w.combine(rows);
  // 0.7 on token 1, 0.3 on token 0: argmax is 1.
  EXPECT_EQ(probs_of(r), probs_of(Distribution::one_hot(3, 1)));
  EXPECT_EQ(probs_of(w.proposal(lp)), probs_of(Distribution::one_hot(3, 0)));
}

TEST(Distributions, PropertyAllOutputsValid) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n(0, 3);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> l(9);
    for (double& x : l) x = n(gen);
    expect_valid(softmax(l));
    expect_valid(apply_temperature(LogitsVec(l), 0.3));
    auto q = random_distribution(gen, 9);
    auto p = random_distribution(gen, 9);
    expect_valid(weighted_ensemble(q, p, 0.37));
    expect_valid(contrastive_ensemble(logits_from_probs(q), logits_from_probs(p), 0.4, 1.0));
    std::vector<Distribution> ds{q, p};
    std::vector<double> w{0.2, 0.8};
    expect_valid(general_weighted_ensemble(ds, w));
  }
}
