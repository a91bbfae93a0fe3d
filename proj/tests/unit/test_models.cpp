#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "specens/models.hpp"

using namespace specens;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "specens_models_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

TokenSeq random_prefix(std::mt19937_64& gen, std::size_t vocab, std::size_t len) {
  TokenSeq out(len);
  for (Token& t : out) t = static_cast<Token>(gen() % vocab);
  return out;
}

}  // namespace

TEST(TableModel, ContextFreeReturnsLogOfDefault) {
  auto m = context_free_model(Distribution::from_normalized({0.3, 0.7}));
  TokenSeq prefix{1, 0, 1};
  auto l = m.logits_for(prefix);
  EXPECT_EQ(l[0], std::log(0.3));
  EXPECT_EQ(l[1], std::log(0.7));
  auto d = m.distribution_for(prefix);
  EXPECT_NEAR(d[0], 0.3, 1e-12);
}

TEST(TableModel, ShortPrefixAndUnseenContextUseDefault) {
  auto def = Distribution::from_normalized({0.5, 0.25, 0.25});
  TableModel m("t", 3, 2, 1.0, def, {{{0, 1}, Distribution::from_normalized({0.1, 0.1, 0.8})}});
  TokenSeq shorter{1};
  EXPECT_EQ(m.row_for(shorter), def);
  TokenSeq unseen{2, 2};
  EXPECT_EQ(m.row_for(unseen), def);
  TokenSeq hit{2, 0, 1};
  EXPECT_NEAR(m.row_for(hit)[2], 0.8, 0);
}

TEST(TableModel, RejectsOutOfRangePrefix) {
  auto m = random_table_model(1, 4, 1, 1.0);
  TokenSeq bad{0, 4};
  EXPECT_THROW(m.logits_for(bad), TokenOutOfRange);
  TokenSeq neg{-1};
  EXPECT_THROW(m.logits_for(neg), TokenOutOfRange);
  // Out-of-range ids outside the window are still rejected.
  TokenSeq early{9, 0};
  EXPECT_THROW(m.logits_for(early), TokenOutOfRange);
}

TEST(TableModel, ContextLengthPurity) {
  auto m = random_table_model(3, 5, 2, 0.5);
  std::mt19937_64 gen(4);
  for (int i = 0; i < 300; ++i) {
    TokenSeq a = random_prefix(gen, 5, 6);
    TokenSeq b = a;
    for (std::size_t k = 0; k + 2 < b.size(); ++k) b[k] = static_cast<Token>(gen() % 5);
    EXPECT_EQ(m.logits_for(a), m.logits_for(b));
    EXPECT_EQ(m.logits_for(a), m.logits_for(a));
  }
}

TEST(RandomTable, DeterministicAndSeedSensitive) {
  auto a = random_table_model(7, 6, 1, 1.0);
  auto b = random_table_model(7, 6, 1, 1.0);
  auto c = random_table_model(8, 6, 1, 1.0);
  EXPECT_EQ(serialize_table_model(a), serialize_table_model(b));
  ASSERT_EQ(a.entries().size(), 6u);
  bool differs = false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) differs |= !(a.entries()[i].probs == c.entries()[i].probs);
  EXPECT_TRUE(differs);
}

TEST(RandomTable, LargeConcentrationIsNearUniform) {
  auto m = random_table_model(2, 8, 1, 1e6);
  for (const auto& e : m.entries()) EXPECT_LE(tv_distance(e.probs, Distribution::uniform(8)), 0.01);
}

TEST(RandomTable, RejectsBadArguments) {
  EXPECT_THROW(random_table_model(1, 1, 0, 1.0), InvalidArgument);
  EXPECT_THROW(random_table_model(1, 4, 0, 0.0), InvalidArgument);
  EXPECT_THROW(random_table_model(1, 64, 5, 1.0), BudgetExceeded);
}

TEST(NGram, HandCountedBigram) {
  TokenSeq stream{0, 0, 0, 0};
  auto m = train_ngram(stream, 1, 1.0, 2);
  TokenSeq ctx{0};
  EXPECT_EQ(m.count(ctx, 0), 3u);
  EXPECT_NEAR(m.conditional(ctx, 0), 0.8, 1e-15);
  EXPECT_NEAR(m.distribution_for(ctx)[0], 0.8, 1e-12);
  // Context "1" never occurs: uniform.
  TokenSeq one{1};
  EXPECT_NEAR(m.conditional(one, 0), 0.5, 1e-15);
}

TEST(NGram, HandCountedTrigramOnAlternatingStream) {
  TokenSeq stream{0, 1, 0, 1, 0, 1};
  auto m = train_ngram(stream, 2, 1.0, 2);
  // Windows: (0,1)->0, (1,0)->1, (0,1)->0, (1,0)->1.
  TokenSeq ends_in_zero{1, 0};
  EXPECT_NEAR(m.conditional(ends_in_zero, 1), 3.0 / 4.0, 1e-15);
  EXPECT_NEAR(m.conditional(ends_in_zero, 0), 1.0 / 4.0, 1e-15);
  TokenSeq ends_in_one{0, 1};
  EXPECT_NEAR(m.conditional(ends_in_one, 0), 3.0 / 4.0, 1e-15);
  TokenSeq longer{1, 1, 0};
  auto l = m.logits_for(longer);
  EXPECT_NEAR(std::exp(l[1]), 0.75, 1e-12);
}

TEST(NGram, OrderOneUsesOnlyLastToken) {
  TokenSeq stream{0, 1, 2, 1, 0, 2, 2, 1};
  auto m = train_ngram(stream, 1, 0.5, 3);
  TokenSeq a{0, 1, 2, 0, 2};
  TokenSeq b{1, 1, 1, 1, 2};
  EXPECT_EQ(m.logits_for(a), m.logits_for(b));
}

TEST(NGram, LargeDeltaApproachesUniform) {
  TokenSeq stream{0, 0, 0, 1, 0, 0};
  auto m = train_ngram(stream, 1, 1e9, 2);
  TokenSeq ctx{0};
  EXPECT_NEAR(m.conditional(ctx, 0), 0.5, 1e-8);
}

TEST(NGram, RowsStrictlyPositiveAndNormalized) {
  std::mt19937_64 gen(8);
  TokenSeq stream = random_prefix(gen, 5, 200);
  auto m = train_ngram(stream, 2, 0.1, 5);
  for (int i = 0; i < 50; ++i) {
    auto d = m.distribution_for(random_prefix(gen, 5, 3));
    double s = 0;
    for (double x : d.probs()) {
      EXPECT_GT(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(NGram, EmptyOrShortStreamThrows) {
  TokenSeq empty;
  EXPECT_THROW(train_ngram(empty, 1, 1.0, 2), EmptyStream);
  TokenSeq one{0};
  EXPECT_THROW(train_ngram(one, 2, 1.0, 2), EmptyStream);
  TokenSeq ok{0, 1};
  EXPECT_THROW(train_ngram(ok, 1, 0.0, 2), InvalidArgument);
}

TEST(NGram, ToTableMatchesConditionals) {
  TokenSeq stream{0, 1, 2, 2, 1, 0, 1, 2};
  auto m = train_ngram(stream, 1, 1.0, 3);
  auto t = m.to_table();
  for (Token c = 0; c < 3; ++c) {
    TokenSeq ctx{c};
    EXPECT_EQ(t.distribution_for(ctx), m.distribution_for(ctx));
  }
}

TEST(ModelFile, RoundTripIsBitwise) {
  auto m = random_table_model(5, 7, 2, 0.3, 0.25, "rt");
  auto path = temp_path("rt.json");
  save_table_model(m, path);
  auto loaded = load_table_model(path);
  EXPECT_EQ(loaded.name(), "rt");
  EXPECT_EQ(loaded.cost(), 0.25);
  EXPECT_EQ(serialize_table_model(loaded), serialize_table_model(m));
  std::mt19937_64 gen(1);
  for (int i = 0; i < 100; ++i) {
    TokenSeq p = random_prefix(gen, 7, 1 + gen() % 4);
    EXPECT_EQ(loaded.logits_for(p), m.logits_for(p));
  }
}

TEST(ModelFile, RowSummingToHalfIsInvariantError) {
  EXPECT_THROW(parse_table_model(R"({"vocab_size": 2, "context_length": 1, "name": "x", "cost": 1,
      "default": [0.5, 0.5], "table": {"0": [0.25, 0.25]}})"),
               InvariantError);
}

TEST(ModelFile, SlightlyOffRowIsRenormalized) {
  auto m = parse_table_model(R"({"vocab_size": 2, "context_length": 0, "name": "x", "cost": 1,
      "default": [0.5000004, 0.5], "table": {}})");
  double s = m.default_row()[0] + m.default_row()[1];
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(ModelFile, WrongKeyLengthIsFormatError) {
  try {
    parse_table_model(R"({"vocab_size": 2, "context_length": 2, "name": "x", "cost": 1,
        "default": [0.5, 0.5], "table": {"0": [0.5, 0.5]}})");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("table"), std::string::npos) << e.what();
  }
}

TEST(ModelFile, MalformedJsonReportsLine) {
  try {
    parse_table_model("{\n\"vocab_size\": 2,\n\"context_length\": ,\n}");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ModelFile, MissingFileIsIoError) {
  EXPECT_THROW(load_table_model(temp_path("does-not-exist.json")), IoError);
}

TEST(TokenList, ParsesCommaAndSpace) {
  EXPECT_EQ(parse_token_list("0,1, 2 3"), (TokenSeq{0, 1, 2, 3}));
  EXPECT_EQ(parse_token_list(""), TokenSeq{});
  EXPECT_THROW(parse_token_list("1,x"), FormatError);
  auto p = temp_path("stream.txt");
  write_text(p, "0 1 0\n1 0 1\n");
  EXPECT_EQ(read_token_stream(p), (TokenSeq{0, 1, 0, 1, 0, 1}));
}
