#pragma once

// The LanguageModel capability and the desk-scale model zoo.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "specens/core.hpp"

namespace specens {

// prefix -> logits over a shared vocabulary, with a declared per-invocation
// cost. Output depends only on the last context_length() tokens.
class LanguageModel {
 public:
  LanguageModel(std::string name, std::size_t vocab_size, std::size_t context_length, double cost);
  virtual ~LanguageModel() = default;

  const std::string& name() const { return name_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t context_length() const { return context_length_; }
  double cost() const { return cost_; }

  // Validates every prefix id. Throws TokenOutOfRange.
  LogitsVec logits_for(std::span<const Token> prefix) const;
  Distribution distribution_for(std::span<const Token> prefix) const;

  // Validates only the trailing context window; for callers that already
  // validated the rest of the prefix.
  LogitsVec logits_at(std::span<const Token> prefix) const;

 protected:
  // window holds the last min(context_length, prefix.size()) tokens.
  virtual LogitsVec window_logits(std::span<const Token> window) const = 0;

 private:
  std::string name_;
  Vocabulary vocab_;
  std::size_t context_length_;
  double cost_;
};

using ModelPtr = std::shared_ptr<const LanguageModel>;

// Encodes a token window as a base-vocab integer. Callers guarantee
// vocab^len fits in 63 bits.
std::uint64_t encode_context(std::span<const Token> window, std::size_t vocab_size);

// Context table with a default row for unseen (or shorter-than-k) contexts.
class TableModel final : public LanguageModel {
 public:
  struct Entry {
    TokenSeq context;
    Distribution probs;
  };

  // Entries may be given in any order; they are stored sorted by context.
  TableModel(std::string name, std::size_t vocab_size, std::size_t context_length, double cost,
             Distribution default_row, std::vector<Entry> entries);

  const Distribution& default_row() const { return default_.probs; }
  const std::vector<Entry>& entries() const { return entries_; }
  const Distribution& row_for(std::span<const Token> prefix) const;

 protected:
  LogitsVec window_logits(std::span<const Token> window) const override;

 private:
  struct CachedRow {
    Distribution probs;
    LogitsVec logits;
  };
  const CachedRow& lookup(std::span<const Token> window) const;

  CachedRow default_;
  std::vector<Entry> entries_;
  std::vector<CachedRow> rows_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

// Add-delta smoothed n-gram model; `order` is the number of conditioning
// tokens. Prefixes shorter than the order see zero counts (uniform).
class NGramModel final : public LanguageModel {
 public:
  NGramModel(std::string name, std::size_t vocab_size, std::size_t order, double delta, double cost,
             std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> counts);

  std::size_t order() const { return context_length(); }
  double delta() const { return delta_; }

  std::uint64_t count(std::span<const Token> context, Token next) const;
  std::uint64_t context_count(std::span<const Token> context) const;
  double conditional(std::span<const Token> context, Token next) const;

  // Every observed context becomes a table row; the default row is the
  // zero-count (uniform) conditional.
  TableModel to_table() const;

 protected:
  LogitsVec window_logits(std::span<const Token> window) const override;

 private:
  Distribution row(std::span<const Token> window) const;

  double delta_;
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> counts_;
};

// Symmetric Dirichlet(concentration) row for every one of the
// vocab^context_length contexts (and for the default row), drawn from one
// seeded stream.
TableModel random_table_model(std::uint64_t seed, std::size_t vocab_size, std::size_t context_length,
                              double concentration, double cost = 1.0, std::string name = "table");

TableModel context_free_model(const Distribution& row, double cost = 1.0, std::string name = "fixed");

NGramModel train_ngram(std::span<const Token> stream, std::size_t order, double delta,
                       std::size_t vocab_size, double cost = 1.0, std::string name = "ngram");

// JSON table-model file. Probabilities are written with 17 significant
// digits so a save/load round trip is bitwise.
std::string serialize_table_model(const TableModel& model);
TableModel parse_table_model(const std::string& text);
TableModel load_table_model(const std::filesystem::path& path);
void save_table_model(const TableModel& model, const std::filesystem::path& path);

// Reads whitespace- or comma-separated token ids.
TokenSeq read_token_stream(const std::filesystem::path& path);
TokenSeq parse_token_list(const std::string& text);

}  // namespace specens
