#pragma once

// Token-to-word attention aggregation and word-pair predictor assembly.
//
// Files consumed:
//   attn_<model>_<sentence>_<layer>.bin   tensor [heads, n_t, n_t]
//   wordmap_<model>_<sentence>.csv        token_idx,word_idx
// Tokens absent from the word map (BOS/EOS and similar) are excluded: their
// attention mass is dropped and rows are not renormalized.
//
// File produced:
//   features_<model>_<layer>.bin          tensor [P, heads]

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "readalign/corpus.hpp"

namespace readalign {

struct TokenAttention {
  std::string sentence;
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t n_tokens = 0;
  std::vector<double> values;           // n_t x n_t, [query, key]
  std::vector<std::int32_t> word_of_token;  // -1 for excluded tokens
};

struct WordAttention {
  std::string sentence;
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t n_words = 0;
  std::vector<double> values;  // n_s x n_s

  double at(std::uint32_t u, std::uint32_t v) const { return values[static_cast<std::size_t>(u) * n_words + v]; }
};

// Checks that the mapped tokens cover 0..n_words-1 in non-decreasing order.
void check_word_map(const std::vector<std::int32_t>& word_of_token, std::uint32_t n_words, const std::string& where);

// Sums key-side tokens within a word, averages query-side tokens.
WordAttention aggregate_token_to_word(const TokenAttention& tok, std::uint32_t n_words);

// Raw-pointer form used for whole [heads, n_t, n_t] dumps; writes n_s*n_s values.
void aggregate_token_to_word(const float* tok, std::uint32_t n_tokens, const std::vector<std::int32_t>& word_of_token,
                             std::uint32_t n_words, double* out);

std::vector<double> lower_triangle_vector(const WordAttention& word);

// Global ordering of strict-lower-triangle word pairs: sentences in manifest
// order, then (l, m) with l > m row-major. Pair (l, m) of sentence s sits at
// offset(s) + l(l-1)/2 + m.
class PairIndex {
 public:
  struct Entry {
    std::uint32_t sentence;
    std::uint32_t l;
    std::uint32_t m;
  };

  PairIndex() = default;
  explicit PairIndex(const std::vector<std::uint32_t>& lengths);
  explicit PairIndex(const StudyManifest& manifest);

  static std::size_t pairs_in(std::uint32_t n) noexcept { return static_cast<std::size_t>(n) * (n - (n > 0)) / 2; }

  std::size_t size() const noexcept { return total_; }
  std::size_t sentence_count() const noexcept { return lengths_.size(); }
  std::uint32_t length(std::size_t s) const { return lengths_.at(s); }
  std::size_t offset(std::size_t s) const { return offsets_.at(s); }
  std::size_t index(std::size_t s, std::uint32_t l, std::uint32_t m) const;
  Entry entry(std::size_t p) const;
  std::uint32_t sentence_of(std::size_t p) const { return row_sentence_.at(p); }

  // Populated when built from a manifest.
  bool has_ids() const noexcept { return !ids_.empty() || lengths_.empty(); }
  std::optional<std::size_t> sentence_index(const std::string& id) const;
  const std::string& sentence_id(std::size_t s) const { return ids_.at(s); }
  std::uint32_t article_of_sentence(std::size_t s) const { return sentence_article_.at(s); }
  std::uint32_t article_of(std::size_t p) const { return sentence_article_.at(row_sentence_.at(p)); }

 private:
  std::vector<std::uint32_t> lengths_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> row_sentence_;
  std::vector<std::string> ids_;
  std::vector<std::uint32_t> sentence_article_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::size_t total_ = 0;
};

struct PairFeatureTable {
  std::string model;
  std::uint32_t layer = 0;
  Eigen::MatrixXd X;  // P x heads
};

// per_sentence[s] holds one WordAttention per head, in head order.
PairFeatureTable assemble_predictor_matrix(const PairIndex& index,
                                           const std::vector<std::vector<WordAttention>>& per_sentence,
                                           std::uint32_t heads, std::uint32_t layer);

std::string attention_filename(std::string_view model, std::string_view sentence, std::uint32_t layer);
std::string wordmap_filename(std::string_view model, std::string_view sentence);
std::string features_filename(std::string_view model, std::uint32_t layer);

// Reads token_idx,word_idx and expands to a per-token vector (-1 where absent).
std::vector<std::int32_t> load_word_map(const std::filesystem::path& path, std::uint32_t n_tokens);
std::string serialize_word_map(const std::vector<std::int32_t>& word_of_token);

// Loads one (model, sentence, layer) dump, validates shape, row sums and the
// word map, and aggregates every head.
std::vector<WordAttention> load_sentence_layer(const std::filesystem::path& attention_dir, const std::string& model,
                                               const Sentence& sentence, std::uint32_t layer,
                                               std::uint32_t expected_heads);

// Builds features for every layer of a model from its attention dumps.
std::vector<PairFeatureTable> build_model_features(const StudyManifest& manifest, const ModelEntry& model,
                                                   const std::filesystem::path& attention_dir, unsigned workers);

void write_features(const std::filesystem::path& path, const PairFeatureTable& table);
PairFeatureTable read_features(const std::filesystem::path& path, std::string model, std::uint32_t layer);

}  // namespace readalign
