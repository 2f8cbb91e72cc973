#include "readalign/attention.hpp"

#include <cmath>

#include "readalign/error.hpp"
#include "readalign/parallel.hpp"
#include "readalign/tensor_io.hpp"
#include "readalign/text_io.hpp"

namespace readalign {

void check_word_map(const std::vector<std::int32_t>& word_of_token, std::uint32_t n_words, const std::string& where) {
  std::int32_t prev = -1;
  for (std::size_t t = 0; t < word_of_token.size(); ++t) {
    const std::int32_t w = word_of_token[t];
    if (w < 0) continue;
    if (w >= static_cast<std::int32_t>(n_words))
      fail(ErrorKind::MapMismatch, where + ": token " + std::to_string(t) + " maps to word " + std::to_string(w) +
                                       " but the sentence has " + std::to_string(n_words) + " words");
    if (w < prev)
      fail(ErrorKind::MapMismatch, where + ": word map decreases at token " + std::to_string(t));
    if (w > prev + 1)
      fail(ErrorKind::MapMismatch, where + ": word " + std::to_string(prev + 1) + " has no tokens");
    prev = w;
  }
  if (prev + 1 != static_cast<std::int32_t>(n_words))
    fail(ErrorKind::MapMismatch, where + ": word map covers " + std::to_string(prev + 1) + " of " +
                                     std::to_string(n_words) + " words");
}

namespace {

template <class T>
void aggregate_impl(const T* tok, std::uint32_t n_tokens, const std::vector<std::int32_t>& map, std::uint32_t n_words,
                    double* out) {
  std::fill(out, out + static_cast<std::size_t>(n_words) * n_words, 0.0);
  std::vector<std::uint32_t> queries_per_word(n_words, 0);
  std::vector<double> row(n_words);
  for (std::uint32_t q = 0; q < n_tokens; ++q) {
    const std::int32_t u = map[q];
    if (u < 0) continue;
    std::fill(row.begin(), row.end(), 0.0);
    const T* src = tok + static_cast<std::size_t>(q) * n_tokens;
    for (std::uint32_t k = 0; k < n_tokens; ++k)
      if (map[k] >= 0) row[map[k]] += static_cast<double>(src[k]);
    double* dst = out + static_cast<std::size_t>(u) * n_words;
    for (std::uint32_t v = 0; v < n_words; ++v) dst[v] += row[v];
    ++queries_per_word[u];
  }
  for (std::uint32_t u = 0; u < n_words; ++u) {
    const double inv = 1.0 / queries_per_word[u];
    for (std::uint32_t v = 0; v < n_words; ++v) out[static_cast<std::size_t>(u) * n_words + v] *= inv;
  }
}

}  // namespace

void aggregate_token_to_word(const float* tok, std::uint32_t n_tokens, const std::vector<std::int32_t>& word_of_token,
                             std::uint32_t n_words, double* out) {
  if (word_of_token.size() != n_tokens)
    fail(ErrorKind::MapMismatch, "word map has " + std::to_string(word_of_token.size()) + " entries for " +
                                     std::to_string(n_tokens) + " tokens");
  check_word_map(word_of_token, n_words, "word map");
  aggregate_impl(tok, n_tokens, word_of_token, n_words, out);
}

WordAttention aggregate_token_to_word(const TokenAttention& tok, std::uint32_t n_words) {
  const std::string where = "sentence " + tok.sentence + " layer " + std::to_string(tok.layer) + " head " +
                            std::to_string(tok.head);
  if (tok.word_of_token.size() != tok.n_tokens)
    fail(ErrorKind::MapMismatch, where + ": word map length differs from token count");
  if (tok.values.size() != static_cast<std::size_t>(tok.n_tokens) * tok.n_tokens)
    fail(ErrorKind::InvalidArgument, where + ": attention matrix is not n_t x n_t");
  check_word_map(tok.word_of_token, n_words, where);
  WordAttention w;
  w.sentence = tok.sentence;
  w.layer = tok.layer;
  w.head = tok.head;
  w.n_words = n_words;
  w.values.resize(static_cast<std::size_t>(n_words) * n_words);
  aggregate_impl(tok.values.data(), tok.n_tokens, tok.word_of_token, n_words, w.values.data());
  return w;
}

std::vector<double> lower_triangle_vector(const WordAttention& word) {
  std::vector<double> out;
  out.reserve(PairIndex::pairs_in(word.n_words));
  for (std::uint32_t l = 1; l < word.n_words; ++l)
    for (std::uint32_t m = 0; m < l; ++m) out.push_back(word.at(l, m));
  return out;
}

// ------------------------------------------------------------- PairIndex

PairIndex::PairIndex(const std::vector<std::uint32_t>& lengths) : lengths_(lengths) {
  offsets_.reserve(lengths_.size());
  for (std::size_t s = 0; s < lengths_.size(); ++s) {
    offsets_.push_back(total_);
    const std::size_t n = pairs_in(lengths_[s]);
    row_sentence_.insert(row_sentence_.end(), n, static_cast<std::uint32_t>(s));
    total_ += n;
  }
}

PairIndex::PairIndex(const StudyManifest& manifest) : PairIndex(manifest.sentence_lengths()) {
  for (std::size_t s = 0; s < manifest.sentences.size(); ++s) {
    ids_.push_back(manifest.sentences[s].id);
    by_id_.emplace(manifest.sentences[s].id, s);
    sentence_article_.push_back(static_cast<std::uint32_t>(*manifest.article_index(manifest.sentences[s].article)));
  }
}

std::size_t PairIndex::index(std::size_t s, std::uint32_t l, std::uint32_t m) const {
  if (s >= lengths_.size() || l >= lengths_[s] || m >= l)
    fail(ErrorKind::InvalidArgument, "pair (" + std::to_string(l) + ", " + std::to_string(m) +
                                         ") is not a strict-lower-triangle entry of sentence " + std::to_string(s));
  return offsets_[s] + static_cast<std::size_t>(l) * (l - 1) / 2 + m;
}

PairIndex::Entry PairIndex::entry(std::size_t p) const {
  const std::uint32_t s = row_sentence_.at(p);
  std::size_t r = p - offsets_[s];
  // l is the largest value with l(l-1)/2 <= r
  auto l = static_cast<std::uint32_t>((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(r))) / 2.0);
  while (static_cast<std::size_t>(l) * (l - 1) / 2 > r) --l;
  while (static_cast<std::size_t>(l + 1) * l / 2 <= r) ++l;
  return {s, l, static_cast<std::uint32_t>(r - static_cast<std::size_t>(l) * (l - 1) / 2)};
}

std::optional<std::size_t> PairIndex::sentence_index(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

PairFeatureTable assemble_predictor_matrix(const PairIndex& index,
                                           const std::vector<std::vector<WordAttention>>& per_sentence,
                                           std::uint32_t heads, std::uint32_t layer) {
  if (per_sentence.size() != index.sentence_count())
    fail(ErrorKind::MissingSentence, "expected attention for " + std::to_string(index.sentence_count()) +
                                         " sentences, got " + std::to_string(per_sentence.size()));
  PairFeatureTable table;
  table.layer = layer;
  table.X.resize(static_cast<Eigen::Index>(index.size()), heads);
  for (std::size_t s = 0; s < per_sentence.size(); ++s) {
    const auto& words = per_sentence[s];
    const std::string name = index.has_ids() ? index.sentence_id(s) : std::to_string(s);
    if (words.empty()) fail(ErrorKind::MissingSentence, "no attention for sentence " + name);
    if (words.size() != heads)
      fail(ErrorKind::HeadCountMismatch, "sentence " + words.front().sentence + " layer " + std::to_string(layer) +
                                             " has " + std::to_string(words.size()) + " heads, expected " +
                                             std::to_string(heads));
    for (std::uint32_t h = 0; h < heads; ++h) {
      if (words[h].n_words != index.length(s))
        fail(ErrorKind::MapMismatch, "sentence " + words[h].sentence + " has " + std::to_string(words[h].n_words) +
                                         " words, manifest says " + std::to_string(index.length(s)));
      const auto tri = lower_triangle_vector(words[h]);
      for (std::size_t k = 0; k < tri.size(); ++k)
        table.X(static_cast<Eigen::Index>(index.offset(s) + k), h) = tri[k];
    }
  }
  return table;
}

// ------------------------------------------------------------------ files

std::string attention_filename(std::string_view model, std::string_view sentence, std::uint32_t layer) {
  return "attn_" + std::string(model) + "_" + std::string(sentence) + "_" + std::to_string(layer) + ".bin";
}

std::string wordmap_filename(std::string_view model, std::string_view sentence) {
  return "wordmap_" + std::string(model) + "_" + std::string(sentence) + ".csv";
}

std::string features_filename(std::string_view model, std::uint32_t layer) {
  return "features_" + std::string(model) + "_" + std::to_string(layer) + ".bin";
}

std::vector<std::int32_t> load_word_map(const std::filesystem::path& path, std::uint32_t n_tokens) {
  const std::string source = path.string();
  const CsvTable t = parse_csv(read_file_text(path), source);
  const auto c_tok = t.column("token_idx", source);
  const auto c_word = t.column("word_idx", source);
  std::vector<std::int32_t> map(n_tokens, -1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto tok = parse_int(t.rows[r][c_tok], where(source, t.line_numbers[r], "token_idx"));
    const auto word = parse_int(t.rows[r][c_word], where(source, t.line_numbers[r], "word_idx"));
    if (tok < 0 || tok >= n_tokens)
      fail(ErrorKind::MapMismatch, where(source, t.line_numbers[r], "token_idx") + ": token " + std::to_string(tok) +
                                       " outside the " + std::to_string(n_tokens) + "-token attention matrix");
    if (word < 0 || word > 0x7FFFFFFF)
      fail(ErrorKind::MapMismatch, where(source, t.line_numbers[r], "word_idx") + ": negative word index");
    if (map[tok] >= 0)
      fail(ErrorKind::MapMismatch, where(source, t.line_numbers[r], "token_idx") + ": token listed twice");
    map[tok] = static_cast<std::int32_t>(word);
  }
  return map;
}

std::string serialize_word_map(const std::vector<std::int32_t>& word_of_token) {
  std::string out = "token_idx,word_idx\n";
  for (std::size_t t = 0; t < word_of_token.size(); ++t)
    if (word_of_token[t] >= 0) out += std::to_string(t) + "," + std::to_string(word_of_token[t]) + "\n";
  return out;
}

std::vector<WordAttention> load_sentence_layer(const std::filesystem::path& attention_dir, const std::string& model,
                                               const Sentence& sentence, std::uint32_t layer,
                                               std::uint32_t expected_heads) {
  const auto tensor_path = attention_dir / attention_filename(model, sentence.id, layer);
  const auto map_path = attention_dir / wordmap_filename(model, sentence.id);
  if (!std::filesystem::exists(tensor_path))
    fail(ErrorKind::MissingSentence, "sentence " + sentence.id + ": missing attention dump " + tensor_path.string());
  if (!std::filesystem::exists(map_path))
    fail(ErrorKind::MissingSentence, "sentence " + sentence.id + ": missing word map " + map_path.string());
  const Tensor t = read_tensor(tensor_path);
  const std::string src = tensor_path.string();
  if (t.dims.size() != 3 || t.dims[1] != t.dims[2])
    fail(ErrorKind::ParseError, src + ": attention tensor must have dims [heads, n_t, n_t]");
  if (t.dims[0] != expected_heads)
    fail(ErrorKind::HeadCountMismatch, src + ": " + std::to_string(t.dims[0]) + " heads, manifest says " +
                                           std::to_string(expected_heads));
  const std::uint32_t n_t = t.dims[1];
  const std::uint32_t n_s = sentence.word_count();
  if (n_t < n_s)
    fail(ErrorKind::MapMismatch, src + ": " + std::to_string(n_t) + " tokens for " + std::to_string(n_s) + " words");
  const auto map = load_word_map(map_path, n_t);
  check_word_map(map, n_s, map_path.string());

  std::vector<WordAttention> out(expected_heads);
  for (std::uint32_t h = 0; h < expected_heads; ++h) {
    const float* head = t.values.data() + static_cast<std::size_t>(h) * n_t * n_t;
    for (std::uint32_t q = 0; q < n_t; ++q) {
      double sum = 0;
      for (std::uint32_t k = 0; k < n_t; ++k) {
        const float a = head[static_cast<std::size_t>(q) * n_t + k];
        if (!(a >= 0.0f) || !std::isfinite(a))
          fail(ErrorKind::InvariantViolation, src + ": head " + std::to_string(h) + " row " + std::to_string(q) +
                                                  " has a negative or non-finite weight");
        sum += a;
      }
      if (std::abs(sum - 1.0) > 1e-4)
        fail(ErrorKind::InvariantViolation, src + ": head " + std::to_string(h) + " row " + std::to_string(q) +
                                                " sums to " + format_double(sum) + ", expected 1 +/- 1e-4");
    }
    auto& w = out[h];
    w.sentence = sentence.id;
    w.layer = layer;
    w.head = h;
    w.n_words = n_s;
    w.values.resize(static_cast<std::size_t>(n_s) * n_s);
    aggregate_impl(head, n_t, map, n_s, w.values.data());
  }
  return out;
}

std::vector<PairFeatureTable> build_model_features(const StudyManifest& manifest, const ModelEntry& model,
                                                   const std::filesystem::path& attention_dir, unsigned workers) {
  const PairIndex index(manifest);
  std::vector<PairFeatureTable> tables(model.layers);
  parallel_for(model.layers, workers, [&](std::size_t j) {
    std::vector<std::vector<WordAttention>> per_sentence(manifest.sentences.size());
    for (std::size_t s = 0; s < manifest.sentences.size(); ++s)
      per_sentence[s] = load_sentence_layer(attention_dir, model.id, manifest.sentences[s],
                                            static_cast<std::uint32_t>(j), model.heads);
    tables[j] = assemble_predictor_matrix(index, per_sentence, model.heads, static_cast<std::uint32_t>(j));
    tables[j].model = model.id;
  });
  return tables;
}

void write_features(const std::filesystem::path& path, const PairFeatureTable& table) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(table.X.rows()), static_cast<std::uint32_t>(table.X.cols())};
  t.values.resize(static_cast<std::size_t>(table.X.size()));
  for (Eigen::Index r = 0; r < table.X.rows(); ++r)
    for (Eigen::Index c = 0; c < table.X.cols(); ++c)
      t.values[static_cast<std::size_t>(r * table.X.cols() + c)] = static_cast<float>(table.X(r, c));
  write_tensor(path, t);
}

PairFeatureTable read_features(const std::filesystem::path& path, std::string model, std::uint32_t layer) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  const Tensor t = read_tensor(path);
  if (t.dims.size() != 2) fail(ErrorKind::ParseError, path.string() + ": features must have dims [P, heads]");
  PairFeatureTable table;
  table.model = std::move(model);
  table.layer = layer;
  table.X.resize(t.dims[0], t.dims[1]);
  for (std::uint32_t r = 0; r < t.dims[0]; ++r)
    for (std::uint32_t c = 0; c < t.dims[1]; ++c)
      table.X(r, c) = t.values[static_cast<std::size_t>(r) * t.dims[1] + c];
  return table;
}

}  // namespace readalign
