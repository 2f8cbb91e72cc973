#include "readalign/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "readalign/error.hpp"
#include "readalign/tensor_io.hpp"
#include "readalign/text_io.hpp"

namespace readalign {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::size_t line_of_byte(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

json parse_json_text(std::string_view text, const std::string& source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::ParseError,
         source + ":" + std::to_string(line_of_byte(text, e.byte)) + ": " + e.what());
  }
}

// Field accessors that turn type errors into ParseError naming the field.
const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) fail(ErrorKind::ParseError, path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::ParseError, path + "." + key + ": missing");
  return *it;
}

std::string get_string(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_string()) fail(ErrorKind::ParseError, path + "." + key + ": expected a string");
  return v.get<std::string>();
}

double get_number(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number()) fail(ErrorKind::ParseError, path + "." + key + ": expected a number");
  return v.get<double>();
}

std::uint32_t get_uint(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 0xFFFFFFFFll)
    fail(ErrorKind::ParseError, path + "." + key + ": expected a non-negative integer");
  return static_cast<std::uint32_t>(v.get<std::int64_t>());
}

bool get_bool_or(const json& obj, const char* key, bool fallback, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_boolean()) fail(ErrorKind::ParseError, path + "." + key + ": expected a boolean");
  return it->get<bool>();
}

const json& get_array(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_array()) fail(ErrorKind::ParseError, path + "." + key + ": expected an array");
  return v;
}

bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

void require(bool ok, const std::string& rule) {
  if (!ok) fail(ErrorKind::InvariantViolation, rule);
}

const char* modality_name(ModelModality m) { return m == ModelModality::LLM ? "LLM" : "VLM"; }

}  // namespace

char hemi_char(Hemisphere h) noexcept { return h == Hemisphere::Left ? 'L' : 'R'; }

Hemisphere parse_hemi(std::string_view s) {
  if (s == "L" || s == "l" || s == "lh") return Hemisphere::Left;
  if (s == "R" || s == "r" || s == "rh") return Hemisphere::Right;
  fail(ErrorKind::ParseError, "hemisphere must be L or R, got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- manifest

std::optional<std::size_t> StudyManifest::sentence_index(std::string_view id) const {
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (sentences[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> StudyManifest::article_index(std::string_view id) const {
  for (std::size_t i = 0; i < articles.size(); ++i)
    if (articles[i] == id) return i;
  return std::nullopt;
}

const ModelEntry& StudyManifest::model(std::string_view id) const {
  for (const auto& m : models)
    if (m.id == id) return m;
  fail(ErrorKind::InvalidArgument, "unknown model '" + std::string(id) + "'");
}

const SubjectEntry* StudyManifest::subject(std::string_view id) const {
  for (const auto& s : subjects)
    if (s.id == id) return &s;
  return nullptr;
}

std::vector<std::uint32_t> StudyManifest::sentence_lengths() const {
  std::vector<std::uint32_t> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(s.word_count());
  return out;
}

void check_manifest_invariants(const StudyManifest& m) {
  require(!m.articles.empty(), "manifest declares no articles");
  std::unordered_set<std::string> seen;
  for (const auto& a : m.articles) {
    require(valid_id(a), "article id '" + a + "' must match [A-Za-z0-9._-]+");
    require(seen.insert(a).second, "duplicate article id '" + a + "'");
  }
  seen.clear();
  for (const auto& s : m.sentences) {
    require(valid_id(s.id), "sentence id '" + s.id + "' must match [A-Za-z0-9._-]+");
    require(seen.insert(s.id).second, "duplicate sentence id '" + s.id + "'");
    require(m.article_index(s.article).has_value(),
            "sentence '" + s.id + "' references unknown article '" + s.article + "'");
    require(s.word_count() >= 1, "sentence '" + s.id + "' has no words");
  }
  seen.clear();
  for (const auto& s : m.subjects) {
    require(valid_id(s.id), "subject id '" + s.id + "' must match [A-Za-z0-9._-]+");
    require(seen.insert(s.id).second, "duplicate subject id '" + s.id + "'");
  }
  seen.clear();
  for (const auto& md : m.models) {
    require(valid_id(md.id), "model id '" + md.id + "' must match [A-Za-z0-9._-]+");
    require(seen.insert(md.id).second, "duplicate model id '" + md.id + "'");
    require(md.layers >= 1, "model '" + md.id + "' must have at least one layer");
    require(md.heads >= 1, "model '" + md.id + "' must have at least one head per layer");
  }
  for (const auto& p : m.pairings) {
    const ModelEntry* llm = nullptr;
    const ModelEntry* vlm = nullptr;
    for (const auto& md : m.models) {
      if (md.id == p.llm) llm = &md;
      if (md.id == p.vlm) vlm = &md;
    }
    require(llm && vlm, "pairing " + p.llm + "/" + p.vlm + " references an unknown model");
    require(p.llm != p.vlm, "pairing " + p.llm + "/" + p.vlm + " must reference two distinct models");
    require(llm->modality == ModelModality::LLM, "pairing llm '" + p.llm + "' is not tagged LLM");
    require(vlm->modality == ModelModality::VLM, "pairing vlm '" + p.vlm + "' is not tagged VLM");
    if (!p.family.empty())
      require(llm->family == p.family && vlm->family == p.family,
              "pairing " + p.llm + "/" + p.vlm + " declares family '" + p.family +
                  "' but the models carry '" + llm->family + "'/'" + vlm->family + "'");
  }
  require(m.tr_seconds > 0 && std::isfinite(m.tr_seconds), "tr_seconds must be positive");
  require(!m.hemispheres.empty(), "manifest declares no hemispheres");
  if (m.hemispheres.size() == 2) require(m.hemispheres[0] != m.hemispheres[1], "duplicate hemisphere");
  require(m.hemispheres.size() <= 2, "at most two hemispheres");
}

StudyManifest parse_study_manifest(std::string_view text, const std::string& source) {
  const json doc = parse_json_text(text, source);
  if (!doc.is_object()) fail(ErrorKind::ParseError, source + ": top level must be an object");
  StudyManifest m;
  const std::string root = source;

  for (const auto& a : get_array(doc, "articles", root)) {
    if (!a.is_string()) fail(ErrorKind::ParseError, root + ".articles: expected strings");
    m.articles.push_back(a.get<std::string>());
  }
  const auto& sentences = get_array(doc, "sentences", root);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const std::string path = root + ".sentences[" + std::to_string(i) + "]";
    Sentence s;
    s.id = get_string(sentences[i], "id", path);
    s.article = get_string(sentences[i], "article", path);
    for (const auto& w : get_array(sentences[i], "words", path)) {
      if (!w.is_string()) fail(ErrorKind::ParseError, path + ".words: expected strings");
      s.words.push_back(w.get<std::string>());
    }
    m.sentences.push_back(std::move(s));
  }
  const auto& subjects = get_array(doc, "subjects", root);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const std::string path = root + ".subjects[" + std::to_string(i) + "]";
    SubjectEntry s;
    s.id = get_string(subjects[i], "id", path);
    s.eye = get_bool_or(subjects[i], "eye", true, path);
    s.fmri = get_bool_or(subjects[i], "fmri", true, path);
    m.subjects.push_back(std::move(s));
  }
  const auto& models = get_array(doc, "models", root);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::string path = root + ".models[" + std::to_string(i) + "]";
    ModelEntry md;
    md.id = get_string(models[i], "id", path);
    md.family = get_string(models[i], "family", path);
    const std::string mod = get_string(models[i], "modality", path);
    if (mod == "LLM") md.modality = ModelModality::LLM;
    else if (mod == "VLM") md.modality = ModelModality::VLM;
    else fail(ErrorKind::ParseError, path + ".modality: expected LLM or VLM");
    md.layers = get_uint(models[i], "layers", path);
    md.heads = get_uint(models[i], "heads", path);
    m.models.push_back(std::move(md));
  }
  if (doc.contains("pairings")) {
    const auto& pairings = get_array(doc, "pairings", root);
    for (std::size_t i = 0; i < pairings.size(); ++i) {
      const std::string path = root + ".pairings[" + std::to_string(i) + "]";
      Pairing p;
      p.llm = get_string(pairings[i], "llm", path);
      p.vlm = get_string(pairings[i], "vlm", path);
      if (pairings[i].contains("family")) p.family = get_string(pairings[i], "family", path);
      m.pairings.push_back(std::move(p));
    }
  }
  if (doc.contains("hemispheres")) {
    m.hemispheres.clear();
    for (const auto& h : get_array(doc, "hemispheres", root)) {
      if (!h.is_string()) fail(ErrorKind::ParseError, root + ".hemispheres: expected strings");
      m.hemispheres.push_back(parse_hemi(h.get<std::string>()));
    }
  }
  if (doc.contains("tr_seconds")) m.tr_seconds = get_number(doc, "tr_seconds", root);

  check_manifest_invariants(m);
  return m;
}

StudyManifest load_study_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  return parse_study_manifest(read_file_text(path), path.string());
}

std::string serialize_study_manifest(const StudyManifest& m) {
  ordered_json doc;
  doc["articles"] = m.articles;
  doc["sentences"] = ordered_json::array();
  for (const auto& s : m.sentences)
    doc["sentences"].push_back({{"id", s.id}, {"article", s.article}, {"words", s.words}});
  doc["subjects"] = ordered_json::array();
  for (const auto& s : m.subjects) doc["subjects"].push_back({{"id", s.id}, {"eye", s.eye}, {"fmri", s.fmri}});
  doc["models"] = ordered_json::array();
  for (const auto& md : m.models)
    doc["models"].push_back({{"id", md.id},
                             {"family", md.family},
                             {"modality", modality_name(md.modality)},
                             {"layers", md.layers},
                             {"heads", md.heads}});
  doc["pairings"] = ordered_json::array();
  for (const auto& p : m.pairings) {
    ordered_json e = {{"llm", p.llm}, {"vlm", p.vlm}};
    if (!p.family.empty()) e["family"] = p.family;
    doc["pairings"].push_back(std::move(e));
  }
  doc["hemispheres"] = ordered_json::array();
  for (auto h : m.hemispheres) doc["hemispheres"].push_back(std::string(1, hemi_char(h)));
  doc["tr_seconds"] = m.tr_seconds;
  return doc.dump(2) + "\n";
}

// --------------------------------------------------------------- fixations

std::vector<FixationLog> parse_fixations(std::string_view text, const std::string& source) {
  const CsvTable t = parse_csv(text, source);
  const auto c_subject = t.column("subject", source);
  const auto c_sentence = t.column("sentence", source);
  const auto c_fix = t.column("fix_idx", source);
  const auto c_word = t.column("word_idx", source);
  const auto c_onset = t.column("onset_ms", source);
  const auto c_run = t.column("run", source);

  std::vector<FixationLog> logs;
  std::unordered_map<std::string, std::size_t> by_subject;
  // (subject, sentence) -> last fixation index; (subject, run) -> last onset
  std::map<std::pair<std::string, std::string>, std::int64_t> last_fix;
  std::map<std::pair<std::string, std::string>, double> last_onset;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.line_numbers[r];
    FixationRecord rec;
    const std::string& subject = row[c_subject];
    rec.sentence = row[c_sentence];
    rec.run = row[c_run];
    const auto fix = parse_int(row[c_fix], where(source, line, "fix_idx"));
    const auto word = parse_int(row[c_word], where(source, line, "word_idx"));
    rec.onset_ms = parse_double(row[c_onset], where(source, line, "onset_ms"));
    if (subject.empty()) fail(ErrorKind::ParseError, where(source, line, "subject") + ": empty");
    if (fix < 0 || fix > 0xFFFFFFFFll)
      fail(ErrorKind::InvariantViolation, where(source, line, "fix_idx") + ": must be >= 0");
    if (word < 0 || word > 0xFFFFFFFFll)
      fail(ErrorKind::InvariantViolation, where(source, line, "word_idx") + ": must be >= 0");
    if (!(rec.onset_ms >= 0) || !std::isfinite(rec.onset_ms))
      fail(ErrorKind::InvariantViolation, where(source, line, "onset_ms") + ": must be finite and >= 0");
    rec.fixation_index = static_cast<std::uint32_t>(fix);
    rec.word_index = static_cast<std::uint32_t>(word);

    auto fkey = std::make_pair(subject, rec.sentence);
    if (auto it = last_fix.find(fkey); it != last_fix.end() && fix <= it->second)
      fail(ErrorKind::InvariantViolation,
           where(source, line, "fix_idx") + ": fixation indices must strictly increase within (subject, sentence)");
    last_fix[fkey] = fix;
    auto okey = std::make_pair(subject, rec.run);
    if (auto it = last_onset.find(okey); it != last_onset.end() && rec.onset_ms < it->second)
      fail(ErrorKind::InvariantViolation,
           where(source, line, "onset_ms") + ": onsets must be non-decreasing within a run");
    last_onset[okey] = rec.onset_ms;

    auto [it, inserted] = by_subject.try_emplace(subject, logs.size());
    if (inserted) logs.push_back(FixationLog{subject, {}});
    logs[it->second].records.push_back(std::move(rec));
  }
  return logs;
}

std::vector<FixationLog> load_fixations(const std::filesystem::path& path) {
  return parse_fixations(read_file_text(path), path.string());
}

std::string serialize_fixations(const std::vector<FixationLog>& logs) {
  std::string out = "subject,sentence,fix_idx,word_idx,onset_ms,run\n";
  for (const auto& log : logs)
    for (const auto& r : log.records)
      out += csv_row({log.subject, r.sentence, std::to_string(r.fixation_index), std::to_string(r.word_index),
                      format_double(r.onset_ms), r.run});
  return out;
}

// -------------------------------------------------------------------- BOLD

std::string bold_filename(std::string_view subject, std::string_view run, Hemisphere h) {
  return "bold_" + std::string(subject) + "_" + std::string(run) + "_" + std::string(1, hemi_char(h)) + ".bin";
}

BoldSurfaceSeries load_bold(const std::filesystem::path& path, std::string subject, std::string run,
                            Hemisphere hemi, double tr_seconds) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  Tensor t = read_tensor(path);
  if (t.dims.size() != 2)
    fail(ErrorKind::ParseError, path.string() + ": BOLD tensor must have dims [vertices, timepoints]");
  if (!(tr_seconds > 0)) fail(ErrorKind::InvariantViolation, path.string() + ": TR must be positive");
  BoldSurfaceSeries s;
  s.subject = std::move(subject);
  s.run = std::move(run);
  s.hemi = hemi;
  s.vertex_count = t.dims[0];
  s.timepoints = t.dims[1];
  s.tr_seconds = tr_seconds;
  s.values = std::move(t.values);
  return s;
}

void write_bold(const std::filesystem::path& path, const BoldSurfaceSeries& s) {
  write_tensor(path, Tensor{{s.vertex_count, s.timepoints}, s.values});
}

// -------------------------------------------------------------------- mesh

std::vector<std::vector<std::uint32_t>> MeshAdjacency::neighbors() const {
  std::vector<std::vector<std::uint32_t>> adj(vertex_count);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

std::string mesh_filename(Hemisphere h) { return std::string("mesh_") + hemi_char(h) + ".csv"; }

MeshAdjacency parse_mesh_adjacency(std::string_view text, Hemisphere hemi, const std::string& source) {
  std::optional<std::uint32_t> declared;
  std::size_t line_offset = 0;
  if (text.starts_with("vertices,")) {
    const auto eol = text.find('\n');
    std::string_view first = text.substr(0, eol);
    if (first.ends_with('\r')) first.remove_suffix(1);
    const auto n = parse_int(first.substr(9), where(source, 1, "vertices"));
    if (n < 0 || n > 0xFFFFFFFFll) fail(ErrorKind::ParseError, where(source, 1, "vertices") + ": out of range");
    declared = static_cast<std::uint32_t>(n);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    line_offset = 1;
  }
  const CsvTable t = parse_csv(text, source);
  const bool triangles = t.header == std::vector<std::string>{"a", "b", "c"};
  if (!triangles && t.header != std::vector<std::string>{"i", "j"})
    fail(ErrorKind::ParseError, source + ": mesh header must be 'i,j' (edges) or 'a,b,c' (triangles)");

  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::uint32_t max_index = 0;
  bool any = false;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t line = t.line_numbers[r] + line_offset;
    std::vector<std::uint32_t> v;
    for (std::size_t c = 0; c < t.rows[r].size(); ++c) {
      const auto x = parse_int(t.rows[r][c], where(source, line, t.header[c]));
      if (x < 0 || x > 0xFFFFFFFEll)
        fail(ErrorKind::InvariantViolation, where(source, line, t.header[c]) + ": negative vertex index");
      if (declared && x >= *declared)
        fail(ErrorKind::InvariantViolation, where(source, line, t.header[c]) + ": vertex index " +
                                                std::to_string(x) + " >= vertex count " +
                                                std::to_string(*declared));
      v.push_back(static_cast<std::uint32_t>(x));
    }
    for (std::size_t a = 0; a < v.size(); ++a)
      for (std::size_t b = a + 1; b < v.size(); ++b) {
        if (v[a] == v[b])
          fail(ErrorKind::InvariantViolation, source + ":" + std::to_string(line) + ": self-loop on vertex " +
                                                  std::to_string(v[a]));
        edges.insert(std::minmax(v[a], v[b]));
      }
    for (auto x : v) max_index = std::max(max_index, x);
    any = any || !v.empty();
  }
  MeshAdjacency mesh;
  mesh.hemi = hemi;
  mesh.vertex_count = declared ? *declared : (any ? max_index + 1 : 0);
  mesh.edges.assign(edges.begin(), edges.end());
  return mesh;
}

MeshAdjacency load_mesh_adjacency(const std::filesystem::path& path, Hemisphere hemi) {
  return parse_mesh_adjacency(read_file_text(path), hemi, path.string());
}

std::string serialize_mesh_adjacency(const MeshAdjacency& mesh) {
  std::string out = "vertices," + std::to_string(mesh.vertex_count) + "\ni,j\n";
  for (auto [i, j] : mesh.edges) out += std::to_string(i) + "," + std::to_string(j) + "\n";
  return out;
}

MeshAdjacency grid_mesh(Hemisphere hemi, std::uint32_t width, std::uint32_t height) {
  MeshAdjacency mesh;
  mesh.hemi = hemi;
  mesh.vertex_count = width * height;
  for (std::uint32_t y = 0; y < height; ++y)
    for (std::uint32_t x = 0; x < width; ++x) {
      const std::uint32_t v = y * width + x;
      if (x + 1 < width) mesh.edges.emplace_back(v, v + 1);
      if (y + 1 < height) mesh.edges.emplace_back(v, v + width);
    }
  std::sort(mesh.edges.begin(), mesh.edges.end());
  return mesh;
}

// ------------------------------------------------------------------- norms

std::string normalize_norm_key(std::string_view word) {
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (!word.empty() && is_punct(word.front())) word.remove_prefix(1);
  while (!word.empty() && is_punct(word.back())) word.remove_suffix(1);
  return to_lower(word);
}

VisionNorms::VisionNorms(std::map<std::string, double> ratings) : ratings_(std::move(ratings)) {}

std::optional<double> VisionNorms::lookup(std::string_view word) const {
  auto it = ratings_.find(normalize_norm_key(word));
  if (it == ratings_.end()) return std::nullopt;
  return it->second;
}

VisionNorms parse_norms(std::string_view text, const std::string& source) {
  const CsvTable t = parse_csv(text, source);
  const auto c_word = t.column("word", source);
  const auto c_vision = t.column("vision", source);
  std::map<std::string, double> ratings;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t line = t.line_numbers[r];
    const std::string key = to_lower(t.rows[r][c_word]);
    const double v = parse_double(t.rows[r][c_vision], where(source, line, "vision"));
    if (key.empty()) fail(ErrorKind::ParseError, where(source, line, "word") + ": empty");
    if (!(v >= 0.0 && v <= 5.0))
      fail(ErrorKind::InvariantViolation, where(source, line, "vision") + ": rating outside [0, 5]");
    if (!ratings.emplace(key, v).second)
      fail(ErrorKind::InvariantViolation, where(source, line, "word") + ": duplicate key '" + key + "'");
  }
  return VisionNorms(std::move(ratings));
}

VisionNorms load_norms(const std::filesystem::path& path) {
  return parse_norms(read_file_text(path), path.string());
}

std::string serialize_norms(const VisionNorms& norms) {
  std::string out = "word,vision\n";
  for (const auto& [k, v] : norms.ratings()) out += csv_row({k, format_double(v)});
  return out;
}

// ----------------------------------------------------------- content words

ContentWordAnnotation parse_content_words(std::string_view text, const std::string& source) {
  const CsvTable t = parse_csv(text, source);
  const auto c_sentence = t.column("sentence", source);
  const auto c_word = t.column("word_idx", source);
  ContentWordAnnotation ann;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto idx = parse_int(t.rows[r][c_word], where(source, t.line_numbers[r], "word_idx"));
    if (idx < 0 || idx > 0xFFFFFFFFll)
      fail(ErrorKind::InvariantViolation, where(source, t.line_numbers[r], "word_idx") + ": must be >= 0");
    ann[t.rows[r][c_sentence]].insert(static_cast<std::uint32_t>(idx));
  }
  return ann;
}

ContentWordAnnotation load_content_words(const std::filesystem::path& path) {
  return parse_content_words(read_file_text(path), path.string());
}

std::string serialize_content_words(const ContentWordAnnotation& ann) {
  std::string out = "sentence,word_idx\n";
  for (const auto& [s, idx] : ann)
    for (auto i : idx) out += csv_row({s, std::to_string(i)});
  return out;
}

// ------------------------------------------------------------ judge scores

std::vector<JudgeScoreRecord> parse_judge_scores(std::string_view text, const std::string& source) {
  const json doc = parse_json_text(text, source);
  if (!doc.is_array()) fail(ErrorKind::ParseError, source + ": top level must be an array");
  std::vector<JudgeScoreRecord> out;
  std::set<std::tuple<std::string, std::string, std::uint32_t>> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string path = source + "[" + std::to_string(i) + "]";
    JudgeScoreRecord r;
    r.sentence = get_string(doc[i], "sentence", path);
    r.judge = get_string(doc[i], "judge", path);
    r.repetition = get_uint(doc[i], "repetition", path);
    r.scene_content = get_number(doc[i], "scene_content", path);
    r.visual_detail = get_number(doc[i], "visual_detail", path);
    r.imageability = get_number(doc[i], "imageability", path);
    r.confidence = get_number(doc[i], "confidence", path);
    require(r.repetition <= 2, path + ".repetition: must be 0, 1 or 2");
    for (auto [name, v] : {std::pair{"scene_content", r.scene_content},
                           std::pair{"visual_detail", r.visual_detail},
                           std::pair{"imageability", r.imageability}})
      require(v >= 0.0 && v <= 5.0, path + "." + name + ": outside [0, 5]");
    require(r.confidence >= 0.0 && r.confidence <= 1.0, path + ".confidence: outside [0, 1]");
    require(seen.emplace(r.sentence, r.judge, r.repetition).second,
            path + ": duplicate repetition for (" + r.sentence + ", " + r.judge + ")");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<JudgeScoreRecord> load_judge_scores(const std::filesystem::path& path) {
  return parse_judge_scores(read_file_text(path), path.string());
}

std::string serialize_judge_scores(const std::vector<JudgeScoreRecord>& records) {
  ordered_json doc = ordered_json::array();
  for (const auto& r : records)
    doc.push_back({{"sentence", r.sentence},
                   {"judge", r.judge},
                   {"repetition", r.repetition},
                   {"scene_content", r.scene_content},
                   {"visual_detail", r.visual_detail},
                   {"imageability", r.imageability},
                   {"confidence", r.confidence}});
  return doc.dump(2) + "\n";
}

// -------------------------------------------------------------- validation

bool ValidationReport::has_flag(std::string_view subject, std::string_view code) const {
  return std::any_of(flags.begin(), flags.end(),
                     [&](const ValidationFlag& f) { return f.subject == subject && f.code == code; });
}

ValidationReport validate_corpus(const CorpusInputs& in) {
  ValidationReport report;
  if (!in.manifest) return report;
  const StudyManifest& m = *in.manifest;
  auto flag = [&](std::string subject, std::string code, std::string location, std::string message) {
    report.flags.push_back({std::move(subject), std::move(code), std::move(location), std::move(message)});
  };

  std::map<std::string, const FixationLog*> logs;
  if (in.fixations)
    for (const auto& log : *in.fixations) logs[log.subject] = &log;
  std::map<std::string, std::vector<const BoldSurfaceSeries*>> bold_by_subject;
  if (in.bold)
    for (const auto& b : *in.bold) bold_by_subject[b.subject].push_back(&b);

  for (const auto& s : m.subjects) {
    SubjectCompleteness c;
    c.subject = s.id;
    auto lit = logs.find(s.id);
    c.has_fixations = lit != logs.end() && !lit->second->records.empty();
    c.has_bold = bold_by_subject.count(s.id) > 0;
    if (!s.eye && !s.fmri) c.status = "excluded";
    else if (c.has_fixations && c.has_bold) c.status = "complete";
    else if (c.has_fixations) c.status = "eye-only";
    else if (c.has_bold) c.status = "fmri-only";
    else c.status = "no-data";

    if (s.fmri && c.has_fixations && !c.has_bold)
      flag(s.id, "eye-only", "subject " + s.id, "fixations present but no BOLD series");
    if ((s.eye || s.fmri) && !c.has_fixations && c.has_bold)
      flag(s.id, "fmri-only", "subject " + s.id, "BOLD present but no fixations");
    if ((s.eye || s.fmri) && !c.has_fixations && !c.has_bold)
      flag(s.id, "no-data", "subject " + s.id, "no fixations or BOLD series");
    report.subjects.push_back(std::move(c));
  }

  for (const auto& [subject, log] : logs) {
    if (!m.subject(subject))
      flag(subject, "unknown-subject", "fixations subject " + subject, "subject not in manifest");
    std::set<std::string> runs;
    for (std::size_t k = 0; k < log->records.size(); ++k) {
      const auto& r = log->records[k];
      const std::string loc = "fixations subject " + subject + " record " + std::to_string(k) + " (sentence " +
                              r.sentence + ", fix_idx " + std::to_string(r.fixation_index) + ")";
      runs.insert(r.run);
      auto si = m.sentence_index(r.sentence);
      if (!si) {
        flag(subject, "unknown-sentence", loc, "sentence not in manifest");
        continue;
      }
      if (r.word_index >= m.sentences[*si].word_count())
        flag(subject, "word-index-out-of-range", loc,
             "word index " + std::to_string(r.word_index) + " >= sentence length " +
                 std::to_string(m.sentences[*si].word_count()));
    }
    const SubjectEntry* entry = m.subject(subject);
    auto bit = bold_by_subject.find(subject);
    if (entry && entry->fmri && bit != bold_by_subject.end()) {
      for (const auto& run : runs)
        for (auto h : m.hemispheres) {
          const bool found = std::any_of(bit->second.begin(), bit->second.end(), [&](const BoldSurfaceSeries* b) {
            return b->run == run && b->hemi == h;
          });
          if (!found)
            flag(subject, "missing-bold-run", bold_filename(subject, run, h), "no BOLD series for a fixated run");
        }
    }
  }

  if (in.bold) {
    for (const auto& b : *in.bold) {
      const std::string loc = bold_filename(b.subject, b.run, b.hemi);
      if (!(b.tr_seconds > 0)) flag(b.subject, "bad-tr", loc, "TR must be positive");
      const MeshAdjacency* mesh = nullptr;
      if (in.meshes)
        for (const auto& mm : *in.meshes)
          if (mm.hemi == b.hemi) mesh = &mm;
      if (!mesh) flag(b.subject, "missing-mesh", loc, "no mesh adjacency for this hemisphere");
      else if (mesh->vertex_count != b.vertex_count)
        flag(b.subject, "vertex-count-mismatch", loc,
             "series has " + std::to_string(b.vertex_count) + " vertices, mesh has " +
                 std::to_string(mesh->vertex_count));
      if (b.timepoints > 10) {
        std::size_t bad = 0;
        std::int64_t first_bad = -1;
        for (std::uint32_t v = 0; v < b.vertex_count; ++v) {
          double sum = 0, sq = 0;
          for (std::uint32_t t = 0; t < b.timepoints; ++t) sum += b.at(v, t);
          const double mean = sum / b.timepoints;
          for (std::uint32_t t = 0; t < b.timepoints; ++t) sq += (b.at(v, t) - mean) * (b.at(v, t) - mean);
          const double sd = std::sqrt(sq / b.timepoints);
          if (!(std::abs(mean) < 0.05 && std::abs(sd - 1.0) < 0.1)) {
            if (first_bad < 0) first_bad = v;
            ++bad;
          }
        }
        if (bad > 0)
          flag(b.subject, "not-z-scored", loc + " vertex " + std::to_string(first_bad),
               std::to_string(bad) + " vertices are not z-scored within the run");
      }
    }
  }

  if (in.content_words) {
    for (const auto& [sentence, idx] : *in.content_words) {
      auto si = m.sentence_index(sentence);
      if (!si) {
        flag("", "unknown-sentence", "content_words sentence " + sentence, "sentence not in manifest");
        continue;
      }
      for (auto i : idx)
        if (i >= m.sentences[*si].word_count())
          flag("", "content-index-out-of-range", "content_words sentence " + sentence + " word " + std::to_string(i),
               "content word index beyond sentence length");
    }
  }
  return report;
}

}  // namespace readalign
