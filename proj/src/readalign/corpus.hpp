#pragma once

// Study data model and the on-disk input formats:
//
//   study.json          manifest (articles, sentences, subjects, models, pairings)
//   fixations.csv       subject,sentence,fix_idx,word_idx,onset_ms,run
//   bold_<subj>_<run>_<hemi>.bin   tensor [V, T], z-scored per run
//   mesh_<hemi>.csv     optional "vertices,N" line, then header "i,j" (edges)
//                       or "a,b,c" (triangles)
//   norms.csv           word,vision
//   content_words.csv   sentence,word_idx
//   judge_scores.json   array of judge score records
//
// Every loader validates on load; every writer emits the canonical form that
// the matching loader reads back unchanged.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace readalign {

enum class ModelModality { LLM, VLM };
enum class Hemisphere { Left, Right };

char hemi_char(Hemisphere h) noexcept;
Hemisphere parse_hemi(std::string_view s);

struct Sentence {
  std::string id;
  std::string article;
  std::vector<std::string> words;  // original casing

  std::uint32_t word_count() const noexcept { return static_cast<std::uint32_t>(words.size()); }
};

struct SubjectEntry {
  std::string id;
  bool eye = true;   // include in eye-movement analyses
  bool fmri = true;  // include in fMRI analyses
};

struct ModelEntry {
  std::string id;
  std::string family;
  ModelModality modality = ModelModality::LLM;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;  // per layer
};

struct Pairing {
  std::string llm;
  std::string vlm;
  std::string family;  // optional; when set both models must carry it
  std::string id() const { return llm + "-" + vlm; }
};

struct StudyManifest {
  std::vector<std::string> articles;
  std::vector<Sentence> sentences;
  std::vector<SubjectEntry> subjects;
  std::vector<ModelEntry> models;
  std::vector<Pairing> pairings;
  std::vector<Hemisphere> hemispheres{Hemisphere::Left, Hemisphere::Right};
  double tr_seconds = 0.4;

  std::optional<std::size_t> sentence_index(std::string_view id) const;
  std::optional<std::size_t> article_index(std::string_view id) const;
  const ModelEntry& model(std::string_view id) const;
  const SubjectEntry* subject(std::string_view id) const;
  std::vector<std::uint32_t> sentence_lengths() const;
};

StudyManifest parse_study_manifest(std::string_view json_text, const std::string& source);
StudyManifest load_study_manifest(const std::filesystem::path& path);
std::string serialize_study_manifest(const StudyManifest& m);
// Throws InvariantViolation naming the first failing rule.
void check_manifest_invariants(const StudyManifest& m);

struct FixationRecord {
  std::string sentence;
  std::uint32_t fixation_index = 0;
  std::uint32_t word_index = 0;
  double onset_ms = 0;
  std::string run;
};

struct FixationLog {
  std::string subject;
  std::vector<FixationRecord> records;  // file order
};

// Logs are grouped per subject in order of first appearance.
std::vector<FixationLog> parse_fixations(std::string_view csv_text, const std::string& source);
std::vector<FixationLog> load_fixations(const std::filesystem::path& path);
std::string serialize_fixations(const std::vector<FixationLog>& logs);

struct BoldSurfaceSeries {
  std::string subject;
  std::string run;
  Hemisphere hemi = Hemisphere::Left;
  std::uint32_t vertex_count = 0;
  std::uint32_t timepoints = 0;
  double tr_seconds = 0.4;
  std::vector<float> values;  // V x T row-major

  float at(std::uint32_t vertex, std::uint32_t t) const {
    return values[static_cast<std::size_t>(vertex) * timepoints + t];
  }
};

std::string bold_filename(std::string_view subject, std::string_view run, Hemisphere h);
BoldSurfaceSeries load_bold(const std::filesystem::path& path, std::string subject, std::string run,
                            Hemisphere hemi, double tr_seconds);
void write_bold(const std::filesystem::path& path, const BoldSurfaceSeries& s);

struct MeshAdjacency {
  Hemisphere hemi = Hemisphere::Left;
  std::uint32_t vertex_count = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // i < j, sorted, unique

  std::vector<std::vector<std::uint32_t>> neighbors() const;
};

std::string mesh_filename(Hemisphere h);
MeshAdjacency parse_mesh_adjacency(std::string_view csv_text, Hemisphere hemi, const std::string& source);
MeshAdjacency load_mesh_adjacency(const std::filesystem::path& path, Hemisphere hemi);
std::string serialize_mesh_adjacency(const MeshAdjacency& mesh);
MeshAdjacency grid_mesh(Hemisphere hemi, std::uint32_t width, std::uint32_t height);

class VisionNorms {
 public:
  VisionNorms() = default;
  explicit VisionNorms(std::map<std::string, double> ratings);

  // Lowercases and strips punctuation from both ends before lookup.
  std::optional<double> lookup(std::string_view word) const;
  const std::map<std::string, double>& ratings() const noexcept { return ratings_; }

 private:
  std::map<std::string, double> ratings_;
};

std::string normalize_norm_key(std::string_view word);
VisionNorms parse_norms(std::string_view csv_text, const std::string& source);
VisionNorms load_norms(const std::filesystem::path& path);
std::string serialize_norms(const VisionNorms& norms);

// sentence id -> content word indices (C_i)
using ContentWordAnnotation = std::map<std::string, std::set<std::uint32_t>>;

ContentWordAnnotation parse_content_words(std::string_view csv_text, const std::string& source);
ContentWordAnnotation load_content_words(const std::filesystem::path& path);
std::string serialize_content_words(const ContentWordAnnotation& ann);

struct JudgeScoreRecord {
  std::string sentence;
  std::string judge;
  std::uint32_t repetition = 0;
  double scene_content = 0;
  double visual_detail = 0;
  double imageability = 0;
  double confidence = 0;
};

std::vector<JudgeScoreRecord> parse_judge_scores(std::string_view json_text, const std::string& source);
std::vector<JudgeScoreRecord> load_judge_scores(const std::filesystem::path& path);
std::string serialize_judge_scores(const std::vector<JudgeScoreRecord>& records);

struct ValidationFlag {
  std::string subject;  // empty for corpus-level issues
  std::string code;     // e.g. "eye-only", "word-index-out-of-range"
  std::string location;
  std::string message;
};

struct SubjectCompleteness {
  std::string subject;
  bool has_fixations = false;
  bool has_bold = false;
  std::string status;  // complete | eye-only | fmri-only | no-data | excluded
};

struct ValidationReport {
  std::vector<SubjectCompleteness> subjects;
  std::vector<ValidationFlag> flags;

  bool clean() const noexcept { return flags.empty(); }
  bool has_flag(std::string_view subject, std::string_view code) const;
};

struct CorpusInputs {
  const StudyManifest* manifest = nullptr;
  const std::vector<FixationLog>* fixations = nullptr;
  const std::vector<BoldSurfaceSeries>* bold = nullptr;
  const std::vector<MeshAdjacency>* meshes = nullptr;
  const VisionNorms* norms = nullptr;
  const ContentWordAnnotation* content_words = nullptr;
};

// Pure: reports problems, never drops data.
ValidationReport validate_corpus(const CorpusInputs& in);

}  // namespace readalign
