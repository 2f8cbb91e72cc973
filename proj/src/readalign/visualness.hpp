#pragma once

// Sentence visual strength: Vision-norm dictionary scores with a calibrated
// judge fallback, per-article grouping, and the VLM advantage / modulation
// index.
//
//   fallback  <=>  coverage < 0.75 or fewer than 3 matched content words
//   excluded  <=>  fewer than 3 content words

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "readalign/corpus.hpp"
#include "readalign/stats.hpp"

namespace readalign {

struct DictionaryScore {
  std::optional<double> v_dict;
  double kappa = 0;
  std::size_t matched = 0;  // |M|
  std::size_t content = 0;  // |C|
};

DictionaryScore score_sentence_dictionary(const Sentence& sentence, const VisionNorms& norms,
                                          const std::set<std::uint32_t>& content_words);

inline constexpr double kMinCoverage = 0.75;
inline constexpr std::size_t kMinMatched = 3;
inline constexpr std::size_t kMinContent = 3;

bool needs_fallback(const DictionaryScore& s) noexcept;
bool is_excluded(const DictionaryScore& s) noexcept;

// Mean of the three sub-scores; OutOfRange outside [0, 5].
double judge_raw_score(double scene_content, double visual_detail, double imageability);

struct JudgeSentenceScore {
  double q = 0;
  std::size_t repetitions = 0;  // 1 is usable but flagged
};

// Raw score per repetition, then the median across repetitions, keyed by
// (sentence, judge).
std::map<std::pair<std::string, std::string>, JudgeSentenceScore> aggregate_judge_scores(
    const std::vector<JudgeScoreRecord>& records);

// Monotone non-decreasing step function. Block b covers raw scores
// [x_lo[b], x_hi[b]]; queries are clamped to [0, 5], then take the level of the
// last block starting at or below them (the first block below that).
struct CalibrationCurve {
  std::vector<double> x_lo;
  std::vector<double> x_hi;
  std::vector<double> levels;

  double operator()(double raw) const;
};

struct IsotonicFit {
  CalibrationCurve curve;
  std::vector<double> fitted;  // per input pair, in input order
};

// Pool-adjacent-violators least-squares fit. Tied raw scores share one level.
IsotonicFit isotonic_fit(std::span<const std::pair<double, double>> pairs);
CalibrationCurve isotonic_calibrate(std::span<const std::pair<double, double>> pairs);

// Median of the calibrated judge scores; MissingJudge unless exactly
// `expected` values are given.
double fuse_judges(std::span<const double> calibrated, std::size_t expected = 3);

enum class VisualGroup { High, Low, Excluded };
const char* to_string(VisualGroup g) noexcept;

struct GroupInput {
  std::string sentence;
  std::string article;
  std::optional<double> score;  // absent = not eligible
};

// Within each article, the top and bottom floor(0.2 n) eligible sentences
// (at least 1, at most n/2) become High and Low. Ties go to the smaller
// sentence ID.
std::vector<VisualGroup> group_sentences(const std::vector<GroupInput>& sentences);

struct VisualnessRecord {
  std::string sentence;
  std::string article;
  DictionaryScore dict;
  bool fallback = false;
  bool excluded = false;
  std::map<std::string, JudgeSentenceScore> judge_raw;
  std::map<std::string, double> judge_calibrated;  // fold of the sentence's article
  std::optional<double> fused;
  std::optional<double> final_score;
  VisualGroup group = VisualGroup::Excluded;
};

struct FoldCalibration {
  std::uint32_t fold = 0;  // held-out article index
  std::string judge;
  std::size_t training_pairs = 0;
  CalibrationCurve curve;
};

struct VisualnessResult {
  std::vector<VisualnessRecord> records;  // manifest order
  std::vector<FoldCalibration> calibrations;
  std::vector<std::string> judges;
  std::vector<std::string> notes;
};

// Training pairs (q, V_dict) for one judge from high-coverage sentences of
// every article except `heldout_article`.
std::vector<std::pair<double, double>> calibration_training_pairs(const std::vector<VisualnessRecord>& records,
                                                                  const std::vector<std::string>& articles,
                                                                  std::uint32_t heldout_article,
                                                                  const std::string& judge);

VisualnessResult compute_visualness(const StudyManifest& manifest, const VisionNorms& norms,
                                    const ContentWordAnnotation& content,
                                    const std::vector<JudgeScoreRecord>& judge_scores);

// ------------------------------------------------------------- modulation

double vlm_advantage(double r_vlm, double r_llm);

struct ModulationUnit {
  double a_high = 0;
  double a_low = 0;
  double h = 0;
};

ModulationUnit advantage_and_modulation(double r_vlm_high, double r_vlm_low, double r_llm_high, double r_llm_low);

enum class GroupCorrelation { Pooled, FoldMean };

// Pearson r over the rows flagged in `rows`, pooled across folds or averaged
// per fold. Absent when fewer than `min_rows` rows qualify.
std::optional<double> group_correlation(std::span<const double> observed, std::span<const double> predicted,
                                        std::span<const std::uint8_t> rows, std::span<const std::uint32_t> row_fold,
                                        GroupCorrelation mode, std::size_t min_rows);

struct SubjectModulation {
  std::string subject;
  double a_high = 0;  // mean over units
  double a_low = 0;
  double h = 0;  // a_high - a_low
  std::size_t units = 0;
};

// Per-subject means over units where both groups are defined; H is formed as
// A_high - A_low after averaging so the identity holds at every level.
SubjectModulation summarize_subject(const std::string& subject, const std::vector<ModulationUnit>& units);

struct ModulationSummary {
  std::vector<SubjectModulation> subjects;
  double a_high = 0;
  double a_low = 0;
  double h = 0;
  SignFlipResult test;  // one-sided, H > 0
};

ModulationSummary test_modulation(std::vector<SubjectModulation> subjects, const PermutationOptions& options);

}  // namespace readalign
