#include "readalign/visualness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "readalign/error.hpp"
#include "readalign/metrics.hpp"

namespace readalign {

DictionaryScore score_sentence_dictionary(const Sentence& sentence, const VisionNorms& norms,
                                          const std::set<std::uint32_t>& content_words) {
  DictionaryScore s;
  double sum = 0;
  for (auto idx : content_words) {
    if (idx >= sentence.word_count())
      fail(ErrorKind::InvariantViolation, "sentence " + sentence.id + ": content word index " + std::to_string(idx) +
                                              " beyond sentence length");
    ++s.content;
    if (auto v = norms.lookup(sentence.words[idx])) {
      ++s.matched;
      sum += *v;
    }
  }
  if (s.matched > 0) s.v_dict = sum / static_cast<double>(s.matched);
  s.kappa = s.content > 0 ? static_cast<double>(s.matched) / static_cast<double>(s.content) : 0.0;
  return s;
}

bool needs_fallback(const DictionaryScore& s) noexcept { return s.kappa < kMinCoverage || s.matched < kMinMatched; }
bool is_excluded(const DictionaryScore& s) noexcept { return s.content < kMinContent; }

double judge_raw_score(double scene_content, double visual_detail, double imageability) {
  for (double v : {scene_content, visual_detail, imageability})
    if (!(v >= 0.0 && v <= 5.0)) fail(ErrorKind::OutOfRange, "judge sub-score outside [0, 5]");
  return (scene_content + visual_detail + imageability) / 3.0;
}

std::map<std::pair<std::string, std::string>, JudgeSentenceScore> aggregate_judge_scores(
    const std::vector<JudgeScoreRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::uint32_t, double>>> reps;
  for (const auto& r : records)
    reps[{r.sentence, r.judge}].emplace_back(r.repetition,
                                             judge_raw_score(r.scene_content, r.visual_detail, r.imageability));
  std::map<std::pair<std::string, std::string>, JudgeSentenceScore> out;
  for (auto& [key, qs] : reps) {
    std::sort(qs.begin(), qs.end());
    std::vector<double> values;
    for (const auto& [rep, q] : qs) values.push_back(q);
    out[key] = {median(values), values.size()};
  }
  return out;
}

// ------------------------------------------------------------ isotonic

double CalibrationCurve::operator()(double raw) const {
  if (levels.empty()) fail(ErrorKind::InvalidArgument, "empty calibration curve");
  const double x = std::clamp(raw, 0.0, 5.0);
  const auto it = std::upper_bound(x_lo.begin(), x_lo.end(), x);
  if (it == x_lo.begin()) return levels.front();
  return levels[static_cast<std::size_t>(it - x_lo.begin()) - 1];
}

IsotonicFit isotonic_fit(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) fail(ErrorKind::TooFewPairs, "isotonic calibration needs at least two training pairs");
  for (const auto& [x, y] : pairs)
    if (!std::isfinite(x) || !std::isfinite(y)) fail(ErrorKind::InvalidArgument, "non-finite calibration pair");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pairs[a].first < pairs[b].first; });

  struct Block {
    double lo, hi, sum, weight;
    std::vector<std::size_t> members;
    double level() const { return sum / weight; }
  };
  // Ties are pooled into one weighted point before the violator pass.
  std::vector<Block> blocks;
  for (std::size_t k = 0; k < order.size();) {
    Block b{pairs[order[k]].first, pairs[order[k]].first, 0.0, 0.0, {}};
    for (; k < order.size() && pairs[order[k]].first == b.lo; ++k) {
      b.sum += pairs[order[k]].second;
      b.weight += 1;
      b.members.push_back(order[k]);
    }
    blocks.push_back(std::move(b));
    while (blocks.size() >= 2 && blocks[blocks.size() - 2].level() > blocks.back().level()) {
      Block top = std::move(blocks.back());
      blocks.pop_back();
      auto& prev = blocks.back();
      prev.hi = top.hi;
      prev.sum += top.sum;
      prev.weight += top.weight;
      prev.members.insert(prev.members.end(), top.members.begin(), top.members.end());
    }
  }
  IsotonicFit fit;
  fit.fitted.resize(pairs.size());
  for (const auto& b : blocks) {
    fit.curve.x_lo.push_back(b.lo);
    fit.curve.x_hi.push_back(b.hi);
    fit.curve.levels.push_back(b.level());
    for (auto m : b.members) fit.fitted[m] = b.level();
  }
  return fit;
}

CalibrationCurve isotonic_calibrate(std::span<const std::pair<double, double>> pairs) {
  return isotonic_fit(pairs).curve;
}

double fuse_judges(std::span<const double> calibrated, std::size_t expected) {
  if (calibrated.empty() || calibrated.size() != expected)
    fail(ErrorKind::MissingJudge, "expected " + std::to_string(expected) + " judge scores, got " +
                                      std::to_string(calibrated.size()));
  return median(std::vector<double>(calibrated.begin(), calibrated.end()));
}

// ------------------------------------------------------------- grouping

const char* to_string(VisualGroup g) noexcept {
  switch (g) {
    case VisualGroup::High: return "high";
    case VisualGroup::Low: return "low";
    case VisualGroup::Excluded: return "excluded";
  }
  return "?";
}

std::vector<VisualGroup> group_sentences(const std::vector<GroupInput>& sentences) {
  std::vector<VisualGroup> out(sentences.size(), VisualGroup::Excluded);
  std::map<std::string, std::vector<std::size_t>> by_article;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (sentences[i].score) by_article[sentences[i].article].push_back(i);
  for (auto& [article, idx] : by_article) {
    const std::size_t n = idx.size();
    std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n))));
    k = std::min(k, n / 2);
    auto by_id = [&](std::size_t a, std::size_t b) { return sentences[a].sentence < sentences[b].sentence; };
    std::vector<std::size_t> high(idx), low(idx);
    std::sort(high.begin(), high.end(), [&](std::size_t a, std::size_t b) {
      if (*sentences[a].score != *sentences[b].score) return *sentences[a].score > *sentences[b].score;
      return by_id(a, b);
    });
    std::sort(low.begin(), low.end(), [&](std::size_t a, std::size_t b) {
      if (*sentences[a].score != *sentences[b].score) return *sentences[a].score < *sentences[b].score;
      return by_id(a, b);
    });
    for (std::size_t i = 0; i < k; ++i) {
      out[high[i]] = VisualGroup::High;
      out[low[i]] = VisualGroup::Low;
    }
  }
  return out;
}

// --------------------------------------------------------- full pipeline

std::vector<std::pair<double, double>> calibration_training_pairs(const std::vector<VisualnessRecord>& records,
                                                                  const std::vector<std::string>& articles,
                                                                  std::uint32_t heldout_article,
                                                                  const std::string& judge) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : records) {
    if (r.article == articles.at(heldout_article) || r.fallback || r.excluded || !r.dict.v_dict) continue;
    auto it = r.judge_raw.find(judge);
    if (it == r.judge_raw.end()) continue;
    pairs.emplace_back(it->second.q, *r.dict.v_dict);
  }
  return pairs;
}

VisualnessResult compute_visualness(const StudyManifest& manifest, const VisionNorms& norms,
                                    const ContentWordAnnotation& content,
                                    const std::vector<JudgeScoreRecord>& judge_scores) {
  VisualnessResult res;
  const auto judged = aggregate_judge_scores(judge_scores);
  std::set<std::string> judges;
  for (const auto& [key, score] : judged) judges.insert(key.second);
  res.judges.assign(judges.begin(), judges.end());

  static const std::set<std::uint32_t> kNone;
  for (const auto& s : manifest.sentences) {
    VisualnessRecord r;
    r.sentence = s.id;
    r.article = s.article;
    auto it = content.find(s.id);
    r.dict = score_sentence_dictionary(s, norms, it == content.end() ? kNone : it->second);
    r.excluded = is_excluded(r.dict);
    r.fallback = !r.excluded && needs_fallback(r.dict);
    for (const auto& j : res.judges) {
      auto jt = judged.find({s.id, j});
      if (jt == judged.end()) continue;
      r.judge_raw[j] = jt->second;
      if (jt->second.repetitions == 1)
        res.notes.push_back("sentence " + s.id + " judge " + j + ": single repetition");
    }
    if (!r.excluded && !r.fallback) r.final_score = r.dict.v_dict;
    res.records.push_back(std::move(r));
  }

  for (std::uint32_t f = 0; f < manifest.articles.size(); ++f) {
    std::vector<std::size_t> heldout_fallback;
    for (std::size_t i = 0; i < res.records.size(); ++i)
      if (res.records[i].fallback && res.records[i].article == manifest.articles[f]) heldout_fallback.push_back(i);
    for (auto i : heldout_fallback)
      if (res.records[i].judge_raw.size() != res.judges.size() || res.judges.empty())
        fail(ErrorKind::MissingJudge, "fallback sentence " + res.records[i].sentence + " lacks scores from " +
                                          (res.judges.empty() ? std::string("any judge")
                                                              : std::to_string(res.judges.size() -
                                                                               res.records[i].judge_raw.size()) +
                                                                    " judge(s)"));
    for (const auto& j : res.judges) {
      const auto pairs = calibration_training_pairs(res.records, manifest.articles, f, j);
      if (pairs.size() < 2) {
        if (!heldout_fallback.empty())
          fail(ErrorKind::TooFewPairs, "fold " + std::to_string(f) + " judge " + j + ": " +
                                           std::to_string(pairs.size()) + " calibration pairs");
        continue;
      }
      FoldCalibration cal{f, j, pairs.size(), isotonic_calibrate(pairs)};
      for (auto i : heldout_fallback)
        res.records[i].judge_calibrated[j] = cal.curve(res.records[i].judge_raw.at(j).q);
      res.calibrations.push_back(std::move(cal));
    }
    for (auto i : heldout_fallback) {
      std::vector<double> vals;
      for (const auto& [j, v] : res.records[i].judge_calibrated) vals.push_back(v);
      res.records[i].fused = fuse_judges(vals, res.judges.size());
      res.records[i].final_score = res.records[i].fused;
    }
  }

  std::vector<GroupInput> inputs;
  for (const auto& r : res.records) inputs.push_back({r.sentence, r.article, r.final_score});
  const auto groups = group_sentences(inputs);
  for (std::size_t i = 0; i < groups.size(); ++i) res.records[i].group = groups[i];
  return res;
}

// ------------------------------------------------------------ modulation

double vlm_advantage(double r_vlm, double r_llm) { return fisher_z(r_vlm) - fisher_z(r_llm); }

ModulationUnit advantage_and_modulation(double r_vlm_high, double r_vlm_low, double r_llm_high, double r_llm_low) {
  ModulationUnit u;
  u.a_high = vlm_advantage(r_vlm_high, r_llm_high);
  u.a_low = vlm_advantage(r_vlm_low, r_llm_low);
  u.h = u.a_high - u.a_low;
  return u;
}

std::optional<double> group_correlation(std::span<const double> observed, std::span<const double> predicted,
                                        std::span<const std::uint8_t> rows, std::span<const std::uint32_t> row_fold,
                                        GroupCorrelation mode, std::size_t min_rows) {
  std::vector<double> o, p;
  std::vector<std::uint32_t> f;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] && std::isfinite(predicted[i])) {
      o.push_back(observed[i]);
      p.push_back(predicted[i]);
      f.push_back(row_fold[i]);
    }
  if (o.size() < std::max<std::size_t>(min_rows, 2)) return std::nullopt;
  if (mode == GroupCorrelation::Pooled) return pearson_r(o, p);
  std::map<std::uint32_t, std::pair<std::vector<double>, std::vector<double>>> per_fold;
  for (std::size_t i = 0; i < o.size(); ++i) {
    per_fold[f[i]].first.push_back(o[i]);
    per_fold[f[i]].second.push_back(p[i]);
  }
  double sum = 0;
  std::size_t used = 0;
  for (const auto& [fold, v] : per_fold) {
    if (v.first.size() < 3) continue;
    sum += pearson_r(v.first, v.second);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / static_cast<double>(used);
}

SubjectModulation summarize_subject(const std::string& subject, const std::vector<ModulationUnit>& units) {
  SubjectModulation s;
  s.subject = subject;
  s.units = units.size();
  if (units.empty()) return s;
  for (const auto& u : units) {
    s.a_high += u.a_high;
    s.a_low += u.a_low;
  }
  s.a_high /= static_cast<double>(units.size());
  s.a_low /= static_cast<double>(units.size());
  s.h = s.a_high - s.a_low;
  return s;
}

ModulationSummary test_modulation(std::vector<SubjectModulation> subjects, const PermutationOptions& options) {
  ModulationSummary m;
  std::erase_if(subjects, [](const SubjectModulation& s) { return s.units == 0; });
  m.subjects = std::move(subjects);
  if (m.subjects.empty()) fail(ErrorKind::TooFewSubjects, "no subject has a defined modulation score");
  std::vector<double> h;
  for (const auto& s : m.subjects) {
    m.a_high += s.a_high;
    m.a_low += s.a_low;
    h.push_back(s.h);
  }
  m.a_high /= static_cast<double>(m.subjects.size());
  m.a_low /= static_cast<double>(m.subjects.size());
  m.h = m.a_high - m.a_low;
  m.test = sign_flip_permutation(h, Sidedness::Greater, options);
  return m;
}

}  // namespace readalign
