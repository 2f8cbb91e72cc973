#include "readalign/targets.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "readalign/error.hpp"
#include "readalign/tensor_io.hpp"

namespace readalign {

std::vector<TransitionEvent> regressive_transitions(const FixationLog& log, const PairIndex& index) {
  // Group by sentence in order of first appearance, keep file order inside.
  std::map<std::size_t, std::vector<const FixationRecord*>> by_sentence;
  for (const auto& r : log.records) {
    const auto s = index.sentence_index(r.sentence);
    if (!s) fail(ErrorKind::MissingSentence, "subject " + log.subject + ": fixation on unknown sentence " + r.sentence);
    if (r.word_index >= index.length(*s))
      fail(ErrorKind::InvariantViolation, "subject " + log.subject + " sentence " + r.sentence + " fix_idx " +
                                              std::to_string(r.fixation_index) + ": word index " +
                                              std::to_string(r.word_index) + " beyond sentence length");
    by_sentence[*s].push_back(&r);
  }
  std::vector<TransitionEvent> events;
  for (auto& [s, recs] : by_sentence) {
    std::stable_sort(recs.begin(), recs.end(), [](const FixationRecord* a, const FixationRecord* b) {
      return a->fixation_index < b->fixation_index;
    });
    for (std::size_t t = 0; t + 1 < recs.size(); ++t) {
      const auto a = recs[t]->word_index;
      const auto b = recs[t + 1]->word_index;
      if (a > b)
        events.push_back({log.subject, static_cast<std::uint32_t>(s), a, b, recs[t + 1]->onset_ms, recs[t + 1]->run});
    }
  }
  return events;
}

SaccadeTarget build_saccade_targets(const FixationLog& log, const PairIndex& index) {
  SaccadeTarget target;
  target.subject = log.subject;
  target.y.assign(index.size(), 0.0);
  target.mask.assign(index.size(), 0);
  for (const auto& r : log.records) {
    const auto s = index.sentence_index(r.sentence);
    if (!s) continue;  // reported by regressive_transitions below
    const std::size_t begin = index.offset(*s);
    std::fill(target.mask.begin() + static_cast<long>(begin),
              target.mask.begin() + static_cast<long>(begin + PairIndex::pairs_in(index.length(*s))), 1);
  }
  for (const auto& e : regressive_transitions(log, index))
    target.y[index.index(e.sentence, e.from_word, e.to_word)] += 1.0;
  return target;
}

std::int64_t scan_index_for_transition(double onset_ms, double tr_seconds, double lag_seconds) {
  if (!(onset_ms >= 0) || !std::isfinite(onset_ms))
    fail(ErrorKind::InvalidArgument, "onset must be finite and >= 0");
  if (!(tr_seconds > 0)) fail(ErrorKind::InvalidArgument, "TR must be positive");
  const long double q = (static_cast<long double>(onset_ms) / 1000.0L + lag_seconds) / tr_seconds;
  const long double r = std::nearbyint(q);
  if (std::abs(q - r) <= 1e-9L * std::max(1.0L, std::abs(q))) return static_cast<std::int64_t>(r);
  return static_cast<std::int64_t>(std::ceil(q));
}

BoldTargets build_bold_targets(const std::vector<TransitionEvent>& events,
                               const std::vector<const BoldSurfaceSeries*>& runs, const PairIndex& index,
                               double lag_seconds) {
  BoldTargets out;
  if (runs.empty()) fail(ErrorKind::RunMismatch, "no BOLD series supplied");
  out.subject = runs.front()->subject;
  out.hemi = runs.front()->hemi;
  out.vertex_count = runs.front()->vertex_count;
  out.pairs = index.size();
  for (const auto* r : runs)
    if (r->vertex_count != out.vertex_count || r->hemi != out.hemi)
      fail(ErrorKind::InvariantViolation, "BOLD runs for " + out.subject + " disagree on hemisphere or vertex count");

  std::vector<std::uint32_t> counts(out.pairs, 0);
  std::vector<double> sums(static_cast<std::size_t>(out.vertex_count) * out.pairs, 0.0);
  for (const auto& e : events) {
    const BoldSurfaceSeries* series = nullptr;
    for (const auto* r : runs)
      if (r->run == e.run) series = r;
    if (!series)
      fail(ErrorKind::RunMismatch, "subject " + e.subject + ": no BOLD series for run '" + e.run + "' (hemisphere " +
                                       std::string(1, hemi_char(out.hemi)) + ")");
    const std::int64_t t = scan_index_for_transition(e.onset_ms, series->tr_seconds, lag_seconds);
    if (t >= static_cast<std::int64_t>(series->timepoints)) {
      ++out.events_dropped;
      continue;
    }
    const std::size_t p = index.index(e.sentence, e.from_word, e.to_word);
    ++counts[p];
    ++out.events_used;
    for (std::uint32_t v = 0; v < out.vertex_count; ++v)
      sums[static_cast<std::size_t>(v) * out.pairs + p] += series->at(v, static_cast<std::uint32_t>(t));
  }
  out.mask.assign(out.pairs, 0);
  out.y.assign(sums.size(), 0.0f);
  for (std::size_t p = 0; p < out.pairs; ++p) {
    if (counts[p] == 0) continue;
    out.mask[p] = 1;
    for (std::uint32_t v = 0; v < out.vertex_count; ++v) {
      const std::size_t k = static_cast<std::size_t>(v) * out.pairs + p;
      out.y[k] = static_cast<float>(sums[k] / counts[p]);
    }
  }
  return out;
}

std::string saccade_target_filename(std::string_view subject) {
  return "target_sacc_" + std::string(subject) + ".bin";
}

std::string bold_target_filename(std::string_view subject, Hemisphere h) {
  return "target_bold_" + std::string(subject) + "_" + std::string(1, hemi_char(h)) + ".bin";
}

void write_saccade_target(const std::filesystem::path& path, const SaccadeTarget& t) {
  Tensor tensor{{static_cast<std::uint32_t>(t.y.size())}, {}};
  tensor.values.assign(t.y.begin(), t.y.end());
  write_masked_tensor(path, tensor, t.mask);
}

SaccadeTarget read_saccade_target(const std::filesystem::path& path, std::string subject, std::size_t pairs) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  MaskedTensor mt = read_masked_tensor(path);
  if (mt.tensor.dims.size() != 1 || mt.tensor.dims[0] != pairs)
    fail(ErrorKind::InvariantViolation, path.string() + ": expected " + std::to_string(pairs) + " pair entries");
  if (mt.mask.size() != pairs) fail(ErrorKind::ParseError, path.string() + ": mask length differs from pair count");
  SaccadeTarget t;
  t.subject = std::move(subject);
  t.y.assign(mt.tensor.values.begin(), mt.tensor.values.end());
  t.mask = std::move(mt.mask);
  return t;
}

void write_bold_targets(const std::filesystem::path& path, const BoldTargets& t) {
  // One mask bit per pair; the container stores it once for the whole [V, P] tensor.
  write_masked_tensor(path, Tensor{{t.vertex_count, static_cast<std::uint32_t>(t.pairs)}, t.y}, t.mask);
}

BoldTargets read_bold_targets(const std::filesystem::path& path, std::string subject, Hemisphere hemi,
                              std::size_t pairs) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  MaskedTensor mt = read_masked_tensor(path);
  if (mt.tensor.dims.size() != 2 || mt.tensor.dims[1] != pairs)
    fail(ErrorKind::InvariantViolation, path.string() + ": expected dims [V, " + std::to_string(pairs) + "]");
  if (mt.mask.size() != pairs) fail(ErrorKind::ParseError, path.string() + ": mask length differs from pair count");
  BoldTargets t;
  t.subject = std::move(subject);
  t.hemi = hemi;
  t.vertex_count = mt.tensor.dims[0];
  t.pairs = pairs;
  t.y = std::move(mt.tensor.values);
  t.mask = std::move(mt.mask);
  return t;
}

}  // namespace readalign
