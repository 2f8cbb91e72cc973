#pragma once

// Word-pair regression targets: regressive saccade counts per subject and
// BOLD samples at the hemodynamic peak of each regressive transition.
//
//   target_sacc_<subject>.bin          [P] + mask
//   target_bold_<subject>_<hemi>.bin   [V, P] + mask over the P pairs

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "readalign/attention.hpp"
#include "readalign/corpus.hpp"

namespace readalign {

struct SaccadeTarget {
  std::string subject;
  std::vector<double> y;           // P
  std::vector<std::uint8_t> mask;  // P; 0 for sentences the subject never read
};

struct TransitionEvent {
  std::string subject;
  std::uint32_t sentence = 0;  // PairIndex sentence index
  std::uint32_t from_word = 0;  // l
  std::uint32_t to_word = 0;    // m
  double onset_ms = 0;          // landing fixation
  std::string run;
};

// Consecutive fixations within a sentence, ordered by fixation index.
std::vector<TransitionEvent> regressive_transitions(const FixationLog& log, const PairIndex& index);

SaccadeTarget build_saccade_targets(const FixationLog& log, const PairIndex& index);

// ceil((onset_ms/1000 + lag) / TR), with values within 1e-9 (relative) of an
// integer taken as that integer so that exact boundaries are not pushed up by
// binary rounding.
std::int64_t scan_index_for_transition(double onset_ms, double tr_seconds = 0.4, double lag_seconds = 5.0);

struct BoldTargets {
  std::string subject;
  Hemisphere hemi = Hemisphere::Left;
  std::uint32_t vertex_count = 0;
  std::size_t pairs = 0;
  std::vector<float> y;            // V x P, masked-out entries are 0
  std::vector<std::uint8_t> mask;  // P, shared by all vertices
  std::size_t events_used = 0;
  std::size_t events_dropped = 0;  // scan index beyond the run

  float at(std::uint32_t v, std::size_t p) const { return y[static_cast<std::size_t>(v) * pairs + p]; }
};

// `runs` holds this subject's series for one hemisphere. Scan indices are
// 0-based volume indices; events landing at or past the run's last volume are
// dropped. Multiple events on one pair are averaged.
BoldTargets build_bold_targets(const std::vector<TransitionEvent>& events,
                               const std::vector<const BoldSurfaceSeries*>& runs, const PairIndex& index,
                               double lag_seconds = 5.0);

std::string saccade_target_filename(std::string_view subject);
std::string bold_target_filename(std::string_view subject, Hemisphere h);

void write_saccade_target(const std::filesystem::path& path, const SaccadeTarget& t);
SaccadeTarget read_saccade_target(const std::filesystem::path& path, std::string subject, std::size_t pairs);
void write_bold_targets(const std::filesystem::path& path, const BoldTargets& t);
BoldTargets read_bold_targets(const std::filesystem::path& path, std::string subject, Hemisphere hemi,
                              std::size_t pairs);

}  // namespace readalign
