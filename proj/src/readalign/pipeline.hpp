#pragma once

// Command layer: declarative configuration, the command runners behind the
// CLI, and report emission. Every output is written atomically and contains
// no timestamps, so rerunning a command with the same configuration
// reproduces its outputs byte for byte whatever the worker count.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "readalign/ridge.hpp"
#include "readalign/visualness.hpp"

namespace readalign {

struct PipelineConfig {
  std::filesystem::path study_dir;      // study.json and the other inputs
  std::filesystem::path attention_dir;  // attn_* and wordmap_* files
  std::filesystem::path output_dir;

  std::vector<std::string> modalities{"eye", "fmri"};
  std::vector<std::string> pairs;   // pairing ids (llm-vlm); empty = all
  std::vector<std::string> models;  // models to fit besides those of `pairs`; empty = all
  std::vector<double> alpha_grid = readalign::alpha_grid();

  std::size_t n_perm = 10000;         // sign-flip and cluster tests
  std::size_t n_perm_vertex = 10000;  // per-vertex prediction permutations
  bool single_model_test = false;
  std::uint64_t seed = 0;
  double cluster_forming_p = 0.01;
  double cluster_alpha = 0.05;
  double fdr_q = 0.05;
  double hrf_lag_seconds = 5.0;
  std::string vertex_test = "t";  // "t" or "signflip"
  GroupCorrelation group_correlation = GroupCorrelation::Pooled;
  std::size_t alpha_subsample = 512;
  std::size_t min_group_rows = 10;

  unsigned workers = 0;  // 0 = READALIGN_WORKERS or hardware threads
  bool dry_run = false;

  bool has_modality(std::string_view m) const;
  // Canonical JSON of every setting that can change results (not paths,
  // workers or dry_run).
  std::string canonical_json() const;
  std::string hash() const;  // SHA-256 of canonical_json()
};

// Relative paths resolve against `base_dir`. Unknown keys are a ParseError.
PipelineConfig parse_pipeline_config(std::string_view json_text, const std::string& source,
                                     const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// InvalidArgument for counts < 1, bad thresholds or an unknown option value.
void check_pipeline_config(const PipelineConfig& cfg);

// Each runner throws readalign::Error on failure and writes progress and the
// dry-run plan to `log`.
void run_validate(const PipelineConfig& cfg, std::ostream& log);
void run_features(const PipelineConfig& cfg, std::ostream& log);
void run_targets(const PipelineConfig& cfg, std::ostream& log);
void run_align(const PipelineConfig& cfg, std::ostream& log);  // also runs stats
void run_stats(const PipelineConfig& cfg, std::ostream& log);
void run_visualness(const PipelineConfig& cfg, std::ostream& log);
// Synthetic study generation from a synthetic-study JSON config.
void run_synth(const std::filesystem::path& synth_config, const std::filesystem::path& out_dir, bool dry_run,
               std::ostream& log);

// 0 ok, 2 input or configuration error, 3 numerical error.
int exit_code_for(const std::exception& e) noexcept;

}  // namespace readalign
