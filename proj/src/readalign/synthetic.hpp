#pragma once

// Synthetic studies with a planted attention -> behaviour signal. One word-
// level signal matrix S per sentence drives saccade rates and BOLD samples;
// the planted (layer, head) of each model carries w * S + (1 - w) * R with R
// random row-stochastic. For the VLM of a pair, w is raised by `delta` on
// sentences labelled high (or low) visual strength.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "readalign/corpus.hpp"

namespace readalign {

struct SynthConfig {
  std::uint64_t seed = 1;
  std::uint32_t articles = 5;
  std::uint32_t sentences_per_article = 8;
  std::uint32_t min_words = 6;
  std::uint32_t max_words = 12;
  std::vector<std::uint32_t> sentence_lengths;  // overrides the counts above when set

  std::uint32_t subjects = 12;
  bool eye = true;
  bool fmri = true;

  std::uint32_t layers = 3;
  std::uint32_t heads = 4;
  std::uint32_t planted_layer = 1;
  std::uint32_t planted_head = 2;
  bool paired = true;  // emit an LLM and a VLM; otherwise one LLM

  double gain = 5.0;             // g
  double noise_sd = 0.1;         // shared per-pair saccade-rate noise
  double base_rate = 0.2;
  double bold_noise_sd = 1.0;    // sigma at responsive vertices
  double signal_weight = 1.0;    // w0
  double modulation_delta = 0.0;
  bool delta_on_low = false;

  std::string mesh = "grid";  // grid | ring
  std::uint32_t grid_width = 8;
  std::uint32_t grid_height = 8;
  std::vector<Hemisphere> hemispheres{Hemisphere::Left, Hemisphere::Right};
  double responsive_fraction = 0.25;  // square patch in the grid corner

  double merge_probability = 0.3;  // chance a word is split into two tokens
  double bos_mass = 0.05;          // attention to the excluded BOS token
  std::uint32_t judges = 3;
};

struct SynthTruth {
  std::uint32_t planted_layer = 0;
  std::uint32_t planted_head = 0;
  std::vector<std::string> models;
  std::map<std::string, std::string> groups;  // sentence -> high | low | excluded
  std::vector<std::uint8_t> responsive;       // per vertex
  std::filesystem::path config_path;          // pipeline.json
};

void check_synth_config(const SynthConfig& cfg);

// Writes study.json, fixations.csv, bold_*.bin, mesh_*.csv, norms.csv,
// content_words.csv, judge_scores.json, attention/*, synth_truth.json and a
// pipeline.json pointing output at <dir>/out.
SynthTruth generate_synthetic_study(const SynthConfig& cfg, const std::filesystem::path& dir);

SynthConfig parse_synth_config(std::string_view json_text, const std::string& source);

}  // namespace readalign
