#include <doctest.h>

#include <json.hpp>

#include <sstream>

#include "helpers.hpp"
#include "readalign/attention.hpp"
#include "readalign/pipeline.hpp"
#include "readalign/synthetic.hpp"
#include "readalign/tensor_io.hpp"

using namespace readalign;
using testing::error_kind_of;

namespace {

struct Study {
  testing::TempDir dir{"pipeline"};
  SynthTruth truth;
  PipelineConfig cfg;

  explicit Study(bool fmri = false) {
    SynthConfig c;
    c.seed = 4;
    c.sentences_per_article = 4;
    c.subjects = 3;
    c.fmri = fmri;
    c.grid_width = 4;
    c.grid_height = 4;
    truth = generate_synthetic_study(c, dir.path());
    cfg = load_pipeline_config(truth.config_path);
    cfg.n_perm = 50;
    cfg.n_perm_vertex = 50;
  }
};

template <class Fn>
int exit_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return exit_code_for(e);
  }
  return 0;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) out[e.path().filename().string()] = read_file_bytes(e.path());
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_pipeline_config(R"({"study_dir": "s", "alpha_grid": {"lo": 1, "hi": 100, "n": 3},
                                             "modalities": ["eye"], "seed": 7})",
                                         "cfg", "/base");
  CHECK(cfg.study_dir == std::filesystem::path("/base/s"));
  CHECK(cfg.attention_dir == std::filesystem::path("/base/s/attention"));
  CHECK(cfg.alpha_grid.size() == 3);
  CHECK(cfg.alpha_grid[1] == doctest::Approx(10.0));
  CHECK(cfg.has_modality("eye"));
  CHECK_FALSE(cfg.has_modality("fmri"));
  CHECK(error_kind_of([] { parse_pipeline_config(R"({"study_dir": "s", "nperm": 3})", "cfg", "/"); }) ==
        ErrorKind::ParseError);
  CHECK(error_kind_of([] { parse_pipeline_config("{", "cfg", "/"); }) == ErrorKind::ParseError);

  auto other = cfg;
  other.workers = 8;
  other.output_dir = "/elsewhere";
  CHECK(other.hash() == cfg.hash());
  other.seed = 8;
  CHECK(other.hash() != cfg.hash());
  CHECK(cfg.hash().size() == 64);
}

TEST_CASE("n_perm = 0 is a configuration error") {
  Study s;
  s.cfg.n_perm = 0;
  CHECK(error_kind_of([&] { check_pipeline_config(s.cfg); }) == ErrorKind::InvalidArgument);
  std::ostringstream log;
  CHECK(exit_code_of([&] { run_align(s.cfg, log); }) == 2);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(Error(ErrorKind::MissingFile, "x")) == 2);
  CHECK(exit_code_for(Error(ErrorKind::MapMismatch, "x")) == 2);
  CHECK(exit_code_for(Error(ErrorKind::SingularSystem, "x")) == 3);
  CHECK(exit_code_for(Error(ErrorKind::ZeroCeiling, "x")) == 3);
  CHECK(exit_code_for(std::runtime_error("x")) == 3);
}

TEST_CASE("dry runs write nothing") {
  Study s;
  s.cfg.dry_run = true;
  std::ostringstream log;
  run_features(s.cfg, log);
  run_targets(s.cfg, log);
  CHECK(snapshot(s.cfg.output_dir).empty());
  CHECK(log.str().find("plan") != std::string::npos);
}

TEST_CASE("feature errors") {
  Study s;
  std::ostringstream log;
  SUBCASE("missing sentence dump names the sentence") {
    std::filesystem::remove(s.cfg.attention_dir / attention_filename("synth-llm", "art2-s009", 0));
    try {
      run_features(s.cfg, log);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(exit_code_for(e) == 2);
      CHECK(std::string(e.what()).find("art2-s009") != std::string::npos);
    }
  }
  SUBCASE("corrupt tensor header") {
    const auto p = s.cfg.attention_dir / attention_filename("synth-vlm", "art0-s000", 1);
    auto bytes = read_file_bytes(p);
    bytes[0] = 'X';
    write_file_atomic(p, bytes);
    CHECK(exit_code_of([&] { run_features(s.cfg, log); }) == 2);
  }
}

TEST_CASE("reruns reproduce outputs byte for byte") {
  Study s(true);
  std::ostringstream log;
  run_features(s.cfg, log);
  run_targets(s.cfg, log);
  run_align(s.cfg, log);
  run_visualness(s.cfg, log);
  const auto first = snapshot(s.cfg.output_dir);
  CHECK(first.count("align_report.json"));
  CHECK(first.count("stats_report.json"));
  CHECK(first.count("visualness_report.json"));
  s.cfg.workers = 3;
  run_features(s.cfg, log);
  run_targets(s.cfg, log);
  run_align(s.cfg, log);
  run_visualness(s.cfg, log);
  const auto second = snapshot(s.cfg.output_dir);
  REQUIRE(first.size() == second.size());
  for (const auto& [name, bytes] : first) CHECK_MESSAGE(second.at(name) == bytes, name);

  const auto report = nlohmann::json::parse(read_file_text(s.cfg.output_dir / "align_report.json"));
  CHECK(report["config_hash"] == s.cfg.hash());
  CHECK(report["inputs"].contains("study/study.json"));
}

TEST_CASE("visualness needs judges for fallback sentences") {
  Study s;
  std::filesystem::remove(s.cfg.study_dir / "judge_scores.json");
  std::ostringstream log;
  CHECK(exit_code_of([&] { run_visualness(s.cfg, log); }) == 2);
}

TEST_CASE("full coverage makes judge scores optional") {
  Study s;
  const auto study = load_study_manifest(s.cfg.study_dir / "study.json");
  auto ratings = load_norms(s.cfg.study_dir / "norms.csv").ratings();
  for (const auto& sent : study.sentences)
    for (const auto& w : sent.words) ratings.try_emplace(normalize_norm_key(w), 2.5);
  write_file_atomic(s.cfg.study_dir / "norms.csv", serialize_norms(VisionNorms(ratings)));
  auto content = load_content_words(s.cfg.study_dir / "content_words.csv");
  for (const auto& sent : study.sentences) {
    auto& c = content[sent.id];
    for (std::uint32_t w = 0; w < sent.word_count() && c.size() < 3; ++w) c.insert(w);
  }
  write_file_atomic(s.cfg.study_dir / "content_words.csv", serialize_content_words(content));
  std::filesystem::remove(s.cfg.study_dir / "judge_scores.json");
  std::ostringstream log;
  CHECK_NOTHROW(run_visualness(s.cfg, log));
}
