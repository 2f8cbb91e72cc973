#include <doctest.h>

#include <numeric>
#include <random>

#include "helpers.hpp"
#include "readalign/targets.hpp"

using namespace readalign;
using testing::error_kind_of;

namespace {

FixationLog log_of(const std::vector<std::pair<std::string, std::vector<std::uint32_t>>>& seqs) {
  FixationLog log{"s1", {}};
  double t = 0;
  for (const auto& [sentence, words] : seqs) {
    std::uint32_t i = 0;
    for (auto w : words) log.records.push_back({sentence, i++, w, t += 250, "r1"});
  }
  return log;
}

BoldSurfaceSeries series(std::uint32_t V, std::uint32_t T, std::vector<float> values) {
  return BoldSurfaceSeries{"s1", "r1", Hemisphere::Left, V, T, 0.4, std::move(values)};
}

}  // namespace

TEST_CASE("regressive saccade counts") {
  const PairIndex idx(testing::small_manifest({{3, 4}}));
  SUBCASE("[2,0,1]") {
    const auto t = build_saccade_targets(log_of({{"a0s0", {2, 0, 1}}}), idx);
    std::vector<double> expect(idx.size(), 0.0);
    expect[idx.index(0, 2, 0)] = 1;
    CHECK(t.y == expect);
  }
  SUBCASE("[1,0,1,0]") {
    const auto t = build_saccade_targets(log_of({{"a0s0", {1, 0, 1, 0}}}), idx);
    CHECK(t.y[idx.index(0, 1, 0)] == 2);
    CHECK(std::accumulate(t.y.begin(), t.y.end(), 0.0) == 2);
  }
  SUBCASE("forward reading and unread sentences") {
    const auto t = build_saccade_targets(log_of({{"a0s0", {0, 1, 2}}}), idx);
    CHECK(std::accumulate(t.y.begin(), t.y.end(), 0.0) == 0);
    for (std::size_t p = 0; p < idx.size(); ++p) CHECK(t.mask[p] == (idx.sentence_of(p) == 0 ? 1 : 0));
  }
  SUBCASE("empty log") {
    const auto t = build_saccade_targets(FixationLog{"s1", {}}, idx);
    CHECK(std::all_of(t.y.begin(), t.y.end(), [](double v) { return v == 0; }));
    CHECK(std::all_of(t.mask.begin(), t.mask.end(), [](auto m) { return m == 0; }));
  }
}

TEST_CASE("saccade counts conserve regressive transitions") {
  const PairIndex idx(testing::small_manifest({{5, 7, 3}, {6}}));
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, std::vector<std::uint32_t>>> seqs;
    std::size_t regressions = 0;
    for (std::size_t s = 0; s < idx.sentence_count(); ++s) {
      std::uniform_int_distribution<std::uint32_t> word(0, idx.length(s) - 1);
      std::vector<std::uint32_t> seq(1 + rng() % 15);
      for (auto& w : seq) w = word(rng);
      for (std::size_t i = 1; i < seq.size(); ++i) regressions += seq[i] < seq[i - 1];
      const std::string id = s < 3 ? "a0s" + std::to_string(s) : "a1s0";
      seqs.emplace_back(id, seq);
    }
    const auto t = build_saccade_targets(log_of(seqs), idx);
    CHECK(std::accumulate(t.y.begin(), t.y.end(), 0.0) == static_cast<double>(regressions));
  }
}

TEST_CASE("scan index at the hemodynamic peak") {
  CHECK(scan_index_for_transition(10000) == 38);
  CHECK(scan_index_for_transition(0) == 13);
  CHECK(scan_index_for_transition(1000, 0.5, 5.0) == 12);
  CHECK(scan_index_for_transition(200) == 13);
  CHECK(scan_index_for_transition(201) == 14);
  std::int64_t prev = 0;
  for (double t = 0; t < 60000; t += 7.3) {
    const auto s = scan_index_for_transition(t);
    CHECK(s >= prev);
    prev = s;
  }
  CHECK(error_kind_of([] { scan_index_for_transition(-1); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("BOLD targets sample the peak volume") {
  const PairIndex idx(testing::small_manifest({{3}}));
  const std::uint32_t T = 20;
  std::vector<float> v(2 * T, 0.0f);
  v[13] = 0.7f;          // vertex 0 at onset 0
  v[14] = 0.2f;          // vertex 0 at onset 400 ms
  v[15] = 0.6f;          // vertex 0 at onset 800 ms
  v[T + 13] = -1.0f;     // vertex 1
  const auto s = series(2, T, v);
  auto event = [](std::uint32_t l, std::uint32_t m, double onset) {
    return TransitionEvent{"s1", 0, l, m, onset, "r1"};
  };
  const auto p10 = idx.index(0, 1, 0), p20 = idx.index(0, 2, 0), p21 = idx.index(0, 2, 1);

  const auto b = build_bold_targets({event(1, 0, 0), event(2, 0, 400), event(2, 0, 800), event(2, 1, 1e6)}, {&s}, idx);
  CHECK(b.at(0, p10) == doctest::Approx(0.7));
  CHECK(b.at(1, p10) == doctest::Approx(-1.0));
  CHECK(b.at(0, p20) == doctest::Approx(0.4));
  CHECK(b.mask[p10] == 1);
  CHECK(b.mask[p20] == 1);
  CHECK(b.mask[p21] == 0);
  CHECK(b.at(0, p21) == 0.0f);
  CHECK(b.events_dropped == 1);
  CHECK(b.events_used == 3);

  auto stray = event(1, 0, 0);
  stray.run = "r9";
  CHECK(error_kind_of([&] { build_bold_targets({stray}, {&s}, idx); }) == ErrorKind::RunMismatch);
}

TEST_CASE("transitions come from consecutive fixations") {
  const PairIndex idx(testing::small_manifest({{4}}));
  const auto ev = regressive_transitions(log_of({{"a0s0", {3, 1, 2, 0}}}), idx);
  REQUIRE(ev.size() == 2);
  CHECK((ev[0].from_word == 3 && ev[0].to_word == 1));
  CHECK((ev[1].from_word == 2 && ev[1].to_word == 0));
  CHECK(ev[0].onset_ms == 500);
}

TEST_CASE("target files round trip") {
  testing::TempDir dir("targets");
  const PairIndex idx(testing::small_manifest({{3, 2}}));
  const auto t = build_saccade_targets(log_of({{"a0s0", {2, 1, 0}}}), idx);
  write_saccade_target(dir / "t.bin", t);
  const auto back = read_saccade_target(dir / "t.bin", "s1", idx.size());
  CHECK(back.y == t.y);
  CHECK(back.mask == t.mask);
  CHECK(error_kind_of([&] { read_saccade_target(dir / "t.bin", "s1", idx.size() + 1); }) == ErrorKind::InvariantViolation);
  CHECK(error_kind_of([&] { read_saccade_target(dir / "none.bin", "s1", 1); }) == ErrorKind::MissingFile);
}
