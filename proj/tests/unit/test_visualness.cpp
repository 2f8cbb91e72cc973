#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "readalign/visualness.hpp"

using namespace readalign;
using testing::error_kind_of;

namespace {

using Pairs = std::vector<std::pair<double, double>>;

double sse(const Pairs& p, const std::vector<double>& fitted) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i].second - fitted[i]) * (p[i].second - fitted[i]);
  return s;
}

// Distinct raw values, sorted, with the targets grouped under each.
std::vector<std::vector<double>> tie_groups(const Pairs& p) {
  std::map<double, std::vector<double>> g;
  for (auto [x, y] : p) g[x].push_back(y);
  std::vector<std::vector<double>> out;
  for (auto& [x, ys] : g) out.push_back(ys);
  return out;
}

// Exact isotonic optimum: best non-decreasing block-mean vector over every
// partition of the tie groups into consecutive blocks.
double partition_oracle(const Pairs& p) {
  const auto g = tie_groups(p);
  const std::size_t n = g.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    double obj = 0, prev = -std::numeric_limits<double>::infinity();
    bool ok = true;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (i + 1 < n && !(cuts >> i & 1)) continue;
      double sum = 0, cnt = 0;
      for (std::size_t k = start; k <= i; ++k)
        for (double y : g[k]) sum += y, cnt += 1;
      const double mean = sum / cnt;
      if (mean < prev - 1e-12) ok = false;
      prev = mean;
      for (std::size_t k = start; k <= i; ++k)
        for (double y : g[k]) obj += (y - mean) * (y - mean);
      start = i + 1;
    }
    if (ok) best = std::min(best, obj);
  }
  return best;
}

// Best non-decreasing assignment of levels from a 0.1 grid on [0, 5].
double grid_oracle(const Pairs& p) {
  const auto g = tie_groups(p);
  const int G = 51;
  std::vector<double> cost(G, 0.0);
  for (const auto& ys : g) {
    std::vector<double> next(G);
    double running = std::numeric_limits<double>::infinity();
    for (int l = 0; l < G; ++l) {
      running = std::min(running, cost[l]);
      double c = 0;
      for (double y : ys) c += (y - 0.1 * l) * (y - 0.1 * l);
      next[l] = running + c;
    }
    cost = next;
  }
  return *std::min_element(cost.begin(), cost.end());
}

}  // namespace

TEST_CASE("dictionary scoring") {
  Sentence s{"s", "a", {"Red", "apple", "on", "the", "table"}};
  const VisionNorms norms({{"red", 2}, {"apple", 3}, {"table", 4}});
  auto d = score_sentence_dictionary(s, norms, {0, 1, 4});
  CHECK(*d.v_dict == doctest::Approx(3.0));
  CHECK(d.kappa == 1.0);
  CHECK_FALSE(needs_fallback(d));
  d = score_sentence_dictionary(s, norms, {0, 1, 2, 4});
  CHECK(d.kappa == 0.75);
  CHECK(d.matched == 3);
  CHECK_FALSE(needs_fallback(d));
  d = score_sentence_dictionary(s, norms, {2, 3});
  CHECK_FALSE(d.v_dict.has_value());
  CHECK(d.kappa == 0.0);
  CHECK(is_excluded(d));
  CHECK(needs_fallback(DictionaryScore{4.0, 0.6, 5, 8}));
  CHECK(needs_fallback(DictionaryScore{4.0, 1.0, 2, 2}));
  CHECK(error_kind_of([&] { score_sentence_dictionary(s, norms, {7}); }) == ErrorKind::InvariantViolation);
}

TEST_CASE("judge raw scores and repetition medians") {
  CHECK(judge_raw_score(4.0, 3.5, 4.5) == doctest::Approx(4.0));
  CHECK(judge_raw_score(0, 0, 0) == 0.0);
  CHECK(judge_raw_score(5, 5, 5) == 5.0);
  CHECK(error_kind_of([] { judge_raw_score(5.1, 0, 0); }) == ErrorKind::OutOfRange);
  const auto agg = aggregate_judge_scores({{"s", "j", 0, 1, 1, 1, 0},
                                           {"s", "j", 1, 4, 4, 4, 0},
                                           {"s", "j", 2, 2, 2, 2, 0},
                                           {"t", "j", 0, 1, 1, 1, 0},
                                           {"t", "j", 1, 2, 2, 2, 0}});
  CHECK(agg.at({"s", "j"}).q == 2.0);
  CHECK(agg.at({"s", "j"}).repetitions == 3);
  CHECK(agg.at({"t", "j"}).q == 1.5);
}

TEST_CASE("isotonic calibration examples") {
  auto levels = [](const Pairs& p) { return isotonic_fit(p).fitted; };
  CHECK(levels({{1, 1}, {2, 2}, {3, 3}}) == std::vector<double>{1, 2, 3});
  CHECK(levels({{1, 3}, {2, 2}, {3, 4}}) == std::vector<double>{2.5, 2.5, 4});
  CHECK(levels({{3, 2}, {1, 2}, {2, 2}}) == std::vector<double>{2, 2, 2});
  for (double v : levels({{1, 1}, {1, 3}, {2, 1.5}})) CHECK(v == doctest::Approx(5.5 / 3));
  const auto c = isotonic_calibrate(Pairs{{1, 3}, {2, 2}, {3, 4}});
  CHECK(c(0.0) == 2.5);
  CHECK(c(2.5) == 2.5);
  CHECK(c(3.0) == 4.0);
  CHECK(c(9.0) == 4.0);
  CHECK(c(-3.0) == 2.5);
  CHECK(error_kind_of([] { isotonic_calibrate(Pairs{{1, 1}}); }) == ErrorKind::TooFewPairs);
}

TEST_CASE("isotonic fit is optimal against brute-force oracles") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 5;
    Pairs p(n);
    for (auto& [x, y] : p) {
      x = 0.5 * static_cast<double>(rng() % 11);
      y = 0.1 * static_cast<double>(rng() % 51);
    }
    const auto fit = isotonic_fit(p);
    const double obj = sse(p, fit.fitted);
    CHECK(obj == doctest::Approx(partition_oracle(p)).epsilon(1e-9));
    CHECK(obj <= grid_oracle(p) + 1e-6);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (p[i].first < p[j].first) CHECK(fit.fitted[i] <= fit.fitted[j] + 1e-12);
        if (p[i].first == p[j].first) CHECK(fit.fitted[i] == fit.fitted[j]);
      }
    for (std::size_t b = 1; b < fit.curve.levels.size(); ++b) CHECK(fit.curve.levels[b] >= fit.curve.levels[b - 1]);
  }
}

TEST_CASE("judge fusion") {
  CHECK(fuse_judges(std::vector<double>{2.0, 4.0, 5.0}) == 4.0);
  CHECK(fuse_judges(std::vector<double>{3, 3, 3}) == 3.0);
  CHECK(fuse_judges(std::vector<double>{1.0, 5.0, 4.8}) == 4.8);
  CHECK(error_kind_of([] { fuse_judges(std::vector<double>{1.0, 2.0}); }) == ErrorKind::MissingJudge);
}

TEST_CASE("grouping within articles") {
  auto run = [](std::vector<double> scores) {
    std::vector<GroupInput> in;
    for (std::size_t i = 0; i < scores.size(); ++i)
      in.push_back({"s" + std::to_string(10 + i), "a", scores[i]});
    return group_sentences(in);
  };
  auto count = [](const std::vector<VisualGroup>& g, VisualGroup v) { return std::count(g.begin(), g.end(), v); };
  const auto ten = run({5, 1, 7, 3, 9, 2, 8, 4, 6, 0});
  CHECK(count(ten, VisualGroup::High) == 2);
  CHECK(count(ten, VisualGroup::Low) == 2);
  CHECK(ten[4] == VisualGroup::High);
  CHECK(ten[6] == VisualGroup::High);
  CHECK(ten[9] == VisualGroup::Low);
  CHECK(ten[1] == VisualGroup::Low);
  const auto three = run({1, 2, 3});
  CHECK(three == std::vector<VisualGroup>{VisualGroup::Low, VisualGroup::Excluded, VisualGroup::High});
  const auto ties = run({2, 1, 1, 4, 4});
  CHECK(ties == std::vector<VisualGroup>{VisualGroup::Excluded, VisualGroup::Low, VisualGroup::Excluded,
                                         VisualGroup::High, VisualGroup::Excluded});
  std::vector<GroupInput> with_absent{{"x1", "a", 1.0}, {"x2", "a", std::nullopt}, {"x3", "a", 2.0}};
  CHECK(group_sentences(with_absent)[1] == VisualGroup::Excluded);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(3 + rng() % 20);
    for (auto& x : v) x = n01(rng);
    std::vector<double> w(v.size());
    std::transform(v.begin(), v.end(), w.begin(), [](double x) { return std::exp(3 * x) + 7; });
    CHECK(run(v) == run(w));
  }
}

TEST_CASE("advantage and modulation identities") {
  const auto same = advantage_and_modulation(0.3, -0.1, 0.3, -0.1);
  CHECK(same.a_high == 0.0);
  CHECK(same.a_low == 0.0);
  CHECK(same.h == 0.0);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const auto m = advantage_and_modulation(a, b, c, d);
    CHECK(m.h == m.a_high - m.a_low);
    if (a > c) CHECK(m.a_high > 0);
  }
  const auto s = summarize_subject("s", {{0.002201, -0.002379, 0.0}, {0.000859, 0.001616, 0.0}});
  CHECK(s.h == s.a_high - s.a_low);
  CHECK(0.002201 - -0.002379 == doctest::Approx(0.004580));
  CHECK(0.000859 - 0.001616 == doctest::Approx(-0.000757).epsilon(0.01));
  CHECK(error_kind_of([] { advantage_and_modulation(1.0, 0, 0, 0); }) == ErrorKind::OutOfDomain);
}

TEST_CASE("group correlation modes") {
  const std::vector<double> obs{1, 2, 3, 4, 1, 2, 3, 4}, pred{1, 2, 3, 4, 4, 3, 2, 1};
  const std::vector<std::uint8_t> all(8, 1);
  const std::vector<std::uint32_t> fold{0, 0, 0, 0, 1, 1, 1, 1};
  CHECK(*group_correlation(obs, pred, all, fold, GroupCorrelation::FoldMean, 2) == doctest::Approx(0.0));
  CHECK(*group_correlation(obs, pred, all, fold, GroupCorrelation::Pooled, 2) == doctest::Approx(0.0));
  std::vector<std::uint8_t> half{1, 1, 1, 1, 0, 0, 0, 0};
  CHECK(*group_correlation(obs, pred, half, fold, GroupCorrelation::Pooled, 2) == doctest::Approx(1.0));
  CHECK_FALSE(group_correlation(obs, pred, half, fold, GroupCorrelation::Pooled, 10).has_value());
}

TEST_CASE("modulation test is one-sided on H") {
  std::vector<SubjectModulation> subjects;
  for (int i = 0; i < 8; ++i) subjects.push_back({"s" + std::to_string(i), 0.1, 0.0, 0.1, 1});
  PermutationOptions o;
  o.test_id = "mod";
  const auto up = test_modulation(subjects, o);
  CHECK(up.test.exact);
  CHECK(up.test.p == doctest::Approx(1.0 / 256));
  CHECK(up.h == doctest::Approx(0.1));
  for (auto& s : subjects) s.h = -0.1, s.a_high = 0.0, s.a_low = 0.1;
  CHECK(test_modulation(subjects, o).test.p == 1.0);
}

TEST_CASE("calibration never sees the held-out article") {
  // Three articles of six 5-word sentences. Content words are 0..3; the first
  // sentence of each article has only two rated words and falls back.
  auto m = testing::small_manifest({{5, 5, 5, 5, 5, 5}, {5, 5, 5, 5, 5, 5}, {5, 5, 5, 5, 5, 5}});
  ContentWordAnnotation content;
  std::map<std::string, double> ratings;
  std::vector<JudgeScoreRecord> judges;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (const auto& s : m.sentences) {
    content[s.id] = {0, 1, 2, 3};
    const bool fallback = s.id.ends_with("s0");
    for (std::uint32_t w = 0; w < 4; ++w)
      if (!fallback || w < 2) ratings[s.words[w]] = u(rng);
    for (const char* j : {"j1", "j2", "j3"})
      for (std::uint32_t rep = 0; rep < 3; ++rep) judges.push_back({s.id, j, rep, u(rng), u(rng), u(rng), 0.5});
  }
  const auto base = compute_visualness(m, VisionNorms(ratings), content, judges);
  REQUIRE(base.records[0].fallback);
  REQUIRE(base.records[0].final_score.has_value());

  auto perturbed = ratings;
  for (const auto& s : m.sentences)
    if (s.article == "a0")
      for (const auto& w : s.words)
        if (perturbed.count(w)) perturbed[w] = 5.0 - perturbed[w];
  const auto other = compute_visualness(m, VisionNorms(perturbed), content, judges);
  for (std::size_t c = 0; c < base.calibrations.size(); ++c) {
    const auto& a = base.calibrations[c];
    const auto& b = other.calibrations[c];
    REQUIRE(a.fold == b.fold);
    if (a.fold == 0) {
      CHECK(a.curve.levels == b.curve.levels);
      CHECK(a.curve.x_lo == b.curve.x_lo);
    } else {
      CHECK(a.training_pairs == b.training_pairs);
    }
  }
  CHECK(base.records[0].final_score == other.records[0].final_score);

  auto missing = judges;
  std::erase_if(missing, [](const JudgeScoreRecord& r) { return r.sentence == "a1s0" && r.judge == "j2"; });
  CHECK(error_kind_of([&] { compute_visualness(m, VisionNorms(ratings), content, missing); }) ==
        ErrorKind::MissingJudge);
}
