#include <doctest.h>

#include "helpers.hpp"
#include "readalign/attention.hpp"
#include "readalign/tensor_io.hpp"

using namespace readalign;
using testing::error_kind_of;

namespace {

TokenAttention token(std::uint32_t n, std::vector<double> values, std::vector<std::int32_t> map) {
  return TokenAttention{"s", 0, 0, n, std::move(values), std::move(map)};
}

WordAttention word(std::uint32_t n, std::vector<double> v) { return WordAttention{"s", 0, 0, n, std::move(v)}; }

}  // namespace

TEST_CASE("aggregation sums keys and averages queries") {
  const auto w = aggregate_token_to_word(token(3, {.5, .3, .2, .1, .1, .8, .4, .4, .2}, {0, 0, 1}), 2);
  CHECK(w.at(0, 0) == doctest::Approx(.5));
  CHECK(w.at(0, 1) == doctest::Approx(.5));
  CHECK(w.at(1, 0) == doctest::Approx(.8));
  CHECK(w.at(1, 1) == doctest::Approx(.2));
}

TEST_CASE("identity map reproduces the token matrix") {
  std::vector<double> I(16, 0.0);
  for (int i = 0; i < 4; ++i) I[i * 5] = 1.0;
  const auto w = aggregate_token_to_word(token(4, I, {0, 1, 2, 3}), 4);
  CHECK(w.values == I);
}

TEST_CASE("uniform attention keeps rows stochastic under any map") {
  const std::vector<double> u(25, 0.2);
  for (const auto& map : {std::vector<std::int32_t>{0, 0, 0, 1, 2}, {0, 1, 1, 1, 1}, {0, 0, 1, 1, 1}}) {
    const auto w = aggregate_token_to_word(token(5, u, map), static_cast<std::uint32_t>(map.back() + 1));
    for (std::uint32_t r = 0; r < w.n_words; ++r) {
      double s = 0;
      for (std::uint32_t c = 0; c < w.n_words; ++c) s += w.at(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("one-word sentence aggregates to [[1]]") {
  const auto w = aggregate_token_to_word(token(2, {.5, .5, .5, .5}, {0, 0}), 1);
  CHECK(w.values == std::vector<double>{1.0});
}

TEST_CASE("excluded tokens drop their mass without renormalizing") {
  // BOS, then two words
  const auto w = aggregate_token_to_word(token(3, {1, 0, 0, .2, .5, .3, .1, .2, .7}, {-1, 0, 1}), 2);
  CHECK(w.at(0, 0) == doctest::Approx(.5));
  CHECK(w.at(0, 1) == doctest::Approx(.3));
  CHECK(w.at(1, 1) == doctest::Approx(.7));
}

TEST_CASE("word map mismatches") {
  CHECK(error_kind_of([] { check_word_map({0, 2}, 3, "m"); }) == ErrorKind::MapMismatch);
  CHECK(error_kind_of([] { check_word_map({1, 0}, 2, "m"); }) == ErrorKind::MapMismatch);
  CHECK(error_kind_of([] { check_word_map({0, 1, 2}, 2, "m"); }) == ErrorKind::MapMismatch);
  CHECK(error_kind_of([] { check_word_map({0, 0}, 2, "m"); }) == ErrorKind::MapMismatch);
  CHECK_NOTHROW(check_word_map({-1, 0, 0, 1, -1}, 2, "m"));
}

TEST_CASE("strict lower triangle order") {
  CHECK(lower_triangle_vector(word(2, {1, 2, 3, 4})) == std::vector<double>{3});
  CHECK(lower_triangle_vector(word(3, {0, 0, 0, 10, 0, 0, 20, 21, 0})) == std::vector<double>{10, 20, 21});
  CHECK(lower_triangle_vector(word(1, {1})).empty());
}

TEST_CASE("pair index") {
  const PairIndex idx(std::vector<std::uint32_t>{3, 4});
  CHECK(idx.size() == 9);
  CHECK(PairIndex(std::vector<std::uint32_t>{2, 3}).size() == 4);
  CHECK(PairIndex(std::vector<std::uint32_t>{1}).size() == 0);
  std::size_t p = 0;
  for (std::uint32_t s = 0; s < 2; ++s)
    for (std::uint32_t l = 1; l < idx.length(s); ++l)
      for (std::uint32_t m = 0; m < l; ++m, ++p) {
        CHECK(idx.index(s, l, m) == p);
        const auto e = idx.entry(p);
        CHECK((e.sentence == s && e.l == l && e.m == m));
      }
  CHECK(error_kind_of([&] { idx.index(0, 1, 1); }) == ErrorKind::InvalidArgument);
  CHECK(error_kind_of([&] { idx.index(0, 3, 0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("pair count for the reference sentence-length profile is 7421") {
  std::vector<std::uint32_t> lengths;
  lengths.insert(lengths.end(), 73, 10);
  lengths.insert(lengths.end(), 74, 11);
  lengths.push_back(12);
  CHECK(lengths.size() == 148);
  CHECK(PairIndex(lengths).size() == 7421);
}

TEST_CASE("predictor assembly") {
  const PairIndex idx(std::vector<std::uint32_t>{3});
  std::vector<std::vector<WordAttention>> per{{word(3, {0, 0, 0, 1, 0, 0, 2, 3, 0}), word(3, {0, 0, 0, 4, 0, 0, 5, 6, 0})}};
  const auto t = assemble_predictor_matrix(idx, per, 2, 0);
  REQUIRE(t.X.rows() == 3);
  REQUIRE(t.X.cols() == 2);
  CHECK(t.X(0, 0) == 1);
  CHECK(t.X(2, 0) == 3);
  CHECK(t.X(1, 1) == 5);
  per[0].pop_back();
  CHECK(error_kind_of([&] { assemble_predictor_matrix(idx, per, 2, 0); }) == ErrorKind::HeadCountMismatch);
  per.clear();
  CHECK(error_kind_of([&] { assemble_predictor_matrix(idx, per, 2, 0); }) == ErrorKind::MissingSentence);
}

TEST_CASE("attention dumps on disk") {
  testing::TempDir dir("attn");
  auto m = testing::small_manifest({{2}, {3}});
  m.models[0].heads = 2;
  auto put = [&](const std::string& sentence, std::uint32_t n_t, const std::vector<std::int32_t>& map) {
    Tensor t{{2, n_t, n_t}, std::vector<float>(2 * n_t * n_t, 1.0f / static_cast<float>(n_t))};
    write_tensor(dir / attention_filename("m1", sentence, 0), t);
    write_file_atomic(dir / wordmap_filename("m1", sentence), serialize_word_map(map));
  };
  put("a0s0", 3, {-1, 0, 1});
  put("a1s0", 4, {0, 1, 1, 2});
  const auto tables = build_model_features(m, m.models[0], dir.path(), 2);
  REQUIRE(tables.size() == 1);
  CHECK(tables[0].X.rows() == 4);
  CHECK(tables[0].X(0, 0) == doctest::Approx(1.0 / 3));

  SUBCASE("word map round trip") {
    CHECK(load_word_map(dir / wordmap_filename("m1", "a0s0"), 3) == std::vector<std::int32_t>{-1, 0, 1});
  }
  SUBCASE("missing dump names the sentence") {
    std::filesystem::remove(dir / attention_filename("m1", "a1s0", 0));
    try {
      build_model_features(m, m.models[0], dir.path(), 1);
      FAIL("expected MissingSentence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingSentence);
      CHECK(std::string(e.what()).find("a1s0") != std::string::npos);
    }
  }
  SUBCASE("rows that do not sum to one") {
    Tensor t{{2, 3, 3}, std::vector<float>(18, 0.5f)};
    write_tensor(dir / attention_filename("m1", "a0s0", 0), t);
    CHECK(error_kind_of([&] { build_model_features(m, m.models[0], dir.path(), 1); }) == ErrorKind::InvariantViolation);
  }
  SUBCASE("head count disagrees with the manifest") {
    Tensor t{{1, 3, 3}, std::vector<float>(9, 1.0f / 3)};
    write_tensor(dir / attention_filename("m1", "a0s0", 0), t);
    CHECK(error_kind_of([&] { build_model_features(m, m.models[0], dir.path(), 1); }) == ErrorKind::HeadCountMismatch);
  }
  SUBCASE("feature table round trip") {
    write_features(dir / "f.bin", tables[0]);
    const auto back = read_features(dir / "f.bin", "m1", 0);
    CHECK(back.X.isApprox(tables[0].X.cast<float>().cast<double>()));
  }
}
