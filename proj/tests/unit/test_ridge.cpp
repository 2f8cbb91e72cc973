#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "readalign/metrics.hpp"
#include "readalign/ridge.hpp"

using namespace readalign;
using testing::error_kind_of;

namespace {

struct Problem {
  PairIndex index;
  FoldSpec folds;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::uint8_t> mask;
};

// Five articles of 4 sentences with 8 words each: 5 * 4 * 28 = 560 pairs.
Problem problem(std::uint64_t seed, std::size_t heads = 4) {
  Problem p;
  p.index = PairIndex(testing::small_manifest(std::vector<std::vector<std::uint32_t>>(5, {8, 8, 8, 8})));
  p.folds = FoldSpec::by_article(p.index, 5);
  const auto P = static_cast<Eigen::Index>(p.index.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  p.X.resize(P, static_cast<Eigen::Index>(heads));
  for (Eigen::Index r = 0; r < P; ++r)
    for (Eigen::Index c = 0; c < p.X.cols(); ++c) p.X(r, c) = n01(rng);
  p.y.resize(P);
  for (Eigen::Index r = 0; r < P; ++r) p.y(r) = n01(rng);
  p.mask.assign(static_cast<std::size_t>(P), 1);
  return p;
}

}  // namespace

TEST_CASE("closed-form ridge examples") {
  Eigen::MatrixXd X(2, 1);
  X << 1, 2;
  Eigen::VectorXd y(2);
  y << 1, 2;
  const RidgeOptions raw{false, false};
  CHECK(fit_ridge(X, y, {}, 5.0, raw).beta(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fit_ridge(X, y, {}, 1e-12, raw).beta(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit_ridge(X, y, {}, 0.0, raw).beta(0) == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd Xc(4, 2);
  Xc << 1, 5, 2, -1, 3, 0, 4, 2;
  const Eigen::VectorXd yc = Eigen::VectorXd::Constant(4, 3.5);
  const auto m = fit_ridge(Xc, yc, {}, 10.0);
  CHECK(m.beta.norm() == doctest::Approx(0.0));
  CHECK(m.intercept == doctest::Approx(3.5));
}

TEST_CASE("ridge matches a direct solve of the regularized normal equations") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd X(50, 5);
    Eigen::VectorXd y(50);
    for (Eigen::Index r = 0; r < 50; ++r) {
      for (Eigen::Index c = 0; c < 5; ++c) X(r, c) = n01(rng);
      y(r) = n01(rng);
    }
    const double alpha = std::exp(n01(rng) * 2);
    const Eigen::VectorXd direct =
        (X.transpose() * X + alpha * Eigen::MatrixXd::Identity(5, 5)).ldlt().solve(X.transpose() * y);
    const auto m = fit_ridge(X, y, {}, alpha, {false, false});
    CHECK((m.beta - direct).norm() / direct.norm() < 1e-8);
  }
}

TEST_CASE("ridge errors") {
  Eigen::MatrixXd X(3, 2);
  X << 1, 2, 2, 4, 3, 6;
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  CHECK(error_kind_of([&] { fit_ridge(X, y, {}, 0.0, {false, false}); }) == ErrorKind::SingularSystem);
  CHECK_NOTHROW(fit_ridge(X, y, {}, 1e-3, {false, false}));
  CHECK(error_kind_of([&] { fit_ridge(X, y, {}, -1.0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("masked rows are ignored") {
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, 3, 100;
  Eigen::VectorXd y(4);
  y << 2, 4, 6, -1000;
  const std::vector<std::uint8_t> mask{1, 1, 1, 0};
  CHECK(fit_ridge(X, y, mask, 0.0, {true, false}).beta(0) == doctest::Approx(2.0));
}

TEST_CASE("alpha grid") {
  const auto g = alpha_grid();
  REQUIRE(g.size() == 20);
  CHECK(g.front() == 10.0);
  CHECK(g.back() == 1000.0);
  CHECK(g[1] == doctest::Approx(12.742749857031335).epsilon(1e-12));
  for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == doctest::Approx(std::pow(10.0, 1.0 + 2.0 * k / 19.0)));
}

TEST_CASE("perfect signal is recovered out of fold") {
  auto p = problem(3);
  p.y = p.X.col(2);
  const auto r = evaluate_loao(p.X, p.y, p.mask, p.folds, alpha_grid(1e-6, 1e-3, 4), Metric::R2);
  CHECK(r.pooled == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.folds.size() == 5);
}

TEST_CASE("pooled R2 is computed on concatenated out-of-fold predictions") {
  auto p = problem(5);
  p.y += 0.5 * p.X.col(0);
  p.mask[7] = 0;
  const auto r = evaluate_loao(p.X, p.y, p.mask, p.folds, alpha_grid(), Metric::R2);
  std::vector<double> obs, pred;
  for (std::size_t i = 0; i < p.mask.size(); ++i) {
    if (!p.mask[i]) {
      CHECK(std::isnan(r.oof[i]));
      continue;
    }
    obs.push_back(p.y(static_cast<Eigen::Index>(i)));
    pred.push_back(r.oof[i]);
  }
  double mean = 0;
  for (double o : obs) mean += o;
  mean /= static_cast<double>(obs.size());
  double sse = 0, sst = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    sse += (obs[i] - pred[i]) * (obs[i] - pred[i]);
    sst += (obs[i] - mean) * (obs[i] - mean);
  }
  CHECK(r.pooled == doctest::Approx(1 - sse / sst).epsilon(1e-12));
  CHECK(r.pooled > 0.1);
}

TEST_CASE("null targets give near-zero pooled R2") {
  int small = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto p = problem(100 + seed);
    const auto r = evaluate_loao(p.X, p.y, p.mask, p.folds, alpha_grid(), Metric::R2);
    small += r.pooled <= 0.05;
  }
  CHECK(small >= 38);
}

TEST_CASE("pure-noise targets mostly select the largest alpha") {
  const auto grid = alpha_grid();
  int at_max = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    auto p = problem(1000 + rep);
    std::vector<std::size_t> train;
    for (std::size_t r = 0; r < p.index.size(); ++r)
      if (p.folds.row_fold[r] != 0) train.push_back(r);
    at_max += select_alpha_nested(p.X, p.y, train, p.folds, grid, Metric::R2).alpha == grid.back();
  }
  CHECK(at_max >= reps * 6 / 10);
}

TEST_CASE("constant training target is flagged degenerate") {
  auto p = problem(9);
  p.y.setConstant(2.0);
  std::vector<std::size_t> train;
  for (std::size_t r = 0; r < p.index.size(); ++r)
    if (p.folds.row_fold[r] != 0) train.push_back(r);
  const auto sel = select_alpha_nested(p.X, p.y, train, p.folds, alpha_grid(), Metric::R2);
  CHECK(sel.degenerate);
  CHECK(sel.alpha == 1000.0);
}

TEST_CASE("test-fold rows never influence fitting") {
  auto p = problem(21);
  p.y += p.X.col(1);
  const auto grid = alpha_grid();
  const auto clean = evaluate_loao(p.X, p.y, p.mask, p.folds, grid, Metric::R2);
  for (std::uint32_t k = 0; k < 5; ++k) {
    // Sentinels in fold k may move every other fold but not fold k itself.
    Eigen::VectorXd y = p.y;
    Eigen::MatrixXd X = p.X;
    for (std::size_t r = 0; r < p.index.size(); ++r)
      if (p.folds.row_fold[r] == k) {
        y(static_cast<Eigen::Index>(r)) = 1e6;
        X.row(static_cast<Eigen::Index>(r)).setConstant(-1e6);
      }
    const auto poisoned = evaluate_loao(X, y, p.mask, p.folds, grid, Metric::R2);
    CHECK(poisoned.folds[k].alpha == clean.folds[k].alpha);
    CHECK(poisoned.folds[k].model.beta == clean.folds[k].model.beta);
    CHECK(poisoned.folds[k].model.intercept == clean.folds[k].model.intercept);

    // NaN in the held-out rows reaches neither alpha selection nor the fit.
    std::vector<std::size_t> train;
    std::vector<std::uint8_t> train_mask(p.index.size(), 0);
    for (std::size_t r = 0; r < p.index.size(); ++r) {
      if (p.folds.row_fold[r] == k) {
        y(static_cast<Eigen::Index>(r)) = std::numeric_limits<double>::quiet_NaN();
        X.row(static_cast<Eigen::Index>(r)).setConstant(std::numeric_limits<double>::quiet_NaN());
      } else {
        train.push_back(r);
        train_mask[r] = 1;
      }
    }
    const auto sel = select_alpha_nested(X, y, train, p.folds, grid, Metric::R2);
    CHECK(sel.alpha == clean.folds[k].alpha);
    const auto m = fit_ridge(X, y, train_mask, sel.alpha);
    CHECK(m.beta == clean.folds[k].model.beta);
  }
}

TEST_CASE("empty test fold") {
  auto p = problem(2);
  for (std::size_t r = 0; r < p.index.size(); ++r)
    if (p.folds.row_fold[r] == 3) p.mask[r] = 0;
  CHECK(error_kind_of([&] { evaluate_loao(p.X, p.y, p.mask, p.folds, alpha_grid(), Metric::R2); }) ==
        ErrorKind::EmptyTestFold);
}

TEST_CASE("degenerate correlations are zero") {
  const std::vector<double> a{1, 2, 3}, c{2, 2, 2};
  CHECK(pearson_r(a, c) == 0.0);
  CHECK(pearson_r(c, a) == 0.0);
  CHECK(r2_score(c, a) == 0.0);
}

TEST_CASE("noise ceiling") {
  auto p = problem(4);
  auto target = [&](const Eigen::VectorXd& y, std::string id) {
    return SaccadeTarget{std::move(id), std::vector<double>(y.data(), y.data() + y.size()), p.mask};
  };
  SUBCASE("identical subjects") {
    const auto c = noise_ceiling({target(p.y, "a"), target(p.y, "b"), target(p.y, "c")}, p.folds);
    CHECK(c.mean == doctest::Approx(1.0));
  }
  SUBCASE("negated pair floors at zero") {
    const auto c = noise_ceiling({target(p.y, "a"), target(-p.y, "b")}, p.folds);
    CHECK(c.mean == 0.0);
  }
  SUBCASE("independent subjects") {
    std::vector<SaccadeTarget> ts;
    for (int s = 0; s < 4; ++s) ts.push_back(target(problem(50 + s).y, "s" + std::to_string(s)));
    const auto c = noise_ceiling(ts, p.folds);
    CHECK(c.mean < 0.02);
  }
  SUBCASE("one subject") {
    CHECK(error_kind_of([&] { noise_ceiling({target(p.y, "a")}, p.folds); }) == ErrorKind::TooFewSubjects);
  }
}

TEST_CASE("normalization and layer selection") {
  CHECK(normalize_r2(0.05, 0.25) == doctest::Approx(0.2));
  CHECK(normalize_r2(0.0, 0.3) == 0.0);
  CHECK(normalize_r2(0.25, 0.25) == 1.0);
  CHECK(error_kind_of([] { normalize_r2(0.1, 0.0); }) == ErrorKind::ZeroCeiling);
  CHECK(select_best_layer(std::vector<double>{0.1, 0.3, 0.2}) == 1);
  CHECK(select_best_layer(std::vector<double>{0.3, 0.3}) == 0);
  CHECK(select_best_layer(std::vector<double>{-0.4}) == 0);
}

TEST_CASE("vertex fits agree with per-vertex fits at the shared alpha") {
  auto p = problem(8, 3);
  BoldTargets b;
  b.subject = "s1";
  b.vertex_count = 3;
  b.pairs = p.index.size();
  b.mask = p.mask;
  b.y.resize(3 * b.pairs);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (std::uint32_t v = 0; v < 3; ++v)
    for (std::size_t r = 0; r < b.pairs; ++r)
      b.y[v * b.pairs + r] = static_cast<float>(v * p.X(static_cast<Eigen::Index>(r), v) + n01(rng));
  VertexLoaoOptions opt;
  opt.workers = 2;
  const auto res = evaluate_loao_vertices(p.X, b, p.folds, opt);
  REQUIRE(res.pooled_r.size() == 3);
  CHECK(res.pooled_r[2] > res.pooled_r[0]);
  for (std::uint32_t k = 0; k < 5; ++k) {
    std::vector<std::uint8_t> train(b.pairs);
    for (std::size_t r = 0; r < b.pairs; ++r) train[r] = p.folds.row_fold[r] != k;
    for (std::uint32_t v = 0; v < 3; ++v) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(b.pairs));
      for (std::size_t r = 0; r < b.pairs; ++r) y(static_cast<Eigen::Index>(r)) = b.at(v, r);
      const auto m = fit_ridge(p.X, y, train, res.alpha[k]);
      const double* c = res.coefficients(k, v);
      CHECK(c[0] == doctest::Approx(m.intercept).epsilon(1e-8));
      for (int h = 0; h < 3; ++h) CHECK(c[1 + h] == doctest::Approx(m.beta(h)).epsilon(1e-8));
    }
  }
}
