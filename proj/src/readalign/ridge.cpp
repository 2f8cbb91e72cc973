#include "readalign/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "readalign/error.hpp"
#include "readalign/metrics.hpp"
#include "readalign/parallel.hpp"

namespace readalign {
namespace {

// Column statistics of the training rows and the standardized design.
struct Design {
  Eigen::VectorXd mu;
  Eigen::VectorXd inv_sd;
  Eigen::MatrixXd Z;  // rows x H
};

Design standardize(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows, const RidgeOptions& opt) {
  const Eigen::Index H = X.cols();
  const auto n = static_cast<Eigen::Index>(rows.size());
  Design d;
  d.Z.resize(n, H);
  for (Eigen::Index i = 0; i < n; ++i) d.Z.row(i) = X.row(static_cast<Eigen::Index>(rows[i]));
  d.mu = Eigen::VectorXd::Zero(H);
  d.inv_sd = Eigen::VectorXd::Ones(H);
  if (opt.fit_intercept) {
    d.mu = d.Z.colwise().mean().transpose();
    d.Z.rowwise() -= d.mu.transpose();
  }
  if (opt.standardize) {
    for (Eigen::Index c = 0; c < H; ++c) {
      const double sd = std::sqrt(d.Z.col(c).squaredNorm() / static_cast<double>(n));
      d.inv_sd(c) = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
    d.Z = d.Z * d.inv_sd.asDiagonal();
  }
  return d;
}

// Standardizes arbitrary rows with an existing design's statistics.
Eigen::MatrixXd apply_design(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows, const Design& d) {
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) Z.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  Z.rowwise() -= d.mu.transpose();
  return Z * d.inv_sd.asDiagonal();
}

struct Eigensystem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd lambda;
};

Eigensystem eigensystem(const Eigen::MatrixXd& Z) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Z.transpose() * Z);
  return {es.eigenvectors(), es.eigenvalues().cwiseMax(0.0)};
}

double score(Metric metric, std::span<const double> obs, std::span<const double> pred) {
  return metric == Metric::R2 ? r2_score(obs, pred) : pearson_r(obs, pred);
}

std::size_t pick_alpha(const std::vector<double>& scores) {
  // Ties go to the larger alpha (stronger shrinkage).
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] >= scores[best]) best = k;
  return best;
}

std::vector<std::uint32_t> distinct_folds(const std::vector<std::size_t>& rows, const FoldSpec& folds) {
  std::vector<std::uint32_t> out;
  for (auto r : rows) out.push_back(folds.row_fold[r]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) fail(ErrorKind::InvalidArgument, "alpha grid is empty");
  for (double a : grid)
    if (!(a > 0) || !std::isfinite(a)) fail(ErrorKind::InvalidArgument, "alpha grid values must be positive");
}

}  // namespace

RidgeModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::uint8_t> mask,
                     double alpha, const RidgeOptions& options) {
  if (y.size() != X.rows()) fail(ErrorKind::InvalidArgument, "X and y have different row counts");
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(X.rows()))
    fail(ErrorKind::InvalidArgument, "mask length differs from row count");
  if (!(alpha >= 0) || !std::isfinite(alpha)) fail(ErrorKind::InvalidArgument, "alpha must be finite and >= 0");
  std::vector<std::size_t> rows;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (mask.empty() || mask[static_cast<std::size_t>(i)]) rows.push_back(static_cast<std::size_t>(i));
  if (rows.empty()) fail(ErrorKind::InvalidArgument, "no rows to fit");

  const Design d = standardize(X, rows, options);
  Eigen::VectorXd yt(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) yt(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
  const double ybar = options.fit_intercept ? yt.mean() : 0.0;
  yt.array() -= ybar;

  const Eigen::Index H = X.cols();
  Eigen::MatrixXd G = d.Z.transpose() * d.Z;
  G.diagonal().array() += alpha;
  const Eigen::VectorXd rhs = d.Z.transpose() * yt;
  Eigen::VectorXd b;
  if (alpha > 0) {
    b = G.llt().solve(rhs);
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
    lu.setThreshold(1e-12);
    if (lu.rank() < H) fail(ErrorKind::SingularSystem, "alpha = 0 with a rank-deficient design");
    b = lu.solve(rhs);
  }
  RidgeModel m;
  m.alpha = alpha;
  m.beta = d.inv_sd.cwiseProduct(b);
  m.intercept = ybar - d.mu.dot(m.beta);
  if (!m.beta.allFinite() || !std::isfinite(m.intercept))
    fail(ErrorKind::SingularSystem, "ridge solution is not finite");
  return m;
}

std::vector<double> alpha_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0) || !(hi >= lo) || n == 0) fail(ErrorKind::InvalidArgument, "invalid alpha grid bounds");
  if (n == 1) return {lo};
  std::vector<double> g(n);
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t k = 0; k < n; ++k)
    g[k] = std::pow(10.0, a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

FoldSpec FoldSpec::by_article(const PairIndex& index, std::uint32_t article_count) {
  FoldSpec f;
  f.fold_count = article_count;
  f.row_fold.resize(index.size());
  for (std::size_t p = 0; p < index.size(); ++p) f.row_fold[p] = index.article_of(p);
  return f;
}

AlphaSelection select_alpha_nested(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<std::size_t>& train_rows, const FoldSpec& folds,
                                   const std::vector<double>& grid, Metric metric) {
  check_grid(grid);
  AlphaSelection sel;
  sel.scores.assign(grid.size(), 0.0);
  if (train_rows.empty()) fail(ErrorKind::InvalidArgument, "no training rows for alpha selection");
  const double y0 = y(static_cast<Eigen::Index>(train_rows.front()));
  const bool constant = std::all_of(train_rows.begin(), train_rows.end(),
                                    [&](std::size_t r) { return y(static_cast<Eigen::Index>(r)) == y0; });
  if (constant) {
    sel.degenerate = true;
    sel.alpha = *std::max_element(grid.begin(), grid.end());
    return sel;
  }

  std::size_t used = 0;
  for (std::uint32_t inner : distinct_folds(train_rows, folds)) {
    std::vector<std::size_t> tr, te;
    for (auto r : train_rows) (folds.row_fold[r] == inner ? te : tr).push_back(r);
    if (tr.empty() || te.empty()) continue;
    const Design d = standardize(X, tr, {});
    const Eigensystem es = eigensystem(d.Z);
    Eigen::VectorXd yt(static_cast<Eigen::Index>(tr.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) yt(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(tr[i]));
    const double ybar = yt.mean();
    yt.array() -= ybar;
    const Eigen::VectorXd b = es.Q.transpose() * (d.Z.transpose() * yt);
    const Eigen::MatrixXd ZtQ = apply_design(X, te, d) * es.Q;
    std::vector<double> obs(te.size()), pred(te.size());
    for (std::size_t i = 0; i < te.size(); ++i) obs[i] = y(static_cast<Eigen::Index>(te[i]));
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const Eigen::VectorXd coef = b.array() / (es.lambda.array() + grid[k]);
      const Eigen::VectorXd p = ZtQ * coef;
      for (std::size_t i = 0; i < te.size(); ++i) pred[i] = ybar + p(static_cast<Eigen::Index>(i));
      sel.scores[k] += score(metric, obs, pred);
    }
    ++used;
  }
  if (used == 0) fail(ErrorKind::InvalidArgument, "nested alpha selection needs at least two training articles");
  for (auto& s : sel.scores) s /= static_cast<double>(used);
  sel.alpha = grid[pick_alpha(sel.scores)];
  return sel;
}

LoaoResult evaluate_loao(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::uint8_t> mask,
                         const FoldSpec& folds, const std::vector<double>& grid, Metric metric) {
  const auto P = static_cast<std::size_t>(X.rows());
  if (static_cast<std::size_t>(y.size()) != P || mask.size() != P || folds.row_fold.size() != P)
    fail(ErrorKind::InvalidArgument, "features, target, mask and folds disagree on the pair count");
  LoaoResult out;
  out.oof.assign(P, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::uint8_t> train_mask(P);
  for (std::uint32_t k = 0; k < folds.fold_count; ++k) {
    std::vector<std::size_t> train, test;
    for (std::size_t p = 0; p < P; ++p) {
      train_mask[p] = 0;
      if (!mask[p]) continue;
      if (folds.row_fold[p] == k) test.push_back(p);
      else {
        train.push_back(p);
        train_mask[p] = 1;
      }
    }
    if (test.empty()) fail(ErrorKind::EmptyTestFold, "fold " + std::to_string(k) + " has no observed test rows");
    FoldResult fr;
    fr.fold = k;
    const AlphaSelection sel = select_alpha_nested(X, y, train, folds, grid, metric);
    fr.alpha = sel.alpha;
    fr.degenerate = sel.degenerate;
    fr.model = fit_ridge(X, y, train_mask, fr.alpha);
    std::vector<double> obs, pred;
    for (auto p : test) {
      const double v = fr.model.predict(X.row(static_cast<Eigen::Index>(p)));
      out.oof[p] = v;
      obs.push_back(y(static_cast<Eigen::Index>(p)));
      pred.push_back(v);
    }
    fr.metric = score(metric, obs, pred);
    fr.n_test = test.size();
    out.folds.push_back(std::move(fr));
  }
  std::vector<double> obs, pred;
  for (std::size_t p = 0; p < P; ++p)
    if (mask[p]) {
      obs.push_back(y(static_cast<Eigen::Index>(p)));
      pred.push_back(out.oof[p]);
    }
  out.pooled = score(metric, obs, pred);
  double sum = 0;
  for (const auto& f : out.folds) sum += f.metric;
  out.mean_fold_metric = out.folds.empty() ? 0.0 : sum / static_cast<double>(out.folds.size());
  return out;
}

// ------------------------------------------------------------- vertices

double VertexLoaoResult::score() const {
  if (mean_fold_r.empty()) return 0.0;
  double s = 0;
  for (double v : mean_fold_r) s += v;
  return s / static_cast<double>(mean_fold_r.size());
}

std::vector<std::uint32_t> vertex_subsample(std::uint32_t vertex_count, std::size_t k) {
  std::vector<std::uint32_t> out;
  if (k == 0 || vertex_count == 0) return out;
  if (k >= vertex_count) {
    for (std::uint32_t v = 0; v < vertex_count; ++v) out.push_back(v);
    return out;
  }
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(static_cast<std::uint32_t>((2 * i + 1) * static_cast<std::size_t>(vertex_count) / (2 * k)));
  return out;
}

namespace {

// Training-row matrix of the selected vertices (rows x vertices).
Eigen::MatrixXd gather(const BoldTargets& Y, const std::vector<std::size_t>& rows, std::uint32_t v0,
                       std::uint32_t count) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), count);
  for (std::uint32_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < rows.size(); ++i) M(static_cast<Eigen::Index>(i), j) = Y.at(v0 + j, rows[i]);
  return M;
}

AlphaSelection select_alpha_vertices(const Eigen::MatrixXd& X, const BoldTargets& Y,
                                     const std::vector<std::size_t>& train, const FoldSpec& folds,
                                     const std::vector<double>& grid, const std::vector<std::uint32_t>& subsample) {
  AlphaSelection sel;
  sel.scores.assign(grid.size(), 0.0);
  const auto K = static_cast<Eigen::Index>(subsample.size());
  auto load = [&](const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), K);
    for (Eigen::Index j = 0; j < K; ++j)
      for (std::size_t i = 0; i < rows.size(); ++i)
        M(static_cast<Eigen::Index>(i), j) = Y.at(subsample[static_cast<std::size_t>(j)], rows[i]);
    return M;
  };
  {
    const Eigen::MatrixXd Yt = load(train);
    const bool constant = ((Yt.colwise().maxCoeff() - Yt.colwise().minCoeff()).array() == 0.0).all();
    if (constant) {
      sel.degenerate = true;
      sel.alpha = *std::max_element(grid.begin(), grid.end());
      return sel;
    }
  }
  std::size_t used = 0;
  for (std::uint32_t inner : distinct_folds(train, folds)) {
    std::vector<std::size_t> tr, te;
    for (auto r : train) (folds.row_fold[r] == inner ? te : tr).push_back(r);
    if (tr.empty() || te.empty()) continue;
    const Design d = standardize(X, tr, {});
    const Eigensystem es = eigensystem(d.Z);
    Eigen::MatrixXd Ytr = load(tr);
    Ytr.rowwise() -= Ytr.colwise().mean();
    const Eigen::MatrixXd B = es.Q.transpose() * (d.Z.transpose() * Ytr);
    const Eigen::MatrixXd ZtQ = apply_design(X, te, d) * es.Q;
    const Eigen::MatrixXd Yte = load(te);
    std::vector<double> obs(te.size()), pred(te.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const Eigen::MatrixXd coef = (es.lambda.array() + grid[k]).inverse().matrix().asDiagonal() * B;
      const Eigen::MatrixXd Pr = ZtQ * coef;
      double sum = 0;
      for (Eigen::Index j = 0; j < K; ++j) {
        for (std::size_t i = 0; i < te.size(); ++i) {
          obs[i] = Yte(static_cast<Eigen::Index>(i), j);
          pred[i] = Pr(static_cast<Eigen::Index>(i), j);
        }
        sum += pearson_r(obs, pred);
      }
      sel.scores[k] += sum / static_cast<double>(K);
    }
    ++used;
  }
  if (used == 0) fail(ErrorKind::InvalidArgument, "nested alpha selection needs at least two training articles");
  for (auto& s : sel.scores) s /= static_cast<double>(used);
  sel.alpha = grid[pick_alpha(sel.scores)];
  return sel;
}

}  // namespace

VertexLoaoResult evaluate_loao_vertices(const Eigen::MatrixXd& X, const BoldTargets& Y, const FoldSpec& folds,
                                        const VertexLoaoOptions& options) {
  check_grid(options.grid);
  const auto P = static_cast<std::size_t>(X.rows());
  if (Y.pairs != P || Y.mask.size() != P || folds.row_fold.size() != P)
    fail(ErrorKind::InvalidArgument, "features, BOLD targets and folds disagree on the pair count");
  const std::uint32_t V = Y.vertex_count;
  const auto H = static_cast<std::uint32_t>(X.cols());
  const std::uint32_t F = folds.fold_count;
  VertexLoaoResult out;
  out.vertex_count = V;
  out.fold_count = F;
  out.heads = H;
  out.alpha.resize(F);
  out.degenerate.resize(F);
  out.n_test.resize(F);
  out.coef.assign(static_cast<std::size_t>(F) * V * (1 + H), 0.0);
  out.fold_r.assign(static_cast<std::size_t>(F) * V, 0.0);
  out.pooled_r.assign(V, 0.0);
  out.mean_fold_r.assign(V, 0.0);

  struct FoldWork {
    std::vector<std::size_t> train, test;
    Design design;
    Eigen::MatrixXd M;  // (Z'Z + alpha I)^-1
  };
  std::vector<FoldWork> work(F);
  const auto subsample = vertex_subsample(V, options.alpha_subsample);
  for (std::uint32_t k = 0; k < F; ++k) {
    auto& w = work[k];
    for (std::size_t p = 0; p < P; ++p) {
      if (!Y.mask[p]) continue;
      (folds.row_fold[p] == k ? w.test : w.train).push_back(p);
    }
    if (w.test.empty()) fail(ErrorKind::EmptyTestFold, "fold " + std::to_string(k) + " has no observed test rows");
    if (w.train.empty()) fail(ErrorKind::InvalidArgument, "fold " + std::to_string(k) + " has no training rows");
    const AlphaSelection sel = select_alpha_vertices(X, Y, w.train, folds, options.grid, subsample);
    out.alpha[k] = sel.alpha;
    out.degenerate[k] = sel.degenerate;
    out.n_test[k] = w.test.size();
    w.design = standardize(X, w.train, {});
    const Eigensystem es = eigensystem(w.design.Z);
    w.M = es.Q * (es.lambda.array() + sel.alpha).inverse().matrix().asDiagonal() * es.Q.transpose();
  }

  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t n_chunks = (V + chunk - 1) / chunk;
  parallel_for(n_chunks, options.workers, [&](std::size_t c) {
    const auto v0 = static_cast<std::uint32_t>(c * chunk);
    const auto nc = static_cast<std::uint32_t>(std::min<std::size_t>(chunk, V - v0));
    Eigen::MatrixXd oof = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(P), nc);
    std::vector<double> obs, pred;
    for (std::uint32_t k = 0; k < F; ++k) {
      const auto& w = work[k];
      Eigen::MatrixXd Yt = gather(Y, w.train, v0, nc);
      const Eigen::RowVectorXd ybar = Yt.colwise().mean();
      Yt.rowwise() -= ybar;
      const Eigen::MatrixXd Bstd = w.M * (w.design.Z.transpose() * Yt);
      const Eigen::MatrixXd beta = w.design.inv_sd.asDiagonal() * Bstd;  // H x nc
      const Eigen::RowVectorXd intercept = ybar - w.design.mu.transpose() * beta;
      for (std::uint32_t j = 0; j < nc; ++j) {
        double* dst = out.coef.data() + (static_cast<std::size_t>(k) * V + v0 + j) * (1 + H);
        dst[0] = intercept(j);
        for (std::uint32_t h = 0; h < H; ++h) dst[1 + h] = beta(h, j);
      }
      Eigen::MatrixXd Xte(static_cast<Eigen::Index>(w.test.size()), H);
      for (std::size_t i = 0; i < w.test.size(); ++i)
        Xte.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(w.test[i]));
      Eigen::MatrixXd Pr = Xte * beta;
      Pr.rowwise() += intercept;
      obs.resize(w.test.size());
      pred.resize(w.test.size());
      for (std::uint32_t j = 0; j < nc; ++j) {
        for (std::size_t i = 0; i < w.test.size(); ++i) {
          obs[i] = Y.at(v0 + j, w.test[i]);
          pred[i] = Pr(static_cast<Eigen::Index>(i), j);
          oof(static_cast<Eigen::Index>(w.test[i]), j) = pred[i];
        }
        out.fold_r[static_cast<std::size_t>(k) * V + v0 + j] = pearson_r(obs, pred);
      }
    }
    for (std::uint32_t j = 0; j < nc; ++j) {
      obs.clear();
      pred.clear();
      for (std::size_t p = 0; p < P; ++p)
        if (Y.mask[p]) {
          obs.push_back(Y.at(v0 + j, p));
          pred.push_back(oof(static_cast<Eigen::Index>(p), j));
        }
      out.pooled_r[v0 + j] = pearson_r(obs, pred);
      double s = 0;
      for (std::uint32_t k = 0; k < F; ++k) s += out.fold_r[static_cast<std::size_t>(k) * V + v0 + j];
      out.mean_fold_r[v0 + j] = F ? s / F : 0.0;
    }
  });
  return out;
}

std::vector<double> predict_out_of_fold(const Eigen::MatrixXd& X, std::span<const std::uint8_t> mask,
                                        const FoldSpec& folds, const std::vector<const double*>& fold_coefficients) {
  const auto P = static_cast<std::size_t>(X.rows());
  std::vector<double> out(P, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t p = 0; p < P; ++p) {
    if (!mask[p]) continue;
    const double* c = fold_coefficients.at(folds.row_fold[p]);
    double v = c[0];
    for (Eigen::Index h = 0; h < X.cols(); ++h) v += c[1 + h] * X(static_cast<Eigen::Index>(p), h);
    out[p] = v;
  }
  return out;
}

// ------------------------------------------------------------ ceiling

NoiseCeiling noise_ceiling(const std::vector<SaccadeTarget>& targets, const FoldSpec& folds) {
  if (targets.size() < 2) fail(ErrorKind::TooFewSubjects, "noise ceiling needs at least two subjects");
  const std::size_t P = folds.row_fold.size();
  for (const auto& t : targets)
    if (t.y.size() != P || t.mask.size() != P)
      fail(ErrorKind::InvalidArgument, "target for " + t.subject + " does not match the pair count");
  NoiseCeiling out;
  double floored_sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::vector<double> x(P, 0.0);
    std::vector<std::uint8_t> valid(P, 0);
    for (std::size_t p = 0; p < P; ++p) {
      if (!targets[i].mask[p]) continue;
      double s = 0;
      std::size_t n = 0;
      for (std::size_t j = 0; j < targets.size(); ++j)
        if (j != i && targets[j].mask[p]) {
          s += targets[j].y[p];
          ++n;
        }
      if (n == 0) continue;
      x[p] = s / static_cast<double>(n);
      valid[p] = 1;
    }
    std::vector<double> pred(P, 0.0);
    for (std::uint32_t k = 0; k < folds.fold_count; ++k) {
      double mx = 0, my = 0;
      std::size_t n = 0;
      for (std::size_t p = 0; p < P; ++p)
        if (valid[p] && folds.row_fold[p] != k) {
          mx += x[p];
          my += targets[i].y[p];
          ++n;
        }
      if (n == 0) continue;
      mx /= static_cast<double>(n);
      my /= static_cast<double>(n);
      double sxy = 0, sxx = 0;
      for (std::size_t p = 0; p < P; ++p)
        if (valid[p] && folds.row_fold[p] != k) {
          sxy += (x[p] - mx) * (targets[i].y[p] - my);
          sxx += (x[p] - mx) * (x[p] - mx);
        }
      // An anti-correlated group mean is not evidence of reliability.
      const double slope = sxx > 0 ? std::max(0.0, sxy / sxx) : 0.0;
      for (std::size_t p = 0; p < P; ++p)
        if (valid[p] && folds.row_fold[p] == k) pred[p] = my + slope * (x[p] - mx);
    }
    std::vector<double> obs, fit;
    for (std::size_t p = 0; p < P; ++p)
      if (valid[p]) {
        obs.push_back(targets[i].y[p]);
        fit.push_back(pred[p]);
      }
    const double r2 = r2_score(obs, fit);
    out.per_subject.push_back(r2);
    floored_sum += std::max(0.0, r2);
  }
  out.mean = floored_sum / static_cast<double>(targets.size());
  return out;
}

double normalize_r2(double r2_model, double r2_ceiling) {
  if (!(r2_ceiling > 0)) fail(ErrorKind::ZeroCeiling, "noise ceiling is not positive");
  return r2_model / r2_ceiling;
}

std::uint32_t select_best_layer(std::span<const double> layer_scores) {
  if (layer_scores.empty()) fail(ErrorKind::InvalidArgument, "no layer scores");
  std::uint32_t best = 0;
  for (std::uint32_t j = 1; j < layer_scores.size(); ++j) {
    const double s = layer_scores[j];
    const double b = layer_scores[best];
    if (!std::isnan(s) && (std::isnan(b) || s > b)) best = j;
  }
  return best;
}

}  // namespace readalign
