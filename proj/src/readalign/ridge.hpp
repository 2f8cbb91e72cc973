#pragma once

// Ridge encoding models under leave-one-article-out cross-validation.
//
// Features are centered and scaled with training-fold statistics only; the
// intercept is not penalized. Alpha is chosen by inner leave-one-article-out
// over the training articles. Pooled metrics are computed on the concatenated
// out-of-fold predictions.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "readalign/attention.hpp"
#include "readalign/targets.hpp"

namespace readalign {

struct RidgeOptions {
  bool fit_intercept = true;
  bool standardize = true;
};

// Coefficients are on the original feature scale.
struct RidgeModel {
  std::uint32_t layer = 0;
  Eigen::VectorXd beta;
  double intercept = 0;
  double alpha = 0;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return intercept + x.dot(beta); }
};

// Minimizes ||y - X beta - b||^2 + alpha ||beta||^2 over rows with mask != 0
// (an empty mask selects every row). alpha = 0 is accepted and raises
// SingularSystem when the system is rank-deficient.
RidgeModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::uint8_t> mask,
                     double alpha, const RidgeOptions& options = {});

// n points log-uniform on [lo, hi], endpoints exact. Defaults: 20 on [10, 1000].
std::vector<double> alpha_grid(double lo = 10.0, double hi = 1000.0, std::size_t n = 20);

enum class Metric { R2, Pearson };

struct FoldSpec {
  std::uint32_t fold_count = 0;
  std::vector<std::uint32_t> row_fold;  // fold (= article index) of each pair row

  static FoldSpec by_article(const PairIndex& index, std::uint32_t article_count);
};

struct AlphaSelection {
  double alpha = 0;
  bool degenerate = false;  // constant training target; largest alpha returned
  std::vector<double> scores;  // mean inner score per grid point
};

// `train_rows` are pair rows; inner folds are the distinct articles among them.
AlphaSelection select_alpha_nested(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<std::size_t>& train_rows, const FoldSpec& folds,
                                   const std::vector<double>& grid, Metric metric);

struct FoldResult {
  std::uint32_t fold = 0;
  double alpha = 0;
  bool degenerate = false;
  RidgeModel model;
  double metric = 0;
  std::size_t n_test = 0;
};

struct LoaoResult {
  std::vector<FoldResult> folds;
  std::vector<double> oof;  // P; NaN where masked out
  double pooled = 0;
  double mean_fold_metric = 0;
};

LoaoResult evaluate_loao(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::uint8_t> mask,
                         const FoldSpec& folds, const std::vector<double>& grid, Metric metric);

struct VertexLoaoOptions {
  std::vector<double> grid = alpha_grid();
  std::size_t alpha_subsample = 512;
  unsigned workers = 1;
  std::size_t chunk = 256;  // vertices per task; fixed so results do not depend on workers
};

struct VertexLoaoResult {
  std::uint32_t vertex_count = 0;
  std::uint32_t fold_count = 0;
  std::uint32_t heads = 0;
  std::vector<double> alpha;               // per fold
  std::vector<std::uint8_t> degenerate;    // per fold
  std::vector<std::size_t> n_test;         // per fold
  std::vector<double> coef;                // fold x V x (1 + heads): intercept, then betas
  std::vector<double> fold_r;              // fold x V
  std::vector<double> pooled_r;            // V
  std::vector<double> mean_fold_r;         // V

  // Layer-selection score: mean over vertices of the mean per-fold r.
  double score() const;
  const double* coefficients(std::uint32_t fold, std::uint32_t v) const {
    return coef.data() + (static_cast<std::size_t>(fold) * vertex_count + v) * (1 + heads);
  }
};

// One shared alpha per fold, chosen on an evenly spaced vertex subsample; one
// factorization per fold serves every vertex.
VertexLoaoResult evaluate_loao_vertices(const Eigen::MatrixXd& X, const BoldTargets& Y, const FoldSpec& folds,
                                        const VertexLoaoOptions& options);

// Evenly spaced vertex subsample of at most k vertices.
std::vector<std::uint32_t> vertex_subsample(std::uint32_t vertex_count, std::size_t k);

// Out-of-fold prediction for every masked-in row (NaN elsewhere) from stored
// per-fold coefficients laid out as fold x (1 + heads).
std::vector<double> predict_out_of_fold(const Eigen::MatrixXd& X, std::span<const std::uint8_t> mask,
                                        const FoldSpec& folds, const std::vector<const double*>& fold_coefficients);

struct NoiseCeiling {
  std::vector<double> per_subject;  // pooled out-of-fold R², unfloored
  double mean = 0;                  // mean of per-subject values floored at 0
};

// Each subject is predicted from the mean of the other subjects (intercept +
// non-negative slope fit on training articles).
NoiseCeiling noise_ceiling(const std::vector<SaccadeTarget>& targets, const FoldSpec& folds);

double normalize_r2(double r2_model, double r2_ceiling);

// Argmax of the per-layer scores; ties go to the lowest layer.
std::uint32_t select_best_layer(std::span<const double> layer_scores);

}  // namespace readalign
