#pragma once

// Hypothesis tests: Fisher z, paired t-tests, Benjamini-Hochberg, sign-flip
// and prediction permutations, surface cluster-mass permutation and
// subject-level consistency.
//
// Permutation k draws from a counter-based stream keyed by (seed, test id),
// so the null is identical whatever the worker count.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "readalign/corpus.hpp"

namespace readalign {

enum class Sidedness { TwoSided, Greater, Less };

const char* to_string(Sidedness s) noexcept;

double fisher_z(double r);

struct TTestResult {
  double t = 0;
  double df = 0;
  double p = 1;
  double mean = 0;  // mean difference
  bool zero_variance = false;
};

TTestResult one_sample_t_test(std::span<const double> d, Sidedness sidedness = Sidedness::TwoSided);
// Tests a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          Sidedness sidedness = Sidedness::TwoSided);

// Student-t quantile, e.g. t_quantile(0.99, 19).
double t_quantile(double probability, double df);

struct FdrResult {
  std::vector<std::uint8_t> rejected;
  std::vector<double> adjusted;
};

FdrResult bh_fdr(std::span<const double> p, double q);

inline constexpr std::size_t kExactSignFlipMax = 12;

struct PermutationOptions {
  std::size_t n_perm = 10000;
  std::uint64_t seed = 0;
  std::string test_id;  // hashed into the stream key
  unsigned workers = 1;
  std::size_t exact_max = kExactSignFlipMax;  // sign flips enumerate exactly up to this n
};

struct SignFlipResult {
  double observed = 0;  // mean
  double p = 1;
  bool exact = false;
  std::size_t n_null = 0;
};

// Exact enumeration of all 2^n sign patterns when n <= exact_max (12) (p = count / 2^n),
// otherwise n_perm random patterns with p = (1 + count) / (1 + n_perm).
SignFlipResult sign_flip_permutation(std::span<const double> values, Sidedness sidedness,
                                     const PermutationOptions& options);

struct PredictionPermutationResult {
  double r = 0;
  double p = 1;
  bool zero_variance = false;
};

// Null of Pearson r under random permutation of the predictions, two-sided
// on magnitude.
PredictionPermutationResult single_model_permutation(std::span<const double> predicted,
                                                     std::span<const double> observed,
                                                     const PermutationOptions& options);

struct Cluster {
  std::vector<std::uint32_t> vertices;  // ascending
  double mass = 0;                      // sum of |t| over members
  int sign = 1;
  double p = 1;
  bool significant = false;
};

// Connected components of suprathreshold vertices. Greater: t > threshold;
// Less: t < -threshold; TwoSided: both, positive and negative kept apart.
std::vector<Cluster> find_clusters(std::span<const double> t_map, double threshold, const MeshAdjacency& mesh,
                                   Sidedness sidedness);

struct ClusterOptions {
  double cluster_forming_p = 0.01;
  double alpha = 0.05;
  Sidedness sidedness = Sidedness::Greater;
  PermutationOptions perm;
};

struct ClusterResult {
  std::vector<double> t_map;
  std::vector<double> mean_map;
  double threshold = 0;
  std::vector<Cluster> clusters;  // sorted by decreasing mass
  std::vector<double> null_max;   // per permutation (or sign pattern)
  bool exact = false;

  double null_quantile(double q) const;
};

// maps: subjects x vertices. t per vertex is the one-sample t of the column.
ClusterResult cluster_mass_permutation(const Eigen::MatrixXd& maps, const MeshAdjacency& mesh,
                                       const ClusterOptions& options);

// Vertex-wise one-sample t map (0 where the column has zero variance).
std::vector<double> vertex_t_map(const Eigen::MatrixXd& maps);

struct ConsistencyResult {
  double pearson = 0;
  double spearman = 0;
  double p = 1;  // two-sided, for Pearson
  std::size_t n = 0;
};

ConsistencyResult subject_consistency(std::span<const double> a, std::span<const double> b);

// 1-based ranks with ties averaged.
std::vector<double> average_ranks(std::span<const double> v);

double median(std::vector<double> v);

}  // namespace readalign
