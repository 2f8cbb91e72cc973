#include "readalign/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "readalign/error.hpp"
#include "readalign/hashing.hpp"
#include "readalign/metrics.hpp"
#include "readalign/parallel.hpp"
#include "readalign/rng.hpp"

namespace readalign {

const char* to_string(Sidedness s) noexcept {
  switch (s) {
    case Sidedness::TwoSided: return "two-sided";
    case Sidedness::Greater: return "greater";
    case Sidedness::Less: return "less";
  }
  return "?";
}

double fisher_z(double r) {
  if (!(std::abs(r) < 1.0)) fail(ErrorKind::OutOfDomain, "Fisher z needs |r| < 1, got " + std::to_string(r));
  return std::atanh(r);
}

namespace {

double t_tail_p(double t, double df, Sidedness s) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) {
    switch (s) {
      case Sidedness::TwoSided: return 0.0;
      case Sidedness::Greater: return t > 0 ? 0.0 : 1.0;
      case Sidedness::Less: return t < 0 ? 0.0 : 1.0;
    }
  }
  const boost::math::students_t dist(df);
  switch (s) {
    case Sidedness::TwoSided: return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
    case Sidedness::Greater: return boost::math::cdf(boost::math::complement(dist, t));
    case Sidedness::Less: return boost::math::cdf(dist, t);
  }
  return 1.0;
}

}  // namespace

TTestResult one_sample_t_test(std::span<const double> d, Sidedness sidedness) {
  const std::size_t n = d.size();
  if (n < 2) fail(ErrorKind::InvalidArgument, "t-test needs at least two observations");
  for (double v : d)
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "t-test input is not finite");
  TTestResult r;
  r.df = static_cast<double>(n - 1);
  r.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : d) ss += (v - r.mean) * (v - r.mean);
  const double sd = std::sqrt(ss / r.df);
  if (!(sd > 0)) {
    r.zero_variance = true;
    if (r.mean == 0.0) {
      r.t = 0;
      r.p = 1;
    } else {
      r.t = r.mean > 0 ? INFINITY : -INFINITY;
      r.p = t_tail_p(r.t, r.df, sidedness);
    }
    return r;
  }
  r.t = r.mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = t_tail_p(r.t, r.df, sidedness);
  return r;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, Sidedness sidedness) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidArgument, "paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return one_sample_t_test(d, sidedness);
}

double t_quantile(double probability, double df) {
  if (!(probability > 0 && probability < 1) || !(df > 0))
    fail(ErrorKind::InvalidArgument, "t quantile needs 0 < p < 1 and df > 0");
  return boost::math::quantile(boost::math::students_t(df), probability);
}

FdrResult bh_fdr(std::span<const double> p, double q) {
  const std::size_t m = p.size();
  FdrResult out;
  out.rejected.assign(m, 0);
  out.adjusted.assign(m, 1.0);
  if (m == 0) return out;
  for (double v : p)
    if (!(v >= 0 && v <= 1)) fail(ErrorKind::InvalidArgument, "p-values must lie in [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::size_t k_max = 0;
  for (std::size_t k = 1; k <= m; ++k)
    if (p[order[k - 1]] <= static_cast<double>(k) * q / static_cast<double>(m)) k_max = k;
  for (std::size_t k = 0; k < k_max; ++k) out.rejected[order[k]] = 1;
  double running = 1.0;
  for (std::size_t k = m; k >= 1; --k) {
    running = std::min(running, p[order[k - 1]] * static_cast<double>(m) / static_cast<double>(k));
    out.adjusted[order[k - 1]] = running;
  }
  return out;
}

namespace {

bool exceeds(double null_value, double observed, Sidedness s, double eps) {
  switch (s) {
    case Sidedness::Greater: return null_value >= observed - eps;
    case Sidedness::Less: return null_value <= observed + eps;
    case Sidedness::TwoSided: return std::abs(null_value) >= std::abs(observed) - eps;
  }
  return false;
}

// Counts over [0, n) split into fixed blocks; integer totals make the result
// independent of scheduling.
template <class Fn>
std::size_t parallel_count(std::size_t n, unsigned workers, Fn&& count_one) {
  constexpr std::size_t kBlock = 1024;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<std::size_t> partial(blocks, 0);
  parallel_for(blocks, workers, [&](std::size_t b) {
    std::size_t c = 0;
    for (std::size_t k = b * kBlock; k < std::min(n, (b + 1) * kBlock); ++k) c += count_one(k) ? 1 : 0;
    partial[b] = c;
  });
  return std::accumulate(partial.begin(), partial.end(), std::size_t{0});
}

CounterRng make_rng(const PermutationOptions& o) { return CounterRng(o.seed, fnv1a64(o.test_id)); }

}  // namespace

SignFlipResult sign_flip_permutation(std::span<const double> values, Sidedness sidedness,
                                     const PermutationOptions& options) {
  const std::size_t n = values.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "sign-flip test needs at least one value");
  if (options.n_perm < 1) fail(ErrorKind::InvalidArgument, "n_perm must be >= 1");
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "sign-flip input is not finite");
  SignFlipResult r;
  const double obs = std::accumulate(values.begin(), values.end(), 0.0);
  double scale = 0;
  for (double v : values) scale += std::abs(v);
  const double eps = 1e-12 * scale;
  r.observed = obs / static_cast<double>(n);

  auto signed_sum = [&](auto&& sign_of) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += sign_of(i) ? -values[i] : values[i];
    return s;
  };
  if (n <= std::min(options.exact_max, kExactSignFlipMax)) {
    const std::size_t patterns = std::size_t{1} << n;
    const std::size_t count = parallel_count(patterns, options.workers, [&](std::size_t k) {
      return exceeds(signed_sum([&](std::size_t i) { return (k >> i) & 1u; }), obs, sidedness, eps);
    });
    r.exact = true;
    r.n_null = patterns;
    r.p = static_cast<double>(count) / static_cast<double>(patterns);
    return r;
  }
  const CounterRng rng = make_rng(options);
  const std::size_t count = parallel_count(options.n_perm, options.workers, [&](std::size_t k) {
    auto seq = rng.sequence(k);
    std::uint64_t bits = 0;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) bits = seq.next();
      s += ((bits >> (i % 64)) & 1u) ? -values[i] : values[i];
    }
    return exceeds(s, obs, sidedness, eps);
  });
  r.n_null = options.n_perm;
  r.p = static_cast<double>(1 + count) / static_cast<double>(1 + options.n_perm);
  return r;
}

PredictionPermutationResult single_model_permutation(std::span<const double> predicted,
                                                     std::span<const double> observed,
                                                     const PermutationOptions& options) {
  const std::size_t n = predicted.size();
  if (n != observed.size()) fail(ErrorKind::InvalidArgument, "predicted and observed differ in length");
  if (n < 3) fail(ErrorKind::InvalidArgument, "prediction permutation needs at least three values");
  if (options.n_perm < 1) fail(ErrorKind::InvalidArgument, "n_perm must be >= 1");
  PredictionPermutationResult r;
  auto centered = [n](std::span<const double> v, double& norm) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    std::vector<double> c(n);
    norm = 0;
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = v[i] - mean;
      norm += c[i] * c[i];
    }
    norm = std::sqrt(norm);
    return c;
  };
  double np = 0, no = 0;
  const auto pc = centered(predicted, np);
  const auto oc = centered(observed, no);
  if (!(np > 0) || !(no > 0)) {
    r.zero_variance = true;
    r.p = 1.0;
    return r;
  }
  double dot = 0;
  for (std::size_t i = 0; i < n; ++i) dot += pc[i] * oc[i];
  const double denom = np * no;
  r.r = dot / denom;
  const double threshold = std::abs(dot) - 1e-12 * denom;
  const CounterRng rng = make_rng(options);
  const std::size_t count = parallel_count(options.n_perm, options.workers, [&](std::size_t k) {
    auto seq = rng.sequence(k);
    std::vector<double> perm(pc);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[seq.below(i + 1)]);
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += perm[i] * oc[i];
    return std::abs(d) >= threshold;
  });
  r.p = static_cast<double>(1 + count) / static_cast<double>(1 + options.n_perm);
  return r;
}

// ------------------------------------------------------------- clusters

namespace {

struct DisjointSet {
  std::vector<std::uint32_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  void reset() { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// -1, 0, +1 membership of each vertex for the requested tail(s).
inline int supra_sign(double t, double thr, Sidedness s) {
  if ((s == Sidedness::Greater || s == Sidedness::TwoSided) && t > thr) return 1;
  if ((s == Sidedness::Less || s == Sidedness::TwoSided) && t < -thr) return -1;
  return 0;
}

double max_cluster_mass(std::span<const double> t, double thr, const MeshAdjacency& mesh, Sidedness s,
                        DisjointSet& ds, std::vector<int>& sign, std::vector<double>& mass) {
  const std::size_t V = t.size();
  ds.reset();
  for (std::size_t v = 0; v < V; ++v) sign[v] = supra_sign(t[v], thr, s);
  for (auto [i, j] : mesh.edges)
    if (sign[i] != 0 && sign[i] == sign[j]) ds.unite(i, j);
  std::fill(mass.begin(), mass.end(), 0.0);
  double best = 0;
  for (std::uint32_t v = 0; v < V; ++v)
    if (sign[v] != 0) {
      const auto root = ds.find(v);
      mass[root] += std::abs(t[v]);
    }
  for (std::size_t v = 0; v < V; ++v) best = std::max(best, mass[v]);
  return best;
}

void t_from_moments(const Eigen::Ref<const Eigen::RowVectorXd>& sums, const Eigen::RowVectorXd& sumsq, double n,
                    std::vector<double>& t) {
  for (Eigen::Index v = 0; v < sums.size(); ++v) {
    const double mean = sums(v) / n;
    const double var = (sumsq(v) - n * mean * mean) / (n - 1);
    t[static_cast<std::size_t>(v)] = var > 1e-300 ? mean / std::sqrt(var / n) : 0.0;
  }
}

}  // namespace

std::vector<Cluster> find_clusters(std::span<const double> t_map, double threshold, const MeshAdjacency& mesh,
                                   Sidedness sidedness) {
  if (t_map.size() != mesh.vertex_count)
    fail(ErrorKind::InvalidArgument, "statistic map length differs from the mesh vertex count");
  DisjointSet ds(t_map.size());
  std::vector<int> sign(t_map.size());
  for (std::size_t v = 0; v < t_map.size(); ++v) sign[v] = supra_sign(t_map[v], threshold, sidedness);
  for (auto [i, j] : mesh.edges)
    if (sign[i] != 0 && sign[i] == sign[j]) ds.unite(i, j);
  std::map<std::uint32_t, std::size_t> by_root;
  std::vector<Cluster> out;
  for (std::uint32_t v = 0; v < t_map.size(); ++v) {
    if (sign[v] == 0) continue;
    auto [it, inserted] = by_root.try_emplace(ds.find(v), out.size());
    if (inserted) out.push_back(Cluster{{}, 0.0, sign[v], 1.0, false});
    out[it->second].vertices.push_back(v);
    out[it->second].mass += std::abs(t_map[v]);
  }
  return out;
}

std::vector<double> vertex_t_map(const Eigen::MatrixXd& maps) {
  const double n = static_cast<double>(maps.rows());
  std::vector<double> t(static_cast<std::size_t>(maps.cols()));
  const Eigen::RowVectorXd sums = maps.colwise().sum();
  const Eigen::RowVectorXd sumsq = maps.array().square().matrix().colwise().sum();
  t_from_moments(sums, sumsq, n, t);
  return t;
}

double ClusterResult::null_quantile(double q) const {
  if (null_max.empty()) return 0.0;
  std::vector<double> s(null_max);
  std::sort(s.begin(), s.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(s.size())));
  return s[std::min(s.size() - 1, k == 0 ? 0 : k - 1)];
}

ClusterResult cluster_mass_permutation(const Eigen::MatrixXd& maps, const MeshAdjacency& mesh,
                                       const ClusterOptions& options) {
  const auto n = static_cast<std::size_t>(maps.rows());
  const auto V = static_cast<std::size_t>(maps.cols());
  if (V == 0) fail(ErrorKind::EmptyMap, "statistic map has no vertices");
  if (n < 2) fail(ErrorKind::TooFewSubjects, "cluster test needs at least two subjects");
  if (V != mesh.vertex_count) fail(ErrorKind::InvalidArgument, "subject maps do not match the mesh vertex count");
  if (options.perm.n_perm < 1) fail(ErrorKind::InvalidArgument, "n_perm must be >= 1");
  if (!maps.allFinite()) fail(ErrorKind::InvalidArgument, "subject maps contain non-finite values");

  ClusterResult res;
  const double df = static_cast<double>(n - 1);
  const double tail = options.sidedness == Sidedness::TwoSided ? options.cluster_forming_p / 2
                                                                : options.cluster_forming_p;
  res.threshold = t_quantile(1.0 - tail, df);
  res.t_map = vertex_t_map(maps);
  res.mean_map.resize(V);
  for (std::size_t v = 0; v < V; ++v) res.mean_map[v] = maps.col(static_cast<Eigen::Index>(v)).mean();
  res.clusters = find_clusters(res.t_map, res.threshold, mesh, options.sidedness);

  const Eigen::RowVectorXd sumsq = maps.array().square().matrix().colwise().sum();
  res.exact = n <= std::min(options.perm.exact_max, kExactSignFlipMax);
  const std::size_t total = res.exact ? (std::size_t{1} << n) : options.perm.n_perm;
  res.null_max.assign(total, 0.0);
  const CounterRng rng = make_rng(options.perm);
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (total + kBlock - 1) / kBlock;
  parallel_for(blocks, options.perm.workers, [&](std::size_t b) {
    const std::size_t k0 = b * kBlock;
    const std::size_t nb = std::min(kBlock, total - k0);
    Eigen::MatrixXd S(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < nb; ++r) {
      const std::size_t k = k0 + r;
      if (res.exact) {
        for (std::size_t i = 0; i < n; ++i) S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = ((k >> i) & 1u) ? -1.0 : 1.0;
      } else {
        auto seq = rng.sequence(k);
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i % 64 == 0) bits = seq.next();
          S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = ((bits >> (i % 64)) & 1u) ? -1.0 : 1.0;
        }
      }
    }
    const Eigen::MatrixXd sums = S * maps;  // nb x V
    DisjointSet ds(V);
    std::vector<int> sign(V);
    std::vector<double> mass(V), t(V);
    for (std::size_t r = 0; r < nb; ++r) {
      t_from_moments(sums.row(static_cast<Eigen::Index>(r)), sumsq, static_cast<double>(n), t);
      res.null_max[k0 + r] = max_cluster_mass(t, res.threshold, mesh, options.sidedness, ds, sign, mass);
    }
  });

  for (auto& c : res.clusters) {
    std::size_t count = 0;
    const double eps = 1e-12 * c.mass;
    for (double m : res.null_max) count += m >= c.mass - eps;
    c.p = res.exact ? static_cast<double>(count) / static_cast<double>(total)
                    : static_cast<double>(1 + count) / static_cast<double>(1 + total);
    c.significant = c.p <= options.alpha;
  }
  std::stable_sort(res.clusters.begin(), res.clusters.end(),
                   [](const Cluster& a, const Cluster& b) { return a.mass > b.mass; });
  return res;
}

// ---------------------------------------------------------- consistency

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

ConsistencyResult subject_consistency(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::InvalidArgument, "score vectors differ in length");
  if (a.size() < 3) fail(ErrorKind::InvalidArgument, "consistency needs at least three subjects");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(a) || constant(b)) fail(ErrorKind::ZeroVariance, "a score vector has zero variance");
  ConsistencyResult r;
  r.n = a.size();
  r.pearson = pearson_r(a, b);
  const auto ra = average_ranks(a), rb = average_ranks(b);
  r.spearman = pearson_r(ra, rb);
  const double df = static_cast<double>(r.n - 2);
  if (std::abs(r.pearson) >= 1.0) {
    r.p = 0.0;
  } else {
    const double t = r.pearson * std::sqrt(df / (1.0 - r.pearson * r.pearson));
    r.p = t_tail_p(t, df, Sidedness::TwoSided);
  }
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) fail(ErrorKind::InvalidArgument, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace readalign
