#include "readalign/readalign.h"

#include <Eigen/Dense>

#include <cstring>
#include <new>
#include <sstream>
#include <streambuf>
#include <string>

#include "readalign/attention.hpp"
#include "readalign/error.hpp"
#include "readalign/pipeline.hpp"
#include "readalign/ridge.hpp"
#include "readalign/stats.hpp"
#include "readalign/targets.hpp"

struct ra_config {
  readalign::PipelineConfig cfg;
};

namespace {

thread_local std::string g_last_error;

ra_status status_of(readalign::ErrorKind k) {
  using readalign::ErrorKind;
  switch (k) {
    case ErrorKind::MissingFile:
      return RA_E_MISSING_FILE;
    case ErrorKind::ParseError:
      return RA_E_PARSE;
    case ErrorKind::InvalidArgument:
    case ErrorKind::OutOfRange:
      return RA_E_ARGUMENT;
    case ErrorKind::IOError:
      return RA_E_IO;
    default:
      return readalign::is_numerical(k) ? RA_E_NUMERIC : RA_E_INVARIANT;
  }
}

ra_status fail_with(ra_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

template <class Fn>
ra_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RA_OK;
  } catch (const readalign::Error& e) {
    return fail_with(status_of(e.kind()), std::string(readalign::to_string(e.kind())) + ": " + e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(RA_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    const int code = readalign::exit_code_for(e);
    return fail_with(code == 2 ? RA_E_IO : RA_E_INTERNAL, e.what());
  } catch (...) {
    return fail_with(RA_E_INTERNAL, "unknown error");
  }
}

#define RA_REQUIRE(cond, what) \
  if (!(cond)) return fail_with(RA_E_ARGUMENT, what)

// Forwards complete lines to the callback.
class LineBuf : public std::streambuf {
 public:
  LineBuf(ra_log_fn fn, void* user) : fn_(fn), user_(user) {}
  ~LineBuf() override {
    if (!line_.empty()) emit();
  }

 protected:
  int_type overflow(int_type c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    if (c == '\n') emit();
    else line_.push_back(static_cast<char>(c));
    return c;
  }

 private:
  void emit() {
    if (fn_) fn_(line_.c_str(), user_);
    line_.clear();
  }
  ra_log_fn fn_;
  void* user_;
  std::string line_;
};

readalign::Sidedness side_of(ra_sidedness s) {
  switch (s) {
    case RA_GREATER:
      return readalign::Sidedness::Greater;
    case RA_LESS:
      return readalign::Sidedness::Less;
    default:
      return readalign::Sidedness::TwoSided;
  }
}

}  // namespace

extern "C" {

const char* ra_version(void) { return "0.1.0"; }
const char* ra_last_error(void) { return g_last_error.c_str(); }

const char* ra_status_name(ra_status s) {
  switch (s) {
    case RA_OK: return "ok";
    case RA_E_MISSING_FILE: return "missing file";
    case RA_E_PARSE: return "parse error";
    case RA_E_INVARIANT: return "invariant violation";
    case RA_E_ARGUMENT: return "invalid argument";
    case RA_E_IO: return "I/O error";
    case RA_E_NUMERIC: return "numerical error";
    case RA_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int ra_status_exit_code(ra_status s) {
  if (s == RA_OK) return 0;
  return s == RA_E_NUMERIC || s == RA_E_INTERNAL ? 3 : 2;
}

ra_status ra_config_load(const char* path, ra_config** out) {
  RA_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new ra_config{readalign::load_pipeline_config(path)}; });
}

ra_status ra_config_from_json(const char* json, const char* base_dir, ra_config** out) {
  RA_REQUIRE(json && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new ra_config{readalign::parse_pipeline_config(json, "<config>", base_dir ? base_dir : ".")};
  });
}

void ra_config_free(ra_config* cfg) { delete cfg; }

ra_status ra_config_set_workers(ra_config* cfg, unsigned workers) {
  RA_REQUIRE(cfg, "null config");
  cfg->cfg.workers = workers;
  return RA_OK;
}

ra_status ra_config_set_seed(ra_config* cfg, uint64_t seed) {
  RA_REQUIRE(cfg, "null config");
  cfg->cfg.seed = seed;
  return RA_OK;
}

ra_status ra_config_set_output_dir(ra_config* cfg, const char* dir) {
  RA_REQUIRE(cfg && dir && *dir, "null config or empty directory");
  cfg->cfg.output_dir = dir;
  return RA_OK;
}

ra_status ra_config_set_dry_run(ra_config* cfg, int dry_run) {
  RA_REQUIRE(cfg, "null config");
  cfg->cfg.dry_run = dry_run != 0;
  return RA_OK;
}

ra_status ra_config_hash(const ra_config* cfg, char out[65]) {
  RA_REQUIRE(cfg && out, "null argument");
  return guarded([&] {
    const std::string h = cfg->cfg.hash();
    std::memcpy(out, h.c_str(), 65);
  });
}

ra_status ra_run(const ra_config* cfg, const char* command, ra_log_fn log, void* user) {
  RA_REQUIRE(cfg && command, "null argument");
  return guarded([&] {
    LineBuf buf(log, user);
    std::ostream os(&buf);
    const std::string c = command;
    if (c == "validate") readalign::run_validate(cfg->cfg, os);
    else if (c == "features") readalign::run_features(cfg->cfg, os);
    else if (c == "targets") readalign::run_targets(cfg->cfg, os);
    else if (c == "align") readalign::run_align(cfg->cfg, os);
    else if (c == "stats") readalign::run_stats(cfg->cfg, os);
    else if (c == "visualness") readalign::run_visualness(cfg->cfg, os);
    else readalign::fail(readalign::ErrorKind::InvalidArgument, "unknown command '" + c + "'");
  });
}

ra_status ra_synth(const char* synth_config, const char* out_dir, int dry_run, ra_log_fn log, void* user) {
  RA_REQUIRE(out_dir && *out_dir, "output directory required");
  return guarded([&] {
    LineBuf buf(log, user);
    std::ostream os(&buf);
    readalign::run_synth(synth_config ? synth_config : "", out_dir, dry_run != 0, os);
  });
}

ra_status ra_alpha_grid(double lo, double hi, size_t n, double* out) {
  RA_REQUIRE(out, "null output");
  return guarded([&] {
    const auto g = readalign::alpha_grid(lo, hi, n);
    std::copy(g.begin(), g.end(), out);
  });
}

ra_status ra_scan_index(double onset_ms, double tr_seconds, double lag_seconds, int64_t* out) {
  RA_REQUIRE(out, "null output");
  return guarded([&] { *out = readalign::scan_index_for_transition(onset_ms, tr_seconds, lag_seconds); });
}

ra_status ra_pair_count(const uint32_t* lengths, size_t n, size_t* out) {
  RA_REQUIRE(out && (lengths || n == 0), "null argument");
  return guarded([&] { *out = readalign::PairIndex(std::vector<std::uint32_t>(lengths, lengths + n)).size(); });
}

ra_status ra_fisher_z(double r, double* out) {
  RA_REQUIRE(out, "null output");
  return guarded([&] { *out = readalign::fisher_z(r); });
}

ra_status ra_aggregate_attention(const float* tok, uint32_t n_tokens, const int32_t* word_of_token, uint32_t n_words,
                                 double* out) {
  RA_REQUIRE(tok && word_of_token && out, "null argument");
  return guarded([&] {
    const std::vector<std::int32_t> map(word_of_token, word_of_token + n_tokens);
    readalign::check_word_map(map, n_words, "word map");
    readalign::aggregate_token_to_word(tok, n_tokens, map, n_words, out);
  });
}

ra_status ra_fit_ridge(const double* X, size_t rows, size_t cols, const double* y, const uint8_t* mask, double alpha,
                       int fit_intercept, double* beta, double* intercept) {
  RA_REQUIRE(X && y && beta && rows > 0 && cols > 0, "null or empty argument");
  return guarded([&] {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::MatrixXd Xm = Eigen::Map<const RowMajor>(X, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y, static_cast<Eigen::Index>(rows));
    readalign::RidgeOptions opt;
    opt.fit_intercept = fit_intercept != 0;
    opt.standardize = false;
    const auto model = readalign::fit_ridge(
        Xm, yv, mask ? std::span<const std::uint8_t>(mask, rows) : std::span<const std::uint8_t>(), alpha, opt);
    for (size_t k = 0; k < cols; ++k) beta[k] = model.beta[static_cast<Eigen::Index>(k)];
    if (intercept) *intercept = model.intercept;
  });
}

ra_status ra_paired_t_test(const double* a, const double* b, size_t n, ra_sidedness side, double* t, double* df,
                           double* p) {
  RA_REQUIRE(a && b, "null input");
  return guarded([&] {
    const auto r = readalign::paired_t_test({a, n}, {b, n}, side_of(side));
    if (t) *t = r.t;
    if (df) *df = r.df;
    if (p) *p = r.p;
  });
}

ra_status ra_bh_fdr(const double* p, size_t m, double q, uint8_t* rejected, double* adjusted) {
  RA_REQUIRE(p || m == 0, "null input");
  return guarded([&] {
    const auto r = readalign::bh_fdr({p, m}, q);
    if (rejected) std::copy(r.rejected.begin(), r.rejected.end(), rejected);
    if (adjusted) std::copy(r.adjusted.begin(), r.adjusted.end(), adjusted);
  });
}

ra_status ra_sign_flip(const double* values, size_t n, ra_sidedness side, size_t n_perm, uint64_t seed,
                       const char* test_id, double* p) {
  RA_REQUIRE(values && p, "null argument");
  RA_REQUIRE(n_perm >= 1, "n_perm must be >= 1");
  return guarded([&] {
    readalign::PermutationOptions o;
    o.n_perm = n_perm;
    o.seed = seed;
    o.test_id = test_id ? test_id : "";
    *p = readalign::sign_flip_permutation({values, n}, side_of(side), o).p;
  });
}

}  // extern "C"
