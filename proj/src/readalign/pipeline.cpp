#include "readalign/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "readalign/attention.hpp"
#include "readalign/error.hpp"
#include "readalign/hashing.hpp"
#include "readalign/parallel.hpp"
#include "readalign/ridge.hpp"
#include "readalign/stats.hpp"
#include "readalign/synthetic.hpp"
#include "readalign/targets.hpp"
#include "readalign/tensor_io.hpp"
#include "readalign/text_io.hpp"

namespace readalign {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ------------------------------------------------------------------ config

bool PipelineConfig::has_modality(std::string_view m) const {
  return std::find(modalities.begin(), modalities.end(), m) != modalities.end();
}

std::string PipelineConfig::canonical_json() const {
  json j;
  j["modalities"] = modalities;
  j["pairs"] = pairs;
  j["models"] = models;
  j["alpha_grid"] = alpha_grid;
  j["n_perm"] = n_perm;
  j["n_perm_vertex"] = n_perm_vertex;
  j["single_model_test"] = single_model_test;
  j["seed"] = seed;
  j["cluster_forming_p"] = cluster_forming_p;
  j["cluster_alpha"] = cluster_alpha;
  j["fdr_q"] = fdr_q;
  j["hrf_lag_seconds"] = hrf_lag_seconds;
  j["vertex_test"] = vertex_test;
  j["group_correlation"] = group_correlation == GroupCorrelation::Pooled ? "pooled" : "fold_mean";
  j["alpha_subsample"] = alpha_subsample;
  j["min_group_rows"] = min_group_rows;
  return j.dump();
}

std::string PipelineConfig::hash() const { return sha256_hex(canonical_json()); }

namespace {

fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : (base / q).lexically_normal();
}

}  // namespace

PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source, const fs::path& base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::ParseError, source + ": " + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::ParseError, source + ": expected a JSON object");

  PipelineConfig c;
  c.study_dir = base_dir;
  std::optional<std::string> attention, output;
  for (const auto& [key, v] : doc.items()) {
    try {
      if (key == "study_dir") c.study_dir = resolve_path(base_dir, v.get<std::string>());
      else if (key == "attention_dir") attention = v.get<std::string>();
      else if (key == "output_dir") output = v.get<std::string>();
      else if (key == "modalities") c.modalities = v.get<std::vector<std::string>>();
      else if (key == "pairs") c.pairs = v.get<std::vector<std::string>>();
      else if (key == "models") c.models = v.get<std::vector<std::string>>();
      else if (key == "alpha_grid") {
        if (v.is_array()) c.alpha_grid = v.get<std::vector<double>>();
        else c.alpha_grid = alpha_grid(v.at("lo").get<double>(), v.at("hi").get<double>(), v.at("n").get<std::size_t>());
      } else if (key == "n_perm") c.n_perm = v.get<std::size_t>();
      else if (key == "n_perm_vertex") c.n_perm_vertex = v.get<std::size_t>();
      else if (key == "single_model_test") c.single_model_test = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "cluster_forming_p") c.cluster_forming_p = v.get<double>();
      else if (key == "cluster_alpha") c.cluster_alpha = v.get<double>();
      else if (key == "fdr_q") c.fdr_q = v.get<double>();
      else if (key == "hrf_lag_seconds") c.hrf_lag_seconds = v.get<double>();
      else if (key == "vertex_test") c.vertex_test = v.get<std::string>();
      else if (key == "group_correlation") {
        const auto mode = v.get<std::string>();
        if (mode == "pooled") c.group_correlation = GroupCorrelation::Pooled;
        else if (mode == "fold_mean") c.group_correlation = GroupCorrelation::FoldMean;
        else fail(ErrorKind::InvalidArgument, source + ": group_correlation must be 'pooled' or 'fold_mean'");
      } else if (key == "alpha_subsample") c.alpha_subsample = v.get<std::size_t>();
      else if (key == "min_group_rows") c.min_group_rows = v.get<std::size_t>();
      else if (key == "workers") c.workers = v.get<unsigned>();
      else fail(ErrorKind::ParseError, source + ": unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, source + ": field '" + key + "': " + e.what());
    }
  }
  c.attention_dir = attention ? resolve_path(c.study_dir, *attention) : c.study_dir / "attention";
  c.output_dir = output ? resolve_path(base_dir, *output) : c.study_dir / "out";
  check_pipeline_config(c);
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(read_file_text(path), path.string(), path.parent_path().empty() ? "." : path.parent_path());
}

void check_pipeline_config(const PipelineConfig& c) {
  auto req = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, "config: " + what);
  };
  req(c.n_perm >= 1, "n_perm must be >= 1");
  req(c.n_perm_vertex >= 1, "n_perm_vertex must be >= 1");
  req(c.cluster_forming_p > 0 && c.cluster_forming_p < 1, "cluster_forming_p must lie in (0, 1)");
  req(c.cluster_alpha > 0 && c.cluster_alpha <= 1, "cluster_alpha must lie in (0, 1]");
  req(c.fdr_q > 0 && c.fdr_q <= 1, "fdr_q must lie in (0, 1]");
  req(c.hrf_lag_seconds >= 0, "hrf_lag_seconds must be >= 0");
  req(c.vertex_test == "t" || c.vertex_test == "signflip", "vertex_test must be 't' or 'signflip'");
  req(c.alpha_subsample >= 1, "alpha_subsample must be >= 1");
  req(c.min_group_rows >= 2, "min_group_rows must be >= 2");
  req(!c.alpha_grid.empty(), "alpha_grid must not be empty");
  for (double a : c.alpha_grid) req(std::isfinite(a) && a > 0, "alpha_grid values must be finite and > 0");
  req(!c.modalities.empty(), "modalities must not be empty");
  for (const auto& m : c.modalities) req(m == "eye" || m == "fmri", "unknown modality '" + m + "'");
}

int exit_code_for(const std::exception& e) noexcept {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return is_numerical(err->kind()) ? 3 : 2;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
  return 3;
}

// ----------------------------------------------------------------- helpers
namespace {

struct Study {
  StudyManifest manifest;
  PairIndex index;
  FoldSpec folds;
  std::vector<const ModelEntry*> models;  // manifest order
  std::vector<Pairing> pairs;
  unsigned workers = 1;
};

Study open_study(const PipelineConfig& cfg) {
  check_pipeline_config(cfg);
  Study s;
  s.manifest = load_study_manifest(cfg.study_dir / "study.json");
  s.index = PairIndex(s.manifest);
  s.folds = FoldSpec::by_article(s.index, static_cast<std::uint32_t>(s.manifest.articles.size()));
  s.workers = resolve_workers(cfg.workers);

  for (const auto& id : cfg.models) s.manifest.model(id);  // unknown ids fail here
  std::set<std::string> wanted(cfg.models.begin(), cfg.models.end());
  for (const auto& p : s.manifest.pairings) {
    const bool listed = std::find(cfg.pairs.begin(), cfg.pairs.end(), p.id()) != cfg.pairs.end();
    const bool take = cfg.pairs.empty() ? (cfg.models.empty() || (wanted.count(p.llm) && wanted.count(p.vlm))) : listed;
    if (take) s.pairs.push_back(p);
  }
  for (const auto& id : cfg.pairs)
    if (std::none_of(s.pairs.begin(), s.pairs.end(), [&](const Pairing& p) { return p.id() == id; }))
      fail(ErrorKind::InvalidArgument, "config: unknown pairing '" + id + "'");
  for (const auto& p : s.pairs) {
    wanted.insert(p.llm);
    wanted.insert(p.vlm);
  }
  for (const auto& m : s.manifest.models)
    if (cfg.models.empty() || wanted.count(m.id)) s.models.push_back(&m);
  return s;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json header(const PipelineConfig& cfg, const std::string& command) {
  json h;
  h["command"] = command;
  h["config_hash"] = cfg.hash();
  h["config"] = json::parse(cfg.canonical_json());
  return h;
}

// label -> SHA-256, in label order.
class Checksums {
 public:
  void add(const std::string& label, const fs::path& path) { entries_[label] = sha256_file(path); }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    return j;
  }

 private:
  std::map<std::string, std::string> entries_;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) fail(ErrorKind::MissingFile, what + " not found: " + p.string());
}

Tensor to_tensor(std::vector<std::uint32_t> dims, const std::vector<double>& v) {
  Tensor t{std::move(dims), std::vector<float>(v.size())};
  std::transform(v.begin(), v.end(), t.values.begin(), [](double x) { return static_cast<float>(x); });
  return t;
}

std::vector<double> to_doubles(const std::vector<float>& v) { return {v.begin(), v.end()}; }

double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string hemi_str(Hemisphere h) { return std::string(1, hemi_char(h)); }

std::string coef_eye_filename(std::string_view subject, std::string_view model) {
  return "coef_eye_" + std::string(subject) + "_" + std::string(model) + ".bin";
}
std::string coef_fmri_filename(std::string_view subject, std::string_view model, Hemisphere h) {
  return "coef_fmri_" + std::string(subject) + "_" + std::string(model) + "_" + hemi_str(h) + ".bin";
}
std::string rmap_filename(std::string_view subject, std::string_view model, std::uint32_t layer, Hemisphere h) {
  return "rmap_" + std::string(subject) + "_" + std::string(model) + "_" + std::to_string(layer) + "_" + hemi_str(h) +
         ".bin";
}

json optional_number(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

// Clamps |r| just below 1 so that a perfect fit does not abort a whole map.
double z_of(double r) {
  constexpr double kMax = 1.0 - 1e-12;
  return fisher_z(std::clamp(r, -kMax, kMax));
}

std::vector<FixationLog> load_fixations_if_present(const fs::path& study_dir) {
  const fs::path p = study_dir / "fixations.csv";
  return fs::exists(p) ? load_fixations(p) : std::vector<FixationLog>{};
}

const FixationLog* find_log(const std::vector<FixationLog>& logs, const std::string& subject) {
  for (const auto& l : logs)
    if (l.subject == subject) return &l;
  return nullptr;
}

std::vector<std::string> runs_of(const FixationLog& log) {
  std::vector<std::string> runs;
  for (const auto& r : log.records)
    if (std::find(runs.begin(), runs.end(), r.run) == runs.end()) runs.push_back(r.run);
  return runs;
}

}  // namespace

// ---------------------------------------------------------------- validate

void run_validate(const PipelineConfig& cfg, std::ostream& log) {
  check_pipeline_config(cfg);
  const StudyManifest m = load_study_manifest(cfg.study_dir / "study.json");
  const auto fixations = load_fixations_if_present(cfg.study_dir);
  std::vector<BoldSurfaceSeries> bold;
  for (const auto& s : m.subjects) {
    const FixationLog* fl = find_log(fixations, s.id);
    if (!s.fmri || !fl) continue;
    for (const auto& run : runs_of(*fl))
      for (auto h : m.hemispheres) {
        const fs::path p = cfg.study_dir / bold_filename(s.id, run, h);
        if (fs::exists(p)) bold.push_back(load_bold(p, s.id, run, h, m.tr_seconds));
      }
  }
  std::vector<MeshAdjacency> meshes;
  for (auto h : m.hemispheres) {
    const fs::path p = cfg.study_dir / mesh_filename(h);
    if (fs::exists(p)) meshes.push_back(load_mesh_adjacency(p, h));
  }
  std::optional<VisionNorms> norms;
  if (fs::exists(cfg.study_dir / "norms.csv")) norms = load_norms(cfg.study_dir / "norms.csv");
  std::optional<ContentWordAnnotation> content;
  if (fs::exists(cfg.study_dir / "content_words.csv")) content = load_content_words(cfg.study_dir / "content_words.csv");
  if (fs::exists(cfg.study_dir / "judge_scores.json")) load_judge_scores(cfg.study_dir / "judge_scores.json");

  CorpusInputs in;
  in.manifest = &m;
  in.fixations = &fixations;
  in.bold = &bold;
  in.meshes = &meshes;
  in.norms = norms ? &*norms : nullptr;
  in.content_words = content ? &*content : nullptr;
  const ValidationReport report = validate_corpus(in);

  json j = header(cfg, "validate");
  j["subjects"] = json::array();
  for (const auto& s : report.subjects)
    j["subjects"].push_back({{"subject", s.subject}, {"fixations", s.has_fixations}, {"bold", s.has_bold}, {"status", s.status}});
  j["flags"] = json::array();
  for (const auto& f : report.flags)
    j["flags"].push_back({{"subject", f.subject}, {"code", f.code}, {"location", f.location}, {"message", f.message}});

  log << "validate: " << m.subjects.size() << " subjects, " << m.sentences.size() << " sentences, "
      << report.flags.size() << " flags\n";
  for (const auto& f : report.flags) log << "  [" << f.code << "] " << f.location << ": " << f.message << "\n";
  if (cfg.dry_run) {
    log << "plan: write " << (cfg.output_dir / "validation_report.json").string() << "\n";
    return;
  }
  fs::create_directories(cfg.output_dir);
  write_file_atomic(cfg.output_dir / "validation_report.json", dump(j));
}

// ---------------------------------------------------------------- features

void run_features(const PipelineConfig& cfg, std::ostream& log) {
  const Study st = open_study(cfg);
  json j = header(cfg, "features");
  j["pairs"] = st.index.size();
  j["tables"] = json::array();
  for (const ModelEntry* md : st.models) {
    // Every input is read and validated even on a dry run.
    const auto tables = build_model_features(st.manifest, *md, cfg.attention_dir, st.workers);
    for (const auto& t : tables) {
      const std::string name = features_filename(md->id, t.layer);
      log << (cfg.dry_run ? "plan: " : "") << "features " << md->id << " layer " << t.layer << ": " << t.X.rows()
          << " x " << t.X.cols() << " -> " << name << "\n";
      if (cfg.dry_run) continue;
      fs::create_directories(cfg.output_dir);
      write_features(cfg.output_dir / name, t);
      j["tables"].push_back({{"model", md->id},
                             {"layer", t.layer},
                             {"rows", t.X.rows()},
                             {"heads", t.X.cols()},
                             {"file", name},
                             {"sha256", sha256_file(cfg.output_dir / name)}});
    }
  }
  if (!cfg.dry_run) write_file_atomic(cfg.output_dir / "features_report.json", dump(j));
}

// ----------------------------------------------------------------- targets

void run_targets(const PipelineConfig& cfg, std::ostream& log) {
  const Study st = open_study(cfg);
  const StudyManifest& m = st.manifest;
  require_file(cfg.study_dir / "fixations.csv", "fixation log");
  const auto logs = load_fixations(cfg.study_dir / "fixations.csv");
  Checksums inputs;
  inputs.add("study/study.json", cfg.study_dir / "study.json");
  inputs.add("study/fixations.csv", cfg.study_dir / "fixations.csv");

  json eye = json::array(), fmri = json::array(), notes = json::array();
  if (!cfg.dry_run) fs::create_directories(cfg.output_dir);
  for (const auto& s : m.subjects) {
    const FixationLog* fl = find_log(logs, s.id);
    if (!fl) {
      if (s.eye || s.fmri) notes.push_back("subject " + s.id + ": no fixations, skipped");
      continue;
    }
    if (s.eye && cfg.has_modality("eye")) {
      const SaccadeTarget t = build_saccade_targets(*fl, st.index);
      const double total = std::accumulate(t.y.begin(), t.y.end(), 0.0);
      const auto masked_in = std::count(t.mask.begin(), t.mask.end(), 1);
      const std::string name = saccade_target_filename(s.id);
      log << (cfg.dry_run ? "plan: " : "") << "saccade target " << s.id << ": " << total << " regressions, "
          << masked_in << " masked-in pairs -> " << name << "\n";
      if (!cfg.dry_run) write_saccade_target(cfg.output_dir / name, t);
      eye.push_back({{"subject", s.id}, {"regressions", total}, {"masked_in", masked_in}, {"file", name}});
    }
    if (s.fmri && cfg.has_modality("fmri")) {
      const auto events = regressive_transitions(*fl, st.index);
      for (auto h : m.hemispheres) {
        std::vector<BoldSurfaceSeries> series;
        for (const auto& run : runs_of(*fl)) {
          const fs::path p = cfg.study_dir / bold_filename(s.id, run, h);
          if (!fs::exists(p)) continue;
          series.push_back(load_bold(p, s.id, run, h, m.tr_seconds));
          inputs.add("study/" + p.filename().string(), p);
        }
        if (series.empty()) {
          notes.push_back("subject " + s.id + " hemisphere " + hemi_str(h) + ": no BOLD series, skipped");
          continue;
        }
        std::vector<const BoldSurfaceSeries*> runs;
        for (const auto& b : series) runs.push_back(&b);
        const BoldTargets t = build_bold_targets(events, runs, st.index, cfg.hrf_lag_seconds);
        const std::string name = bold_target_filename(s.id, h);
        log << (cfg.dry_run ? "plan: " : "") << "BOLD target " << s.id << " " << hemi_str(h) << ": "
            << t.events_used << " events (" << t.events_dropped << " past run end) -> " << name << "\n";
        if (t.events_dropped > 0)
          notes.push_back("subject " + s.id + " hemisphere " + hemi_str(h) + ": " + std::to_string(t.events_dropped) +
                          " events past the end of their run dropped");
        if (!cfg.dry_run) write_bold_targets(cfg.output_dir / name, t);
        fmri.push_back({{"subject", s.id},
                        {"hemi", hemi_str(h)},
                        {"vertices", t.vertex_count},
                        {"events_used", t.events_used},
                        {"events_dropped", t.events_dropped},
                        {"masked_in", std::count(t.mask.begin(), t.mask.end(), 1)},
                        {"file", name}});
      }
    }
  }
  if (cfg.dry_run) return;
  json j = header(cfg, "targets");
  j["inputs"] = inputs.to_json();
  j["pairs"] = st.index.size();
  j["eye"] = eye;
  j["fmri"] = fmri;
  j["notes"] = notes;
  write_file_atomic(cfg.output_dir / "targets_report.json", dump(j));
}

// ------------------------------------------------------------------- align
namespace {

std::vector<PairFeatureTable> load_model_features(const PipelineConfig& cfg, const ModelEntry& md, Checksums* sums) {
  std::vector<PairFeatureTable> out;
  for (std::uint32_t layer = 0; layer < md.layers; ++layer) {
    const std::string name = features_filename(md.id, layer);
    require_file(cfg.output_dir / name, "feature table (run 'features' first)");
    out.push_back(read_features(cfg.output_dir / name, md.id, layer));
    if (sums) sums->add("output/" + name, cfg.output_dir / name);
  }
  return out;
}

// Subjects with an eye target on disk, manifest order.
std::vector<std::string> eye_subjects(const PipelineConfig& cfg, const StudyManifest& m) {
  std::vector<std::string> out;
  if (!cfg.has_modality("eye")) return out;
  for (const auto& s : m.subjects)
    if (s.eye && fs::exists(cfg.output_dir / saccade_target_filename(s.id))) out.push_back(s.id);
  return out;
}

// Subjects with a BOLD target for every hemisphere, manifest order.
std::vector<std::string> fmri_subjects(const PipelineConfig& cfg, const StudyManifest& m) {
  std::vector<std::string> out;
  if (!cfg.has_modality("fmri")) return out;
  for (const auto& s : m.subjects) {
    if (!s.fmri) continue;
    const bool all = std::all_of(m.hemispheres.begin(), m.hemispheres.end(), [&](Hemisphere h) {
      return fs::exists(cfg.output_dir / bold_target_filename(s.id, h));
    });
    if (all) out.push_back(s.id);
  }
  return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

void run_align(const PipelineConfig& cfg, std::ostream& log) {
  const Study st = open_study(cfg);
  const StudyManifest& m = st.manifest;
  const std::size_t P = st.index.size();
  const auto eye_ids = eye_subjects(cfg, m);
  const auto fmri_ids = fmri_subjects(cfg, m);

  Checksums inputs;
  inputs.add("study/study.json", cfg.study_dir / "study.json");
  std::vector<std::vector<PairFeatureTable>> features;
  for (const ModelEntry* md : st.models) features.push_back(load_model_features(cfg, *md, &inputs));

  if (cfg.dry_run) {
    std::size_t layers = 0;
    for (const ModelEntry* md : st.models) layers += md->layers;
    log << "plan: align " << st.models.size() << " models (" << layers << " layers), " << P << " pairs, "
        << st.folds.fold_count << " folds\n";
    log << "plan: eye subjects " << eye_ids.size() << ", fMRI subjects " << fmri_ids.size() << "\n";
    for (const auto& s : fmri_ids)
      for (auto h : m.hemispheres) read_bold_targets(cfg.output_dir / bold_target_filename(s, h), s, h, P);
    for (const auto& s : eye_ids) read_saccade_target(cfg.output_dir / saccade_target_filename(s), s, P);
    run_stats(cfg, log);
    return;
  }

  json j = header(cfg, "align");
  json folds = json::array();
  for (std::uint32_t f = 0; f < st.folds.fold_count; ++f)
    folds.push_back({{"fold", f},
                     {"article", m.articles[f]},
                     {"pairs", std::count(st.folds.row_fold.begin(), st.folds.row_fold.end(), f)}});
  j["folds"] = folds;
  json notes = json::array();

  // ---- eye
  json eye = json::object();
  eye["results"] = json::array();
  if (!eye_ids.empty()) {
    std::vector<SaccadeTarget> targets;
    for (const auto& s : eye_ids) {
      const std::string name = saccade_target_filename(s);
      targets.push_back(read_saccade_target(cfg.output_dir / name, s, P));
      inputs.add("output/" + name, cfg.output_dir / name);
    }
    std::optional<NoiseCeiling> ceiling;
    if (targets.size() >= 2) ceiling = noise_ceiling(targets, st.folds);
    else notes.push_back("eye: fewer than 2 subjects, no noise ceiling; normalized R2 omitted");
    json nc = nullptr;
    if (ceiling) {
      nc = json::object();
      json per = json::object();
      for (std::size_t i = 0; i < eye_ids.size(); ++i) per[eye_ids[i]] = ceiling->per_subject[i];
      nc["per_subject"] = per;
      nc["mean"] = ceiling->mean;
      if (!(ceiling->mean > 0)) notes.push_back("eye: noise ceiling is 0; normalized R2 omitted");
    }
    eye["noise_ceiling"] = nc;

    struct Task {
      std::size_t subject, model;
      std::uint32_t layer;
    };
    std::vector<Task> tasks;
    for (std::size_t s = 0; s < eye_ids.size(); ++s)
      for (std::size_t k = 0; k < st.models.size(); ++k)
        for (std::uint32_t l = 0; l < st.models[k]->layers; ++l) tasks.push_back({s, k, l});
    std::vector<LoaoResult> results(tasks.size());
    parallel_for(tasks.size(), st.workers, [&](std::size_t i) {
      const Task& t = tasks[i];
      results[i] = evaluate_loao(features[t.model][t.layer].X, to_vector(targets[t.subject].y),
                                 targets[t.subject].mask, st.folds, cfg.alpha_grid, Metric::R2);
    });

    std::size_t i = 0;
    for (std::size_t s = 0; s < eye_ids.size(); ++s) {
      for (std::size_t k = 0; k < st.models.size(); ++k) {
        const ModelEntry& md = *st.models[k];
        const std::size_t first = i;
        std::vector<double> layer_scores;
        std::string csv = csv_row({"layer", "fold", "article", "alpha", "fold_metric", "pooled", "normalized",
                                   "mean_fold_metric"});
        json layers = json::array();
        for (std::uint32_t l = 0; l < md.layers; ++l, ++i) {
          const LoaoResult& r = results[i];
          std::optional<double> normalized;
          if (ceiling && ceiling->mean > 0) normalized = normalize_r2(r.pooled, ceiling->mean);
          layer_scores.push_back(r.mean_fold_metric);
          json alphas = json::array();
          std::size_t degenerate = 0;
          for (const auto& f : r.folds) {
            csv += csv_row({std::to_string(l), std::to_string(f.fold), m.articles[f.fold], format_double(f.alpha),
                            format_double(f.metric), format_double(r.pooled),
                            normalized ? format_double(*normalized) : "", format_double(r.mean_fold_metric)});
            alphas.push_back(f.alpha);
            degenerate += f.degenerate;
          }
          layers.push_back({{"layer", l},
                            {"pooled_r2", r.pooled},
                            {"mean_fold_r2", r.mean_fold_metric},
                            {"normalized", optional_number(normalized)},
                            {"alphas", alphas},
                            {"degenerate_folds", degenerate}});
        }
        const std::uint32_t best = select_best_layer(layer_scores);
        const LoaoResult& br = results[first + best];
        std::vector<double> coef;
        for (const auto& f : br.folds) {
          coef.push_back(f.model.intercept);
          for (Eigen::Index h = 0; h < f.model.beta.size(); ++h) coef.push_back(f.model.beta[h]);
        }
        const std::string sid = eye_ids[s];
        write_file_atomic(cfg.output_dir / ("scores_" + sid + "_" + md.id + "_eye.csv"), csv);
        write_tensor(cfg.output_dir / coef_eye_filename(sid, md.id),
                     to_tensor({static_cast<std::uint32_t>(br.folds.size()), 1 + md.heads}, coef));
        log << "eye " << sid << " " << md.id << ": best layer " << best << ", pooled R2 " << br.pooled << "\n";
        eye["results"].push_back({{"subject", sid}, {"model", md.id}, {"best_layer", best}, {"layers", layers}});
      }
    }
  }
  j["eye"] = eye;

  // ---- fMRI
  json fmri = json::object();
  fmri["results"] = json::array();
  VertexLoaoOptions vopt;
  vopt.grid = cfg.alpha_grid;
  vopt.alpha_subsample = cfg.alpha_subsample;
  vopt.workers = st.workers;
  for (const auto& sid : fmri_ids) {
    std::vector<BoldTargets> targets;
    for (auto h : m.hemispheres) {
      const std::string name = bold_target_filename(sid, h);
      targets.push_back(read_bold_targets(cfg.output_dir / name, sid, h, P));
      inputs.add("output/" + name, cfg.output_dir / name);
    }
    for (std::size_t k = 0; k < st.models.size(); ++k) {
      const ModelEntry& md = *st.models[k];
      std::vector<double> layer_scores;
      std::vector<VertexLoaoResult> best;  // per hemisphere, best layer so far
      double best_score = -std::numeric_limits<double>::infinity();
      std::string csv = csv_row({"layer", "hemi", "fold", "article", "alpha", "fold_metric", "pooled", "normalized",
                                 "mean_fold_metric"});
      json layers = json::array();
      for (std::uint32_t l = 0; l < md.layers; ++l) {
        std::vector<VertexLoaoResult> per_hemi;
        json hemis = json::array();
        double score = 0;
        for (std::size_t hi = 0; hi < targets.size(); ++hi) {
          VertexLoaoResult r = evaluate_loao_vertices(features[k][l].X, targets[hi], st.folds, vopt);
          const Hemisphere h = targets[hi].hemi;
          write_tensor(cfg.output_dir / rmap_filename(sid, md.id, l, h), to_tensor({r.vertex_count}, r.pooled_r));
          const double pooled = mean_of(r.pooled_r);
          for (std::uint32_t f = 0; f < r.fold_count; ++f) {
            const std::span<const double> fr(r.fold_r.data() + static_cast<std::size_t>(f) * r.vertex_count, r.vertex_count);
            csv += csv_row({std::to_string(l), hemi_str(h), std::to_string(f), m.articles[f], format_double(r.alpha[f]),
                            format_double(mean_of(fr)), format_double(pooled), "", format_double(r.score())});
          }
          std::size_t degenerate = 0;
          for (auto d : r.degenerate) degenerate += d;
          hemis.push_back({{"hemi", hemi_str(h)},
                           {"score", r.score()},
                           {"mean_pooled_r", pooled},
                           {"alphas", r.alpha},
                           {"degenerate_folds", degenerate}});
          score += r.score() / static_cast<double>(targets.size());
          per_hemi.push_back(std::move(r));
        }
        layer_scores.push_back(score);
        layers.push_back({{"layer", l}, {"score", score}, {"hemis", hemis}});
        if (score > best_score) {
          best_score = score;
          best = std::move(per_hemi);
        }
      }
      const std::uint32_t best_layer = select_best_layer(layer_scores);
      if (best.empty()) fail(ErrorKind::InvariantViolation, "fMRI " + sid + " " + md.id + ": no finite layer score");
      for (const auto& r : best)
        write_tensor(cfg.output_dir / coef_fmri_filename(sid, md.id, targets[&r - best.data()].hemi),
                     to_tensor({r.fold_count, r.vertex_count, 1 + r.heads}, r.coef));
      write_file_atomic(cfg.output_dir / ("scores_" + sid + "_" + md.id + "_fmri.csv"), csv);
      log << "fmri " << sid << " " << md.id << ": best layer " << best_layer << ", score " << layer_scores[best_layer]
          << "\n";
      fmri["results"].push_back({{"subject", sid}, {"model", md.id}, {"best_layer", best_layer}, {"layers", layers}});
    }
  }
  j["fmri"] = fmri;
  j["inputs"] = inputs.to_json();
  j["notes"] = notes;
  write_file_atomic(cfg.output_dir / "align_report.json", dump(j));
  run_stats(cfg, log);
}

// ------------------------------------------------------------------- stats
namespace {

struct EyeEntry {
  std::uint32_t best = 0;
  std::vector<double> value;  // per layer: normalized R2, or pooled R2 without a ceiling
};

struct FmriEntry {
  std::uint32_t best = 0;
  std::vector<std::vector<double>> mean_r;  // layer x hemisphere
};

using Key = std::pair<std::string, std::string>;  // (subject, model)

json load_align_report(const PipelineConfig& cfg) {
  const fs::path p = cfg.output_dir / "align_report.json";
  require_file(p, "alignment report (run 'align' first)");
  try {
    return json::parse(read_file_text(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, p.string() + ": " + e.what());
  }
}

std::map<Key, EyeEntry> eye_entries(const json& report) {
  std::map<Key, EyeEntry> out;
  for (const auto& r : report.at("eye").at("results")) {
    EyeEntry e;
    e.best = r.at("best_layer").get<std::uint32_t>();
    for (const auto& l : r.at("layers"))
      e.value.push_back(l.at("normalized").is_null() ? l.at("pooled_r2").get<double>() : l.at("normalized").get<double>());
    out[{r.at("subject").get<std::string>(), r.at("model").get<std::string>()}] = std::move(e);
  }
  return out;
}

std::map<Key, FmriEntry> fmri_entries(const json& report) {
  std::map<Key, FmriEntry> out;
  for (const auto& r : report.at("fmri").at("results")) {
    FmriEntry e;
    e.best = r.at("best_layer").get<std::uint32_t>();
    for (const auto& l : r.at("layers")) {
      std::vector<double> per_hemi;
      for (const auto& h : l.at("hemis")) per_hemi.push_back(h.at("mean_pooled_r").get<double>());
      e.mean_r.push_back(std::move(per_hemi));
    }
    out[{r.at("subject").get<std::string>(), r.at("model").get<std::string>()}] = std::move(e);
  }
  return out;
}

// Subjects (manifest order) present in `entries` for every listed model.
template <class Map>
std::vector<std::string> subjects_with(const StudyManifest& m, const Map& entries, std::initializer_list<std::string> models) {
  std::vector<std::string> out;
  for (const auto& s : m.subjects)
    if (std::all_of(models.begin(), models.end(), [&](const std::string& md) { return entries.count({s.id, md}); }))
      out.push_back(s.id);
  return out;
}

json t_json(const TTestResult& t) {
  return {{"mean_diff", t.mean}, {"t", t.t}, {"df", t.df}, {"p", t.p}, {"zero_variance", t.zero_variance}};
}

// Runs a family of paired tests (a - b) and attaches BH-adjusted p values.
struct PairedCase {
  json label;
  std::vector<double> a, b;
};

json paired_family(const std::string& family, const std::vector<PairedCase>& cases, double q) {
  std::vector<double> p;
  std::vector<TTestResult> tests;
  for (const auto& c : cases) {
    tests.push_back(paired_t_test(c.a, c.b, Sidedness::TwoSided));
    p.push_back(tests.back().p);
  }
  const FdrResult fdr = bh_fdr(p, q);
  json j;
  j["family"] = family;
  j["q"] = q;
  j["tests"] = json::array();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    json t = cases[i].label;
    t["n"] = cases[i].a.size();
    t.update(t_json(tests[i]));
    t["p_adjusted"] = fdr.adjusted[i];
    t["rejected"] = static_cast<bool>(fdr.rejected[i]);
    j["tests"].push_back(std::move(t));
  }
  return j;
}

json consistency_json(std::span<const double> a, std::span<const double> b, json& notes, const std::string& what) {
  if (a.size() < 3) {
    notes.push_back(what + ": fewer than 3 subjects, consistency skipped");
    return nullptr;
  }
  try {
    const ConsistencyResult c = subject_consistency(a, b);
    return {{"n", c.n}, {"pearson", c.pearson}, {"spearman", c.spearman}, {"p", c.p}};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ZeroVariance) throw;
    notes.push_back(what + ": zero variance, consistency undefined");
    return nullptr;
  }
}

std::string clusters_csv(const ClusterResult& r) {
  std::string out = csv_row({"cluster", "sign", "mass", "p", "significant", "size", "vertices"});
  for (std::size_t c = 0; c < r.clusters.size(); ++c) {
    const Cluster& cl = r.clusters[c];
    std::string vs;
    for (auto v : cl.vertices) vs += (vs.empty() ? "" : " ") + std::to_string(v);
    out += csv_row({std::to_string(c), std::to_string(cl.sign), format_double(cl.mass), format_double(cl.p),
                    cl.significant ? "1" : "0", std::to_string(cl.vertices.size()), vs});
  }
  return out;
}

json cluster_json(const ClusterResult& r, std::size_t n_subjects, const std::string& file) {
  json j;
  j["n_subjects"] = n_subjects;
  j["threshold"] = r.threshold;
  j["exact"] = r.exact;
  j["n_null"] = r.null_max.size();
  j["null_max_q95"] = r.null_quantile(0.95);
  j["clusters"] = json::array();
  for (std::size_t c = 0; c < r.clusters.size(); ++c)
    j["clusters"].push_back({{"cluster", c},
                             {"sign", r.clusters[c].sign},
                             {"mass", r.clusters[c].mass},
                             {"size", r.clusters[c].vertices.size()},
                             {"p", r.clusters[c].p},
                             {"significant", r.clusters[c].significant}});
  j["file"] = file;
  return j;
}

ClusterOptions cluster_options(const PipelineConfig& cfg, Sidedness side, std::string test_id, unsigned workers) {
  ClusterOptions o;
  o.cluster_forming_p = cfg.cluster_forming_p;
  o.alpha = cfg.cluster_alpha;
  o.sidedness = side;
  o.perm.n_perm = cfg.n_perm;
  o.perm.seed = cfg.seed;
  o.perm.test_id = std::move(test_id);
  o.perm.workers = workers;
  return o;
}

std::vector<MeshAdjacency> load_meshes(const PipelineConfig& cfg, const StudyManifest& m, Checksums& sums) {
  std::vector<MeshAdjacency> out;
  for (auto h : m.hemispheres) {
    const fs::path p = cfg.study_dir / mesh_filename(h);
    require_file(p, "mesh adjacency");
    out.push_back(load_mesh_adjacency(p, h));
    sums.add("study/" + p.filename().string(), p);
  }
  return out;
}

std::vector<double> read_map(const fs::path& p, Checksums& sums) {
  require_file(p, "r-map");
  sums.add("output/" + p.filename().string(), p);
  return to_doubles(read_tensor(p).values);
}

// Best-layer Fisher-z r-map per subject for one model and hemisphere.
Eigen::MatrixXd z_maps(const PipelineConfig& cfg, const std::vector<std::string>& subjects, const std::string& model,
                       const std::map<Key, FmriEntry>& entries, Hemisphere h, Checksums& sums) {
  Eigen::MatrixXd maps;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto r = read_map(cfg.output_dir / rmap_filename(subjects[i], model, entries.at({subjects[i], model}).best, h), sums);
    if (i == 0) maps.resize(static_cast<Eigen::Index>(subjects.size()), static_cast<Eigen::Index>(r.size()));
    if (static_cast<Eigen::Index>(r.size()) != maps.cols())
      fail(ErrorKind::InvariantViolation, "r-maps of " + model + " differ in vertex count");
    for (std::size_t v = 0; v < r.size(); ++v) maps(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v)) = z_of(r[v]);
  }
  return maps;
}

// Vertex-wise paired test of a contrast map (rows = subjects).
std::string vertex_stats_csv(const PipelineConfig& cfg, const Eigen::MatrixXd& maps, const std::string& test_id,
                             double q, unsigned workers, std::size_t& n_rejected) {
  const auto V = static_cast<std::size_t>(maps.cols());
  std::vector<double> mean(V), t(V, std::numeric_limits<double>::quiet_NaN()), p(V);
  parallel_for(V, workers, [&](std::size_t v) {
    std::vector<double> col(static_cast<std::size_t>(maps.rows()));
    for (Eigen::Index i = 0; i < maps.rows(); ++i) col[static_cast<std::size_t>(i)] = maps(i, static_cast<Eigen::Index>(v));
    mean[v] = mean_of(col);
    if (cfg.vertex_test == "t") {
      const auto r = one_sample_t_test(col, Sidedness::TwoSided);
      t[v] = r.t;
      p[v] = r.p;
    } else {
      PermutationOptions o;
      o.n_perm = cfg.n_perm;
      o.seed = cfg.seed;
      o.test_id = test_id + "/" + std::to_string(v);
      p[v] = sign_flip_permutation(col, Sidedness::TwoSided, o).p;
    }
  });
  const FdrResult fdr = bh_fdr(p, q);
  n_rejected = 0;
  std::string out = csv_row({"vertex", "mean", "t", "p", "p_adjusted", "rejected"});
  for (std::size_t v = 0; v < V; ++v) {
    n_rejected += fdr.rejected[v];
    out += csv_row({std::to_string(v), format_double(mean[v]), std::isnan(t[v]) ? "" : format_double(t[v]),
                    format_double(p[v]), format_double(fdr.adjusted[v]), fdr.rejected[v] ? "1" : "0"});
  }
  return out;
}

// Out-of-fold predictions of one vertex from stored per-fold coefficients.
std::vector<double> vertex_oof(const Eigen::MatrixXd& X, std::span<const std::uint8_t> mask, const FoldSpec& folds,
                               const Tensor& coef, std::uint32_t v, std::vector<double>& scratch) {
  const std::uint32_t F = coef.dim(0), V = coef.dim(1), C = coef.dim(2);
  scratch.resize(static_cast<std::size_t>(F) * C);
  std::vector<const double*> ptrs;
  for (std::uint32_t f = 0; f < F; ++f) {
    const float* src = coef.values.data() + (static_cast<std::size_t>(f) * V + v) * C;
    std::copy(src, src + C, scratch.begin() + static_cast<std::ptrdiff_t>(f) * C);
    ptrs.push_back(scratch.data() + static_cast<std::size_t>(f) * C);
  }
  return predict_out_of_fold(X, mask, folds, ptrs);
}

}  // namespace

void run_stats(const PipelineConfig& cfg, std::ostream& log) {
  const Study st = open_study(cfg);
  const StudyManifest& m = st.manifest;
  if (cfg.dry_run) {
    log << "plan: stats over " << st.pairs.size() << " pairings, n_perm " << cfg.n_perm << ", FDR q " << cfg.fdr_q
        << ", cluster-forming p " << cfg.cluster_forming_p << "\n";
    return;
  }
  const json report = load_align_report(cfg);
  const auto eye = eye_entries(report);
  const auto fmri = fmri_entries(report);
  Checksums inputs;
  inputs.add("output/align_report.json", cfg.output_dir / "align_report.json");
  json notes = json::array();

  json j = header(cfg, "stats");
  json eye_out = json::array(), fmri_out = json::array(), vertex_out = json::array(), model_out = json::array();
  json single_out = json::array();

  std::vector<MeshAdjacency> meshes;
  if (!fmri.empty()) meshes = load_meshes(cfg, m, inputs);

  for (const auto& pair : st.pairs) {
    const ModelEntry& llm = m.model(pair.llm);
    const ModelEntry& vlm = m.model(pair.vlm);
    const std::uint32_t L = std::min(llm.layers, vlm.layers);

    // eye: per-layer paired tests (FDR across layers), best-layer test, consistency
    const auto eye_subj = subjects_with(m, eye, {pair.llm, pair.vlm});
    if (eye_subj.size() >= 2) {
      std::vector<PairedCase> cases;
      for (std::uint32_t l = 0; l < L; ++l) {
        PairedCase c{{{"layer", l}}, {}, {}};
        for (const auto& s : eye_subj) {
          c.a.push_back(eye.at({s, pair.vlm}).value[l]);
          c.b.push_back(eye.at({s, pair.llm}).value[l]);
        }
        cases.push_back(std::move(c));
      }
      PairedCase best{{{"layer", "best"}}, {}, {}};
      for (const auto& s : eye_subj) {
        const auto& a = eye.at({s, pair.vlm});
        const auto& b = eye.at({s, pair.llm});
        best.a.push_back(a.value[a.best]);
        best.b.push_back(b.value[b.best]);
      }
      json e;
      e["pair"] = pair.id();
      e["contrast"] = pair.vlm + " - " + pair.llm;
      e["layers"] = paired_family("eye/" + pair.id() + "/layers", cases, cfg.fdr_q);
      json bt = t_json(paired_t_test(best.a, best.b, Sidedness::TwoSided));
      bt["n"] = eye_subj.size();
      e["best_layer"] = bt;
      e["consistency"] = consistency_json(best.b, best.a, notes, "eye " + pair.id());
      eye_out.push_back(std::move(e));
    } else if (!eye.empty()) {
      notes.push_back("eye " + pair.id() + ": fewer than 2 subjects with both models, tests skipped");
    }

    // fMRI: layer x hemisphere family, best-layer tests, vertex contrasts
    const auto fmri_subj = subjects_with(m, fmri, {pair.llm, pair.vlm});
    if (fmri_subj.size() >= 2) {
      std::vector<PairedCase> cases;
      for (std::uint32_t l = 0; l < L; ++l)
        for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
          PairedCase c{{{"layer", l}, {"hemi", hemi_str(m.hemispheres[hi])}}, {}, {}};
          for (const auto& s : fmri_subj) {
            c.a.push_back(fmri.at({s, pair.vlm}).mean_r[l][hi]);
            c.b.push_back(fmri.at({s, pair.llm}).mean_r[l][hi]);
          }
          cases.push_back(std::move(c));
        }
      json f;
      f["pair"] = pair.id();
      f["contrast"] = pair.vlm + " - " + pair.llm;
      f["layers"] = paired_family("fmri/" + pair.id() + "/layers", cases, cfg.fdr_q);
      std::vector<PairedCase> best_cases;
      std::vector<double> best_llm(fmri_subj.size(), 0.0), best_vlm(fmri_subj.size(), 0.0);
      for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
        PairedCase c{{{"hemi", hemi_str(m.hemispheres[hi])}}, {}, {}};
        for (std::size_t i = 0; i < fmri_subj.size(); ++i) {
          const auto& a = fmri.at({fmri_subj[i], pair.vlm});
          const auto& b = fmri.at({fmri_subj[i], pair.llm});
          c.a.push_back(a.mean_r[a.best][hi]);
          c.b.push_back(b.mean_r[b.best][hi]);
          best_vlm[i] += c.a.back() / static_cast<double>(m.hemispheres.size());
          best_llm[i] += c.b.back() / static_cast<double>(m.hemispheres.size());
        }
        best_cases.push_back(std::move(c));
      }
      f["best_layer"] = paired_family("fmri/" + pair.id() + "/best", best_cases, cfg.fdr_q);
      f["consistency"] = consistency_json(best_llm, best_vlm, notes, "fmri " + pair.id());
      fmri_out.push_back(std::move(f));

      for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
        const Hemisphere h = m.hemispheres[hi];
        const Eigen::MatrixXd contrast =
            z_maps(cfg, fmri_subj, pair.vlm, fmri, h, inputs) - z_maps(cfg, fmri_subj, pair.llm, fmri, h, inputs);
        const std::string tag = pair.id() + "_" + hemi_str(h);
        const ClusterResult cr = cluster_mass_permutation(
            contrast, meshes[hi], cluster_options(cfg, Sidedness::TwoSided, "cluster/contrast/" + tag, st.workers));
        const std::string file = "clusters_" + tag + ".csv";
        write_file_atomic(cfg.output_dir / file, clusters_csv(cr));
        std::size_t rejected = 0;
        const std::string vfile = "vstat_" + tag + ".csv";
        write_file_atomic(cfg.output_dir / vfile,
                          vertex_stats_csv(cfg, contrast, "vertex/contrast/" + tag, cfg.fdr_q, st.workers, rejected));
        json v = cluster_json(cr, fmri_subj.size(), file);
        v["contrast"] = pair.vlm + " - " + pair.llm;
        v["hemi"] = hemi_str(h);
        v["sidedness"] = to_string(Sidedness::TwoSided);
        v["vertex_test"] = {{"method", cfg.vertex_test}, {"fdr_q", cfg.fdr_q}, {"rejected", rejected}, {"file", vfile}};
        vertex_out.push_back(std::move(v));
        log << "stats " << tag << ": " << cr.clusters.size() << " clusters\n";
      }
    } else if (!fmri.empty()) {
      notes.push_back("fmri " + pair.id() + ": fewer than 2 subjects with both models, tests skipped");
    }
  }

  // Per-model one-sided cluster tests on best-layer z(r) maps.
  for (const ModelEntry* md : st.models) {
    const auto subj = subjects_with(m, fmri, {md->id});
    if (subj.size() < 2) continue;
    for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
      const Hemisphere h = m.hemispheres[hi];
      const std::string tag = md->id + "_" + hemi_str(h);
      const ClusterResult cr = cluster_mass_permutation(z_maps(cfg, subj, md->id, fmri, h, inputs), meshes[hi],
                                                        cluster_options(cfg, Sidedness::Greater, "cluster/model/" + tag, st.workers));
      const std::string file = "clusters_" + tag + ".csv";
      write_file_atomic(cfg.output_dir / file, clusters_csv(cr));
      json v = cluster_json(cr, subj.size(), file);
      v["model"] = md->id;
      v["hemi"] = hemi_str(h);
      v["sidedness"] = to_string(Sidedness::Greater);
      model_out.push_back(std::move(v));
    }
  }

  // Optional per-vertex prediction permutation for each subject's best layer.
  if (cfg.single_model_test) {
    for (const ModelEntry* md : st.models) {
      for (const auto& sid : subjects_with(m, fmri, {md->id})) {
        const std::uint32_t layer = fmri.at({sid, md->id}).best;
        const fs::path fpath = cfg.output_dir / features_filename(md->id, layer);
        require_file(fpath, "feature table");
        const PairFeatureTable X = read_features(fpath, md->id, layer);
        for (auto h : m.hemispheres) {
          const BoldTargets y = read_bold_targets(cfg.output_dir / bold_target_filename(sid, h), sid, h, st.index.size());
          const fs::path cpath = cfg.output_dir / coef_fmri_filename(sid, md->id, h);
          require_file(cpath, "coefficients");
          const Tensor coef = read_tensor(cpath);
          std::vector<double> p(y.vertex_count, 1.0);
          const std::string tag = sid + "_" + md->id + "_" + hemi_str(h);
          parallel_for(y.vertex_count, st.workers, [&](std::size_t v) {
            std::vector<double> scratch;
            const auto pred = vertex_oof(X.X, y.mask, st.folds, coef, static_cast<std::uint32_t>(v), scratch);
            std::vector<double> a, b;
            for (std::size_t r = 0; r < y.pairs; ++r)
              if (y.mask[r]) {
                a.push_back(pred[r]);
                b.push_back(y.at(static_cast<std::uint32_t>(v), r));
              }
            if (a.size() < 3) return;
            PermutationOptions o;
            o.n_perm = cfg.n_perm_vertex;
            o.seed = cfg.seed;
            o.test_id = "single/" + tag + "/" + std::to_string(v);
            p[v] = single_model_permutation(a, b, o).p;
          });
          const std::string file = "pmap_" + tag + ".bin";
          write_tensor(cfg.output_dir / file, to_tensor({y.vertex_count}, p));
          const FdrResult fdr = bh_fdr(p, cfg.fdr_q);
          single_out.push_back({{"subject", sid},
                                {"model", md->id},
                                {"layer", layer},
                                {"hemi", hemi_str(h)},
                                {"n_perm", cfg.n_perm_vertex},
                                {"rejected", std::count(fdr.rejected.begin(), fdr.rejected.end(), 1)},
                                {"file", file}});
        }
      }
    }
  }

  j["inputs"] = inputs.to_json();
  j["eye"] = eye_out;
  j["fmri"] = fmri_out;
  j["vertex_contrasts"] = vertex_out;
  j["model_clusters"] = model_out;
  j["single_model"] = single_out;
  j["notes"] = notes;
  write_file_atomic(cfg.output_dir / "stats_report.json", dump(j));
}

// -------------------------------------------------------------- visualness
namespace {

std::string visualness_csv(const VisualnessResult& res) {
  std::string out = csv_row({"sentence", "article", "v_dict", "kappa", "matched", "content", "fallback", "excluded",
                             "fused", "v_final", "group"});
  for (const auto& r : res.records)
    out += csv_row({r.sentence, r.article, r.dict.v_dict ? format_double(*r.dict.v_dict) : "",
                    format_double(r.dict.kappa), std::to_string(r.dict.matched), std::to_string(r.dict.content),
                    r.fallback ? "1" : "0", r.excluded ? "1" : "0", r.fused ? format_double(*r.fused) : "",
                    r.final_score ? format_double(*r.final_score) : "", to_string(r.group)});
  return out;
}

std::string calibration_csv(const CalibrationCurve& c) {
  std::string out = csv_row({"x_lo", "x_hi", "level"});
  for (std::size_t b = 0; b < c.levels.size(); ++b)
    out += csv_row({format_double(c.x_lo[b]), format_double(c.x_hi[b]), format_double(c.levels[b])});
  return out;
}

json modulation_json(const ModulationSummary& s) {
  json j;
  j["a_high"] = s.a_high;
  j["a_low"] = s.a_low;
  j["h"] = s.h;
  j["p"] = s.test.p;
  j["exact"] = s.test.exact;
  j["n_null"] = s.test.n_null;
  j["subjects"] = json::array();
  for (const auto& x : s.subjects)
    j["subjects"].push_back(
        {{"subject", x.subject}, {"a_high", x.a_high}, {"a_low", x.a_low}, {"h", x.h}, {"units", x.units}});
  return j;
}

struct GroupRows {
  std::vector<std::uint8_t> high, low;  // per pair row
};

GroupRows group_rows(const VisualnessResult& res, const PairIndex& index) {
  GroupRows g{std::vector<std::uint8_t>(index.size(), 0), std::vector<std::uint8_t>(index.size(), 0)};
  for (std::size_t p = 0; p < index.size(); ++p) {
    const VisualGroup label = res.records[index.sentence_of(p)].group;
    g.high[p] = label == VisualGroup::High;
    g.low[p] = label == VisualGroup::Low;
  }
  return g;
}

std::vector<std::uint8_t> rows_and(const std::vector<std::uint8_t>& a, std::span<const std::uint8_t> b) {
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

// Per-group r of both models for one unit; absent when any group is too small.
std::optional<ModulationUnit> modulation_unit(std::span<const double> y, std::span<const double> pred_vlm,
                                              std::span<const double> pred_llm, const std::vector<std::uint8_t>& high,
                                              const std::vector<std::uint8_t>& low, const FoldSpec& folds,
                                              const PipelineConfig& cfg) {
  auto r = [&](std::span<const double> pred, const std::vector<std::uint8_t>& rows) {
    return group_correlation(y, pred, rows, folds.row_fold, cfg.group_correlation, cfg.min_group_rows);
  };
  const auto vh = r(pred_vlm, high), vl = r(pred_vlm, low), lh = r(pred_llm, high), ll = r(pred_llm, low);
  if (!vh || !vl || !lh || !ll) return std::nullopt;
  auto clamp = [](double x) { return std::clamp(x, -1.0 + 1e-12, 1.0 - 1e-12); };
  return advantage_and_modulation(clamp(*vh), clamp(*vl), clamp(*lh), clamp(*ll));
}

}  // namespace

void run_visualness(const PipelineConfig& cfg, std::ostream& log) {
  const Study st = open_study(cfg);
  const StudyManifest& m = st.manifest;
  Checksums inputs;
  inputs.add("study/study.json", cfg.study_dir / "study.json");
  for (const char* f : {"norms.csv", "content_words.csv"}) {
    require_file(cfg.study_dir / f, f);
    inputs.add(std::string("study/") + f, cfg.study_dir / f);
  }
  const VisionNorms norms = load_norms(cfg.study_dir / "norms.csv");
  const ContentWordAnnotation content = load_content_words(cfg.study_dir / "content_words.csv");
  std::vector<JudgeScoreRecord> judges;
  if (fs::exists(cfg.study_dir / "judge_scores.json")) {
    judges = load_judge_scores(cfg.study_dir / "judge_scores.json");
    inputs.add("study/judge_scores.json", cfg.study_dir / "judge_scores.json");
  }
  const VisualnessResult res = compute_visualness(m, norms, content, judges);

  std::size_t n_high = 0, n_low = 0, n_fallback = 0, n_excluded = 0;
  for (const auto& r : res.records) {
    n_high += r.group == VisualGroup::High;
    n_low += r.group == VisualGroup::Low;
    n_fallback += r.fallback;
    n_excluded += r.excluded;
  }
  log << (cfg.dry_run ? "plan: " : "") << "visualness: " << res.records.size() << " sentences, " << n_fallback
      << " fallback, " << n_excluded << " excluded, " << n_high << " high, " << n_low << " low\n";
  const bool have_align = fs::exists(cfg.output_dir / "align_report.json");
  if (cfg.dry_run) {
    log << "plan: " << res.calibrations.size() << " calibration curves; modulation "
        << (have_align ? "for " + std::to_string(st.pairs.size()) + " pairings" : "skipped (no alignment report)") << "\n";
    return;
  }
  fs::create_directories(cfg.output_dir);
  write_file_atomic(cfg.output_dir / "visualness.csv", visualness_csv(res));
  json cal = json::array();
  for (const auto& c : res.calibrations) {
    const std::string file = "calibration_" + m.articles[c.fold] + "_" + c.judge + ".csv";
    write_file_atomic(cfg.output_dir / file, calibration_csv(c.curve));
    cal.push_back({{"fold", c.fold}, {"article", m.articles[c.fold]}, {"judge", c.judge},
                   {"training_pairs", c.training_pairs}, {"file", file}});
  }
  json notes = json::array();
  for (const auto& n : res.notes) notes.push_back(n);

  json mods = json::array();
  if (!have_align) {
    notes.push_back("no alignment report; modulation skipped");
  } else {
    inputs.add("output/align_report.json", cfg.output_dir / "align_report.json");
    const json report = load_align_report(cfg);
    const auto eye = eye_entries(report);
    const auto fmri = fmri_entries(report);
    const GroupRows groups = group_rows(res, st.index);
    const std::size_t P = st.index.size();
    std::vector<MeshAdjacency> meshes;
    if (!fmri.empty()) meshes = load_meshes(cfg, m, inputs);

    auto features_of = [&](const std::string& model, std::uint32_t layer) {
      const fs::path p = cfg.output_dir / features_filename(model, layer);
      require_file(p, "feature table");
      inputs.add("output/" + p.filename().string(), p);
      return read_features(p, model, layer);
    };
    auto coef_of = [&](const fs::path& p) {
      require_file(p, "coefficients (run 'align' first)");
      inputs.add("output/" + p.filename().string(), p);
      return read_tensor(p);
    };

    for (const auto& pair : st.pairs) {
      json mj;
      mj["pair"] = pair.id();
      mj["group_correlation"] = cfg.group_correlation == GroupCorrelation::Pooled ? "pooled" : "fold_mean";
      mj["min_group_rows"] = cfg.min_group_rows;
      PermutationOptions perm;
      perm.n_perm = cfg.n_perm;
      perm.seed = cfg.seed;
      perm.workers = st.workers;

      // eye: one unit per subject
      std::vector<SubjectModulation> eye_subjects_mod;
      for (const auto& sid : subjects_with(m, eye, {pair.llm, pair.vlm})) {
        const SaccadeTarget y = read_saccade_target(cfg.output_dir / saccade_target_filename(sid), sid, P);
        std::vector<double> pred[2];
        const std::string* ids[2] = {&pair.vlm, &pair.llm};
        for (int k = 0; k < 2; ++k) {
          const auto layer = eye.at({sid, *ids[k]}).best;
          const Tensor coef = coef_of(cfg.output_dir / coef_eye_filename(sid, *ids[k]));
          std::vector<double> c = to_doubles(coef.values);
          std::vector<const double*> ptrs;
          for (std::uint32_t f = 0; f < coef.dim(0); ++f) ptrs.push_back(c.data() + static_cast<std::size_t>(f) * coef.dim(1));
          pred[k] = predict_out_of_fold(features_of(*ids[k], layer).X, y.mask, st.folds, ptrs);
        }
        const auto unit = modulation_unit(y.y, pred[0], pred[1], rows_and(groups.high, y.mask),
                                          rows_and(groups.low, y.mask), st.folds, cfg);
        if (unit) eye_subjects_mod.push_back(summarize_subject(sid, {*unit}));
        else notes.push_back("eye " + pair.id() + " " + sid + ": a group has fewer than min_group_rows rows");
      }
      if (!eye_subjects_mod.empty()) {
        perm.test_id = "modulation/eye/" + pair.id();
        mj["eye"] = modulation_json(test_modulation(eye_subjects_mod, perm));
      } else {
        mj["eye"] = nullptr;
      }

      // fMRI: one unit per vertex
      const auto fmri_subj = subjects_with(m, fmri, {pair.llm, pair.vlm});
      std::vector<SubjectModulation> fmri_subjects_mod;
      std::vector<Eigen::MatrixXd> h_maps(m.hemispheres.size());
      for (std::size_t i = 0; i < fmri_subj.size(); ++i) {
        const std::string& sid = fmri_subj[i];
        std::vector<ModulationUnit> units;
        const PairFeatureTable Xv = features_of(pair.vlm, fmri.at({sid, pair.vlm}).best);
        const PairFeatureTable Xl = features_of(pair.llm, fmri.at({sid, pair.llm}).best);
        for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
          const Hemisphere h = m.hemispheres[hi];
          const BoldTargets y = read_bold_targets(cfg.output_dir / bold_target_filename(sid, h), sid, h, P);
          const Tensor cv = coef_of(cfg.output_dir / coef_fmri_filename(sid, pair.vlm, h));
          const Tensor cl = coef_of(cfg.output_dir / coef_fmri_filename(sid, pair.llm, h));
          if (i == 0) h_maps[hi] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fmri_subj.size()), y.vertex_count);
          const auto high = rows_and(groups.high, y.mask), low = rows_and(groups.low, y.mask);
          std::vector<std::optional<ModulationUnit>> per_vertex(y.vertex_count);
          parallel_for(y.vertex_count, st.workers, [&](std::size_t v) {
            std::vector<double> scratch, obs(P);
            const auto pv = vertex_oof(Xv.X, y.mask, st.folds, cv, static_cast<std::uint32_t>(v), scratch);
            const auto pl = vertex_oof(Xl.X, y.mask, st.folds, cl, static_cast<std::uint32_t>(v), scratch);
            for (std::size_t r = 0; r < P; ++r) obs[r] = y.at(static_cast<std::uint32_t>(v), r);
            per_vertex[v] = modulation_unit(obs, pv, pl, high, low, st.folds, cfg);
          });
          for (std::uint32_t v = 0; v < y.vertex_count; ++v)
            if (per_vertex[v]) {
              units.push_back(*per_vertex[v]);
              h_maps[hi](static_cast<Eigen::Index>(i), v) = per_vertex[v]->h;
            }
        }
        if (!units.empty()) fmri_subjects_mod.push_back(summarize_subject(sid, units));
        else notes.push_back("fmri " + pair.id() + " " + sid + ": no vertex has both groups defined");
      }
      if (!fmri_subjects_mod.empty()) {
        perm.test_id = "modulation/fmri/" + pair.id();
        json fj = modulation_json(test_modulation(fmri_subjects_mod, perm));
        json clusters = json::array();
        if (fmri_subj.size() >= 2) {
          for (std::size_t hi = 0; hi < m.hemispheres.size(); ++hi) {
            const std::string tag = "modulation_" + pair.id() + "_" + hemi_str(m.hemispheres[hi]);
            const ClusterResult cr = cluster_mass_permutation(
                h_maps[hi], meshes[hi], cluster_options(cfg, Sidedness::Greater, "cluster/" + tag, st.workers));
            const std::string file = "clusters_" + tag + ".csv";
            write_file_atomic(cfg.output_dir / file, clusters_csv(cr));
            json cj = cluster_json(cr, fmri_subj.size(), file);
            cj["hemi"] = hemi_str(m.hemispheres[hi]);
            clusters.push_back(std::move(cj));
          }
        }
        fj["clusters"] = clusters;
        mj["fmri"] = fj;
      } else {
        mj["fmri"] = nullptr;
      }
      const std::string file = "modulation_" + pair.id() + ".json";
      json out = header(cfg, "visualness");
      out.update(mj);
      write_file_atomic(cfg.output_dir / file, dump(out));
      auto p_of = [&](const char* k) { return mj[k].is_null() ? std::string("n/a") : format_double(mj[k]["p"].get<double>()); };
      log << "modulation " << pair.id() << ": eye p " << p_of("eye") << ", fmri p " << p_of("fmri") << "\n";
      mods.push_back({{"pair", pair.id()}, {"file", file}});
    }
  }

  json j = header(cfg, "visualness");
  j["inputs"] = inputs.to_json();
  j["sentences"] = res.records.size();
  j["fallback"] = n_fallback;
  j["excluded"] = n_excluded;
  j["high"] = n_high;
  j["low"] = n_low;
  j["judges"] = res.judges;
  j["calibrations"] = cal;
  j["modulation"] = mods;
  j["notes"] = notes;
  write_file_atomic(cfg.output_dir / "visualness_report.json", dump(j));
}

// ------------------------------------------------------------------- synth

void run_synth(const fs::path& synth_config, const fs::path& out_dir, bool dry_run, std::ostream& log) {
  SynthConfig cfg;
  if (!synth_config.empty()) cfg = parse_synth_config(read_file_text(synth_config), synth_config.string());
  check_synth_config(cfg);
  if (dry_run) {
    log << "plan: synthetic study seed " << cfg.seed << ", " << cfg.articles << " articles, " << cfg.subjects
        << " subjects, " << cfg.layers << " layers x " << cfg.heads << " heads -> " << out_dir.string() << "\n";
    return;
  }
  const SynthTruth truth = generate_synthetic_study(cfg, out_dir);
  log << "synthetic study written to " << out_dir.string() << " (planted layer " << truth.planted_layer << ", head "
      << truth.planted_head << "); pipeline config " << truth.config_path.string() << "\n";
}

}  // namespace readalign
