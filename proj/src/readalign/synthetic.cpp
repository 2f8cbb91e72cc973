#include "readalign/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "readalign/attention.hpp"
#include "readalign/error.hpp"
#include "readalign/targets.hpp"
#include "readalign/tensor_io.hpp"
#include "readalign/text_io.hpp"
#include "readalign/visualness.hpp"

namespace readalign {
namespace {

using Rng = std::mt19937_64;

std::vector<double> dirichlet_rows(Rng& rng, std::uint32_t n) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (std::uint32_t r = 0; r < n; ++r) {
    double sum = 0;
    for (std::uint32_t c = 0; c < n; ++c) sum += (m[r * n + c] = ex(rng) + 1e-12);
    for (std::uint32_t c = 0; c < n; ++c) m[r * n + c] /= sum;
  }
  return m;
}

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

std::string pad(std::uint32_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

MeshAdjacency make_mesh(const SynthConfig& cfg, Hemisphere h) {
  if (cfg.mesh == "ring") {
    MeshAdjacency m;
    m.hemi = h;
    m.vertex_count = cfg.grid_width * cfg.grid_height;
    for (std::uint32_t v = 0; v + 1 < m.vertex_count; ++v) m.edges.emplace_back(v, v + 1);
    if (m.vertex_count > 2) m.edges.emplace_back(0, m.vertex_count - 1);
    std::sort(m.edges.begin(), m.edges.end());
    return m;
  }
  return grid_mesh(h, cfg.grid_width, cfg.grid_height);
}

// Word sequence whose regressive transitions are exactly `regressions`
// (pairs l > m): visit them by ascending landing word, moving forward
// between them, and finish on the last word.
std::vector<std::uint32_t> fixation_sequence(std::vector<std::pair<std::uint32_t, std::uint32_t>> regressions,
                                             std::uint32_t n_words) {
  std::sort(regressions.begin(), regressions.end(),
            [](const auto& a, const auto& b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
  std::vector<std::uint32_t> seq{0};
  for (auto [l, m] : regressions) {
    if (l != seq.back()) seq.push_back(l);
    seq.push_back(m);
  }
  if (seq.back() != n_words - 1) seq.push_back(n_words - 1);
  return seq;
}

}  // namespace

void check_synth_config(const SynthConfig& c) {
  auto req = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, "synthetic config: " + what);
  };
  req(c.articles >= 2, "need at least two articles");
  req(!c.sentence_lengths.empty() || c.sentences_per_article >= 1, "need sentences");
  req(c.min_words >= 2 && c.max_words >= c.min_words, "word counts must satisfy 2 <= min_words <= max_words");
  for (auto n : c.sentence_lengths) req(n >= 1, "sentence lengths must be >= 1");
  req(c.subjects >= 2, "need at least two subjects");
  req(c.layers >= 1 && c.heads >= 1, "need at least one layer and head");
  req(c.planted_layer < c.layers && c.planted_head < c.heads, "planted indices out of range");
  req(c.gain >= 0, "gain must be >= 0");
  req(c.noise_sd > 0 && c.bold_noise_sd > 0, "noise sd must be > 0");
  req(c.signal_weight >= 0 && c.signal_weight <= 1, "signal_weight must lie in [0, 1]");
  req(c.modulation_delta >= 0, "modulation_delta must be >= 0");
  req(c.mesh == "grid" || c.mesh == "ring", "mesh must be grid or ring");
  req(c.grid_width >= 1 && c.grid_height >= 1, "mesh must have vertices");
  req(!c.hemispheres.empty(), "need a hemisphere");
  req(c.responsive_fraction >= 0 && c.responsive_fraction <= 1, "responsive_fraction must lie in [0, 1]");
  req(c.merge_probability >= 0 && c.merge_probability <= 1, "merge_probability must lie in [0, 1]");
  req(c.bos_mass >= 0 && c.bos_mass < 1, "bos_mass must lie in [0, 1)");
  req(c.judges >= 1, "need at least one judge");
}

SynthTruth generate_synthetic_study(const SynthConfig& cfg, const std::filesystem::path& dir) {
  check_synth_config(cfg);
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::filesystem::create_directories(dir / "attention");

  // ---- manifest
  StudyManifest m;
  m.hemispheres = cfg.hemispheres;
  for (std::uint32_t a = 0; a < cfg.articles; ++a) m.articles.push_back("art" + std::to_string(a));
  std::vector<std::uint32_t> lengths = cfg.sentence_lengths;
  if (lengths.empty()) {
    std::uniform_int_distribution<std::uint32_t> len(cfg.min_words, cfg.max_words);
    for (std::uint32_t i = 0; i < cfg.articles * cfg.sentences_per_article; ++i) lengths.push_back(len(rng));
  }
  std::uint32_t word_counter = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    Sentence s;
    const auto a = static_cast<std::uint32_t>(i * cfg.articles / lengths.size());
    s.article = m.articles[a];
    s.id = s.article + "-s" + pad(static_cast<std::uint32_t>(i), 3);
    for (std::uint32_t w = 0; w < lengths[i]; ++w) s.words.push_back("word" + std::to_string(word_counter++));
    m.sentences.push_back(std::move(s));
  }
  for (std::uint32_t i = 0; i < cfg.subjects; ++i)
    m.subjects.push_back({"sub" + pad(i, 2), cfg.eye, cfg.fmri});
  m.models.push_back({"synth-llm", "synth", ModelModality::LLM, cfg.layers, cfg.heads});
  if (cfg.paired) {
    m.models.push_back({"synth-vlm", "synth", ModelModality::VLM, cfg.layers, cfg.heads});
    m.pairings.push_back({"synth-llm", "synth-vlm", "synth"});
  }
  check_manifest_invariants(m);
  write_file_atomic(dir / "study.json", serialize_study_manifest(m));

  // ---- visual strength inputs: norms, content words, judge scores
  std::map<std::string, double> ratings;
  ContentWordAnnotation content;
  std::vector<double> visual(m.sentences.size());
  std::vector<std::uint32_t> first_in_article(cfg.articles, UINT32_MAX);
  for (std::size_t i = 0; i < m.sentences.size(); ++i) {
    const auto a = static_cast<std::uint32_t>(*m.article_index(m.sentences[i].article));
    if (first_in_article[a] == UINT32_MAX) first_in_article[a] = static_cast<std::uint32_t>(i);
  }
  for (std::size_t i = 0; i < m.sentences.size(); ++i) {
    const auto& s = m.sentences[i];
    const auto a = static_cast<std::uint32_t>(*m.article_index(s.article));
    const std::uint32_t n = s.word_count();
    visual[i] = 0.5 + 4.0 * unif(rng);
    // One low-coverage sentence per article, one short sentence overall.
    const bool fallback = i == first_in_article[a] + 1 && n >= 4;
    const bool excluded = i == first_in_article[0] + 2 && n >= 2;
    std::vector<std::uint32_t> idx(n);
    for (std::uint32_t w = 0; w < n; ++w) idx[w] = w;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uint32_t n_content = excluded ? 2 : fallback ? 4 : std::max(std::min(n, 3u), static_cast<std::uint32_t>(std::lround(0.6 * n)));
    n_content = std::min(n_content, n);
    std::set<std::uint32_t> c(idx.begin(), idx.begin() + n_content);
    std::uint32_t k = 0;
    for (auto w : c) {
      const bool matched = !fallback || k < 2;
      if (matched) ratings[to_lower(s.words[w])] = clip(visual[i] + 0.3 * normal(rng), 0.0, 5.0);
      ++k;
    }
    if (!c.empty()) content[s.id] = std::move(c);
  }
  for (std::uint32_t extra = 0; extra < 20; ++extra)
    ratings["distractor" + std::to_string(extra)] = clip(2.5 + normal(rng), 0.0, 5.0);
  const VisionNorms norms(ratings);
  write_file_atomic(dir / "norms.csv", serialize_norms(norms));
  write_file_atomic(dir / "content_words.csv", serialize_content_words(content));

  std::vector<JudgeScoreRecord> judge_records;
  for (std::uint32_t j = 0; j < cfg.judges; ++j) {
    const std::string judge = "judge-" + std::string(1, static_cast<char>('a' + j % 26)) + (j >= 26 ? std::to_string(j) : "");
    const double offset = 0.3 * normal(rng), slope = 0.7 + 0.3 * unif(rng);
    for (std::size_t i = 0; i < m.sentences.size(); ++i) {
      auto it = content.find(m.sentences[i].id);
      if (it == content.end() || it->second.size() < kMinContent) continue;
      for (std::uint32_t rep = 0; rep < 3; ++rep) {
        auto sub = [&] { return clip(offset + slope * visual[i] + 0.25 * normal(rng), 0.0, 5.0); };
        JudgeScoreRecord r{m.sentences[i].id, judge, rep, 0, 0, 0, 0};
        r.scene_content = sub();
        r.visual_detail = sub();
        r.imageability = sub();
        r.confidence = 0.6 + 0.4 * unif(rng);
        judge_records.push_back(std::move(r));
      }
    }
  }
  write_file_atomic(dir / "judge_scores.json", serialize_judge_scores(judge_records));
  const VisualnessResult vis = compute_visualness(m, norms, content, judge_records);

  SynthTruth truth;
  truth.planted_layer = cfg.planted_layer;
  truth.planted_head = cfg.planted_head;
  for (const auto& md : m.models) truth.models.push_back(md.id);
  for (const auto& r : vis.records) truth.groups[r.sentence] = to_string(r.group);

  // ---- signal and attention dumps
  std::vector<std::vector<double>> signal(m.sentences.size());
  for (std::size_t i = 0; i < m.sentences.size(); ++i) signal[i] = dirichlet_rows(rng, m.sentences[i].word_count());
  // The planted head's random part is shared by every model, so paired models
  // differ only by delta (and their other heads).
  std::vector<std::vector<double>> planted_noise(m.sentences.size());
  for (std::size_t i = 0; i < m.sentences.size(); ++i) planted_noise[i] = dirichlet_rows(rng, m.sentences[i].word_count());
  const VisualGroup boosted = cfg.delta_on_low ? VisualGroup::Low : VisualGroup::High;
  for (const auto& md : m.models) {
    for (std::size_t i = 0; i < m.sentences.size(); ++i) {
      const auto& s = m.sentences[i];
      const std::uint32_t n = s.word_count();
      // token layout: BOS, then 1 or 2 tokens per word
      std::vector<std::int32_t> map{-1};
      std::vector<std::uint32_t> per_word(n, 0);
      for (std::uint32_t w = 0; w < n; ++w) {
        const std::uint32_t pieces = unif(rng) < cfg.merge_probability ? 2 : 1;
        for (std::uint32_t p = 0; p < pieces; ++p) map.push_back(static_cast<std::int32_t>(w));
        per_word[w] = pieces;
      }
      write_file_atomic(dir / "attention" / wordmap_filename(md.id, s.id), serialize_word_map(map));
      const auto n_t = static_cast<std::uint32_t>(map.size());
      double w = cfg.signal_weight;
      if (md.modality == ModelModality::VLM && vis.records[i].group == boosted)
        w = std::min(1.0, w + cfg.modulation_delta);
      for (std::uint32_t layer = 0; layer < md.layers; ++layer) {
        Tensor t{{md.heads, n_t, n_t}, std::vector<float>(static_cast<std::size_t>(md.heads) * n_t * n_t, 0.0f)};
        for (std::uint32_t h = 0; h < md.heads; ++h) {
          const bool planted = layer == cfg.planted_layer && h == cfg.planted_head;
          const auto R = planted ? planted_noise[i] : dirichlet_rows(rng, n);
          const double wh = planted ? w : 0.0;
          float* head = t.values.data() + static_cast<std::size_t>(h) * n_t * n_t;
          head[0] = 1.0f;
          for (std::uint32_t q = 1; q < n_t; ++q) {
            const auto u = static_cast<std::uint32_t>(map[q]);
            float* row = head + static_cast<std::size_t>(q) * n_t;
            row[0] = static_cast<float>(cfg.bos_mass);
            for (std::uint32_t k = 1; k < n_t; ++k) {
              const auto v = static_cast<std::uint32_t>(map[k]);
              const double word_weight = wh * signal[i][u * n + v] + (1.0 - wh) * R[u * n + v];
              row[k] = static_cast<float>((1.0 - cfg.bos_mass) * word_weight / per_word[v]);
            }
          }
        }
        write_tensor(dir / "attention" / attention_filename(md.id, s.id, layer), t);
      }
    }
  }

  // ---- fixations, regressions and BOLD
  std::vector<double> eta;  // shared per-pair rate noise
  const PairIndex index(m);
  for (std::size_t p = 0; p < index.size(); ++p) eta.push_back(normal(rng));

  std::vector<MeshAdjacency> meshes;
  for (auto h : cfg.hemispheres) {
    meshes.push_back(make_mesh(cfg, h));
    write_file_atomic(dir / mesh_filename(h), serialize_mesh_adjacency(meshes.back()));
  }
  const std::uint32_t V = cfg.grid_width * cfg.grid_height;
  truth.responsive.assign(V, 0);
  {
    const double side = std::sqrt(cfg.responsive_fraction);
    const auto pw = static_cast<std::uint32_t>(std::ceil(side * cfg.grid_width - 1e-9));
    const auto ph = static_cast<std::uint32_t>(std::ceil(side * cfg.grid_height - 1e-9));
    for (std::uint32_t y = 0; y < ph; ++y)
      for (std::uint32_t x = 0; x < pw; ++x) truth.responsive[y * cfg.grid_width + x] = 1;
  }

  std::vector<FixationLog> logs;
  for (const auto& subj : m.subjects) {
    FixationLog log{subj.id, {}};
    struct Event {
      std::size_t pair;
      double onset_ms;
    };
    std::vector<std::vector<Event>> events_by_run(cfg.articles);
    for (std::uint32_t a = 0; a < cfg.articles; ++a) {
      const std::string run = "run" + std::to_string(a);
      double clock = 200.0;
      for (std::size_t i = 0; i < m.sentences.size(); ++i) {
        if (m.sentences[i].article != m.articles[a]) continue;
        const std::uint32_t n = m.sentences[i].word_count();
        std::vector<std::pair<std::uint32_t, std::uint32_t>> regressions;
        for (std::uint32_t l = 1; l < n; ++l)
          for (std::uint32_t mm = 0; mm < l; ++mm) {
            const std::size_t p = index.index(i, l, mm);
            const double rate = clip(cfg.base_rate + cfg.gain * signal[i][l * n + mm] + cfg.noise_sd * eta[p], 0.0, 20.0);
            const int count = rate > 0 ? std::poisson_distribution<int>(rate)(rng) : 0;
            for (int c = 0; c < count; ++c) regressions.emplace_back(l, mm);
          }
        const auto seq = fixation_sequence(regressions, n);
        for (std::size_t k = 0; k < seq.size(); ++k) {
          log.records.push_back({m.sentences[i].id, static_cast<std::uint32_t>(k), seq[k], clock, run});
          if (k > 0 && seq[k - 1] > seq[k]) events_by_run[a].push_back({index.index(i, seq[k - 1], seq[k]), clock});
          clock += m.tr_seconds * 1000.0;
        }
      }
    }
    if (cfg.fmri) {
      for (std::size_t hi = 0; hi < cfg.hemispheres.size(); ++hi) {
        for (std::uint32_t a = 0; a < cfg.articles; ++a) {
          std::int64_t last = 0;
          for (const auto& e : events_by_run[a]) last = std::max(last, scan_index_for_transition(e.onset_ms, m.tr_seconds));
          BoldSurfaceSeries b;
          b.subject = subj.id;
          b.run = "run" + std::to_string(a);
          b.hemi = cfg.hemispheres[hi];
          b.vertex_count = V;
          b.timepoints = static_cast<std::uint32_t>(std::max<std::int64_t>(last + 5, 20));
          b.tr_seconds = m.tr_seconds;
          std::vector<double> vals(static_cast<std::size_t>(V) * b.timepoints);
          for (auto& x : vals) x = normal(rng);
          for (const auto& e : events_by_run[a]) {
            const auto t = static_cast<std::size_t>(scan_index_for_transition(e.onset_ms, m.tr_seconds));
            const auto entry = index.entry(e.pair);
            const double s = signal[entry.sentence][entry.l * index.length(entry.sentence) + entry.m];
            for (std::uint32_t v = 0; v < V; ++v)
              if (truth.responsive[v]) vals[v * b.timepoints + t] = cfg.gain * s + cfg.bold_noise_sd * normal(rng);
          }
          b.values.resize(vals.size());
          for (std::uint32_t v = 0; v < V; ++v) {
            double mean = 0, sq = 0;
            for (std::uint32_t t = 0; t < b.timepoints; ++t) mean += vals[v * b.timepoints + t];
            mean /= b.timepoints;
            for (std::uint32_t t = 0; t < b.timepoints; ++t) sq += std::pow(vals[v * b.timepoints + t] - mean, 2);
            const double sd = std::sqrt(sq / b.timepoints);
            for (std::uint32_t t = 0; t < b.timepoints; ++t)
              b.values[v * b.timepoints + t] = static_cast<float>(sd > 0 ? (vals[v * b.timepoints + t] - mean) / sd : 0.0);
          }
          write_bold(dir / bold_filename(subj.id, b.run, b.hemi), b);
        }
      }
    }
    logs.push_back(std::move(log));
  }
  write_file_atomic(dir / "fixations.csv", serialize_fixations(logs));

  nlohmann::ordered_json tj;
  tj["seed"] = cfg.seed;
  tj["planted_layer"] = cfg.planted_layer;
  tj["planted_head"] = cfg.planted_head;
  tj["gain"] = cfg.gain;
  tj["signal_weight"] = cfg.signal_weight;
  tj["modulation_delta"] = cfg.modulation_delta;
  tj["delta_on_low"] = cfg.delta_on_low;
  tj["models"] = truth.models;
  tj["groups"] = truth.groups;
  std::vector<std::uint32_t> resp;
  for (std::uint32_t v = 0; v < V; ++v)
    if (truth.responsive[v]) resp.push_back(v);
  tj["responsive_vertices"] = resp;
  write_file_atomic(dir / "synth_truth.json", tj.dump(2) + "\n");

  nlohmann::ordered_json pj;
  pj["study_dir"] = ".";
  pj["attention_dir"] = "attention";
  pj["output_dir"] = "out";
  pj["seed"] = cfg.seed;
  pj["n_perm"] = 1000;
  pj["n_perm_vertex"] = 1000;
  truth.config_path = dir / "pipeline.json";
  write_file_atomic(truth.config_path, pj.dump(2) + "\n");
  return truth;
}

SynthConfig parse_synth_config(std::string_view text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::ParseError, source + ": " + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::ParseError, source + ": expected an object");
  SynthConfig c;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "articles") c.articles = v.get<std::uint32_t>();
      else if (key == "sentences_per_article") c.sentences_per_article = v.get<std::uint32_t>();
      else if (key == "min_words") c.min_words = v.get<std::uint32_t>();
      else if (key == "max_words") c.max_words = v.get<std::uint32_t>();
      else if (key == "sentence_lengths") c.sentence_lengths = v.get<std::vector<std::uint32_t>>();
      else if (key == "subjects") c.subjects = v.get<std::uint32_t>();
      else if (key == "eye") c.eye = v.get<bool>();
      else if (key == "fmri") c.fmri = v.get<bool>();
      else if (key == "layers") c.layers = v.get<std::uint32_t>();
      else if (key == "heads") c.heads = v.get<std::uint32_t>();
      else if (key == "planted_layer") c.planted_layer = v.get<std::uint32_t>();
      else if (key == "planted_head") c.planted_head = v.get<std::uint32_t>();
      else if (key == "paired") c.paired = v.get<bool>();
      else if (key == "gain") c.gain = v.get<double>();
      else if (key == "noise_sd") c.noise_sd = v.get<double>();
      else if (key == "base_rate") c.base_rate = v.get<double>();
      else if (key == "bold_noise_sd") c.bold_noise_sd = v.get<double>();
      else if (key == "signal_weight") c.signal_weight = v.get<double>();
      else if (key == "modulation_delta") c.modulation_delta = v.get<double>();
      else if (key == "delta_on_low") c.delta_on_low = v.get<bool>();
      else if (key == "mesh") c.mesh = v.get<std::string>();
      else if (key == "grid_width") c.grid_width = v.get<std::uint32_t>();
      else if (key == "grid_height") c.grid_height = v.get<std::uint32_t>();
      else if (key == "hemispheres") {
        c.hemispheres.clear();
        for (const auto& h : v) c.hemispheres.push_back(parse_hemi(h.get<std::string>()));
      } else if (key == "responsive_fraction") c.responsive_fraction = v.get<double>();
      else if (key == "merge_probability") c.merge_probability = v.get<double>();
      else if (key == "bos_mass") c.bos_mass = v.get<double>();
      else if (key == "judges") c.judges = v.get<std::uint32_t>();
      else fail(ErrorKind::ParseError, source + ": unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, source + ": " + e.what());
  }
  check_synth_config(c);
  return c;
}

}  // namespace readalign
