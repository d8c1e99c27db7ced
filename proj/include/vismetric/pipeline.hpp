#pragma once

// Pipeline stages behind the CLI: ingest, embed, imagine, score, correlate,
// render-case, and cache maintenance. Every stage reads a RunConfig, validates
// its inputs, and stamps the config digest into each file it writes.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vismetric/cache.hpp"
#include "vismetric/codec.hpp"
#include "vismetric/corpus.hpp"
#include "vismetric/correlation.hpp"
#include "vismetric/error.hpp"
#include "vismetric/imagination.hpp"
#include "vismetric/ngram_metrics.hpp"
#include "vismetric/provider.hpp"
#include "vismetric/similarity.hpp"

namespace vismetric {

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> ids = {"bleu1", "bleu2", "bleu3",  "bleu4", "rouge1",
                                               "rouge2", "rougeL", "meteor", "cider", "bertscore"};
  return ids;
}

// CLI id -> column id.
inline const std::vector<std::pair<std::string, std::string>>& known_similarities() {
  static const std::vector<std::pair<std::string, std::string>> ids = {
      {"bert_text", "BERT_text"}, {"ie_text", "IE_text"}, {"ie_image", "IE_image"}, {"ie_text_image", "IE_text&image"}};
  return ids;
}

inline std::string similarity_column(const std::string& id) {
  for (const auto& [k, v] : known_similarities())
    if (k == id || v == id) return v;
  throw ValidationError("unknown similarity '" + id + "'");
}

struct RunConfig {
  std::string dataset;
  std::string provider = "toy";
  std::string bert_provider = "toy-bert";
  std::string cache_dir = ".vismetric-cache";
  std::string output_dir = "vismetric-out";
  std::vector<std::string> metrics = known_metrics();
  std::vector<std::string> sims = {"bert_text", "ie_text", "ie_image", "ie_text_image"};
  std::string correlation = "kendall";
  std::string kendall_variant = "tau_b";
  std::string tokenization = "default";
  std::string metric_scale = "unit";  // unit | percent
  bool normalize_metrics = false;
  bool bleu_smoothing = false;
  bool truncate = false;
  double histogram_bin_width = 0.1;
  std::uint64_t seed = 0;
  GenerationConfig generation{};
  unsigned workers = 0;  // 0 = logical CPU count; excluded from the digest

  bool wants_sim(const std::string& id) const { return std::find(sims.begin(), sims.end(), id) != sims.end(); }
  bool wants_metric(const std::string& id) const { return std::find(metrics.begin(), metrics.end(), id) != metrics.end(); }
  bool needs_images() const { return wants_sim("ie_image") || wants_sim("ie_text_image"); }
  bool needs_clip_text() const { return wants_sim("ie_text") || wants_sim("ie_text_image"); }

  void validate() const {
    if (dataset.empty()) throw ValidationError("no dataset given (--dataset)");
    for (const auto& m : metrics)
      if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end())
        throw ValidationError("unknown metric '" + m + "'");
    for (const auto& s : sims) {
      bool ok = false;
      for (const auto& [k, _] : known_similarities()) ok = ok || k == s;
      if (!ok) throw ValidationError("unknown similarity '" + s + "'");
    }
    if (correlation != "kendall" && correlation != "pearson") throw ValidationError("correlation must be kendall or pearson");
    if (kendall_variant != "tau_b" && kendall_variant != "tau_a") throw ValidationError("kendall variant must be tau_b or tau_a");
    if (metric_scale != "unit" && metric_scale != "percent") throw ValidationError("metric scale must be unit or percent");
    if (!(histogram_bin_width > 0.0)) throw ValidationError("histogram bin width must be > 0");
    parse_tokenization_policy(tokenization);
    generation.validate();
  }

  GenerationConfig effective_generation() const {
    GenerationConfig g = generation;
    g.seed = seed;
    return g;
  }

  nlohmann::json to_json(bool include_runtime = true) const {
    nlohmann::json j{{"dataset", dataset},
                     {"provider", provider},
                     {"bert_provider", bert_provider},
                     {"cache_dir", cache_dir},
                     {"output_dir", output_dir},
                     {"metrics", metrics},
                     {"sims", sims},
                     {"correlation", correlation},
                     {"kendall_variant", kendall_variant},
                     {"tokenization", tokenization},
                     {"metric_scale", metric_scale},
                     {"normalize_metrics", normalize_metrics},
                     {"bleu_smoothing", bleu_smoothing},
                     {"truncate", truncate},
                     {"histogram_bin_width", histogram_bin_width},
                     {"seed", seed},
                     {"generation",
                      {{"steps", generation.steps},
                       {"step_size", generation.step_size},
                       {"optimizer", to_string(generation.optimizer)},
                       {"restarts", generation.restarts}}}};
    if (include_runtime) j["workers"] = workers;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> allowed = {
        "dataset",      "provider",        "bert_provider",  "cache_dir", "output_dir",          "metrics",
        "sims",         "correlation",     "kendall_variant", "tokenization", "metric_scale",    "normalize_metrics",
        "bleu_smoothing", "truncate",      "histogram_bin_width", "seed", "generation",          "workers"};
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [k, _] : j.items())
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) throw ValidationError("unknown config key '" + k + "'");
    RunConfig c;
    try {
      c.dataset = j.value("dataset", c.dataset);
      c.provider = j.value("provider", c.provider);
      c.bert_provider = j.value("bert_provider", c.bert_provider);
      c.cache_dir = j.value("cache_dir", c.cache_dir);
      c.output_dir = j.value("output_dir", c.output_dir);
      c.metrics = j.value("metrics", c.metrics);
      c.sims = j.value("sims", c.sims);
      c.correlation = j.value("correlation", c.correlation);
      c.kendall_variant = j.value("kendall_variant", c.kendall_variant);
      c.tokenization = j.value("tokenization", c.tokenization);
      c.metric_scale = j.value("metric_scale", c.metric_scale);
      c.normalize_metrics = j.value("normalize_metrics", c.normalize_metrics);
      c.bleu_smoothing = j.value("bleu_smoothing", c.bleu_smoothing);
      c.truncate = j.value("truncate", c.truncate);
      c.histogram_bin_width = j.value("histogram_bin_width", c.histogram_bin_width);
      c.seed = j.value("seed", c.seed);
      c.workers = j.value("workers", c.workers);
      if (j.contains("generation")) {
        const auto& g = j["generation"];
        if (!g.is_object()) throw ValidationError("config: generation must be an object");
        for (const auto& [k, _] : g.items())
          if (k != "steps" && k != "step_size" && k != "optimizer" && k != "restarts")
            throw ValidationError("unknown config key 'generation." + k + "'");
        c.generation.steps = g.value("steps", c.generation.steps);
        c.generation.step_size = g.value("step_size", c.generation.step_size);
        c.generation.optimizer = parse_optimizer(g.value("optimizer", to_string(c.generation.optimizer)));
        c.generation.restarts = g.value("restarts", c.generation.restarts);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
  }

  /// SHA-256 of the canonical (key-sorted, compact) JSON, excluding runtime-only knobs.
  std::string digest() const { return codec::to_hex(codec::sha256(to_json(false).dump())); }
};

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  try {
    return RunConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Helpers

/// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
  }
  if (failure) std::rethrow_exception(failure);
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline nlohmann::json read_stage_marker(const RunConfig& cfg, const std::string& stage, const std::string& hint) {
  const auto path = std::filesystem::path(cfg.output_dir) / (stage + ".json");
  std::ifstream in(path);
  if (!in) throw ValidationError("missing " + path.string() + "; run `vismetric " + hint + "` first");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt stage marker " + path.string() + ": " + e.what() + "; re-run `vismetric " + hint + "`");
  }
}

inline void write_stage_marker(const RunConfig& cfg, const std::string& stage, nlohmann::json body) {
  body["config_digest"] = cfg.digest();
  body["stage"] = stage;
  write_file(std::filesystem::path(cfg.output_dir) / (stage + ".json"), body.dump(2) + "\n");
}

inline std::vector<std::pair<std::string, std::string>> provenance_header(const RunConfig& cfg) {
  return {{"config_digest", cfg.digest()},
          {"tokenization", cfg.tokenization},
          {"granularity", "segment-level (per example)"},
          {"rouge", "F1 (beta=1), max over references"},
          {"bleu_smoothing", cfg.bleu_smoothing ? "add-one (orders >= 2)" : "none"},
          {"meteor", "exact+porter-stem, alpha=0.9 beta=3 gamma=0.5"},
          {"cider", "base (no length penalty, no x10)"},
          {"bertscore", "F1, max over references, no idf, no rescaling"},
          {"metric_scale", cfg.metric_scale},
          {"normalize_metrics", cfg.normalize_metrics ? "min-max" : "off"},
          {"kendall_variant", cfg.kendall_variant}};
}

// ---------------------------------------------------------------------------
// Stage: ingest

struct IngestSummary {
  std::string name;
  std::string task;
  std::size_t examples = 0;
  double mean_references = 0.0;
  std::size_t total_references = 0;
  std::size_t judged_examples = 0;
  double mean_reference_tokens = 0.0;
  double mean_hypothesis_tokens = 0.0;
};

inline IngestSummary cmd_ingest(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = load_dataset(cfg.dataset);
  const auto policy = parse_tokenization_policy(cfg.tokenization);
  IngestSummary s{ds.name, to_string(ds.task), ds.size(), ds.mean_references(), ds.total_references(), 0, 0.0, 0.0};
  double ref_tokens = 0, hyp_tokens = 0;
  for (const auto& ex : ds.examples) {
    if (!ex.judge_scores.empty()) ++s.judged_examples;
    hyp_tokens += static_cast<double>(normalize_tokens(ex.hypothesis.text, policy).size());
    for (const auto& r : ex.references) ref_tokens += static_cast<double>(normalize_tokens(r.text, policy).size());
  }
  s.mean_reference_tokens = ref_tokens / static_cast<double>(s.total_references);
  s.mean_hypothesis_tokens = hyp_tokens / static_cast<double>(s.examples);
  write_stage_marker(cfg, "ingest",
                     {{"name", s.name},
                      {"task", s.task},
                      {"examples", s.examples},
                      {"mean_references", s.mean_references},
                      {"total_references", s.total_references},
                      {"judged_examples", s.judged_examples},
                      {"mean_reference_tokens", s.mean_reference_tokens},
                      {"mean_hypothesis_tokens", s.mean_hypothesis_tokens}});
  return s;
}

// ---------------------------------------------------------------------------
// Stage: embed

struct Providers {
  std::unique_ptr<Provider> clip;
  std::unique_ptr<Provider> bert;
};

inline Providers make_providers(const RunConfig& cfg) {
  return {make_provider(cfg.provider, cfg.effective_generation()), make_provider(cfg.bert_provider)};
}

inline std::vector<TextSnippet> all_texts(const Dataset& ds) {
  std::vector<TextSnippet> texts;
  for (const auto& ex : ds.examples) {
    texts.push_back(ex.hypothesis);
    texts.insert(texts.end(), ex.references.begin(), ex.references.end());
  }
  return texts;
}

struct EmbedSummary {
  std::size_t text_embeddings = 0;
  std::size_t cls_embeddings = 0;
  std::size_t token_embeddings = 0;
  std::size_t provider_calls = 0;
};

inline EmbedSummary cmd_embed(const RunConfig& cfg, Providers& providers) {
  cfg.validate();
  const auto ds = load_dataset(cfg.dataset);
  EmbeddingCache cache(cfg.cache_dir);
  const EmbedOptions opts{cfg.truncate};
  const auto texts = all_texts(ds);
  EmbedSummary s;
  const auto calls_before = providers.clip->calls() + providers.bert->calls();
  if (cfg.needs_clip_text()) s.text_embeddings = get_or_compute_embeddings(texts, *providers.clip, cache, opts).size();
  if (cfg.wants_sim("bert_text")) s.cls_embeddings = get_or_compute_embeddings(texts, *providers.bert, cache, opts).size();
  if (cfg.wants_metric("bertscore"))
    for (const auto& t : texts) {
      get_or_compute_token_embeddings(t, *providers.bert, cache, opts);
      ++s.token_embeddings;
    }
  s.provider_calls = providers.clip->calls() + providers.bert->calls() - calls_before;
  write_stage_marker(cfg, "embed",
                     {{"text_embeddings", s.text_embeddings},
                      {"cls_embeddings", s.cls_embeddings},
                      {"token_embeddings", s.token_embeddings}});
  return s;
}

// ---------------------------------------------------------------------------
// Stage: imagine

struct ImagineSummary {
  std::size_t hypothesis_images = 0;
  std::size_t reference_images = 0;
  std::size_t non_improving = 0;
  std::size_t provider_calls = 0;
};

inline ImagineRequest imagine_request(const RunConfig& cfg) { return {cfg.generation.steps, cfg.seed}; }

/// One imagination per hypothesis and one per reference.
inline ImagineSummary cmd_imagine(const RunConfig& cfg, Providers& providers) {
  cfg.validate();
  const auto ds = load_dataset(cfg.dataset);
  EmbeddingCache cache(cfg.cache_dir);
  const EmbedOptions opts{cfg.truncate};
  const auto req = imagine_request(cfg);
  ImagineSummary s;
  const auto calls_before = providers.clip->calls();
  for (const auto& ex : ds.examples) {
    if (get_or_compute_imagination(ex.hypothesis, *providers.clip, cache, req, opts).non_improving) ++s.non_improving;
    ++s.hypothesis_images;
    for (const auto& r : ex.references) {
      if (get_or_compute_imagination(r, *providers.clip, cache, req, opts).non_improving) ++s.non_improving;
      ++s.reference_images;
    }
  }
  s.provider_calls = providers.clip->calls() - calls_before;
  write_stage_marker(cfg, "imagine",
                     {{"hypothesis_images", s.hypothesis_images},
                      {"reference_images", s.reference_images},
                      {"non_improving", s.non_improving},
                      {"steps", req.steps},
                      {"seed", req.seed}});
  return s;
}

// ---------------------------------------------------------------------------
// Stage: score

struct ScoreTable {
  std::vector<std::string> columns;  // excluding the leading id column
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ValidationError("score file has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  ScoreSeries series(const std::string& dataset, const std::string& name) const {
    const auto c = column(name);
    ScoreSeries s{dataset, name, ids, {}};
    for (const auto& r : rows) s.values.push_back(r[c]);
    return s;
  }
};

inline std::string metric_column(const std::string& id) { return id == "bertscore" ? "BERTScore" : id; }

inline bool is_unit_ngram_metric(const std::string& id) {
  return id.rfind("bleu", 0) == 0 || id.rfind("rouge", 0) == 0 || id == "meteor";
}

/// Per-example metric, similarity and base+similarity values for the configured run.
inline ScoreTable compute_scores(const RunConfig& cfg, const Dataset& ds, Providers& providers, EmbeddingCache& cache) {
  const auto policy = parse_tokenization_policy(cfg.tokenization);
  const EmbedOptions opts{cfg.truncate};
  const std::size_t n = ds.size();

  // Embeddings and imaginations are fetched up front (sequential, cache-backed).
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + 1 + ds.examples[i].references.size();
  const auto texts = all_texts(ds);
  std::vector<EmbeddingVector> clip_text, cls, image;
  std::vector<TokenEmbeddingMatrix> token_mats;
  if (cfg.needs_clip_text()) clip_text = get_or_compute_embeddings(texts, *providers.clip, cache, opts);
  if (cfg.wants_sim("bert_text")) cls = get_or_compute_embeddings(texts, *providers.bert, cache, opts);
  if (cfg.wants_metric("bertscore"))
    for (const auto& t : texts) token_mats.push_back(get_or_compute_token_embeddings(t, *providers.bert, cache, opts));
  if (cfg.needs_images()) {
    const auto req = imagine_request(cfg);
    for (const auto& t : texts) image.push_back(get_or_compute_imagination(t, *providers.clip, cache, req, opts).image_embedding);
  }

  std::vector<Tokens> tok(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) tok[i] = normalize_tokens(texts[i].text, policy);
  std::optional<CiderIndex> cider_index;
  if (cfg.wants_metric("cider")) {
    std::vector<std::vector<Tokens>> corpus;
    for (std::size_t i = 0; i < n; ++i) corpus.emplace_back(tok.begin() + static_cast<std::ptrdiff_t>(offset[i] + 1),
                                                            tok.begin() + static_cast<std::ptrdiff_t>(offset[i + 1]));
    cider_index.emplace(corpus);
  }

  ScoreTable table;
  std::vector<std::string> metric_cols, sim_cols;
  for (const auto& m : cfg.metrics) metric_cols.push_back(metric_column(m));
  for (const auto& s : cfg.sims) sim_cols.push_back(similarity_column(s));
  table.columns = metric_cols;
  table.columns.insert(table.columns.end(), sim_cols.begin(), sim_cols.end());
  for (const auto& m : metric_cols)
    for (const auto& s : sim_cols) table.columns.push_back(m + "+" + s);
  table.rows.assign(n, std::vector<double>(table.columns.size(), 0.0));
  for (const auto& ex : ds.examples) table.ids.push_back(ex.id);

  const BleuOptions bleu_opts{cfg.bleu_smoothing};
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const std::size_t h = offset[i], r0 = offset[i] + 1, r1 = offset[i + 1];
    const Tokens& hyp = tok[h];
    const std::span<const Tokens> refs(tok.data() + r0, r1 - r0);
    auto& row = table.rows[i];
    for (std::size_t k = 0; k < cfg.metrics.size(); ++k) {
      const auto& m = cfg.metrics[k];
      double v = 0.0;
      if (m.rfind("bleu", 0) == 0)
        v = bleu_n(hyp, refs, m.back() - '0', bleu_opts).value;
      else if (m == "rouge1" || m == "rouge2")
        v = rouge_n(hyp, refs, m.back() - '0').value;
      else if (m == "rougeL")
        v = rouge_l(hyp, refs).value;
      else if (m == "meteor")
        v = meteor(hyp, refs).value;
      else if (m == "cider")
        v = cider(*cider_index, hyp, refs).value;
      else if (m == "bertscore")
        v = bertscore_f(token_mats[h], std::span<const TokenEmbeddingMatrix>(token_mats.data() + r0, r1 - r0)).value;
      if (cfg.metric_scale == "percent" && is_unit_ngram_metric(m)) v *= 100.0;
      row[k] = v;
    }
    std::optional<SimilarityScore> s_text, s_image;
    if (cfg.needs_clip_text())
      s_text = imagine_text(clip_text[h], std::span<const EmbeddingVector>(clip_text.data() + r0, r1 - r0));
    if (cfg.needs_images())
      s_image = imagine_image(image[h], std::span<const EmbeddingVector>(image.data() + r0, r1 - r0));
    for (std::size_t k = 0; k < cfg.sims.size(); ++k) {
      const auto& s = cfg.sims[k];
      double v = 0.0;
      if (s == "ie_text")
        v = s_text->value;
      else if (s == "ie_image")
        v = s_image->value;
      else if (s == "ie_text_image")
        v = imagine_text_image(*s_text, *s_image).value;
      else if (s == "bert_text")
        v = bert_text(cls[h], std::span<const EmbeddingVector>(cls.data() + r0, r1 - r0)).value;
      row[cfg.metrics.size() + k] = v;
    }
  });

  if (cfg.normalize_metrics) {
    for (std::size_t k = 0; k < cfg.metrics.size(); ++k) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = table.rows[i][k];
      const auto normed = minmax_normalize(col);
      for (std::size_t i = 0; i < n; ++i) table.rows[i][k] = normed[i];
    }
  }
  const std::size_t nm = cfg.metrics.size(), ns = cfg.sims.size();
  for (auto& row : table.rows)
    for (std::size_t a = 0; a < nm; ++a)
      for (std::size_t b = 0; b < ns; ++b) row[nm + ns + a * ns + b] = row[a] + row[nm + b];
  return table;
}

inline std::string render_score_csv(const RunConfig& cfg, const ScoreTable& t) {
  std::ostringstream out;
  for (const auto& [k, v] : provenance_header(cfg)) out << "# " << k << "=" << v << "\n";
  out << "id";
  for (const auto& c : t.columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    out << t.ids[i];
    for (double v : t.rows[i]) out << ',' << format_real(v);
    out << '\n';
  }
  return out.str();
}

inline ScoreTable parse_score_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing " + path.string() + "; run `vismetric score` first");
  ScoreTable t;
  std::string line;
  bool header = false;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split(line);
    if (!header) {
      if (cells.empty() || cells[0] != "id") throw ValidationError(path.string() + ": missing header row");
      t.columns.assign(cells.begin() + 1, cells.end());
      header = true;
      continue;
    }
    if (cells.size() != t.columns.size() + 1) throw ValidationError(path.string() + ": ragged row for '" + cells[0] + "'");
    t.ids.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) row.push_back(std::stod(cells[c]));
    t.rows.push_back(std::move(row));
  }
  if (!header) throw ValidationError(path.string() + ": empty score file");
  return t;
}

inline std::filesystem::path score_path(const RunConfig& cfg) { return std::filesystem::path(cfg.output_dir) / "scores.csv"; }

inline ScoreTable cmd_score(const RunConfig& cfg, Providers& providers) {
  cfg.validate();
  if (cfg.needs_clip_text() || cfg.wants_sim("bert_text") || cfg.wants_metric("bertscore")) read_stage_marker(cfg, "embed", "embed");
  if (cfg.needs_images()) read_stage_marker(cfg, "imagine", "imagine");
  const auto ds = load_dataset(cfg.dataset);
  EmbeddingCache cache(cfg.cache_dir);
  auto table = compute_scores(cfg, ds, providers, cache);
  write_file(score_path(cfg), render_score_csv(cfg, table));
  return table;
}

// ---------------------------------------------------------------------------
// Stage: correlate

struct CorrelateOutputs {
  CorrelationReport report;
  std::vector<std::filesystem::path> files;
};

inline ScoreSeries human_series(const Dataset& ds) {
  ScoreSeries h{ds.name, "human", {}, {}};
  for (const auto& ex : ds.examples) {
    h.ids.push_back(ex.id);
    h.values.push_back(mean_human_score(ex));
  }
  return h;
}

inline CorrelateOutputs cmd_correlate(const RunConfig& cfg) {
  cfg.validate();
  const auto ds = load_dataset(cfg.dataset);
  const auto table = parse_score_csv(score_path(cfg));
  const auto humans = human_series(ds);
  std::vector<ScoreSeries> metrics, sims;
  for (const auto& m : cfg.metrics) metrics.push_back(table.series(ds.name, metric_column(m)));
  for (const auto& s : cfg.sims) sims.push_back(table.series(ds.name, similarity_column(s)));
  const auto kind = cfg.correlation == "kendall" ? CorrelationKind::kKendall : CorrelationKind::kPearson;
  const auto variant = cfg.kendall_variant == "tau_b" ? KendallVariant::kTauB : KendallVariant::kTauA;

  CorrelateOutputs out{build_report(ds.name, metrics, sims, humans, kind, variant), {}};
  out.report.header = provenance_header(cfg);
  const std::filesystem::path dir(cfg.output_dir);
  const auto stem = "report_" + cfg.correlation;
  write_file(dir / (stem + ".md"), render_markdown(out.report));
  write_file(dir / (stem + ".csv"), render_csv(out.report));
  out.files = {dir / (stem + ".md"), dir / (stem + ".csv")};

  // Score distributions for the cosine-valued columns.
  std::vector<ScoreSeries> bounded = sims;
  if (cfg.wants_metric("bertscore")) bounded.push_back(table.series(ds.name, "BERTScore"));
  for (const auto& s : bounded) {
    auto name = s.metric_id;
    std::replace(name.begin(), name.end(), '&', '_');
    const auto path = dir / "histograms" / (name + ".csv");
    auto header = std::vector<std::pair<std::string, std::string>>{{"config_digest", cfg.digest()}, {"series", s.metric_id}};
    write_file(path, render_histogram_csv(histogram(s.values, cfg.histogram_bin_width), header));
    out.files.push_back(path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage: render-case

inline std::filesystem::path cmd_render_case(const RunConfig& cfg, Providers& providers, const std::string& example_id) {
  cfg.validate();
  const auto ds = load_dataset(cfg.dataset);
  const auto* ex = ds.find(example_id);
  if (!ex) throw ValidationError("no example with id '" + example_id + "'");
  const auto table = parse_score_csv(score_path(cfg));
  const auto row_it = std::find(table.ids.begin(), table.ids.end(), example_id);
  if (row_it == table.ids.end()) throw ValidationError("score file has no row for '" + example_id + "'; re-run `vismetric score`");
  const auto& row = table.rows[static_cast<std::size_t>(row_it - table.ids.begin())];

  const auto m = providers.clip->manifest();
  const bool images = m.supports_kind("imagine");
  if (images) read_stage_marker(cfg, "imagine", "imagine");
  EmbeddingCache cache(cfg.cache_dir);
  const EmbedOptions opts{cfg.truncate};
  const auto req = imagine_request(cfg);

  std::string dir_name = example_id;
  for (auto& c : dir_name)
    if (c == '/' || c == '\\') c = '_';
  const auto dir = std::filesystem::path(cfg.output_dir) / "cases" / dir_name;
  std::filesystem::create_directories(dir);

  auto image_for = [&](const TextSnippet& t, const std::string& file) -> std::string {
    if (!images) return "";
    auto rec = lookup_imagination(t, m, cache, req, opts);
    if (!rec) throw ValidationError("imagination for '" + file + "' not cached; run `vismetric imagine` first");
    write_file(dir / file, rec->png);
    return file;
  };

  nlohmann::json j{{"config_digest", cfg.digest()}, {"id", ex->id}, {"hypothesis", ex->hypothesis.text}};
  j["source"] = ex->source ? nlohmann::json(*ex->source) : nlohmann::json(nullptr);
  j["hypothesis_image"] = image_for(ex->hypothesis, "hypothesis.png");
  j["references"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ex->references.size(); ++i) {
    const auto file = "reference_" + std::to_string(i + 1) + ".png";
    j["references"].push_back({{"text", ex->references[i].text}, {"image", image_for(ex->references[i], file)}});
  }
  if (!ex->judge_scores.empty()) j["human_mean"] = mean_human_score(*ex);
  j["judge_scores"] = ex->judge_scores;
  j["scores"] = nlohmann::json::object();
  for (std::size_t c = 0; c < table.columns.size(); ++c) j["scores"][table.columns[c]] = row[c];
  write_file(dir / "case.json", j.dump(2) + "\n");

  std::ostringstream md;
  md << "# Case " << ex->id << "\n\n- config_digest: " << cfg.digest() << "\n";
  if (j.contains("human_mean")) md << "- human mean: " << format_real(j["human_mean"].get<double>()) << "\n";
  if (ex->source) md << "- source: " << *ex->source << "\n";
  md << "\n| | text | imagination |\n|---|---|---|\n";
  auto img_cell = [](const std::string& f) { return f.empty() ? std::string("—") : "![](" + f + ")"; };
  md << "| hypothesis | " << ex->hypothesis.text << " | " << img_cell(j["hypothesis_image"].get<std::string>()) << " |\n";
  for (std::size_t i = 0; i < ex->references.size(); ++i)
    md << "| reference " << i + 1 << " | " << ex->references[i].text << " | "
       << img_cell(j["references"][i]["image"].get<std::string>()) << " |\n";
  md << "\n| score | value |\n|---|---:|\n";
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", row[c]);
    md << "| " << table.columns[c] << " | " << buf << " |\n";
  }
  write_file(dir / "case.md", md.str());
  return dir;
}

}  // namespace vismetric
