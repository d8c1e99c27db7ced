// vismetric: command-line front end for the evaluation pipeline.
//
//   vismetric ingest      --dataset data.jsonl
//   vismetric embed       --dataset data.jsonl --provider toy
//   vismetric imagine     --dataset data.jsonl --steps 200
//   vismetric score       --dataset data.jsonl
//   vismetric correlate   --dataset data.jsonl --correlation kendall
//   vismetric render-case --dataset data.jsonl --id ex-17
//   vismetric cache stats|verify --cache-dir DIR
//
// Exit codes: 0 ok, 2 validation, 3 provider, 4 integrity, 1 anything else.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vismetric/pipeline.hpp"

namespace {

using namespace vismetric;

struct Overrides {
  std::string config;
  std::optional<std::string> dataset, provider, bert_provider, cache_dir, output_dir, correlation, kendall_variant,
      tokenization, metric_scale, optimizer;
  std::optional<std::vector<std::string>> metrics, sims;
  std::optional<int> steps, restarts;
  std::optional<double> step_size, bin_width;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  bool truncate = false, normalize = false, smoothing = false;

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (dataset) c.dataset = *dataset;
    if (provider) c.provider = *provider;
    if (bert_provider) c.bert_provider = *bert_provider;
    if (cache_dir) c.cache_dir = *cache_dir;
    if (output_dir) c.output_dir = *output_dir;
    if (correlation) c.correlation = *correlation;
    if (kendall_variant) c.kendall_variant = *kendall_variant;
    if (tokenization) c.tokenization = *tokenization;
    if (metric_scale) c.metric_scale = *metric_scale;
    if (optimizer) c.generation.optimizer = parse_optimizer(*optimizer);
    if (metrics) c.metrics = *metrics;
    if (sims) c.sims = *sims;
    if (steps) c.generation.steps = *steps;
    if (restarts) c.generation.restarts = *restarts;
    if (step_size) c.generation.step_size = *step_size;
    if (bin_width) c.histogram_bin_width = *bin_width;
    if (seed) c.seed = *seed;
    if (workers) c.workers = *workers;
    if (truncate) c.truncate = true;
    if (normalize) c.normalize_metrics = true;
    if (smoothing) c.bleu_smoothing = true;
    c.validate();
    return c;
  }
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run config; flags override its values");
  app->add_option("--dataset", o.dataset, "JSONL dataset path");
  app->add_option("--provider", o.provider, "imagination provider: toy or http://host:port");
  app->add_option("--bert-provider", o.bert_provider, "text encoder provider: toy-bert or http://host:port");
  app->add_option("--cache-dir", o.cache_dir, "embedding cache directory");
  app->add_option("--out", o.output_dir, "output directory");
  app->add_option("--metrics", o.metrics, "base metrics")->delimiter(',');
  app->add_option("--sims", o.sims, "similarities: bert_text,ie_text,ie_image,ie_text_image")->delimiter(',');
  app->add_option("--correlation", o.correlation, "kendall or pearson");
  app->add_option("--kendall-variant", o.kendall_variant, "tau_b or tau_a");
  app->add_option("--tokenization", o.tokenization, "default or whitespace");
  app->add_option("--metric-scale", o.metric_scale, "unit or percent");
  app->add_option("--optimizer", o.optimizer, "adam or gd");
  app->add_option("--steps", o.steps, "optimization steps per imagination");
  app->add_option("--restarts", o.restarts, "random restarts per imagination");
  app->add_option("--step-size", o.step_size, "optimizer step size");
  app->add_option("--bin-width", o.bin_width, "histogram bin width");
  app->add_option("--seed", o.seed, "generation seed");
  app->add_option("--workers", o.workers, "worker threads (0 = all cores)");
  app->add_flag("--truncate", o.truncate, "truncate texts over the provider token limit");
  app->add_flag("--normalize-metrics", o.normalize, "min-max normalize base metrics before augmentation");
  app->add_flag("--bleu-smoothing", o.smoothing, "add-one smoothing for BLEU orders >= 2");
}

int run(int argc, char** argv) {
  CLI::App app{"vismetric: n-gram metrics augmented with machine-imagination similarity"};
  app.require_subcommand(1);
  Overrides o;
  std::string case_id, cache_action;

  auto* ingest = app.add_subcommand("ingest", "validate a dataset and print its summary");
  auto* embed = app.add_subcommand("embed", "compute text and token embeddings");
  auto* imagine = app.add_subcommand("imagine", "generate imaginations for every hypothesis and reference");
  auto* score = app.add_subcommand("score", "write per-example scores");
  auto* correlate = app.add_subcommand("correlate", "correlate scores with human judgments");
  auto* render = app.add_subcommand("render-case", "write a case-study bundle for one example");
  auto* config = app.add_subcommand("config", "print the resolved run config and its digest");
  for (auto* sub : {ingest, embed, imagine, score, correlate, render, config}) add_common(sub, o);
  render->add_option("--id", case_id, "example id")->required();

  auto* cache = app.add_subcommand("cache", "cache maintenance");
  cache->add_option("action", cache_action, "stats or verify")->required()->check(CLI::IsMember({"stats", "verify"}));
  cache->add_option("--cache-dir", o.cache_dir, "embedding cache directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (cache->parsed()) {
    EmbeddingCache c(o.cache_dir.value_or(RunConfig{}.cache_dir));
    if (cache_action == "stats") {
      const auto s = c.stats();
      for (const auto& [kind, n] : s.entries_by_kind) std::printf("entries.%s=%zu\n", kind.c_str(), n);
      std::printf("images=%zu quarantined=%zu bytes=%zu\n", s.images, s.quarantined, s.bytes);
      return 0;
    }
    const auto bad = c.verify();
    for (const auto& p : bad) std::printf("quarantined %s\n", p.c_str());
    std::printf("%zu corrupted file(s)\n", bad.size());
    return bad.empty() ? 0 : 4;
  }

  const auto cfg = o.resolve();
  if (config->parsed()) {
    std::printf("%s\nconfig_digest=%s\n", cfg.to_json().dump(2).c_str(), cfg.digest().c_str());
    return 0;
  }
  if (ingest->parsed()) {
    const auto s = cmd_ingest(cfg);
    std::printf("dataset=%s task=%s examples=%zu mean_references=%.2f total_references=%zu judged=%zu\n",
                s.name.c_str(), s.task.c_str(), s.examples, s.mean_references, s.total_references, s.judged_examples);
    std::printf("mean_reference_tokens=%.2f mean_hypothesis_tokens=%.2f\n", s.mean_reference_tokens,
                s.mean_hypothesis_tokens);
    return 0;
  }
  if (correlate->parsed()) {
    const auto out = cmd_correlate(cfg);
    std::fputs(render_markdown(out.report).c_str(), stdout);
    for (const auto& f : out.files) std::fprintf(stderr, "wrote %s\n", f.string().c_str());
    return 0;
  }

  auto providers = make_providers(cfg);
  if (embed->parsed()) {
    const auto s = cmd_embed(cfg, providers);
    std::printf("text_embeddings=%zu cls_embeddings=%zu token_embeddings=%zu provider_calls=%zu\n", s.text_embeddings,
                s.cls_embeddings, s.token_embeddings, s.provider_calls);
  } else if (imagine->parsed()) {
    const auto s = cmd_imagine(cfg, providers);
    std::printf("hypothesis_images=%zu reference_images=%zu non_improving=%zu provider_calls=%zu\n",
                s.hypothesis_images, s.reference_images, s.non_improving, s.provider_calls);
  } else if (score->parsed()) {
    const auto t = cmd_score(cfg, providers);
    std::printf("scored %zu examples, %zu columns -> %s\n", t.rows.size(), t.columns.size(),
                score_path(cfg).string().c_str());
  } else if (render->parsed()) {
    const auto dir = cmd_render_case(cfg, providers, case_id);
    std::printf("wrote %s\n", dir.string().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const vismetric::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
