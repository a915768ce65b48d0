#pragma once

// Experiment-runner command implementations, shared by the CLI binary and the
// test suite. Each command is a pure function of its inputs and the seed;
// rerunning with identical inputs produces byte-identical outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "fellas/attacks.hpp"
#include "fellas/config.hpp"
#include "fellas/fedsim.hpp"
#include "fellas/ingest.hpp"

namespace fellas {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void print_stats(std::ostream& os, const DatasetStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "users=%d items=%d interactions=%lld avg_length=%.2f density=%.2f%%\n",
                s.users, s.items, static_cast<long long>(s.interactions), s.avg_length,
                s.density_pct);
  os << buf;
}

inline Dataset resolve_dataset(const RunConfig& cfg) {
  if (cfg.synth) return make_synth_dataset(*cfg.synth);
  if (cfg.dataset_path.empty())
    throw std::invalid_argument("config: no dataset given");
  return load_dataset(cfg.dataset_path);
}

inline void run_ingest(const std::string& interactions_path,
                       const std::string& catalog_path, const std::string& out_dir,
                       int max_len, std::ostream& os = std::cout) {
  auto interactions = parse_interactions_file(interactions_path);
  auto catalog = parse_catalog_file(catalog_path);
  auto rep = ingest_dataset(interactions.records, catalog, max_len);
  if (rep.dataset.num_users() == 0)
    throw std::runtime_error("ingest produced no users (need >= 3 interactions each)");
  std::filesystem::create_directories(out_dir);
  save_dataset(rep.dataset, out_dir + "/dataset.json");
  os << "skipped_malformed=" << interactions.skipped + catalog.skipped
     << " dropped_untitled=" << rep.dropped_untitled << "\n";
  print_stats(os, dataset_stats(rep.dataset));
}

inline void run_synth(const SynthConfig& cfg, const std::string& out_dir,
                      std::ostream& os = std::cout) {
  Dataset d = make_synth_dataset(cfg);
  std::filesystem::create_directories(out_dir);
  save_dataset(d, out_dir + "/dataset.json");
  print_stats(os, dataset_stats(d));
}

inline void run_embed_cache(const RunConfig& cfg, std::ostream& os = std::cout) {
  if (cfg.provider.cache.empty())
    throw std::invalid_argument("embed-cache: provider.cache path required");
  Dataset d = resolve_dataset(cfg);
  auto provider = make_provider(cfg.provider);
  auto m = embed_items(d.catalog, *provider, cfg.provider.cache);
  os << "cached " << m.rows << "x" << m.cols << " embeddings to "
     << cfg.provider.cache << "\n";
}

inline void write_effective_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/effective_config.json", to_json(cfg).dump(2) + "\n");
}

inline MetricsRow test_row(const EvalResult& ev, const std::string& mode,
                           const std::string& model, double loss = 0.0) {
  return {-1, mode, model, ev.hr10, ev.ndcg10, ev.hr20, ev.ndcg20, loss};
}

// Train under the configured scheme and write metrics.csv (per-round
// validation), test_metrics.csv (final test metrics of the selected
// checkpoint), checkpoint.bin and the resolved config.
inline void run_train(const RunConfig& cfg, std::ostream& os = std::cout) {
  Dataset data = resolve_dataset(cfg);
  write_effective_config(cfg);
  const std::string model_name = to_string(cfg.model.type);

  if (cfg.train_mode == "zero-shot") {
    auto provider = make_provider(cfg.provider);
    auto vllm = embed_items(data.catalog, *provider, cfg.provider.cache);
    auto ev = zero_shot_rank(data, *provider, vllm, EvalSplit::test);
    auto row = test_row(ev, "zero-shot", "llm");
    write_text_file(cfg.output_dir + "/metrics.csv", metrics_csv({}));
    write_text_file(cfg.output_dir + "/test_metrics.csv", metrics_csv({row}));
    os << metrics_csv({row});
    return;
  }

  if (cfg.train_mode == "central") {
    CentralConfig cc{cfg.fed.rounds, cfg.fed.clients_per_step, cfg.fed.lr,
                     cfg.fed.neg_ratio, cfg.seed};
    auto res = run_centralized(data, cc, cfg.model);
    auto ev = evaluate_split(res.params, data, nullptr, EvalSplit::test);
    auto row = test_row(ev, "central", model_name);
    write_text_file(cfg.output_dir + "/metrics.csv", metrics_csv(res.log));
    write_text_file(cfg.output_dir + "/test_metrics.csv", metrics_csv({row}));
    save_checkpoint(res.params, cfg.output_dir + "/checkpoint.bin");
    os << metrics_csv({row});
    return;
  }

  FedConfig fed = cfg.fed;
  if (cfg.train_mode == "fed") fed.mode = FedMode::vanilla;
  else if (cfg.train_mode == "fellas") fed.mode = FedMode::fellas;
  else fed.mode = FedMode::fellas_item_only;

  std::unique_ptr<EmbeddingProvider> provider;
  const EmbeddingMatrix* vllm_ptr = nullptr;
  EmbeddingMatrix vllm;
  if (fed.mode != FedMode::vanilla) {
    provider = make_provider(cfg.provider);
    vllm = embed_items(data.catalog, *provider, cfg.provider.cache);
    vllm_ptr = &vllm;
  }
  auto res = run_federated(data, fed, cfg.model, provider.get(), cfg.provider.cache,
                           vllm_ptr);
  auto ev = evaluate_split(res.params, data, vllm_ptr, EvalSplit::test);
  auto row = test_row(ev, to_string(fed.mode), model_name);
  write_text_file(cfg.output_dir + "/metrics.csv", metrics_csv(res.log));
  write_text_file(cfg.output_dir + "/test_metrics.csv", metrics_csv({row}));
  save_checkpoint(res.params, cfg.output_dir + "/checkpoint.bin");
  os << metrics_csv({row});
}

// SIA and SIAUI over the configured 1/epsilon grid plus the random baseline,
// against the model stored in the given checkpoint.
inline void run_attack(const RunConfig& cfg, std::ostream& os = std::cout) {
  if (cfg.attack_checkpoint.empty())
    throw std::invalid_argument("attack: checkpoint path required (attack.checkpoint)");
  if (!file_exists(cfg.attack_checkpoint))
    throw std::runtime_error("attack: checkpoint not found: " + cfg.attack_checkpoint);
  Dataset data = resolve_dataset(cfg);
  ModelParams global = load_checkpoint(cfg.attack_checkpoint);
  if (global.num_items != data.num_items())
    throw std::runtime_error("attack: checkpoint catalog size mismatch");
  auto provider = make_provider(cfg.provider);
  auto vllm = embed_items(data.catalog, *provider, cfg.provider.cache);

  write_effective_config(cfg);
  auto res = run_attack_grid(data, global, vllm, cfg.fed, cfg.attack);
  write_text_file(cfg.output_dir + "/attack_report.csv", attack_report_csv(res.rows));
  if (res.siaui_pool_fallbacks > 0)
    std::cerr << "note: siaui fell back to full-catalog search at "
              << res.siaui_pool_fallbacks << " positions (guess pool exhausted)\n";
  // echo the summary rows
  std::vector<AttackRow> summary;
  for (const auto& r : res.rows)
    if (r.user < 0) summary.push_back(r);
  os << attack_report_csv(summary);
}

inline void run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                     EvalSplit split, std::ostream& os = std::cout) {
  Dataset data = resolve_dataset(cfg);
  ModelParams params = load_checkpoint(checkpoint_path);
  const EmbeddingMatrix* vllm_ptr = nullptr;
  EmbeddingMatrix vllm;
  if (params.cfg.service_dim > 0) {
    auto provider = make_provider(cfg.provider);
    vllm = embed_items(data.catalog, *provider, cfg.provider.cache);
    vllm_ptr = &vllm;
  }
  auto ev = evaluate_split(params, data, vllm_ptr, split);
  auto row = test_row(ev, split == EvalSplit::test ? "eval-test" : "eval-valid",
                      to_string(params.cfg.type));
  std::filesystem::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/eval.csv", metrics_csv({row}));
  os << metrics_csv({row});
}

}  // namespace fellas
