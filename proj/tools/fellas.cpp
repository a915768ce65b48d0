// Experiment runner. Subcommands: ingest, synth, embed-cache, train, attack,
// eval. See README.md for the config schema.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fellas/commands.hpp"

namespace {

fellas::RunConfig load_config(const std::string& path, bool seed_set,
                              std::uint64_t seed) {
  auto cfg = fellas::load_run_config(path);
  if (seed_set) {
    cfg.seed = seed;
    cfg.fed.seed = seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fellas: federated sequential recommendation with external "
               "embedding services"};
  app.require_subcommand(1);

  // ingest
  std::string interactions, catalog, out_dir = "out";
  int max_len = 50;
  auto* ingest = app.add_subcommand("ingest", "parse raw logs into a dataset bundle");
  ingest->add_option("--interactions", interactions, "JSONL interactions file")
      ->required();
  ingest->add_option("--catalog", catalog, "JSONL item-title file")->required();
  ingest->add_option("--out", out_dir, "output directory");
  ingest->add_option("--max-len", max_len, "maximum sequence length");

  // synth
  fellas::SynthConfig synth_cfg;
  std::string synth_out = "out";
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset bundle");
  synth->add_option("--users", synth_cfg.num_users, "number of users");
  synth->add_option("--items", synth_cfg.num_items, "number of items");
  synth->add_option("--sharpness", synth_cfg.sharpness, "within-group transition bias");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--group-size", synth_cfg.group_size, "items per group");
  synth->add_option("--min-len", synth_cfg.min_len, "minimum sequence length");
  synth->add_option("--max-len", synth_cfg.max_len, "maximum sequence length");
  synth->add_option("--out", synth_out, "output directory");

  // config-driven commands
  std::string config_path, checkpoint_path, split_name = "test";
  std::uint64_t seed_override = 0;
  bool macro = false;
  std::vector<CLI::Option*> seed_opts;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    seed_opts.push_back(cmd->add_option("--seed", seed_override, "override config seed"));
  };

  auto* embed_cache =
      app.add_subcommand("embed-cache", "fetch and cache item embeddings");
  add_common(embed_cache);

  auto* train = app.add_subcommand("train", "train under the configured scheme");
  add_common(train);

  auto* attack = app.add_subcommand("attack", "run SIA/SIAUI over the privacy grid");
  add_common(attack);
  attack->add_option("--checkpoint", checkpoint_path, "global model checkpoint");
  attack->add_flag("--macro", macro, "macro-average the summary rows");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  eval->add_option("--split", split_name, "test or valid");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      fellas::run_ingest(interactions, catalog, out_dir, max_len);
    } else if (synth->parsed()) {
      fellas::run_synth(synth_cfg, synth_out);
    } else {
      bool seed_set = false;
      for (const auto* opt : seed_opts) seed_set |= opt->count() > 0;
      auto cfg = load_config(config_path, seed_set, seed_override);
      if (embed_cache->parsed()) {
        fellas::run_embed_cache(cfg);
      } else if (train->parsed()) {
        fellas::run_train(cfg);
      } else if (attack->parsed()) {
        if (!checkpoint_path.empty()) cfg.attack_checkpoint = checkpoint_path;
        if (macro) cfg.attack.macro_summary = true;
        fellas::run_attack(cfg);
      } else if (eval->parsed()) {
        if (split_name != "test" && split_name != "valid")
          throw std::invalid_argument("--split must be test or valid");
        fellas::run_eval(cfg, checkpoint_path,
                         split_name == "test" ? fellas::EvalSplit::test
                                              : fellas::EvalSplit::valid);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
