#pragma once

// Run configuration: one JSON document, strictly validated (unknown keys are
// rejected), with every default resolvable so the effective config written
// next to results reproduces the run exactly.

#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "fellas/attacks.hpp"
#include "fellas/embed.hpp"
#include "fellas/fedsim.hpp"
#include "fellas/ingest.hpp"
#include "fellas/model.hpp"

namespace fellas {

inline constexpr const char* kEndpointEnvVar = "FELLAS_ENDPOINT";

struct RunConfig {
  std::string dataset_path;           // exactly one of path / synth
  std::optional<SynthConfig> synth;
  ModelConfig model;                  // service_dim resolved at run time
  FedConfig fed;                      // seed mirrored from the top level
  std::string train_mode = "fed";     // central|fed|fellas|fellas-item-only|zero-shot
  ProviderConfig provider;
  AttackGridConfig attack;
  std::string attack_checkpoint;
  std::uint64_t seed = 42;
  std::string output_dir = "out";
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
  if (!j.is_object()) throw std::invalid_argument("config: " + ctx + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + ctx);
  }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::check_keys(j, {"dataset", "model", "federation", "fellas", "provider",
                         "attack", "seed", "output_dir"},
                     "top level");
  RunConfig c;
  detail::get_if(j, "seed", c.seed);
  detail::get_if(j, "output_dir", c.output_dir);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, {"path", "synth"}, "dataset");
    if (d.contains("path") == d.contains("synth"))
      throw std::invalid_argument("config: dataset needs exactly one of path/synth");
    if (d.contains("path")) {
      c.dataset_path = d.at("path").get<std::string>();
    } else {
      const auto& s = d.at("synth");
      detail::check_keys(s, {"users", "items", "sharpness", "seed", "group_size",
                             "min_len", "max_len"},
                         "dataset.synth");
      SynthConfig sc;
      detail::get_if(s, "users", sc.num_users);
      detail::get_if(s, "items", sc.num_items);
      detail::get_if(s, "sharpness", sc.sharpness);
      detail::get_if(s, "seed", sc.seed);
      detail::get_if(s, "group_size", sc.group_size);
      detail::get_if(s, "min_len", sc.min_len);
      detail::get_if(s, "max_len", sc.max_len);
      c.synth = sc;
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, {"type", "dim", "depth", "max_positions"}, "model");
    std::string type = to_string(c.model.type);
    detail::get_if(m, "type", type);
    c.model.type = model_type_from_string(type);
    detail::get_if(m, "dim", c.model.dim);
    detail::get_if(m, "depth", c.model.depth);
    detail::get_if(m, "max_positions", c.model.max_positions);
    if (c.model.dim < 1) throw std::invalid_argument("config: model.dim < 1");
    if (c.model.depth < 1 || c.model.depth > 2)
      throw std::invalid_argument("config: model.depth must be 1 or 2");
  }

  if (j.contains("federation")) {
    const auto& f = j.at("federation");
    detail::check_keys(f, {"rounds", "clients_per_step", "local_epochs", "lr",
                           "neg_ratio"},
                       "federation");
    detail::get_if(f, "rounds", c.fed.rounds);
    detail::get_if(f, "clients_per_step", c.fed.clients_per_step);
    detail::get_if(f, "local_epochs", c.fed.local_epochs);
    detail::get_if(f, "lr", c.fed.lr);
    detail::get_if(f, "neg_ratio", c.fed.neg_ratio);
  }

  if (j.contains("fellas")) {
    const auto& f = j.at("fellas");
    detail::check_keys(f, {"mode", "alpha", "inv_epsilon", "freeze_adapter"}, "fellas");
    detail::get_if(f, "mode", c.train_mode);
    detail::get_if(f, "alpha", c.fed.alpha);
    detail::get_if(f, "inv_epsilon", c.fed.inv_epsilon);
    detail::get_if(f, "freeze_adapter", c.fed.freeze_adapter);
  }
  static const std::set<std::string> kModes{"central", "fed", "fellas",
                                            "fellas-item-only", "zero-shot"};
  if (!kModes.count(c.train_mode))
    throw std::invalid_argument("config: fellas.mode must be one of central/fed/"
                                "fellas/fellas-item-only/zero-shot");

  if (j.contains("provider")) {
    const auto& p = j.at("provider");
    detail::check_keys(p, {"mode", "dim", "seed", "endpoint", "cache", "batch_size",
                           "attempts", "backoff_ms"},
                       "provider");
    std::string mode = "stub";
    detail::get_if(p, "mode", mode);
    if (mode == "stub") c.provider.mode = ProviderMode::stub;
    else if (mode == "http") c.provider.mode = ProviderMode::http;
    else if (mode == "file") c.provider.mode = ProviderMode::file;
    else throw std::invalid_argument("config: provider.mode must be stub/http/file");
    detail::get_if(p, "dim", c.provider.dim);
    detail::get_if(p, "seed", c.provider.seed);
    detail::get_if(p, "endpoint", c.provider.endpoint);
    detail::get_if(p, "cache", c.provider.cache);
    detail::get_if(p, "batch_size", c.provider.batch_size);
    detail::get_if(p, "attempts", c.provider.attempts);
    detail::get_if(p, "backoff_ms", c.provider.backoff_ms);
    if (c.provider.dim < 2) throw std::invalid_argument("config: provider.dim < 2");
    if (c.provider.batch_size < 1 || c.provider.attempts < 1)
      throw std::invalid_argument("config: provider batch/attempts must be >= 1");
  }

  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    detail::check_keys(a, {"grid", "include_random", "tol", "macro", "checkpoint"},
                       "attack");
    detail::get_if(a, "grid", c.attack.inv_eps_grid);
    detail::get_if(a, "include_random", c.attack.include_random);
    detail::get_if(a, "tol", c.attack.tol);
    detail::get_if(a, "macro", c.attack.macro_summary);
    detail::get_if(a, "checkpoint", c.attack_checkpoint);
    for (double ie : c.attack.inv_eps_grid)
      if (!(ie > 0.0))
        throw std::invalid_argument("config: attack.grid entries must be positive");
  }

  c.fed.seed = c.seed;
  c.fed.validate();

  // environment override for the remote endpoint
  if (const char* env = std::getenv(kEndpointEnvVar); env != nullptr && env[0] != '\0')
    c.provider.endpoint = env;
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  if (c.synth) {
    j["dataset"]["synth"] = {{"users", c.synth->num_users},
                             {"items", c.synth->num_items},
                             {"sharpness", c.synth->sharpness},
                             {"seed", c.synth->seed},
                             {"group_size", c.synth->group_size},
                             {"min_len", c.synth->min_len},
                             {"max_len", c.synth->max_len}};
  } else {
    j["dataset"]["path"] = c.dataset_path;
  }
  j["model"] = {{"type", to_string(c.model.type)},
                {"dim", c.model.dim},
                {"depth", c.model.depth},
                {"max_positions", c.model.max_positions}};
  j["federation"] = {{"rounds", c.fed.rounds},
                     {"clients_per_step", c.fed.clients_per_step},
                     {"local_epochs", c.fed.local_epochs},
                     {"lr", c.fed.lr},
                     {"neg_ratio", c.fed.neg_ratio}};
  j["fellas"] = {{"mode", c.train_mode},
                 {"alpha", c.fed.alpha},
                 {"inv_epsilon", c.fed.inv_epsilon},
                 {"freeze_adapter", c.fed.freeze_adapter}};
  std::string pmode = c.provider.mode == ProviderMode::stub   ? "stub"
                      : c.provider.mode == ProviderMode::http ? "http"
                                                              : "file";
  j["provider"] = {{"mode", pmode},
                   {"dim", c.provider.dim},
                   {"seed", c.provider.seed},
                   {"endpoint", c.provider.endpoint},
                   {"cache", c.provider.cache},
                   {"batch_size", c.provider.batch_size},
                   {"attempts", c.provider.attempts},
                   {"backoff_ms", c.provider.backoff_ms}};
  j["attack"] = {{"grid", c.attack.inv_eps_grid},
                 {"include_random", c.attack.include_random},
                 {"tol", c.attack.tol},
                 {"macro", c.attack.macro_summary},
                 {"checkpoint", c.attack_checkpoint}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace fellas
