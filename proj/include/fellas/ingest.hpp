#pragma once

// Raw review-log ingestion and synthetic dataset generation.
//
// Input files are line-delimited JSON: one {"user","item","timestamp"} object
// per line for interactions, one {"item","title"} object per line for the
// catalog. Output is a canonical Dataset bundle (see save_dataset).

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fellas/domain.hpp"
#include "fellas/rng.hpp"

namespace fellas {

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::int64_t timestamp = 0;
};

struct ParseResult {
  std::vector<RawInteraction> records;
  std::size_t skipped = 0;  // malformed lines
};

inline ParseResult parse_interactions(std::istream& in) {
  ParseResult out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("user") ||
        !j.contains("item") || !j.contains("timestamp") ||
        !j["user"].is_string() || !j["item"].is_string() ||
        !j["timestamp"].is_number()) {
      ++out.skipped;
      continue;
    }
    out.records.push_back({j["user"].get<std::string>(),
                           j["item"].get<std::string>(),
                           j["timestamp"].get<std::int64_t>()});
  }
  return out;
}

inline ParseResult parse_interactions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interactions file: " + path);
  return parse_interactions(in);
}

struct CatalogParseResult {
  std::vector<std::pair<std::string, std::string>> entries;  // key, title
  std::size_t skipped = 0;
};

inline CatalogParseResult parse_catalog(std::istream& in) {
  CatalogParseResult out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("item") ||
        !j.contains("title") || !j["item"].is_string() ||
        !j["title"].is_string()) {
      ++out.skipped;
      continue;
    }
    out.entries.emplace_back(j["item"].get<std::string>(),
                             j["title"].get<std::string>());
  }
  return out;
}

inline CatalogParseResult parse_catalog_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open catalog file: " + path);
  return parse_catalog(in);
}

// Per-user chronological sequences. Ties in timestamp keep input order.
// Users with fewer than 3 interactions are dropped (the leave-two split
// needs at least one train item); longer histories keep the most recent
// max_len items.
inline std::vector<InteractionSequence> build_sequences(
    const std::vector<RawInteraction>& records,
    const IdRemap& users, const IdRemap& items, int max_len) {
  if (max_len < 3) throw std::invalid_argument("build_sequences: max_len < 3");

  struct Ev {
    std::int64_t ts;
    std::size_t ord;
    ItemId item;
  };
  std::vector<std::vector<Ev>> per_user(users.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    per_user[users.at(r.user_key)].push_back(
        {r.timestamp, i, items.at(r.item_key)});
  }

  std::vector<InteractionSequence> out;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& evs = per_user[u];
    if (evs.size() < 3) continue;
    std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.ord < b.ord;
    });
    std::size_t start = evs.size() > static_cast<std::size_t>(max_len)
                            ? evs.size() - max_len
                            : 0;
    InteractionSequence seq;
    seq.user = static_cast<UserId>(out.size());
    for (std::size_t i = start; i < evs.size(); ++i)
      seq.items.push_back(evs[i].item);
    out.push_back(std::move(seq));
  }
  return out;
}

// Last item -> test, second-to-last -> valid, remainder -> train.
inline std::vector<UserSplit> split_leave_two(
    const std::vector<InteractionSequence>& sequences) {
  std::vector<UserSplit> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) {
    if (s.items.size() < 3)
      throw std::invalid_argument("split_leave_two: sequence shorter than 3");
    UserSplit us;
    us.train.user = s.user;
    us.train.items.assign(s.items.begin(), s.items.end() - 2);
    us.valid_target = s.items[s.items.size() - 2];
    us.test_target = s.items.back();
    out.push_back(std::move(us));
  }
  return out;
}

struct SynthConfig {
  int num_users = 500;
  int num_items = 50;
  double sharpness = 4.0;  // 0 = uniform transitions
  std::uint64_t seed = 1;
  int group_size = 10;
  int min_len = 4;
  int max_len = 20;
};

inline int synth_group_of(int item, int group_size) { return item / group_size; }

// Group-structured Markov corpus. Titles are "group<g> item<k>" so the
// bag-of-token stub embedder puts items of one group close together, which
// the perturbation mechanism and both attacks need to be meaningful.
inline std::pair<Catalog, std::vector<InteractionSequence>> synth_markov(
    const SynthConfig& cfg) {
  if (cfg.num_items < 10)
    throw std::invalid_argument("synth_markov: need at least 10 items");
  if (cfg.min_len < 3 || cfg.max_len < cfg.min_len)
    throw std::invalid_argument("synth_markov: bad length bounds");

  Catalog catalog;
  catalog.titles.reserve(cfg.num_items);
  for (int i = 0; i < cfg.num_items; ++i) {
    catalog.titles.push_back("group" + std::to_string(synth_group_of(i, cfg.group_size)) +
                             " item" + std::to_string(i));
  }

  const double bias = std::exp(cfg.sharpness);
  Rng rng(stream_seed(cfg.seed, "synth"));
  std::vector<InteractionSequence> seqs;
  seqs.reserve(cfg.num_users);
  for (int u = 0; u < cfg.num_users; ++u) {
    const int len =
        cfg.min_len + static_cast<int>(rng.below(cfg.max_len - cfg.min_len + 1));
    InteractionSequence s;
    s.user = u;
    ItemId cur = static_cast<ItemId>(rng.below(cfg.num_items));
    s.items.push_back(cur);
    while (static_cast<int>(s.items.size()) < len) {
      // Weight e^sharpness on the current item's group, 1 elsewhere.
      const int g = synth_group_of(cur, cfg.group_size);
      const int lo = g * cfg.group_size;
      const int hi = std::min(lo + cfg.group_size, cfg.num_items);
      const int in_group = hi - lo;
      const double total = in_group * bias + (cfg.num_items - in_group);
      double x = rng.uniform() * total;
      ItemId next;
      if (x < in_group * bias) {
        next = static_cast<ItemId>(lo + static_cast<int>(x / bias));
        if (next >= hi) next = hi - 1;  // guards float edge
      } else {
        double y = x - in_group * bias;
        int k = static_cast<int>(y);
        if (k >= cfg.num_items - in_group) k = cfg.num_items - in_group - 1;
        next = static_cast<ItemId>(k < lo ? k : k + in_group);
      }
      s.items.push_back(next);
      cur = next;
    }
    seqs.push_back(std::move(s));
  }
  return {std::move(catalog), std::move(seqs)};
}

inline Dataset make_synth_dataset(const SynthConfig& cfg) {
  auto [catalog, seqs] = synth_markov(cfg);
  Dataset d;
  d.catalog = std::move(catalog);
  d.users = split_leave_two(seqs);
  return d;
}

struct DatasetStats {
  int users = 0;
  int items = 0;
  std::int64_t interactions = 0;
  double avg_length = 0.0;
  double density_pct = 0.0;
};

inline DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats s;
  s.users = d.num_users();
  s.items = d.num_items();
  for (const auto& u : d.users)
    s.interactions += static_cast<std::int64_t>(u.train.items.size()) + 2;
  if (s.users > 0) s.avg_length = static_cast<double>(s.interactions) / s.users;
  if (s.users > 0 && s.items > 0)
    s.density_pct = 100.0 * static_cast<double>(s.interactions) /
                    (static_cast<double>(s.users) * s.items);
  return s;
}

// Canonical bundle: one JSON document, ids positional.
inline void save_dataset(const Dataset& d, const std::string& path) {
  nlohmann::json j;
  j["titles"] = d.catalog.titles;
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : d.users) {
    nlohmann::json ju;
    ju["train"] = u.train.items;
    ju["valid"] = u.valid_target;
    ju["test"] = u.test_target;
    users.push_back(std::move(ju));
  }
  j["users"] = std::move(users);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  out << j.dump() << "\n";
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  Dataset d;
  d.catalog.titles = j.at("titles").get<std::vector<std::string>>();
  UserId uid = 0;
  for (const auto& ju : j.at("users")) {
    UserSplit us;
    us.train.user = uid++;
    us.train.items = ju.at("train").get<std::vector<ItemId>>();
    us.valid_target = ju.at("valid").get<ItemId>();
    us.test_target = ju.at("test").get<ItemId>();
    auto in_range = [&](ItemId v) { return v >= 0 && v < d.catalog.size(); };
    for (ItemId v : us.train.items)
      if (!in_range(v)) throw std::runtime_error("dataset: item id out of range");
    if (!in_range(us.valid_target) || !in_range(us.test_target))
      throw std::runtime_error("dataset: target id out of range");
    d.users.push_back(std::move(us));
  }
  return d;
}

// Full ingestion pipeline: parse, filter to titled items, remap by first
// appearance, sort, truncate, split.
struct IngestReport {
  Dataset dataset;
  std::size_t malformed_lines = 0;
  std::size_t dropped_untitled = 0;  // interactions whose item has no usable title
};

inline IngestReport ingest_dataset(const std::vector<RawInteraction>& records,
                                   const CatalogParseResult& catalog_src,
                                   int max_len = 50) {
  std::unordered_map<std::string, std::string> title_of;
  for (const auto& [key, title] : catalog_src.entries) {
    if (title.find_first_not_of(" \t") == std::string::npos) continue;
    title_of.emplace(key, title);
  }

  IngestReport rep;
  std::vector<RawInteraction> kept;
  kept.reserve(records.size());
  for (const auto& r : records) {
    if (!title_of.count(r.item_key)) {
      ++rep.dropped_untitled;
      continue;
    }
    kept.push_back(r);
  }

  IdRemap users, items;
  for (const auto& r : kept) {
    users.intern(r.user_key);
    items.intern(r.item_key);
  }

  auto seqs = build_sequences(kept, users, items, max_len);

  // Some users may have been dropped; reindex users densely and keep only
  // items actually interacted with (ids already dense by construction).
  rep.dataset.catalog.titles.reserve(items.size());
  for (const auto& key : items.to_key)
    rep.dataset.catalog.titles.push_back(title_of.at(key));
  rep.dataset.users = split_leave_two(seqs);
  return rep;
}

}  // namespace fellas
