#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fellas {

// Dense 0-based ids, stable for the lifetime of a run.
using ItemId = std::int32_t;
using UserId = std::int32_t;

// Item universe with per-item titles, indexed by ItemId.
struct Catalog {
  std::vector<std::string> titles;

  int size() const { return static_cast<int>(titles.size()); }
};

// One user's chronologically ordered interactions. Timestamps are dropped
// after ingestion; order is all downstream code relies on.
struct InteractionSequence {
  UserId user = 0;
  std::vector<ItemId> items;
};

struct UserSplit {
  InteractionSequence train;
  ItemId valid_target = 0;
  ItemId test_target = 0;
};

// Leave-two-out dataset: per user, train prefix plus the held-out
// second-to-last (valid) and last (test) items.
struct Dataset {
  Catalog catalog;
  std::vector<UserSplit> users;

  int num_users() const { return static_cast<int>(users.size()); }
  int num_items() const { return catalog.size(); }
};

// Dense remap of raw string keys, ids assigned by first appearance.
struct IdRemap {
  std::unordered_map<std::string, std::int32_t> to_id;
  std::vector<std::string> to_key;  // inverse, indexed by id

  std::int32_t intern(const std::string& key) {
    auto it = to_id.find(key);
    if (it != to_id.end()) return it->second;
    auto id = static_cast<std::int32_t>(to_key.size());
    to_id.emplace(key, id);
    to_key.push_back(key);
    return id;
  }

  std::int32_t at(const std::string& key) const {
    auto it = to_id.find(key);
    if (it == to_id.end()) throw std::out_of_range("IdRemap: unknown key " + key);
    return it->second;
  }

  std::size_t size() const { return to_key.size(); }
};

inline IdRemap remap_ids(const std::vector<std::string>& keys) {
  IdRemap m;
  for (const auto& k : keys) m.intern(k);
  return m;
}

}  // namespace fellas
