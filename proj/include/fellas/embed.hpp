#pragma once

// The external embedding-service boundary. Three interchangeable providers
// sit behind one interface: a deterministic bag-of-token-hash stub, a remote
// HTTP client (POST {endpoint}/v1/embed), and a read-only file cache.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "fellas/domain.hpp"
#include "fellas/matrix.hpp"
#include "fellas/rng.hpp"

namespace fellas {

// |V| x N table of service-produced item vectors, row order = ItemId order.
using EmbeddingMatrix = Matrix;

inline constexpr std::string_view kSequencePrefix =
    "The user's purchase history list is as follows:";

struct ProviderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lowercased maximal alphanumeric runs; punctuation and whitespace separate.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace detail {

// dim standard normals from a counter-based splitmix64 stream, added into out.
inline void add_token_vector(std::uint64_t base, std::span<double> out) {
  std::uint64_t ctr = 0;
  auto uniform = [&]() {
    return static_cast<double>(splitmix64(base + 0x9e3779b97f4a7c15ULL * ++ctr) >> 11) *
           0x1.0p-53;
  };
  std::size_t i = 0;
  while (i < out.size()) {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    out[i++] += r * std::cos(a);
    if (i < out.size()) out[i++] += r * std::sin(a);
  }
}

}  // namespace detail

// L2-normalized sum of per-token hash vectors. Summation runs in sorted hash
// order, so the vector is a bit-exact function of the token multiset: same
// tokens => identical vector, shared tokens => positive cosine, which is what
// makes the perturbation mechanism and the attacks meaningful on synthetic
// titles.
inline Vec stub_embed(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 2) throw std::invalid_argument("stub_embed: dim < 2");
  auto tokens = tokenize(text);
  if (tokens.empty())
    throw std::domain_error("stub_embed: text has no tokens: '" + std::string(text) + "'");
  std::vector<std::uint64_t> hashes;
  hashes.reserve(tokens.size());
  for (const auto& t : tokens) hashes.push_back(hash_combine(seed, fnv1a64(t)));
  std::sort(hashes.begin(), hashes.end());
  Vec v(static_cast<std::size_t>(dim), 0.0);
  for (std::uint64_t h : hashes) detail::add_token_vector(h, v);
  double n = norm2(v);
  if (n < 1e-12) throw std::domain_error("stub_embed: zero-norm embedding");
  for (auto& x : v) x /= n;
  return v;
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // One vector per input text, order preserved; all rows same dimension.
  virtual std::vector<Vec> embed_batch(const std::vector<std::string>& texts) = 0;
  virtual std::string name() const = 0;
};

class StubProvider final : public EmbeddingProvider {
 public:
  StubProvider(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

  std::vector<Vec> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<Vec> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(stub_embed(t, dim_, seed_));
    return out;
  }

  std::string name() const override { return "stub"; }

 private:
  int dim_;
  std::uint64_t seed_;
};

struct HttpProviderConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080
  int batch_size = 64;
  int attempts = 3;
  int backoff_ms = 100;
};

class HttpProvider final : public EmbeddingProvider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
    while (!cfg_.endpoint.empty() && cfg_.endpoint.back() == '/')
      cfg_.endpoint.pop_back();
    if (cfg_.endpoint.empty())
      throw std::invalid_argument("http provider: empty endpoint");
  }

  std::vector<Vec> embed_batch(const std::vector<std::string>& texts) override {
    std::vector<Vec> out;
    out.reserve(texts.size());
    for (std::size_t off = 0; off < texts.size();
         off += static_cast<std::size_t>(cfg_.batch_size)) {
      std::size_t end = std::min(texts.size(), off + cfg_.batch_size);
      std::vector<std::string> chunk(texts.begin() + off, texts.begin() + end);
      auto vecs = post_with_retry(chunk);
      for (auto& v : vecs) out.push_back(std::move(v));
    }
    return out;
  }

  std::string name() const override { return "http"; }

 private:
  std::vector<Vec> post_with_retry(const std::vector<std::string>& texts) {
    nlohmann::json body;
    body["texts"] = texts;
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt < cfg_.attempts; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(cfg_.backoff_ms * (1 << (attempt - 1))));
      httplib::Client cli(cfg_.endpoint);
      cli.set_read_timeout(60, 0);
      auto res = cli.Post("/v1/embed", payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      return parse_response(res->body, texts.size());
    }
    throw ProviderError("embedding service failed after " +
                        std::to_string(cfg_.attempts) + " attempts: " + last_error);
  }

  std::vector<Vec> parse_response(const std::string& body, std::size_t expected) {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("embeddings"))
      throw ProviderError("embedding service: malformed response body");
    auto vecs = j["embeddings"].get<std::vector<Vec>>();
    if (vecs.size() != expected)
      throw ProviderError("embedding service: got " + std::to_string(vecs.size()) +
                          " vectors for " + std::to_string(expected) + " texts");
    return vecs;
  }

  HttpProviderConfig cfg_;
};

// Serves only preloaded item matrices via embed_items; cannot embed new text.
class FileProvider final : public EmbeddingProvider {
 public:
  explicit FileProvider(std::string cache_path) : cache_(std::move(cache_path)) {}

  std::vector<Vec> embed_batch(const std::vector<std::string>&) override {
    throw ProviderError("file provider cannot embed new texts (cache: " + cache_ + ")");
  }

  std::string name() const override { return "file"; }
  const std::string& cache_path() const { return cache_; }

 private:
  std::string cache_;
};

enum class ProviderMode { stub, http, file };

struct ProviderConfig {
  ProviderMode mode = ProviderMode::stub;
  int dim = 64;                // stub only
  std::uint64_t seed = 0;      // stub only
  std::string endpoint;        // http only
  std::string cache;           // item-matrix cache path
  int batch_size = 64;
  int attempts = 3;
  int backoff_ms = 100;
};

inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& cfg) {
  switch (cfg.mode) {
    case ProviderMode::stub:
      return std::make_unique<StubProvider>(cfg.dim, cfg.seed);
    case ProviderMode::http:
      return std::make_unique<HttpProvider>(
          HttpProviderConfig{cfg.endpoint, cfg.batch_size, cfg.attempts, cfg.backoff_ms});
    case ProviderMode::file:
      return std::make_unique<FileProvider>(cfg.cache);
  }
  throw std::logic_error("make_provider: bad mode");
}

// Cache format: "dim=N count=M" then M lines of N space-separated decimals.
// %.17g guarantees a bit-exact double round-trip.
inline void save_embedding_cache(const EmbeddingMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embedding cache: " + path);
  out << "dim=" << m.cols << " count=" << m.rows << "\n";
  char buf[40];
  for (int i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (int j = 0; j < m.cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", r[j]);
      if (j) out << ' ';
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline EmbeddingMatrix load_embedding_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding cache: " + path);
  std::string header;
  std::getline(in, header);
  int dim = 0, count = 0;
  if (std::sscanf(header.c_str(), "dim=%d count=%d", &dim, &count) != 2 ||
      dim < 1 || count < 0)
    throw std::runtime_error("bad embedding cache header: " + header);
  EmbeddingMatrix m(count, dim);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < dim; ++j)
      if (!(in >> m(i, j)))
        throw std::runtime_error("embedding cache truncated at row " + std::to_string(i));
  return m;
}

inline bool file_exists(const std::string& path) {
  std::ifstream f(path);
  return f.good();
}

// One vector per catalog title, in ItemId order. With a cache path the call
// is a one-time expense: subsequent runs load the stored matrix.
inline EmbeddingMatrix embed_items(const Catalog& catalog, EmbeddingProvider& provider,
                                   const std::string& cache_path = "") {
  if (catalog.size() == 0) throw std::invalid_argument("embed_items: empty catalog");

  if (!cache_path.empty() && file_exists(cache_path)) {
    auto m = load_embedding_cache(cache_path);
    if (m.rows != catalog.size())
      throw std::runtime_error("embedding cache row count " + std::to_string(m.rows) +
                               " does not match catalog size " +
                               std::to_string(catalog.size()));
    return m;
  }
  if (auto* fp = dynamic_cast<FileProvider*>(&provider)) {
    throw ProviderError("file provider: cache not found: " + fp->cache_path());
  }

  auto rows = provider.embed_batch(catalog.titles);
  const int dim = static_cast<int>(rows.at(0).size());
  EmbeddingMatrix m(catalog.size(), dim);
  for (int i = 0; i < catalog.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != dim)
      throw std::runtime_error("embed_items: dimension mismatch at row " +
                               std::to_string(i));
    for (int j = 0; j < dim; ++j) {
      double x = rows[i][j];
      if (!std::isfinite(x))
        throw std::runtime_error("embed_items: non-finite value at row " +
                                 std::to_string(i));
      m(i, j) = x;
    }
  }
  if (!cache_path.empty()) save_embedding_cache(m, cache_path);
  return m;
}

struct SequenceEmbedding {
  Vec vector;
  std::string source;  // the serialized text that was embedded
};

inline std::string serialize_sequence(const std::vector<std::string>& titles) {
  std::string text(kSequencePrefix);
  for (std::size_t i = 0; i < titles.size(); ++i) {
    text += i == 0 ? " " : "; ";
    text += titles[i];
  }
  return text;
}

inline SequenceEmbedding embed_sequence(const std::vector<std::string>& titles,
                                        EmbeddingProvider& provider) {
  if (titles.empty()) throw std::invalid_argument("embed_sequence: empty sequence");
  SequenceEmbedding out;
  out.source = serialize_sequence(titles);
  auto vecs = provider.embed_batch({out.source});
  out.vector = std::move(vecs.at(0));
  for (double x : out.vector)
    if (!std::isfinite(x))
      throw std::runtime_error("embed_sequence: non-finite value");
  return out;
}

}  // namespace fellas
