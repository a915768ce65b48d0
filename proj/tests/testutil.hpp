#pragma once

// Shared helpers for the test suite: finite-difference gradient checking,
// tiny dataset builders, provider wrappers and scratch directories.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "fellas/embed.hpp"
#include "fellas/model.hpp"

namespace testutil {

inline std::string make_temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("fellas_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("testutil: cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Central finite differences over every parameter coordinate. Returns the
// worst relative error against the analytic gradient.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_array;
  std::size_t worst_index = 0;
};

inline GradCheckResult check_gradients(
    fellas::ModelParams params, const fellas::ModelParams& analytic,
    const std::function<double(const fellas::ModelParams&)>& loss_fn,
    double h = 1e-5) {
  GradCheckResult res;
  std::vector<std::string> names;
  std::vector<std::vector<double>*> arrays;
  fellas::visit_arrays(params, [&](const std::string& n, std::vector<double>& v) {
    names.push_back(n);
    arrays.push_back(&v);
  });
  std::vector<const std::vector<double>*> grads;
  fellas::visit_arrays(analytic,
                       [&](const std::string&, const std::vector<double>& v) {
                         grads.push_back(&v);
                       });
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    for (std::size_t i = 0; i < arrays[k]->size(); ++i) {
      const double orig = (*arrays[k])[i];
      (*arrays[k])[i] = orig + h;
      const double up = loss_fn(params);
      (*arrays[k])[i] = orig - h;
      const double down = loss_fn(params);
      (*arrays[k])[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double an = (*grads[k])[i];
      // Central differences carry cancellation noise of about
      // eps * |loss| / (2h); coordinates below that floor are compared
      // absolutely, everything else relatively.
      const double scale = std::max(std::abs(an), std::abs(fd));
      double err;
      if (scale < 1e-6) {
        err = std::abs(an - fd) > 1e-9 ? 1.0 : 0.0;
      } else {
        err = std::abs(an - fd) / scale;
      }
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_array = names[k];
        res.worst_index = i;
      }
    }
  }
  return res;
}

// Delegating provider that counts embed_batch calls and texts.
class CountingProvider final : public fellas::EmbeddingProvider {
 public:
  explicit CountingProvider(fellas::EmbeddingProvider& inner) : inner_(&inner) {}

  std::vector<fellas::Vec> embed_batch(const std::vector<std::string>& texts) override {
    ++calls;
    texts_seen += texts.size();
    return inner_->embed_batch(texts);
  }
  std::string name() const override { return inner_->name(); }

  std::size_t calls = 0;
  std::size_t texts_seen = 0;

 private:
  fellas::EmbeddingProvider* inner_;
};

// Succeeds for the first `ok_calls` embed_batch invocations, then fails.
class FlakyProvider final : public fellas::EmbeddingProvider {
 public:
  FlakyProvider(fellas::EmbeddingProvider& inner, std::size_t ok_calls)
      : inner_(&inner), ok_(ok_calls) {}

  std::vector<fellas::Vec> embed_batch(const std::vector<std::string>& texts) override {
    if (calls_++ >= ok_) throw fellas::ProviderError("flaky provider: down");
    return inner_->embed_batch(texts);
  }
  std::string name() const override { return "flaky"; }

 private:
  fellas::EmbeddingProvider* inner_;
  std::size_t ok_;
  std::size_t calls_ = 0;
};

}  // namespace testutil
