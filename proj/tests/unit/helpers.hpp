#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fssuw/fssuw.hpp"

namespace fssuw::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("fssuw_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(scale * rng.normal());
  return t;
}

inline Mask random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
  Mask m({h, w});
  for (auto& v : m.values()) v = rng.uniform() < p ? 1 : 0;
  return m;
}

/// A small network that runs in milliseconds: 64x64 inputs, 8x8 features.
inline TrainConfig tiny_config(std::size_t resolution = 64) {
  TrainConfig cfg;
  cfg.resolution = resolution;
  cfg.sfe_width = 4;
  cfg.fee_width = 4;
  cfg.c_prime = 8;
  return cfg;
}

inline DatasetIndex tiny_corpus(std::size_t classes = 3, std::size_t per_class = 4, std::uint64_t seed = 5,
                                std::size_t size = 64) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.images_per_class = per_class;
  spec.seed = seed;
  spec.size = size;
  return make_synthetic_index(spec);
}

inline std::set<int> all_classes(const DatasetIndex& index) {
  const auto ids = index.classes().ids();
  return {ids.begin(), ids.end()};
}

/// <x, r> as a differentiable scalar, for turning tensor-valued ops into
/// something finite differences can probe.
template <typename T>
ag::Var<T> project(const ag::Var<T>& x, const Tensor<T>& r) {
  T s{0};
  for (std::size_t i = 0; i < r.size(); ++i) s += x.value()[i] * r[i];
  return ag::make_result<T>(Tensor<T>({1}, s), {x}, [r](ag::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r.size(); ++i) g[i] += self.grad[0] * r[i];
  });
}

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Central differences of `f` with respect to every coordinate of `x` (or
/// `limit` evenly spaced ones), compared against the analytic gradient.
inline GradCheck check_input_gradient(Tensor<double> x, const std::function<ag::Var<double>(const ag::Var<double>&)>& f,
                                      double step = 1e-4, double floor = 1e-6, std::size_t limit = 0) {
  ag::Var<double> in(x, true);
  ag::backward(f(in));
  const Tensor<double> analytic = in.grad();
  GradCheck out;
  const std::size_t n = x.size();
  const std::size_t stride = (limit && n > limit) ? n / limit : 1;
  for (std::size_t i = 0; i < n; i += stride) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(ag::constant(x)).item();
    x[i] = orig - step;
    const double down = f(ag::constant(x)).item();
    x[i] = orig;
    const double numeric = (up - down) / (2 * step);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric, floor));
    ++out.checked;
  }
  return out;
}

template <typename F>
::testing::AssertionResult throws_code(F&& f, ErrorCode code) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "threw " << to_string(e.code()) << ": " << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "threw non-domain exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw " << to_string(code);
}

}  // namespace fssuw::testing
