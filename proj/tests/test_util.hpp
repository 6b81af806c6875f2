#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "odformer/odformer.hpp"

namespace odf::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double bound = 1.0) {
  Tensor t = rng.uniform_tensor(std::move(shape), bound);
  t.set_requires_grad(false);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

/// Gradient report for one function of the given inputs, using the same
/// oracle as the suite (central differences, random output weights).
inline GradReport check_grad(const std::string& name, std::vector<Tensor> inputs, GradFn fn, double tol,
                             std::uint64_t seed = 7) {
  for (auto& t : inputs) t.set_requires_grad(true);
  Rng rng(seed);
  return run_case(GradCase{name, std::move(inputs), std::move(fn), false}, tol, 1e-5, rng);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("odformer_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace odf::testing
