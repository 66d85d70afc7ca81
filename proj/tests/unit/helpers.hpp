#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mmfuse/record.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse::testing {

using Matrix = std::vector<std::vector<double>>;

inline Tensor matrix(const Matrix& rows, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), rows.empty() ? 0 : rows.front().size()}, flat, requires_grad);
}

inline std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline void expect_near(const Tensor& t, const std::vector<double>& expected, double tol) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "index " << i;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m) {
    for (double& v : r) v = n(rng);
  }
  return m;
}

inline FrameMatrix frames(const Matrix& rows) {
  FrameMatrix f{rows.size(), rows.front().size(), {}};
  for (const auto& r : rows) {
    for (double v : r) f.values.push_back(static_cast<float>(v));
  }
  return f;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mmfuse_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mmfuse::testing
