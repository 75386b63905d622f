#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hexlink/num/tensor.hpp"

namespace testing {

inline hexlink::num::Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                           double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  hexlink::num::Tensor2 t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("hexlink_" + tag + "_" + std::to_string(std::random_device{}()));
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

}  // namespace testing
