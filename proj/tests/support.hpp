#ifndef PREGEN_TESTS_SUPPORT_HPP
#define PREGEN_TESTS_SUPPORT_HPP

#include "pregen/feature_store.hpp"
#include "pregen/manifest.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace pregen::test {

// Fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pregen-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline LayerStack random_stack(const std::string& id, int layers, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  LayerStack s;
  s.sample_id = id;
  s.data.resize(layers, dim);
  for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = normal(rng);
  return s;
}

inline std::string slurp(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace pregen::test

#endif  // PREGEN_TESTS_SUPPORT_HPP
