#pragma once

// Small helpers shared by the test binaries.

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "scz/dataset.hpp"
#include "scz/image.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("scz_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

inline std::vector<scz::LabeledItem> small_synth(int per_class, std::uint64_t seed = 0) {
  scz::SynthConfig cfg;
  cfg.count_per_class = per_class;
  cfg.seed = seed;
  return scz::synth_generate(cfg);
}

// One synthetic loop trace (a control-class sample).
inline scz::Image loop_image(std::uint64_t seed = 0) { return small_synth(1, seed).front().image; }

}  // namespace testing
