#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "woundseg/core/image.hpp"
#include "woundseg/core/random.hpp"

namespace testing_support {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("woundseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline woundseg::BinaryMask random_mask(int w, int h, double p, woundseg::Rng& rng) {
  woundseg::BinaryMask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) m.set_index(i, woundseg::uniform01(rng) < p);
  return m;
}

inline woundseg::BinaryMask disk_mask(int w, int h, double cx, double cy, double r) {
  woundseg::BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r);
  return m;
}

inline woundseg::Frame random_frame(int w, int h, woundseg::Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = static_cast<float>(woundseg::uniform(rng, lo, hi));
  return woundseg::Frame(w, h, std::move(v));
}

}  // namespace testing_support
