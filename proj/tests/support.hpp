#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "lshx/dataset.hpp"
#include "lshx/index_common.hpp"

namespace lshx::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "lshx-test-XXXXXX").string();
    if (!::mkdtemp(pattern.data())) throw IoError("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path write_points(const TempDir& dir, const Dataset& data, const std::string& name = "points.lshd",
                                          std::uint32_t page_size = kDefaultPageSize) {
  const auto path = dir / name;
  write_point_file(path, data, describe(data, "test"), page_size);
  return path;
}

/// Brute-force check of one answer: every returned distance is the true
/// distance of its id and is >= the true i-th distance. Returns an empty
/// string on success, else a description of the first violation.
inline std::string check_answer(const Dataset& data, std::span<const float> q, const std::vector<Neighbor>& got,
                                const std::vector<Neighbor>& truth) {
  if (got.size() > truth.size()) return "more results than ground truth";
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].id >= data.size()) return "id out of range";
    if (std::abs(got[i].distance - distance(data.row(got[i].id), q)) > 1e-9) return "reported distance is wrong";
    if (got[i].distance < truth[i].distance - 1e-9) return "result " + std::to_string(i) + " beats the true neighbor";
    if (i > 0 && closer(got[i], got[i - 1])) return "results not sorted";
    for (std::size_t j = 0; j < i; ++j)
      if (got[j].id == got[i].id) return "duplicate id";
  }
  return {};
}

}  // namespace lshx::testing
