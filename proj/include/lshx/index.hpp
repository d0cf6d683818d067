#pragma once

// Uniform handle over the three index kinds, dispatched on the layout byte
// stored in the index header.

#include <filesystem>
#include <span>
#include <variant>

#include "lshx/c2lsh.hpp"
#include "lshx/ilsh.hpp"
#include "lshx/index_common.hpp"
#include "lshx/qalsh.hpp"

namespace lshx {

class AnyIndex {
 public:
  using Variant = std::variant<C2lshIndex, QalshIndex, IlshIndex>;

  explicit AnyIndex(Variant index) : index_(std::move(index)) {}

  static AnyIndex open(const std::filesystem::path& dir) {
    switch (read_index_header(index_file(dir)).layout) {
      case Algorithm::C2lsh: return AnyIndex(C2lshIndex(dir));
      case Algorithm::Qalsh: return AnyIndex(QalshIndex(dir));
      case Algorithm::Ilsh: return AnyIndex(IlshIndex(dir));
    }
    throw CorruptionError(dir.string() + ": unknown index layout");
  }

  static AnyIndex build(Algorithm algo, const PointFile& points, const std::filesystem::path& dir,
                        const BuildOptions& opts = {}) {
    switch (algo) {
      case Algorithm::C2lsh: return AnyIndex(C2lshIndex::build(points, dir, opts));
      case Algorithm::Qalsh: return AnyIndex(QalshIndex::build(points, dir, opts));
      case Algorithm::Ilsh: return AnyIndex(IlshIndex::build(points, dir, opts));
    }
    throw ParameterError("unknown algorithm");
  }

  Algorithm algorithm() const { return header().layout; }
  const IndexHeader& header() const {
    return std::visit([](const auto& i) -> const IndexHeader& { return i.header(); }, index_);
  }
  const IndexParams& params() const { return header().params; }
  const PointFile& points() const {
    return std::visit([](const auto& i) -> const PointFile& { return i.points(); }, index_);
  }

  QueryOutcome query(std::span<const float> q, std::size_t k, const QueryOptions& opts = {}) const {
    return std::visit([&](const auto& i) { return i.query(q, k, opts); }, index_);
  }

  const Variant& get() const noexcept { return index_; }

 private:
  Variant index_;
};

}  // namespace lshx
