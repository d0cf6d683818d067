#pragma once

// QALSH: query-aware projections a.x stored in one bulk-loaded B+-tree per
// function. A point collides with the query under a function when its
// projection lies within w R / 2 of the query's projection; each round widens
// that anchor window by c and walks the leaf chain outward from the frontier.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lshx/bptree.hpp"
#include "lshx/dataset.hpp"
#include "lshx/index_common.hpp"
#include "lshx/lsh_math.hpp"
#include "lshx/storage.hpp"

namespace lshx {

/// Consumed region of one tree around the query's projection.
///
/// The right frontier points at the next entry to consume going right; the
/// left frontier's `slot` counts the entries of its leaf still unconsumed to
/// the left (the next one is at slot - 1).
class AnchorWindow {
 public:
  AnchorWindow(const BPlusTree& tree, const PagedFile& file, double center, Stopwatch* clock = nullptr)
      : tree_(&tree), cursor_(file), center_(center) {
    cursor_.exclude_reads_from(clock);
  }

  double center() const noexcept { return center_; }
  double half_width() const noexcept { return half_width_; }
  bool exhausted() const noexcept { return started_ && !left_ && !right_; }

  /// Widens the window to `half_width` and calls `visit(id)` for every entry
  /// newly inside it. `visit` returns true to stop early. Returns true if
  /// stopped early.
  template <class Visit>
  bool consume(double half_width, IoStats& stats, Visit&& visit) {
    if (half_width < half_width_) throw ParameterError("anchor window may only widen");
    half_width_ = half_width;
    if (!started_) {
      auto [leaf, slot] = tree_->lower_bound(center_, cursor_, stats);
      left_ = Frontier{leaf, slot};
      right_ = Frontier{std::move(leaf), slot};
      started_ = true;
    }
    // right: keys <= center + half_width
    while (right_) {
      const auto view = right_->leaf.view();
      const std::size_t count = view.count();
      std::size_t slot = right_->slot;
      bool stop = false;
      while (slot < count) {
        const KeyedId e = view.entry(slot);
        if (e.key - center_ > half_width_) break;
        ++slot;
        if (visit(e.id)) {
          stop = true;
          break;
        }
      }
      right_->slot = slot;
      if (stop) return true;
      if (slot < count) break;
      if (view.next_leaf() == bptree::kNoLeaf) {
        right_.reset();
        break;
      }
      right_->leaf = tree_->read_leaf(view.next_leaf(), cursor_, stats);
      right_->slot = 0;
    }
    // left: keys >= center - half_width
    while (left_) {
      const auto view = left_->leaf.view();
      std::size_t slot = left_->slot;
      bool stop = false;
      while (slot > 0) {
        const KeyedId e = view.entry(slot - 1);
        if (center_ - e.key > half_width_) break;
        --slot;
        if (visit(e.id)) {
          stop = true;
          break;
        }
      }
      left_->slot = slot;
      if (stop) return true;
      if (slot > 0) break;
      if (left_->leaf.page == tree_->info().leaf_first) {
        left_.reset();
        break;
      }
      left_->leaf = tree_->read_leaf(left_->leaf.page - 1, cursor_, stats);
      left_->slot = left_->leaf.view().count();
    }
    return false;
  }

 private:
  struct Frontier {
    LeafBuffer leaf;
    std::size_t slot;
  };

  const BPlusTree* tree_;
  Cursor cursor_;
  double center_;
  double half_width_ = 0.0;
  bool started_ = false;
  std::optional<Frontier> left_, right_;
};

/// Newly collided ids after widening `window` to `half_width`.
inline std::vector<std::uint32_t> range_consume(AnchorWindow& window, double half_width, IoStats& stats) {
  std::vector<std::uint32_t> ids;
  window.consume(half_width, stats, [&](std::uint32_t id) {
    ids.push_back(id);
    return false;
  });
  return ids;
}

class QalshIndex {
 public:
  static QalshIndex build(const PointFile& points, const std::filesystem::path& dir, const BuildOptions& opts = {}) {
    const IndexParams params = build_params(points, Algorithm::Qalsh, opts);
    const auto family = sample_family(params.d, params.m, params.w, opts.seed, Scheme::QueryAware);
    stage_index_dir(dir, points);

    const std::size_t table_bytes = std::size_t{params.m} * TreeInfo::kEncodedBytes;
    IndexHeader header{.layout = Algorithm::Qalsh,
                       .params = params,
                       .family = family,
                       .page_size = opts.page_size,
                       .header_length = index_header_length(params.m, params.d, table_bytes, opts.page_size),
                       .t = points.meta().t,
                       .tables = {}};
    PagedFileWriter writer(index_file(dir), header.header_length, opts.page_size);
    ByteWriter tables;
    for (std::uint32_t j = 0; j < params.m; ++j) {
      BPlusTreeBuilder builder(writer, opts.fill_factor);
      for_each_sorted_projection(points, family[j], opts, dir, [&](const KeyedId& e) { builder.add(e); });
      builder.finish().encode(tables);
    }
    header.tables = tables.take();
    writer.write_header(encode_index_header(header));
    return QalshIndex(dir);
  }

  explicit QalshIndex(const std::filesystem::path& dir)
      : header_(read_index_header(index_file(dir))),
        file_(index_file(dir), header_.header_length, header_.page_size),
        points_(points_file(dir)) {
    if (header_.layout != Algorithm::Qalsh) throw ParameterError(dir.string() + " is not a qalsh index");
    if (header_.family.scheme() != Scheme::QueryAware) throw CorruptionError("qalsh index must be query-aware");
    if (points_.size() != header_.params.n || points_.dims() != header_.params.d)
      throw CorruptionError("point file does not match index header");
    ByteReader r(header_.tables);
    trees_.reserve(header_.params.m);
    for (std::uint32_t j = 0; j < header_.params.m; ++j) {
      trees_.emplace_back(file_, TreeInfo::decode(r));
      if (trees_.back().info().entries != header_.params.n) throw CorruptionError("qalsh tree has wrong entry count");
    }
  }

  const IndexParams& params() const noexcept { return header_.params; }
  const HashFamily& family() const noexcept { return header_.family; }
  const IndexHeader& header() const noexcept { return header_; }
  const PointFile& points() const noexcept { return points_; }
  const PagedFile& file() const noexcept { return file_; }
  const BPlusTree& tree(std::uint32_t j) const { return trees_.at(j); }
  double radius_limit() const { return max_sensitive_radius(header_.params.c, header_.t, header_.params.d); }

  QueryOutcome query(std::span<const float> q, std::size_t k, const QueryOptions& opts = {}) const {
    const IndexParams& p = header_.params;
    QuerySession session(p, points_, q, k, opts);
    std::vector<AnchorWindow> windows;
    windows.reserve(p.m);
    for (std::uint32_t j = 0; j < p.m; ++j) windows.emplace_back(trees_[j], file_, hash_qa(q, header_.family[j]), &session.algorithm_clock());

    const double limit = opts.fixed_radius ? *opts.fixed_radius : radius_limit();
    double radius = 1.0;
    std::uint32_t rounds = 0;
    auto collide = [&session](std::uint32_t id) { return session.collide(id); };
    for (;;) {
      if (opts.fixed_radius) {
        if (radius > limit * (1.0 + 1e-12)) return session.finish(Termination::FixedRadius, rounds, radius / p.c);
      } else {
        check_radius(radius, limit);
      }
      const double half_width = p.w * radius / 2.0;
      for (auto& window : windows) {
        if (window.consume(half_width, session.index_io(), collide)) return session.finish(Termination::CandidateCap, rounds + 1, radius);
      }
      ++rounds;
      if (!session.counting_only() && session.enough_near(radius))
        return session.finish(Termination::EnoughNear, rounds, radius);
      if (std::ranges::all_of(windows, [](const AnchorWindow& w) { return w.exhausted(); }))
        return session.finish(Termination::Exhausted, rounds, radius);
      radius *= p.c;
    }
  }

 private:
  IndexHeader header_;
  PagedFile file_;
  PointFile points_;
  std::vector<BPlusTree> trees_;
};

}  // namespace lshx
