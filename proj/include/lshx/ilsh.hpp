#pragma once

// I-LSH: query-aware projections with incremental expansion. Instead of
// widening every anchor window by a factor c per round, the search always
// consumes the single entry (over all functions) whose projection is nearest
// to the query's, so the window grows exactly as far as it has to.
//
// Storage is a flat sorted array of (f64 a.x, u32 id) records per function
// with a sparse first-key directory; frontier walks are strictly outward.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "lshx/bptree.hpp"
#include "lshx/dataset.hpp"
#include "lshx/index_common.hpp"
#include "lshx/lsh_math.hpp"
#include "lshx/storage.hpp"

namespace lshx {

class IlshIndex;

/// One consumed entry.
struct Pop {
  std::uint32_t function;
  KeyedId entry;
  double distance;  ///< |key - h(q)| in projected space
};

/// Per-function outward cursors plus a min-queue over functions keyed by the
/// projected distance of each function's next unconsumed entry.
///
/// Metering: every page fetch is a random read (one seek), and consuming on
/// the opposite side from a function's previous pop repositions that
/// function's read head, which is charged as one seek and one zero-byte read.
class ExpansionFrontier {
 public:
  ExpansionFrontier(const IlshIndex& index, std::span<const float> q, IoStats& stats, Stopwatch* clock = nullptr);

  /// Projected distance of the next entry `next_nearest` would return.
  std::optional<double> peek() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.top().distance;
  }

  /// Consumes the globally nearest unconsumed entry; ties go to the lower
  /// function index, and within a function to the left side.
  std::optional<Pop> next_nearest(IoStats& stats);

  /// Largest projected distance consumed so far.
  double half_width() const noexcept { return half_width_; }
  std::uint64_t consumed() const noexcept { return consumed_; }

 private:
  enum class Side : std::uint8_t { None, Left, Right };

  struct PageBuffer {
    std::uint64_t page = UINT64_MAX;
    std::vector<std::byte> bytes;
  };

  struct FunctionCursor {
    double center = 0.0;
    std::uint64_t left = 0;   ///< entries [0, left) remain on the left
    std::uint64_t right = 0;  ///< entries [right, n) remain on the right
    PageBuffer left_page, right_page;
    Side last = Side::None;
  };

  struct QueueItem {
    double distance;
    std::uint32_t function;
    friend bool operator>(const QueueItem& a, const QueueItem& b) {
      return a.distance > b.distance || (a.distance == b.distance && a.function > b.function);
    }
  };

  void fetch(std::uint32_t j, std::uint64_t entry, PageBuffer& buf, IoStats& stats);
  KeyedId entry_in(const PageBuffer& buf, std::uint64_t entry) const;
  std::optional<std::pair<double, Side>> nearest_side(const FunctionCursor& f) const;
  void enqueue(std::uint32_t j);

  const IlshIndex* index_;
  Cursor cursor_;
  std::vector<FunctionCursor> functions_;
  std::priority_queue<QueueItem, std::vector<QueueItem>, std::greater<>> queue_;
  double half_width_ = 0.0;
  std::uint64_t consumed_ = 0;
};

class IlshIndex {
 public:
  static constexpr std::size_t kRecordBytes = 12;

  struct FunctionRun {
    std::uint64_t first_page = 0;
    std::uint32_t page_count = 0;
    std::vector<double> first_keys;
  };

  static IlshIndex build(const PointFile& points, const std::filesystem::path& dir, const BuildOptions& opts = {}) {
    const IndexParams params = build_params(points, Algorithm::Ilsh, opts);
    const auto family = sample_family(params.d, params.m, params.w, opts.seed, Scheme::QueryAware);
    stage_index_dir(dir, points);

    const std::uint32_t page_size = opts.page_size;
    const std::uint64_t per_page = records_per_page(page_size);
    const auto pages_per_fn = static_cast<std::uint32_t>((params.n + per_page - 1) / per_page);
    const std::size_t table_bytes = std::size_t{params.m} * (8 + 4 + std::size_t{pages_per_fn} * 12);
    IndexHeader header{.layout = Algorithm::Ilsh,
                       .params = params,
                       .family = family,
                       .page_size = page_size,
                       .header_length = index_header_length(params.m, params.d, table_bytes, page_size),
                       .t = points.meta().t,
                       .tables = {}};
    PagedFileWriter writer(index_file(dir), header.header_length, page_size);
    ByteWriter tables;
    std::vector<std::byte> page(page_size);
    for (std::uint32_t j = 0; j < params.m; ++j) {
      tables.put<std::uint64_t>(writer.page_count());
      tables.put<std::uint32_t>(pages_per_fn);
      std::uint64_t slot = 0;
      auto flush = [&] {
        const std::uint64_t index = writer.append_page(page);
        tables.put<double>(load_le<double>(page.data()));
        tables.put<std::uint32_t>(static_cast<std::uint32_t>(index));
        std::ranges::fill(page, std::byte{0});
        slot = 0;
      };
      for_each_sorted_projection(points, family[j], opts, dir, [&](const KeyedId& e) {
        store_le(page.data() + slot * kRecordBytes, e.key);
        store_le(page.data() + slot * kRecordBytes + 8, e.id);
        if (++slot == per_page) flush();
      });
      if (slot != 0) flush();
    }
    header.tables = tables.take();
    writer.write_header(encode_index_header(header));
    return IlshIndex(dir);
  }

  explicit IlshIndex(const std::filesystem::path& dir)
      : header_(read_index_header(index_file(dir))),
        file_(index_file(dir), header_.header_length, header_.page_size),
        points_(points_file(dir)),
        per_page_(records_per_page(header_.page_size)) {
    if (header_.layout != Algorithm::Ilsh) throw ParameterError(dir.string() + " is not an ilsh index");
    if (header_.family.scheme() != Scheme::QueryAware) throw CorruptionError("ilsh index must be query-aware");
    if (points_.size() != header_.params.n || points_.dims() != header_.params.d)
      throw CorruptionError("point file does not match index header");
    ByteReader r(header_.tables);
    runs_.resize(header_.params.m);
    for (auto& run : runs_) {
      run.first_page = r.get<std::uint64_t>();
      run.page_count = r.get<std::uint32_t>();
      if (run.first_page + run.page_count > file_.page_count()) throw CorruptionError("ilsh run outside file");
      run.first_keys.resize(run.page_count);
      for (auto& key : run.first_keys) {
        key = r.get<double>();
        r.get<std::uint32_t>();
      }
    }
  }

  const IndexParams& params() const noexcept { return header_.params; }
  const HashFamily& family() const noexcept { return header_.family; }
  const IndexHeader& header() const noexcept { return header_; }
  const PointFile& points() const noexcept { return points_; }
  const PagedFile& file() const noexcept { return file_; }
  const std::vector<FunctionRun>& runs() const noexcept { return runs_; }
  std::uint64_t records_per_page() const noexcept { return per_page_; }
  double radius_limit() const { return max_sensitive_radius(header_.params.c, header_.t, header_.params.d); }

  /// Unmetered dump of one function's sorted array.
  std::vector<KeyedId> scan_function(std::uint32_t j) const {
    const auto& run = runs_.at(j);
    std::vector<std::byte> buf(std::size_t{run.page_count} * header_.page_size);
    if (run.page_count) file_.read_pages_unmetered(run.first_page, run.page_count, buf);
    std::vector<KeyedId> out(header_.params.n);
    for (std::uint64_t i = 0; i < out.size(); ++i) {
      const std::byte* p = buf.data() + (i / per_page_) * header_.page_size + (i % per_page_) * kRecordBytes;
      out[i] = {load_le<double>(p), load_le<std::uint32_t>(p + 8)};
    }
    return out;
  }

  QueryOutcome query(std::span<const float> q, std::size_t k, const QueryOptions& opts = {}) const {
    const IndexParams& p = header_.params;
    QuerySession session(p, points_, q, k, opts);
    ExpansionFrontier frontier(*this, q, session.index_io(), &session.algorithm_clock());
    const double limit = opts.fixed_radius ? *opts.fixed_radius : radius_limit();
    const double fixed_half_width = opts.fixed_radius ? p.w * *opts.fixed_radius / 2.0 : 0.0;
    std::uint32_t pops = 0;
    double r_eff = 0.0;
    for (;;) {
      const auto next = frontier.peek();
      if (!next) return session.finish(Termination::Exhausted, pops, r_eff);
      if (opts.fixed_radius && *next > fixed_half_width) return session.finish(Termination::FixedRadius, pops, r_eff);
      const Pop pop = *frontier.next_nearest(session.index_io());
      ++pops;
      r_eff = 2.0 * pop.distance / p.w;
      if (!opts.fixed_radius) check_radius(covering_power(r_eff, p.c), limit);
      if (session.collide(pop.entry.id)) return session.finish(Termination::CandidateCap, pops, r_eff);
      if (!session.counting_only() && session.enough_near(r_eff))
        return session.finish(Termination::EnoughNear, pops, r_eff);
    }
  }

  /// Smallest c^j (j >= 0) that is >= radius.
  static double covering_power(double radius, double c) {
    double r = 1.0;
    while (r < radius) r *= c;
    return r;
  }

 private:
  friend class ExpansionFrontier;

  static std::uint64_t records_per_page(std::uint32_t page_size) {
    const std::uint64_t per = page_size / kRecordBytes;
    if (per == 0) throw ParameterError("page size too small for ilsh records");
    return per;
  }

  IndexHeader header_;
  PagedFile file_;
  PointFile points_;
  std::uint64_t per_page_;
  std::vector<FunctionRun> runs_;
};

// ---------------------------------------------------------------------------

inline ExpansionFrontier::ExpansionFrontier(const IlshIndex& index, std::span<const float> q, IoStats& stats,
                                            Stopwatch* clock)
    : index_(&index), cursor_(index.file()) {
  cursor_.exclude_reads_from(clock);
  const std::uint64_t n = index.params().n;
  const std::uint64_t per_page = index.records_per_page();
  functions_.resize(index.params().m);
  for (std::uint32_t j = 0; j < functions_.size(); ++j) {
    FunctionCursor& f = functions_[j];
    f.center = hash_qa(q, index.family()[j]);
    const auto& keys = index.runs()[j].first_keys;
    // last page whose first key is < center holds the lower bound (or it is
    // the first entry of the following page)
    const auto after = static_cast<std::uint64_t>(std::ranges::lower_bound(keys, f.center) - keys.begin());
    const std::uint64_t page = after == 0 ? 0 : after - 1;
    fetch(j, page * per_page, f.right_page, stats);
    std::uint64_t pos = page * per_page;
    const std::uint64_t end = std::min(n, (page + 1) * per_page);
    while (pos < end && entry_in(f.right_page, pos).key < f.center) ++pos;
    f.right = pos;
    f.left = pos;
    f.left_page = f.right_page;
    if (f.right < n && f.right / per_page != f.right_page.page) fetch(j, f.right, f.right_page, stats);
    if (f.left > 0 && (f.left - 1) / per_page != f.left_page.page) fetch(j, f.left - 1, f.left_page, stats);
    enqueue(j);
  }
}

inline void ExpansionFrontier::fetch(std::uint32_t j, std::uint64_t entry, PageBuffer& buf, IoStats& stats) {
  const std::uint64_t page = entry / index_->records_per_page();
  buf.page = page;
  cursor_.reset();
  buf.bytes = cursor_.read_pages(index_->runs()[j].first_page + page, 1, stats);
}

inline KeyedId ExpansionFrontier::entry_in(const PageBuffer& buf, std::uint64_t entry) const {
  const std::byte* p = buf.bytes.data() + (entry % index_->records_per_page()) * IlshIndex::kRecordBytes;
  return {load_le<double>(p), load_le<std::uint32_t>(p + 8)};
}

inline std::optional<std::pair<double, ExpansionFrontier::Side>> ExpansionFrontier::nearest_side(
    const FunctionCursor& f) const {
  std::optional<std::pair<double, Side>> best;
  if (f.left > 0) best = {{f.center - entry_in(f.left_page, f.left - 1).key, Side::Left}};
  if (f.right < index_->params().n) {
    const double d = entry_in(f.right_page, f.right).key - f.center;
    if (!best || d < best->first) best = {{d, Side::Right}};
  }
  return best;
}

inline void ExpansionFrontier::enqueue(std::uint32_t j) {
  if (const auto side = nearest_side(functions_[j])) queue_.push({side->first, j});
}

inline std::optional<Pop> ExpansionFrontier::next_nearest(IoStats& stats) {
  if (queue_.empty()) return std::nullopt;
  const QueueItem top = queue_.top();
  queue_.pop();
  FunctionCursor& f = functions_[top.function];
  const auto side = nearest_side(f);
  const std::uint64_t per_page = index_->records_per_page();

  if (f.last != Side::None && f.last != side->second) {
    ++stats.seeks;
    ++stats.reads;
  }
  f.last = side->second;

  Pop pop{top.function, {}, side->first};
  if (side->second == Side::Left) {
    pop.entry = entry_in(f.left_page, f.left - 1);
    --f.left;
    if (f.left > 0 && (f.left - 1) / per_page != f.left_page.page) fetch(top.function, f.left - 1, f.left_page, stats);
  } else {
    pop.entry = entry_in(f.right_page, f.right);
    ++f.right;
    if (f.right < index_->params().n && f.right / per_page != f.right_page.page)
      fetch(top.function, f.right, f.right_page, stats);
  }
  half_width_ = std::max(half_width_, pop.distance);
  ++consumed_;
  enqueue(top.function);
  return pop;
}

}  // namespace lshx
