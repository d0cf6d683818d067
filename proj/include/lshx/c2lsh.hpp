#pragma once

// C2LSH: one E2 hash function per layer, collision counting, and virtual
// rehashing over bucket-sorted projection runs.
//
// Each function owns a contiguous run of pages holding (i64 h, u32 id)
// records sorted by (h, id). Level-R buckets are derived from the stored
// R = 1 hashes by floor division, so widening the radius only ever reads the
// entries adjacent to what is already consumed.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "lshx/dataset.hpp"
#include "lshx/external_sort.hpp"
#include "lshx/index_common.hpp"
#include "lshx/lsh_math.hpp"
#include "lshx/storage.hpp"

namespace lshx {

struct HashInterval {
  std::int64_t lo;
  std::int64_t hi;  ///< inclusive

  friend bool operator==(const HashInterval&, const HashInterval&) = default;
};

/// At most two intervals, left piece first.
struct RehashRanges {
  std::array<HashInterval, 2> items{};
  std::size_t count = 0;

  void push_back(HashInterval iv) { items[count++] = iv; }
  std::size_t size() const noexcept { return count; }
  bool empty() const noexcept { return count == 0; }
  const HashInterval& operator[](std::size_t i) const { return items[i]; }
  const HashInterval* begin() const noexcept { return items.data(); }
  const HashInterval* end() const noexcept { return items.data() + count; }
};

/// Hash intervals covered by the level-`next` bucket of `h_query` but not by
/// its level-`prev` bucket. `prev == 0` denotes the first round. `next` must
/// be a multiple of `prev`, which makes the buckets nested.
inline RehashRanges virtual_rehash_ranges(std::int64_t h_query, std::int64_t prev, std::int64_t next) {
  if (next < 1 || prev < 0) throw DomainError("virtual_rehash_ranges: radii must be positive");
  const std::int64_t next_lo = bucket_at_radius(h_query, next) * next;
  const std::int64_t next_hi = next_lo + next - 1;
  RehashRanges out;
  if (prev == 0) {
    out.push_back({next_lo, next_hi});
    return out;
  }
  if (next % prev != 0) throw DomainError("virtual_rehash_ranges: next radius must be a multiple of the previous");
  const std::int64_t prev_lo = bucket_at_radius(h_query, prev) * prev;
  const std::int64_t prev_hi = prev_lo + prev - 1;
  if (next_lo < prev_lo) out.push_back({next_lo, prev_lo - 1});
  if (prev_hi < next_hi) out.push_back({prev_hi + 1, next_hi});
  return out;
}

class C2lshIndex {
 public:
  static constexpr std::size_t kRecordBytes = 12;

  struct Entry {
    std::int64_t h;
    std::uint32_t id;

    friend bool operator<(const Entry& a, const Entry& b) { return a.h < b.h || (a.h == b.h && a.id < b.id); }
    friend bool operator==(const Entry& a, const Entry& b) { return a.h == b.h && a.id == b.id; }
  };

  struct FunctionRun {
    std::uint64_t first_page = 0;
    std::uint32_t page_count = 0;
    std::vector<std::int64_t> first_keys;  ///< sparse directory: first h of each page
  };

  static C2lshIndex build(const PointFile& points, const std::filesystem::path& dir, const BuildOptions& opts = {}) {
    const IndexParams params = build_params(points, Algorithm::C2lsh, opts);
    const auto family = sample_family(params.d, params.m, params.w, opts.seed, Scheme::E2);
    stage_index_dir(dir, points);

    const std::uint32_t page_size = opts.page_size;
    const std::uint64_t per_page = records_per_page(page_size);
    const auto pages_per_fn = static_cast<std::uint32_t>((params.n + per_page - 1) / per_page);
    const std::size_t table_bytes = std::size_t{params.m} * (8 + 4 + std::size_t{pages_per_fn} * 12);

    IndexHeader header{.layout = Algorithm::C2lsh,
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
      const HashFunction& fn = family[j];
      ExternalSorter<Entry> sorter(dir, opts.sort_run_capacity);
      points.for_each_block(opts.block_points, [&](std::size_t first, const Dataset& block) {
        for (std::size_t i = 0; i < block.size(); ++i)
          sorter.add({hash_e2(block.row(i), fn, params.w), static_cast<std::uint32_t>(first + i)});
      });

      tables.put<std::uint64_t>(writer.page_count());
      tables.put<std::uint32_t>(pages_per_fn);
      std::uint64_t slot = 0;
      auto flush = [&] {
        const std::uint64_t index = writer.append_page(page);
        tables.put<std::int64_t>(load_le<std::int64_t>(page.data()));
        tables.put<std::uint32_t>(static_cast<std::uint32_t>(index));
        std::ranges::fill(page, std::byte{0});
        slot = 0;
      };
      sorter.drain([&](const Entry& e) {
        store_le(page.data() + slot * kRecordBytes, e.h);
        store_le(page.data() + slot * kRecordBytes + 8, e.id);
        if (++slot == per_page) flush();
      });
      if (slot != 0) flush();
    }
    header.tables = tables.take();
    writer.write_header(encode_index_header(header));
    return C2lshIndex(dir);
  }

  explicit C2lshIndex(const std::filesystem::path& dir)
      : header_(read_index_header(index_file(dir))),
        file_(index_file(dir), header_.header_length, header_.page_size),
        points_(points_file(dir)),
        per_page_(records_per_page(header_.page_size)) {
    if (header_.layout != Algorithm::C2lsh) throw ParameterError(dir.string() + " is not a c2lsh index");
    if (header_.family.scheme() != Scheme::E2) throw CorruptionError("c2lsh index must use the E2 scheme");
    if (points_.size() != header_.params.n || points_.dims() != header_.params.d)
      throw CorruptionError("point file does not match index header");
    ByteReader r(header_.tables);
    runs_.resize(header_.params.m);
    for (auto& run : runs_) {
      run.first_page = r.get<std::uint64_t>();
      run.page_count = r.get<std::uint32_t>();
      if (run.first_page + run.page_count > file_.page_count()) throw CorruptionError("c2lsh run outside file");
      run.first_keys.resize(run.page_count);
      for (auto& key : run.first_keys) {
        key = r.get<std::int64_t>();
        r.get<std::uint32_t>();
      }
    }
  }

  const IndexParams& params() const noexcept { return header_.params; }
  const HashFamily& family() const noexcept { return header_.family; }
  const IndexHeader& header() const noexcept { return header_; }
  const PointFile& points() const noexcept { return points_; }
  const std::vector<FunctionRun>& runs() const noexcept { return runs_; }
  double radius_limit() const { return max_sensitive_radius(header_.params.c, header_.t, header_.params.d); }

  /// Unmetered dump of one function's sorted run.
  std::vector<Entry> scan_function(std::uint32_t j) const {
    const auto& run = runs_.at(j);
    std::vector<std::byte> buf(std::size_t{run.page_count} * header_.page_size);
    if (run.page_count) file_.read_pages_unmetered(run.first_page, run.page_count, buf);
    std::vector<Entry> out(header_.params.n);
    for (std::uint64_t i = 0; i < out.size(); ++i) out[i] = decode(record(buf, 0, i));
    return out;
  }

  QueryOutcome query(std::span<const float> q, std::size_t k, const QueryOptions& opts = {}) const {
    const IndexParams& p = header_.params;
    QuerySession session(p, points_, q, k, opts);
    std::vector<FunctionState> states;
    states.reserve(p.m);
    for (std::uint32_t j = 0; j < p.m; ++j) states.emplace_back(file_, hash_e2(q, header_.family[j], p.w), session.algorithm_clock());

    const auto c = static_cast<std::int64_t>(p.c);
    const double limit = opts.fixed_radius ? *opts.fixed_radius : radius_limit();
    std::int64_t prev = 0;
    std::int64_t radius = 1;
    std::uint32_t rounds = 0;
    for (;;) {
      if (opts.fixed_radius) {
        if (static_cast<double>(radius) > limit) return session.finish(Termination::FixedRadius, rounds, prev);
      } else {
        check_radius(static_cast<double>(radius), limit);
      }
      for (std::uint32_t j = 0; j < p.m; ++j) {
        for (const auto& interval : virtual_rehash_ranges(states[j].h_query, prev, radius))
          if (consume(j, states[j], interval, session)) return session.finish(Termination::CandidateCap, rounds + 1, radius);
      }
      ++rounds;
      if (!session.counting_only() && session.enough_near(static_cast<double>(radius)))
        return session.finish(Termination::EnoughNear, rounds, radius);
      if (std::ranges::all_of(states, [&](const FunctionState& s) { return s.lo == 0 && s.hi == p.n; }))
        return session.finish(Termination::Exhausted, rounds, radius);
      prev = radius;
      radius *= c;
    }
  }

 private:
  static std::uint64_t records_per_page(std::uint32_t page_size) {
    const std::uint64_t per = page_size / kRecordBytes;
    if (per == 0) throw ParameterError("page size too small for c2lsh records");
    return per;
  }

  static Entry decode(const std::byte* p) { return {load_le<std::int64_t>(p), load_le<std::uint32_t>(p + 8)}; }

  /// Per-function read state: consumed entries [lo, hi); `lo_buf` holds pages
  /// [lo_first, ...] and `hi_buf` pages [hi_first, hi_last].
  struct FunctionState {
    FunctionState(const PagedFile& file, std::int64_t h, Stopwatch& clock) : cursor(file), h_query(h) {
      cursor.exclude_reads_from(&clock);
    }

    Cursor cursor;
    std::int64_t h_query;
    bool started = false;
    std::uint64_t lo = 0, hi = 0;
    std::uint64_t lo_first = 0, hi_first = 0, hi_last = 0;
    std::shared_ptr<const std::vector<std::byte>> lo_buf, hi_buf;
  };

  enum class Scan : std::uint8_t { Open, Closed, Cap };

  std::uint64_t first_page_with_key_at_least(const FunctionRun& run, std::int64_t key) const {
    return static_cast<std::uint64_t>(std::ranges::lower_bound(run.first_keys, key) - run.first_keys.begin());
  }
  std::uint64_t pages_with_key_at_most(const FunctionRun& run, std::int64_t key) const {
    return static_cast<std::uint64_t>(std::ranges::upper_bound(run.first_keys, key) - run.first_keys.begin());
  }

  /// Reads pages [from, to] of function j.
  std::shared_ptr<const std::vector<std::byte>> load(const FunctionRun& run, FunctionState& s, std::uint64_t from,
                                                     std::uint64_t to, QuerySession& session) const {
    return std::make_shared<const std::vector<std::byte>>(
        s.cursor.read_pages(run.first_page + from, to - from + 1, session.index_io()));
  }

  const std::byte* record(const std::vector<std::byte>& buf, std::uint64_t first_page, std::uint64_t i) const {
    return buf.data() + (i / per_page_ - first_page) * header_.page_size + (i % per_page_) * kRecordBytes;
  }

  /// Counts entries from s.hi rightwards through the buffered pages while
  /// h <= hi. Open means the buffer ran out first.
  Scan scan_right(FunctionState& s, std::int64_t hi, QuerySession& session) const {
    const std::uint64_t end = std::min(header_.params.n, (s.hi_last + 1) * per_page_);
    std::uint64_t i = s.hi;
    Scan result = Scan::Open;
    while (i < end && result == Scan::Open) {
      const std::uint64_t stop = std::min(end, (i / per_page_ + 1) * per_page_);
      const std::byte* rec = record(*s.hi_buf, s.hi_first, i);
      for (; i < stop; ++i, rec += kRecordBytes) {
        if (load_le<std::int64_t>(rec) > hi) {
          result = Scan::Closed;
          break;
        }
        if (session.collide(load_le<std::uint32_t>(rec + 8))) {
          ++i;
          result = Scan::Cap;
          break;
        }
      }
    }
    s.hi = i;
    return result;
  }

  /// Counts entries below s.lo leftwards through the buffered pages while
  /// h >= lo.
  Scan scan_left(FunctionState& s, std::int64_t lo, QuerySession& session) const {
    const std::uint64_t begin = s.lo_first * per_page_;
    std::uint64_t i = s.lo;
    Scan result = Scan::Open;
    while (i > begin && result == Scan::Open) {
      const std::uint64_t stop = std::max(begin, (i - 1) / per_page_ * per_page_);
      const std::byte* rec = record(*s.lo_buf, s.lo_first, i - 1);
      for (; i > stop; --i, rec -= kRecordBytes) {
        if (load_le<std::int64_t>(rec) < lo) {
          result = Scan::Closed;
          break;
        }
        if (session.collide(load_le<std::uint32_t>(rec + 8))) {
          --i;
          result = Scan::Cap;
          break;
        }
      }
    }
    s.lo = i;
    return result;
  }

  /// Counts every not-yet-consumed entry with h in `iv`. Returns true on T2.
  bool consume(std::uint32_t j, FunctionState& s, HashInterval iv, QuerySession& session) const {
    const FunctionRun& run = runs_[j];
    const std::uint64_t n = header_.params.n;
    if (run.page_count == 0) return false;

    if (!s.started) {
      const std::uint64_t ps = std::max<std::uint64_t>(first_page_with_key_at_least(run, iv.lo), 1) - 1;
      const std::uint64_t pe = std::max(ps, std::max<std::uint64_t>(pages_with_key_at_most(run, iv.hi), 1) - 1);
      const auto buf = load(run, s, ps, pe, session);
      std::uint64_t first = ps * per_page_, count = std::min(n, (pe + 1) * per_page_) - first;
      while (count > 0) {
        const std::uint64_t half = count / 2;
        if (decode(record(*buf, ps, first + half)).h < iv.lo) {
          first += half + 1;
          count -= half + 1;
        } else {
          count = half;
        }
      }
      s.started = true;
      s.lo = s.hi = first;
      s.lo_first = s.hi_first = ps;
      s.hi_last = pe;
      s.lo_buf = s.hi_buf = buf;
      return scan_right(s, iv.hi, session) == Scan::Cap;
    }

    if (iv.lo > s.h_query) {
      for (;;) {
        const Scan r = scan_right(s, iv.hi, session);
        if (r != Scan::Open) return r == Scan::Cap;
        const std::uint64_t page = s.hi_last + 1;
        if (s.hi >= n || run.first_keys[page] > iv.hi) return false;
        const std::uint64_t pe = pages_with_key_at_most(run, iv.hi) - 1;
        s.hi_buf = load(run, s, page, pe, session);
        s.hi_first = page;
        s.hi_last = pe;
      }
    }

    for (;;) {
      const Scan r = scan_left(s, iv.lo, session);
      if (r != Scan::Open) return r == Scan::Cap;
      if (s.lo == 0 || run.first_keys[s.lo_first] < iv.lo) return false;
      const std::uint64_t page = s.lo_first - 1;
      const std::uint64_t ps = std::max<std::uint64_t>(first_page_with_key_at_least(run, iv.lo), 1) - 1;
      s.lo_buf = load(run, s, ps, page, session);
      s.lo_first = ps;
    }
  }

  IndexHeader header_;
  PagedFile file_;
  PointFile points_;
  std::uint64_t per_page_;
  std::vector<FunctionRun> runs_;
};

}  // namespace lshx
