#pragma once

// Pieces shared by the three external-memory indexes: the on-disk header,
// build options, collision counting, candidate verification and the
// per-query clocks that split algorithm time from I/O and verification time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "lshx/bptree.hpp"
#include "lshx/dataset.hpp"
#include "lshx/external_sort.hpp"
#include "lshx/error.hpp"
#include "lshx/lsh_math.hpp"
#include "lshx/storage.hpp"

namespace lshx {

enum class Algorithm : std::uint8_t { C2lsh = 1, Qalsh = 2, Ilsh = 3 };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::C2lsh: return "c2lsh";
    case Algorithm::Qalsh: return "qalsh";
    case Algorithm::Ilsh: return "ilsh";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "c2lsh") return Algorithm::C2lsh;
  if (name == "qalsh") return Algorithm::Qalsh;
  if (name == "ilsh") return Algorithm::Ilsh;
  throw ParameterError("unknown algorithm '" + name + "' (expected c2lsh, qalsh or ilsh)");
}

inline Scheme scheme_of(Algorithm a) { return a == Algorithm::C2lsh ? Scheme::E2 : Scheme::QueryAware; }

inline constexpr double kDefaultWidthE2 = 2.184;
inline constexpr double kDefaultWidthQueryAware = 2.781;

struct BuildOptions {
  double c = 2.0;
  double delta = 0.1;
  std::optional<double> w;  ///< defaults per scheme
  std::uint64_t seed = 1;
  std::optional<double> beta_override;
  std::uint32_t page_size = kDefaultPageSize;
  std::size_t block_points = 4096;  ///< points per streamed dataset block
  std::size_t sort_run_capacity = 0;  ///< 0: a whole function's entries form one run
  double fill_factor = 0.9;  ///< B+-tree bulk-load fill
};

inline double width_for(const BuildOptions& o, Scheme s) {
  return o.w.value_or(s == Scheme::E2 ? kDefaultWidthE2 : kDefaultWidthQueryAware);
}

// ---------------------------------------------------------------------------
// Index file header
//
//   "LSHX" u32 version u8 scheme u64 n u32 d u32 m f64 w f64 c u64 seed
//   m x (d x f64 a, f64 b)
//   u8 layout u32 page_size u64 header_length f64 delta f64 beta f64 t
//   layout tables (owned by each index), zero padding to header_length

inline constexpr char kIndexMagic[4] = {'L', 'S', 'H', 'X'};
inline constexpr std::uint32_t kIndexFormatVersion = 1;
inline constexpr std::size_t kIndexPrefixBytes = 4 + 4 + 1 + 8 + 4 + 4 + 8 + 8 + 8;
inline constexpr std::size_t kIndexLayoutFixedBytes = 1 + 4 + 8 + 8 + 8 + 8;

struct IndexHeader {
  Algorithm layout = Algorithm::C2lsh;
  IndexParams params;
  HashFamily family;
  std::uint32_t page_size = kDefaultPageSize;
  std::uint64_t header_length = 0;
  double t = 0.0;
  std::vector<std::byte> tables;
};

inline std::size_t family_bytes(std::uint32_t m, std::uint32_t d) { return std::size_t{m} * (std::size_t{d} + 1) * 8; }

/// Header length for a table section of `table_bytes`, padded to whole pages.
inline std::uint64_t index_header_length(std::uint32_t m, std::uint32_t d, std::size_t table_bytes,
                                         std::uint32_t page_size) {
  return round_up(kIndexPrefixBytes + family_bytes(m, d) + kIndexLayoutFixedBytes + table_bytes, page_size);
}

inline std::vector<std::byte> encode_index_header(const IndexHeader& h) {
  ByteWriter w;
  w.put_bytes(std::as_bytes(std::span(kIndexMagic)));
  w.put(kIndexFormatVersion);
  w.put(static_cast<std::uint8_t>(h.family.scheme()));
  w.put<std::uint64_t>(h.params.n);
  w.put<std::uint32_t>(h.family.dims());
  w.put<std::uint32_t>(h.family.size());
  w.put<double>(h.family.width());
  w.put<double>(h.params.c);
  w.put<std::uint64_t>(h.family.seed());
  for (const auto& fn : h.family.functions()) {
    for (double a : fn.a) w.put(a);
    w.put(fn.b);
  }
  w.put(static_cast<std::uint8_t>(h.layout));
  w.put<std::uint32_t>(h.page_size);
  w.put<std::uint64_t>(h.header_length);
  w.put<double>(h.params.delta);
  w.put<double>(h.params.beta);
  w.put<double>(h.t);
  w.put_bytes(h.tables);
  if (w.size() > h.header_length) throw ParameterError("index header overflows its reserved length");
  w.pad_to(h.header_length);
  return w.take();
}

inline IndexHeader read_index_header(const std::filesystem::path& path) {
  const auto prefix = PagedFile::read_prefix(path, kIndexPrefixBytes);
  if (std::memcmp(prefix.data(), kIndexMagic, 4) != 0) throw CorruptionError(path.string() + ": not an index file");
  ByteReader pr(prefix);
  pr.skip(4);
  if (pr.get<std::uint32_t>() != kIndexFormatVersion) throw CorruptionError(path.string() + ": unsupported version");
  const auto scheme_raw = pr.get<std::uint8_t>();
  if (scheme_raw > 1) throw CorruptionError(path.string() + ": unknown hash scheme");
  const auto scheme = static_cast<Scheme>(scheme_raw);
  const auto n = pr.get<std::uint64_t>();
  const auto d = pr.get<std::uint32_t>();
  const auto m = pr.get<std::uint32_t>();
  const auto w = pr.get<double>();
  const auto c = pr.get<double>();
  const auto seed = pr.get<std::uint64_t>();
  if (d == 0 || m == 0 || m > (1u << 20) || d > (1u << 24)) throw CorruptionError(path.string() + ": implausible d/m");

  const auto fixed = PagedFile::read_prefix(path, kIndexPrefixBytes + family_bytes(m, d) + kIndexLayoutFixedBytes);
  const auto header_length =
      load_le<std::uint64_t>(fixed.data() + kIndexPrefixBytes + family_bytes(m, d) + 1 + 4);
  const auto bytes = PagedFile::read_prefix(path, header_length);
  ByteReader r(bytes);
  r.skip(kIndexPrefixBytes);
  std::vector<HashFunction> fns(m);
  for (auto& fn : fns) {
    fn.a.resize(d);
    for (auto& a : fn.a) a = r.get<double>();
    fn.b = r.get<double>();
  }

  IndexHeader h{.params = {}, .family = HashFamily(scheme, d, w, seed, std::move(fns)), .tables = {}};
  const auto layout_raw = r.get<std::uint8_t>();
  if (layout_raw < 1 || layout_raw > 3) throw CorruptionError(path.string() + ": unknown index layout");
  h.layout = static_cast<Algorithm>(layout_raw);
  h.page_size = r.get<std::uint32_t>();
  h.header_length = r.get<std::uint64_t>();
  const double delta = r.get<double>();
  const double beta = r.get<double>();
  h.t = r.get<double>();
  h.params = derive_params(n, c, delta, w, scheme, beta);
  h.params.d = d;
  if (h.params.m != m) throw CorruptionError(path.string() + ": stored function count disagrees with parameters");
  h.tables.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.position()), bytes.end());
  return h;
}

/// Checks shared by every build and returns the derived parameters.
inline IndexParams build_params(const PointFile& points, Algorithm algo, const BuildOptions& opts) {
  if (points.size() == 0) throw ParameterError("cannot index an empty dataset");
  if (points.size() > UINT32_MAX) throw ParameterError("point ids are 32-bit; dataset too large");
  if (algo == Algorithm::C2lsh && (opts.c < 2.0 || opts.c != std::floor(opts.c)))
    throw ParameterError("c2lsh requires an integral approximation ratio c >= 2");
  auto p = derive_params(points.size(), opts.c, opts.delta, width_for(opts, scheme_of(algo)), scheme_of(algo),
                         opts.beta_override);
  p.d = points.dims();
  return p;
}

inline std::filesystem::path index_file(const std::filesystem::path& dir) { return dir / "index.lshx"; }
inline std::filesystem::path points_file(const std::filesystem::path& dir) { return dir / "points.lshd"; }

/// Creates `dir` and copies the point file into it so the index is self-contained.
inline void stage_index_dir(const std::filesystem::path& dir, const PointFile& points) {
  std::filesystem::create_directories(dir);
  const auto target = points_file(dir);
  std::error_code ec;
  if (std::filesystem::equivalent(points.file().path(), target, ec)) return;
  std::filesystem::copy_file(points.file().path(), target, std::filesystem::copy_options::overwrite_existing);
}

/// Emits (a.x, id) for every point in (key, id) order.
template <class Sink>
void for_each_sorted_projection(const PointFile& points, const HashFunction& fn, const BuildOptions& opts,
                                const std::filesystem::path& temp_dir, Sink&& sink) {
  ExternalSorter<KeyedId> sorter(temp_dir, opts.sort_run_capacity);
  points.for_each_block(opts.block_points, [&](std::size_t first, const Dataset& block) {
    for (std::size_t i = 0; i < block.size(); ++i)
      sorter.add({hash_qa(block.row(i), fn), static_cast<std::uint32_t>(first + i)});
  });
  sorter.drain(sink);
}

// ---------------------------------------------------------------------------
// query-time machinery

enum class Termination : std::uint8_t {
  EnoughNear,     ///< k verified results within c * R at a round boundary
  CandidateCap,   ///< k + beta n candidates verified
  Exhausted,      ///< every index entry consumed
  FixedRadius,    ///< counting-only run reached its requested radius
};

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::EnoughNear: return "enough-near";
    case Termination::CandidateCap: return "candidate-cap";
    case Termination::Exhausted: return "exhausted";
    case Termination::FixedRadius: return "fixed-radius";
  }
  return "?";
}

struct QueryOptions {
  /// Counting-only mode: consume every entry within this radius, skip
  /// verification and termination. Used by the recount oracles.
  std::optional<double> fixed_radius;
  bool keep_counts = false;
};

struct QueryOutcome {
  std::vector<Neighbor> neighbors;  ///< up to k, sorted by (distance, id)
  IoStats index_io;
  IoStats fp_io;
  double algorithm_ms = 0.0;
  double fp_ms = 0.0;
  std::uint64_t verified = 0;
  std::uint64_t consumed = 0;  ///< index entries counted
  std::uint32_t rounds = 0;
  double final_radius = 0.0;
  Termination termination = Termination::Exhausted;
  std::vector<std::uint32_t> counts;  ///< filled when QueryOptions::keep_counts
};

/// Fixed-capacity best-k set ordered by (distance, id).
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(const Neighbor& nb) {
    if (heap_.size() < k_) {
      heap_.push_back(nb);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (k_ > 0 && closer(nb, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = nb;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }
  bool full() const noexcept { return heap_.size() >= k_; }
  /// Distance of the current k-th result; only meaningful when full().
  double worst() const { return heap_.front().distance; }

  std::vector<Neighbor> sorted() const {
    auto out = heap_;
    std::sort(out.begin(), out.end(), closer);
    return out;
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;  // max-heap under `closer`
};

/// Collision counting, candidate verification and cost accounting for one
/// query. Index implementations feed it entries; it decides when to stop.
class QuerySession {
 public:
  QuerySession(const IndexParams& params, const PointFile& points, std::span<const float> query, std::size_t k,
               const QueryOptions& opts)
      : params_(params),
        points_(points),
        query_(query),
        cap_(params.candidate_cap(k)),
        counting_only_(opts.fixed_radius.has_value()),
        keep_counts_(opts.keep_counts),
        counts_(params.n, 0),
        top_(k),
        fp_cursor_(points.file()),
        point_buf_(points.dims()) {
    if (k < 1) throw ParameterError("query: k must be >= 1");
    if (params.m > UINT16_MAX) throw ParameterError("query: more than 65535 hash functions");
    if (query.size() != params.d) throw DomainError("query: dimension mismatch");
    algorithm_clock_.start();
  }

  /// Records one collision. Returns true when the candidate cap is reached.
  bool collide(std::uint32_t id) {
    ++consumed_;
    if (++counts_[id] != params_.l || counting_only_) [[likely]]
      return false;
    return admit(id);
  }

  /// k verified results within c * radius.
  bool enough_near(double radius) const { return top_.full() && top_.worst() <= params_.c * radius; }

  bool counting_only() const noexcept { return counting_only_; }
  std::uint32_t count(std::uint32_t id) const { return counts_[id]; }

  /// Clock that index cursors must pause around their reads.
  Stopwatch& algorithm_clock() noexcept { return algorithm_clock_; }

  IoStats& index_io() noexcept { return index_io_; }

  QueryOutcome finish(Termination why, std::uint32_t rounds, double radius) {
    algorithm_clock_.stop();
    QueryOutcome out;
    out.neighbors = top_.sorted();
    out.index_io = index_io_;
    out.fp_io = fp_io_;
    out.algorithm_ms = algorithm_clock_.elapsed_ms();
    out.fp_ms = fp_clock_.elapsed_ms();
    out.verified = verified_;
    out.consumed = consumed_;
    out.rounds = rounds;
    out.final_radius = radius;
    out.termination = why;
    if (keep_counts_) out.counts.assign(counts_.begin(), counts_.end());
    return out;
  }

 private:
  // Kept out of line so that collide() stays small enough to inline.
  [[gnu::noinline]] bool admit(std::uint32_t id) {
    verify(id);
    return verified_ >= cap_;
  }

  void verify(std::uint32_t id) {
    algorithm_clock_.stop();
    fp_clock_.start();
    points_.fetch(id, fp_cursor_, fp_io_, scratch_, point_buf_);
    top_.offer({id, distance(point_buf_, query_)});
    ++verified_;
    fp_clock_.stop();
    algorithm_clock_.start();
  }

  const IndexParams& params_;
  const PointFile& points_;
  std::span<const float> query_;
  std::uint64_t cap_;
  bool counting_only_;
  bool keep_counts_;
  std::vector<std::uint16_t> counts_;  // m is capped so that a full count fits
  TopK top_;
  Cursor fp_cursor_;
  std::vector<std::byte> scratch_;
  std::vector<float> point_buf_;
  IoStats index_io_;
  IoStats fp_io_;
  Stopwatch algorithm_clock_;
  Stopwatch fp_clock_;
  std::uint64_t verified_ = 0;
  std::uint64_t consumed_ = 0;
};

inline void check_radius(double radius, double limit) {
  if (radius > limit * (1.0 + 1e-12))
    throw RadiusError("query radius " + std::to_string(radius) + " exceeds the sensitivity bound " +
                      std::to_string(limit) + " = c^ceil(log_c(t d))");
}

}  // namespace lshx
