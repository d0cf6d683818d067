#pragma once

// Dataset ingestion (fvecs / ivecs / CSV), integer normalization, synthetic
// generation, query sampling, exact k-NN ground truth, and the paged point
// file used to fetch candidates during false-positive removal.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lshx/error.hpp"
#include "lshx/log.hpp"
#include "lshx/random.hpp"
#include "lshx/storage.hpp"

namespace lshx {

/// Row-major n x d matrix of single-precision coordinates.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n, std::size_t d) : n_(n), d_(d), values_(n * d, 0.0f) {}
  Dataset(std::size_t n, std::size_t d, std::vector<float> values) : n_(n), d_(d), values_(std::move(values)) {
    if (values_.size() != n_ * d_) throw ParameterError("dataset: value count does not match n * d");
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t dims() const noexcept { return d_; }
  bool empty() const noexcept { return n_ == 0; }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * d_, d_}; }
  std::span<float> row(std::size_t i) { return {values_.data() + i * d_, d_}; }
  const std::vector<float>& values() const noexcept { return values_; }
  std::vector<float>& values() noexcept { return values_; }

  void push_back(std::span<const float> point) {
    if (n_ == 0 && d_ == 0) d_ = point.size();
    if (point.size() != d_) throw ParameterError("dataset: point has wrong dimensionality");
    values_.insert(values_.end(), point.begin(), point.end());
    ++n_;
  }

  Dataset select(std::span<const std::uint32_t> ids) const {
    Dataset out(ids.size(), d_);
    for (std::size_t i = 0; i < ids.size(); ++i) std::ranges::copy(row(ids[i]), out.row(i).begin());
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<float> values_;
};

struct DatasetMeta {
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  double t = 0.0;  ///< largest absolute coordinate
  bool integer_valued = false;
  std::string source;
  std::uint64_t seed = 0;
};

/// Scans the data for t and integrality.
inline DatasetMeta describe(const Dataset& data, std::string source = {}, std::uint64_t seed = 0) {
  DatasetMeta meta;
  meta.n = data.size();
  meta.d = static_cast<std::uint32_t>(data.dims());
  meta.integer_valued = true;
  for (float v : data.values()) {
    meta.t = std::max(meta.t, static_cast<double>(std::fabs(v)));
    if (v != std::nearbyint(v)) meta.integer_valued = false;
  }
  meta.source = std::move(source);
  meta.seed = seed;
  return meta;
}

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc;
}

inline double distance(std::span<const float> a, std::span<const float> b) {
  return std::sqrt(squared_distance(a, b));
}

struct Neighbor {
  std::uint32_t id = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Orders by distance, then by id.
inline bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

struct GroundTruth {
  std::size_t depth = 0;
  std::vector<std::vector<Neighbor>> neighbors;  ///< one sorted list per query
};

// ---------------------------------------------------------------------------
// fvecs / ivecs

namespace detail {

template <class T>
std::vector<std::vector<T>> read_vecs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<T>> records;
  std::int64_t dim = -1;
  for (std::size_t index = 0;; ++index) {
    std::uint32_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    if (in.gcount() == 0) break;
    if (in.gcount() != sizeof d)
      throw FormatError(path.string() + ": truncated dimension field in record " + std::to_string(index));
    if (dim >= 0 && d != dim)
      throw FormatError(path.string() + ": record " + std::to_string(index) + " has dimension " +
                        std::to_string(d) + ", expected " + std::to_string(dim));
    dim = d;
    std::vector<T> rec(d);
    in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(d * sizeof(T)));
    if (in.gcount() != static_cast<std::streamsize>(d * sizeof(T)))
      throw FormatError(path.string() + ": truncated record " + std::to_string(index));
    records.push_back(std::move(rec));
  }
  return records;
}

template <class T>
void write_vecs(const std::filesystem::path& path, const std::vector<std::vector<T>>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  for (const auto& rec : records) {
    const auto d = static_cast<std::uint32_t>(rec.size());
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(d * sizeof(T)));
  }
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace detail

inline Dataset load_fvecs(const std::filesystem::path& path) {
  auto records = detail::read_vecs<float>(path);
  if (records.empty()) {
    warn(path.string() + ": empty fvecs file");
    return {};
  }
  Dataset data(0, records.front().size());
  for (const auto& r : records) data.push_back(r);
  return data;
}

inline void write_fvecs(const std::filesystem::path& path, const Dataset& data) {
  std::vector<std::vector<float>> records;
  records.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) records.emplace_back(data.row(i).begin(), data.row(i).end());
  detail::write_vecs(path, records);
}

inline std::vector<std::vector<std::int32_t>> load_ivecs(const std::filesystem::path& path) {
  auto records = detail::read_vecs<std::int32_t>(path);
  if (records.empty()) warn(path.string() + ": empty ivecs file");
  return records;
}

inline void write_ivecs(const std::filesystem::path& path, const std::vector<std::vector<std::int32_t>>& records) {
  detail::write_vecs(path, records);
}

/// One point per line, comma-separated. Blank lines are skipped.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset data;
  std::string line;
  std::vector<float> point;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    point.clear();
    std::size_t pos = 0;
    for (std::size_t column = 1;; ++column) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      std::size_t b = pos, e = end;
      while (b < e && (line[b] == ' ' || line[b] == '\t')) ++b;
      while (e > b && (line[e - 1] == ' ' || line[e - 1] == '\t')) --e;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, v);
      if (b == e || ec != std::errc{} || ptr != line.data() + e)
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": column " + std::to_string(column) +
                          " is not a number");
      point.push_back(static_cast<float>(v));
      if (end == line.size()) break;
      pos = end + 1;
    }
    if (!data.empty() && point.size() != data.dims())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(data.dims()) + " columns, found " + std::to_string(point.size()));
    data.push_back(point);
  }
  if (data.empty()) warn(path.string() + ": empty CSV file");
  return data;
}

// ---------------------------------------------------------------------------

/// Affine map of all coordinates onto the integers [0, target_max]
/// (global min -> 0, global max -> target_max), rounded half away from zero.
inline DatasetMeta normalize_integers(Dataset& data, double target_max, std::string source = {}) {
  if (!(target_max >= 1.0)) throw ParameterError("normalize_integers: target_max must be >= 1");
  if (data.empty()) return describe(data, std::move(source));
  const auto [lo_it, hi_it] = std::ranges::minmax_element(data.values());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    warn("normalize_integers: dataset has a single distinct value; mapping to zeros");
    std::ranges::fill(data.values(), 0.0f);
  } else {
    const double scale = target_max / (hi - lo);
    for (float& v : data.values()) {
      const double mapped = (static_cast<double>(v) == hi) ? target_max : (static_cast<double>(v) - lo) * scale;
      v = static_cast<float>(std::round(mapped));
    }
  }
  auto meta = describe(data, std::move(source));
  meta.t = std::max(meta.t, hi == lo ? 0.0 : target_max);
  return meta;
}

/// Gaussian blobs around centers drawn uniformly from the unit cube, then
/// integer-normalized to [0, target_max]. `spread` is the per-coordinate
/// standard deviation in unit-cube coordinates.
inline Dataset synth_clustered(std::size_t n, std::size_t d, std::size_t clusters, double spread,
                               std::uint64_t seed, double target_max = 10000.0) {
  if (n == 0 || d == 0 || clusters == 0) throw ParameterError("synth_clustered: n, d, clusters must be >= 1");
  Rng rng(seed);
  std::vector<double> centers(clusters * d);
  for (auto& c : centers) c = rng.uniform();
  Dataset data(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.below(clusters);
    auto row = data.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(centers[k * d + j] + spread * rng.normal());
  }
  normalize_integers(data, target_max);
  return data;
}

/// Uniform points in [0, target_max]^d with integer coordinates.
inline Dataset synth_uniform(std::size_t n, std::size_t d, std::uint64_t seed, double target_max = 10000.0) {
  Rng rng(seed);
  Dataset data(n, d);
  for (float& v : data.values()) v = static_cast<float>(rng.uniform());
  normalize_integers(data, target_max);
  return data;
}

/// Deterministic sample of `count` distinct point ids (partial Fisher-Yates).
inline std::vector<std::uint32_t> sample_queries(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) throw ParameterError("sample_queries: count exceeds dataset size");
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(ids[i], ids[i + rng.below(n - i)]);
  ids.resize(count);
  return ids;
}

/// Exact top-`depth` neighbors per query, ties broken by id. Ids listed in
/// `exclude` (one per query, or empty) are skipped for that query.
inline GroundTruth brute_force_knn(const Dataset& data, const Dataset& queries, std::size_t depth,
                                   std::span<const std::uint32_t> exclude = {}, unsigned threads = 1) {
  if (depth > data.size()) throw ParameterError("brute_force_knn: depth exceeds dataset size");
  if (!exclude.empty() && exclude.size() != queries.size())
    throw ParameterError("brute_force_knn: exclude list must have one id per query");
  GroundTruth gt;
  gt.depth = depth;
  gt.neighbors.resize(queries.size());

  auto solve = [&](std::size_t qi) {
    std::vector<Neighbor> all;
    all.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!exclude.empty() && exclude[qi] == i) continue;
      all.push_back({static_cast<std::uint32_t>(i), distance(data.row(i), queries.row(qi))});
    }
    const std::size_t keep = std::min(depth, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), closer);
    all.resize(keep);
    gt.neighbors[qi] = std::move(all);
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t q = 0; q < queries.size(); ++q) solve(q);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t q = t; q < queries.size(); q += threads) solve(q);
      });
  }
  return gt;
}

/// Writes ids as ivecs and distances as fvecs, one record per query.
inline void write_ground_truth(const std::filesystem::path& ids_path, const std::filesystem::path& dist_path,
                               const GroundTruth& gt) {
  std::vector<std::vector<std::int32_t>> ids;
  Dataset dists(0, gt.depth);
  for (const auto& list : gt.neighbors) {
    std::vector<std::int32_t> row_ids;
    std::vector<float> row_d;
    for (const auto& nb : list) {
      row_ids.push_back(static_cast<std::int32_t>(nb.id));
      row_d.push_back(static_cast<float>(nb.distance));
    }
    ids.push_back(std::move(row_ids));
    dists.push_back(row_d);
  }
  write_ivecs(ids_path, ids);
  write_fvecs(dist_path, dists);
}

inline GroundTruth read_ground_truth(const std::filesystem::path& ids_path, const std::filesystem::path& dist_path) {
  const auto ids = load_ivecs(ids_path);
  const auto dists = load_fvecs(dist_path);
  if (ids.size() != dists.size()) throw FormatError("ground truth id and distance files disagree in length");
  GroundTruth gt;
  gt.depth = ids.empty() ? 0 : ids.front().size();
  for (std::size_t q = 0; q < ids.size(); ++q) {
    std::vector<Neighbor> list;
    for (std::size_t i = 0; i < ids[q].size(); ++i)
      list.push_back({static_cast<std::uint32_t>(ids[q][i]), static_cast<double>(dists.row(q)[i])});
    gt.neighbors.push_back(std::move(list));
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Paged point file (".lshd")
//
// header: "LSHD", u32 version, u64 header_length, u64 n, u32 d, f64 t,
//         u8 integer_valued, u64 seed, u32 page_size, u32 source_length, source bytes
// pages:  records of d f32 values; a record never straddles a page boundary
//         unless it is larger than a page, in which case it starts on a fresh page.

inline constexpr char kPointMagic[4] = {'L', 'S', 'H', 'D'};
inline constexpr std::uint32_t kPointFormatVersion = 1;

struct PointLayout {
  std::uint32_t page_size = kDefaultPageSize;
  std::uint32_t dims = 0;

  std::uint64_t record_bytes() const { return std::uint64_t{dims} * sizeof(float); }
  std::uint64_t records_per_page() const { return std::max<std::uint64_t>(1, page_size / record_bytes()); }
  std::uint64_t pages_per_record() const {
    return record_bytes() <= page_size ? 1 : (record_bytes() + page_size - 1) / page_size;
  }
  std::uint64_t first_page(std::uint64_t id) const {
    return record_bytes() <= page_size ? id / records_per_page() : id * pages_per_record();
  }
  std::uint64_t offset_in_page(std::uint64_t id) const {
    return record_bytes() <= page_size ? (id % records_per_page()) * record_bytes() : 0;
  }
  std::uint64_t page_count(std::uint64_t n) const {
    return record_bytes() <= page_size ? (n + records_per_page() - 1) / records_per_page() : n * pages_per_record();
  }
};

inline void write_point_file(const std::filesystem::path& path, const Dataset& data, const DatasetMeta& meta,
                             std::uint32_t page_size = kDefaultPageSize) {
  if (data.dims() == 0) throw ParameterError("point file: dataset has no dimensions");
  const PointLayout layout{page_size, static_cast<std::uint32_t>(data.dims())};

  ByteWriter h;
  h.put_bytes(std::as_bytes(std::span(kPointMagic)));
  h.put(kPointFormatVersion);
  h.put<std::uint64_t>(0);  // header_length, patched below
  h.put<std::uint64_t>(data.size());
  h.put<std::uint32_t>(layout.dims);
  h.put<double>(meta.t);
  h.put<std::uint8_t>(meta.integer_valued ? 1 : 0);
  h.put<std::uint64_t>(meta.seed);
  h.put<std::uint32_t>(page_size);
  h.put<std::uint32_t>(static_cast<std::uint32_t>(meta.source.size()));
  h.put_bytes(std::as_bytes(std::span(meta.source)));
  const std::uint64_t header_length = round_up(h.size(), page_size);
  h.pad_to(header_length);
  store_le<std::uint64_t>(h.bytes().data() + 8, header_length);

  PagedFileWriter out(path, header_length, page_size);
  std::vector<std::byte> page(page_size);
  if (layout.record_bytes() <= page_size) {
    const std::uint64_t per_page = layout.records_per_page();
    for (std::uint64_t first = 0; first < data.size(); first += per_page) {
      std::ranges::fill(page, std::byte{0});
      const std::uint64_t last = std::min<std::uint64_t>(data.size(), first + per_page);
      for (std::uint64_t i = first; i < last; ++i)
        std::memcpy(page.data() + layout.offset_in_page(i), data.row(i).data(), layout.record_bytes());
      out.append_page(page);
    }
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto bytes = std::as_bytes(data.row(i));
      for (std::uint64_t off = 0; off < bytes.size(); off += page_size)
        out.append_page(bytes.subspan(off, std::min<std::uint64_t>(page_size, bytes.size() - off)));
    }
  }
  out.write_header(h.bytes());
}

class PointFile {
 public:
  explicit PointFile(const std::filesystem::path& path) : file_(open(path, meta_, layout_)) {}

  const DatasetMeta& meta() const noexcept { return meta_; }
  std::size_t size() const noexcept { return meta_.n; }
  std::uint32_t dims() const noexcept { return meta_.d; }
  const PagedFile& file() const noexcept { return file_; }
  const PointLayout& layout() const noexcept { return layout_; }

  /// Metered random fetch of one point: the cursor is reset so every fetch
  /// costs one seek plus the pages covering the record.
  void fetch(std::uint32_t id, Cursor& cursor, IoStats& stats, std::vector<std::byte>& scratch,
             std::span<float> out) const {
    if (id >= meta_.n) throw ParameterError("point id out of range");
    const std::uint64_t pages = layout_.pages_per_record();
    scratch.resize(pages * layout_.page_size);
    cursor.reset();
    cursor.read_pages(layout_.first_page(id), pages, scratch, stats);
    std::memcpy(out.data(), scratch.data() + layout_.offset_in_page(id), layout_.record_bytes());
  }

  /// Unmetered sequential scan in blocks of up to `block_points` points.
  template <class Visitor>
  void for_each_block(std::size_t block_points, Visitor&& visit) const {
    block_points = std::max<std::size_t>(1, block_points);
    Dataset block;
    std::vector<std::byte> buf;
    for (std::size_t first = 0; first < meta_.n; first += block_points) {
      const std::size_t last = std::min<std::size_t>(meta_.n, first + block_points);
      block = Dataset(last - first, meta_.d);
      const std::uint64_t p0 = layout_.first_page(first);
      const std::uint64_t p1 = layout_.first_page(last - 1) + layout_.pages_per_record();
      buf.resize((p1 - p0) * layout_.page_size);
      file_.read_pages_unmetered(p0, p1 - p0, buf);
      for (std::size_t i = first; i < last; ++i) {
        const std::uint64_t off = (layout_.first_page(i) - p0) * layout_.page_size + layout_.offset_in_page(i);
        std::memcpy(block.row(i - first).data(), buf.data() + off, layout_.record_bytes());
      }
      visit(first, static_cast<const Dataset&>(block));
    }
  }

  Dataset load_all() const {
    Dataset all(0, meta_.d);
    all.values().reserve(meta_.n * meta_.d);
    for_each_block(8192, [&](std::size_t, const Dataset& block) {
      for (std::size_t i = 0; i < block.size(); ++i) all.push_back(block.row(i));
    });
    return all;
  }

 private:
  static PagedFile open(const std::filesystem::path& path, DatasetMeta& meta, PointLayout& layout) {
    const auto prefix = PagedFile::read_prefix(path, 16);
    if (std::memcmp(prefix.data(), kPointMagic, 4) != 0) throw CorruptionError(path.string() + ": not a point file");
    if (load_le<std::uint32_t>(prefix.data() + 4) != kPointFormatVersion)
      throw CorruptionError(path.string() + ": unsupported point file version");
    const auto header_length = load_le<std::uint64_t>(prefix.data() + 8);
    const auto header = PagedFile::read_prefix(path, header_length);
    ByteReader r(header);
    r.skip(16);
    meta.n = r.get<std::uint64_t>();
    meta.d = r.get<std::uint32_t>();
    meta.t = r.get<double>();
    meta.integer_valued = r.get<std::uint8_t>() != 0;
    meta.seed = r.get<std::uint64_t>();
    layout.page_size = r.get<std::uint32_t>();
    layout.dims = meta.d;
    const auto source_len = r.get<std::uint32_t>();
    if (source_len > r.remaining()) throw CorruptionError(path.string() + ": bad source length");
    meta.source.assign(reinterpret_cast<const char*>(header.data() + r.position()), source_len);
    PagedFile file(path, header_length, layout.page_size);
    if (file.page_count() != layout.page_count(meta.n))
      throw CorruptionError(path.string() + ": page count does not match point count");
    return file;
  }

  DatasetMeta meta_;
  PointLayout layout_;
  PagedFile file_;
};

}  // namespace lshx
