#pragma once

// Benchmark harness: runs query batches against each index, splits the cost
// into index I/O, algorithm time and false-positive removal, applies the
// HDD/SSD query-time model and scores accuracy against exact ground truth.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lshx/dataset.hpp"
#include "lshx/error.hpp"
#include "lshx/index.hpp"
#include "lshx/log.hpp"
#include "lshx/storage.hpp"

namespace lshx {

struct DeviceModel {
  double seek_ms;
  double read_mb_per_ms;
};

inline constexpr DeviceModel kHdd{8.5, 0.156};
inline constexpr DeviceModel kSsd{0.01, 0.56};

inline constexpr double kBytesPerMb = 1024.0 * 1024.0;

/// Modeled query processing time in ms.
inline double qpt(const IoStats& index_io, double algorithm_ms, const IoStats& fp_io, double fp_ms,
                  const DeviceModel& device) {
  const double seeks = static_cast<double>(index_io.seeks + fp_io.seeks);
  const double mb = static_cast<double>(index_io.bytes_read + fp_io.bytes_read) / kBytesPerMb;
  return seeks * device.seek_ms + mb / device.read_mb_per_ms + algorithm_ms + fp_ms;
}

/// Mean of d(o_i, q) / d(o_i*, q) over the first k results. 0/0 counts as 1.
inline double ratio(std::span<const Neighbor> results, std::span<const Neighbor> truth, std::size_t k) {
  if (k == 0) throw ParameterError("ratio: k must be >= 1");
  if (truth.size() < k) throw ParameterError("ratio: ground truth shallower than k");
  if (results.size() < k)
    throw PartialResultError("ratio: " + std::to_string(results.size()) + " results for k=" + std::to_string(k),
                             k - results.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double got = results[i].distance;
    const double best = truth[i].distance;
    if (best == 0.0) {
      if (got != 0.0) throw DomainError("ratio: true distance is 0 but returned distance is not");
      sum += 1.0;
    } else {
      sum += got / best;
    }
  }
  return sum / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// configuration

struct BenchConfig {
  std::string dataset = "synth";
  std::string queries = "50";
  std::vector<std::size_t> k_sweep{1, 10, 20, 40, 60, 80, 100};
  std::vector<Algorithm> algorithms{Algorithm::C2lsh, Algorithm::Qalsh, Algorithm::Ilsh};
  double c = 2.0;
  double delta = 0.1;
  double w_e2 = kDefaultWidthE2;
  double w_qa = kDefaultWidthQueryAware;
  std::uint64_t seed = 1;
  std::optional<double> beta_override;
  DeviceModel hdd = kHdd;
  DeviceModel ssd = kSsd;
  std::string work_dir = "lshx-work";
  std::string output;
  bool exclude_self = false;
  std::uint32_t page_size = kDefaultPageSize;
  unsigned threads = 1;
  std::size_t repeats = 1;
  std::size_t kstar = 100;
  std::size_t synth_n = 10000;
  std::size_t synth_d = 32;
  std::size_t synth_clusters = 10;
  double synth_spread = 0.05;
  double target_max = 10000.0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(x))
    throw ParameterError("config: " + key + " expects a number, got '" + v + "'");
  return x;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ParameterError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError("config: " + key + " expects true or false, got '" + v + "'");
}

inline std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline double positive(const std::string& key, double v) {
  if (!(v > 0.0)) throw ParameterError("config: " + key + " must be > 0");
  return v;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(BenchConfig&, const std::string&)> set;
  std::function<std::string(const BenchConfig&)> get;
};

/// Every recognized configuration key, in documentation order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = {
      {"dataset", "'synth', or a .fvecs/.csv/.lshd file (relative paths resolve under LSHX_DATA_DIR)",
       [](BenchConfig& c, const std::string& v) { c.dataset = v; }, [](const BenchConfig& c) { return c.dataset; }},
      {"queries", "number of queries sampled from the dataset, or a .fvecs/.csv file of query vectors",
       [](BenchConfig& c, const std::string& v) { c.queries = v; }, [](const BenchConfig& c) { return c.queries; }},
      {"k_sweep", "comma-separated result sizes",
       [](BenchConfig& c, const std::string& v) {
         std::vector<std::size_t> ks;
         for (const auto& s : split_list(v)) {
           ks.push_back(to_uint("k_sweep", s));
           if (ks.back() == 0) throw ParameterError("config: k_sweep values must be >= 1");
         }
         if (ks.empty()) throw ParameterError("config: k_sweep is empty");
         c.k_sweep = std::move(ks);
       },
       [](const BenchConfig& c) {
         std::string s;
         for (auto k : c.k_sweep) s += (s.empty() ? "" : ",") + std::to_string(k);
         return s;
       }},
      {"algorithms", "comma-separated subset of c2lsh, qalsh, ilsh",
       [](BenchConfig& c, const std::string& v) {
         std::vector<Algorithm> as;
         for (const auto& s : split_list(v)) as.push_back(parse_algorithm(s));
         if (as.empty()) throw ParameterError("config: algorithms is empty");
         c.algorithms = std::move(as);
       },
       [](const BenchConfig& c) {
         std::string s;
         for (auto a : c.algorithms) s += (s.empty() ? "" : ",") + std::string(to_string(a));
         return s;
       }},
      {"c", "approximation ratio (integral for c2lsh)",
       [](BenchConfig& c, const std::string& v) { c.c = to_double("c", v); },
       [](const BenchConfig& c) { return number(c.c); }},
      {"delta", "error probability",
       [](BenchConfig& c, const std::string& v) { c.delta = to_double("delta", v); },
       [](const BenchConfig& c) { return number(c.delta); }},
      {"w_e2", "bucket width for c2lsh",
       [](BenchConfig& c, const std::string& v) { c.w_e2 = positive("w_e2", to_double("w_e2", v)); },
       [](const BenchConfig& c) { return number(c.w_e2); }},
      {"w_qa", "bucket width for qalsh and ilsh",
       [](BenchConfig& c, const std::string& v) { c.w_qa = positive("w_qa", to_double("w_qa", v)); },
       [](const BenchConfig& c) { return number(c.w_qa); }},
      {"seed", "seed for synthetic data, query sampling and hash functions",
       [](BenchConfig& c, const std::string& v) { c.seed = to_uint("seed", v); },
       [](const BenchConfig& c) { return std::to_string(c.seed); }},
      {"beta_override", "false-positive fraction; 'none' means 100/n",
       [](BenchConfig& c, const std::string& v) {
         if (v == "none" || v.empty())
           c.beta_override.reset();
         else
           c.beta_override = to_double("beta_override", v);
       },
       [](const BenchConfig& c) { return c.beta_override ? number(*c.beta_override) : std::string("none"); }},
      {"hdd_seek_ms", "HDD time per seek",
       [](BenchConfig& c, const std::string& v) { c.hdd.seek_ms = positive("hdd_seek_ms", to_double("hdd_seek_ms", v)); },
       [](const BenchConfig& c) { return number(c.hdd.seek_ms); }},
      {"hdd_read_mb_per_ms", "HDD streaming rate",
       [](BenchConfig& c, const std::string& v) {
         c.hdd.read_mb_per_ms = positive("hdd_read_mb_per_ms", to_double("hdd_read_mb_per_ms", v));
       },
       [](const BenchConfig& c) { return number(c.hdd.read_mb_per_ms); }},
      {"ssd_seek_ms", "SSD time per seek",
       [](BenchConfig& c, const std::string& v) { c.ssd.seek_ms = positive("ssd_seek_ms", to_double("ssd_seek_ms", v)); },
       [](const BenchConfig& c) { return number(c.ssd.seek_ms); }},
      {"ssd_read_mb_per_ms", "SSD streaming rate",
       [](BenchConfig& c, const std::string& v) {
         c.ssd.read_mb_per_ms = positive("ssd_read_mb_per_ms", to_double("ssd_read_mb_per_ms", v));
       },
       [](const BenchConfig& c) { return number(c.ssd.read_mb_per_ms); }},
      {"work_dir", "directory for the point file and indexes (reused when parameters match)",
       [](BenchConfig& c, const std::string& v) { c.work_dir = v; }, [](const BenchConfig& c) { return c.work_dir; }},
      {"output", "CSV report path; empty writes to stdout",
       [](BenchConfig& c, const std::string& v) { c.output = v; }, [](const BenchConfig& c) { return c.output; }},
      {"exclude_self", "drop each sampled query's own point from its ground truth",
       [](BenchConfig& c, const std::string& v) { c.exclude_self = to_bool("exclude_self", v); },
       [](const BenchConfig& c) { return std::string(c.exclude_self ? "true" : "false"); }},
      {"page_size", "index page size in bytes",
       [](BenchConfig& c, const std::string& v) {
         const auto p = to_uint("page_size", v);
         if (p < 64 || p > UINT32_MAX) throw ParameterError("config: page_size out of range");
         c.page_size = static_cast<std::uint32_t>(p);
       },
       [](const BenchConfig& c) { return std::to_string(c.page_size); }},
      {"threads", "query threads; above 1 timings are not comparable",
       [](BenchConfig& c, const std::string& v) {
         const auto t = to_uint("threads", v);
         if (t == 0 || t > 1024) throw ParameterError("config: threads must be in [1, 1024]");
         c.threads = static_cast<unsigned>(t);
       },
       [](const BenchConfig& c) { return std::to_string(c.threads); }},
      {"repeats", "runs per query; reported times are the minimum",
       [](BenchConfig& c, const std::string& v) {
         c.repeats = to_uint("repeats", v);
         if (c.repeats == 0) throw ParameterError("config: repeats must be >= 1");
       },
       [](const BenchConfig& c) { return std::to_string(c.repeats); }},
      {"kstar", "ground-truth depth",
       [](BenchConfig& c, const std::string& v) { c.kstar = to_uint("kstar", v); },
       [](const BenchConfig& c) { return std::to_string(c.kstar); }},
      {"synth_n", "synthetic dataset size",
       [](BenchConfig& c, const std::string& v) { c.synth_n = to_uint("synth_n", v); },
       [](const BenchConfig& c) { return std::to_string(c.synth_n); }},
      {"synth_d", "synthetic dimensionality",
       [](BenchConfig& c, const std::string& v) { c.synth_d = to_uint("synth_d", v); },
       [](const BenchConfig& c) { return std::to_string(c.synth_d); }},
      {"synth_clusters", "synthetic cluster count",
       [](BenchConfig& c, const std::string& v) { c.synth_clusters = to_uint("synth_clusters", v); },
       [](const BenchConfig& c) { return std::to_string(c.synth_clusters); }},
      {"synth_spread", "synthetic cluster standard deviation (unit-cube scale)",
       [](BenchConfig& c, const std::string& v) { c.synth_spread = positive("synth_spread", to_double("synth_spread", v)); },
       [](const BenchConfig& c) { return number(c.synth_spread); }},
      {"target_max", "integer normalization range [0, target_max]",
       [](BenchConfig& c, const std::string& v) {
         c.target_max = to_double("target_max", v);
         if (c.target_max < 1.0) throw ParameterError("config: target_max must be >= 1");
       },
       [](const BenchConfig& c) { return number(c.target_max); }},
  };
  return keys;
}

inline void set_config_value(BenchConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ParameterError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const BenchConfig& cfg, const std::string& key) {
  for (const auto& k : config_keys())
    if (k.name == key) return k.get(cfg);
  throw ParameterError("config: unknown key '" + key + "'");
}

/// Applies "key = value" lines; '#' starts a comment.
inline void apply_config_text(BenchConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ParameterError(origin + ":" + std::to_string(number) + ": expected key = value");
    try {
      set_config_value(cfg, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParameterError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

inline void apply_config_file(BenchConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  apply_config_text(cfg, text.str(), path.string());
}

/// Applies one "key=value" override.
inline void apply_override(BenchConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ParameterError("override '" + assignment + "' is not key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Relative paths resolve under $LSHX_DATA_DIR when it is set.
inline std::filesystem::path resolve_data_path(const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv("LSHX_DATA_DIR"); root && *root) return std::filesystem::path(root) / path;
  }
  return path;
}

inline BuildOptions build_options(const BenchConfig& cfg, Algorithm algo) {
  BuildOptions o;
  o.c = cfg.c;
  o.delta = cfg.delta;
  o.w = scheme_of(algo) == Scheme::E2 ? cfg.w_e2 : cfg.w_qa;
  o.seed = cfg.seed;
  o.beta_override = cfg.beta_override;
  o.page_size = cfg.page_size;
  return o;
}

// ---------------------------------------------------------------------------
// workspace

/// Loads a vector file; `format` is "fvecs", "csv" or empty to go by extension.
inline Dataset load_vectors(const std::filesystem::path& path, const std::string& format = "") {
  const std::string f = format.empty() ? path.extension().string() : "." + format;
  if (f == ".fvecs") return load_fvecs(path);
  if (f == ".csv") return load_csv(path);
  if (!format.empty()) throw ParameterError("unknown vector format '" + format + "' (expected fvecs or csv)");
  throw FormatError(path.string() + ": unsupported vector format (expected .fvecs or .csv)");
}

/// Normalizes raw vectors and writes a point file.
inline DatasetMeta ingest(const std::filesystem::path& input, const std::filesystem::path& output,
                          double target_max, std::uint32_t page_size = kDefaultPageSize,
                          const std::string& format = "") {
  Dataset data = load_vectors(input, format);
  if (data.empty()) throw FormatError(input.string() + ": no vectors");
  const DatasetMeta meta = normalize_integers(data, target_max, input.filename().string());
  write_point_file(output, data, meta, page_size);
  return meta;
}

inline std::string synth_descriptor(const BenchConfig& cfg) {
  return "synth:n=" + std::to_string(cfg.synth_n) + ",d=" + std::to_string(cfg.synth_d) +
         ",clusters=" + std::to_string(cfg.synth_clusters) + ",spread=" + detail::number(cfg.synth_spread) +
         ",target_max=" + detail::number(cfg.target_max) + ",seed=" + std::to_string(cfg.seed);
}

struct Workspace {
  std::filesystem::path root;
  std::filesystem::path points;
  Dataset queries;
  std::vector<std::uint32_t> query_ids;  ///< empty when queries came from a file
  GroundTruth truth;
};

/// Point file for the configured dataset, created on first use.
inline std::filesystem::path prepare_points(const BenchConfig& cfg) {
  const std::filesystem::path root(cfg.work_dir);
  std::filesystem::create_directories(root);
  const auto target = root / "points.lshd";
  std::string source;
  if (cfg.dataset == "synth") {
    source = synth_descriptor(cfg);
  } else {
    const auto input = resolve_data_path(cfg.dataset);
    if (input.extension() == ".lshd") return input;
    source = input.filename().string();
  }
  if (std::filesystem::exists(target)) {
    PointFile existing(target);
    if (existing.meta().source != source)
      throw ParameterError(target.string() + " holds dataset '" + existing.meta().source + "', config asks for '" +
                           source + "'; use another work_dir");
    return target;
  }
  if (cfg.dataset == "synth") {
    if (cfg.synth_n == 0 || cfg.synth_d == 0) throw ParameterError("config: synth_n and synth_d must be >= 1");
    const Dataset data =
        synth_clustered(cfg.synth_n, cfg.synth_d, cfg.synth_clusters, cfg.synth_spread, cfg.seed, cfg.target_max);
    DatasetMeta meta = describe(data, source, cfg.seed);
    write_point_file(target, data, meta, kDefaultPageSize);
  } else {
    ingest(resolve_data_path(cfg.dataset), target, cfg.target_max);
  }
  return target;
}

inline bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

inline Workspace prepare_workspace(const BenchConfig& cfg) {
  Workspace ws;
  ws.root = cfg.work_dir;
  ws.points = prepare_points(cfg);
  const PointFile points(ws.points);
  const Dataset data = points.load_all();
  if (all_digits(cfg.queries)) {
    ws.query_ids = sample_queries(data.size(), detail::to_uint("queries", cfg.queries), cfg.seed);
    ws.queries = data.select(ws.query_ids);
  } else {
    if (cfg.exclude_self) throw ParameterError("config: exclude_self needs queries sampled from the dataset");
    ws.queries = load_vectors(resolve_data_path(cfg.queries));
    if (ws.queries.dims() != data.dims()) throw ParameterError("query dimensionality differs from the dataset");
  }
  const std::size_t depth = std::max(cfg.kstar, *std::ranges::max_element(cfg.k_sweep));
  std::vector<std::uint32_t> exclude;
  if (cfg.exclude_self) exclude = ws.query_ids;
  ws.truth = brute_force_knn(data, ws.queries, std::min(depth, data.size() - (cfg.exclude_self ? 1 : 0)), exclude,
                             std::max(1u, std::thread::hardware_concurrency()));
  return ws;
}

/// Opens the index for `algo` under the work dir, building it if absent.
inline AnyIndex prepare_index(const BenchConfig& cfg, Algorithm algo, const std::filesystem::path& points_path) {
  const auto dir = std::filesystem::path(cfg.work_dir) / to_string(algo);
  const PointFile points(points_path);
  const BuildOptions opts = build_options(cfg, algo);
  if (!std::filesystem::exists(index_file(dir))) return AnyIndex::build(algo, points, dir, opts);

  AnyIndex index = AnyIndex::open(dir);
  const IndexHeader& h = index.header();
  const IndexParams expected = build_params(points, algo, opts);
  std::string mismatch;
  auto check = [&](const char* what, double have, double want) {
    if (have != want) mismatch += std::string(mismatch.empty() ? "" : ", ") + what + " " + detail::number(have) +
                                  " (config " + detail::number(want) + ")";
  };
  check("n", static_cast<double>(h.params.n), static_cast<double>(expected.n));
  check("d", h.params.d, expected.d);
  check("c", h.params.c, expected.c);
  check("delta", h.params.delta, expected.delta);
  check("w", h.params.w, expected.w);
  check("beta", h.params.beta, expected.beta);
  check("seed", static_cast<double>(h.family.seed()), static_cast<double>(opts.seed));
  check("page_size", h.page_size, opts.page_size);
  if (!mismatch.empty()) throw ParameterError(dir.string() + ": index header disagrees with config: " + mismatch);
  return index;
}

// ---------------------------------------------------------------------------
// reports

/// One CSV row: a single query, or the mean over a batch (query < 0).
struct QueryReport {
  Algorithm algorithm = Algorithm::C2lsh;
  std::size_t k = 0;
  std::int64_t query = -1;
  double seeks = 0, reads = 0, data_mb = 0;
  double fp_seeks = 0, fp_mb = 0;
  double algorithm_ms = 0, fp_ms = 0;
  double ratio = 0;
  double qpt_hdd_ms = 0, qpt_ssd_ms = 0;
  std::vector<Neighbor> results;  ///< per-query rows only
  bool mean() const noexcept { return query < 0; }
};

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {
      "kind",  "algorithm", "k",           "query", "seeks", "reads",      "data_mb",
      "fp_seeks", "fp_mb",  "algorithm_ms", "fp_ms", "ratio", "qpt_hdd_ms", "qpt_ssd_ms"};
  return cols;
}

/// Integers print exactly, everything else with 6 significant digits.
inline std::string format_number(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9.007199254740992e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  if (std::isnan(v)) return "nan";
  return detail::number(v);
}

inline void write_report(std::ostream& out, const std::vector<QueryReport>& rows) {
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    out << (r.mean() ? "mean" : "query") << ',' << to_string(r.algorithm) << ',' << r.k << ','
        << (r.mean() ? std::string("all") : std::to_string(r.query));
    for (double v : {r.seeks, r.reads, r.data_mb, r.fp_seeks, r.fp_mb, r.algorithm_ms, r.fp_ms, r.ratio,
                     r.qpt_hdd_ms, r.qpt_ssd_ms})
      out << ',' << format_number(v);
    out << '\n';
  }
}

/// Header and rows of a CSV file, as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(std::istream& in, const std::string& origin = "csv") {
  CsvTable t;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream s(line);
    std::string f;
    while (std::getline(s, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size())
        throw FormatError(origin + ":" + std::to_string(number) + ": expected " + std::to_string(t.header.size()) +
                          " fields, found " + std::to_string(fields.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  if (t.header.empty()) throw FormatError(origin + ": empty CSV");
  return t;
}

/// Concatenates reports, prefixing each row with the name of its source.
inline CsvTable merge_reports(const std::vector<std::pair<std::string, CsvTable>>& inputs) {
  CsvTable merged;
  for (const auto& [source, table] : inputs) {
    if (merged.header.empty()) {
      merged.header = {"source"};
      merged.header.insert(merged.header.end(), table.header.begin(), table.header.end());
    } else if (!std::equal(table.header.begin(), table.header.end(), merged.header.begin() + 1,
                           merged.header.end())) {
      throw FormatError(source + ": columns differ from the first report");
    }
    for (const auto& row : table.rows) {
      std::vector<std::string> r{source};
      r.insert(r.end(), row.begin(), row.end());
      merged.rows.push_back(std::move(r));
    }
  }
  return merged;
}

inline void write_csv_table(std::ostream& out, const CsvTable& t) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

// ---------------------------------------------------------------------------
// running

inline QueryReport make_row(Algorithm algo, std::size_t k, std::int64_t query, const QueryOutcome& o,
                            double algorithm_ms, double fp_ms, std::span<const Neighbor> truth,
                            const BenchConfig& cfg) {
  QueryReport r;
  r.algorithm = algo;
  r.k = k;
  r.query = query;
  r.seeks = static_cast<double>(o.index_io.seeks);
  r.reads = static_cast<double>(o.index_io.reads);
  r.data_mb = static_cast<double>(o.index_io.bytes_read) / kBytesPerMb;
  r.fp_seeks = static_cast<double>(o.fp_io.seeks);
  r.fp_mb = static_cast<double>(o.fp_io.bytes_read) / kBytesPerMb;
  r.algorithm_ms = algorithm_ms;
  r.fp_ms = fp_ms;
  try {
    r.ratio = ratio(o.neighbors, truth, k);
  } catch (const PartialResultError& e) {
    warn(std::string(to_string(algo)) + " k=" + std::to_string(k) + " query " + std::to_string(query) +
         ": partial result, " + std::to_string(e.shortfall()) + " missing");
    r.ratio = std::numeric_limits<double>::quiet_NaN();
  }
  r.qpt_hdd_ms = qpt(o.index_io, algorithm_ms, o.fp_io, fp_ms, cfg.hdd);
  r.qpt_ssd_ms = qpt(o.index_io, algorithm_ms, o.fp_io, fp_ms, cfg.ssd);
  r.results = o.neighbors;
  return r;
}

/// Mean of per-query rows; ratios that are NaN (partial results) are skipped.
inline QueryReport mean_row(std::span<const QueryReport> rows) {
  QueryReport m;
  if (rows.empty()) return m;
  m.algorithm = rows.front().algorithm;
  m.k = rows.front().k;
  m.query = -1;
  double ratio_sum = 0.0;
  std::size_t ratio_count = 0;
  for (const auto& r : rows) {
    m.seeks += r.seeks;
    m.reads += r.reads;
    m.data_mb += r.data_mb;
    m.fp_seeks += r.fp_seeks;
    m.fp_mb += r.fp_mb;
    m.algorithm_ms += r.algorithm_ms;
    m.fp_ms += r.fp_ms;
    m.qpt_hdd_ms += r.qpt_hdd_ms;
    m.qpt_ssd_ms += r.qpt_ssd_ms;
    if (!std::isnan(r.ratio)) {
      ratio_sum += r.ratio;
      ++ratio_count;
    }
  }
  const auto n = static_cast<double>(rows.size());
  for (double* v : {&m.seeks, &m.reads, &m.data_mb, &m.fp_seeks, &m.fp_mb, &m.algorithm_ms, &m.fp_ms,
                    &m.qpt_hdd_ms, &m.qpt_ssd_ms})
    *v /= n;
  m.ratio = ratio_count ? ratio_sum / static_cast<double>(ratio_count) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

/// Runs every (algorithm, k, query). Per query, the algorithms run back to
/// back and each is repeated `cfg.repeats` times keeping the fastest timing,
/// so slow drift in machine load hits all algorithms alike. Rows come out
/// grouped by algorithm then k: the per-query rows followed by their mean.
inline std::vector<QueryReport> run_benchmark(const BenchConfig& cfg, const Workspace& ws,
                                              const std::vector<AnyIndex>& indexes) {
  if (indexes.size() != cfg.algorithms.size()) throw ParameterError("run_benchmark: one index per algorithm");
  const std::size_t nq = ws.queries.size();
  for (auto k : cfg.k_sweep)
    if (k > ws.truth.depth) throw ParameterError("k=" + std::to_string(k) + " exceeds ground-truth depth");

  // cells[a][ki][q]
  std::vector<std::vector<std::vector<QueryReport>>> cells(
      indexes.size(), std::vector<std::vector<QueryReport>>(cfg.k_sweep.size(), std::vector<QueryReport>(nq)));

  auto run_query = [&](std::size_t q) {
    for (std::size_t ki = 0; ki < cfg.k_sweep.size(); ++ki) {
      const std::size_t k = cfg.k_sweep[ki];
      std::vector<std::optional<QueryOutcome>> first(indexes.size());
      std::vector<double> alg(indexes.size(), std::numeric_limits<double>::infinity());
      std::vector<double> fp(indexes.size(), std::numeric_limits<double>::infinity());
      for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        for (std::size_t a = 0; a < indexes.size(); ++a) {
          QueryOutcome o = indexes[a].query(ws.queries.row(q), k);
          alg[a] = std::min(alg[a], o.algorithm_ms);
          fp[a] = std::min(fp[a], o.fp_ms);
          if (!first[a]) first[a] = std::move(o);
        }
      }
      for (std::size_t a = 0; a < indexes.size(); ++a)
        cells[a][ki][q] = make_row(cfg.algorithms[a], k, static_cast<std::int64_t>(q), *first[a], alg[a], fp[a],
                                   ws.truth.neighbors[q], cfg);
    }
  };

  if (cfg.threads <= 1) {
    for (std::size_t q = 0; q < nq; ++q) run_query(q);
  } else {
    warn("threads > 1: timing columns are not comparable across algorithms");
    std::vector<std::exception_ptr> errors(cfg.threads);
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < cfg.threads; ++t)
        pool.emplace_back([&, t] {
          try {
            for (std::size_t q = t; q < nq; q += cfg.threads) run_query(q);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<QueryReport> rows;
  for (auto& per_algo : cells) {
    for (auto& per_k : per_algo) {
      const QueryReport m = mean_row(per_k);
      for (auto& r : per_k) rows.push_back(std::move(r));
      rows.push_back(m);
    }
  }
  return rows;
}

/// Prepares data, ground truth and indexes as needed, then runs the sweep.
inline std::vector<QueryReport> run_benchmark(const BenchConfig& cfg) {
  const Workspace ws = prepare_workspace(cfg);
  std::vector<AnyIndex> indexes;
  for (auto algo : cfg.algorithms) indexes.push_back(prepare_index(cfg, algo, ws.points));
  return run_benchmark(cfg, ws, indexes);
}

}  // namespace lshx
