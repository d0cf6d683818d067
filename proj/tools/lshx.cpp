// lshx: ingest data, build indexes, compute ground truth, query, benchmark
// and merge reports.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lshx/lshx.hpp"

namespace {

using namespace lshx;
namespace fs = std::filesystem;

std::string key_listing() {
  std::string out = "Config keys (file lines 'key = value', or --set key=value):\n";
  for (const auto& k : config_keys()) {
    out += "  " + k.name;
    out += std::string(k.name.size() < 20 ? 20 - k.name.size() : 1, ' ');
    out += k.help + " [default: " + k.get(BenchConfig{}) + "]\n";
  }
  out += "\nEnvironment: LSHX_DATA_DIR is the root for relative data paths.\n";
  return out;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const PartialResultError*>(&e)) return "partial-result";
  if (dynamic_cast<const RadiusError*>(&e)) return "radius";
  if (dynamic_cast<const ParameterError*>(&e)) return "parameter";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const CorruptionError*>(&e)) return "corruption";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "internal";
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const PartialResultError*>(&e)) return 5;
  if (dynamic_cast<const ParameterError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 2;
  if (dynamic_cast<const Error*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 4;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

void write_sidecar(const fs::path& points, const DatasetMeta& meta, double target_max) {
  nlohmann::ordered_json j;
  j["n"] = meta.n;
  j["d"] = meta.d;
  j["t"] = meta.t;
  j["integer_valued"] = meta.integer_valued;
  j["source"] = meta.source;
  j["seed"] = meta.seed;
  j["target_max"] = target_max;
  std::ofstream out(points.string() + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + points.string() + ".json");
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"External-memory LSH toolkit: C2LSH, QALSH and I-LSH with logical I/O metering", "lshx"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(key_listing());

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config_path, "Config file of key = value lines");
  app.add_option("--set", overrides, "Override one config key (key=value); repeatable");
  app.add_option("--seed", seed, "Shorthand for --set seed=N");
  app.add_flag("--quiet", quiet, "Suppress warnings");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Normalize a .fvecs/.csv file into a point file (+ .json sidecar)");
  std::string ingest_in, ingest_out;
  ingest_cmd->add_option("input", ingest_in, "Input vectors (.fvecs or .csv)")->required();
  ingest_cmd->add_option("output", ingest_out, "Output point file (.lshd)")->required();
  std::string ingest_format;
  ingest_cmd->add_option("--format", ingest_format, "Input format, overriding the extension")
      ->check(CLI::IsMember({"fvecs", "csv"}));

  // build
  auto* build_cmd = app.add_subcommand("build", "Build one index from a point file");
  std::string build_points, build_algo, build_out;
  build_cmd->add_option("--points", build_points, "Point file (.lshd)")->required();
  build_cmd->add_option("--algorithm", build_algo, "c2lsh, qalsh or ilsh")->required();
  build_cmd->add_option("--out", build_out, "Index directory")->required();

  // groundtruth
  auto* gt_cmd = app.add_subcommand("groundtruth", "Exact k* nearest neighbors by brute force");
  std::string gt_points, gt_prefix;
  gt_cmd->add_option("--points", gt_points, "Point file (.lshd)")->required();
  gt_cmd->add_option("--out", gt_prefix, "Output prefix: writes PREFIX.ivecs, PREFIX.fvecs, PREFIX.queries.fvecs")
      ->required();

  // query
  auto* query_cmd = app.add_subcommand("query", "Query an index; prints query,rank,id,distance rows");
  std::string query_index, query_file;
  std::vector<std::uint32_t> query_points;
  std::size_t query_k = 10;
  bool query_stats = false;
  query_cmd->add_option("--index", query_index, "Index directory")->required();
  query_cmd->add_option("--queries", query_file, "Query vectors (.fvecs or .csv), in point-file coordinates");
  query_cmd->add_option("--point", query_points, "Use indexed point ID as a query; repeatable");
  query_cmd->add_option("-k", query_k, "Number of neighbors")->check(CLI::PositiveNumber);
  query_cmd->add_flag("--stats", query_stats, "Print per-query I/O and timing to stderr");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run the benchmark sweep and write the CSV report");

  // report
  auto* report_cmd = app.add_subcommand("report", "Merge CSV reports, adding a source column");
  std::vector<std::string> report_inputs;
  std::string report_out;
  bool means_only = false;
  report_cmd->add_option("inputs", report_inputs, "Report CSV files")->required();
  report_cmd->add_option("--out", report_out, "Output path (default stdout)");
  report_cmd->add_flag("--means-only", means_only, "Keep only averaged rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (quiet) warning_sink() = nullptr;
    BenchConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, resolve_data_path(config_path));
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.seed = *seed;

    if (*ingest_cmd) {
      const fs::path out(ingest_out);
      const DatasetMeta meta = ingest(resolve_data_path(ingest_in), out, cfg.target_max, kDefaultPageSize, ingest_format);
      write_sidecar(out, meta, cfg.target_max);
      if (!quiet) std::cerr << "ingested n=" << meta.n << " d=" << meta.d << " t=" << meta.t << '\n';
    } else if (*build_cmd) {
      const Algorithm algo = parse_algorithm(build_algo);
      const PointFile points(resolve_data_path(build_points));
      const AnyIndex index = AnyIndex::build(algo, points, build_out, build_options(cfg, algo));
      const IndexParams& p = index.params();
      if (!quiet)
        std::cerr << to_string(algo) << ": n=" << p.n << " d=" << p.d << " m=" << p.m << " l=" << p.l
                  << " w=" << detail::number(p.w) << " beta=" << detail::number(p.beta) << '\n';
    } else if (*gt_cmd) {
      BenchConfig local = cfg;
      local.dataset = resolve_data_path(gt_points).string();
      const PointFile points(local.dataset);
      const Dataset data = points.load_all();
      Dataset queries;
      std::vector<std::uint32_t> ids;
      if (all_digits(local.queries)) {
        ids = sample_queries(data.size(), detail::to_uint("queries", local.queries), local.seed);
        queries = data.select(ids);
      } else {
        if (local.exclude_self) throw ParameterError("exclude_self needs queries sampled from the dataset");
        queries = load_vectors(resolve_data_path(local.queries));
      }
      const std::vector<std::uint32_t> exclude = local.exclude_self ? ids : std::vector<std::uint32_t>{};
      const std::size_t depth = std::min(local.kstar, data.size() - (local.exclude_self ? 1 : 0));
      const GroundTruth gt = brute_force_knn(data, queries, depth, exclude, std::max(1u, std::thread::hardware_concurrency()));
      write_ground_truth(gt_prefix + ".ivecs", gt_prefix + ".fvecs", gt);
      write_fvecs(gt_prefix + ".queries.fvecs", queries);
    } else if (*query_cmd) {
      const AnyIndex index = AnyIndex::open(query_index);
      Dataset queries(0, index.params().d);
      if (!query_file.empty()) queries = load_vectors(resolve_data_path(query_file));
      if (!query_points.empty()) {
        const Dataset all = index.points().load_all();
        for (auto id : query_points) {
          if (id >= all.size()) throw ParameterError("--point " + std::to_string(id) + " out of range");
          queries.push_back(all.row(id));
        }
      }
      if (queries.empty()) throw ParameterError("query: give --queries and/or --point");
      std::cout << "query,rank,id,distance\n";
      for (std::size_t q = 0; q < queries.size(); ++q) {
        const QueryOutcome o = index.query(queries.row(q), query_k);
        for (std::size_t r = 0; r < o.neighbors.size(); ++r)
          std::cout << q << ',' << r + 1 << ',' << o.neighbors[r].id << ',' << detail::number(o.neighbors[r].distance)
                    << '\n';
        if (query_stats)
          std::cerr << "query " << q << ": seeks=" << o.index_io.seeks << " reads=" << o.index_io.reads
                    << " bytes=" << o.index_io.bytes_read << " fp_seeks=" << o.fp_io.seeks
                    << " verified=" << o.verified << " algorithm_ms=" << detail::number(o.algorithm_ms)
                    << " fp_ms=" << detail::number(o.fp_ms) << " stop=" << to_string(o.termination) << '\n';
        if (o.neighbors.size() < query_k)
          throw PartialResultError("query " + std::to_string(q) + ": " + std::to_string(o.neighbors.size()) +
                                       " of " + std::to_string(query_k) + " neighbors found",
                                   query_k - o.neighbors.size());
      }
    } else if (*bench_cmd) {
      const auto rows = run_benchmark(cfg);
      if (cfg.output.empty()) {
        write_report(std::cout, rows);
      } else {
        auto out = open_output(cfg.output);
        write_report(out, rows);
      }
    } else if (*report_cmd) {
      std::vector<std::pair<std::string, CsvTable>> inputs;
      for (const auto& path : report_inputs) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path);
        inputs.emplace_back(fs::path(path).stem().string(), read_csv_table(in, path));
      }
      CsvTable merged = merge_reports(inputs);
      if (means_only) {
        const auto kind = std::find(merged.header.begin(), merged.header.end(), "kind") - merged.header.begin();
        if (static_cast<std::size_t>(kind) == merged.header.size()) throw FormatError("report: no kind column");
        std::erase_if(merged.rows, [&](const auto& r) { return r[static_cast<std::size_t>(kind)] != "mean"; });
      }
      if (report_out.empty()) {
        write_csv_table(std::cout, merged);
      } else {
        auto out = open_output(report_out);
        write_csv_table(out, merged);
      }
    }
  } catch (const std::exception& e) {
    std::cout.flush();
    std::cerr << "lshx: error: " << error_kind(e) << ": " << one_line(e.what()) << '\n';
    return exit_code(e);
  }
  return 0;
}
