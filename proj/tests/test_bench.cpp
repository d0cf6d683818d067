#include <gtest/gtest.h>

#include <sstream>

#include "lshx/bench.hpp"
#include "support.hpp"

namespace {

using namespace lshx;
using lshx::testing::TempDir;

TEST(Qpt, DeviceExamples) {
  const IoStats io{100, static_cast<std::uint64_t>(kBytesPerMb), 100};
  EXPECT_NEAR(qpt(io, 10.0, {}, 0.0, kHdd), 866.410, 5e-4);
  EXPECT_NEAR(qpt(io, 10.0, {}, 0.0, kSsd), 12.786, 5e-4);
  EXPECT_EQ(qpt({}, 0.0, {}, 0.0, kHdd), 0.0);
}

TEST(Qpt, LinearInEachInput) {
  const IoStats seeks{7, 0, 7}, bytes{0, 3 << 20, 1};
  EXPECT_DOUBLE_EQ(qpt(seeks + seeks, 0, {}, 0, kHdd), 2 * qpt(seeks, 0, {}, 0, kHdd));
  EXPECT_DOUBLE_EQ(qpt(bytes + bytes, 0, {}, 0, kSsd), 2 * qpt(bytes, 0, {}, 0, kSsd));
  EXPECT_DOUBLE_EQ(qpt(seeks, 1.5, bytes, 2.5, kHdd),
                   qpt(seeks, 0, {}, 0, kHdd) + qpt({}, 0, bytes, 0, kHdd) + 4.0);
}

TEST(Ratio, Examples) {
  const std::vector<Neighbor> truth{{0, 1.0}, {1, 2.0}};
  EXPECT_EQ(ratio(truth, truth, 2), 1.0);
  const std::vector<Neighbor> got{{0, 1.0}, {5, 3.0}};
  EXPECT_DOUBLE_EQ(ratio(got, truth, 2), 1.25);
  const std::vector<Neighbor> self{{4, 0.0}, {1, 2.0}};
  EXPECT_EQ(ratio(self, self, 2), 1.0);
  EXPECT_THROW(ratio(got, self, 1), DomainError);
  EXPECT_THROW(ratio(got, truth, 0), ParameterError);
  EXPECT_THROW(ratio(got, truth, 3), ParameterError);
  try {
    ratio(std::vector<Neighbor>{{0, 1.0}}, truth, 2);
    FAIL();
  } catch (const PartialResultError& e) {
    EXPECT_EQ(e.shortfall(), 1u);
  }
}

TEST(Config, ParsesFileTextAndOverrides) {
  BenchConfig cfg;
  apply_config_text(cfg,
                    "# acceptance\n"
                    "dataset = synth   # inline comment\n"
                    "k_sweep = 1, 10,100\n"
                    "algorithms = ilsh,c2lsh\n"
                    "beta_override = 0.25\n"
                    "hdd_seek_ms = 9\n"
                    "exclude_self = yes\n");
  EXPECT_EQ(cfg.k_sweep, (std::vector<std::size_t>{1, 10, 100}));
  EXPECT_EQ(cfg.algorithms, (std::vector<Algorithm>{Algorithm::Ilsh, Algorithm::C2lsh}));
  EXPECT_EQ(cfg.beta_override, 0.25);
  EXPECT_EQ(cfg.hdd.seek_ms, 9.0);
  EXPECT_TRUE(cfg.exclude_self);
  apply_override(cfg, "beta_override=none");
  EXPECT_FALSE(cfg.beta_override);
  apply_override(cfg, " seed = 77 ");
  EXPECT_EQ(cfg.seed, 77u);
}

TEST(Config, ErrorsNameTheLine) {
  BenchConfig cfg;
  try {
    apply_config_text(cfg, "seed = 1\nbogus = 2\n", "a.conf");
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("a.conf:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  EXPECT_THROW(apply_config_text(cfg, "seed\n"), ParameterError);
  EXPECT_THROW(apply_override(cfg, "c=abc"), ParameterError);
  EXPECT_THROW(apply_override(cfg, "k_sweep=1,0"), ParameterError);
  EXPECT_THROW(apply_override(cfg, "algorithms=lsh"), ParameterError);
  EXPECT_THROW(apply_override(cfg, "hdd_seek_ms=-1"), ParameterError);
  EXPECT_THROW(apply_override(cfg, "seed"), ParameterError);
}

TEST(Config, EveryKeyRoundTrips) {
  const BenchConfig defaults;
  for (const auto& key : config_keys()) {
    BenchConfig cfg;
    const std::string v = get_config_value(defaults, key.name);
    set_config_value(cfg, key.name, v);
    EXPECT_EQ(get_config_value(cfg, key.name), v) << key.name;
  }
  EXPECT_THROW(get_config_value(defaults, "nope"), ParameterError);
}

TEST(Report, FormatsNumbers) {
  EXPECT_EQ(format_number(3.0), "3");
  EXPECT_EQ(format_number(0.1234567), "0.123457");
  EXPECT_EQ(format_number(1234567.5), "1.23457e+06");
  EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
}

TEST(Report, CsvReadMergeRoundTrip) {
  std::istringstream a("x,y\n1,2\n3,\n"), b("x,y\n5,6\n");
  const CsvTable ta = read_csv_table(a), tb = read_csv_table(b);
  EXPECT_EQ(ta.rows.size(), 2u);
  EXPECT_EQ(ta.rows[1][1], "");
  const CsvTable m = merge_reports({{"a", ta}, {"b", tb}});
  EXPECT_EQ(m.header, (std::vector<std::string>{"source", "x", "y"}));
  ASSERT_EQ(m.rows.size(), 3u);
  EXPECT_EQ(m.rows[2], (std::vector<std::string>{"b", "5", "6"}));
  std::ostringstream out;
  write_csv_table(out, m);
  EXPECT_EQ(out.str(), "source,x,y\na,1,2\na,3,\nb,5,6\n");
  std::istringstream bad("x,y\n1\n"), other("z\n1\n");
  EXPECT_THROW(read_csv_table(bad), FormatError);
  EXPECT_THROW(merge_reports({{"a", ta}, {"o", read_csv_table(other)}}), FormatError);
}

class BenchRun : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_.work_dir = (dir_ / "work").string();
    cfg_.synth_n = 1000;
    cfg_.synth_d = 8;
    cfg_.queries = "6";
    cfg_.k_sweep = {1, 5, 10};
  }
  TempDir dir_;
  BenchConfig cfg_;
};

TEST_F(BenchRun, ShapeMeansAndQptConsistency) {
  const auto rows = run_benchmark(cfg_);
  ASSERT_EQ(rows.size(), 3u * 3u * (6u + 1u));
  std::size_t means = 0;
  for (std::size_t g = 0; g < 9; ++g) {
    const auto group = std::span(rows).subspan(g * 7, 7);
    const QueryReport& mean = group[6];
    ASSERT_TRUE(mean.mean());
    ++means;
    double seeks = 0, mb = 0, ratio_sum = 0;
    for (std::size_t q = 0; q < 6; ++q) {
      const QueryReport& r = group[q];
      EXPECT_EQ(r.algorithm, mean.algorithm);
      EXPECT_EQ(r.k, mean.k);
      EXPECT_EQ(r.query, std::int64_t(q));
      EXPECT_GE(r.ratio, 1.0 - 1e-9);
      EXPECT_GE(r.algorithm_ms, 0.0);
      EXPECT_GE(r.fp_ms, 0.0);
      const IoStats io{std::uint64_t(r.seeks), std::uint64_t(std::llround(r.data_mb * kBytesPerMb)), 0};
      const IoStats fp{std::uint64_t(r.fp_seeks), std::uint64_t(std::llround(r.fp_mb * kBytesPerMb)), 0};
      EXPECT_NEAR(r.qpt_hdd_ms, qpt(io, r.algorithm_ms, fp, r.fp_ms, kHdd), 1e-9);
      EXPECT_NEAR(r.qpt_ssd_ms, qpt(io, r.algorithm_ms, fp, r.fp_ms, kSsd), 1e-9);
      seeks += r.seeks;
      mb += r.data_mb;
      ratio_sum += r.ratio;
    }
    EXPECT_DOUBLE_EQ(mean.seeks, seeks / 6);
    EXPECT_DOUBLE_EQ(mean.data_mb, mb / 6);
    EXPECT_DOUBLE_EQ(mean.ratio, ratio_sum / 6);
  }
  EXPECT_EQ(means, 9u);

  std::ostringstream csv;
  write_report(csv, rows);
  std::istringstream in(csv.str());
  const CsvTable t = read_csv_table(in);
  EXPECT_EQ(t.header, report_columns());
  EXPECT_EQ(t.header.size(), 14u);
  EXPECT_EQ(t.rows.size(), rows.size());
  EXPECT_EQ(t.rows[6][0], "mean");
  EXPECT_EQ(t.rows[6][3], "all");
}

TEST_F(BenchRun, IoColumnsAreReproducibleAndIndexesAreReused) {
  const auto a = run_benchmark(cfg_);
  const auto stamp = std::filesystem::last_write_time(index_file(dir_ / "work" / "qalsh"));
  const auto b = run_benchmark(cfg_);
  EXPECT_EQ(std::filesystem::last_write_time(index_file(dir_ / "work" / "qalsh")), stamp);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].seeks, b[i].seeks);
    EXPECT_EQ(a[i].data_mb, b[i].data_mb);
    EXPECT_EQ(a[i].fp_seeks, b[i].fp_seeks);
    EXPECT_EQ(a[i].ratio, b[i].ratio);
    EXPECT_EQ(a[i].results, b[i].results);
  }
}

TEST_F(BenchRun, MismatchedIndexOrDatasetIsRejected) {
  run_benchmark(cfg_);
  BenchConfig other = cfg_;
  other.delta = 0.2;
  EXPECT_THROW(run_benchmark(other), ParameterError);
  other = cfg_;
  other.synth_n = 1200;
  EXPECT_THROW(run_benchmark(other), ParameterError);
  other = cfg_;
  other.k_sweep = {2000};
  EXPECT_THROW(run_benchmark(other), ParameterError);
}

TEST_F(BenchRun, ExcludeSelfAndThreadedRuns) {
  cfg_.exclude_self = true;
  cfg_.threads = 3;
  cfg_.algorithms = {Algorithm::Qalsh};
  const Workspace ws = prepare_workspace(cfg_);
  for (std::size_t q = 0; q < ws.queries.size(); ++q) {
    EXPECT_NE(ws.truth.neighbors[q][0].id, ws.query_ids[q]);
  }
  std::vector<AnyIndex> indexes{prepare_index(cfg_, Algorithm::Qalsh, ws.points)};
  const auto rows = run_benchmark(cfg_, ws, indexes);
  EXPECT_EQ(rows.size(), 3u * 7u);
}

TEST_F(BenchRun, QueriesFromFileAndCsvDataset) {
  const Dataset raw = synth_uniform(300, 5, 4, 50);
  {
    std::ofstream csv(dir_ / "data.csv");
    for (std::size_t i = 0; i < raw.size(); ++i) {
      for (std::size_t j = 0; j < 5; ++j) csv << (j ? "," : "") << raw.row(i)[j];
      csv << '\n';
    }
  }
  write_fvecs(dir_ / "q.fvecs", raw.select(std::vector<std::uint32_t>{0, 1, 2}));
  cfg_.dataset = (dir_ / "data.csv").string();
  cfg_.queries = (dir_ / "q.fvecs").string();
  cfg_.algorithms = {Algorithm::Ilsh};
  const Workspace ws = prepare_workspace(cfg_);
  EXPECT_TRUE(ws.query_ids.empty());
  EXPECT_EQ(ws.queries.size(), 3u);
  EXPECT_EQ(PointFile(ws.points).meta().source, "data.csv");
  const auto rows = run_benchmark(cfg_);
  EXPECT_EQ(rows.size(), 3u * 4u);
}

}  // namespace
