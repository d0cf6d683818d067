#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "lshx/external_sort.hpp"
#include "lshx/storage.hpp"
#include "support.hpp"

namespace {

using namespace lshx;
using lshx::testing::TempDir;

// 200 pages of 4096 bytes; page i is filled with the byte (i % 251).
std::filesystem::path make_file(const TempDir& dir, std::uint64_t pages = 200, std::uint64_t header = 64) {
  const auto path = dir / "pages.bin";
  PagedFileWriter w(path, header, kDefaultPageSize);
  for (std::uint64_t i = 0; i < pages; ++i) {
    std::vector<std::byte> page(kDefaultPageSize, static_cast<std::byte>(i % 251));
    w.append_page(page);
  }
  std::vector<std::byte> h(header, std::byte{0x5a});
  w.write_header(h);
  return path;
}

TEST(Cursor, SequentialThenJump) {
  TempDir dir;
  const PagedFile file(make_file(dir), 64, kDefaultPageSize);
  auto cur = file.cursor();
  IoStats s;
  cur.read_pages(0, 4, s);
  EXPECT_EQ(s.seeks, 1u);
  EXPECT_EQ(s.bytes_read, 16384u);
  cur.read_pages(4, 2, s);
  EXPECT_EQ(s.seeks, 1u);
  EXPECT_EQ(s.bytes_read, 16384u + 8192u);
  cur.read_pages(100, 1, s);
  EXPECT_EQ(s.seeks, 2u);
  EXPECT_EQ(s.reads, 3u);
}

TEST(Cursor, BackwardOrRepeatedReadIsASeek) {
  TempDir dir;
  const PagedFile file(make_file(dir), 64, kDefaultPageSize);
  auto cur = file.cursor();
  IoStats s;
  cur.read_pages(10, 2, s);
  cur.read_pages(9, 1, s);
  EXPECT_EQ(s.seeks, 2u);
  cur.read_pages(9, 1, s);
  EXPECT_EQ(s.seeks, 3u);
  cur.read_pages(10, 1, s);
  EXPECT_EQ(s.seeks, 3u);
}

TEST(Cursor, ResetForcesSeekAndCursorsAreIndependent) {
  TempDir dir;
  const PagedFile file(make_file(dir), 64, kDefaultPageSize);
  auto a = file.cursor();
  auto b = file.cursor();
  IoStats s;
  a.read_pages(0, 1, s);
  b.read_pages(50, 1, s);
  a.read_pages(1, 1, s);
  EXPECT_EQ(s.seeks, 2u);
  a.reset();
  a.read_pages(2, 1, s);
  EXPECT_EQ(s.seeks, 3u);
}

TEST(Cursor, ReadsPageContents) {
  TempDir dir;
  const PagedFile file(make_file(dir), 64, kDefaultPageSize);
  EXPECT_EQ(file.page_count(), 200u);
  auto cur = file.cursor();
  IoStats s;
  const auto bytes = cur.read_pages(7, 3, s);
  ASSERT_EQ(bytes.size(), 3u * kDefaultPageSize);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_EQ(bytes[p * kDefaultPageSize], static_cast<std::byte>(7 + p));
    EXPECT_EQ(bytes[p * kDefaultPageSize + kDefaultPageSize - 1], static_cast<std::byte>(7 + p));
  }
  const auto header = file.read_header();
  EXPECT_EQ(header.size(), 64u);
  EXPECT_EQ(header[0], std::byte{0x5a});
}

TEST(Cursor, OutOfRangeIsIoError) {
  TempDir dir;
  const PagedFile file(make_file(dir), 64, kDefaultPageSize);
  auto cur = file.cursor();
  IoStats s;
  EXPECT_THROW(cur.read_pages(199, 2, s), IoError);
  EXPECT_THROW(cur.read_pages(200, 1, s), IoError);
  EXPECT_THROW(cur.read_pages(0, 0, s), IoError);
  EXPECT_EQ(s, IoStats{});
}

TEST(PagedFile, LengthMustBeHeaderPlusWholePages) {
  TempDir dir;
  const auto path = make_file(dir, 3);
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << "x";
  }
  EXPECT_THROW(PagedFile(path, 64, kDefaultPageSize), CorruptionError);
  EXPECT_THROW(PagedFile(dir / "missing.bin", 0, kDefaultPageSize), IoError);
}

TEST(PagedFileWriter, PadsShortPages) {
  TempDir dir;
  const auto path = dir / "short.bin";
  {
    PagedFileWriter w(path, 0, 512);
    std::vector<std::byte> a(10, std::byte{1});
    w.append_page(a);
    w.append_page({});
    EXPECT_THROW(w.append_page(std::vector<std::byte>(513)), ParameterError);
    EXPECT_THROW(w.write_header(std::vector<std::byte>(1)), ParameterError);
  }
  EXPECT_EQ(std::filesystem::file_size(path), 1024u);
  const PagedFile file(path, 0, 512);
  std::vector<std::byte> buf(1024);
  file.read_pages_unmetered(0, 2, buf);
  EXPECT_EQ(buf[9], std::byte{1});
  EXPECT_EQ(buf[10], std::byte{0});
  EXPECT_TRUE(std::all_of(buf.begin() + 512, buf.end(), [](std::byte b) { return b == std::byte{0}; }));
}

TEST(IoStats, MergeExamples) {
  EXPECT_EQ(stats_merge(IoStats{0, 0, 0}, IoStats{3, 8192, 3}), (IoStats{3, 8192, 3}));
  EXPECT_EQ(stats_merge(IoStats{1, 4096, 1}, IoStats{2, 8192, 2}), (IoStats{3, 12288, 3}));
}

TEST(IoStats, MergeIsAssociativeAndCommutative) {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<std::uint64_t> d(0, 1u << 30);
  for (int i = 0; i < 1000; ++i) {
    const IoStats a{d(gen), d(gen), d(gen)}, b{d(gen), d(gen), d(gen)}, c{d(gen), d(gen), d(gen)};
    EXPECT_EQ(stats_merge(stats_merge(a, b), c), stats_merge(a, stats_merge(b, c)));
    EXPECT_EQ(stats_merge(a, b), stats_merge(b, a));
    EXPECT_EQ(stats_merge(a, IoStats{}), a);
  }
}

TEST(Stopwatch, PauseExcludesTime) {
  Stopwatch w;
  w.start();
  {
    detail::ClockPause pause(&w);
    EXPECT_FALSE(w.running());
  }
  EXPECT_TRUE(w.running());
  w.stop();
  EXPECT_GE(w.elapsed_ms(), 0.0);
  detail::ClockPause idle(&w);
  EXPECT_FALSE(w.running());
}

TEST(ByteCodec, RoundTripAndTruncation) {
  ByteWriter w;
  w.put<std::uint32_t>(0xdeadbeef);
  w.put<double>(-2.5);
  w.put<std::uint8_t>(7);
  EXPECT_EQ(w.size(), 13u);
  EXPECT_EQ(w.bytes()[0], std::byte{0xef});
  const auto bytes = w.take();
  ByteReader r(bytes);
  EXPECT_EQ(r.get<std::uint32_t>(), 0xdeadbeefu);
  EXPECT_EQ(r.get<double>(), -2.5);
  EXPECT_EQ(r.remaining(), 1u);
  EXPECT_THROW(r.get<std::uint16_t>(), CorruptionError);
  EXPECT_THROW(r.skip(2), CorruptionError);
  EXPECT_EQ(r.get<std::uint8_t>(), 7);
}

struct Rec {
  std::uint64_t key;
  std::uint32_t payload;
  friend bool operator<(const Rec& a, const Rec& b) { return a.key < b.key || (a.key == b.key && a.payload < b.payload); }
  friend bool operator==(const Rec&, const Rec&) = default;
};

TEST(ExternalSorter, MultiRunMatchesStdSort) {
  TempDir dir;
  std::mt19937_64 gen(11);
  std::vector<Rec> input(25000);
  for (std::uint32_t i = 0; i < input.size(); ++i) input[i] = {gen() % 5000, i};
  std::vector<Rec> out;
  {
    ExternalSorter<Rec> sorter(dir.path(), 1000);
    for (const auto& r : input) sorter.add(r);
    EXPECT_EQ(sorter.run_count(), 25u);
    sorter.drain([&](const Rec& r) { out.push_back(r); });
  }
  std::sort(input.begin(), input.end());
  EXPECT_EQ(out, input);
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(ExternalSorter, InMemoryAndEmpty) {
  TempDir dir;
  ExternalSorter<int> empty(dir.path(), 0);
  int seen = 0;
  empty.drain([&](int) { ++seen; });
  EXPECT_EQ(seen, 0);

  ExternalSorter<int, std::greater<int>> desc(dir.path(), 0);
  for (int v : {3, 1, 2}) desc.add(v);
  std::vector<int> out;
  desc.drain([&](int v) { out.push_back(v); });
  EXPECT_EQ(out, (std::vector<int>{3, 2, 1}));
}

TEST(RoundUp, Examples) {
  EXPECT_EQ(round_up(0, 4096), 0u);
  EXPECT_EQ(round_up(1, 4096), 4096u);
  EXPECT_EQ(round_up(4096, 4096), 4096u);
  EXPECT_EQ(round_up(4097, 4096), 8192u);
}

}  // namespace
