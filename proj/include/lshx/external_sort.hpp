#pragma once

// Run-generation + k-way merge sort for fixed-size records. Records are
// buffered up to `run_capacity`; full buffers are sorted and spilled to a
// temporary run file, and `drain` merges the runs in order.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <queue>
#include <string>
#include <type_traits>
#include <vector>

#include "lshx/error.hpp"

namespace lshx {

template <class Record, class Less = std::less<Record>>
  requires std::is_trivially_copyable_v<Record>
class ExternalSorter {
 public:
  /// run_capacity == 0 keeps everything in a single in-memory run.
  ExternalSorter(std::filesystem::path temp_dir, std::size_t run_capacity, Less less = Less{})
      : temp_dir_(std::move(temp_dir)), run_capacity_(run_capacity), less_(less) {}

  ExternalSorter(const ExternalSorter&) = delete;
  ExternalSorter& operator=(const ExternalSorter&) = delete;

  ~ExternalSorter() {
    for (const auto& run : runs_) {
      std::error_code ec;
      std::filesystem::remove(run.path, ec);
    }
  }

  void add(const Record& r) {
    buffer_.push_back(r);
    if (run_capacity_ != 0 && buffer_.size() >= run_capacity_) spill();
  }

  std::size_t run_count() const noexcept { return runs_.size() + (buffer_.empty() ? 0 : 1); }

  /// Emits every record in sorted order. Consumes the sorter.
  template <class Sink>
  void drain(Sink&& sink) {
    std::sort(buffer_.begin(), buffer_.end(), less_);
    if (runs_.empty()) {
      for (const auto& r : buffer_) sink(r);
      buffer_.clear();
      return;
    }
    if (!buffer_.empty()) spill();

    std::vector<RunReader> readers;
    readers.reserve(runs_.size());
    for (const auto& run : runs_) readers.emplace_back(run.path);

    auto greater = [this, &readers](std::size_t a, std::size_t b) {
      return less_(readers[b].head, readers[a].head);
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(greater)> heap(greater);
    for (std::size_t i = 0; i < readers.size(); ++i)
      if (readers[i].advance()) heap.push(i);
    while (!heap.empty()) {
      const std::size_t i = heap.top();
      heap.pop();
      sink(readers[i].head);
      if (readers[i].advance()) heap.push(i);
    }
  }

 private:
  struct Run {
    std::filesystem::path path;
  };

  struct RunReader {
    explicit RunReader(const std::filesystem::path& p) : file(std::fopen(p.c_str(), "rb")) {
      if (!file) throw IoError("cannot reopen sort run " + p.string());
    }
    RunReader(RunReader&& o) noexcept : file(o.file), head(o.head) { o.file = nullptr; }
    RunReader(const RunReader&) = delete;
    ~RunReader() {
      if (file) std::fclose(file);
    }
    bool advance() { return std::fread(&head, sizeof(Record), 1, file) == 1; }

    std::FILE* file;
    Record head{};
  };

  void spill() {
    std::sort(buffer_.begin(), buffer_.end(), less_);
    auto path = temp_dir_ / ("sortrun_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
                             std::to_string(runs_.size()) + ".tmp");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot create sort run " + path.string());
    const std::size_t written = std::fwrite(buffer_.data(), sizeof(Record), buffer_.size(), f);
    std::fclose(f);
    if (written != buffer_.size()) throw IoError("short write on sort run " + path.string());
    runs_.push_back({std::move(path)});
    buffer_.clear();
  }

  std::filesystem::path temp_dir_;
  std::size_t run_capacity_;
  Less less_;
  std::vector<Record> buffer_;
  std::vector<Run> runs_;
};

}  // namespace lshx
