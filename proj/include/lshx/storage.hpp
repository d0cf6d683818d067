#pragma once

// Page-granular files with logical I/O metering.
//
// Every metered read goes through a Cursor. A read is a seek unless it starts
// exactly where the cursor's previous read ended. Metering never consults the
// OS, so counts are reproducible.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cerrno>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lshx/error.hpp"

namespace lshx {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are not supported");

inline constexpr std::uint32_t kDefaultPageSize = 4096;

struct IoStats {
  std::uint64_t seeks = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t reads = 0;

  IoStats& operator+=(const IoStats& o) {
    seeks += o.seeks;
    bytes_read += o.bytes_read;
    reads += o.reads;
    return *this;
  }
  friend IoStats operator+(IoStats a, const IoStats& b) { return a += b; }
  friend bool operator==(const IoStats&, const IoStats&) = default;
};

inline IoStats stats_merge(const IoStats& a, const IoStats& b) { return a + b; }

/// Accumulating wall-clock timer that can be paused and resumed.
class Stopwatch {
 public:
  using Clock = std::chrono::steady_clock;

  void start() {
    if (!running_) {
      began_ = Clock::now();
      running_ = true;
    }
  }
  void stop() {
    if (running_) {
      total_ += Clock::now() - began_;
      running_ = false;
    }
  }
  bool running() const noexcept { return running_; }
  double elapsed_ms() const {
    auto t = total_;
    if (running_) t += Clock::now() - began_;
    return std::chrono::duration<double, std::milli>(t).count();
  }

 private:
  Clock::time_point began_{};
  Clock::duration total_{};
  bool running_ = false;
};

// ---------------------------------------------------------------------------
// little-endian byte codec

class ByteWriter {
 public:
  template <class T>
    requires std::is_trivially_copyable_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::byte> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void pad_to(std::size_t size) {
    if (buf_.size() < size) buf_.resize(size, std::byte{0});
  }
  std::size_t size() const noexcept { return buf_.size(); }
  std::vector<std::byte>& bytes() noexcept { return buf_; }
  std::vector<std::byte> take() { return std::move(buf_); }

 private:
  std::vector<std::byte> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw CorruptionError("unexpected end of encoded data");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void skip(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CorruptionError("unexpected end of encoded data");
    pos_ += n;
  }
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

template <class T>
  requires std::is_trivially_copyable_v<T>
T load_le(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
  requires std::is_trivially_copyable_v<T>
void store_le(std::byte* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

// ---------------------------------------------------------------------------

namespace detail {

class FileDescriptor {
 public:
  FileDescriptor(const std::filesystem::path& path, int flags, mode_t mode = 0644)
      : path_(path.string()), fd_(::open(path.c_str(), flags | O_CLOEXEC, mode)) {
    if (fd_ < 0) throw IoError("cannot open " + path_ + ": " + std::strerror(errno));
  }
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }

  int get() const noexcept { return fd_; }
  const std::string& path() const noexcept { return path_; }

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw IoError("cannot stat " + path_);
    return static_cast<std::uint64_t>(st.st_size);
  }

  void pread_exact(std::uint64_t offset, std::span<std::byte> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t r = ::pread(fd_, out.data() + done, out.size() - done,
                                static_cast<off_t>(offset + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw IoError("read failed on " + path_ + ": " + std::strerror(errno));
      }
      if (r == 0) throw CorruptionError("short read on " + path_);
      done += static_cast<std::size_t>(r);
    }
  }

  void pwrite_all(std::uint64_t offset, std::span<const std::byte> in) const {
    std::size_t done = 0;
    while (done < in.size()) {
      const ssize_t r = ::pwrite(fd_, in.data() + done, in.size() - done,
                                 static_cast<off_t>(offset + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw IoError("write failed on " + path_ + ": " + std::strerror(errno));
      }
      done += static_cast<std::size_t>(r);
    }
  }

 private:
  std::string path_;
  int fd_;
};

}  // namespace detail

class PagedFile;

/// A private read position over a PagedFile. Cheap to create; one per query
/// (or per hash function within a query).
class Cursor {
 public:
  explicit Cursor(const PagedFile& file) : file_(&file) {}

  /// Reads `count` pages starting at `start` into `out` (count * page_size bytes).
  void read_pages(std::uint64_t start, std::uint64_t count, std::span<std::byte> out, IoStats& stats);
  std::vector<std::byte> read_pages(std::uint64_t start, std::uint64_t count, IoStats& stats);

  /// Forgets the previous position so the next read counts as a seek.
  void reset() noexcept { last_end_.reset(); }

  /// Stops `clock` for the duration of every read through this cursor, so
  /// that it measures only the caller's in-memory work.
  void exclude_reads_from(Stopwatch* clock) noexcept { clock_ = clock; }

  const PagedFile& file() const noexcept { return *file_; }

 private:
  const PagedFile* file_;
  std::optional<std::uint64_t> last_end_;
  Stopwatch* clock_ = nullptr;
};

/// Immutable page-granular file: a header region followed by page_count pages.
class PagedFile {
 public:
  PagedFile(const std::filesystem::path& path, std::uint64_t header_length, std::uint32_t page_size)
      : fd_(std::make_shared<detail::FileDescriptor>(path, O_RDONLY)),
        header_length_(header_length),
        page_size_(page_size) {
    if (page_size_ == 0) throw ParameterError("paged file: page size must be > 0");
    const std::uint64_t size = fd_->size();
    if (size < header_length_ || (size - header_length_) % page_size_ != 0)
      throw CorruptionError("paged file " + path.string() + ": length " + std::to_string(size) +
                            " is not header + whole pages");
    page_count_ = (size - header_length_) / page_size_;
  }

  std::uint64_t header_length() const noexcept { return header_length_; }
  std::uint32_t page_size() const noexcept { return page_size_; }
  std::uint64_t page_count() const noexcept { return page_count_; }
  const std::string& path() const noexcept { return fd_->path(); }

  /// Unmetered: header parsing happens once at open time.
  std::vector<std::byte> read_header() const {
    std::vector<std::byte> out(header_length_);
    fd_->pread_exact(0, out);
    return out;
  }

  Cursor cursor() const { return Cursor(*this); }

  /// Unmetered bulk access for index construction.
  void read_pages_unmetered(std::uint64_t start, std::uint64_t count, std::span<std::byte> out) const {
    check_range(start, count, out.size());
    fd_->pread_exact(header_length_ + start * page_size_, out.first(count * page_size_));
  }

  /// Reads a prefix of an arbitrary file without the page-count check.
  static std::vector<std::byte> read_prefix(const std::filesystem::path& path, std::uint64_t length) {
    detail::FileDescriptor fd(path, O_RDONLY);
    if (fd.size() < length) throw CorruptionError(path.string() + ": file shorter than its header");
    std::vector<std::byte> out(length);
    fd.pread_exact(0, out);
    return out;
  }

 private:
  friend class Cursor;

  void check_range(std::uint64_t start, std::uint64_t count, std::size_t out_size) const {
    if (count == 0 || start + count > page_count_ || start + count < start)
      throw IoError("page range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                    ") out of range for " + path() + " with " + std::to_string(page_count_) + " pages");
    if (out_size < count * page_size_) throw ParameterError("read buffer too small");
  }

  std::shared_ptr<detail::FileDescriptor> fd_;
  std::uint64_t header_length_;
  std::uint32_t page_size_;
  std::uint64_t page_count_ = 0;
};

namespace detail {

// Stops a running clock for the lifetime of the guard.
class ClockPause {
 public:
  explicit ClockPause(Stopwatch* clock) : clock_(clock && clock->running() ? clock : nullptr) {
    if (clock_) clock_->stop();
  }
  ~ClockPause() {
    if (clock_) clock_->start();
  }
  ClockPause(const ClockPause&) = delete;
  ClockPause& operator=(const ClockPause&) = delete;

 private:
  Stopwatch* clock_;
};

}  // namespace detail

inline void Cursor::read_pages(std::uint64_t start, std::uint64_t count, std::span<std::byte> out,
                               IoStats& stats) {
  file_->check_range(start, count, out.size());
  {
    detail::ClockPause pause(clock_);
    file_->fd_->pread_exact(file_->header_length_ + start * file_->page_size_,
                            out.first(count * file_->page_size_));
  }
  if (!last_end_ || start != *last_end_) ++stats.seeks;
  ++stats.reads;
  stats.bytes_read += count * file_->page_size_;
  last_end_ = start + count;
}

// Buffer allocation is charged to the read, not to the excluded clock's owner.
inline std::vector<std::byte> Cursor::read_pages(std::uint64_t start, std::uint64_t count,
                                                 IoStats& stats) {
  detail::ClockPause pause(clock_);
  std::vector<std::byte> out(count * file_->page_size_);
  read_pages(start, count, out, stats);
  return out;
}

/// Append-only writer. The header region is reserved up front and filled in
/// by `write_header`, typically after all pages are known.
class PagedFileWriter {
 public:
  PagedFileWriter(const std::filesystem::path& path, std::uint64_t header_length, std::uint32_t page_size)
      : fd_(path, O_WRONLY | O_CREAT | O_TRUNC), header_length_(header_length), page_size_(page_size) {
    if (page_size_ == 0) throw ParameterError("paged file: page size must be > 0");
    std::vector<std::byte> zeros(header_length_);
    if (!zeros.empty()) fd_.pwrite_all(0, zeros);
  }

  /// Appends one page; shorter input is zero-padded.
  std::uint64_t append_page(std::span<const std::byte> page) {
    if (page.size() > page_size_) throw ParameterError("page payload larger than page size");
    const std::uint64_t index = page_count_++;
    const std::uint64_t offset = header_length_ + index * page_size_;
    fd_.pwrite_all(offset, page);
    if (page.size() < page_size_) {
      std::vector<std::byte> pad(page_size_ - page.size());
      fd_.pwrite_all(offset + page.size(), pad);
    }
    return index;
  }

  void write_header(std::span<const std::byte> header) {
    if (header.size() != header_length_)
      throw ParameterError("header is " + std::to_string(header.size()) + " bytes, reserved " +
                           std::to_string(header_length_));
    fd_.pwrite_all(0, header);
  }

  std::uint64_t page_count() const noexcept { return page_count_; }
  std::uint32_t page_size() const noexcept { return page_size_; }

 private:
  detail::FileDescriptor fd_;
  std::uint64_t header_length_;
  std::uint32_t page_size_;
  std::uint64_t page_count_ = 0;
};

inline std::uint64_t round_up(std::uint64_t value, std::uint64_t multiple) {
  return (value + multiple - 1) / multiple * multiple;
}

}  // namespace lshx
