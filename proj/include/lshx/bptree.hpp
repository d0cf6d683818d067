#pragma once

// Read-only B+-tree over (f64 key, u32 id) pairs, bulk loaded bottom-up from
// sorted input into a PagedFileWriter.
//
// Page format (little-endian):
//   u8 kind (0 leaf, 1 internal), u16 count, u32 next_leaf, u8 pad
//   leaf records:     f64 key, u32 id
//   internal records: f64 key, u32 id, u32 child   (key/id = subtree minimum)
//
// Leaves are written first and contiguously, in key order, so the left
// neighbour of leaf p is p - 1 and the right neighbour is next_leaf.

#include <algorithm>
#include <compare>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lshx/error.hpp"
#include "lshx/storage.hpp"

namespace lshx {

struct KeyedId {
  double key;
  std::uint32_t id;

  friend auto operator<=>(const KeyedId&, const KeyedId&) = default;
};

struct TreeInfo {
  std::uint64_t entries = 0;
  std::uint32_t root = 0;
  std::uint32_t height = 0;  ///< levels including the leaf level
  std::uint32_t leaf_first = 0;
  std::uint32_t leaf_count = 0;
  std::uint32_t page_first = 0;
  std::uint32_t page_count = 0;

  static constexpr std::size_t kEncodedBytes = 8 + 6 * 4;

  void encode(ByteWriter& w) const {
    w.put(entries);
    w.put(root);
    w.put(height);
    w.put(leaf_first);
    w.put(leaf_count);
    w.put(page_first);
    w.put(page_count);
  }
  static TreeInfo decode(ByteReader& r) {
    TreeInfo t;
    t.entries = r.get<std::uint64_t>();
    t.root = r.get<std::uint32_t>();
    t.height = r.get<std::uint32_t>();
    t.leaf_first = r.get<std::uint32_t>();
    t.leaf_count = r.get<std::uint32_t>();
    t.page_first = r.get<std::uint32_t>();
    t.page_count = r.get<std::uint32_t>();
    return t;
  }
  friend bool operator==(const TreeInfo&, const TreeInfo&) = default;
};

namespace bptree {

inline constexpr std::size_t kNodeHeader = 8;
inline constexpr std::size_t kLeafRecord = 12;
inline constexpr std::size_t kInternalRecord = 16;
inline constexpr std::uint32_t kNoLeaf = 0xFFFFFFFFu;
inline constexpr std::uint8_t kLeaf = 0;
inline constexpr std::uint8_t kInternal = 1;

inline std::size_t leaf_capacity(std::uint32_t page_size) { return (page_size - kNodeHeader) / kLeafRecord; }
inline std::size_t internal_capacity(std::uint32_t page_size) { return (page_size - kNodeHeader) / kInternalRecord; }

inline std::size_t filled(std::size_t capacity, double fill_factor, std::size_t minimum) {
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(static_cast<double>(capacity) * fill_factor)),
                                 minimum, capacity);
}

/// Pages needed for `n` entries, used to size header tables before building.
inline std::uint32_t page_budget(std::uint64_t n, std::uint32_t page_size, double fill_factor) {
  const std::size_t leaf_fill = filled(leaf_capacity(page_size), fill_factor, 1);
  const std::size_t node_fill = filled(internal_capacity(page_size), fill_factor, 2);
  std::uint64_t level = (n + leaf_fill - 1) / leaf_fill;
  std::uint64_t total = level;
  while (level > 1) {
    level = (level + node_fill - 1) / node_fill;
    total += level;
  }
  return static_cast<std::uint32_t>(total);
}

/// Decoded view of one page.
class NodeView {
 public:
  explicit NodeView(std::span<const std::byte> page) : page_(page) {
    if (kind() != kLeaf && kind() != kInternal) throw CorruptionError("b+tree: bad node kind");
    const std::size_t rec = kind() == kLeaf ? kLeafRecord : kInternalRecord;
    if (kNodeHeader + count() * rec > page_.size()) throw CorruptionError("b+tree: node count overflows page");
  }

  std::uint8_t kind() const { return static_cast<std::uint8_t>(page_[0]); }
  bool leaf() const { return kind() == kLeaf; }
  std::uint16_t count() const { return load_le<std::uint16_t>(page_.data() + 1); }
  std::uint32_t next_leaf() const { return load_le<std::uint32_t>(page_.data() + 3); }

  KeyedId entry(std::size_t i) const {
    const std::byte* p = page_.data() + kNodeHeader + i * (leaf() ? kLeafRecord : kInternalRecord);
    return {load_le<double>(p), load_le<std::uint32_t>(p + 8)};
  }
  double key(std::size_t i) const { return load_le<double>(page_.data() + kNodeHeader + i * kLeafRecord); }
  std::uint32_t child(std::size_t i) const {
    return load_le<std::uint32_t>(page_.data() + kNodeHeader + i * kInternalRecord + 12);
  }

 private:
  std::span<const std::byte> page_;
};

}  // namespace bptree

/// Streams sorted entries into leaves, then stacks internal levels on top.
class BPlusTreeBuilder {
 public:
  BPlusTreeBuilder(PagedFileWriter& writer, double fill_factor)
      : writer_(writer),
        leaf_fill_(bptree::filled(bptree::leaf_capacity(writer.page_size()), fill_factor, 1)),
        node_fill_(bptree::filled(bptree::internal_capacity(writer.page_size()), fill_factor, 2)),
        page_(writer.page_size()) {
    if (bptree::leaf_capacity(writer.page_size()) > 0xFFFF || bptree::internal_capacity(writer.page_size()) < 2)
      throw ParameterError("b+tree: page size out of supported range");
    info_.page_first = static_cast<std::uint32_t>(writer_.page_count());
    info_.leaf_first = info_.page_first;
  }

  void add(const KeyedId& e) {
    if (info_.entries > 0 && e < last_) throw ParameterError("b+tree bulk load input is not sorted");
    if (slot_ == leaf_fill_) flush_leaf(false);
    if (slot_ == 0) level_.push_back({e, 0});
    std::byte* p = page_.data() + bptree::kNodeHeader + slot_ * bptree::kLeafRecord;
    store_le(p, e.key);
    store_le(p + 8, e.id);
    ++slot_;
    ++info_.entries;
    last_ = e;
  }

  TreeInfo finish() {
    if (info_.entries == 0) throw ParameterError("b+tree: cannot bulk load an empty input");
    flush_leaf(true);
    info_.leaf_count = static_cast<std::uint32_t>(level_.size());
    info_.height = 1;
    while (level_.size() > 1) {
      std::vector<Separator> upper;
      for (std::size_t first = 0; first < level_.size(); first += node_fill_) {
        const std::size_t last = std::min(level_.size(), first + node_fill_);
        std::ranges::fill(page_, std::byte{0});
        page_[0] = std::byte{bptree::kInternal};
        store_le<std::uint16_t>(page_.data() + 1, static_cast<std::uint16_t>(last - first));
        store_le<std::uint32_t>(page_.data() + 3, bptree::kNoLeaf);
        for (std::size_t i = first; i < last; ++i) {
          std::byte* p = page_.data() + bptree::kNodeHeader + (i - first) * bptree::kInternalRecord;
          store_le(p, level_[i].min.key);
          store_le(p + 8, level_[i].min.id);
          store_le(p + 12, level_[i].page);
        }
        upper.push_back({level_[first].min, static_cast<std::uint32_t>(writer_.append_page(page_))});
      }
      level_ = std::move(upper);
      ++info_.height;
    }
    info_.root = level_.front().page;
    info_.page_count = static_cast<std::uint32_t>(writer_.page_count()) - info_.page_first;
    return info_;
  }

 private:
  struct Separator {
    KeyedId min;
    std::uint32_t page;
  };

  void flush_leaf(bool last) {
    if (slot_ == 0) return;
    const auto index = static_cast<std::uint32_t>(writer_.page_count());
    page_[0] = std::byte{bptree::kLeaf};
    store_le<std::uint16_t>(page_.data() + 1, static_cast<std::uint16_t>(slot_));
    store_le<std::uint32_t>(page_.data() + 3, last ? bptree::kNoLeaf : index + 1);
    writer_.append_page(page_);
    level_.back().page = index;
    std::ranges::fill(page_, std::byte{0});
    slot_ = 0;
  }

  PagedFileWriter& writer_;
  std::size_t leaf_fill_;
  std::size_t node_fill_;
  std::vector<std::byte> page_;
  std::size_t slot_ = 0;
  KeyedId last_{};
  TreeInfo info_;
  std::vector<Separator> level_;
};

/// One leaf page held in memory.
struct LeafBuffer {
  std::uint32_t page = 0;
  std::vector<std::byte> bytes;

  bptree::NodeView view() const { return bptree::NodeView(bytes); }
};

class BPlusTree {
 public:
  BPlusTree(const PagedFile& file, TreeInfo info) : file_(file), info_(info) {
    if (info_.page_first + std::uint64_t{info_.page_count} > file.page_count())
      throw CorruptionError("b+tree pages outside file");
  }

  const TreeInfo& info() const noexcept { return info_; }

  LeafBuffer read_leaf(std::uint32_t page, Cursor& cursor, IoStats& stats) const {
    if (page < info_.leaf_first || page >= info_.leaf_first + info_.leaf_count)
      throw CorruptionError("b+tree: leaf pointer out of range");
    LeafBuffer leaf{page, cursor.read_pages(page, 1, stats)};
    if (!leaf.view().leaf()) throw CorruptionError("b+tree: expected a leaf page");
    return leaf;
  }

  /// Descends to the leaf holding the first entry with key >= `key`.
  /// Returns the leaf and the slot (which may equal the leaf's count).
  std::pair<LeafBuffer, std::size_t> lower_bound(double key, Cursor& cursor, IoStats& stats) const {
    std::uint32_t page = info_.root;
    for (std::uint32_t level = 1; level < info_.height; ++level) {
      const auto bytes = cursor.read_pages(page, 1, stats);
      const bptree::NodeView node(bytes);
      if (node.leaf() || node.count() == 0) throw CorruptionError("b+tree: malformed internal node");
      std::size_t lo = 0, hi = node.count();  // last child whose min key < key
      while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (node.entry(mid).key < key) lo = mid;
        else hi = mid;
      }
      page = node.child(lo);
    }
    LeafBuffer leaf = read_leaf(page, cursor, stats);
    const auto view = leaf.view();
    std::size_t lo = 0, hi = view.count();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (view.key(mid) < key) lo = mid + 1;
      else hi = mid;
    }
    return {std::move(leaf), lo};
  }

  /// All entries with lo <= key <= hi, in key order.
  std::vector<KeyedId> range(double lo, double hi, Cursor& cursor, IoStats& stats) const {
    std::vector<KeyedId> out;
    if (hi < lo) return out;
    auto [leaf, slot] = lower_bound(lo, cursor, stats);
    for (;;) {
      const auto view = leaf.view();
      for (; slot < view.count(); ++slot) {
        const KeyedId e = view.entry(slot);
        if (e.key > hi) return out;
        out.push_back(e);
      }
      if (view.next_leaf() == bptree::kNoLeaf) return out;
      leaf = read_leaf(view.next_leaf(), cursor, stats);
      slot = 0;
    }
  }

  /// Unmetered left-to-right leaf scan.
  std::vector<KeyedId> scan() const {
    std::vector<KeyedId> out;
    std::vector<std::byte> buf(file_.page_size());
    for (std::uint32_t p = info_.leaf_first; p != bptree::kNoLeaf;) {
      file_.read_pages_unmetered(p, 1, buf);
      const bptree::NodeView view(buf);
      if (!view.leaf()) throw CorruptionError("b+tree: leaf chain reaches a non-leaf page");
      for (std::size_t i = 0; i < view.count(); ++i) out.push_back(view.entry(i));
      p = view.next_leaf();
    }
    return out;
  }

  /// Full structural check: equal leaf depth, separator/subtree agreement,
  /// sorted keys, leaf chain covering exactly the leaf region. Throws
  /// CorruptionError on the first violation.
  void validate() const {
    std::vector<std::uint32_t> leaves_seen;
    std::uint64_t entries = 0;
    walk(info_.root, 1, nullptr, nullptr, leaves_seen, entries);
    if (entries != info_.entries) throw CorruptionError("b+tree: entry count mismatch");
    if (leaves_seen.size() != info_.leaf_count) throw CorruptionError("b+tree: leaf count mismatch");
    for (std::size_t i = 0; i < leaves_seen.size(); ++i)
      if (leaves_seen[i] != info_.leaf_first + i) throw CorruptionError("b+tree: leaves are not contiguous in order");
    const auto all = scan();
    if (all.size() != info_.entries) throw CorruptionError("b+tree: leaf chain length mismatch");
    if (!std::ranges::is_sorted(all)) throw CorruptionError("b+tree: leaf chain not sorted");
  }

 private:
  // Returns the subtree minimum.
  KeyedId walk(std::uint32_t page, std::uint32_t depth, const KeyedId* lower, const KeyedId* upper,
               std::vector<std::uint32_t>& leaves, std::uint64_t& entries) const {
    std::vector<std::byte> buf(file_.page_size());
    file_.read_pages_unmetered(page, 1, buf);
    const bptree::NodeView node(buf);
    if (node.count() == 0) throw CorruptionError("b+tree: empty node");
    auto check_bounds = [&](const KeyedId& e) {
      if ((lower && e < *lower) || (upper && !(e < *upper))) throw CorruptionError("b+tree: key outside separator range");
    };
    if (node.leaf()) {
      if (depth != info_.height) throw CorruptionError("b+tree: leaves at unequal depth");
      for (std::size_t i = 0; i < node.count(); ++i) {
        check_bounds(node.entry(i));
        if (i > 0 && node.entry(i) < node.entry(i - 1)) throw CorruptionError("b+tree: leaf not sorted");
      }
      leaves.push_back(page);
      entries += node.count();
      return node.entry(0);
    }
    if (depth >= info_.height) throw CorruptionError("b+tree: internal node below leaf level");
    for (std::size_t i = 0; i < node.count(); ++i) {
      const KeyedId sep = node.entry(i);
      check_bounds(sep);
      KeyedId next_sep{};
      const KeyedId* child_upper = upper;
      if (i + 1 < node.count()) {
        next_sep = node.entry(i + 1);
        if (!(sep < next_sep)) throw CorruptionError("b+tree: separators not increasing");
        child_upper = &next_sep;
      }
      const KeyedId child_min = walk(node.child(i), depth + 1, &sep, child_upper, leaves, entries);
      if (!(child_min == sep)) throw CorruptionError("b+tree: separator differs from subtree minimum");
    }
    return node.entry(0);
  }

  PagedFile file_;
  TreeInfo info_;
};

}  // namespace lshx
