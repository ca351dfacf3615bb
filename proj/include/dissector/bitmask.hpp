#pragma once
// Packed binary masks over a fixed grid and the rectangle geometry used by
// the extent-based bounds.
//
// A mask is one flat row-major bit array (cell = row * width + col) stored
// in 64-bit words. Bits past width*height in the last word are always zero,
// so whole-word popcounts and equality need no tail handling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace dissector {

// Inclusive cell rectangle. The default value is the distinguished empty
// rectangle (area 0).
struct Rect {
  int r0 = -1;
  int c0 = -1;
  int r1 = -1;
  int c1 = -1;

  static constexpr Rect empty() { return {}; }

  constexpr bool is_empty() const { return r0 < 0; }

  constexpr std::int64_t area() const {
    if (is_empty()) return 0;
    return static_cast<std::int64_t>(r1 - r0 + 1) * (c1 - c0 + 1);
  }

  constexpr bool contains(int r, int c) const {
    return !is_empty() && r >= r0 && r <= r1 && c >= c0 && c <= c1;
  }

  friend constexpr bool operator==(const Rect&, const Rect&) = default;
  friend constexpr auto operator<=>(const Rect&, const Rect&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Rect& r) {
  if (r.is_empty()) return os << "Rect(empty)";
  return os << "Rect(" << r.r0 << ',' << r.c0 << ',' << r.r1 << ',' << r.c1 << ')';
}

// Area of the coordinate-wise intersection; 0 when disjoint or either is empty.
constexpr std::int64_t rect_overlap_area(const Rect& a, const Rect& b) {
  if (a.is_empty() || b.is_empty()) return 0;
  const int r0 = std::max(a.r0, b.r0);
  const int c0 = std::max(a.c0, b.c0);
  const int r1 = std::min(a.r1, b.r1);
  const int c1 = std::min(a.c1, b.c1);
  if (r0 > r1 || c0 > c1) return 0;
  return static_cast<std::int64_t>(r1 - r0 + 1) * (c1 - c0 + 1);
}

constexpr std::size_t words_for_cells(std::size_t cells) { return (cells + 63) / 64; }

// Mask for the valid bits of the final word of a `cells`-bit array.
constexpr std::uint64_t tail_word_mask(std::size_t cells) {
  const std::size_t rem = cells % 64;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

class BitMask {
 public:
  BitMask() = default;
  BitMask(int height, int width)
      : height_(height), width_(width), words_(words_for_cells(cells_of(height, width)), 0) {}
  BitMask(int height, int width, std::span<const std::uint64_t> words)
      : height_(height), width_(width), words_(words.begin(), words.end()) {
    if (words_.size() != words_for_cells(cells())) {
      throw std::invalid_argument("BitMask: word count does not match grid");
    }
    if (!words_.empty()) words_.back() &= tail_word_mask(cells());
  }

  static BitMask full(int height, int width) {
    BitMask m(height, width);
    std::fill(m.words_.begin(), m.words_.end(), ~std::uint64_t{0});
    if (!m.words_.empty()) m.words_.back() &= tail_word_mask(m.cells());
    return m;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t cells() const { return cells_of(height_, width_); }

  bool test(int r, int c) const { return test(index(r, c)); }
  bool test(std::size_t cell) const { return (words_[cell >> 6] >> (cell & 63)) & 1U; }
  void set(int r, int c, bool value = true) { set(index(r, c), value); }
  void set(std::size_t cell, bool value = true) {
    const std::uint64_t bit = std::uint64_t{1} << (cell & 63);
    if (value) {
      words_[cell >> 6] |= bit;
    } else {
      words_[cell >> 6] &= ~bit;
    }
  }

  std::int64_t popcount() const {
    std::int64_t n = 0;
    for (std::uint64_t w : words_) n += std::popcount(w);
    return n;
  }
  bool none() const {
    return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
  }

  std::span<const std::uint64_t> words() const { return words_; }
  std::span<std::uint64_t> words() { return words_; }

  BitMask& operator&=(const BitMask& o) {
    check_same(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  BitMask& operator|=(const BitMask& o) {
    check_same(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  // Set difference: this AND NOT o (complement over the full grid).
  BitMask& subtract(const BitMask& o) {
    check_same(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
    return *this;
  }

  friend bool operator==(const BitMask&, const BitMask&) = default;

  void check_same(const BitMask& o) const {
    if (height_ != o.height_ || width_ != o.width_) {
      throw std::invalid_argument("BitMask: dimension mismatch");
    }
  }

 private:
  static std::size_t cells_of(int h, int w) {
    if (h < 0 || w < 0) throw std::invalid_argument("BitMask: negative dimension");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint64_t> words_;
};

// Word-span kernels. Both spans must have the same length.
inline std::int64_t popcount_words(std::span<const std::uint64_t> a) {
  std::int64_t n = 0;
  for (std::uint64_t w : a) n += std::popcount(w);
  return n;
}

inline std::int64_t and_popcount(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::popcount(a[i] & b[i]);
  return n;
}

inline std::int64_t or_popcount(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::popcount(a[i] | b[i]);
  return n;
}

inline std::int64_t inter_card(const BitMask& a, const BitMask& b) {
  a.check_same(b);
  return and_popcount(a.words(), b.words());
}

inline std::int64_t union_card(const BitMask& a, const BitMask& b) {
  a.check_same(b);
  return or_popcount(a.words(), b.words());
}

// Cells whose activation lies in [lo, hi], both ends inclusive. `hi` may be
// +infinity and `lo` -infinity.
inline BitMask activation_mask(std::span<const float> grid, int height, int width, double lo, double hi) {
  BitMask m(height, width);
  if (grid.size() != m.cells()) throw std::invalid_argument("activation_mask: grid size mismatch");
  auto words = m.words();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    if (v >= lo && v <= hi) words[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
  return m;
}

// Smallest rectangle containing every set cell.
inline Rect bounding_box(const BitMask& m) {
  Rect box;
  const int h = m.height();
  const int w = m.width();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!m.test(r, c)) continue;
      if (box.is_empty()) {
        box = {r, c, r, c};
      } else {
        box.r0 = std::min(box.r0, r);
        box.c0 = std::min(box.c0, c);
        box.r1 = std::max(box.r1, r);
        box.c1 = std::max(box.c1, c);
      }
    }
  }
  return box;
}

// Maximal-area all-ones axis-aligned rectangle, O(H*W) via per-row column
// histograms. Among equal areas the lexicographically smallest
// (r0, c0, r1, c1) wins.
//
// For each bottom row every bar is extended to its full span of columns with
// height >= its own; every maximum-area rectangle appears as one of these
// candidates (it cannot grow in any direction), so the tie-break is exact.
inline Rect largest_inscribed_rect(const BitMask& m) {
  const int h = m.height();
  const int w = m.width();
  std::vector<int> heights(static_cast<std::size_t>(w), 0);
  std::vector<int> left(static_cast<std::size_t>(w));
  std::vector<int> right(static_cast<std::size_t>(w));
  std::vector<int> stack;
  stack.reserve(static_cast<std::size_t>(w));

  Rect best;
  std::int64_t best_area = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) heights[c] = m.test(r, c) ? heights[c] + 1 : 0;

    // left[c]: first column of the span where all heights >= heights[c].
    stack.clear();
    for (int c = 0; c < w; ++c) {
      while (!stack.empty() && heights[stack.back()] >= heights[c]) stack.pop_back();
      left[c] = stack.empty() ? 0 : stack.back() + 1;
      stack.push_back(c);
    }
    stack.clear();
    for (int c = w - 1; c >= 0; --c) {
      while (!stack.empty() && heights[stack.back()] >= heights[c]) stack.pop_back();
      right[c] = stack.empty() ? w - 1 : stack.back() - 1;
      stack.push_back(c);
    }

    for (int c = 0; c < w; ++c) {
      if (heights[c] == 0) continue;
      const Rect cand{r - heights[c] + 1, left[c], r, right[c]};
      const std::int64_t area = cand.area();
      if (area > best_area || (area == best_area && cand < best)) {
        best = cand;
        best_area = area;
      }
    }
  }
  return best;
}

}  // namespace dissector
