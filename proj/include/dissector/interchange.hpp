#pragma once
// Concept datasets and activation dumps: in-memory stores and the on-disk
// bundle format shared with the exporter.
//
// A bundle is a directory holding three files:
//
//   catalog.tsv  one line per concept: "<id>\t<name>\t<category>\n", ids 1..n
//   masks.bin    "NDXMASK1", u32 n_samples, n_concepts, grid_h, grid_w, 0,
//                then for every sample (outer) and concept (inner, by id):
//                  u32 n_runs, u32 runs[n_runs]      alternating zero/one run
//                                                    lengths, row-major, first
//                                                    run is zeros (may be 0)
//                  u32 card
//                  i32 min_ext[4], i32 max_ext[4]    r0 c0 r1 c1, empty = -1 x4
//   acts.bin     "NDXACTS1", u32 n_samples, n_neurons, grid_h, grid_w,
//                layer_kind (0 relu, 1 signed), then f32 values ordered
//                [neuron][sample][row][col]
//
// All integers and floats are little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dissector/bitmask.hpp"

namespace dissector {

using ConceptId = std::uint32_t;

class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// Bad magic, version, header or text syntax.
class FormatError : public BundleError {
 public:
  using BundleError::BundleError;
};
// Stores disagree with each other (sample counts, grids, concept counts).
class ConsistencyError : public BundleError {
 public:
  using BundleError::BundleError;
};
// Payload does not decode to what its own header and metadata promise.
class CorruptionError : public BundleError {
 public:
  using BundleError::BundleError;
};
class IoError : public BundleError {
 public:
  using BundleError::BundleError;
};

enum class Category { color, object, part, scene, material, texture, other };

inline constexpr std::array<std::string_view, 7> kCategoryNames = {
    "color", "object", "part", "scene", "material", "texture", "other"};

inline std::string_view to_string(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

inline std::optional<Category> parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == s) return static_cast<Category>(i);
  }
  return std::nullopt;
}

struct Concept {
  ConceptId id = 0;
  std::string name;
  Category category = Category::other;

  friend bool operator==(const Concept&, const Concept&) = default;
};

class ConceptCatalog {
 public:
  ConceptId add(std::string name, Category category) {
    if (name.empty() || name.find_first_of("\t\n\r") != std::string::npos) {
      throw std::invalid_argument("concept name must be non-empty without tabs or newlines");
    }
    if (by_name_.contains(name)) throw std::invalid_argument("duplicate concept name: " + name);
    const auto id = static_cast<ConceptId>(entries_.size() + 1);
    by_name_.emplace(name, id);
    entries_.push_back({id, std::move(name), category});
    return id;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(ConceptId id) const { return id >= 1 && id <= entries_.size(); }

  const Concept& at(ConceptId id) const {
    if (!contains(id)) throw std::out_of_range("unknown concept id " + std::to_string(id));
    return entries_[id - 1];
  }

  std::optional<ConceptId> find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<Concept>& entries() const { return entries_; }

  friend bool operator==(const ConceptCatalog& a, const ConceptCatalog& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Concept> entries_;
  std::unordered_map<std::string, ConceptId> by_name_;
};

// Cardinality and extents of one (sample, concept) mask.
struct MaskMeta {
  std::uint32_t card = 0;
  Rect min_ext;  // largest inscribed all-ones rectangle
  Rect max_ext;  // bounding box

  friend bool operator==(const MaskMeta&, const MaskMeta&) = default;
};

inline MaskMeta compute_meta(const BitMask& m) {
  return {static_cast<std::uint32_t>(m.popcount()), largest_inscribed_rect(m), bounding_box(m)};
}

// Per (sample, concept) segmentation masks. Absent (all-zero) masks take no
// storage; present ones live in a shared word pool.
class SampleMaskStore {
 public:
  SampleMaskStore() = default;
  SampleMaskStore(int grid_height, int grid_width, std::size_t n_samples, std::size_t n_concepts)
      : height_(grid_height),
        width_(grid_width),
        n_samples_(n_samples),
        n_concepts_(n_concepts),
        wpm_(words_for_cells(static_cast<std::size_t>(grid_height) * static_cast<std::size_t>(grid_width))),
        offset_(n_samples * n_concepts, kAbsent),
        meta_(n_samples * n_concepts),
        present_(n_concepts) {
    if (grid_height <= 0 || grid_width <= 0) throw std::invalid_argument("grid dimensions must be positive");
  }

  int grid_height() const { return height_; }
  int grid_width() const { return width_; }
  // Maximum segmentation size n_s.
  std::int64_t cells() const { return static_cast<std::int64_t>(height_) * width_; }
  std::size_t words_per_mask() const { return wpm_; }
  std::size_t n_samples() const { return n_samples_; }
  std::size_t n_concepts() const { return n_concepts_; }

  void set_mask(std::size_t sample, ConceptId c, const BitMask& m) { set_mask(sample, c, m, compute_meta(m)); }

  // Stores `m` with caller-supplied metadata (used by the loader, which
  // trusts cached extents unless verification is requested).
  void set_mask(std::size_t sample, ConceptId c, const BitMask& m, const MaskMeta& meta) {
    const std::size_t slot = slot_of(sample, c);
    if (m.height() != height_ || m.width() != width_) throw std::invalid_argument("mask grid mismatch");
    auto& samples = present_[c - 1];
    auto pos = std::lower_bound(samples.begin(), samples.end(), static_cast<std::uint32_t>(sample));
    const bool was_present = offset_[slot] != kAbsent;
    if (m.none()) {
      offset_[slot] = kAbsent;
      meta_[slot] = MaskMeta{};
      if (was_present) samples.erase(pos);
      return;
    }
    if (!was_present) {
      offset_[slot] = pool_.size();
      pool_.insert(pool_.end(), m.words().begin(), m.words().end());
      samples.insert(pos, static_cast<std::uint32_t>(sample));
    } else {
      std::copy(m.words().begin(), m.words().end(), pool_.begin() + static_cast<std::ptrdiff_t>(offset_[slot]));
    }
    meta_[slot] = meta;
  }

  bool present(std::size_t sample, ConceptId c) const { return offset_[slot_of(sample, c)] != kAbsent; }

  // Packed words of the mask; empty span when the concept is absent.
  std::span<const std::uint64_t> words(std::size_t sample, ConceptId c) const {
    const std::size_t off = offset_[slot_of(sample, c)];
    if (off == kAbsent) return {};
    return {pool_.data() + off, wpm_};
  }

  BitMask mask(std::size_t sample, ConceptId c) const {
    auto w = words(sample, c);
    if (w.empty()) return BitMask(height_, width_);
    return BitMask(height_, width_, w);
  }

  const MaskMeta& meta(std::size_t sample, ConceptId c) const { return meta_[slot_of(sample, c)]; }

  // Sorted sample indices where concept c has a non-empty mask.
  const std::vector<std::uint32_t>& samples_with(ConceptId c) const {
    check_concept(c);
    return present_[c - 1];
  }

  std::int64_t total_card(ConceptId c) const {
    std::int64_t n = 0;
    for (std::uint32_t x : samples_with(c)) n += meta(x, c).card;
    return n;
  }

  friend bool operator==(const SampleMaskStore& a, const SampleMaskStore& b) {
    if (a.height_ != b.height_ || a.width_ != b.width_ || a.n_samples_ != b.n_samples_ ||
        a.n_concepts_ != b.n_concepts_ || a.meta_ != b.meta_ || a.present_ != b.present_) {
      return false;
    }
    for (std::size_t x = 0; x < a.n_samples_; ++x) {
      for (ConceptId c = 1; c <= a.n_concepts_; ++c) {
        auto wa = a.words(x, c);
        auto wb = b.words(x, c);
        if (!std::equal(wa.begin(), wa.end(), wb.begin(), wb.end())) return false;
      }
    }
    return true;
  }

 private:
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  void check_concept(ConceptId c) const {
    if (c < 1 || c > n_concepts_) throw std::out_of_range("unknown concept id " + std::to_string(c));
  }
  std::size_t slot_of(std::size_t sample, ConceptId c) const {
    check_concept(c);
    if (sample >= n_samples_) throw std::out_of_range("sample index out of range");
    return sample * n_concepts_ + (c - 1);
  }

  int height_ = 0;
  int width_ = 0;
  std::size_t n_samples_ = 0;
  std::size_t n_concepts_ = 0;
  std::size_t wpm_ = 0;
  std::vector<std::size_t> offset_;
  std::vector<MaskMeta> meta_;
  std::vector<std::vector<std::uint32_t>> present_;
  std::vector<std::uint64_t> pool_;
};

enum class LayerKind : std::uint32_t { relu = 0, signed_values = 1 };

// Dense activations, neuron-major: values[neuron][sample][cell].
class ActivationStore {
 public:
  ActivationStore() = default;
  ActivationStore(std::size_t n_neurons, std::size_t n_samples, int grid_height, int grid_width, LayerKind kind)
      : n_neurons_(n_neurons),
        n_samples_(n_samples),
        height_(grid_height),
        width_(grid_width),
        kind_(kind),
        values_(n_neurons * n_samples * static_cast<std::size_t>(grid_height) * static_cast<std::size_t>(grid_width),
                0.0F) {
    if (grid_height <= 0 || grid_width <= 0) throw std::invalid_argument("grid dimensions must be positive");
  }

  std::size_t n_neurons() const { return n_neurons_; }
  std::size_t n_samples() const { return n_samples_; }
  int grid_height() const { return height_; }
  int grid_width() const { return width_; }
  std::size_t cells() const { return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_); }
  LayerKind layer_kind() const { return kind_; }

  std::span<const float> grid(std::size_t neuron, std::size_t sample) const {
    return {values_.data() + offset(neuron, sample), cells()};
  }
  std::span<float> grid(std::size_t neuron, std::size_t sample) {
    return {values_.data() + offset(neuron, sample), cells()};
  }
  // Every activation of one neuron over the whole dataset.
  std::span<const float> neuron_values(std::size_t neuron) const {
    if (neuron >= n_neurons_) throw std::out_of_range("activation index out of range");
    return {values_.data() + neuron * n_samples_ * cells(), n_samples_ * cells()};
  }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  friend bool operator==(const ActivationStore& a, const ActivationStore& b) {
    return a.n_neurons_ == b.n_neurons_ && a.n_samples_ == b.n_samples_ && a.height_ == b.height_ &&
           a.width_ == b.width_ && a.kind_ == b.kind_ && a.values_.size() == b.values_.size() &&
           (a.values_.empty() ||
            std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0);
  }

 private:
  std::size_t offset(std::size_t neuron, std::size_t sample) const {
    if (neuron >= n_neurons_ || sample >= n_samples_) throw std::out_of_range("activation index out of range");
    return (neuron * n_samples_ + sample) * cells();
  }

  std::size_t n_neurons_ = 0;
  std::size_t n_samples_ = 0;
  int height_ = 0;
  int width_ = 0;
  LayerKind kind_ = LayerKind::relu;
  std::vector<float> values_;
};

struct Bundle {
  ConceptCatalog catalog;
  SampleMaskStore masks;
  ActivationStore acts;

  friend bool operator==(const Bundle&, const Bundle&) = default;
};

// ---------------------------------------------------------------------------
// Run-length coding

// Alternating zero/one run lengths over the row-major cells, starting with a
// zero run. Only the first run may be 0.
inline std::vector<std::uint32_t> rle_encode(std::span<const std::uint64_t> words, std::size_t cells) {
  std::vector<std::uint32_t> runs;
  bool current = false;
  std::uint32_t len = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    const bool bit = (words[i >> 6] >> (i & 63)) & 1U;
    if (bit != current) {
      runs.push_back(len);
      current = bit;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

inline BitMask rle_decode(std::span<const std::uint32_t> runs, int height, int width) {
  BitMask m(height, width);
  const std::size_t cells = m.cells();
  if (runs.empty()) throw CorruptionError("mask record has no runs");
  std::size_t pos = 0;
  bool ones = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i] == 0) throw CorruptionError("zero-length run after the first");
    if (runs[i] > cells - pos) throw CorruptionError("run-length overrun");
    if (ones) {
      for (std::size_t k = pos; k < pos + runs[i]; ++k) m.set(k);
    }
    pos += runs[i];
    ones = !ones;
  }
  if (pos != cells) throw CorruptionError("run lengths do not cover the grid");
  return m;
}

namespace detail {

inline constexpr std::string_view kMaskMagic = "NDXMASK1";
inline constexpr std::string_view kActsMagic = "NDXACTS1";

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CorruptionError(what_ + ": unexpected end of file");
  }

  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + p.string());
  return ss.str();
}

// Writes via a sibling temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& p, std::string_view data) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("rename failed: " + p.string() + ": " + ec.message());
}

inline void write_rect(ByteWriter& w, const Rect& r) {
  w.i32(r.r0);
  w.i32(r.c0);
  w.i32(r.r1);
  w.i32(r.c1);
}

inline Rect read_rect(ByteReader& in, int height, int width) {
  Rect r{in.i32(), in.i32(), in.i32(), in.i32()};
  if (r.r0 == -1 && r.c0 == -1 && r.r1 == -1 && r.c1 == -1) return Rect::empty();
  if (r.r0 < 0 || r.c0 < 0 || r.r0 > r.r1 || r.c0 > r.c1 || r.r1 >= height || r.c1 >= width) {
    throw CorruptionError("rectangle out of grid bounds");
  }
  return r;
}

// Cheap structural checks that do not need the inscribed-rectangle search.
inline void check_meta_against_mask(const MaskMeta& meta, const BitMask& m) {
  if (static_cast<std::int64_t>(meta.card) != m.popcount()) throw CorruptionError("mask card does not match payload");
  if (meta.card == 0) {
    if (!meta.min_ext.is_empty() || !meta.max_ext.is_empty()) throw CorruptionError("extents on empty mask");
    return;
  }
  if (meta.min_ext.is_empty() || meta.max_ext.is_empty()) throw CorruptionError("missing extents on non-empty mask");
  if (meta.min_ext.area() > meta.card || meta.card > meta.max_ext.area()) {
    throw CorruptionError("extent areas inconsistent with card");
  }
  for (int r = meta.min_ext.r0; r <= meta.min_ext.r1; ++r) {
    for (int c = meta.min_ext.c0; c <= meta.min_ext.c1; ++c) {
      if (!m.test(r, c)) throw CorruptionError("min_ext not inside mask");
    }
  }
  const Rect box = bounding_box(m);
  if (box.r0 < meta.max_ext.r0 || box.c0 < meta.max_ext.c0 || box.r1 > meta.max_ext.r1 || box.c1 > meta.max_ext.c1) {
    throw CorruptionError("max_ext does not cover the mask");
  }
}

inline std::string encode_catalog(const ConceptCatalog& catalog) {
  std::string out;
  for (const auto& c : catalog.entries()) {
    out += std::to_string(c.id);
    out += '\t';
    out += c.name;
    out += '\t';
    out += to_string(c.category);
    out += '\n';
  }
  return out;
}

inline ConceptCatalog decode_catalog(const std::string& text) {
  ConceptCatalog catalog;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError("catalog.tsv line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    const std::string id_text = line.substr(0, t1);
    char* end = nullptr;
    const unsigned long id = std::strtoul(id_text.c_str(), &end, 10);
    if (id_text.empty() || *end != '\0') throw FormatError("catalog.tsv line " + std::to_string(line_no) + ": bad id");
    if (id != catalog.size() + 1) {
      throw FormatError("catalog.tsv: ids must be contiguous from 1 (line " + std::to_string(line_no) + ")");
    }
    auto category = parse_category(line.substr(t2 + 1));
    if (!category) throw FormatError("catalog.tsv line " + std::to_string(line_no) + ": unknown category");
    try {
      catalog.add(line.substr(t1 + 1, t2 - t1 - 1), *category);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("catalog.tsv: ") + e.what());
    }
  }
  return catalog;
}

inline std::string encode_masks(const SampleMaskStore& masks) {
  ByteWriter w;
  w.bytes(kMaskMagic);
  w.u32(static_cast<std::uint32_t>(masks.n_samples()));
  w.u32(static_cast<std::uint32_t>(masks.n_concepts()));
  w.u32(static_cast<std::uint32_t>(masks.grid_height()));
  w.u32(static_cast<std::uint32_t>(masks.grid_width()));
  w.u32(0);
  const auto cells = static_cast<std::size_t>(masks.cells());
  const std::vector<std::uint64_t> zeros(masks.words_per_mask(), 0);
  for (std::size_t x = 0; x < masks.n_samples(); ++x) {
    for (ConceptId c = 1; c <= masks.n_concepts(); ++c) {
      auto words = masks.words(x, c);
      const auto runs = rle_encode(words.empty() ? std::span<const std::uint64_t>(zeros) : words, cells);
      w.u32(static_cast<std::uint32_t>(runs.size()));
      for (std::uint32_t r : runs) w.u32(r);
      const MaskMeta& meta = masks.meta(x, c);
      w.u32(meta.card);
      write_rect(w, meta.min_ext);
      write_rect(w, meta.max_ext);
    }
  }
  return w.str();
}

inline SampleMaskStore decode_masks(std::string data, bool verify) {
  ByteReader in(std::move(data), "masks.bin");
  if (in.remaining() < 8 || in.bytes(8) != kMaskMagic) throw FormatError("masks.bin: bad magic");
  const std::uint32_t n_samples = in.u32();
  const std::uint32_t n_concepts = in.u32();
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  const std::uint32_t flags = in.u32();
  if (flags != 0) throw FormatError("masks.bin: unsupported flags");
  if (h == 0 || w == 0 || h > 65536 || w > 65536) throw FormatError("masks.bin: bad grid dimensions");
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  // Every record is at least 40 bytes; reject headers that promise more than the file holds.
  if (static_cast<std::uint64_t>(n_samples) * n_concepts * 40 > in.remaining()) {
    throw CorruptionError("masks.bin: header counts exceed payload size");
  }
  SampleMaskStore store(static_cast<int>(h), static_cast<int>(w), n_samples, n_concepts);
  std::vector<std::uint32_t> runs;
  for (std::size_t x = 0; x < n_samples; ++x) {
    for (ConceptId c = 1; c <= n_concepts; ++c) {
      const std::uint32_t n_runs = in.u32();
      if (n_runs == 0 || n_runs > cells + 1) throw CorruptionError("masks.bin: bad run count");
      runs.resize(n_runs);
      for (auto& r : runs) r = in.u32();
      BitMask m = rle_decode(runs, static_cast<int>(h), static_cast<int>(w));
      MaskMeta meta;
      meta.card = in.u32();
      meta.min_ext = read_rect(in, static_cast<int>(h), static_cast<int>(w));
      meta.max_ext = read_rect(in, static_cast<int>(h), static_cast<int>(w));
      check_meta_against_mask(meta, m);
      if (verify && !(compute_meta(m) == meta)) {
        throw CorruptionError("masks.bin: cached extents differ from recomputation (sample " + std::to_string(x) +
                              ", concept " + std::to_string(c) + ")");
      }
      store.set_mask(x, c, m, meta);
    }
  }
  if (in.remaining() != 0) throw CorruptionError("masks.bin: trailing bytes");
  return store;
}

inline std::string encode_acts(const ActivationStore& acts) {
  ByteWriter w;
  w.bytes(kActsMagic);
  w.u32(static_cast<std::uint32_t>(acts.n_samples()));
  w.u32(static_cast<std::uint32_t>(acts.n_neurons()));
  w.u32(static_cast<std::uint32_t>(acts.grid_height()));
  w.u32(static_cast<std::uint32_t>(acts.grid_width()));
  w.u32(static_cast<std::uint32_t>(acts.layer_kind()));
  for (float v : acts.values()) w.f32(v);
  return w.str();
}

inline ActivationStore decode_acts(std::string data) {
  ByteReader in(std::move(data), "acts.bin");
  if (in.remaining() < 8 || in.bytes(8) != kActsMagic) throw FormatError("acts.bin: bad magic");
  const std::uint32_t n_samples = in.u32();
  const std::uint32_t n_neurons = in.u32();
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  const std::uint32_t kind = in.u32();
  if (kind > 1) throw FormatError("acts.bin: unknown layer kind");
  if (h == 0 || w == 0 || h > 65536 || w > 65536) throw FormatError("acts.bin: bad grid dimensions");
  const std::uint64_t count = static_cast<std::uint64_t>(n_samples) * n_neurons * h * w;
  if (count * 4 != in.remaining()) throw CorruptionError("acts.bin: payload size does not match header");
  ActivationStore acts(n_neurons, n_samples, static_cast<int>(h), static_cast<int>(w), static_cast<LayerKind>(kind));
  for (float& v : acts.values()) {
    v = in.f32();
    if (!std::isfinite(v)) throw CorruptionError("acts.bin: non-finite activation");
    if (acts.layer_kind() == LayerKind::relu && v < 0.0F) throw CorruptionError("acts.bin: negative value in relu layer");
  }
  return acts;
}

inline bool env_verify_requested() {
  const char* v = std::getenv("DISSECTOR_VERIFY_META");
  return v != nullptr && std::string_view(v) == "1";
}

}  // namespace detail

inline void check_consistency(const Bundle& b) {
  if (b.masks.n_concepts() != b.catalog.size()) {
    throw ConsistencyError("masks.bin has " + std::to_string(b.masks.n_concepts()) + " concepts, catalog has " +
                           std::to_string(b.catalog.size()));
  }
  if (b.masks.n_samples() != b.acts.n_samples()) {
    throw ConsistencyError("sample count differs between masks and activations");
  }
  if (b.masks.grid_height() != b.acts.grid_height() || b.masks.grid_width() != b.acts.grid_width()) {
    throw ConsistencyError("activation grid " + std::to_string(b.acts.grid_height()) + "x" +
                           std::to_string(b.acts.grid_width()) + " does not match mask grid " +
                           std::to_string(b.masks.grid_height()) + "x" + std::to_string(b.masks.grid_width()));
  }
}

struct LoadOptions {
  // Recompute every (sample, concept) extent and compare with the cached one.
  bool verify_meta = false;
};

inline Bundle load_bundle(const std::filesystem::path& dir, LoadOptions opts = {}) {
  const bool verify = opts.verify_meta || detail::env_verify_requested();
  Bundle b;
  b.catalog = detail::decode_catalog(detail::read_file(dir / "catalog.tsv"));
  b.masks = detail::decode_masks(detail::read_file(dir / "masks.bin"), verify);
  b.acts = detail::decode_acts(detail::read_file(dir / "acts.bin"));
  check_consistency(b);
  return b;
}

// Standalone activation file (masked-input dumps share the format).
inline ActivationStore load_activations(const std::filesystem::path& file) {
  return detail::decode_acts(detail::read_file(file));
}

inline void write_activations(const ActivationStore& acts, const std::filesystem::path& file) {
  detail::write_file_atomic(file, detail::encode_acts(acts));
}

inline void write_bundle(const Bundle& b, const std::filesystem::path& dir) {
  check_consistency(b);
  for (std::size_t x = 0; x < b.masks.n_samples(); ++x) {
    for (ConceptId c = 1; c <= b.masks.n_concepts(); ++c) {
      try {
        detail::check_meta_against_mask(b.masks.meta(x, c), b.masks.mask(x, c));
      } catch (const CorruptionError& e) {
        throw std::invalid_argument(std::string("mask store invariant violated: ") + e.what());
      }
    }
  }
  for (float v : b.acts.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("activation store holds non-finite values");
    if (b.acts.layer_kind() == LayerKind::relu && v < 0.0F) {
      throw std::invalid_argument("relu activation store holds negative values");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  detail::write_file_atomic(dir / "catalog.tsv", detail::encode_catalog(b.catalog));
  detail::write_file_atomic(dir / "masks.bin", detail::encode_masks(b.masks));
  detail::write_file_atomic(dir / "acts.bin", detail::encode_acts(b.acts));
}

}  // namespace dissector
