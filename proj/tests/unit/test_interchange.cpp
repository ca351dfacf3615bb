#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "dissector/interchange.hpp"
#include "dissector/synthetic.hpp"

using namespace dissector;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dissector_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

Bundle small_bundle(std::size_t samples, std::uint64_t seed) {
  synthetic::InstanceSpec spec;
  spec.grid = 6;
  spec.min_concepts = spec.max_concepts = 4;
  spec.min_samples = spec.max_samples = static_cast<int>(samples);
  spec.n_neurons = 2;
  return synthetic::random_instance(seed, spec);
}

}  // namespace

TEST(Rle, RoundTripAndShape) {
  BitMask m(3, 3);
  m.set(0, 0);
  m.set(1, 1);
  m.set(1, 2);
  const auto runs = rle_encode(m.words(), m.cells());
  EXPECT_EQ(runs, (std::vector<std::uint32_t>{0, 1, 3, 2, 3}));
  EXPECT_EQ(rle_decode(runs, 3, 3), m);
  const BitMask empty(2, 2);
  EXPECT_EQ(rle_encode(empty.words(), 4), (std::vector<std::uint32_t>{4}));
}

TEST(Rle, OverrunAndShortfallAreCorruption) {
  const std::vector<std::uint32_t> over = {3, 7};
  EXPECT_THROW((void)rle_decode(over, 3, 3), CorruptionError);
  const std::vector<std::uint32_t> short_runs = {3, 2};
  EXPECT_THROW((void)rle_decode(short_runs, 3, 3), CorruptionError);
  const std::vector<std::uint32_t> zero_mid = {3, 0, 6};
  EXPECT_THROW((void)rle_decode(zero_mid, 3, 3), CorruptionError);
}

TEST(Catalog, Invariants) {
  ConceptCatalog cat;
  EXPECT_EQ(cat.add("sky", Category::scene), 1U);
  EXPECT_EQ(cat.add("red", Category::color), 2U);
  EXPECT_THROW(cat.add("sky", Category::object), std::invalid_argument);
  EXPECT_THROW(cat.add("a\tb", Category::object), std::invalid_argument);
  EXPECT_EQ(cat.find("red"), 2U);
  EXPECT_FALSE(cat.find("blue").has_value());
  EXPECT_THROW((void)cat.at(3), std::out_of_range);
}

TEST(MaskStore, FullMaskMeta) {
  SampleMaskStore s(3, 3, 1, 1);
  s.set_mask(0, 1, BitMask::full(3, 3));
  const MaskMeta& m = s.meta(0, 1);
  EXPECT_EQ(m.card, 9U);
  EXPECT_EQ(m.min_ext, (Rect{0, 0, 2, 2}));
  EXPECT_EQ(m.max_ext, (Rect{0, 0, 2, 2}));
}

TEST(MaskStore, EmptyMaskIsAbsent) {
  SampleMaskStore s(2, 2, 2, 1);
  s.set_mask(1, 1, BitMask::full(2, 2));
  s.set_mask(0, 1, BitMask(2, 2));
  EXPECT_FALSE(s.present(0, 1));
  EXPECT_EQ(s.samples_with(1), (std::vector<std::uint32_t>{1}));
  s.set_mask(1, 1, BitMask(2, 2));
  EXPECT_TRUE(s.samples_with(1).empty());
  EXPECT_EQ(s.total_card(1), 0);
}

TEST(Bundle, RoundTripIsBitExact) {
  const fs::path dir = temp_dir("roundtrip");
  const Bundle b = small_bundle(10, 42);
  write_bundle(b, dir / "bundle");
  const Bundle back = load_bundle(dir / "bundle", {.verify_meta = true});
  EXPECT_EQ(back, b);
  write_bundle(back, dir / "again");
  for (const char* f : {"catalog.tsv", "masks.bin", "acts.bin"}) {
    EXPECT_EQ(slurp(dir / "bundle" / f), slurp(dir / "again" / f)) << f;
  }
  fs::remove_all(dir);
}

TEST(Bundle, EmptyDataset) {
  const fs::path dir = temp_dir("empty");
  Bundle b;
  b.catalog.add("thing", Category::object);
  b.masks = SampleMaskStore(4, 4, 0, 1);
  b.acts = ActivationStore(3, 0, 4, 4, LayerKind::relu);
  write_bundle(b, dir);
  const Bundle back = load_bundle(dir);
  EXPECT_EQ(back.masks.n_samples(), 0U);
  EXPECT_EQ(back, b);
  fs::remove_all(dir);
}

TEST(Bundle, GridMismatchIsConsistencyError) {
  const fs::path dir = temp_dir("mismatch");
  Bundle b;
  b.catalog.add("thing", Category::object);
  b.masks = SampleMaskStore(14, 14, 1, 1);
  b.acts = ActivationStore(1, 1, 7, 7, LayerKind::relu);
  EXPECT_THROW(write_bundle(b, dir), ConsistencyError);
  // Write the parts separately to get a mismatched bundle on disk.
  Bundle ok = b;
  ok.acts = ActivationStore(1, 1, 14, 14, LayerKind::relu);
  write_bundle(ok, dir);
  write_activations(b.acts, dir / "acts.bin");
  EXPECT_THROW((void)load_bundle(dir), ConsistencyError);
  fs::remove_all(dir);
}

TEST(Bundle, BadMagicIsFormatError) {
  const fs::path dir = temp_dir("magic");
  write_bundle(small_bundle(3, 1), dir);
  std::string masks = slurp(dir / "masks.bin");
  masks[3] = 'X';
  spit(dir / "masks.bin", masks);
  EXPECT_THROW((void)load_bundle(dir), FormatError);
  fs::remove_all(dir);
}

TEST(Bundle, MissingFileIsIoError) {
  const fs::path dir = temp_dir("missing");
  EXPECT_THROW((void)load_bundle(dir), IoError);
  fs::remove_all(dir);
}

TEST(Bundle, WriterRejectsInvariantViolations) {
  const fs::path dir = temp_dir("reject");
  Bundle b = small_bundle(2, 3);
  b.acts.values()[0] = -1.0F;
  EXPECT_THROW(write_bundle(b, dir), std::invalid_argument);
  Bundle c = small_bundle(2, 3);
  BitMask m(6, 6);
  m.set(0, 0);
  c.masks.set_mask(0, 1, m, MaskMeta{5, Rect{0, 0, 0, 0}, Rect{0, 0, 0, 0}});
  EXPECT_THROW(write_bundle(c, dir), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Bundle, VerifyCatchesStaleExtents) {
  const fs::path dir = temp_dir("stale");
  Bundle b = small_bundle(2, 9);
  BitMask m(6, 6);
  for (int c = 0; c < 4; ++c) m.set(1, c);
  // A valid but non-maximal inscribed rectangle passes structural checks.
  b.masks.set_mask(0, 1, m, MaskMeta{4, Rect{1, 0, 1, 1}, Rect{1, 0, 1, 3}});
  write_bundle(b, dir);
  EXPECT_NO_THROW((void)load_bundle(dir));
  EXPECT_THROW((void)load_bundle(dir, {.verify_meta = true}), CorruptionError);
  ::setenv("DISSECTOR_VERIFY_META", "1", 1);
  EXPECT_THROW((void)load_bundle(dir), CorruptionError);
  ::unsetenv("DISSECTOR_VERIFY_META");
  fs::remove_all(dir);
}

// Flipping any payload byte must be detected or leave a structurally valid,
// dimension-consistent bundle.
TEST(Bundle, ByteFlipFuzz) {
  const fs::path dir = temp_dir("fuzz");
  const Bundle b = small_bundle(4, 77);
  write_bundle(b, dir);
  std::mt19937_64 rng(99);
  int detected = 0;
  for (const char* file : {"masks.bin", "acts.bin"}) {
    const std::string original = slurp(dir / file);
    for (int trial = 0; trial < 200; ++trial) {
      std::string mutated = original;
      const std::size_t pos = rng() % mutated.size();
      mutated[pos] = static_cast<char>(mutated[pos] ^ static_cast<char>(1U << (rng() % 8)));
      spit(dir / file, mutated);
      try {
        const Bundle got = load_bundle(dir);
        check_consistency(got);
        for (std::size_t x = 0; x < got.masks.n_samples(); ++x) {
          for (ConceptId c = 1; c <= got.masks.n_concepts(); ++c) {
            ASSERT_EQ(got.masks.meta(x, c).card, static_cast<std::uint32_t>(got.masks.mask(x, c).popcount()));
          }
        }
      } catch (const BundleError&) {
        ++detected;
      }
    }
    spit(dir / file, original);
  }
  EXPECT_GT(detected, 0);
  fs::remove_all(dir);
}

TEST(Activations, SignedLayerAllowsNegatives) {
  const fs::path dir = temp_dir("signed");
  ActivationStore a(1, 2, 2, 2, LayerKind::signed_values);
  a.values()[3] = -2.5F;
  write_activations(a, dir / "a.bin");
  EXPECT_EQ(load_activations(dir / "a.bin"), a);
  std::string raw = slurp(dir / "a.bin");
  raw[24] = 0;  // layer kind -> relu
  spit(dir / "a.bin", raw);
  EXPECT_THROW((void)load_activations(dir / "a.bin"), CorruptionError);
  fs::remove_all(dir);
}
