#include <gtest/gtest.h>

#include <numeric>

#include "dissector/analysis.hpp"
#include "dissector/synthetic.hpp"

using namespace dissector;

namespace {

synthetic::InstanceSpec small_spec() {
  synthetic::InstanceSpec s;
  s.grid = 8;
  s.min_concepts = s.max_concepts = 8;
  s.min_samples = s.max_samples = 15;
  s.n_neurons = 3;
  return s;
}

DefaultLabelOptions quick_defaults() {
  DefaultLabelOptions o;
  o.n_random_units = 6;
  o.n_cls = 3;
  return o;
}

}  // namespace

TEST(Defaults, DeterministicAndDeduplicated) {
  const Bundle b = synthetic::random_instance(1, small_spec());
  const auto d1 = compute_default_labels(b.masks, LayerKind::relu, quick_defaults(), 5);
  const auto d2 = compute_default_labels(b.masks, LayerKind::relu, quick_defaults(), 5);
  ASSERT_FALSE(d1.formulas.empty());
  EXPECT_EQ(d1.formulas, d2.formulas);
  EXPECT_EQ(d1.provenance, DefaultProvenance::random_activations);
  for (std::size_t i = 0; i < d1.formulas.size(); ++i) {
    EXPECT_EQ(d1.formulas[i], canonical_form(d1.formulas[i]));
    for (std::size_t j = i + 1; j < d1.formulas.size(); ++j) {
      EXPECT_FALSE(formulas_equivalent(d1.formulas[i], d1.formulas[j]));
    }
  }
}

TEST(Defaults, ParallelMatchesSerial) {
  const Bundle b = synthetic::random_instance(2, small_spec());
  auto opts = quick_defaults();
  const auto serial = compute_default_labels(b.masks, LayerKind::signed_values, opts, 9);
  opts.jobs = 3;
  EXPECT_EQ(compute_default_labels(b.masks, LayerKind::signed_values, opts, 9).formulas, serial.formulas);
}

TEST(Defaults, UntrainedExportMode) {
  const Bundle b = synthetic::random_instance(3, small_spec());
  const std::vector<std::size_t> neurons = {0, 1, 2};
  const auto d = default_labels_from_export(b, neurons, quick_defaults(), 1);
  EXPECT_EQ(d.provenance, DefaultProvenance::untrained_export);
  EXPECT_FALSE(d.formulas.empty());
}

TEST(Defaults, HighCoverageConceptIsADefault) {
  // Concept 1 covers 60% of every sample; random activations align best with it.
  synthetic::Rng rng(4);
  Bundle b;
  for (int c = 0; c < 6; ++c) b.catalog.add("c" + std::to_string(c + 1), Category::object);
  b.masks = SampleMaskStore(10, 10, 20, 6);
  for (std::size_t x = 0; x < 20; ++x) {
    BitMask big(10, 10);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 10; ++c) big.set(r, c);
    }
    b.masks.set_mask(x, 1, big);
    for (ConceptId c = 2; c <= 6; ++c) {
      if (synthetic::coin(rng, 0.4)) b.masks.set_mask(x, c, synthetic::random_blob(rng, 10, 10));
    }
  }
  auto opts = quick_defaults();
  opts.search.max_len = 1;
  const auto d = compute_default_labels(b.masks, LayerKind::relu, opts, 3);
  EXPECT_TRUE(d.terms().contains(1));
}

TEST(Specialization, Rules) {
  DefaultLabelSet d;
  d.formulas = {Formula(1, {{Op::OR, 2}}), Formula(3)};
  EXPECT_EQ(classify_specialization(Formula(2, {{Op::OR, 1}}), d), SpecializationTag::unspecialized);
  EXPECT_EQ(classify_specialization(Formula(3, {{Op::AND, 1}}), d), SpecializationTag::unspecialized);
  EXPECT_EQ(classify_specialization(Formula(3, {{Op::AND_NOT, 7}}), d), SpecializationTag::weakly_specialized);
  EXPECT_EQ(classify_specialization(Formula(1, {{Op::OR, 2}, {Op::AND, 9}}), d),
            SpecializationTag::weakly_specialized);
  EXPECT_EQ(classify_specialization(Formula(8, {{Op::OR, 1}}), d), SpecializationTag::weakly_specialized);
  EXPECT_EQ(classify_specialization(Formula(8, {{Op::AND_NOT, 1}}), d), SpecializationTag::specialized);
  EXPECT_EQ(classify_specialization(Formula(8), d), SpecializationTag::specialized);
}

TEST(Specialization, InvariantUnderCanonicalization) {
  DefaultLabelSet d;
  d.formulas = {Formula(4), Formula(2, {{Op::AND, 5}})};
  synthetic::Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    Formula f(static_cast<ConceptId>(1 + rng() % 7));
    for (int k = 0; k < static_cast<int>(rng() % 3); ++k) {
      f = f.extended(kAllOps[rng() % 3], static_cast<ConceptId>(1 + rng() % 7));
    }
    ASSERT_EQ(classify_specialization(f, d), classify_specialization(canonical_form(f), d));
  }
}

TEST(CategoryHistogram, NormalisedAndWeightedByArity) {
  ConceptCatalog cat;
  cat.add("a", Category::color);
  cat.add("b", Category::object);
  cat.add("c", Category::object);
  const std::vector<Formula> labels = {Formula(1, {{Op::OR, 2}, {Op::AND, 3}}), Formula(1)};
  const auto h = category_histogram(labels, cat);
  EXPECT_DOUBLE_EQ(h[static_cast<std::size_t>(Category::color)], (1.0 / 3.0 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(h[static_cast<std::size_t>(Category::object)], (2.0 / 3.0) / 2.0);
  EXPECT_NEAR(std::accumulate(h.begin(), h.end(), 0.0), 1.0, 1e-12);
}

TEST(ThresholdSweep, TwelveRangesWithProbabilityHistograms) {
  const Bundle b = synthetic::random_instance(7, small_spec());
  SearchConfig cfg;
  cfg.max_len = 2;
  const auto rows = threshold_sweep(b, 0, cfg);
  ASSERT_EQ(rows.size(), 12U);
  for (const auto& r : rows) {
    EXPECT_NEAR(std::accumulate(r.histogram.begin(), r.histogram.end(), 0.0), 1.0, 1e-12);
    for (double v : r.histogram) EXPECT_GE(v, 0.0);
  }
  EXPECT_EQ(rows[0].direction, SweepDirection::top);
  EXPECT_EQ(rows[6].direction, SweepDirection::bottom);
}

TEST(ThresholdSweep, SingleCategoryCatalog) {
  Bundle b = synthetic::random_instance(8, small_spec());
  ConceptCatalog cat;
  for (std::size_t c = 1; c <= b.catalog.size(); ++c) cat.add("t" + std::to_string(c), Category::texture);
  b.catalog = cat;
  for (const auto& r : threshold_sweep(b, 1, {})) {
    EXPECT_DOUBLE_EQ(r.histogram[static_cast<std::size_t>(Category::texture)], 1.0);
  }
}

TEST(ClusterSweep, SingleKAndNovelty) {
  const Bundle b = synthetic::random_instance(10, small_spec());
  const std::vector<std::size_t> neurons = {0, 1};
  const std::vector<int> k1 = {1};
  const auto rows = cluster_count_sweep(b, neurons, k1, {}, 0);
  ASSERT_EQ(rows.size(), 1U);
  EXPECT_DOUBLE_EQ(rows[0].novel_fraction, 1.0);
  double iou = 0;
  std::size_t n = 0;
  for (std::size_t neuron : neurons) {
    for (const auto& rec : clustered_explain(b, neuron, 1, {}, 0).records) {
      iou += rec.iou.to_double();
      ++n;
    }
  }
  EXPECT_DOUBLE_EQ(rows[0].mean.iou, iou / n);
  const std::vector<int> ks = {3, 1, 5};
  const auto multi = cluster_count_sweep(b, neurons, ks, {}, 0, 2);
  ASSERT_EQ(multi.size(), 3U);
  EXPECT_EQ(multi[0].k, 1);
  EXPECT_EQ(multi[2].k, 5);
  EXPECT_DOUBLE_EQ(multi[0].novel_fraction, 1.0);
  for (const auto& r : multi) EXPECT_LE(r.novel_fraction, 1.0);
}
