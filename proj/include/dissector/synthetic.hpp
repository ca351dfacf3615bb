#pragma once
// Seeded synthetic datasets: random concept masks with neurons loosely tied
// to a few concepts, and planted two-band neurons with a known answer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dissector/bitmask.hpp"
#include "dissector/interchange.hpp"

namespace dissector::synthetic {

using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline bool coin(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

// A union of 1-3 random rectangles with a few cells knocked out, so masks
// are blob-like but rarely exact rectangles.
inline BitMask random_blob(Rng& rng, int h, int w) {
  BitMask m(h, w);
  const int parts = uniform_int(rng, 1, 3);
  for (int p = 0; p < parts; ++p) {
    const int rh = uniform_int(rng, 1, std::max(1, h / 2));
    const int rw = uniform_int(rng, 1, std::max(1, w / 2));
    const int r0 = uniform_int(rng, 0, h - rh);
    const int c0 = uniform_int(rng, 0, w - rw);
    for (int r = r0; r < r0 + rh; ++r) {
      for (int c = c0; c < c0 + rw; ++c) m.set(static_cast<std::size_t>(r) * w + c);
    }
  }
  const int holes = uniform_int(rng, 0, 3);
  for (int k = 0; k < holes; ++k) {
    m.set(static_cast<std::size_t>(uniform_int(rng, 0, h * w - 1)), false);
  }
  return m;
}

struct InstanceSpec {
  int grid = 16;
  int min_concepts = 15;
  int max_concepts = 25;
  int min_samples = 30;
  int max_samples = 60;
  std::size_t n_neurons = 1;
  LayerKind kind = LayerKind::relu;
  double scene_fraction = 0.1;  // share of concepts that fill the whole grid
};

inline Category category_for(std::size_t index, bool scene) {
  if (scene) return Category::scene;
  static constexpr Category kCycle[] = {Category::object, Category::part, Category::color, Category::material,
                                        Category::texture};
  return kCycle[index % std::size(kCycle)];
}

// Random dataset. Each neuron responds to 1-3 concepts (with weights) plus
// noise, so good explanations exist without being exact.
inline Bundle random_instance(std::uint64_t seed, const InstanceSpec& spec = {}) {
  Rng rng(seed);
  const int h = spec.grid;
  const int w = spec.grid;
  const auto n_concepts = static_cast<std::size_t>(uniform_int(rng, spec.min_concepts, spec.max_concepts));
  const auto n_samples = static_cast<std::size_t>(uniform_int(rng, spec.min_samples, spec.max_samples));

  Bundle b;
  std::vector<bool> scene(n_concepts);
  std::vector<double> presence(n_concepts);
  for (std::size_t c = 0; c < n_concepts; ++c) {
    scene[c] = coin(rng, spec.scene_fraction);
    presence[c] = scene[c] ? uniform_real(rng, 0.05, 0.3) : uniform_real(rng, 0.1, 0.6);
    b.catalog.add("c" + std::to_string(c + 1), category_for(c, scene[c]));
  }
  b.masks = SampleMaskStore(h, w, n_samples, n_concepts);
  for (std::size_t x = 0; x < n_samples; ++x) {
    for (std::size_t c = 0; c < n_concepts; ++c) {
      if (!coin(rng, presence[c])) continue;
      const auto id = static_cast<ConceptId>(c + 1);
      b.masks.set_mask(x, id, scene[c] ? BitMask::full(h, w) : random_blob(rng, h, w));
    }
  }

  b.acts = ActivationStore(spec.n_neurons, n_samples, h, w, spec.kind);
  std::normal_distribution<double> noise(0.0, 0.35);
  for (std::size_t k = 0; k < spec.n_neurons; ++k) {
    const int n_pref = uniform_int(rng, 1, 3);
    std::vector<std::pair<ConceptId, double>> pref;
    for (int j = 0; j < n_pref; ++j) {
      pref.emplace_back(static_cast<ConceptId>(uniform_int(rng, 1, static_cast<int>(n_concepts))),
                        uniform_real(rng, 0.5, 2.0) * (coin(rng, 0.8) ? 1.0 : -1.0));
    }
    for (std::size_t x = 0; x < n_samples; ++x) {
      auto g = b.acts.grid(k, x);
      for (std::size_t cell = 0; cell < g.size(); ++cell) {
        double v = noise(rng) - 0.2;
        for (const auto& [id, weight] : pref) {
          const auto words = b.masks.words(x, id);
          if (!words.empty() && ((words[cell / 64] >> (cell % 64)) & 1U) != 0) v += weight;
        }
        if (spec.kind == LayerKind::relu) v = std::max(v, 0.0);
        g[cell] = static_cast<float>(v);
      }
    }
  }
  return b;
}

// Ground truth of a planted instance.
struct PlantedInstance {
  Bundle bundle;
  ConceptId low_concept = 0;   // aligned with the low activation band
  ConceptId high_concept = 0;  // aligned with the high activation band
};

// One relu neuron with two activation bands: cells of the low concept take
// values in [1, 2], cells of the high concept values in [8, 10], all other
// cells 0. The two concepts never overlap, so each band's activation mask
// equals its concept's mask on every sample.
inline PlantedInstance planted_instance(std::uint64_t seed, int grid = 16, std::size_t n_samples = 40,
                                        std::size_t n_distractors = 12) {
  Rng rng(seed);
  const int h = grid;
  const int w = grid;
  const std::size_t n_concepts = n_distractors + 2;
  PlantedInstance out;
  Bundle& b = out.bundle;
  // Planted concepts get random ids so that id order cannot decide the outcome.
  std::vector<ConceptId> ids(n_concepts);
  for (std::size_t i = 0; i < n_concepts; ++i) ids[i] = static_cast<ConceptId>(i + 1);
  std::shuffle(ids.begin(), ids.end(), rng);
  out.low_concept = ids[0];
  out.high_concept = ids[1];
  for (std::size_t i = 0; i < n_concepts; ++i) {
    b.catalog.add("c" + std::to_string(i + 1), category_for(i, false));
  }
  b.masks = SampleMaskStore(h, w, n_samples, n_concepts);
  b.acts = ActivationStore(1, n_samples, h, w, LayerKind::relu);
  for (std::size_t x = 0; x < n_samples; ++x) {
    BitMask high = coin(rng, 0.6) ? random_blob(rng, h, w) : BitMask(h, w);
    BitMask low = coin(rng, 0.7) ? random_blob(rng, h, w) : BitMask(h, w);
    low.subtract(high);
    // Each band must show up somewhere in the dataset.
    if (x == 0 && high.none()) high.set(0);
    if (x == 1 && low.none()) low.set(static_cast<std::size_t>(h * w - 1));
    if (!high.none()) b.masks.set_mask(x, out.high_concept, high);
    if (!low.none()) b.masks.set_mask(x, out.low_concept, low);
    for (std::size_t i = 2; i < n_concepts; ++i) {
      if (coin(rng, 0.4)) b.masks.set_mask(x, ids[i], random_blob(rng, h, w));
    }
    auto g = b.acts.grid(0, x);
    for (std::size_t cell = 0; cell < g.size(); ++cell) {
      if (high.test(cell)) {
        g[cell] = static_cast<float>(uniform_real(rng, 8.0, 10.0));
      } else if (low.test(cell)) {
        g[cell] = static_cast<float>(uniform_real(rng, 1.0, 2.0));
      }
    }
  }
  return out;
}

// Benchmark corpus used for the visited-state comparison: larger concept
// vocabularies than the property-test instances and several neurons each.
inline InstanceSpec benchmark_spec() {
  InstanceSpec s;
  s.min_concepts = 30;
  s.max_concepts = 40;
  s.min_samples = 40;
  s.max_samples = 60;
  s.n_neurons = 4;
  return s;
}

inline std::vector<Bundle> benchmark_corpus(std::size_t n_instances, std::uint64_t seed) {
  std::vector<Bundle> out;
  for (std::size_t i = 0; i < n_instances; ++i) out.push_back(random_instance(seed + 7919 * i, benchmark_spec()));
  return out;
}

}  // namespace dissector::synthetic
