#pragma once
// Studies built on the search engine: default labels under random
// activations, specialization tags, threshold sweeps and cluster-count sweeps.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dissector/formula.hpp"
#include "dissector/interchange.hpp"
#include "dissector/metrics.hpp"
#include "dissector/parallel.hpp"
#include "dissector/search.hpp"
#include "dissector/thresholds.hpp"

namespace dissector {

enum class DefaultProvenance { random_activations, untrained_export };

inline std::string_view to_string(DefaultProvenance p) {
  return p == DefaultProvenance::random_activations ? "random_activations" : "untrained_export";
}

struct DefaultLabelSet {
  std::vector<Formula> formulas;  // canonical forms, pairwise non-equivalent
  DefaultProvenance provenance = DefaultProvenance::random_activations;
  std::uint64_t seed = 0;

  std::set<ConceptId> terms() const {
    std::set<ConceptId> out;
    for (const auto& f : formulas) {
      for (ConceptId t : f.terms()) out.insert(t);
    }
    return out;
  }

  bool contains_equivalent(const Formula& f) const {
    const FunctionKey key = function_key(f);
    for (const auto& g : formulas) {
      if (function_key(g) == key) return true;
    }
    return false;
  }
};

inline constexpr std::size_t kDefaultRandomUnits = 64;

struct DefaultLabelOptions {
  int n_cls = 5;
  SearchConfig search;
  std::size_t n_random_units = kDefaultRandomUnits;
  std::size_t jobs = 1;
};

// i.i.d. standard normal activations on the bundle's grid, rectified for
// relu layers.
inline ActivationStore random_activations(std::size_t n_units, std::size_t n_samples, int h, int w, LayerKind kind,
                                          std::uint64_t seed) {
  ActivationStore acts(n_units, n_samples, h, w, kind);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0F, 1.0F);
  for (float& v : acts.values()) {
    v = normal(rng);
    if (kind == LayerKind::relu && v < 0.0F) v = 0.0F;
  }
  return acts;
}

namespace detail {
inline DefaultLabelSet collect_defaults(const SampleMaskStore& masks, const ActivationStore& acts,
                                        std::span<const std::size_t> neurons, const DefaultLabelOptions& opts,
                                        std::uint64_t seed) {
  std::vector<ClusteredExplanation> runs(neurons.size());
  parallel_for(neurons.size(), opts.jobs, [&](std::size_t i) {
    runs[i] = clustered_explain(masks, acts, neurons[i], opts.n_cls, opts.search, seed);
  });
  DefaultLabelSet out;
  out.seed = seed;
  std::unordered_set<FunctionKey, FunctionKeyHash> seen;
  for (const auto& run : runs) {
    for (const auto& rec : run.records) {
      if (rec.empty_activation) continue;
      if (seen.insert(function_key(rec.formula)).second) out.formulas.push_back(canonical_form(rec.formula));
    }
  }
  return out;
}
}  // namespace detail

// Labels the search converges to when the neuron carries no information.
inline DefaultLabelSet compute_default_labels(const SampleMaskStore& masks, LayerKind kind,
                                              const DefaultLabelOptions& opts, std::uint64_t seed) {
  const ActivationStore acts =
      random_activations(opts.n_random_units, masks.n_samples(), masks.grid_height(), masks.grid_width(), kind, seed);
  std::vector<std::size_t> neurons(opts.n_random_units);
  for (std::size_t i = 0; i < neurons.size(); ++i) neurons[i] = i;
  DefaultLabelSet out = detail::collect_defaults(masks, acts, neurons, opts, seed);
  out.provenance = DefaultProvenance::random_activations;
  return out;
}

// Same, from a bundle exported from an untrained network.
inline DefaultLabelSet default_labels_from_export(const Bundle& untrained, std::span<const std::size_t> neurons,
                                                  const DefaultLabelOptions& opts, std::uint64_t seed) {
  DefaultLabelSet out = detail::collect_defaults(untrained.masks, untrained.acts, neurons, opts, seed);
  out.provenance = DefaultProvenance::untrained_export;
  return out;
}

enum class SpecializationTag { unspecialized, weakly_specialized, specialized };

inline std::string_view to_string(SpecializationTag t) {
  switch (t) {
    case SpecializationTag::unspecialized: return "unspecialized";
    case SpecializationTag::weakly_specialized: return "weakly_specialized";
    case SpecializationTag::specialized: return "specialized";
  }
  return "?";
}

namespace detail {
inline bool matches_defaults(const Formula& f, const DefaultLabelSet& defaults, const std::set<ConceptId>& terms) {
  if (defaults.contains_equivalent(f)) return true;
  for (ConceptId t : f.terms()) {
    if (!terms.contains(t)) return false;
  }
  return true;
}
}  // namespace detail

// unspecialized: the label, or every one of its terms, is a default.
// weakly_specialized: some proper left prefix is, but the whole label is not.
// The label is canonicalised first, so equivalent spellings get the same tag.
inline SpecializationTag classify_specialization(const Formula& label, const DefaultLabelSet& defaults) {
  const Formula f = canonical_form(label);
  const std::set<ConceptId> terms = defaults.terms();
  if (detail::matches_defaults(f, defaults, terms)) return SpecializationTag::unspecialized;
  for (std::size_t k = 1; k < f.arity(); ++k) {
    if (detail::matches_defaults(f.prefix(k), defaults, terms)) return SpecializationTag::weakly_specialized;
  }
  return SpecializationTag::specialized;
}

using CategoryHistogram = std::array<double, kCategoryNames.size()>;

// Term categories over a batch of labels; each label contributes 1 split
// evenly over its terms. Normalised to sum 1 (all zeros for an empty batch).
inline CategoryHistogram category_histogram(std::span<const Formula> labels, const ConceptCatalog& catalog) {
  CategoryHistogram hist{};
  if (labels.empty()) return hist;
  for (const auto& f : labels) {
    const double share = 1.0 / static_cast<double>(f.arity());
    for (ConceptId t : f.terms()) hist[static_cast<std::size_t>(catalog.at(t).category)] += share;
  }
  for (double& v : hist) v /= static_cast<double>(labels.size());
  return hist;
}

enum class SweepDirection { top, bottom };

inline std::string_view to_string(SweepDirection d) { return d == SweepDirection::top ? "top" : "bottom"; }

struct SweepRange {
  SweepDirection direction = SweepDirection::top;
  double quantile = 0.0;
  Interval interval;
  ExplanationRecord record;
  CategoryHistogram histogram{};
};

// Best label for each preset quantile range of one neuron.
inline std::vector<SweepRange> threshold_sweep(const Bundle& b, std::size_t neuron, const SearchConfig& cfg) {
  std::vector<SweepRange> out;
  auto run = [&](SweepDirection dir, const std::vector<Interval>& presets) {
    for (std::size_t i = 0; i < presets.size(); ++i) {
      SweepRange r;
      r.direction = dir;
      r.quantile = kSweepQuantiles[i];
      r.interval = presets[i];
      r.record = explain_interval(b, neuron, presets[i], cfg);
      const Formula f = r.record.formula;
      r.histogram = category_histogram(std::span<const Formula>(&f, 1), b.catalog);
      out.push_back(std::move(r));
    }
  };
  run(SweepDirection::top, top_quantile_presets(b.acts, neuron));
  run(SweepDirection::bottom, bottom_quantile_presets(b.acts, neuron));
  return out;
}

struct QualityAverages {
  double iou = 0;
  double det_acc = 0;
  double sample_cov = 0;
  double act_cov = 0;
  double expl_cov = 0;
  std::size_t n_records = 0;
};

struct ClusterCountRow {
  int k = 0;
  QualityAverages mean;
  double novel_fraction = 0;  // labels not equivalent to any label of the same neuron at a smaller k
  std::size_t n_labels = 0;
};

inline std::vector<ClusterCountRow> cluster_count_sweep(const Bundle& b, std::span<const std::size_t> neurons,
                                                        std::span<const int> k_list, const SearchConfig& cfg,
                                                        std::uint64_t seed, std::size_t jobs = 1) {
  std::vector<int> ks(k_list.begin(), k_list.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  struct Cell {
    ClusteredExplanation run;
    std::vector<QualityVector> qualities;
  };
  std::vector<Cell> cells(ks.size() * neurons.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const int k = ks[i / neurons.size()];
    const std::size_t neuron = neurons[i % neurons.size()];
    Cell& cell = cells[i];
    cell.run = clustered_explain(b, neuron, k, cfg, seed);
    for (const auto& rec : cell.run.records) {
      cell.qualities.push_back(quality_vector(rec.formula, b.acts, neuron, rec.interval, b.masks));
    }
  });

  std::vector<ClusterCountRow> rows;
  // Seen labels per neuron across the smaller k values.
  std::vector<std::unordered_set<FunctionKey, FunctionKeyHash>> seen(neurons.size());
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    ClusterCountRow row;
    row.k = ks[ki];
    std::size_t novel = 0;
    std::vector<std::vector<FunctionKey>> added(neurons.size());
    for (std::size_t ni = 0; ni < neurons.size(); ++ni) {
      const Cell& cell = cells[ki * neurons.size() + ni];
      for (std::size_t r = 0; r < cell.run.records.size(); ++r) {
        const QualityVector& q = cell.qualities[r];
        row.mean.iou += q.iou.to_double();
        row.mean.det_acc += q.det_acc.to_double();
        row.mean.sample_cov += q.sample_cov.to_double();
        row.mean.act_cov += q.act_cov.to_double();
        row.mean.expl_cov += q.expl_cov.to_double();
        ++row.mean.n_records;
        FunctionKey key = function_key(cell.run.records[r].formula);
        if (ki == 0 || !seen[ni].contains(key)) ++novel;
        added[ni].push_back(std::move(key));
      }
    }
    if (row.mean.n_records > 0) {
      const auto n = static_cast<double>(row.mean.n_records);
      row.mean.iou /= n;
      row.mean.det_acc /= n;
      row.mean.sample_cov /= n;
      row.mean.act_cov /= n;
      row.mean.expl_cov /= n;
      row.novel_fraction = static_cast<double>(novel) / n;
    }
    row.n_labels = row.mean.n_records;
    for (std::size_t ni = 0; ni < neurons.size(); ++ni) {
      for (auto& key : added[ni]) seen[ni].insert(std::move(key));
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dissector
