#pragma once
// Quality measures of a (neuron, range, label) triple.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dissector/bitmask.hpp"
#include "dissector/formula.hpp"
#include "dissector/interchange.hpp"
#include "dissector/rational.hpp"
#include "dissector/thresholds.hpp"

namespace dissector {

// A ratio metric; `degenerate` marks a zero denominator (value reported as 0).
struct Metric {
  Ratio value;
  bool degenerate = false;

  static Metric of(std::int64_t num, std::int64_t den) { return {Ratio::of(num, den), den == 0}; }
  double to_double() const { return value.to_double(); }
};

struct AuxStats {
  std::optional<double> scene_perc;
  std::optional<double> imrou;
  std::optional<double> pearson;
  std::optional<double> avg_act_size;
  std::optional<double> avg_lab_size;
  std::optional<double> avg_overlap;
  std::optional<double> abs_lab_mask;
};

struct QualityVector {
  Metric iou;
  Metric det_acc;
  Metric sample_cov;
  Metric act_cov;
  Metric expl_cov;
  std::optional<double> lab_mask;
  AuxStats aux;
};

struct SampleOverlap {
  std::int64_t m = 0;      // |M(x)|
  std::int64_t s = 0;      // |S(x, L)|
  std::int64_t inter = 0;  // |M(x) & S(x, L)|
};

inline std::vector<SampleOverlap> sample_overlaps(const Formula& f, const ActivationStore& acts, std::size_t neuron,
                                                  const Interval& interval, const SampleMaskStore& masks) {
  std::vector<SampleOverlap> out(masks.n_samples());
  for (std::size_t x = 0; x < masks.n_samples(); ++x) {
    const BitMask s = formula_mask(x, f, masks);
    const BitMask m =
        activation_mask(acts.grid(neuron, x), masks.grid_height(), masks.grid_width(), interval.lo, interval.hi);
    out[x] = {m.popcount(), s.popcount(), inter_card(m, s)};
  }
  return out;
}

inline Metric iou_metric(std::span<const SampleOverlap> ov) {
  std::int64_t i = 0;
  std::int64_t u = 0;
  for (const auto& o : ov) {
    i += o.inter;
    u += o.m + o.s - o.inter;
  }
  return Metric::of(i, u);
}

inline Metric det_acc(std::span<const SampleOverlap> ov) {
  std::int64_t i = 0;
  std::int64_t s = 0;
  for (const auto& o : ov) {
    i += o.inter;
    s += o.s;
  }
  return Metric::of(i, s);
}

inline Metric sample_cov(std::span<const SampleOverlap> ov) {
  std::int64_t hit = 0;
  std::int64_t labelled = 0;
  for (const auto& o : ov) {
    hit += o.inter > 0;
    labelled += o.s > 0;
  }
  return Metric::of(hit, labelled);
}

inline Metric act_cov(std::span<const SampleOverlap> ov) {
  std::int64_t i = 0;
  std::int64_t m = 0;
  for (const auto& o : ov) {
    i += o.inter;
    m += o.m;
  }
  return Metric::of(i, m);
}

inline Metric expl_cov(std::span<const SampleOverlap> ov) {
  std::int64_t hit = 0;
  std::int64_t firing = 0;
  for (const auto& o : ov) {
    hit += o.inter > 0;
    firing += o.m > 0;
  }
  return Metric::of(hit, firing);
}

// Convenience overloads computing the overlaps first.
inline Metric det_acc(const Formula& f, const ActivationStore& acts, std::size_t neuron, const Interval& iv,
                      const SampleMaskStore& masks) {
  return det_acc(sample_overlaps(f, acts, neuron, iv, masks));
}
inline Metric sample_cov(const Formula& f, const ActivationStore& acts, std::size_t neuron, const Interval& iv,
                         const SampleMaskStore& masks) {
  return sample_cov(sample_overlaps(f, acts, neuron, iv, masks));
}
inline Metric act_cov(const Formula& f, const ActivationStore& acts, std::size_t neuron, const Interval& iv,
                      const SampleMaskStore& masks) {
  return act_cov(sample_overlaps(f, acts, neuron, iv, masks));
}
inline Metric expl_cov(const Formula& f, const ActivationStore& acts, std::size_t neuron, const Interval& iv,
                       const SampleMaskStore& masks) {
  return expl_cov(sample_overlaps(f, acts, neuron, iv, masks));
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  long double dot = 0;
  long double na = 0;
  long double nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;  // zero vector: no preserved signal
  return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

namespace detail {
inline void check_masked_shape(const ActivationStore& originals, const ActivationStore& masked,
                               std::size_t masked_neuron) {
  if (originals.n_samples() != masked.n_samples() || originals.grid_height() != masked.grid_height() ||
      originals.grid_width() != masked.grid_width()) {
    throw std::invalid_argument("masked activations are not sample-aligned with the originals");
  }
  if (masked_neuron >= masked.n_neurons()) throw std::invalid_argument("masked store lacks the requested neuron");
}
}  // namespace detail

// Mean over firing samples of cos(M(x) * A(theta(x, L)), M(x) * A(x)).
// `masked` holds the neuron's activations on label-masked inputs.
inline std::optional<double> lab_mask(const ActivationStore& originals, std::size_t neuron, const Interval& iv,
                                      const ActivationStore& masked, std::size_t masked_neuron) {
  detail::check_masked_shape(originals, masked, masked_neuron);
  const std::size_t cells = originals.cells();
  std::vector<double> a(cells);
  std::vector<double> b(cells);
  long double total = 0;
  std::size_t firing = 0;
  for (std::size_t x = 0; x < originals.n_samples(); ++x) {
    const auto orig = originals.grid(neuron, x);
    const auto mask_run = masked.grid(masked_neuron, x);
    bool any = false;
    for (std::size_t c = 0; c < cells; ++c) {
      const bool in = iv.contains(orig[c]);
      any = any || in;
      a[c] = in ? mask_run[c] : 0.0;
      b[c] = in ? orig[c] : 0.0;
    }
    if (!any) continue;
    ++firing;
    total += cosine_similarity(a, b);
  }
  if (firing == 0) return std::nullopt;
  return static_cast<double>(total / static_cast<long double>(firing));
}

// Unnormalised variant: |sum of in-range masked activations - sum of
// in-range original activations inside the label|.
inline double abs_lab_mask(const Formula& f, const ActivationStore& originals, std::size_t neuron, const Interval& iv,
                           const SampleMaskStore& masks, const ActivationStore& masked, std::size_t masked_neuron) {
  detail::check_masked_shape(originals, masked, masked_neuron);
  long double masked_sum = 0;
  long double label_sum = 0;
  for (std::size_t x = 0; x < originals.n_samples(); ++x) {
    const auto orig = originals.grid(neuron, x);
    const auto mk = masked.grid(masked_neuron, x);
    const BitMask s = formula_mask(x, f, masks);
    for (std::size_t c = 0; c < orig.size(); ++c) {
      if (!iv.contains(orig[c])) continue;
      masked_sum += mk[c];
      if (s.test(c)) label_sum += orig[c];
    }
  }
  return static_cast<double>(std::fabs(masked_sum - label_sum));
}

// Scene concepts fill the whole grid on every sample where they appear.
inline bool is_scene_concept(const SampleMaskStore& masks, ConceptId c) {
  const auto& xs = masks.samples_with(c);
  if (xs.empty()) return false;
  for (std::uint32_t x : xs) {
    if (masks.meta(x, c).card != masks.cells()) return false;
  }
  return true;
}

// Fraction of terms, over a batch of labels, that are scene concepts.
inline std::optional<double> scene_perc(std::span<const Formula> labels, const SampleMaskStore& masks) {
  std::int64_t scene = 0;
  std::int64_t total = 0;
  for (const auto& f : labels) {
    for (ConceptId t : f.terms()) {
      scene += is_scene_concept(masks, t);
      ++total;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(scene) / static_cast<double>(total);
}

// IoU with each sample's intersection penalised by the chance overlap
// r * |M| * |S| / n_s.
inline double imrou(std::span<const SampleOverlap> ov, double r, std::int64_t grid_cells) {
  long double num = 0;
  std::int64_t den = 0;
  for (const auto& o : ov) {
    num += static_cast<long double>(o.inter) -
           static_cast<long double>(r) * static_cast<long double>(o.m) * static_cast<long double>(o.s) / grid_cells;
    den += o.m + o.s - o.inter;
  }
  if (den == 0) return 0.0;
  return static_cast<double>(num / den);
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const auto n = static_cast<long double>(a.size());
  long double ma = 0;
  long double mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double cov = 0;
  long double va = 0;
  long double vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0 || vb == 0) return std::nullopt;
  return static_cast<double>(cov / std::sqrt(va * vb));
}

struct AuxOptions {
  std::optional<double> imrou_r;                 // compute ImRoU with this weight
  std::optional<std::vector<double>> accuracy;   // per-sample accuracy for Pearson
};

// Per-record statistics (ScenePerc is batch-level, see scene_perc()).
inline AuxStats aux_stats(std::span<const SampleOverlap> ov, std::int64_t grid_cells, const AuxOptions& opts) {
  AuxStats aux;
  std::int64_t m = 0;
  std::int64_t s = 0;
  std::int64_t u = 0;
  for (const auto& o : ov) {
    m += o.m;
    s += o.s;
    u += o.m + o.s - o.inter;
  }
  const long double total_cells = static_cast<long double>(grid_cells) * static_cast<long double>(ov.size());
  if (total_cells > 0) {
    aux.avg_act_size = static_cast<double>(m / total_cells);
    aux.avg_lab_size = static_cast<double>(s / total_cells);
    aux.avg_overlap = static_cast<double>(u / total_cells);
  }
  if (opts.imrou_r) aux.imrou = imrou(ov, *opts.imrou_r, grid_cells);
  if (opts.accuracy) {
    if (opts.accuracy->size() != ov.size()) throw std::invalid_argument("accuracy vector length != sample count");
    std::vector<double> ious;
    std::vector<double> acc;
    for (std::size_t x = 0; x < ov.size(); ++x) {
      if (ov[x].m == 0) continue;
      ious.push_back(static_cast<double>(ov[x].inter) / static_cast<double>(ov[x].m + ov[x].s - ov[x].inter));
      acc.push_back((*opts.accuracy)[x]);
    }
    aux.pearson = pearson(ious, acc);
  }
  return aux;
}

inline QualityVector quality_vector(const Formula& f, const ActivationStore& acts, std::size_t neuron,
                                    const Interval& iv, const SampleMaskStore& masks, const AuxOptions& opts = {}) {
  const auto ov = sample_overlaps(f, acts, neuron, iv, masks);
  QualityVector q;
  q.iou = iou_metric(ov);
  q.det_acc = det_acc(ov);
  q.sample_cov = sample_cov(ov);
  q.act_cov = act_cov(ov);
  q.expl_cov = expl_cov(ov);
  q.aux = aux_stats(ov, masks.cells(), opts);
  return q;
}

}  // namespace dissector
