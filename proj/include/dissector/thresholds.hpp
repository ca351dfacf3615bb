#pragma once
// Activation ranges for a neuron: top/bottom quantile thresholds and
// optimal 1-D K-Means intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "dissector/interchange.hpp"

namespace dissector {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Conventional NetDissect/CoEx top quantile.
inline constexpr double kCoexQuantile = 0.005;
// Lower end of the bottom-quantile sweep ranges.
inline constexpr double kBottomEpsilon = 1e-6;
inline constexpr double kSweepQuantiles[] = {0.005, 0.01, 0.05, 0.1, 0.2, 0.5};
// Above this many values a neuron is subsampled before clustering.
inline constexpr std::size_t kMaxClusterPoints = std::size_t{1} << 20;

enum class ThresholdMode { quantile_top, quantile_bottom, kmeans };

inline std::string_view to_string(ThresholdMode m) {
  switch (m) {
    case ThresholdMode::quantile_top: return "quantile_top";
    case ThresholdMode::quantile_bottom: return "quantile_bottom";
    case ThresholdMode::kmeans: return "kmeans";
  }
  return "?";
}

// Closed activation range [lo, hi]; hi may be +inf.
struct Interval {
  double lo = 0.0;
  double hi = kInf;
  int label = 1;  // cluster ordinal, 1 = lowest activations

  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct ThresholdSet {
  std::size_t neuron = 0;
  ThresholdMode mode = ThresholdMode::kmeans;
  std::vector<Interval> intervals;
  bool degenerate = false;  // nothing to cluster (e.g. all-zero relu neuron)
  bool reduced_k = false;   // fewer distinct values than requested clusters

  friend bool operator==(const ThresholdSet&, const ThresholdSet&) = default;
};

namespace detail {

inline bool count_within(std::size_t count, std::size_t n, double q) {
  // count / n <= q, tolerant to the representation error of q.
  return static_cast<long double>(count) <= static_cast<long double>(q) * n * (1.0L + 1e-12L);
}

}  // namespace detail

// Smallest stored value tau with |{v >= tau}| / n <= q. If even the maximum
// is too frequent (heavy ties), the maximum itself.
inline double top_quantile_threshold(std::span<const float> values, double q) {
  if (values.empty()) throw std::invalid_argument("top_quantile_threshold: empty input");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("top_quantile_threshold: q must be in (0, 1)");
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double tau = sorted.back();
  // Walk distinct values downward while the upper tail stays within q.
  std::size_t i = n;
  while (i > 0) {
    const float v = sorted[i - 1];
    const auto first = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
    if (!detail::count_within(n - first, n, q)) break;
    tau = v;
    i = first;
  }
  return tau;
}

// Mirror image over the values >= epsilon: largest stored value tau with
// |{v <= tau}| / n <= q, or the minimum when even that is too frequent.
inline double bottom_quantile_threshold(std::span<const float> values, double q, double epsilon = kBottomEpsilon) {
  std::vector<float> sorted;
  for (float v : values) {
    if (v >= epsilon) sorted.push_back(v);
  }
  if (sorted.empty()) throw std::invalid_argument("bottom_quantile_threshold: no values above epsilon");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("bottom_quantile_threshold: q must be in (0, 1)");
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double tau = sorted.front();
  std::size_t i = 0;
  while (i < n) {
    const float v = sorted[i];
    const auto last = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
    if (!detail::count_within(last, n, q)) break;
    tau = v;
    i = last;
  }
  return tau;
}

struct Cluster {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double centroid = 0.0;

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct KMeansResult {
  std::vector<Cluster> clusters;  // ascending, pairwise disjoint
  bool reduced_k = false;
  bool subsampled = false;
};

// Within-cluster sum of squared deviations of a value list.
inline double sse_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const long double mean =
      std::accumulate(values.begin(), values.end(), 0.0L) / static_cast<long double>(values.size());
  long double s = 0.0L;
  for (double v : values) s += (v - mean) * (v - mean);
  return static_cast<double>(s);
}

namespace detail {

// Optimal contiguous partition of weighted sorted distinct points into k
// groups by SSE. Divide-and-conquer DP, O(k m log m). Returns the first
// index of every group.
class SsePartitioner {
 public:
  SsePartitioner(std::span<const double> points, std::span<const double> weights)
      : m_(points.size()), w_(m_ + 1, 0.0L), s_(m_ + 1, 0.0L), q_(m_ + 1, 0.0L) {
    // Center to keep the prefix-sum formula well conditioned.
    long double total_w = 0.0L;
    long double total = 0.0L;
    for (std::size_t i = 0; i < m_; ++i) {
      total_w += weights[i];
      total += weights[i] * static_cast<long double>(points[i]);
    }
    const long double shift = total_w > 0 ? total / total_w : 0.0L;
    for (std::size_t i = 0; i < m_; ++i) {
      const long double v = points[i] - shift;
      w_[i + 1] = w_[i] + weights[i];
      s_[i + 1] = s_[i] + weights[i] * v;
      q_[i + 1] = q_[i] + weights[i] * v * v;
    }
  }

  // Group starts for an optimal k-partition (k <= m).
  std::vector<std::size_t> solve(std::size_t k) {
    const long double inf = std::numeric_limits<long double>::infinity();
    std::vector<long double> prev(m_, inf);
    std::vector<long double> cur(m_, inf);
    std::vector<std::vector<std::uint32_t>> split(k, std::vector<std::uint32_t>(m_, 0));
    for (std::size_t i = 0; i < m_; ++i) prev[i] = cost(0, i);
    for (std::size_t layer = 1; layer < k; ++layer) {
      std::fill(cur.begin(), cur.end(), inf);
      fill_layer(layer, layer, m_ - 1, layer, m_ - 1, prev, cur, split[layer]);
      std::swap(prev, cur);
    }
    std::vector<std::size_t> starts(k);
    std::size_t end = m_ - 1;
    for (std::size_t layer = k; layer-- > 1;) {
      starts[layer] = split[layer][end];
      end = starts[layer] - 1;
    }
    starts[0] = 0;
    return starts;
  }

 private:
  // SSE of points j..i inclusive.
  long double cost(std::size_t j, std::size_t i) const {
    const long double w = w_[i + 1] - w_[j];
    const long double s = s_[i + 1] - s_[j];
    const long double q = q_[i + 1] - q_[j];
    const long double c = q - s * s / w;
    return c < 0 ? 0 : c;
  }

  // cur[i] = min over j in [opt_lo, min(i, opt_hi)] of prev[j-1] + cost(j, i).
  void fill_layer(std::size_t layer, std::size_t lo, std::size_t hi, std::size_t opt_lo, std::size_t opt_hi,
                  const std::vector<long double>& prev, std::vector<long double>& cur,
                  std::vector<std::uint32_t>& split) {
    if (lo > hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    long double best = std::numeric_limits<long double>::infinity();
    std::size_t best_j = opt_lo;
    const std::size_t last = std::min(mid, opt_hi);
    for (std::size_t j = std::max(opt_lo, layer); j <= last; ++j) {
      const long double v = prev[j - 1] + cost(j, mid);
      if (v < best) {
        best = v;
        best_j = j;
      }
    }
    cur[mid] = best;
    split[mid] = static_cast<std::uint32_t>(best_j);
    if (mid > lo) fill_layer(layer, lo, mid - 1, opt_lo, best_j, prev, cur, split);
    fill_layer(layer, mid + 1, hi, best_j, opt_hi, prev, cur, split);
  }

  std::size_t m_;
  std::vector<long double> w_;
  std::vector<long double> s_;
  std::vector<long double> q_;
};

}  // namespace detail

// Exact 1-D K-Means: the SSE-optimal partition of the sorted values into k
// contiguous groups. Equal values always share a cluster. Inputs larger than
// `max_points` are uniformly subsampled (seeded), clustered, and then every
// original value is assigned to its nearest centroid to set the interval ends.
inline KMeansResult kmeans_1d(std::span<const double> values, int k, std::uint64_t seed,
                              std::size_t max_points = kMaxClusterPoints) {
  if (k < 1) throw std::invalid_argument("kmeans_1d: k must be >= 1");
  if (values.empty()) throw std::invalid_argument("kmeans_1d: empty input");
  KMeansResult out;

  std::vector<double> work;
  if (values.size() > max_points) {
    std::mt19937_64 rng(seed);
    work.reserve(max_points);
    std::sample(values.begin(), values.end(), std::back_inserter(work), max_points, rng);
    out.subsampled = true;
  } else {
    work.assign(values.begin(), values.end());
  }
  std::sort(work.begin(), work.end());

  std::vector<double> points;
  std::vector<double> weights;
  for (double v : work) {
    if (points.empty() || points.back() != v) {
      points.push_back(v);
      weights.push_back(1.0);
    } else {
      weights.back() += 1.0;
    }
  }
  std::size_t groups = static_cast<std::size_t>(k);
  if (points.size() < groups) {
    groups = points.size();
    out.reduced_k = true;
  }

  detail::SsePartitioner dp(points, weights);
  const auto starts = dp.solve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t first = starts[g];
    const std::size_t last = g + 1 < groups ? starts[g + 1] - 1 : points.size() - 1;
    Cluster c;
    c.lo = points[first];
    c.hi = points[last];
    long double sum = 0.0L;
    long double wsum = 0.0L;
    for (std::size_t i = first; i <= last; ++i) {
      sum += weights[i] * static_cast<long double>(points[i]);
      wsum += weights[i];
    }
    c.count = static_cast<std::size_t>(wsum);
    c.centroid = static_cast<double>(sum / wsum);
    out.clusters.push_back(c);
  }

  if (out.subsampled) {
    // Widen to every original value by nearest centroid (ties go low).
    std::vector<Cluster> widened(out.clusters.size());
    std::vector<bool> seen(out.clusters.size(), false);
    for (auto& c : widened) c.count = 0;
    for (double v : values) {
      std::size_t g = 0;
      while (g + 1 < out.clusters.size() &&
             std::abs(v - out.clusters[g + 1].centroid) < std::abs(v - out.clusters[g].centroid)) {
        ++g;
      }
      Cluster& c = widened[g];
      if (!seen[g]) {
        c.lo = c.hi = v;
        seen[g] = true;
      }
      c.lo = std::min(c.lo, v);
      c.hi = std::max(c.hi, v);
      ++c.count;
      c.centroid = out.clusters[g].centroid;
    }
    std::vector<Cluster> kept;
    for (std::size_t g = 0; g < widened.size(); ++g) {
      if (seen[g]) kept.push_back(widened[g]);
    }
    if (kept.size() < out.clusters.size()) out.reduced_k = true;
    out.clusters = std::move(kept);
  }
  return out;
}

struct ThresholdOptions {
  // Replace clustering by the single range [tau_top, +inf).
  bool coex_compat = false;
  double coex_quantile = kCoexQuantile;
  std::size_t max_points = kMaxClusterPoints;
};

// Values that take part in clustering: strictly positive ones for relu
// layers, all of them for signed layers.
inline std::vector<double> clusterable_values(const ActivationStore& acts, std::size_t neuron) {
  std::vector<double> out;
  const bool relu = acts.layer_kind() == LayerKind::relu;
  for (float v : acts.neuron_values(neuron)) {
    if (!relu || v > 0.0F) out.push_back(v);
  }
  return out;
}

inline ThresholdSet coex_threshold_set(const ActivationStore& acts, std::size_t neuron, double q = kCoexQuantile) {
  ThresholdSet ts;
  ts.neuron = neuron;
  ts.mode = ThresholdMode::quantile_top;
  const auto values = acts.neuron_values(neuron);
  if (values.empty()) {
    ts.degenerate = true;
    return ts;
  }
  ts.intervals.push_back({top_quantile_threshold(values, q), kInf, 1});
  return ts;
}

inline ThresholdSet threshold_set(const ActivationStore& acts, std::size_t neuron, int n_cls, std::uint64_t seed,
                                  const ThresholdOptions& opts = {}) {
  if (neuron >= acts.n_neurons()) throw std::out_of_range("neuron index out of range");
  if (opts.coex_compat) return coex_threshold_set(acts, neuron, opts.coex_quantile);

  ThresholdSet ts;
  ts.neuron = neuron;
  ts.mode = ThresholdMode::kmeans;
  const auto values = clusterable_values(acts, neuron);
  if (values.empty()) {
    ts.degenerate = true;
    return ts;
  }
  const auto km = kmeans_1d(values, n_cls, seed, opts.max_points);
  ts.reduced_k = km.reduced_k;
  int label = 1;
  for (const auto& c : km.clusters) ts.intervals.push_back({c.lo, c.hi, label++});
  return ts;
}

// Sweep ranges [tau_q, +inf) for each top quantile q.
inline std::vector<Interval> top_quantile_presets(const ActivationStore& acts, std::size_t neuron) {
  std::vector<Interval> out;
  int label = 1;
  for (double q : kSweepQuantiles) out.push_back({top_quantile_threshold(acts.neuron_values(neuron), q), kInf, label++});
  return out;
}

// Sweep ranges [epsilon, tau_q] for each bottom quantile q.
inline std::vector<Interval> bottom_quantile_presets(const ActivationStore& acts, std::size_t neuron) {
  std::vector<Interval> out;
  int label = 1;
  for (double q : kSweepQuantiles) {
    out.push_back({kBottomEpsilon, bottom_quantile_threshold(acts.neuron_values(neuron), q), label++});
  }
  return out;
}

}  // namespace dissector
