#pragma once
// Admissible upper bounds on the IoU of a candidate label (left op right)
// built from per-sample cached cardinalities.
//
// Every heuristic estimates per sample an intersection I^ >= I and a label
// size S^ with S^ - I^ <= |S| - I, so that
//   sum I^ / (sum |M| + sum S^ - sum I^)  >=  IoU.
// CFH and Areas drop the label-size estimate (S^ = 0); Areas also replaces
// the cached intersections with raw mask sizes.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>

#include "dissector/bitmask.hpp"
#include "dissector/formula.hpp"
#include "dissector/rational.hpp"

namespace dissector {

enum class Heuristic { mmesh, cfh, areas, none };

inline std::string_view to_string(Heuristic h) {
  switch (h) {
    case Heuristic::mmesh: return "mmesh";
    case Heuristic::cfh: return "cfh";
    case Heuristic::areas: return "areas";
    case Heuristic::none: return "none";
  }
  return "?";
}

inline std::optional<Heuristic> parse_heuristic(std::string_view s) {
  if (s == "mmesh") return Heuristic::mmesh;
  if (s == "cfh") return Heuristic::cfh;
  if (s == "areas") return Heuristic::areas;
  if (s == "none") return Heuristic::none;
  return std::nullopt;
}

struct BoundResult {
  Ratio bound;
  Heuristic heuristic = Heuristic::none;
};

// Best-case intersection of (left op right) with the activation mask.
constexpr std::int64_t estimate_intersection(Op op, std::int64_t ims_left, std::int64_t ims_right,
                                             std::int64_t m_card) {
  switch (op) {
    case Op::OR: return std::min(ims_left + ims_right, m_card);
    case Op::AND: return std::min({ims_left, ims_right, m_card});
    case Op::AND_NOT: return std::min({ims_left, m_card - ims_right, m_card});
  }
  return m_card;
}

// Worst-case (smallest) size of the label mask, floored at the intersection
// estimate so that the estimated outside-activation part stays non-negative.
constexpr std::int64_t estimate_label_mask(Op op, std::int64_t s_left, std::int64_t s_right, std::int64_t min_over,
                                           std::int64_t max_over, std::int64_t i_hat) {
  switch (op) {
    case Op::OR: return std::max({s_left, s_right, s_left + s_right - max_over, i_hat});
    case Op::AND: return std::max(min_over, i_hat);
    case Op::AND_NOT: return std::max(s_left - max_over, i_hat);
  }
  return 0;
}

// What the bounds know about one side of a candidate on one sample.
struct SideStats {
  std::int64_t ims = 0;  // |M(x) & S(x, side)|
  std::int64_t card = 0; // |S(x, side)|
  Rect min_ext;
  Rect max_ext;
};

struct SampleEstimate {
  std::int64_t i_hat = 0;
  std::int64_t s_hat = 0;

  friend bool operator==(const SampleEstimate&, const SampleEstimate&) = default;
};

inline SampleEstimate estimate_sample(Heuristic h, Op op, std::int64_t m_card, std::int64_t grid_cells,
                                      const SideStats& left, const SideStats& right) {
  switch (h) {
    case Heuristic::mmesh: {
      const std::int64_t i_hat = estimate_intersection(op, left.ims, right.ims, m_card);
      const std::int64_t min_over = rect_overlap_area(left.min_ext, right.min_ext);
      const std::int64_t max_over = rect_overlap_area(left.max_ext, right.max_ext);
      return {i_hat, estimate_label_mask(op, left.card, right.card, min_over, max_over, i_hat)};
    }
    case Heuristic::cfh:
      return {estimate_intersection(op, left.ims, right.ims, m_card), 0};
    case Heuristic::areas: {
      std::int64_t i_hat = 0;
      switch (op) {
        case Op::OR: i_hat = std::min(left.card + right.card, m_card); break;
        case Op::AND: i_hat = std::min({left.card, right.card, m_card}); break;
        case Op::AND_NOT: i_hat = std::min({left.card, grid_cells - right.card, m_card}); break;
      }
      return {i_hat, 0};
    }
    case Heuristic::none:
      return {m_card, 0};
  }
  return {};
}

// Combines dataset sums into the bound. 0 when no intersection is possible,
// and never above 1 (IoU's maximum), which also covers a non-positive
// denominator.
inline Ratio combine_bound(Heuristic h, std::int64_t sum_m, std::int64_t sum_i_hat, std::int64_t sum_s_hat) {
  if (h == Heuristic::none) return Ratio::one();
  if (sum_i_hat <= 0) return Ratio::zero();
  const std::int64_t den = h == Heuristic::mmesh ? sum_m + sum_s_hat - sum_i_hat : sum_m - sum_i_hat;
  if (den <= 0 || sum_i_hat >= den) return Ratio::one();
  return {sum_i_hat, den};
}

// Dense form over explicit per-sample inputs. The search engine uses the
// sparse equivalent in search.hpp; this one serves direct callers.
inline BoundResult bound_from_samples(Heuristic h, Op op, std::int64_t grid_cells, std::span<const std::int64_t> m_cards,
                                      std::span<const SideStats> left, std::span<const SideStats> right) {
  if (m_cards.size() != left.size() || left.size() != right.size()) {
    throw std::invalid_argument("bound_from_samples: missing cache entries");
  }
  std::int64_t sum_m = 0;
  std::int64_t sum_i = 0;
  std::int64_t sum_s = 0;
  for (std::size_t x = 0; x < m_cards.size(); ++x) {
    const auto e = estimate_sample(h, op, m_cards[x], grid_cells, left[x], right[x]);
    sum_m += m_cards[x];
    sum_i += e.i_hat;
    sum_s += e.s_hat;
  }
  return {combine_bound(h, sum_m, sum_i, sum_s), h};
}

inline BoundResult mmesh_bound(Op op, std::int64_t grid_cells, std::span<const std::int64_t> m_cards,
                               std::span<const SideStats> left, std::span<const SideStats> right) {
  return bound_from_samples(Heuristic::mmesh, op, grid_cells, m_cards, left, right);
}
inline BoundResult cfh_bound(Op op, std::int64_t grid_cells, std::span<const std::int64_t> m_cards,
                             std::span<const SideStats> left, std::span<const SideStats> right) {
  return bound_from_samples(Heuristic::cfh, op, grid_cells, m_cards, left, right);
}
inline BoundResult areas_bound(Op op, std::int64_t grid_cells, std::span<const std::int64_t> m_cards,
                               std::span<const SideStats> left, std::span<const SideStats> right) {
  return bound_from_samples(Heuristic::areas, op, grid_cells, m_cards, left, right);
}

}  // namespace dissector
