#pragma once
// Explanation search for one (neuron, activation range): exhaustive atomic
// scoring, beam search over left-deep labels with lazy exact evaluation
// under an admissible bound, and the clustered driver over all ranges.
//
// Exact scores and bounds for a candidate (L op t) are accumulated sparsely:
// on samples where t is absent the result only depends on L, so those
// contributions are summed once per beam label and corrected on the samples
// listed by SampleMaskStore::samples_with(t).

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "dissector/bitmask.hpp"
#include "dissector/formula.hpp"
#include "dissector/heuristics.hpp"
#include "dissector/interchange.hpp"
#include "dissector/rational.hpp"
#include "dissector/thresholds.hpp"

namespace dissector {

struct SearchConfig {
  Heuristic heuristic = Heuristic::mmesh;
  std::size_t b_first = 10;
  std::size_t b_rest = 5;
  std::size_t max_len = 3;
};

struct ScoredFormula {
  Formula formula;
  Ratio iou;
  std::vector<std::uint32_t> key;  // formula_order_key(formula)

  ScoredFormula() = default;
  ScoredFormula(Formula f, Ratio r) : formula(std::move(f)), iou(r), key(formula_order_key(formula)) {}
  ScoredFormula(Formula f, Ratio r, std::vector<std::uint32_t> k)
      : formula(std::move(f)), iou(r), key(std::move(k)) {}
};

// Higher IoU first; ties by shorter arity, then canonical form.
inline bool ranks_before(const ScoredFormula& a, const ScoredFormula& b) {
  if (a.iou != b.iou) return a.iou > b.iou;
  return a.key < b.key;
}

// Reported for every candidate of arity >= 2 that survives deduplication.
struct CandidateEvent {
  std::size_t arity = 0;
  const Formula* formula = nullptr;
  Ratio bound;
  std::optional<Ratio> exact;  // absent when pruned by the bound
};
using SearchObserver = std::function<void(const CandidateEvent&)>;

struct SearchResult {
  ScoredFormula best;
  std::int64_t visited = 0;      // exact IoU evaluations
  std::int64_t candidates = 0;   // arity >= 2 candidates after dedup
  std::int64_t dedup_skips = 0;
  std::vector<std::vector<ScoredFormula>> beams;  // beams[i]: labels of arity i + 1
  std::vector<Ratio> atomic_iou;                  // indexed by concept id - 1
  bool empty_activation = false;                  // no cell falls in the range
};

// A label kept in the beam, with its exact per-sample masks and statistics.
struct BeamLabel {
  Formula formula;
  std::vector<std::uint64_t> words;  // n_samples * words_per_mask
  std::vector<SideStats> stats;      // per sample
  std::int64_t sum_ims = 0;
  std::int64_t sum_card = 0;
  // Per heuristic and connective: summed estimates with the right side absent.
  std::array<std::array<SampleEstimate, 3>, 4> baseline{};
};

class IntervalSearch {
 public:
  IntervalSearch(const SampleMaskStore& masks, const ActivationStore& acts, std::size_t neuron, Interval interval)
      : masks_(masks), interval_(interval) {
    if (masks.grid_height() != acts.grid_height() || masks.grid_width() != acts.grid_width() ||
        masks.n_samples() != acts.n_samples()) {
      throw ConsistencyError("activation store does not match mask store");
    }
    if (neuron >= acts.n_neurons()) throw std::out_of_range("neuron index out of range");
    if (masks.n_concepts() == 0) throw std::invalid_argument("concept catalog is empty");
    const std::size_t n = masks.n_samples();
    wpm_ = masks.words_per_mask();
    act_words_.assign(n * wpm_, 0);
    m_card_.assign(n, 0);
    for (std::size_t x = 0; x < n; ++x) {
      const BitMask m = activation_mask(acts.grid(neuron, x), masks.grid_height(), masks.grid_width(), interval.lo,
                                        interval.hi);
      std::copy(m.words().begin(), m.words().end(), act_words_.begin() + static_cast<std::ptrdiff_t>(x * wpm_));
      m_card_[x] = m.popcount();
      total_m_ += m_card_[x];
    }
    ims_.resize(masks.n_concepts());
    for (ConceptId c = 1; c <= masks.n_concepts(); ++c) {
      const auto& xs = masks.samples_with(c);
      if (xs.empty()) continue;
      universe_.push_back(c);
      auto& ims = ims_[c - 1];
      ims.resize(xs.size());
      for (std::size_t k = 0; k < xs.size(); ++k) ims[k] = and_popcount(masks.words(xs[k], c), act(xs[k]));
    }
  }

  const Interval& interval() const { return interval_; }
  std::int64_t total_activation() const { return total_m_; }
  std::span<const std::int64_t> m_cards() const { return m_card_; }
  std::span<const std::uint64_t> act(std::size_t x) const { return {act_words_.data() + x * wpm_, wpm_}; }
  // Concepts with a non-empty mask somewhere in the dataset.
  const std::vector<ConceptId>& universe() const { return universe_; }
  // |IMS(x, c)| aligned with masks.samples_with(c).
  std::span<const std::int64_t> ims_atomic(ConceptId c) const { return ims_[c - 1]; }

  std::int64_t ims_atomic(std::size_t sample, ConceptId c) const {
    const auto& xs = masks_.samples_with(c);
    auto it = std::lower_bound(xs.begin(), xs.end(), static_cast<std::uint32_t>(sample));
    if (it == xs.end() || *it != sample) return 0;
    return ims_[c - 1][static_cast<std::size_t>(it - xs.begin())];
  }

  Ratio exact_atomic(ConceptId c) const {
    const std::int64_t inter = std::accumulate(ims_[c - 1].begin(), ims_[c - 1].end(), std::int64_t{0});
    const std::int64_t card = masks_.total_card(c);
    return Ratio::of(inter, total_m_ + card - inter);
  }

  BeamLabel materialize(const Formula& f) const {
    BeamLabel label;
    label.formula = f;
    const std::size_t n = masks_.n_samples();
    label.words.assign(n * wpm_, 0);
    label.stats.resize(n);
    for (std::size_t x = 0; x < n; ++x) {
      std::span<std::uint64_t> dst(label.words.data() + x * wpm_, wpm_);
      auto head = masks_.words(x, f.head);
      if (!head.empty()) std::copy(head.begin(), head.end(), dst.begin());
      for (const auto& t : f.tail) apply_op(dst, masks_.words(x, t.id), t.op);
      SideStats& s = label.stats[x];
      s.card = popcount_words(dst);
      if (s.card == 0) continue;
      s.ims = and_popcount(dst, act(x));
      const BitMask m(masks_.grid_height(), masks_.grid_width(), dst);
      s.min_ext = largest_inscribed_rect(m);
      s.max_ext = bounding_box(m);
      label.sum_ims += s.ims;
      label.sum_card += s.card;
    }
    const SideStats absent;
    for (Heuristic h : {Heuristic::mmesh, Heuristic::cfh, Heuristic::areas}) {
      for (Op op : kAllOps) {
        SampleEstimate sum;
        for (std::size_t x = 0; x < n; ++x) {
          const auto e = estimate_sample(h, op, m_card_[x], masks_.cells(), label.stats[x], absent);
          sum.i_hat += e.i_hat;
          sum.s_hat += e.s_hat;
        }
        label.baseline[static_cast<std::size_t>(h)][static_cast<std::size_t>(op)] = sum;
      }
    }
    return label;
  }

  // Bound on IoU(label op t).
  Ratio bound(Heuristic h, const BeamLabel& label, Op op, ConceptId t) const {
    if (h == Heuristic::none) return Ratio::one();
    SampleEstimate sum = label.baseline[static_cast<std::size_t>(h)][static_cast<std::size_t>(op)];
    const SideStats absent;
    const auto& xs = masks_.samples_with(t);
    const auto& ims = ims_[t - 1];
    const std::int64_t cells = masks_.cells();
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const std::size_t x = xs[k];
      const MaskMeta& meta = masks_.meta(x, t);
      const SideStats right{ims[k], meta.card, meta.min_ext, meta.max_ext};
      const auto with = estimate_sample(h, op, m_card_[x], cells, label.stats[x], right);
      const auto without = estimate_sample(h, op, m_card_[x], cells, label.stats[x], absent);
      sum.i_hat += with.i_hat - without.i_hat;
      sum.s_hat += with.s_hat - without.s_hat;
    }
    return combine_bound(h, total_m_, sum.i_hat, sum.s_hat);
  }

  // Exact IoU(label op t) over the dataset.
  Ratio exact(const BeamLabel& label, Op op, ConceptId t) const {
    std::int64_t inter = op == Op::AND ? 0 : label.sum_ims;
    std::int64_t card = op == Op::AND ? 0 : label.sum_card;
    const auto& xs = masks_.samples_with(t);
    for (std::uint32_t x : xs) {
      const std::uint64_t* l = label.words.data() + x * wpm_;
      const auto r = masks_.words(x, t);
      const auto m = act(x);
      std::int64_t i_x = 0;
      std::int64_t s_x = 0;
      for (std::size_t w = 0; w < wpm_; ++w) {
        std::uint64_t v = 0;
        switch (op) {
          case Op::OR: v = l[w] | r[w]; break;
          case Op::AND: v = l[w] & r[w]; break;
          case Op::AND_NOT: v = l[w] & ~r[w]; break;
        }
        i_x += std::popcount(v & m[w]);
        s_x += std::popcount(v);
      }
      if (op != Op::AND) {
        inter -= label.stats[x].ims;
        card -= label.stats[x].card;
      }
      inter += i_x;
      card += s_x;
    }
    return Ratio::of(inter, total_m_ + card - inter);
  }

  // Exact scores for every concept; concepts absent from the dataset score
  // 0 without an evaluation.
  SearchResult netdissect() const {
    SearchResult r;
    r.empty_activation = total_m_ == 0;
    r.atomic_iou.assign(masks_.n_concepts(), Ratio::zero());
    for (ConceptId c : universe_) {
      r.atomic_iou[c - 1] = exact_atomic(c);
      ++r.visited;
    }
    std::vector<ScoredFormula> all;
    for (ConceptId c = 1; c <= masks_.n_concepts(); ++c) all.emplace_back(Formula(c), r.atomic_iou[c - 1]);
    if (!all.empty()) r.best = *std::min_element(all.begin(), all.end(), ranks_before);
    return r;
  }

  SearchResult beam_search(const SearchConfig& cfg, const SearchObserver& observer = {}) const {
    if (cfg.max_len < 1 || cfg.b_first < 1 || cfg.b_rest < 1) throw std::invalid_argument("invalid search config");
    if (cfg.max_len > kMaxTruthTableAtoms) throw std::invalid_argument("max_len too large");
    SearchResult r = netdissect();

    std::unordered_set<FunctionKey, FunctionKeyHash> seen;
    std::vector<ScoredFormula> beam;
    for (ConceptId c : universe_) {
      seen.insert(function_key(Formula(c)));
      beam.emplace_back(Formula(c), r.atomic_iou[c - 1]);
    }
    std::sort(beam.begin(), beam.end(), ranks_before);
    if (beam.size() > cfg.b_first) beam.resize(cfg.b_first);
    r.beams.push_back(beam);
    if (!beam.empty()) r.best = beam.front();

    struct Candidate {
      std::size_t label;
      Op op;
      ConceptId term;
      Ratio bound;
      std::vector<std::uint32_t> key;
    };

    for (std::size_t arity = 2; arity <= cfg.max_len && !beam.empty(); ++arity) {
      std::vector<BeamLabel> labels;
      labels.reserve(beam.size());
      for (const auto& b : beam) labels.push_back(materialize(b.formula));

      std::vector<Candidate> cands;
      for (std::size_t li = 0; li < labels.size(); ++li) {
        for (ConceptId t : universe_) {
          for (Op op : kAllOps) {
            Formula f = labels[li].formula.extended(op, t);
            if (!seen.insert(function_key(f)).second) {
              ++r.dedup_skips;
              continue;
            }
            cands.push_back({li, op, t, bound(cfg.heuristic, labels[li], op, t), formula_order_key(f)});
          }
        }
      }
      r.candidates += static_cast<std::int64_t>(cands.size());
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.bound != b.bound) return a.bound > b.bound;
        return a.key < b.key;
      });

      std::vector<ScoredFormula> top;
      std::size_t next = 0;
      for (; next < cands.size(); ++next) {
        const Candidate& c = cands[next];
        if (cfg.heuristic != Heuristic::none && top.size() == cfg.b_rest) {
          const ScoredFormula& kth = top.back();
          // Stop once no remaining candidate can displace the current last entry.
          const bool may_enter = c.bound > kth.iou || (c.bound == kth.iou && c.key < kth.key);
          if (!may_enter) break;
        }
        const Ratio score = exact(labels[c.label], c.op, c.term);
        ++r.visited;
        ScoredFormula sf(labels[c.label].formula.extended(c.op, c.term), score, c.key);
        if (observer) observer({arity, &sf.formula, c.bound, score});
        if (top.size() < cfg.b_rest || ranks_before(sf, top.back())) {
          top.insert(std::upper_bound(top.begin(), top.end(), sf, ranks_before), std::move(sf));
          if (top.size() > cfg.b_rest) top.pop_back();
        }
      }
      if (observer) {
        for (; next < cands.size(); ++next) {
          const Candidate& c = cands[next];
          const Formula f = labels[c.label].formula.extended(c.op, c.term);
          observer({arity, &f, c.bound, std::nullopt});
        }
      }
      beam = std::move(top);
      r.beams.push_back(beam);
      if (!beam.empty() && ranks_before(beam.front(), r.best)) r.best = beam.front();
    }
    return r;
  }

 private:
  const SampleMaskStore& masks_;
  Interval interval_;
  std::size_t wpm_ = 0;
  std::vector<std::uint64_t> act_words_;
  std::vector<std::int64_t> m_card_;
  std::int64_t total_m_ = 0;
  std::vector<ConceptId> universe_;
  std::vector<std::vector<std::int64_t>> ims_;
};

struct VisitCounter {
  std::int64_t count = 0;
};

// IoU of f against M_[lo,hi] from scratch, summed over the dataset.
inline Ratio exact_iou(const Formula& f, const ActivationStore& acts, std::size_t neuron, const Interval& interval,
                       const SampleMaskStore& masks, VisitCounter* visits = nullptr) {
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (std::size_t x = 0; x < masks.n_samples(); ++x) {
    const BitMask s = formula_mask(x, f, masks);
    const BitMask m =
        activation_mask(acts.grid(neuron, x), masks.grid_height(), masks.grid_width(), interval.lo, interval.hi);
    inter += inter_card(m, s);
    uni += union_card(m, s);
  }
  if (visits != nullptr) ++visits->count;
  return Ratio::of(inter, uni);
}

struct ExplanationRecord {
  std::size_t neuron = 0;
  Interval interval;
  Formula formula;
  Ratio iou;
  std::int64_t visited = 0;
  std::int64_t candidates = 0;
  std::int64_t dedup_skips = 0;
  bool empty_activation = false;
  double wall_seconds = 0.0;
};

inline ExplanationRecord explain_interval(const SampleMaskStore& masks, const ActivationStore& acts,
                                          std::size_t neuron, const Interval& interval, const SearchConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const IntervalSearch search(masks, acts, neuron, interval);
  const SearchResult r = search.beam_search(cfg);
  ExplanationRecord rec;
  rec.neuron = neuron;
  rec.interval = interval;
  rec.formula = r.best.formula;
  rec.iou = r.best.iou;
  rec.visited = r.visited;
  rec.candidates = r.candidates;
  rec.dedup_skips = r.dedup_skips;
  rec.empty_activation = r.empty_activation;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

inline ExplanationRecord explain_interval(const Bundle& b, std::size_t neuron, const Interval& interval,
                                          const SearchConfig& cfg) {
  return explain_interval(b.masks, b.acts, neuron, interval, cfg);
}

struct ClusteredExplanation {
  ThresholdSet thresholds;
  std::vector<ExplanationRecord> records;  // by cluster ordinal, lowest first
  bool degenerate = false;
};

inline ClusteredExplanation clustered_explain(const SampleMaskStore& masks, const ActivationStore& acts,
                                              std::size_t neuron, int n_cls, const SearchConfig& cfg,
                                              std::uint64_t seed, const ThresholdOptions& opts = {}) {
  ClusteredExplanation out;
  out.thresholds = threshold_set(acts, neuron, n_cls, seed, opts);
  out.degenerate = out.thresholds.degenerate;
  for (const auto& iv : out.thresholds.intervals) out.records.push_back(explain_interval(masks, acts, neuron, iv, cfg));
  return out;
}

inline ClusteredExplanation clustered_explain(const Bundle& b, std::size_t neuron, int n_cls, const SearchConfig& cfg,
                                              std::uint64_t seed, const ThresholdOptions& opts = {}) {
  return clustered_explain(b.masks, b.acts, neuron, n_cls, cfg, seed, opts);
}

}  // namespace dissector
