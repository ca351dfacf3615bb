// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Everything runs on generated synthetic data.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dissector/dissector.hpp"
#include "dissector/synthetic.hpp"
#include "oracle/naive.hpp"

using namespace dissector;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr Heuristic kBounded[] = {Heuristic::mmesh, Heuristic::cfh, Heuristic::areas};

// Up to three ranges per instance from 3-way clustering of neuron 0.
std::vector<Interval> instance_intervals(const Bundle& b, std::uint64_t seed) {
  const ThresholdSet ts = threshold_set(b.acts, 0, 3, seed);
  return ts.intervals;
}

using OrderKey = std::vector<std::uint32_t>;

// ----------------------------------------------------------------- 1 and 2

struct AdmissibilityStats {
  std::int64_t checked = 0;
  std::int64_t violations = 0;
  std::int64_t pruned_checked = 0;
  std::int64_t beam_mismatches = 0;
  std::int64_t best_mismatches = 0;
  std::int64_t beam_runs = 0;
};

bool same_beams(const SearchResult& a, const SearchResult& b) {
  if (a.beams.size() != b.beams.size()) return false;
  for (std::size_t i = 0; i < a.beams.size(); ++i) {
    if (a.beams[i].size() != b.beams[i].size()) return false;
    for (std::size_t j = 0; j < a.beams[i].size(); ++j) {
      if (!(a.beams[i][j].formula == b.beams[i][j].formula) || !a.beams[i][j].iou.identical(b.beams[i][j].iou)) {
        return false;
      }
    }
  }
  return true;
}

AdmissibilityStats run_admissibility(std::size_t n_instances, std::size_t n_beam_instances) {
  AdmissibilityStats st;
  const SearchConfig base;
  for (std::size_t i = 0; i < n_instances; ++i) {
    const Bundle b = synthetic::random_instance(1000 + i);
    for (const Interval& iv : instance_intervals(b, i)) {
      const IntervalSearch search(b.masks, b.acts, 0, iv);
      // Exhaustive pass: exact IoU of every generated candidate.
      std::map<OrderKey, Ratio> exact_of;
      SearchConfig cfg = base;
      cfg.heuristic = Heuristic::none;
      const SearchResult ref = search.beam_search(cfg, [&](const CandidateEvent& e) {
        exact_of.emplace(formula_order_key(*e.formula), *e.exact);
      });
      for (Heuristic h : kBounded) {
        cfg.heuristic = h;
        const SearchResult r = search.beam_search(cfg, [&](const CandidateEvent& e) {
          Ratio exact;
          if (e.exact) {
            exact = *e.exact;
          } else {
            const auto it = exact_of.find(formula_order_key(*e.formula));
            exact = it != exact_of.end() ? it->second : exact_iou(*e.formula, b.acts, 0, iv, b.masks);
            ++st.pruned_checked;
          }
          ++st.checked;
          if (e.bound < exact) ++st.violations;
        });
        if (i < n_beam_instances) {
          ++st.beam_runs;
          if (!same_beams(r, ref)) ++st.beam_mismatches;
          if (!r.best.iou.identical(ref.best.iou) || !(r.best.formula == ref.best.formula)) ++st.best_mismatches;
        }
      }
    }
  }
  return st;
}

// ----------------------------------------------------------------- 3

Outcome visited_trend(std::size_t n_instances) {
  const auto corpus = synthetic::benchmark_corpus(n_instances, 424242);
  std::size_t ordered = 0;
  long double sum[4] = {0, 0, 0, 0};
  constexpr Heuristic kOrder[] = {Heuristic::none, Heuristic::areas, Heuristic::cfh, Heuristic::mmesh};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Bundle& b = corpus[i];
    std::int64_t visited[4] = {0, 0, 0, 0};
    std::int64_t jobs = 0;
    for (std::size_t n = 0; n < b.acts.n_neurons(); ++n) {
      for (const Interval& iv : threshold_set(b.acts, n, 3, i).intervals) {
        const IntervalSearch search(b.masks, b.acts, n, iv);
        ++jobs;
        for (std::size_t h = 0; h < 4; ++h) {
          SearchConfig cfg;
          cfg.heuristic = kOrder[h];
          visited[h] += search.beam_search(cfg).visited;
        }
      }
    }
    if (visited[0] > visited[1] && visited[1] > visited[2] && visited[2] > visited[3]) ++ordered;
    for (std::size_t h = 0; h < 4; ++h) sum[h] += static_cast<long double>(visited[h]) / std::max<std::int64_t>(jobs, 1);
  }
  const double frac = static_cast<double>(ordered) / static_cast<double>(corpus.size());
  const double ratio = static_cast<double>(sum[3] / sum[0]);
  std::ostringstream d;
  d << "ordered on " << ordered << "/" << corpus.size() << " instances; mean visited none="
    << static_cast<double>(sum[0] / corpus.size()) << " areas=" << static_cast<double>(sum[1] / corpus.size())
    << " cfh=" << static_cast<double>(sum[2] / corpus.size()) << " mmesh=" << static_cast<double>(sum[3] / corpus.size())
    << "; mmesh/none=" << ratio;
  return {frac >= 0.95 && ratio <= 0.1, d.str()};
}

// ----------------------------------------------------------------- 4

Formula random_formula(std::mt19937_64& rng, std::size_t n_concepts) {
  std::uniform_int_distribution<int> pick_concept(1, static_cast<int>(n_concepts));
  std::uniform_int_distribution<int> arity(1, 3);
  std::uniform_int_distribution<int> op(0, 2);
  Formula f(static_cast<ConceptId>(pick_concept(rng)));
  const int a = arity(rng);
  for (int k = 1; k < a; ++k) f.tail.push_back({kAllOps[op(rng)], static_cast<ConceptId>(pick_concept(rng))});
  return f;
}

Interval random_interval(std::mt19937_64& rng, const ActivationStore& acts) {
  const auto values = acts.neuron_values(0);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  double a = values[pick(rng)];
  double c = values[pick(rng)];
  if (a > c) std::swap(a, c);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: return {a, kInf, 1};
    case 1: return {a, c, 1};
    case 2: return {c + 1.0, kInf, 1};  // usually empty
    default: return {a, a, 1};
  }
}

Outcome oracle_equivalence(std::size_t n_probes) {
  std::mt19937_64 rng(97);
  std::size_t mismatches = 0;
  for (std::size_t p = 0; p < n_probes; ++p) {
    synthetic::InstanceSpec spec;
    spec.kind = p % 2 == 0 ? LayerKind::relu : LayerKind::signed_values;
    const Bundle b = synthetic::random_instance(5000 + p, spec);
    const Formula f = random_formula(rng, b.catalog.size());
    const Interval iv = random_interval(rng, b.acts);
    const auto counts = oracle::per_sample(b, 0, iv.lo, iv.hi, f);
    const auto ov = sample_overlaps(f, b.acts, 0, iv, b.masks);
    bool ok = oracle::same_ratio(exact_iou(f, b.acts, 0, iv, b.masks), oracle::iou(counts));
    ok = ok && oracle::same_ratio(iou_metric(ov).value, oracle::iou(counts));
    ok = ok && oracle::same_ratio(det_acc(ov).value, oracle::det_acc(counts));
    ok = ok && oracle::same_ratio(sample_cov(ov).value, oracle::sample_cov(counts));
    ok = ok && oracle::same_ratio(act_cov(ov).value, oracle::act_cov(counts));
    ok = ok && oracle::same_ratio(expl_cov(ov).value, oracle::expl_cov(counts));
    if (!ok) ++mismatches;
  }
  return {mismatches == 0, std::to_string(n_probes) + " probes, " + std::to_string(mismatches) + " mismatches"};
}

// ----------------------------------------------------------------- 5

// Function identity computed by brute-force evaluation over explicit
// assignments: the atoms whose flip can change the output, plus the table
// over those atoms.
std::pair<std::vector<ConceptId>, std::vector<bool>> naive_function(const Formula& f) {
  std::vector<ConceptId> atoms = f.terms();
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  auto eval = [&](const std::map<ConceptId, bool>& v) {
    bool r = v.at(f.head);
    for (const auto& t : f.tail) {
      const bool x = v.at(t.id);
      r = t.op == Op::OR ? (r || x) : t.op == Op::AND ? (r && x) : (r && !x);
    }
    return r;
  };
  auto assignment = [&](std::uint64_t row, const std::vector<ConceptId>& over) {
    std::map<ConceptId, bool> v;
    for (ConceptId a : atoms) v[a] = false;
    for (std::size_t i = 0; i < over.size(); ++i) v[over[i]] = ((row >> i) & 1U) != 0;
    return v;
  };
  std::vector<ConceptId> essential;
  for (ConceptId a : atoms) {
    bool matters = false;
    for (std::uint64_t row = 0; row < (std::uint64_t{1} << atoms.size()) && !matters; ++row) {
      auto v = assignment(row, atoms);
      const bool before = eval(v);
      v[a] = !v[a];
      matters = eval(v) != before;
    }
    if (matters) essential.push_back(a);
  }
  std::vector<bool> table;
  for (std::uint64_t row = 0; row < (std::uint64_t{1} << essential.size()); ++row) {
    table.push_back(eval(assignment(row, essential)));
  }
  return {essential, table};
}

struct NaiveScored {
  Formula formula;
  oracle::Pair iou;
};

bool naive_better(const NaiveScored& a, const NaiveScored& b) {
  const __int128 l = static_cast<__int128>(a.iou.num) * std::max<std::int64_t>(b.iou.den, 1);
  const __int128 r = static_cast<__int128>(b.iou.num) * std::max<std::int64_t>(a.iou.den, 1);
  if (l != r) return l > r;
  return compare_formulas(a.formula, b.formula) < 0;
}

oracle::Pair naive_iou(const Bundle& b, std::size_t neuron, const Interval& iv, const Formula& f) {
  oracle::Pair p = oracle::iou(oracle::per_sample(b, neuron, iv.lo, iv.hi, f));
  if (p.den == 0) p = {0, 1};
  return p;
}

// Cell-level beam search over IoU: every concept present in the dataset is
// scored, the best b_first seed the beam, and each later step scores every
// extension (dropping functions already generated) and keeps the best b_rest.
std::vector<std::vector<NaiveScored>> naive_beam_search(const Bundle& b, std::size_t neuron, const Interval& iv,
                                                        const SearchConfig& cfg) {
  std::vector<ConceptId> universe;
  for (ConceptId c = 1; c <= b.catalog.size(); ++c) {
    if (!b.masks.samples_with(c).empty()) universe.push_back(c);
  }
  std::set<std::pair<std::vector<ConceptId>, std::vector<bool>>> seen;
  std::vector<NaiveScored> beam;
  for (ConceptId c : universe) {
    seen.insert(naive_function(Formula(c)));
    beam.push_back({Formula(c), naive_iou(b, neuron, iv, Formula(c))});
  }
  std::sort(beam.begin(), beam.end(), naive_better);
  if (beam.size() > cfg.b_first) beam.resize(cfg.b_first);
  std::vector<std::vector<NaiveScored>> beams{beam};
  for (std::size_t arity = 2; arity <= cfg.max_len && !beam.empty(); ++arity) {
    std::vector<NaiveScored> next;
    for (const auto& label : beam) {
      for (ConceptId t : universe) {
        for (Op op : kAllOps) {
          Formula f = label.formula.extended(op, t);
          if (!seen.insert(naive_function(f)).second) continue;
          next.push_back({f, naive_iou(b, neuron, iv, f)});
        }
      }
    }
    std::sort(next.begin(), next.end(), naive_better);
    if (next.size() > cfg.b_rest) next.resize(cfg.b_rest);
    beam = next;
    beams.push_back(beam);
  }
  return beams;
}

Outcome reduction_modes(std::size_t n_netdissect, std::size_t n_coex) {
  std::size_t nd_fail = 0;
  for (std::size_t i = 0; i < n_netdissect; ++i) {
    const Bundle b = synthetic::random_instance(7000 + i);
    SearchConfig cfg;
    cfg.max_len = 1;
    const Interval iv{top_quantile_threshold(b.acts.neuron_values(0), kCoexQuantile), kInf, 1};
    const auto rec = explain_interval(b, 0, iv, cfg);
    // Oracle: argmax of per-concept IoU, ties to the smallest id.
    ConceptId best = 1;
    oracle::Pair best_iou = naive_iou(b, 0, iv, Formula(1));
    for (ConceptId c = 2; c <= b.catalog.size(); ++c) {
      const oracle::Pair p = naive_iou(b, 0, iv, Formula(c));
      if (static_cast<__int128>(p.num) * best_iou.den > static_cast<__int128>(best_iou.num) * p.den) {
        best = c;
        best_iou = p;
      }
    }
    if (rec.formula != Formula(best) || !oracle::same_ratio(rec.iou, best_iou)) ++nd_fail;
  }

  std::size_t coex_fail = 0;
  for (std::size_t i = 0; i < n_coex; ++i) {
    synthetic::InstanceSpec spec;
    spec.min_concepts = 12;
    spec.max_concepts = 16;
    spec.min_samples = 20;
    spec.max_samples = 30;
    const Bundle b = synthetic::random_instance(8000 + i, spec);
    const SearchConfig cfg;
    ThresholdOptions topts;
    topts.coex_compat = true;
    const auto run = clustered_explain(b, 0, 5, cfg, i, topts);
    const Interval iv{top_quantile_threshold(b.acts.neuron_values(0), kCoexQuantile), kInf, 1};
    bool ok = run.records.size() == 1 && run.records[0].interval == iv;
    const auto naive = naive_beam_search(b, 0, iv, cfg);
    NaiveScored naive_best = naive[0][0];
    for (const auto& beam : naive) {
      if (!beam.empty() && naive_better(beam.front(), naive_best)) naive_best = beam.front();
    }
    if (ok) {
      const auto& rec = run.records[0];
      ok = rec.formula == naive_best.formula && oracle::same_ratio(rec.iou, naive_best.iou);
      const IntervalSearch search(b.masks, b.acts, 0, iv);
      const SearchResult full = search.beam_search(cfg);
      ok = ok && full.beams.size() == naive.size();
      for (std::size_t a = 0; ok && a < naive.size(); ++a) {
        ok = full.beams[a].size() == naive[a].size();
        for (std::size_t j = 0; ok && j < naive[a].size(); ++j) {
          ok = full.beams[a][j].formula == naive[a][j].formula && oracle::same_ratio(full.beams[a][j].iou, naive[a][j].iou);
        }
      }
    }
    if (!ok) ++coex_fail;
  }
  std::ostringstream d;
  d << "NetDissect mode " << n_netdissect - nd_fail << "/" << n_netdissect << " exact; CoEx mode "
    << n_coex - coex_fail << "/" << n_coex << " exact (beams and best)";
  return {nd_fail == 0 && coex_fail == 0, d.str()};
}

// ----------------------------------------------------------------- 6

Outcome geometry(std::size_t n_masks) {
  std::mt19937_64 rng(606);
  std::size_t fail = 0;
  for (std::size_t i = 0; i < n_masks; ++i) {
    const int h = std::uniform_int_distribution<int>(1, 12)(rng);
    const int w = std::uniform_int_distribution<int>(1, 12)(rng);
    const double density = std::uniform_real_distribution<double>(0.2, 0.95)(rng);
    BitMask m(h, w);
    oracle::Grid g(static_cast<std::size_t>(h), std::vector<int>(static_cast<std::size_t>(w), 0));
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (std::bernoulli_distribution(density)(rng)) {
          m.set(r, c);
          g[r][c] = 1;
        }
      }
    }
    const Rect rect = largest_inscribed_rect(m);
    bool ok = rect.area() == oracle::brute_force_rect_area(g);
    for (int r = rect.r0; ok && !rect.is_empty() && r <= rect.r1; ++r) {
      for (int c = rect.c0; c <= rect.c1; ++c) ok = ok && g[r][c] == 1;
    }
    if (!ok) ++fail;
  }
  return {fail == 0, std::to_string(n_masks) + " masks, " + std::to_string(fail) + " mismatches"};
}

// ----------------------------------------------------------------- 7

Outcome clustering(std::size_t n_cases, std::size_t n_fixtures) {
  std::mt19937_64 rng(707);
  std::size_t sse_fail = 0;
  for (std::size_t i = 0; i < n_cases; ++i) {
    const int n = std::uniform_int_distribution<int>(1, 60)(rng);
    const int k = std::uniform_int_distribution<int>(1, 5)(rng);
    const int range = i % 2 == 0 ? 12 : 1000;
    std::vector<std::int64_t> ints(static_cast<std::size_t>(n));
    for (auto& v : ints) v = std::uniform_int_distribution<int>(-range, range)(rng);
    const std::vector<double> values(ints.begin(), ints.end());
    const auto km = kmeans_1d(values, k, i);
    std::vector<std::vector<std::int64_t>> groups(km.clusters.size());
    bool ok = true;
    for (auto v : ints) {
      int hits = 0;
      for (std::size_t c = 0; c < km.clusters.size(); ++c) {
        if (static_cast<double>(v) >= km.clusters[c].lo && static_cast<double>(v) <= km.clusters[c].hi) {
          groups[c].push_back(v);
          ++hits;
        }
      }
      ok = ok && hits == 1;
    }
    const oracle::Frac ours = oracle::sse_exact(groups);
    const oracle::Frac best = oracle::best_contiguous_partition(ints, std::min(k, n));
    if (!ok || !oracle::frac_eq(ours, best)) ++sse_fail;
  }

  std::size_t cover_fail = 0;
  std::size_t sets = 0;
  auto check_set = [&](const ActivationStore& acts, std::size_t neuron, int k, std::uint64_t seed) {
    const ThresholdSet ts = threshold_set(acts, neuron, k, seed);
    ++sets;
    bool ok = true;
    for (std::size_t j = 1; j < ts.intervals.size(); ++j) ok = ok && ts.intervals[j - 1].hi < ts.intervals[j].lo;
    for (double v : clusterable_values(acts, neuron)) {
      int hits = 0;
      for (const auto& iv : ts.intervals) hits += iv.contains(v);
      ok = ok && hits == 1;
    }
    if (!ok) ++cover_fail;
  };
  for (std::size_t i = 0; i < n_fixtures; ++i) {
    synthetic::InstanceSpec spec;
    spec.kind = i % 2 == 0 ? LayerKind::relu : LayerKind::signed_values;
    const Bundle b = synthetic::random_instance(9000 + i, spec);
    check_set(b.acts, 0, 1 + static_cast<int>(i % 6), i);
    const auto p = synthetic::planted_instance(9500 + i);
    check_set(p.bundle.acts, 0, 2, i);
  }
  std::ostringstream d;
  d << n_cases << " SSE cases, " << sse_fail << " mismatches; " << sets << " threshold sets, " << cover_fail
    << " not disjoint/covering";
  return {sse_fail == 0 && cover_fail == 0, d.str()};
}

// ----------------------------------------------------------------- 8

Outcome planted(std::size_t n_seeds) {
  std::size_t recovered = 0;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto p = synthetic::planted_instance(s);
    const auto run = clustered_explain(p.bundle, 0, 2, SearchConfig{}, s);
    bool ok = run.records.size() == 2;
    if (ok) {
      ok = run.records[0].formula.head == p.low_concept && run.records[1].formula.head == p.high_concept;
    }
    recovered += ok;
  }
  return {recovered == n_seeds, std::to_string(recovered) + "/" + std::to_string(n_seeds) + " seeds recovered"};
}

// ----------------------------------------------------------------- 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("dissector_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  const std::string bundle = (dir / "bundle").string();
  bool ok = run({"gen-synthetic", "--out", bundle, "--seed", "17", "--n-neurons", "6", "--quiet"}) == 0;
  const std::vector<std::string> jobs = {"1", "4"};
  std::vector<std::vector<std::string>> outputs(jobs.size());
  for (std::size_t j = 0; ok && j < jobs.size(); ++j) {
    const fs::path d = dir / ("j" + jobs[j]);
    fs::create_directories(d);
    const std::vector<std::string> common = {"--bundle", bundle, "--seed", "5", "--jobs", jobs[j], "--quiet"};
    auto with = [&](std::vector<std::string> a) {
      a.insert(a.end(), common.begin(), common.end());
      return a;
    };
    ok = ok && run(with({"explain", "--out", (d / "r.jsonl").string()})) == 0;
    ok = ok && run(with({"cluster", "--out", (d / "c.jsonl").string()})) == 0;
    ok = ok && run(with({"compare-heuristics", "--n-cls", "2", "--out", (d / "h.csv").string()})) == 0;
    // Same input file for every job count: the results path is part of the config.
    ok = ok && run({"metrics", "--bundle", bundle, "--results", (dir / "j1" / "r.jsonl").string(), "--out",
                    (d / "q.csv").string(), "--jobs", jobs[j], "--quiet"}) == 0;
    ok = ok && run(with({"sweep-clusters", "--k-list", "1,2,3", "--out", (d / "k.csv").string()})) == 0;
    for (const char* name : {"r.jsonl", "r.csv", "c.jsonl", "h.csv", "q.csv", "k.csv"}) {
      outputs[j].push_back(slurp(d / name));
    }
  }
  std::size_t identical = 0;
  if (ok) {
    for (std::size_t f = 0; f < outputs[0].size(); ++f) identical += outputs[0][f] == outputs[1][f];
  }
  fs::remove_all(dir);
  const bool pass = ok && identical == outputs[0].size();
  return {pass, ok ? std::to_string(identical) + "/" + std::to_string(outputs[0].size()) +
                         " output files byte-identical across --jobs 1 and --jobs 4"
                   : "a CLI run failed"};
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
                s);
    std::fflush(stdout);
  };

  AdmissibilityStats adm;
  report(1, "admissibility", [&] {
    adm = run_admissibility(1000, 200);
    std::ostringstream d;
    d << adm.checked << " candidates checked (" << adm.pruned_checked << " pruned), " << adm.violations
      << " violations";
    return Outcome{adm.violations == 0 && adm.checked > 0, d.str()};
  });
  report(2, "beam optimality", [&] {
    std::ostringstream d;
    d << adm.beam_runs << " heuristic runs on 200 instances, " << adm.beam_mismatches << " beam mismatches, "
      << adm.best_mismatches << " best mismatches";
    return Outcome{adm.beam_runs > 0 && adm.beam_mismatches == 0 && adm.best_mismatches == 0, d.str()};
  });
  report(3, "visited-state trend", [] { return visited_trend(100); });
  report(4, "oracle equivalence", [] { return oracle_equivalence(500); });
  report(5, "reduction modes", [] { return reduction_modes(100, 20); });
  report(6, "geometry oracle", [] { return geometry(1000); });
  report(7, "clustering", [] { return clustering(1000, 200); });
  report(8, "planted recovery", [] { return planted(50); });
  report(9, "determinism", [] { return determinism(); });
  return all ? 0 : 1;
}
