#pragma once
// Left-deep logical labels over concepts, their mask semantics, and
// boolean-function equivalence.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dissector/bitmask.hpp"
#include "dissector/interchange.hpp"

namespace dissector {

enum class Op : std::uint8_t { OR = 0, AND = 1, AND_NOT = 2 };

inline constexpr Op kAllOps[] = {Op::OR, Op::AND, Op::AND_NOT};

inline std::string_view to_string(Op op) {
  switch (op) {
    case Op::OR: return "OR";
    case Op::AND: return "AND";
    case Op::AND_NOT: return "AND NOT";
  }
  return "?";
}

inline std::optional<Op> parse_op(std::string_view s) {
  if (s == "OR") return Op::OR;
  if (s == "AND") return Op::AND;
  if (s == "AND NOT" || s == "AND_NOT") return Op::AND_NOT;
  return std::nullopt;
}

struct Term {
  Op op = Op::OR;
  ConceptId id = 0;

  friend bool operator==(const Term&, const Term&) = default;
};

// head op1 t1 op2 t2 ... evaluated left to right: ((head op1 t1) op2 t2) ...
struct Formula {
  ConceptId head = 0;
  std::vector<Term> tail;

  Formula() = default;
  explicit Formula(ConceptId h) : head(h) {}
  Formula(ConceptId h, std::vector<Term> t) : head(h), tail(std::move(t)) {}

  std::size_t arity() const { return 1 + tail.size(); }

  Formula extended(Op op, ConceptId t) const {
    Formula f = *this;
    f.tail.push_back({op, t});
    return f;
  }

  // The left sub-label of the given arity (1 <= k <= arity()).
  Formula prefix(std::size_t k) const {
    if (k == 0 || k > arity()) throw std::out_of_range("prefix arity out of range");
    return Formula(head, std::vector<Term>(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(k - 1)));
  }

  std::vector<ConceptId> terms() const {
    std::vector<ConceptId> out{head};
    for (const auto& t : tail) out.push_back(t.id);
    return out;
  }

  friend bool operator==(const Formula&, const Formula&) = default;
};

inline void validate(const Formula& f, const ConceptCatalog& catalog, std::size_t max_arity) {
  if (f.arity() > max_arity) throw std::invalid_argument("formula arity exceeds maximum");
  for (ConceptId id : f.terms()) {
    if (!catalog.contains(id)) throw std::out_of_range("formula references unknown concept " + std::to_string(id));
  }
}

inline std::string format_formula(const Formula& f, const ConceptCatalog& catalog) {
  std::string s = catalog.at(f.head).name;
  for (std::size_t i = 0; i < f.tail.size(); ++i) {
    if (i > 0) s = "(" + s + ")";
    s += ' ';
    s += to_string(f.tail[i].op);
    s += ' ';
    s += catalog.at(f.tail[i].id).name;
  }
  return s;
}

// Word-level application of one connective: dst = dst op rhs.
inline void apply_op(std::span<std::uint64_t> dst, std::span<const std::uint64_t> rhs, Op op) {
  switch (op) {
    case Op::OR:
      if (rhs.empty()) return;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] |= rhs[i];
      return;
    case Op::AND:
      if (rhs.empty()) {
        std::fill(dst.begin(), dst.end(), 0);
        return;
      }
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] &= rhs[i];
      return;
    case Op::AND_NOT:
      if (rhs.empty()) return;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] &= ~rhs[i];
      return;
  }
}

// S(x, f): left fold of the connectives over the stored concept masks.
inline BitMask formula_mask(std::size_t sample, const Formula& f, const SampleMaskStore& store) {
  BitMask m = store.mask(sample, f.head);
  for (const auto& t : f.tail) apply_op(m.words(), store.words(sample, t.id), t.op);
  return m;
}

// ---------------------------------------------------------------------------
// Boolean-function view

inline bool eval_assignment(const Formula& f, std::span<const ConceptId> atoms, std::uint64_t assignment) {
  auto value_of = [&](ConceptId id) {
    const auto pos = static_cast<std::size_t>(std::lower_bound(atoms.begin(), atoms.end(), id) - atoms.begin());
    return ((assignment >> pos) & 1U) != 0;
  };
  bool v = value_of(f.head);
  for (const auto& t : f.tail) {
    const bool r = value_of(t.id);
    switch (t.op) {
      case Op::OR: v = v || r; break;
      case Op::AND: v = v && r; break;
      case Op::AND_NOT: v = v && !r; break;
    }
  }
  return v;
}

inline constexpr std::size_t kMaxTruthTableAtoms = 20;

// Truth table of f over the given sorted atom list (bit i of the row index
// is the value of atoms[i]).
inline std::vector<bool> truth_table(const Formula& f, std::span<const ConceptId> atoms) {
  if (atoms.size() > kMaxTruthTableAtoms) throw std::invalid_argument("too many atoms for a truth table");
  const std::uint64_t rows = std::uint64_t{1} << atoms.size();
  std::vector<bool> table(rows);
  for (std::uint64_t a = 0; a < rows; ++a) table[a] = eval_assignment(f, atoms, a);
  return table;
}

inline std::vector<ConceptId> sorted_atoms(const Formula& f) {
  auto atoms = f.terms();
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  return atoms;
}

// Same boolean function of the union of their atoms.
inline bool formulas_equivalent(const Formula& f, const Formula& g) {
  auto atoms = f.terms();
  auto more = g.terms();
  atoms.insert(atoms.end(), more.begin(), more.end());
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  return truth_table(f, atoms) == truth_table(g, atoms);
}

// Canonical identity of the boolean function a formula denotes: the atoms
// it actually depends on plus its truth table over them. Two formulas are
// equivalent iff their keys are equal.
struct FunctionKey {
  std::vector<ConceptId> essential;
  std::vector<bool> table;

  friend bool operator==(const FunctionKey&, const FunctionKey&) = default;
};

struct FunctionKeyHash {
  std::size_t operator()(const FunctionKey& k) const {
    std::size_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    for (ConceptId id : k.essential) mix(id);
    mix(0xFFFFFFFFULL);
    std::uint64_t chunk = 0;
    for (std::size_t i = 0; i < k.table.size(); ++i) {
      chunk = (chunk << 1) | static_cast<std::uint64_t>(k.table[i]);
      if ((i & 63) == 63) {
        mix(chunk);
        chunk = 0;
      }
    }
    mix(chunk);
    return h;
  }
};

inline FunctionKey function_key(const Formula& f) {
  std::vector<ConceptId> atoms = sorted_atoms(f);
  std::vector<bool> table = truth_table(f, atoms);
  // Drop atoms the function does not depend on, projecting the table.
  for (std::size_t i = atoms.size(); i-- > 0;) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    bool depends = false;
    for (std::uint64_t row = 0; row < table.size() && !depends; ++row) {
      if ((row & bit) == 0 && table[row] != table[row | bit]) depends = true;
    }
    if (depends) continue;
    std::vector<bool> projected(table.size() / 2);
    const std::uint64_t low = bit - 1;
    for (std::uint64_t row = 0; row < projected.size(); ++row) {
      projected[row] = table[(row & low) | ((row & ~low) << 1)];
    }
    table = std::move(projected);
    atoms.erase(atoms.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return {std::move(atoms), std::move(table)};
}

// ---------------------------------------------------------------------------
// Deterministic ordering for tie-breaks

// Representative with term ids sorted inside each run of a repeated
// connective (the head joins a leading OR/AND run; AND NOT runs permute
// their right-hand terms only).
inline Formula canonical_form(const Formula& f) {
  std::vector<ConceptId> terms = f.terms();
  std::size_t i = 0;
  while (i < f.tail.size()) {
    std::size_t j = i;
    while (j + 1 < f.tail.size() && f.tail[j + 1].op == f.tail[i].op) ++j;
    // tail positions i..j correspond to terms i+1..j+1
    std::size_t first = i + 1;
    if (i == 0 && f.tail[i].op != Op::AND_NOT) first = 0;
    std::sort(terms.begin() + static_cast<std::ptrdiff_t>(first), terms.begin() + static_cast<std::ptrdiff_t>(j + 2));
    i = j + 1;
  }
  Formula out(terms[0]);
  for (std::size_t k = 0; k < f.tail.size(); ++k) out.tail.push_back({f.tail[k].op, terms[k + 1]});
  return out;
}

// Sort key realising the tie-break order: arity, then canonical term ids,
// then connective codes. Keys of non-equivalent formulas differ.
inline std::vector<std::uint32_t> formula_order_key(const Formula& f) {
  const Formula c = canonical_form(f);
  std::vector<std::uint32_t> key;
  key.reserve(2 * f.arity());
  key.push_back(static_cast<std::uint32_t>(f.arity()));
  key.push_back(c.head);
  for (const auto& t : c.tail) key.push_back(t.id);
  for (const auto& t : c.tail) key.push_back(static_cast<std::uint32_t>(t.op));
  return key;
}

// Shorter arity first, then canonical term ids, then connective codes.
inline std::strong_ordering compare_formulas(const Formula& a, const Formula& b) {
  const auto ka = formula_order_key(a);
  const auto kb = formula_order_key(b);
  return std::lexicographical_compare_three_way(ka.begin(), ka.end(), kb.begin(), kb.end());
}

}  // namespace dissector
