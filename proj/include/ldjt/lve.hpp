#pragma once

// Lifted variable elimination kernel: shattering on constants, evidence
// absorption, lifted multiplication and sum-out, and a grounding fallback
// for eliminations whose lifting preconditions do not hold.

#include <optional>
#include <span>
#include <vector>

#include "ldjt/model.hpp"

namespace ldjt {

/// Thrown when a lifted operator's precondition fails. Callers recover by
/// grounding (see ground_eliminate).
class LiftingError : public Error {
 public:
  using Error::Error;
};

/// Operation counters shared by the jtree and temporal layers.
struct Counters {
  long messages = 0;
  long eliminations = 0;

  Counters& operator+=(const Counters& o) {
    messages += o.messages;
    eliminations += o.eliminations;
    return *this;
  }
  friend Counters operator-(Counters a, const Counters& b) {
    a.messages -= b.messages;
    a.eliminations -= b.eliminations;
    return a;
  }
  bool operator==(const Counters&) const = default;
};

namespace lve {

/// Substitutes a constant for every logvar whose allowed set is a
/// singleton, then puts atoms into canonical order (table permuted).
Parfactor canonical(Parfactor f);

/// Splits `f` so that every term is covered by a fully ground atom or not
/// covered at all. The union of groundings is unchanged.
std::vector<Parfactor> shatter(const Parfactor& f, std::span<const GroundTerm> terms);

/// Drops rows inconsistent with evidence on ground atoms and projects the
/// evidenced atoms out. Expects `f` shattered on the evidence terms.
Parfactor absorb_evidence(const Parfactor& f, std::span<const EvidenceEntry> evidence);

/// Shatter and absorb over a whole factor set. Factors reduced to a
/// positive constant are dropped.
std::vector<Parfactor> enter_evidence(std::span<const Parfactor> fs,
                                      std::span<const EvidenceEntry> evidence);

/// Lifted product. Logvars shared by `f` and `g` must carry identical
/// allowed sets and atoms of one PRV must be identical or disjoint;
/// otherwise throws LiftingError. A factor's potentials are raised to
/// 1/k where k counts groundings of the logvars it lacks.
Parfactor multiply(const Parfactor& f, const Parfactor& g);

/// Lifted sum-out of the single atom of `prv` in `f`. Requires the atom to
/// carry every logvar of `f`; the result is raised to the number of
/// groundings of logvars that no remaining atom uses.
Parfactor sum_out(const Parfactor& f, PrvId prv);
Parfactor sum_out_atom(const Parfactor& f, std::size_t atom);

/// Which atoms survive an elimination: all instances of `prvs`, plus the
/// single ground `term` if set.
struct Keep {
  std::vector<PrvId> prvs;  // sorted
  std::optional<GroundTerm> term;

  bool keeps(const Atom& a) const;
};

/// Grounds the factors mentioning a non-kept instance of `prv` and sums
/// those instances out one ground variable at a time.
std::vector<Parfactor> ground_eliminate(std::vector<Parfactor> fs, PrvId prv,
                                        const Keep& keep = {}, Counters* counters = nullptr);

/// Scales the table so that its maximum is 1. Throws InconsistentEvidence
/// on an all-zero table.
Parfactor normalize_msg(Parfactor f);

/// Eliminates every non-kept atom, lifted where possible. Terms in
/// `keep.term` must already be shattered out.
std::vector<Parfactor> eliminate(std::vector<Parfactor> fs, const Keep& keep,
                                 Counters* counters = nullptr);

/// Marginal of a ground term over the product of `fs`.
Distribution marginal(std::span<const Parfactor> fs, const GroundTerm& term,
                      const Vocabulary& vocab, Counters* counters = nullptr);

/// Ground product of `fs` as a single factor over all ground atoms, for
/// tests and for collapsing interface messages.
Parfactor ground_product(std::span<const Parfactor> fs);

/// Renames PRVs according to `map` (ids absent from the map stay).
Parfactor rename(Parfactor f, std::span<const std::pair<PrvId, PrvId>> map);

}  // namespace lve
}  // namespace ldjt
