#pragma once

// Ground reference inference. Shares only the model types with the lifted
// engine: grounding, factor algebra and elimination are separate code.

#include <cstdint>
#include <span>
#include <vector>

#include "ldjt/model.hpp"

namespace ldjt {

struct GroundFactor {
  std::vector<int> vars;  // distinct, row-major with the last fastest
  std::vector<int> cards;
  std::vector<double> table;
};

struct GroundModel {
  std::vector<GroundTerm> vars;
  std::vector<int> cards;
  std::vector<GroundFactor> factors;

  int index(const GroundTerm& t) const;  // -1 when absent
};

GroundModel ground_model(const Model& m);

struct OracleOptions {
  std::uint64_t bound = std::uint64_t{1} << 24;  // joint assignments
};

/// Exhaustive enumeration. Throws Error when the unobserved assignment
/// space exceeds the bound and InconsistentEvidence when Z = 0.
Distribution oracle_marginal(const Model& m, const GroundTerm& q,
                             std::span<const EvidenceEntry> evidence, OracleOptions opt = {});

/// Z of the evidence-reduced model, by enumeration.
double oracle_partition(const Model& m, std::span<const EvidenceEntry> evidence,
                        OracleOptions opt = {});

/// Sum-product elimination of one ground variable.
std::vector<GroundFactor> oracle_eliminate(std::vector<GroundFactor> fs, int var);

/// Ground variable elimination in min-degree order.
Distribution ve_marginal(const Model& m, const GroundTerm& q,
                         std::span<const EvidenceEntry> evidence);

/// P(q.term at q.target | E_{0:q.issued}) on unroll(d, max(issued, target)).
/// Enumerates when within the bound, otherwise falls back to ground VE.
Distribution oracle_temporal(const DynamicModel& d, const TemporalQuery& q, const Evidence& e,
                             OracleOptions opt = {});

}  // namespace ldjt
