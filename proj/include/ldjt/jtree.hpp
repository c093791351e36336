#pragma once

// First-order junction trees: construction from a moral graph over PRVs,
// the dynamic pair (J0, Jt) with interface labels, evidence entering and
// lifted message passing.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldjt/lve.hpp"
#include "ldjt/model.hpp"

namespace ldjt {

/// A message or interface payload: the product of its parfactors.
using Message = std::vector<Parfactor>;

struct Parcluster {
  int id = 0;
  std::vector<PrvId> prvs;  // sorted
  Constraint constraint;    // top over lv(prvs)
  std::vector<Parfactor> local;
  Message alpha;  // forward message from the previous step (in-cluster)
  Message beta;   // backward message from the next step (out-cluster)
  bool in = false;
  bool out = false;

  bool contains(PrvId p) const;
  /// local ∪ alpha ∪ beta, or without alpha.
  std::vector<Parfactor> model(bool with_alpha = true) const;
};

struct Separator {
  int a = 0;
  int b = 0;
  std::vector<PrvId> prvs;
};

struct FoJtree {
  VocabPtr vocab;
  std::vector<Parcluster> nodes;
  std::vector<Separator> edges;
  std::map<std::pair<int, int>, Message> messages;  // (from, to)
  std::vector<EvidenceEntry> observed;  // absorbed so far; answers point masses
  std::optional<int> step;
  bool normalize = true;  // scale each message to max 1

  std::vector<int> neighbors(int node) const;
  const Separator& separator(int a, int b) const;
  int in_cluster() const;   // -1 when unlabeled
  int out_cluster() const;
  /// Smallest parcluster holding `prv` (ties to the lower id), or -1.
  int locate(PrvId prv) const;
};

/// Slice -1 PRVs sharing a transition parfactor with a slice 0 PRV.
std::vector<PrvId> identify_interface(const DynamicModel& d);

/// Builds a jtree for `m`: min-fill elimination cliques over the PRV moral
/// graph, a maximum-separator spanning tree, then contraction of edges
/// whose endpoints each add a single PRV to the separator.
FoJtree construct_fojt(const Model& m);

struct DynamicJtrees {
  Model m0;  // G0 plus the interface parfactor
  Model mt;  // transition model as placed in Jt
  FoJtree j0;
  FoJtree jt;
  std::vector<PrvId> interface;  // slice -1
};

/// Throws UnsupportedModel when the interface is empty.
DynamicJtrees construct_dynamic(const DynamicModel& d);

/// Shatters and absorbs evidence in every local model; clears messages.
void enter_evidence(FoJtree& j, std::span<const EvidenceEntry> evidence);

/// Clears every message whose value depends on `node`'s local model.
void invalidate_from(FoJtree& j, int node);

enum class Pass { full, inbound, outbound };

/// full / inbound compute only missing messages; outbound recomputes every
/// message directed away from `root`, reusing those directed towards it.
void pass_messages(FoJtree& j, int root, Pass pass, Counters* counters = nullptr);

Message compute_message(const FoJtree& j, int from, int to, Counters* counters = nullptr);

/// Eliminates everything outside `keep` from a parcluster's model and the
/// messages it has received. Throws when an incoming message is missing.
Message cluster_eliminate(const FoJtree& j, int node, const lve::Keep& keep, bool with_alpha,
                          Counters* counters = nullptr);

/// Observed terms answer as point masses.
Distribution answer_at(const FoJtree& j, int node, const GroundTerm& q,
                       Counters* counters = nullptr);
/// Answers at locate(q.prv). Throws Error when the term is absent.
Distribution answer_query(const FoJtree& j, const GroundTerm& q, Counters* counters = nullptr);

/// Violations of the jtree properties with respect to `m`; empty when sound.
std::vector<std::string> check_properties(const FoJtree& j, const Model& m);

/// Node and edge list with separators and local-model names.
std::string export_graph(const FoJtree& j);

}  // namespace ldjt
