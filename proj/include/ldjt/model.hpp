#pragma once

// Lifted model types: logvars, PRVs, Cartesian constraints, parfactors,
// static and dynamic models, evidence and temporal queries.

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ldjt {

using LogvarId = int;
using PrvId = int;

/// Marks an atom argument that is bound to the parfactor's logvar rather
/// than fixed to a constant.
inline constexpr int kFree = -1;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line, int column);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModel : public Error {
 public:
  using Error::Error;
};

class InconsistentEvidence : public Error {
 public:
  using Error::Error;
};

struct Logvar {
  std::string name;
  std::vector<std::string> domain;

  /// Index of `constant` in the domain, or -1.
  int index_of(std::string_view constant) const;
};

/// A PRV declaration. `time` is empty for static models; dynamic models use
/// 0 for the current slice and -1 for the previous one, unrolled models use
/// absolute steps.
struct PrvDecl {
  std::string name;
  std::vector<LogvarId> params;
  std::vector<std::string> range;
  std::optional<int> time;
  int family = 0;  // declaration order of `name`, shared across slices

  int range_index(std::string_view value) const;
};

class Vocabulary {
 public:
  LogvarId add_logvar(Logvar lv);
  /// Adds a PRV or returns the existing id for (name, time). Throws
  /// ModelError when a reused name disagrees on params or range.
  PrvId add_prv(PrvDecl decl);

  const Logvar& logvar(LogvarId id) const { return logvars_.at(id); }
  const PrvDecl& prv(PrvId id) const { return prvs_.at(id); }
  std::size_t logvar_count() const { return logvars_.size(); }
  std::size_t prv_count() const { return prvs_.size(); }

  std::optional<LogvarId> find_logvar(std::string_view name) const;
  std::optional<PrvId> find_prv(std::string_view name,
                                std::optional<int> time) const;
  /// The same PRV in slice `time + delta`; throws when absent.
  PrvId shift(PrvId id, int delta) const;

  /// "User(X)" for static PRVs, "User@3(X)" / "User@t-1(X)" otherwise.
  std::string label(PrvId id, bool relative_time = false) const;

 private:
  std::vector<Logvar> logvars_;
  std::vector<PrvDecl> prvs_;
  std::map<std::string, int, std::less<>> families_;
};

using VocabPtr = std::shared_ptr<const Vocabulary>;

struct Arg {
  LogvarId logvar = 0;
  int constant = kFree;

  bool free() const { return constant == kFree; }
  auto operator<=>(const Arg&) const = default;
};

struct Atom {
  PrvId prv = 0;
  std::vector<Arg> args;
  int card = 2;  // |range(prv)|

  bool ground() const;
  auto operator<=>(const Atom&) const = default;
};

/// Cartesian constraint: one allowed constant set per free logvar.
class Constraint {
 public:
  using Cell = std::pair<LogvarId, std::vector<int>>;

  const std::vector<int>* allowed(LogvarId lv) const;
  void set(LogvarId lv, std::vector<int> allowed);
  void erase(LogvarId lv);
  bool has(LogvarId lv) const { return allowed(lv) != nullptr; }
  std::vector<LogvarId> logvars() const;
  const std::vector<Cell>& cells() const { return cells_; }
  std::size_t groundings() const;
  /// Number of groundings of the given logvar subset.
  std::size_t groundings(std::span<const LogvarId> lvs) const;

  bool operator==(const Constraint&) const = default;

 private:
  std::vector<Cell> cells_;  // sorted by logvar
};

/// φ(atoms) | constraint. The table is row-major over the atoms with the
/// last atom varying fastest.
struct Parfactor {
  std::string name;
  std::vector<Atom> atoms;
  Constraint constraint;
  std::vector<double> table;

  std::size_t size() const;
  std::vector<std::size_t> strides() const;
  std::vector<LogvarId> logvars() const;
  std::size_t groundings() const { return constraint.groundings(); }
  int find_atom(const Atom& a) const;
  bool mentions(PrvId prv) const;

  /// Throws ModelError when a structural invariant is broken.
  void validate() const;
};

struct GroundTerm {
  PrvId prv = 0;
  std::vector<int> constants;

  auto operator<=>(const GroundTerm&) const = default;
};

/// Does `atom`, grounded under `c`, include `term`?
bool covers(const Atom& atom, const Constraint& c, const GroundTerm& term);
Atom to_atom(const GroundTerm& term, const Vocabulary& vocab);
GroundTerm to_term(const Atom& ground_atom);

struct Model {
  VocabPtr vocab;
  std::vector<Parfactor> parfactors;

  /// PRV ids mentioned by parfactors, ascending.
  std::vector<PrvId> prvs() const;
  void validate() const;
};

struct DynamicModel {
  VocabPtr vocab;
  Model initial;     // slice 0
  Model transition;  // slices -1 and 0

  /// Slice -1 PRVs with a successor in slice 0, ascending.
  std::vector<PrvId> interface_prvs() const;
  void validate() const;
};

struct EvidenceEntry {
  GroundTerm term;
  int value = 0;

  auto operator<=>(const EvidenceEntry&) const = default;
};

class Evidence {
 public:
  /// Throws InconsistentEvidence if `e.term` is already fixed to another
  /// value at `step`.
  void add(int step, const EvidenceEntry& e);
  std::span<const EvidenceEntry> at(int step) const;
  const std::map<int, std::vector<EvidenceEntry>>& steps() const {
    return by_step_;
  }
  bool empty() const { return by_step_.empty(); }

 private:
  std::map<int, std::vector<EvidenceEntry>> by_step_;
};

enum class QueryKind { filtering, prediction, smoothing };

struct TemporalQuery {
  GroundTerm term;
  int target = 0;  // π
  int issued = 0;  // t

  QueryKind kind() const;
};

std::string_view to_string(QueryKind k);

struct Distribution {
  std::vector<std::string> values;
  std::vector<double> probs;

  double max_abs_diff(const Distribution& other) const;
};

/// One ground factor per constraint-satisfying logvar assignment.
std::vector<Parfactor> ground(const Parfactor& f);
std::vector<Parfactor> ground(const Model& m);

/// G0 at step 0 followed by, for each step 1..T, the slice-0 and
/// inter-slice parfactors of the transition model with times made absolute.
Model unroll(const DynamicModel& d, int steps);

/// Maps a slice-0 term of `d` to the PRV at absolute step `step` of an
/// unrolled vocabulary.
GroundTerm at_step(const GroundTerm& term, const Vocabulary& from,
                   const Vocabulary& unrolled, int step);

/// "User(x1)", "Server", "Infects(x1,y2)".
std::string term_label(const GroundTerm& t, const Vocabulary& vocab);
/// Parses a term label against PRVs with time `time`.
GroundTerm parse_term(std::string_view text, const Vocabulary& vocab,
                      std::optional<int> time);

}  // namespace ldjt
