#include "ldjt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace ldjt {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string time_suffix(std::optional<int> time, bool relative) {
  if (!time) return {};
  if (relative) {
    if (*time == 0) return "@t";
    if (*time == -1) return "@t-1";
  }
  return "@" + std::to_string(*time);
}

}  // namespace

ParseError::ParseError(const std::string& what, int line, int column)
    : Error("line " + std::to_string(line) + ", column " +
            std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

int Logvar::index_of(std::string_view constant) const {
  auto it = std::find(domain.begin(), domain.end(), constant);
  return it == domain.end() ? -1 : static_cast<int>(it - domain.begin());
}

int PrvDecl::range_index(std::string_view value) const {
  auto it = std::find(range.begin(), range.end(), value);
  return it == range.end() ? -1 : static_cast<int>(it - range.begin());
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

LogvarId Vocabulary::add_logvar(Logvar lv) {
  if (find_logvar(lv.name)) throw ModelError("logvar '" + lv.name + "' declared twice");
  if (lv.domain.empty()) throw ModelError("logvar '" + lv.name + "' has an empty domain");
  std::set<std::string> seen(lv.domain.begin(), lv.domain.end());
  if (seen.size() != lv.domain.size())
    throw ModelError("logvar '" + lv.name + "' has duplicate constants");
  logvars_.push_back(std::move(lv));
  return static_cast<LogvarId>(logvars_.size() - 1);
}

PrvId Vocabulary::add_prv(PrvDecl decl) {
  if (decl.range.size() < 2)
    throw ModelError("PRV '" + decl.name + "' needs at least two range values");
  {
    std::set<std::string> seen(decl.range.begin(), decl.range.end());
    if (seen.size() != decl.range.size())
      throw ModelError("PRV '" + decl.name + "' has duplicate range values");
    std::set<LogvarId> ps(decl.params.begin(), decl.params.end());
    if (ps.size() != decl.params.size())
      throw ModelError("PRV '" + decl.name + "' repeats a logvar");
  }
  for (std::size_t i = 0; i < prvs_.size(); ++i) {
    const PrvDecl& p = prvs_[i];
    if (p.name != decl.name) continue;
    if (p.params != decl.params || p.range != decl.range)
      throw ModelError("PRV '" + decl.name +
                       "' redeclared with a different range or parameters");
    if (p.time == decl.time) return static_cast<PrvId>(i);
  }
  auto fam = families_.find(decl.name);
  if (fam == families_.end())
    fam = families_.emplace(decl.name, static_cast<int>(families_.size())).first;
  decl.family = fam->second;
  prvs_.push_back(std::move(decl));
  return static_cast<PrvId>(prvs_.size() - 1);
}

std::optional<LogvarId> Vocabulary::find_logvar(std::string_view name) const {
  for (std::size_t i = 0; i < logvars_.size(); ++i)
    if (logvars_[i].name == name) return static_cast<LogvarId>(i);
  return std::nullopt;
}

std::optional<PrvId> Vocabulary::find_prv(std::string_view name,
                                          std::optional<int> time) const {
  for (std::size_t i = 0; i < prvs_.size(); ++i)
    if (prvs_[i].name == name && prvs_[i].time == time)
      return static_cast<PrvId>(i);
  return std::nullopt;
}

PrvId Vocabulary::shift(PrvId id, int delta) const {
  const PrvDecl& p = prv(id);
  if (!p.time) throw ModelError("cannot time-shift static PRV '" + p.name + "'");
  auto other = find_prv(p.name, *p.time + delta);
  if (!other)
    throw ModelError("PRV '" + p.name + "' has no copy at slice " +
                     std::to_string(*p.time + delta));
  return *other;
}

std::string Vocabulary::label(PrvId id, bool relative_time) const {
  const PrvDecl& p = prv(id);
  std::string out = p.name;
  if (!p.params.empty()) {
    out += '(';
    for (std::size_t i = 0; i < p.params.size(); ++i) {
      if (i) out += ',';
      out += logvar(p.params[i]).name;
    }
    out += ')';
  }
  return out + time_suffix(p.time, relative_time);
}

// ---------------------------------------------------------------------------
// Atoms, constraints, parfactors
// ---------------------------------------------------------------------------

bool Atom::ground() const {
  return std::all_of(args.begin(), args.end(), [](const Arg& a) { return !a.free(); });
}

const std::vector<int>* Constraint::allowed(LogvarId lv) const {
  auto it = std::lower_bound(cells_.begin(), cells_.end(), lv,
                             [](const Cell& c, LogvarId v) { return c.first < v; });
  if (it == cells_.end() || it->first != lv) return nullptr;
  return &it->second;
}

void Constraint::set(LogvarId lv, std::vector<int> allowed) {
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  auto it = std::lower_bound(cells_.begin(), cells_.end(), lv,
                             [](const Cell& c, LogvarId v) { return c.first < v; });
  if (it != cells_.end() && it->first == lv)
    it->second = std::move(allowed);
  else
    cells_.insert(it, Cell{lv, std::move(allowed)});
}

void Constraint::erase(LogvarId lv) {
  std::erase_if(cells_, [lv](const Cell& c) { return c.first == lv; });
}

std::vector<LogvarId> Constraint::logvars() const {
  std::vector<LogvarId> out;
  out.reserve(cells_.size());
  for (const auto& c : cells_) out.push_back(c.first);
  return out;
}

std::size_t Constraint::groundings() const {
  std::size_t n = 1;
  for (const auto& c : cells_) n *= c.second.size();
  return n;
}

std::size_t Constraint::groundings(std::span<const LogvarId> lvs) const {
  std::size_t n = 1;
  for (LogvarId lv : lvs) {
    const auto* a = allowed(lv);
    if (!a) throw ModelError("constraint has no cell for logvar " + std::to_string(lv));
    n *= a->size();
  }
  return n;
}

std::size_t Parfactor::size() const {
  std::size_t n = 1;
  for (const auto& a : atoms) n *= static_cast<std::size_t>(a.card);
  return n;
}

std::vector<std::size_t> Parfactor::strides() const {
  std::vector<std::size_t> s(atoms.size());
  std::size_t acc = 1;
  for (std::size_t i = atoms.size(); i-- > 0;) {
    s[i] = acc;
    acc *= static_cast<std::size_t>(atoms[i].card);
  }
  return s;
}

std::vector<LogvarId> Parfactor::logvars() const {
  std::vector<LogvarId> out;
  for (const auto& a : atoms)
    for (const auto& arg : a.args)
      if (arg.free()) out.push_back(arg.logvar);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int Parfactor::find_atom(const Atom& a) const {
  for (std::size_t i = 0; i < atoms.size(); ++i)
    if (atoms[i] == a) return static_cast<int>(i);
  return -1;
}

bool Parfactor::mentions(PrvId prv) const {
  return std::any_of(atoms.begin(), atoms.end(), [prv](const Atom& a) { return a.prv == prv; });
}

void Parfactor::validate() const {
  if (table.size() != size())
    throw ModelError("parfactor '" + name + "': table has " + std::to_string(table.size()) +
                     " entries, expected " + std::to_string(size()));
  bool positive = false;
  for (double v : table) {
    if (!std::isfinite(v) || v < 0.0)
      throw ModelError("parfactor '" + name + "': potentials must be finite and non-negative");
    positive = positive || v > 0.0;
  }
  if (!positive) throw ModelError("parfactor '" + name + "': all potentials are zero");
  if (constraint.logvars() != logvars())
    throw ModelError("parfactor '" + name + "': constraint must cover exactly its logvars");
  for (const auto& [lv, allowed] : constraint.cells())
    if (allowed.empty())
      throw ModelError("parfactor '" + name + "': empty allowed set");
  for (std::size_t i = 0; i < atoms.size(); ++i)
    for (std::size_t j = i + 1; j < atoms.size(); ++j)
      if (atoms[i] == atoms[j])
        throw ModelError("parfactor '" + name + "': repeated argument");
}

bool covers(const Atom& atom, const Constraint& c, const GroundTerm& term) {
  if (atom.prv != term.prv || atom.args.size() != term.constants.size()) return false;
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    const Arg& a = atom.args[i];
    if (!a.free()) {
      if (a.constant != term.constants[i]) return false;
      continue;
    }
    const auto* allowed = c.allowed(a.logvar);
    if (!allowed || !std::binary_search(allowed->begin(), allowed->end(), term.constants[i]))
      return false;
  }
  return true;
}

Atom to_atom(const GroundTerm& term, const Vocabulary& vocab) {
  const PrvDecl& p = vocab.prv(term.prv);
  Atom a;
  a.prv = term.prv;
  a.card = static_cast<int>(p.range.size());
  for (std::size_t i = 0; i < p.params.size(); ++i)
    a.args.push_back(Arg{p.params[i], term.constants.at(i)});
  return a;
}

GroundTerm to_term(const Atom& ground_atom) {
  GroundTerm t{ground_atom.prv, {}};
  for (const auto& a : ground_atom.args) t.constants.push_back(a.constant);
  return t;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

std::vector<PrvId> Model::prvs() const {
  std::set<PrvId> s;
  for (const auto& f : parfactors)
    for (const auto& a : f.atoms) s.insert(a.prv);
  return {s.begin(), s.end()};
}

void Model::validate() const {
  if (!vocab) throw ModelError("model has no vocabulary");
  for (const auto& f : parfactors) {
    f.validate();
    for (const auto& a : f.atoms) {
      if (a.prv < 0 || static_cast<std::size_t>(a.prv) >= vocab->prv_count())
        throw ModelError("parfactor '" + f.name + "' references an unknown PRV");
      const PrvDecl& p = vocab->prv(a.prv);
      if (a.card != static_cast<int>(p.range.size()) || a.args.size() != p.params.size())
        throw ModelError("parfactor '" + f.name + "' disagrees with the declaration of " +
                         p.name);
      for (std::size_t i = 0; i < a.args.size(); ++i) {
        if (a.args[i].logvar != p.params[i])
          throw ModelError("parfactor '" + f.name + "': argument logvar mismatch for " + p.name);
        if (!a.args[i].free()) {
          int n = static_cast<int>(vocab->logvar(p.params[i]).domain.size());
          if (a.args[i].constant < 0 || a.args[i].constant >= n)
            throw ModelError("parfactor '" + f.name + "': constant out of domain");
        }
      }
    }
    for (const auto& [lv, allowed] : f.constraint.cells()) {
      int n = static_cast<int>(vocab->logvar(lv).domain.size());
      for (int c : allowed)
        if (c < 0 || c >= n)
          throw ModelError("parfactor '" + f.name + "': constraint constant out of domain");
    }
  }
}

std::vector<PrvId> DynamicModel::interface_prvs() const {
  std::set<PrvId> out;
  for (const auto& f : transition.parfactors) {
    bool has_now = false;
    for (const auto& a : f.atoms) has_now = has_now || vocab->prv(a.prv).time == 0;
    if (!has_now) continue;
    for (const auto& a : f.atoms)
      if (vocab->prv(a.prv).time == -1) out.insert(a.prv);
  }
  return {out.begin(), out.end()};
}

void DynamicModel::validate() const {
  initial.validate();
  transition.validate();
  auto g0_prvs = initial.prvs();
  for (PrvId p : g0_prvs)
    if (vocab->prv(p).time != 0)
      throw ModelError("initial model may only use slice-0 PRVs");
  for (PrvId p : transition.prvs()) {
    auto t = vocab->prv(p).time;
    if (t != 0 && t != -1)
      throw ModelError("transition model may only use slices t-1 and t");
    PrvId now = t == 0 ? p : vocab->shift(p, 1);
    if (!std::binary_search(g0_prvs.begin(), g0_prvs.end(), now))
      throw ModelError("PRV " + vocab->prv(p).name +
                       " of the transition model does not occur in the initial model");
  }
}

// ---------------------------------------------------------------------------
// Evidence, queries, distributions
// ---------------------------------------------------------------------------

void Evidence::add(int step, const EvidenceEntry& e) {
  auto& entries = by_step_[step];
  for (const auto& old : entries) {
    if (old.term != e.term) continue;
    if (old.value != e.value)
      throw InconsistentEvidence("contradictory evidence at step " + std::to_string(step));
    return;
  }
  entries.push_back(e);
}

std::span<const EvidenceEntry> Evidence::at(int step) const {
  auto it = by_step_.find(step);
  if (it == by_step_.end()) return {};
  return it->second;
}

QueryKind TemporalQuery::kind() const {
  if (target == issued) return QueryKind::filtering;
  return target > issued ? QueryKind::prediction : QueryKind::smoothing;
}

std::string_view to_string(QueryKind k) {
  switch (k) {
    case QueryKind::filtering: return "filtering";
    case QueryKind::prediction: return "prediction";
    case QueryKind::smoothing: return "smoothing";
  }
  return "?";
}

double Distribution::max_abs_diff(const Distribution& other) const {
  if (probs.size() != other.probs.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    d = std::max(d, std::abs(probs[i] - other.probs[i]));
  return d;
}

// ---------------------------------------------------------------------------
// Grounding and unrolling
// ---------------------------------------------------------------------------

std::vector<Parfactor> ground(const Parfactor& f) {
  const auto& cells = f.constraint.cells();
  std::vector<Parfactor> out;
  out.reserve(f.groundings());
  std::vector<std::size_t> pos(cells.size(), 0);
  while (true) {
    Parfactor g;
    g.name = f.name;
    g.table = f.table;
    g.atoms = f.atoms;
    for (auto& a : g.atoms)
      for (auto& arg : a.args)
        if (arg.free()) {
          for (std::size_t c = 0; c < cells.size(); ++c)
            if (cells[c].first == arg.logvar) arg.constant = cells[c].second[pos[c]];
        }
    out.push_back(std::move(g));
    std::size_t k = cells.size();
    while (k > 0) {
      --k;
      if (++pos[k] < cells[k].second.size()) break;
      pos[k] = 0;
      if (k == 0) return out;
    }
    if (cells.empty()) return out;
  }
}

std::vector<Parfactor> ground(const Model& m) {
  std::vector<Parfactor> out;
  for (const auto& f : m.parfactors) {
    auto g = ground(f);
    out.insert(out.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
  }
  return out;
}

Model unroll(const DynamicModel& d, int steps) {
  if (steps < 0) throw ModelError("cannot unroll a negative number of steps");
  auto vocab = std::make_shared<Vocabulary>();
  for (std::size_t i = 0; i < d.vocab->logvar_count(); ++i)
    vocab->add_logvar(d.vocab->logvar(static_cast<LogvarId>(i)));
  // Families in declaration order, one PRV per step.
  std::vector<PrvId> now;
  for (std::size_t i = 0; i < d.vocab->prv_count(); ++i)
    if (d.vocab->prv(static_cast<PrvId>(i)).time == 0) now.push_back(static_cast<PrvId>(i));
  for (int s = 0; s <= steps; ++s)
    for (PrvId p : now) {
      PrvDecl decl = d.vocab->prv(p);
      decl.time = s;
      vocab->add_prv(std::move(decl));
    }
  auto place = [&](Parfactor f, int step, const std::string& suffix) {
    for (auto& a : f.atoms) {
      const PrvDecl& p = d.vocab->prv(a.prv);
      a.prv = *vocab->find_prv(p.name, step + *p.time);
    }
    f.name += suffix;
    return f;
  };
  Model m;
  m.vocab = vocab;
  for (const auto& f : d.initial.parfactors) m.parfactors.push_back(place(f, 0, "@0"));
  for (int s = 1; s <= steps; ++s)
    for (const auto& f : d.transition.parfactors) {
      bool has_now = false;
      for (const auto& a : f.atoms) has_now = has_now || d.vocab->prv(a.prv).time == 0;
      if (has_now) m.parfactors.push_back(place(f, s, "@" + std::to_string(s)));
    }
  return m;
}

GroundTerm at_step(const GroundTerm& term, const Vocabulary& from, const Vocabulary& unrolled,
                   int step) {
  auto id = unrolled.find_prv(from.prv(term.prv).name, step);
  if (!id) throw ModelError("term has no copy at step " + std::to_string(step));
  return GroundTerm{*id, term.constants};
}

std::string term_label(const GroundTerm& t, const Vocabulary& vocab) {
  const PrvDecl& p = vocab.prv(t.prv);
  std::string out = p.name;
  if (!p.params.empty()) {
    out += '(';
    for (std::size_t i = 0; i < p.params.size(); ++i) {
      if (i) out += ',';
      out += vocab.logvar(p.params[i]).domain.at(t.constants.at(i));
    }
    out += ')';
  }
  return out;
}

GroundTerm parse_term(std::string_view text, const Vocabulary& vocab, std::optional<int> time) {
  std::string s = trim(text);
  std::string name = s;
  std::vector<std::string> args;
  if (auto lp = s.find('('); lp != std::string::npos) {
    auto rp = s.rfind(')');
    if (rp == std::string::npos || rp < lp) throw ModelError("malformed term '" + s + "'");
    name = trim(s.substr(0, lp));
    std::stringstream ss(s.substr(lp + 1, rp - lp - 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) args.push_back(trim(tok));
  }
  auto id = vocab.find_prv(name, time);
  if (!id) throw ModelError("unknown PRV '" + name + "'");
  const PrvDecl& p = vocab.prv(*id);
  if (args.size() != p.params.size())
    throw ModelError("term '" + s + "' has the wrong number of arguments");
  GroundTerm t{*id, {}};
  for (std::size_t i = 0; i < args.size(); ++i) {
    int c = vocab.logvar(p.params[i]).index_of(args[i]);
    if (c < 0) throw ModelError("constant '" + args[i] + "' is not in the domain of " +
                                vocab.logvar(p.params[i]).name);
    t.constants.push_back(c);
  }
  return t;
}

}  // namespace ldjt
