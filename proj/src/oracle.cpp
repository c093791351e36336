#include "ldjt/oracle.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace ldjt {

namespace {

std::size_t table_size(const std::vector<int>& cards) {
  std::size_t n = 1;
  for (int c : cards) n *= static_cast<std::size_t>(c);
  return n;
}

/// Value of `f` under a full assignment `val` indexed by variable.
double lookup(const GroundFactor& f, const std::vector<int>& val) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < f.vars.size(); ++i)
    idx = idx * static_cast<std::size_t>(f.cards[i]) + static_cast<std::size_t>(val[f.vars[i]]);
  return f.table[idx];
}

GroundFactor product(const std::vector<const GroundFactor*>& fs, int nvars,
                     const std::vector<int>& cards) {
  std::set<int> vs;
  for (const auto* f : fs) vs.insert(f->vars.begin(), f->vars.end());
  GroundFactor out;
  out.vars.assign(vs.begin(), vs.end());
  for (int v : out.vars) out.cards.push_back(cards[v]);
  out.table.assign(table_size(out.cards), 1.0);
  std::vector<int> val(static_cast<std::size_t>(nvars), 0);
  for (std::size_t r = 0; r < out.table.size(); ++r) {
    std::size_t rem = r;
    for (std::size_t i = out.vars.size(); i-- > 0;) {
      val[out.vars[i]] = static_cast<int>(rem % static_cast<std::size_t>(out.cards[i]));
      rem /= static_cast<std::size_t>(out.cards[i]);
    }
    for (const auto* f : fs) out.table[r] *= lookup(*f, val);
  }
  return out;
}

GroundFactor sum_var(const GroundFactor& f, int var) {
  auto pos = static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), var) - f.vars.begin());
  GroundFactor out;
  for (std::size_t i = 0; i < f.vars.size(); ++i)
    if (i != pos) {
      out.vars.push_back(f.vars[i]);
      out.cards.push_back(f.cards[i]);
    }
  out.table.assign(table_size(out.cards), 0.0);
  std::size_t inner = 1;
  for (std::size_t i = pos + 1; i < f.vars.size(); ++i) inner *= static_cast<std::size_t>(f.cards[i]);
  const auto card = static_cast<std::size_t>(f.cards[pos]);
  for (std::size_t r = 0; r < f.table.size(); ++r) {
    std::size_t hi = r / (inner * card), lo = r % inner;
    out.table[hi * inner + lo] += f.table[r];
  }
  return out;
}

/// Fixes observed variables and drops them from each factor's scope.
std::vector<GroundFactor> reduce(const GroundModel& g, const std::vector<int>& fixed) {
  std::vector<GroundFactor> out;
  for (const auto& f : g.factors) {
    GroundFactor r;
    for (std::size_t i = 0; i < f.vars.size(); ++i)
      if (fixed[f.vars[i]] < 0) {
        r.vars.push_back(f.vars[i]);
        r.cards.push_back(f.cards[i]);
      }
    r.table.resize(table_size(r.cards));
    std::vector<int> val = fixed;
    for (std::size_t k = 0; k < r.table.size(); ++k) {
      std::size_t rem = k;
      for (std::size_t i = r.vars.size(); i-- > 0;) {
        val[r.vars[i]] = static_cast<int>(rem % static_cast<std::size_t>(r.cards[i]));
        rem /= static_cast<std::size_t>(r.cards[i]);
      }
      r.table[k] = lookup(f, val);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> observe(const GroundModel& g, std::span<const EvidenceEntry> evidence) {
  std::vector<int> fixed(g.vars.size(), -1);
  for (const auto& e : evidence) {
    int v = g.index(e.term);
    if (v < 0) throw Error("evidence on a variable outside the model");
    if (e.value < 0 || e.value >= g.cards[v]) throw ModelError("evidence value out of range");
    if (fixed[v] >= 0 && fixed[v] != e.value) throw InconsistentEvidence("contradictory evidence");
    fixed[v] = e.value;
  }
  return fixed;
}

/// Sums the unnormalised joint over all free assignments into `acc`,
/// indexed by the value of `query` (or a single cell when query < 0).
void enumerate(const GroundModel& g, const std::vector<int>& fixed, int query,
               std::vector<double>& acc, OracleOptions opt) {
  std::vector<int> free;
  long double space = 1;
  for (std::size_t v = 0; v < g.vars.size(); ++v)
    if (fixed[v] < 0) {
      free.push_back(static_cast<int>(v));
      space *= g.cards[v];
    }
  if (space > static_cast<long double>(opt.bound))
    throw Error("oracle: assignment space exceeds the enumeration bound");
  std::vector<int> val = fixed;
  for (int v : free) val[v] = 0;
  while (true) {
    double p = 1.0;
    for (const auto& f : g.factors) {
      p *= lookup(f, val);
      if (p == 0.0) break;
    }
    acc[query >= 0 ? static_cast<std::size_t>(val[query]) : 0] += p;
    std::size_t i = free.size();
    while (i > 0) {
      int v = free[i - 1];
      if (++val[v] < g.cards[v]) break;
      val[v] = 0;
      --i;
    }
    if (i == 0) break;
  }
}

Distribution normalised(const Vocabulary& vocab, PrvId prv, std::vector<double> p) {
  double z = 0.0;
  for (double x : p) z += x;
  if (!(z > 0.0)) throw InconsistentEvidence("oracle: evidence has probability zero");
  for (double& x : p) x /= z;
  return Distribution{vocab.prv(prv).range, std::move(p)};
}

}  // namespace

int GroundModel::index(const GroundTerm& t) const {
  auto it = std::lower_bound(vars.begin(), vars.end(), t);
  return it != vars.end() && *it == t ? static_cast<int>(it - vars.begin()) : -1;
}

GroundModel ground_model(const Model& m) {
  const Vocabulary& v = *m.vocab;
  std::set<GroundTerm> all;
  // One entry per grounding: the parfactor and its logvar substitution.
  std::vector<std::pair<const Parfactor*, std::map<LogvarId, int>>> groundings;
  for (const auto& f : m.parfactors) {
    const auto& cells = f.constraint.cells();
    std::vector<std::size_t> at(cells.size(), 0);
    while (true) {
      std::map<LogvarId, int> theta;
      for (std::size_t i = 0; i < cells.size(); ++i) theta[cells[i].first] = cells[i].second[at[i]];
      for (const auto& a : f.atoms) {
        GroundTerm t{a.prv, {}};
        for (const auto& arg : a.args) t.constants.push_back(arg.free() ? theta.at(arg.logvar) : arg.constant);
        all.insert(t);
      }
      groundings.emplace_back(&f, std::move(theta));
      std::size_t i = cells.size();
      while (i > 0) {
        if (++at[i - 1] < cells[i - 1].second.size()) break;
        at[i - 1] = 0;
        --i;
      }
      if (i == 0) break;
    }
  }
  GroundModel g;
  g.vars.assign(all.begin(), all.end());
  for (const auto& t : g.vars) g.cards.push_back(static_cast<int>(v.prv(t.prv).range.size()));

  for (const auto& [f, theta] : groundings) {
    std::vector<int> slots;  // variable of each atom
    for (const auto& a : f->atoms) {
      GroundTerm t{a.prv, {}};
      for (const auto& arg : a.args) t.constants.push_back(arg.free() ? theta.at(arg.logvar) : arg.constant);
      slots.push_back(g.index(t));
    }
    GroundFactor gf;
    std::set<int> distinct(slots.begin(), slots.end());
    gf.vars.assign(distinct.begin(), distinct.end());
    for (int x : gf.vars) gf.cards.push_back(g.cards[x]);
    gf.table.assign(table_size(gf.cards), 0.0);
    // Walk the original table; rows assigning one variable two values vanish.
    std::vector<int> row(slots.size(), 0);
    for (std::size_t r = 0; r < f->table.size(); ++r) {
      std::size_t rem = r;
      for (std::size_t i = slots.size(); i-- > 0;) {
        row[i] = static_cast<int>(rem % static_cast<std::size_t>(f->atoms[i].card));
        rem /= static_cast<std::size_t>(f->atoms[i].card);
      }
      std::map<int, int> val;
      bool ok = true;
      for (std::size_t i = 0; i < slots.size() && ok; ++i) {
        auto [it, fresh] = val.emplace(slots[i], row[i]);
        ok = fresh || it->second == row[i];
      }
      if (!ok) continue;
      std::size_t idx = 0;
      for (std::size_t i = 0; i < gf.vars.size(); ++i)
        idx = idx * static_cast<std::size_t>(gf.cards[i]) + static_cast<std::size_t>(val[gf.vars[i]]);
      gf.table[idx] = f->table[r];
    }
    g.factors.push_back(std::move(gf));
  }
  return g;
}

Distribution oracle_marginal(const Model& m, const GroundTerm& q,
                             std::span<const EvidenceEntry> evidence, OracleOptions opt) {
  GroundModel g = ground_model(m);
  auto fixed = observe(g, evidence);
  int qv = g.index(q);
  const auto card = m.vocab->prv(q.prv).range.size();
  if (qv < 0) return normalised(*m.vocab, q.prv, std::vector<double>(card, 1.0));
  std::vector<double> acc(card, 0.0);
  if (fixed[qv] >= 0) {
    std::vector<double> z(1, 0.0);
    enumerate(g, fixed, -1, z, opt);
    acc[static_cast<std::size_t>(fixed[qv])] = z[0];
  } else {
    enumerate(g, fixed, qv, acc, opt);
  }
  return normalised(*m.vocab, q.prv, std::move(acc));
}

double oracle_partition(const Model& m, std::span<const EvidenceEntry> evidence,
                        OracleOptions opt) {
  GroundModel g = ground_model(m);
  std::vector<double> z(1, 0.0);
  enumerate(g, observe(g, evidence), -1, z, opt);
  return z[0];
}

std::vector<GroundFactor> oracle_eliminate(std::vector<GroundFactor> fs, int var) {
  int nvars = var + 1;
  std::map<int, int> cards;
  for (const auto& f : fs)
    for (std::size_t i = 0; i < f.vars.size(); ++i) {
      nvars = std::max(nvars, f.vars[i] + 1);
      cards[f.vars[i]] = f.cards[i];
    }
  std::vector<int> card_of(static_cast<std::size_t>(nvars), 1);
  for (auto [v, c] : cards) card_of[v] = c;

  std::vector<GroundFactor> out;
  std::vector<const GroundFactor*> with;
  for (const auto& f : fs)
    if (std::find(f.vars.begin(), f.vars.end(), var) != f.vars.end()) with.push_back(&f);
  if (with.empty()) return fs;
  GroundFactor summed = sum_var(product(with, nvars, card_of), var);
  for (const auto& f : fs)
    if (std::find(f.vars.begin(), f.vars.end(), var) == f.vars.end()) out.push_back(f);
  out.push_back(std::move(summed));
  return out;
}

Distribution ve_marginal(const Model& m, const GroundTerm& q,
                         std::span<const EvidenceEntry> evidence) {
  GroundModel g = ground_model(m);
  auto fixed = observe(g, evidence);
  int qv = g.index(q);
  const auto card = m.vocab->prv(q.prv).range.size();
  if (qv < 0) return normalised(*m.vocab, q.prv, std::vector<double>(card, 1.0));
  auto fs = reduce(g, fixed);
  std::set<int> pending;
  for (std::size_t v = 0; v < g.vars.size(); ++v)
    if (fixed[v] < 0 && static_cast<int>(v) != qv) pending.insert(static_cast<int>(v));
  while (!pending.empty()) {
    int best = -1;
    std::size_t best_deg = 0;
    for (int v : pending) {
      std::set<int> scope;
      for (const auto& f : fs)
        if (std::find(f.vars.begin(), f.vars.end(), v) != f.vars.end())
          scope.insert(f.vars.begin(), f.vars.end());
      if (best < 0 || scope.size() < best_deg) {
        best = v;
        best_deg = scope.size();
      }
    }
    fs = oracle_eliminate(std::move(fs), best);
    pending.erase(best);
  }
  std::vector<double> p(card, 0.0);
  if (fixed[qv] >= 0) {
    double z = 1.0;
    for (const auto& f : fs) z *= f.table[0];
    p[static_cast<std::size_t>(fixed[qv])] = z;
  } else {
    std::vector<int> val(g.vars.size(), 0);
    for (std::size_t x = 0; x < card; ++x) {
      val[qv] = static_cast<int>(x);
      double prod = 1.0;
      for (const auto& f : fs) prod *= f.vars.empty() ? f.table[0] : lookup(f, val);
      p[x] = prod;
    }
  }
  return normalised(*m.vocab, q.prv, std::move(p));
}

Distribution oracle_temporal(const DynamicModel& d, const TemporalQuery& q, const Evidence& e,
                             OracleOptions opt) {
  const int horizon = std::max(q.issued, q.target);
  Model m = unroll(d, horizon);
  std::vector<EvidenceEntry> ev;
  for (const auto& [step, entries] : e.steps()) {
    if (step > q.issued) break;
    for (const auto& x : entries) ev.push_back({at_step(x.term, *d.vocab, *m.vocab, step), x.value});
  }
  GroundTerm target = at_step(q.term, *d.vocab, *m.vocab, q.target);
  long double space = 1;
  GroundModel g = ground_model(m);
  auto fixed = observe(g, ev);
  for (std::size_t v = 0; v < g.vars.size(); ++v)
    if (fixed[v] < 0) space *= g.cards[v];
  if (space <= static_cast<long double>(opt.bound)) return oracle_marginal(m, target, ev, opt);
  return ve_marginal(m, target, ev);
}

}  // namespace ldjt
