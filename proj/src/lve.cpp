#include "ldjt/lve.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace ldjt::lve {

namespace {

/// Walks every assignment of `cards` (last fastest), keeping one linear
/// index per source table; coef[s][j] is source s's step for position j.
template <std::size_t N, typename Fn>
void odometer(const std::vector<int>& cards,
              const std::array<std::vector<std::size_t>, N>& coef, Fn&& fn) {
  std::size_t total = 1;
  for (int c : cards) total *= static_cast<std::size_t>(c);
  std::vector<int> val(cards.size(), 0);
  std::array<std::size_t, N> idx{};
  for (std::size_t r = 0; r < total; ++r) {
    fn(r, idx);
    for (std::size_t j = cards.size(); j-- > 0;) {
      if (++val[j] < cards[j]) {
        for (std::size_t s = 0; s < N; ++s) idx[s] += coef[s][j];
        break;
      }
      for (std::size_t s = 0; s < N; ++s)
        idx[s] -= coef[s][j] * static_cast<std::size_t>(cards[j] - 1);
      val[j] = 0;
    }
  }
}

std::vector<int> cards_of(const std::vector<Atom>& atoms) {
  std::vector<int> c;
  c.reserve(atoms.size());
  for (const auto& a : atoms) c.push_back(a.card);
  return c;
}

/// coef[j] = sum of strides of source atoms that map onto target atom j.
std::vector<std::size_t> coefficients(const Parfactor& src, const std::vector<Atom>& target) {
  auto strides = src.strides();
  std::vector<std::size_t> coef(target.size(), 0);
  for (std::size_t i = 0; i < src.atoms.size(); ++i) {
    auto it = std::find(target.begin(), target.end(), src.atoms[i]);
    coef[static_cast<std::size_t>(it - target.begin())] += strides[i];
  }
  return coef;
}

void substitute(Parfactor& f, LogvarId lv, int constant) {
  for (auto& a : f.atoms)
    for (auto& arg : a.args)
      if (arg.free() && arg.logvar == lv) arg.constant = constant;
  f.constraint.erase(lv);
}

/// Atoms of one PRV that are neither identical nor instance-disjoint.
bool overlap(const Atom& a, const Constraint& ca, const Atom& b, const Constraint& cb) {
  if (a.prv != b.prv) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    const Arg& x = a.args[i];
    const Arg& y = b.args[i];
    if (!x.free() && !y.free()) {
      if (x.constant != y.constant) return false;
    } else if (!x.free()) {
      const auto* al = cb.allowed(y.logvar);
      if (!std::binary_search(al->begin(), al->end(), x.constant)) return false;
    } else if (!y.free()) {
      const auto* al = ca.allowed(x.logvar);
      if (!std::binary_search(al->begin(), al->end(), y.constant)) return false;
    } else {
      const auto* al = ca.allowed(x.logvar);
      const auto* bl = cb.allowed(y.logvar);
      std::vector<int> common;
      std::set_intersection(al->begin(), al->end(), bl->begin(), bl->end(),
                            std::back_inserter(common));
      if (common.empty()) return false;
    }
  }
  return true;
}

std::vector<LogvarId> atom_logvars(const Atom& a) {
  std::vector<LogvarId> out;
  for (const auto& arg : a.args)
    if (arg.free()) out.push_back(arg.logvar);
  std::sort(out.begin(), out.end());
  return out;
}

void drop_scalars(std::vector<Parfactor>& fs) {
  for (const auto& f : fs)
    if (f.atoms.empty() && !(f.table.at(0) > 0.0))
      throw InconsistentEvidence("evidence has probability zero");
  std::erase_if(fs, [](const Parfactor& f) { return f.atoms.empty(); });
}

}  // namespace

Parfactor canonical(Parfactor f) {
  std::vector<LogvarId> singles;
  for (const auto& [lv, allowed] : f.constraint.cells())
    if (allowed.size() == 1) singles.push_back(lv);
  for (LogvarId lv : singles) substitute(f, lv, f.constraint.allowed(lv)->front());

  std::vector<Atom> atoms = f.atoms;
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  if (atoms == f.atoms) return f;

  Parfactor out;
  out.name = f.name;
  out.constraint = f.constraint;
  auto cards = cards_of(atoms);
  std::array<std::vector<std::size_t>, 1> coef{coefficients(f, atoms)};
  out.atoms = std::move(atoms);
  out.table.resize(out.size());
  odometer(cards, coef, [&](std::size_t r, const auto& idx) { out.table[r] = f.table[idx[0]]; });
  return out;
}

std::vector<Parfactor> shatter(const Parfactor& f, std::span<const GroundTerm> terms) {
  std::vector<Parfactor> work{f};
  for (const auto& term : terms) {
    std::vector<Parfactor> next;
    for (auto& g : work) {
      while (true) {
        auto it = std::find_if(g.atoms.begin(), g.atoms.end(), [&](const Atom& a) {
          return !a.ground() && covers(a, g.constraint, term);
        });
        if (it == g.atoms.end()) break;
        const Atom atom = *it;
        for (std::size_t i = 0; i < atom.args.size(); ++i) {
          const Arg& arg = atom.args[i];
          if (!arg.free()) continue;
          int c = term.constants[i];
          std::vector<int> rest = *g.constraint.allowed(arg.logvar);
          std::erase(rest, c);
          if (!rest.empty()) {
            Parfactor other = g;
            other.constraint.set(arg.logvar, std::move(rest));
            next.push_back(canonical(std::move(other)));
          }
          substitute(g, arg.logvar, c);
        }
        g = canonical(std::move(g));
      }
      next.push_back(canonical(std::move(g)));
    }
    work = std::move(next);
  }
  return work;
}

Parfactor absorb_evidence(const Parfactor& f, std::span<const EvidenceEntry> evidence) {
  std::vector<int> fixed(f.atoms.size(), -1);
  bool any = false;
  for (const auto& e : evidence) {
    for (std::size_t i = 0; i < f.atoms.size(); ++i) {
      const Atom& a = f.atoms[i];
      if (a.prv != e.term.prv) continue;
      if (!a.ground()) {
        if (covers(a, f.constraint, e.term))
          throw Error("absorb_evidence: parfactor '" + f.name + "' is not shattered on evidence");
        continue;
      }
      if (to_term(a) != e.term) continue;
      if (e.value < 0 || e.value >= a.card)
        throw ModelError("evidence value outside the range of a PRV");
      fixed[i] = e.value;
      any = true;
    }
  }
  if (!any) return f;
  Parfactor out;
  out.name = f.name;
  out.constraint = f.constraint;
  auto strides = f.strides();
  std::size_t base = 0;
  std::vector<std::size_t> coef;
  for (std::size_t i = 0; i < f.atoms.size(); ++i) {
    if (fixed[i] >= 0) {
      base += strides[i] * static_cast<std::size_t>(fixed[i]);
    } else {
      out.atoms.push_back(f.atoms[i]);
      coef.push_back(strides[i]);
    }
  }
  out.table.resize(out.size());
  std::array<std::vector<std::size_t>, 1> c{coef};
  odometer(cards_of(out.atoms), c,
           [&](std::size_t r, const auto& idx) { out.table[r] = f.table[base + idx[0]]; });
  return out;
}

std::vector<Parfactor> enter_evidence(std::span<const Parfactor> fs,
                                      std::span<const EvidenceEntry> evidence) {
  std::vector<Parfactor> out;
  for (const auto& f : fs) {
    std::vector<GroundTerm> terms;
    std::vector<EvidenceEntry> relevant;
    for (const auto& e : evidence)
      if (f.mentions(e.term.prv)) {
        terms.push_back(e.term);
        relevant.push_back(e);
      }
    if (terms.empty()) {
      out.push_back(f);
      continue;
    }
    for (auto& piece : shatter(f, terms)) out.push_back(absorb_evidence(piece, relevant));
  }
  drop_scalars(out);
  return out;
}

Parfactor multiply(const Parfactor& f, const Parfactor& g) {
  Constraint c = f.constraint;
  for (const auto& [lv, allowed] : g.constraint.cells()) {
    const auto* mine = f.constraint.allowed(lv);
    if (mine && *mine != allowed)
      throw LiftingError("multiply: logvar constrained differently in '" + f.name + "' and '" +
                         g.name + "'");
    if (!mine) c.set(lv, allowed);
  }
  std::vector<Atom> atoms = f.atoms;
  for (const auto& b : g.atoms) {
    if (std::find(atoms.begin(), atoms.end(), b) != atoms.end()) continue;
    for (const auto& a : f.atoms)
      if (overlap(a, f.constraint, b, g.constraint))
        throw LiftingError("multiply: overlapping atoms of one PRV in '" + f.name + "' and '" +
                           g.name + "'");
    atoms.push_back(b);
  }
  std::sort(atoms.begin(), atoms.end());

  auto missing = [&](const Parfactor& p) {
    std::vector<LogvarId> lvs;
    for (LogvarId lv : c.logvars())
      if (!p.constraint.has(lv)) lvs.push_back(lv);
    return c.groundings(lvs);
  };
  auto powered = [](const Parfactor& p, std::size_t k) {
    std::vector<double> t = p.table;
    if (k != 1) {
      double e = 1.0 / static_cast<double>(k);
      for (double& v : t) v = std::pow(v, e);
    }
    return t;
  };
  const auto tf = powered(f, missing(f));
  const auto tg = powered(g, missing(g));

  Parfactor out;
  out.name = f.name;
  out.constraint = std::move(c);
  std::array<std::vector<std::size_t>, 2> coef{coefficients(f, atoms), coefficients(g, atoms)};
  out.atoms = std::move(atoms);
  out.table.resize(out.size());
  odometer(cards_of(out.atoms), coef,
           [&](std::size_t r, const auto& idx) { out.table[r] = tf[idx[0]] * tg[idx[1]]; });
  return canonical(std::move(out));
}

Parfactor sum_out_atom(const Parfactor& f, std::size_t atom) {
  const Atom& a = f.atoms.at(atom);
  if (atom_logvars(a) != f.logvars())
    throw LiftingError("sum_out: atom does not carry every logvar of '" + f.name + "'");
  for (std::size_t i = 0; i < f.atoms.size(); ++i)
    if (i != atom && overlap(a, f.constraint, f.atoms[i], f.constraint))
      throw LiftingError("sum_out: '" + f.name + "' holds overlapping atoms of one PRV");

  Parfactor out;
  out.name = f.name;
  auto strides = f.strides();
  std::vector<std::size_t> coef;
  for (std::size_t i = 0; i < f.atoms.size(); ++i)
    if (i != atom) {
      out.atoms.push_back(f.atoms[i]);
      coef.push_back(strides[i]);
    }
  std::vector<LogvarId> kept = out.logvars();
  std::vector<LogvarId> gone;
  for (const auto& [lv, allowed] : f.constraint.cells()) {
    if (std::binary_search(kept.begin(), kept.end(), lv))
      out.constraint.set(lv, allowed);
    else
      gone.push_back(lv);
  }
  const std::size_t k = f.constraint.groundings(gone);
  const std::size_t step = strides[atom];
  out.table.resize(out.size());
  std::array<std::vector<std::size_t>, 1> c{coef};
  odometer(cards_of(out.atoms), c, [&](std::size_t r, const auto& idx) {
    double s = 0.0;
    for (int v = 0; v < a.card; ++v) s += f.table[idx[0] + step * static_cast<std::size_t>(v)];
    out.table[r] = k == 1 ? s : std::pow(s, static_cast<double>(k));
  });
  return canonical(std::move(out));
}

Parfactor sum_out(const Parfactor& f, PrvId prv) {
  int found = -1;
  for (std::size_t i = 0; i < f.atoms.size(); ++i)
    if (f.atoms[i].prv == prv) {
      if (found >= 0) throw LiftingError("sum_out: PRV occurs in several atoms of '" + f.name + "'");
      found = static_cast<int>(i);
    }
  if (found < 0) throw Error("sum_out: PRV does not occur in '" + f.name + "'");
  return sum_out_atom(f, static_cast<std::size_t>(found));
}

bool Keep::keeps(const Atom& a) const {
  if (std::binary_search(prvs.begin(), prvs.end(), a.prv)) return true;
  return term && a.prv == term->prv && a.ground() && to_term(a) == *term;
}

std::vector<Parfactor> ground_eliminate(std::vector<Parfactor> fs, PrvId prv, const Keep& keep,
                                        Counters* counters) {
  auto involved = [&](const Parfactor& f) {
    return std::any_of(f.atoms.begin(), f.atoms.end(),
                       [&](const Atom& a) { return a.prv == prv && !keep.keeps(a); });
  };
  std::vector<Parfactor> rest;
  std::vector<Parfactor> grounded;
  for (auto& f : fs) {
    if (!involved(f)) {
      rest.push_back(std::move(f));
      continue;
    }
    for (auto& g : ground(f)) grounded.push_back(canonical(std::move(g)));
  }
  std::set<Atom> instances;
  for (const auto& g : grounded)
    for (const auto& a : g.atoms)
      if (a.prv == prv && !keep.keeps(a)) instances.insert(a);

  for (const Atom& v : instances) {
    std::vector<Parfactor> with, without;
    for (auto& g : grounded) (g.find_atom(v) >= 0 ? with : without).push_back(std::move(g));
    Parfactor prod = std::move(with.front());
    for (std::size_t i = 1; i < with.size(); ++i) prod = multiply(prod, with[i]);
    without.push_back(sum_out_atom(prod, static_cast<std::size_t>(prod.find_atom(v))));
    grounded = std::move(without);
    if (counters) ++counters->eliminations;
  }
  for (auto& g : grounded) rest.push_back(std::move(g));
  drop_scalars(rest);
  return rest;
}

Parfactor normalize_msg(Parfactor f) {
  double m = 0.0;
  for (double v : f.table) m = std::max(m, v);
  if (!(m > 0.0)) throw InconsistentEvidence("message '" + f.name + "' is all zero");
  if (m != 1.0)
    for (double& v : f.table) v /= m;
  return f;
}

namespace {

/// Lifted elimination of `prv` is possible when every involved factor has
/// exactly one non-kept atom of it, identical across factors and carrying
/// all of that factor's logvars.
bool liftable(const std::vector<const Parfactor*>& involved, PrvId prv, const Keep& keep) {
  const Atom* shared = nullptr;
  for (const Parfactor* f : involved) {
    const Atom* mine = nullptr;
    for (const auto& a : f->atoms) {
      if (a.prv != prv || keep.keeps(a)) continue;
      if (mine) return false;
      mine = &a;
    }
    if (shared && !(*shared == *mine)) return false;
    shared = mine;
    if (atom_logvars(*mine) != f->logvars()) return false;
  }
  return true;
}

/// log2 of the table size the elimination is expected to touch.
double cost(const std::vector<const Parfactor*>& involved, PrvId prv, const Keep& keep,
            bool lifted) {
  if (lifted) {
    std::set<Atom> atoms;
    for (const Parfactor* f : involved) atoms.insert(f->atoms.begin(), f->atoms.end());
    double bits = 0.0;
    for (const auto& a : atoms) bits += std::log2(a.card);
    return bits;
  }
  double bits = 0.0;
  for (const Parfactor* f : involved) {
    for (const auto& a : f->atoms) {
      if (a.prv != prv || keep.keeps(a)) continue;
      bits = std::max(bits, std::log2(a.card));
      auto mine = atom_logvars(a);
      for (const auto& b : f->atoms) {
        if (&b == &a) continue;
        std::vector<LogvarId> extra;
        for (LogvarId lv : atom_logvars(b))
          if (!std::binary_search(mine.begin(), mine.end(), lv)) extra.push_back(lv);
        bits += std::log2(b.card) * static_cast<double>(f->constraint.groundings(extra));
      }
      break;
    }
  }
  return bits + 1.0;
}

}  // namespace

std::vector<Parfactor> eliminate(std::vector<Parfactor> fs, const Keep& keep, Counters* counters) {
  drop_scalars(fs);
  while (true) {
    std::set<PrvId> candidates;
    for (const auto& f : fs)
      for (const auto& a : f.atoms)
        if (!keep.keeps(a)) candidates.insert(a.prv);
    if (candidates.empty()) break;

    PrvId best = -1;
    bool best_lifted = false;
    double best_cost = std::numeric_limits<double>::infinity();
    for (PrvId p : candidates) {
      std::vector<const Parfactor*> involved;
      for (const auto& f : fs)
        if (std::any_of(f.atoms.begin(), f.atoms.end(),
                        [&](const Atom& a) { return a.prv == p && !keep.keeps(a); }))
          involved.push_back(&f);
      bool lifted = liftable(involved, p, keep);
      double c = cost(involved, p, keep, lifted);
      if (c < best_cost) {
        best_cost = c;
        best = p;
        best_lifted = lifted;
      }
    }

    if (best_lifted) {
      try {
        std::vector<Parfactor> rest;
        std::optional<Parfactor> prod;
        for (auto& f : fs) {
          bool inv = std::any_of(f.atoms.begin(), f.atoms.end(),
                                 [&](const Atom& a) { return a.prv == best && !keep.keeps(a); });
          if (!inv)
            rest.push_back(f);
          else
            prod = prod ? multiply(*prod, f) : f;
        }
        std::size_t at = 0;
        while (prod->atoms[at].prv != best || keep.keeps(prod->atoms[at])) ++at;
        rest.push_back(sum_out_atom(*prod, at));
        fs = std::move(rest);
        if (counters) ++counters->eliminations;
        drop_scalars(fs);
        continue;
      } catch (const LiftingError&) {
        // misaligned constraints; fall through to grounding
      }
    }
    fs = ground_eliminate(std::move(fs), best, keep, counters);
  }
  return fs;
}

Distribution marginal(std::span<const Parfactor> fs, const GroundTerm& term,
                      const Vocabulary& vocab, Counters* counters) {
  std::vector<Parfactor> work;
  for (const auto& f : fs) {
    if (!f.mentions(term.prv)) {
      work.push_back(f);
      continue;
    }
    for (auto& p : shatter(f, std::span(&term, 1))) work.push_back(std::move(p));
  }
  Keep keep;
  keep.term = term;
  auto rest = eliminate(std::move(work), keep, counters);

  const PrvDecl& decl = vocab.prv(term.prv);
  std::vector<double> p(decl.range.size(), 1.0);
  for (const auto& f : rest) {
    if (f.atoms.size() != 1) throw Error("marginal: residual factor over several atoms");
    for (std::size_t v = 0; v < p.size(); ++v) p[v] *= f.table[v];
  }
  double z = 0.0;
  for (double v : p) z += v;
  if (!(z > 0.0)) throw InconsistentEvidence("query has zero probability mass");
  for (double& v : p) v /= z;
  return Distribution{decl.range, std::move(p)};
}

Parfactor ground_product(std::span<const Parfactor> fs) {
  Parfactor prod;
  prod.name = "product";
  prod.table = {1.0};
  for (const auto& f : fs)
    for (auto& g : ground(f)) prod = multiply(prod, canonical(std::move(g)));
  return prod;
}

Parfactor rename(Parfactor f, std::span<const std::pair<PrvId, PrvId>> map) {
  for (auto& a : f.atoms)
    for (const auto& [from, to] : map)
      if (a.prv == from) {
        a.prv = to;
        break;
      }
  return canonical(std::move(f));
}

}  // namespace ldjt::lve
