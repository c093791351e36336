#include "ldjt/jtree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>

namespace ldjt {

namespace {

using PrvSet = std::vector<PrvId>;  // sorted

PrvSet intersect(const PrvSet& a, const PrvSet& b) {
  PrvSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

PrvSet unite(const PrvSet& a, const PrvSet& b) {
  PrvSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool subset(const PrvSet& a, const PrvSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

PrvSet prvs_of(const Parfactor& f) {
  PrvSet out;
  for (const auto& a : f.atoms) out.push_back(a.prv);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t ground_size(const Vocabulary& v, PrvId p) {
  std::size_t n = 1;
  for (LogvarId lv : v.prv(p).params) n *= v.logvar(lv).domain.size();
  return n;
}

std::size_t ground_size(const Vocabulary& v, const PrvSet& s) {
  std::size_t n = 0;
  for (PrvId p : s) n += ground_size(v, p);
  return n;
}

/// Min-fill elimination cliques with ties broken by slice, then family.
std::vector<PrvSet> elimination_cliques(const Model& m) {
  const Vocabulary& v = *m.vocab;
  std::map<PrvId, std::set<PrvId>> adj;
  for (PrvId p : m.prvs()) adj[p];
  for (const auto& f : m.parfactors) {
    auto ps = prvs_of(f);
    for (PrvId a : ps)
      for (PrvId b : ps)
        if (a != b) adj[a].insert(b);
  }
  std::vector<PrvSet> cliques;
  while (!adj.empty()) {
    PrvId best = -1;
    std::tuple<std::size_t, int, int, PrvId> best_key{};
    for (const auto& [p, nb] : adj) {
      std::size_t fill = 0;
      for (auto i = nb.begin(); i != nb.end(); ++i)
        for (auto j = std::next(i); j != nb.end(); ++j)
          if (!adj.at(*i).count(*j)) ++fill;
      const PrvDecl& d = v.prv(p);
      std::tuple key{fill, d.time.value_or(0), d.family, p};
      if (best < 0 || key < best_key) {
        best = p;
        best_key = key;
      }
    }
    const auto nb = adj.at(best);
    PrvSet clique(nb.begin(), nb.end());
    clique.push_back(best);
    std::sort(clique.begin(), clique.end());
    cliques.push_back(std::move(clique));
    for (PrvId a : nb) {
      adj.at(a).erase(best);
      for (PrvId b : nb)
        if (a != b) adj.at(a).insert(b);
    }
    adj.erase(best);
  }
  std::vector<PrvSet> maximal;
  for (std::size_t i = 0; i < cliques.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < cliques.size() && !dominated; ++j)
      if (i != j && subset(cliques[i], cliques[j]) && (cliques[i] != cliques[j] || j < i))
        dominated = true;
    if (!dominated) maximal.push_back(cliques[i]);
  }
  return maximal;
}

struct Skeleton {
  std::vector<PrvSet> clusters;
  std::vector<std::pair<int, int>> edges;
};

Skeleton spanning_tree(const Vocabulary& v, std::vector<PrvSet> clusters) {
  const int n = static_cast<int>(clusters.size());
  struct Cand {
    std::size_t weight, ground;
    int a, b;
  };
  std::vector<Cand> cands;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      cands.push_back({intersect(clusters[a], clusters[b]).size(),
                       ground_size(v, unite(clusters[a], clusters[b])), a, b});
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
    if (x.weight != y.weight) return x.weight > y.weight;
    return std::tie(x.ground, x.a, x.b) < std::tie(y.ground, y.a, y.b);
  });
  std::vector<int> root(n);
  std::iota(root.begin(), root.end(), 0);
  auto find = [&](int x) {
    while (root[x] != x) x = root[x] = root[root[x]];
    return x;
  };
  Skeleton s{std::move(clusters), {}};
  for (const auto& c : cands) {
    int ra = find(c.a), rb = find(c.b);
    if (ra == rb) continue;
    root[ra] = rb;
    s.edges.emplace_back(c.a, c.b);
  }
  return s;
}

/// Merges `b` into `a` and drops `b`, renumbering edges.
void merge(Skeleton& s, int a, int b) {
  s.clusters[a] = unite(s.clusters[a], s.clusters[b]);
  s.clusters.erase(s.clusters.begin() + b);
  std::vector<std::pair<int, int>> edges;
  for (auto [x, y] : s.edges) {
    if (x == b) x = a;
    if (y == b) y = a;
    if (x == y) continue;
    if (x > b) --x;
    if (y > b) --y;
    edges.emplace_back(std::min(x, y), std::max(x, y));
  }
  s.edges = std::move(edges);
}

/// Contracts edges whose endpoints each contribute one PRV beyond a
/// non-empty separator, and absorbs clusters contained in a neighbour.
void contract(const Vocabulary& v, Skeleton& s) {
  while (true) {
    int best = -1;
    std::size_t best_size = 0;
    bool absorb = false;
    for (std::size_t e = 0; e < s.edges.size(); ++e) {
      auto [a, b] = s.edges[e];
      const auto& ca = s.clusters[a];
      const auto& cb = s.clusters[b];
      auto sep = intersect(ca, cb);
      if (subset(ca, cb) || subset(cb, ca)) {
        best = static_cast<int>(e);
        absorb = true;
        break;
      }
      if (sep.empty() || ca.size() != sep.size() + 1 || cb.size() != sep.size() + 1) continue;
      std::size_t size = ground_size(v, unite(ca, cb));
      if (best < 0 || size < best_size) {
        best = static_cast<int>(e);
        best_size = size;
      }
    }
    if (best < 0) return;
    auto [a, b] = s.edges[best];
    if (absorb && subset(s.clusters[a], s.clusters[b])) std::swap(a, b);
    merge(s, a, b);
  }
}

Parfactor interface_parfactor(const Vocabulary& v, const PrvSet& prvs, std::string name) {
  Parfactor f;
  f.name = std::move(name);
  for (PrvId p : prvs) {
    const PrvDecl& d = v.prv(p);
    Atom a;
    a.prv = p;
    a.card = static_cast<int>(d.range.size());
    for (LogvarId lv : d.params) {
      a.args.push_back(Arg{lv, kFree});
      if (!f.constraint.has(lv)) {
        std::vector<int> all(v.logvar(lv).domain.size());
        std::iota(all.begin(), all.end(), 0);
        f.constraint.set(lv, std::move(all));
      }
    }
    f.atoms.push_back(std::move(a));
  }
  std::sort(f.atoms.begin(), f.atoms.end());
  f.table.assign(f.size(), 1.0);
  return f;
}

std::vector<int> distances(const FoJtree& j, int from) {
  std::vector<int> dist(j.nodes.size(), -1);
  std::queue<int> q;
  dist[from] = 0;
  q.push(from);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int w : j.neighbors(u))
      if (dist[w] < 0) {
        dist[w] = dist[u] + 1;
        q.push(w);
      }
  }
  return dist;
}

/// Is `node` on `from`'s side of the edge (from, to)?
bool on_side(const FoJtree& j, int node, int from, int to) {
  std::vector<bool> seen(j.nodes.size(), false);
  std::vector<int> stack{from};
  seen[from] = seen[to] = true;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (u == node) return true;
    for (int w : j.neighbors(u))
      if (!seen[w]) {
        seen[w] = true;
        stack.push_back(w);
      }
  }
  return false;
}

std::vector<Parfactor> gather(const FoJtree& j, int node, int except, bool with_alpha) {
  auto fs = j.nodes.at(node).model(with_alpha);
  for (int k : j.neighbors(node)) {
    if (k == except) continue;
    auto it = j.messages.find({k, node});
    if (it == j.messages.end())
      throw Error("parcluster " + std::to_string(node) + " lacks the message from " +
                  std::to_string(k));
    fs.insert(fs.end(), it->second.begin(), it->second.end());
  }
  return fs;
}

}  // namespace

bool Parcluster::contains(PrvId p) const {
  return std::binary_search(prvs.begin(), prvs.end(), p);
}

std::vector<Parfactor> Parcluster::model(bool with_alpha) const {
  std::vector<Parfactor> out = local;
  if (with_alpha) out.insert(out.end(), alpha.begin(), alpha.end());
  out.insert(out.end(), beta.begin(), beta.end());
  return out;
}

std::vector<int> FoJtree::neighbors(int node) const {
  std::vector<int> out;
  for (const auto& e : edges) {
    if (e.a == node) out.push_back(e.b);
    if (e.b == node) out.push_back(e.a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const Separator& FoJtree::separator(int a, int b) const {
  for (const auto& e : edges)
    if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) return e;
  throw Error("no edge between parclusters " + std::to_string(a) + " and " + std::to_string(b));
}

int FoJtree::in_cluster() const {
  for (const auto& c : nodes)
    if (c.in) return c.id;
  return -1;
}

int FoJtree::out_cluster() const {
  for (const auto& c : nodes)
    if (c.out) return c.id;
  return -1;
}

int FoJtree::locate(PrvId prv) const {
  int best = -1;
  for (const auto& c : nodes)
    if (c.contains(prv) && (best < 0 || c.prvs.size() < nodes[best].prvs.size())) best = c.id;
  return best;
}

std::vector<PrvId> identify_interface(const DynamicModel& d) { return d.interface_prvs(); }

FoJtree construct_fojt(const Model& m) {
  const Vocabulary& v = *m.vocab;
  Skeleton s = spanning_tree(v, elimination_cliques(m));
  contract(v, s);

  FoJtree j;
  j.vocab = m.vocab;
  for (std::size_t i = 0; i < s.clusters.size(); ++i) {
    Parcluster c;
    c.id = static_cast<int>(i);
    c.prvs = s.clusters[i];
    for (PrvId p : c.prvs)
      for (LogvarId lv : v.prv(p).params)
        if (!c.constraint.has(lv)) {
          std::vector<int> all(v.logvar(lv).domain.size());
          std::iota(all.begin(), all.end(), 0);
          c.constraint.set(lv, std::move(all));
        }
    j.nodes.push_back(std::move(c));
  }
  for (auto [a, b] : s.edges)
    j.edges.push_back({a, b, intersect(s.clusters[a], s.clusters[b])});

  for (const auto& f : m.parfactors) {
    auto ps = prvs_of(f);
    int best = -1;
    for (const auto& c : j.nodes) {
      if (!subset(ps, c.prvs)) continue;
      if (best < 0 || std::make_pair(c.prvs.size(), ground_size(v, c.prvs)) <
                          std::make_pair(j.nodes[best].prvs.size(),
                                         ground_size(v, j.nodes[best].prvs)))
        best = c.id;
    }
    if (best < 0) throw Error("parfactor '" + f.name + "' fits no parcluster");
    j.nodes[best].local.push_back(f);
  }
  return j;
}

DynamicJtrees construct_dynamic(const DynamicModel& d) {
  const Vocabulary& v = *d.vocab;
  DynamicJtrees out;
  out.interface = identify_interface(d);
  if (out.interface.empty())
    throw UnsupportedModel("transition model has no inter-slice parfactor");
  PrvSet now;
  for (PrvId p : out.interface) now.push_back(v.shift(p, 1));
  std::sort(now.begin(), now.end());

  out.m0 = d.initial;
  out.m0.parfactors.push_back(interface_parfactor(v, now, "gI@0"));
  out.j0 = construct_fojt(out.m0);
  for (auto& c : out.j0.nodes)
    for (const auto& f : c.local)
      if (f.name == "gI@0") c.in = c.out = true;

  out.mt.vocab = d.vocab;
  for (const auto& f : d.transition.parfactors) {
    bool has_now = std::any_of(f.atoms.begin(), f.atoms.end(),
                               [&](const Atom& a) { return v.prv(a.prv).time == 0; });
    if (has_now) out.mt.parfactors.push_back(f);
  }
  out.mt.parfactors.push_back(interface_parfactor(v, out.interface, "gI@t-1"));
  out.mt.parfactors.push_back(interface_parfactor(v, now, "gI@t"));
  out.jt = construct_fojt(out.mt);

  int in = -1;
  for (auto& c : out.jt.nodes)
    for (const auto& f : c.local)
      if (f.name == "gI@t-1") in = c.id;
  out.jt.nodes[in].in = true;

  // The out-cluster is the covering parcluster nearest the in-cluster.
  auto dist = distances(out.jt, in);
  int best = -1;
  for (const auto& c : out.jt.nodes)
    if (subset(now, c.prvs) && (best < 0 || dist[c.id] < dist[best])) best = c.id;
  for (auto& c : out.jt.nodes) {
    auto it = std::find_if(c.local.begin(), c.local.end(),
                           [](const Parfactor& f) { return f.name == "gI@t"; });
    if (it == c.local.end()) continue;
    Parfactor gi = *it;
    c.local.erase(it);
    out.jt.nodes[best].local.push_back(std::move(gi));
    break;
  }
  out.jt.nodes[best].out = true;
  return out;
}

void enter_evidence(FoJtree& j, std::span<const EvidenceEntry> evidence) {
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    const auto& e = evidence[i];
    if (j.locate(e.term.prv) < 0)
      throw Error("evidence on a PRV outside the jtree: " + j.vocab->label(e.term.prv, true));
    auto clash = [&](const EvidenceEntry& o) { return o.term == e.term && o.value != e.value; };
    if (std::any_of(j.observed.begin(), j.observed.end(), clash) ||
        std::any_of(evidence.begin(), evidence.begin() + static_cast<std::ptrdiff_t>(i), clash))
      throw InconsistentEvidence("contradictory evidence on " + term_label(e.term, *j.vocab));
  }
  if (!evidence.empty())
    for (auto& c : j.nodes) {
      c.local = lve::enter_evidence(c.local, evidence);
      c.alpha = lve::enter_evidence(c.alpha, evidence);
      c.beta = lve::enter_evidence(c.beta, evidence);
    }
  j.observed.insert(j.observed.end(), evidence.begin(), evidence.end());
  j.messages.clear();
}

void invalidate_from(FoJtree& j, int node) {
  std::erase_if(j.messages, [&](const auto& kv) {
    return on_side(j, node, kv.first.first, kv.first.second);
  });
}

Message compute_message(const FoJtree& j, int from, int to, Counters* counters) {
  lve::Keep keep;
  keep.prvs = j.separator(from, to).prvs;
  auto rest = lve::eliminate(gather(j, from, to, true), keep, counters);
  const std::string name = "m" + std::to_string(from) + ">" + std::to_string(to);
  for (auto& f : rest) {
    if (j.normalize) f = lve::normalize_msg(std::move(f));
    f.name = name;
  }
  if (counters) ++counters->messages;
  return rest;
}

void pass_messages(FoJtree& j, int root, Pass pass, Counters* counters) {
  if (j.nodes.empty()) return;
  std::vector<int> parent(j.nodes.size(), -1);
  std::vector<int> order;
  std::vector<bool> seen(j.nodes.size(), false);
  std::vector<int> stack{root};
  seen[root] = true;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    order.push_back(u);
    for (int w : j.neighbors(u))
      if (!seen[w]) {
        seen[w] = true;
        parent[w] = u;
        stack.push_back(w);
      }
  }
  if (pass == Pass::full || pass == Pass::inbound)
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int u = *it;
      if (parent[u] < 0 || j.messages.count({u, parent[u]})) continue;
      j.messages[{u, parent[u]}] = compute_message(j, u, parent[u], counters);
    }
  if (pass == Pass::outbound)
    for (int u : order)
      if (parent[u] >= 0) j.messages.erase({parent[u], u});
  if (pass == Pass::full || pass == Pass::outbound)
    for (int u : order) {
      if (parent[u] < 0 || j.messages.count({parent[u], u})) continue;
      j.messages[{parent[u], u}] = compute_message(j, parent[u], u, counters);
    }
}

Message cluster_eliminate(const FoJtree& j, int node, const lve::Keep& keep, bool with_alpha,
                          Counters* counters) {
  auto rest = lve::eliminate(gather(j, node, -1, with_alpha), keep, counters);
  if (j.normalize)
    for (auto& f : rest) f = lve::normalize_msg(std::move(f));
  return rest;
}

Distribution answer_at(const FoJtree& j, int node, const GroundTerm& q, Counters* counters) {
  if (!j.nodes.at(node).contains(q.prv))
    throw Error("parcluster " + std::to_string(node) + " does not hold the query PRV");
  for (const auto& e : j.observed)
    if (e.term == q) {
      Distribution d{j.vocab->prv(q.prv).range, {}};
      d.probs.assign(d.values.size(), 0.0);
      d.probs[static_cast<std::size_t>(e.value)] = 1.0;
      return d;
    }
  return lve::marginal(gather(j, node, -1, true), q, *j.vocab, counters);
}

Distribution answer_query(const FoJtree& j, const GroundTerm& q, Counters* counters) {
  int node = j.locate(q.prv);
  if (node < 0) throw Error("query PRV " + j.vocab->label(q.prv, true) + " is not in the jtree");
  return answer_at(j, node, q, counters);
}

std::vector<std::string> check_properties(const FoJtree& j, const Model& m) {
  std::vector<std::string> bad;
  const int n = static_cast<int>(j.nodes.size());
  if (n == 0) {
    if (!m.parfactors.empty()) bad.push_back("no parclusters");
    return bad;
  }
  if (static_cast<int>(j.edges.size()) != n - 1) bad.push_back("edge count is not n-1");
  auto dist = distances(j, 0);
  if (std::any_of(dist.begin(), dist.end(), [](int d) { return d < 0; }))
    bad.push_back("jtree is disconnected");
  for (const auto& e : j.edges)
    if (e.prvs != intersect(j.nodes[e.a].prvs, j.nodes[e.b].prvs))
      bad.push_back("separator " + std::to_string(e.a) + "-" + std::to_string(e.b) +
                    " differs from the cluster intersection");
  for (const auto& e : j.edges)
    if (subset(j.nodes[e.a].prvs, j.nodes[e.b].prvs) ||
        subset(j.nodes[e.b].prvs, j.nodes[e.a].prvs))
      bad.push_back("non-maximal parcluster on edge " + std::to_string(e.a) + "-" +
                    std::to_string(e.b));

  // Running intersection: holders of each PRV form a connected subtree.
  for (PrvId p : m.prvs()) {
    std::vector<int> holders;
    for (const auto& c : j.nodes)
      if (c.contains(p)) holders.push_back(c.id);
    if (holders.empty()) {
      bad.push_back("PRV " + j.vocab->label(p, true) + " is in no parcluster");
      continue;
    }
    std::set<int> reach{holders[0]};
    std::vector<int> stack{holders[0]};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int w : j.neighbors(u))
        if (j.nodes[w].contains(p) && reach.insert(w).second) stack.push_back(w);
    }
    if (reach.size() != holders.size())
      bad.push_back("running intersection fails for " + j.vocab->label(p, true));
  }

  std::map<std::string, int> placed;
  for (const auto& c : j.nodes)
    for (const auto& f : c.local) {
      ++placed[f.name];
      if (!subset(prvs_of(f), c.prvs))
        bad.push_back("parfactor '" + f.name + "' is not covered by its parcluster");
      for (LogvarId lv : f.logvars()) {
        const auto* mine = f.constraint.allowed(lv);
        const auto* theirs = c.constraint.allowed(lv);
        if (!theirs || !std::includes(theirs->begin(), theirs->end(), mine->begin(), mine->end()))
          bad.push_back("constraint of '" + f.name + "' exceeds its parcluster");
      }
    }
  for (const auto& f : m.parfactors)
    if (placed[f.name] != 1) bad.push_back("parfactor '" + f.name + "' not assigned exactly once");
  return bad;
}

std::string export_graph(const FoJtree& j) {
  const Vocabulary& v = *j.vocab;
  auto names = [&](const PrvSet& s) {
    std::string out = "{";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + v.label(s[i], true);
    return out + "}";
  };
  std::ostringstream os;
  for (const auto& c : j.nodes) {
    os << "node " << c.id;
    if (c.in) os << " in";
    if (c.out) os << " out";
    os << ' ' << names(c.prvs) << " :";
    for (const auto& f : c.local) os << ' ' << f.name;
    os << '\n';
  }
  for (const auto& e : j.edges) os << "edge " << e.a << " -- " << e.b << ' ' << names(e.prvs) << '\n';
  return os.str();
}

}  // namespace ldjt
