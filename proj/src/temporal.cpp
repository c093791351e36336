#include "ldjt/temporal.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

#include "json.hpp"

namespace ldjt {

namespace {

using nlohmann::json;

json atom_json(const Atom& a, const Vocabulary& v) {
  const PrvDecl& p = v.prv(a.prv);
  json args = json::array();
  for (const auto& arg : a.args)
    args.push_back(arg.free() ? json(nullptr) : json(v.logvar(arg.logvar).domain[arg.constant]));
  return {{"prv", p.name}, {"time", p.time.value_or(0)}, {"args", args}};
}

json parfactor_json(const Parfactor& f, const Vocabulary& v) {
  json atoms = json::array();
  for (const auto& a : f.atoms) atoms.push_back(atom_json(a, v));
  json c = json::object();
  for (const auto& [lv, allowed] : f.constraint.cells()) {
    json vals = json::array();
    for (int x : allowed) vals.push_back(v.logvar(lv).domain[x]);
    c[v.logvar(lv).name] = vals;
  }
  return {{"name", f.name}, {"atoms", atoms}, {"constraint", c}, {"table", f.table}};
}

int constant_of(const Logvar& lv, const std::string& name) {
  int c = lv.index_of(name);
  if (c < 0) throw Error("checkpoint: unknown constant '" + name + "'");
  return c;
}

Parfactor parfactor_from(const json& j, const Vocabulary& v) {
  Parfactor f;
  f.name = j.at("name").get<std::string>();
  for (const auto& ja : j.at("atoms")) {
    auto id = v.find_prv(ja.at("prv").get<std::string>(), ja.at("time").get<int>());
    if (!id) throw Error("checkpoint: unknown PRV " + ja.at("prv").get<std::string>());
    const PrvDecl& p = v.prv(*id);
    Atom a;
    a.prv = *id;
    a.card = static_cast<int>(p.range.size());
    const auto& args = ja.at("args");
    if (args.size() != p.params.size()) throw Error("checkpoint: arity mismatch");
    for (std::size_t i = 0; i < args.size(); ++i)
      a.args.push_back(Arg{p.params[i], args[i].is_null()
                                            ? kFree
                                            : constant_of(v.logvar(p.params[i]),
                                                          args[i].get<std::string>())});
    f.atoms.push_back(std::move(a));
  }
  for (const auto& [name, vals] : j.at("constraint").items()) {
    auto lv = v.find_logvar(name);
    if (!lv) throw Error("checkpoint: unknown logvar " + name);
    std::vector<int> allowed;
    for (const auto& x : vals) allowed.push_back(constant_of(v.logvar(*lv), x.get<std::string>()));
    std::sort(allowed.begin(), allowed.end());
    f.constraint.set(*lv, std::move(allowed));
  }
  f.table = j.at("table").get<std::vector<double>>();
  f.validate();
  return f;
}

Message renamed(Message m, std::span<const std::pair<PrvId, PrvId>> map, const char* name) {
  for (auto& f : m) {
    f = lve::rename(std::move(f), map);
    f.name = name;
  }
  return m;
}

}  // namespace

TemporalQuery resolve(const LagQuery& q, int t, bool* clamped) {
  int target = t - q.lag;
  bool c = target < 0;
  if (clamped) *clamped = c;
  return TemporalQuery{q.term, c ? 0 : target, t};
}

Engine::Engine(DynamicModel d, EngineOptions opt) : d_(std::move(d)), opt_(opt) {
  d_.validate();
  if (opt_.window < 0) throw Error("window must be non-negative");
  tpl_ = construct_dynamic(d_);
  for (PrvId p : tpl_.interface) {
    PrvId now = d_.vocab->shift(p, 1);
    to_prev_.emplace_back(now, p);
    to_now_.emplace_back(p, now);
  }
  current_ = build(0, nullptr, nullptr, {}, {});
}

std::vector<int> Engine::retained() const {
  std::vector<int> out;
  for (const auto& [s, j] : window_) out.push_back(s);
  return out;
}

FoJtree Engine::build(int s, const Message* alpha_prev, const Message* beta,
                      std::span<const EvidenceEntry> now,
                      std::span<const EvidenceEntry> prev) const {
  FoJtree j = s == 0 ? tpl_.j0 : tpl_.jt;
  j.step = s;
  if (s > 0) {
    if (!alpha_prev) throw Error("no α for step " + std::to_string(s - 1));
    j.nodes[j.in_cluster()].alpha = *alpha_prev;
  }
  if (beta) j.nodes[j.out_cluster()].beta = *beta;
  std::vector<EvidenceEntry> ev(now.begin(), now.end());
  // Observations on the previous slice's interface recur in J_s.
  if (s > 0)
    for (const auto& e : prev)
      for (const auto& [from, to] : to_prev_)
        if (e.term.prv == from) ev.push_back({GroundTerm{to, e.term.constants}, e.value});
  enter_evidence(j, ev);
  return j;
}

void Engine::calibrate(FoJtree& j) { pass_messages(j, j.out_cluster(), Pass::full, &counters_); }

Message Engine::alpha_of(FoJtree& j) {
  const int out = j.out_cluster();
  pass_messages(j, out, Pass::inbound, &counters_);
  lve::Keep keep;
  for (const auto& [now, prev] : to_prev_) keep.prvs.push_back(now);
  std::sort(keep.prvs.begin(), keep.prvs.end());
  return renamed(cluster_eliminate(j, out, keep, true, &counters_), to_prev_, "alpha");
}

Message Engine::beta_of(FoJtree& j) {
  const int in = j.in_cluster();
  pass_messages(j, in, Pass::inbound, &counters_);
  lve::Keep keep;
  keep.prvs = tpl_.interface;
  return renamed(cluster_eliminate(j, in, keep, false, &counters_), to_now_, "beta");
}

const Message& Engine::current_alpha() {
  if (!alpha_cache_) alpha_cache_ = alpha_of(current_);
  return *alpha_cache_;
}

void Engine::observe(std::span<const EvidenceEntry> evidence) {
  if (evidence.empty()) return;
  for (const auto& e : evidence) {
    if (d_.vocab->prv(e.term.prv).time != 0)
      throw Error("evidence must name slice-0 PRVs");
    evidence_.add(t_, e);
  }
  enter_evidence(current_, evidence);
  alpha_cache_.reset();
}

void Engine::advance() {
  Message a = current_alpha();
  alpha_[t_] = a;
  if (opt_.strategy != Strategy::reinstantiate) {
    window_.emplace_back(t_, std::move(current_));
    bool bounded = opt_.strategy == Strategy::combined || opt_.window > 0;
    while (bounded && static_cast<int>(window_.size()) > opt_.window) window_.pop_front();
  }
  ++t_;
  current_ = build(t_, &alpha_[t_ - 1], nullptr, evidence_.at(t_), evidence_.at(t_ - 1));
  alpha_cache_.reset();
}

FoJtree Engine::reinstantiate(int s, const Message* beta, bool queries) {
  if (s < 0 || s >= t_)
    throw Error("cannot reinstantiate step " + std::to_string(s) + " at step " +
                std::to_string(t_));
  const Message* a = nullptr;
  if (s > 0) {
    auto it = alpha_.find(s - 1);
    if (it == alpha_.end()) throw Error("α log lacks step " + std::to_string(s - 1));
    a = &it->second;
  }
  FoJtree j = build(s, a, beta, evidence_.at(s), s > 0 ? evidence_.at(s - 1)
                                                       : std::span<const EvidenceEntry>{});
  if (queries)
    calibrate(j);
  else
    pass_messages(j, j.in_cluster(), Pass::inbound, &counters_);
  return j;
}

FoJtree Engine::previous(int s, const Message& beta, bool queries) {
  for (const auto& [step, kept] : window_) {
    if (step != s) continue;
    FoJtree j = kept;
    const int out = j.out_cluster();
    j.nodes[out].beta = lve::enter_evidence(beta, evidence_.at(s));
    pass_messages(j, out, Pass::outbound, &counters_);
    return j;
  }
  if (opt_.strategy == Strategy::keep && opt_.window > 0 && s < t_ - opt_.window)
    throw Error("step " + std::to_string(s) + " lies outside the kept window");
  return reinstantiate(s, &beta, queries);
}

std::vector<Answer> Engine::answer(std::span<const TemporalQuery> queries) {
  std::vector<Answer> out(queries.size());
  std::vector<std::size_t> predict, smooth;
  bool calibrated = false;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (q.issued != t_) throw Error("query issued at another step");
    if (q.target < 0) throw Error("negative target step");
    out[i].query = q;
    out[i].lag = t_ - q.target;
    switch (q.kind()) {
      case QueryKind::filtering:
        if (!calibrated) calibrate(current_);
        calibrated = true;
        out[i].dist = answer_query(current_, q.term, &counters_);
        break;
      case QueryKind::prediction:
        predict.push_back(i);
        break;
      case QueryKind::smoothing:
        smooth.push_back(i);
        break;
    }
  }

  std::stable_sort(predict.begin(), predict.end(),
                   [&](std::size_t a, std::size_t b) { return queries[a].target < queries[b].target; });
  std::optional<FoJtree> ahead;
  int p = t_;
  for (std::size_t i : predict) {
    while (p < queries[i].target) {
      Message a = p == t_ ? current_alpha() : alpha_of(*ahead);
      auto prev = p == t_ ? evidence_.at(t_) : std::span<const EvidenceEntry>{};
      ahead = build(p + 1, &a, nullptr, {}, prev);
      ++p;
    }
    calibrate(*ahead);
    out[i].dist = answer_query(*ahead, queries[i].term, &counters_);
  }

  // Descending π: one backward walk serves every smoothing query.
  std::stable_sort(smooth.begin(), smooth.end(),
                   [&](std::size_t a, std::size_t b) { return queries[a].target > queries[b].target; });
  std::set<int> targets;
  for (std::size_t i : smooth) targets.insert(queries[i].target);
  if (!smooth.empty() && !calibrated) calibrate(current_);
  std::optional<FoJtree> back;
  int s = t_;
  for (std::size_t i : smooth) {
    while (s > queries[i].target) {
      Message b = beta_of(s == t_ ? current_ : *back);
      back = previous(s - 1, b, targets.count(s - 1) > 0);
      --s;
    }
    out[i].dist = answer_query(*back, queries[i].term, &counters_);
  }
  return out;
}

std::vector<Answer> Engine::answer_lags(std::span<const LagQuery> queries) {
  std::vector<TemporalQuery> resolved;
  std::vector<bool> clamped;
  for (const auto& q : queries) {
    bool c = false;
    resolved.push_back(resolve(q, t_, &c));
    clamped.push_back(c);
  }
  auto out = answer(resolved);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].lag = queries[i].lag;
    out[i].clamped = clamped[i];
  }
  return out;
}

void Engine::write_checkpoint(std::ostream& out) const {
  const Vocabulary& v = *d_.vocab;
  for (const auto& [s, alpha] : alpha_) {
    json ev = json::array();
    for (const auto& e : evidence_.at(s))
      ev.push_back({{"term", term_label(e.term, v)}, {"value", v.prv(e.term.prv).range[e.value]}});
    json a = json::array();
    for (const auto& f : alpha) a.push_back(parfactor_json(f, v));
    out << json{{"step", s}, {"evidence", ev}, {"alpha", a}}.dump() << '\n';
  }
}

Engine Engine::resume(DynamicModel d, EngineOptions opt, std::istream& records) {
  Engine e(std::move(d), opt);
  const Vocabulary& v = *e.d_.vocab;
  std::string line;
  int expect = 0;
  while (std::getline(records, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& x) {
      throw Error(std::string("checkpoint: ") + x.what());
    }
    int s = r.at("step").get<int>();
    if (s != expect) throw Error("checkpoint records must cover steps 0.. in order");
    ++expect;
    for (const auto& je : r.at("evidence")) {
      GroundTerm t = parse_term(je.at("term").get<std::string>(), v, 0);
      int val = v.prv(t.prv).range_index(je.at("value").get<std::string>());
      if (val < 0) throw Error("checkpoint: unknown value");
      e.evidence_.add(s, {t, val});
    }
    Message a;
    for (const auto& jf : r.at("alpha")) a.push_back(parfactor_from(jf, v));
    e.alpha_[s] = std::move(a);
  }
  if (expect == 0) return e;
  e.t_ = expect;
  e.current_ = e.build(e.t_, &e.alpha_[e.t_ - 1], nullptr, {}, e.evidence_.at(e.t_ - 1));
  return e;
}

SessionResult run_session(const DynamicModel& d, const Schedule& s, EngineOptions opt) {
  Engine e(d, opt);
  SessionResult r;
  for (int t = 0; t <= s.last_step; ++t) {
    Counters before = e.counters();
    e.observe(s.evidence.at(t));
    if (auto it = s.queries.find(t); it != s.queries.end()) {
      auto a = e.answer_lags(it->second);
      r.answers.insert(r.answers.end(), a.begin(), a.end());
    }
    if (t < s.last_step) e.advance();
    r.per_step.push_back(e.counters() - before);
  }
  return r;
}

std::vector<Distribution> unrolled_answers(const DynamicModel& d, const Evidence& e,
                                           std::span<const TemporalQuery> queries,
                                           Counters* counters) {
  struct Static {
    Model m;
    FoJtree j;
  };
  std::map<std::pair<int, int>, Static> cache;
  std::vector<Distribution> out;
  for (const auto& q : queries) {
    const int horizon = std::max(q.issued, q.target);
    auto key = std::make_pair(q.issued, horizon);
    auto it = cache.find(key);
    if (it == cache.end()) {
      Static st;
      st.m = unroll(d, horizon);
      st.j = construct_fojt(st.m);
      std::vector<EvidenceEntry> ev;
      for (const auto& [step, entries] : e.steps()) {
        if (step > q.issued) break;
        for (const auto& x : entries)
          ev.push_back({at_step(x.term, *d.vocab, *st.m.vocab, step), x.value});
      }
      enter_evidence(st.j, ev);
      pass_messages(st.j, 0, Pass::full, counters);
      it = cache.emplace(key, std::move(st)).first;
    }
    const Static& st = it->second;
    out.push_back(answer_query(st.j, at_step(q.term, *d.vocab, *st.m.vocab, q.target), counters));
  }
  return out;
}

}  // namespace ldjt
