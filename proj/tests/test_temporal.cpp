#include <doctest.h>

#include <sstream>

#include "common.hpp"
#include "ldjt/cli.hpp"
#include "ldjt/oracle.hpp"
#include "ldjt/temporal.hpp"

using namespace ldjt;

namespace {

GroundTerm term0(const DynamicModel& d, const std::string& s) { return fixture::term(*d.vocab, s, 0); }

EvidenceEntry server(const DynamicModel& d, bool up) { return {term0(d, "Server"), up ? 0 : 1}; }

// The evaluation schedule: three terms at lags 0, 2, 5 and 10 per step.
std::vector<LagQuery> twelve(const DynamicModel& d) {
  std::vector<LagQuery> q;
  for (const char* t : {"Server", "User(x1)", "Admin(y1)"})
    for (int lag : {0, 2, 5, 10}) q.push_back({term0(d, t), lag});
  return q;
}

Schedule evaluation(const DynamicModel& d, int last, std::uint64_t seed) {
  Schedule s;
  s.last_step = last;
  std::mt19937_64 rng(seed);
  for (int t = 0; t <= last; ++t) {
    if (rng() % 3 == 0) s.evidence.add(t, server(d, rng() % 2 == 0));
    s.queries[t] = twelve(d);
  }
  return s;
}

std::set<PrvId> prvs_of(const Message& m) {
  std::set<PrvId> out;
  for (const auto& f : m)
    for (const auto& a : f.atoms) out.insert(a.prv);
  return out;
}

}  // namespace

TEST_CASE("alpha covers only the interface") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d);
  for (int t = 0; t < 4; ++t) {
    e.observe(std::vector{server(d, t % 2 == 0)});
    e.advance();
  }
  const auto& tpl = e.templates();
  std::set<PrvId> iface(tpl.interface.begin(), tpl.interface.end());
  for (const auto& [s, a] : e.alpha_log()) {
    CAPTURE(s);
    CHECK(prvs_of(a) == iface);
    for (const auto& f : a) {
      CHECK(f.name == "alpha");
      CHECK(*std::max_element(f.table.begin(), f.table.end()) == doctest::Approx(1.0));
    }
  }
  CHECK(e.alpha_log().size() == 4);
}

TEST_CASE("filtering matches the oracle") {
  for (DynamicModel d : {fixture::gex_dynamic_small(), fixture::gex_dynamic()}) {
    Engine e(d);
    Evidence log;
    for (int t = 0; t <= 5; ++t) {
      if (t % 2 == 1) {
        e.observe(std::vector{server(d, t == 3)});
        log.add(t, server(d, t == 3));
      }
      std::vector<TemporalQuery> qs;
      for (const char* s : {"Server", "User(x1)", "Admin(y1)", "Infects(x1,y1)", "Attack2"})
        qs.push_back({term0(d, s), t, t});
      auto got = e.answer(qs);
      for (std::size_t i = 0; i < qs.size(); ++i)
        CHECK(got[i].dist.max_abs_diff(oracle_temporal(d, qs[i], log)) < 1e-9);
      if (t < 5) e.advance();
    }
  }
}

TEST_CASE("uniform model gives uniform alpha") {
  DynamicModel d = fixture::gex_dynamic();
  for (auto* m : {&d.initial, &d.transition})
    for (auto& f : m->parfactors) std::fill(f.table.begin(), f.table.end(), 1.0);
  Engine e(d);
  for (int t = 0; t < 6; ++t) e.advance();
  for (const auto& [s, a] : e.alpha_log())
    for (const auto& f : a)
      for (double x : f.table) CHECK(x == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("smoothing without later evidence equals filtering") {
  DynamicModel d = fixture::chain();
  Engine e(d);
  std::map<int, std::vector<Distribution>> filtered;
  std::vector<GroundTerm> terms{term0(d, "Weather"), term0(d, "Sick(p1)"), term0(d, "Cough(p2)")};
  // Evidence stops after step 3.
  for (int t = 0; t < 8; ++t) {
    if (t <= 3) e.observe(std::vector<EvidenceEntry>{{term0(d, "Cough(p1)"), t % 2}});
    std::vector<TemporalQuery> qs;
    for (const auto& g : terms) qs.push_back({g, t, t});
    for (auto& a : e.answer(qs)) filtered[t].push_back(a.dist);
    e.advance();
  }
  std::vector<TemporalQuery> qs;
  for (int pi = 3; pi < 8; ++pi)
    for (const auto& g : terms) qs.push_back({g, pi, 8});
  auto got = e.answer(qs);
  for (std::size_t i = 0; i < qs.size(); ++i)
    CHECK(got[i].dist.max_abs_diff(filtered[qs[i].target][i % terms.size()]) < 1e-12);
  // Earlier steps do see the later evidence.
  TemporalQuery early{terms[1], 2, 8};
  CHECK(e.answer(std::span(&early, 1))[0].dist.max_abs_diff(filtered[2][1]) > 1e-6);
}

TEST_CASE("smoothing and prediction match the oracle") {
  DynamicModel d = fixture::gex_dynamic_small();
  for (Strategy st : {Strategy::keep, Strategy::reinstantiate, Strategy::combined}) {
    Engine e(d, {st, st == Strategy::keep ? 0 : 2});
    Evidence log;
    for (int t = 0; t <= 4; ++t) {
      e.observe(std::vector{server(d, t != 2)});
      log.add(t, server(d, t != 2));
      if (t == 1) {
        EvidenceEntry u{term0(d, "User(x2)"), 1};
        e.observe(std::span(&u, 1));
        log.add(t, u);
      }
      if (t < 4) e.advance();
    }
    std::vector<TemporalQuery> qs;
    for (int pi = 0; pi <= 7; ++pi)
      for (const char* s : {"User(x1)", "User(x2)", "Infects(x2,y1)", "Server"})
        qs.push_back({term0(d, s), pi, 4});
    auto got = e.answer(qs);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      CAPTURE(i);
      CHECK(got[i].dist.max_abs_diff(oracle_temporal(d, qs[i], log)) < 1e-9);
    }
  }
}

TEST_CASE("a query at the current step answers on the current jtree") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d);
  e.advance();
  e.observe(std::vector{server(d, false)});
  TemporalQuery q{term0(d, "User(x3)"), 1, 1};
  auto got = e.answer(std::span(&q, 1));
  FoJtree j = e.current();
  pass_messages(j, j.out_cluster(), Pass::full);
  CHECK(got[0].dist.max_abs_diff(answer_query(j, q.term)) == 0.0);
  CHECK(got[0].query.kind() == QueryKind::filtering);
}

TEST_CASE("observed terms answer as point masses") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d);
  e.observe(std::vector{server(d, false)});
  TemporalQuery q{term0(d, "Server"), 0, 0};
  auto got = e.answer(std::span(&q, 1));
  CHECK(got[0].dist.probs == std::vector<double>{0.0, 1.0});
}

TEST_CASE("a lag-4 query after a lag-2 query matches answering it alone") {
  DynamicModel d = fixture::gex_dynamic();
  auto run = [&](std::vector<int> lags, Strategy st) {
    Engine e(d, {st, 10});
    for (int t = 0; t < 6; ++t) {
      e.observe(std::vector{server(d, t % 3 == 0)});
      e.advance();
    }
    std::vector<LagQuery> qs;
    for (int lag : lags) qs.push_back({term0(d, "User(x1)"), lag});
    return e.answer_lags(qs);
  };
  for (Strategy st : {Strategy::keep, Strategy::reinstantiate}) {
    auto both = run({2, 4}, st);
    auto two = run({2}, st);
    auto four = run({4}, st);
    CHECK(both[0].dist.probs == two[0].dist.probs);
    CHECK(both[1].dist.probs == four[0].dist.probs);
  }
}

TEST_CASE("scenario: compromised server, lagged questions") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s = cli::load_schedule(fixture::path("scenario.csv"), *d.vocab);
  SessionResult r = run_session(d, s);
  REQUIRE(r.answers.size() == 2);
  CHECK(r.answers[0].query.target == 14);
  CHECK(r.answers[1].query.target == 9);
  for (const auto& a : r.answers) {
    CHECK(a.query.kind() == QueryKind::smoothing);
    CHECK_FALSE(a.clamped);
    CHECK(a.dist.max_abs_diff(oracle_temporal(d, a.query, s.evidence)) < 1e-9);
  }
  CHECK(r.answers[0].dist.probs[0] == doctest::Approx(0.9963900332).epsilon(1e-9));
  CHECK(r.answers[1].dist.probs[0] == doctest::Approx(0.8312048275).epsilon(1e-9));
}

TEST_CASE("evaluation schedule: twelve answers per step with clamping") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s = evaluation(d, 10, 3);
  SessionResult r = run_session(d, s);
  CHECK(r.answers.size() == 12 * 11);
  CHECK(r.per_step.size() == 11);
  for (const auto& a : r.answers) {
    CHECK(a.clamped == (a.query.issued < a.lag));
    CHECK(a.query.target == std::max(0, a.query.issued - a.lag));
    double sum = 0.0;
    for (double p : a.dist.probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("a single step needs no alpha") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s;
  s.queries[0] = {{term0(d, "Admin(y2)"), 0}};
  SessionResult r = run_session(d, s);
  REQUIRE(r.answers.size() == 1);
  Engine e(d);
  CHECK(e.alpha_log().empty());
  TemporalQuery q{term0(d, "Admin(y2)"), 0, 0};
  CHECK(r.answers[0].dist.max_abs_diff(oracle_temporal(fixture::gex_dynamic(), q, {})) < 1e-12);
  CHECK(r.per_step[0].messages == 2 * (static_cast<long>(e.templates().j0.nodes.size()) - 1));
}

TEST_CASE("reinstantiated jtrees answer like the originals") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d, {Strategy::keep, 0});
  std::map<int, std::vector<Distribution>> original;
  std::vector<const char*> names{"Server", "User(x2)", "Admin(y1)", "Attack1"};
  for (int t = 0; t <= 5; ++t) {
    e.observe(std::vector{server(d, t % 2 == 1)});
    std::vector<TemporalQuery> qs;
    for (const char* n : names) qs.push_back({term0(d, n), t, t});
    for (auto& a : e.answer(qs)) original[t].push_back(a.dist);
    e.advance();
  }
  for (int s = 0; s <= 5; ++s) {
    FoJtree j = e.reinstantiate(s, nullptr, true);
    for (std::size_t i = 0; i < names.size(); ++i)
      CHECK(answer_query(j, term0(d, names[i])).max_abs_diff(original[s][i]) < 1e-12);
  }
  CHECK_THROWS(e.reinstantiate(e.step(), nullptr, true));
  CHECK_THROWS(e.reinstantiate(-1, nullptr, true));
}

TEST_CASE("keep with a bounded window refuses older steps") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d, {Strategy::keep, 2});
  for (int t = 0; t < 5; ++t) e.advance();
  CHECK(e.retained() == std::vector<int>{3, 4});
  LagQuery near{term0(d, "User(x1)"), 2};
  CHECK_NOTHROW(e.answer_lags(std::span(&near, 1)));
  LagQuery far{term0(d, "User(x1)"), 4};
  CHECK_THROWS(e.answer_lags(std::span(&far, 1)));
}

TEST_CASE("combined strategy reinstantiates from t-11 for a lag-20 query") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d, {Strategy::combined, 10});
  const int t = 25;
  for (int s = 0; s < t; ++s) e.advance();
  std::vector<int> expect(10);
  std::iota(expect.begin(), expect.end(), t - 10);
  CHECK(e.retained() == expect);
  const long n = static_cast<long>(e.templates().jt.nodes.size());
  TemporalQuery filter{term0(d, "Server"), t, t};
  e.answer(std::span(&filter, 1));
  Counters before = e.counters();
  LagQuery q{term0(d, "User(x1)"), 20};
  auto a = e.answer_lags(std::span(&q, 1));
  Counters used = e.counters() - before;
  // Ten window hits (outbound passes), nine inbound-only reinstantiations
  // from t-11 down to t-19, and one calibrated jtree at t-20.
  CHECK(used.messages == 10 * (n - 1) + 9 * (n - 1) + 2 * (n - 1));
  Engine r(d, {Strategy::reinstantiate, 10});
  for (int s = 0; s < t; ++s) r.advance();
  CHECK(r.answer_lags(std::span(&q, 1))[0].dist.max_abs_diff(a[0].dist) < 1e-12);
}

TEST_CASE("backward message accounting") {
  DynamicModel d = fixture::gex_dynamic();
  auto cost = [&](Strategy st, int lag) {
    Engine e(d, {st, 10});
    for (int s = 0; s < 6; ++s) {
      e.observe(std::vector{server(d, s % 2 == 0)});
      e.advance();
    }
    TemporalQuery filter{term0(d, "Server"), e.step(), e.step()};
    e.answer(std::span(&filter, 1));
    Counters before = e.counters();
    LagQuery q{term0(d, "Admin(y2)"), lag};
    e.answer_lags(std::span(&q, 1));
    return (e.counters() - before).messages;
  };
  const long n = static_cast<long>(construct_dynamic(d).jt.nodes.size());
  REQUIRE(n == 5);
  CHECK(cost(Strategy::keep, 1) == n - 1);
  CHECK(cost(Strategy::reinstantiate, 1) == 2 * (n - 1));
  CHECK(cost(Strategy::keep, 2) == 2 * (n - 1));
  CHECK(cost(Strategy::reinstantiate, 2) == (n - 1) + 2 * (n - 1));
}

TEST_CASE("strategies agree") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s = evaluation(d, 24, 9);
  SessionResult keep = run_session(d, s, {Strategy::keep, 10});
  SessionResult reinst = run_session(d, s, {Strategy::reinstantiate, 10});
  SessionResult comb = run_session(d, s, {Strategy::combined, 10});
  REQUIRE(keep.answers.size() == reinst.answers.size());
  REQUIRE(keep.answers.size() == comb.answers.size());
  for (std::size_t i = 0; i < keep.answers.size(); ++i) {
    CHECK(keep.answers[i].dist.max_abs_diff(reinst.answers[i].dist) < 1e-12);
    CHECK(keep.answers[i].dist.max_abs_diff(comb.answers[i].dist) < 1e-12);
  }
}

TEST_CASE("per-step work is constant once the schedule is steady") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s;
  s.last_step = 40;
  for (int t = 0; t <= s.last_step; ++t) {
    s.evidence.add(t, server(d, true));
    s.queries[t] = twelve(d);
  }
  SessionResult r = run_session(d, s, {Strategy::keep, 10});
  // From step 11 on no lag reaches J0; the last step has no forward pass.
  for (int t = 12; t < s.last_step; ++t) {
    CAPTURE(t);
    CHECK(r.per_step[t] == r.per_step[11]);
  }
  CHECK(r.per_step[11].messages > 0);
}

TEST_CASE("filtering depends on the past only through alpha") {
  DynamicModel d = fixture::gex_dynamic();
  const int t = 4;
  // History A observes users and attacks; history B only the server.
  Engine a(d), b(d);
  for (int s = 0; s < t; ++s) {
    std::vector<EvidenceEntry> ea{server(d, true)};
    if (s < t - 1) {
      ea.push_back({term0(d, "User(x1)"), s % 2});
      ea.push_back({term0(d, "Attack2"), 0});
    }
    a.observe(ea);
    b.observe(std::vector{server(d, true)});
    a.advance();
    b.advance();
  }
  std::stringstream ca, cb;
  a.write_checkpoint(ca);
  b.write_checkpoint(cb);
  // Splice A's last alpha into B's history.
  std::vector<std::string> la, lb;
  for (std::string line; std::getline(ca, line);) la.push_back(line);
  for (std::string line; std::getline(cb, line);) lb.push_back(line);
  REQUIRE(la.size() == static_cast<std::size_t>(t));
  std::string spliced;
  for (int s = 0; s < t - 1; ++s) spliced += lb[s] + "\n";
  auto alpha_a = la.back().substr(la.back().find("\"alpha\""));
  auto& last = lb.back();
  spliced += last.substr(0, last.find("\"alpha\"")) + alpha_a + "\n";
  std::istringstream in(spliced);
  Engine c = Engine::resume(d, {}, in);
  REQUIRE(c.step() == t);

  std::vector<TemporalQuery> qs;
  for (const char* n : {"Server", "User(x1)", "User(x3)", "Admin(y2)", "Infects(x1,y2)"})
    qs.push_back({term0(d, n), t, t});
  auto ra = a.answer(qs);
  auto rb = b.answer(qs);
  auto rc = c.answer(qs);
  double differs = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    CHECK(rc[i].dist.max_abs_diff(ra[i].dist) < 1e-12);
    differs = std::max(differs, rb[i].dist.max_abs_diff(ra[i].dist));
  }
  CHECK(differs > 1e-6);
}

TEST_CASE("checkpoints round trip") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d);
  for (int s = 0; s < 5; ++s) {
    e.observe(std::vector<EvidenceEntry>{server(d, s != 1), {term0(d, "Infects(x2,y2)"), s % 2}});
    e.advance();
  }
  std::stringstream cp;
  e.write_checkpoint(cp);
  std::istringstream in(cp.str());
  Engine r = Engine::resume(d, {}, in);
  CHECK(r.step() == e.step());
  REQUIRE(r.alpha_log().size() == e.alpha_log().size());
  for (const auto& [s, a] : e.alpha_log()) {
    const Message& b = r.alpha_log().at(s);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].atoms == b[i].atoms);
      CHECK(a[i].constraint == b[i].constraint);
      CHECK(fixture::max_rel_diff(a[i].table, b[i].table) < 1e-15);
    }
    CHECK(std::vector<EvidenceEntry>(e.evidence_log().at(s).begin(), e.evidence_log().at(s).end()) ==
          std::vector<EvidenceEntry>(r.evidence_log().at(s).begin(), r.evidence_log().at(s).end()));
  }
  std::vector<TemporalQuery> qs;
  for (int pi : {0, 2, 4, 5, 7}) qs.push_back({term0(d, "User(x2)"), pi, 5});
  auto x = e.answer(qs);
  auto y = r.answer(qs);
  for (std::size_t i = 0; i < qs.size(); ++i) CHECK(x[i].dist.max_abs_diff(y[i].dist) < 1e-12);

  std::istringstream bad("{\"step\": 1, \"evidence\": [], \"alpha\": []}\n");
  CHECK_THROWS(Engine::resume(d, {}, bad));
}

TEST_CASE("engine agrees with unrolled static inference") {
  DynamicModel d = fixture::gex_dynamic();
  Schedule s = evaluation(d, 6, 21);
  SessionResult r = run_session(d, s);
  std::vector<TemporalQuery> qs;
  for (const auto& a : r.answers) qs.push_back(a.query);
  auto u = unrolled_answers(d, s.evidence, qs);
  for (std::size_t i = 0; i < qs.size(); ++i) CHECK(r.answers[i].dist.max_abs_diff(u[i]) < 1e-9);
}

TEST_CASE("queries must be issued at the current step") {
  DynamicModel d = fixture::gex_dynamic();
  Engine e(d);
  e.advance();
  TemporalQuery q{term0(d, "Server"), 0, 0};
  CHECK_THROWS(e.answer(std::span(&q, 1)));
  CHECK_THROWS(e.observe(std::vector<EvidenceEntry>{{fixture::term(*d.vocab, "User(x1)", -1), 0}}));
}
