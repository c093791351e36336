#include "ldjt/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "ldjt/model_format.hpp"
#include "ldjt/oracle.hpp"

namespace ldjt::cli {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits on commas outside quotes and parentheses.
std::vector<std::string> fields(std::string_view line) {
  std::vector<std::string> out(1);
  int depth = 0;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
      continue;
    }
    if (!quoted && c == '(') ++depth;
    if (!quoted && c == ')') --depth;
    if (!quoted && depth == 0 && c == ',') {
      out.emplace_back();
      continue;
    }
    out.back() += c;
  }
  for (auto& f : out) f = trim(f);
  return out;
}

std::string format_dist(const Distribution& d) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g", d.probs[i]);
    out += (i ? "|" : "") + d.values[i] + ":" + buf;
  }
  return out;
}

std::vector<int> int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw CLI::ValidationError("not an integer: " + tok);
    out.push_back(v);
  }
  return out;
}

std::vector<GroundTerm> term_list(const std::string& text, const Vocabulary& v) {
  std::vector<GroundTerm> out;
  for (const auto& f : fields(text))
    if (!f.empty()) out.push_back(parse_term(f, v, 0));
  return out;
}

/// Every ground term of the slice-0 PRVs.
std::vector<GroundTerm> all_terms(const Vocabulary& v) {
  std::vector<GroundTerm> out;
  for (std::size_t i = 0; i < v.prv_count(); ++i) {
    const PrvDecl& p = v.prv(static_cast<PrvId>(i));
    if (p.time != 0) continue;
    std::vector<int> at(p.params.size(), 0);
    while (true) {
      out.push_back(GroundTerm{static_cast<PrvId>(i), at});
      std::size_t k = at.size();
      while (k > 0) {
        if (++at[k - 1] < static_cast<int>(v.logvar(p.params[k - 1]).domain.size())) break;
        at[k - 1] = 0;
        --k;
      }
      if (k == 0) break;
    }
  }
  return out;
}

DynamicModel load_dynamic(const std::string& path) {
  auto m = load_model(path);
  if (!std::holds_alternative<DynamicModel>(m))
    throw ModelError("'" + path + "' is a static model; a dynamic model is required");
  return std::get<DynamicModel>(std::move(m));
}

Strategy strategy_of(const std::string& s) {
  if (s == "keep") return Strategy::keep;
  if (s == "reinst" || s == "reinstantiate") return Strategy::reinstantiate;
  return Strategy::combined;
}

struct Common {
  std::string model;
  std::string strategy = "keep";
  int window = 10;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--model", c.model, "model file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--strategy", c.strategy, "keep | reinst | combined")
      ->check(CLI::IsMember({"keep", "reinst", "reinstantiate", "combined"}));
  cmd->add_option("--window", c.window, "retained jtrees (keep: 0 = unbounded)")
      ->check(CLI::NonNegativeNumber);
}

int cmd_run(const Common& c, const std::vector<std::string>& files, int max_t,
            const std::string& csv, const std::string& checkpoint, std::ostream& out) {
  DynamicModel d = load_dynamic(c.model);
  Schedule s;
  for (const auto& f : files) merge(s, load_schedule(f, *d.vocab));
  if (max_t >= 0) s.last_step = max_t;

  Engine e(d, {strategy_of(c.strategy), c.window});
  std::vector<Answer> answers;
  for (int t = 0; t <= s.last_step; ++t) {
    e.observe(s.evidence.at(t));
    if (auto it = s.queries.find(t); it != s.queries.end()) {
      auto a = e.answer_lags(it->second);
      answers.insert(answers.end(), a.begin(), a.end());
    }
    if (t < s.last_step) e.advance();
  }
  if (csv.empty()) {
    write_report(out, answers, *d.vocab);
  } else {
    std::ofstream f(csv);
    write_report(f, answers, *d.vocab);
  }
  if (!checkpoint.empty()) {
    std::ofstream f(checkpoint);
    e.write_checkpoint(f);
  }
  return ok;
}

int cmd_verify(const Common& c, int max_t, std::uint64_t seed, int count,
               const std::string& against, double tolerance, std::ostream& out) {
  DynamicModel d = load_dynamic(c.model);
  const Vocabulary& v = *d.vocab;
  auto terms = all_terms(v);
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  Schedule s;
  s.last_step = max_t;
  for (int t = 0; t <= max_t; ++t) {
    if (pick(0, 1) == 0) continue;
    const GroundTerm& term = terms[static_cast<std::size_t>(pick(0, static_cast<int>(terms.size()) - 1))];
    s.evidence.add(t, {term, pick(0, static_cast<int>(v.prv(term.prv).range.size()) - 1)});
  }
  for (int i = 0; i < count; ++i) {
    int t = pick(0, max_t);
    const GroundTerm& term = terms[static_cast<std::size_t>(pick(0, static_cast<int>(terms.size()) - 1))];
    s.queries[t].push_back({term, pick(-3, t)});
  }

  auto r = run_session(d, s, {strategy_of(c.strategy), c.window});
  std::vector<Distribution> ref;
  if (against == "unrolled") {
    std::vector<TemporalQuery> qs;
    for (const auto& a : r.answers) qs.push_back(a.query);
    ref = unrolled_answers(d, s.evidence, qs);
  } else {
    for (const auto& a : r.answers) ref.push_back(oracle_temporal(d, a.query, s.evidence));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < r.answers.size(); ++i)
    worst = std::max(worst, r.answers[i].dist.max_abs_diff(ref[i]));
  char buf[160];
  std::snprintf(buf, sizeof buf, "queries %zu  reference %s  max deviation %.3e  tolerance %.1e  %s\n",
                r.answers.size(), against.c_str(), worst, tolerance,
                worst <= tolerance ? "PASS" : "FAIL");
  out << buf;
  return worst <= tolerance ? ok : verification;
}

int cmd_bench(const Common& c, const std::string& max_ts, const std::string& terms_text,
              const std::string& lags_text, int unrolled_max, const std::string& csv,
              const std::string& dat, std::ostream& out) {
  DynamicModel d = load_dynamic(c.model);
  auto terms = term_list(terms_text, *d.vocab);
  auto lags = int_list(lags_text);
  auto steps = int_list(max_ts);
  using clock = std::chrono::steady_clock;

  std::ostringstream rows, plot;
  rows << "engine,maxT,seconds,messages,eliminations\n";
  plot << "# maxT ldjt_seconds unrolled_seconds\n";
  for (int max_t : steps) {
    if (max_t < 0) throw CLI::ValidationError("maxT must be non-negative");
    Schedule s;
    s.last_step = max_t;
    for (int t = 0; t <= max_t; ++t)
      for (const auto& term : terms)
        for (int lag : lags) s.queries[t].push_back({term, lag});

    auto t0 = clock::now();
    auto r = run_session(d, s, {strategy_of(c.strategy), c.window});
    double sec = std::chrono::duration<double>(clock::now() - t0).count();
    Counters total;
    for (const auto& x : r.per_step) total += x;
    char buf[128];
    std::snprintf(buf, sizeof buf, "ldjt,%d,%.6f,%ld,%ld\n", max_t, sec, total.messages,
                  total.eliminations);
    rows << buf;

    std::string unrolled_sec = "NaN";
    if (max_t <= unrolled_max) {
      std::vector<TemporalQuery> qs;
      for (const auto& [t, lq] : s.queries)
        for (const auto& q : lq) qs.push_back(resolve(q, t));
      Counters uc;
      auto u0 = clock::now();
      unrolled_answers(d, s.evidence, qs, &uc);
      double usec = std::chrono::duration<double>(clock::now() - u0).count();
      std::snprintf(buf, sizeof buf, "unrolled,%d,%.6f,%ld,%ld\n", max_t, usec, uc.messages,
                    uc.eliminations);
      rows << buf;
      std::snprintf(buf, sizeof buf, "%.6f", usec);
      unrolled_sec = buf;
    }
    std::snprintf(buf, sizeof buf, "%d %.6f ", max_t, sec);
    plot << buf << unrolled_sec << '\n';
  }
  if (csv.empty()) {
    out << rows.str();
  } else {
    std::ofstream(csv) << rows.str();
  }
  if (!dat.empty()) std::ofstream(dat) << plot.str();
  return ok;
}

}  // namespace

Schedule parse_schedule(std::string_view text, const Vocabulary& vocab) {
  Schedule s;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto f = fields(t);
    if (f.size() != 4) throw ParseError("expected 4 fields: step,kind,term,value", lineno, 1);
    if (f[0] == "step") continue;
    int step = 0;
    try {
      std::size_t used = 0;
      step = std::stoi(f[0], &used);
      if (used != f[0].size() || step < 0) throw std::invalid_argument("step");
    } catch (const std::exception&) {
      throw ParseError("bad step '" + f[0] + "'", lineno, 1);
    }
    GroundTerm term;
    try {
      term = parse_term(f[2], vocab, 0);
    } catch (const ModelError& e) {
      throw ParseError(e.what(), lineno, 1);
    }
    if (f[1] == "evidence") {
      int value = vocab.prv(term.prv).range_index(f[3]);
      if (value < 0) throw ParseError("'" + f[3] + "' is not in the range of " + f[2], lineno, 1);
      s.evidence.add(step, {term, value});
    } else if (f[1] == "query") {
      int lag = 0;
      try {
        std::size_t used = 0;
        lag = std::stoi(f[3], &used);
        if (used != f[3].size()) throw std::invalid_argument("lag");
      } catch (const std::exception&) {
        throw ParseError("bad lag '" + f[3] + "'", lineno, 1);
      }
      s.queries[step].push_back({term, lag});
    } else {
      throw ParseError("kind must be 'evidence' or 'query'", lineno, 1);
    }
    s.last_step = std::max(s.last_step, step);
  }
  return s;
}

Schedule load_schedule(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path.string(), 0, 0);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_schedule(ss.str(), vocab);
}

void merge(Schedule& into, const Schedule& more) {
  for (const auto& [step, entries] : more.evidence.steps())
    for (const auto& e : entries) into.evidence.add(step, e);
  for (const auto& [step, qs] : more.queries)
    into.queries[step].insert(into.queries[step].end(), qs.begin(), qs.end());
  into.last_step = std::max(into.last_step, more.last_step);
}

void write_report(std::ostream& out, std::span<const Answer> answers, const Vocabulary& vocab) {
  out << "step,target,lag,kind,term,clamped,distribution\n";
  for (const auto& a : answers)
    out << a.query.issued << ',' << a.query.target << ',' << a.lag << ','
        << to_string(a.query.kind()) << ",\"" << term_label(a.query.term, vocab) << "\","
        << (a.clamped ? "yes" : "no") << ',' << format_dist(a.dist) << '\n';
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lifted dynamic junction tree inference"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> files;
  int run_max_t = -1;
  std::string csv, checkpoint;
  auto* run = app.add_subcommand("run", "answer the queries of a schedule");
  add_common(run, common);
  run->add_option("--queries", files, "schedule CSV with queries (and evidence)")
      ->check(CLI::ExistingFile);
  run->add_option("--evidence", files, "schedule CSV with evidence")->check(CLI::ExistingFile);
  run->add_option("--max-t", run_max_t, "last step (default: last step in the files)");
  run->add_option("--csv", csv, "write the report here instead of stdout");
  run->add_option("--checkpoint", checkpoint, "write evidence and α records here");

  int verify_t = 4;
  std::uint64_t seed = 1;
  int count = 50;
  std::string against = "oracle";
  double tolerance = 1e-9;
  auto* verify = app.add_subcommand("verify", "compare random queries with a reference");
  add_common(verify, common);
  verify->add_option("--max-t", verify_t, "last step")->check(CLI::NonNegativeNumber);
  verify->add_option("--seed", seed, "random seed");
  verify->add_option("--count", count, "number of random queries")->check(CLI::NonNegativeNumber);
  verify->add_option("--against", against, "oracle | unrolled")
      ->check(CLI::IsMember({"oracle", "unrolled"}));
  verify->add_option("--tolerance", tolerance, "maximum absolute deviation");

  std::string bench_t = "10,100,1000,10000";
  std::string terms = "Server,User(x1),Admin(y1)";
  std::string lags = "0,2,5,10";
  int unrolled_max = 8;
  std::string dat;
  auto* bench = app.add_subcommand("bench", "time sessions over growing horizons");
  add_common(bench, common);
  bench->add_option("--max-t", bench_t, "comma-separated horizons");
  bench->add_option("--terms", terms, "comma-separated query terms");
  bench->add_option("--lags", lags, "comma-separated lags");
  bench->add_option("--unrolled-max", unrolled_max, "largest horizon for the unrolled engine");
  bench->add_option("--csv", csv, "write the CSV here instead of stdout");
  bench->add_option("--dat", dat, "gnuplot data file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (run->parsed()) return cmd_run(common, files, run_max_t, csv, checkpoint, out);
    if (verify->parsed())
      return cmd_verify(common, verify_t, seed, count, against, tolerance, out);
    return cmd_bench(common, bench_t, terms, lags, unrolled_max, csv, dat, out);
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return parse;
  } catch (const ModelError& e) {
    err << "model error: " << e.what() << '\n';
    return parse;
  } catch (const CLI::Error& e) {
    err << "usage: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << "inference error: " << e.what() << '\n';
    return inference;
  }
}

}  // namespace ldjt::cli
