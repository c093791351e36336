#pragma once

// Fixtures and ground-truth helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <random>
#include <string>
#include <vector>

#include "ldjt/model_format.hpp"
#include "ldjt/oracle.hpp"

namespace fixture {

inline std::string path(const std::string& name) { return std::string(LDJT_DATA_DIR) + "/" + name; }

inline ldjt::Model gex() { return std::get<ldjt::Model>(ldjt::load_model(path("gex.model"))); }

inline ldjt::DynamicModel gex_dynamic() {
  return std::get<ldjt::DynamicModel>(ldjt::load_model(path("gex_dynamic.model")));
}

inline ldjt::DynamicModel chain() {
  return std::get<ldjt::DynamicModel>(ldjt::load_model(path("chain.model")));
}

/// G^ex over smaller domains, for enumerating several unrolled steps.
inline ldjt::DynamicModel gex_dynamic_small() {
  std::ifstream f(path("gex_dynamic.model"));
  std::stringstream ss;
  ss << f.rdbuf();
  std::string text = ss.str();
  auto swap = [&](const std::string& from, const std::string& to) {
    text.replace(text.find(from), from.size(), to);
  };
  swap("domain X = {x1, x2, x3}", "domain X = {x1, x2}");
  swap("domain Y = {y1, y2}", "domain Y = {y1}");
  return ldjt::parse_dynamic_model(text);
}

inline const ldjt::Parfactor& named(const ldjt::Model& m, const std::string& name) {
  for (const auto& f : m.parfactors)
    if (f.name == name) return f;
  throw std::runtime_error("no parfactor " + name);
}

inline ldjt::GroundTerm term(const ldjt::Vocabulary& v, const std::string& text,
                             std::optional<int> time = std::nullopt) {
  return ldjt::parse_term(text, v, time);
}

/// Unnormalised table of the product of `fs` over the ground variables in
/// `keep` (row-major, last fastest), summing every other variable out.
/// Computed by enumeration over the oracle's grounding.
inline std::vector<double> ground_table(const std::vector<ldjt::Parfactor>& fs,
                                        const ldjt::VocabPtr& vocab,
                                        const std::vector<ldjt::GroundTerm>& keep) {
  ldjt::Model m{vocab, fs};
  ldjt::GroundModel g = ldjt::ground_model(m);
  // Variables of `keep` absent from the factors still index the table.
  std::vector<ldjt::GroundTerm> vars = g.vars;
  for (const auto& k : keep)
    if (g.index(k) < 0) vars.push_back(k);
  std::vector<int> cards;
  for (const auto& t : vars) cards.push_back(static_cast<int>(vocab->prv(t.prv).range.size()));
  std::vector<int> kpos;
  std::size_t size = 1;
  for (const auto& k : keep) {
    kpos.push_back(static_cast<int>(std::find(vars.begin(), vars.end(), k) - vars.begin()));
    size *= static_cast<std::size_t>(cards[kpos.back()]);
  }
  std::vector<double> out(size, 0.0);
  std::vector<int> val(vars.size(), 0);
  while (true) {
    double p = 1.0;
    for (const auto& f : g.factors) {
      std::size_t idx = 0;
      for (std::size_t i = 0; i < f.vars.size(); ++i)
        idx = idx * static_cast<std::size_t>(f.cards[i]) + static_cast<std::size_t>(val[f.vars[i]]);
      p *= f.table[idx];
    }
    std::size_t idx = 0;
    for (int k : kpos) idx = idx * static_cast<std::size_t>(cards[k]) + static_cast<std::size_t>(val[k]);
    out[idx] += p;
    std::size_t i = vars.size();
    while (i > 0) {
      if (++val[i - 1] < cards[i - 1]) break;
      val[i - 1] = 0;
      --i;
    }
    if (i == 0) break;
  }
  return out;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    d = std::max(d, std::abs(a[i] - b[i]) / scale);
  }
  return d;
}

/// Random static model: up to two logvars, 3-6 PRVs with at most two
/// parameters, 2-5 parfactors of one to three PRVs with positive tables.
/// Draws again until the grounding has at most `max_vars` variables.
inline ldjt::Model random_model(std::uint64_t seed, std::size_t max_vars = 14);

inline ldjt::Model random_model_once(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto vocab = std::make_shared<ldjt::Vocabulary>();
  int nlv = pick(1, 2);
  for (int i = 0; i < nlv; ++i) {
    ldjt::Logvar lv{std::string(1, static_cast<char>('X' + i)), {}};
    for (int c = 0; c < pick(1, 3); ++c) lv.domain.push_back(lv.name + std::to_string(c));
    vocab->add_logvar(lv);
  }
  int nprv = pick(3, 6);
  for (int i = 0; i < nprv; ++i) {
    ldjt::PrvDecl p;
    p.name = "P" + std::to_string(i);
    p.range = {"a", "b"};
    if (pick(0, 2) == 0) p.range.push_back("c");
    int np = pick(0, nlv);
    for (int k = 0; k < np; ++k) p.params.push_back(k);
    vocab->add_prv(p);
  }
  ldjt::Model m;
  m.vocab = vocab;
  int nf = pick(2, 5);
  std::uniform_real_distribution<double> pot(0.1, 3.0);
  std::vector<bool> used(static_cast<std::size_t>(nprv), false);
  for (int i = 0; i < nf || std::find(used.begin(), used.end(), false) != used.end(); ++i) {
    ldjt::Parfactor f;
    f.name = "f" + std::to_string(i);
    std::set<int> prvs;
    // Leftover PRVs each get a parfactor so that every PRV is used.
    auto unused = std::find(used.begin(), used.end(), false);
    if (i >= nf) prvs.insert(static_cast<int>(unused - used.begin()));
    int k = pick(1, 3);
    while (static_cast<int>(prvs.size()) < std::min(k, nprv)) prvs.insert(pick(0, nprv - 1));
    for (int p : prvs) {
      used[static_cast<std::size_t>(p)] = true;
      const auto& d = vocab->prv(p);
      ldjt::Atom a;
      a.prv = p;
      a.card = static_cast<int>(d.range.size());
      for (auto lv : d.params) {
        a.args.push_back({lv, ldjt::kFree});
        if (!f.constraint.has(lv)) {
          std::vector<int> all(vocab->logvar(lv).domain.size());
          std::iota(all.begin(), all.end(), 0);
          f.constraint.set(lv, all);
        }
      }
      f.atoms.push_back(a);
    }
    f.table.resize(f.size());
    for (double& x : f.table) x = pot(rng);
    m.parfactors.push_back(std::move(f));
  }
  m.validate();
  return m;
}

inline ldjt::Model random_model(std::uint64_t seed, std::size_t max_vars) {
  std::mt19937_64 rng(seed);
  while (true) {
    ldjt::Model m = random_model_once(rng);
    if (ldjt::ground_model(m).vars.size() <= max_vars) return m;
  }
}

}  // namespace fixture
