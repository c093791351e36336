#include "ldjt/model_format.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ldjt {

namespace {

enum class Tok { ident, number, punct, end };

struct Token {
  Tok kind = Tok::end;
  std::string text;
  int line = 1;
  int column = 1;
};

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    Token t;
    t.line = line;
    t.column = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_'))
        ++j;
      t.kind = Tok::ident;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.'))
        ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          j = k;
          while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
        }
      }
      // Symbols such as `0a` are identifiers that start with a digit.
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        t.kind = Tok::ident;
        ++j;
      }
      if (t.kind != Tok::ident) t.kind = Tok::number;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::string_view("(){}[],;=|:@->").find(c) != std::string_view::npos) {
      t.kind = Tok::punct;
      t.text = std::string(1, c);
      advance(1);
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.line = line;
  end.column = col;
  out.push_back(end);
  return out;
}

enum class Section { none, initial, transition };

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(tokenize(src)) {
    for (const auto& t : toks_)
      if (t.kind == Tok::punct && t.text == "[") dynamic_ = true;
  }

  AnyModel run() {
    if (peek().kind == Tok::end) throw ParseError("empty document", peek().line, peek().column);
    while (peek().kind != Tok::end) statement();
    if (!dynamic_) {
      Model m{vocab_, std::move(static_)};
      m.validate();
      return m;
    }
    DynamicModel d;
    d.vocab = vocab_;
    d.initial = Model{vocab_, std::move(initial_)};
    d.transition = Model{vocab_, std::move(transition_)};
    d.validate();
    return d;
  }

 private:
  const Token& peek(std::size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  [[noreturn]] void fail(const std::string& what, const Token& at) const {
    throw ParseError(what, at.line, at.column);
  }
  [[noreturn]] void fail(const std::string& what) const { fail(what, peek()); }
  bool is(std::string_view punct) const {
    return peek().kind == Tok::punct && peek().text == punct;
  }
  void expect(std::string_view punct) {
    if (!is(punct)) fail("expected '" + std::string(punct) + "'");
    next();
  }
  std::string ident() {
    if (peek().kind != Tok::ident) fail("expected an identifier");
    return next().text;
  }
  // Identifier or bare number used as a symbol (constants, range values).
  std::string symbol() {
    if (peek().kind != Tok::ident && peek().kind != Tok::number) fail("expected a symbol");
    return next().text;
  }
  std::vector<std::string> symbol_set() {
    expect("{");
    std::vector<std::string> out;
    if (!is("}")) {
      out.push_back(symbol());
      while (is(",")) {
        next();
        out.push_back(symbol());
      }
    }
    expect("}");
    return out;
  }

  void statement() {
    const Token& t = peek();
    if (t.kind == Tok::punct && t.text == "[") return section();
    if (t.kind != Tok::ident) fail("expected 'domain', 'prv' or 'parfactor'");
    if (t.text == "domain") return domain();
    if (t.text == "prv") return prv();
    if (t.text == "parfactor") return parfactor();
    fail("unknown statement '" + t.text + "'");
  }

  void section() {
    const Token& at = next();
    std::string name = ident();
    if (name == "g0") {
      section_ = Section::initial;
    } else if (name == "g" && is("-")) {
      next();
      expect(">");
      section_ = Section::transition;
    } else {
      fail("unknown section; expected [g0] or [g->]", at);
    }
    expect("]");
  }

  void domain() {
    next();
    const Token& at = peek();
    std::string name = ident();
    expect("=");
    auto values = symbol_set();
    try {
      vocab_->add_logvar(Logvar{name, values});
    } catch (const ModelError& e) {
      fail(e.what(), at);
    }
  }

  std::optional<int> suffix() {
    std::optional<int> time;
    if (dynamic_) time = 0;
    if (!is("@")) return time;
    const Token& at = next();
    if (peek().kind == Tok::ident && peek().text == "t") {
      next();
      if (!dynamic_) fail("relative time suffix in a static document", at);
      if (is("-")) {
        next();
        if (peek().kind != Tok::number || peek().text != "1") fail("only t-1 is supported");
        next();
        if (section_ == Section::initial) fail("@t-1 is not allowed in [g0]", at);
        return -1;
      }
      return 0;
    }
    if (peek().kind != Tok::number) fail("expected a time suffix");
    int n = std::stoi(next().text);
    if (dynamic_ && n != 0) fail("dynamic documents only allow @0, @t and @t-1", at);
    return n;
  }

  void prv() {
    next();
    const Token& at = peek();
    PrvDecl decl;
    decl.name = ident();
    if (is("(")) {
      next();
      do {
        const Token& lt = peek();
        std::string lv = ident();
        auto id = vocab_->find_logvar(lv);
        if (!id) fail("undeclared logvar '" + lv + "'", lt);
        decl.params.push_back(*id);
        if (!is(",")) break;
        next();
      } while (true);
      expect(")");
    }
    decl.time = suffix();
    expect(":");
    decl.range = symbol_set();
    try {
      vocab_->add_prv(decl);
    } catch (const ModelError& e) {
      fail(e.what(), at);
    }
    declared_.insert(decl.name);
  }

  Atom atom() {
    const Token& at = peek();
    std::string name = ident();
    std::vector<std::pair<std::string, Token>> args;
    if (is("(")) {
      next();
      do {
        const Token& a = peek();
        args.emplace_back(symbol(), a);
        if (!is(",")) break;
        next();
      } while (true);
      expect(")");
    }
    auto time = suffix();
    if (!declared_.count(name)) fail("undeclared PRV '" + name + "'", at);
    PrvDecl base;
    for (std::size_t i = 0; i < vocab_->prv_count(); ++i)
      if (vocab_->prv(static_cast<PrvId>(i)).name == name) base = vocab_->prv(static_cast<PrvId>(i));
    if (args.size() != base.params.size())
      fail("PRV '" + name + "' expects " + std::to_string(base.params.size()) + " arguments", at);
    base.time = time;
    PrvId id;
    try {
      id = vocab_->add_prv(base);
    } catch (const ModelError& e) {
      fail(e.what(), at);
    }
    Atom a;
    a.prv = id;
    a.card = static_cast<int>(base.range.size());
    for (std::size_t i = 0; i < args.size(); ++i) {
      const Logvar& lv = vocab_->logvar(base.params[i]);
      const auto& [text, tok] = args[i];
      if (text == lv.name) {
        a.args.push_back(Arg{base.params[i], kFree});
        continue;
      }
      int c = lv.index_of(text);
      if (c >= 0) {
        a.args.push_back(Arg{base.params[i], c});
        continue;
      }
      if (vocab_->find_logvar(text))
        fail("logvar '" + text + "' does not match parameter " + lv.name + " of " + name, tok);
      if (!text.empty() && std::isupper(static_cast<unsigned char>(text[0])))
        fail("undeclared logvar '" + text + "'", tok);
      fail("'" + text + "' is not a constant of " + lv.name, tok);
    }
    return a;
  }

  void parfactor() {
    const Token& kw = next();
    Parfactor f;
    f.name = ident();
    if (dynamic_ && section_ == Section::none)
      fail("parfactor outside a [g0] or [g->] section", kw);
    expect("(");
    do {
      f.atoms.push_back(atom());
      if (!is(",")) break;
      next();
    } while (true);
    expect(")");
    for (LogvarId lv : f.logvars())
      f.constraint.set(lv, full_domain(lv));
    if (is("|")) {
      next();
      if (is("(")) fail("non-Cartesian constraints are not supported; use 'X in {...}' per logvar");
      do {
        const Token& lt = peek();
        std::string lv = ident();
        auto id = vocab_->find_logvar(lv);
        if (!id) fail("undeclared logvar '" + lv + "'", lt);
        if (!f.constraint.has(*id))
          fail("logvar '" + lv + "' does not occur in the parfactor's arguments", lt);
        if (peek().kind != Tok::ident || peek().text != "in") fail("expected 'in'");
        next();
        const Token& st = peek();
        std::vector<int> allowed;
        for (const auto& c : symbol_set()) {
          int idx = vocab_->logvar(*id).index_of(c);
          if (idx < 0) fail("'" + c + "' is not a constant of " + lv, st);
          allowed.push_back(idx);
        }
        if (allowed.empty()) fail("empty allowed set for " + lv, st);
        f.constraint.set(*id, std::move(allowed));
        if (!is(",")) break;
        next();
      } while (true);
    }
    table(f, kw);
    for (std::size_t i = 0; i < f.atoms.size(); ++i)
      for (std::size_t j = i + 1; j < f.atoms.size(); ++j)
        if (f.atoms[i] == f.atoms[j]) fail("parfactor '" + f.name + "' repeats an argument", kw);
    switch (section_) {
      case Section::none: static_.push_back(std::move(f)); break;
      case Section::initial:
        for (const auto& a : f.atoms)
          if (vocab_->prv(a.prv).time != 0) fail("[g0] parfactors must use slice 0", kw);
        initial_.push_back(std::move(f));
        break;
      case Section::transition: transition_.push_back(std::move(f)); break;
    }
  }

  void table(Parfactor& f, const Token& kw) {
    expect("{");
    f.table.assign(f.size(), 0.0);
    std::vector<char> seen(f.size(), 0);
    auto strides = f.strides();
    std::size_t rows = 0;
    while (!is("}")) {
      const Token& rt = peek();
      expect("(");
      std::size_t idx = 0;
      for (std::size_t i = 0; i < f.atoms.size(); ++i) {
        if (i) expect(",");
        const Token& vt = peek();
        std::string v = symbol();
        int r = vocab_->prv(f.atoms[i].prv).range_index(v);
        if (r < 0) fail("'" + v + "' is not in the range of " + vocab_->prv(f.atoms[i].prv).name, vt);
        idx += strides[i] * static_cast<std::size_t>(r);
      }
      expect(")");
      expect("=");
      if (peek().kind != Tok::number) fail("expected a potential value");
      const Token& nt = next();
      double value = 0.0;
      try {
        value = std::stod(nt.text);
      } catch (const std::exception&) {
        fail("malformed number '" + nt.text + "'", nt);
      }
      if (seen[idx]) fail("duplicate potential row", rt);
      seen[idx] = 1;
      f.table[idx] = value;
      ++rows;
      if (is(";")) next();
    }
    expect("}");
    if (rows != f.size())
      fail("incomplete potential table for '" + f.name + "': expected " +
               std::to_string(f.size()) + " rows, found " + std::to_string(rows),
           kw);
  }

  std::vector<int> full_domain(LogvarId lv) const {
    std::vector<int> all(vocab_->logvar(lv).domain.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  bool dynamic_ = false;
  Section section_ = Section::none;
  std::shared_ptr<Vocabulary> vocab_ = std::make_shared<Vocabulary>();
  std::set<std::string> declared_;
  std::vector<Parfactor> static_, initial_, transition_;
};

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Keep the shortest representation that reads back exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

std::string time_suffix(const Vocabulary& vocab, PrvId id, bool dynamic) {
  auto t = vocab.prv(id).time;
  if (!t) return {};
  if (dynamic) return *t == -1 ? "@t-1" : "";
  return "@" + std::to_string(*t);
}

void print_declarations(std::ostringstream& out, const Vocabulary& vocab, bool dynamic) {
  for (std::size_t i = 0; i < vocab.logvar_count(); ++i) {
    const Logvar& lv = vocab.logvar(static_cast<LogvarId>(i));
    out << "domain " << lv.name << " = {";
    for (std::size_t k = 0; k < lv.domain.size(); ++k) out << (k ? ", " : "") << lv.domain[k];
    out << "}\n";
  }
  std::set<std::string> done;
  for (std::size_t i = 0; i < vocab.prv_count(); ++i) {
    const PrvDecl& p = vocab.prv(static_cast<PrvId>(i));
    if (!done.insert(p.name).second) continue;
    out << "prv " << p.name;
    if (!p.params.empty()) {
      out << '(';
      for (std::size_t k = 0; k < p.params.size(); ++k)
        out << (k ? ", " : "") << vocab.logvar(p.params[k]).name;
      out << ')';
    }
    out << time_suffix(vocab, static_cast<PrvId>(i), dynamic) << " : {";
    for (std::size_t k = 0; k < p.range.size(); ++k) out << (k ? ", " : "") << p.range[k];
    out << "}\n";
  }
}

void print_parfactor(std::ostringstream& out, const Parfactor& f, const Vocabulary& vocab,
                     bool dynamic) {
  out << "parfactor " << f.name << " (";
  for (std::size_t i = 0; i < f.atoms.size(); ++i) {
    const Atom& a = f.atoms[i];
    const PrvDecl& p = vocab.prv(a.prv);
    out << (i ? ", " : "") << p.name;
    if (!a.args.empty()) {
      out << '(';
      for (std::size_t k = 0; k < a.args.size(); ++k) {
        const Logvar& lv = vocab.logvar(a.args[k].logvar);
        out << (k ? ", " : "") << (a.args[k].free() ? lv.name : lv.domain[a.args[k].constant]);
      }
      out << ')';
    }
    out << time_suffix(vocab, a.prv, dynamic);
  }
  out << ')';
  bool first = true;
  for (const auto& [lv, allowed] : f.constraint.cells()) {
    const Logvar& l = vocab.logvar(lv);
    if (allowed.size() == l.domain.size()) continue;
    out << (first ? " | " : ", ") << l.name << " in {";
    first = false;
    for (std::size_t k = 0; k < allowed.size(); ++k) out << (k ? ", " : "") << l.domain[allowed[k]];
    out << '}';
  }
  out << " {\n";
  auto strides = f.strides();
  for (std::size_t idx = 0; idx < f.table.size(); ++idx) {
    out << "  (";
    for (std::size_t i = 0; i < f.atoms.size(); ++i) {
      std::size_t r = (idx / strides[i]) % static_cast<std::size_t>(f.atoms[i].card);
      out << (i ? ", " : "") << vocab.prv(f.atoms[i].prv).range[r];
    }
    out << ") = " << format_number(f.table[idx]) << ";\n";
  }
  out << "}\n";
}

}  // namespace

AnyModel parse_model(std::string_view text) { return Parser(text).run(); }

Model parse_static_model(std::string_view text) {
  auto m = parse_model(text);
  if (auto* s = std::get_if<Model>(&m)) return std::move(*s);
  throw ModelError("expected a static model, found a dynamic one");
}

DynamicModel parse_dynamic_model(std::string_view text) {
  auto m = parse_model(text);
  if (auto* d = std::get_if<DynamicModel>(&m)) return std::move(*d);
  throw ModelError("expected a dynamic model with [g0] and [g->] sections");
}

AnyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

std::string print_model(const Model& m) {
  std::ostringstream out;
  print_declarations(out, *m.vocab, false);
  for (const auto& f : m.parfactors) print_parfactor(out, f, *m.vocab, false);
  return out.str();
}

std::string print_model(const DynamicModel& d) {
  std::ostringstream out;
  print_declarations(out, *d.vocab, true);
  out << "[g0]\n";
  for (const auto& f : d.initial.parfactors) print_parfactor(out, f, *d.vocab, true);
  out << "[g->]\n";
  for (const auto& f : d.transition.parfactors) print_parfactor(out, f, *d.vocab, true);
  return out.str();
}

}  // namespace ldjt
