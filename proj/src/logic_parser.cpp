#include "slotlog/logic.hpp"

#include <cctype>
#include <charconv>
#include <unordered_map>

namespace slotlog {

ParseError::ParseError(const std::string& msg, int line, int column)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

bool Atom::is_ground() const {
  for (const auto& t : args)
    if (t.is_var()) return false;
  return true;
}

Expr Expr::Binary(Op op, Expr lhs, Expr rhs) {
  Expr e;
  e.op = op;
  e.operands.push_back(std::move(lhs));
  e.operands.push_back(std::move(rhs));
  return e;
}

namespace {

enum class Tok {
  End,
  Ident,     // lowercase-initial name
  Variable,  // uppercase- or underscore-initial name
  Integer,
  Float,
  LParen,
  RParen,
  Comma,
  Dot,
  DoubleColon,  // ::
  Implies,      // :-
  QueryMark,    // ?-
  Naf,          // \+
  Lt,
  Gt,
  Le,  // =<
  Ge,  // >=
  Eq,
  Neq,  // \=
  Plus,
  Minus,
  Star,
  Slash,
  At,
};

struct Token {
  Tok kind = Tok::End;
  std::string text;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      Token t;
      t.line = line_;
      t.column = col_;
      if (pos_ >= src_.size()) {
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        lex_number(t);
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          advance();
        t.text = std::string(src_.substr(start, pos_ - start));
        t.kind = (std::isupper(static_cast<unsigned char>(c)) || c == '_') ? Tok::Variable : Tok::Ident;
      } else {
        lex_punct(t);
      }
      out.push_back(std::move(t));
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  bool peek_is(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void skip_space() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '%') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  void lex_number(Token& t) {
    std::size_t start = pos_;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    t.kind = Tok::Integer;
    // A '.' followed by a digit continues a float; otherwise it ends the clause.
    if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
        std::isdigit(static_cast<unsigned char>(src_[pos_ + 1]))) {
      advance();
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      t.kind = Tok::Float;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_;
      int save_col = col_;
      advance();
      if (pos_ < src_.size() && (src_[pos_] == '-' || src_[pos_] == '+')) advance();
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        t.kind = Tok::Float;
      } else {
        pos_ = save;
        col_ = save_col;
      }
    }
    t.text = std::string(src_.substr(start, pos_ - start));
  }

  void lex_punct(Token& t) {
    struct P {
      std::string_view s;
      Tok k;
    };
    static constexpr P table[] = {
        {"::", Tok::DoubleColon}, {":-", Tok::Implies}, {"?-", Tok::QueryMark}, {"\\+", Tok::Naf},
        {"\\=", Tok::Neq},        {"=<", Tok::Le},      {">=", Tok::Ge},        {"(", Tok::LParen},
        {")", Tok::RParen},       {",", Tok::Comma},    {".", Tok::Dot},        {"<", Tok::Lt},
        {">", Tok::Gt},           {"=", Tok::Eq},       {"+", Tok::Plus},       {"-", Tok::Minus},
        {"*", Tok::Star},         {"/", Tok::Slash},    {"@", Tok::At},
    };
    for (const auto& p : table) {
      if (peek_is(p.s)) {
        t.kind = p.k;
        t.text = std::string(p.s);
        for (std::size_t i = 0; i < p.s.size(); ++i) advance();
        return;
      }
    }
    throw ParseError(std::string("unexpected character '") + src_[pos_] + "'", line_, col_);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

struct BuiltinSig {
  BuiltinKind kind;
  std::size_t arity;
};

std::optional<BuiltinSig> builtin_by_name(const std::string& name) {
  if (name == "between") return BuiltinSig{BuiltinKind::Between, 3};
  if (name == "is") return BuiltinSig{BuiltinKind::Is, 2};
  return std::nullopt;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program program() {
    Program p;
    while (peek().kind != Tok::End) statement(p);
    return p;
  }

  Atom lone_atom() {
    Atom a = atom();
    if (peek().kind == Tok::Dot) next();
    if (peek().kind != Tok::End) fail("trailing input after atom");
    check_arity(a, tok_at_);
    return a;
  }

 private:
  const Token& peek(std::size_t k = 0) const {
    std::size_t i = std::min(pos_ + k, toks_.size() - 1);
    return toks_[i];
  }
  const Token& next() {
    tok_at_ = pos_;
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, peek().line, peek().column);
  }
  [[noreturn]] void fail_at(const Token& t, const std::string& msg) const {
    throw ParseError(msg, t.line, t.column);
  }
  const Token& expect(Tok k, const char* what) {
    if (peek().kind != k) fail(std::string("expected ") + what + ", got '" + peek().text + "'");
    return next();
  }

  void statement(Program& p) {
    const Token& first = peek();
    if (first.kind == Tok::QueryMark) {
      next();
      p.queries.push_back(checked_atom());
      expect(Tok::Dot, "'.'");
      return;
    }
    if (first.kind == Tok::At) {
      next();
      const Token& name = expect(Tok::Ident, "annotation name");
      if (name.text == "external") {
        expect(Tok::LParen, "'('");
        for (;;) {
          p.externals.push_back(param_key());
          if (peek().kind == Tok::Comma) {
            next();
            continue;
          }
          break;
        }
        expect(Tok::RParen, "')'");
        expect(Tok::Dot, "'.'");
        return;
      }
      if (name.text == "group") {
        expect(Tok::LParen, "'('");
        const Token& g = next();
        if (g.kind != Tok::Ident && g.kind != Tok::Integer) fail_at(g, "expected group name");
        expect(Tok::RParen, "')'");
        FactDecl f = fact_after_group();
        f.group = g.text;
        p.facts.push_back(std::move(f));
        return;
      }
      fail_at(name, "unknown annotation '@" + name.text + "'");
    }
    if (first.kind == Tok::Ident && first.text == "query" && peek(1).kind == Tok::LParen) {
      next();
      next();
      p.queries.push_back(checked_atom());
      expect(Tok::RParen, "')'");
      expect(Tok::Dot, "'.'");
      return;
    }
    if (is_fact_start()) {
      p.facts.push_back(fact());
      return;
    }
    Rule r;
    r.head = checked_atom();
    if (builtin_by_name(r.head.predicate) || r.head.predicate == "not")
      fail_at(toks_[tok_at_], "builtin '" + r.head.predicate + "' cannot be a rule head");
    if (peek().kind == Tok::Implies) {
      next();
      for (;;) {
        r.body.push_back(literal());
        if (peek().kind == Tok::Comma) {
          next();
          continue;
        }
        break;
      }
    }
    expect(Tok::Dot, "'.'");
    p.rules.push_back(std::move(r));
  }

  bool is_fact_start() const {
    const Tok k = peek().kind;
    if ((k == Tok::Integer || k == Tok::Float) && peek(1).kind == Tok::DoubleColon) return true;
    if (k == Tok::Ident && (peek(1).kind == Tok::Slash || peek(1).kind == Tok::DoubleColon)) return true;
    return false;
  }

  FactDecl fact_after_group() {
    if (!is_fact_start()) fail("expected a probabilistic fact after @group");
    return fact();
  }

  FactDecl fact() {
    FactDecl f;
    const Token& t = peek();
    if (t.kind == Tok::Integer || t.kind == Tok::Float) {
      next();
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
      if (ec != std::errc()) fail_at(t, "bad probability literal '" + t.text + "'");
      if (!(v >= 0.0 && v <= 1.0)) fail_at(t, "probability " + t.text + " outside [0,1]");
      f.param = v;
    } else {
      f.param = param_key();
    }
    expect(Tok::DoubleColon, "'::'");
    f.atom = checked_atom();
    if (peek().kind == Tok::Implies) fail("probabilistic clauses with bodies are not supported");
    expect(Tok::Dot, "'.'");
    return f;
  }

  std::string param_key() {
    std::string key = expect(Tok::Ident, "parameter key").text;
    while (peek().kind == Tok::Slash) {
      next();
      const Token& part = next();
      if (part.kind != Tok::Integer && part.kind != Tok::Ident) fail_at(part, "bad parameter key component");
      key += "/" + part.text;
    }
    return key;
  }

  Literal literal() {
    const Token& t = peek();
    if (t.kind == Tok::Naf) {
      next();
      return AtomLiteral{checked_atom(), true};
    }
    if (t.kind == Tok::Ident && t.text == "not" && peek(1).kind == Tok::LParen) {
      next();
      next();
      AtomLiteral l{checked_atom(), true};
      expect(Tok::RParen, "')'");
      return l;
    }
    if (t.kind == Tok::Ident && t.text == "between" && peek(1).kind == Tok::LParen) {
      next();
      next();
      BuiltinLiteral b{BuiltinKind::Between, {}};
      for (;;) {
        b.args.push_back(expr());
        if (peek().kind == Tok::Comma) {
          next();
          continue;
        }
        break;
      }
      expect(Tok::RParen, "')'");
      if (b.args.size() != 3) fail_at(t, "arity clash: between/" + std::to_string(b.args.size()) + " (expected between/3)");
      return b;
    }
    // Infix builtin or plain atom. An atom followed by an infix operator is a term.
    std::size_t save = pos_;
    if (t.kind == Tok::Ident && peek(1).kind == Tok::LParen) {
      Atom a = checked_atom();
      if (!is_infix(peek().kind) && !(peek().kind == Tok::Ident && peek().text == "is")) return AtomLiteral{std::move(a), false};
      pos_ = save;
    }
    Expr lhs = expr();
    const Token& op = peek();
    BuiltinKind kind;
    if (op.kind == Tok::Ident && op.text == "is") {
      kind = BuiltinKind::Is;
    } else if (is_infix(op.kind)) {
      kind = infix_kind(op.kind);
    } else {
      // A bare atom without arguments.
      if (lhs.op == Expr::Op::Leaf && lhs.leaf.kind == Term::Kind::Symbol) {
        Atom a{lhs.leaf.name, {}};
        check_arity(a, save);
        return AtomLiteral{std::move(a), false};
      }
      fail("expected a literal");
    }
    next();
    Expr rhs = expr();
    return BuiltinLiteral{kind, {std::move(lhs), std::move(rhs)}};
  }

  static bool is_infix(Tok k) {
    return k == Tok::Lt || k == Tok::Gt || k == Tok::Le || k == Tok::Ge || k == Tok::Eq || k == Tok::Neq;
  }
  static BuiltinKind infix_kind(Tok k) {
    switch (k) {
      case Tok::Lt: return BuiltinKind::Lt;
      case Tok::Gt: return BuiltinKind::Gt;
      case Tok::Le: return BuiltinKind::Le;
      case Tok::Ge: return BuiltinKind::Ge;
      case Tok::Eq: return BuiltinKind::Eq;
      default: return BuiltinKind::Neq;
    }
  }

  Expr expr() {
    Expr lhs = product();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      Expr::Op op = next().kind == Tok::Plus ? Expr::Op::Add : Expr::Op::Sub;
      lhs = Expr::Binary(op, std::move(lhs), product());
    }
    return lhs;
  }

  Expr product() {
    Expr lhs = factor();
    while (peek().kind == Tok::Star) {
      next();
      lhs = Expr::Binary(Expr::Op::Mul, std::move(lhs), factor());
    }
    return lhs;
  }

  Expr factor() {
    if (peek().kind == Tok::LParen) {
      next();
      Expr e = expr();
      expect(Tok::RParen, "')'");
      return e;
    }
    if (peek().kind == Tok::Minus && peek(1).kind == Tok::Integer) {
      next();
      return Expr::Leaf(integer(next(), true));
    }
    return Expr::Leaf(term());
  }

  Term integer(const Token& t, bool negative) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size()) fail_at(t, "bad integer '" + t.text + "'");
    return Term::Int(negative ? -v : v);
  }

  Term term() {
    const Token& t = next();
    switch (t.kind) {
      case Tok::Integer: return integer(t, false);
      case Tok::Minus:
        if (peek().kind == Tok::Integer) return integer(next(), true);
        break;
      case Tok::Variable:
        if (t.text == "_") return Term::Var("_G" + std::to_string(++anon_));
        return Term::Var(t.text);
      case Tok::Ident:
        if (peek().kind == Tok::LParen) fail_at(t, "compound terms are not supported");
        return Term::Sym(t.text);
      case Tok::Float: fail_at(t, "only integer constants are allowed inside logic");
      default: break;
    }
    fail_at(t, "expected a term, got '" + t.text + "'");
  }

  Atom atom() {
    const Token& name = expect(Tok::Ident, "predicate name");
    Atom a{name.text, {}};
    if (peek().kind == Tok::LParen) {
      next();
      for (;;) {
        a.args.push_back(term());
        if (peek().kind == Tok::Comma) {
          next();
          continue;
        }
        break;
      }
      expect(Tok::RParen, "')'");
    }
    return a;
  }

  Atom checked_atom() {
    std::size_t at = pos_;
    Atom a = atom();
    check_arity(a, at);
    return a;
  }

  // Builtin names have fixed arity; user predicates are identified by name/arity.
  void check_arity(const Atom& a, std::size_t at) {
    if (auto sig = builtin_by_name(a.predicate); sig && sig->arity != a.arity())
      fail_at(toks_[at], "arity clash: " + a.predicate + "/" + std::to_string(a.arity()) + " (builtin is " +
                             a.predicate + "/" + std::to_string(sig->arity) + ")");
    if (a.predicate == "not" && a.arity() != 1) fail_at(toks_[at], "arity clash: not/" + std::to_string(a.arity()));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::size_t tok_at_ = 0;
  int anon_ = 0;
};

}  // namespace

Program parse_program(std::string_view text) {
  Lexer lx(text);
  Parser p(lx.run());
  return p.program();
}

Atom parse_atom(std::string_view text) {
  Lexer lx(text);
  Parser p(lx.run());
  return p.lone_atom();
}

}  // namespace slotlog
