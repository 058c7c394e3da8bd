#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "slotlog/logic.hpp"

using namespace slotlog;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream in(std::string(SLOTLOG_SOURCE_DIR) + "/" + rel);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool mentions(const ValidationReport& r, const std::string& needle) {
  for (const auto& v : r.violations)
    if (v.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("literal probabilistic fact") {
  auto p = parse_program("0.1::alarm.");
  REQUIRE(p.facts.size() == 1);
  CHECK(p.rules.empty());
  CHECK(std::get<double>(p.facts[0].param) == 0.1);
  CHECK(p.facts[0].atom == Atom{"alarm", {}});
}

TEST_CASE("negated body literal, both spellings") {
  auto p = parse_program("digit(ID, 0) :- \\+ object(ID).\ndigit(ID, 0) :- not(object(ID)).");
  REQUIRE(p.rules.size() == 2);
  CHECK(p.rules[0] == p.rules[1]);
  const auto& lit = std::get<AtomLiteral>(p.rules[0].body.at(0));
  CHECK(lit.negated);
  CHECK(lit.atom.predicate == "object");
  CHECK(p.rules[0].head.args[1] == Term::Int(0));
  CHECK(p.rules[0].head.args[0] == Term::Var("ID"));
}

TEST_CASE("empty input") {
  auto p = parse_program("");
  CHECK(p.facts.empty());
  CHECK(p.rules.empty());
  CHECK(parse_program("% only a comment\n\n").rules.empty());
}

TEST_CASE("external keys, groups and queries") {
  auto p = parse_program(slurp("programs/two_slot_add.pl"));
  CHECK(p.externals == std::vector<std::string>{"object/1", "object/2", "class/1", "class/2"});
  REQUIRE(p.facts.size() == 6);
  CHECK(std::get<std::string>(p.facts[2].param) == "class/1/0");
  CHECK(p.facts[2].group == std::optional<std::string>("slot1"));
  REQUIRE(p.queries.size() == 1);
  CHECK(to_string(p.queries[0]) == "add(Z)");
  auto q = parse_program("query(add(3)).");
  CHECK(to_string(q.queries.at(0)) == "add(3)");
}

TEST_CASE("builtins") {
  auto p = parse_program("r(Z) :- between(0, 9, N), Z is N * 2 + 1, Z =< 7, Z \\= 3, N >= 0, N < 5, N > -1, Z = Z.");
  const auto& body = p.rules.at(0).body;
  REQUIRE(body.size() == 8);
  CHECK(std::get<BuiltinLiteral>(body[0]).kind == BuiltinKind::Between);
  CHECK(std::get<BuiltinLiteral>(body[1]).kind == BuiltinKind::Is);
  CHECK(to_string(body[1]) == "Z is N * 2 + 1");
  CHECK(std::get<BuiltinLiteral>(body[2]).kind == BuiltinKind::Le);
  CHECK(std::get<BuiltinLiteral>(body[3]).kind == BuiltinKind::Neq);
  CHECK(to_string(body[6]) == "N > -1");
}

TEST_CASE("parse errors carry positions") {
  SUBCASE("probability out of range") {
    try {
      parse_program("0.5::a.\n1.5::f.");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(e.column() == 1);
    }
  }
  SUBCASE("missing dot") { CHECK_THROWS_AS(parse_program("a :- b"), ParseError); }
  SUBCASE("builtin arity clash") { CHECK_THROWS_AS(parse_program("a(X) :- between(1, X)."), ParseError); }
  SUBCASE("floats inside logic") { CHECK_THROWS_AS(parse_program("a(1.5)."), ParseError); }
  SUBCASE("stray character") {
    try {
      parse_program("a.\n  b & c.");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(e.column() == 5);
    }
  }
  SUBCASE("bodies on probabilistic facts") { CHECK_THROWS_AS(parse_program("0.5::a :- b."), ParseError); }
}

TEST_CASE("validation accepts the shipped programs") {
  for (const char* f : {"programs/two_slot_add.pl", "programs/chain_addition.pl", "programs/burglary.pl"}) {
    CAPTURE(f);
    auto r = validate(parse_program(slurp(f)));
    for (const auto& v : r.violations) MESSAGE(v);
    CHECK(r.ok());
    CHECK_FALSE(r.strata.empty());
  }
}

TEST_CASE("validation: self-negation is not stratified") {
  auto r = validate(parse_program("p :- \\+ p."));
  CHECK_FALSE(r.ok());
  CHECK(mentions(r, "not stratified"));
  CHECK(r.strata.empty());
}

TEST_CASE("validation: negation through a longer cycle") {
  auto r = validate(parse_program("0.5::f.\np :- q, f.\nq :- \\+ p."));
  CHECK(mentions(r, "not stratified"));
}

TEST_CASE("validation: positive recursion stays stratified") {
  auto r = validate(parse_program("0.5::e(1,2).\nreach(X,Y) :- e(X,Y).\nreach(X,Z) :- e(X,Y), reach(Y,Z)."));
  CHECK(r.ok());
}

TEST_CASE("validation reports every violation") {
  const char* src =
      "@external(object/0).\n"
      "object/0::object(0).\n"
      "unknown/3::thing(3).\n"
      "object(1) :- object(0).\n"
      "@group(g) 0.5::color(a, red).\n"
      "@group(g) 0.2::color(a, blue).\n"
      "0.5::free(X).\n"
      "bad :- Y is X + 1.\n"
      "worse :- \\+ seen(Z).\n"
      "seen(1).\n";
  auto r = validate(parse_program(src));
  CHECK(mentions(r, "both a probabilistic fact and a rule head"));
  CHECK(mentions(r, "not declared"));
  CHECK(mentions(r, "sum to"));
  CHECK(mentions(r, "not ground"));
  CHECK(mentions(r, "variable X unbound"));
  CHECK(mentions(r, "variable Z in negated literal"));
  CHECK(r.violations.size() >= 6);
}

TEST_CASE("validation: group structure") {
  SUBCASE("members differ outside the class argument") {
    auto r = validate(parse_program("@group(g) 0.5::c(1, 0).\n@group(g) 0.5::c(2, 1)."));
    CHECK(mentions(r, "differ outside"));
  }
  SUBCASE("gap in class indices") {
    auto r = validate(parse_program("@external(k).\n@group(g) k/0::c(0).\n@group(g) k/2::c(2)."));
    CHECK(mentions(r, "class indices"));
  }
  SUBCASE("well formed external group") {
    auto r = validate(parse_program("@external(k).\n@group(g) k/1::c(1).\n@group(g) k/0::c(0)."));
    CHECK(r.ok());
  }
}

TEST_CASE("strata order negation after its dependency") {
  auto r = validate(parse_program("0.5::f.\ng :- f.\nh :- \\+ g.\ni :- h, f."));
  REQUIRE(r.ok());
  REQUIRE(r.strata.size() == 2);
  CHECK(std::find(r.strata[1].begin(), r.strata[1].end(), "h/0") != r.strata[1].end());
}

TEST_CASE("parameter key helpers") {
  CHECK(group_vector_key("class/0/3") == "class/0");
  CHECK(key_last_index("class/0/3") == 3);
  CHECK(key_slot_index("class/4/3") == 4);
  CHECK_FALSE(key_last_index("alarm").has_value());
}

namespace {

// Random well-formed programs over a small vocabulary.
class ProgramGen {
 public:
  explicit ProgramGen(unsigned seed) : rng_(seed) {}

  std::string program() {
    std::ostringstream os;
    int nkeys = pick(0, 2);
    if (nkeys) {
      os << "@external(";
      for (int i = 0; i < nkeys; ++i) os << (i ? ", " : "") << "k" << i;
      os << ").\n";
    }
    for (int i = 0, n = pick(0, 4); i < n; ++i) {
      if (nkeys && pick(0, 1))
        os << "k" << pick(0, nkeys - 1) << "::f" << i << "(" << term(true) << ").\n";
      else
        os << prob() << "::f" << i << "(" << term(true) << ").\n";
    }
    if (pick(0, 1)) os << "@group(g) 0.25::c(0, a).\n@group(g) 0.75::c(0, b).\n";
    for (int i = 0, n = pick(0, 4); i < n; ++i) {
      os << "r" << pick(0, 3) << "(" << term(false) << ")";
      if (pick(0, 2)) {
        os << " :- ";
        for (int j = 0, m = pick(1, 3); j < m; ++j) os << (j ? ", " : "") << literal();
      }
      os << ".\n";
    }
    if (pick(0, 1)) os << "?- r0(" << term(false) << ").\n";
    return os.str();
  }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::string prob() {
    static const char* ps[] = {"0.1", "0.5", "1", "0", "0.333", "1e-3", "0.999999"};
    return ps[pick(0, 6)];
  }
  std::string term(bool ground) {
    static const char* vars[] = {"X", "Y", "Z", "_"};
    static const char* consts[] = {"0", "7", "-2", "a", "input"};
    if (!ground && pick(0, 1)) return vars[pick(0, 3)];
    return consts[pick(0, 4)];
  }
  std::string literal() {
    switch (pick(0, 5)) {
      case 0: return "\\+ f0(" + term(false) + ")";
      case 1: return "not(r1(" + term(false) + "))";
      case 2: return "X is (Y + 2) * Z - 1";
      case 3: return "between(0, 3, X)";
      case 4: return "X =< Y";
      default: return "f1(" + term(false) + ")";
    }
  }
  std::mt19937 rng_;
};

}  // namespace

TEST_CASE("property: parse(serialize(parse(t))) == parse(t)") {
  for (unsigned seed = 0; seed < 300; ++seed) {
    ProgramGen gen(seed);
    const std::string text = gen.program();
    CAPTURE(text);
    Program p = parse_program(text);
    const std::string once = serialize(p);
    CHECK(parse_program(once) == p);
    CHECK(serialize(parse_program(once)) == once);
  }
  for (const char* f : {"programs/two_slot_add.pl", "programs/chain_addition.pl"}) {
    Program p = parse_program(slurp(f));
    CHECK(parse_program(serialize(p)) == p);
  }
}
