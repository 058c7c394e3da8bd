#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "slotlog/ground.hpp"

using namespace slotlog;

namespace {

std::string slurp(const std::string& rel) {
  std::ifstream in(std::string(SLOTLOG_SOURCE_DIR) + "/" + rel);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BuiltinLiteral builtin_of(const std::string& body) {
  auto p = parse_program("t :- " + body + ".");
  return std::get<BuiltinLiteral>(p.rules.at(0).body.at(0));
}

// Naive fixpoint; sound here because the shipped programs negate fact atoms only.
std::set<GroundAtom> derive(const GroundProgram& g, std::set<GroundAtom> truth) {
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& r : g.rules) {
      if (truth.contains(r.head)) continue;
      bool fires = true;
      for (const auto& l : r.body)
        if (truth.contains(l.atom) != l.positive) fires = false;
      if (fires) {
        truth.insert(r.head);
        changed = true;
      }
    }
  }
  return truth;
}

}  // namespace

TEST_CASE("builtin evaluation") {
  Substitution s{{"Y1", Term::Int(4)}, {"Y2", Term::Int(5)}};
  auto is = evaluate_builtin(builtin_of("Z is Y1 + Y2"), s);
  REQUIRE(is.size() == 1);
  CHECK(is[0].at("Z") == Term::Int(9));

  auto gen = evaluate_builtin(builtin_of("between(0, 9, N)"), {});
  REQUIRE(gen.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(gen[i].at("N") == Term::Int(i));

  CHECK(evaluate_builtin(builtin_of("3 < 3"), {}).empty());
  CHECK(evaluate_builtin(builtin_of("3 =< 3"), {}).size() == 1);
  CHECK(evaluate_builtin(builtin_of("2 * 3 - 1 >= 5"), {}).size() == 1);
  CHECK(evaluate_builtin(builtin_of("a \\= b"), {}).size() == 1);
  CHECK(evaluate_builtin(builtin_of("X = a"), {}).at(0).at("X") == Term::Sym("a"));
  CHECK(evaluate_builtin(builtin_of("9 is 4 + 5"), {}).size() == 1);
  CHECK(evaluate_builtin(builtin_of("between(1, 3, 5)"), {}).empty());
}

TEST_CASE("builtin errors") {
  CHECK_THROWS_AS(evaluate_builtin(builtin_of("Z is X + 1"), {}), GroundingError);
  CHECK_THROWS_AS(evaluate_builtin(builtin_of("Z is a + 1"), {}), GroundingError);
  Substitution s{{"H", Term::Int(3)}};
  CHECK_THROWS_AS(evaluate_builtin(builtin_of("between(0, H, X)"), s), GroundingError);
  CHECK_THROWS_AS(evaluate_builtin(builtin_of("X < 2"), {}), GroundingError);
}

TEST_CASE("accumulator-chain program grounds the full addition family") {
  auto prog = parse_program(slurp("programs/chain_addition.pl"));
  auto g = ground_query(prog, parse_atom("addition(input, Z)"));

  // Oracle: every sum reachable by instantiating both slots directly.
  std::set<long> sums;
  for (int o0 = 0; o0 < 2; ++o0)
    for (int o1 = 0; o1 < 2; ++o1)
      for (int c0 = 0; c0 < 10; ++c0)
        for (int c1 = 0; c1 < 10; ++c1) sums.insert(o0 * c0 + o1 * c1);
  REQUIRE(g.queries.size() == sums.size());
  auto it = sums.begin();
  for (const auto& q : g.queries) {
    CHECK(q.predicate == "addition");
    CHECK(q.args[0] == Term::Sym("input"));
    CHECK(q.args[1] == Term::Int(*it++));
  }
  int objectness = 0, classes = 0;
  for (const auto& f : g.facts) {
    if (f.atom.predicate == "isobj_tmp") ++objectness;
    if (f.atom.predicate == "digit_tmp") ++classes;
  }
  CHECK(objectness == 2);
  CHECK(classes == 20);
  // Builtins never survive grounding.
  for (const auto& r : g.rules)
    for (const auto& l : r.body) CHECK(l.atom.predicate != "is");
}

TEST_CASE("unprovable and fact-only queries") {
  auto prog = parse_program("0.3::f.\ng :- f, h.\n0.4::h2.");
  auto none = ground_query(prog, parse_atom("g"));
  CHECK(none.queries.empty());
  CHECK(none.facts.empty());
  CHECK(none.rules.empty());

  auto single = ground_query(parse_program("0.3::f."), parse_atom("f"));
  REQUIRE(single.facts.size() == 1);
  CHECK(single.facts[0].fact_id == 0);
  REQUIRE(single.queries.size() == 1);
  CHECK(to_string(single.queries[0]) == "f");
}

TEST_CASE("grounding errors") {
  SUBCASE("cycle") {
    auto p = parse_program("0.5::e.\np(X) :- q(X).\nq(X) :- p(X), e.");
    CHECK_THROWS_AS(ground_query(p, parse_atom("p(1)")), GroundingError);
  }
  SUBCASE("unbound arithmetic input") {
    auto p = parse_program("r(X, Y) :- Y is X + 1.");
    CHECK_THROWS_AS(ground_query(p, parse_atom("r(Z, W)")), GroundingError);
    auto ok = ground_query(p, parse_atom("r(2, W)"));
    REQUIRE(ok.queries.size() == 1);
    CHECK(to_string(ok.queries[0]) == "r(2, 3)");
  }
  SUBCASE("generator with bound but non-literal bounds") {
    auto p = parse_program("s(3).\nr(X) :- s(N), between(0, N, X).");
    CHECK_THROWS_AS(ground_query(p, parse_atom("r(X)")), GroundingError);
  }
  SUBCASE("negation of an unbound atom") {
    auto p = parse_program("0.5::f(1).\nr :- \\+ f(X).");
    CHECK_THROWS_AS(ground_query(p, parse_atom("r")), GroundingError);
  }
}

TEST_CASE("grounding is deterministic") {
  auto prog = parse_program(slurp("programs/chain_addition.pl"));
  auto a = ground_query(prog, parse_atom("addition(input, Z)"));
  auto b = ground_query(prog, parse_atom("addition(input, Z)"));
  CHECK(a.dump() == b.dump());
  CHECK(a.digest() == b.digest());
  for (std::size_t i = 1; i < a.facts.size(); ++i) CHECK(a.facts[i - 1].fact_id < a.facts[i].fact_id);
  for (std::size_t i = 1; i < a.rules.size(); ++i) CHECK(a.rules[i - 1] < a.rules[i]);
}

TEST_CASE("negated atoms without derivations drop out") {
  auto g = ground_query(parse_program("0.5::f.\nr :- f, \\+ missing."), parse_atom("r"));
  REQUIRE(g.rules.size() == 1);
  CHECK(g.rules[0].body.size() == 1);
}

TEST_CASE("body-less rules ground to unconditional clauses") {
  auto g = ground_query(parse_program("t.\nu :- t."), parse_atom("u"));
  REQUIRE(g.queries.size() == 1);
  CHECK(g.rules.size() == 2);
}

TEST_CASE("relevance: each ground fact matters to some query instance") {
  for (auto [file, query] : {std::pair{"programs/two_slot_add.pl", "add(Z)"},
                             std::pair{"programs/chain_addition.pl", "addition(input, Z)"}}) {
    CAPTURE(file);
    auto g = ground_query(parse_program(slurp(file)), parse_atom(query));
    // Worlds: each independent fact on/off, each group picks one member.
    std::vector<std::vector<std::size_t>> choices;  // fact indices per choice
    std::map<std::string, std::size_t> group_at;
    std::vector<bool> is_group;
    for (std::size_t i = 0; i < g.facts.size(); ++i) {
      if (!g.facts[i].group) {
        choices.push_back({i});
        is_group.push_back(false);
        continue;
      }
      auto [it, fresh] = group_at.emplace(*g.facts[i].group, choices.size());
      if (fresh) {
        choices.emplace_back();
        is_group.push_back(true);
      }
      choices[it->second].push_back(i);
    }
    std::vector<bool> matters(g.facts.size(), false);
    std::vector<std::size_t> digit(choices.size(), 0);
    for (;;) {
      std::set<GroundAtom> facts;
      std::vector<std::size_t> chosen;
      for (std::size_t c = 0; c < choices.size(); ++c) {
        if (is_group[c]) {
          chosen.push_back(choices[c][digit[c]]);
        } else if (digit[c] == 1) {
          chosen.push_back(choices[c][0]);
        }
      }
      for (auto i : chosen) facts.insert(g.facts[i].atom);
      auto full = derive(g, facts);
      for (auto i : chosen) {
        auto without = facts;
        without.erase(g.facts[i].atom);
        auto reduced = derive(g, without);
        for (const auto& q : g.queries)
          if (full.contains(q) != reduced.contains(q)) matters[i] = true;
      }
      std::size_t c = 0;
      for (; c < choices.size(); ++c) {
        std::size_t radix = is_group[c] ? choices[c].size() : 2;
        if (++digit[c] < radix) break;
        digit[c] = 0;
      }
      if (c == choices.size()) break;
    }
    for (std::size_t i = 0; i < g.facts.size(); ++i) {
      CAPTURE(to_string(g.facts[i].atom));
      CHECK(matters[i]);
    }
  }
}
