#pragma once

// Abstract syntax, parser, printer and static checks for the probabilistic
// logic language (a ProbLog-style subset without disjunctive heads).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace slotlog {

struct Term {
  enum class Kind { Integer, Symbol, Variable };

  Kind kind = Kind::Symbol;
  std::int64_t integer = 0;
  std::string name;  // symbol or variable name

  static Term Int(std::int64_t v) { return {Kind::Integer, v, {}}; }
  static Term Sym(std::string s) { return {Kind::Symbol, 0, std::move(s)}; }
  static Term Var(std::string s) { return {Kind::Variable, 0, std::move(s)}; }

  bool is_var() const { return kind == Kind::Variable; }
  bool is_int() const { return kind == Kind::Integer; }

  friend bool operator==(const Term&, const Term&) = default;
  friend auto operator<=>(const Term&, const Term&) = default;
};

struct Atom {
  std::string predicate;
  std::vector<Term> args;

  std::size_t arity() const { return args.size(); }
  bool is_ground() const;

  friend bool operator==(const Atom&, const Atom&) = default;
  friend auto operator<=>(const Atom&, const Atom&) = default;
};

// Integer arithmetic over terms: a leaf term or a binary + - * node.
struct Expr {
  enum class Op { Leaf, Add, Sub, Mul };

  Op op = Op::Leaf;
  Term leaf;
  std::vector<Expr> operands;  // exactly two for binary ops

  static Expr Leaf(Term t) { return {Op::Leaf, std::move(t), {}}; }
  static Expr Binary(Op op, Expr lhs, Expr rhs);

  friend bool operator==(const Expr&, const Expr&) = default;
};

enum class BuiltinKind { Is, Between, Lt, Gt, Le, Ge, Eq, Neq };

struct BuiltinLiteral {
  BuiltinKind kind = BuiltinKind::Eq;
  std::vector<Expr> args;  // 2 for is/comparisons/unification, 3 for between

  friend bool operator==(const BuiltinLiteral&, const BuiltinLiteral&) = default;
};

struct AtomLiteral {
  Atom atom;
  bool negated = false;

  friend bool operator==(const AtomLiteral&, const AtomLiteral&) = default;
};

using Literal = std::variant<AtomLiteral, BuiltinLiteral>;

// Probability attached to a fact: a literal in [0,1] or an external key such as
// `object/0` or `class/0/3`.
using ParamRef = std::variant<double, std::string>;

struct FactDecl {
  ParamRef param;
  Atom atom;
  std::optional<std::string> group;

  friend bool operator==(const FactDecl&, const FactDecl&) = default;
};

struct Rule {
  Atom head;
  std::vector<Literal> body;

  friend bool operator==(const Rule&, const Rule&) = default;
};

struct Program {
  std::vector<std::string> externals;  // declared external parameter names
  std::vector<FactDecl> facts;
  std::vector<Rule> rules;
  std::vector<Atom> queries;

  friend bool operator==(const Program&, const Program&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, int column);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// Parses program text. `%` starts a line comment; every clause ends in `.`.
///
///   @external(object/0, class/0).          external parameter block
///   0.1::alarm.                            literal probabilistic fact
///   object/0::object(0).                   neural fact bound to a key
///   @group(slot0) class/0/2::class(0,2).   member of a categorical group
///   digit(I,0) :- \+ object(I).            rule, `not(...)` also accepted
///   ?- add(Z).                             query (also `query(add(Z)).`)
Program parse_program(std::string_view text);

/// Parses a single atom such as `add(input, Z)`.
Atom parse_atom(std::string_view text);

std::string to_string(const Term& t);
std::string to_string(const Atom& a);
std::string to_string(const Expr& e);
std::string to_string(const Literal& l);
std::string to_string(const Rule& r);
std::string to_string(const FactDecl& f);

/// Canonical text; parse_program(serialize(p)) == p.
std::string serialize(const Program& p);

/// Name of a parameter key without its trailing class index, i.e. the key of
/// the probability vector a grouped fact draws from (`class/0/3` -> `class/0`).
std::string group_vector_key(const std::string& key);
/// Trailing integer component of a key (`class/0/3` -> 3), if any.
std::optional<int> key_last_index(const std::string& key);
/// First integer component of a key (`class/0/3` -> 0), if any.
std::optional<int> key_slot_index(const std::string& key);

struct ValidationReport {
  std::vector<std::string> violations;
  // Predicate (name/arity) strata in evaluation order; empty when not stratified.
  std::vector<std::vector<std::string>> strata;

  bool ok() const { return violations.empty(); }
};

/// Checks stratification, range restriction, group well-formedness, fact
/// groundness, external key declarations and fact/rule predicate disjointness.
/// Collects every violation.
ValidationReport validate(const Program& program);

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ValidationError listing every violation.
void ensure_valid(const Program& program);

std::string predicate_id(const Atom& a);  // "name/arity"

}  // namespace slotlog
