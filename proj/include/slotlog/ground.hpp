#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotlog/logic.hpp"

namespace slotlog {

/// Variable-free atom. Arguments are integer or symbol terms.
using GroundAtom = Atom;

struct GroundLiteral {
  GroundAtom atom;
  bool positive = true;

  friend bool operator==(const GroundLiteral&, const GroundLiteral&) = default;
  friend auto operator<=>(const GroundLiteral&, const GroundLiteral&) = default;
};

struct GroundRule {
  GroundAtom head;
  std::vector<GroundLiteral> body;

  friend bool operator==(const GroundRule&, const GroundRule&) = default;
  friend auto operator<=>(const GroundRule&, const GroundRule&) = default;
};

struct GroundFact {
  int fact_id = 0;  // index into Program::facts
  GroundAtom atom;
  ParamRef param;
  std::optional<std::string> group;

  friend bool operator==(const GroundFact&, const GroundFact&) = default;
};

struct GroundProgram {
  std::vector<GroundFact> facts;  // ascending fact_id
  std::vector<GroundRule> rules;  // sorted by head, then body
  Atom query_pattern;
  std::vector<GroundAtom> queries;  // provable instances of the pattern, sorted

  /// One clause per line: facts by id, then rules, then `?- instance.` lines.
  std::string dump() const;
  /// FNV-1a digest of dump(); keys circuit caches.
  std::uint64_t digest() const;
};

class GroundingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Backward-chaining grounding of the part of `program` relevant to `query`.
/// Subgoals are tabled by call pattern; re-entering a pattern that is still
/// being solved is reported as a cycle. Builtins are evaluated away.
GroundProgram ground_query(const Program& program, const Atom& query);

/// Result of evaluating a builtin under a substitution: zero or more
/// extensions of that substitution.
using Substitution = std::map<std::string, Term>;

/// Evaluates a builtin literal. Inputs must be bound; `between/3` used as a
/// generator needs integer-literal bounds.
std::vector<Substitution> evaluate_builtin(const BuiltinLiteral& literal, const Substitution& subst);

/// Integer value of an arithmetic expression under `subst`.
std::int64_t evaluate_expr(const Expr& e, const Substitution& subst);

}  // namespace slotlog
