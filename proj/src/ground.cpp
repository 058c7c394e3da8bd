#include "slotlog/ground.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace slotlog {

namespace {

Term resolve(const Term& t, const Substitution& s) {
  if (!t.is_var()) return t;
  auto it = s.find(t.name);
  return it == s.end() ? t : it->second;
}

Atom apply(const Atom& a, const Substitution& s) {
  Atom out{a.predicate, {}};
  out.args.reserve(a.args.size());
  for (const auto& t : a.args) out.args.push_back(resolve(t, s));
  return out;
}

// Extends `s` so that `pattern` (possibly with variables) equals `ground`.
bool match(const Atom& pattern, const GroundAtom& ground, Substitution& s) {
  if (pattern.predicate != ground.predicate || pattern.arity() != ground.arity()) return false;
  for (std::size_t i = 0; i < pattern.args.size(); ++i) {
    const Term t = resolve(pattern.args[i], s);
    if (t.is_var())
      s[t.name] = ground.args[i];
    else if (t != ground.args[i])
      return false;
  }
  return true;
}

// Call-pattern key with variables numbered by first occurrence.
std::string canonical_key(const Atom& a) {
  std::string key = predicate_id(a) + "(";
  std::vector<std::string> seen;
  for (const auto& t : a.args) {
    if (t.is_var()) {
      auto it = std::find(seen.begin(), seen.end(), t.name);
      std::size_t idx = it - seen.begin();
      if (it == seen.end()) seen.push_back(t.name);
      key += "_" + std::to_string(idx);
    } else {
      key += (t.is_int() ? "#" : "'") + to_string(t);
    }
    key += ",";
  }
  return key + ")";
}

class Grounder {
 public:
  explicit Grounder(const Program& p) : program_(p) {
    for (std::size_t i = 0; i < p.facts.size(); ++i) facts_by_pred_[predicate_id(p.facts[i].atom)].push_back(i);
    for (std::size_t i = 0; i < p.rules.size(); ++i) rules_by_pred_[predicate_id(p.rules[i].head)].push_back(i);
  }

  const std::vector<GroundAtom>& solve(const Atom& pattern) {
    const std::string key = canonical_key(pattern);
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    if (!in_progress_.insert(key).second)
      throw GroundingError("ground-level cycle through " + to_string(pattern));

    std::set<GroundAtom> results;
    const std::string pid = predicate_id(pattern);
    if (auto it = facts_by_pred_.find(pid); it != facts_by_pred_.end()) {
      for (std::size_t fi : it->second) {
        Substitution s;
        if (match(pattern, program_.facts[fi].atom, s)) results.insert(program_.facts[fi].atom);
      }
    }
    if (auto it = rules_by_pred_.find(pid); it != rules_by_pred_.end()) {
      for (std::size_t ri : it->second) {
        const Rule& rule = program_.rules[ri];
        Substitution s;
        bool ok = true;
        for (std::size_t i = 0; i < pattern.args.size() && ok; ++i) {
          if (pattern.args[i].is_var()) continue;
          const Term& h = rule.head.args[i];
          if (h.is_var()) {
            auto [pos, fresh] = s.emplace(h.name, pattern.args[i]);
            ok = fresh || pos->second == pattern.args[i];
          } else {
            ok = h == pattern.args[i];
          }
        }
        if (!ok) continue;
        std::vector<GroundLiteral> body;
        expand(rule, 0, s, body, pattern, results);
      }
    }
    in_progress_.erase(key);
    auto& slot = table_[key];
    slot.assign(results.begin(), results.end());
    return slot;
  }

  std::set<GroundRule> rules;

 private:
  void expand(const Rule& rule, std::size_t i, const Substitution& s, std::vector<GroundLiteral>& body,
              const Atom& pattern, std::set<GroundAtom>& results) {
    if (i == rule.body.size()) {
      GroundAtom head = apply(rule.head, s);
      if (!head.is_ground())
        throw GroundingError("rule head " + to_string(rule.head) + " left unbound while proving " + to_string(pattern));
      Substitution check;
      if (!match(pattern, head, check)) return;
      results.insert(head);
      rules.insert(GroundRule{head, body});
      return;
    }
    const Literal& lit = rule.body[i];
    if (const auto* b = std::get_if<BuiltinLiteral>(&lit)) {
      for (const auto& ext : evaluate_builtin(*b, s)) expand(rule, i + 1, ext, body, pattern, results);
      return;
    }
    const auto& al = std::get<AtomLiteral>(lit);
    Atom goal = apply(al.atom, s);
    if (al.negated) {
      if (!goal.is_ground())
        throw GroundingError("negation applied to non-ground " + to_string(goal) + " in " + to_string(rule));
      // An atom with no derivation is certainly false, so its negation drops out.
      const bool derivable = !solve(goal).empty();
      if (derivable) body.push_back({goal, false});
      expand(rule, i + 1, s, body, pattern, results);
      if (derivable) body.pop_back();
      return;
    }
    // Copy: the table entry may rehash while we recurse.
    const std::vector<GroundAtom> instances = solve(goal);
    for (const auto& inst : instances) {
      Substitution ext = s;
      if (!match(goal, inst, ext)) continue;
      body.push_back({inst, true});
      expand(rule, i + 1, ext, body, pattern, results);
      body.pop_back();
    }
  }

  const Program& program_;
  std::unordered_map<std::string, std::vector<std::size_t>> facts_by_pred_;
  std::unordered_map<std::string, std::vector<std::size_t>> rules_by_pred_;
  std::unordered_map<std::string, std::vector<GroundAtom>> table_;
  std::unordered_set<std::string> in_progress_;
};

std::int64_t as_integer(const Term& t) {
  if (t.is_var()) throw GroundingError("builtin applied to unbound variable " + t.name);
  if (!t.is_int()) throw GroundingError("arithmetic on non-integer '" + to_string(t) + "'");
  return t.integer;
}

const Term* leaf_term(const Expr& e) { return e.op == Expr::Op::Leaf ? &e.leaf : nullptr; }

}  // namespace

std::int64_t evaluate_expr(const Expr& e, const Substitution& subst) {
  switch (e.op) {
    case Expr::Op::Leaf: return as_integer(resolve(e.leaf, subst));
    case Expr::Op::Add: return evaluate_expr(e.operands[0], subst) + evaluate_expr(e.operands[1], subst);
    case Expr::Op::Sub: return evaluate_expr(e.operands[0], subst) - evaluate_expr(e.operands[1], subst);
    case Expr::Op::Mul: return evaluate_expr(e.operands[0], subst) * evaluate_expr(e.operands[1], subst);
  }
  return 0;
}

std::vector<Substitution> evaluate_builtin(const BuiltinLiteral& b, const Substitution& s) {
  auto unbound_var = [&](const Expr& e) -> const Term* {
    const Term* t = leaf_term(e);
    if (t && t->is_var() && !s.contains(t->name)) return t;
    return nullptr;
  };
  auto bind_or_test = [&](const Expr& target, std::int64_t v) -> std::vector<Substitution> {
    if (const Term* var = unbound_var(target)) {
      Substitution ext = s;
      ext[var->name] = Term::Int(v);
      return {ext};
    }
    if (evaluate_expr(target, s) == v) return {s};
    return {};
  };

  switch (b.kind) {
    case BuiltinKind::Is: return bind_or_test(b.args[0], evaluate_expr(b.args[1], s));
    case BuiltinKind::Between: {
      if (unbound_var(b.args[2])) {
        const Term* lo = leaf_term(b.args[0]);
        const Term* hi = leaf_term(b.args[1]);
        if (!lo || !hi || !lo->is_int() || !hi->is_int())
          throw GroundingError("between/3 generator with non-constant bounds: " + to_string(Literal{b}));
        std::vector<Substitution> out;
        for (std::int64_t v = lo->integer; v <= hi->integer; ++v) out.push_back(bind_or_test(b.args[2], v).front());
        return out;
      }
      const auto x = evaluate_expr(b.args[2], s);
      if (evaluate_expr(b.args[0], s) <= x && x <= evaluate_expr(b.args[1], s)) return {s};
      return {};
    }
    case BuiltinKind::Eq:
    case BuiltinKind::Neq: {
      const Term* l = leaf_term(b.args[0]);
      const Term* r = leaf_term(b.args[1]);
      if (!l || !r) throw GroundingError("'=' and '\\=' take plain terms: " + to_string(Literal{b}));
      const Term lt = resolve(*l, s), rt = resolve(*r, s);
      if (b.kind == BuiltinKind::Neq) {
        if (lt.is_var() || rt.is_var()) throw GroundingError("builtin applied to unbound variable in " + to_string(Literal{b}));
        return lt != rt ? std::vector<Substitution>{s} : std::vector<Substitution>{};
      }
      if (lt.is_var() && rt.is_var()) throw GroundingError("builtin applied to unbound variables in " + to_string(Literal{b}));
      Substitution ext = s;
      if (lt.is_var()) {
        ext[lt.name] = rt;
        return {ext};
      }
      if (rt.is_var()) {
        ext[rt.name] = lt;
        return {ext};
      }
      return lt == rt ? std::vector<Substitution>{s} : std::vector<Substitution>{};
    }
    default: {
      const auto l = evaluate_expr(b.args[0], s);
      const auto r = evaluate_expr(b.args[1], s);
      bool ok = false;
      switch (b.kind) {
        case BuiltinKind::Lt: ok = l < r; break;
        case BuiltinKind::Gt: ok = l > r; break;
        case BuiltinKind::Le: ok = l <= r; break;
        case BuiltinKind::Ge: ok = l >= r; break;
        default: break;
      }
      return ok ? std::vector<Substitution>{s} : std::vector<Substitution>{};
    }
  }
}

GroundProgram ground_query(const Program& program, const Atom& query) {
  Grounder g(program);
  GroundProgram out;
  out.query_pattern = query;
  out.queries = g.solve(query);

  // Keep only what some query instance depends on.
  std::map<GroundAtom, std::vector<const GroundRule*>> by_head;
  for (const auto& r : g.rules) by_head[r.head].push_back(&r);
  std::set<GroundAtom> reached;
  std::set<const GroundRule*> kept;
  std::deque<GroundAtom> work(out.queries.begin(), out.queries.end());
  while (!work.empty()) {
    GroundAtom a = std::move(work.front());
    work.pop_front();
    if (!reached.insert(a).second) continue;
    if (auto it = by_head.find(a); it != by_head.end())
      for (const auto* r : it->second) {
        kept.insert(r);
        for (const auto& l : r->body) work.push_back(l.atom);
      }
  }
  for (const auto& r : g.rules)
    if (kept.contains(&r)) out.rules.push_back(r);

  std::set<std::string> groups;
  for (const auto& f : program.facts)
    if (f.group && reached.contains(f.atom)) groups.insert(*f.group);
  for (std::size_t i = 0; i < program.facts.size(); ++i) {
    const auto& f = program.facts[i];
    if (reached.contains(f.atom) || (f.group && groups.contains(*f.group)))
      out.facts.push_back(GroundFact{static_cast<int>(i), f.atom, f.param, f.group});
  }
  return out;
}

std::string GroundProgram::dump() const {
  std::ostringstream os;
  for (const auto& f : facts) os << f.fact_id << ": " << to_string(FactDecl{f.param, f.atom, f.group}) << '\n';
  for (const auto& r : rules) {
    os << to_string(r.head);
    for (std::size_t i = 0; i < r.body.size(); ++i)
      os << (i ? ", " : " :- ") << (r.body[i].positive ? "" : "\\+ ") << to_string(r.body[i].atom);
    os << ".\n";
  }
  for (const auto& q : queries) os << "?- " << to_string(q) << ".\n";
  return os.str();
}

std::uint64_t GroundProgram::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace slotlog
