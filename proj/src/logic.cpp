#include "slotlog/logic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace slotlog {

std::string to_string(const Term& t) {
  switch (t.kind) {
    case Term::Kind::Integer: return std::to_string(t.integer);
    case Term::Kind::Symbol:
    case Term::Kind::Variable: return t.name;
  }
  return {};
}

std::string to_string(const Atom& a) {
  std::string s = a.predicate;
  if (!a.args.empty()) {
    s += '(';
    for (std::size_t i = 0; i < a.args.size(); ++i) {
      if (i) s += ", ";
      s += to_string(a.args[i]);
    }
    s += ')';
  }
  return s;
}

std::string to_string(const Expr& e) {
  if (e.op == Expr::Op::Leaf) return to_string(e.leaf);
  const char* op = e.op == Expr::Op::Add ? " + " : e.op == Expr::Op::Sub ? " - " : " * ";
  auto side = [&](const Expr& x, bool right) {
    // Parenthesize to keep the parse tree under left-associative re-reading.
    bool wrap = x.op != Expr::Op::Leaf &&
                (right || (e.op == Expr::Op::Mul && x.op != Expr::Op::Mul));
    return wrap ? "(" + to_string(x) + ")" : to_string(x);
  };
  return side(e.operands[0], false) + op + side(e.operands[1], true);
}

namespace {

const char* builtin_op(BuiltinKind k) {
  switch (k) {
    case BuiltinKind::Is: return "is";
    case BuiltinKind::Lt: return "<";
    case BuiltinKind::Gt: return ">";
    case BuiltinKind::Le: return "=<";
    case BuiltinKind::Ge: return ">=";
    case BuiltinKind::Eq: return "=";
    case BuiltinKind::Neq: return "\\=";
    case BuiltinKind::Between: return "between";
  }
  return "?";
}

std::string format_probability(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

std::string to_string(const Literal& l) {
  if (const auto* a = std::get_if<AtomLiteral>(&l)) return (a->negated ? "\\+ " : "") + to_string(a->atom);
  const auto& b = std::get<BuiltinLiteral>(l);
  if (b.kind == BuiltinKind::Between)
    return "between(" + to_string(b.args[0]) + ", " + to_string(b.args[1]) + ", " + to_string(b.args[2]) + ")";
  return to_string(b.args[0]) + " " + builtin_op(b.kind) + " " + to_string(b.args[1]);
}

std::string to_string(const Rule& r) {
  std::string s = to_string(r.head);
  for (std::size_t i = 0; i < r.body.size(); ++i) s += (i ? ", " : " :- ") + to_string(r.body[i]);
  return s + ".";
}

std::string to_string(const FactDecl& f) {
  std::string s;
  if (f.group) s += "@group(" + *f.group + ") ";
  if (const auto* p = std::get_if<double>(&f.param))
    s += format_probability(*p);
  else
    s += std::get<std::string>(f.param);
  return s + "::" + to_string(f.atom) + ".";
}

std::string serialize(const Program& p) {
  std::ostringstream out;
  if (!p.externals.empty()) {
    out << "@external(";
    for (std::size_t i = 0; i < p.externals.size(); ++i) out << (i ? ", " : "") << p.externals[i];
    out << ").\n";
  }
  for (const auto& f : p.facts) out << to_string(f) << '\n';
  for (const auto& r : p.rules) out << to_string(r) << '\n';
  for (const auto& q : p.queries) out << "?- " << to_string(q) << ".\n";
  return out.str();
}

std::string predicate_id(const Atom& a) { return a.predicate + "/" + std::to_string(a.arity()); }

std::string group_vector_key(const std::string& key) {
  auto slash = key.rfind('/');
  return slash == std::string::npos ? key : key.substr(0, slash);
}

namespace {

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    auto slash = key.find('/', start);
    parts.push_back(key.substr(start, slash - start));
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  return parts;
}

std::optional<int> as_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::optional<int> key_last_index(const std::string& key) {
  auto parts = split_key(key);
  if (parts.size() < 2) return std::nullopt;
  return as_int(parts.back());
}

std::optional<int> key_slot_index(const std::string& key) {
  auto parts = split_key(key);
  for (std::size_t i = 1; i < parts.size(); ++i)
    if (auto v = as_int(parts[i])) return v;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void collect_vars(const Expr& e, std::set<std::string>& out) {
  if (e.op == Expr::Op::Leaf) {
    if (e.leaf.is_var()) out.insert(e.leaf.name);
    return;
  }
  for (const auto& o : e.operands) collect_vars(o, out);
}

void collect_vars(const Atom& a, std::set<std::string>& out) {
  for (const auto& t : a.args)
    if (t.is_var()) out.insert(t.name);
}

bool all_bound(const Expr& e, const std::set<std::string>& bound) {
  std::set<std::string> vs;
  collect_vars(e, vs);
  return std::ranges::all_of(vs, [&](const std::string& v) { return bound.contains(v); });
}

// Mode-aware safety: head variables are inputs supplied by the caller; every
// variable read by a negated literal or a builtin must be an input or bound by
// an earlier positive literal or builtin.
void check_rule_safety(const Rule& r, std::size_t index, std::vector<std::string>& out) {
  std::set<std::string> bound;
  collect_vars(r.head, bound);
  const std::string where = "rule " + std::to_string(index) + " (" + to_string(r) + ")";
  for (const auto& lit : r.body) {
    if (const auto* a = std::get_if<AtomLiteral>(&lit)) {
      if (a->negated) {
        std::set<std::string> vs;
        collect_vars(a->atom, vs);
        for (const auto& v : vs)
          if (!bound.contains(v))
            out.push_back("range restriction: variable " + v + " in negated literal is never bound in " + where);
      } else {
        collect_vars(a->atom, bound);
      }
      continue;
    }
    const auto& b = std::get<BuiltinLiteral>(lit);
    auto unbound_in = [&](const Expr& e, const char* what) {
      std::set<std::string> vs;
      collect_vars(e, vs);
      for (const auto& v : vs)
        if (!bound.contains(v))
          out.push_back(std::string("range restriction: variable ") + v + " unbound in " + what + " of " + where);
    };
    switch (b.kind) {
      case BuiltinKind::Is:
        unbound_in(b.args[1], "'is' right-hand side");
        collect_vars(b.args[0], bound);
        break;
      case BuiltinKind::Between:
        unbound_in(b.args[0], "between/3 lower bound");
        unbound_in(b.args[1], "between/3 upper bound");
        collect_vars(b.args[2], bound);
        break;
      case BuiltinKind::Eq:
        if (!all_bound(b.args[0], bound) && !all_bound(b.args[1], bound))
          out.push_back("range restriction: both sides of '=' unbound in " + where);
        collect_vars(b.args[0], bound);
        collect_vars(b.args[1], bound);
        break;
      default:
        unbound_in(b.args[0], "comparison");
        unbound_in(b.args[1], "comparison");
        break;
    }
  }
}

struct DepEdge {
  int to;
  bool negative;
};

// Tarjan SCC; returns component index per node, components in reverse topological order.
std::vector<int> strongly_connected(const std::vector<std::vector<DepEdge>>& g, int& count) {
  const int n = static_cast<int>(g.size());
  std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
  std::vector<bool> on(n, false);
  int next_index = 0;
  count = 0;
  auto visit = [&](auto&& self, int v) -> void {
    index[v] = low[v] = next_index++;
    stack.push_back(v);
    on[v] = true;
    for (const auto& e : g[v]) {
      if (index[e.to] < 0) {
        self(self, e.to);
        low[v] = std::min(low[v], low[e.to]);
      } else if (on[e.to]) {
        low[v] = std::min(low[v], index[e.to]);
      }
    }
    if (low[v] == index[v]) {
      for (;;) {
        int w = stack.back();
        stack.pop_back();
        on[w] = false;
        comp[w] = count;
        if (w == v) break;
      }
      ++count;
    }
  };
  for (int v = 0; v < n; ++v)
    if (index[v] < 0) visit(visit, v);
  return comp;
}

}  // namespace

ValidationReport validate(const Program& program) {
  ValidationReport report;
  auto& out = report.violations;

  // Predicate table: fact predicates and rule heads must be disjoint.
  std::set<std::string> fact_preds, head_preds;
  for (const auto& f : program.facts) fact_preds.insert(predicate_id(f.atom));
  for (const auto& r : program.rules) head_preds.insert(predicate_id(r.head));
  for (const auto& p : fact_preds)
    if (head_preds.contains(p)) out.push_back("predicate " + p + " is both a probabilistic fact and a rule head");

  // Facts: ground, keys declared.
  std::set<std::string> declared(program.externals.begin(), program.externals.end());
  for (std::size_t i = 0; i < program.facts.size(); ++i) {
    const auto& f = program.facts[i];
    if (!f.atom.is_ground()) out.push_back("fact " + std::to_string(i) + " (" + to_string(f) + ") is not ground");
    if (const auto* key = std::get_if<std::string>(&f.param)) {
      const std::string vec = f.group ? group_vector_key(*key) : *key;
      if (!declared.contains(vec) && !declared.contains(*key))
        out.push_back("parameter key " + *key + " is not declared in @external");
    }
  }

  // Categorical groups.
  std::map<std::string, std::vector<const FactDecl*>> groups;
  for (const auto& f : program.facts)
    if (f.group) groups[*f.group].push_back(&f);
  for (const auto& [name, members] : groups) {
    const std::string where = "group " + name;
    const Atom& first = members.front()->atom;
    if (first.arity() == 0) out.push_back(where + ": member atoms need a class argument");
    std::set<Term> class_values;
    bool literal = std::holds_alternative<double>(members.front()->param);
    double total = 0.0;
    std::set<std::string> vector_keys;
    std::set<int> indices;
    for (const auto* m : members) {
      const Atom& a = m->atom;
      if (predicate_id(a) != predicate_id(first)) {
        out.push_back(where + ": members use different predicates (" + predicate_id(first) + ", " +
                      predicate_id(a) + ")");
        continue;
      }
      if (a.arity() == 0) continue;
      if (!std::equal(a.args.begin(), a.args.end() - 1, first.args.begin()))
        out.push_back(where + ": members differ outside the class argument (" + to_string(first) + ", " +
                      to_string(a) + ")");
      if (!class_values.insert(a.args.back()).second)
        out.push_back(where + ": duplicate class value " + to_string(a.args.back()));
      if (std::holds_alternative<double>(m->param) != literal) {
        out.push_back(where + ": mixes literal and external probabilities");
        continue;
      }
      if (literal) {
        total += std::get<double>(m->param);
      } else {
        const auto& key = std::get<std::string>(m->param);
        vector_keys.insert(group_vector_key(key));
        auto idx = key_last_index(key);
        if (!idx)
          out.push_back(where + ": key " + key + " lacks a trailing class index");
        else if (!indices.insert(*idx).second)
          out.push_back(where + ": class index " + std::to_string(*idx) + " used twice");
      }
    }
    if (literal && std::abs(total - 1.0) > 1e-9)
      out.push_back(where + ": literal probabilities sum to " + format_probability(total) + ", not 1");
    if (!literal) {
      if (vector_keys.size() > 1) out.push_back(where + ": members draw from different parameter vectors");
      int expect = 0;
      for (int idx : indices)
        if (idx != expect++) {
          out.push_back(where + ": class indices are not 0.." + std::to_string(members.size() - 1));
          break;
        }
    }
  }
  // A parameter vector may back only one group.
  std::map<std::string, std::string> vector_owner;
  for (const auto& [name, members] : groups)
    for (const auto* m : members)
      if (const auto* key = std::get_if<std::string>(&m->param)) {
        auto [it, fresh] = vector_owner.emplace(group_vector_key(*key), name);
        if (!fresh && it->second != name)
          out.push_back("parameter vector " + it->first + " is shared by groups " + it->second + " and " + name);
      }

  for (std::size_t i = 0; i < program.rules.size(); ++i) check_rule_safety(program.rules[i], i, out);

  // Stratification over the predicate dependency graph.
  std::map<std::string, int> ids;
  auto id_of = [&](const std::string& p) {
    auto [it, fresh] = ids.emplace(p, static_cast<int>(ids.size()));
    return it->second;
  };
  for (const auto& p : fact_preds) id_of(p);
  for (const auto& r : program.rules) {
    id_of(predicate_id(r.head));
    for (const auto& lit : r.body)
      if (const auto* a = std::get_if<AtomLiteral>(&lit)) id_of(predicate_id(a->atom));
  }
  std::vector<std::vector<DepEdge>> graph(ids.size());
  for (const auto& r : program.rules) {
    int h = ids[predicate_id(r.head)];
    for (const auto& lit : r.body)
      if (const auto* a = std::get_if<AtomLiteral>(&lit)) graph[h].push_back({ids[predicate_id(a->atom)], a->negated});
  }
  int ncomp = 0;
  auto comp = strongly_connected(graph, ncomp);
  std::vector<std::string> names(ids.size());
  for (const auto& [n, i] : ids) names[i] = n;
  bool stratified = true;
  for (std::size_t v = 0; v < graph.size(); ++v)
    for (const auto& e : graph[v])
      if (e.negative && comp[v] == comp[e.to]) {
        out.push_back("not stratified: " + names[v] + " depends negatively on " + names[e.to] + " within a cycle");
        stratified = false;
      }
  if (stratified) {
    // Tarjan emits components dependencies-first, so one pass assigns levels.
    std::vector<std::vector<int>> members(ncomp);
    for (std::size_t v = 0; v < comp.size(); ++v) members[comp[v]].push_back(static_cast<int>(v));
    std::vector<int> level(ncomp, 0);
    for (int c = 0; c < ncomp; ++c)
      for (int v : members[c])
        for (const auto& e : graph[v])
          if (comp[e.to] != c) level[c] = std::max(level[c], level[comp[e.to]] + (e.negative ? 1 : 0));
    int top = ncomp ? *std::max_element(level.begin(), level.end()) : -1;
    report.strata.resize(top + 1);
    for (int c = 0; c < ncomp; ++c)
      for (int v : members[c]) report.strata[level[c]].push_back(names[v]);
    for (auto& s : report.strata) std::sort(s.begin(), s.end());
  }
  return report;
}

void ensure_valid(const Program& program) {
  auto report = validate(program);
  if (report.ok()) return;
  std::string msg = "invalid program:";
  for (const auto& v : report.violations) msg += "\n  " + v;
  throw ValidationError(msg);
}

}  // namespace slotlog
