#include "slotlog/circuit.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

namespace slotlog {

// ---------------------------------------------------------------------------
// Parameter table

const std::vector<double>* FactParamTable::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void FactParamTable::check() const {
  for (const auto& [key, v] : entries_) {
    if (v.empty()) throw ParameterError("parameter " + key + " has no values");
    for (double x : v)
      if (!(x >= 0.0 && x <= 1.0) || !std::isfinite(x))
        throw ParameterError("parameter " + key + " has a value outside [0,1]");
    if (v.size() > 1) {
      double s = 0.0;
      for (double x : v) s += x;
      if (std::abs(s - 1.0) > 1e-9) throw ParameterError("distribution " + key + " does not sum to 1");
    }
  }
}

FactParamTable FactParamTable::parse(std::string_view text) {
  FactParamTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::vector<double> values;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParameterError("line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      values.push_back(v);
    }
    if (values.empty()) throw ParameterError("line " + std::to_string(lineno) + ": key " + key + " has no value");
    t.entries_[key] = std::move(values);
  }
  return t;
}

std::string FactParamTable::serialize() const {
  std::ostringstream os;
  os.precision(17);
  for (const auto& [key, v] : entries_) {
    os << key;
    for (double x : v) os << ' ' << x;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Variable space

VariableSpace VariableSpace::from(const GroundProgram& ground) {
  VariableSpace vs;
  std::map<std::string, std::size_t> group_index;
  for (const auto& f : ground.facts) {
    if (!f.group) {
      Variable v;
      v.name = std::holds_alternative<std::string>(f.param) ? std::get<std::string>(f.param) : to_string(f.atom);
      v.fact_ids = {f.fact_id};
      v.params = {f.param};
      vs.vars_.push_back(std::move(v));
      continue;
    }
    auto [it, fresh] = group_index.emplace(*f.group, vs.vars_.size());
    if (fresh) {
      Variable v;
      v.name = *f.group;
      v.categorical = true;
      v.domain = 0;
      if (const auto* key = std::get_if<std::string>(&f.param)) v.vector_key = group_vector_key(*key);
      vs.vars_.push_back(std::move(v));
    }
    auto& v = vs.vars_[it->second];
    v.fact_ids.push_back(f.fact_id);
    v.params.push_back(f.param);
    ++v.domain;
  }

  // Order members of external groups by class index.
  for (auto& v : vs.vars_) {
    if (!v.categorical || v.vector_key.empty()) continue;
    std::vector<std::size_t> order(v.fact_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto idx = [&](std::size_t i) { return key_last_index(std::get<std::string>(v.params[i])).value_or(0); };
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return idx(a) < idx(b); });
    Variable sorted = v;
    for (std::size_t i = 0; i < order.size(); ++i) {
      sorted.fact_ids[i] = v.fact_ids[order[i]];
      sorted.params[i] = v.params[order[i]];
    }
    v = std::move(sorted);
  }

  std::map<int, const GroundFact*> fact_by_id;
  for (const auto& f : ground.facts) fact_by_id[f.fact_id] = &f;
  auto slot_of = [&](const Variable& v) {
    const auto& p = v.params.front();
    if (const auto* key = std::get_if<std::string>(&p))
      if (auto s = key_slot_index(*key)) return *s;
    for (const auto& t : fact_by_id[v.fact_ids.front()]->atom.args)
      if (t.is_int()) return static_cast<int>(t.integer);
    return INT_MAX;
  };
  std::stable_sort(vs.vars_.begin(), vs.vars_.end(), [&](const Variable& a, const Variable& b) {
    return std::make_tuple(slot_of(a), a.categorical, a.fact_ids.front()) <
           std::make_tuple(slot_of(b), b.categorical, b.fact_ids.front());
  });

  for (std::size_t i = 0; i < vs.vars_.size(); ++i) {
    const auto& v = vs.vars_[i];
    for (std::size_t j = 0; j < v.fact_ids.size(); ++j) {
      const GroundAtom& atom = fact_by_id[v.fact_ids[j]]->atom;
      vs.literals_[atom].emplace_back(static_cast<int>(i), v.categorical ? static_cast<int>(j) : 1);
    }
  }
  return vs;
}

int VariableSpace::boolean_bits() const {
  int bits = 0;
  for (const auto& v : vars_) {
    int b = 0;
    while ((1 << b) < v.domain) ++b;
    bits += b;
  }
  return bits;
}

const std::vector<std::pair<int, int>>& VariableSpace::literals_for(const GroundAtom& atom) const {
  static const std::vector<std::pair<int, int>> none;
  auto it = literals_.find(atom);
  return it == literals_.end() ? none : it->second;
}

std::vector<std::vector<double>> VariableSpace::branch_weights(const FactParamTable& params) const {
  std::vector<std::vector<double>> w(vars_.size());
  auto scalar = [&](const ParamRef& p) {
    if (const auto* lit = std::get_if<double>(&p)) return *lit;
    const auto& key = std::get<std::string>(p);
    const auto* v = params.find(key);
    if (!v) throw ParameterError("missing parameter " + key);
    if (v->size() != 1) throw ParameterError("parameter " + key + " must be a single probability");
    return v->front();
  };
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    const auto& var = vars_[i];
    if (!var.categorical) {
      double p = scalar(var.params.front());
      w[i] = {1.0 - p, p};
      continue;
    }
    if (var.vector_key.empty()) {
      for (const auto& p : var.params) w[i].push_back(std::get<double>(p));
      continue;
    }
    const auto* v = params.find(var.vector_key);
    if (!v) throw ParameterError("missing parameter " + var.vector_key);
    if (static_cast<int>(v->size()) != var.domain)
      throw ParameterError("parameter " + var.vector_key + " has " + std::to_string(v->size()) + " values, expected " +
                           std::to_string(var.domain));
    w[i] = *v;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Compilation

namespace {

// Hash-consed propositional formulas over (variable == value) literals.
class FormulaArena {
 public:
  enum class Kind { False, True, Lit, Not, And, Or };
  static constexpr int kFalse = 0;
  static constexpr int kTrue = 1;

  FormulaArena() {
    nodes_.push_back({Kind::False, -1, -1, {}, INT_MAX});
    nodes_.push_back({Kind::True, -1, -1, {}, INT_MAX});
  }

  int lit(int var, int value) { return intern({Kind::Lit, var, value, {}, var}); }

  int negate(int a) {
    if (a == kFalse) return kTrue;
    if (a == kTrue) return kFalse;
    if (nodes_[a].kind == Kind::Not) return nodes_[a].kids[0];
    return intern({Kind::Not, -1, -1, {a}, nodes_[a].top});
  }

  int junction(Kind kind, std::vector<int> kids) {
    const int absorbing = kind == Kind::And ? kFalse : kTrue;
    const int neutral = kind == Kind::And ? kTrue : kFalse;
    std::vector<int> flat;
    for (int k : kids) {
      if (k == absorbing) return absorbing;
      if (k == neutral) continue;
      if (nodes_[k].kind == kind)
        flat.insert(flat.end(), nodes_[k].kids.begin(), nodes_[k].kids.end());
      else
        flat.push_back(k);
    }
    std::sort(flat.begin(), flat.end());
    flat.erase(std::unique(flat.begin(), flat.end()), flat.end());
    if (flat.empty()) return neutral;
    if (flat.size() == 1) return flat[0];
    int top = INT_MAX;
    for (int k : flat) top = std::min(top, nodes_[k].top);
    return intern({kind, -1, -1, std::move(flat), top});
  }

  int top(int f) const { return nodes_[f].top; }

  // Cofactor of f with var fixed to value.
  int restrict(int f, int var, int value) {
    if (nodes_[f].top > var) return f;
    const std::uint64_t key = (static_cast<std::uint64_t>(f) << 24) | (static_cast<std::uint64_t>(var) << 8) |
                              static_cast<std::uint64_t>(value);
    if (auto it = restrict_memo_.find(key); it != restrict_memo_.end()) return it->second;
    const Node n = nodes_[f];
    int r = f;
    switch (n.kind) {
      case Kind::Lit:
        r = n.var == var ? (n.value == value ? kTrue : kFalse) : f;
        break;
      case Kind::Not: r = negate(restrict(n.kids[0], var, value)); break;
      case Kind::And:
      case Kind::Or: {
        std::vector<int> kids;
        kids.reserve(n.kids.size());
        for (int k : n.kids) kids.push_back(restrict(k, var, value));
        r = junction(n.kind, std::move(kids));
        break;
      }
      default: break;
    }
    restrict_memo_.emplace(key, r);
    return r;
  }

 private:
  struct Node {
    Kind kind;
    int var;
    int value;
    std::vector<int> kids;
    int top;  // smallest variable index mentioned
  };
  struct KeyHash {
    std::size_t operator()(const std::vector<int>& v) const {
      std::size_t h = 1469598103934665603ull;
      for (int x : v) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ull;
      return h;
    }
  };

  int intern(Node n) {
    std::vector<int> key{static_cast<int>(n.kind), n.var, n.value};
    key.insert(key.end(), n.kids.begin(), n.kids.end());
    auto [it, fresh] = unique_.emplace(std::move(key), static_cast<int>(nodes_.size()));
    if (fresh) nodes_.push_back(std::move(n));
    return it->second;
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::vector<int>, int, KeyHash> unique_;
  std::unordered_map<std::uint64_t, int> restrict_memo_;
};

class Compiler {
 public:
  Compiler(const GroundProgram& ground, const VariableSpace& vars) : vars_(vars) {
    for (const auto& r : ground.rules) rules_by_head_[r.head].push_back(&r);
    for (const auto& v : vars_.variables())
      if (v.domain > 255) throw CapacityError("categorical domain " + v.name + " exceeds 255 values");
  }

  int atom_formula(const GroundAtom& a) {
    if (auto it = atom_memo_.find(a); it != atom_memo_.end()) return it->second;
    if (!on_stack_.insert(a).second) throw GroundingError("ground-level cycle through " + to_string(a));
    std::vector<int> disjuncts;
    for (auto [var, value] : vars_.literals_for(a)) disjuncts.push_back(arena_.lit(var, value));
    if (auto it = rules_by_head_.find(a); it != rules_by_head_.end()) {
      for (const auto* r : it->second) {
        std::vector<int> conj;
        for (const auto& l : r->body) {
          int f = atom_formula(l.atom);
          conj.push_back(l.positive ? f : arena_.negate(f));
        }
        disjuncts.push_back(arena_.junction(FormulaArena::Kind::And, std::move(conj)));
      }
    }
    on_stack_.erase(a);
    int f = arena_.junction(FormulaArena::Kind::Or, std::move(disjuncts));
    atom_memo_.emplace(a, f);
    return f;
  }

  int shannon(int f) {
    if (f == FormulaArena::kFalse) return 0;
    if (f == FormulaArena::kTrue) return 1;
    if (auto it = node_memo_.find(f); it != node_memo_.end()) return it->second;
    const int var = arena_.top(f);
    std::vector<int> children;
    for (int value = 0; value < vars_[var].domain; ++value) children.push_back(shannon(arena_.restrict(f, var, value)));
    int id = children[0];
    if (!std::all_of(children.begin(), children.end(), [&](int c) { return c == children[0]; })) {
      std::vector<int> key{var};
      key.insert(key.end(), children.begin(), children.end());
      auto [it, fresh] = unique_.emplace(std::move(key), static_cast<int>(nodes.size()));
      if (fresh) nodes.push_back({var, std::move(children)});
      id = it->second;
    }
    node_memo_.emplace(f, id);
    return id;
  }

  std::vector<Circuit::Node> nodes{{-1, {}}, {-1, {}}};

 private:
  struct KeyHash {
    std::size_t operator()(const std::vector<int>& v) const {
      std::size_t h = 1469598103934665603ull;
      for (int x : v) h = (h ^ static_cast<std::size_t>(x)) * 1099511628211ull;
      return h;
    }
  };

  const VariableSpace& vars_;
  FormulaArena arena_;
  std::map<GroundAtom, std::vector<const GroundRule*>> rules_by_head_;
  std::map<GroundAtom, int> atom_memo_;
  std::set<GroundAtom> on_stack_;
  std::unordered_map<int, int> node_memo_;
  std::unordered_map<std::vector<int>, int, KeyHash> unique_;
};

}  // namespace

Circuit compile_all(const GroundProgram& ground, CompileOptions options) {
  Circuit c;
  c.vars_ = VariableSpace::from(ground);
  if (int bits = c.vars_.boolean_bits(); bits > options.max_boolean_bits)
    throw CapacityError("variable space needs " + std::to_string(bits) + " Boolean-equivalent bits, limit is " +
                        std::to_string(options.max_boolean_bits));
  Compiler comp(ground, c.vars_);
  for (const auto& q : ground.queries) {
    c.instances_.push_back(q);
    c.roots_.push_back(comp.shannon(comp.atom_formula(q)));
  }
  c.nodes_ = std::move(comp.nodes);
  return c;
}

Circuit compile(const GroundProgram& ground, const GroundAtom& instance, CompileOptions options) {
  if (std::find(ground.queries.begin(), ground.queries.end(), instance) == ground.queries.end())
    throw GroundingError(to_string(instance) + " is not a query instance of the ground program");
  Circuit c;
  c.vars_ = VariableSpace::from(ground);
  if (int bits = c.vars_.boolean_bits(); bits > options.max_boolean_bits)
    throw CapacityError("variable space needs " + std::to_string(bits) + " Boolean-equivalent bits, limit is " +
                        std::to_string(options.max_boolean_bits));
  Compiler comp(ground, c.vars_);
  c.instances_ = {instance};
  c.roots_ = {comp.shannon(comp.atom_formula(instance))};
  c.nodes_ = std::move(comp.nodes);
  return c;
}

int Circuit::root_index(const GroundAtom& instance) const {
  auto it = std::find(instances_.begin(), instances_.end(), instance);
  return it == instances_.end() ? -1 : static_cast<int>(it - instances_.begin());
}

std::size_t Circuit::reachable_nodes(std::size_t root) const {
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<int> stack{roots_.at(root)};
  std::size_t count = 0;
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    if (seen[n]) continue;
    seen[n] = true;
    ++count;
    for (int ch : nodes_[n].children) stack.push_back(ch);
  }
  return count;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> node_values(const Circuit& c, const std::vector<std::vector<double>>& weights) {
  const auto nodes = c.nodes();
  std::vector<double> value(nodes.size(), 0.0);
  value[1] = 1.0;
  for (std::size_t i = 2; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const auto& w = weights[n.var];
    double s = 0.0;
    for (std::size_t v = 0; v < n.children.size(); ++v) s += w[v] * value[n.children[v]];
    value[i] = s;
  }
  return value;
}

double evaluate(const Circuit& c, const FactParamTable& params, std::size_t root) {
  return node_values(c, c.variables().branch_weights(params))[c.roots()[root]];
}

std::vector<double> evaluate_all(const Circuit& c, const FactParamTable& params) {
  auto value = node_values(c, c.variables().branch_weights(params));
  std::vector<double> out;
  for (int r : c.roots()) out.push_back(value[r]);
  return out;
}

Backprop backprop(const Circuit& c, const FactParamTable& params, std::size_t root) {
  const auto& vars = c.variables();
  const auto weights = vars.branch_weights(params);
  const auto value = node_values(c, weights);
  const auto nodes = c.nodes();

  std::vector<double> adjoint(nodes.size(), 0.0);
  std::vector<std::vector<double>> dweight(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i) dweight[i].assign(vars[i].domain, 0.0);
  const int r = c.roots()[root];
  adjoint[r] = 1.0;
  for (int i = r; i >= 2; --i) {
    const double a = adjoint[i];
    if (a == 0.0) continue;
    const auto& n = nodes[i];
    const auto& w = weights[n.var];
    for (std::size_t v = 0; v < n.children.size(); ++v) {
      adjoint[n.children[v]] += a * w[v];
      dweight[n.var][v] += a * value[n.children[v]];
    }
  }

  Backprop out;
  out.probability = value[r];
  for (const auto& [key, v] : params.entries()) out.gradients[key].assign(v.size(), 0.0);
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const auto& var = vars[i];
    if (!var.categorical) {
      if (const auto* key = std::get_if<std::string>(&var.params.front()))
        out.gradients[*key][0] += dweight[i][1] - dweight[i][0];
      continue;
    }
    if (var.vector_key.empty()) continue;
    auto& g = out.gradients[var.vector_key];
    for (int v = 0; v < var.domain; ++v) g[v] += dweight[i][v];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enumeration oracle

double enumerate_oracle(const GroundProgram& ground, const FactParamTable& params, const GroundAtom& instance,
                        std::uint64_t max_worlds) {
  // Choice points: an independent fact (two outcomes) or a group (one member true).
  struct Choice {
    std::vector<std::size_t> facts;  // indices into ground.facts; Boolean choices hold one
    std::vector<double> probs;       // per outcome
    bool boolean = true;
  };
  auto prob_of = [&](const ParamRef& p) {
    if (const auto* lit = std::get_if<double>(&p)) return *lit;
    const auto& key = std::get<std::string>(p);
    if (const auto* v = params.find(key)) return v->at(0);
    const auto* vec = params.find(group_vector_key(key));
    auto idx = key_last_index(key);
    if (!vec || !idx || *idx >= static_cast<int>(vec->size())) throw ParameterError("missing parameter " + key);
    return (*vec)[*idx];
  };
  std::vector<Choice> choices;
  std::map<std::string, std::size_t> group_choice;
  for (std::size_t i = 0; i < ground.facts.size(); ++i) {
    const auto& f = ground.facts[i];
    if (!f.group) {
      double p = prob_of(f.param);
      choices.push_back({{i}, {1.0 - p, p}, true});
      continue;
    }
    auto [it, fresh] = group_choice.emplace(*f.group, choices.size());
    if (fresh) choices.push_back({{}, {}, false});
    choices[it->second].facts.push_back(i);
    choices[it->second].probs.push_back(prob_of(f.param));
  }
  std::uint64_t worlds = 1;
  for (const auto& ch : choices) {
    worlds *= ch.probs.size();
    if (worlds > max_worlds)
      throw CapacityError("enumeration needs more than " + std::to_string(max_worlds) + " worlds");
  }

  // Atoms interned once; the per-world fixpoint runs on flat bit vectors.
  std::map<GroundAtom, int> atom_id;
  auto intern = [&](const GroundAtom& a) { return atom_id.emplace(a, static_cast<int>(atom_id.size())).first->second; };
  struct FlatRule {
    int head;
    std::vector<std::pair<int, bool>> body;
  };
  std::vector<int> fact_atom(ground.facts.size());
  for (std::size_t i = 0; i < ground.facts.size(); ++i) fact_atom[i] = intern(ground.facts[i].atom);
  std::vector<FlatRule> rules;
  for (const auto& r : ground.rules) {
    FlatRule fr{intern(r.head), {}};
    for (const auto& l : r.body) fr.body.emplace_back(intern(l.atom), l.positive);
    rules.push_back(std::move(fr));
  }
  const int target = atom_id.contains(instance) ? atom_id.at(instance) : -1;

  // Stratum per ground atom: facts 0; a head sits above its positive body and
  // strictly above its negated body.
  std::vector<int> stratum(atom_id.size(), 0);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& r : rules) {
      int s = stratum[r.head];
      for (const auto& [a, pos] : r.body) s = std::max(s, stratum[a] + (pos ? 0 : 1));
      if (s > static_cast<int>(rules.size()) + 1) throw GroundingError("ground program is not stratified");
      if (s != stratum[r.head]) {
        stratum[r.head] = s;
        changed = true;
      }
    }
  }
  int top = 0;
  for (int s : stratum) top = std::max(top, s);
  std::vector<std::vector<const FlatRule*>> by_stratum(top + 1);
  for (const auto& r : rules) by_stratum[stratum[r.head]].push_back(&r);

  std::vector<std::size_t> digit(choices.size(), 0);
  std::vector<char> truth(atom_id.size());
  double total = 0.0;
  for (std::uint64_t w = 0; w < worlds; ++w) {
    double weight = 1.0;
    std::fill(truth.begin(), truth.end(), 0);
    for (std::size_t i = 0; i < choices.size(); ++i) {
      const auto& ch = choices[i];
      weight *= ch.probs[digit[i]];
      if (ch.boolean) {
        if (digit[i] == 1) truth[fact_atom[ch.facts[0]]] = 1;
      } else {
        truth[fact_atom[ch.facts[digit[i]]]] = 1;
      }
    }
    for (int s = 0; s <= top && target >= 0; ++s) {
      for (bool changed = true; changed;) {
        changed = false;
        for (const FlatRule* r : by_stratum[s]) {
          if (truth[r->head]) continue;
          bool fires = std::all_of(r->body.begin(), r->body.end(),
                                   [&](const auto& l) { return static_cast<bool>(truth[l.first]) == l.second; });
          if (fires) {
            truth[r->head] = 1;
            changed = true;
          }
        }
      }
    }
    if (target >= 0 && truth[target]) total += weight;
    for (std::size_t i = 0; i < choices.size(); ++i) {
      if (++digit[i] < choices[i].probs.size()) break;
      digit[i] = 0;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const Circuit> CircuitCache::get(const GroundProgram& ground) {
  const auto key = ground.digest();
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto c = std::make_shared<const Circuit>(compile_all(ground, options_));
  std::lock_guard lock(mu_);
  return cache_.emplace(key, std::move(c)).first->second;
}

std::size_t CircuitCache::size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

std::map<GroundAtom, double> task_distribution(const GroundProgram& ground, const FactParamTable& params,
                                               CircuitCache* cache) {
  std::shared_ptr<const Circuit> c = cache ? cache->get(ground) : std::make_shared<const Circuit>(compile_all(ground));
  auto probs = evaluate_all(*c, params);
  std::map<GroundAtom, double> out;
  for (std::size_t i = 0; i < probs.size(); ++i) out[c->instances()[i]] = probs[i];
  return out;
}

}  // namespace slotlog
