#pragma once

// Exact knowledge compilation of ground programs into multi-valued decision
// diagrams, and their evaluation under the probability and gradient semirings.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slotlog/ground.hpp"

namespace slotlog {

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Probabilities for external parameter keys. Bernoulli keys (`object/1`) hold
/// one value; categorical keys (`class/1`) hold a vector indexed by class.
class FactParamTable {
 public:
  void set(const std::string& key, double p) { entries_[key] = {p}; }
  void set(const std::string& key, std::vector<double> dist) { entries_[key] = std::move(dist); }
  const std::vector<double>* find(const std::string& key) const;
  const std::map<std::string, std::vector<double>>& entries() const { return entries_; }

  /// Throws ParameterError unless scalars lie in [0,1] and vectors sum to 1
  /// within 1e-9.
  void check() const;

  /// `key v` or `key v0 v1 ... vK-1` per line, `#` comments.
  static FactParamTable parse(std::string_view text);
  std::string serialize() const;

 private:
  std::map<std::string, std::vector<double>> entries_;
};

/// Partial derivatives of a query probability, keyed like FactParamTable.
using GradientTable = std::map<std::string, std::vector<double>>;

struct Variable {
  std::string name;
  bool categorical = false;
  int domain = 2;  // Boolean variables: value 1 means the fact is true
  std::vector<int> fact_ids;  // Boolean: one id; categorical: member per value
  std::vector<ParamRef> params;
  std::string vector_key;  // categorical groups with external parameters
};

/// Decision variables in their fixed order: per slot ascending, objectness
/// before class.
class VariableSpace {
 public:
  static VariableSpace from(const GroundProgram& ground);

  std::span<const Variable> variables() const { return vars_; }
  std::size_t size() const { return vars_.size(); }
  const Variable& operator[](std::size_t i) const { return vars_[i]; }
  /// Sum over variables of ceil(log2(domain)).
  int boolean_bits() const;
  /// (variable, value) pairs that make the fact atom true.
  const std::vector<std::pair<int, int>>& literals_for(const GroundAtom& atom) const;

  /// Branch probabilities per variable. Throws ParameterError on a missing key
  /// or a vector of the wrong length.
  std::vector<std::vector<double>> branch_weights(const FactParamTable& params) const;

 private:
  std::vector<Variable> vars_;
  std::map<GroundAtom, std::vector<std::pair<int, int>>> literals_;
};

struct CompileOptions {
  int max_boolean_bits = 24;
};

/// Reduced ordered decision diagram with one root per query instance. Node 0
/// is FALSE, node 1 is TRUE; every other node's children precede it.
class Circuit {
 public:
  struct Node {
    int var = -1;
    std::vector<int> children;  // one per value of var
  };

  const VariableSpace& variables() const { return vars_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const GroundAtom> instances() const { return instances_; }
  std::span<const int> roots() const { return roots_; }
  /// Index of `instance` among roots, or -1.
  int root_index(const GroundAtom& instance) const;
  /// Nodes reachable from one root, terminals included.
  std::size_t reachable_nodes(std::size_t root) const;

 private:
  friend Circuit compile_all(const GroundProgram&, CompileOptions);
  friend Circuit compile(const GroundProgram&, const GroundAtom&, CompileOptions);

  VariableSpace vars_;
  std::vector<Node> nodes_;
  std::vector<GroundAtom> instances_;
  std::vector<int> roots_;
};

/// Shannon expansion in variable order, memoized on the residual formula, with a
/// unique table so equal sub-functions share one node.
Circuit compile(const GroundProgram& ground, const GroundAtom& instance, CompileOptions options = {});
/// One diagram with a root for every query instance of the ground program.
Circuit compile_all(const GroundProgram& ground, CompileOptions options = {});

/// Node values bottom-up under the probability semiring.
std::vector<double> node_values(const Circuit& c, const std::vector<std::vector<double>>& weights);

double evaluate(const Circuit& c, const FactParamTable& params, std::size_t root = 0);
/// Probability of every root in one pass.
std::vector<double> evaluate_all(const Circuit& c, const FactParamTable& params);

struct Backprop {
  double probability = 0.0;
  GradientTable gradients;  // every key of the parameter table; zero off-support
};

/// Forward pass plus one adjoint pass.
Backprop backprop(const Circuit& c, const FactParamTable& params, std::size_t root = 0);

/// Independent reference: sums the weight of every world in which the instance
/// is derived by stratified bottom-up evaluation.
double enumerate_oracle(const GroundProgram& ground, const FactParamTable& params, const GroundAtom& instance,
                        std::uint64_t max_worlds = 1u << 20);

/// Thread-safe cache of compiled query families keyed by ground-program digest.
class CircuitCache {
 public:
  explicit CircuitCache(CompileOptions options = {}) : options_(options) {}
  std::shared_ptr<const Circuit> get(const GroundProgram& ground);
  std::size_t size() const;

 private:
  CompileOptions options_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const Circuit>> cache_;
};

/// Probability of every query instance of the ground program.
std::map<GroundAtom, double> task_distribution(const GroundProgram& ground, const FactParamTable& params,
                                               CircuitCache* cache = nullptr);

}  // namespace slotlog
