#pragma once

// Distant-supervision training: task programs over the head interface, the
// three-term objective, the optimization loop and the evaluation metrics.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slotlog/circuit.hpp"
#include "slotlog/data.hpp"
#include "slotlog/perception.hpp"
#include "slotlog/programs.hpp"

namespace slotlog {

class InterfaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A query family compiled once, whose instances are indexed by the integer
/// in their last argument (the task label).
class TaskProgram {
 public:
  /// Parses, validates, grounds the first query pattern and compiles. Throws
  /// InterfaceError if the program's parameter keys are not `object/i` and
  /// `class/i/k` with i < slots and k < classes.
  static TaskProgram from_source(const std::string& text, int slots, int classes);
  /// "addition", "pair", "count", or a path to a program file.
  static TaskProgram load(const std::string& name_or_path, int slots, int classes,
                          AdditionEncoding encoding = AdditionEncoding::DefaultZero);

  int slots() const { return slots_; }
  int classes() const { return classes_; }
  const std::string& source() const { return source_; }
  const GroundProgram& ground() const { return ground_; }
  const Circuit& circuit() const { return *circuit_; }
  /// Labels in ascending order.
  std::vector<long> labels() const;
  bool has_label(long y) const { return root_.contains(y); }
  /// Root of a label; throws std::out_of_range outside the query family.
  std::size_t root(long y) const;

  /// p(y) for every label, ascending.
  std::vector<std::pair<long, double>> distribution(const FactParamTable& params) const;
  /// argmax_y p(y); ties go to the smallest y.
  long predict(const FactParamTable& params) const;
  /// The label that hard parameters for the given objects make certain. Objects
  /// fill slots 0, 1, ... in order.
  long label_of(const Signature& objects) const;

 private:
  std::string source_;
  int slots_ = 0, classes_ = 0;
  GroundProgram ground_;
  std::shared_ptr<const Circuit> circuit_;
  std::map<long, std::size_t> root_;
};

struct LossWeights {
  double task = 1.0, rec = 0.1, prior = 1.0;
  double objects = 0.1;  // per expected object: a Bernoulli prior on each flag
};

/// Unweighted terms: task = -log max(p(y), 1e-12), rec = -log p(x|s,beta),
/// prior = ||z||^2 / 2, objects = sum of betas. `total` applies the weights.
struct LossTerms {
  double task = 0, rec = 0, prior = 0, objects = 0, total = 0;
  double p = 0;
};

/// -log max(p(y), 1e-12) for fixed heads, with its gradient in the heads
/// (zero when p(y) is below the floor).
struct TaskTerm {
  double loss = 0, p = 0;
  Mat d_betas, d_classes;
};
TaskTerm task_term(const TaskProgram& program, const Mat& betas, const Mat& classes, long y);

/// Forward and backward for one example; gradients of `total` accumulate into
/// the model parameters. Reads only x and y.
LossTerms example_loss(Model& m, const Example& e, const TaskProgram& program, const LossWeights& w,
                       const Mat& slot_noise);

struct Heads {
  Mat betas, classes;
};
/// Heads at a given slot capacity with the fixed evaluation noise.
Heads predict_heads(Model& m, const Mat& x, int capacity);

/// True iff some slot-to-object assignment (objects padded with "absent")
/// agrees with every slot's predicted objectness and, for objects, class.
bool concept_match(const Heads& h, const Signature& truth);

struct Metrics {
  std::size_t n = 0;
  double task_acc = 0;
  double balanced_acc = 0;  // mean per-label recall
  double concept_acc = NAN;  // NaN without hidden labels
  double count_mae = NAN;
};

/// Metrics for precomputed heads, one per example.
Metrics metrics_from_heads(const std::vector<Heads>& heads, const std::vector<Example>& data,
                           const TaskProgram& program);
/// Evaluates at the program's slot capacity.
Metrics eval_metrics(Model& m, const std::vector<Example>& data, const TaskProgram& program);
/// Task accuracy only; never reads hidden labels.
double task_accuracy(Model& m, const std::vector<Example>& data, const TaskProgram& program);
/// Relabels `data` with the new program from the hidden labels, then evaluates
/// the frozen model on it.
Metrics swap_program_eval(Model& m, const TaskProgram& program, const std::vector<Example>& data);
std::vector<Example> relabel(const std::vector<Example>& data, const TaskProgram& program);

struct TrainConfig {
  std::uint64_t seed = 1;
  int epochs = 150;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  LossWeights weights;
  std::string program = "addition";
  AdditionEncoding encoding = AdditionEncoding::DefaultZero;
  SplitSpec split;
  std::size_t n_train = 6000, n_val = 1000, n_test = 1000;
  int eval_slots = 0;  // 0: training capacity
  int slot_pool = 5;   // training slot noise rows drawn from the first slot_pool evaluation rows; 0: Gaussian
  PerceptionConfig model;
  SceneSpec scene;

  /// Throws std::invalid_argument on inconsistent or non-positive settings.
  void validate() const;
  int test_capacity() const { return eval_slots > 0 ? eval_slots : model.slots; }
  std::string to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(std::string_view text);
};

/// Train, validation and test scenes for a configuration.
Splits make_config_splits(const TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double loss_task = 0, loss_rec = 0, loss_prior = 0, loss_objects = 0;
  double val_task_acc = 0;
};

struct TrainResult {
  Model model;  // best validation task accuracy, initial model included
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

using EpochObserver = std::function<void(const EpochRecord&, Model&)>;

/// Deterministic given the configuration and data. Throws DivergenceError if a
/// loss becomes non-finite.
TrainResult train(const TrainConfig& c, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const EpochObserver& observer = {});

}  // namespace slotlog
