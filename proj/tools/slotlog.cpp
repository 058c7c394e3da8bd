// Command-line entry point: exact inference, dataset generation, training and
// evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "slotlog/circuit.hpp"
#include "slotlog/training.hpp"

namespace fs = std::filesystem;
using namespace slotlog;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kParse = 2, kValidation = 3, kMissingParam = 4, kCapacity = 5, kDivergence = 6, kSplit = 7 };

// Malformed parameter or configuration files.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  return buf;
}

void log_config(const ordered_json& j) { std::cerr << "config " << j.dump() << '\n'; }

double json_number(double v) { return std::isnan(v) ? 0.0 : v; }

ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["n"] = m.n;
  j["task_acc"] = m.task_acc;
  j["balanced_acc"] = m.balanced_acc;
  j["concept_acc"] = std::isnan(m.concept_acc) ? ordered_json(nullptr) : ordered_json(m.concept_acc);
  j["count_mae"] = std::isnan(m.count_mae) ? ordered_json(nullptr) : ordered_json(m.count_mae);
  return j;
}

void print_metrics(const Metrics& m) {
  std::cout << "n " << m.n << '\n'
            << "task_acc " << fixed(m.task_acc) << '\n'
            << "balanced_acc " << fixed(m.balanced_acc) << '\n';
  if (!std::isnan(m.concept_acc)) std::cout << "concept_acc " << fixed(m.concept_acc) << '\n';
  if (!std::isnan(m.count_mae)) std::cout << "count_mae " << fixed(m.count_mae) << '\n';
}

// Inputs shared by query, oracle and circuit-stats.
struct InferenceArgs {
  std::string program, params, query;
};

struct Loaded {
  Program program;
  GroundProgram ground;
  Atom query;
};

Loaded load_inference(const InferenceArgs& a) {
  Loaded l;
  l.program = parse_program(read_file(a.program));
  ensure_valid(l.program);
  if (!a.query.empty()) {
    l.query = parse_atom(a.query);
  } else if (!l.program.queries.empty()) {
    l.query = l.program.queries.front();
  } else {
    throw ValidationError("invalid program: no query given and none declared");
  }
  try {
    l.ground = ground_query(l.program, l.query);
  } catch (const GroundingError& e) {
    throw ValidationError(e.what());
  }
  return l;
}

FactParamTable load_params(const std::string& path) {
  if (path.empty()) return {};
  const std::string text = read_file(path);
  FactParamTable t;
  try {
    t = FactParamTable::parse(text);
  } catch (const ParameterError& e) {
    throw InputError(path + ": " + e.what());
  }
  t.check();
  return t;
}

void print_gradients(const GradientTable& g) {
  for (const auto& [key, values] : g) {
    std::cout << key;
    for (double v : values) std::cout << ' ' << fixed(v);
    std::cout << '\n';
  }
}

int cmd_query(const InferenceArgs& a, bool grad) {
  log_config({{"command", "query"}, {"program", a.program}, {"params", a.params}, {"query", a.query}, {"grad", grad}});
  const Loaded l = load_inference(a);
  const FactParamTable params = load_params(a.params);
  const Circuit c = compile_all(l.ground);
  const bool single = l.query.is_ground();
  if (single && c.root_index(l.query) < 0) {
    std::cout << fixed(0.0) << '\n';
    if (grad) {
      GradientTable zero;
      for (const auto& [key, v] : params.entries()) zero[key] = std::vector<double>(v.size(), 0.0);
      print_gradients(zero);
    }
    return kOk;
  }
  for (std::size_t r = 0; r < c.instances().size(); ++r) {
    const Backprop bp = backprop(c, params, r);
    if (single)
      std::cout << fixed(bp.probability) << '\n';
    else
      std::cout << to_string(c.instances()[r]) << ' ' << fixed(bp.probability) << '\n';
    if (grad) print_gradients(bp.gradients);
  }
  return kOk;
}

int cmd_oracle(const InferenceArgs& a, std::uint64_t max_worlds) {
  log_config({{"command", "oracle"}, {"program", a.program}, {"params", a.params}, {"query", a.query},
              {"max_worlds", max_worlds}});
  const Loaded l = load_inference(a);
  const FactParamTable params = load_params(a.params);
  if (l.query.is_ground()) {
    std::cout << fixed(enumerate_oracle(l.ground, params, l.query, max_worlds)) << '\n';
    return kOk;
  }
  for (const auto& q : l.ground.queries)
    std::cout << to_string(q) << ' ' << fixed(enumerate_oracle(l.ground, params, q, max_worlds)) << '\n';
  return kOk;
}

int cmd_circuit_stats(const InferenceArgs& a, int max_bits) {
  log_config({{"command", "circuit-stats"}, {"program", a.program}, {"query", a.query}, {"max_bits", max_bits}});
  const Loaded l = load_inference(a);
  const Circuit c = compile_all(l.ground, CompileOptions{max_bits});
  std::cout << "ground_facts " << l.ground.facts.size() << '\n'
            << "ground_rules " << l.ground.rules.size() << '\n'
            << "variables " << c.variables().size() << '\n'
            << "boolean_bits " << c.variables().boolean_bits() << '\n'
            << "nodes " << c.nodes().size() << '\n'
            << "instances " << c.instances().size() << '\n';
  for (std::size_t r = 0; r < c.instances().size(); ++r)
    std::cout << "instance " << to_string(c.instances()[r]) << " nodes " << c.reachable_nodes(r) << '\n';
  return kOk;
}

// Inputs shared by the experiment commands.
struct ExperimentArgs {
  std::string config, out, data, checkpoint, program;
  std::optional<std::uint64_t> seed;
};

TrainConfig load_config(const ExperimentArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) {
    try {
      c = TrainConfig::from_json(read_file(a.config));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(a.config + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ValidationError(a.config + ": " + e.what());
    }
  }
  if (a.seed) c.seed = *a.seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  return c;
}

fs::path prepare_out(const ExperimentArgs& a) {
  fs::path out = a.out.empty() ? fs::path(".") : fs::path(a.out);
  fs::create_directories(out);
  return out;
}

ordered_json resolved(const char* command, const ExperimentArgs& a, const TrainConfig& c) {
  ordered_json j;
  j["command"] = command;
  j["config"] = ordered_json::parse(c.to_json());
  j["out"] = a.out;
  if (!a.data.empty()) j["data"] = a.data;
  if (!a.checkpoint.empty()) j["checkpoint"] = a.checkpoint;
  if (!a.program.empty()) j["program"] = a.program;
  return j;
}

// Splits from a gen-data directory or generated from the configuration.
Splits load_splits(const ExperimentArgs& a, const TrainConfig& c) {
  if (a.data.empty()) return make_config_splits(c);
  Splits s;
  const fs::path dir(a.data);
  s.train = load_dataset((dir / "train.data").string());
  s.val = load_dataset((dir / "val.data").string());
  s.test = load_dataset((dir / "test.data").string());
  return s;
}

int cmd_gen_data(const ExperimentArgs& a) {
  const TrainConfig c = load_config(a);
  log_config(resolved("gen-data", a, c));
  const fs::path out = prepare_out(a);
  const Splits s = make_config_splits(c);
  save_dataset(s.train, (out / "train.data").string());
  save_dataset(s.val, (out / "val.data").string());
  save_dataset(s.test, (out / "test.data").string());
  write_file(out / "config.json", c.to_json() + "\n");
  std::cout << "train " << s.train.size() << "\nval " << s.val.size() << "\ntest " << s.test.size() << '\n';
  return kOk;
}

int cmd_train(const ExperimentArgs& a) {
  const TrainConfig c = load_config(a);
  log_config(resolved("train", a, c));
  const fs::path out = prepare_out(a);
  write_file(out / "config.json", c.to_json() + "\n");
  const Splits s = load_splits(a, c);
  const TaskProgram program = TaskProgram::load(c.program, c.model.slots, c.model.classes, c.encoding);

  std::ofstream jsonl(out / "metrics.jsonl"), csv(out / "metrics.csv");
  if (!jsonl || !csv) throw std::runtime_error("cannot write metrics under " + out.string());
  csv << "epoch,task_acc,concept_acc,count_mae,loss_task,loss_rec,loss_prior\n";
  auto record = [&](const EpochRecord& rec, Model& m) {
    // Hidden labels are read here only, after the epoch's updates.
    const Metrics v = eval_metrics(m, s.val, program);
    ordered_json j;
    j["epoch"] = rec.epoch;
    j["task_acc"] = v.task_acc;
    j["balanced_acc"] = v.balanced_acc;
    j["concept_acc"] = metrics_json(v)["concept_acc"];
    j["count_mae"] = metrics_json(v)["count_mae"];
    j["loss_task"] = rec.loss_task;
    j["loss_rec"] = rec.loss_rec;
    j["loss_prior"] = rec.loss_prior;
    j["loss_objects"] = rec.loss_objects;
    jsonl << j.dump() << '\n' << std::flush;
    csv << rec.epoch << ',' << fixed(v.task_acc) << ',' << fixed(json_number(v.concept_acc)) << ','
        << fixed(json_number(v.count_mae)) << ',' << fixed(rec.loss_task) << ',' << fixed(rec.loss_rec) << ','
        << fixed(rec.loss_prior) << '\n'
        << std::flush;
    std::cerr << "epoch " << rec.epoch << " loss_task " << fixed(rec.loss_task) << " val_task_acc "
              << fixed(v.task_acc) << '\n';
  };
  TrainResult r = train(c, s.train, s.val, record);
  save_checkpoint(r.model, (out / "checkpoint.txt").string());

  const TaskProgram test_program =
      TaskProgram::load(c.program, c.test_capacity(), c.model.classes, c.encoding);
  const Metrics test = eval_metrics(r.model, s.test, test_program);
  ordered_json summary;
  summary["best_epoch"] = r.best_epoch;
  summary["test"] = metrics_json(test);
  write_file(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "best_epoch " << r.best_epoch << '\n';
  print_metrics(test);
  return kOk;
}

int cmd_eval(const ExperimentArgs& a, bool swap) {
  const TrainConfig c = load_config(a);
  log_config(resolved(swap ? "swap-eval" : "eval", a, c));
  if (a.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  Model m = load_checkpoint(a.checkpoint);
  if (!(m.config == c.model)) throw ValidationError("checkpoint model does not match the configuration");
  const fs::path out = prepare_out(a);
  const Splits s = load_splits(a, c);
  Metrics metrics;
  if (swap) {
    if (a.program.empty()) throw ValidationError("--program is required");
    const TaskProgram p = TaskProgram::load(a.program, c.test_capacity(), c.model.classes, c.encoding);
    metrics = swap_program_eval(m, p, s.test);
  } else {
    const TaskProgram p = TaskProgram::load(c.program, c.test_capacity(), c.model.classes, c.encoding);
    metrics = eval_metrics(m, s.test, p);
  }
  write_file(out / (swap ? "swap_eval.json" : "eval.json"), metrics_json(metrics).dump(2) + "\n");
  print_metrics(metrics);
  return kOk;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const InputError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kValidation;
  } catch (const InterfaceError& e) {
    std::cerr << "interface error: " << e.what() << '\n';
    return kValidation;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kMissingParam;
  } catch (const CapacityError& e) {
    std::cerr << "capacity exceeded: " << e.what() << '\n';
    return kCapacity;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const SplitError& e) {
    std::cerr << "split error: " << e.what() << '\n';
    return kSplit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic logic over object slots"};
  app.require_subcommand(1);

  InferenceArgs inf;
  bool grad = false;
  std::uint64_t max_worlds = 1u << 20;
  int max_bits = 24;
  auto add_inference = [&](CLI::App* cmd, bool params) {
    cmd->add_option("program", inf.program, "Program file")->required()->check(CLI::ExistingFile);
    if (params) cmd->add_option("params", inf.params, "Parameter table file")->check(CLI::ExistingFile);
    cmd->add_option("-q,--query", inf.query, "Query atom; defaults to the program's first query");
  };
  auto* query = app.add_subcommand("query", "Exact probability of a query via the compiled circuit");
  add_inference(query, true);
  query->add_flag("--grad", grad, "Also print the gradient for every parameter key");
  auto* oracle = app.add_subcommand("oracle", "Probability of a query by enumerating possible worlds");
  add_inference(oracle, true);
  oracle->add_option("--max-worlds", max_worlds, "World limit");
  auto* stats = app.add_subcommand("circuit-stats", "Size of the compiled circuit for a query");
  add_inference(stats, false);
  stats->add_option("--max-bits", max_bits, "Variable-space limit in bits");

  ExperimentArgs exp;
  std::uint64_t seed = 0;
  auto add_experiment = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", exp.config, "Configuration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Overrides the configuration seed");
    cmd->add_option("-o,--out", exp.out, "Output directory");
    cmd->add_option("--data", exp.data, "Directory written by gen-data");
  };
  auto* gen = app.add_subcommand("gen-data", "Write train, validation and test scenes");
  add_experiment(gen);
  auto* trn = app.add_subcommand("train", "Train and write checkpoint and metrics");
  add_experiment(trn);
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the test scenes");
  add_experiment(evl);
  evl->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  auto* swp = app.add_subcommand("swap-eval", "Evaluate a frozen checkpoint under another program");
  add_experiment(swp);
  swp->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  swp->add_option("--program", exp.program, "addition, pair, count or a program file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kParse;
  }
  for (auto* cmd : {gen, trn, evl, swp})
    if (cmd->parsed() && cmd->count("--seed")) exp.seed = seed;

  if (query->parsed()) return guarded([&] { return cmd_query(inf, grad); });
  if (oracle->parsed()) return guarded([&] { return cmd_oracle(inf, max_worlds); });
  if (stats->parsed()) return guarded([&] { return cmd_circuit_stats(inf, max_bits); });
  if (gen->parsed()) return guarded([&] { return cmd_gen_data(exp); });
  if (trn->parsed()) return guarded([&] { return cmd_train(exp); });
  if (evl->parsed()) return guarded([&] { return cmd_eval(exp, false); });
  if (swp->parsed()) return guarded([&] { return cmd_eval(exp, true); });
  return kFailure;
}
