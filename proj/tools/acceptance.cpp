// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "slotlog/circuit.hpp"
#include "slotlog/training.hpp"

using namespace slotlog;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fmt("%.3f", x);
  return "[" + s + "]";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Head-interface parameters for slots [0, slots) and `classes` classes.
FactParamTable random_params(std::mt19937_64& rng, int slots, int classes, int first_slot = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FactParamTable t;
  for (int i = first_slot; i < first_slot + slots; ++i) {
    t.set("object/" + std::to_string(i), u(rng));
    std::vector<double> d(classes);
    double s = 0;
    for (auto& x : d) s += (x = -std::log(1.0 - u(rng)));
    for (auto& x : d) x /= s;
    t.set("class/" + std::to_string(i), d);
  }
  return t;
}

// A program text, its query pattern and a parameter table.
struct Instance {
  std::string name, text, query;
  FactParamTable params;
};

// Draws from the shipped program templates with at most 4 slots and 5 classes.
Instance random_instance(std::mt19937_64& rng, const std::string& programs_dir) {
  std::uniform_int_distribution<int> pick(0, 6), slots_d(1, 4), classes_d(2, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int slots = slots_d(rng), classes = classes_d(rng);
  Instance in;
  switch (pick(rng)) {
    case 0:
    case 1: {
      const auto enc = pick(rng) % 2 ? AdditionEncoding::AccumulatorChain : AdditionEncoding::DefaultZero;
      in = {"addition", addition_program(slots, classes, enc), addition_query(enc), {}};
      break;
    }
    case 2:
      in = {"pair", pair_program(slots, classes), "pair_label(Z)", {}};
      break;
    case 3:
      in = {"count", count_program(slots, classes), "count(Z)", {}};
      break;
    case 4: {
      in = {"two_slot_add", slurp(programs_dir + "/two_slot_add.pl"), "add(Z)", random_params(rng, 2, 2, 1)};
      return in;
    }
    case 5: {
      // The burglary network with fresh literal probabilities.
      in.name = "burglary";
      in.text = fmt("%.6f::burglary.\n%.6f::earthquake.\n%.6f::hear.\n", u(rng), u(rng), u(rng)) +
                "alarm :- burglary.\nalarm :- earthquake.\ncall :- alarm, hear.\n?- call.\n";
      in.query = "call";
      return in;
    }
    default: {
      in = {"chain_addition", slurp(programs_dir + "/chain_addition.pl"), "addition(input, Z)",
            random_params(rng, 2, 10)};
      return in;
    }
  }
  in.params = random_params(rng, slots, classes);
  return in;
}

Outcome engine_exactness(const std::string& programs_dir) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  long queries = 0;
  std::map<std::string, int> by_template;
  for (int trial = 0; trial < 1000; ++trial) {
    const Instance in = random_instance(rng, programs_dir);
    ++by_template[in.name];
    const auto g = ground_query(parse_program(in.text), parse_atom(in.query));
    const Circuit c = compile_all(g);
    const auto probs = evaluate_all(c, in.params);
    for (std::size_t r = 0; r < probs.size(); ++r) {
      worst = std::max(worst, std::abs(probs[r] - enumerate_oracle(g, in.params, c.instances()[r])));
      ++queries;
    }
  }
  const double secs = seconds_since(t0);
  std::string mix;
  for (const auto& [name, n] : by_template) mix += (mix.empty() ? "" : " ") + name + "=" + std::to_string(n);
  return {worst <= 1e-9 && secs <= 60.0,
          fmt("max |query - oracle| = %.3g over 1000 instances, %ld query instances (%s); %.1f s (limit 60 s)",
              worst, queries, mix.c_str(), secs)};
}

PerceptionConfig micro_model() {
  PerceptionConfig c;
  c.tokens = 4;
  c.token_dim = 3;
  c.latent_dim = 4;
  c.slot_dim = 4;
  c.hidden = 5;
  c.classes = 2;
  c.slots = 2;
  return c;
}

Outcome gradient_exactness() {
  const auto t0 = Clock::now();
  const double h = 1e-5;
  std::mt19937_64 rng(202);
  double worst_circuit = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int slots = 1 + trial % 4, classes = 2 + (trial / 4) % 4;
    const auto enc = trial % 2 ? AdditionEncoding::AccumulatorChain : AdditionEncoding::DefaultZero;
    const auto g = ground_query(parse_program(addition_program(slots, classes, enc)), parse_atom(addition_query(enc)));
    const Circuit c = compile_all(g);
    const FactParamTable t = random_params(rng, slots, classes);
    const std::size_t root = std::uniform_int_distribution<std::size_t>(0, c.instances().size() - 1)(rng);
    const Backprop bp = backprop(c, t, root);
    double num = 0, den = 0;
    for (const auto& [key, vals] : t.entries()) {
      for (std::size_t k = 0; k < vals.size(); ++k) {
        auto up = vals, down = vals;
        up[k] += h;
        down[k] -= h;
        FactParamTable tu = t, td = t;
        tu.set(key, up);
        td.set(key, down);
        const double fd = (evaluate(c, tu, root) - evaluate(c, td, root)) / (2 * h);
        const double d = bp.gradients.at(key)[k] - fd;
        num += d * d;
        den += fd * fd;
      }
    }
    worst_circuit = std::max(worst_circuit, den > 0 ? std::sqrt(num / den) : std::sqrt(num));
  }

  double worst_composite = 0;
  const auto program = TaskProgram::load("addition", 2, 2);
  const LossWeights w{1.0, 0.7, 0.3, 0.2};
  for (int trial = 0; trial < 20; ++trial) {
    Model m = Model::init(micro_model(), rng);
    for (auto* p : m.parameters()) p->value = randn(rng, p->value.rows(), p->value.cols(), 0.7);
    const Example e{randn(rng, 4, 3), std::uniform_int_distribution<long>(0, 2)(rng), std::nullopt};
    const Mat noise = randn(rng, 2, 4);
    m.zero_grad();
    example_loss(m, e, program, w, noise);
    double num = 0, den = 0;
    for (auto* p : m.parameters()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double v0 = p->value.data()[i];
        p->value.data()[i] = v0 + h;
        Model up = m;
        const double lu = example_loss(up, e, program, w, noise).total;
        p->value.data()[i] = v0 - h;
        Model down = m;
        const double ld = example_loss(down, e, program, w, noise).total;
        p->value.data()[i] = v0;
        const double fd = (lu - ld) / (2 * h);
        num += (fd - p->grad.data()[i]) * (fd - p->grad.data()[i]);
        den += fd * fd;
      }
    }
    worst_composite = std::max(worst_composite, std::sqrt(num / den));
  }
  const double secs = seconds_since(t0);
  return {worst_circuit <= 1e-5 && worst_composite <= 1e-4 && secs <= 120.0,
          fmt("circuit max rel err %.3g over 100 instances (limit 1e-5); composite max rel err %.3g over 20 "
              "(limit 1e-4); %.1f s (limit 120 s)",
              worst_circuit, worst_composite, secs)};
}

Outcome normalization() {
  std::mt19937_64 rng(303);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int slots = 1 + trial % 4, classes = 2 + (trial / 4) % 4;
    const auto enc = (trial / 16) % 2 ? AdditionEncoding::AccumulatorChain : AdditionEncoding::DefaultZero;
    static std::map<std::tuple<int, int, int>, std::pair<GroundProgram, Circuit>> cache;
    auto key = std::make_tuple(slots, classes, static_cast<int>(enc));
    if (!cache.contains(key)) {
      auto g = ground_query(parse_program(addition_program(slots, classes, enc)), parse_atom(addition_query(enc)));
      Circuit c = compile_all(g);
      cache.emplace(key, std::make_pair(std::move(g), std::move(c)));
    }
    const auto probs = evaluate_all(cache.at(key).second, random_params(rng, slots, classes));
    worst = std::max(worst, std::abs(std::accumulate(probs.begin(), probs.end(), 0.0) - 1.0));
  }
  return {worst <= 1e-9, fmt("max |sum_y p(add(y)) - 1| = %.3g over 1000 tables (limit 1e-9)", worst)};
}

Outcome worked_numbers(const std::string& programs_dir) {
  const auto g = ground_query(parse_program(slurp(programs_dir + "/two_slot_add.pl")), parse_atom("add(Z)"));
  const auto params = FactParamTable::parse(slurp(programs_dir + "/two_slot.params"));
  const Circuit c = compile_all(g);
  const std::vector<double> expected{0.2552, 0.5096, 0.2352};
  const auto probs = evaluate_all(c, params);
  bool ok = probs.size() == 3;
  double circuit_err = 0, oracle_err = 0;
  for (std::size_t r = 0; ok && r < 3; ++r) {
    ok = ok && c.instances()[r].args.back().integer == static_cast<long>(r);
    circuit_err = std::max(circuit_err, std::abs(probs[r] - expected[r]));
    oracle_err = std::max(oracle_err, std::abs(enumerate_oracle(g, params, c.instances()[r]) - expected[r]));
  }
  const double h = 1e-5;
  FactParamTable up = params, down = params;
  up.set("object/1", 0.8 + h);
  down.set("object/1", 0.8 - h);
  const double fd = (evaluate(c, up, 2) - evaluate(c, down, 2)) / (2 * h);
  const double grad = backprop(c, params, 2).gradients.at("object/1")[0];
  const double fd_err = std::abs(fd - 0.294), grad_err = std::abs(grad - 0.294);
  ok = ok && circuit_err <= 1e-12 && oracle_err <= 1e-12 && fd_err <= 1e-9 && grad_err <= 1e-12;
  return {ok, fmt("triple (%.12f, %.12f, %.12f) err %.2g, oracle err %.2g; dp(add(2))/d object/1 = %.12f err %.2g, "
                  "finite difference err %.2g",
                  probs.size() > 0 ? probs[0] : NAN, probs.size() > 1 ? probs[1] : NAN,
                  probs.size() > 2 ? probs[2] : NAN, circuit_err, oracle_err, grad, grad_err, fd_err)};
}

// One trained model per (split, seed).
struct Run {
  TrainConfig config;
  Splits splits;
  TrainResult result;
  Metrics test;
  double seconds = 0;
};

Run train_run(SplitKind kind, std::uint64_t seed) {
  Run r;
  r.config.seed = seed;
  r.config.split.kind = kind;
  if (kind == SplitKind::Extrapolation) r.config.eval_slots = 5;
  const auto t0 = Clock::now();
  r.splits = make_config_splits(r.config);
  r.result = train(r.config, strip_hidden(r.splits.train), strip_hidden(r.splits.val));
  r.seconds = seconds_since(t0);
  const auto program =
      TaskProgram::load(r.config.program, r.config.test_capacity(), r.config.model.classes, r.config.encoding);
  r.test = eval_metrics(r.result.model, r.splits.test, program);
  std::cerr << to_string(kind) << " seed " << seed << ": best epoch " << r.result.best_epoch << ", test task "
            << r.test.task_acc << ", concept " << r.test.concept_acc << ", count MAE " << r.test.count_mae << ", "
            << r.seconds << " s\n";
  return r;
}

double majority_rate(const std::vector<Example>& data) {
  std::map<long, int> freq;
  for (const auto& e : data) ++freq[e.y];
  int best = 0;
  for (const auto& [y, n] : freq) best = std::max(best, n);
  return data.empty() ? 0.0 : best / static_cast<double>(data.size());
}

Outcome hygiene() {
  std::vector<std::string> failures;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // Distant-supervision purity: hidden labels never influence training.
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.n_train = 60;
  c.n_val = 30;
  c.n_test = 10;
  const auto s = make_config_splits(c);
  const auto a = train(c, s.train, s.val), b = train(c, strip_hidden(s.train), strip_hidden(s.val));
  bool same = a.best_epoch == b.best_epoch && a.history.size() == b.history.size();
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; same && i < pa.size(); ++i) same = pa[i]->value == pb[i]->value;
  for (std::size_t i = 0; same && i < a.history.size(); ++i)
    same = a.history[i].loss_task == b.history[i].loss_task && a.history[i].val_task_acc == b.history[i].val_task_acc;
  require(same, "purity");

  // Split disjointness and coverage across seeds.
  SceneSpec spec;
  const auto all = all_signatures(spec.classes, spec.min_objects, spec.max_objects);
  std::set<long> all_sums;
  for (const auto& sig : all) all_sums.insert(sum_label(sig));
  int split_checks = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto sp = make_splits(spec, {SplitKind::Compositional}, 200, 50, 200, seed);
    std::set<long> train_sums;
    bool ok = sp.train_signatures.size() + sp.test_signatures.size() == all.size();
    for (const auto& sig : sp.test_signatures) ok = ok && !sp.train_signatures.contains(sig);
    for (const auto& sig : sp.train_signatures) train_sums.insert(sum_label(sig));
    for (const auto& e : sp.train) ok = ok && sp.train_signatures.contains(*e.hidden);
    for (const auto& e : sp.val) ok = ok && sp.train_signatures.contains(*e.hidden);
    for (const auto& e : sp.test) ok = ok && sp.test_signatures.contains(*e.hidden);
    require(ok && train_sums == all_sums, "split disjointness, seed " + std::to_string(seed));
    ++split_checks;
  }

  // Generator label consistency: generated labels equal the program's labels.
  const auto program = TaskProgram::load("addition", 3, 5);
  int labels_checked = 0;
  for (const auto& sig : all) {
    require(program.label_of(sig) == sum_label(sig), "label of signature");
    ++labels_checked;
  }
  for (const auto& e : make_splits(spec, {}, 500, 1, 1, 77).train) {
    require(program.label_of(*e.hidden) == e.y, "label of generated scene");
    ++labels_checked;
  }

  // Slot-permutation equivariance, bit-exact.
  std::mt19937_64 rng(404);
  int perms = 0;
  for (int trial = 0; trial < 25; ++trial) {
    PerceptionConfig pc;
    pc.slots = 3 + trial % 3;
    Model m = Model::init(pc, rng);
    for (auto* p : m.parameters()) p->value = randn(rng, p->value.rows(), p->value.cols(), 0.7);
    const Mat x = randn(rng, pc.tokens, pc.token_dim), noise = randn(rng, pc.slots, pc.slot_dim);
    std::vector<int> perm(pc.slots);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat permuted(noise.rows(), noise.cols());
    for (int i = 0; i < pc.slots; ++i) permuted.row(perm[i]) = noise.row(i);
    Tape t;
    const auto fa = perceive(t, m, x, noise), fb = perceive(t, m, x, permuted);
    bool ok = true;
    for (int i = 0; i < pc.slots; ++i)
      ok = ok && fa.slots.value().row(i) == fb.slots.value().row(perm[i]) &&
           fa.betas.value().row(i) == fb.betas.value().row(perm[i]) &&
           fa.classes.value().row(i) == fb.classes.value().row(perm[i]);
    require(ok, "equivariance, trial " + std::to_string(trial));
    ++perms;
  }

  std::string detail = fmt("purity exact; %d split seeds; %d labels; %d slot permutations", split_checks,
                           labels_checked, perms);
  if (!failures.empty()) detail += "; failed: " + failures.front() + (failures.size() > 1 ? " and more" : "");
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string programs_dir = SLOTLOG_SOURCE_DIR "/programs";
  std::vector<int> only;
  int seeds = 3;
  app.add_option("--programs", programs_dir, "Directory with the shipped programs");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  app.add_option("--seeds", seeds, "Seeds per learning criterion")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };

  std::map<int, Outcome> results;
  auto report = [&](int k, const Outcome& o) {
    results[k] = o;
    std::cout << "criterion " << k << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };
  auto guarded = [&](int k, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    try {
      report(k, f());
    } catch (const std::exception& e) {
      report(k, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, [&] { return engine_exactness(programs_dir); });
  guarded(2, gradient_exactness);
  guarded(3, normalization);
  guarded(4, [&] { return worked_numbers(programs_dir); });

  std::vector<Run> iid;
  if (wanted(5) || wanted(6) || wanted(8)) {
    try {
      for (int s = 1; s <= seeds; ++s) iid.push_back(train_run(SplitKind::Iid, s));
    } catch (const std::exception& e) {
      std::cerr << "iid training failed: " << e.what() << '\n';
    }
  }
  guarded(5, [&] {
    if (iid.size() != static_cast<std::size_t>(seeds)) return Outcome{false, "training failed"};
    std::vector<double> task, concept_acc, secs;
    for (const auto& r : iid) {
      task.push_back(r.test.task_acc);
      concept_acc.push_back(r.test.concept_acc);
      secs.push_back(r.seconds);
    }
    const double worst = *std::max_element(secs.begin(), secs.end());
    return Outcome{median(task) >= 0.80 && median(concept_acc) >= 0.60 && worst <= 1200.0,
                   fmt("median task %.3f %s (limit 0.80), median concept %.3f %s (limit 0.60), max %.0f s per "
                       "seed (limit 1200 s)",
                       median(task), list(task).c_str(), median(concept_acc), list(concept_acc).c_str(), worst)};
  });
  guarded(6, [&] {
    if (iid.size() != static_cast<std::size_t>(seeds)) return Outcome{false, "in-distribution training failed"};
    std::vector<double> ood, id;
    for (int s = 1; s <= seeds; ++s) ood.push_back(train_run(SplitKind::Compositional, s).test.task_acc);
    for (const auto& r : iid) id.push_back(r.test.task_acc);
    const double gap = median(id) - median(ood);
    return Outcome{gap <= 0.15, fmt("median OOD task %.3f %s vs in-distribution %.3f, gap %.3f (limit 0.15)",
                                    median(ood), list(ood).c_str(), median(id), gap)};
  });
  guarded(7, [&] {
    std::vector<double> task, majority, margin, mae;
    for (int s = 1; s <= seeds; ++s) {
      const Run r = train_run(SplitKind::Extrapolation, s);
      task.push_back(r.test.task_acc);
      majority.push_back(majority_rate(r.splits.test));
      margin.push_back(task.back() - majority.back());
      mae.push_back(r.test.count_mae);
    }
    return Outcome{median(margin) > 0.0 && median(mae) <= 1.0,
                   fmt("median task %.3f %s vs majority %s, median margin %.3f (must be > 0); median count MAE "
                       "%.3f %s (limit 1.0)",
                       median(task), list(task).c_str(), list(majority).c_str(), median(margin), median(mae),
                       list(mae).c_str())};
  });
  guarded(8, [&] {
    if (iid.size() != static_cast<std::size_t>(seeds)) return Outcome{false, "training failed"};
    std::vector<double> bal;
    for (auto& r : iid) {
      const auto pair = TaskProgram::load("pair", r.config.model.slots, r.config.model.classes);
      const auto before = r.result.model.parameters();
      std::vector<Mat> frozen;
      for (const auto* p : before) frozen.push_back(p->value);
      bal.push_back(swap_program_eval(r.result.model, pair, r.splits.test).balanced_acc);
      for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i]->value != frozen[i]) return Outcome{false, "swap-eval modified the checkpoint"};
    }
    return Outcome{median(bal) >= 0.75,
                   fmt("median pair balanced accuracy %.3f %s (limit 0.75, chance 0.5)", median(bal),
                       list(bal).c_str())};
  });
  guarded(9, hygiene);

  const bool all = std::all_of(results.begin(), results.end(), [](const auto& kv) { return kv.second.pass; });
  return all ? 0 : 1;
}
