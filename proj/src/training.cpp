#include "slotlog/training.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace slotlog {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void check_interface(const Program& p, int slots, int classes) {
  std::vector<std::string> keys = p.externals;
  for (const auto& f : p.facts)
    if (const auto* key = std::get_if<std::string>(&f.param)) keys.push_back(*key);
  for (const auto& key : keys) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '/');) parts.push_back(part);
    auto index = [&](std::size_t i, int bound) {
      if (i >= parts.size() || parts[i].empty() || !std::all_of(parts[i].begin(), parts[i].end(), ::isdigit))
        return false;
      return std::stol(parts[i]) < bound;
    };
    const bool ok = (parts.size() == 2 && parts[0] == "object" && index(1, slots)) ||
                    (parts.size() == 3 && parts[0] == "class" && index(1, slots) && index(2, classes)) ||
                    (parts.size() == 2 && parts[0] == "class" && index(1, slots));
    if (!ok)
      throw InterfaceError("parameter key '" + key + "' is not provided by " + std::to_string(slots) + " slots with " +
                           std::to_string(classes) + " classes");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rejects keys outside `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw std::invalid_argument("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string encoding_name(AdditionEncoding e) {
  return e == AdditionEncoding::DefaultZero ? "default-zero" : "accumulator-chain";
}

AdditionEncoding parse_encoding(const std::string& s) {
  if (s == "default-zero") return AdditionEncoding::DefaultZero;
  if (s == "accumulator-chain") return AdditionEncoding::AccumulatorChain;
  throw std::invalid_argument("unknown encoding '" + s + "'");
}

}  // namespace

TaskProgram TaskProgram::from_source(const std::string& text, int slots, int classes) {
  Program p = parse_program(text);
  ensure_valid(p);
  check_interface(p, slots, classes);
  if (p.queries.empty()) throw InterfaceError("program declares no query");
  TaskProgram t;
  t.source_ = text;
  t.slots_ = slots;
  t.classes_ = classes;
  t.ground_ = ground_query(p, p.queries.front());
  t.circuit_ = std::make_shared<const Circuit>(compile_all(t.ground_));
  const auto instances = t.circuit_->instances();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& args = instances[i].args;
    if (args.empty() || !args.back().is_int())
      throw InterfaceError("query instance " + to_string(instances[i]) + " has no integer label");
    t.root_[args.back().integer] = i;
  }
  return t;
}

TaskProgram TaskProgram::load(const std::string& name, int slots, int classes, AdditionEncoding encoding) {
  if (name == "addition") return from_source(addition_program(slots, classes, encoding), slots, classes);
  if (name == "pair") return from_source(pair_program(slots, classes), slots, classes);
  if (name == "count") return from_source(count_program(slots, classes), slots, classes);
  return from_source(read_file(name), slots, classes);
}

std::vector<long> TaskProgram::labels() const {
  std::vector<long> out;
  for (const auto& [y, r] : root_) out.push_back(y);
  return out;
}

std::size_t TaskProgram::root(long y) const {
  auto it = root_.find(y);
  if (it == root_.end()) throw std::out_of_range("label " + std::to_string(y) + " is outside the query family");
  return it->second;
}

std::vector<std::pair<long, double>> TaskProgram::distribution(const FactParamTable& params) const {
  const auto probs = evaluate_all(*circuit_, params);
  std::vector<std::pair<long, double>> out;
  for (const auto& [y, r] : root_) out.emplace_back(y, probs[r]);
  return out;
}

long TaskProgram::predict(const FactParamTable& params) const {
  long best = 0;
  double best_p = -1.0;
  for (const auto& [y, p] : distribution(params))
    if (p > best_p) {
      best = y;
      best_p = p;
    }
  return best;
}

long TaskProgram::label_of(const Signature& objects) const {
  if (static_cast<int>(objects.size()) > slots_)
    throw InterfaceError(std::to_string(objects.size()) + " objects do not fit in " + std::to_string(slots_) + " slots");
  Mat betas = Mat::Zero(slots_, 1), classes = Mat::Zero(slots_, classes_);
  for (int i = 0; i < slots_; ++i) {
    const bool present = i < static_cast<int>(objects.size());
    betas(i, 0) = present ? 1.0 : 0.0;
    classes(i, present ? objects[i] : 0) = 1.0;
  }
  long label = 0;
  int certain = 0;
  for (const auto& [y, p] : distribution(head_params(betas, classes))) {
    if (p == 1.0) {
      label = y;
      ++certain;
    } else if (p != 0.0) {
      certain = -1;
      break;
    }
  }
  if (certain != 1) throw InterfaceError("the program does not determine a unique label for these objects");
  return label;
}

TaskTerm task_term(const TaskProgram& program, const Mat& betas, const Mat& classes, long y) {
  const std::size_t root = program.root(y);
  const int n = static_cast<int>(betas.rows()), k = static_cast<int>(classes.cols());
  if (n != program.slots() || k != program.classes()) throw InterfaceError("heads do not match the task program");
  TaskTerm out;
  const auto bp = backprop(program.circuit(), head_params(betas, classes), root);
  out.p = bp.probability;
  out.loss = -std::log(std::max(bp.probability, kProbabilityFloor));
  out.d_betas = Mat::Zero(n, 1);
  out.d_classes = Mat::Zero(n, k);
  if (bp.probability > kProbabilityFloor) {
    head_gradients(bp.gradients, n, k, out.d_betas, out.d_classes);
    out.d_betas /= -bp.probability;
    out.d_classes /= -bp.probability;
  }
  return out;
}

LossTerms example_loss(Model& m, const Example& e, const TaskProgram& program, const LossWeights& w,
                       const Mat& slot_noise) {
  Tape t;
  auto f = perceive(t, m, e.x, slot_noise);
  const TaskTerm task = task_term(program, f.betas.value(), f.classes.value(), e.y);
  t.inject_gradient(f.betas, w.task * task.d_betas + Mat::Constant(task.d_betas.rows(), 1, w.objects));
  t.inject_gradient(f.classes, w.task * task.d_classes);
  auto ll = reconstruction_loglik(f.x, decode(t, m, f.slots, f.betas, static_cast<int>(e.x.rows())));
  auto prior = prior_logp(f.latent);

  LossTerms terms;
  terms.p = task.p;
  terms.task = task.loss;
  terms.rec = -ll.item();
  terms.prior = -prior.item();
  terms.objects = f.betas.value().sum();
  terms.total = w.task * terms.task + w.rec * terms.rec + w.prior * terms.prior + w.objects * terms.objects;
  t.backward(scale(add(scale(ll, w.rec), scale(prior, w.prior)), -1.0));
  return terms;
}

Heads predict_heads(Model& m, const Mat& x, int capacity) {
  Tape t;
  auto f = perceive(t, m, x, eval_slot_noise(capacity, m.config.slot_dim));
  return {f.betas.value(), f.classes.value()};
}

bool concept_match(const Heads& h, const Signature& truth) {
  const int n = static_cast<int>(h.betas.rows());
  if (static_cast<int>(truth.size()) > n) return false;
  std::vector<int> padded(n, -1);
  std::copy(truth.begin(), truth.end(), padded.begin());
  std::vector<int> pred(n);
  for (int i = 0; i < n; ++i) {
    Eigen::Index c = 0;
    h.classes.row(i).maxCoeff(&c);
    pred[i] = h.betas(i, 0) > 0.5 ? static_cast<int>(c) : -1;
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) ok = pred[i] == padded[perm[i]];
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

Metrics metrics_from_heads(const std::vector<Heads>& heads, const std::vector<Example>& data,
                           const TaskProgram& program) {
  if (heads.size() != data.size()) throw std::invalid_argument("one set of heads per example is required");
  Metrics out;
  out.n = data.size();
  if (data.empty()) return out;
  std::map<long, std::pair<std::size_t, std::size_t>> per_label;  // hits, total
  std::size_t task_hits = 0, concept_hits = 0;
  double count_err = 0;
  bool have_hidden = true;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = data[i];
    const Heads& h = heads[i];
    const bool hit = program.predict(head_params(h.betas, h.classes)) == e.y;
    task_hits += hit;
    auto& [hits, total] = per_label[e.y];
    hits += hit;
    ++total;
    if (!e.hidden) {
      have_hidden = false;
      continue;
    }
    concept_hits += concept_match(h, *e.hidden);
    const long predicted = (h.betas.array() > 0.5).count();
    count_err += std::abs(predicted - static_cast<long>(e.hidden->size()));
  }
  const double n = static_cast<double>(data.size());
  out.task_acc = task_hits / n;
  double recall = 0;
  for (const auto& [y, ht] : per_label) recall += static_cast<double>(ht.first) / ht.second;
  out.balanced_acc = recall / per_label.size();
  if (have_hidden) {
    out.concept_acc = concept_hits / n;
    out.count_mae = count_err / n;
  }
  return out;
}

Metrics eval_metrics(Model& m, const std::vector<Example>& data, const TaskProgram& program) {
  std::vector<Heads> heads;
  heads.reserve(data.size());
  for (const auto& e : data) heads.push_back(predict_heads(m, e.x, program.slots()));
  return metrics_from_heads(heads, data, program);
}

double task_accuracy(Model& m, const std::vector<Example>& data, const TaskProgram& program) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& e : data) {
    const Heads h = predict_heads(m, e.x, program.slots());
    hits += program.predict(head_params(h.betas, h.classes)) == e.y;
  }
  return static_cast<double>(hits) / data.size();
}

std::vector<Example> relabel(const std::vector<Example>& data, const TaskProgram& program) {
  std::vector<Example> out = data;
  for (auto& e : out) {
    if (!e.hidden) throw std::invalid_argument("relabeling needs hidden labels");
    e.y = program.label_of(*e.hidden);
  }
  return out;
}

Metrics swap_program_eval(Model& m, const TaskProgram& program, const std::vector<Example>& data) {
  if (program.classes() != m.config.classes)
    throw InterfaceError("program expects " + std::to_string(program.classes()) + " classes, model has " +
                         std::to_string(m.config.classes));
  return eval_metrics(m, relabel(data, program), program);
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0, "learning_rate must be > 0");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(weights.task >= 0 && weights.rec >= 0 && weights.prior >= 0 && weights.objects >= 0, "loss weights must be >= 0");
  require(n_train >= 1 && n_val >= 1 && n_test >= 1, "dataset sizes must be >= 1");
  require(model.iterations >= 1, "model.iterations must be >= 1");
  require(model.slots >= 1 && model.classes >= 1, "model.slots and model.classes must be >= 1");
  require(model.tokens == scene.tokens(), "model.tokens must equal tokens_per_object * max_objects + background_tokens");
  require(model.token_dim == scene.token_dim, "model.token_dim must equal scene.token_dim");
  require(model.classes == scene.classes, "model.classes must equal scene.classes");
  require(scene.min_objects >= 0 && scene.min_objects <= scene.max_objects, "scene object range is empty");
  require(model.slots >= scene.max_objects, "model.slots must cover scene.max_objects");
  if (split.kind == SplitKind::Extrapolation)
    require(test_capacity() >= split.extrapolation_objects, "eval_slots must cover extrapolation_objects");
  require(slot_pool == 0 || slot_pool >= model.slots, "slot_pool must be 0 or at least slots");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["lambda_task"] = weights.task;
  j["lambda_rec"] = weights.rec;
  j["lambda_prior"] = weights.prior;
  j["lambda_objects"] = weights.objects;
  j["program"] = program;
  j["encoding"] = encoding_name(encoding);
  j["split"] = slotlog::to_string(split.kind);
  j["train_fraction"] = split.train_fraction;
  j["extrapolation_objects"] = split.extrapolation_objects;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["n_test"] = n_test;
  j["eval_slots"] = eval_slots;
  j["slot_pool"] = slot_pool;
  j["model"] = {{"tokens", model.tokens},   {"token_dim", model.token_dim}, {"latent_dim", model.latent_dim},
                {"slot_dim", model.slot_dim}, {"hidden", model.hidden},     {"classes", model.classes},
                {"slots", model.slots},       {"iterations", model.iterations}};
  j["scene"] = {{"min_objects", scene.min_objects},
                {"max_objects", scene.max_objects},
                {"tokens_per_object", scene.tokens_per_object},
                {"background_tokens", scene.background_tokens},
                {"prototype_scale", scene.prototype_scale},
                {"instance_scale", scene.instance_scale},
                {"noise", scene.noise},
                {"background_noise", scene.background_noise}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  check_keys(j,
             {"seed", "epochs", "batch_size", "learning_rate", "weight_decay", "lambda_task", "lambda_rec",
              "lambda_prior", "lambda_objects", "program", "encoding", "split", "train_fraction", "extrapolation_objects", "n_train",
              "n_val", "n_test", "eval_slots", "slot_pool", "model", "scene"},
             "");
  TrainConfig c;
  read(j, "seed", c.seed);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "lambda_task", c.weights.task);
  read(j, "lambda_rec", c.weights.rec);
  read(j, "lambda_prior", c.weights.prior);
  read(j, "lambda_objects", c.weights.objects);
  read(j, "program", c.program);
  if (j.contains("encoding")) c.encoding = parse_encoding(j.at("encoding").get<std::string>());
  if (j.contains("split")) c.split.kind = parse_split_kind(j.at("split").get<std::string>());
  read(j, "train_fraction", c.split.train_fraction);
  read(j, "extrapolation_objects", c.split.extrapolation_objects);
  read(j, "n_train", c.n_train);
  read(j, "n_val", c.n_val);
  read(j, "n_test", c.n_test);
  read(j, "eval_slots", c.eval_slots);
  read(j, "slot_pool", c.slot_pool);
  if (j.contains("model")) {
    const auto& mj = j.at("model");
    check_keys(mj, {"tokens", "token_dim", "latent_dim", "slot_dim", "hidden", "classes", "slots", "iterations"},
               "model.");
    read(mj, "tokens", c.model.tokens);
    read(mj, "token_dim", c.model.token_dim);
    read(mj, "latent_dim", c.model.latent_dim);
    read(mj, "slot_dim", c.model.slot_dim);
    read(mj, "hidden", c.model.hidden);
    read(mj, "classes", c.model.classes);
    read(mj, "slots", c.model.slots);
    read(mj, "iterations", c.model.iterations);
  }
  if (j.contains("scene")) {
    const auto& sj = j.at("scene");
    check_keys(sj,
               {"min_objects", "max_objects", "tokens_per_object", "background_tokens", "prototype_scale",
                "instance_scale", "noise", "background_noise"},
               "scene.");
    read(sj, "min_objects", c.scene.min_objects);
    read(sj, "max_objects", c.scene.max_objects);
    read(sj, "tokens_per_object", c.scene.tokens_per_object);
    read(sj, "background_tokens", c.scene.background_tokens);
    read(sj, "prototype_scale", c.scene.prototype_scale);
    read(sj, "instance_scale", c.scene.instance_scale);
    read(sj, "noise", c.scene.noise);
    read(sj, "background_noise", c.scene.background_noise);
  }
  c.scene.classes = c.model.classes;
  c.scene.token_dim = c.model.token_dim;
  return c;
}

Splits make_config_splits(const TrainConfig& c) {
  SceneSpec spec = c.scene;
  spec.seed = c.seed;
  return make_splits(spec, c.split, c.n_train, c.n_val, c.n_test, c.seed);
}

namespace {

// Distinct pool rows in random order.
Mat pool_slot_noise(const Mat& pool, int slots, std::mt19937_64& rng) {
  std::vector<int> idx(pool.rows());
  std::iota(idx.begin(), idx.end(), 0);
  Mat e(slots, pool.cols());
  for (int i = 0; i < slots; ++i) {
    std::swap(idx[i], idx[std::uniform_int_distribution<int>(i, static_cast<int>(idx.size()) - 1)(rng)]);
    e.row(i) = pool.row(idx[i]);
  }
  return e;
}

}  // namespace

TrainResult train(const TrainConfig& c, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const EpochObserver& observer) {
  c.validate();
  auto init_rng = seed_stream(c.seed, "init");
  auto shuffle_rng = seed_stream(c.seed, "shuffle");
  auto noise_rng = seed_stream(c.seed, "noise");
  Model m = Model::init(c.model, init_rng);
  const TaskProgram program = TaskProgram::load(c.program, c.model.slots, c.model.classes, c.encoding);
  AdamW opt({.lr = c.learning_rate, .weight_decay = c.weight_decay});
  auto params = m.parameters();
  const Mat pool = eval_slot_noise(std::max(c.slot_pool, 1), c.model.slot_dim);

  TrainResult result{m, 0, {}};
  double best_acc = task_accuracy(m, val_set, program);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(shuffle_rng)]);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(c.batch_size));
      m.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Mat noise = c.slot_pool > 0 ? pool_slot_noise(pool, c.model.slots, noise_rng)
                                          : sample_slot_noise(c.model.slots, c.model.slot_dim, noise_rng);
        const LossTerms terms = example_loss(m, train_set[order[b]], program, c.weights, noise);
        if (!std::isfinite(terms.total))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                                std::to_string(order[b]));
        rec.loss_task += terms.task;
        rec.loss_rec += terms.rec;
        rec.loss_prior += terms.prior;
        rec.loss_objects += terms.objects;
      }
      opt.step(params, 1.0 / static_cast<double>(end - start));
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, train_set.size()));
    rec.loss_task /= n;
    rec.loss_rec /= n;
    rec.loss_prior /= n;
    rec.loss_objects /= n;
    rec.val_task_acc = task_accuracy(m, val_set, program);
    if (rec.val_task_acc > best_acc) {
      best_acc = rec.val_task_acc;
      result.model = m;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (observer) observer(rec, m);
  }
  return result;
}

}  // namespace slotlog
