#include "slotlog/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

namespace slotlog {

namespace {

std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::runtime_error("dataset: bad number '" + s + "'");
  return v;
}

void expect(std::istream& in, const std::string& word) {
  std::string w;
  if (!(in >> w) || w != word) throw std::runtime_error("dataset: expected '" + word + "', found '" + w + "'");
}

Example make_scene(const SceneSpec& spec, const Mat& prototypes, const Signature& sig, std::mt19937_64& rng) {
  const int T = spec.tokens(), D = spec.token_dim;
  if (static_cast<int>(sig.size()) > spec.max_objects) throw std::invalid_argument("scene has too many objects");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double inst = spec.instance_scale / std::sqrt(static_cast<double>(D));
  Mat x(T, D);
  int row = 0;
  for (int c : sig) {
    Eigen::RowVectorXd offset(D);
    for (int j = 0; j < D; ++j) offset(j) = inst * normal(rng);
    for (int k = 0; k < spec.tokens_per_object; ++k, ++row)
      for (int j = 0; j < D; ++j) x(row, j) = prototypes(c, j) + offset(j) + spec.noise * normal(rng);
  }
  for (; row < T; ++row)
    for (int j = 0; j < D; ++j) x(row, j) = spec.background_noise * normal(rng);
  for (int i = T - 1; i > 0; --i) {
    const int j = std::uniform_int_distribution<int>(0, i)(rng);
    if (i != j) x.row(i).swap(x.row(j));
  }
  return Example{std::move(x), 0, sig};
}

}  // namespace

std::mt19937_64 seed_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

Mat SceneSpec::prototypes() const {
  auto rng = seed_stream(seed, "prototypes");
  std::normal_distribution<double> normal(0.0, prototype_scale / std::sqrt(static_cast<double>(token_dim)));
  Mat p(classes, token_dim);
  for (int i = 0; i < classes; ++i)
    for (int j = 0; j < token_dim; ++j) p(i, j) = normal(rng);
  return p;
}

SplitKind parse_split_kind(std::string_view name) {
  if (name == "iid") return SplitKind::Iid;
  if (name == "compositional") return SplitKind::Compositional;
  if (name == "interpolation") return SplitKind::Interpolation;
  if (name == "extrapolation") return SplitKind::Extrapolation;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::string to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::Iid: return "iid";
    case SplitKind::Compositional: return "compositional";
    case SplitKind::Interpolation: return "interpolation";
    case SplitKind::Extrapolation: return "extrapolation";
  }
  return "?";
}

std::vector<Signature> all_signatures(int classes, int min_objects, int max_objects) {
  std::vector<Signature> out;
  Signature cur;
  auto rec = [&](auto&& self, int from) -> void {
    if (static_cast<int>(cur.size()) >= min_objects) out.push_back(cur);
    if (static_cast<int>(cur.size()) == max_objects) return;
    for (int c = from; c < classes; ++c) {
      cur.push_back(c);
      self(self, c);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  std::sort(out.begin(), out.end(), [](const Signature& a, const Signature& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  return out;
}

long sum_label(const Signature& s) { return std::accumulate(s.begin(), s.end(), 0L); }

std::vector<Example> generate_dataset(const SceneSpec& spec, std::size_t n, const std::set<Signature>& allowed,
                                      std::mt19937_64& rng, long (*label)(const Signature&)) {
  if (allowed.empty()) throw SplitError("no signatures to draw from");
  std::vector<int> counts;
  for (const auto& s : allowed) counts.push_back(static_cast<int>(s.size()));
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  const Mat protos = spec.prototypes();
  std::vector<Example> out;
  out.reserve(n);
  std::uniform_int_distribution<int> pick_count(0, static_cast<int>(counts.size()) - 1);
  std::uniform_int_distribution<int> pick_class(0, spec.classes - 1);
  while (out.size() < n) {
    Signature sig(counts[pick_count(rng)]);
    for (auto& c : sig) c = pick_class(rng);
    std::sort(sig.begin(), sig.end());
    if (!allowed.contains(sig)) continue;
    // Object order within the scene is random before the token shuffle.
    Signature order = sig;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[std::uniform_int_distribution<int>(0, i)(rng)]);
    Example e = make_scene(spec, protos, order, rng);
    e.hidden = sig;
    e.y = label(sig);
    out.push_back(std::move(e));
  }
  return out;
}

Splits make_splits(const SceneSpec& spec, const SplitSpec& split, std::size_t n_train, std::size_t n_val,
                   std::size_t n_test, std::uint64_t seed) {
  Splits s;
  s.train_spec = s.test_spec = spec;
  const auto all = all_signatures(spec.classes, spec.min_objects, spec.max_objects);
  switch (split.kind) {
    case SplitKind::Iid:
      s.train_signatures = s.test_signatures = {all.begin(), all.end()};
      break;
    case SplitKind::Compositional: {
      if (split.train_fraction <= 0.0 || split.train_fraction >= 1.0)
        throw SplitError("compositional split needs a train fraction in (0, 1)");
      std::vector<Signature> combos;
      for (const auto& sig : all)
        if (sig.size() >= 2) combos.push_back(sig);
      const auto held = static_cast<std::size_t>(std::lround((1.0 - split.train_fraction) * all.size()));
      if (held == 0 || held > combos.size()) throw SplitError("compositional split: nothing to hold out");
      std::set<long> sums;
      for (const auto& sig : all) sums.insert(sum_label(sig));
      auto rng = seed_stream(seed, "split");
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        for (std::size_t i = combos.size() - 1; i > 0; --i)
          std::swap(combos[i], combos[std::uniform_int_distribution<std::size_t>(0, i)(rng)]);
        s.test_signatures = {combos.begin(), combos.begin() + held};
        s.train_signatures.clear();
        std::set<long> seen;
        for (const auto& sig : all)
          if (!s.test_signatures.contains(sig)) {
            s.train_signatures.insert(sig);
            seen.insert(sum_label(sig));
          }
        ok = seen == sums;
      }
      if (!ok) throw SplitError("compositional split: cannot keep every sum in training");
      break;
    }
    case SplitKind::Interpolation: {
      if (spec.min_objects > 2 || spec.max_objects < 3)
        throw SplitError("interpolation needs scenes with 2 objects and with more than 2");
      for (const auto& sig : all) (sig.size() == 2 ? s.test_signatures : s.train_signatures).insert(sig);
      break;
    }
    case SplitKind::Extrapolation: {
      if (split.extrapolation_objects <= spec.max_objects)
        throw SplitError("extrapolation count must exceed the training maximum");
      s.train_signatures = {all.begin(), all.end()};
      s.test_spec.max_objects = split.extrapolation_objects;
      for (const auto& sig : all_signatures(spec.classes, split.extrapolation_objects, split.extrapolation_objects))
        s.test_signatures.insert(sig);
      break;
    }
  }
  auto train_rng = seed_stream(seed, "data/train");
  auto val_rng = seed_stream(seed, "data/val");
  auto test_rng = seed_stream(seed, "data/test");
  s.train = generate_dataset(s.train_spec, n_train, s.train_signatures, train_rng);
  s.val = generate_dataset(s.train_spec, n_val, s.train_signatures, val_rng);
  s.test = generate_dataset(s.test_spec, n_test, s.test_signatures, test_rng);
  return s;
}

void write_dataset(const std::vector<Example>& data, std::ostream& records, std::ostream& hidden) {
  const Eigen::Index T = data.empty() ? 0 : data[0].x.rows(), D = data.empty() ? 0 : data[0].x.cols();
  records << "slotlog-dataset 1\ncount " << data.size() << " tokens " << T << " dim " << D << '\n';
  hidden << "slotlog-hidden 1\ncount " << data.size() << '\n';
  for (const auto& e : data) {
    if (e.x.rows() != T || e.x.cols() != D) throw std::invalid_argument("dataset: examples differ in shape");
    records << "example " << e.y << '\n';
    for (Eigen::Index i = 0; i < T; ++i) {
      for (Eigen::Index j = 0; j < D; ++j) records << (j ? " " : "") << format_double(e.x(i, j));
      records << '\n';
    }
    if (e.hidden) {
      hidden << e.hidden->size();
      for (int c : *e.hidden) hidden << ' ' << c;
      hidden << '\n';
    } else {
      hidden << "-\n";
    }
  }
}

std::vector<Example> read_dataset(std::istream& records, std::istream* hidden) {
  expect(records, "slotlog-dataset");
  expect(records, "1");
  std::size_t n = 0;
  Eigen::Index T = 0, D = 0;
  expect(records, "count");
  records >> n;
  expect(records, "tokens");
  records >> T;
  expect(records, "dim");
  records >> D;
  if (!records) throw std::runtime_error("dataset: bad header");
  std::vector<Example> out(n);
  std::string word;
  for (auto& e : out) {
    expect(records, "example");
    if (!(records >> e.y)) throw std::runtime_error("dataset: bad label");
    e.x.resize(T, D);
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = 0; j < D; ++j) {
        if (!(records >> word)) throw std::runtime_error("dataset: truncated");
        e.x(i, j) = parse_double(word);
      }
  }
  if (hidden) {
    expect(*hidden, "slotlog-hidden");
    expect(*hidden, "1");
    expect(*hidden, "count");
    std::size_t m = 0;
    if (!(*hidden >> m) || m != n) throw std::runtime_error("hidden labels: count does not match the dataset");
    for (auto& e : out) {
      if (!(*hidden >> word)) throw std::runtime_error("hidden labels: truncated");
      if (word == "-") continue;
      Signature sig(std::stoul(word));
      for (auto& c : sig)
        if (!(*hidden >> c)) throw std::runtime_error("hidden labels: truncated");
      e.hidden = std::move(sig);
    }
  }
  return out;
}

void save_dataset(const std::vector<Example>& data, const std::string& path) {
  std::ofstream records(path), hidden(path + ".hidden");
  if (!records || !hidden) throw std::runtime_error("cannot write " + path);
  write_dataset(data, records, hidden);
}

std::vector<Example> load_dataset(const std::string& path, bool with_hidden) {
  std::ifstream records(path);
  if (!records) throw std::runtime_error("cannot read " + path);
  std::ifstream hidden;
  if (with_hidden) hidden.open(path + ".hidden");
  return read_dataset(records, with_hidden && hidden ? &hidden : nullptr);
}

std::vector<Example> strip_hidden(std::vector<Example> data) {
  for (auto& e : data) e.hidden.reset();
  return data;
}

}  // namespace slotlog
