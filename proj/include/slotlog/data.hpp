#pragma once

// Synthetic token scenes for distant supervision: each object is a small
// cluster of tokens around its class prototype, and the label is a function of
// the object classes only.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slotlog/autodiff.hpp"

namespace slotlog {

/// Named, splittable random streams: stream(seed, "data/train") is
/// independent of stream(seed, "init") and stable across runs.
std::mt19937_64 seed_stream(std::uint64_t seed, std::string_view name);

struct SceneSpec {
  std::uint64_t seed = 0;  // prototypes are drawn from this seed
  int min_objects = 0;
  int max_objects = 3;
  int classes = 5;
  int tokens_per_object = 3;
  int background_tokens = 3;
  int token_dim = 16;
  double prototype_scale = 4.0;  // expected prototype norm
  double instance_scale = 2.5;   // expected norm of the per-object offset
  double noise = 0.3;            // per-token standard deviation
  double background_noise = 0.3;

  int tokens() const { return tokens_per_object * max_objects + background_tokens; }
  /// K x D class prototypes.
  Mat prototypes() const;
};

/// Sorted class values of the objects in a scene.
using Signature = std::vector<int>;

struct Example {
  Mat x;  // T x D
  long y = 0;
  std::optional<Signature> hidden;  // true object classes; evaluation only
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SplitKind { Iid, Compositional, Interpolation, Extrapolation };
SplitKind parse_split_kind(std::string_view name);
std::string to_string(SplitKind kind);

struct SplitSpec {
  SplitKind kind = SplitKind::Iid;
  double train_fraction = 0.75;  // compositional only
  int extrapolation_objects = 4;
};

/// Every multiset of classes with size in [min_objects, max_objects].
std::vector<Signature> all_signatures(int classes, int min_objects, int max_objects);

struct Splits {
  SceneSpec train_spec, test_spec;  // test_spec differs for extrapolation
  std::set<Signature> train_signatures, test_signatures;
  std::vector<Example> train, val, test;
};

/// Label of a signature under the addition task.
long sum_label(const Signature& s);

/// n scenes whose signatures are drawn from `allowed`: object count uniform
/// over the counts present, then classes uniform, rejecting disallowed
/// multisets. Labels come from `label`.
std::vector<Example> generate_dataset(const SceneSpec& spec, std::size_t n, const std::set<Signature>& allowed,
                                      std::mt19937_64& rng, long (*label)(const Signature&) = sum_label);

/// Train, validation and test sets for a split. Validation follows the
/// training distribution; test follows the held-out one. Throws SplitError if
/// the split cannot be built.
Splits make_splits(const SceneSpec& spec, const SplitSpec& split, std::size_t n_train, std::size_t n_val,
                   std::size_t n_test, std::uint64_t seed);

/// Records with tokens and labels; hidden labels go to a separate sidecar.
void write_dataset(const std::vector<Example>& data, std::ostream& records, std::ostream& hidden);
std::vector<Example> read_dataset(std::istream& records, std::istream* hidden);
void save_dataset(const std::vector<Example>& data, const std::string& path);
/// Loads `path` and, if present, `path.hidden`.
std::vector<Example> load_dataset(const std::string& path, bool with_hidden = true);

std::vector<Example> strip_hidden(std::vector<Example> data);

}  // namespace slotlog
