#pragma once

// Token-scale perception: per-token encoder, slot attention, objectness and
// class heads, and a mixture-of-Gaussians decoder.

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "slotlog/autodiff.hpp"
#include "slotlog/circuit.hpp"

namespace slotlog {

struct PerceptionConfig {
  int tokens = 12;       // T, positions known to the decoder
  int token_dim = 16;    // D
  int latent_dim = 32;   // d_z
  int slot_dim = 32;     // d_s
  int hidden = 64;
  int classes = 5;       // K
  int slots = 3;         // N at training time
  int iterations = 2;

  bool operator==(const PerceptionConfig&) const = default;
};

struct Model {
  PerceptionConfig config;

  Parameter enc_w1, enc_b1, enc_w2, enc_b2;
  Parameter slot_mu, slot_sigma, slot_wq, slot_wk, slot_wv;
  Parameter slot_w1, slot_b1, slot_w2, slot_b2;
  Parameter obj_w1, obj_b1, obj_w2, obj_b2;
  Parameter cls_w1, cls_b1, cls_w2, cls_b2;
  Parameter dec_wg, dec_pos, dec_b1, dec_wx, dec_bx, dec_ww, dec_bw;

  /// Glorot-uniform weights, zero biases, zero final objectness layer.
  static Model init(const PerceptionConfig& config, std::mt19937_64& rng);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();
};

void save_checkpoint(const Model& m, std::ostream& out);
void save_checkpoint(const Model& m, const std::string& path);
/// Throws std::runtime_error on a version, name or shape mismatch.
Model load_checkpoint(std::istream& in);
Model load_checkpoint(const std::string& path);

/// Standard normal slot noise drawn from `rng`.
Mat sample_slot_noise(int slots, int dim, std::mt19937_64& rng);
/// Fixed slot noise for evaluation; row i depends only on i, so raising the
/// capacity keeps the first rows.
Mat eval_slot_noise(int slots, int dim);

/// z = MLP(x) per token.
Tensor encode(Tape& t, Model& m, Tensor x);
/// mu + sigma * noise, one row per slot.
Tensor initial_slots(Tape& t, Model& m, const Mat& noise);
/// Per iteration: u = attention-weighted mean of values; s <- s + u + MLP(u).
Tensor slot_attention(Tape& t, Model& m, Tensor latent, Tensor init, int iterations);
/// N x 1 objectness probabilities.
Tensor objectness_head(Tape& t, Model& m, Tensor slots);
/// N x K class distributions from the gated slots.
Tensor class_head(Tape& t, Model& m, Tensor slots, Tensor betas);

struct MixtureDecode {
  Tensor means;   // (N*T) x D, slot-major
  Tensor logits;  // (N*T) x 1, slot-major
  int slots = 0;
  int tokens = 0;
};
MixtureDecode decode(Tape& t, Model& m, Tensor slots, Tensor betas, int tokens);

/// Sum over tokens of log sum_i w(i,t) N(x_t; mu(i,t), I), Gaussian constants
/// included.
Tensor reconstruction_loglik(Tensor x, const MixtureDecode& d);
/// -1/2 ||z||^2 with the constant dropped.
Tensor prior_logp(Tensor z);

struct SceneForward {
  Tensor x, latent, slots, betas, classes;
};
/// Encoder through both heads.
SceneForward perceive(Tape& t, Model& m, const Mat& tokens, const Mat& slot_noise);

/// Binds head outputs to `object/i` and `class/i`.
FactParamTable head_params(const Mat& betas, const Mat& classes);
/// Gradient table rows laid out like the head outputs.
void head_gradients(const GradientTable& g, int slots, int classes, Mat& d_betas, Mat& d_classes);

}  // namespace slotlog
