#include "slotlog/perception.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace slotlog {

namespace {

constexpr const char* kCheckpointMagic = "slotlog-checkpoint";
constexpr int kCheckpointVersion = 1;

Parameter glorot(const std::string& name, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Mat w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return Parameter(name, std::move(w));
}

Parameter zeros(const std::string& name, int rows, int cols) { return Parameter(name, Mat::Zero(rows, cols)); }

Tensor linear(Tape& t, Tensor x, Parameter& w, Parameter& b) { return add_row(matmul(x, t.param(w)), t.param(b)); }

// 0/1 matrix whose row i*T+t selects row i (repeat) or row t (tile).
Mat selector(int slots, int tokens, bool repeat) {
  Mat s = Mat::Zero(static_cast<Eigen::Index>(slots) * tokens, repeat ? slots : tokens);
  for (int i = 0; i < slots; ++i)
    for (int k = 0; k < tokens; ++k) s(i * tokens + k, repeat ? i : k) = 1.0;
  return s;
}

std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

Model Model::init(const PerceptionConfig& c, std::mt19937_64& rng) {
  Model m;
  m.config = c;
  const int D = c.token_dim, Z = c.latent_dim, S = c.slot_dim, H = c.hidden, K = c.classes, T = c.tokens;
  m.enc_w1 = glorot("enc.w1", D, H, rng);
  m.enc_b1 = zeros("enc.b1", 1, H);
  m.enc_w2 = glorot("enc.w2", H, Z, rng);
  m.enc_b2 = zeros("enc.b2", 1, Z);
  m.slot_mu = glorot("slot.mu", 1, S, rng);
  m.slot_sigma = Parameter("slot.sigma", Mat::Constant(1, S, 0.5));
  m.slot_wq = glorot("slot.wq", S, S, rng);
  m.slot_wk = glorot("slot.wk", Z, S, rng);
  m.slot_wv = glorot("slot.wv", Z, S, rng);
  m.slot_w1 = glorot("slot.w1", S, H, rng);
  m.slot_b1 = zeros("slot.b1", 1, H);
  m.slot_w2 = glorot("slot.w2", H, S, rng);
  m.slot_b2 = zeros("slot.b2", 1, S);
  m.obj_w1 = glorot("obj.w1", S, H, rng);
  m.obj_b1 = zeros("obj.b1", 1, H);
  m.obj_w2 = zeros("obj.w2", H, 1);
  m.obj_b2 = zeros("obj.b2", 1, 1);
  m.cls_w1 = glorot("cls.w1", S, H, rng);
  m.cls_b1 = zeros("cls.b1", 1, H);
  m.cls_w2 = glorot("cls.w2", H, K, rng);
  m.cls_b2 = zeros("cls.b2", 1, K);
  m.dec_wg = glorot("dec.wg", S, H, rng);
  m.dec_pos = glorot("dec.pos", T, H, rng);
  m.dec_b1 = zeros("dec.b1", 1, H);
  m.dec_wx = glorot("dec.wx", H, D, rng);
  m.dec_bx = zeros("dec.bx", 1, D);
  m.dec_ww = glorot("dec.ww", H, 1, rng);
  m.dec_bw = zeros("dec.bw", 1, 1);
  return m;
}

std::vector<Parameter*> Model::parameters() {
  return {&enc_w1,  &enc_b1,  &enc_w2,  &enc_b2,  &slot_mu, &slot_sigma, &slot_wq, &slot_wk, &slot_wv,
          &slot_w1, &slot_b1, &slot_w2, &slot_b2, &obj_w1,  &obj_b1,     &obj_w2,  &obj_b2,  &cls_w1,
          &cls_b1,  &cls_w2,  &cls_b2,  &dec_wg,  &dec_pos, &dec_b1,     &dec_wx,  &dec_bx,  &dec_ww,
          &dec_bw};
}

std::vector<const Parameter*> Model::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void save_checkpoint(const Model& m, std::ostream& out) {
  const auto& c = m.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config tokens " << c.tokens << " token_dim " << c.token_dim << " latent_dim " << c.latent_dim
      << " slot_dim " << c.slot_dim << " hidden " << c.hidden << " classes " << c.classes << " slots " << c.slots
      << " iterations " << c.iterations << '\n';
  const auto ps = m.parameters();
  out << "tensors " << ps.size() << '\n';
  for (const auto* p : ps) {
    out << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        out << (i || j ? " " : "") << format_double(p->value(i, j));
    out << '\n';
  }
}

void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  save_checkpoint(m, out);
}

Model load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic)
    throw std::runtime_error("not a checkpoint file");
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  std::string word;
  in >> word;
  if (word != "config") throw std::runtime_error("checkpoint: missing config line");
  PerceptionConfig c;
  std::pair<const char*, int*> fields[] = {{"tokens", &c.tokens},         {"token_dim", &c.token_dim},
                                           {"latent_dim", &c.latent_dim}, {"slot_dim", &c.slot_dim},
                                           {"hidden", &c.hidden},         {"classes", &c.classes},
                                           {"slots", &c.slots},           {"iterations", &c.iterations}};
  for (auto& [name, field] : fields) {
    if (!(in >> word >> *field) || word != name) throw std::runtime_error(std::string("checkpoint: expected ") + name);
  }
  std::mt19937_64 unused(0);
  Model m = Model::init(c, unused);
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "tensors") throw std::runtime_error("checkpoint: missing tensor count");
  auto ps = m.parameters();
  if (count != ps.size()) throw std::runtime_error("checkpoint: expected " + std::to_string(ps.size()) + " tensors");
  for (auto* p : ps) {
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> word >> rows >> cols)) throw std::runtime_error("checkpoint: truncated");
    if (word != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw std::runtime_error("checkpoint: tensor " + word + " does not match " + p->name);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        in >> word;
        double v = 0;
        auto r = std::from_chars(word.data(), word.data() + word.size(), v);
        if (r.ec != std::errc() || r.ptr != word.data() + word.size())
          throw std::runtime_error("checkpoint: bad value '" + word + "' in " + p->name);
        p->value(i, j) = v;
      }
  }
  return m;
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return load_checkpoint(in);
}

Mat sample_slot_noise(int slots, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat e(slots, dim);
  for (int i = 0; i < slots; ++i)
    for (int j = 0; j < dim; ++j) e(i, j) = n(rng);
  return e;
}

Mat eval_slot_noise(int slots, int dim) {
  Mat e(slots, dim);
  for (int i = 0; i < slots; ++i) {
    std::seed_seq seq{0x510751u, static_cast<unsigned>(i)};
    std::mt19937_64 rng(seq);
    e.row(i) = sample_slot_noise(1, dim, rng);
  }
  return e;
}

Tensor encode(Tape& t, Model& m, Tensor x) {
  if (x.cols() != m.config.token_dim) throw ShapeError("encode: token width " + std::to_string(x.cols()));
  return linear(t, relu(linear(t, x, m.enc_w1, m.enc_b1)), m.enc_w2, m.enc_b2);
}

Tensor initial_slots(Tape& t, Model& m, const Mat& noise) {
  auto sigma = matmul(t.constant(Mat::Ones(noise.rows(), 1)), t.param(m.slot_sigma));
  return add_row(mul(t.constant(noise), sigma), t.param(m.slot_mu));
}

Tensor slot_attention(Tape& t, Model& m, Tensor latent, Tensor init, int iterations) {
  if (iterations < 1) throw std::invalid_argument("slot_attention: iterations must be >= 1");
  const double temperature = 1.0 / std::sqrt(static_cast<double>(m.config.slot_dim));
  auto keys = matmul(latent, t.param(m.slot_wk));
  auto values = matmul(latent, t.param(m.slot_wv));
  auto slots = init;
  for (int it = 0; it < iterations; ++it) {
    auto queries = matmul(slots, t.param(m.slot_wq));
    // Tokens compete for slots: normalize across slots for every token.
    auto attn = softmax(scale(matmul(keys, transpose(queries)), temperature), 1);
    auto per_slot = add(transpose(attn), t.constant(Mat::Constant(attn.cols(), attn.rows(), 1e-8)));
    auto weights = mul_col(per_slot, reciprocal(sum(per_slot, 1)));
    auto updates = matmul(weights, values);
    slots = add(add(slots, updates), linear(t, relu(linear(t, updates, m.slot_w1, m.slot_b1)), m.slot_w2, m.slot_b2));
  }
  return slots;
}

Tensor objectness_head(Tape& t, Model& m, Tensor slots) {
  // Squashed into [eps, 1 - eps] so saturation never reaches 0 or 1; powers of
  // two keep sigmoid(0) at exactly 0.5.
  constexpr double eps = 0x1p-30;
  auto s = sigmoid(linear(t, relu(linear(t, slots, m.obj_w1, m.obj_b1)), m.obj_w2, m.obj_b2));
  return add(scale(s, 1.0 - 2.0 * eps), t.constant(Mat::Constant(s.rows(), 1, eps)));
}

Tensor class_head(Tape& t, Model& m, Tensor slots, Tensor betas) {
  auto gated = mul_col(slots, betas);
  return softmax(linear(t, relu(linear(t, gated, m.cls_w1, m.cls_b1)), m.cls_w2, m.cls_b2), 1);
}

MixtureDecode decode(Tape& t, Model& m, Tensor slots, Tensor betas, int tokens) {
  if (tokens > m.config.tokens)
    throw ShapeError("decode: " + std::to_string(tokens) + " tokens but only " + std::to_string(m.config.tokens) +
                     " positions");
  const int n = static_cast<int>(slots.rows());
  auto gated = mul_col(slots, betas);
  auto per_slot = matmul(gated, t.param(m.dec_wg));
  auto pos = slice(t.param(m.dec_pos), 0, tokens, 0, m.config.hidden);
  auto hidden = relu(add_row(add(matmul(t.constant(selector(n, tokens, true)), per_slot),
                                 matmul(t.constant(selector(n, tokens, false)), pos)),
                             t.param(m.dec_b1)));
  return {linear(t, hidden, m.dec_wx, m.dec_bx), linear(t, hidden, m.dec_ww, m.dec_bw), n, tokens};
}

Tensor reconstruction_loglik(Tensor x, const MixtureDecode& d) {
  const Mat& xv = x.value();
  const Mat& mu = d.means.value();
  const Mat& lg = d.logits.value();
  const int T = d.tokens, N = d.slots;
  const Eigen::Index D = xv.cols();
  if (xv.rows() != T || mu.rows() != static_cast<Eigen::Index>(N) * T || mu.cols() != D || lg.rows() != mu.rows())
    throw ShapeError("reconstruction_loglik: shapes disagree");
  const double log_norm = -0.5 * static_cast<double>(D) * std::log(2.0 * std::numbers::pi);

  Mat resp(N * T, 1), weights(N * T, 1), diff(N * T, D);
  double total = 0.0;
  std::vector<double> w(N), l(N);
  for (int k = 0; k < T; ++k) {
    double wmax = -INFINITY, lmax = -INFINITY;
    for (int i = 0; i < N; ++i) wmax = std::max(wmax, lg(i * T + k, 0));
    double wsum = 0;
    for (int i = 0; i < N; ++i) wsum += (w[i] = std::exp(lg(i * T + k, 0) - wmax));
    for (int i = 0; i < N; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * T + k;
      diff.row(r) = xv.row(k) - mu.row(r);
      w[i] /= wsum;
      l[i] = std::log(w[i]) + log_norm - 0.5 * diff.row(r).squaredNorm();
      lmax = std::max(lmax, l[i]);
    }
    double lsum = 0;
    for (int i = 0; i < N; ++i) lsum += std::exp(l[i] - lmax);
    total += lmax + std::log(lsum);
    for (int i = 0; i < N; ++i) {
      resp(i * T + k, 0) = std::exp(l[i] - lmax) / lsum;
      weights(i * T + k, 0) = w[i];
    }
  }
  Mat v(1, 1);
  v(0, 0) = total;
  return x.tape()->record(std::move(v), {x, d.means, d.logits},
                          [resp, weights, diff, T, N](const Mat& g, std::vector<Mat*>& dg) {
                            const double s = g(0, 0);
                            Mat weighted = resp.col(0).asDiagonal() * diff;
                            for (int i = 0; i < N; ++i) dg[0]->noalias() -= s * weighted.middleRows(i * T, T);
                            *dg[1] += s * weighted;
                            *dg[2] += s * (resp - weights);
                          });
}

Tensor prior_logp(Tensor z) { return scale(l2_norm_sq(z), -0.5); }

SceneForward perceive(Tape& t, Model& m, const Mat& tokens, const Mat& slot_noise) {
  SceneForward f;
  f.x = t.constant(tokens);
  f.latent = encode(t, m, f.x);
  f.slots = slot_attention(t, m, f.latent, initial_slots(t, m, slot_noise), m.config.iterations);
  f.betas = objectness_head(t, m, f.slots);
  f.classes = class_head(t, m, f.slots, f.betas);
  return f;
}

FactParamTable head_params(const Mat& betas, const Mat& classes) {
  FactParamTable p;
  for (Eigen::Index i = 0; i < betas.rows(); ++i) {
    p.set("object/" + std::to_string(i), betas(i, 0));
    std::vector<double> row(classes.cols());
    for (Eigen::Index k = 0; k < classes.cols(); ++k) row[k] = classes(i, k);
    p.set("class/" + std::to_string(i), std::move(row));
  }
  return p;
}

void head_gradients(const GradientTable& g, int slots, int classes, Mat& d_betas, Mat& d_classes) {
  d_betas = Mat::Zero(slots, 1);
  d_classes = Mat::Zero(slots, classes);
  for (int i = 0; i < slots; ++i) {
    if (auto it = g.find("object/" + std::to_string(i)); it != g.end()) d_betas(i, 0) = it->second.at(0);
    if (auto it = g.find("class/" + std::to_string(i)); it != g.end())
      for (int k = 0; k < classes && k < static_cast<int>(it->second.size()); ++k) d_classes(i, k) = it->second[k];
  }
}

}  // namespace slotlog
