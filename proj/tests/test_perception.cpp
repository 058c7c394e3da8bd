#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "slotlog/perception.hpp"

using namespace slotlog;

namespace {

PerceptionConfig tiny() {
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

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Randomizes every parameter, including the zero-initialized ones.
void scramble(Model& m, std::mt19937_64& rng) {
  for (auto* p : m.parameters()) p->value = randn(rng, p->value.rows(), p->value.cols(), 0.7);
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

Mat permute_rows(const Mat& m, const std::vector<int>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = m.row(i);
  return out;
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST_CASE("encoder") {
  std::mt19937_64 rng(1);
  Model m = Model::init(PerceptionConfig{}, rng);
  for (auto* p : {&m.enc_w1, &m.enc_b1, &m.enc_w2, &m.enc_b2}) p->value.setZero();
  Tape t;
  auto z = encode(t, m, t.constant(Mat::Zero(12, 16)));
  CHECK(z.rows() == 12);
  CHECK(z.cols() == 32);
  CHECK(z.value().isZero(0));
  CHECK_THROWS_AS(encode(t, m, t.constant(Mat::Zero(12, 15))), ShapeError);

  auto run = [] {
    std::mt19937_64 r(42);
    Model mm = Model::init(PerceptionConfig{}, r);
    Tape tt;
    Mat x = randn(r, 12, 16);
    return encode(tt, mm, tt.constant(x)).value();
  };
  CHECK(bit_equal(run(), run()));
}

TEST_CASE("prior") {
  std::mt19937_64 rng(2);
  Mat zv = randn(rng, 5, 4);
  Tape t;
  CHECK(prior_logp(t.constant(Mat::Zero(5, 4))).item() == 0.0);
  auto z = t.constant(zv);
  auto p = prior_logp(z);
  CHECK(prior_logp(t.constant(2.0 * zv)).item() == doctest::Approx(4.0 * p.item()).epsilon(1e-15));
  CHECK(p.item() < 0);
  t.backward(p);
  CHECK(z.grad().isApprox(-zv, 1e-15));
}

TEST_CASE("slot attention with a single slot") {
  std::mt19937_64 rng(3);
  Model m = Model::init(PerceptionConfig{}, rng);
  Mat x = randn(rng, 12, 16);
  Tape t;
  auto z = encode(t, m, t.constant(x));
  auto init = initial_slots(t, m, eval_slot_noise(1, 32));
  auto slots = slot_attention(t, m, z, init, 1);
  Mat values = z.value() * m.slot_wv.value;
  Mat u = values.colwise().mean();
  Mat h = ((u * m.slot_w1.value).rowwise() + m.slot_b1.value.row(0)).cwiseMax(0.0);
  Mat expected = init.value() + u + ((h * m.slot_w2.value).rowwise() + m.slot_b2.value.row(0));
  CHECK(slots.value().isApprox(expected, 1e-12));
  CHECK_THROWS_AS(slot_attention(t, m, z, initial_slots(t, m, eval_slot_noise(1, 32)), 0), std::invalid_argument);
}

TEST_CASE("slot attention ignores token order") {
  std::mt19937_64 rng(4);
  Model m = Model::init(PerceptionConfig{}, rng);
  Mat x = randn(rng, 12, 16);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(12);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 12, rng);
  auto run = [&](const Mat& tokens) {
    Tape t;
    return slot_attention(t, m, encode(t, m, t.constant(tokens)), initial_slots(t, m, eval_slot_noise(3, 32)), 2)
        .value();
  };
  Mat a = run(x), b = run(perm * x);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two identical clusters bind to near-identical slots") {
  std::mt19937_64 rng(5);
  Model m = Model::init(PerceptionConfig{}, rng);
  Mat proto = randn(rng, 1, 16, 2.0);
  Mat x(12, 16);
  for (int k = 0; k < 12; ++k) x.row(k) = proto.row(0) + randn(rng, 1, 16, 0.01).row(0);
  for (int iterations : {10, 30}) {
    Tape t;
    auto s = slot_attention(t, m, encode(t, m, t.constant(x)), initial_slots(t, m, eval_slot_noise(2, 32)),
                            iterations).value();
    CHECK(cosine(s.row(0), s.row(1)) >= 0.99);
  }
}

TEST_CASE("objectness head") {
  std::mt19937_64 rng(6);
  Model m = Model::init(PerceptionConfig{}, rng);
  Tape t;
  Mat s = randn(rng, 3, 32);
  auto b = objectness_head(t, m, t.constant(s));
  CHECK(b.value() == Mat::Constant(3, 1, 0.5));
  scramble(m, rng);
  Mat same(2, 32);
  same.row(0) = s.row(0);
  same.row(1) = s.row(0);
  auto b2 = objectness_head(t, m, t.constant(same)).value();
  CHECK(b2(0, 0) == b2(1, 0));
}

TEST_CASE("class head gating") {
  std::mt19937_64 rng(7);
  Model m = Model::init(PerceptionConfig{}, rng);
  scramble(m, rng);
  Tape t;
  Mat s = randn(rng, 3, 32);
  Mat betas(3, 1);
  betas << 0.0, 0.7, 0.0;
  auto c = class_head(t, m, t.constant(s), t.constant(betas)).value();
  auto fixed = class_head(t, m, t.constant(Mat::Zero(3, 32)), t.constant(Mat::Ones(3, 1))).value();
  CHECK(bit_equal(c.row(0), fixed.row(0)));
  CHECK(bit_equal(c.row(2), fixed.row(0)));
  CHECK_FALSE(bit_equal(c.row(1), fixed.row(0)));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c.row(i).sum() - 1.0) <= 1e-9);
}

TEST_CASE("decoder") {
  std::mt19937_64 rng(8);
  Model m = Model::init(PerceptionConfig{}, rng);
  scramble(m, rng);
  Tape t;
  Mat s = randn(rng, 3, 32);
  SUBCASE("zero objectness collapses the mixture") {
    auto d = decode(t, m, t.constant(s), t.constant(Mat::Zero(3, 1)), 12);
    for (int i = 1; i < 3; ++i) {
      CHECK(bit_equal(d.means.value().middleRows(i * 12, 12), d.means.value().topRows(12)));
      CHECK(bit_equal(d.logits.value().middleRows(i * 12, 12), d.logits.value().topRows(12)));
    }
  }
  SUBCASE("shapes, weights and a finite likelihood") {
    Mat betas = Mat::Constant(3, 1, 0.6);
    auto d = decode(t, m, t.constant(s), t.constant(betas), 12);
    CHECK(d.means.rows() == 36);
    CHECK(d.means.cols() == 16);
    Mat logits(12, 3);
    for (int i = 0; i < 3; ++i) logits.col(i) = d.logits.value().middleRows(i * 12, 12);
    auto w = softmax(t.constant(logits), 1).value();
    for (int k = 0; k < 12; ++k) CHECK(std::abs(w.row(k).sum() - 1.0) <= 1e-12);
    CHECK(std::isfinite(reconstruction_loglik(t.constant(randn(rng, 12, 16)), d).item()));
  }
  CHECK_THROWS_AS(decode(t, m, t.constant(s), t.constant(Mat::Zero(3, 1)), 13), ShapeError);
}

TEST_CASE("reconstruction log-likelihood") {
  std::mt19937_64 rng(9);
  const int T = 5, D = 4;
  Mat x = randn(rng, T, D);
  SUBCASE("single slot on the data") {
    Tape t;
    MixtureDecode d{t.constant(x), t.constant(Mat::Zero(T, 1)), 1, T};
    const double expected = T * (-0.5 * D * std::log(2 * std::numbers::pi));
    CHECK(std::abs(reconstruction_loglik(t.constant(x), d).item() - expected) <= 1e-12);
  }
  SUBCASE("moving a mean away lowers the likelihood") {
    Tape t;
    Mat mu = x;
    auto base = reconstruction_loglik(t.constant(x), {t.constant(mu), t.constant(Mat::Zero(T, 1)), 1, T}).item();
    for (double shift : {0.1, 0.5, 2.0}) {
      Mat moved = mu;
      moved.row(2).array() += shift;
      auto v = reconstruction_loglik(t.constant(x), {t.constant(moved), t.constant(Mat::Zero(T, 1)), 1, T}).item();
      CHECK(v < base);
      base = v;
    }
  }
  SUBCASE("matches direct summation") {
    for (int trial = 0; trial < 20; ++trial) {
      const int N = 1 + trial % 4;
      Mat mu = randn(rng, N * T, D);
      Mat lg = randn(rng, N * T, 1);
      Tape t;
      const double fast = reconstruction_loglik(t.constant(x), {t.constant(mu), t.constant(lg), N, T}).item();
      long double direct = 0;
      for (int k = 0; k < T; ++k) {
        long double z = 0, mix = 0;
        for (int i = 0; i < N; ++i) z += std::exp(static_cast<long double>(lg(i * T + k)));
        for (int i = 0; i < N; ++i) {
          long double sq = 0;
          for (int j = 0; j < D; ++j) {
            long double e = static_cast<long double>(x(k, j)) - mu(i * T + k, j);
            sq += e * e;
          }
          long double dens = std::exp(-sq / 2) / std::pow(2 * std::numbers::pi_v<long double>, D / 2.0L);
          mix += std::exp(static_cast<long double>(lg(i * T + k))) / z * dens;
        }
        direct += std::log(mix);
      }
      CHECK(std::abs(fast - static_cast<double>(direct)) <= 1e-10);
    }
  }
}

TEST_CASE("property: permuting slot initializations permutes every head output exactly") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    PerceptionConfig c;
    c.slots = 3 + trial % 3;
    Model m = Model::init(c, rng);
    scramble(m, rng);
    Mat x = randn(rng, 12, 16);
    Mat noise = randn(rng, c.slots, 32);
    std::vector<int> perm(c.slots);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape t;
    auto a = perceive(t, m, x, noise);
    auto b = perceive(t, m, x, permute_rows(noise, perm));
    CHECK(bit_equal(permute_rows(a.slots.value(), perm), b.slots.value()));
    CHECK(bit_equal(permute_rows(a.betas.value(), perm), b.betas.value()));
    CHECK(bit_equal(permute_rows(a.classes.value(), perm), b.classes.value()));
  }
}

TEST_CASE("property: gated slots feed exact zeros downstream") {
  std::mt19937_64 rng(11);
  Model m = Model::init(PerceptionConfig{}, rng);
  scramble(m, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Mat s = randn(rng, 3, 32);
    Mat betas = (Mat::Random(3, 1).array() + 1.0) / 2.0;
    betas(trial % 3, 0) = 0.0;
    auto c = class_head(t, m, t.constant(s), t.constant(betas)).value();
    Mat zero_slot = s;
    zero_slot.row(trial % 3).setZero();
    auto c0 = class_head(t, m, t.constant(zero_slot), t.constant(betas)).value();
    CHECK(bit_equal(c.row(trial % 3), c0.row(trial % 3)));
    auto d = decode(t, m, t.constant(s), t.constant(betas), 12);
    auto d0 = decode(t, m, t.constant(zero_slot), t.constant(betas), 12);
    CHECK(bit_equal(d.means.value(), d0.means.value()));
  }
}

TEST_CASE("property: head outputs are valid circuit parameters") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    Model m = Model::init(PerceptionConfig{}, rng);
    scramble(m, rng);
    Tape t;
    auto f = perceive(t, m, randn(rng, 12, 16, 3.0), sample_slot_noise(3, 32, rng));
    const Mat& b = f.betas.value();
    CHECK((b.array() > 0.0).all());
    CHECK((b.array() < 1.0).all());
    for (int i = 0; i < 3; ++i) CHECK(std::abs(f.classes.value().row(i).sum() - 1.0) <= 1e-9);
    CHECK_NOTHROW(head_params(b, f.classes.value()).check());
  }
}

TEST_CASE("property: perception composites match central differences") {
  std::mt19937_64 rng(13);
  const double h = 1e-6;
  for (int seed = 0; seed < 50; ++seed) {
    Model m = Model::init(tiny(), rng);
    scramble(m, rng);
    Mat x = randn(rng, 4, 3);
    Mat noise = randn(rng, 2, 4);
    Mat rb = randn(rng, 2, 1), rc = randn(rng, 2, 2);
    auto objective = [&](Tape& t) {
      auto f = perceive(t, m, x, noise);
      auto d = decode(t, m, f.slots, f.betas, 4);
      auto heads = add(sum(mul(f.betas, t.constant(rb))), sum(mul(f.classes, t.constant(rc))));
      return add(add(reconstruction_loglik(f.x, d), prior_logp(f.latent)), heads);
    };
    m.zero_grad();
    {
      Tape t;
      t.backward(objective(t));
    }
    double worst = 0;
    for (auto* p : m.parameters()) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double v0 = p->value.data()[i];
        p->value.data()[i] = v0 + h;
        Tape tu;
        const double up = objective(tu).item();
        p->value.data()[i] = v0 - h;
        Tape td;
        const double down = objective(td).item();
        p->value.data()[i] = v0;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - p->grad.data()[i]) / std::max(1.0, std::abs(fd)));
      }
    }
    CAPTURE(seed);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(14);
  Model m = Model::init(PerceptionConfig{}, rng);
  scramble(m, rng);
  std::stringstream ss;
  save_checkpoint(m, ss);
  Model back = load_checkpoint(ss);
  CHECK(back.config == m.config);
  auto a = m.parameters();
  auto b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i]->value, b[i]->value));

  std::stringstream bad("slotlog-checkpoint 9\n");
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  std::string text;
  {
    std::stringstream again;
    save_checkpoint(m, again);
    text = again.str();
  }
  auto pos = text.find("enc.w1 16 64");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 12, "enc.w1 16 63");
  std::stringstream wrong(text);
  CHECK_THROWS_AS(load_checkpoint(wrong), std::runtime_error);
}

TEST_CASE("head parameter binding") {
  Mat b(2, 1);
  b << 0.25, 0.75;
  Mat c(2, 3);
  c << 0.2, 0.3, 0.5, 1.0, 0.0, 0.0;
  auto p = head_params(b, c);
  CHECK(p.find("object/1")->at(0) == 0.75);
  CHECK(*p.find("class/0") == std::vector<double>{0.2, 0.3, 0.5});
  GradientTable g{{"object/0", {2.0}}, {"class/1", {1.0, 2.0, 3.0}}};
  Mat db, dc;
  head_gradients(g, 2, 3, db, dc);
  CHECK(db(0, 0) == 2.0);
  CHECK(db(1, 0) == 0.0);
  CHECK(dc.row(1) == (Mat(1, 3) << 1.0, 2.0, 3.0).finished());
  CHECK(dc.row(0).isZero(0));
}

TEST_CASE("evaluation noise is stable under capacity changes") {
  Mat a = eval_slot_noise(3, 8), b = eval_slot_noise(5, 8);
  CHECK(bit_equal(a, b.topRows(3)));
  CHECK_FALSE(bit_equal(b.row(3), b.row(4)));
}
