#include <doctest.h>

#include "support.hpp"
#include "wsdf/errors.hpp"
#include "wsdf/networks.hpp"

using namespace wsdf;
using wsdf::test::random_matrix;

namespace {

ModelConfig small_config(EncoderArch arch = EncoderArch::Spiral) {
  ModelConfig cfg;
  cfg.encoder.arch = arch;
  cfg.encoder.channels = {8, 8};
  cfg.encoder.mlp_hidden = {32};
  cfg.encoder.d_id = 4;
  cfg.encoder.d_exp = 3;
  cfg.generator.hidden = {24};
  cfg.seed = 5;
  return cfg;
}

TopologyPtr small_topology() { return make_grid_topology(9, 8, 9); }

// Randomise every parameter so the generator is not at its zero-output start.
void perturb(WsdfModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (ad::Parameter* p : m.parameters())
    p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.3);
}

std::size_t count(const std::vector<const ad::Parameter*>& ps) {
  std::size_t n = 0;
  for (const auto* p : ps) n += static_cast<std::size_t>(p->value.size());
  return n;
}

}  // namespace

TEST_CASE("encoder output shapes and determinism") {
  for (EncoderArch arch : {EncoderArch::Spiral, EncoderArch::Perceptron}) {
    WsdfModel m(small_config(arch), small_topology());
    std::mt19937_64 rng(1);
    Matrix x = random_matrix(3, m.vertex_count() * 3, rng);
    x.row(2) = x.row(0);
    const auto [id, exp] = m.encode(x);
    CHECK(id.mu.rows() == 3);
    CHECK(id.mu.cols() == 4);
    CHECK(exp.mu.cols() == 3);
    CHECK(exp.logvar.cols() == 3);
    CHECK(id.mu.row(0) == id.mu.row(2));
    CHECK(exp.logvar.row(0) == exp.logvar.row(2));
    CHECK(id.mu.allFinite());
    CHECK((id.logvar.array() >= kLogvarMin).all());
    CHECK((id.logvar.array() <= kLogvarMax).all());
    CHECK_THROWS_AS(m.encode(Matrix::Zero(1, m.vertex_count() * 3 - 3)), ShapeError);
  }
}

TEST_CASE("logvar is clamped for extreme inputs") {
  WsdfModel m(small_config(EncoderArch::Perceptron), small_topology());
  perturb(m, 2);
  std::mt19937_64 rng(2);
  const auto [id, exp] = m.encode(random_matrix(2, m.vertex_count() * 3, rng, 1e4));
  CHECK(id.logvar.allFinite());
  CHECK((id.logvar.array().abs() <= kLogvarMax).all());
  CHECK((exp.logvar.array().abs() <= kLogvarMax).all());
}

TEST_CASE("branches have identical parameter counts") {
  for (EncoderArch arch : {EncoderArch::Spiral, EncoderArch::Perceptron}) {
    ModelConfig cfg = small_config(arch);
    cfg.encoder.d_exp = cfg.encoder.d_id;
    WsdfModel m(cfg, small_topology());
    CHECK(m.identity_encoder().parameter_count() == m.expression_encoder().parameter_count());
    CHECK(count(m.identity_encoder().parameters()) == count(m.expression_encoder().parameters()));
  }
}

TEST_CASE("rebuilding the model on the same topology reproduces outputs") {
  const auto cfg = small_config();
  WsdfModel a(cfg, small_topology()), b(cfg, small_topology());
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(2, a.vertex_count() * 3, rng);
  CHECK(a.encode(x).first.mu == b.encode(x).first.mu);
  CHECK(a.encode(x).second.logvar == b.encode(x).second.logvar);
}

TEST_CASE("perturbing one vertex changes both posteriors") {
  WsdfModel m(small_config(), small_topology());
  std::mt19937_64 rng(4);
  Matrix x = random_matrix(1, m.vertex_count() * 3, rng);
  const auto base = m.encode(x);
  x(0, 3 * 17 + 1) += 1e-3;
  const auto moved = m.encode(x);
  CHECK((moved.first.mu - base.first.mu).norm() > 1e-9);
  CHECK((moved.second.mu - base.second.mu).norm() > 1e-9);
  CHECK((moved.first.mu - base.first.mu).norm() < 1e-1);
}

TEST_CASE("reparameterize") {
  Vector mu(3), lv(3), n(3);
  mu << 1, -2, 0.5;
  lv << 0.3, -1, 2;
  n << 0.4, 0.2, -1;
  CHECK(reparameterize(mu, lv, Vector::Zero(3), Branch::Identity).values == mu);
  CHECK(reparameterize(mu, Vector::Zero(3), n, Branch::Expression).values == mu + n);
  CHECK(reparameterize(mu, lv, n, Branch::Expression).branch == Branch::Expression);
  CHECK_THROWS_AS(reparameterize(mu, Vector::Zero(2), n, Branch::Identity), ShapeError);

  std::mt19937_64 rng(5);
  const int N = 100000;
  const Matrix noise = random_matrix(N, 3, rng);
  ad::Tape t(false);
  const Matrix mus = mu.transpose().replicate(N, 1), lvs = lv.transpose().replicate(N, 1);
  const Matrix z = reparameterize(t.constant(mus), t.constant(lvs), noise).value();
  const Vector mean = z.colwise().mean().transpose();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(mean(i) - mu(i)) < 3.0 * std::exp(lv(i) / 2) / std::sqrt(N));
}

TEST_CASE("untrained generator returns the base mesh") {
  WsdfModel m(small_config(), small_topology());
  std::mt19937_64 rng(6);
  const int k = m.recoupler().config().out_dim();
  const Matrix out = m.generate(random_matrix(2, k, rng));
  CHECK(out.cols() == m.vertex_count() * 3);
  CHECK(out.isZero());
  CHECK(m.generate(Matrix::Zero(1, k)).isZero());
  Matrix bad = Matrix::Zero(1, k);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(m.generate(bad), ValidationError);
  CHECK_THROWS_AS(m.generate(Matrix::Zero(1, k + 1)), ShapeError);
}

TEST_CASE("generator directional derivative matches finite differences") {
  WsdfModel m(small_config(), small_topology());
  perturb(m, 7);
  std::mt19937_64 rng(7);
  const int k = m.recoupler().config().out_dim();
  const Matrix z = random_matrix(2, k, rng), t = random_matrix(2, k, rng);
  const double h = 1e-3;
  const Matrix fd = (m.generate(z + h * t) - m.generate(z - h * t)) / (2 * h);
  const Matrix jvp = m.jvp_generate(z, t);
  CHECK((jvp - fd).norm() / fd.norm() < 1e-4);
  CHECK(m.jvp_generate(z, Matrix::Zero(2, k)).isZero());
  CHECK((m.jvp_generate(z, 2.5 * t) - 2.5 * jvp).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decoder expression JVP matches finite differences and is linear") {
  WsdfModel m(small_config(), small_topology());
  perturb(m, 8);
  std::mt19937_64 rng(8);
  const Matrix zi = random_matrix(2, 4, rng), ze = random_matrix(2, 3, rng), t = random_matrix(2, 3, rng);
  const double h = 1e-5;
  const Matrix fd = (m.decode(zi, ze + h * t) - m.decode(zi, ze - h * t)) / (2 * h);
  const Matrix jvp = m.jvp_decode_exp(zi, ze, t);
  CHECK((jvp - fd).norm() / fd.norm() < 1e-4);
  CHECK(m.jvp_decode_exp(zi, ze, Matrix::Zero(2, 3)).isZero());
  CHECK((m.jvp_decode_exp(zi, ze, -3.0 * t) + 3.0 * jvp).cwiseAbs().maxCoeff() < 1e-10);

  ad::Tape tape(false);
  const auto g = m.decode_jvp_exp(tape, tape.constant(zi), tape.constant(ze), tape.constant(t));
  CHECK((g.value.value() - m.decode(zi, ze)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.tangent.value() - jvp).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("graph gradients of the decoder match finite differences in the parameters") {
  WsdfModel m(small_config(), small_topology());
  perturb(m, 9);
  std::mt19937_64 rng(9);
  const Matrix x = random_matrix(2, m.vertex_count() * 3, rng, 0.5);
  const Matrix probe = random_matrix(2, m.vertex_count() * 3, rng);
  auto loss = [&]() {
    const auto [id, exp] = m.encode(x);
    return m.decode(id.mu, exp.mu).cwiseProduct(probe).sum();
  };
  for (ad::Parameter* p : m.parameters()) p->zero_grad();
  ad::Tape tape;
  const auto enc = m.encode(tape, tape.constant(x));
  tape.backward(ad::sum(ad::mul(m.decode(tape, enc.id.mu, enc.exp.mu), tape.constant(probe))));
  for (const char* name : {"recoupler.W", "generator.base"}) {
    ad::Parameter* p = m.find_parameter(name);
    REQUIRE(p != nullptr);
    const Matrix analytic = p->grad;
    auto f = [&](const Matrix& v) {
      const Matrix keep = p->value;
      p->value = v;
      const double r = loss();
      p->value = keep;
      return r;
    };
    CAPTURE(name);
    CHECK(wsdf::test::max_grad_error(f, p->value, analytic) < 1e-5);
  }
  // One entry of every parameter, to cover the encoder weights too.
  for (ad::Parameter* p : m.parameters()) {
    const Eigen::Index i = p->value.size() / 2;
    const double orig = p->value.data()[i], h = 1e-6;
    p->value.data()[i] = orig + h;
    const double fp = loss();
    p->value.data()[i] = orig - h;
    const double fm = loss();
    p->value.data()[i] = orig;
    CAPTURE(p->name);
    const double num = (fp - fm) / (2 * h);
    CHECK(std::abs(num - p->grad.data()[i]) < 1e-5 * std::max(1.0, std::abs(num)));
  }
}
