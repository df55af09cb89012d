#include <doctest.h>

#include "support.hpp"
#include "wsdf/errors.hpp"
#include "wsdf/neutral_bank.hpp"

using namespace wsdf;
using wsdf::test::random_matrix;

namespace {

std::vector<FaceMesh> random_scans(const TopologyPtr& topo, int n, std::mt19937_64& rng) {
  std::vector<FaceMesh> out;
  for (int i = 0; i < n; ++i) out.emplace_back(topo, random_matrix(topo->vertex_count(), 3, rng));
  return out;
}

}  // namespace

TEST_CASE("pseudo neutral of one and two scans") {
  auto topo = make_grid_topology(3, 3, 5);
  std::mt19937_64 rng(1);
  const auto one = random_scans(topo, 1, rng);
  const auto s1 = solve_pseudo_neutral(one);
  CHECK(s1.neutral == one[0].vertices());
  CHECK(s1.deltas[0].isZero());

  const auto two = random_scans(topo, 2, rng);
  const auto s2 = solve_pseudo_neutral(two);
  const Vertices half = 0.5 * (two[0].vertices() - two[1].vertices());
  CHECK((s2.neutral - 0.5 * (two[0].vertices() + two[1].vertices())).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((s2.deltas[0] - half).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((s2.deltas[1] + half).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(solve_pseudo_neutral({}), ValidationError);
  auto other = make_grid_topology(4, 3, 5);
  CHECK_THROWS_AS(solve_pseudo_neutral({one[0], FaceMesh(other, Vertices::Zero(12, 3))}), ShapeError);
}

TEST_CASE("pseudo neutral matches a dense least-squares solve") {
  auto topo = make_grid_topology(3, 2, 5);
  std::mt19937_64 rng(2);
  const int n = 5, m = topo->vertex_count() * 3;
  const auto scans = random_scans(topo, n, rng);
  const auto sol = solve_pseudo_neutral(scans);

  // Unknowns [s; delta_1..delta_n]; minimise sum |delta_i|^2 subject to
  // s + delta_i = X_i, by eliminating delta_i: min_s sum |X_i - s|^2.
  Matrix a = Matrix::Zero(n * m, m);
  Vector b(n * m);
  for (int i = 0; i < n; ++i) {
    a.block(i * m, 0, m, m).setIdentity();
    b.segment(i * m, m) = scans[static_cast<std::size_t>(i)].flat();
  }
  const Vector s = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  const Vector got = FaceMesh(topo, sol.neutral).flat();
  CHECK((got - s).cwiseAbs().maxCoeff() < 1e-8);

  Vertices total = Vertices::Zero(topo->vertex_count(), 3);
  for (int i = 0; i < n; ++i) {
    total += sol.deltas[static_cast<std::size_t>(i)];
    CHECK((sol.neutral + sol.deltas[static_cast<std::size_t>(i)] - scans[static_cast<std::size_t>(i)].vertices())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  CHECK(total.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("confidence") {
  CHECK(confidence(1) == 0.0);
  CHECK(confidence(2) == doctest::Approx(0.632121).epsilon(1e-6));
  CHECK(confidence(10) == doctest::Approx(0.999877).epsilon(1e-6));
  double prev = -1;
  // Past |K| ~ 37 the value rounds to 1.0 in double precision.
  for (int k = 1; k < 30; ++k) {
    CHECK(confidence(k) > prev);
    CHECK(confidence(k) < 1.0);
    prev = confidence(k);
  }
  CHECK_THROWS_AS(confidence(0), ValidationError);
}

TEST_CASE("first update stores the batch mean and later updates apply the EMA") {
  NeutralBank bank(0.9);
  CHECK_FALSE(bank.initialized("a"));
  Matrix batch(2, 3);
  batch << 1, 2, 3, 3, 2, 1;
  bank.update("a", batch);
  REQUIRE(bank.find("a") != nullptr);
  CHECK(bank.find("a")->mesh == Vector::Constant(3, 2.0));
  CHECK(bank.find("a")->update_count == 1);

  NeutralBank zero(0.9);
  zero.restore("b", BankEntry{Vector::Zero(4), 1});
  zero.update("b", Matrix::Ones(3, 4));
  CHECK((zero.find("b")->mesh.array() - 0.1).abs().maxCoeff() < 1e-15);
  CHECK(zero.find("b")->update_count == 2);
  CHECK(zero.find("a") == nullptr);
}

TEST_CASE("EMA converges geometrically to a constant target") {
  std::mt19937_64 rng(3);
  const Vector b0 = random_matrix(6, 1, rng), c = random_matrix(6, 1, rng);
  NeutralBank bank(0.9);
  bank.restore("s", BankEntry{b0, 1});
  for (int t = 0; t < 10; ++t) bank.update("s", c.transpose().replicate(2, 1));
  const Vector want = c + std::pow(0.9, 10) * (b0 - c);
  CHECK((bank.find("s")->mesh - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(bank.find("s")->update_count == 11);
}

TEST_CASE("EMA is affine in the batch means") {
  std::mt19937_64 rng(4);
  const Vector b0 = random_matrix(5, 1, rng);
  const Matrix x = random_matrix(3, 5, rng), y = random_matrix(3, 5, rng);
  const double a = 0.3;
  auto run = [&](const Matrix& m) {
    NeutralBank bank(0.8);
    bank.restore("s", BankEntry{b0, 1});
    bank.update("s", m);
    return bank.find("s")->mesh;
  };
  const Vector mixed = run(a * x + (1 - a) * y);
  CHECK((mixed - (a * run(x) + (1 - a) * run(y))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bank errors") {
  CHECK_THROWS_AS(NeutralBank(1.0), ConfigError);
  CHECK_THROWS_AS(NeutralBank(0.0), ConfigError);
  NeutralBank bank;
  CHECK_THROWS_AS(bank.update("s", Matrix(0, 3)), ValidationError);
  Matrix bad = Matrix::Zero(1, 3);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bank.update("s", bad), ValidationError);
  bank.update("s", Matrix::Zero(1, 3));
  CHECK_THROWS_AS(bank.update("s", Matrix::Zero(1, 6)), ShapeError);
  CHECK_THROWS_AS(bank.restore("t", BankEntry{Vector::Constant(2, std::nan("")), 1}), ValidationError);
}

TEST_CASE("perfect reconstructions converge to the true neutral") {
  // Scans are neutral + centred offsets, so each full-subject batch mean is
  // the neutral and the bank error decays as beta^t.
  std::mt19937_64 rng(5);
  const Vector neutral = random_matrix(9, 1, rng);
  Matrix offs = random_matrix(4, 9, rng);
  offs.rowwise() -= offs.colwise().mean();
  Matrix scans = offs;
  scans.rowwise() += neutral.transpose();
  NeutralBank bank(0.9);
  const Vector b0 = random_matrix(9, 1, rng);
  bank.restore("s", BankEntry{b0, 1});
  for (int t = 1; t <= 30; ++t) {
    bank.update("s", scans);
    CHECK((bank.find("s")->mesh - neutral).norm() <= std::pow(0.9, t) * (b0 - neutral).norm() + 1e-12);
  }
}
