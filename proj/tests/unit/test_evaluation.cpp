#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "support.hpp"
#include "wsdf/dataset.hpp"
#include "wsdf/errors.hpp"
#include "wsdf/evaluation.hpp"

using namespace wsdf;
using wsdf::test::random_matrix;
using wsdf::test::TempDir;

namespace {

// Population std of ||x(v) - mean(v)|| over all (mesh, vertex) pairs.
double spread_oracle(const std::vector<Vertices>& ms) {
  const Eigen::Index nv = ms[0].rows();
  std::vector<double> d;
  for (const auto& m : ms)
    for (Eigen::Index v = 0; v < nv; ++v) {
      double mx = 0, my = 0, mz = 0;
      for (const auto& o : ms) {
        mx += o(v, 0);
        my += o(v, 1);
        mz += o(v, 2);
      }
      const double n = static_cast<double>(ms.size());
      const double dx = m(v, 0) - mx / n, dy = m(v, 1) - my / n, dz = m(v, 2) - mz / n;
      d.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
    }
  double mean = 0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(d.size());
  double var = 0;
  for (double x : d) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(d.size()));
}

struct Fixture {
  SyntheticDataset data;
  NormalizationStats stats;
  std::unique_ptr<WsdfModel> model;

  explicit Fixture(bool trained_like) {
    SyntheticConfig c;
    c.grid_nx = 6;
    c.grid_ny = 5;
    c.subjects = 6;
    c.expressions = 4;
    c.identity_dim = 3;
    c.expression_dim = 3;
    c.test_fraction = 0.5;
    data = generate_synthetic(make_synthetic_spec(c));
    std::vector<const FaceMesh*> ptrs;
    for (const auto& r : data.split.train) ptrs.push_back(&r.mesh);
    stats = NormalizationStats::fit(ptrs);
    ModelConfig mc;
    mc.encoder.arch = EncoderArch::Perceptron;
    mc.encoder.mlp_hidden = {16};
    mc.encoder.d_id = 3;
    mc.encoder.d_exp = 2;
    mc.generator.hidden = {16};
    mc.seed = 3;
    model = std::make_unique<WsdfModel>(mc, data.spec.topology);
    if (trained_like) {
      std::mt19937_64 rng(4);
      for (ad::Parameter* p : model->parameters())
        p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.3);
    }
  }
};

Vertices decode_mm(const WsdfModel& m, const NormalizationStats& stats, const Vector& zi, const Vector& ze) {
  const Matrix out = m.decode(zi.transpose(), ze.transpose());
  return denormalize(FaceMesh::from_flat(m.topology(), out.row(0).transpose()), stats).vertices();
}

}  // namespace

TEST_CASE("summary uses the exact median") {
  const Summary odd = summarize({5, 1, 4, 2, 3});
  CHECK(odd.median == 3.0);
  CHECK(odd.mean == 3.0);
  CHECK(odd.count == 5);
  const Summary even = summarize({10, 1, 7, 2});
  CHECK(even.median == 4.5);
  CHECK(even.mean == 5.0);
  CHECK(summarize({}).count == 0);
}

TEST_CASE("group spread") {
  std::mt19937_64 rng(1);
  const Vertices m = random_matrix(7, 3, rng);
  Eigen::RowVector3d u(0.3, -1.2, 0.4);
  const Vertices plus = m.rowwise() + u, minus = m.rowwise() - u;
  CHECK(group_spread({&plus, &minus}) < 1e-12);
  CHECK(group_spread({&m, &m, &m}) < 1e-12);

  std::vector<Vertices> ms;
  for (int i = 0; i < 4; ++i) ms.push_back(random_matrix(7, 3, rng));
  std::vector<const Vertices*> ptrs;
  for (const auto& x : ms) ptrs.push_back(&x);
  CHECK(group_spread(ptrs) == doctest::Approx(spread_oracle(ms)).epsilon(1e-12));
  CHECK_THROWS_AS(group_spread({}), ValidationError);
  const Vertices other = Vertices::Zero(3, 3);
  CHECK_THROWS_AS(group_spread({&m, &other}), ShapeError);
}

TEST_CASE("constant decoder: zero compactness errors and AVD to the mean mesh") {
  Fixture f(false);
  const auto& test = f.data.split.test;
  std::vector<SampleOutputs> outs;
  const MetricsReport rep = evaluate_model(*f.model, f.stats, test, &f.data.ground_truth, "fp", {}, &outs);
  REQUIRE(rep.id.has_value());
  REQUIRE(rep.exp.has_value());
  CHECK(rep.id->mean < 1e-9);
  CHECK(rep.exp->mean < 1e-9);

  std::vector<double> avd, neu;
  for (const auto& r : test) {
    avd.push_back(average_vertex_distance(r.mesh.vertices(), f.stats.mean));
    neu.push_back(average_vertex_distance(f.data.ground_truth.at(r.subject_id).vertices(), f.stats.mean));
  }
  CHECK(rep.avd->mean == doctest::Approx(summarize(avd).mean).epsilon(1e-10));
  CHECK(rep.avd->median == doctest::Approx(summarize(avd).median).epsilon(1e-10));
  CHECK(rep.neu->mean == doctest::Approx(summarize(neu).mean).epsilon(1e-10));
  CHECK(rep.scan_count == test.size());
  CHECK(rep.subject_count == f.data.split.held_out_subjects.size());
  CHECK(rep.fingerprint == "fp");
}

TEST_CASE("metrics match brute-force recomputation from the inference outputs") {
  Fixture f(true);
  const auto& test = f.data.split.test;
  std::vector<SampleOutputs> outs;
  const MetricsReport rep = evaluate_model(*f.model, f.stats, test, &f.data.ground_truth, "fp", {}, &outs);
  REQUIRE(outs.size() == test.size());

  std::map<std::string, std::vector<Vertices>> by_subject, by_label;
  std::vector<double> avd, neu;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& o = outs[i];
    CHECK(o.input == test[i].mesh.vertices());
    CHECK((o.recon - decode_mm(*f.model, f.stats, o.mu_id, o.mu_exp)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((o.neutral - decode_mm(*f.model, f.stats, o.mu_id, Vector::Zero(2))).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((o.identity_free - decode_mm(*f.model, f.stats, Vector::Zero(3), o.mu_exp)).cwiseAbs().maxCoeff() < 1e-9);
    avd.push_back(average_vertex_distance(o.input, o.recon));
    neu.push_back(average_vertex_distance(f.data.ground_truth.at(o.subject_id).vertices(), o.neutral));
    by_subject[o.subject_id].push_back(o.neutral);
    by_label[*o.expression_label].push_back(o.identity_free);
  }
  std::vector<double> id, ex;
  for (const auto& [s, ms] : by_subject) id.push_back(spread_oracle(ms));
  for (const auto& [l, ms] : by_label) ex.push_back(spread_oracle(ms));
  CHECK(rep.avd->mean == doctest::Approx(summarize(avd).mean).epsilon(1e-10));
  CHECK(rep.neu->median == doctest::Approx(summarize(neu).median).epsilon(1e-10));
  CHECK(rep.id->mean == doctest::Approx(summarize(id).mean).epsilon(1e-10));
  CHECK(rep.id->median == doctest::Approx(summarize(id).median).epsilon(1e-10));
  CHECK(rep.exp->mean == doctest::Approx(summarize(ex).mean).epsilon(1e-10));
  CHECK(rep.exp->count == by_label.size());
  CHECK(rep.id->mean > 0.0);
}

TEST_CASE("metrics are invariant to scan order") {
  Fixture f(true);
  auto shuffled = f.data.split.test;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = evaluate_model(*f.model, f.stats, f.data.split.test, &f.data.ground_truth, "x");
  const auto b = evaluate_model(*f.model, f.stats, shuffled, &f.data.ground_truth, "x");
  for (auto pick : {&MetricsReport::avd, &MetricsReport::id, &MetricsReport::exp, &MetricsReport::neu}) {
    CHECK((a.*pick)->mean == doctest::Approx((b.*pick)->mean).epsilon(1e-12));
    CHECK((a.*pick)->median == doctest::Approx((b.*pick)->median).epsilon(1e-12));
  }
}

TEST_CASE("subject-mean identity removal is a separate switch") {
  Fixture f(true);
  EvalOptions o;
  o.identity_removal = IdentityRemoval::SubjectMeanCode;
  std::vector<SampleOutputs> outs;
  evaluate_model(*f.model, f.stats, f.data.split.test, nullptr, "", o, &outs);
  std::map<std::string, std::pair<Vector, int>> means;
  for (const auto& s : outs) {
    auto& [sum, n] = means[s.subject_id];
    if (n == 0) sum = Vector::Zero(s.mu_id.size());
    sum += s.mu_id;
    ++n;
  }
  for (const auto& s : outs) {
    const Vector zi = means[s.subject_id].first / means[s.subject_id].second;
    CHECK((s.identity_free - decode_mm(*f.model, f.stats, zi, s.mu_exp)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("metric absence and empty input") {
  Fixture f(true);
  auto test = f.data.split.test;
  for (auto& r : test) r.expression_label.reset();
  const auto rep = evaluate_model(*f.model, f.stats, test, nullptr, "");
  CHECK(rep.avd.has_value());
  CHECK(rep.id.has_value());
  CHECK_FALSE(rep.exp.has_value());
  CHECK_FALSE(rep.neu.has_value());
  CHECK_THROWS_AS(evaluate_model(*f.model, f.stats, {}, nullptr, ""), DataError);
}

TEST_CASE("report text round trip") {
  Fixture f(true);
  const auto rep = evaluate_model(*f.model, f.stats, f.data.split.test, &f.data.ground_truth, "abc123");
  const auto back = MetricsReport::from_text(rep.to_text());
  CHECK(back.to_text() == rep.to_text());
  CHECK(back.avd->mean == rep.avd->mean);
  CHECK(back.id->median == rep.id->median);
  CHECK(back.fingerprint == "abc123");
  MetricsReport partial;
  partial.avd = Summary{1.5, 1.25, 3};
  const auto p2 = MetricsReport::from_text(partial.to_text());
  CHECK_FALSE(p2.neu.has_value());
  CHECK(p2.avd->median == 1.25);
  CHECK_THROWS_AS(MetricsReport::from_text("garbage"), DataError);
}

TEST_CASE("sample dump reproduces every metric") {
  Fixture f(true);
  std::vector<SampleOutputs> outs;
  const auto rep = evaluate_model(*f.model, f.stats, f.data.split.test, &f.data.ground_truth, "", {}, &outs);
  TempDir d("dump");
  write_sample_dump(d.path / "s.txt", outs, &f.data.ground_truth);
  const auto dumped = read_sample_dump(d.path / "s.txt");
  REQUIRE(dumped.size() == outs.size());
  std::vector<SampleOutputs> rebuilt;
  std::map<std::string, FaceMesh> gt;
  for (const auto& s : dumped) {
    CHECK(s.ground_truth.has_value());
    SampleOutputs o;
    o.subject_id = s.subject_id;
    o.expression_label = s.expression_label;
    o.input = s.input;
    o.recon = s.recon;
    o.neutral = s.neutral;
    o.identity_free = s.identity_free;
    gt.insert_or_assign(s.subject_id, FaceMesh(f.data.spec.topology, *s.ground_truth));
    rebuilt.push_back(o);
  }
  CHECK(dumped[0].recon == outs[0].recon);
  const auto again = summarize_samples(compute_samples(rebuilt, &gt), rep.scan_count, rep.subject_count, "");
  CHECK(again.to_text() == rep.to_text());
}

TEST_CASE("latent export round trip") {
  Fixture f(true);
  const auto outs = run_inference(*f.model, f.stats, f.data.split.test);
  TempDir d("latents");
  export_latents(d.path / "z.tsv", outs);
  std::ifstream is(d.path / "z.tsv");
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::vector<std::string> cols{std::istream_iterator<std::string>(hs), {}};
  CHECK(cols.size() == 2 + 3 + 2);
  CHECK(cols[2] == "id_0");
  CHECK(cols.back() == "exp_1");
  const auto back = read_latents(d.path / "z.tsv");
  REQUIRE(back.size() == outs.size());
  for (std::size_t i = 0; i < outs.size(); ++i) {
    CHECK(back[i].subject_id == outs[i].subject_id);
    CHECK(back[i].expression_label == outs[i].expression_label);
    CHECK(back[i].mu_id == outs[i].mu_id);
    CHECK(back[i].mu_exp == outs[i].mu_exp);
  }
}

TEST_CASE("interpolation endpoints and modes") {
  Fixture f(true);
  const auto& a = f.data.split.test[0];
  const auto& b = f.data.split.test[f.data.split.test.size() - 1];
  const auto outs = run_inference(*f.model, f.stats, {a, b});
  const auto joint = interpolate(*f.model, f.stats, a.mesh, b.mesh, 5, InterpolationMode::Joint);
  REQUIRE(joint.size() == 5);
  CHECK((joint.front() - outs[0].recon).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((joint.back() - outs[1].recon).cwiseAbs().maxCoeff() < 1e-9);
  const Vertices mid = decode_mm(*f.model, f.stats, 0.5 * (outs[0].mu_id + outs[1].mu_id),
                                 0.5 * (outs[0].mu_exp + outs[1].mu_exp));
  CHECK((joint[2] - mid).cwiseAbs().maxCoeff() < 1e-9);

  const auto exp_only = interpolate(*f.model, f.stats, a.mesh, b.mesh, 3, InterpolationMode::ExpressionOnly);
  CHECK((exp_only.back() - decode_mm(*f.model, f.stats, outs[0].mu_id, outs[1].mu_exp)).cwiseAbs().maxCoeff() < 1e-9);
  const auto id_only = interpolate(*f.model, f.stats, a.mesh, b.mesh, 3, InterpolationMode::IdentityOnly);
  CHECK((id_only.back() - decode_mm(*f.model, f.stats, outs[1].mu_id, outs[0].mu_exp)).cwiseAbs().maxCoeff() < 1e-9);

  const auto self = interpolate(*f.model, f.stats, a.mesh, a.mesh, 4, InterpolationMode::IdentityOnly);
  for (const auto& m : self) CHECK(average_vertex_distance(m, self[0]) < 1e-9);
  CHECK_THROWS_AS(interpolate(*f.model, f.stats, a.mesh, b.mesh, 1, InterpolationMode::Joint), ValidationError);
}

TEST_CASE("expression deformation scale") {
  Fixture f(false);
  const auto s = expression_deformation_scale(f.data.split.test, f.data.ground_truth);
  std::vector<double> d;
  for (const auto& r : f.data.split.test)
    d.push_back(average_vertex_distance(r.mesh, f.data.ground_truth.at(r.subject_id)));
  CHECK(s.mean == doctest::Approx(summarize(d).mean).epsilon(1e-12));
  CHECK(s.mean > 0.0);
}
