#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "wsdf/checkpoint.hpp"
#include "wsdf/errors.hpp"
#include "wsdf/mesh_io.hpp"
#include "wsdf/trainer.hpp"

using namespace wsdf;
using wsdf::test::TempDir;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  auto& s = c.data.synthetic;
  s.grid_nx = 6;
  s.grid_ny = 5;
  s.subjects = 10;
  s.expressions = 5;
  s.identity_dim = 3;
  s.expression_dim = 3;
  c.model.encoder.channels = {8, 8};
  c.model.encoder.d_id = 4;
  c.model.encoder.d_exp = 4;
  c.model.generator.hidden = {32};
  c.sampler.ids_per_batch = 4;
  c.sampler.scans_per_id = 2;
  c.epochs = 1;
  c.seed = 21;
  return c;
}

const PreparedData& small_data() {
  static const PreparedData data = prepare_data(small_config().data, small_config().seed);
  return data;
}

}  // namespace

TEST_CASE("config JSON round trip, strict keys and overrides") {
  TrainConfig c = small_config();
  c.identity_removal = IdentityRemoval::SubjectMeanCode;
  c.model.encoder.arch = EncoderArch::Perceptron;
  const std::string text = config_to_json(c);
  CHECK(config_to_json(config_from_json(text)) == text);
  CHECK(config_from_json("{}").epochs == TrainConfig{}.epochs);
  CHECK(config_from_json(R"({"weights": {"gamma": 3}})").weights.gamma == 3.0);
  CHECK_THROWS_AS(config_from_json(R"({"epochz": 3})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"encoder": {"arch": "transformer"}}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);

  apply_override(c, "weights.gamma=2.5");
  CHECK(c.weights.gamma == 2.5);
  apply_override(c, "data.kind=directory");
  CHECK(c.data.kind == "directory");
  apply_override(c, "model.encoder.channels=[4,4,4]");
  CHECK(c.model.encoder.channels == std::vector<int>{4, 4, 4});
  CHECK_THROWS_AS(apply_override(c, "weights.nothing=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);

  TempDir d("cfg");
  std::ofstream(d.path / "c.json") << config_to_json(small_config());
  CHECK(config_to_json(load_config(d.path / "c.json")) == config_to_json(small_config()));
  CHECK_THROWS(load_config(d.path / "missing.json"));
}

TEST_CASE("config validation and fingerprint") {
  TrainConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& x) { x.epochs = 0; }, [](TrainConfig& x) { x.lr = 0; },
           [](TrainConfig& x) { x.beta = 1.0; }, [](TrainConfig& x) { x.weights.gamma = -1; },
           [](TrainConfig& x) { x.sampler.scans_per_id = 0; }, [](TrainConfig& x) { x.model.encoder.d_id = 0; }}) {
    TrainConfig bad = c;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
  const std::string fp = config_fingerprint(c);
  CHECK(fp.size() == 16);
  CHECK(fp == config_fingerprint(small_config()));
  c.seed += 1;
  CHECK(fp != config_fingerprint(c));
}

TEST_CASE("derived seeds differ per stream and are stable") {
  CHECK(derive_seed(1, 1) == derive_seed(1, 1));
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}

TEST_CASE("AdamW matches a hand computation") {
  ad::Parameter p("w", Matrix::Constant(1, 2, 1.0));
  AdamW opt({&p}, 0.1, 0.9, 0.999, 1e-8, 0.01);
  const double g[2][2] = {{0.5, -2.0}, {0.25, 1.0}};
  double w[2] = {1.0, 1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 2; ++t) {
    p.grad(0, 0) = g[t - 1][0];
    p.grad(0, 1) = g[t - 1][1];
    opt.step();
    for (int i = 0; i < 2; ++i) {
      w[i] *= 1.0 - 0.1 * 0.01;
      m[i] = 0.9 * m[i] + 0.1 * g[t - 1][i];
      v[i] = 0.999 * v[i] + 0.001 * g[t - 1][i] * g[t - 1][i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value(0, i) == doctest::Approx(w[i]).epsilon(1e-14));
    }
  }
  CHECK(opt.steps() == 2);
  opt.zero_grad();
  CHECK(p.grad.isZero());
}

TEST_CASE("data preparation") {
  const PreparedData& d = small_data();
  CHECK(d.split.held_out_subjects.size() == 3);
  CHECK(d.filtered_out == 1);
  CHECK(d.split.train.size() == 7 * 5 - 1);
  CHECK(d.ground_truth.size() == 10);
  CHECK(d.stats.scale > 0.0);

  TrainConfig c = small_config();
  c.data.withhold_labels = true;
  const PreparedData w = prepare_data(c.data, c.seed);
  for (const auto* part : {&w.split.train, &w.split.test})
    for (const auto& r : *part) CHECK_FALSE(r.expression_label.has_value());

  c.data.kind = "directory";
  c.data.path = "/nonexistent/wsdf";
  CHECK_THROWS_AS(prepare_data(c.data, 0), Error);
  c.data.kind = "nope";
  CHECK_THROWS_AS(prepare_data(c.data, 0), ConfigError);
}

TEST_CASE("one epoch smoke run writes parseable outputs") {
  TempDir d("smoke");
  RunOptions ro;
  ro.out_dir = d.path;
  const TrainOutcome o = train(small_config(), small_data(), ro);
  Trainer probe(small_config(), small_data());
  REQUIRE(o.log.size() == static_cast<std::size_t>(probe.steps_per_epoch()));
  const auto log = read_loss_log(d.path / "metrics.tsv");
  REQUIRE(log.size() == o.log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].first == o.log[i].first);
    CHECK(log[i].second.total == o.log[i].second.total);
    CHECK(std::isfinite(log[i].second.total));
  }
  REQUIRE(o.report.has_value());
  CHECK(o.report->avd.has_value());
  CHECK(o.report->id.has_value());
  CHECK(o.report->exp.has_value());
  CHECK(o.report->neu.has_value());
  CHECK(o.report->fingerprint == config_fingerprint(small_config()));
  CHECK(std::filesystem::exists(d.path / "model.ckpt"));
  CHECK(config_to_json(load_config(d.path / "config.json")) == config_to_json(small_config()));
  std::ifstream rs(d.path / "report.txt");
  std::stringstream ss;
  ss << rs.rdbuf();
  CHECK(MetricsReport::from_text(ss.str()).to_text() == o.report->to_text());
}

TEST_CASE("disabled bank means no neutralisation loss") {
  TrainConfig c = small_config();
  c.enable_neutral_bank = false;
  Trainer t(c, small_data());
  for (int i = 0; i < 6; ++i) CHECK(t.step().neu == 0.0);
  CHECK(t.bank().entries().empty());
}

TEST_CASE("equal seeds give equal step-0 losses and logged totals add up") {
  Trainer a(small_config(), small_data()), b(small_config(), small_data());
  const LossBreakdown la = a.step(), lb = b.step();
  CHECK(la.rec == lb.rec);
  CHECK(la.kl == lb.kl);
  CHECK(la.jac == lb.jac);
  CHECK(la.total == lb.total);

  TrainConfig other = small_config();
  other.seed = 22;
  Trainer c(other, small_data());
  CHECK(c.step().total != la.total);

  const LossWeights& w = a.config().weights;
  for (int i = 0; i < 8; ++i) {
    const LossBreakdown l = a.step();
    CHECK(std::abs(l.total - (l.rec + l.kl + w.lambda_neu * l.neu + w.lambda_jac * l.jac + w.lambda_mi * l.mi)) <
          1e-6);
  }
}

TEST_CASE("L_neu at step t reads the bank produced by step t-1") {
  Trainer t(small_config(), small_data());
  std::map<std::string, BankEntry> before;
  int checked_rows = 0, probes = 0;
  t.set_probe([&](const StepProbe& p) {
    ++probes;
    const TrainingBatch& b = *p.batch;
    for (Eigen::Index r = 0; r < b.coords.rows(); ++r) {
      const std::string& sid = b.group_subjects[static_cast<std::size_t>(b.group_of_row[static_cast<std::size_t>(r)])];
      auto it = before.find(sid);
      if (it == before.end()) {
        CHECK((*p.alpha)(r) == 0.0);
        continue;
      }
      ++checked_rows;
      CHECK(p.bank_targets->row(r) == it->second.mesh.transpose());
      CHECK((*p.alpha)(r) == confidence(t.training_set().scans_of(sid)));
    }
  });
  for (int i = 0; i < 12; ++i) {
    before = t.bank().entries();
    t.step();
    for (const auto& [sid, e] : t.bank().entries()) {
      const auto it = before.find(sid);
      if (it != before.end()) CHECK(e.update_count >= it->second.update_count);
    }
  }
  CHECK(probes == 12);
  CHECK(checked_rows > 0);
}

TEST_CASE("each step advances the bank entry of every subject in the batch once") {
  Trainer t(small_config(), small_data());
  for (int i = 0; i < 5; ++i) t.step();
  IdentityAwareSampler s(t.training_set(), small_config().sampler);
  const TrainingBatch batch = s.next();
  const auto before = t.bank().entries();
  t.step(batch);
  for (std::size_t g = 0; g < batch.group_subjects.size(); ++g) {
    const std::string& sid = batch.group_subjects[g];
    const BankEntry& after = t.bank().entries().at(sid);
    const auto it = before.find(sid);
    if (it == before.end()) {
      CHECK(after.update_count == 1);
    } else {
      CHECK(after.update_count == it->second.update_count + 1);
      CHECK((after.mesh - it->second.mesh).norm() > 0.0);
    }
  }
}

TEST_CASE("checkpoint round trip reproduces the evaluation report") {
  TempDir d("ckpt");
  RunOptions ro;
  ro.out_dir = d.path;
  const TrainOutcome o = train(small_config(), small_data(), ro);
  const LoadedModel lm = load_model(o.checkpoint);
  CHECK(config_to_json(lm.config) == config_to_json(small_config()));
  const MetricsReport again = evaluate(lm, small_data(), EvalOptions{});
  CHECK(again.to_text() == o.report->to_text());

  TrainConfig other = small_config();
  other.data.synthetic.grid_nx = 7;
  const PreparedData mismatch = prepare_data(other.data, other.seed);
  CHECK_THROWS_AS(evaluate(lm, mismatch, EvalOptions{}), DataError);
}

TEST_CASE("resuming from a checkpoint continues bit-exactly") {
  TrainConfig c = small_config();
  Trainer full(c, small_data());
  std::vector<LossBreakdown> want;
  for (int i = 0; i < 8; ++i) want.push_back(full.step());

  TempDir d("resume");
  Trainer first(c, small_data());
  for (int i = 0; i < 4; ++i) first.step();
  save_checkpoint(d.path / "mid.ckpt", first.checkpoint());
  Trainer second(c, small_data());
  second.restore(load_checkpoint(d.path / "mid.ckpt"));
  CHECK(second.steps_done() == 4);
  for (int i = 4; i < 8; ++i) {
    const LossBreakdown l = second.step();
    CHECK(l.total == want[static_cast<std::size_t>(i)].total);
    CHECK(l.neu == want[static_cast<std::size_t>(i)].neu);
  }
  const auto pa = full.model().parameters();
  const auto pb = second.model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(full.bank().entries().size() == second.bank().entries().size());
}

TEST_CASE("non-finite values abort with a batch dump") {
  TempDir d("nan");
  {
    Trainer t(small_config(), small_data());
    t.set_dump_dir(d.path);
    t.model().find_parameter("generator.base")->value(0, 4) = std::nan("");
    try {
      t.step();
      FAIL("expected NumericalAbort");
    } catch (const NumericalAbort& e) {
      CHECK(std::string(e.what()).find("non-finite loss at step 0") != std::string::npos);
    }
    const auto dumped = read_mesh_batch(d.path / "abort_step0.bin");
    CHECK(dumped.size() == 8);
    std::ifstream subj(d.path / "abort_step0.bin.subjects");
    int lines = 0;
    for (std::string line; std::getline(subj, line);) ++lines;
    CHECK(lines == 8);
  }
  {
    Trainer t(small_config(), small_data());
    t.step();
    t.set_dump_dir(d.path);
    t.model().find_parameter("enc_id.mu.bias")->value.setConstant(std::nan(""));
    CHECK_THROWS_AS(t.step(), NumericalAbort);
    CHECK(std::filesystem::exists(d.path / "abort_step1.bin"));
  }
}

TEST_CASE("training completes with every expression label withheld") {
  TrainConfig c = small_config();
  c.data.withhold_labels = true;
  const PreparedData data = prepare_data(c.data, c.seed);
  const TrainOutcome o = train(c, data, RunOptions{});
  REQUIRE(o.report.has_value());
  CHECK_FALSE(o.report->exp.has_value());
  CHECK(o.report->neu.has_value());
  CHECK(std::isfinite(o.log.back().second.total));
}

TEST_CASE("four-row ablation ladder") {
  TempDir d("ablate");
  TrainConfig c = small_config();
  c.max_steps = 3;
  const auto rows = ablation_suite(c, small_data(), d.path, 4);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].label == "baseline");
  CHECK(rows[1].label == "+ neu. bank");
  CHECK(rows[2].label == "+ jac. loss");
  CHECK(rows[3].label == "+ mi. loss");
  for (const auto& [step, l] : read_loss_log(d.path / "0_baseline" / "metrics.tsv")) {
    CHECK(l.neu == 0.0);
    CHECK(l.jac == 0.0);
    CHECK(l.mi == 0.0);
  }
  for (const auto& [step, l] : read_loss_log(d.path / "2_jac_loss" / "metrics.tsv")) CHECK(l.mi == 0.0);
  // The zero-initialised generator output keeps p inside [0, q] early on, so
  // only the identity term is guaranteed to be active here.
  for (const auto& [step, l] : read_loss_log(d.path / "3_mi_loss" / "metrics.tsv")) CHECK(l.mi > 0.0);
  const std::string table = ablation_table(rows);
  std::istringstream is(table);
  std::string header;
  std::getline(is, header);
  CHECK(header.rfind("variant\tE_avd.mean", 0) == 0);
  int lines = 0;
  for (std::string l; std::getline(is, l);) {
    CHECK(std::count(l.begin(), l.end(), '\t') == std::count(header.begin(), header.end(), '\t'));
    ++lines;
  }
  CHECK(lines == 4);

  const auto again = ablation_suite(c, small_data(), {}, 2);
  CHECK(again[1].report.to_text() == rows[1].report.to_text());
  CHECK_THROWS_AS(ablation_suite(c, small_data(), {}, 5), ConfigError);
}
