// wsdf command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// abort, 1 anything else. Relative output paths resolve against
// $WSDF_OUTPUT_ROOT (default: the working directory).

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "wsdf/evaluation.hpp"
#include "wsdf/figures.hpp"
#include "wsdf/mesh_io.hpp"
#include "wsdf/trainer.hpp"

namespace fs = std::filesystem;
using namespace wsdf;

namespace {

fs::path output_root() {
  const char* env = std::getenv("WSDF_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::current_path();
}

fs::path resolve_out(const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : output_root() / path;
}

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON config file");
    app->add_option("--set", overrides, "override a config field, e.g. --set weights.gamma=2");
    app->add_option("--epochs", epochs, "epochs");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--lr", lr, "learning rate");
  }

  TrainConfig build(TrainConfig base = {}) const {
    TrainConfig cfg = config.empty() ? base : load_config(config);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;
    if (lr) cfg.lr = *lr;
    cfg.validate();
    return cfg;
  }
};

void print_data_notes(const PreparedData& d) {
  for (const auto& w : d.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& [p, why] : d.rejected) std::fprintf(stderr, "rejected %s: %s\n", p.c_str(), why.c_str());
  if (d.filtered_out) std::fprintf(stderr, "quality filter dropped %zu training scans\n", d.filtered_out);
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Data for a frozen checkpoint: its own data section unless a config is given.
PreparedData checkpoint_data(const LoadedModel& lm, const ConfigArgs& args) {
  const TrainConfig cfg = args.build(lm.config);
  return prepare_data(cfg.data, cfg.seed);
}

const ScanRecord& pick_scan(const PreparedData& d, int index) {
  const auto& scans = d.split.test.empty() ? d.split.train : d.split.test;
  if (index < 0 || index >= static_cast<int>(scans.size())) {
    throw ConfigError("scan index " + std::to_string(index) + " outside 0.." + std::to_string(scans.size() - 1));
  }
  return scans[static_cast<std::size_t>(index)];
}

int run(int argc, char** argv) {
  CLI::App app{"Weakly-supervised 3D face disentanglement"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, ablate_args, interp_args, export_args;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset as OBJ files");
  gen_args.attach(gen);
  gen->add_option("-o,--out", gen_out, "output directory");

  std::string train_out = "run", resume;
  bool verbose = false;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_args.attach(train_cmd);
  train_cmd->add_option("-o,--out", train_out, "run directory");
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  std::string ckpt, eval_out, dump_path, removal;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  eval_args.attach(eval_cmd);
  eval_cmd->add_option("-k,--checkpoint", ckpt, "checkpoint")->required();
  eval_cmd->add_option("-o,--out", eval_out, "report file (stdout when omitted)");
  eval_cmd->add_option("--dump", dump_path, "per-sample dump file");
  eval_cmd->add_option("--identity-removal", removal, "zero_code or subject_mean_code");

  std::string ablate_out = "ablation";
  int ablate_rows = 4;
  auto* ablate = app.add_subcommand("ablate", "train the cumulative ablation ladder");
  ablate_args.attach(ablate);
  ablate->add_option("-o,--out", ablate_out, "output directory");
  ablate->add_option("--rows", ablate_rows, "number of ladder rows (1-4)");

  std::string interp_ckpt, interp_out = "interpolation", mode = "joint";
  int idx_a = 0, idx_b = 1, steps = 7;
  auto* interp = app.add_subcommand("interpolate", "decode a latent path between two test scans");
  interp_args.attach(interp);
  interp->add_option("-k,--checkpoint", interp_ckpt, "checkpoint")->required();
  interp->add_option("-a", idx_a, "index of the first test scan");
  interp->add_option("-b", idx_b, "index of the second test scan");
  interp->add_option("--steps", steps, "number of frames");
  interp->add_option("--mode", mode, "joint, id or exp")->check(CLI::IsMember({"joint", "id", "exp"}));
  interp->add_option("-o,--out", interp_out, "output directory");

  std::string export_ckpt, export_out = "latents.txt";
  auto* exp_cmd = app.add_subcommand("export-latents", "write posterior means of the test split");
  export_args.attach(exp_cmd);
  exp_cmd->add_option("-k,--checkpoint", export_ckpt, "checkpoint")->required();
  exp_cmd->add_option("-o,--out", export_out, "output file");

  std::string report_dir, report_fig;
  auto* report = app.add_subcommand("report", "summarise a run or ablation directory and draw figures");
  report->add_option("dir", report_dir, "run or ablation directory")->required();
  report->add_option("--figure", report_fig, "SVG bar chart path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    const TrainConfig cfg = gen_args.build();
    if (cfg.data.kind != "synthetic") throw ConfigError("generate-data needs data.kind = synthetic");
    const fs::path out = resolve_out(gen_out);
    const SyntheticDataset data = generate_synthetic(make_synthetic_spec(cfg.data.synthetic));
    write_dataset(out, data);
    write_text(out / "synthetic.json", config_to_json(cfg));
    std::printf("wrote %zu train / %zu test scans to %s\n", data.split.train.size(), data.split.test.size(),
                out.string().c_str());
  } else if (train_cmd->parsed()) {
    const TrainConfig cfg = train_args.build();
    const PreparedData data = prepare_data(cfg.data, cfg.seed);
    print_data_notes(data);
    RunOptions ro;
    ro.out_dir = resolve_out(train_out);
    ro.quiet = !verbose;
    if (!resume.empty()) ro.resume = fs::path(resume);
    const TrainOutcome o = train(cfg, data, ro);
    std::printf("checkpoint %s\n", o.checkpoint.string().c_str());
    if (o.report) std::printf("%s", o.report->to_text().c_str());
  } else if (eval_cmd->parsed()) {
    const LoadedModel lm = load_model(ckpt);
    const PreparedData data = checkpoint_data(lm, eval_args);
    EvalOptions eo;
    eo.identity_removal = lm.config.identity_removal;
    if (removal == "zero_code") eo.identity_removal = IdentityRemoval::ZeroCode;
    else if (removal == "subject_mean_code") eo.identity_removal = IdentityRemoval::SubjectMeanCode;
    else if (!removal.empty()) throw ConfigError("--identity-removal must be zero_code or subject_mean_code");
    std::vector<SampleOutputs> outs;
    const MetricsReport rep = evaluate(lm, data, eo, &outs);
    if (!dump_path.empty()) {
      std::map<std::string, FaceMesh> gt;
      for (const auto& [k, m] : data.ground_truth) gt.emplace(k, FaceMesh(lm.model->topology(), m.vertices()));
      write_sample_dump(resolve_out(dump_path), outs, gt.empty() ? nullptr : &gt);
    }
    if (eval_out.empty()) std::printf("%s", rep.to_text().c_str());
    else write_text(resolve_out(eval_out), rep.to_text());
  } else if (ablate->parsed()) {
    const TrainConfig cfg = ablate_args.build();
    const PreparedData data = prepare_data(cfg.data, cfg.seed);
    print_data_notes(data);
    const fs::path out = resolve_out(ablate_out);
    const auto rows = ablation_suite(cfg, data, out, ablate_rows);
    const std::string table = ablation_table(rows);
    write_text(out / "ablation.tsv", table);
    std::printf("%s", table.c_str());
  } else if (interp->parsed()) {
    const LoadedModel lm = load_model(interp_ckpt);
    const PreparedData data = checkpoint_data(lm, interp_args);
    const ScanRecord& a = pick_scan(data, idx_a);
    const ScanRecord& b = pick_scan(data, idx_b);
    const InterpolationMode m = mode == "joint" ? InterpolationMode::Joint
                                : mode == "id"  ? InterpolationMode::IdentityOnly
                                                : InterpolationMode::ExpressionOnly;
    const auto frames = interpolate(*lm.model, lm.stats, FaceMesh(lm.model->topology(), a.mesh.vertices()),
                                    FaceMesh(lm.model->topology(), b.mesh.vertices()), steps, m);
    const fs::path out = resolve_out(interp_out);
    fs::create_directories(out);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%02zu.obj", k);
      write_obj(out / name, frames[k], lm.model->topology()->faces());
    }
    write_mesh_strip_svg(out / "strip.svg", *lm.model->topology(), frames);
    std::printf("wrote %zu frames to %s\n", frames.size(), out.string().c_str());
  } else if (exp_cmd->parsed()) {
    const LoadedModel lm = load_model(export_ckpt);
    const PreparedData data = checkpoint_data(lm, export_args);
    const auto& scans = data.split.test.empty() ? data.split.train : data.split.test;
    std::vector<ScanRecord> rebound;
    for (const auto& s : scans) {
      rebound.push_back(ScanRecord{FaceMesh(lm.model->topology(), s.mesh.vertices()), s.subject_id,
                                   s.expression_label, s.source_tag, s.path});
    }
    const auto outs = run_inference(*lm.model, lm.stats, rebound);
    const fs::path out = resolve_out(export_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    export_latents(out, outs);
    std::printf("wrote %zu latent records to %s\n", outs.size(), out.string().c_str());
  } else if (report->parsed()) {
    const fs::path dir(report_dir);
    std::vector<std::string> groups{"E_avd", "E_id", "E_exp", "E_neu"};
    std::vector<BarSeries> series;
    auto add_series = [&](const std::string& label, const MetricsReport& r) {
      auto v = [](const std::optional<Summary>& s) { return s ? s->mean : std::nan(""); };
      series.push_back(BarSeries{label, {v(r.avd), v(r.id), v(r.exp), v(r.neu)}});
    };
    if (fs::exists(dir / "report.txt")) {
      const MetricsReport r = MetricsReport::from_text(read_text(dir / "report.txt"));
      std::printf("%s", r.to_text().c_str());
      add_series(dir.filename().string(), r);
    } else if (fs::exists(dir / "ablation.tsv")) {
      std::printf("%s", read_text(dir / "ablation.tsv").c_str());
      static const char* kLabels[] = {"baseline", "+ neu. bank", "+ jac. loss", "+ mi. loss"};
      static const char* kSlugs[] = {"baseline", "neu_bank", "jac_loss", "mi_loss"};
      for (int i = 0; i < 4; ++i) {
        const fs::path p = dir / (std::to_string(i) + "_" + kSlugs[i]) / "report.txt";
        if (fs::exists(p)) add_series(kLabels[i], MetricsReport::from_text(read_text(p)));
      }
    } else {
      throw DataError("no report.txt or ablation.tsv under " + dir.string());
    }
    if (!report_fig.empty()) {
      write_bar_chart_svg(resolve_out(report_fig), "mean metric values (mm)", groups, series);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    if (!e.dump_path().empty()) std::fprintf(stderr, "offending batch: %s\n", e.dump_path().c_str());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
