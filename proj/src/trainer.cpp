#include "wsdf/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wsdf/mesh_io.hpp"

namespace wsdf {
namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

const char* arch_name(EncoderArch a) { return a == EncoderArch::Spiral ? "spiral" : "perceptron"; }
const char* norm_name(FeatureNorm n) { return n == FeatureNorm::Instance ? "instance" : "none"; }
const char* removal_name(IdentityRemoval r) {
  return r == IdentityRemoval::ZeroCode ? "zero_code" : "subject_mean_code";
}

json to_json(const TrainConfig& c) {
  const auto& s = c.data.synthetic;
  const auto& e = c.model.encoder;
  return json{
      {"data",
       {{"kind", c.data.kind},
        {"synthetic",
         {{"grid_nx", s.grid_nx}, {"grid_ny", s.grid_ny}, {"subjects", s.subjects},
          {"expressions", s.expressions}, {"identity_dim", s.identity_dim},
          {"expression_dim", s.expression_dim}, {"face_width_mm", s.face_width_mm},
          {"identity_rms_mm", s.identity_rms_mm}, {"expression_rms_mm", s.expression_rms_mm},
          {"coupling", s.coupling}, {"noise_fraction", s.noise_fraction},
          {"center_expressions", s.center_expressions}, {"test_fraction", s.test_fraction},
          {"spiral_length", s.spiral_length}, {"seed", s.seed}}},
        {"path", c.data.path},
        {"template_path", c.data.template_path},
        {"ground_truth_path", c.data.ground_truth_path},
        {"test_fraction", c.data.test_fraction},
        {"unit_scale", c.data.unit_scale},
        {"align", c.data.align},
        {"labels_from_stem", c.data.labels_from_stem},
        {"pca_drop", c.data.pca_drop},
        {"withhold_labels", c.data.withhold_labels}}},
      {"model",
       {{"encoder",
         {{"arch", arch_name(e.arch)}, {"channels", e.channels}, {"pool_factor", e.pool_factor},
          {"mlp_hidden", e.mlp_hidden}, {"d_id", e.d_id}, {"d_exp", e.d_exp},
          {"spiral_length", e.spiral_length}, {"norm", norm_name(e.norm)},
          {"logvar_bias_init", e.logvar_bias_init}}},
        {"generator", {{"hidden", c.model.generator.hidden}}},
        {"recoupled_dim", c.model.recoupled_dim}}},
      {"weights",
       {{"lambda_neu", c.weights.lambda_neu}, {"lambda_jac", c.weights.lambda_jac},
        {"lambda_mi", c.weights.lambda_mi}, {"gamma", c.weights.gamma}}},
      {"beta", c.beta},
      {"sampler", {{"ids_per_batch", c.sampler.ids_per_batch}, {"scans_per_id", c.sampler.scans_per_id}}},
      {"epochs", c.epochs},
      {"max_steps", c.max_steps},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"enable_neutral_bank", c.enable_neutral_bank},
      {"enable_jac", c.enable_jac},
      {"enable_mi", c.enable_mi},
      {"identity_removal", removal_name(c.identity_removal)}};
}

void check_known(const json& user, const json& defaults, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (it.value().is_object()) {
      if (!defaults.at(it.key()).is_object()) throw ConfigError("config key '" + key + "' is not a section");
      check_known(it.value(), defaults.at(it.key()), key + ".");
    }
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

TrainConfig from_json(const json& j) {
  TrainConfig c;
  const json& d = j.at("data");
  get(d, "kind", c.data.kind);
  const json& s = d.at("synthetic");
  auto& sc = c.data.synthetic;
  get(s, "grid_nx", sc.grid_nx);
  get(s, "grid_ny", sc.grid_ny);
  get(s, "subjects", sc.subjects);
  get(s, "expressions", sc.expressions);
  get(s, "identity_dim", sc.identity_dim);
  get(s, "expression_dim", sc.expression_dim);
  get(s, "face_width_mm", sc.face_width_mm);
  get(s, "identity_rms_mm", sc.identity_rms_mm);
  get(s, "expression_rms_mm", sc.expression_rms_mm);
  get(s, "coupling", sc.coupling);
  get(s, "noise_fraction", sc.noise_fraction);
  get(s, "center_expressions", sc.center_expressions);
  get(s, "test_fraction", sc.test_fraction);
  get(s, "spiral_length", sc.spiral_length);
  get(s, "seed", sc.seed);
  get(d, "path", c.data.path);
  get(d, "template_path", c.data.template_path);
  get(d, "ground_truth_path", c.data.ground_truth_path);
  get(d, "test_fraction", c.data.test_fraction);
  get(d, "unit_scale", c.data.unit_scale);
  get(d, "align", c.data.align);
  get(d, "labels_from_stem", c.data.labels_from_stem);
  get(d, "pca_drop", c.data.pca_drop);
  get(d, "withhold_labels", c.data.withhold_labels);

  const json& e = j.at("model").at("encoder");
  auto& ec = c.model.encoder;
  std::string arch, norm;
  get(e, "arch", arch);
  if (arch == "spiral") ec.arch = EncoderArch::Spiral;
  else if (arch == "perceptron") ec.arch = EncoderArch::Perceptron;
  else throw ConfigError("model.encoder.arch must be 'spiral' or 'perceptron'");
  get(e, "channels", ec.channels);
  get(e, "pool_factor", ec.pool_factor);
  get(e, "mlp_hidden", ec.mlp_hidden);
  get(e, "d_id", ec.d_id);
  get(e, "d_exp", ec.d_exp);
  get(e, "spiral_length", ec.spiral_length);
  get(e, "norm", norm);
  get(e, "logvar_bias_init", ec.logvar_bias_init);
  if (norm == "instance") ec.norm = FeatureNorm::Instance;
  else if (norm == "none") ec.norm = FeatureNorm::None;
  else throw ConfigError("model.encoder.norm must be 'instance' or 'none'");
  get(j.at("model").at("generator"), "hidden", c.model.generator.hidden);
  get(j.at("model"), "recoupled_dim", c.model.recoupled_dim);

  const json& w = j.at("weights");
  get(w, "lambda_neu", c.weights.lambda_neu);
  get(w, "lambda_jac", c.weights.lambda_jac);
  get(w, "lambda_mi", c.weights.lambda_mi);
  get(w, "gamma", c.weights.gamma);
  get(j, "beta", c.beta);
  get(j.at("sampler"), "ids_per_batch", c.sampler.ids_per_batch);
  get(j.at("sampler"), "scans_per_id", c.sampler.scans_per_id);
  get(j, "epochs", c.epochs);
  get(j, "max_steps", c.max_steps);
  get(j, "lr", c.lr);
  get(j, "weight_decay", c.weight_decay);
  get(j, "adam_beta1", c.adam_beta1);
  get(j, "adam_beta2", c.adam_beta2);
  get(j, "adam_eps", c.adam_eps);
  get(j, "seed", c.seed);
  get(j, "checkpoint_every", c.checkpoint_every);
  get(j, "enable_neutral_bank", c.enable_neutral_bank);
  get(j, "enable_jac", c.enable_jac);
  get(j, "enable_mi", c.enable_mi);
  std::string removal;
  get(j, "identity_removal", removal);
  if (removal == "zero_code") c.identity_removal = IdentityRemoval::ZeroCode;
  else if (removal == "subject_mean_code") c.identity_removal = IdentityRemoval::SubjectMeanCode;
  else throw ConfigError("identity_removal must be 'zero_code' or 'subject_mean_code'");
  c.validate();
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam moments must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (data.kind != "synthetic" && data.kind != "directory") {
    throw ConfigError("data.kind must be 'synthetic' or 'directory'");
  }
  if (!(data.pca_drop >= 0.0 && data.pca_drop < 1.0)) throw ConfigError("data.pca_drop must lie in [0, 1)");
  if (!(data.unit_scale > 0.0)) throw ConfigError("data.unit_scale must be > 0");
  if (model.encoder.d_id < 1 || model.encoder.d_exp < 1) throw ConfigError("latent sizes must be >= 1");
  if (model.encoder.channels.empty() && model.encoder.arch == EncoderArch::Spiral) {
    throw ConfigError("spiral encoder needs at least one stage");
  }
  try {
    weights.validate();
    sampler.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

std::string config_to_json(const TrainConfig& cfg) { return to_json(cfg).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json merged = to_json(TrainConfig{});
  check_known(user, merged, "");
  merged.merge_patch(user);
  return from_json(merged);
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  std::string pointer = "/" + key;
  for (char& ch : pointer) if (ch == '.') ch = '/';
  json j = to_json(cfg);
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  j[ptr] = value;
  cfg = from_json(j);
}

std::string config_fingerprint(const TrainConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finaliser over the pair.
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------- data

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed) {
  PreparedData out;
  if (cfg.kind == "synthetic") {
    SyntheticDataset data = generate_synthetic(make_synthetic_spec(cfg.synthetic));
    out.topology = data.spec.topology;
    out.split = std::move(data.split);
    out.ground_truth = std::move(data.ground_truth);
  } else {
    if (cfg.path.empty()) throw ConfigError("data.path is required for directory datasets");
    if (cfg.template_path.empty()) throw ConfigError("data.template_path is required for directory datasets");
    ObjMesh tmpl;
    try {
      tmpl = read_obj(cfg.template_path);
    } catch (const Error& e) {
      throw DataError(e.what());
    }
    out.topology = Topology::create(static_cast<int>(tmpl.vertices.rows()), tmpl.faces, 9, {},
                                    tmpl.vertices * cfg.unit_scale);
    LoadOptions lo;
    lo.test_fraction = cfg.test_fraction;
    lo.seed = derive_seed(seed, 11);
    lo.label_from_stem = cfg.labels_from_stem;
    lo.unit_scale = cfg.unit_scale;
    lo.align = cfg.align;
    LoadReport rep = load_registered_dataset(cfg.path, out.topology, lo);
    out.split = std::move(rep.split);
    out.rejected = std::move(rep.rejected);
    out.warnings = std::move(rep.warnings);
    if (!cfg.ground_truth_path.empty()) {
      out.ground_truth = load_ground_truth(cfg.ground_truth_path, out.topology, cfg.unit_scale);
    }
  }
  if (out.split.train.empty()) throw DataError("no training scans");
  if (cfg.withhold_labels) {
    for (auto& r : out.split.train) r.expression_label.reset();
    for (auto& r : out.split.test) r.expression_label.reset();
  }
  if (cfg.pca_drop > 0.0 && out.split.train.size() >= 2) {
    const std::size_t before = out.split.train.size();
    out.split.train = pca_quality_filter(std::move(out.split.train), cfg.pca_drop);
    out.filtered_out = before - out.split.train.size();
  }
  std::vector<const FaceMesh*> ptrs;
  for (const auto& r : out.split.train) ptrs.push_back(&r.mesh);
  out.stats = NormalizationStats::fit(ptrs);
  return out;
}

// ---------------------------------------------------------------- optimizer

AdamW::AdamW(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    p.value *= 1.0 - lr_ * wd_;
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

NamedTensors AdamW::state() const {
  NamedTensors s;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    s.emplace_back("m/" + params_[i]->name, m_[i]);
    s.emplace_back("v/" + params_[i]->name, v_[i]);
  }
  return s;
}

void AdamW::load_state(const NamedTensors& state, std::uint64_t steps) {
  std::map<std::string, const Matrix*> byname;
  for (const auto& [k, m] : state) byname[k] = &m;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto* slot : {&m_[i], &v_[i]}) {
      const std::string key = (slot == &m_[i] ? "m/" : "v/") + params_[i]->name;
      auto it = byname.find(key);
      if (it == byname.end()) throw DataError("optimizer state missing " + key);
      if (it->second->rows() != slot->rows() || it->second->cols() != slot->cols()) {
        throw DataError("optimizer state shape mismatch for " + key);
      }
      *slot = *it->second;
    }
  }
  t_ = steps;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const TrainConfig& cfg, const PreparedData& data)
    : cfg_(cfg), stats_(data.stats), bank_(cfg.beta), noise_rng_(derive_seed(cfg.seed, 3)) {
  cfg_.validate();
  set_ = TrainingSet::build(data.split.train, stats_);
  ModelConfig mc = cfg_.model;
  mc.seed = derive_seed(cfg_.seed, 1);
  model_ = std::make_unique<WsdfModel>(mc, data.topology);
  SamplerConfig sc = cfg_.sampler;
  sc.seed = derive_seed(cfg_.seed, 2);
  sampler_ = std::make_unique<IdentityAwareSampler>(set_, sc);
  opt_ = std::make_unique<AdamW>(model_->parameters(), cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps,
                                 cfg_.weight_decay);
}

LossBreakdown Trainer::step() { return step(sampler_->next()); }

void Trainer::abort_step(const TrainingBatch& batch, const std::string& msg) const {
  fs::path dump;
  if (!dump_dir_.empty()) {
    fs::create_directories(dump_dir_);
    dump = dump_dir_ / ("abort_step" + std::to_string(step_) + ".bin");
    const Eigen::Index rows = batch.coords.rows();
    std::vector<Vertices> meshes;
    for (Eigen::Index r = 0; r < rows; ++r) {
      meshes.push_back(Eigen::Map<const Vertices>(batch.coords.row(r).data(), batch.coords.cols() / 3, 3));
    }
    write_mesh_batch(dump, meshes);
    std::ofstream subj(dump.string() + ".subjects");
    for (Eigen::Index r = 0; r < rows; ++r) {
      subj << batch.group_subjects[static_cast<std::size_t>(batch.group_of_row[static_cast<std::size_t>(r)])] << '\n';
    }
  }
  throw NumericalAbort(msg, dump.string());
}

LossBreakdown Trainer::step(const TrainingBatch& batch) {
  const int B = static_cast<int>(batch.coords.rows());
  const int d_id = model_->d_id(), d_exp = model_->d_exp();
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix eps_id(B, d_id), eps_exp(B, d_exp);
  for (int r = 0; r < B; ++r) {
    for (int k = 0; k < d_id; ++k) eps_id(r, k) = unit(noise_rng_);
    for (int k = 0; k < d_exp; ++k) eps_exp(r, k) = unit(noise_rng_);
  }

  ad::Tape tape;
  const ad::Var x = tape.constant(batch.coords);
  const auto enc = model_->encode(tape, x);
  for (const ad::Var* v : {&enc.id.mu, &enc.id.logvar, &enc.exp.mu, &enc.exp.logvar}) {
    if (!v->value().allFinite()) abort_step(batch, "non-finite encoder output at step " + std::to_string(step_));
  }
  const ad::Var z_id = reparameterize(enc.id.mu, enc.id.logvar, eps_id);
  const ad::Var z_exp = reparameterize(enc.exp.mu, enc.exp.logvar, eps_exp);
  const ad::Var x_rec = model_->decode(tape, z_id, z_exp);
  const ad::Var x_neu = model_->decode(tape, z_id, tape.constant(Matrix::Zero(B, d_exp)));

  LossTerms terms;
  terms.rec = loss_rec(x, x_rec);
  terms.kl = loss_kl(enc.id.mu, enc.id.logvar, enc.exp.mu, enc.exp.logvar);

  Matrix targets = Matrix::Zero(B, x_neu.cols());
  Vector alpha = Vector::Zero(B);
  if (cfg_.enable_neutral_bank) {
    for (int r = 0; r < B; ++r) {
      const std::string& sid = batch.group_subjects[static_cast<std::size_t>(batch.group_of_row[r])];
      if (const BankEntry* e = bank_.find(sid)) {
        targets.row(r) = e->mesh.transpose();
        alpha(r) = confidence(set_.scans_of(sid));
      }
    }
    terms.neu = loss_neu(x_neu, targets, alpha);
  }
  if (cfg_.enable_jac) {
    const JvpProvider jvp = [&](const ad::Var& z, const ad::Var& t) {
      return model_->decode_jvp_exp(tape, z_id, z, t).tangent;
    };
    terms.jac = loss_jac(z_exp, x_rec, x_neu, jvp, cfg_.weights.gamma).loss;
  }
  if (cfg_.enable_mi) terms.mi = loss_mi(enc.id.mu, batch.group_of_row);

  const ad::Var total = total_loss(tape, terms, cfg_.weights);
  const LossBreakdown lb = breakdown(terms, cfg_.weights);
  if (!std::isfinite(lb.total)) {
    char msg[256];
    std::snprintf(msg, sizeof msg, "non-finite loss at step %d (rec=%g kl=%g neu=%g jac=%g mi=%g)", step_, lb.rec,
                  lb.kl, lb.neu, lb.jac, lb.mi);
    abort_step(batch, msg);
  }

  opt_->zero_grad();
  tape.backward(total);
  opt_->step();

  if (probe_) probe_(StepProbe{step_, &batch, &targets, &alpha, lb});

  if (cfg_.enable_neutral_bank) {
    const Matrix& rec = x_rec.value();
    for (std::size_t g = 0; g < batch.group_subjects.size(); ++g) {
      std::vector<int> rows;
      for (int r = 0; r < B; ++r) if (batch.group_of_row[r] == static_cast<int>(g)) rows.push_back(r);
      Matrix sub(static_cast<Eigen::Index>(rows.size()), rec.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = rec.row(rows[k]);
      bank_.update(batch.group_subjects[g], sub);
    }
  }
  ++step_;
  return lb;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config_json = config_to_json(cfg_);
  const Topology& topo = *model_->topology();
  c.vertex_count = topo.vertex_count();
  c.faces = topo.faces();
  c.reference = topo.reference();
  c.stats = stats_;
  for (const auto* p : model_->parameters()) c.parameters.emplace_back(p->name, p->value);
  c.bank_beta = bank_.beta();
  c.bank = bank_.entries();
  c.optimizer = opt_->state();
  c.state["step"] = std::to_string(step_);
  c.state["optimizer_steps"] = std::to_string(opt_->steps());
  std::ostringstream rng;
  rng << noise_rng_;
  c.state["noise_rng"] = rng.str();
  c.state["sampler"] = sampler_->save_state();
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  if (c.vertex_count != model_->vertex_count() || c.faces != model_->topology()->faces()) {
    throw DataError("checkpoint topology does not match the dataset");
  }
  std::map<std::string, const Matrix*> byname;
  for (const auto& [k, m] : c.parameters) byname[k] = &m;
  for (auto* p : model_->parameters()) {
    auto it = byname.find(p->name);
    if (it == byname.end()) throw DataError("checkpoint lacks parameter " + p->name);
    if (it->second->rows() != p->value.rows() || it->second->cols() != p->value.cols()) {
      throw DataError("checkpoint parameter shape mismatch for " + p->name);
    }
    p->value = *it->second;
  }
  stats_ = c.stats;
  bank_ = NeutralBank(c.bank_beta);
  for (const auto& [sid, e] : c.bank) bank_.restore(sid, e);
  opt_->load_state(c.optimizer, std::stoull(c.state.at("optimizer_steps")));
  step_ = std::stoi(c.state.at("step"));
  std::istringstream rng(c.state.at("noise_rng"));
  rng >> noise_rng_;
  sampler_->load_state(c.state.at("sampler"));
}

LoadedModel model_from_checkpoint(const Checkpoint& c) {
  LoadedModel lm;
  lm.config = config_from_json(c.config_json);
  auto topo = Topology::create(c.vertex_count, c.faces, lm.config.model.encoder.spiral_length, {}, c.reference);
  ModelConfig mc = lm.config.model;
  mc.seed = derive_seed(lm.config.seed, 1);
  lm.model = std::make_unique<WsdfModel>(mc, topo);
  std::map<std::string, const Matrix*> byname;
  for (const auto& [k, m] : c.parameters) byname[k] = &m;
  for (auto* p : lm.model->parameters()) {
    auto it = byname.find(p->name);
    if (it == byname.end()) throw DataError("checkpoint lacks parameter " + p->name);
    if (it->second->rows() != p->value.rows() || it->second->cols() != p->value.cols()) {
      throw DataError("checkpoint parameter shape mismatch for " + p->name);
    }
    p->value = *it->second;
  }
  lm.stats = c.stats;
  return lm;
}

LoadedModel load_model(const fs::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

void write_loss_log(const fs::path& path, const std::vector<std::pair<int, LossBreakdown>>& log) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "step\trec\tkl\tneu\tjac\tmi\ttotal\n";
  char buf[512];
  for (const auto& [step, l] : log) {
    std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", step, l.rec, l.kl, l.neu,
                  l.jac, l.mi, l.total);
    os << buf;
  }
}

std::vector<std::pair<int, LossBreakdown>> read_loss_log(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "step\trec\tkl\tneu\tjac\tmi\ttotal") throw DataError(path.string() + ": bad metrics header");
  std::vector<std::pair<int, LossBreakdown>> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int step = 0;
    LossBreakdown l;
    if (!(ls >> step >> l.rec >> l.kl >> l.neu >> l.jac >> l.mi >> l.total)) {
      throw DataError(path.string() + ": malformed metrics line");
    }
    out.emplace_back(step, l);
  }
  return out;
}

MetricsReport evaluate(const LoadedModel& lm, const PreparedData& data, const EvalOptions& opts,
                       std::vector<SampleOutputs>* outputs) {
  if (!lm.model->topology()->same_layout(*data.topology) &&
      (lm.model->vertex_count() != data.topology->vertex_count() ||
       lm.model->topology()->faces() != data.topology->faces())) {
    throw DataError("checkpoint topology does not match the dataset");
  }
  const auto& scans = data.split.test.empty() ? data.split.train : data.split.test;
  // Scans keep their dataset topology; metrics only need matching layouts.
  std::vector<ScanRecord> rebound;
  rebound.reserve(scans.size());
  for (const auto& s : scans) {
    rebound.push_back(ScanRecord{FaceMesh(lm.model->topology(), s.mesh.vertices()), s.subject_id,
                                 s.expression_label, s.source_tag, s.path});
  }
  std::map<std::string, FaceMesh> gt;
  for (const auto& [k, m] : data.ground_truth) gt.emplace(k, FaceMesh(lm.model->topology(), m.vertices()));
  return evaluate_model(*lm.model, lm.stats, rebound, gt.empty() ? nullptr : &gt,
                        config_fingerprint(lm.config), opts, outputs);
}

TrainOutcome train(const TrainConfig& cfg, const PreparedData& data, const RunOptions& opts) {
  TrainOutcome out;
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
  Trainer trainer(cfg, data);
  trainer.set_dump_dir(opts.out_dir);
  if (opts.resume) {
    trainer.restore(load_checkpoint(*opts.resume));
    const fs::path old_log = opts.resume->parent_path() / "metrics.tsv";
    if (fs::exists(old_log)) {
      for (auto& row : read_loss_log(old_log)) {
        if (row.first < trainer.steps_done()) out.log.push_back(row);
      }
    }
  }
  const int per_epoch = trainer.steps_per_epoch();
  int total_steps = cfg.epochs * per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  const fs::path ckpt = opts.out_dir / "model.ckpt";
  if (!opts.out_dir.empty()) {
    std::ofstream(opts.out_dir / "config.json") << config_to_json(cfg) << '\n';
  }
  while (trainer.steps_done() < total_steps) {
    const int s = trainer.steps_done();
    out.log.emplace_back(s, trainer.step());
    if (!opts.quiet && (s + 1) % per_epoch == 0) {
      const auto& l = out.log.back().second;
      std::fprintf(stderr, "epoch %d step %d total %.6g rec %.6g\n", (s + 1) / per_epoch, s + 1, l.total, l.rec);
    }
    if (cfg.checkpoint_every > 0 && !opts.out_dir.empty() && (s + 1) % (per_epoch * cfg.checkpoint_every) == 0) {
      save_checkpoint(ckpt, trainer.checkpoint());
      write_loss_log(opts.out_dir / "metrics.tsv", out.log);
    }
  }
  if (!opts.out_dir.empty()) {
    save_checkpoint(ckpt, trainer.checkpoint());
    write_loss_log(opts.out_dir / "metrics.tsv", out.log);
    out.checkpoint = ckpt;
  }
  if (opts.evaluate) {
    LoadedModel lm = model_from_checkpoint(trainer.checkpoint());
    EvalOptions eo;
    eo.identity_removal = cfg.identity_removal;
    out.report = evaluate(lm, data, eo);
    if (!opts.out_dir.empty()) std::ofstream(opts.out_dir / "report.txt") << out.report->to_text();
  }
  return out;
}

std::vector<AblationRow> ablation_suite(const TrainConfig& base, const PreparedData& data, const fs::path& out_dir,
                                        int rows) {
  static const char* kLabels[] = {"baseline", "+ neu. bank", "+ jac. loss", "+ mi. loss"};
  static const char* kSlugs[] = {"baseline", "neu_bank", "jac_loss", "mi_loss"};
  if (rows < 1 || rows > 4) throw ConfigError("ablation rows must be 1..4");
  std::vector<AblationRow> out;
  for (int i = 0; i < rows; ++i) {
    TrainConfig c = base;
    c.enable_neutral_bank = i >= 1;
    c.enable_jac = i >= 2;
    c.enable_mi = i >= 3;
    RunOptions ro;
    if (!out_dir.empty()) ro.out_dir = out_dir / (std::to_string(i) + "_" + kSlugs[i]);
    TrainOutcome o = train(c, data, ro);
    out.push_back(AblationRow{kLabels[i], *o.report});
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant\tE_avd.mean\tE_avd.median\tE_id.mean\tE_id.median\tE_exp.mean\tE_exp.median\tE_neu.mean\t"
        "E_neu.median\n";
  auto put = [&](const std::optional<Summary>& s) {
    char buf[64];
    if (s) {
      std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f", s->mean, s->median);
    } else {
      std::snprintf(buf, sizeof buf, "\t-\t-");
    }
    os << buf;
  };
  for (const auto& r : rows) {
    os << r.label;
    put(r.report.avd);
    put(r.report.id);
    put(r.report.exp);
    put(r.report.neu);
    os << '\n';
  }
  return os.str();
}

}  // namespace wsdf
