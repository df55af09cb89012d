#include "wsdf/networks.hpp"

#include <cmath>

namespace wsdf {

LatentCode reparameterize(const Vector& mu, const Vector& logvar, const Vector& noise, Branch branch) {
  if (mu.size() != logvar.size() || mu.size() != noise.size()) {
    throw ShapeError("reparameterize: dimension mismatch");
  }
  return {mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(noise), branch};
}

ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar, const Matrix& noise) {
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw ShapeError("reparameterize: noise shape mismatch");
  }
  ad::Tape& tape = *mu.tape();
  return ad::add(mu, ad::mul(ad::exp(ad::scale(logvar, 0.5)), tape.constant(noise)));
}

Linear::Linear(std::string name, int in, int out, std::mt19937_64& rng, bool with_bias, bool zero_init) {
  Matrix w = Matrix::Zero(in, out);
  if (!zero_init) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  }
  weight = ad::Parameter(name + ".weight", std::move(w));
  if (with_bias) bias = ad::Parameter(name + ".bias", Matrix::Zero(1, out));
}

ad::Var Linear::forward(ad::Tape& tape, const ad::Var& x) const {
  ad::Var y = ad::matmul(x, tape.param(weight));
  return has_bias() ? ad::add_row(y, tape.param(bias)) : y;
}

std::shared_ptr<const EncoderGeometry> EncoderGeometry::build(const TopologyPtr& topo,
                                                              const EncoderConfig& cfg) {
  auto geo = std::make_shared<EncoderGeometry>();
  const int stages = static_cast<int>(cfg.channels.size());
  TopologyPtr base = topo;
  if (topo->spiral_length() != cfg.spiral_length) {
    base = Topology::create(topo->vertex_count(), topo->faces(), cfg.spiral_length, {}, topo->reference());
  }
  geo->hierarchy = build_hierarchy(base, stages, cfg.pool_factor);
  for (int s = 0; s < stages; ++s) {
    geo->gathers.push_back(kernels::GatherIndex::from_topology(*geo->hierarchy.levels[s]));
    geo->pools.push_back(kernels::ClusterIndex::from_assignment(geo->hierarchy.cluster_of[s]));
  }
  return geo;
}

Encoder::Encoder(std::string prefix, const EncoderConfig& cfg, int latent_dim,
                 std::shared_ptr<const EncoderGeometry> geometry, int vertex_count, std::mt19937_64& rng)
    : cfg_(cfg), vertex_count_(vertex_count), geometry_(std::move(geometry)) {
  if (latent_dim < 1) throw ConfigError("Encoder: latent dim must be >= 1");
  int features = 0;
  if (cfg.arch == EncoderArch::Spiral) {
    if (!geometry_) throw ConfigError("Encoder: spiral architecture needs mesh geometry");
    int in_ch = 3;
    for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
      const int out_ch = cfg.channels[s];
      layers_.emplace_back(prefix + ".conv" + std::to_string(s), cfg.spiral_length * in_ch, out_ch, rng);
      in_ch = out_ch;
    }
    features = geometry_->hierarchy.levels.back()->vertex_count() * in_ch;
  } else {
    int in = vertex_count * 3;
    for (std::size_t s = 0; s < cfg.mlp_hidden.size(); ++s) {
      layers_.emplace_back(prefix + ".fc" + std::to_string(s), in, cfg.mlp_hidden[s], rng);
      in = cfg.mlp_hidden[s];
    }
    features = in;
  }
  mu_head_ = Linear(prefix + ".mu", features, latent_dim, rng);
  logvar_head_ = Linear(prefix + ".logvar", features, latent_dim, rng);
  logvar_head_.weight.value *= 0.1;
  logvar_head_.bias.value.setConstant(cfg.logvar_bias_init);
}

Encoder::Output Encoder::forward(ad::Tape& tape, const ad::Var& x) const {
  if (x.cols() != static_cast<Eigen::Index>(vertex_count_) * 3) {
    throw ShapeError("Encoder: expected " + std::to_string(vertex_count_ * 3) + " columns, got " +
                     std::to_string(x.cols()));
  }
  const int batch = static_cast<int>(x.rows());
  ad::Var h;
  if (cfg_.arch == EncoderArch::Spiral) {
    h = ad::reshape(x, static_cast<Eigen::Index>(batch) * vertex_count_, 3);
    int in_ch = 3;
    for (std::size_t s = 0; s < layers_.size(); ++s) {
      const int n_vert = geometry_->gathers[s].vertices;
      const int out_ch = cfg_.channels[s];
      h = layers_[s].forward(tape, ad::spiral_gather(h, batch, in_ch, geometry_->gathers[s]));
      if (cfg_.norm == FeatureNorm::Instance) h = ad::instance_norm(h, batch, n_vert, out_ch);
      h = ad::elu(h);
      h = ad::cluster_mean(h, batch, out_ch, geometry_->pools[s]);
      in_ch = out_ch;
    }
    h = ad::reshape(h, batch, h.value().size() / batch);
  } else {
    h = x;
    for (const Linear& layer : layers_) h = ad::elu(layer.forward(tape, h));
  }
  return {mu_head_.forward(tape, h), ad::clamp(logvar_head_.forward(tape, h), kLogvarMin, kLogvarMax)};
}

std::vector<ad::Parameter*> Encoder::parameters() {
  std::vector<ad::Parameter*> out;
  for (Linear& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (Linear* l : {&mu_head_, &logvar_head_}) {
    out.push_back(&l->weight);
    out.push_back(&l->bias);
  }
  return out;
}

std::vector<const ad::Parameter*> Encoder::parameters() const {
  auto mut = const_cast<Encoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const ad::Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Generator::Generator(const GeneratorConfig& cfg, int code_dim, int vertex_count, std::mt19937_64& rng)
    : code_dim_(code_dim) {
  int in = code_dim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    hidden_.emplace_back("generator.fc" + std::to_string(i), in, cfg.hidden[i], rng);
    in = cfg.hidden[i];
  }
  out_ = Linear("generator.out", in, vertex_count * 3, rng, /*with_bias=*/false, /*zero_init=*/true);
  base_ = ad::Parameter("generator.base", Matrix::Zero(1, vertex_count * 3));
}

ad::Var Generator::forward(ad::Tape& tape, const ad::Var& z) const {
  if (z.cols() != code_dim_) throw ShapeError("Generator: code dimension mismatch");
  if (!z.value().allFinite()) throw ValidationError("Generator: non-finite code");
  ad::Var h = z;
  for (const Linear& layer : hidden_) h = ad::elu(layer.forward(tape, h));
  return ad::add_row(out_.forward(tape, h), tape.param(base_));
}

Generator::Jvp Generator::forward_jvp(ad::Tape& tape, const ad::Var& z, const ad::Var& dz) const {
  if (z.cols() != code_dim_ || dz.cols() != code_dim_ || dz.rows() != z.rows()) {
    throw ShapeError("Generator: code/tangent dimension mismatch");
  }
  if (!z.value().allFinite()) throw ValidationError("Generator: non-finite code");
  ad::Var h = z;
  ad::Var dh = dz;
  for (const Linear& layer : hidden_) {
    const ad::Var w = tape.param(layer.weight);
    const ad::Var pre = ad::add_row(ad::matmul(h, w), tape.param(layer.bias));
    const ad::Var dpre = ad::matmul(dh, w);
    h = ad::elu(pre);
    dh = ad::mul(ad::elu_grad(pre), dpre);
  }
  const ad::Var w_out = tape.param(out_.weight);
  return {ad::add_row(ad::matmul(h, w_out), tape.param(base_)), ad::matmul(dh, w_out)};
}

std::vector<ad::Parameter*> Generator::parameters() {
  std::vector<ad::Parameter*> out;
  for (Linear& l : hidden_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&out_.weight);
  out.push_back(&base_);
  return out;
}

std::vector<const ad::Parameter*> Generator::parameters() const {
  auto mut = const_cast<Generator*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

namespace {
std::shared_ptr<const EncoderGeometry> geometry_for(const ModelConfig& cfg, const TopologyPtr& topo) {
  if (!topo) throw ValidationError("WsdfModel: null topology");
  if (cfg.encoder.arch != EncoderArch::Spiral) return nullptr;
  return EncoderGeometry::build(topo, cfg.encoder);
}
}  // namespace

WsdfModel::WsdfModel(const ModelConfig& cfg, TopologyPtr topology)
    : cfg_(cfg),
      topology_(std::move(topology)),
      geometry_(geometry_for(cfg, topology_)),
      init_rng_(cfg.seed),
      enc_id_("enc_id", cfg.encoder, cfg.encoder.d_id, geometry_, topology_->vertex_count(), init_rng_),
      enc_exp_("enc_exp", cfg.encoder, cfg.encoder.d_exp, geometry_, topology_->vertex_count(), init_rng_),
      recoupler_(cfg.recoupler(), init_rng_),
      generator_(cfg.generator, cfg.recoupler().out_dim(), topology_->vertex_count(), init_rng_) {}

WsdfModel::Encoded WsdfModel::encode(ad::Tape& tape, const ad::Var& x) const {
  return {enc_id_.forward(tape, x), enc_exp_.forward(tape, x)};
}

ad::Var WsdfModel::decode(ad::Tape& tape, const ad::Var& z_id, const ad::Var& z_exp) const {
  const ad::Var z = recoupler_.forward(tape.param(recoupler_.weights()), z_id, z_exp);
  return generator_.forward(tape, z);
}

Generator::Jvp WsdfModel::decode_jvp_exp(ad::Tape& tape, const ad::Var& z_id, const ad::Var& z_exp,
                                         const ad::Var& tangent) const {
  const Recoupler::Jvp r = recoupler_.forward_jvp_exp(tape.param(recoupler_.weights()), z_id, z_exp, tangent);
  return generator_.forward_jvp(tape, r.value, r.tangent);
}

std::pair<LatentGaussian, LatentGaussian> WsdfModel::encode(const Matrix& x) const {
  ad::Tape tape(false);
  const Encoded e = encode(tape, tape.constant(x));
  return {LatentGaussian{e.id.mu.value(), e.id.logvar.value()},
          LatentGaussian{e.exp.mu.value(), e.exp.logvar.value()}};
}

Matrix WsdfModel::decode(const Matrix& z_id, const Matrix& z_exp) const {
  ad::Tape tape(false);
  return decode(tape, tape.constant(z_id), tape.constant(z_exp)).value();
}

Matrix WsdfModel::generate(const Matrix& z) const {
  ad::Tape tape(false);
  return generator_.forward(tape, tape.constant(z)).value();
}

Matrix WsdfModel::jvp_generate(const Matrix& z, const Matrix& tangent) const {
  ad::Tape tape(false);
  return generator_.forward_jvp(tape, tape.constant(z), tape.constant(tangent)).tangent.value();
}

Matrix WsdfModel::jvp_decode_exp(const Matrix& z_id, const Matrix& z_exp, const Matrix& tangent) const {
  ad::Tape tape(false);
  return decode_jvp_exp(tape, tape.constant(z_id), tape.constant(z_exp), tape.constant(tangent))
      .tangent.value();
}

std::vector<ad::Parameter*> WsdfModel::parameters() {
  std::vector<ad::Parameter*> out = enc_id_.parameters();
  for (ad::Parameter* p : enc_exp_.parameters()) out.push_back(p);
  out.push_back(&recoupler_.weights());
  for (ad::Parameter* p : generator_.parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> WsdfModel::parameters() const {
  auto mut = const_cast<WsdfModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

ad::Parameter* WsdfModel::find_parameter(const std::string& name) {
  for (ad::Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

}  // namespace wsdf
