#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "wsdf/autodiff.hpp"
#include "wsdf/decimation.hpp"
#include "wsdf/recoupler.hpp"

namespace wsdf {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

enum class EncoderArch { Spiral, Perceptron };
enum class FeatureNorm { Instance, None };

struct EncoderConfig {
  EncoderArch arch = EncoderArch::Spiral;
  std::vector<int> channels{16, 32, 64, 128};  // one spiral stage per entry
  int pool_factor = 4;
  std::vector<int> mlp_hidden{256, 128};  // perceptron fallback
  int d_id = 16;
  int d_exp = 16;
  int spiral_length = 9;
  FeatureNorm norm = FeatureNorm::Instance;
  double logvar_bias_init = -4.0;  // initial posterior log-variance
};

struct GeneratorConfig {
  std::vector<int> hidden{256, 256};
};

struct ModelConfig {
  EncoderConfig encoder;
  GeneratorConfig generator;
  int recoupled_dim = 0;  // 0 -> d_id + d_exp
  std::uint64_t seed = 0;

  RecouplerConfig recoupler() const { return {encoder.d_id, encoder.d_exp, recoupled_dim}; }
};

// Diagonal Gaussian posterior of one branch, batched over rows.
struct LatentGaussian {
  Matrix mu;
  Matrix logvar;
};

enum class Branch { Identity, Expression };

struct LatentCode {
  Vector values;
  Branch branch = Branch::Identity;
};

// mu + exp(logvar / 2) * noise.
LatentCode reparameterize(const Vector& mu, const Vector& logvar, const Vector& noise, Branch branch);
ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar, const Matrix& noise);

struct Linear {
  ad::Parameter weight;  // (in, out)
  ad::Parameter bias;    // (1, out), empty when bias-free

  Linear() = default;
  Linear(std::string name, int in, int out, std::mt19937_64& rng, bool with_bias = true,
         bool zero_init = false);
  ad::Var forward(ad::Tape& tape, const ad::Var& x) const;
  bool has_bias() const { return bias.value.size() > 0; }
};

// Encoder-side mesh geometry shared by both branches.
struct EncoderGeometry {
  MeshHierarchy hierarchy;
  std::vector<kernels::GatherIndex> gathers;   // per conv stage
  std::vector<kernels::ClusterIndex> pools;    // per conv stage

  static std::shared_ptr<const EncoderGeometry> build(const TopologyPtr& topo, const EncoderConfig& cfg);
};

class Encoder {
 public:
  Encoder(std::string prefix, const EncoderConfig& cfg, int latent_dim,
          std::shared_ptr<const EncoderGeometry> geometry, int vertex_count, std::mt19937_64& rng);

  struct Output {
    ad::Var mu;
    ad::Var logvar;
  };
  // x: (batch, vertex_count * 3) normalised meshes.
  Output forward(ad::Tape& tape, const ad::Var& x) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

 private:
  EncoderConfig cfg_;
  int vertex_count_;
  std::shared_ptr<const EncoderGeometry> geometry_;
  std::vector<Linear> layers_;  // spiral convs or hidden perceptron layers
  Linear mu_head_;
  Linear logvar_head_;
};

// Perceptron from the recoupled code to vertex offsets over a learned base
// mesh. The output layer starts at zero, so an untrained generator returns
// the base mesh.
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, int code_dim, int vertex_count, std::mt19937_64& rng);

  ad::Var forward(ad::Tape& tape, const ad::Var& z) const;
  struct Jvp {
    ad::Var value;
    ad::Var tangent;
  };
  Jvp forward_jvp(ad::Tape& tape, const ad::Var& z, const ad::Var& dz) const;

  int code_dim() const { return code_dim_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  int code_dim_;
  std::vector<Linear> hidden_;
  Linear out_;
  ad::Parameter base_;  // (1, vertex_count * 3)
};

// Two-branch encoder, recoupler and generator.
class WsdfModel {
 public:
  WsdfModel(const ModelConfig& cfg, TopologyPtr topology);

  const ModelConfig& config() const { return cfg_; }
  const TopologyPtr& topology() const { return topology_; }
  int vertex_count() const { return topology_->vertex_count(); }
  int d_id() const { return cfg_.encoder.d_id; }
  int d_exp() const { return cfg_.encoder.d_exp; }

  const Encoder& identity_encoder() const { return enc_id_; }
  const Encoder& expression_encoder() const { return enc_exp_; }
  const Recoupler& recoupler() const { return recoupler_; }
  const Generator& generator() const { return generator_; }

  // Graph versions; gradients are tracked when the tape has them enabled.
  struct Encoded {
    Encoder::Output id;
    Encoder::Output exp;
  };
  Encoded encode(ad::Tape& tape, const ad::Var& x) const;
  ad::Var decode(ad::Tape& tape, const ad::Var& z_id, const ad::Var& z_exp) const;
  // f(y) = G(R(z_id, y)) and J_f(z_exp) * tangent.
  Generator::Jvp decode_jvp_exp(ad::Tape& tape, const ad::Var& z_id, const ad::Var& z_exp,
                                const ad::Var& tangent) const;

  // Plain evaluation on normalised coordinates, batched over rows.
  std::pair<LatentGaussian, LatentGaussian> encode(const Matrix& x) const;
  Matrix decode(const Matrix& z_id, const Matrix& z_exp) const;
  // Generator alone on recoupled codes (batch, k).
  Matrix generate(const Matrix& z) const;
  Matrix jvp_generate(const Matrix& z, const Matrix& tangent) const;
  Matrix jvp_decode_exp(const Matrix& z_id, const Matrix& z_exp, const Matrix& tangent) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  ad::Parameter* find_parameter(const std::string& name);

 private:
  ModelConfig cfg_;
  TopologyPtr topology_;
  std::shared_ptr<const EncoderGeometry> geometry_;
  std::mt19937_64 init_rng_;
  Encoder enc_id_;
  Encoder enc_exp_;
  Recoupler recoupler_;
  Generator generator_;
};

}  // namespace wsdf
