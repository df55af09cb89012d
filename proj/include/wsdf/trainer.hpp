#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wsdf/checkpoint.hpp"
#include "wsdf/dataset.hpp"
#include "wsdf/evaluation.hpp"
#include "wsdf/losses.hpp"
#include "wsdf/networks.hpp"
#include "wsdf/neutral_bank.hpp"

namespace wsdf {

struct DataConfig {
  std::string kind = "synthetic";  // "synthetic" or "directory"
  SyntheticConfig synthetic;
  std::string path;                // directory layout <subject>/<scan>.obj
  std::string template_path;       // OBJ providing the topology
  std::string ground_truth_path;   // optional <subject>.obj neutrals
  double test_fraction = 0.3;
  double unit_scale = 1.0;
  bool align = false;
  bool labels_from_stem = false;
  double pca_drop = 0.05;
  bool withhold_labels = false;    // strip every expression label after loading
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  LossWeights weights;
  double beta = 0.9;
  SamplerConfig sampler;
  int epochs = 100;
  int max_steps = 0;  // 0: no cap
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Master seed; model, sampler and noise streams are derived from it.
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs, 0: final only
  bool enable_neutral_bank = true;
  bool enable_jac = true;
  bool enable_mi = true;
  IdentityRemoval identity_removal = IdentityRemoval::ZeroCode;

  void validate() const;
};

// JSON text with every field; unknown keys are rejected.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
// "a.b.c=value", value parsed as JSON when possible, else as a string.
void apply_override(TrainConfig& cfg, const std::string& assignment);
// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_fingerprint(const TrainConfig& cfg);

struct PreparedData {
  TopologyPtr topology;
  DatasetSplit split;  // train already quality-filtered
  std::map<std::string, FaceMesh> ground_truth;
  NormalizationStats stats;
  std::vector<std::pair<std::string, std::string>> rejected;
  std::vector<std::string> warnings;
  std::size_t filtered_out = 0;
};

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed);

class AdamW {
 public:
  AdamW(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps,
        double weight_decay);

  void zero_grad();
  void step();
  std::uint64_t steps() const { return t_; }

  NamedTensors state() const;
  void load_state(const NamedTensors& state, std::uint64_t steps);

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, b1_, b2_, eps_, wd_;
  std::uint64_t t_ = 0;
};

// What a step saw, reported before the bank is updated.
struct StepProbe {
  int step = 0;
  const TrainingBatch* batch = nullptr;
  const Matrix* bank_targets = nullptr;  // rows used by L_neu
  const Vector* alpha = nullptr;
  LossBreakdown loss;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const PreparedData& data);

  LossBreakdown step();
  LossBreakdown step(const TrainingBatch& batch);

  int steps_done() const { return step_; }
  int steps_per_epoch() const { return sampler_->batches_per_epoch(); }
  const TrainConfig& config() const { return cfg_; }
  WsdfModel& model() { return *model_; }
  const WsdfModel& model() const { return *model_; }
  const NeutralBank& bank() const { return bank_; }
  const TrainingSet& training_set() const { return set_; }
  const NormalizationStats& stats() const { return stats_; }

  void set_probe(std::function<void(const StepProbe&)> probe) { probe_ = std::move(probe); }
  // Where the offending batch goes when a step produces a non-finite loss.
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  // Writes the batch to the dump directory and throws NumericalAbort.
  [[noreturn]] void abort_step(const TrainingBatch& batch, const std::string& msg) const;

  TrainConfig cfg_;
  NormalizationStats stats_;
  TrainingSet set_;
  std::unique_ptr<WsdfModel> model_;
  std::unique_ptr<IdentityAwareSampler> sampler_;
  std::unique_ptr<AdamW> opt_;
  NeutralBank bank_;
  std::mt19937_64 noise_rng_;
  int step_ = 0;
  std::function<void(const StepProbe&)> probe_;
  std::filesystem::path dump_dir_;
};

// Derived stream seed; stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<WsdfModel> model;
  NormalizationStats stats;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_path);
LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

struct RunOptions {
  std::filesystem::path out_dir;
  bool evaluate = true;
  bool quiet = true;
  std::optional<std::filesystem::path> resume;
};

struct TrainOutcome {
  std::vector<std::pair<int, LossBreakdown>> log;
  std::filesystem::path checkpoint;
  std::optional<MetricsReport> report;
};

// Writes metrics.tsv (step rec kl neu jac mi total), config.json,
// model.ckpt and, when evaluating, report.txt under out_dir.
TrainOutcome train(const TrainConfig& cfg, const PreparedData& data, const RunOptions& opts);

void write_loss_log(const std::filesystem::path& path, const std::vector<std::pair<int, LossBreakdown>>& log);
std::vector<std::pair<int, LossBreakdown>> read_loss_log(const std::filesystem::path& path);

// Evaluates on the test split (all scans when the split has no test part).
MetricsReport evaluate(const LoadedModel& loaded, const PreparedData& data, const EvalOptions& opts,
                       std::vector<SampleOutputs>* outputs = nullptr);

struct AblationRow {
  std::string label;
  MetricsReport report;
};

// Cumulative ladder baseline, + neu. bank, + jac. loss, + mi. loss with a
// shared seed. Each run lands in out_dir/<index>_<slug>.
std::vector<AblationRow> ablation_suite(const TrainConfig& base, const PreparedData& data,
                                        const std::filesystem::path& out_dir, int rows = 4);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace wsdf
