#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf {

// Knobs of the synthetic multilinear face generator. Lengths are in mm.
struct SyntheticConfig {
  int grid_nx = 25;
  int grid_ny = 20;  // vertex_count = grid_nx * grid_ny
  int subjects = 30;
  int expressions = 11;  // index 0 is the neutral
  int identity_dim = 8;
  int expression_dim = 8;
  double face_width_mm = 150.0;
  double identity_rms_mm = 3.0;
  double expression_rms_mm = 3.0;
  // Relative strength of the subject-specific part of each expression.
  double coupling = 0.35;
  // Per-coordinate noise as a fraction of the RMS data deviation.
  double noise_fraction = 0.002;
  // Centre expression coefficients so they sum to zero over all expressions.
  bool center_expressions = true;
  double test_fraction = 0.3;
  int spiral_length = 9;
  std::uint64_t seed = 7;
};

// Fully drawn generator: scan(s, e) = mean + A a_s + (T x2 a_s x3 b_e) + noise.
// Identity coefficient 0 is fixed at 1, so T[:, 0, :] is the expression
// basis shared by all subjects and the other slices make expressions
// subject-specific. A[:, 0] is zero.
struct SyntheticFactorSpec {
  TopologyPtr topology;
  int subjects = 0;
  int expressions = 0;
  int identity_dim = 0;
  int expression_dim = 0;
  Matrix identity_basis;  // (V*3, d_a)
  Matrix core_tensor;     // (V*3, d_a * d_b), column i * d_b + j
  Vertices mean_mesh;
  Matrix identity_coeffs;    // (S, d_a)
  Matrix expression_coeffs;  // (E, d_b), row 0 all zero
  double noise_sigma = 0.0;  // mm
  double test_fraction = 0.3;
  std::uint64_t rng_seed = 0;

  int vertex_count() const { return topology->vertex_count(); }
  void validate() const;
  // Noise-free mean + A a_s + T x2 a_s x3 b_e, flattened.
  Vector clean_scan(int subject, int expression) const;
  Vector neutral(int subject) const;
};

SyntheticFactorSpec make_synthetic_spec(const SyntheticConfig& cfg);

struct DatasetSplit {
  std::vector<ScanRecord> train;
  std::vector<ScanRecord> test;
  std::set<std::string> held_out_subjects;
};

struct SyntheticDataset {
  SyntheticFactorSpec spec;
  DatasetSplit split;
  std::map<std::string, FaceMesh> ground_truth;  // subject -> exact neutral
};

std::string synthetic_subject_id(int s);
std::string synthetic_expression_label(int e);

SyntheticDataset generate_synthetic(const SyntheticFactorSpec& spec);

// Writes scans/<subject>/<label>.obj, ground_truth/<subject>.obj,
// template.obj and manifest.tsv under root.
void write_dataset(const std::filesystem::path& root, const SyntheticDataset& data);

struct LoadOptions {
  double test_fraction = 0.3;
  std::uint64_t seed = 0;
  bool label_from_stem = false;  // expression label = file stem (evaluation only)
  double unit_scale = 1.0;       // multiply coordinates into mm
  bool align = false;            // rigid-align every scan to the template reference
};

struct LoadReport {
  DatasetSplit split;
  std::vector<std::pair<std::string, std::string>> rejected;  // path, reason
  std::vector<std::string> warnings;
};

// Layout <root>/<subject_id>/<scan_name>.obj. Files that do not match the
// topology are listed in the report instead of aborting the load.
LoadReport load_registered_dataset(const std::filesystem::path& root, const TopologyPtr& topology,
                                   const LoadOptions& opts = {});

// <root>/<subject>.obj ground-truth neutrals.
std::map<std::string, FaceMesh> load_ground_truth(const std::filesystem::path& root,
                                                  const TopologyPtr& topology, double unit_scale = 1.0);

// Line-delimited "subject_id<TAB>path<TAB>split" records.
void write_manifest(const std::filesystem::path& path, const DatasetSplit& split);
struct ManifestRecord {
  std::string subject_id;
  std::string path;
  std::string split;
};
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// Ranks scans by leave-one-out PCA reconstruction residual (components
// explaining `variance_kept` of the variance of the remaining scans) and
// drops the worst floor(drop_fraction * n). Survivors keep their order.
std::vector<ScanRecord> pca_quality_filter(std::vector<ScanRecord> scans, double drop_fraction,
                                           double variance_kept = 0.98);
// Residuals used by the filter, in input order.
std::vector<double> pca_loo_residuals(const std::vector<const FaceMesh*>& scans, double variance_kept);

// Training-side view of a scan: subject and normalised coordinates only.
struct TrainingScan {
  std::string subject_id;
  Vector coords;  // (V*3) normalised
};

struct TrainingSet {
  TopologyPtr topology;
  std::vector<TrainingScan> scans;
  std::map<std::string, std::vector<int>> by_subject;

  static TrainingSet build(const std::vector<ScanRecord>& records, const NormalizationStats& stats);
  int scans_of(const std::string& subject) const;
};

struct SamplerConfig {
  int ids_per_batch = 8;
  int scans_per_id = 4;
  std::uint64_t seed = 0;

  int batch_size() const { return ids_per_batch * scans_per_id; }
  void validate() const;
};

struct TrainingBatch {
  std::vector<std::string> group_subjects;  // one per group
  std::vector<int> group_of_row;
  std::vector<int> scan_index;  // into TrainingSet::scans
  Matrix coords;                // (batch, V*3)
};

// Draws ids_per_batch distinct subjects per batch from a reshuffled subject
// queue and scans_per_id scans of each from per-subject queues, so every scan
// is visited before any repeats; subjects with too few scans repeat within
// the group.
class IdentityAwareSampler {
 public:
  IdentityAwareSampler(const TrainingSet& set, const SamplerConfig& cfg);

  TrainingBatch next();
  // ceil(#scans / batch_size).
  int batches_per_epoch() const;

  // Text snapshot of the RNG and queues, for resuming a stream exactly.
  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  int draw_subject_scan(int subject);

  const TrainingSet* set_;
  SamplerConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::string> subjects_;
  std::vector<int> subject_queue_;
  std::vector<std::vector<int>> scan_queues_;
};

}  // namespace wsdf
