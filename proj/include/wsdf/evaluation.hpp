#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsdf/mesh.hpp"
#include "wsdf/networks.hpp"

namespace wsdf {

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

// Mean and exact median (mean of the two middle values for even counts).
Summary summarize(std::vector<double> values);

// Population std over every (mesh, vertex) of ||x(v) - mean(v)||.
double group_spread(const std::vector<const Vertices*>& meshes);

enum class IdentityRemoval { ZeroCode, SubjectMeanCode };

struct EvalOptions {
  IdentityRemoval identity_removal = IdentityRemoval::ZeroCode;
  int chunk = 64;
};

// Posterior-mean inference for one scan, coordinates in mm.
struct SampleOutputs {
  std::string subject_id;
  std::optional<std::string> expression_label;
  Vector mu_id;
  Vector mu_exp;
  Vertices input;
  Vertices recon;
  Vertices neutral;         // decode(mu_id, 0)
  Vertices identity_free;   // decode(canonical identity, mu_exp)
};

std::vector<SampleOutputs> run_inference(const WsdfModel& model, const NormalizationStats& stats,
                                         const std::vector<ScanRecord>& scans, const EvalOptions& opts = {});

struct MetricsReport {
  std::optional<Summary> avd;
  std::optional<Summary> id;
  std::optional<Summary> exp;
  std::optional<Summary> neu;
  std::size_t scan_count = 0;
  std::size_t subject_count = 0;
  std::string fingerprint;

  // key=value lines; absent metrics are written as "-".
  std::string to_text() const;
  static MetricsReport from_text(const std::string& text);
};

// Per-sample values behind a report.
struct MetricSamples {
  std::vector<double> avd;                   // per scan
  std::map<std::string, double> id;          // per subject with >= 2 scans
  std::map<std::string, double> exp;         // per label with >= 2 scans
  std::vector<double> neu;                   // per scan with a ground truth
};

MetricSamples compute_samples(const std::vector<SampleOutputs>& outputs,
                              const std::map<std::string, FaceMesh>* ground_truth);
MetricsReport summarize_samples(const MetricSamples& samples, std::size_t scan_count,
                                std::size_t subject_count, std::string fingerprint);

MetricsReport evaluate_model(const WsdfModel& model, const NormalizationStats& stats,
                             const std::vector<ScanRecord>& scans,
                             const std::map<std::string, FaceMesh>* ground_truth,
                             const std::string& fingerprint, const EvalOptions& opts = {},
                             std::vector<SampleOutputs>* outputs = nullptr);

// Mean AVD between each scan and its subject's ground-truth neutral.
Summary expression_deformation_scale(const std::vector<ScanRecord>& scans,
                                     const std::map<std::string, FaceMesh>& ground_truth);

// Text dump with every mesh written at %.17g, enough to recompute all
// metrics exactly. Each block: "sample <i> <subject> <label|-> <has_gt>"
// followed by input, recon, neutral, identity_free and (optionally) the
// ground-truth rows.
void write_sample_dump(const std::filesystem::path& path, const std::vector<SampleOutputs>& outputs,
                       const std::map<std::string, FaceMesh>* ground_truth);

struct DumpedSample {
  std::string subject_id;
  std::optional<std::string> expression_label;
  Vertices input, recon, neutral, identity_free;
  std::optional<Vertices> ground_truth;
};
std::vector<DumpedSample> read_sample_dump(const std::filesystem::path& path);

enum class InterpolationMode { Joint, IdentityOnly, ExpressionOnly };

// Linear latent paths from a to b, decoded at `steps` evenly spaced points.
// IdentityOnly moves z_id and keeps a's z_exp; ExpressionOnly the reverse.
std::vector<Vertices> interpolate(const WsdfModel& model, const NormalizationStats& stats,
                                  const FaceMesh& a, const FaceMesh& b, int steps, InterpolationMode mode);

// Header "subject_id expression_label id_0 .. exp_0 ..", one line per scan,
// values at %.17g, "-" for a missing label.
void export_latents(const std::filesystem::path& path, const std::vector<SampleOutputs>& outputs);

struct LatentRecord {
  std::string subject_id;
  std::optional<std::string> expression_label;
  Vector mu_id;
  Vector mu_exp;
};
std::vector<LatentRecord> read_latents(const std::filesystem::path& path);

}  // namespace wsdf
