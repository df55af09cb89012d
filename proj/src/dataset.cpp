#include "wsdf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "wsdf/mesh_io.hpp"

namespace wsdf {
namespace fs = std::filesystem;

namespace {

// Sum of random low-frequency plane waves per coordinate, unit RMS overall.
Vertices smooth_field(const Vertices& ref, std::mt19937_64& rng) {
  std::normal_distribution<double> freq(0.0, 1.2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  Vertices f = Vertices::Zero(ref.rows(), 3);
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < 4; ++t) {
      const double fx = freq(rng), fy = freq(rng), ph = phase(rng), a = amp(rng);
      for (Eigen::Index v = 0; v < ref.rows(); ++v) {
        f(v, c) += a * std::cos(2.0 * std::numbers::pi * (fx * ref(v, 0) + fy * ref(v, 1)) + ph);
      }
    }
  }
  const double rms = std::sqrt(f.squaredNorm() / static_cast<double>(f.size()));
  return rms > 0.0 ? Vertices(f / rms) : f;
}

Vector flatten(const Vertices& v) {
  return Eigen::Map<const Vector>(v.data(), v.size());
}

std::vector<std::string> sorted_subjects(const std::vector<ScanRecord>& recs) {
  std::set<std::string> s;
  for (const auto& r : recs) s.insert(r.subject_id);
  return {s.begin(), s.end()};
}

// Subject-disjoint split: ceil(test_fraction * n) subjects go to test.
std::set<std::string> choose_held_out(std::vector<std::string> subjects, double test_fraction,
                                      std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in [0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(subjects.size())));
  return {subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, subjects.size()))};
}

void assign_split(std::vector<ScanRecord> recs, const std::set<std::string>& held_out, DatasetSplit& out) {
  out.held_out_subjects = held_out;
  for (auto& r : recs) {
    (held_out.count(r.subject_id) ? out.test : out.train).push_back(std::move(r));
  }
}

}  // namespace

void SyntheticFactorSpec::validate() const {
  if (!topology) throw ValidationError("synthetic spec: missing topology");
  const Eigen::Index n = static_cast<Eigen::Index>(vertex_count()) * 3;
  if (subjects < 1 || expressions < 1 || identity_dim < 1 || expression_dim < 1) {
    throw ValidationError("synthetic spec: counts and dimensions must be positive");
  }
  if (identity_basis.rows() != n || identity_basis.cols() != identity_dim) {
    throw ValidationError("synthetic spec: identity_basis must be (V*3, d_a)");
  }
  if (core_tensor.rows() != n || core_tensor.cols() != identity_dim * expression_dim) {
    throw ValidationError("synthetic spec: core_tensor must be (V*3, d_a*d_b)");
  }
  if (mean_mesh.rows() != vertex_count()) throw ValidationError("synthetic spec: mean_mesh size");
  if (identity_coeffs.rows() != subjects || identity_coeffs.cols() != identity_dim) {
    throw ValidationError("synthetic spec: identity_coeffs must be (S, d_a)");
  }
  if (expression_coeffs.rows() != expressions || expression_coeffs.cols() != expression_dim) {
    throw ValidationError("synthetic spec: expression_coeffs must be (E, d_b)");
  }
  if (!expression_coeffs.row(0).isZero(0.0)) {
    throw ValidationError("synthetic spec: expression 0 must have zero coefficients");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("synthetic spec: noise_sigma must be non-negative");
  }
}

Vector SyntheticFactorSpec::neutral(int s) const {
  return flatten(mean_mesh) + identity_basis * identity_coeffs.row(s).transpose();
}

Vector SyntheticFactorSpec::clean_scan(int s, int e) const {
  // (T x2 a) x3 b = sum_ij T[:, i, j] a_i b_j
  const Vector ab = [&] {
    Vector k(identity_dim * expression_dim);
    for (int i = 0; i < identity_dim; ++i) {
      for (int j = 0; j < expression_dim; ++j) {
        k(i * expression_dim + j) = identity_coeffs(s, i) * expression_coeffs(e, j);
      }
    }
    return k;
  }();
  return neutral(s) + core_tensor * ab;
}

SyntheticFactorSpec make_synthetic_spec(const SyntheticConfig& cfg) {
  if (cfg.subjects < 1 || cfg.expressions < 1 || cfg.identity_dim < 1 || cfg.expression_dim < 1) {
    throw ValidationError("synthetic config: counts and dimensions must be positive");
  }
  if (!(cfg.noise_fraction >= 0.0)) throw ValidationError("synthetic config: noise_fraction < 0");
  SyntheticFactorSpec spec;
  spec.topology = make_grid_topology(cfg.grid_nx, cfg.grid_ny, cfg.spiral_length);
  spec.subjects = cfg.subjects;
  spec.expressions = cfg.expressions;
  spec.identity_dim = cfg.identity_dim;
  spec.expression_dim = cfg.expression_dim;
  spec.test_fraction = cfg.test_fraction;
  spec.rng_seed = cfg.seed;

  const Vertices& ref = spec.topology->reference();
  const int nv = spec.topology->vertex_count();
  const int da = cfg.identity_dim, db = cfg.expression_dim;
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);

  spec.mean_mesh.resize(nv, 3);
  for (int v = 0; v < nv; ++v) {
    const double x = ref(v, 0), y = ref(v, 1);
    const double z = 0.3 * std::exp(-(x * x + y * y) / 0.08) - 0.1 * (x * x + y * y);
    spec.mean_mesh.row(v) << x * cfg.face_width_mm, y * cfg.face_width_mm, z * cfg.face_width_mm;
  }

  const double id_col = da > 1 ? cfg.identity_rms_mm / std::sqrt(da - 1.0) : 0.0;
  spec.identity_basis = Matrix::Zero(nv * 3, da);
  for (int i = 1; i < da; ++i) spec.identity_basis.col(i) = flatten(smooth_field(ref, rng)) * id_col;

  const double exp_col = cfg.expression_rms_mm / std::sqrt(static_cast<double>(db));
  const double couple_col = da > 1 ? cfg.coupling * exp_col / std::sqrt(da - 1.0) : 0.0;
  spec.core_tensor.resize(nv * 3, da * db);
  for (int i = 0; i < da; ++i) {
    for (int j = 0; j < db; ++j) {
      spec.core_tensor.col(i * db + j) = flatten(smooth_field(ref, rng)) * (i == 0 ? exp_col : couple_col);
    }
  }

  std::normal_distribution<double> unit(0.0, 1.0);
  spec.identity_coeffs.resize(cfg.subjects, da);
  for (int s = 0; s < cfg.subjects; ++s) {
    spec.identity_coeffs(s, 0) = 1.0;
    for (int i = 1; i < da; ++i) spec.identity_coeffs(s, i) = unit(rng);
  }
  spec.expression_coeffs = Matrix::Zero(cfg.expressions, db);
  for (int e = 1; e < cfg.expressions; ++e) {
    for (int j = 0; j < db; ++j) spec.expression_coeffs(e, j) = unit(rng);
  }
  if (cfg.center_expressions && cfg.expressions > 1) {
    const Eigen::RowVectorXd m =
        spec.expression_coeffs.bottomRows(cfg.expressions - 1).colwise().mean();
    spec.expression_coeffs.bottomRows(cfg.expressions - 1).rowwise() -= m;
  }

  double sq = 0.0;
  Vector mean_all = Vector::Zero(nv * 3);
  std::vector<Vector> clean;
  for (int s = 0; s < cfg.subjects; ++s) {
    for (int e = 0; e < cfg.expressions; ++e) {
      clean.push_back(spec.clean_scan(s, e));
      mean_all += clean.back();
    }
  }
  mean_all /= static_cast<double>(clean.size());
  for (const auto& c : clean) sq += (c - mean_all).squaredNorm();
  const double data_rms = std::sqrt(sq / (static_cast<double>(clean.size()) * nv * 3));
  spec.noise_sigma = cfg.noise_fraction * data_rms;
  spec.validate();
  return spec;
}

std::string synthetic_subject_id(int s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03d", s);
  return buf;
}

std::string synthetic_expression_label(int e) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "e%02d", e);
  return buf;
}

SyntheticDataset generate_synthetic(const SyntheticFactorSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.spec = spec;
  std::mt19937_64 rng(spec.rng_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<ScanRecord> recs;
  recs.reserve(static_cast<std::size_t>(spec.subjects) * spec.expressions);
  for (int s = 0; s < spec.subjects; ++s) {
    const std::string sid = synthetic_subject_id(s);
    out.ground_truth.emplace(sid, FaceMesh::from_flat(spec.topology, spec.neutral(s)));
    for (int e = 0; e < spec.expressions; ++e) {
      Vector x = spec.clean_scan(s, e);
      if (spec.noise_sigma > 0.0) {
        for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += spec.noise_sigma * noise(rng);
      }
      const std::string label = synthetic_expression_label(e);
      recs.push_back(ScanRecord{FaceMesh::from_flat(spec.topology, x), sid, label, "synthetic",
                                sid + "/" + label + ".obj"});
    }
  }
  std::vector<std::string> subjects;
  for (int s = 0; s < spec.subjects; ++s) subjects.push_back(synthetic_subject_id(s));
  assign_split(std::move(recs), choose_held_out(subjects, spec.test_fraction, spec.rng_seed + 1), out.split);
  return out;
}

void write_dataset(const fs::path& root, const SyntheticDataset& data) {
  fs::create_directories(root / "scans");
  fs::create_directories(root / "ground_truth");
  write_obj(root / "template.obj", data.spec.mean_mesh, data.spec.topology->faces());
  auto write_rec = [&](const ScanRecord& r) {
    const fs::path p = root / "scans" / r.path;
    fs::create_directories(p.parent_path());
    write_obj(p, r.mesh);
  };
  for (const auto& r : data.split.train) write_rec(r);
  for (const auto& r : data.split.test) write_rec(r);
  for (const auto& [sid, m] : data.ground_truth) write_obj(root / "ground_truth" / (sid + ".obj"), m);
  write_manifest(root / "manifest.tsv", data.split);
}

LoadReport load_registered_dataset(const fs::path& root, const TopologyPtr& topology, const LoadOptions& opts) {
  if (!topology) throw ValidationError("load_registered_dataset: missing topology");
  LoadReport rep;
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<fs::path> subject_dirs;
  for (const auto& ent : fs::directory_iterator(root)) {
    if (ent.is_directory()) subject_dirs.push_back(ent.path());
  }
  std::sort(subject_dirs.begin(), subject_dirs.end());
  std::vector<ScanRecord> recs;
  for (const auto& dir : subject_dirs) {
    std::vector<fs::path> files;
    for (const auto& ent : fs::directory_iterator(dir)) {
      if (ent.is_regular_file() && ent.path().extension() == ".obj") files.push_back(ent.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        ObjMesh obj = read_obj(f);
        if (obj.vertices.rows() != topology->vertex_count()) {
          rep.rejected.emplace_back(f.string(), "vertex count " + std::to_string(obj.vertices.rows()) +
                                                    " != " + std::to_string(topology->vertex_count()));
          continue;
        }
        if (!obj.faces.empty() && obj.faces != topology->faces()) {
          rep.rejected.emplace_back(f.string(), "face list differs from topology");
          continue;
        }
        FaceMesh mesh(topology, obj.vertices * opts.unit_scale);
        if (opts.align && topology->reference().rows() == topology->vertex_count()) {
          mesh = rigid_align(mesh, FaceMesh(topology, topology->reference()));
        }
        std::optional<std::string> label;
        if (opts.label_from_stem) label = f.stem().string();
        recs.push_back(ScanRecord{std::move(mesh), dir.filename().string(), label, root.string(),
                                  f.string()});
      } catch (const Error& e) {
        rep.rejected.emplace_back(f.string(), e.what());
      }
    }
  }
  if (recs.empty()) rep.warnings.push_back("no usable scans under " + root.string());
  const auto held = choose_held_out(sorted_subjects(recs), opts.test_fraction, opts.seed);
  assign_split(std::move(recs), held, rep.split);
  return rep;
}

std::map<std::string, FaceMesh> load_ground_truth(const fs::path& root, const TopologyPtr& topology,
                                                  double unit_scale) {
  std::map<std::string, FaceMesh> out;
  if (!fs::is_directory(root)) throw DataError("ground-truth directory not found: " + root.string());
  for (const auto& ent : fs::directory_iterator(root)) {
    if (!ent.is_regular_file() || ent.path().extension() != ".obj") continue;
    ObjMesh obj = read_obj(ent.path());
    if (obj.vertices.rows() != topology->vertex_count()) {
      throw DataError("ground truth " + ent.path().string() + " does not match topology");
    }
    out.emplace(ent.path().stem().string(), FaceMesh(topology, obj.vertices * unit_scale));
  }
  return out;
}

void write_manifest(const fs::path& path, const DatasetSplit& split) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : split.train) os << r.subject_id << '\t' << r.path << "\ttrain\n";
  for (const auto& r : split.test) os << r.subject_id << '\t' << r.path << "\ttest\n";
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRecord r;
    if (!std::getline(ls, r.subject_id, '\t') || !std::getline(ls, r.path, '\t') ||
        !std::getline(ls, r.split)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> pca_loo_residuals(const std::vector<const FaceMesh*>& scans, double variance_kept) {
  const int n = static_cast<int>(scans.size());
  if (n < 2) throw ValidationError("pca_quality_filter: need at least 2 scans");
  const Eigen::Index dim = scans.front()->vertices().size();
  Matrix X(n, dim);
  for (int i = 0; i < n; ++i) {
    if (scans[i]->vertices().size() != dim) throw ShapeError("pca_quality_filter: mixed vertex counts");
    X.row(i) = scans[i]->flat().transpose();
  }
  const Matrix G = X * X.transpose();
  std::vector<double> res(n, 0.0);
  for (int i = 0; i < n; ++i) {
    // PCA of the other n-1 scans through their Gram matrix.
    std::vector<int> idx;
    for (int j = 0; j < n; ++j) if (j != i) idx.push_back(j);
    const int m = n - 1;
    Eigen::VectorXd gmean = Eigen::VectorXd::Zero(m);
    double gtot = 0.0;
    Matrix Gs(m, m);
    for (int a = 0; a < m; ++a) for (int b = 0; b < m; ++b) Gs(a, b) = G(idx[a], idx[b]);
    gmean = Gs.rowwise().mean();
    gtot = gmean.mean();
    // Centred Gram: K = Gs - 1 gmean^T - gmean 1^T + gtot
    Matrix K = Gs;
    K.colwise() -= gmean;
    K.rowwise() -= gmean.transpose();
    K.array() += gtot;
    Eigen::SelfAdjointEigenSolver<Matrix> es(K);
    const Eigen::VectorXd ev = es.eigenvalues().reverse().cwiseMax(0.0);
    const Matrix U = es.eigenvectors().rowwise().reverse();
    const double total = ev.sum();
    // Centred projection of scan i in the row space of the centred data.
    Eigen::VectorXd gi(m);
    for (int a = 0; a < m; ++a) gi(a) = G(i, idx[a]);
    const Eigen::VectorXd kx = (gi.array() - gi.mean()).matrix() - gmean + Eigen::VectorXd::Constant(m, gtot);
    const Eigen::RowVectorXd mu = [&] {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dim);
      for (int a : idx) acc += X.row(a);
      return Eigen::RowVectorXd(acc / m);
    }();
    const double xnorm = (X.row(i) - mu).squaredNorm();
    double explained = 0.0, captured = 0.0;
    for (int c = 0; c < m && total > 0.0; ++c) {
      if (ev(c) <= 1e-12 * total) break;
      // Unit principal direction v_c = Xc^T u_c / sqrt(ev_c); projection = kx.u_c / sqrt(ev_c).
      const double proj = kx.dot(U.col(c)) / std::sqrt(ev(c));
      captured += proj * proj;
      explained += ev(c);
      if (explained >= variance_kept * total) break;
    }
    res[i] = std::sqrt(std::max(0.0, xnorm - captured));
  }
  return res;
}

std::vector<ScanRecord> pca_quality_filter(std::vector<ScanRecord> scans, double drop_fraction,
                                           double variance_kept) {
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) {
    throw ValidationError("pca_quality_filter: drop_fraction must lie in [0, 1)");
  }
  if (scans.size() < 2) throw ValidationError("pca_quality_filter: need at least 2 scans");
  const auto n_drop = static_cast<std::size_t>(std::floor(drop_fraction * static_cast<double>(scans.size())));
  if (n_drop == 0) return scans;
  std::vector<const FaceMesh*> ptrs;
  for (const auto& s : scans) ptrs.push_back(&s.mesh);
  const auto res = pca_loo_residuals(ptrs, variance_kept);
  std::vector<std::size_t> order(scans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res[a] > res[b]; });
  std::vector<bool> drop(scans.size(), false);
  for (std::size_t k = 0; k < n_drop; ++k) drop[order[k]] = true;
  std::vector<ScanRecord> out;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (!drop[i]) out.push_back(std::move(scans[i]));
  }
  return out;
}

TrainingSet TrainingSet::build(const std::vector<ScanRecord>& records, const NormalizationStats& stats) {
  TrainingSet set;
  if (records.empty()) return set;
  set.topology = records.front().mesh.topology();
  stats.validate(set.topology->vertex_count());
  for (const auto& r : records) {
    set.by_subject[r.subject_id].push_back(static_cast<int>(set.scans.size()));
    set.scans.push_back(TrainingScan{r.subject_id, normalize(r.mesh, stats).flat()});
  }
  return set;
}

int TrainingSet::scans_of(const std::string& subject) const {
  auto it = by_subject.find(subject);
  return it == by_subject.end() ? 0 : static_cast<int>(it->second.size());
}

void SamplerConfig::validate() const {
  if (ids_per_batch < 1 || scans_per_id < 1) {
    throw ConfigError("sampler: ids_per_batch and scans_per_id must be positive");
  }
}

IdentityAwareSampler::IdentityAwareSampler(const TrainingSet& set, const SamplerConfig& cfg)
    : set_(&set), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  for (const auto& [sid, idx] : set.by_subject) {
    if (!idx.empty()) subjects_.push_back(sid);
  }
  if (static_cast<int>(subjects_.size()) < cfg_.ids_per_batch) {
    throw ConfigError("sampler: " + std::to_string(subjects_.size()) + " subjects available, " +
                      std::to_string(cfg_.ids_per_batch) + " needed per batch");
  }
  scan_queues_.resize(subjects_.size());
}

int IdentityAwareSampler::draw_subject_scan(int subject) {
  auto& q = scan_queues_[static_cast<std::size_t>(subject)];
  if (q.empty()) {
    q = set_->by_subject.at(subjects_[static_cast<std::size_t>(subject)]);
    std::shuffle(q.begin(), q.end(), rng_);
  }
  const int s = q.back();
  q.pop_back();
  return s;
}

TrainingBatch IdentityAwareSampler::next() {
  TrainingBatch b;
  const int dim = static_cast<int>(set_->scans.front().coords.size());
  b.coords.resize(cfg_.batch_size(), dim);
  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < cfg_.ids_per_batch) {
    if (subject_queue_.empty()) {
      subject_queue_.resize(subjects_.size());
      for (std::size_t i = 0; i < subjects_.size(); ++i) subject_queue_[i] = static_cast<int>(i);
      std::shuffle(subject_queue_.begin(), subject_queue_.end(), rng_);
    }
    const int s = subject_queue_.back();
    subject_queue_.pop_back();
    if (std::find(chosen.begin(), chosen.end(), s) == chosen.end()) chosen.push_back(s);
  }
  int row = 0;
  for (int g = 0; g < cfg_.ids_per_batch; ++g) {
    const int s = chosen[static_cast<std::size_t>(g)];
    b.group_subjects.push_back(subjects_[static_cast<std::size_t>(s)]);
    const int avail = static_cast<int>(set_->by_subject.at(b.group_subjects.back()).size());
    std::vector<int> picks;
    for (int k = 0; k < cfg_.scans_per_id; ++k) {
      // A fresh queue is only taken once the current one is drained, so a
      // group never repeats a scan unless the subject has too few.
      if (k < avail || scan_queues_[static_cast<std::size_t>(s)].size() > 0) {
        picks.push_back(draw_subject_scan(s));
      } else {
        picks.push_back(picks[static_cast<std::size_t>(k % avail)]);
      }
    }
    for (int idx : picks) {
      b.group_of_row.push_back(g);
      b.scan_index.push_back(idx);
      b.coords.row(row++) = set_->scans[static_cast<std::size_t>(idx)].coords.transpose();
    }
  }
  return b;
}

std::string IdentityAwareSampler::save_state() const {
  std::ostringstream os;
  os << rng_ << '\n' << subject_queue_.size();
  for (int s : subject_queue_) os << ' ' << s;
  os << '\n' << scan_queues_.size();
  for (const auto& q : scan_queues_) {
    os << '\n' << q.size();
    for (int s : q) os << ' ' << s;
  }
  return os.str();
}

void IdentityAwareSampler::load_state(const std::string& state) {
  std::istringstream is(state);
  auto read_vec = [&](std::vector<int>& v) {
    std::size_t n = 0;
    is >> n;
    v.resize(n);
    for (int& x : v) is >> x;
  };
  is >> rng_;
  read_vec(subject_queue_);
  std::size_t nq = 0;
  is >> nq;
  if (nq != subjects_.size()) throw DataError("sampler state does not match the training set");
  scan_queues_.assign(nq, {});
  for (auto& q : scan_queues_) read_vec(q);
  if (!is) throw DataError("malformed sampler state");
  for (int s : subject_queue_) {
    if (s < 0 || s >= static_cast<int>(subjects_.size())) throw DataError("sampler state out of range");
  }
  for (const auto& q : scan_queues_) {
    for (int s : q) {
      if (s < 0 || s >= static_cast<int>(set_->scans.size())) throw DataError("sampler state out of range");
    }
  }
}

int IdentityAwareSampler::batches_per_epoch() const {
  const auto n = static_cast<int>(set_->scans.size());
  return (n + cfg_.batch_size() - 1) / cfg_.batch_size();
}

}  // namespace wsdf
