#include "wsdf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace wsdf {
namespace fs = std::filesystem;

namespace {

Vertices to_mm(const Eigen::Ref<const Eigen::RowVectorXd>& row, const NormalizationStats& stats) {
  Vertices v = Eigen::Map<const Vertices>(row.data(), row.size() / 3, 3);
  return stats.mean + v * stats.scale;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw DataError("not a number: " + s);
  return v;
}

void write_rows(std::ostream& os, const Vertices& v) {
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    os << fmt17(v(r, 0)) << ' ' << fmt17(v(r, 1)) << ' ' << fmt17(v(r, 2)) << '\n';
  }
}

Vertices read_rows(std::istream& is, int n) {
  Vertices v(n, 3);
  std::string a, b, c;
  for (int r = 0; r < n; ++r) {
    if (!(is >> a >> b >> c)) throw DataError("sample dump truncated");
    v.row(r) << parse_double(a), parse_double(b), parse_double(c);
  }
  return v;
}

}  // namespace

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) {
    s.median = hi;
  } else {
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    s.median = 0.5 * (lo + hi);
  }
  return s;
}

double group_spread(const std::vector<const Vertices*>& meshes) {
  if (meshes.empty()) throw ValidationError("group_spread: empty group");
  Vertices mean = Vertices::Zero(meshes.front()->rows(), 3);
  for (const Vertices* m : meshes) {
    if (m->rows() != mean.rows()) throw ShapeError("group_spread: vertex count mismatch");
    mean += *m;
  }
  mean /= static_cast<double>(meshes.size());
  std::vector<double> d;
  d.reserve(meshes.size() * static_cast<std::size_t>(mean.rows()));
  for (const Vertices* m : meshes) {
    const Eigen::VectorXd n = (*m - mean).rowwise().norm();
    d.insert(d.end(), n.data(), n.data() + n.size());
  }
  double mu = 0.0;
  for (double x : d) mu += x;
  mu /= static_cast<double>(d.size());
  double var = 0.0;
  for (double x : d) var += (x - mu) * (x - mu);
  return std::sqrt(var / static_cast<double>(d.size()));
}

std::vector<SampleOutputs> run_inference(const WsdfModel& model, const NormalizationStats& stats,
                                         const std::vector<ScanRecord>& scans, const EvalOptions& opts) {
  const int n = static_cast<int>(scans.size());
  const int nv = model.vertex_count();
  stats.validate(nv);
  std::vector<SampleOutputs> out(static_cast<std::size_t>(n));
  Matrix mu_id(n, model.d_id()), mu_exp(n, model.d_exp());
  const int chunk = std::max(1, opts.chunk);
  const int n_chunks = (n + chunk - 1) / chunk;

  auto normalized_rows = [&](int begin, int end) {
    Matrix x(end - begin, nv * 3);
    for (int i = begin; i < end; ++i) {
      const ScanRecord& r = scans[static_cast<std::size_t>(i)];
      if (r.mesh.vertex_count() != nv) throw ShapeError("evaluation: scan does not match model topology");
      x.row(i - begin) = normalize(r.mesh, stats).flat().transpose();
    }
    return x;
  };

#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_chunks; ++c) {
    const int b = c * chunk, e = std::min(n, b + chunk);
    const auto [id, ex] = model.encode(normalized_rows(b, e));
    mu_id.middleRows(b, e - b) = id.mu;
    mu_exp.middleRows(b, e - b) = ex.mu;
  }

  // Canonical identity code used to strip identity from each scan.
  Matrix canon = Matrix::Zero(n, model.d_id());
  if (opts.identity_removal == IdentityRemoval::SubjectMeanCode) {
    std::map<std::string, std::pair<Eigen::RowVectorXd, int>> acc;
    for (int i = 0; i < n; ++i) {
      auto& [sum, cnt] = acc.try_emplace(scans[static_cast<std::size_t>(i)].subject_id,
                                         Eigen::RowVectorXd::Zero(model.d_id()), 0).first->second;
      sum += mu_id.row(i);
      ++cnt;
    }
    for (int i = 0; i < n; ++i) {
      const auto& [sum, cnt] = acc.at(scans[static_cast<std::size_t>(i)].subject_id);
      canon.row(i) = sum / cnt;
    }
  }

#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_chunks; ++c) {
    const int b = c * chunk, e = std::min(n, b + chunk);
    const Matrix zid = mu_id.middleRows(b, e - b);
    const Matrix zex = mu_exp.middleRows(b, e - b);
    const Matrix rec = model.decode(zid, zex);
    const Matrix neu = model.decode(zid, Matrix::Zero(e - b, model.d_exp()));
    const Matrix idf = model.decode(canon.middleRows(b, e - b), zex);
    for (int i = b; i < e; ++i) {
      const ScanRecord& r = scans[static_cast<std::size_t>(i)];
      SampleOutputs& o = out[static_cast<std::size_t>(i)];
      o.subject_id = r.subject_id;
      o.expression_label = r.expression_label;
      o.mu_id = mu_id.row(i).transpose();
      o.mu_exp = mu_exp.row(i).transpose();
      o.input = r.mesh.vertices();
      o.recon = to_mm(rec.row(i - b), stats);
      o.neutral = to_mm(neu.row(i - b), stats);
      o.identity_free = to_mm(idf.row(i - b), stats);
    }
  }
  return out;
}

MetricSamples compute_samples(const std::vector<SampleOutputs>& outputs,
                              const std::map<std::string, FaceMesh>* ground_truth) {
  MetricSamples s;
  std::map<std::string, std::vector<const Vertices*>> by_subject, by_label;
  for (const auto& o : outputs) {
    s.avd.push_back(average_vertex_distance(o.input, o.recon));
    by_subject[o.subject_id].push_back(&o.neutral);
    if (o.expression_label) by_label[*o.expression_label].push_back(&o.identity_free);
    if (ground_truth) {
      auto it = ground_truth->find(o.subject_id);
      if (it != ground_truth->end()) s.neu.push_back(average_vertex_distance(it->second.vertices(), o.neutral));
    }
  }
  for (const auto& [k, g] : by_subject) if (g.size() >= 2) s.id[k] = group_spread(g);
  for (const auto& [k, g] : by_label) if (g.size() >= 2) s.exp[k] = group_spread(g);
  return s;
}

MetricsReport summarize_samples(const MetricSamples& samples, std::size_t scan_count,
                                std::size_t subject_count, std::string fingerprint) {
  MetricsReport r;
  r.scan_count = scan_count;
  r.subject_count = subject_count;
  r.fingerprint = std::move(fingerprint);
  auto values = [](const std::map<std::string, double>& m) {
    std::vector<double> v;
    for (const auto& [k, x] : m) v.push_back(x);
    return v;
  };
  if (!samples.avd.empty()) r.avd = summarize(samples.avd);
  if (!samples.id.empty()) r.id = summarize(values(samples.id));
  if (!samples.exp.empty()) r.exp = summarize(values(samples.exp));
  if (!samples.neu.empty()) r.neu = summarize(samples.neu);
  return r;
}

MetricsReport evaluate_model(const WsdfModel& model, const NormalizationStats& stats,
                             const std::vector<ScanRecord>& scans,
                             const std::map<std::string, FaceMesh>* ground_truth,
                             const std::string& fingerprint, const EvalOptions& opts,
                             std::vector<SampleOutputs>* outputs) {
  if (scans.empty()) throw DataError("evaluation: empty scan set");
  auto outs = run_inference(model, stats, scans, opts);
  std::set<std::string> subjects;
  for (const auto& s : scans) subjects.insert(s.subject_id);
  MetricsReport rep = summarize_samples(compute_samples(outs, ground_truth), scans.size(), subjects.size(),
                                        fingerprint);
  if (outputs) *outputs = std::move(outs);
  return rep;
}

Summary expression_deformation_scale(const std::vector<ScanRecord>& scans,
                                     const std::map<std::string, FaceMesh>& ground_truth) {
  std::vector<double> v;
  for (const auto& s : scans) {
    auto it = ground_truth.find(s.subject_id);
    if (it != ground_truth.end()) v.push_back(average_vertex_distance(s.mesh, it->second));
  }
  return summarize(std::move(v));
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  auto put = [&](const char* name, const std::optional<Summary>& s) {
    if (s) {
      os << name << ".mean=" << fmt17(s->mean) << '\n';
      os << name << ".median=" << fmt17(s->median) << '\n';
      os << name << ".count=" << s->count << '\n';
    } else {
      os << name << ".mean=-\n" << name << ".median=-\n" << name << ".count=0\n";
    }
  };
  put("E_avd", avd);
  put("E_id", id);
  put("E_exp", exp);
  put("E_neu", neu);
  os << "scans=" << scan_count << '\n';
  os << "subjects=" << subject_count << '\n';
  os << "fingerprint=" << fingerprint << '\n';
  return os.str();
}

MetricsReport MetricsReport::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("report line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("report missing key " + k);
    return it->second;
  };
  auto metric = [&](const std::string& name) -> std::optional<Summary> {
    const std::string m = get(name + ".mean");
    if (m == "-") return std::nullopt;
    return Summary{parse_double(m), parse_double(get(name + ".median")),
                   static_cast<std::size_t>(std::stoull(get(name + ".count")))};
  };
  MetricsReport r;
  r.avd = metric("E_avd");
  r.id = metric("E_id");
  r.exp = metric("E_exp");
  r.neu = metric("E_neu");
  r.scan_count = std::stoull(get("scans"));
  r.subject_count = std::stoull(get("subjects"));
  r.fingerprint = get("fingerprint");
  return r;
}

void write_sample_dump(const fs::path& path, const std::vector<SampleOutputs>& outputs,
                       const std::map<std::string, FaceMesh>* ground_truth) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write sample dump " + path.string());
  const long nv = outputs.empty() ? 0 : static_cast<long>(outputs.front().input.rows());
  os << "wsdf-samples " << outputs.size() << ' ' << nv << '\n';
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    const FaceMesh* gt = nullptr;
    if (ground_truth) {
      auto it = ground_truth->find(o.subject_id);
      if (it != ground_truth->end()) gt = &it->second;
    }
    os << "sample " << i << ' ' << o.subject_id << ' ' << o.expression_label.value_or("-") << ' '
       << (gt ? 1 : 0) << '\n';
    write_rows(os, o.input);
    write_rows(os, o.recon);
    write_rows(os, o.neutral);
    write_rows(os, o.identity_free);
    if (gt) write_rows(os, gt->vertices());
  }
  if (!os) throw DataError("failed writing sample dump " + path.string());
}

std::vector<DumpedSample> read_sample_dump(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read sample dump " + path.string());
  std::string magic;
  std::size_t n = 0;
  int nv = 0;
  if (!(is >> magic >> n >> nv) || magic != "wsdf-samples") throw DataError("bad sample dump header");
  std::vector<DumpedSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string tag, label;
    std::size_t idx = 0;
    int has_gt = 0;
    DumpedSample d;
    if (!(is >> tag >> idx >> d.subject_id >> label >> has_gt) || tag != "sample") {
      throw DataError("bad sample record");
    }
    if (label != "-") d.expression_label = label;
    d.input = read_rows(is, nv);
    d.recon = read_rows(is, nv);
    d.neutral = read_rows(is, nv);
    d.identity_free = read_rows(is, nv);
    if (has_gt) d.ground_truth = read_rows(is, nv);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Vertices> interpolate(const WsdfModel& model, const NormalizationStats& stats,
                                  const FaceMesh& a, const FaceMesh& b, int steps, InterpolationMode mode) {
  if (steps < 2) throw ValidationError("interpolate: steps must be >= 2");
  Matrix x(2, model.vertex_count() * 3);
  x.row(0) = normalize(a, stats).flat().transpose();
  x.row(1) = normalize(b, stats).flat().transpose();
  const auto [id, ex] = model.encode(x);
  Matrix zid(steps, model.d_id()), zex(steps, model.d_exp());
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / (steps - 1);
    const Eigen::RowVectorXd id_t = (1.0 - t) * id.mu.row(0) + t * id.mu.row(1);
    const Eigen::RowVectorXd ex_t = (1.0 - t) * ex.mu.row(0) + t * ex.mu.row(1);
    zid.row(k) = mode == InterpolationMode::ExpressionOnly ? Eigen::RowVectorXd(id.mu.row(0)) : id_t;
    zex.row(k) = mode == InterpolationMode::IdentityOnly ? Eigen::RowVectorXd(ex.mu.row(0)) : ex_t;
  }
  const Matrix dec = model.decode(zid, zex);
  std::vector<Vertices> out;
  for (int k = 0; k < steps; ++k) out.push_back(to_mm(dec.row(k), stats));
  return out;
}

void export_latents(const fs::path& path, const std::vector<SampleOutputs>& outputs) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write latents " + path.string());
  const long did = outputs.empty() ? 0 : outputs.front().mu_id.size();
  const long dex = outputs.empty() ? 0 : outputs.front().mu_exp.size();
  os << "subject_id expression_label";
  for (long i = 0; i < did; ++i) os << " id_" << i;
  for (long i = 0; i < dex; ++i) os << " exp_" << i;
  os << '\n';
  for (const auto& o : outputs) {
    os << o.subject_id << ' ' << o.expression_label.value_or("-");
    for (long i = 0; i < did; ++i) os << ' ' << fmt17(o.mu_id(i));
    for (long i = 0; i < dex; ++i) os << ' ' << fmt17(o.mu_exp(i));
    os << '\n';
  }
  if (!os) throw DataError("failed writing latents " + path.string());
}

std::vector<LatentRecord> read_latents(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read latents " + path.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string tok;
  long did = 0, dex = 0;
  hs >> tok >> tok;
  while (hs >> tok) {
    if (tok.rfind("id_", 0) == 0) ++did;
    else if (tok.rfind("exp_", 0) == 0) ++dex;
    else throw DataError("unexpected latent column " + tok);
  }
  std::vector<LatentRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LatentRecord r;
    std::string label;
    ls >> r.subject_id >> label;
    if (label != "-") r.expression_label = label;
    r.mu_id.resize(did);
    r.mu_exp.resize(dex);
    for (long i = 0; i < did; ++i) { ls >> tok; r.mu_id(i) = parse_double(tok); }
    for (long i = 0; i < dex; ++i) { ls >> tok; r.mu_exp(i) = parse_double(tok); }
    if (!ls) throw DataError("malformed latent record: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace wsdf
