#include "wsdf/checkpoint.hpp"

#include <bit>
#include <fstream>

namespace wsdf {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'W', 'S', 'D', 'F', 'C', 'K', 'P', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  void u32(std::uint32_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void mat(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  void tensors(const NamedTensors& t) {
    u64(t.size());
    for (const auto& [name, m] : t) {
      str(name);
      mat(m);
    }
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, std::string where) : is_(is), where_(std::move(where)) {}
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) throw DataError(where_ + ": truncated checkpoint");
    return v;
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::uint64_t count(std::uint64_t limit = 1ULL << 32) {
    const std::uint64_t n = u64();
    if (n > limit) throw DataError(where_ + ": implausible length in checkpoint");
    return n;
  }
  std::string str() {
    std::string s(count(), '\0');
    is_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!is_) throw DataError(where_ + ": truncated checkpoint");
    return s;
  }
  Matrix mat() {
    const auto r = static_cast<Eigen::Index>(count()), c = static_cast<Eigen::Index>(count());
    Matrix m(r, c);
    is_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is_) throw DataError(where_ + ": truncated checkpoint");
    return m;
  }
  NamedTensors tensors() {
    NamedTensors t(count());
    for (auto& [name, m] : t) {
      name = str();
      m = mat();
    }
    return t;
  }

 private:
  std::ifstream& is_;
  std::string where_;
};

Matrix to_matrix(const Vertices& v) { return Matrix(v); }

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    Writer w(os);
    os.write(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.str(c.config_json);
    w.u64(static_cast<std::uint64_t>(c.vertex_count));
    w.u64(c.faces.size());
    for (const Face& f : c.faces) {
      for (int k : f) w.u32(static_cast<std::uint32_t>(k));
    }
    w.mat(to_matrix(c.reference));
    w.mat(to_matrix(c.stats.mean));
    w.f64(c.stats.scale);
    w.tensors(c.parameters);
    w.f64(c.bank_beta);
    w.u64(c.bank.size());
    for (const auto& [sid, e] : c.bank) {
      w.str(sid);
      w.u64(e.update_count);
      w.mat(Matrix(e.mesh.transpose()));
    }
    w.tensors(c.optimizer);
    w.u64(c.state.size());
    for (const auto& [k, v] : c.state) {
      w.str(k);
      w.str(v);
    }
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw DataError(path.string() + ": not a checkpoint");
  Reader r(is, path.string());
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  Checkpoint c;
  c.config_json = r.str();
  c.vertex_count = static_cast<int>(r.count());
  c.faces.resize(r.count());
  for (Face& f : c.faces) {
    for (int& k : f) k = static_cast<int>(r.u32());
  }
  const Matrix ref = r.mat();
  if (ref.size() > 0 && ref.cols() != 3) throw DataError(path.string() + ": bad reference block");
  c.reference = ref.size() > 0 ? Vertices(ref) : Vertices();
  const Matrix mean = r.mat();
  if (mean.cols() != 3) throw DataError(path.string() + ": bad normalisation block");
  c.stats.mean = mean;
  c.stats.scale = r.f64();
  c.parameters = r.tensors();
  c.bank_beta = r.f64();
  const auto nb = r.count();
  for (std::uint64_t i = 0; i < nb; ++i) {
    std::string sid = r.str();
    BankEntry e;
    e.update_count = r.u64();
    e.mesh = r.mat().transpose();
    c.bank.emplace(std::move(sid), std::move(e));
  }
  c.optimizer = r.tensors();
  const auto ns = r.count();
  for (std::uint64_t i = 0; i < ns; ++i) {
    std::string k = r.str();
    c.state[k] = r.str();
  }
  return c;
}

}  // namespace wsdf
