#include "wsdf/mesh_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wsdf {
namespace {

constexpr std::array<char, 8> kBatchMagic{'W', 'S', 'D', 'F', 'M', 'B', '1', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("mesh batch: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

int parse_index(const std::string& token, int n_vert) {
  const auto slash = token.find('/');
  const int raw = std::stoi(token.substr(0, slash));
  return raw > 0 ? raw - 1 : n_vert + raw;  // negative = relative
}

}  // namespace

ObjMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::array<double, 3>> verts;
  std::vector<Face> faces;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      std::array<double, 3> p{};
      if (!(ss >> p[0] >> p[1] >> p[2])) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed vertex");
      }
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      try {
        while (ss >> tok) idx.push_back(parse_index(tok, static_cast<int>(verts.size())));
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed face");
      }
      if (idx.size() < 3) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": face with < 3 corners");
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  ObjMesh out;
  out.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) {
    out.vertices.row(static_cast<Eigen::Index>(i)) << verts[i][0], verts[i][1], verts[i][2];
  }
  out.faces = std::move(faces);
  return out;
}

void write_obj(const std::filesystem::path& path, const Vertices& vertices,
               const std::vector<Face>& faces) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    out << "v " << vertices(i, 0) << ' ' << vertices(i, 1) << ' ' << vertices(i, 2) << '\n';
  }
  for (const Face& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

void write_obj(const std::filesystem::path& path, const FaceMesh& mesh) {
  write_obj(path, mesh.vertices(), mesh.topology()->faces());
}

void write_mesh_batch(const std::filesystem::path& path, const std::vector<Vertices>& meshes) {
  const std::uint32_t n_vert = meshes.empty() ? 0u : static_cast<std::uint32_t>(meshes[0].rows());
  for (const auto& m : meshes) {
    if (m.rows() != static_cast<Eigen::Index>(n_vert)) throw ShapeError("mesh batch: mixed vertex counts");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kBatchMagic.data(), kBatchMagic.size());
  put_u32(out, n_vert);
  put_u32(out, static_cast<std::uint32_t>(meshes.size()));
  for (const auto& m : meshes) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(i, c)));
        put_u32(out, bits);
      }
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<Vertices> read_mesh_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kBatchMagic) {
    throw DataError(path.string() + ": not a mesh batch file");
  }
  const std::uint32_t n_vert = get_u32(in);
  const std::uint32_t n_mesh = get_u32(in);
  std::vector<Vertices> meshes;
  meshes.reserve(n_mesh);
  for (std::uint32_t m = 0; m < n_mesh; ++m) {
    Vertices v(n_vert, 3);
    for (std::uint32_t i = 0; i < n_vert; ++i) {
      for (int c = 0; c < 3; ++c) v(i, c) = std::bit_cast<float>(get_u32(in));
    }
    meshes.push_back(std::move(v));
  }
  return meshes;
}

}  // namespace wsdf
