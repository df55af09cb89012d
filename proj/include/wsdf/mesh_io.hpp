#pragma once

#include <filesystem>
#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf {

struct ObjMesh {
  Vertices vertices;
  std::vector<Face> faces;
};

// ASCII "v x y z" / "f i j k" with 1-based indices. Texture and normal
// records are ignored; polygon faces are fan-triangulated.
ObjMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const Vertices& vertices,
               const std::vector<Face>& faces);
void write_obj(const std::filesystem::path& path, const FaceMesh& mesh);

// Little-endian container: "WSDFMB1\0", u32 vertex_count, u32 mesh_count,
// then f32 coordinates, mesh-major, row-major within a mesh.
void write_mesh_batch(const std::filesystem::path& path, const std::vector<Vertices>& meshes);
std::vector<Vertices> read_mesh_batch(const std::filesystem::path& path);

}  // namespace wsdf
