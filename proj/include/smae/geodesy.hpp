#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <unordered_map>
#include <vector>

namespace smae::geodesy {

// Icosphere at one subdivision level. Vertices sit on the unit sphere;
// |V| = 10*4^level + 2, |F| = 20*4^level.
struct IcoMesh {
  int level = 0;
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<uint32_t, 3>> faces;

  int64_t vertex_count() const { return static_cast<int64_t>(vertices.size()); }
  int64_t face_count() const { return static_cast<int64_t>(faces.size()); }
};

// Subdivision chain from the patch level down to the data level, with the
// bookkeeping needed to resolve patch membership structurally: which four
// faces every face spawns, and which vertex bisects every edge.
struct IcoHierarchy {
  int patch_level = 0;
  int depth = 0;
  std::vector<IcoMesh> meshes;  // levels patch_level .. patch_level+depth
  // child_faces[t][f] = the 4 faces at level patch_level+t+1 spawned by face f
  std::vector<std::vector<std::array<uint32_t, 4>>> child_faces;
  // edge_midpoints[t]: sorted-edge key at level patch_level+t -> midpoint index
  std::vector<std::unordered_map<uint64_t, uint32_t>> edge_midpoints;

  const IcoMesh& patch_mesh() const { return meshes.front(); }
  const IcoMesh& data_mesh() const { return meshes.back(); }
  int data_level() const { return patch_level + depth; }
};

// One row per coarse face: the data-level vertices covered by its descendant
// faces, enumerated apex row first in barycentric row-major order (the grid
// is oriented by the coarse face's own vertex order: v0 apex, rows sweep
// from the v0-v1 edge to the v0-v2 edge).
struct PatchTable {
  int patch_level = 0;
  int data_level = 0;
  int verts_per_patch = 0;  // (2^d+1)(2^d+2)/2; 45 at depth 3
  std::vector<std::vector<uint32_t>> patches;
  std::vector<uint32_t> multiplicity;  // per data-level vertex: #patches containing it

  int64_t patch_count() const { return static_cast<int64_t>(patches.size()); }
  int64_t data_vertex_count() const { return static_cast<int64_t>(multiplicity.size()); }
};

inline uint64_t edge_key(uint32_t a, uint32_t b) {
  return a < b ? (static_cast<uint64_t>(a) << 32) | b : (static_cast<uint64_t>(b) << 32) | a;
}

// Level-0 icosahedron from the golden-ratio construction, unit-normalized,
// fixed vertex/face order.
IcoMesh icosahedron();

// One 4-way subdivision step. Parent vertices keep their indices; edge
// midpoints are appended in sorted-edge order; children of face f land at
// 4f..4f+3.
IcoMesh subdivide(const IcoMesh& mesh);

IcoHierarchy build_hierarchy(int patch_level, int depth);

PatchTable patch_table(const IcoHierarchy& h);

// Throws std::runtime_error naming the violated property.
void validate_mesh(const IcoMesh& mesh);
void validate_hierarchy(const IcoHierarchy& h);
void validate_patch_table(const IcoHierarchy& h, const PatchTable& table);

// SMESH binary format, bit-exact round trip.
void write_mesh(const IcoMesh& mesh, const std::filesystem::path& path);
IcoMesh read_mesh(const std::filesystem::path& path);

}  // namespace smae::geodesy
