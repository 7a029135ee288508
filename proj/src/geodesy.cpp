#include "smae/geodesy.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "smae/io.hpp"

namespace smae::geodesy {

namespace {

std::array<double, 3> normalized(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

int64_t expected_vertices(int level) { return 10 * (int64_t{1} << (2 * level)) + 2; }
int64_t expected_faces(int level) { return 20 * (int64_t{1} << (2 * level)); }

}  // namespace

IcoMesh icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;

  IcoMesh mesh;
  mesh.level = 0;
  mesh.vertices = {
      normalized({-1, t, 0}), normalized({1, t, 0}),  normalized({-1, -t, 0}),
      normalized({1, -t, 0}), normalized({0, -1, t}), normalized({0, 1, t}),
      normalized({0, -1, -t}), normalized({0, 1, -t}), normalized({t, 0, -1}),
      normalized({t, 0, 1}),  normalized({-t, 0, -1}), normalized({-t, 0, 1}),
  };
  mesh.faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
  };
  return mesh;
}

namespace {

struct SubdivideResult {
  IcoMesh mesh;
  std::vector<std::array<uint32_t, 4>> child_faces;
  std::unordered_map<uint64_t, uint32_t> edge_midpoints;
};

SubdivideResult subdivide_impl(const IcoMesh& mesh) {
  // Collect the unique edges and assign midpoint indices in sorted-edge order
  // so every construction of a level is identical.
  std::vector<uint64_t> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces) {
    edges.push_back(edge_key(f[0], f[1]));
    edges.push_back(edge_key(f[1], f[2]));
    edges.push_back(edge_key(f[2], f[0]));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  SubdivideResult out;
  out.mesh.level = mesh.level + 1;
  out.mesh.vertices = mesh.vertices;
  out.mesh.vertices.reserve(mesh.vertices.size() + edges.size());
  out.edge_midpoints.reserve(edges.size() * 2);

  for (uint64_t key : edges) {
    const uint32_t a = static_cast<uint32_t>(key >> 32);
    const uint32_t b = static_cast<uint32_t>(key & 0xffffffffu);
    const auto& va = mesh.vertices[a];
    const auto& vb = mesh.vertices[b];
    out.edge_midpoints.emplace(key, static_cast<uint32_t>(out.mesh.vertices.size()));
    out.mesh.vertices.push_back(normalized(
        {(va[0] + vb[0]) / 2.0, (va[1] + vb[1]) / 2.0, (va[2] + vb[2]) / 2.0}));
  }

  out.mesh.faces.reserve(mesh.faces.size() * 4);
  out.child_faces.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    const uint32_t a = f[0], b = f[1], c = f[2];
    const uint32_t mab = out.edge_midpoints.at(edge_key(a, b));
    const uint32_t mbc = out.edge_midpoints.at(edge_key(b, c));
    const uint32_t mca = out.edge_midpoints.at(edge_key(c, a));
    const uint32_t base = static_cast<uint32_t>(out.mesh.faces.size());
    out.mesh.faces.push_back({a, mab, mca});
    out.mesh.faces.push_back({mab, b, mbc});
    out.mesh.faces.push_back({mca, mbc, c});
    out.mesh.faces.push_back({mab, mbc, mca});
    out.child_faces.push_back({base, base + 1, base + 2, base + 3});
  }
  return out;
}

}  // namespace

IcoMesh subdivide(const IcoMesh& mesh) { return subdivide_impl(mesh).mesh; }

IcoHierarchy build_hierarchy(int patch_level, int depth) {
  if (patch_level < 0) throw std::invalid_argument("patch level must be >= 0");
  if (depth < 1) throw std::invalid_argument("hierarchy depth must be >= 1 (a patch needs an interior)");

  IcoHierarchy h;
  h.patch_level = patch_level;
  h.depth = depth;

  IcoMesh mesh = icosahedron();
  for (int k = 0; k < patch_level; ++k) mesh = subdivide(mesh);
  h.meshes.push_back(std::move(mesh));

  for (int t = 0; t < depth; ++t) {
    SubdivideResult r = subdivide_impl(h.meshes.back());
    h.meshes.push_back(std::move(r.mesh));
    h.child_faces.push_back(std::move(r.child_faces));
    h.edge_midpoints.push_back(std::move(r.edge_midpoints));
  }
  return h;
}

PatchTable patch_table(const IcoHierarchy& h) {
  const int d = h.depth;
  const int side = 1 << d;

  PatchTable table;
  table.patch_level = h.patch_level;
  table.data_level = h.data_level();
  table.verts_per_patch = (side + 1) * (side + 2) / 2;
  table.multiplicity.assign(h.data_mesh().vertices.size(), 0);
  table.patches.reserve(h.patch_mesh().faces.size());

  for (const auto& face : h.patch_mesh().faces) {
    // Triangular index grid refined level by level through the recorded edge
    // midpoints. grid[i][j] holds the vertex at barycentric position
    // v0 + (i/s)(v1-v0) + (j/s)(v2-v1).
    std::vector<std::vector<uint32_t>> grid = {{face[0]}, {face[1], face[2]}};
    for (int t = 0; t < d; ++t) {
      const auto& mids = h.edge_midpoints[t];
      const int s = 2 << t;
      std::vector<std::vector<uint32_t>> fine(s + 1);
      for (int i = 0; i <= s; ++i) {
        fine[i].resize(i + 1);
        for (int j = 0; j <= i; ++j) {
          uint32_t v;
          if (i % 2 == 0 && j % 2 == 0) {
            v = grid[i / 2][j / 2];
          } else if (i % 2 == 1 && j % 2 == 0) {
            v = mids.at(edge_key(grid[(i - 1) / 2][j / 2], grid[(i + 1) / 2][j / 2]));
          } else if (i % 2 == 0) {
            v = mids.at(edge_key(grid[i / 2][(j - 1) / 2], grid[i / 2][(j + 1) / 2]));
          } else {
            v = mids.at(edge_key(grid[(i - 1) / 2][(j - 1) / 2], grid[(i + 1) / 2][(j + 1) / 2]));
          }
          fine[i][j] = v;
        }
      }
      grid = std::move(fine);
    }

    std::vector<uint32_t> row;
    row.reserve(table.verts_per_patch);
    for (const auto& r : grid)
      for (uint32_t v : r) row.push_back(v);
    for (uint32_t v : row) ++table.multiplicity[v];
    table.patches.push_back(std::move(row));
  }
  return table;
}

void validate_mesh(const IcoMesh& mesh) {
  if (mesh.vertex_count() != expected_vertices(mesh.level))
    throw std::runtime_error("mesh level " + std::to_string(mesh.level) + ": vertex count " +
                             std::to_string(mesh.vertex_count()) + " != " +
                             std::to_string(expected_vertices(mesh.level)));
  if (mesh.face_count() != expected_faces(mesh.level))
    throw std::runtime_error("mesh level " + std::to_string(mesh.level) + ": face count " +
                             std::to_string(mesh.face_count()) + " != " +
                             std::to_string(expected_faces(mesh.level)));

  for (const auto& v : mesh.vertices) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (std::abs(n - 1.0) > 1e-9)
      throw std::runtime_error("vertex off the unit sphere by " + std::to_string(n - 1.0));
  }

  std::unordered_map<uint64_t, int> edge_use;
  for (const auto& f : mesh.faces) {
    for (uint32_t v : f)
      if (v >= mesh.vertices.size()) throw std::runtime_error("face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw std::runtime_error("degenerate face");
    ++edge_use[edge_key(f[0], f[1])];
    ++edge_use[edge_key(f[1], f[2])];
    ++edge_use[edge_key(f[2], f[0])];
  }
  for (const auto& [key, uses] : edge_use)
    if (uses != 2)
      throw std::runtime_error("edge shared by " + std::to_string(uses) + " faces, expected 2");
}

void validate_hierarchy(const IcoHierarchy& h) {
  if (h.meshes.size() != static_cast<size_t>(h.depth) + 1)
    throw std::runtime_error("hierarchy level count mismatch");
  for (const auto& mesh : h.meshes) validate_mesh(mesh);

  for (int t = 0; t < h.depth; ++t) {
    const IcoMesh& coarse = h.meshes[t];
    const IcoMesh& fine = h.meshes[t + 1];
    // parents keep their indices and exact coordinates
    for (int64_t v = 0; v < coarse.vertex_count(); ++v)
      if (coarse.vertices[v] != fine.vertices[v])
        throw std::runtime_error("parent vertex moved during subdivision");
    if (h.child_faces[t].size() != coarse.faces.size())
      throw std::runtime_error("child-face table size mismatch");
    std::vector<bool> seen(fine.faces.size(), false);
    for (const auto& kids : h.child_faces[t])
      for (uint32_t c : kids) {
        if (c >= fine.faces.size() || seen[c])
          throw std::runtime_error("child-face table not a bijection onto fine faces");
        seen[c] = true;
      }
  }
}

void validate_patch_table(const IcoHierarchy& h, const PatchTable& table) {
  const int64_t n = h.patch_mesh().face_count();
  if (table.patch_count() != n) throw std::runtime_error("patch count mismatch");

  std::vector<uint32_t> mult(h.data_mesh().vertices.size(), 0);
  for (const auto& row : table.patches) {
    if (static_cast<int>(row.size()) != table.verts_per_patch)
      throw std::runtime_error("patch row has wrong length");
    std::set<uint32_t> distinct(row.begin(), row.end());
    if (distinct.size() != row.size())
      throw std::runtime_error("patch row contains duplicate vertices");
    for (uint32_t v : row) ++mult[v];
  }
  for (size_t v = 0; v < mult.size(); ++v) {
    if (mult[v] == 0) throw std::runtime_error("data vertex missing from every patch");
    if (mult[v] != table.multiplicity[v])
      throw std::runtime_error("stored multiplicity disagrees with recount");
  }

  // every data-level face's vertices appear in its ancestor's row
  std::vector<uint32_t> ancestor(h.data_mesh().face_count());
  for (int64_t f = 0; f < n; ++f) {
    std::vector<uint32_t> frontier = {static_cast<uint32_t>(f)};
    for (int t = 0; t < h.depth; ++t) {
      std::vector<uint32_t> next;
      next.reserve(frontier.size() * 4);
      for (uint32_t g : frontier)
        for (uint32_t c : h.child_faces[t][g]) next.push_back(c);
      frontier = std::move(next);
    }
    for (uint32_t g : frontier) ancestor[g] = static_cast<uint32_t>(f);
  }
  for (int64_t g = 0; g < h.data_mesh().face_count(); ++g) {
    const auto& row = table.patches[ancestor[g]];
    for (uint32_t v : h.data_mesh().faces[g])
      if (std::find(row.begin(), row.end(), v) == row.end())
        throw std::runtime_error("descendant face vertex missing from its patch row");
  }
}

void write_mesh(const IcoMesh& mesh, const std::filesystem::path& path) {
  io::Writer w(path);
  w.magic("SMSH");
  w.u32(1);
  w.u32(static_cast<uint32_t>(mesh.level));
  w.u64(mesh.vertices.size());
  w.u64(mesh.faces.size());
  for (const auto& v : mesh.vertices)
    for (double x : v) w.f64(x);
  for (const auto& f : mesh.faces)
    for (uint32_t i : f) w.u32(i);
  w.close();
}

IcoMesh read_mesh(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("SMSH");
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("unsupported SMESH version " + std::to_string(version));

  IcoMesh mesh;
  mesh.level = static_cast<int>(r.u32());
  const uint64_t nv = r.u64();
  const uint64_t nf = r.u64();
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices)
    for (double& x : v) x = r.f64();
  mesh.faces.resize(nf);
  for (auto& f : mesh.faces)
    for (uint32_t& i : f) i = r.u32();
  return mesh;
}

}  // namespace smae::geodesy
