#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "smae/geodesy.hpp"

using namespace smae::geodesy;

TEST_CASE("icosahedron is a closed unit-sphere mesh") {
  IcoMesh ico = icosahedron();
  CHECK(ico.level == 0);
  CHECK(ico.vertex_count() == 12);
  CHECK(ico.face_count() == 20);

  for (const auto& v : ico.vertices) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    CHECK(std::abs(n - 1.0) < 1e-12);
  }

  std::map<uint64_t, int> edge_use;
  for (const auto& f : ico.faces) {
    edge_use[edge_key(f[0], f[1])]++;
    edge_use[edge_key(f[1], f[2])]++;
    edge_use[edge_key(f[2], f[0])]++;
  }
  CHECK(edge_use.size() == 30);
  for (const auto& [k, uses] : edge_use) CHECK(uses == 2);

  CHECK_NOTHROW(validate_mesh(ico));
}

TEST_CASE("subdivision counts follow 10*4^k+2 / 20*4^k") {
  IcoMesh m = icosahedron();
  int64_t expect_v[] = {12, 42, 162, 642, 2562, 10242, 40962};
  int64_t expect_f[] = {20, 80, 320, 1280, 5120, 20480, 81920};
  for (int k = 0; k <= 6; ++k) {
    CHECK(m.vertex_count() == expect_v[k]);
    CHECK(m.face_count() == expect_f[k]);
    CHECK(m.level == k);
    if (k < 6) m = subdivide(m);
  }
  CHECK_NOTHROW(validate_mesh(m));
}

TEST_CASE("subdivision keeps parent vertices at their indices") {
  IcoMesh coarse = icosahedron();
  IcoMesh fine = subdivide(coarse);
  for (int64_t i = 0; i < coarse.vertex_count(); ++i) {
    CHECK(fine.vertices[i][0] == coarse.vertices[i][0]);
    CHECK(fine.vertices[i][1] == coarse.vertices[i][1]);
    CHECK(fine.vertices[i][2] == coarse.vertices[i][2]);
  }
}

TEST_CASE("hierarchy at patch level 3, depth 3 covers the sphere in 1280x45 patches") {
  IcoHierarchy h = build_hierarchy(3, 3);
  CHECK_NOTHROW(validate_hierarchy(h));
  CHECK(h.patch_mesh().face_count() == 1280);
  CHECK(h.data_mesh().vertex_count() == 40962);

  PatchTable table = patch_table(h);
  CHECK_NOTHROW(validate_patch_table(h, table));
  CHECK(table.patch_count() == 1280);
  CHECK(table.verts_per_patch == 45);

  std::set<uint32_t> covered;
  for (const auto& row : table.patches) {
    CHECK(row.size() == 45);
    std::set<uint32_t> distinct(row.begin(), row.end());
    CHECK(distinct.size() == 45);
    covered.insert(row.begin(), row.end());
  }
  CHECK(covered.size() == 40962);
  CHECK(*covered.rbegin() == 40961);

  int64_t mult_sum = 0;
  for (uint32_t m : table.multiplicity) {
    CHECK(m >= 1);
    mult_sum += m;
  }
  CHECK(mult_sum == 1280 * 45);
}

TEST_CASE("patch rows put the coarse corners at the barycentric corners") {
  IcoHierarchy h = build_hierarchy(2, 3);
  PatchTable table = patch_table(h);
  const int s = 8;  // 2^depth
  const int i_v1 = s * (s + 1) / 2;
  const int i_v2 = i_v1 + s;
  for (int64_t f = 0; f < h.patch_mesh().face_count(); ++f) {
    const auto& face = h.patch_mesh().faces[f];
    CHECK(table.patches[f][0] == face[0]);
    CHECK(table.patches[f][i_v1] == face[1]);
    CHECK(table.patches[f][i_v2] == face[2]);
  }
}

TEST_CASE("corner multiplicity equals patch-mesh vertex degree, interior is 1") {
  IcoHierarchy h = build_hierarchy(1, 2);
  PatchTable table = patch_table(h);
  CHECK(table.verts_per_patch == 15);

  const IcoMesh& pm = h.patch_mesh();
  std::vector<uint32_t> degree(pm.vertices.size(), 0);
  for (const auto& f : pm.faces)
    for (uint32_t v : f) degree[v]++;

  // coarse vertices keep their indices at the data level
  for (int64_t v = 0; v < pm.vertex_count(); ++v)
    CHECK(table.multiplicity[v] == degree[v]);

  // every data vertex sits in 1 (interior), 2 (edge) or degree (corner) patches
  std::set<uint32_t> seen(table.multiplicity.begin() + pm.vertex_count(),
                          table.multiplicity.end());
  for (uint32_t m : seen) CHECK((m == 1 || m == 2));
}

TEST_CASE("each coarse face owns exactly 4^depth descendant faces") {
  IcoHierarchy h = build_hierarchy(1, 3);
  CHECK(h.patch_mesh().face_count() == 80);
  for (int64_t f = 0; f < h.patch_mesh().face_count(); ++f) {
    std::set<uint32_t> frontier{static_cast<uint32_t>(f)};
    for (int t = 0; t < h.depth; ++t) {
      std::set<uint32_t> next;
      for (uint32_t face : frontier)
        for (uint32_t c : h.child_faces[t][face]) next.insert(c);
      frontier = std::move(next);
    }
    CHECK(frontier.size() == 64);
    for (uint32_t face : frontier) CHECK(face < h.data_mesh().face_count());
  }
}

TEST_CASE("patch level 0 works and zero depth is rejected") {
  IcoHierarchy h = build_hierarchy(0, 3);
  PatchTable table = patch_table(h);
  CHECK(table.patch_count() == 20);
  CHECK(h.data_mesh().vertex_count() == 642);
  std::set<uint32_t> covered;
  for (const auto& row : table.patches) covered.insert(row.begin(), row.end());
  CHECK(covered.size() == 642);

  CHECK_THROWS_AS(build_hierarchy(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_hierarchy(-1, 3), std::invalid_argument);
}

TEST_CASE("hierarchy construction is deterministic") {
  IcoHierarchy a = build_hierarchy(2, 2);
  IcoHierarchy b = build_hierarchy(2, 2);
  for (size_t m = 0; m < a.meshes.size(); ++m) {
    REQUIRE(a.meshes[m].vertices.size() == b.meshes[m].vertices.size());
    CHECK(std::memcmp(a.meshes[m].vertices.data(), b.meshes[m].vertices.data(),
                      a.meshes[m].vertices.size() * sizeof(a.meshes[m].vertices[0])) == 0);
    CHECK(a.meshes[m].faces == b.meshes[m].faces);
  }
  PatchTable ta = patch_table(a);
  PatchTable tb = patch_table(b);
  CHECK(ta.patches == tb.patches);
  CHECK(ta.multiplicity == tb.multiplicity);
}

TEST_CASE("patch vertices stay near their coarse face") {
  IcoHierarchy h = build_hierarchy(2, 2);
  PatchTable table = patch_table(h);
  const IcoMesh& pm = h.patch_mesh();
  const IcoMesh& dm = h.data_mesh();
  for (int64_t f = 0; f < pm.face_count(); ++f) {
    const auto& face = pm.faces[f];
    double cx = 0, cy = 0, cz = 0;
    for (uint32_t v : face) {
      cx += pm.vertices[v][0];
      cy += pm.vertices[v][1];
      cz += pm.vertices[v][2];
    }
    for (uint32_t v : table.patches[f]) {
      const auto& p = dm.vertices[v];
      CHECK(p[0] * cx + p[1] * cy + p[2] * cz > 0.5);
    }
  }
}

TEST_CASE("mesh files round-trip bit-exact and reject corruption") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "smae_geo_test";
  fs::create_directories(dir);
  const fs::path path = dir / "ico2.smesh";

  IcoMesh m = subdivide(subdivide(icosahedron()));
  write_mesh(m, path);
  IcoMesh r = read_mesh(path);
  CHECK(r.level == m.level);
  REQUIRE(r.vertices.size() == m.vertices.size());
  CHECK(std::memcmp(r.vertices.data(), m.vertices.data(),
                    m.vertices.size() * sizeof(m.vertices[0])) == 0);
  CHECK(r.faces == m.faces);

  SUBCASE("corrupted magic is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
    f.close();
    bool threw = false;
    try {
      read_mesh(path);
    } catch (const std::runtime_error& e) {
      threw = true;
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    CHECK(threw);
  }

  SUBCASE("truncated file is rejected") {
    const auto full = fs::file_size(path);
    fs::resize_file(path, full / 2);
    bool threw = false;
    try {
      read_mesh(path);
    } catch (const std::runtime_error& e) {
      threw = true;
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    CHECK(threw);
  }

  fs::remove_all(dir);
}
