#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "smae/geodesy.hpp"
#include "smae/rng.hpp"
#include "smae/synthcortex.hpp"

using namespace smae;
using synthcortex::SplitTag;
using synthcortex::SurfaceDataset;
using synthcortex::SurfaceSubject;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "smae_synthcortex_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

double channel_std(const tensor::Tensor<float>& x, int64_t c) {
  const int64_t nv = x.shape()[0];
  double mean = 0.0;
  for (int64_t v = 0; v < nv; ++v) mean += x.at(v, c);
  mean /= static_cast<double>(nv);
  double var = 0.0;
  for (int64_t v = 0; v < nv; ++v) {
    const double d = x.at(v, c) - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(nv));
}

}  // namespace

TEST_CASE("generate is deterministic in the seed") {
  auto a = synthcortex::generate(12, 2, 2, 99, 4.0);
  auto b = synthcortex::generate(12, 2, 2, 99, 4.0);
  auto c = synthcortex::generate(12, 2, 2, 100, 4.0);

  REQUIRE(a.subjects.size() == 12);
  CHECK(a.provenance == b.provenance);
  bool any_diff_from_c = false;
  for (size_t i = 0; i < a.subjects.size(); ++i) {
    CHECK(a.subjects[i].id == b.subjects[i].id);
    CHECK(a.subjects[i].phenotype == b.subjects[i].phenotype);
    const auto& xa = a.subjects[i].x;
    const auto& xb = b.subjects[i].x;
    REQUIRE(xa.shape() == xb.shape());
    for (int64_t k = 0; k < xa.numel(); ++k) CHECK(xa.data()[k] == xb.data()[k]);
    if (a.subjects[i].phenotype != c.subjects[i].phenotype) any_diff_from_c = true;
  }
  CHECK(any_diff_from_c);
}

TEST_CASE("generate validates its arguments") {
  CHECK_THROWS_AS(synthcortex::generate(9, 4, 4, 1, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(synthcortex::generate(10, 1, 4, 1, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(synthcortex::generate(10, 4, 0, 1, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(synthcortex::generate(10, 2, 1, 1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(synthcortex::generate(10, 2, 1, 1, -2.0), std::invalid_argument);
  CHECK_NOTHROW(synthcortex::generate(10, 2, 1, 1, INFINITY));
}

TEST_CASE("generate metadata and value sanity") {
  auto ds = synthcortex::generate(10, 3, 2, 5, 4.0);
  CHECK(ds.data_level == 3);
  CHECK(ds.patch_level == 0);
  CHECK(ds.channels == 2);
  CHECK(ds.vertex_count() == 642);
  auto prov = nlohmann::json::parse(ds.provenance);
  CHECK(prov.at("subjects").get<int64_t>() == 10);
  CHECK(prov.at("seed").get<uint64_t>() == 5);
  CHECK(prov.at("snr").get<double>() == doctest::Approx(4.0));
  for (const auto& s : ds.subjects) {
    CHECK(s.phenotype >= 0.0);
    CHECK(s.phenotype < 1.0);
    CHECK(s.x.shape() == tensor::Shape{642, 2});
    CHECK(s.x.all_finite());
    CHECK(s.split == SplitTag::train);  // unsplit yet
  }

  auto noiseless = synthcortex::generate(10, 3, 2, 5, INFINITY);
  CHECK(nlohmann::json::parse(noiseless.provenance).at("snr").get<std::string>() == "inf");
}

TEST_CASE("noise amplitude tracks the requested snr") {
  // Same seed means identical clean fields and identical noise draws, so the
  // difference between a noisy and a noiseless dataset is exactly sigma*z.
  const double snr = 4.0;
  auto clean = synthcortex::generate(10, 3, 2, 7, INFINITY);
  auto noisy = synthcortex::generate(10, 3, 2, 7, snr);
  const int64_t nv = clean.vertex_count();
  for (size_t i = 0; i < 3; ++i) {
    for (int64_t c = 0; c < 2; ++c) {
      tensor::Tensor<float> diff({nv, 1});
      for (int64_t v = 0; v < nv; ++v)
        diff.at(v, 0) = noisy.subjects[i].x.at(v, c) - clean.subjects[i].x.at(v, c);
      const double ratio = channel_std(diff, 0) / channel_std(clean.subjects[i].x, c);
      CHECK(ratio == doctest::Approx(1.0 / snr).epsilon(0.15));
    }
  }
}

TEST_CASE("clean fields are smooth across mesh edges") {
  auto ds = synthcortex::generate(10, 3, 1, 21, INFINITY);
  geodesy::IcoMesh mesh = geodesy::icosahedron();
  for (int k = 0; k < 3; ++k) mesh = geodesy::subdivide(mesh);

  std::set<std::pair<uint32_t, uint32_t>> edges;
  for (const auto& f : mesh.faces)
    for (int e = 0; e < 3; ++e) {
      uint32_t a = f[static_cast<size_t>(e)], b = f[static_cast<size_t>((e + 1) % 3)];
      edges.emplace(std::min(a, b), std::max(a, b));
    }

  Rng rng(3);
  for (size_t i = 0; i < 3; ++i) {
    const auto& x = ds.subjects[i].x;
    double edge_msd = 0.0;
    for (const auto& [a, b] : edges) {
      const double d = x.at(a, 0) - x.at(b, 0);
      edge_msd += d * d;
    }
    edge_msd /= static_cast<double>(edges.size());

    double pair_msd = 0.0;
    const int64_t pairs = 4000;
    for (int64_t k = 0; k < pairs; ++k) {
      const auto a = rng.below(static_cast<uint64_t>(mesh.vertex_count()));
      const auto b = rng.below(static_cast<uint64_t>(mesh.vertex_count()));
      const double d = x.at(static_cast<int64_t>(a), 0) - x.at(static_cast<int64_t>(b), 0);
      pair_msd += d * d;
    }
    pair_msd /= static_cast<double>(pairs);
    CHECK(edge_msd < 0.5 * pair_msd);
  }
}

TEST_CASE("normalize gives zero-mean unit-std channels clipped to [-3,3]") {
  auto ds = synthcortex::generate(10, 2, 3, 13, 4.0);
  synthcortex::normalize(ds);
  for (const auto& s : ds.subjects) {
    for (int64_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int64_t v = 0; v < s.x.shape()[0]; ++v) {
        mean += s.x.at(v, c);
        CHECK(std::abs(s.x.at(v, c)) <= 3.0f);
      }
      mean /= static_cast<double>(s.x.shape()[0]);
      CHECK(std::abs(mean) < 0.05);  // clipping can push the mean off zero slightly
      CHECK(channel_std(s.x, c) == doctest::Approx(1.0).epsilon(0.05));
    }
  }
}

TEST_CASE("normalize zeroes a constant channel") {
  SurfaceSubject s;
  s.x = tensor::Tensor<float>({50, 2});
  for (int64_t v = 0; v < 50; ++v) {
    s.x.at(v, 0) = 7.5f;                             // constant -> zeros
    s.x.at(v, 1) = static_cast<float>(v); // ramp -> z-scored
  }
  synthcortex::normalize(s);
  for (int64_t v = 0; v < 50; ++v) CHECK(s.x.at(v, 0) == 0.0f);
  CHECK(channel_std(s.x, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("phenotype bins are equal-width over the observed range") {
  SurfaceDataset ds;
  for (double y : {0.0, 0.049, 0.5, 0.951, 1.0}) {
    SurfaceSubject s;
    s.phenotype = y;
    ds.subjects.push_back(std::move(s));
  }
  auto bins = synthcortex::phenotype_bins(ds, 10);
  CHECK(bins == std::vector<int>{0, 0, 5, 9, 9});

  for (auto& s : ds.subjects) s.phenotype = 0.37;  // degenerate range
  CHECK(synthcortex::phenotype_bins(ds, 10) == std::vector<int>{0, 0, 0, 0, 0});

  CHECK_THROWS_AS(synthcortex::phenotype_bins(ds, 0), std::invalid_argument);
}

TEST_CASE("split hits global targets exactly and stratifies by bin") {
  auto ds = synthcortex::generate(200, 2, 1, 31, 4.0);
  synthcortex::split_dataset(ds, 0.7, 0.15, 0.15, 10, 17);

  const auto train = ds.indices_of(SplitTag::train);
  const auto val = ds.indices_of(SplitTag::val);
  const auto test = ds.indices_of(SplitTag::test);
  CHECK(train.size() == 140);
  CHECK(val.size() == 30);
  CHECK(test.size() == 30);
  CHECK(train.size() + val.size() + test.size() == ds.subjects.size());

  // stratification: each bin's train share stays near 70%
  const auto bins = synthcortex::phenotype_bins(ds, 10);
  std::array<int, 10> bin_total{}, bin_train{};
  for (size_t i = 0; i < ds.subjects.size(); ++i) {
    bin_total[static_cast<size_t>(bins[i])]++;
    if (ds.subjects[i].split == SplitTag::train) bin_train[static_cast<size_t>(bins[i])]++;
  }
  for (int b = 0; b < 10; ++b) {
    if (bin_total[static_cast<size_t>(b)] == 0) continue;
    const double expect = 0.7 * bin_total[static_cast<size_t>(b)];
    CHECK(std::abs(bin_train[static_cast<size_t>(b)] - expect) <= 2.0);
  }

  // deterministic in the seed
  auto ds2 = synthcortex::generate(200, 2, 1, 31, 4.0);
  synthcortex::split_dataset(ds2, 0.7, 0.15, 0.15, 10, 17);
  for (size_t i = 0; i < ds.subjects.size(); ++i)
    CHECK(ds.subjects[i].split == ds2.subjects[i].split);

  auto ds3 = synthcortex::generate(200, 2, 1, 31, 4.0);
  synthcortex::split_dataset(ds3, 0.7, 0.15, 0.15, 10, 18);
  bool any_diff = false;
  for (size_t i = 0; i < ds.subjects.size(); ++i)
    if (ds.subjects[i].split != ds3.subjects[i].split) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("split rejects bad ratios") {
  auto ds = synthcortex::generate(10, 2, 1, 1, 4.0);
  CHECK_THROWS_AS(synthcortex::split_dataset(ds, 0.7, 0.2, 0.2, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(synthcortex::split_dataset(ds, 1.2, -0.1, -0.1, 5, 1), std::invalid_argument);
}

TEST_CASE("dataset file round-trip is bit-exact") {
  auto ds = synthcortex::generate(11, 2, 2, 41, 4.0);
  synthcortex::split_dataset(ds, 0.7, 0.15, 0.15, 5, 2);
  const auto path = temp_file("roundtrip.ssrf");
  synthcortex::write_dataset(ds, path);
  auto back = synthcortex::read_dataset(path);

  CHECK(back.data_level == ds.data_level);
  CHECK(back.patch_level == ds.patch_level);
  CHECK(back.channels == ds.channels);
  CHECK(nlohmann::json::parse(back.provenance) == nlohmann::json::parse(ds.provenance));
  REQUIRE(back.subjects.size() == ds.subjects.size());
  for (size_t i = 0; i < ds.subjects.size(); ++i) {
    CHECK(back.subjects[i].id == ds.subjects[i].id);
    CHECK(back.subjects[i].phenotype == ds.subjects[i].phenotype);
    CHECK(back.subjects[i].split == ds.subjects[i].split);
    REQUIRE(back.subjects[i].x.shape() == ds.subjects[i].x.shape());
    for (int64_t k = 0; k < ds.subjects[i].x.numel(); ++k)
      CHECK(back.subjects[i].x.data()[k] == ds.subjects[i].x.data()[k]);
  }
}

TEST_CASE("empty provenance survives a round-trip") {
  SurfaceDataset ds;
  ds.data_level = 2;
  ds.patch_level = -1;
  ds.channels = 1;
  SurfaceSubject s;
  s.id = "only";
  s.x = tensor::Tensor<float>::zeros({ds.vertex_count(), 1});
  ds.subjects.push_back(std::move(s));
  const auto path = temp_file("noprov.ssrf");
  synthcortex::write_dataset(ds, path);
  auto back = synthcortex::read_dataset(path);
  CHECK(back.provenance.empty());
  CHECK(back.subjects.size() == 1);
}

TEST_CASE("corrupt dataset files are rejected with diagnostics") {
  auto ds = synthcortex::generate(10, 2, 1, 3, 4.0);
  const auto good = temp_file("good.ssrf");
  synthcortex::write_dataset(ds, good);

  std::vector<char> bytes;
  {
    std::ifstream in(good, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  const auto bad_magic = temp_file("bad_magic.ssrf");
  {
    auto copy = bytes;
    copy[0] = 'X';
    std::ofstream(bad_magic, std::ios::binary).write(copy.data(), static_cast<std::streamsize>(copy.size()));
  }
  CHECK_THROWS_WITH_AS(synthcortex::read_dataset(bad_magic),
                       doctest::Contains("bad magic"), std::runtime_error);

  const auto bad_version = temp_file("bad_version.ssrf");
  {
    auto copy = bytes;
    copy[4] = 9;  // little-endian version word
    std::ofstream(bad_version, std::ios::binary).write(copy.data(), static_cast<std::streamsize>(copy.size()));
  }
  CHECK_THROWS_WITH_AS(synthcortex::read_dataset(bad_version),
                       doctest::Contains("unsupported SSRF version"), std::runtime_error);

  const auto truncated = temp_file("truncated.ssrf");
  std::ofstream(truncated, std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  CHECK_THROWS_WITH_AS(synthcortex::read_dataset(truncated),
                       doctest::Contains("truncated"), std::runtime_error);

  const auto trailing = temp_file("trailing.ssrf");
  {
    auto copy = bytes;
    copy.push_back('\0');
    std::ofstream(trailing, std::ios::binary).write(copy.data(), static_cast<std::streamsize>(copy.size()));
  }
  CHECK_THROWS_WITH_AS(synthcortex::read_dataset(trailing),
                       doctest::Contains("trailing bytes"), std::runtime_error);

  CHECK_THROWS_AS(synthcortex::read_dataset(temp_file("missing.ssrf")), std::runtime_error);
}
