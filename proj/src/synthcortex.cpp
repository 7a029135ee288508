#include "smae/synthcortex.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "smae/geodesy.hpp"
#include "smae/io.hpp"
#include "smae/rng.hpp"

namespace smae::synthcortex {

namespace {

// One smooth scalar field on the sphere: offset plus a handful of
// low-frequency directional cosines.
struct CosField {
  double offset = 0.0;
  struct Component {
    std::array<double, 3> dir;
    double freq, phase, amp;
  };
  std::vector<Component> components;

  double eval(const std::array<double, 3>& v) const {
    double s = offset;
    for (const auto& c : components) {
      const double d = c.dir[0] * v[0] + c.dir[1] * v[1] + c.dir[2] * v[2];
      s += c.amp * std::cos(c.freq * d + c.phase);
    }
    return s;
  }
};

CosField random_field(Rng& rng, double offset, int components) {
  CosField f;
  f.offset = offset;
  for (int k = 0; k < components; ++k) {
    std::array<double, 3> d{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    f.components.push_back({{d[0] / n, d[1] / n, d[2] / n},
                            rng.uniform(1.0, 4.0),
                            rng.uniform(0.0, 2.0 * std::numbers::pi),
                            rng.uniform(0.3, 0.8)});
  }
  return f;
}

}  // namespace

SurfaceDataset generate(int64_t n, int data_level, int channels, uint64_t seed, double snr) {
  if (n < 10) throw std::invalid_argument("dataset needs at least 10 subjects, got " +
                                          std::to_string(n));
  if (data_level < 2)
    throw std::invalid_argument("data level must be >= 2, got " + std::to_string(data_level));
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (!(snr > 0.0))
    throw std::invalid_argument("snr must be positive (use +inf for noiseless)");

  geodesy::IcoMesh mesh = geodesy::icosahedron();
  for (int k = 0; k < data_level; ++k) mesh = geodesy::subdivide(mesh);
  const int64_t nv = mesh.vertex_count();

  Rng base(seed);
  Rng pattern_rng = base.fork(1);

  // Channel patterns A (y=0 extreme), B (y=1 extreme), C (mid-range bump).
  // A and B get channel means at least 0.5 apart so even the per-channel
  // mean carries phenotype signal.
  struct ChannelPattern {
    CosField a, b, c;
  };
  std::vector<ChannelPattern> patterns;
  for (int c = 0; c < channels; ++c) {
    const double a0 = pattern_rng.uniform(-0.5, 0.5);
    const double gap = 0.5 + pattern_rng.uniform(0.0, 0.5);
    const double b0 = a0 + (pattern_rng.below(2) == 0 ? gap : -gap);
    ChannelPattern p;
    p.a = random_field(pattern_rng, a0, 5);
    p.b = random_field(pattern_rng, b0, 5);
    p.c = random_field(pattern_rng, 0.0, 5);
    patterns.push_back(std::move(p));
  }

  SurfaceDataset ds;
  ds.data_level = data_level;
  ds.patch_level = data_level - 3;
  ds.channels = channels;
  {
    nlohmann::json prov;
    prov["generator"] = "cosine-field-blend";
    prov["subjects"] = n;
    prov["dataLevel"] = data_level;
    prov["channels"] = channels;
    prov["seed"] = seed;
    prov["snr"] = std::isinf(snr) ? nlohmann::json("inf") : nlohmann::json(snr);
    ds.provenance = prov.dump();
  }

  for (int64_t i = 0; i < n; ++i) {
    Rng rng = base.fork(1000 + static_cast<uint64_t>(i));
    SurfaceSubject subj;
    char buf[32];
    std::snprintf(buf, sizeof buf, "subj%04lld", static_cast<long long>(i));
    subj.id = buf;
    subj.phenotype = rng.uniform();
    subj.x = Tensor<float>({nv, channels});

    const double y = subj.phenotype;
    const double wa = 1.0 - y, wb = y, wc = 0.5 * std::sin(std::numbers::pi * y);
    std::vector<double> clean(static_cast<size_t>(nv));
    for (int c = 0; c < channels; ++c) {
      const ChannelPattern& p = patterns[static_cast<size_t>(c)];
      double mean = 0.0;
      for (int64_t v = 0; v < nv; ++v) {
        const double val = wa * p.a.eval(mesh.vertices[static_cast<size_t>(v)]) +
                           wb * p.b.eval(mesh.vertices[static_cast<size_t>(v)]) +
                           wc * p.c.eval(mesh.vertices[static_cast<size_t>(v)]);
        clean[static_cast<size_t>(v)] = val;
        mean += val;
      }
      mean /= static_cast<double>(nv);
      double var = 0.0;
      for (double val : clean) var += (val - mean) * (val - mean);
      const double sigma = std::isinf(snr) ? 0.0 : std::sqrt(var / static_cast<double>(nv)) / snr;
      for (int64_t v = 0; v < nv; ++v)
        subj.x.at(v, c) =
            static_cast<float>(clean[static_cast<size_t>(v)] + sigma * rng.normal());
    }
    ds.subjects.push_back(std::move(subj));
  }
  return ds;
}

void normalize(SurfaceSubject& subject) {
  const int64_t nv = subject.x.shape()[0];
  const int64_t channels = subject.x.shape()[1];
  for (int64_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (int64_t v = 0; v < nv; ++v) mean += subject.x.at(v, c);
    mean /= static_cast<double>(nv);
    double var = 0.0;
    for (int64_t v = 0; v < nv; ++v) {
      const double d = subject.x.at(v, c) - mean;
      var += d * d;
    }
    const double std_dev = std::sqrt(var / static_cast<double>(nv));
    if (std_dev < 1e-8) {
      for (int64_t v = 0; v < nv; ++v) subject.x.at(v, c) = 0.0f;
      continue;
    }
    for (int64_t v = 0; v < nv; ++v) {
      const double z = (subject.x.at(v, c) - mean) / std_dev;
      subject.x.at(v, c) = static_cast<float>(std::clamp(z, -3.0, 3.0));
    }
  }
}

void normalize(SurfaceDataset& dataset) {
  for (auto& s : dataset.subjects) normalize(s);
}

std::vector<int> phenotype_bins(const SurfaceDataset& dataset, int bins) {
  if (bins < 1) throw std::invalid_argument("bin count must be >= 1");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : dataset.subjects) {
    lo = std::min(lo, s.phenotype);
    hi = std::max(hi, s.phenotype);
  }
  std::vector<int> out(dataset.subjects.size(), 0);
  if (!(hi > lo)) return out;  // degenerate range: single bin
  for (size_t i = 0; i < dataset.subjects.size(); ++i) {
    const double t = (dataset.subjects[i].phenotype - lo) / (hi - lo);
    out[i] = std::min(bins - 1, static_cast<int>(t * bins));
  }
  return out;
}

namespace {

// Largest-remainder apportionment of n into parts proportional to weights.
std::vector<int64_t> apportion(int64_t n, const std::vector<double>& weights) {
  const size_t k = weights.size();
  std::vector<int64_t> out(k);
  std::vector<std::pair<double, size_t>> rema;
  int64_t assigned = 0;
  for (size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(n) * weights[i];
    out[i] = static_cast<int64_t>(std::floor(exact));
    assigned += out[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int64_t r = 0; r < n - assigned; ++r) out[rema[static_cast<size_t>(r)].second]++;
  return out;
}

}  // namespace

void split_dataset(SurfaceDataset& dataset, double train, double val, double test, int bins,
                   uint64_t seed) {
  const std::vector<double> ratios{train, val, test};
  for (double r : ratios)
    if (r < 0.0) throw std::invalid_argument("split ratios must be non-negative");
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");

  const int64_t n = static_cast<int64_t>(dataset.subjects.size());
  const std::vector<int> bin_of = phenotype_bins(dataset, bins);
  std::vector<std::vector<int64_t>> members(static_cast<size_t>(bins));
  for (int64_t i = 0; i < n; ++i)
    members[static_cast<size_t>(bin_of[static_cast<size_t>(i)])].push_back(i);

  const std::vector<int64_t> target = apportion(n, ratios);

  // per-bin proportional allocation...
  std::vector<std::array<int64_t, 3>> alloc(static_cast<size_t>(bins), {0, 0, 0});
  std::array<int64_t, 3> assigned{0, 0, 0};
  for (int b = 0; b < bins; ++b) {
    const auto a = apportion(static_cast<int64_t>(members[static_cast<size_t>(b)].size()), ratios);
    for (int t = 0; t < 3; ++t) {
      alloc[static_cast<size_t>(b)][static_cast<size_t>(t)] = a[static_cast<size_t>(t)];
      assigned[static_cast<size_t>(t)] += a[static_cast<size_t>(t)];
    }
  }
  // ...then shuffle single subjects between splits (never across bins) until
  // the global counts match the targets exactly.
  auto over = [&]() {
    for (int t = 0; t < 3; ++t)
      if (assigned[static_cast<size_t>(t)] > target[static_cast<size_t>(t)]) return t;
    return -1;
  };
  auto under = [&]() {
    for (int t = 0; t < 3; ++t)
      if (assigned[static_cast<size_t>(t)] < target[static_cast<size_t>(t)]) return t;
    return -1;
  };
  for (int t_over = over(); t_over >= 0; t_over = over()) {
    const int t_under = under();
    int best = -1;
    for (int b = 0; b < bins; ++b)
      if (alloc[static_cast<size_t>(b)][static_cast<size_t>(t_over)] > 0 &&
          (best < 0 || alloc[static_cast<size_t>(b)][static_cast<size_t>(t_over)] >
                           alloc[static_cast<size_t>(best)][static_cast<size_t>(t_over)]))
        best = b;
    alloc[static_cast<size_t>(best)][static_cast<size_t>(t_over)]--;
    alloc[static_cast<size_t>(best)][static_cast<size_t>(t_under)]++;
    assigned[static_cast<size_t>(t_over)]--;
    assigned[static_cast<size_t>(t_under)]++;
  }

  Rng rng(seed);
  for (int b = 0; b < bins; ++b) {
    auto& m = members[static_cast<size_t>(b)];
    Rng bin_rng = rng.fork(static_cast<uint64_t>(b));
    bin_rng.shuffle(m);
    int64_t at = 0;
    for (int t = 0; t < 3; ++t)
      for (int64_t k = 0; k < alloc[static_cast<size_t>(b)][static_cast<size_t>(t)]; ++k)
        dataset.subjects[static_cast<size_t>(m[static_cast<size_t>(at++)])].split =
            static_cast<SplitTag>(t);
  }
}

void write_dataset(const SurfaceDataset& dataset, const std::filesystem::path& path) {
  io::Writer w(path);
  w.magic("SSRF");
  w.u32(1);
  nlohmann::json header;
  header["dataLevel"] = dataset.data_level;
  header["patchLevel"] = dataset.patch_level;
  header["channels"] = dataset.channels;
  header["subjectCount"] = dataset.subjects.size();
  header["provenance"] =
      dataset.provenance.empty() ? nlohmann::json() : nlohmann::json::parse(dataset.provenance);
  w.str(header.dump());
  for (const auto& s : dataset.subjects) {
    w.str(s.id);
    w.f64(s.phenotype);
    w.u8(static_cast<uint8_t>(s.split));
    w.f32_array(s.x.span());
  }
  w.close();
}

SurfaceDataset read_dataset(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("SSRF");
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("unsupported SSRF version " + std::to_string(version) + " in " +
                             path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed SSRF header in " + path.string() + ": " + e.what());
  }
  SurfaceDataset ds;
  ds.data_level = header.at("dataLevel").get<int>();
  ds.patch_level = header.at("patchLevel").get<int>();
  ds.channels = header.at("channels").get<int>();
  if (!header.at("provenance").is_null()) ds.provenance = header.at("provenance").dump();
  const auto count = header.at("subjectCount").get<uint64_t>();
  const int64_t nv = ds.vertex_count();
  for (uint64_t i = 0; i < count; ++i) {
    SurfaceSubject s;
    s.id = r.str();
    s.phenotype = r.f64();
    const uint8_t tag = r.u8();
    if (tag > 2)
      throw std::runtime_error("bad split tag " + std::to_string(tag) + " in " + path.string());
    s.split = static_cast<SplitTag>(tag);
    s.x = Tensor<float>({nv, ds.channels});
    r.f32_array(s.x.span());
    ds.subjects.push_back(std::move(s));
  }
  if (!r.at_eof())
    throw std::runtime_error("trailing bytes after " + std::to_string(count) + " subjects in " +
                             path.string());
  return ds;
}

}  // namespace smae::synthcortex
