#include <cmath>
#include <numeric>

#include <doctest.h>

#include "model_helpers.hpp"
#include "smae/geodesy.hpp"
#include "smae/sit.hpp"

using namespace smae;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

geodesy::PatchTable table_at(int patch_level) {
  return geodesy::patch_table(geodesy::build_hierarchy(patch_level, sit::kPatchDepth));
}

template <typename S>
Tensor<S> random_map(const geodesy::PatchTable& t, int64_t channels, Rng& rng) {
  return tensor::randn<S>({t.data_vertex_count(), channels}, rng, 1.0);
}

}  // namespace

TEST_CASE("patchify lays rows out channel-major over patch vertices") {
  const auto table = table_at(0);
  const int64_t c = 3;
  Tensor<double> x(Shape{table.data_vertex_count(), c});
  for (int64_t v = 0; v < table.data_vertex_count(); ++v)
    for (int64_t ch = 0; ch < c; ++ch) x.at(v, ch) = static_cast<double>(v * 10 + ch);

  Tensor<double> tok = sit::patchify(x, table);
  REQUIRE(tok.shape() == Shape{20, 45 * c});
  for (int64_t p = 0; p < 20; ++p)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t j = 0; j < 45; ++j)
        CHECK(tok.at(p, ch * 45 + j) ==
              static_cast<double>(table.patches[static_cast<size_t>(p)][static_cast<size_t>(j)] *
                                      10 +
                                  ch));

  Tensor<double> bad(Shape{7, c});
  CHECK_THROWS_AS(sit::patchify(bad, table), std::invalid_argument);
}

TEST_CASE("patchify/unpatchify round-trips bit-exactly in both precisions") {
  const auto table = table_at(1);
  Rng rng(31);
  {
    Tensor<double> x = random_map<double>(table, 4, rng);
    Tensor<double> back = sit::unpatchify(sit::patchify(x, table), table, 4);
    REQUIRE(back.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
  }
  {
    Tensor<float> x = random_map<float>(table, 2, rng);
    Tensor<float> back = sit::unpatchify(sit::patchify(x, table), table, 2);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
  }
}

TEST_CASE("unpatchify averages disagreeing copies by multiplicity") {
  const auto table = table_at(0);
  // slot value = patch index; vertex ends up with the mean patch index of
  // the patches that contain it.
  Tensor<double> tok(Shape{table.patch_count(), 45});
  for (int64_t p = 0; p < table.patch_count(); ++p)
    for (int64_t j = 0; j < 45; ++j) tok.at(p, j) = static_cast<double>(p);

  Tensor<double> out = sit::unpatchify(tok, table, 1);
  for (int64_t v = 0; v < table.data_vertex_count(); ++v) {
    double sum = 0.0;
    int64_t hits = 0;
    for (int64_t p = 0; p < table.patch_count(); ++p)
      for (int64_t j = 0; j < 45; ++j)
        if (table.patches[static_cast<size_t>(p)][static_cast<size_t>(j)] == v) {
          sum += static_cast<double>(p);
          ++hits;
        }
    REQUIRE(hits == table.multiplicity[static_cast<size_t>(v)]);
    CHECK(out.at(v, 0) == doctest::Approx(sum / static_cast<double>(hits)).epsilon(1e-12));
  }
}

TEST_CASE("sincos positional encoding matches its formula") {
  const int64_t n = 33, d = 16;
  Tensor<double> pe = sit::sincos_posenc<double>(n, d);
  REQUIRE(pe.shape() == Shape{n, d});

  // position 0: sines all zero, cosines all one
  for (int64_t j = 0; j < d / 2; ++j) {
    CHECK(pe.at(0, j) == 0.0);
    CHECK(pe.at(0, d / 2 + j) == 1.0);
  }
  for (int64_t p = 0; p < n; ++p)
    for (int64_t j = 0; j < d / 2; ++j) {
      const double w = std::pow(10000.0, -2.0 * double(j) / double(d));
      CHECK(pe.at(p, j) == doctest::Approx(std::sin(double(p) * w)).epsilon(1e-15));
      CHECK(pe.at(p, d / 2 + j) == doctest::Approx(std::cos(double(p) * w)).epsilon(1e-15));
      CHECK(std::abs(pe.at(p, j)) <= 1.0);
    }

  // all rows distinct
  for (int64_t a = 0; a < n; ++a)
    for (int64_t b = a + 1; b < n; ++b) {
      double diff = 0.0;
      for (int64_t j = 0; j < d; ++j) diff += std::abs(pe.at(a, j) - pe.at(b, j));
      CHECK(diff > 1e-6);
    }

  CHECK_THROWS_AS(sit::sincos_posenc<double>(4, 7), std::invalid_argument);
}

TEST_CASE("config validation reports every problem at once") {
  sit::SitConfig cfg;
  cfg.patch_level = 1;
  cfg.data_level = 6;  // wrong: must be 4
  cfg.hidden_dim = 33;
  cfg.heads = 2;  // wrong: does not divide 33 (and 33 is odd)
  const auto issues = cfg.issues();
  CHECK(issues.size() == 3);
  try {
    cfg.validate();
    FAIL("expected validate to throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("dataLevel") != std::string::npos);
    CHECK(msg.find("even") != std::string::npos);
    CHECK(msg.find("divisible") != std::string::npos);
  }
}

TEST_CASE("embed prepends the regression token and adds positions") {
  sit::SitConfig cfg;
  cfg.patch_level = 0;
  cfg.data_level = 3;
  cfg.channels = 1;
  cfg.hidden_dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  Rng rng(5);
  auto enc = sit::init_encoder<double>(cfg, rng);
  const auto table = table_at(0);
  Tensor<double> x = random_map<double>(table, 1, rng);
  Tensor<double> tok = sit::patchify(x, table);
  Tensor<double> pe = sit::sincos_posenc<double>(table.patch_count() + 1, cfg.hidden_dim);

  Tape<double> tape;
  auto m = sit::mount(tape, enc);
  Var<double> seq = sit::embed(m, tape.constant(tok), tape.constant(pe));
  REQUIRE(seq.shape() == Shape{table.patch_count() + 1, 16});

  // row 0 is reg_token + posenc row 0
  for (int64_t j = 0; j < 16; ++j)
    CHECK(seq.value().at(0, j) == doctest::Approx(enc.reg_token.at(0, j) + pe.at(0, j)));

  // batched embed of two stacked copies replicates the rank-2 result exactly
  Tensor<double> xb(Shape{2, table.patch_count(), tok.shape()[1]});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < tok.numel(); ++i) xb[b * tok.numel() + i] = tok[i];
  Var<double> seqb = sit::embed(m, tape.constant(xb), tape.constant(pe));
  REQUIRE(seqb.shape() == Shape{2, table.patch_count() + 1, 16});
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < seq.value().numel(); ++i)
      CHECK(seqb.value()[b * seq.value().numel() + i] == seq.value()[i]);
}

TEST_CASE("a depth-zero encoder is the identity") {
  Tape<double> tape;
  Rng rng(8);
  Var<double> x = tape.leaf(tensor::randn<double>({5, 6}, rng, 1.0));
  std::vector<sit::BlockP<Var<double>>> blocks;
  Var<double> y = sit::encoder_forward(blocks, x, 2);
  CHECK(y.id == x.id);
}

TEST_CASE("encoder without positions is equivariant to patch permutation") {
  sit::SitConfig cfg;
  cfg.patch_level = 0;
  cfg.data_level = 3;
  cfg.channels = 2;
  cfg.hidden_dim = 32;
  cfg.layers = 2;
  cfg.heads = 2;
  Rng rng(17);
  auto enc = sit::init_encoder<float>(cfg, rng);
  const auto table = table_at(0);
  const int64_t n = table.patch_count();
  Tensor<float> tok = tensor::randn<float>({n, cfg.patch_width()}, rng, 1.0);
  Tensor<float> zero_pe = Tensor<float>::zeros({n + 1, cfg.hidden_dim});

  auto run = [&](const Tensor<float>& tokens) {
    Tape<float> tape;
    auto m = sit::mount(tape, enc);
    Var<float> seq = sit::embed(m, tape.constant(tokens), tape.constant(zero_pe));
    return sit::encoder_forward(m.blocks, seq, cfg.heads).value();
  };

  Tensor<float> base = run(tok);
  for (int trial = 0; trial < 5; ++trial) {
    Rng prng(100 + static_cast<uint64_t>(trial));
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    prng.shuffle(perm);

    Tensor<float> shuffled(Shape{n, cfg.patch_width()});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < cfg.patch_width(); ++j)
        shuffled.at(i, j) = tok.at(perm[static_cast<size_t>(i)], j);

    Tensor<float> out = run(shuffled);
    // regression-token row unchanged
    for (int64_t j = 0; j < cfg.hidden_dim; ++j)
      CHECK(out.at(0, j) == doctest::Approx(base.at(0, j)).epsilon(1e-5));
    // patch rows permuted the same way (sequence row = patch + 1)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < cfg.hidden_dim; ++j)
        CHECK(out.at(i + 1, j) ==
              doctest::Approx(base.at(perm[static_cast<size_t>(i)] + 1, j)).epsilon(1e-5));
  }
}

TEST_CASE("head trains 3D+1 parameters") {
  sit::SitConfig cfg;
  Rng rng(3);
  cfg.hidden_dim = 192;
  auto h192 = sit::init_head<float>(cfg, rng);
  CHECK(sit::param_count(h192) == 3 * 192 + 1);
  cfg.hidden_dim = 64;
  auto h64 = sit::init_head<float>(cfg, rng);
  CHECK(sit::param_count(h64) == 3 * 64 + 1);
}

TEST_CASE("initialization is seed-deterministic") {
  sit::SitConfig cfg;
  cfg.patch_level = 0;
  cfg.data_level = 3;
  cfg.hidden_dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  Rng a(9), b(9), c(10);
  auto ma = sit::init_sit<float>(cfg, a);
  auto mb = sit::init_sit<float>(cfg, b);
  auto mc = sit::init_sit<float>(cfg, c);
  auto flat = [](sit::SitP<Tensor<float>>& m) {
    std::vector<float> v;
    for_each_param(m, "", [&v](const std::string&, Tensor<float>& t) {
      v.insert(v.end(), t.data(), t.data() + t.numel());
    });
    return v;
  };
  CHECK(flat(ma) == flat(mb));
  CHECK(flat(ma) != flat(mc));
}

TEST_CASE("batched prediction equals per-sample prediction") {
  sit::SitConfig cfg;
  cfg.patch_level = 0;
  cfg.data_level = 3;
  cfg.channels = 2;
  cfg.hidden_dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  Rng rng(21);
  auto model = sit::init_sit<float>(cfg, rng);
  const auto table = table_at(0);
  Tensor<float> pe = sit::sincos_posenc<float>(table.patch_count() + 1, cfg.hidden_dim);

  const int64_t bsz = 3;
  std::vector<Tensor<float>> samples;
  for (int64_t b = 0; b < bsz; ++b)
    samples.push_back(tensor::randn<float>({table.patch_count(), cfg.patch_width()}, rng, 1.0));

  std::vector<float> singles;
  for (const auto& s : samples) {
    Tape<float> tape;
    auto m = sit::mount(tape, model);
    singles.push_back(sit::sit_forward(m, tape.constant(s), tape.constant(pe), cfg.heads)
                          .value()[0]);
  }

  Tensor<float> batch(Shape{bsz, table.patch_count(), cfg.patch_width()});
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < samples[0].numel(); ++i)
      batch[b * samples[0].numel() + i] = samples[static_cast<size_t>(b)][i];
  Tape<float> tape;
  auto m = sit::mount(tape, model);
  Var<float> pred = sit::sit_forward(m, tape.constant(batch), tape.constant(pe), cfg.heads);
  REQUIRE(pred.shape() == Shape{bsz, 1});
  for (int64_t b = 0; b < bsz; ++b)
    CHECK(pred.value()[b] == doctest::Approx(singles[static_cast<size_t>(b)]).epsilon(1e-5));
}

TEST_CASE("full prediction network passes a finite-difference gradient check") {
  sit::SitConfig cfg;
  cfg.patch_level = 0;
  cfg.data_level = 3;
  cfg.channels = 1;
  cfg.hidden_dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  const auto table = table_at(0);
  Tensor<double> pe = sit::sincos_posenc<double>(table.patch_count() + 1, cfg.hidden_dim);

  for (uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(40 + seed);
    auto model = sit::init_sit<double>(cfg, rng);
    Tensor<double> tok = tensor::randn<double>({table.patch_count(), cfg.patch_width()}, rng, 1.0);
    const double target = 0.7;

    auto f = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
      auto m = testing::sit_skeleton(cfg);
      testing::assign_vars(m, vars);
      Var<double> pred = sit::sit_forward(m, tape.constant(tok), tape.constant(pe), cfg.heads);
      Tensor<double> t(Shape{1, 1});
      t[0] = target;
      return mse(pred, tape.constant(t));
    };
    auto res = tensor::grad_check(f, testing::param_tensors(model));
    CHECK(res.max_rel_err < 1e-6);
  }
}
