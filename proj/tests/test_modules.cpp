#include <catch2/catch_amalgamated.hpp>
#include <cstdio>

#include "fd_check.hpp"
#include "phytrack/model.hpp"

using namespace phytrack;

namespace {

std::mt19937_64 rng(777);

Tensor rand_weights_like(const Tensor& like) {
  Tensor w(like.shape());
  std::normal_distribution<double> d(0.0, 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = d(rng);
  return w;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.stem_channels = 4;
  cfg.enc1 = 4;
  cfg.enc2 = 6;
  cfg.enc3 = 8;
  cfg.enc4 = 8;
  cfg.feat_channels = 12;
  cfg.ata_inner = 4;
  cfg.refined_channels = 6;
  cfg.embed_channels = 4;
  cfg.head_channels = 6;
  return cfg;
}

// Naive three-loop reference for CA(Q,K,V).
Tensor naive_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const int n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  Tensor pq({n, d}), pk({n, d});
  for (int i = 0; i < n; ++i) {
    double mx = -1e300, z = 0;
    for (int j = 0; j < d; ++j) mx = std::max(mx, q(i, j));
    for (int j = 0; j < d; ++j) z += std::exp(q(i, j) - mx);
    for (int j = 0; j < d; ++j) pq(i, j) = std::exp(q(i, j) - mx) / z;
  }
  for (int j = 0; j < d; ++j) {
    double mx = -1e300, z = 0;
    for (int i = 0; i < n; ++i) mx = std::max(mx, k(i, j));
    for (int i = 0; i < n; ++i) z += std::exp(k(i, j) - mx);
    for (int i = 0; i < n; ++i) pk(i, j) = std::exp(k(i, j) - mx) / z;
  }
  Tensor out({n, dv});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < dv; ++o) {
      double acc = 0;
      for (int j = 0; j < d; ++j)
        for (int r = 0; r < n; ++r) acc += pq(i, j) * pk(r, j) * v(r, o);
      out(i, o) = acc;
    }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// tfe

TEST_CASE("extract_features shape contract: 128x192 -> (32,48,64)") {
  PhyModel model(ModelConfig{}, 1);
  auto img = make_constant(random_uniform({128, 192, 3}, 0.0, 1.0, rng));
  Var f = model.tfe()(img);
  CHECK(f->val.dim(0) == 32);
  CHECK(f->val.dim(1) == 48);
  CHECK(f->val.dim(2) == 64);
  CHECK(f->val.all_finite());
}

TEST_CASE("extract_features rejects frames smaller than 32x32") {
  PhyModel model(tiny_config(), 1);
  auto img = make_constant(Tensor({16, 40, 3}));
  CHECK_THROWS(model.tfe()(img));
}

TEST_CASE("extract_features is pure: identical frames give identical maps") {
  PhyModel model(tiny_config(), 2);
  Tensor frame = random_uniform({32, 48, 3}, 0.0, 1.0, rng);
  Var f1 = model.tfe()(make_constant(frame));
  Var f2 = model.tfe()(make_constant(frame));
  CHECK(f1->val.max_abs_diff(f2->val) == 0.0);
}

TEST_CASE("sie block: zero input with zero-initialized weights gives zero") {
  ParamStore store(3);
  auto bank = SrmKernelBank::make(SrmMode::Paper);
  SieBlock block(store, "b", 4, bank);
  for (auto& [name, p] : store.all()) p->val.fill(0.0);
  Var out = block(make_constant(Tensor({10, 12, 4})));
  for (std::size_t i = 0; i < out->val.size(); ++i) CHECK(out->val[i] == 0.0);
}

TEST_CASE("sie block preserves shape") {
  ParamStore store(4);
  auto bank = SrmKernelBank::make(SrmMode::Paper);
  SieBlock block(store, "b", 16, bank);
  Var out = block(make_constant(random_normal({32, 48, 16}, 0.0, 1.0, rng)));
  CHECK(out->val.shape() == std::vector<int>({32, 48, 16}));
}

TEST_CASE("sie block equals the manual composition of its stages") {
  ParamStore store(5);
  auto bank = SrmKernelBank::make(SrmMode::Paper);
  SieBlock block(store, "b", 5, bank);
  Var x = make_constant(random_normal({8, 9, 5}, 0.0, 1.0, rng));
  Var composed =
      ops::add(x, block.stage_compress(block.stage_srm(block.stage_conv(x))));
  Var direct = block(x);
  CHECK(direct->val.max_abs_diff(composed->val) == 0.0);
}

TEST_CASE("srm kernels are not trainable and survive an optimizer step") {
  PhyModel model(tiny_config(), 6);
  for (const auto& [name, p] : model.store().all())
    CHECK(name.find("srm") == std::string::npos);
  Tensor before = model.tfe().bank().kernels;

  auto img = make_constant(random_uniform({32, 32, 3}, 0.0, 1.0, rng));
  Var f = model.tfe()(img);
  model.store().zero_grads();
  backward(ops::sum(f));
  AdamOptimizer opt(1e-2);
  opt.step(model.store());

  CHECK(model.tfe().bank().kernels.max_abs_diff(before) == 0.0);
}

TEST_CASE("extract_features gradient vs finite differences (tiny widths)") {
  PhyModel model(tiny_config(), 7);
  Tensor frame = random_uniform({32, 32, 3}, 0.0, 1.0, rng);
  Tensor w;
  {
    Var probe = model.tfe()(make_constant(frame));
    w = rand_weights_like(probe->val);
  }
  std::vector<Var> params;
  for (auto& [name, p] : model.store().all())
    if (name.rfind("tfe.", 0) == 0) params.push_back(p);
  auto rep = fd_check(
      params,
      [&] { return ops::weighted_sum(model.tfe()(make_constant(frame)), w); },
      1e-4, 6);
  CHECK(rep.worst_rel < 1e-3);
}

// ---------------------------------------------------------------------------
// ata

TEST_CASE("cross_attention: constant V is a fixed point") {
  const int n = 5, d = 3, dv = 4;
  auto q = make_constant(random_normal({n, d}, 0.0, 1.0, rng));
  auto k = make_constant(random_normal({n, d}, 0.0, 1.0, rng));
  Tensor vrow({dv});
  for (int i = 0; i < dv; ++i) vrow[i] = 0.3 * i - 1.0;
  Tensor vt({n, dv});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < dv; ++c) vt(r, c) = vrow[c];
  Var out = cross_attention(q, k, make_constant(vt));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < dv; ++c)
      CHECK(out->val(r, c) == Catch::Approx(vrow[c]).margin(1e-9));
}

TEST_CASE("cross_attention: n=1 returns the single V row exactly") {
  auto q = make_constant(random_normal({1, 4}, 0.0, 1.0, rng));
  auto k = make_constant(random_normal({1, 4}, 0.0, 1.0, rng));
  auto v = make_constant(random_normal({1, 6}, 0.0, 1.0, rng));
  Var out = cross_attention(q, k, v);
  CHECK(out->val.max_abs_diff(v->val) < 1e-12);
}

TEST_CASE("cross_attention matches the naive oracle") {
  auto q = make_constant(random_normal({12, 4}, 0.0, 1.0, rng));
  auto k = make_constant(random_normal({12, 4}, 0.0, 1.0, rng));
  auto v = make_constant(random_normal({12, 6}, 0.0, 1.0, rng));
  Var out = cross_attention(q, k, v);
  Tensor ref = naive_cross_attention(q->val, k->val, v->val);
  CHECK(out->val.max_abs_diff(ref) < 1e-6);
}

TEST_CASE("cross_attention rejects non-finite input") {
  Tensor bad({2, 2});
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto q = make_constant(bad);
  auto k = make_constant(Tensor({2, 2}));
  auto v = make_constant(Tensor({2, 3}));
  CHECK_THROWS(cross_attention(q, k, v));
}

TEST_CASE("phi_q rows and phi_k columns sum to one") {
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> nd(1, 16), dd(1, 8);
    const int n = nd(rng), d = dd(rng);
    auto q = make_constant(random_normal({n, d}, 0.0, 2.0, rng));
    Var pq = ops::softmax_lastdim(q);
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += pq->val(i, j);
      CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
    auto k = make_constant(random_normal({n, d}, 0.0, 2.0, rng));
    Var pk = ops::softmax_lastdim(ops::transpose2d(k));  // (d, n): rows are K columns
    for (int j = 0; j < d; ++j) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += pk->val(j, i);
      CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("tsca: stride-8 shape and purity") {
  ModelConfig cfg;  // default widths, feat 64
  PhyModel model(cfg, 8);
  Tensor fa = random_normal({32, 48, 64}, 0.0, 1.0, rng);  // from a 128x192 frame
  Tensor fb = random_normal({32, 48, 64}, 0.0, 1.0, rng);
  auto out1 = model.ata().tsca(make_constant(fa), make_constant(fb));
  CHECK(out1.omega_cur->val.dim(0) == 16);
  CHECK(out1.omega_cur->val.dim(1) == 24);
  CHECK(out1.omega_prev->val.same_shape(out1.omega_cur->val));
  auto out2 = model.ata().tsca(make_constant(fa), make_constant(fb));
  CHECK(out1.omega_cur->val.max_abs_diff(out2.omega_cur->val) == 0.0);
  CHECK_THROWS(model.ata().tsca(make_constant(fa),
                                make_constant(Tensor({16, 48, 64}))));
}

TEST_CASE("tsca gradient w.r.t. both inputs") {
  PhyModel model(tiny_config(), 9);
  auto fa = make_parameter(random_normal({8, 8, 12}, 0.0, 1.0, rng));
  auto fb = make_parameter(random_normal({8, 8, 12}, 0.0, 1.0, rng));
  Tensor w;
  {
    auto probe = model.ata().tsca(fa, fb);
    w = rand_weights_like(probe.omega_cur->val);
  }
  auto rep = fd_check(
      {fa, fb},
      [&] {
        auto o = model.ata().tsca(fa, fb);
        return ops::weighted_sum(o.omega_cur, w);
      },
      1e-4, 40);
  CHECK(rep.worst_rel < 1e-3);
}

TEST_CASE("similarity volume: bounds, self-match, brute-force oracle") {
  PhyModel model(tiny_config(), 10);
  Tensor omega = random_normal({6, 8, 6}, 0.0, 1.0, rng);
  Var s = model.ata().similarity_volume(make_constant(omega), make_constant(omega));
  REQUIRE(s->val.shape() == std::vector<int>({6, 8, 6, 8}));
  for (std::size_t i = 0; i < s->val.size(); ++i) {
    CHECK(s->val[i] <= 1.0 + 1e-9);
    CHECK(s->val[i] >= -1.0 - 1e-9);
  }
  // identical features: argmax over (k,l) is the identity
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j) {
      double best = -2;
      int bk = -1, bl = -1;
      for (int k = 0; k < 6; ++k)
        for (int l = 0; l < 8; ++l)
          if (s->val(i, j, k, l) > best) {
            best = s->val(i, j, k, l);
            bk = k;
            bl = l;
          }
      CHECK(bk == i);
      CHECK(bl == j);
    }
  // quadruple-loop dot-product oracle over the embedded features
  Tensor omega2 = random_normal({6, 8, 6}, 0.0, 1.0, rng);
  Var s2 = model.ata().similarity_volume(make_constant(omega), make_constant(omega2));
  Var ec = model.ata().embed(make_constant(omega));
  Var ep = model.ata().embed(make_constant(omega2));
  const int ce = ec->val.dim(2);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 6; ++k)
        for (int l = 0; l < 8; ++l) {
          double dot = 0;
          for (int c = 0; c < ce; ++c) dot += ec->val(i, j, c) * ep->val(k, l, c);
          CHECK(s2->val(i, j, k, l) == Catch::Approx(dot).margin(1e-6));
        }
}

TEST_CASE("offsets_from_similarity: spike and uniform cases") {
  // spike at l=j-2, k=i: O^X = -16 at stride 8, O^Y = 0
  Tensor s({4, 6, 4, 6});
  s.fill(-50.0);
  const int i = 2, j = 3;
  s(i, j, i, j - 2) = 50.0;
  auto dec = offsets_from_similarity(make_constant(s), 8.0);
  CHECK(dec.ox->val(i, j) == Catch::Approx(-16.0).margin(1e-6));
  CHECK(dec.oy->val(i, j) == Catch::Approx(0.0).margin(1e-6));

  // spike at l=j: zero horizontal offset
  Tensor s2({4, 6, 4, 6});
  s2.fill(-50.0);
  s2(1, 4, 1, 4) = 50.0;
  auto dec2 = offsets_from_similarity(make_constant(s2), 8.0);
  CHECK(dec2.ox->val(1, 4) == Catch::Approx(0.0).margin(1e-6));

  // uniform row, w'=5, j=2: symmetric template averages to zero
  Tensor s3({3, 5, 3, 5});
  auto dec3 = offsets_from_similarity(make_constant(s3), 8.0);
  CHECK(dec3.ox->val(1, 2) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("offsets_from_similarity equals the explicit-loop oracle") {
  const double stride = 8.0;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor s({6, 8, 6, 8});
    std::normal_distribution<double> d(0.0, 1.0);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = d(rng);
    auto dec = offsets_from_similarity(make_constant(s), stride);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 8; ++j) {
        // explicit expectation over softmaxed row/column maxima
        std::vector<double> mx(8, -1e300), my(6, -1e300);
        for (int k = 0; k < 6; ++k)
          for (int l = 0; l < 8; ++l) {
            mx[l] = std::max(mx[l], s(i, j, k, l));
            my[k] = std::max(my[k], s(i, j, k, l));
          }
        double zx = 0, zy = 0, ex = 0, ey = 0;
        double mmx = *std::max_element(mx.begin(), mx.end());
        double mmy = *std::max_element(my.begin(), my.end());
        for (int l = 0; l < 8; ++l) zx += std::exp(mx[l] - mmx);
        for (int k = 0; k < 6; ++k) zy += std::exp(my[k] - mmy);
        for (int l = 0; l < 8; ++l) ex += std::exp(mx[l] - mmx) / zx * (l - j) * stride;
        for (int k = 0; k < 6; ++k) ey += std::exp(my[k] - mmy) / zy * (k - i) * stride;
        CHECK(std::abs(dec.ox->val(i, j) - ex) <= 1e-5);
        CHECK(std::abs(dec.oy->val(i, j) - ey) <= 1e-5);
      }
  }
}

TEST_CASE("decoded offsets stay inside the template range") {
  Tensor s({5, 7, 5, 7});
  std::normal_distribution<double> d(0.0, 3.0);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = d(rng);
  const double stride = 8.0;
  auto dec = offsets_from_similarity(make_constant(s), stride);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      CHECK(std::abs(dec.ox->val(i, j)) <= (7 - 1) * stride);
      CHECK(std::abs(dec.oy->val(i, j)) <= (5 - 1) * stride);
    }
}

TEST_CASE("offsets gradient through the volume") {
  auto s = make_parameter(random_normal({4, 5, 4, 5}, 0.0, 1.0, rng));
  Tensor w;
  {
    auto probe = offsets_from_similarity(s, 8.0);
    w = rand_weights_like(probe.ox->val);
  }
  auto rep = fd_check({s}, [&] {
    auto dec = offsets_from_similarity(s, 8.0);
    return ops::weighted_sum(dec.ox, w);
  });
  CHECK(rep.worst_rel < 1e-3);
}

// ---------------------------------------------------------------------------
// fmr

TEST_CASE("offset memory: mean and sum modes") {
  OffsetMemory mem;
  mem.reset(1, 1, MemoryMode::Mean);
  Tensor o2 = Tensor::full({1, 1}, 2.0), o4 = Tensor::full({1, 1}, 4.0);
  mem.absorb(o2, o2);
  mem.absorb(o4, o4);
  CHECK(mem.mean_ox(0, 0) == Catch::Approx(3.0).margin(1e-12));
  CHECK(mem.count == 2);

  OffsetMemory constant_mem;
  constant_mem.reset(2, 3, MemoryMode::Mean);
  Tensor c = Tensor::full({2, 3}, -1.25);
  for (int i = 0; i < 17; ++i) constant_mem.absorb(c, c);
  CHECK(constant_mem.mean_ox.max_abs_diff(c) < 1e-12);

  OffsetMemory sum_mem;
  sum_mem.reset(1, 1, MemoryMode::Sum);
  sum_mem.absorb(o2, o2);
  sum_mem.absorb(o4, o4);
  CHECK(sum_mem.mean_ox(0, 0) == 6.0);

  Tensor wrong({3, 3});
  CHECK_THROWS(mem.absorb(wrong, wrong));
}

TEST_CASE("running mean equals the brute-force mean on random sequences") {
  std::uniform_int_distribution<int> len(1, 50);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = len(rng);
    OffsetMemory mem;
    mem.reset(3, 4, MemoryMode::Mean);
    Tensor acc({3, 4});
    for (int t = 0; t < n; ++t) {
      Tensor o = random_normal({3, 4}, 0.0, 5.0, rng);
      mem.absorb(o, o);
      acc.add_scaled(o, 1.0);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= n;
    CHECK(mem.mean_ox.max_abs_diff(acc) < 1e-6);
  }
}

TEST_CASE("flow-agnostic offset algebra") {
  Tensor o = Tensor::full({2, 2}, 5.0);
  Tensor lam = Tensor::full({2, 2}, 3.0);
  Var omega = flow_agnostic_offset(make_constant(o), lam);
  CHECK(omega->val(0, 0) == 7.0);

  // uniform flow fixed point: O == lambda -> Omega == O
  Var fix = flow_agnostic_offset(make_constant(o), o);
  CHECK(fix->val.max_abs_diff(o) == 0.0);

  // zero memory doubles the offset
  Var dbl = flow_agnostic_offset(make_constant(o), Tensor({2, 2}));
  CHECK(dbl->val(1, 1) == 10.0);

  CHECK_THROWS(flow_agnostic_offset(make_constant(o), Tensor({3, 3})));
}

TEST_CASE("gating: annihilation, selection, elementwise oracle") {
  Tensor omega = random_normal({5, 6, 4}, 0.0, 1.0, rng);
  Tensor pzero({5, 6});
  Var h0 = gate_previous_features(make_constant(omega), make_constant(pzero));
  for (std::size_t i = 0; i < h0->val.size(); ++i) CHECK(h0->val[i] == 0.0);

  Tensor pone({5, 6});
  pone(3, 4) = 1.0;
  Var h1 = gate_previous_features(make_constant(omega), make_constant(pone));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < 4; ++c) {
        if (i == 3 && j == 4)
          CHECK(h1->val(i, j, c) == omega(i, j, c));
        else
          CHECK(h1->val(i, j, c) == 0.0);
      }

  Tensor prand = random_uniform({5, 6}, 0.0, 1.0, rng);
  Var hr = gate_previous_features(make_constant(omega), make_constant(prand));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < 4; ++c)
        CHECK(hr->val(i, j, c) == omega(i, j, c) * prand(i, j));

  Tensor bad = Tensor::full({5, 6}, 1.5);
  CHECK_THROWS(gate_previous_features(make_constant(omega), make_constant(bad)));
}

TEST_CASE("propagate: zero offsets with identity conv reproduce the input") {
  ModelConfig cfg = tiny_config();
  PhyModel model(cfg, 11);
  const int C = cfg.refined_channels;
  // identity-initialize the 3x3 propagation conv
  Var w = model.store().get("fmr.prop.w");
  Var b = model.store().get("fmr.prop.b");
  w->val.fill(0.0);
  b->val.fill(0.0);
  for (int c = 0; c < C; ++c) w->val(1, 1, c, c) = 1.0;

  Tensor h = random_normal({4, 6, C}, 0.0, 1.0, rng);
  Var zx = make_constant(Tensor({4, 6}));
  Var out = model.fmr().propagate(make_constant(h), zx, zx, 8.0);
  CHECK(out->val.max_abs_diff(h) < 1e-12);

  // integer offset (s, 0) shifts by exactly one grid cell
  Var sx = make_constant(Tensor::full({4, 6}, 8.0));
  Var shifted = model.fmr().propagate(make_constant(h), sx, zx, 8.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j)
      for (int c = 0; c < C; ++c) {
        const double expect = (j + 1 < 6) ? h(i, j + 1, c) : 0.0;
        CHECK(shifted->val(i, j, c) == Catch::Approx(expect).margin(1e-12));
      }
}

TEST_CASE("propagate gradient w.r.t. the offsets") {
  PhyModel model(tiny_config(), 12);
  const int C = tiny_config().refined_channels;
  Tensor h = random_normal({4, 6, C}, 0.0, 1.0, rng);
  auto ox = make_parameter(random_uniform({4, 6}, -10.3, 10.3, rng));
  auto oy = make_parameter(random_uniform({4, 6}, -10.3, 10.3, rng));
  Tensor w;
  {
    Var probe = model.fmr().propagate(make_constant(h), ox, oy, 8.0);
    w = rand_weights_like(probe->val);
  }
  auto rep = fd_check({ox, oy}, [&] {
    return ops::weighted_sum(model.fmr().propagate(make_constant(h), ox, oy, 8.0), w);
  });
  CHECK(rep.worst_rel < 1e-3);
}

TEST_CASE("propagate is linear in the gated features (frozen conv, zero bias)") {
  ModelConfig cfg = tiny_config();
  PhyModel model(cfg, 13);
  model.store().get("fmr.prop.b")->val.fill(0.0);
  const int C = cfg.refined_channels;
  Tensor h1 = random_normal({4, 5, C}, 0.0, 1.0, rng);
  Tensor h2 = random_normal({4, 5, C}, 0.0, 1.0, rng);
  Var ox = make_constant(random_uniform({4, 5}, -4.0, 4.0, rng));
  Var oy = make_constant(random_uniform({4, 5}, -4.0, 4.0, rng));
  const double a = 0.7, bb = -1.3;
  Tensor combo({4, 5, C});
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * h1[i] + bb * h2[i];
  Var lhs = model.fmr().propagate(make_constant(combo), ox, oy, 8.0);
  Var p1 = model.fmr().propagate(make_constant(h1), ox, oy, 8.0);
  Var p2 = model.fmr().propagate(make_constant(h2), ox, oy, 8.0);
  Tensor rhs({4, 5, C});
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * p1->val[i] + bb * p2->val[i];
  CHECK(lhs->val.max_abs_diff(rhs) < 1e-9);
}

TEST_CASE("fuse: identity init passes f_t through; shape and purity") {
  ModelConfig cfg = tiny_config();
  PhyModel model(cfg, 14);
  const int F = cfg.feat_channels, C = cfg.refined_channels;
  Var w = model.store().get("fmr.fuse.w");
  model.store().get("fmr.fuse.b")->val.fill(0.0);
  w->val.fill(0.0);
  for (int c = 0; c < F; ++c) w->val(0, 0, c, c) = 1.0;

  Tensor f = random_normal({8, 10, F}, 0.0, 1.0, rng);
  Var out = model.fmr().fuse(make_constant(f), make_constant(Tensor({4, 5, C})));
  CHECK(out->val.shape() == std::vector<int>({8, 10, F}));
  CHECK(out->val.max_abs_diff(f) < 1e-12);

  Tensor prop = random_normal({4, 5, C}, 0.0, 1.0, rng);
  Var o1 = model.fmr().fuse(make_constant(f), make_constant(prop));
  Var o2 = model.fmr().fuse(make_constant(f), make_constant(prop));
  CHECK(o1->val.max_abs_diff(o2->val) == 0.0);
}

// ---------------------------------------------------------------------------
// head

TEST_CASE("head shape contract and heatmap range") {
  ModelConfig cfg;  // K = 6, feat 64
  PhyModel model(cfg, 15);
  Var fused = make_constant(random_normal({32, 48, 64}, 0.0, 1.0, rng));
  HeadOutput out = model.head()(fused);
  CHECK(out.class_heatmap->val.shape() == std::vector<int>({32, 48, 6}));
  CHECK(out.size->val.shape() == std::vector<int>({32, 48, 2}));
  CHECK(out.local_offset->val.shape() == std::vector<int>({32, 48, 2}));
  for (std::size_t i = 0; i < out.class_heatmap->val.size(); ++i) {
    CHECK(out.class_heatmap->val[i] >= 0.0);
    CHECK(out.class_heatmap->val[i] <= 1.0);
  }
  // P equals the channel max everywhere
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 48; ++j) {
      double m = 0;
      for (int c = 0; c < 6; ++c) m = std::max(m, out.class_heatmap->val(i, j, c));
      CHECK(out.center_heatmap->val(i, j) == m);
    }
}

namespace {

HeadOutput synthetic_head_output(const Tensor& heat, const Tensor& size,
                                 const Tensor& off) {
  HeadOutput out;
  out.class_heatmap = make_constant(heat);
  out.center_heatmap = ops::max_channels(out.class_heatmap);
  out.size = make_constant(size);
  out.local_offset = make_constant(off);
  return out;
}

// Brute-force peak scan with the same lexicographic plateau rule.
std::vector<std::pair<int, int>> scan_peaks(const Tensor& p, double thr) {
  std::vector<std::pair<int, int>> peaks;
  const int h = p.dim(0), w = p.dim(1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (p(i, j) <= thr) continue;
      bool ok = true;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (!di && !dj) continue;
          int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          if (p(ni, nj) > p(i, j) ||
              (p(ni, nj) == p(i, j) && (ni < i || (ni == i && nj < j))))
            ok = false;
        }
      if (ok) peaks.emplace_back(i, j);
    }
  return peaks;
}

}  // namespace

TEST_CASE("decode: empty below threshold, single Gaussian bump") {
  Tensor heat({16, 16, 2});
  heat.fill(0.1);
  auto out = synthetic_head_output(heat, Tensor({16, 16, 2}), Tensor({16, 16, 2}));
  CHECK(decode(out, 0.4, 64, 64).empty());

  Tensor heat2({16, 16, 2});
  const double dx = 0.3, dy = 0.6;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      heat2(i, j, 1) =
          0.9 * std::exp(-((i - 10.0) * (i - 10.0) + (j - 12.0) * (j - 12.0)) / 8.0);
  Tensor size2({16, 16, 2});
  Tensor off2({16, 16, 2});
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      size2(i, j, 0) = 16.0;
      size2(i, j, 1) = 12.0;
      off2(i, j, 0) = dx;
      off2(i, j, 1) = dy;
    }
  auto out2 = synthetic_head_output(heat2, size2, off2);
  auto dets = decode(out2, 0.4, 64, 64);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].class_id == 1);
  CHECK(dets[0].cx == Catch::Approx((12 + dx) * 4));
  CHECK(dets[0].cy == Catch::Approx((10 + dy) * 4));
  CHECK(dets[0].width == Catch::Approx(16.0));
  CHECK(dets[0].height == Catch::Approx(12.0));
}

TEST_CASE("decode matches the brute-force peak scan; threshold monotone") {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor heat({12, 14, 3});
    for (std::size_t i = 0; i < heat.size(); ++i) heat[i] = u(rng);
    auto out = synthetic_head_output(heat, Tensor({12, 14, 2}), Tensor({12, 14, 2}));
    auto dets = decode(out, 0.4, 56, 48);
    auto peaks = scan_peaks(out.center_heatmap->val, 0.4);
    REQUIRE(dets.size() == peaks.size());
    std::size_t prev_count = dets.size();
    for (double thr : {0.5, 0.6, 0.8, 0.95}) {
      auto d2 = decode(out, thr, 56, 48);
      CHECK(d2.size() <= prev_count);
      prev_count = d2.size();
    }
  }
}

TEST_CASE("det_loss: perfect fit is (near) zero and random inputs stay finite") {
  std::vector<BoxLabel> boxes = {{20.0, 24.0, 9.0, 7.0, 1}};
  auto targets = render_targets(boxes, 16, 16, 3);
  REQUIRE(targets.num_pos == 1);

  HeadOutput perfect;
  perfect.class_heatmap = make_constant(targets.heatmap);
  perfect.center_heatmap = ops::max_channels(perfect.class_heatmap);
  Tensor size({16, 16, 2}), off({16, 16, 2});
  for (const auto& t : targets.size_targets) {
    size(t.i, t.j, 0) = t.tx;
    size(t.i, t.j, 1) = t.ty;
  }
  for (const auto& t : targets.offset_targets) {
    off(t.i, t.j, 0) = t.tx;
    off(t.i, t.j, 1) = t.ty;
  }
  perfect.size = make_constant(size);
  perfect.local_offset = make_constant(off);
  CHECK(det_loss(perfect, targets)->val[0] <= 1e-6);

  PhyModel model(tiny_config(), 16);
  Var fused = make_constant(random_normal({16, 16, 12}, 0.0, 2.0, rng));
  HeadOutput rnd = model.head()(fused);
  auto rt = render_targets(boxes, 16, 16, 3);
  CHECK(std::isfinite(det_loss(rnd, rt)->val[0]));
}

TEST_CASE("det_loss gradient on a 16x16 single-object case") {
  ModelConfig cfg = tiny_config();
  PhyModel model(cfg, 17);
  Tensor fused = random_normal({16, 16, cfg.feat_channels}, 0.0, 1.0, rng);
  std::vector<BoxLabel> boxes = {{18.0, 22.0, 10.0, 8.0, 2}};
  auto targets = render_targets(boxes, 16, 16, cfg.num_classes);
  std::vector<Var> params;
  for (auto& [name, p] : model.store().all())
    if (name.rfind("head.", 0) == 0) params.push_back(p);
  auto rep = fd_check(
      params,
      [&] { return det_loss(model.head()(make_constant(fused)), targets); },
      1e-4, 20);
  CHECK(rep.worst_rel < 1e-3);
}

TEST_CASE("cva_loss: one-hot, uniform ln 8, and gradient") {
  // a huge spike makes the likelihood one-hot at the true index
  Tensor s({4, 8, 4, 8});
  s.fill(-60.0);
  s(2, 5, 1, 3) = 60.0;
  auto dec = offsets_from_similarity(make_constant(s), 8.0);
  std::vector<Correspondence> corr = {{2, 5, 1, 3}};
  CHECK(cva_loss(dec, corr)->val[0] <= 1e-6);

  // uniform likelihood over w'=8: horizontal term is ln 8
  Tensor su({4, 8, 4, 8});
  auto decu = offsets_from_similarity(make_constant(su), 8.0);
  std::vector<Correspondence> one = {{1, 2, 1, 6}};
  // total = ln 8 (horizontal) + ln 4 (vertical)
  CHECK(cva_loss(decu, one)->val[0] ==
        Catch::Approx(std::log(8.0) + std::log(4.0)).margin(1e-9));

  std::vector<Correspondence> bad = {{1, 2, 9, 0}};
  CHECK_THROWS(cva_loss(decu, bad));

  auto sv = make_parameter(random_normal({4, 6, 4, 6}, 0.0, 1.0, rng));
  std::vector<Correspondence> two = {{0, 1, 2, 3}, {3, 4, 1, 1}};
  auto rep = fd_check({sv}, [&] {
    return cva_loss(offsets_from_similarity(sv, 8.0), two);
  });
  CHECK(rep.worst_rel < 1e-3);
}

// ---------------------------------------------------------------------------
// checkpoint

TEST_CASE("checkpoint round trip and manifest mismatch diagnostics") {
  ModelConfig cfg = tiny_config();
  PhyModel a(cfg, 18);
  const std::string path = "/tmp/phytrack_test_ckpt.bin";
  save_checkpoint(a.store(), path);

  PhyModel b(cfg, 99);  // different init
  load_checkpoint(b.store(), path);
  for (const auto& [name, p] : a.store().all()) {
    // values pass through float32, so compare at that precision
    CHECK(b.store().get(name)->val.max_abs_diff(p->val) < 1e-6);
  }

  // a second save after load is byte-identical (float32 quantization is stable)
  const std::string path2 = "/tmp/phytrack_test_ckpt2.bin";
  save_checkpoint(b.store(), path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  ModelConfig other = cfg;
  other.head_channels = cfg.head_channels + 2;
  PhyModel c(other, 18);
  CHECK_THROWS_WITH(load_checkpoint(c.store(), path),
                    Catch::Matchers::ContainsSubstring("mismatch"));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}
