#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmla/cla.hpp"
#include "fmla/kernels.hpp"
#include "testutil.hpp"

using namespace fmla;

namespace {
ClaBlockParams make_params(int d, int heads, int c, int c_dcn,
                           std::uint64_t seed) {
  Rng rng(seed);
  return ClaBlockParams::init(d, heads, c, c_dcn, 4, rng);
}
}  // namespace

TEST_CASE("compression maps: zero weights, group isolation, clamp rule") {
  auto p = make_params(8, 4, 16, 8, 1);
  Tensor h = testutil::random_tensor({8, 8}, 2);

  // n=8, C=16 -> C_eff=8 and F_i is 8x8
  const int c_eff = effective_compression(p.c, 8);
  CHECK(c_eff == 8);
  auto fs = gen_compression_maps(h, p, c_eff);
  REQUIRE(fs.size() == 4);
  for (const Tensor& f : fs) CHECK(f.dims() == Dims{8, 8});

  // zeroed generator -> all F_i zero -> compressed values zero
  for (double& v : p.comp_gen.raw()) v = 0.0;
  auto fz = gen_compression_maps(h, p, c_eff);
  for (const Tensor& f : fz)
    for (double v : f.raw()) CHECK(v == 0.0);
  Tensor s = testutil::random_tensor({8, 8}, 3);
  Tensor vbar = compress_values(s, fz[0], p.wv[0]);
  for (double v : vbar.raw()) CHECK(v == 0.0);
}

TEST_CASE("perturbing one DCN channel group leaves other heads' F unchanged") {
  auto p = make_params(8, 4, 4, 8, 4);
  Tensor h = testutil::random_tensor({8, 12}, 5);
  auto before = gen_compression_maps(h, p, 4);
  // channels 0..1 belong to group 1 (head 0) when c_dcn=8, heads=4
  Tensor h2 = Tensor::from_data(h.dims(), h.raw());
  for (int t = 0; t < 12; ++t) h2.raw()[static_cast<std::size_t>(t)] += 3.0;
  auto after = gen_compression_maps(h2, p, 4);
  CHECK(testutil::max_abs_diff(before[0].raw(), after[0].raw()) > 0.0);
  for (int head = 1; head < 4; ++head)
    CHECK(before[static_cast<std::size_t>(head)].raw() ==
          after[static_cast<std::size_t>(head)].raw());
}

TEST_CASE("group isolation holds for gradients too") {
  auto p = make_params(8, 2, 4, 8, 6);
  Tensor h = testutil::random_tensor({8, 10}, 7, true);
  {
    Tape::Scope scope;
    auto fs = gen_compression_maps(h, p, 4);
    Tensor loss = sum_all(mul(fs[0], fs[0]));  // depends on head 0 only
    backward(loss);
    // head 0 reads channel group 0..3; group 4..7 must have zero gradient
    for (int ch = 4; ch < 8; ++ch)
      for (int t = 0; t < 10; ++t)
        CHECK(h.grad()[static_cast<std::size_t>(ch) * 10 + t] == 0.0);
  }
}

TEST_CASE("compress_values: one-hot selection, averaging, naive oracle") {
  const int n = 6, d = 8, dh = 4;
  auto p = make_params(d, 2, 3, 8, 8);
  Tensor s = testutil::random_tensor({n, d}, 9);
  Tensor v = matmul(s, p.wv[0]);  // [n x dh]

  // one-hot rows select tokens
  std::vector<double> fd(3 * n, 0.0);
  fd[0 * n + 4] = 1.0;
  fd[1 * n + 0] = 1.0;
  fd[2 * n + 2] = 1.0;
  Tensor f = Tensor::from_data({3, n}, fd);
  Tensor vbar = compress_values(s, f, p.wv[0]);
  for (int j = 0; j < dh; ++j) {
    CHECK(vbar(0, j) == doctest::Approx(v(4, j)).epsilon(1e-12));
    CHECK(vbar(1, j) == doctest::Approx(v(0, j)).epsilon(1e-12));
    CHECK(vbar(2, j) == doctest::Approx(v(2, j)).epsilon(1e-12));
  }

  // uniform rows average tokens
  Tensor funi = Tensor::full({2, n}, 1.0 / n);
  Tensor vavg = compress_values(s, funi, p.wv[0]);
  for (int j = 0; j < dh; ++j) {
    double want = 0.0;
    for (int t = 0; t < n; ++t) want += v(t, j) / n;
    CHECK(vavg(0, j) == doctest::Approx(want).epsilon(1e-12));
  }

  // random case equals two-step naive products
  Tensor fr = testutil::random_tensor({3, n}, 10);
  Tensor got = compress_values(s, fr, p.wv[0]);
  std::vector<double> sv(static_cast<std::size_t>(n) * dh);
  ref::matmul(s.raw().data(), p.wv[0].raw().data(), sv.data(), n, d, dh);
  std::vector<double> want(static_cast<std::size_t>(3) * dh);
  ref::matmul(fr.raw().data(), sv.data(), want.data(), 3, n, dh);
  CHECK(testutil::max_abs_diff(got.raw(), want) <= 1e-12);
}

TEST_CASE("key regeneration: selector weights, row permutation, naive map") {
  const int c_eff = 5, dh = 3, heads = 2;
  auto p = make_params(6, heads, c_eff, 8, 11);
  Tensor v1 = testutil::random_tensor({c_eff, dh}, 12);
  Tensor v2 = testutil::random_tensor({c_eff, dh}, 13);

  // selector: identity block on head 1, zeros elsewhere -> K_hat = Vbar_1
  Tensor sel = Tensor::zeros({dh, heads * dh, 1});
  for (int j = 0; j < dh; ++j)
    sel.raw()[static_cast<std::size_t>(j) * (heads * dh) + j] = 1.0;
  std::vector<Tensor> vbars = {v1, v2};
  Tensor khat = regenerate_key(vbars, sel);
  CHECK(testutil::max_abs_diff(khat.raw(), v1.raw()) <= 1e-12);

  // permuting compressed rows permutes K_hat rows identically
  Tensor kc = testutil::random_tensor({dh, heads * dh, 1}, 14);
  Tensor base = regenerate_key(vbars, kc);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  auto permute_rows = [&](const Tensor& t) {
    Tensor out = Tensor::zeros(t.dims());
    for (int r = 0; r < c_eff; ++r)
      for (int j = 0; j < t.dim(1); ++j)
        out.raw()[static_cast<std::size_t>(r) * t.dim(1) + j] =
            t(perm[static_cast<std::size_t>(r)], j);
    return out;
  };
  std::vector<Tensor> pv = {permute_rows(v1), permute_rows(v2)};
  Tensor permuted = regenerate_key(pv, kc);
  Tensor want = permute_rows(base);
  CHECK(testutil::max_abs_diff(permuted.raw(), want.raw()) <= 1e-12);

  // random case equals a naive per-row linear map
  for (int r = 0; r < c_eff; ++r)
    for (int o = 0; o < dh; ++o) {
      double acc = 0.0;
      for (int h = 0; h < heads; ++h)
        for (int j = 0; j < dh; ++j)
          acc += kc.raw()[static_cast<std::size_t>(o) * (heads * dh) + h * dh + j] *
                 vbars[static_cast<std::size_t>(h)](r, j);
      CHECK(base(r, o) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("attention head: zero mix -> uniform rows; rows always sum to 1") {
  const int n = 7, d = 8, heads = 2, c = 4;
  auto p = make_params(d, heads, c, 8, 15);
  Tensor s = testutil::random_tensor({n, d}, 16);
  Tensor h_dcn = testutil::random_tensor({8, n}, 17);
  auto fs = gen_compression_maps(h_dcn, p, c);
  Tensor vbar = compress_values(s, fs[0], p.wv[0]);
  std::vector<Tensor> vbars = {vbar, compress_values(s, fs[1], p.wv[1])};
  Tensor khat = regenerate_key(vbars, p.key_conv);

  for (double& v : p.mix.raw()) v = 0.0;
  HeadResult zero = collab_attention_head(s, 0, khat, vbar, p);
  for (int t = 0; t < n; ++t)
    for (int r = 0; r < c; ++r)
      CHECK(zero.attn(t, r) == doctest::Approx(1.0 / c).epsilon(1e-12));

  // scaling the mix vector changes the map but rows still normalize
  for (double& v : p.mix.raw()) v = 2.5;
  HeadResult scaled = collab_attention_head(s, 0, khat, vbar, p);
  for (int t = 0; t < n; ++t) {
    double sum = 0.0;
    for (int r = 0; r < c; ++r) sum += scaled.attn(t, r);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("degenerate configuration reproduces brute-force attention") {
  // C_eff=n, F=identity, selector key conv, one head, unit mix, masks off,
  // pooling residual off, W_O identity.
  Rng rng(18);
  for (int n : {4, 9, 16}) {
    const int d = 8;
    ClaBlockParams p = ClaBlockParams::init(d, 1, n, 4, 4, rng);
    Tensor s = testutil::random_tensor({n, d}, 19 + static_cast<std::uint64_t>(n));

    Tensor f_identity = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
      f_identity.raw()[static_cast<std::size_t>(i) * n + i] = 1.0;
    for (double& v : p.mix.raw()) v = 1.0;
    Tensor sel = Tensor::zeros({d, d, 1});
    for (int j = 0; j < d; ++j)
      sel.raw()[static_cast<std::size_t>(j) * d + j] = 1.0;

    Tensor vbar = compress_values(s, f_identity, p.wv[0]);
    std::vector<Tensor> vbars = {vbar};
    Tensor khat = regenerate_key(vbars, sel);
    HeadResult head = collab_attention_head(s, 0, khat, vbar, p);

    std::vector<double> m(static_cast<std::size_t>(d), 1.0);
    auto want = testutil::naive_collab_attention(
        s.raw(), n, d, p.wq.raw(), d, m, khat.raw(), vbar.raw(), n);
    CHECK(testutil::max_abs_diff(head.hbar.raw(), want) <= 1e-8);
  }
}

TEST_CASE("merge: constant pooling residual, no-mask path, identity proj") {
  const int n = 5, d = 4;
  Rng rng(20);
  ClaBlockParams p = ClaBlockParams::init(d, 1, 4, 4, 4, rng);
  // identity output projection
  for (double& v : p.wo.raw()) v = 0.0;
  for (int j = 0; j < d; ++j) p.wo.raw()[static_cast<std::size_t>(j) * d + j] = 1.0;

  HeadResult h;
  h.q = Tensor::full({n, d}, 2.0);  // constant query -> pooling preserves it
  h.hbar = Tensor::zeros({n, d});
  h.attn = Tensor::full({n, 4}, 0.25);
  std::vector<HeadResult> heads = {h};
  Tensor merged = merge_heads_residual(heads, p, {});
  for (double v : merged.raw()) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));

  // W_O identity, one head, masks off, pooling off -> output equals Hbar_1
  HeadResult h2;
  h2.q = testutil::random_tensor({n, d}, 21);
  h2.hbar = testutil::random_tensor({n, d}, 22);
  h2.attn = h.attn;
  std::vector<HeadResult> heads2 = {h2};
  Tensor out = merge_heads_residual(heads2, p, {}, /*pooling_residual=*/false);
  CHECK(testutil::max_abs_diff(out.raw(), h2.hbar.raw()) <= 1e-12);
}

TEST_CASE("block is the identity map when all projection weights are zero") {
  const int n = 6, d = 8;
  Rng rng(23);
  ClaBlockParams p = ClaBlockParams::init(d, 2, 4, 8, 4, rng);
  for (Tensor* t : {&p.wq, &p.key_conv, &p.comp_gen, &p.wo, &p.wo_b, &p.ffn_w1,
                    &p.ffn_b1, &p.ffn_w2, &p.ffn_b2})
    for (double& v : t->raw()) v = 0.0;
  for (auto& wv : p.wv)
    for (double& v : wv.raw()) v = 0.0;
  Tensor s = testutil::random_tensor({n, d}, 24);
  Tensor h_dcn = testutil::random_tensor({8, n}, 25);
  Tensor out = fmla_block_forward(s, h_dcn, p, {});
  CHECK(testutil::max_abs_diff(out.raw(), s.raw()) <= 1e-12);
}

TEST_CASE("block preserves shape for any n and attention stays linear-width") {
  Rng rng(26);
  ClaBlockParams p = ClaBlockParams::init(8, 2, 4, 8, 4, rng);
  for (int n : {3, 4, 17, 40}) {
    Tensor s = testutil::random_tensor({n, 8}, 30 + static_cast<std::uint64_t>(n));
    Tensor h_dcn = testutil::random_tensor({8, n}, 60 + static_cast<std::uint64_t>(n));
    AttentionActivations acts;
    Tensor out = fmla_block_forward(s, h_dcn, p, {}, {}, &acts);
    CHECK(out.dims() == s.dims());
    const int c_eff = effective_compression(4, n);
    for (const Tensor& a : acts.attn) {
      CHECK(a.dims() == Dims{n, c_eff});
      for (int t = 0; t < n; ++t) {
        double sum = 0.0;
        for (int r = 0; r < c_eff; ++r) sum += a(t, r);
        CHECK(std::abs(sum - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("position-wise key: row r of K_hat depends only on row r of Vbar") {
  const int c_eff = 4, dh = 3, heads = 2;
  Rng rng(27);
  ClaBlockParams p = ClaBlockParams::init(6, heads, c_eff, 8, 4, rng);
  Tensor v1 = testutil::random_tensor({c_eff, dh}, 28);
  Tensor v2 = testutil::random_tensor({c_eff, dh}, 29);
  std::vector<Tensor> vbars = {v1, v2};
  Tensor base = regenerate_key(vbars, p.key_conv);
  // perturb row 2 of v1 only
  Tensor v1p = Tensor::from_data(v1.dims(), v1.raw());
  for (int j = 0; j < dh; ++j)
    v1p.raw()[static_cast<std::size_t>(2) * dh + j] += 1.0;
  std::vector<Tensor> vbars2 = {v1p, v2};
  Tensor moved = regenerate_key(vbars2, p.key_conv);
  for (int r = 0; r < c_eff; ++r)
    for (int j = 0; j < dh; ++j) {
      if (r == 2) continue;
      CHECK(moved(r, j) == doctest::Approx(base(r, j)).epsilon(1e-12));
    }
  bool row2_changed = false;
  for (int j = 0; j < dh; ++j)
    row2_changed = row2_changed || moved(2, j) != base(2, j);
  CHECK(row2_changed);
}

TEST_CASE("full block gradient check on a small configuration") {
  Rng rng(31);
  ClaBlockParams p = ClaBlockParams::init(8, 2, 4, 8, 4, rng);
  Tensor s = testutil::random_tensor({16, 8}, 32, true);
  Tensor h_dcn = testutil::random_tensor({8, 16}, 33, true);
  MaskBits mask = build_regular_mask(16, 0.5, 1);
  std::vector<MaskBits> masks = {mask, mask};
  auto f = [&] {
    Tensor out = fmla_block_forward(s, h_dcn, p, masks);
    return sum_all(mul(out, out));
  };
  std::vector<Tensor> params = {s,        h_dcn,    p.wq,      p.mix,
                                p.wv[0],  p.wv[1],  p.key_conv, p.comp_gen,
                                p.wo,     p.wo_b,   p.ffn_w1,  p.ffn_b1,
                                p.ffn_w2, p.ffn_b2, p.ln1_g,   p.ln1_b,
                                p.ln2_g,  p.ln2_b};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("normalize_f turns compression weights into convex combinations") {
  auto p = make_params(8, 2, 4, 8, 34);
  Tensor h = testutil::random_tensor({8, 9}, 35);
  auto fs = gen_compression_maps(h, p, 4, /*normalize_f=*/true);
  for (const Tensor& f : fs)
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int t = 0; t < 9; ++t) sum += f(r, t);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("per-block multiply-accumulates grow linearly in n") {
  Rng rng(36);
  ClaBlockParams p = ClaBlockParams::init(16, 4, 8, 16, 4, rng);
  auto macs_at = [&](int n) {
    Tensor s = testutil::random_tensor({n, 16}, 37);
    Tensor h_dcn = testutil::random_tensor({16, n}, 38);
    kern::reset_mac_counter();
    fmla_block_forward(s, h_dcn, p, {});
    return kern::mac_counter();
  };
  const auto m64 = macs_at(64);
  const auto m512 = macs_at(512);
  // fixed d and C: an 8x longer input may cost at most ~8x (plus the
  // constant key-regeneration term)
  CHECK(static_cast<double>(m512) <= 8.6 * static_cast<double>(m64));
}
