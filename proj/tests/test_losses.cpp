#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motionalign/losses.hpp"
#include "testutil.hpp"

using namespace ma;
using test::max_rel_grad_err;
using test::rand_tensor;

namespace {
using T = Tensor<double>;
using V = Var<double>;
using G = Graph<double>;

// Straight-line re-derivations of the printed formulas, sharing nothing with
// the graph implementation except the epsilon convention of the normalizer.
double cos_guarded(const std::vector<double>& a, const std::vector<double>& b) {
  double na = 0, nb = 0, d = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
    d += a[i] * b[i];
  }
  double e2 = kCosEps * kCosEps;
  return d / (std::sqrt(na + e2) * std::sqrt(nb + e2));
}

double h_guarded(const std::vector<double>& a, const std::vector<double>& b, double tau) {
  return std::exp(cos_guarded(a, b) / tau);
}

std::vector<double> row_of(const T& m, int r) {
  int d = m.dim(1);
  return std::vector<double>(m.data() + int64_t(r) * d, m.data() + int64_t(r + 1) * d);
}

double single_nce_oracle(const std::vector<double>& q, const std::vector<double>& k,
                         const std::vector<std::vector<double>>& negs, double tau) {
  double num = h_guarded(q, k, tau);
  double den = num;
  for (const auto& n : negs) den += h_guarded(q, n, tau);
  return -std::log(num / den);
}

T rand_rows(Rng& rng, int n, int d) { return rand_tensor(rng, {n, d}); }
}  // namespace

TEST_CASE("similarity kernel fixtures") {
  std::vector<double> e1 = {1, 0, 0}, e2 = {0, 1, 0}, e3 = {0.5, 0, 0};
  CHECK(h_kernel(e1.data(), e1.data(), 3, 0.1) ==
        doctest::Approx(22026.465794806718).epsilon(1e-12));
  CHECK(h_kernel(e1.data(), e2.data(), 3, 0.1) == doctest::Approx(1.0).epsilon(1e-12));
  // cosine ignores magnitude
  CHECK(h_kernel(e3.data(), e1.data(), 3, 0.1) ==
        doctest::Approx(22026.465794806718).epsilon(1e-12));
  std::vector<double> z = {0, 0, 0};
  CHECK_THROWS(h_kernel(e1.data(), z.data(), 3, 0.1));
}

TEST_CASE("clip loss pinned fixtures") {
  G g;
  V q = g.constant(T({1, 3}, {1, 0, 0}));
  V k = g.constant(T({1, 3}, {1, 0, 0}));
  V neg = g.constant(T({1, 3}, {0, 1, 0}));

  // identical query/key, one orthogonal negative: log(1 + e^-10)
  double want = std::log1p(std::exp(-10.0));
  CHECK(loss_vv(q, k, neg).item() == doctest::Approx(want).epsilon(1e-9));

  // no negatives at all: exactly zero
  CHECK(loss_vv(q, k, V{}).item() == 0.0);
  V none = g.constant(T({0, 3}));
  CHECK(loss_vv(q, k, none).item() == 0.0);
}

TEST_CASE("clip loss matches a straight-line oracle") {
  Rng rng(402);
  for (int rep = 0; rep < 20; ++rep) {
    int dim = 5;
    T qt = rand_rows(rng, 1, dim), kt = rand_rows(rng, 1, dim);
    T nt = rand_rows(rng, 6, dim);
    G g;
    double got = loss_vv(g.constant(qt), g.constant(kt), g.constant(nt)).item();

    std::vector<std::vector<double>> negs;
    for (int i = 0; i < 6; ++i) negs.push_back(row_of(nt, i));
    double want = single_nce_oracle(row_of(qt, 0), row_of(kt, 0), negs, kTau);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got >= 0.0);

    // the motion-key flavor is the same computation
    G g2;
    CHECK(loss_vd(g2.constant(qt), g2.constant(kt), g2.constant(nt)).item() ==
          doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("clip loss is invariant to positive rescaling of inputs") {
  Rng rng(403);
  int dim = 4;
  T qt = rand_rows(rng, 1, dim), kt = rand_rows(rng, 1, dim);
  T nt = rand_rows(rng, 3, dim);
  G g;
  double base = loss_vv(g.constant(qt), g.constant(kt), g.constant(nt)).item();

  T qs = qt, ks = kt, ns = nt;
  for (int64_t i = 0; i < qs.numel(); ++i) qs[i] *= 7.25;
  for (int64_t i = 0; i < ks.numel(); ++i) ks[i] *= 0.5;
  for (int64_t i = 0; i < ns.numel(); ++i) ns[i] *= 3.0;
  G g2;
  double scaled = loss_vv(g2.constant(qs), g2.constant(ks), g2.constant(ns)).item();
  CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
}

namespace {
// Direct evaluation of the dense multi-positive objective on a tiny map.
struct PixFixture {
  int t_feat = 2, cells = 4, dim = 4;
  T decoded, key_rows, extras;
  std::vector<int> row_frame, row_cell;
  PositiveAssignment pa;
  Tensor<uint8_t> fg;

  explicit PixFixture(uint64_t seed) {
    Rng rng(seed);
    decoded = rand_rows(rng, 4, dim);
    key_rows = rand_rows(rng, t_feat * cells, dim);
    extras = rand_rows(rng, 3, dim);
    row_frame = {0, 0, 1, 1};
    row_cell = {0, 2, 3, 1};
    pa.threshold = 0.7f;
    pa.pos = {{0, 1}, {1}, {}, {2, 3}};
    fg = Tensor<uint8_t>({4});
    fg[0] = fg[1] = 1;
    fg[2] = 0;
    fg[3] = 1;
  }
};

double pix_oracle(const PixFixture& f, bool mask_target, bool bg_in_den, double tau,
                  int* contributing = nullptr) {
  double total = 0;
  int used = 0;
  for (size_t r = 0; r < f.row_cell.size(); ++r) {
    std::vector<double> q = row_of(f.decoded, int(r));
    int fi = f.row_frame[r];
    std::vector<bool> is_pos(size_t(f.t_feat * f.cells), false);
    double num = 0;
    for (int kc : f.pa.pos[size_t(f.row_cell[r])]) {
      if (mask_target && f.fg[kc] == 0) continue;
      is_pos[size_t(fi * f.cells + kc)] = true;
      num += h_guarded(q, row_of(f.key_rows, fi * f.cells + kc), tau);
    }
    if (num == 0) continue;
    ++used;
    double den = num;
    for (int t = 0; t < f.t_feat; ++t)
      for (int c = 0; c < f.cells; ++c) {
        if (is_pos[size_t(t * f.cells + c)]) continue;
        if (mask_target && !bg_in_den && f.fg[c] == 0) continue;
        den += h_guarded(q, row_of(f.key_rows, t * f.cells + c), tau);
      }
    for (int e = 0; e < f.extras.dim(0); ++e)
      den += h_guarded(q, row_of(f.extras, e), tau);
    total += -std::log(num / den);
  }
  if (contributing) *contributing = used;
  return used > 0 ? total / used : 0.0;
}

double run_pix(const PixFixture& f, const PixLossSpec& spec, int* contributing = nullptr,
               bool with_extras = true) {
  G g;
  V extras = with_extras ? g.constant(f.extras) : V{};
  auto r = loss_pix(g.constant(f.decoded), f.row_frame, f.row_cell,
                    g.constant(f.key_rows), f.t_feat, f.cells, f.pa, f.fg, extras, spec);
  if (contributing) *contributing = r.contributing;
  return r.loss.item();
}
}  // namespace

TEST_CASE("pixel loss matches a straight-line oracle on a 2x2 map") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    PixFixture f(seed);
    for (bool mask : {true, false})
      for (bool bg : {true, false}) {
        PixLossSpec spec;
        spec.mask_target = mask;
        spec.bg_in_denominator = bg;
        int got_n = 0, want_n = 0;
        double got = run_pix(f, spec, &got_n);
        double want = pix_oracle(f, mask, bg, kTau, &want_n);
        CAPTURE(seed);
        CAPTURE(mask);
        CAPTURE(bg);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
        CHECK(got_n == want_n);
        CHECK(got >= 0.0);
      }
    // cell 2 never has positives; with masking cell 3 keeps only key cell 3
    PixLossSpec spec;
    int n = 0;
    run_pix(f, spec, &n);
    CHECK(n == 3);
  }
}

TEST_CASE("pixel loss rows without positives contribute nothing") {
  PixFixture f(21);
  f.pa.pos = {{}, {}, {}, {}};
  PixLossSpec spec;
  G g;
  V decoded = g.leaf(f.decoded, true);
  auto r = loss_pix(decoded, f.row_frame, f.row_cell, g.constant(f.key_rows), f.t_feat,
                    f.cells, f.pa, f.fg, g.constant(f.extras), spec);
  CHECK(r.loss.item() == 0.0);
  CHECK(r.contributing == 0);
  CHECK(r.positives == 0);
  g.backward(r.loss);
  CHECK_FALSE(g.grad_touched(decoded.id));  // constant zero carries no gradient
}

TEST_CASE("pixel loss flag and negative-set semantics") {
  PixFixture f(31);
  PixLossSpec spec;  // masked, background kept in denominator

  // dropping masked-out background cells shrinks the denominator
  PixLossSpec excl = spec;
  excl.bg_in_denominator = false;
  CHECK(run_pix(f, excl) < run_pix(f, spec));

  // extra cross-video negatives can only grow the denominator
  CHECK(run_pix(f, spec, nullptr, /*with_extras=*/false) < run_pix(f, spec));

  // disabling the target mask equals an all-foreground mask
  PixFixture all(31);
  all.fg = Tensor<uint8_t>::full({4}, uint8_t(1));
  PixLossSpec off = spec;
  off.mask_target = false;
  CHECK(run_pix(f, off) == doctest::Approx(run_pix(all, spec)).epsilon(1e-12));

  // scale invariance of every input
  PixFixture big(31);
  for (int64_t i = 0; i < big.decoded.numel(); ++i) big.decoded[i] *= 9.0;
  for (int64_t i = 0; i < big.key_rows.numel(); ++i) big.key_rows[i] *= 0.25;
  CHECK(run_pix(big, spec) == doctest::Approx(run_pix(f, spec)).epsilon(1e-9));
}

namespace {
double fra_infonce_oracle(const T& cls, const T& keys, const T& inter, double tau) {
  int t = cls.dim(0);
  double total = 0;
  for (int i = 0; i < t; ++i) {
    std::vector<double> c = row_of(cls, i);
    double num = h_guarded(c, row_of(keys, i), tau);
    double den = 0;
    for (int j = 0; j < t; ++j) den += h_guarded(c, row_of(keys, j), tau);
    for (int e = 0; e < inter.dim(0); ++e) den += h_guarded(c, row_of(inter, e), tau);
    total += -std::log(num / den);
  }
  return total / t;
}
}  // namespace

TEST_CASE("frame loss matches a straight-line oracle") {
  Rng rng(702);
  for (int rep = 0; rep < 10; ++rep) {
    T cls = rand_rows(rng, 2, 5), keys = rand_rows(rng, 2, 5);
    T inter = rand_rows(rng, 7, 5);
    G g;
    auto r = loss_fra(g.constant(cls), g.constant(keys), g.constant(inter));
    CHECK(r.frames == 2);
    CHECK(r.loss.item() ==
          doctest::Approx(fra_infonce_oracle(cls, keys, inter, kTau)).epsilon(1e-10));
    CHECK(r.loss.item() >= 0.0);
  }
}

TEST_CASE("frame loss treats identical frames identically") {
  Rng rng(703);
  T one_c = rand_rows(rng, 1, 5), one_k = rand_rows(rng, 1, 5);
  T cls({2, 5}), keys({2, 5});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) {
      cls[int64_t(i) * 5 + j] = one_c[j];
      keys[int64_t(i) * 5 + j] = one_k[j];
    }
  T inter = rand_rows(rng, 4, 5);
  // duplicated frames: every per-frame term is the same, so the mean equals
  // the single-frame value computed by the oracle
  G g;
  double got = loss_fra(g.constant(cls), g.constant(keys), g.constant(inter)).loss.item();
  std::vector<double> c = row_of(cls, 0);
  double num = h_guarded(c, row_of(keys, 0), kTau);
  double den = 2 * num;
  for (int e = 0; e < 4; ++e) den += h_guarded(c, row_of(inter, e), kTau);
  CHECK(got == doctest::Approx(-std::log(num / den)).epsilon(1e-10));
}

TEST_CASE("frame loss variants") {
  Rng rng(704);
  T cls = rand_rows(rng, 2, 6), keys = rand_rows(rng, 2, 6);
  T inter = rand_rows(rng, 5, 6);

  SUBCASE("mse is the squared distance of unit vectors and ignores negatives") {
    G g;
    double got = loss_fra(g.constant(cls), g.constant(keys), g.constant(inter),
                          FraLossType::mse)
                     .loss.item();
    double want = 0;
    for (int i = 0; i < 2; ++i) want += 2.0 - 2.0 * cos_guarded(row_of(cls, i), row_of(keys, i));
    want /= 2.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    G g2;
    double no_negs = loss_fra(g2.constant(cls), g2.constant(keys), V{}, FraLossType::mse)
                         .loss.item();
    CHECK(no_negs == doctest::Approx(got).epsilon(1e-15));
  }

  SUBCASE("triplet hinges on margin minus positive plus negative similarity") {
    G g;
    double got = loss_fra(g.constant(cls), g.constant(keys), g.constant(inter),
                          FraLossType::triplet)
                     .loss.item();
    double want = 0;
    int per = 1 + 5;  // one intra negative (the other sub-clip) + five inter
    for (int i = 0; i < 2; ++i) {
      std::vector<double> c = row_of(cls, i);
      double sp = cos_guarded(c, row_of(keys, i));
      double acc = 0;
      acc += std::max(0.0, kTripletMargin - sp + cos_guarded(c, row_of(keys, 1 - i)));
      for (int e = 0; e < 5; ++e)
        acc += std::max(0.0, kTripletMargin - sp + cos_guarded(c, row_of(inter, e)));
      want += acc / per;
    }
    want /= 2.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
  }

  SUBCASE("triplet is exactly zero when every negative clears the margin") {
    // positives aligned, negatives anti-aligned: hinge terms are all clamped
    T c2({2, 2}, {1, 0, 0, 1});
    T k2({2, 2}, {1, 0, 0, 1});
    T n2({1, 2}, {-1, -0.5});
    G g;
    CHECK(loss_fra(g.constant(c2), g.constant(k2), g.constant(n2), FraLossType::triplet)
              .loss.item() == 0.0);
  }
}

TEST_CASE("multi-positive objective is nonnegative for random instances") {
  Rng rng(805);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 1 + rng.uniform_int(0, 4), m = 2 + rng.uniform_int(0, 6), d = 3;
    T q = rand_rows(rng, n, d), k = rand_rows(rng, m, d);
    T pm({n, m});
    for (int64_t i = 0; i < pm.numel(); ++i) pm[i] = rng.uniform(0.0, 1.0) < 0.3 ? 1.0 : 0.0;
    G g;
    auto r = multi_positive_nce(g.constant(q), g.constant(k), pm, Tensor<double>{}, kTau);
    CHECK(r.loss.item() >= 0.0);
    int rows_with_pos = 0;
    for (int i = 0; i < n; ++i) {
      bool any = false;
      for (int j = 0; j < m; ++j) any = any || pm[int64_t(i) * m + j] != 0.0;
      rows_with_pos += any;
    }
    CHECK(r.contributing == rows_with_pos);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(906);
  T k1 = rand_rows(rng, 1, 4), n1 = rand_rows(rng, 5, 4);
  double err = max_rel_grad_err(rand_rows(rng, 1, 4), [&](G& g, V x) {
    return loss_vv(x, g.constant(k1), g.constant(n1));
  });
  CHECK(err < 1e-6);

  PixFixture f(41);
  PixLossSpec spec;
  err = max_rel_grad_err(f.decoded, [&](G& g, V x) {
    return loss_pix(x, f.row_frame, f.row_cell, g.constant(f.key_rows), f.t_feat,
                    f.cells, f.pa, f.fg, g.constant(f.extras), spec)
        .loss;
  });
  CHECK(err < 1e-6);

  T keys = rand_rows(rng, 2, 4), inter = rand_rows(rng, 4, 4);
  for (FraLossType ty : {FraLossType::infonce, FraLossType::triplet, FraLossType::mse}) {
    err = max_rel_grad_err(rand_rows(rng, 2, 4), [&](G& g, V x) {
      return loss_fra(x, g.constant(keys), g.constant(inter), ty).loss;
    });
    CAPTURE(int(ty));
    CHECK(err < 1e-6);
  }
}
