#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsefocus/losses.hpp"

using namespace sparsefocus;

namespace {

struct Instance {
  PlaneD y, yhat;
  MaskPlane region;
};

Instance random_instance(int h, int w, std::uint64_t seed, double lo = -1.0, double hi = 3.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Instance inst;
  inst.y = PlaneD(h, w);
  inst.yhat = PlaneD(h, w);
  inst.region = MaskPlane(h, w);
  for (Eigen::Index i = 0; i < inst.y.size(); ++i) {
    inst.y.data()[i] = d(rng);
    inst.yhat.data()[i] = d(rng);
    inst.region.data()[i] = rng() & 1;
  }
  return inst;
}

// independent 64-bit scalar reference implementations
double oracle_regional_mae(const PlaneD& y, const PlaneD& yhat, const MaskPlane& r) {
  double sum = 0;
  long n = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (r.data()[i]) {
      sum += std::fabs(y.data()[i] - yhat.data()[i]);
      ++n;
    }
  return n == 0 ? 0.0 : sum / double(n);
}

double oracle_weighted_mae(const PlaneD& y, const PlaneD& yhat, const MaskPlane& r) {
  long nk = 0;
  for (Eigen::Index i = 0; i < r.size(); ++i) nk += r.data()[i];
  const long n = r.size();
  const long nkc = n - nk;
  MaskPlane comp(r.rows(), r.cols());
  for (Eigen::Index i = 0; i < r.size(); ++i) comp.data()[i] = r.data()[i] ? 0 : 1;
  return (double(nkc) / n) * oracle_regional_mae(y, yhat, r) +
         (double(nk) / n) * oracle_regional_mae(y, yhat, comp);
}

double oracle_dice_loss(const PlaneD& x, const PlaneD& xhat, double s) {
  double inter = 0, sx = 0, sxh = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    inter += x.data()[i] * xhat.data()[i];
    sx += x.data()[i] * x.data()[i];
    sxh += xhat.data()[i] * xhat.data()[i];
  }
  return 1.0 - (2.0 * inter + s) / (sx + sxh + s);
}

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-30});
  return std::fabs(a - b) / denom;
}

}  // namespace

TEST_CASE("regional MAE matches the scalar oracle on 100 random 8x8") {
  for (int k = 0; k < 100; ++k) {
    const Instance inst = random_instance(8, 8, 1000 + k);
    const double got = regional_mae(inst.y, inst.yhat, inst.region);
    CHECK(rel_err(got, oracle_regional_mae(inst.y, inst.yhat, inst.region)) <= 1e-6);
  }
}

TEST_CASE("weighted MAE matches the scalar oracle on 100 random 8x8") {
  for (int k = 0; k < 100; ++k) {
    const Instance inst = random_instance(8, 8, 2000 + k);
    const double got = weighted_mae(inst.y, inst.yhat, inst.region);
    CHECK(rel_err(got, oracle_weighted_mae(inst.y, inst.yhat, inst.region)) <= 1e-6);
  }
}

TEST_CASE("dice loss matches the scalar oracle on 100 random 8x8") {
  for (int k = 0; k < 100; ++k) {
    std::mt19937_64 rng(3000 + k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PlaneD x(8, 8), xh(8, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = u(rng) < 0.5 ? 0.0 : 1.0;
      xh.data()[i] = u(rng);
    }
    for (double s : {0.0, 1.0, 2.5}) {
      CHECK(rel_err(dice_loss(x, xh, s), oracle_dice_loss(x, xh, s)) <= 1e-6);
    }
  }
}

TEST_CASE("regional MAE worked examples") {
  PlaneD y(1, 4), yh(1, 4);
  y << 0, 0, 10, 10;
  yh << 1, 3, 10, 6;
  MaskPlane r = MaskPlane::Zero(1, 4);
  r(0, 2) = r(0, 3) = 1;
  CHECK(regional_mae(y, yh, r) == doctest::Approx(2.0));
  CHECK(regional_mae(y, y, r) == 0.0);
  CHECK(regional_mae(y, yh, MaskPlane::Zero(1, 4)) == 0.0);
  CHECK_THROWS_AS(regional_mae(y, yh, MaskPlane::Zero(2, 2)), contract_error);
}

TEST_CASE("weighted MAE worked example and identities") {
  PlaneD y(1, 4), yh(1, 4);
  y << 0, 0, 0, 10;
  yh << 1, 1, 1, 6;
  MaskPlane last = MaskPlane::Zero(1, 4);
  last(0, 3) = 1;
  CHECK(weighted_mae(y, yh, last) == doctest::Approx(3.25));  // (3/4)*4 + (1/4)*1

  for (int k = 0; k < 50; ++k) {
    const Instance inst = random_instance(8, 8, 4000 + k);
    const double v = weighted_mae(inst.y, inst.yhat, inst.region);
    // swap symmetry
    MaskPlane comp(8, 8);
    for (Eigen::Index i = 0; i < comp.size(); ++i) comp.data()[i] = inst.region.data()[i] ? 0 : 1;
    CHECK(rel_err(v, weighted_mae(inst.y, inst.yhat, comp)) <= 1e-9);
    // positive-scale homogeneity
    const double s = 3.7;
    CHECK(rel_err(s * v, weighted_mae(PlaneD(s * inst.y), PlaneD(s * inst.yhat), inst.region)) <=
          1e-9);
    // nonnegative; zero iff perfect on nonempty regions
    CHECK(v >= 0.0);
    CHECK(weighted_mae(inst.y, inst.y, inst.region) == 0.0);
    if (v == 0.0) CHECK((inst.y == inst.yhat).all());
  }

  // equal volumes -> arithmetic mean of the two regional MAEs
  for (int k = 0; k < 20; ++k) {
    Instance inst = random_instance(8, 8, 5000 + k);
    MaskPlane half = MaskPlane::Zero(8, 8);
    half.block(0, 0, 4, 8).setConstant(1);
    MaskPlane comp = MaskPlane::Ones(8, 8) - half;
    const double mk = regional_mae(inst.y, inst.yhat, half);
    const double mkc = regional_mae(inst.y, inst.yhat, comp);
    CHECK(rel_err(weighted_mae(inst.y, inst.yhat, half), 0.5 * (mk + mkc)) <= 1e-9);
  }
}

TEST_CASE("dice loss worked examples and range") {
  PlaneD x(1, 4), xh(1, 4);
  x << 1, 1, 0, 0;
  xh << 1, 0, 0, 0;
  CHECK(dice_loss(x, xh, 0.0) == doctest::Approx(1.0 / 3.0));
  CHECK(dice_loss(x, x, 0.0) == doctest::Approx(0.0));
  CHECK(dice_loss(PlaneD(PlaneD::Zero(1, 4)), PlaneD(PlaneD::Zero(1, 4)), 1.0) == 0.0);
  CHECK_THROWS_AS(dice_loss(x, xh, -1.0), contract_error);
  for (int k = 0; k < 50; ++k) {
    std::mt19937_64 rng(6000 + k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PlaneD a(8, 8), b(8, 8);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = u(rng) < 0.5 ? 0.0 : 1.0;
      b.data()[i] = u(rng);
    }
    const double v = dice_loss(a, b, 1.0);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(dice_loss(a, a, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

namespace {

struct CompositeCase {
  HeadPlanes<double> heads;
  PlaneD ct;
  MaskPlane body, bone;
};

CompositeCase random_composite(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> val(-1.0, 3.0), prob(0.0, 1.0);
  CompositeCase c;
  c.ct = PlaneD(h, w);
  c.heads.sct = PlaneD(h, w);
  c.heads.bone = PlaneD(h, w);
  c.heads.mask = PlaneD(h, w);
  c.body = MaskPlane(h, w);
  c.bone = MaskPlane(h, w);
  for (Eigen::Index i = 0; i < c.ct.size(); ++i) {
    c.ct.data()[i] = val(rng);
    c.heads.sct.data()[i] = val(rng);
    c.heads.bone.data()[i] = val(rng);
    c.heads.mask.data()[i] = prob(rng);
    c.body.data()[i] = prob(rng) < 0.7 ? 1 : 0;
    c.bone.data()[i] = c.body.data()[i] && prob(rng) < 0.25 ? 1 : 0;
  }
  return c;
}

}  // namespace

TEST_CASE("composite loss worked examples") {
  // direct weighted sum of components (10, 0.2, 50)
  const LossWeights w;
  CHECK(w.w1 * 10 + w.w2 * 0.2 + w.w3 * 50 == doctest::Approx(75.3));

  CompositeCase c = random_composite(6, 6, 7);
  const LossWeights w0{1.0, 0.0, 0.0};
  const LossBreakdown b =
      composite_loss(c.heads, c.ct, c.body, c.bone, w0, VariantKind::ThreeTask);
  CHECK(b.total == doctest::Approx(b.body_reg).epsilon(1e-12));

  // perfect outputs, smooth=0 -> total 0
  HeadPlanes<double> perfect;
  perfect.sct = c.ct;
  perfect.bone = c.ct;
  perfect.mask = c.bone.cast<double>();
  const LossBreakdown p =
      composite_loss(perfect, c.ct, c.body, c.bone, w, VariantKind::ThreeTask, 0.0);
  CHECK(p.total == doctest::Approx(0.0).epsilon(1e-12));

  // linearity: doubling one weight doubles exactly that contribution
  const LossBreakdown b1 =
      composite_loss(c.heads, c.ct, c.body, c.bone, LossWeights{1, 1.5, 1.3}, VariantKind::ThreeTask);
  const LossBreakdown b2 =
      composite_loss(c.heads, c.ct, c.body, c.bone, LossWeights{1, 3.0, 1.3}, VariantKind::ThreeTask);
  CHECK(rel_err(b2.total - b1.total, 1.5 * b1.bone_class) <= 1e-9);
}

TEST_CASE("composite loss variant table") {
  CompositeCase c = random_composite(6, 6, 8);
  const LossWeights w;
  const auto three = composite_loss(c.heads, c.ct, c.body, c.bone, w, VariantKind::ThreeTask);
  CHECK(three.body_reg > 0);
  CHECK(three.bone_class > 0);
  CHECK(three.bone_reg > 0);
  CHECK(three.total ==
        doctest::Approx(w.w1 * three.body_reg + w.w2 * three.bone_class + w.w3 * three.bone_reg)
            .epsilon(1e-9));

  const auto two = composite_loss(c.heads, c.ct, c.body, c.bone, w, VariantKind::TwoTask);
  CHECK(two.bone_class == 0.0);
  CHECK(two.bone_reg == doctest::Approx(three.bone_reg));

  const auto fl = composite_loss(c.heads, c.ct, c.body, c.bone, w, VariantKind::OneTaskFocused);
  CHECK(fl.bone_class == 0.0);
  CHECK(fl.bone_reg == 0.0);
  CHECK(fl.body_reg == doctest::Approx(double(weighted_mae(c.ct, c.heads.sct, c.body))));

  // global variant is plain MAE over every pixel
  const auto gl = composite_loss(c.heads, c.ct, c.body, c.bone, w, VariantKind::OneTaskGlobal);
  CHECK(gl.body_reg ==
        doctest::Approx(double((c.ct - c.heads.sct).abs().mean())).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  const double step = 1e-3;
  for (VariantKind variant : {VariantKind::ThreeTask, VariantKind::TwoTask,
                              VariantKind::OneTaskFocused, VariantKind::OneTaskGlobal}) {
    for (int k = 0; k < 5; ++k) {
      CompositeCase c = random_composite(6, 6, 9000 + k);
      const LossWeights w{1.0, 1.5, 1.3};
      const HeadPlanes<double> g = loss_gradients(c.heads, c.ct, c.body, c.bone, w, variant);

      auto fd_check = [&](PlaneD& head, const PlaneD& grad, const PlaneD& target) {
        for (Eigen::Index i = 0; i < head.size(); ++i) {
          // skip pixels near the |.| kink
          if (std::fabs(target.data()[i] - head.data()[i]) <= 1e-2) continue;
          const double orig = head.data()[i];
          head.data()[i] = orig + step;
          const double up = composite_loss(c.heads, c.ct, c.body, c.bone, w, variant).total;
          head.data()[i] = orig - step;
          const double dn = composite_loss(c.heads, c.ct, c.body, c.bone, w, variant).total;
          head.data()[i] = orig;
          const double fd = (up - dn) / (2 * step);
          if (std::fabs(fd) < 1e-12 && std::fabs(grad.data()[i]) < 1e-12) continue;
          CHECK(rel_err(fd, grad.data()[i]) <= 1e-4);
        }
      };
      fd_check(c.heads.sct, g.sct, c.ct);
      if (variant_has_bone_head(variant)) fd_check(c.heads.bone, g.bone, c.ct);
      if (variant_has_mask_head(variant)) {
        // dice term is smooth: check every pixel
        for (Eigen::Index i = 0; i < c.heads.mask.size(); ++i) {
          const double orig = c.heads.mask.data()[i];
          c.heads.mask.data()[i] = orig + step;
          const double up = composite_loss(c.heads, c.ct, c.body, c.bone, w, variant).total;
          c.heads.mask.data()[i] = orig - step;
          const double dn = composite_loss(c.heads, c.ct, c.body, c.bone, w, variant).total;
          c.heads.mask.data()[i] = orig;
          CHECK(rel_err((up - dn) / (2 * step), g.mask.data()[i]) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("gradient conventions") {
  CompositeCase c = random_composite(6, 6, 42);
  const LossWeights w;

  // perfect prediction -> body_reg subgradient exactly 0
  HeadPlanes<double> perfect = c.heads;
  perfect.sct = c.ct;
  const auto g0 = loss_gradients(perfect, c.ct, c.body, c.bone, w, VariantKind::OneTaskFocused);
  CHECK((g0.sct == 0.0).all());

  // bone gradient vanishes outside bone_target
  const auto g = loss_gradients(c.heads, c.ct, c.body, c.bone, w, VariantKind::ThreeTask);
  for (Eigen::Index i = 0; i < c.bone.size(); ++i)
    if (!c.bone.data()[i]) CHECK(g.bone.data()[i] == 0.0);
}
