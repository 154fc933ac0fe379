#ifndef SPARSEFOCUS_LOSSES_HPP
#define SPARSEFOCUS_LOSSES_HPP

#include <cmath>

#include "sparsefocus/image.hpp"
#include "sparsefocus/variant.hpp"

namespace sparsefocus {

struct LossWeights {
  double w1 = 1.0;  // body regression
  double w2 = 1.5;  // bone classification
  double w3 = 1.3;  // bone regression
};

struct LossBreakdown {
  double body_reg = 0.0;
  double bone_class = 0.0;
  double bone_reg = 0.0;
  double total = 0.0;
};

// Per-head planes of one sample; absent heads have zero-sized planes.
template <typename Scalar>
struct HeadPlanes {
  Plane<Scalar> sct;
  Plane<Scalar> bone;
  Plane<Scalar> mask;
};

// MAE restricted to a region; empty region contributes 0.
template <typename Scalar>
Scalar regional_mae(const Plane<Scalar>& y, const Plane<Scalar>& yhat, const MaskPlane& region) {
  require_same_dims(y, yhat, "regional_mae");
  require_same_dims(y, region, "regional_mae");
  const long n = region.template cast<long>().sum();
  if (n == 0) return Scalar(0);
  const Scalar sum =
      ((y - yhat).abs() * region.template cast<Scalar>()).sum();
  return sum / Scalar(n);
}

// Two-region MAE with cross-volume weights: the sparse region's error is
// amplified by the complement's relative volume.
template <typename Scalar>
Scalar weighted_mae(const Plane<Scalar>& y, const Plane<Scalar>& yhat, const MaskPlane& region_k) {
  require_same_dims(y, yhat, "weighted_mae");
  require_same_dims(y, region_k, "weighted_mae");
  const MaskPlane region_kc = (region_k == 0).template cast<std::uint8_t>();
  const Scalar n_k = Scalar(region_k.template cast<long>().sum());
  const Scalar n_kc = Scalar(region_kc.template cast<long>().sum());
  const Scalar n = n_k + n_kc;
  return (n_kc / n) * regional_mae(y, yhat, region_k) +
         (n_k / n) * regional_mae(y, yhat, region_kc);
}

// 1 - smoothed Dice between probability maps.
template <typename Scalar>
Scalar dice_loss(const Plane<Scalar>& x, const Plane<Scalar>& xhat, Scalar smooth = Scalar(1)) {
  require_same_dims(x, xhat, "dice_loss");
  if (smooth < Scalar(0)) throw contract_error("dice_loss: smooth must be >= 0");
  const Scalar inter = (x * xhat).sum();
  const Scalar denom = x.square().sum() + xhat.square().sum() + smooth;
  return Scalar(1) - (Scalar(2) * inter + smooth) / denom;
}

// Composite loss over whatever value space the caller provides (the trainer
// passes HU scaled by value_scale). bone_target is the reference bone mask.
template <typename Scalar>
LossBreakdown composite_loss(const HeadPlanes<Scalar>& heads, const Plane<Scalar>& ct,
                             const MaskPlane& body, const MaskPlane& bone_target,
                             const LossWeights& w, VariantKind variant,
                             Scalar dice_smooth = Scalar(1)) {
  require_same_dims(ct, body, "composite_loss");
  require_same_dims(ct, bone_target, "composite_loss");
  require_same_dims(ct, heads.sct, "composite_loss");
  LossBreakdown out;
  if (variant == VariantKind::OneTaskGlobal) {
    const MaskPlane all = MaskPlane::Ones(ct.rows(), ct.cols());
    out.body_reg = double(regional_mae(ct, heads.sct, all));
  } else {
    out.body_reg = double(weighted_mae(ct, heads.sct, body));
  }
  if (variant_has_mask_head(variant)) {
    require_same_dims(ct, heads.mask, "composite_loss");
    out.bone_class =
        double(dice_loss(Plane<Scalar>(bone_target.template cast<Scalar>()), heads.mask, dice_smooth));
  }
  if (variant_has_bone_head(variant)) {
    require_same_dims(ct, heads.bone, "composite_loss");
    out.bone_reg = double(regional_mae(ct, heads.bone, bone_target));
  }
  out.total = w.w1 * out.body_reg + w.w2 * out.bone_class + w.w3 * out.bone_reg;
  return out;
}

namespace detail {

// Subgradient of |y - yhat| w.r.t. yhat; 0 at exact matches.
template <typename Scalar>
Plane<Scalar> sign_residual(const Plane<Scalar>& y, const Plane<Scalar>& yhat) {
  return (yhat > y).template cast<Scalar>() - (yhat < y).template cast<Scalar>();
}

}  // namespace detail

// Analytic gradients of the weighted composite w.r.t. each head plane.
// Absent heads get zero-sized gradient planes.
template <typename Scalar>
HeadPlanes<Scalar> loss_gradients(const HeadPlanes<Scalar>& heads, const Plane<Scalar>& ct,
                                  const MaskPlane& body, const MaskPlane& bone_target,
                                  const LossWeights& w, VariantKind variant,
                                  Scalar dice_smooth = Scalar(1)) {
  require_same_dims(ct, heads.sct, "loss_gradients");
  const Eigen::Index h = ct.rows(), cw = ct.cols();
  HeadPlanes<Scalar> g;

  // sct head: weighted (or global) MAE subgradient.
  const Plane<Scalar> sgn = detail::sign_residual(ct, heads.sct);
  if (variant == VariantKind::OneTaskGlobal) {
    g.sct = Plane<Scalar>(Scalar(w.w1) * sgn / Scalar(h * cw));
  } else {
    const Plane<Scalar> body_s = body.template cast<Scalar>();
    const Scalar n_k = body_s.sum();
    const Scalar n = Scalar(h * cw);
    const Scalar n_kc = n - n_k;
    Plane<Scalar> grad = Plane<Scalar>::Zero(h, cw);
    if (n_k > Scalar(0)) grad += (n_kc / (n * n_k)) * sgn * body_s;
    if (n_kc > Scalar(0)) grad += (n_k / (n * n_kc)) * sgn * (Scalar(1) - body_s);
    g.sct = Plane<Scalar>(Scalar(w.w1) * grad);
  }

  if (variant_has_mask_head(variant)) {
    // d/dxhat of 1 - (2*sum(x*xhat)+s) / (sum(x^2)+sum(xhat^2)+s)
    const Plane<Scalar> x = bone_target.template cast<Scalar>();
    const Scalar inter2 = Scalar(2) * (x * heads.mask).sum() + dice_smooth;
    const Scalar denom = x.square().sum() + heads.mask.square().sum() + dice_smooth;
    g.mask = Plane<Scalar>(Scalar(w.w2) * Scalar(2) / (denom * denom) *
                           (inter2 * heads.mask - denom * x));
  }

  if (variant_has_bone_head(variant)) {
    const Plane<Scalar> bone_s = bone_target.template cast<Scalar>();
    const Scalar n_bone = bone_s.sum();
    if (n_bone > Scalar(0)) {
      g.bone = Plane<Scalar>(Scalar(w.w3) / n_bone *
                             detail::sign_residual(ct, heads.bone) * bone_s);
    } else {
      g.bone = Plane<Scalar>::Zero(h, cw);
    }
  }
  return g;
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_LOSSES_HPP
