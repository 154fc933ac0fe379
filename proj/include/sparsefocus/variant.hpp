#ifndef SPARSEFOCUS_VARIANT_HPP
#define SPARSEFOCUS_VARIANT_HPP

#include <string>

#include "sparsefocus/errors.hpp"

namespace sparsefocus {

// Ablation variants: active heads and loss terms.
//   ThreeTask      heads {sct, bone, mask}, terms {body_reg, bone_class, bone_reg}
//   TwoTask        heads {sct, bone},       terms {body_reg, bone_reg}
//   OneTaskFocused head  {sct},             term  {body_reg = wMAE over body}
//   OneTaskGlobal  head  {sct},             term  {global MAE over the image}
enum class VariantKind { ThreeTask, TwoTask, OneTaskFocused, OneTaskGlobal };

inline bool variant_has_bone_head(VariantKind v) {
  return v == VariantKind::ThreeTask || v == VariantKind::TwoTask;
}

inline bool variant_has_mask_head(VariantKind v) { return v == VariantKind::ThreeTask; }

inline std::string variant_name(VariantKind v) {
  switch (v) {
    case VariantKind::ThreeTask: return "3tn";
    case VariantKind::TwoTask: return "2tn";
    case VariantKind::OneTaskFocused: return "1tn-fl";
    case VariantKind::OneTaskGlobal: return "1tn-gl";
  }
  throw contract_error("variant_name: unknown kind");
}

inline VariantKind variant_from_name(const std::string& name) {
  if (name == "3tn") return VariantKind::ThreeTask;
  if (name == "2tn") return VariantKind::TwoTask;
  if (name == "1tn-fl") return VariantKind::OneTaskFocused;
  if (name == "1tn-gl") return VariantKind::OneTaskGlobal;
  throw contract_error("unknown variant: " + name);
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_VARIANT_HPP
