#ifndef SPARSEFOCUS_EVAL_HPP
#define SPARSEFOCUS_EVAL_HPP

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsefocus/image.hpp"
#include "sparsefocus/variant.hpp"

namespace sparsefocus {

inline const std::vector<double> kDefaultDiceThresholds = {250, 450, 600, 900, 1200, 1500};

struct CaseMetrics {
  std::string id;
  std::optional<double> mae_body, mae_bone, mae_tissue, mae_air;  // HU; null if region empty
  double dice_body = 0, dice_bone = 0, dice_tissue = 0, dice_air = 0;
  std::vector<double> dice_thresholds;
  std::vector<double> dice_values;
};

struct Stat {
  double mean = 0, std = 0;
  int n = 0;
};

struct ReportSummary {
  Stat mae_body, mae_bone, mae_tissue, mae_air;
  Stat dice_body, dice_bone, dice_tissue, dice_air;
};

struct Report {
  std::string variant;
  std::int64_t seed = 0;
  std::string config_hash;
  std::vector<CaseMetrics> cases;
  ReportSummary summary;
};

// Final sCT: the global head, overwritten by the bone head inside the
// predicted bone region, clamped to the HU range. All planes in HU.
// TwoTask has no mask head; its replacement region is {sct >= 250 HU}.
PlaneF aggregate_sct(const PlaneF& sct, const PlaneF* bone, const PlaneF* mask,
                     VariantKind variant, float mask_threshold = 0.5f);

PlaneF difference_map(const PlaneF& sct, const PlaneF& ct);

// Hard Dice between binary masks; empty-vs-empty is 1.
double hard_dice(const MaskPlane& a, const MaskPlane& b);

// Dice between {ct >= t} and {sct >= t} within the union of the two
// derived body masks, per threshold.
std::vector<double> dice_at_thresholds(const PlaneF& sct, const PlaneF& ct,
                                       const std::vector<double>& thresholds);

// MAE over the reference partition's regions; Dice between independently
// derived partitions of ct and sct.
CaseMetrics evaluate_case(const PlaneF& sct, const PlaneF& ct, const MaskPlane& body_ref,
                          const std::vector<double>& thresholds = kDefaultDiceThresholds);

Report summarize(std::vector<CaseMetrics> cases, std::string variant, std::int64_t seed,
                 std::string config_hash);

enum class ReportFormat { Json, Csv, Markdown };

std::string render_report(const Report& report, ReportFormat format);

// One summary row per variant; columns ordered body, bone, tissue, air.
std::string render_summary_table_markdown(const std::vector<Report>& reports);
std::string render_summary_table_csv(const std::vector<Report>& reports);

nlohmann::json report_to_json(const Report& report);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_EVAL_HPP
