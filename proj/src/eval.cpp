#include "sparsefocus/eval.hpp"

#include <cmath>
#include <sstream>

#include "sparsefocus/losses.hpp"
#include "sparsefocus/regions.hpp"

namespace sparsefocus {

using nlohmann::json;

PlaneF aggregate_sct(const PlaneF& sct, const PlaneF* bone, const PlaneF* mask,
                     VariantKind variant, float mask_threshold) {
  PlaneF out = sct;
  if (variant == VariantKind::ThreeTask) {
    if (!bone || !mask) throw contract_error("aggregate_sct: ThreeTask needs bone and mask heads");
    require_same_dims(sct, *bone, "aggregate_sct");
    require_same_dims(sct, *mask, "aggregate_sct");
    const MaskPlane sel = binarize(*mask, mask_threshold);
    out = sel.cast<float>() * (*bone) + (1.0f - sel.cast<float>()) * sct;
  } else if (variant == VariantKind::TwoTask) {
    if (!bone) throw contract_error("aggregate_sct: TwoTask needs the bone head");
    require_same_dims(sct, *bone, "aggregate_sct");
    const MaskPlane sel = (sct >= 250.0f).cast<std::uint8_t>();
    out = sel.cast<float>() * (*bone) + (1.0f - sel.cast<float>()) * sct;
  }
  return clamp_hu(out);
}

PlaneF difference_map(const PlaneF& sct, const PlaneF& ct) {
  require_same_dims(sct, ct, "difference_map");
  return sct - ct;
}

double hard_dice(const MaskPlane& a, const MaskPlane& b) {
  require_same_dims(a, b, "hard_dice");
  const long na = a.cast<long>().sum(), nb = b.cast<long>().sum();
  if (na + nb == 0) return 1.0;
  const long inter = (a.cast<long>() * b.cast<long>()).sum();
  return 2.0 * double(inter) / double(na + nb);
}

std::vector<double> dice_at_thresholds(const PlaneF& sct, const PlaneF& ct,
                                       const std::vector<double>& thresholds) {
  require_same_dims(sct, ct, "dice_at_thresholds");
  if (thresholds.empty()) throw contract_error("dice_at_thresholds: empty threshold list");
  const MaskPlane both = derive_body_mask(ct).max(derive_body_mask(sct)).eval();
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const MaskPlane a = ((ct >= float(t)).cast<std::uint8_t>() * both).eval();
    const MaskPlane b = ((sct >= float(t)).cast<std::uint8_t>() * both).eval();
    out.push_back(hard_dice(a, b));
  }
  return out;
}

namespace {

std::optional<double> region_mae_or_null(const PlaneF& sct, const PlaneF& ct,
                                         const MaskPlane& region) {
  if (region.cast<long>().sum() == 0) return std::nullopt;
  return double(regional_mae<float>(ct, sct, region));
}

Stat stat_of(const std::vector<double>& values) {
  Stat s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double sq = 0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

}  // namespace

CaseMetrics evaluate_case(const PlaneF& sct, const PlaneF& ct, const MaskPlane& body_ref,
                          const std::vector<double>& thresholds) {
  require_same_dims(sct, ct, "evaluate_case");
  require_same_dims(sct, body_ref, "evaluate_case");
  CaseMetrics m;
  const RegionPartition ref = partition_regions(ct, body_ref);
  m.mae_body = region_mae_or_null(sct, ct, ref.body);
  m.mae_bone = region_mae_or_null(sct, ct, ref.bone);
  m.mae_tissue = region_mae_or_null(sct, ct, ref.tissue);
  m.mae_air = region_mae_or_null(sct, ct, ref.air);

  const MaskPlane db_ct = derive_body_mask(ct);
  const MaskPlane db_sct = derive_body_mask(sct);
  const RegionPartition pc = partition_regions(ct, db_ct);
  const RegionPartition ps = partition_regions(sct, db_sct);
  m.dice_body = hard_dice(db_ct, db_sct);
  m.dice_bone = hard_dice(pc.bone, ps.bone);
  m.dice_tissue = hard_dice(pc.tissue, ps.tissue);
  m.dice_air = hard_dice(pc.air, ps.air);

  m.dice_thresholds = thresholds;
  m.dice_values = dice_at_thresholds(sct, ct, thresholds);
  return m;
}

Report summarize(std::vector<CaseMetrics> cases, std::string variant, std::int64_t seed,
                 std::string config_hash) {
  if (cases.empty()) throw contract_error("summarize: no cases");
  Report r;
  r.variant = std::move(variant);
  r.seed = seed;
  r.config_hash = std::move(config_hash);
  r.cases = std::move(cases);

  auto collect_mae = [&](auto field) {
    std::vector<double> vals;
    for (const auto& c : r.cases)
      if (c.*field) vals.push_back(*(c.*field));
    return stat_of(vals);
  };
  auto collect_dice = [&](auto field) {
    std::vector<double> vals;
    for (const auto& c : r.cases) vals.push_back(c.*field);
    return stat_of(vals);
  };
  r.summary.mae_body = collect_mae(&CaseMetrics::mae_body);
  r.summary.mae_bone = collect_mae(&CaseMetrics::mae_bone);
  r.summary.mae_tissue = collect_mae(&CaseMetrics::mae_tissue);
  r.summary.mae_air = collect_mae(&CaseMetrics::mae_air);
  r.summary.dice_body = collect_dice(&CaseMetrics::dice_body);
  r.summary.dice_bone = collect_dice(&CaseMetrics::dice_bone);
  r.summary.dice_tissue = collect_dice(&CaseMetrics::dice_tissue);
  r.summary.dice_air = collect_dice(&CaseMetrics::dice_air);
  return r;
}

namespace {

json opt_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stat_to_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

}  // namespace

json report_to_json(const Report& report) {
  json j;
  j["metadata"] = {{"variant", report.variant},
                   {"seed", report.seed},
                   {"config_hash", report.config_hash}};
  j["cases"] = json::array();
  for (const auto& c : report.cases) {
    j["cases"].push_back(
        {{"id", c.id},
         {"mae",
          {{"body", opt_to_json(c.mae_body)},
           {"bone", opt_to_json(c.mae_bone)},
           {"tissue", opt_to_json(c.mae_tissue)},
           {"air", opt_to_json(c.mae_air)}}},
         {"dice",
          {{"body", c.dice_body},
           {"bone", c.dice_bone},
           {"tissue", c.dice_tissue},
           {"air", c.dice_air}}},
         {"dice_curve", {{"thresholds", c.dice_thresholds}, {"values", c.dice_values}}}});
  }
  j["summary"] = {{"mae",
                   {{"body", stat_to_json(report.summary.mae_body)},
                    {"bone", stat_to_json(report.summary.mae_bone)},
                    {"tissue", stat_to_json(report.summary.mae_tissue)},
                    {"air", stat_to_json(report.summary.mae_air)}}},
                  {"dice",
                   {{"body", stat_to_json(report.summary.dice_body)},
                    {"bone", stat_to_json(report.summary.dice_bone)},
                    {"tissue", stat_to_json(report.summary.dice_tissue)},
                    {"air", stat_to_json(report.summary.dice_air)}}}};
  return j;
}

namespace {

constexpr const char* kCsvHeader =
    "variant,mae_body_mean,mae_body_std,mae_bone_mean,mae_bone_std,"
    "mae_tissue_mean,mae_tissue_std,mae_air_mean,mae_air_std,"
    "dice_body_mean,dice_body_std,dice_bone_mean,dice_bone_std,"
    "dice_tissue_mean,dice_tissue_std,dice_air_mean,dice_air_std";

void csv_row(std::ostringstream& out, const Report& r) {
  const Stat* stats[] = {&r.summary.mae_body,  &r.summary.mae_bone,  &r.summary.mae_tissue,
                         &r.summary.mae_air,   &r.summary.dice_body, &r.summary.dice_bone,
                         &r.summary.dice_tissue, &r.summary.dice_air};
  out << r.variant;
  for (const Stat* s : stats) out << "," << s->mean << "," << s->std;
  out << "\n";
}

void markdown_rows(std::ostringstream& out, const std::vector<Report>& reports) {
  out << "| Variant | MAE body | MAE bone | MAE tissue | MAE air "
         "| Dice body | Dice bone | Dice tissue | Dice air |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const Stat* stats[] = {&r.summary.mae_body,  &r.summary.mae_bone,  &r.summary.mae_tissue,
                           &r.summary.mae_air,   &r.summary.dice_body, &r.summary.dice_bone,
                           &r.summary.dice_tissue, &r.summary.dice_air};
    out << "| " << r.variant;
    char buf[64];
    for (const Stat* s : stats) {
      std::snprintf(buf, sizeof(buf), " | %.3f ± %.3f", s->mean, s->std);
      out << buf;
    }
    out << " |\n";
  }
}

}  // namespace

std::string render_summary_table_csv(const std::vector<Report>& reports) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& r : reports) csv_row(out, r);
  return out.str();
}

std::string render_summary_table_markdown(const std::vector<Report>& reports) {
  std::ostringstream out;
  markdown_rows(out, reports);
  return out.str();
}

std::string render_report(const Report& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json:
      return report_to_json(report).dump(2) + "\n";
    case ReportFormat::Csv:
      return render_summary_table_csv({report});
    case ReportFormat::Markdown:
      return render_summary_table_markdown({report});
  }
  throw contract_error("render_report: unknown format");
}

}  // namespace sparsefocus
