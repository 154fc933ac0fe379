// sparsefocus: phantom generation, training, prediction, evaluation, ablation.
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparsefocus/eval.hpp"
#include "sparsefocus/phantom.hpp"
#include "sparsefocus/regions.hpp"
#include "sparsefocus/rng.hpp"
#include "sparsefocus/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparsefocus;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string hash_json(const json& j) {
  const std::string s = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

std::string timestamp_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Written before any heavy work; carries wall-clock time, so determinism
// checks compare run directories with manifest.json excluded.
void write_manifest(const fs::path& run_dir, const std::vector<std::string>& argv,
                    std::uint64_t seed, const std::string& config_hash,
                    const json& artifacts) {
  fs::create_directories(run_dir);
  json m = {{"tool", "sparsefocus"}, {"version", kVersion},
            {"command", argv},       {"created", timestamp_now()},
            {"seed", seed},          {"config_hash", config_hash},
            {"artifacts", artifacts}};
  std::ofstream out(run_dir / "manifest.json");
  if (!out) throw io_error("cannot write " + (run_dir / "manifest.json").string());
  out << m.dump(2) << "\n";
}

json load_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw io_error("cannot read " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw contract_error("invalid JSON in " + file.string() + ": " + e.what());
  }
  return j;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw io_error("cannot write " + file.string());
  out << text;
}

// --- phantom -------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  int train = 120, val = 20, test = 40, size = 0;
  std::uint64_t seed = 0;
  std::string params_file;
  bool overwrite = false;
};

int cmd_phantom(const PhantomArgs& a) {
  PhantomParams params;
  if (!a.params_file.empty()) params = load_json_file(a.params_file).get<PhantomParams>();
  if (a.size > 0) params.size = a.size;
  generate_dataset({a.train, a.val, a.test}, params, a.seed, a.out, a.overwrite);
  std::cout << "dataset written to " << a.out << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data, out, variant;
  std::string config_file;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
};

TrainConfig make_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config_file.empty()) cfg = load_json_file(a.config_file).get<TrainConfig>();
  if (a.seed_set) cfg.seed = a.seed;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  cfg.validate();
  return cfg;
}

int run_train(const TrainConfig& cfg, VariantKind variant, const fs::path& data,
              const fs::path& run_dir, const std::vector<std::string>& argv) {
  Dataset ds;
  ds.train = load_split(data / "train");
  ds.val = load_split(data / "val");
  json cfg_json = cfg;
  cfg_json["variant"] = variant_name(variant);
  const std::string config_hash = hash_json(cfg_json);
  write_manifest(run_dir, argv, cfg.seed, config_hash,
                 {{"config", "config.json"},
                  {"history", "history.json"},
                  {"selected", "selected.json"}});
  write_text(run_dir / "config.json", cfg_json.dump(2) + "\n");
  const TrainResult result = train(ds, cfg, variant, run_dir);
  std::cout << "selected " << result.selected_checkpoint.filename().string()
            << " (criterion " << result.history.selected_value << ")\n";
  return 0;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  return run_train(make_train_config(a), variant_from_name(a.variant), a.data, a.out, argv);
}

// --- predict -------------------------------------------------------------

struct Predicted {
  PlaneF sct;                          // aggregated, HU
  std::optional<PlaneF> bone, mask;    // bone in HU, mask in [0,1]
};

Predicted predict_sample(Model& model, const PlaneF& mr, double value_scale,
                         float mask_threshold) {
  model.set_train(false);
  Tensor input(1, 1, static_cast<int>(mr.rows()), static_cast<int>(mr.cols()));
  input.set_plane(0, 0, mr);
  const NetOutputs out = model.forward(input);
  const float inv = static_cast<float>(1.0 / value_scale);
  Predicted p;
  const PlaneF sct_hu = out.sct.plane(0, 0) * inv;
  if (variant_has_bone_head(model.variant())) p.bone = PlaneF(out.bone.plane(0, 0) * inv);
  if (variant_has_mask_head(model.variant())) p.mask = out.mask.plane(0, 0);
  p.sct = aggregate_sct(sct_hu, p.bone ? &*p.bone : nullptr, p.mask ? &*p.mask : nullptr,
                        model.variant(), mask_threshold);
  return p;
}

// Accepts either a checkpoint directory or a run directory with selected.json.
struct LoadedModel {
  Model model;
  double value_scale = 1.0 / 1000.0;
};

LoadedModel resolve_model(const fs::path& path) {
  LoadedModel lm;
  fs::path ckpt = path;
  if (!fs::exists(path / "model.json")) {
    if (!fs::exists(path / "selected.json"))
      throw io_error("no model.json or selected.json under " + path.string());
    const json sel = load_json_file(path / "selected.json");
    ckpt = path / sel.at("path").get<std::string>();
  }
  if (fs::exists(path / "config.json")) {
    const json cfg = load_json_file(path / "config.json");
    lm.value_scale = cfg.value("value_scale", lm.value_scale);
  }
  lm.model = load_model(ckpt);
  return lm;
}

struct PredictArgs {
  std::string model, input, out;
  float mask_threshold = 0.5f;
  std::string expect_variant;
};

int cmd_predict(const PredictArgs& a) {
  LoadedModel lm = resolve_model(a.model);
  if (!a.expect_variant.empty() &&
      variant_from_name(a.expect_variant) != lm.model.variant())
    throw contract_error("model variant is " + std::string(variant_name(lm.model.variant())) +
                         ", expected " + a.expect_variant);
  const PhantomSample sample = read_sample(a.input);
  const Predicted p = predict_sample(lm.model, sample.mr, lm.value_scale, a.mask_threshold);
  fs::create_directories(a.out);
  write_plane_f32(p.sct, fs::path(a.out) / "sct.f32");
  if (p.bone) write_plane_f32(*p.bone, fs::path(a.out) / "bone.f32");
  if (p.mask) write_plane_f32(*p.mask, fs::path(a.out) / "mask.f32");
  return 0;
}

// --- eval ----------------------------------------------------------------

std::vector<std::string> sample_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Evaluates pred/<id>/sct.f32 against ref/<id>; writes diff.f32 next to each
// prediction. Throws on unpaired ids.
std::vector<CaseMetrics> evaluate_dir(const fs::path& pred, const fs::path& ref,
                                      const std::vector<double>& thresholds) {
  const std::vector<std::string> ids = sample_ids(ref);
  std::vector<std::string> unpaired;
  for (const std::string& id : ids)
    if (!fs::exists(pred / id / "sct.f32")) unpaired.push_back(id);
  if (fs::is_directory(pred))
    for (const auto& e : fs::directory_iterator(pred))
      if (e.is_directory() && fs::exists(e.path() / "sct.f32") &&
          !fs::exists(ref / e.path().filename() / "meta.json"))
        unpaired.push_back(e.path().filename().string());
  if (!unpaired.empty()) {
    std::string list;
    for (const auto& id : unpaired) list += " " + id;
    throw contract_error("unpaired case ids:" + list);
  }
  std::vector<CaseMetrics> cases;
  for (const std::string& id : ids) {
    const PhantomSample s = read_sample(ref / id);
    const PlaneF sct = read_plane_f32(pred / id / "sct.f32", s.ct.rows(), s.ct.cols());
    write_plane_f32(difference_map(sct, s.ct), pred / id / "diff.f32");
    CaseMetrics m = evaluate_case(sct, s.ct, s.body, thresholds);
    m.id = id;
    cases.push_back(std::move(m));
  }
  return cases;
}

struct EvalArgs {
  std::string pred, ref, out;
  std::vector<double> thresholds = kDefaultDiceThresholds;
  std::string variant = "unknown";
  std::int64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.thresholds.empty()) throw contract_error("--thresholds must be non-empty");
  auto cases = evaluate_dir(a.pred, a.ref, a.thresholds);
  const Report report = summarize(std::move(cases), a.variant, a.seed,
                                  hash_json(json{{"thresholds", a.thresholds}}));
  write_text(a.out, render_report(report, ReportFormat::Json));
  std::cout << "report written to " << a.out << "\n";
  return 0;
}

// --- ablate --------------------------------------------------------------

struct AblateArgs {
  std::string data, out;
  std::vector<std::string> variants = {"3tn", "2tn", "1tn-fl", "1tn-gl"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string config_file;
  int epochs = 0;
};

Stat stat_over(const std::vector<double>& v) {
  Stat s;
  s.n = static_cast<int>(v.size());
  if (s.n == 0) return s;
  for (double x : v) s.mean += x;
  s.mean /= s.n;
  if (s.n > 1) {
    double sq = 0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

// Mean over seeds of per-seed summary means; std across seeds.
Report combine_over_seeds(const std::string& variant, const std::vector<Report>& runs) {
  Report out;
  out.variant = variant;
  auto combine = [&](Stat ReportSummary::* field) {
    std::vector<double> means;
    for (const auto& r : runs)
      if ((r.summary.*field).n > 0) means.push_back((r.summary.*field).mean);
    return stat_over(means);
  };
  out.summary.mae_body = combine(&ReportSummary::mae_body);
  out.summary.mae_bone = combine(&ReportSummary::mae_bone);
  out.summary.mae_tissue = combine(&ReportSummary::mae_tissue);
  out.summary.mae_air = combine(&ReportSummary::mae_air);
  out.summary.dice_body = combine(&ReportSummary::dice_body);
  out.summary.dice_bone = combine(&ReportSummary::dice_bone);
  out.summary.dice_tissue = combine(&ReportSummary::dice_tissue);
  out.summary.dice_air = combine(&ReportSummary::dice_air);
  return out;
}

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& argv) {
  TrainArgs base;
  base.config_file = a.config_file;
  base.epochs = a.epochs;
  TrainConfig cfg0 = make_train_config(base);
  const fs::path out_dir = a.out;
  write_manifest(out_dir, argv, 0, hash_json(json(cfg0)),
                 {{"report", "report.json"}, {"table", "report.md"}});

  const std::vector<std::string> test_ids = sample_ids(fs::path(a.data) / "test");
  std::map<std::string, std::vector<Report>> per_variant;
  json failures = json::array();

  for (const std::string& vname : a.variants) {
    const VariantKind variant = variant_from_name(vname);
    for (std::uint64_t seed : a.seeds) {
      const fs::path run_dir = out_dir / (vname + "-s" + std::to_string(seed));
      try {
        TrainConfig cfg = cfg0;
        cfg.seed = seed;
        run_train(cfg, variant, a.data, run_dir, argv);
        LoadedModel lm = resolve_model(run_dir);
        const fs::path pred_dir = run_dir / "pred";
        for (const std::string& id : test_ids) {
          const PhantomSample s = read_sample(fs::path(a.data) / "test" / id);
          const Predicted p = predict_sample(lm.model, s.mr, lm.value_scale, 0.5f);
          fs::create_directories(pred_dir / id);
          write_plane_f32(p.sct, pred_dir / id / "sct.f32");
        }
        auto cases = evaluate_dir(pred_dir, fs::path(a.data) / "test", kDefaultDiceThresholds);
        Report r = summarize(std::move(cases), vname, static_cast<std::int64_t>(seed),
                             hash_json(json(cfg)));
        write_text(run_dir / "report.json", render_report(r, ReportFormat::Json));
        per_variant[vname].push_back(std::move(r));
      } catch (const std::exception& e) {
        failures.push_back({{"variant", vname},
                            {"seed", seed},
                            {"error", e.what()}});
        std::cerr << "run " << vname << "/seed " << seed << " failed: " << e.what() << "\n";
      }
    }
  }

  std::vector<Report> combined;
  json combined_json;
  combined_json["failures"] = failures;
  combined_json["variants"] = json::object();
  for (const std::string& vname : a.variants) {
    auto it = per_variant.find(vname);
    if (it == per_variant.end() || it->second.empty()) continue;
    Report c = combine_over_seeds(vname, it->second);
    combined_json["variants"][vname] = report_to_json(c)["summary"];
    json seeds_json = json::array();
    for (const auto& r : it->second) seeds_json.push_back(report_to_json(r)["summary"]);
    combined_json["variants"][vname]["per_seed"] = seeds_json;
    combined.push_back(std::move(c));
  }
  write_text(out_dir / "report.json", combined_json.dump(2) + "\n");
  write_text(out_dir / "report.md", render_summary_table_markdown(combined));
  write_text(out_dir / "report.csv", render_summary_table_csv(combined));
  if (!failures.empty()) {
    std::cerr << failures.size() << " run(s) failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_args(argv, argv + argc);
  CLI::App app{"RoI-focused multi-task MR-to-sCT toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  PhantomArgs pa;
  auto* sp = app.add_subcommand("phantom", "generate a paired phantom dataset");
  sp->add_option("--out", pa.out, "output dataset directory")->required();
  sp->add_option("--train", pa.train, "training samples");
  sp->add_option("--val", pa.val, "validation samples");
  sp->add_option("--test", pa.test, "test samples");
  sp->add_option("--size", pa.size, "image side length");
  sp->add_option("--seed", pa.seed, "master seed");
  sp->add_option("--params", pa.params_file, "PhantomParams JSON file");
  sp->add_flag("--overwrite", pa.overwrite, "replace an existing dataset");

  TrainArgs ta;
  auto* st = app.add_subcommand("train", "train one variant");
  st->add_option("--data", ta.data, "dataset directory")->required();
  st->add_option("--out", ta.out, "run directory")->required();
  st->add_option("--variant", ta.variant, "3tn|2tn|1tn-fl|1tn-gl")->required();
  st->add_option("--config", ta.config_file, "TrainConfig JSON file");
  auto* seed_opt = st->add_option("--seed", ta.seed, "training seed");
  st->add_option("--epochs", ta.epochs, "epoch count override");

  PredictArgs pra;
  auto* spr = app.add_subcommand("predict", "run a trained model on one sample");
  spr->add_option("--model", pra.model, "run or checkpoint directory")->required();
  spr->add_option("--input", pra.input, "sample directory")->required();
  spr->add_option("--out", pra.out, "output directory")->required();
  spr->add_option("--mask-threshold", pra.mask_threshold, "mask binarization threshold");
  spr->add_option("--expect-variant", pra.expect_variant, "fail unless the model matches");

  EvalArgs ea;
  auto* se = app.add_subcommand("eval", "score predictions against references");
  se->add_option("--pred", ea.pred, "predictions directory")->required();
  se->add_option("--ref", ea.ref, "reference dataset split directory")->required();
  se->add_option("--out", ea.out, "report.json path")->required();
  se->add_option("--thresholds", ea.thresholds, "dice curve thresholds (HU)")->delimiter(',');
  se->add_option("--variant", ea.variant, "variant label for the report");
  se->add_option("--seed", ea.seed, "seed label for the report");

  AblateArgs aa;
  auto* sa = app.add_subcommand("ablate", "train and compare all variants");
  sa->add_option("--data", aa.data, "dataset directory")->required();
  sa->add_option("--out", aa.out, "sweep output directory")->required();
  sa->add_option("--variants", aa.variants, "comma-separated variant list")->delimiter(',');
  sa->add_option("--seeds", aa.seeds, "comma-separated seed list")->delimiter(',');
  sa->add_option("--config", aa.config_file, "TrainConfig JSON file");
  sa->add_option("--epochs", aa.epochs, "epoch count override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (sp->parsed()) return cmd_phantom(pa);
    if (st->parsed()) {
      ta.seed_set = seed_opt->count() > 0;
      return cmd_train(ta, raw_args);
    }
    if (spr->parsed()) return cmd_predict(pra);
    if (se->parsed()) return cmd_eval(ea);
    if (sa->parsed()) return cmd_ablate(aa, raw_args);
  } catch (const contract_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
