#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sparsefocus/phantom.hpp"
#include "sparsefocus/regions.hpp"
#include "sparsefocus/rng.hpp"
#include "sparsefocus/trainer.hpp"

using namespace sparsefocus;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.blocks_per_level = 2;
  cfg.base_channels = 4;
  cfg.dilation_schedule = {1};
  return cfg;
}

PhantomParams small_params() {
  PhantomParams p;
  p.size = 32;
  return p;
}

Dataset tiny_dataset(int n_train, int n_val, std::uint64_t seed) {
  Dataset ds;
  const PhantomParams params = small_params();
  for (int i = 0; i < n_train; ++i) {
    char id[8];
    std::snprintf(id, sizeof(id), "%04d", i);
    ds.train.push_back({id, generate_phantom(params, derive_seed(seed, "t" + std::to_string(i))).sample});
  }
  for (int i = 0; i < n_val; ++i) {
    char id[8];
    std::snprintf(id, sizeof(id), "%04d", i);
    ds.val.push_back({id, generate_phantom(params, derive_seed(seed, "v" + std::to_string(i))).sample});
  }
  return ds;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("sf_trainer_") + tag);
  fs::remove_all(p);
  return p;
}

AugmentPolicy off_policy() {
  AugmentPolicy p;
  p.noise_sigma = 0;
  p.mirror = false;
  p.rotate_max_deg = 0;
  p.scale_lo = p.scale_hi = 1.0;
  return p;
}

bool samples_equal(const PhantomSample& a, const PhantomSample& b) {
  return (a.mr == b.mr).all() && (a.ct == b.ct).all() && (a.body == b.body).all();
}

}  // namespace

TEST_CASE("nadam matches a 64-bit scalar oracle over three scripted steps") {
  float p = 1.0f;
  float g = 0.0f;
  ParamRef ref{"p", &p, &g, {1}, 1};
  OptimizerState state;
  state.init({ref});
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[3] = {1.0, -0.5, 0.25};

  // independent hand-executed recurrence, float-rounding the stored parameter
  double m = 0, v = 0, pref = 1.0;
  for (int t = 1; t <= 3; ++t) {
    const double gd = grads[t - 1];
    g = float(gd);
    nadam_step({ref}, state, lr);

    m = b1 * m + (1 - b1) * gd;
    v = b2 * v + (1 - b2) * gd * gd;
    const double vhat = v / (1 - std::pow(b2, t));
    const double mbar =
        b1 * m / (1 - std::pow(b1, t + 1)) + (1 - b1) * gd / (1 - std::pow(b1, t));
    pref = double(float(pref - lr * mbar / (std::sqrt(vhat) + eps)));
    CHECK(std::fabs(double(p) - pref) <= 1e-12);
  }
}

TEST_CASE("nadam edge behaviour") {
  float p = 1.0f, g = 0.0f;
  ParamRef ref{"p", &p, &g, {1}, 1};
  OptimizerState state;
  state.init({ref});
  nadam_step({ref}, state, 0.001);
  CHECK(p == 1.0f);  // zero gradient from fresh state

  g = 1.0f;
  nadam_step({ref}, state, 0.001);
  CHECK(p < 1.0f);
  CHECK(p > 1.0f - 0.01f);  // bounded first step

  g = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(nadam_step({ref}, state, 0.001),
                       doctest::Contains("parameter p"), numeric_error);
}

TEST_CASE("variant weight defaults") {
  const LossWeights w3 = make_variant_weights(VariantKind::ThreeTask);
  CHECK(w3.w1 == 1.0);
  CHECK(w3.w2 == 1.5);
  CHECK(w3.w3 == 1.3);
  const LossWeights w2 = make_variant_weights(VariantKind::TwoTask);
  CHECK(w2.w2 == 0.0);
  CHECK(w2.w3 == 1.3);
  CHECK(make_variant_weights(VariantKind::OneTaskFocused).w3 == 0.0);
  CHECK(make_variant_weights(VariantKind::OneTaskGlobal).w2 == 0.0);
}

TEST_CASE("augment: disabled policy is the identity") {
  const PhantomSample s = generate_phantom(small_params(), 9).sample;
  auto rng = make_rng(1, "aug");
  const PhantomSample a = augment(s, off_policy(), rng);
  CHECK(samples_equal(a, s));
}

TEST_CASE("augment: mirror is an exact involution and transforms jointly") {
  const PhantomSample s = generate_phantom(small_params(), 10).sample;
  AugmentPolicy p = off_policy();
  p.mirror = true;
  p.probability = 1.0;
  auto rng1 = make_rng(2, "a");
  const PhantomSample once = augment(s, p, rng1);
  CHECK(!samples_equal(once, s));
  auto rng2 = make_rng(2, "b");
  const PhantomSample twice = augment(once, p, rng2);
  CHECK(samples_equal(twice, s));

  // region partition commutes with the mirror
  const RegionPartition orig = partition_regions(s.ct, s.body);
  const RegionPartition mirr = partition_regions(once.ct, once.body);
  CHECK((mirr.bone == MaskPlane(orig.bone.rowwise().reverse())).all());
  CHECK((mirr.air == MaskPlane(orig.air.rowwise().reverse())).all());
}

TEST_CASE("augment: same stream gives identical output, ct stays clamped") {
  const PhantomSample s = generate_phantom(small_params(), 11).sample;
  AugmentPolicy p;  // defaults: everything on
  auto r1 = make_rng(3, "x");
  auto r2 = make_rng(3, "x");
  const PhantomSample a = augment(s, p, r1);
  const PhantomSample b = augment(s, p, r2);
  CHECK(samples_equal(a, b));
  CHECK((a.ct >= kHuMin).all());
  CHECK((a.ct <= kHuMax).all());
  // geometric transforms keep the mask binary
  CHECK(((a.body == 0) || (a.body == 1)).all());
}

TEST_CASE("train: step count, determinism, selection invariant") {
  const Dataset ds = tiny_dataset(4, 2, 77);
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;

  const fs::path run1 = temp_dir("det1"), run2 = temp_dir("det2");
  const TrainResult r1 = train(ds, cfg, VariantKind::ThreeTask, run1);
  const TrainResult r2 = train(ds, cfg, VariantKind::ThreeTask, run2);

  REQUIRE(r1.history.epochs.size() == 3);
  CHECK(r1.history.epochs[0].steps == 2);  // 4 samples / batch 2

  // bit-identical history and parameters across reruns
  CHECK(slurp(run1 / "history.json") == slurp(run2 / "history.json"));
  CHECK(slurp(r1.selected_checkpoint / "model.f32") ==
        slurp(r2.selected_checkpoint / "model.f32"));

  // the reloaded checkpoint reproduces its recorded selection value
  Model reloaded = load_model(r1.selected_checkpoint);
  reloaded.set_train(false);
  LossBreakdown acc;
  const LossWeights eff = r1.history.epochs[r1.history.selected_epoch].effective_weights;
  for (const auto& ns : ds.train) {
    Tensor in(1, 1, int(ns.s.mr.rows()), int(ns.s.mr.cols()));
    in.set_plane(0, 0, ns.s.mr);
    const NetOutputs out = reloaded.forward(in);
    HeadPlanes<float> heads;
    heads.sct = out.sct.plane(0, 0);
    heads.bone = out.bone.plane(0, 0);
    heads.mask = out.mask.plane(0, 0);
    const PlaneF ct_scaled = ns.s.ct * float(cfg.value_scale);
    const MaskPlane bone = partition_regions(ns.s.ct, ns.s.body).bone;
    const LossBreakdown b =
        composite_loss(heads, ct_scaled, ns.s.body, bone, eff, VariantKind::ThreeTask);
    acc.total += b.total;
  }
  const double re_eval = acc.total / double(ds.train.size());
  CHECK(std::fabs(re_eval - r1.history.selected_value) <=
        1e-5 * std::max(1.0, std::fabs(r1.history.selected_value)));

  fs::remove_all(run1);
  fs::remove_all(run2);
}

TEST_CASE("train: variant table shows up in the history") {
  const Dataset ds = tiny_dataset(4, 2, 78);
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 6;

  const fs::path run = temp_dir("gl");
  const TrainResult r = train(ds, cfg, VariantKind::OneTaskGlobal, run);
  for (const auto& e : r.history.epochs) {
    CHECK(e.train.bone_class == 0.0);
    CHECK(e.train.bone_reg == 0.0);
    CHECK(e.val.bone_class == 0.0);
  }
  const fs::path run3 = temp_dir("3t");
  const TrainResult r3 = train(ds, cfg, VariantKind::ThreeTask, run3);
  for (const auto& e : r3.history.epochs) {
    CHECK(e.train.bone_class > 0.0);
    CHECK(e.train.bone_reg > 0.0);
  }
  fs::remove_all(run);
  fs::remove_all(run3);
}

TEST_CASE("train: linear decay reduces w1 and w3, keeps w2") {
  const Dataset ds = tiny_dataset(2, 1, 79);
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.epochs = 4;
  cfg.batch_size = 2;
  cfg.weight_schedule = WeightSchedule::LinearDecay;

  const fs::path run = temp_dir("decay");
  const TrainResult r = train(ds, cfg, VariantKind::ThreeTask, run);
  for (int e = 0; e < 4; ++e) {
    const double f = 1.0 - double(e) / 4.0;
    CHECK(r.history.epochs[e].effective_weights.w1 == doctest::Approx(1.0 * f));
    CHECK(r.history.epochs[e].effective_weights.w2 == 1.5);
    CHECK(r.history.epochs[e].effective_weights.w3 == doctest::Approx(1.3 * f));
  }
  fs::remove_all(run);
}

TEST_CASE("train: empty split rejected") {
  Dataset ds = tiny_dataset(2, 1, 80);
  TrainConfig cfg;
  cfg.model = tiny_model();
  Dataset no_train{{}, ds.val};
  CHECK_THROWS_AS(train(no_train, cfg, VariantKind::ThreeTask, temp_dir("bad1")),
                  contract_error);
  Dataset no_val{ds.train, {}};
  CHECK_THROWS_AS(train(no_val, cfg, VariantKind::ThreeTask, temp_dir("bad2")),
                  contract_error);
}

TEST_CASE("train: loss decreases on a tiny dataset for every variant") {
  const Dataset ds = tiny_dataset(8, 2, 81);
  for (VariantKind v : {VariantKind::ThreeTask, VariantKind::TwoTask,
                        VariantKind::OneTaskFocused, VariantKind::OneTaskGlobal}) {
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.seed = 9;
    cfg.weights = make_variant_weights(v);
    const fs::path run = temp_dir(variant_name(v).c_str());
    const TrainResult r = train(ds, cfg, v, run);
    const double initial = r.history.epochs.front().train.total;
    const double final_total = r.history.epochs.back().train.total;
    INFO(variant_name(v) << " initial=" << initial << " final=" << final_total);
    CHECK(final_total < 0.5 * initial);
    fs::remove_all(run);
  }
}

TEST_CASE("TrainConfig JSON round-trip") {
  TrainConfig cfg;
  cfg.learning_rate = 0.002;
  cfg.epochs = 12;
  cfg.weight_schedule = WeightSchedule::LinearDecay;
  cfg.selection = Selection::MinValComposite;
  cfg.augment.noise_sigma = 0.07;
  cfg.augment.scale_lo = 0.8;
  cfg.model = tiny_model();
  nlohmann::json j = cfg;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.weight_schedule == cfg.weight_schedule);
  CHECK(back.selection == cfg.selection);
  CHECK(back.augment.noise_sigma == cfg.augment.noise_sigma);
  CHECK(back.augment.scale_lo == cfg.augment.scale_lo);
  CHECK(back.model.base_channels == cfg.model.base_channels);

  nlohmann::json bad = {{"weight_schedule", "exponential"}};
  CHECK_THROWS_AS(bad.get<TrainConfig>(), contract_error);
  nlohmann::json neg = {{"learning_rate", -1.0}};
  CHECK_THROWS_AS(neg.get<TrainConfig>(), contract_error);
}

TEST_CASE("load_split reads sorted sample directories") {
  const fs::path dir = temp_dir("split");
  const PhantomParams params = small_params();
  for (const char* id : {"0002", "0000", "0001"}) {
    write_sample(generate_phantom(params, fnv1a64(id)).sample, dir / id);
  }
  const auto samples = load_split(dir);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].id == "0000");
  CHECK(samples[2].id == "0002");
  CHECK_THROWS_AS(load_split(dir / "missing"), io_error);
  fs::remove_all(dir);
}
