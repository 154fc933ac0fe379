#include "sparsefocus/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sparsefocus/regions.hpp"
#include "sparsefocus/rng.hpp"

namespace sparsefocus {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw contract_error("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw contract_error("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw contract_error("TrainConfig: epochs must be >= 1");
  if (value_scale <= 0) throw contract_error("TrainConfig: value_scale must be > 0");
  if (augment.noise_sigma < 0 || augment.scale_lo <= 0 || augment.scale_lo > augment.scale_hi)
    throw contract_error("TrainConfig: bad augment policy");
  model.validate();
}

void to_json(json& j, const TrainConfig& cfg) {
  j = {{"learning_rate", cfg.learning_rate},
       {"batch_size", cfg.batch_size},
       {"epochs", cfg.epochs},
       {"weights", {{"w1", cfg.weights.w1}, {"w2", cfg.weights.w2}, {"w3", cfg.weights.w3}}},
       {"weight_schedule",
        cfg.weight_schedule == WeightSchedule::Constant ? "constant" : "linear_decay"},
       {"augment",
        {{"noise_sigma", cfg.augment.noise_sigma},
         {"mirror", cfg.augment.mirror},
         {"rotate_max_deg", cfg.augment.rotate_max_deg},
         {"scale_range", {cfg.augment.scale_lo, cfg.augment.scale_hi}},
         {"probability", cfg.augment.probability}}},
       {"seed", cfg.seed},
       {"selection",
        cfg.selection == Selection::MinTrainComposite ? "min_train_composite"
                                                      : "min_val_composite"},
       {"value_scale", cfg.value_scale},
       {"model", cfg.model}};
}

void from_json(const json& j, TrainConfig& cfg) {
  cfg = TrainConfig{};
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  if (j.contains("weights")) {
    cfg.weights.w1 = j["weights"].value("w1", cfg.weights.w1);
    cfg.weights.w2 = j["weights"].value("w2", cfg.weights.w2);
    cfg.weights.w3 = j["weights"].value("w3", cfg.weights.w3);
  }
  if (j.contains("weight_schedule")) {
    const auto s = j["weight_schedule"].get<std::string>();
    if (s == "constant")
      cfg.weight_schedule = WeightSchedule::Constant;
    else if (s == "linear_decay")
      cfg.weight_schedule = WeightSchedule::LinearDecay;
    else
      throw contract_error("unknown weight_schedule: " + s);
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    cfg.augment.noise_sigma = a.value("noise_sigma", cfg.augment.noise_sigma);
    cfg.augment.mirror = a.value("mirror", cfg.augment.mirror);
    cfg.augment.rotate_max_deg = a.value("rotate_max_deg", cfg.augment.rotate_max_deg);
    if (a.contains("scale_range")) {
      cfg.augment.scale_lo = a["scale_range"].at(0);
      cfg.augment.scale_hi = a["scale_range"].at(1);
    }
    cfg.augment.probability = a.value("probability", cfg.augment.probability);
  }
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("selection")) {
    const auto s = j["selection"].get<std::string>();
    if (s == "min_train_composite")
      cfg.selection = Selection::MinTrainComposite;
    else if (s == "min_val_composite")
      cfg.selection = Selection::MinValComposite;
    else
      throw contract_error("unknown selection: " + s);
  }
  cfg.value_scale = j.value("value_scale", cfg.value_scale);
  if (j.contains("model")) cfg.model = j["model"].get<ModelConfig>();
  cfg.validate();
}

namespace {

float bilinear(const PlaneF& img, double y, double x, float fill) {
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
    return img(yy, xx);
  };
  return static_cast<float>((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                            fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)));
}

std::uint8_t nearest(const MaskPlane& img, double y, double x) {
  const int yy = static_cast<int>(std::lround(y)), xx = static_cast<int>(std::lround(x));
  if (yy < 0 || yy >= img.rows() || xx < 0 || xx >= img.cols()) return 0;
  return img(yy, xx);
}

}  // namespace

PhantomSample augment(const PhantomSample& sample, const AugmentPolicy& policy,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool do_mirror = policy.mirror && u01(rng) < policy.probability;
  double angle = 0.0, scale = 1.0;
  if (u01(rng) < policy.probability)
    angle = std::uniform_real_distribution<double>(-policy.rotate_max_deg,
                                                   policy.rotate_max_deg)(rng) * M_PI / 180.0;
  if (u01(rng) < policy.probability)
    scale = std::uniform_real_distribution<double>(policy.scale_lo, policy.scale_hi)(rng);
  const bool do_noise = policy.noise_sigma > 0 && u01(rng) < policy.probability;

  PhantomSample out = sample;
  if (do_mirror) {
    out.mr = out.mr.rowwise().reverse().eval();
    out.ct = out.ct.rowwise().reverse().eval();
    out.body = out.body.rowwise().reverse().eval();
  }
  if (angle != 0.0 || scale != 1.0) {
    const Eigen::Index h = out.mr.rows(), w = out.mr.cols();
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double ca = std::cos(-angle) / scale, sa = std::sin(-angle) / scale;
    // MR background estimate for out-of-frame samples
    const float mr_fill = 0.25f * (out.mr(0, 0) + out.mr(0, w - 1) + out.mr(h - 1, 0) +
                                   out.mr(h - 1, w - 1));
    PlaneF mr2(h, w), ct2(h, w);
    MaskPlane body2(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double sx = cx + ca * dx - sa * dy;
        const double sy = cy + sa * dx + ca * dy;
        mr2(y, x) = bilinear(out.mr, sy, sx, mr_fill);
        ct2(y, x) = bilinear(out.ct, sy, sx, kHuMin);
        body2(y, x) = nearest(out.body, sy, sx);
      }
    }
    out.mr = std::move(mr2);
    out.ct = std::move(ct2);
    out.body = std::move(body2);
  }
  if (do_noise) {
    std::normal_distribution<double> n(0.0, policy.noise_sigma);
    for (Eigen::Index i = 0; i < out.mr.size(); ++i)
      out.mr.data()[i] += static_cast<float>(n(rng));
  }
  out.ct = clamp_hu(out.ct);
  return out;
}

void OptimizerState::init(const std::vector<ParamRef>& params) {
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].count, 0.0);
    v[i].assign(params[i].count, 0.0);
  }
  step = 0;
}

void nadam_step(const std::vector<ParamRef>& params, OptimizerState& state, double lr) {
  if (state.m.size() != params.size())
    throw contract_error("nadam_step: state does not match parameters");
  const long t = ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double b1t = std::pow(b1, static_cast<double>(t));
  const double b1t1 = b1t * b1;
  const double b2t = std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    if (state.m[i].size() != p.count) throw contract_error("nadam_step: shape mismatch");
    for (std::size_t j = 0; j < p.count; ++j) {
      const double g = p.grad[j];
      if (!std::isfinite(g))
        throw numeric_error("non-finite gradient in parameter " + p.name);
      double& m = state.m[i][j];
      double& v = state.v[i][j];
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      const double vhat = v / (1.0 - b2t);
      const double mbar = b1 * m / (1.0 - b1t1) + (1.0 - b1) * g / (1.0 - b1t);
      p.data[j] = static_cast<float>(static_cast<double>(p.data[j]) -
                                     lr * mbar / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

LossWeights make_variant_weights(VariantKind kind) {
  switch (kind) {
    case VariantKind::ThreeTask: return {1.0, 1.5, 1.3};
    case VariantKind::TwoTask: return {1.0, 0.0, 1.3};
    case VariantKind::OneTaskFocused:
    case VariantKind::OneTaskGlobal: return {1.0, 0.0, 0.0};
  }
  throw contract_error("make_variant_weights: unknown kind");
}

std::vector<NamedSample> load_split(const fs::path& dir) {
  std::vector<NamedSample> out;
  if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    if (!fs::exists(entry.path() / "meta.json")) continue;
    out.push_back({entry.path().filename().string(), read_sample(entry.path())});
  }
  std::sort(out.begin(), out.end(),
            [](const NamedSample& a, const NamedSample& b) { return a.id < b.id; });
  return out;
}

namespace {

struct SampleTargets {
  PlaneF ct_scaled;
  MaskPlane body;
  MaskPlane bone;
};

SampleTargets make_targets(const PhantomSample& s, double value_scale) {
  SampleTargets t;
  t.ct_scaled = s.ct * static_cast<float>(value_scale);
  t.body = s.body;
  t.bone = partition_regions(s.ct, s.body).bone;
  return t;
}

HeadPlanes<float> extract_heads(const NetOutputs& out, int i, VariantKind variant) {
  HeadPlanes<float> h;
  h.sct = out.sct.plane(i, 0);
  if (variant_has_bone_head(variant)) h.bone = out.bone.plane(i, 0);
  if (variant_has_mask_head(variant)) h.mask = out.mask.plane(i, 0);
  return h;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.body_reg += b.body_reg;
  acc.bone_class += b.bone_class;
  acc.bone_reg += b.bone_reg;
  acc.total += b.total;
}

LossBreakdown divide(LossBreakdown b, double n) {
  b.body_reg /= n;
  b.bone_class /= n;
  b.bone_reg /= n;
  b.total /= n;
  return b;
}

// Eval-mode composite loss over a split (no augmentation); reproducible
// from a checkpoint, so it doubles as the selection criterion.
LossBreakdown evaluate_split(Model& model, const std::vector<NamedSample>& split,
                             const std::vector<SampleTargets>& targets, const TrainConfig& cfg,
                             const LossWeights& w, VariantKind variant) {
  model.set_train(false);
  LossBreakdown acc;
  const int n = static_cast<int>(split.size());
  const int bs = cfg.batch_size;
  for (int start = 0; start < n; start += bs) {
    const int b = std::min(bs, n - start);
    Tensor input(b, 1, static_cast<int>(split[0].s.mr.rows()),
                 static_cast<int>(split[0].s.mr.cols()));
    for (int i = 0; i < b; ++i) input.set_plane(i, 0, split[start + i].s.mr);
    const NetOutputs out = model.forward(input);
    for (int i = 0; i < b; ++i) {
      const auto& tg = targets[start + i];
      accumulate(acc, composite_loss(extract_heads(out, i, variant), tg.ct_scaled, tg.body,
                                     tg.bone, w, variant));
    }
  }
  return divide(acc, static_cast<double>(n));
}

json breakdown_to_json(const LossBreakdown& b) {
  return {{"body_reg", b.body_reg},
          {"bone_class", b.bone_class},
          {"bone_reg", b.bone_reg},
          {"total", b.total}};
}

}  // namespace

void write_history(const TrainHistory& history, const fs::path& file) {
  json arr = json::array();
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& rec = history.epochs[e];
    arr.push_back({{"epoch", e},
                   {"train", breakdown_to_json(rec.train)},
                   {"val", breakdown_to_json(rec.val)},
                   {"weights",
                    {{"w1", rec.effective_weights.w1},
                     {"w2", rec.effective_weights.w2},
                     {"w3", rec.effective_weights.w3}}},
                   {"steps", rec.steps}});
  }
  std::ofstream out(file);
  if (!out) throw io_error("cannot write " + file.string());
  out << arr.dump(2) << "\n";
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, VariantKind variant,
                  const fs::path& run_dir) {
  cfg.validate();
  if (data.train.empty()) throw contract_error("train: empty training split");
  if (data.val.empty()) throw contract_error("train: empty validation split");
  const int h = static_cast<int>(data.train[0].s.mr.rows());
  const int w = static_cast<int>(data.train[0].s.mr.cols());
  for (const auto& ns : data.train)
    if (ns.s.mr.rows() != h || ns.s.mr.cols() != w)
      throw contract_error("train: samples must share dimensions");

  fs::create_directories(run_dir);
  Model model(cfg.model, variant, cfg.seed);
  OptimizerState opt;
  auto params = model.params();
  opt.init(params);

  std::vector<SampleTargets> train_targets, val_targets;
  for (const auto& ns : data.train) train_targets.push_back(make_targets(ns.s, cfg.value_scale));
  for (const auto& ns : data.val) val_targets.push_back(make_targets(ns.s, cfg.value_scale));

  TrainHistory history;
  double best = std::numeric_limits<double>::infinity();
  fs::path best_ckpt;
  const int n_train = static_cast<int>(data.train.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    LossWeights eff = cfg.weights;
    if (cfg.weight_schedule == WeightSchedule::LinearDecay) {
      const double f = 1.0 - static_cast<double>(epoch) / cfg.epochs;
      eff.w1 *= f;
      eff.w3 *= f;
    }

    std::vector<int> order(n_train);
    for (int i = 0; i < n_train; ++i) order[i] = i;
    auto shuffle_rng = make_rng(cfg.seed, "shuffle/" + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    model.set_train(true);
    int steps = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n_train - start);
      Tensor input(b, 1, h, w);
      std::vector<SampleTargets> targets(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const NamedSample& ns = data.train[order[start + i]];
        auto aug_rng =
            make_rng(cfg.seed, "aug/" + ns.id + "/" + std::to_string(epoch));
        const PhantomSample aug = augment(ns.s, cfg.augment, aug_rng);
        input.set_plane(i, 0, aug.mr);
        targets[i] = make_targets(aug, cfg.value_scale);
      }
      const NetOutputs out = model.forward(input);
      NetOutputs grads;
      grads.sct = Tensor(b, 1, h, w);
      if (variant_has_bone_head(variant)) grads.bone = Tensor(b, 1, h, w);
      if (variant_has_mask_head(variant)) grads.mask = Tensor(b, 1, h, w);
      LossBreakdown batch_acc;
      for (int i = 0; i < b; ++i) {
        const HeadPlanes<float> heads = extract_heads(out, i, variant);
        const auto& tg = targets[i];
        accumulate(batch_acc,
                   composite_loss(heads, tg.ct_scaled, tg.body, tg.bone, eff, variant));
        HeadPlanes<float> g =
            loss_gradients(heads, tg.ct_scaled, tg.body, tg.bone, eff, variant);
        const float inv_b = 1.0f / static_cast<float>(b);
        grads.sct.set_plane(i, 0, PlaneF(g.sct * inv_b));
        if (variant_has_bone_head(variant)) grads.bone.set_plane(i, 0, PlaneF(g.bone * inv_b));
        if (variant_has_mask_head(variant)) grads.mask.set_plane(i, 0, PlaneF(g.mask * inv_b));
      }
      if (!std::isfinite(batch_acc.total)) {
        write_history(history, run_dir / "history.json");
        throw numeric_error("non-finite training loss at epoch " + std::to_string(epoch));
      }
      model.zero_grad();
      model.backward(grads);
      nadam_step(params, opt, cfg.learning_rate);
      ++steps;
    }

    EpochRecord rec;
    rec.steps = steps;
    rec.effective_weights = eff;
    rec.train = evaluate_split(model, data.train, train_targets, cfg, eff, variant);
    rec.val = evaluate_split(model, data.val, val_targets, cfg, eff, variant);
    rec.wall_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    write_history(history, run_dir / "history.json");

    const double criterion =
        cfg.selection == Selection::MinTrainComposite ? rec.train.total : rec.val.total;
    if (!std::isfinite(criterion))
      throw numeric_error("non-finite selection criterion at epoch " + std::to_string(epoch));
    if (criterion < best) {
      best = criterion;
      best_ckpt = run_dir / ("ckpt-" + std::to_string(epoch));
      save_model(model, best_ckpt);
      history.selected_epoch = epoch;
      history.selected_value = best;
      json sel = {{"epoch", epoch}, {"value", best}, {"path", best_ckpt.filename().string()}};
      std::ofstream sf(run_dir / "selected.json");
      sf << sel.dump(2) << "\n";
    }
  }

  TrainResult result;
  result.history = std::move(history);
  result.selected_checkpoint = best_ckpt;
  result.model = load_model(best_ckpt);
  return result;
}

}  // namespace sparsefocus
