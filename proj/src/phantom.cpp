#include "sparsefocus/phantom.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/parallel.hpp"
#include "sparsefocus/rng.hpp"

namespace sparsefocus {

namespace fs = std::filesystem;
using nlohmann::json;

void PhantomParams::validate() const {
  if (size < 32) throw contract_error("PhantomParams: size must be >= 32");
  if (body_axis_frac_lo > body_axis_frac_hi || skull_thickness_lo > skull_thickness_hi ||
      tissue_hu_lo > tissue_hu_hi || diploe_hu_lo > diploe_hu_hi ||
      sinus_count_lo > sinus_count_hi)
    throw contract_error("PhantomParams: ranges must be ordered");
  if (pathology_prob < 0.0 || pathology_prob > 1.0)
    throw contract_error("PhantomParams: pathology_prob must be in [0,1]");
  if (mr_noise_sigma < 0.0) throw contract_error("PhantomParams: mr_noise_sigma must be >= 0");
}

void to_json(json& j, const PhantomParams& p) {
  j = {{"size", p.size},
       {"body_axis_frac", {p.body_axis_frac_lo, p.body_axis_frac_hi}},
       {"skull_thickness_px", {p.skull_thickness_lo, p.skull_thickness_hi}},
       {"bone_hu", {{"mode", p.bone_hu_mode}, {"sigma", p.bone_hu_sigma},
                    {"clip", {p.bone_hu_clip_lo, p.bone_hu_clip_hi}}}},
       {"diploe", {{"frac", p.diploe_frac}, {"hu", {p.diploe_hu_lo, p.diploe_hu_hi}}}},
       {"tissue_hu", {p.tissue_hu_lo, p.tissue_hu_hi}},
       {"air_hu", p.air_hu},
       {"sinus_count", {p.sinus_count_lo, p.sinus_count_hi}},
       {"septa", p.septa},
       {"septa_hu", {p.septa_hu_lo, p.septa_hu_hi}},
       {"pathology_prob", p.pathology_prob},
       {"pathology_hu", {p.pathology_hu_lo, p.pathology_hu_hi}},
       {"mr_class_means",
        {{"tissue", p.mr_mean_tissue}, {"bone", p.mr_mean_bone}, {"air", p.mr_mean_air}}},
       {"mr_noise_sigma", p.mr_noise_sigma},
       {"bias_amplitude", p.bias_amplitude}};
}

void from_json(const json& j, PhantomParams& p) {
  p = PhantomParams{};
  p.size = j.value("size", p.size);
  if (j.contains("body_axis_frac")) {
    p.body_axis_frac_lo = j["body_axis_frac"].at(0);
    p.body_axis_frac_hi = j["body_axis_frac"].at(1);
  }
  if (j.contains("skull_thickness_px")) {
    p.skull_thickness_lo = j["skull_thickness_px"].at(0);
    p.skull_thickness_hi = j["skull_thickness_px"].at(1);
  }
  if (j.contains("bone_hu")) {
    const auto& b = j["bone_hu"];
    p.bone_hu_mode = b.value("mode", p.bone_hu_mode);
    p.bone_hu_sigma = b.value("sigma", p.bone_hu_sigma);
    if (b.contains("clip")) {
      p.bone_hu_clip_lo = b["clip"].at(0);
      p.bone_hu_clip_hi = b["clip"].at(1);
    }
  }
  if (j.contains("diploe")) {
    p.diploe_frac = j["diploe"].value("frac", p.diploe_frac);
    if (j["diploe"].contains("hu")) {
      p.diploe_hu_lo = j["diploe"]["hu"].at(0);
      p.diploe_hu_hi = j["diploe"]["hu"].at(1);
    }
  }
  if (j.contains("tissue_hu")) {
    p.tissue_hu_lo = j["tissue_hu"].at(0);
    p.tissue_hu_hi = j["tissue_hu"].at(1);
  }
  p.air_hu = j.value("air_hu", p.air_hu);
  if (j.contains("sinus_count")) {
    p.sinus_count_lo = j["sinus_count"].at(0);
    p.sinus_count_hi = j["sinus_count"].at(1);
  }
  p.septa = j.value("septa", p.septa);
  if (j.contains("septa_hu")) {
    p.septa_hu_lo = j["septa_hu"].at(0);
    p.septa_hu_hi = j["septa_hu"].at(1);
  }
  p.pathology_prob = j.value("pathology_prob", p.pathology_prob);
  if (j.contains("pathology_hu")) {
    p.pathology_hu_lo = j["pathology_hu"].at(0);
    p.pathology_hu_hi = j["pathology_hu"].at(1);
  }
  if (j.contains("mr_class_means")) {
    const auto& m = j["mr_class_means"];
    p.mr_mean_tissue = m.value("tissue", p.mr_mean_tissue);
    p.mr_mean_bone = m.value("bone", p.mr_mean_bone);
    p.mr_mean_air = m.value("air", p.mr_mean_air);
  }
  p.mr_noise_sigma = j.value("mr_noise_sigma", p.mr_noise_sigma);
  p.bias_amplitude = j.value("bias_amplitude", p.bias_amplitude);
  p.validate();
}

namespace {

enum class Cls : std::uint8_t { Background, Tissue, Bone, PocketAir };

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double u = (x - cx) / rx, v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

Phantom generate_phantom(const PhantomParams& params, std::uint64_t seed) {
  params.validate();
  const int S = params.size;
  std::mt19937_64 rng(splitmix64(seed ^ 0x70686e746dULL));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // Body ellipse with jittered center.
  Ellipse body;
  body.cx = S * (0.5 + uni(-0.03, 0.03));
  body.cy = S * (0.5 + uni(-0.03, 0.03));
  body.rx = S * uni(params.body_axis_frac_lo, params.body_axis_frac_hi);
  body.ry = S * uni(params.body_axis_frac_lo, params.body_axis_frac_hi);
  // cap the skull draw so small canvases keep a usable interior
  const double skull_cap = std::min(body.rx, body.ry) / 3.0;
  if (params.skull_thickness_lo > skull_cap)
    throw contract_error("generate_phantom: canvas too small for geometry");
  const double skull_t =
      uni(params.skull_thickness_lo, std::min(params.skull_thickness_hi, skull_cap));
  const double skull_mod_phase = uni(0.0, 2.0 * M_PI);

  // Smooth tissue field coefficients.
  const double t_mid = 0.5 * (params.tissue_hu_lo + params.tissue_hu_hi);
  const double t_amp = 0.5 * (params.tissue_hu_hi - params.tissue_hu_lo);
  const double tk1 = uni(1.0, 2.0) * 2.0 * M_PI / S, tp1 = uni(0.0, 2.0 * M_PI);
  const double tk2 = uni(1.0, 2.0) * 2.0 * M_PI / S, tp2 = uni(0.0, 2.0 * M_PI);

  // Air pockets in the anterior (low-row) interior, with thin septa shells.
  const int n_pockets =
      std::uniform_int_distribution<int>(params.sinus_count_lo, params.sinus_count_hi)(rng);
  std::vector<Ellipse> pockets;
  json pockets_json = json::array();
  for (int k = 0; k < n_pockets; ++k) {
    Ellipse p;
    p.rx = uni(2.0, 5.0);
    p.ry = uni(2.0, 5.0);
    p.cx = body.cx + uni(-0.4, 0.4) * body.rx;
    p.cy = body.cy - uni(0.15, 0.55) * body.ry;
    pockets.push_back(p);
    pockets_json.push_back({{"cx", p.cx}, {"cy", p.cy}, {"rx", p.rx}, {"ry", p.ry}});
  }

  // Optional hyperdense blob attached to the inside of the skull.
  const bool has_pathology = uni(0.0, 1.0) < params.pathology_prob;
  Ellipse blob{0, 0, 1, 1};
  double blob_hu = 0.0;
  if (has_pathology) {
    const double theta = uni(0.0, 2.0 * M_PI);
    const double br = uni(3.0, 6.0);
    // place the blob center just inside the skull along direction theta
    const double rad = 1.0 - (skull_t + br + 1.0) / std::min(body.rx, body.ry);
    blob.cx = body.cx + std::cos(theta) * body.rx * rad;
    blob.cy = body.cy + std::sin(theta) * body.ry * rad;
    blob.rx = br;
    blob.ry = br * uni(0.7, 1.3);
    blob_hu = uni(params.pathology_hu_lo, params.pathology_hu_hi);
  }

  PlaneF ct(S, S);
  MaskPlane body_mask(S, S);
  std::vector<Cls> cls(static_cast<std::size_t>(S) * S, Cls::Background);

  std::lognormal_distribution<double> bone_dist(
      std::log(params.bone_hu_mode) + params.bone_hu_sigma * params.bone_hu_sigma,
      params.bone_hu_sigma);

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * S + x;
      const double u = (x - body.cx) / body.rx, v = (y - body.cy) / body.ry;
      const double rho = std::sqrt(u * u + v * v);
      if (rho > 1.0) {
        body_mask(y, x) = 0;
        ct(y, x) = static_cast<float>(params.air_hu);
        continue;
      }
      body_mask(y, x) = 1;
      // Approximate distance to the body boundary in pixels.
      const double theta = std::atan2(v, u);
      const double ct_ = std::cos(theta), st_ = std::sin(theta);
      const double r_theta =
          1.0 / std::sqrt((ct_ / body.rx) * (ct_ / body.rx) + (st_ / body.ry) * (st_ / body.ry));
      const double depth = (1.0 - rho) * r_theta;
      const double t_here = skull_t * (1.0 + 0.25 * std::sin(2.0 * theta + skull_mod_phase));
      double hu;
      Cls c;
      if (depth <= t_here) {
        // skull: dense tables with a lower-density mid layer
        const double f = depth / t_here;
        const double lo = 0.5 - params.diploe_frac / 2.0, hi = 0.5 + params.diploe_frac / 2.0;
        if (f > lo && f < hi)
          hu = uni(params.diploe_hu_lo, params.diploe_hu_hi);
        else
          hu = std::clamp(bone_dist(rng), params.bone_hu_clip_lo, params.bone_hu_clip_hi);
        c = Cls::Bone;
      } else {
        hu = t_mid + t_amp * 0.5 * (std::sin(tk1 * x + tp1) + std::sin(tk2 * y + tp2));
        hu = std::clamp(hu, params.tissue_hu_lo, params.tissue_hu_hi);
        c = Cls::Tissue;
      }
      // pockets and their septa override tissue (never the skull)
      if (c == Cls::Tissue) {
        for (const auto& p : pockets) {
          const double pu = (x - p.cx) / p.rx, pv = (y - p.cy) / p.ry;
          const double prho2 = pu * pu + pv * pv;
          if (prho2 <= 1.0) {
            hu = params.air_hu;
            c = Cls::PocketAir;
            break;
          }
          if (params.septa) {
            const double pu1 = (x - p.cx) / (p.rx + 1.2), pv1 = (y - p.cy) / (p.ry + 1.2);
            if (pu1 * pu1 + pv1 * pv1 <= 1.0) {
              hu = uni(params.septa_hu_lo, params.septa_hu_hi);
              c = Cls::Bone;
              break;
            }
          }
        }
      }
      if (has_pathology && c == Cls::Tissue && blob.contains(x, y)) {
        hu = blob_hu;
        c = Cls::Bone;
      }
      ct(y, x) = static_cast<float>(std::clamp(hu, double(kHuMin), double(kHuMax)));
      cls[idx] = c;
    }
  }

  // MR: class mean + noise, shaded by a second-order bias field, z-scored.
  const double bx = uni(-1.0, 1.0), by = uni(-1.0, 1.0), bxx = uni(-1.0, 1.0),
               byy = uni(-1.0, 1.0), bxy = uni(-1.0, 1.0);
  PlaneF mr(S, S);
  std::normal_distribution<double> noise(0.0, params.mr_noise_sigma);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * S + x;
      double mean;
      switch (cls[idx]) {
        case Cls::Tissue: mean = params.mr_mean_tissue; break;
        case Cls::Bone: mean = params.mr_mean_bone; break;
        default: mean = params.mr_mean_air; break;
      }
      const double xn = 2.0 * x / S - 1.0, yn = 2.0 * y / S - 1.0;
      const double q = (bx * xn + by * yn + bxx * xn * xn + byy * yn * yn + bxy * xn * yn) / 5.0;
      const double bias = 1.0 + params.bias_amplitude * q;
      mr(y, x) = static_cast<float>((mean + noise(rng)) * bias);
    }
  }
  mr = z_score_normalize(mr);

  Phantom out;
  out.sample.mr = std::move(mr);
  out.sample.ct = std::move(ct);
  out.sample.body = std::move(body_mask);
  out.sample.seed = static_cast<std::int64_t>(seed);
  out.geometry = {{"body", {{"cx", body.cx}, {"cy", body.cy}, {"rx", body.rx}, {"ry", body.ry}}},
                  {"skull_thickness", skull_t},
                  {"pockets", pockets_json},
                  {"pathology", has_pathology ? json({{"cx", blob.cx},
                                                      {"cy", blob.cy},
                                                      {"rx", blob.rx},
                                                      {"ry", blob.ry},
                                                      {"hu", blob_hu}})
                                              : json(nullptr)}};
  return out;
}

void generate_dataset(const DatasetCounts& counts, const PhantomParams& params,
                      std::uint64_t master_seed, const fs::path& out_dir, bool overwrite) {
  if (counts.train < 1 || counts.val < 1 || counts.test < 1)
    throw contract_error("generate_dataset: split counts must be >= 1");
  params.validate();
  if (fs::exists(out_dir / "dataset.json") && !overwrite)
    throw io_error("output directory already holds a dataset: " + out_dir.string());
  fs::create_directories(out_dir);

  json manifest;
  manifest["version"] = 1;
  manifest["master_seed"] = master_seed;
  manifest["params"] = params;
  const std::pair<std::string, int> splits[] = {
      {"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
  for (const auto& [name, count] : splits) {
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
    std::vector<std::string> ids(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      seeds[i] = derive_seed(master_seed, name + "/" + std::to_string(i));
      char buf[8];
      std::snprintf(buf, sizeof(buf), "%04d", i);
      ids[i] = buf;
    }
    parallel_for(0, count, default_threads(), [&](int i) {
      const Phantom ph = generate_phantom(params, seeds[i]);
      write_sample(ph.sample, out_dir / name / ids[i]);
    });
    manifest["splits"][name] = {{"count", count}, {"ids", ids}, {"seeds", seeds}};
  }
  std::ofstream out(out_dir / "dataset.json");
  if (!out) throw io_error("cannot write " + (out_dir / "dataset.json").string());
  out << manifest.dump(2) << "\n";
}

}  // namespace sparsefocus
