#ifndef SPARSEFOCUS_PHANTOM_HPP
#define SPARSEFOCUS_PHANTOM_HPP

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "sparsefocus/sample.hpp"

namespace sparsefocus {

// Procedural head-like phantom: elliptical body, skull annulus with dense
// bone and a lower-density mid layer, smooth interior tissue, anterior air
// pockets with thin bone septa, optional hyperdense skull blob. The MR-like
// channel renders bone and air with overlapping dark intensities.
struct PhantomParams {
  int size = 96;
  double body_axis_frac_lo = 0.30, body_axis_frac_hi = 0.40;  // semi-axis / size
  double skull_thickness_lo = 2.0, skull_thickness_hi = 3.5;  // px
  double bone_hu_mode = 900.0;        // log-normal mode of dense bone draws
  double bone_hu_sigma = 0.35;        // log-space sigma
  double bone_hu_clip_lo = 300.0, bone_hu_clip_hi = 2500.0;
  double diploe_frac = 0.40;          // mid-layer share of skull thickness
  double diploe_hu_lo = 600.0, diploe_hu_hi = 850.0;
  double tissue_hu_lo = 0.0, tissue_hu_hi = 80.0;
  double air_hu = -1000.0;
  int sinus_count_lo = 1, sinus_count_hi = 3;
  bool septa = true;
  double septa_hu_lo = 300.0, septa_hu_hi = 700.0;
  double pathology_prob = 0.3;
  double pathology_hu_lo = 600.0, pathology_hu_hi = 1200.0;
  double mr_mean_tissue = 1.0, mr_mean_bone = 0.15, mr_mean_air = 0.05;
  double mr_noise_sigma = 0.05;
  double bias_amplitude = 0.20;  // second-order multiplicative field

  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomParams& p);
void from_json(const nlohmann::json& j, PhantomParams& p);

struct Phantom {
  PhantomSample sample;
  nlohmann::json geometry;
};

Phantom generate_phantom(const PhantomParams& params, std::uint64_t seed);

struct DatasetCounts {
  int train = 120;
  int val = 20;
  int test = 40;
};

// Writes out_dir/{train,val,test}/<id>/ sample directories plus dataset.json.
void generate_dataset(const DatasetCounts& counts, const PhantomParams& params,
                      std::uint64_t master_seed, const std::filesystem::path& out_dir,
                      bool overwrite = false);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_PHANTOM_HPP
