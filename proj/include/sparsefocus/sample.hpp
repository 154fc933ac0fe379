#ifndef SPARSEFOCUS_SAMPLE_HPP
#define SPARSEFOCUS_SAMPLE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>

#include "sparsefocus/image.hpp"

namespace sparsefocus {

// One aligned (MR, CT, body) pair plus optional prediction planes.
// Directory layout: meta.json + headerless little-endian row-major planes
// mr.f32, ct.f32, body.u8 (optional sct.f32, bone.f32, mask.f32).
struct PhantomSample {
  PlaneF mr;
  PlaneF ct;
  MaskPlane body;
  std::int64_t seed = 0;
  std::optional<PlaneF> sct;
  std::optional<PlaneF> bone;
  std::optional<PlaneF> mask;
};

void write_sample(const PhantomSample& sample, const std::filesystem::path& dir);
PhantomSample read_sample(const std::filesystem::path& dir);

// Raw plane helpers shared with prediction and report output.
void write_plane_f32(const PlaneF& plane, const std::filesystem::path& file);
PlaneF read_plane_f32(const std::filesystem::path& file, Eigen::Index h, Eigen::Index w);
void write_plane_u8(const MaskPlane& plane, const std::filesystem::path& file);
MaskPlane read_plane_u8(const std::filesystem::path& file, Eigen::Index h, Eigen::Index w);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_SAMPLE_HPP
