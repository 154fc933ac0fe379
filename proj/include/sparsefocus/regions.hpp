#ifndef SPARSEFOCUS_REGIONS_HPP
#define SPARSEFOCUS_REGIONS_HPP

#include "sparsefocus/image.hpp"

namespace sparsefocus {

// Disjoint HU classes inside a body mask. background complements body;
// air/tissue/bone/other tile the body exactly.
struct RegionPartition {
  MaskPlane body;
  MaskPlane background;
  MaskPlane air;
  MaskPlane tissue;
  MaskPlane bone;
  MaskPlane other;
};

// HU class thresholds. Boundary ownership: 250 -> bone, -250 -> tissue,
// -400 -> air; (-400,-250) is the unnamed "other" class.
RegionPartition partition_regions(const PlaneF& ct, const MaskPlane& body);

// Threshold HU > -400, keep the largest 4-connected component, then fill
// interior holes (zero pixels unreachable from the border).
MaskPlane derive_body_mask(const PlaneF& ct);

// Largest 4-connected component of a binary mask (all-zero in -> all-zero out).
MaskPlane largest_component_4(const MaskPlane& mask);

// Set zero pixels that cannot be reached from the image border through
// zero pixels (4-connectivity).
MaskPlane fill_holes(const MaskPlane& mask);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_REGIONS_HPP
