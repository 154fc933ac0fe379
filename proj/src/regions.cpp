#include "sparsefocus/regions.hpp"

#include <vector>

namespace sparsefocus {

RegionPartition partition_regions(const PlaneF& ct, const MaskPlane& body) {
  require_same_dims(ct, body, "partition_regions");
  const Eigen::Index h = ct.rows(), w = ct.cols();
  RegionPartition p;
  p.body = body;
  p.background = MaskPlane::Zero(h, w);
  p.air = MaskPlane::Zero(h, w);
  p.tissue = MaskPlane::Zero(h, w);
  p.bone = MaskPlane::Zero(h, w);
  p.other = MaskPlane::Zero(h, w);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (!body(r, c)) {
        p.background(r, c) = 1;
        continue;
      }
      const float hu = ct(r, c);
      if (hu <= -400.0f)
        p.air(r, c) = 1;
      else if (hu < -250.0f)
        p.other(r, c) = 1;
      else if (hu < 250.0f)
        p.tissue(r, c) = 1;
      else
        p.bone(r, c) = 1;
    }
  }
  return p;
}

namespace {

// Flood fill over pixels where pred(r,c) is true, 4-connectivity.
template <typename Pred>
void flood(const MaskPlane& seenable, Eigen::Index r0, Eigen::Index c0,
           MaskPlane& visited, Pred pred) {
  const Eigen::Index h = seenable.rows(), w = seenable.cols();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  stack.emplace_back(r0, c0);
  visited(r0, c0) = 1;
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    const Eigen::Index nr[4] = {r - 1, r + 1, r, r};
    const Eigen::Index nc[4] = {c, c, c - 1, c + 1};
    for (int k = 0; k < 4; ++k) {
      if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
      if (visited(nr[k], nc[k])) continue;
      if (!pred(nr[k], nc[k])) continue;
      visited(nr[k], nc[k]) = 1;
      stack.emplace_back(nr[k], nc[k]);
    }
  }
}

}  // namespace

MaskPlane largest_component_4(const MaskPlane& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  MaskPlane visited = MaskPlane::Zero(h, w);
  MaskPlane best = MaskPlane::Zero(h, w);
  long best_count = 0;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (!mask(r, c) || visited(r, c)) continue;
      MaskPlane comp = MaskPlane::Zero(h, w);
      flood(mask, r, c, comp, [&](Eigen::Index rr, Eigen::Index cc) { return mask(rr, cc) != 0; });
      visited = (visited.max(comp)).eval();
      const long count = comp.cast<long>().sum();
      if (count > best_count) {
        best_count = count;
        best = comp;
      }
    }
  }
  return best;
}

MaskPlane fill_holes(const MaskPlane& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  MaskPlane outside = MaskPlane::Zero(h, w);
  auto is_zero = [&](Eigen::Index r, Eigen::Index c) { return mask(r, c) == 0; };
  for (Eigen::Index r = 0; r < h; ++r) {
    if (!outside(r, 0) && is_zero(r, 0)) flood(mask, r, 0, outside, is_zero);
    if (!outside(r, w - 1) && is_zero(r, w - 1)) flood(mask, r, w - 1, outside, is_zero);
  }
  for (Eigen::Index c = 0; c < w; ++c) {
    if (!outside(0, c) && is_zero(0, c)) flood(mask, 0, c, outside, is_zero);
    if (!outside(h - 1, c) && is_zero(h - 1, c)) flood(mask, h - 1, c, outside, is_zero);
  }
  // Anything that is zero but not border-reachable is an interior hole.
  MaskPlane filled = mask;
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c)
      if (!mask(r, c) && !outside(r, c)) filled(r, c) = 1;
  return filled;
}

MaskPlane derive_body_mask(const PlaneF& ct) {
  MaskPlane above = (ct > -400.0f).cast<std::uint8_t>();
  if (above.cast<long>().sum() == 0) return above;  // empty mask, by convention
  return fill_holes(largest_component_4(above));
}

}  // namespace sparsefocus
