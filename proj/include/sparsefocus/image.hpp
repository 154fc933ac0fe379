#ifndef SPARSEFOCUS_IMAGE_HPP
#define SPARSEFOCUS_IMAGE_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "sparsefocus/errors.hpp"

namespace sparsefocus {

// Row-major so .data() matches the on-disk row-major plane layout.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using PlaneF = Plane<float>;
using PlaneD = Plane<double>;
using MaskPlane = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr float kHuMin = -1000.0f;
constexpr float kHuMax = 3000.0f;

template <typename A, typename B>
bool same_dims(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

template <typename A, typename B>
void require_same_dims(const A& a, const B& b, const char* what) {
  if (!same_dims(a, b)) throw contract_error(std::string(what) + ": dimension mismatch");
}

template <typename Scalar>
Plane<Scalar> clamp_hu(const Plane<Scalar>& img) {
  return img.min(Scalar(kHuMax)).max(Scalar(kHuMin));
}

// z-score with population std and a floor that keeps constant images at zero.
template <typename Scalar>
Plane<Scalar> z_score_normalize(const Plane<Scalar>& img) {
  const Scalar mean = img.mean();
  const Scalar var = (img - mean).square().mean();
  const Scalar stddev = std::max(std::sqrt(var), Scalar(1e-8));
  return (img - mean) / stddev;
}

// mask = 1 where p >= threshold; ties go to 1.
template <typename Scalar>
MaskPlane binarize(const Plane<Scalar>& p, Scalar threshold) {
  if (!(threshold > Scalar(0) && threshold < Scalar(1)))
    throw contract_error("binarize: threshold must lie in (0,1)");
  return (p >= threshold).template cast<std::uint8_t>();
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_IMAGE_HPP
