#ifndef SPARSEFOCUS_NET_TENSOR_HPP
#define SPARSEFOCUS_NET_TENSOR_HPP

#include <Eigen/Dense>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/image.hpp"

namespace sparsefocus {

// Dense NCHW float tensor.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }

  float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * c * h * w; }
  const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * c * h * w; }
  float* channel(int i, int ch) { return sample(i) + static_cast<std::size_t>(ch) * h * w; }
  const float* channel(int i, int ch) const {
    return sample(i) + static_cast<std::size_t>(ch) * h * w;
  }

  float& at(int i, int ch, int y, int x) { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }
  float at(int i, int ch, int y, int x) const {
    return channel(i, ch)[static_cast<std::size_t>(y) * w + x];
  }

  // Copy a single-channel plane in/out (for trainer and prediction glue).
  PlaneF plane(int i, int ch) const {
    PlaneF p(h, w);
    std::copy(channel(i, ch), channel(i, ch) + plane_size(), p.data());
    return p;
  }
  void set_plane(int i, int ch, const PlaneF& p) {
    if (p.rows() != h || p.cols() != w) throw contract_error("Tensor::set_plane: dims");
    std::copy(p.data(), p.data() + plane_size(), channel(i, ch));
  }
};

// Channel-concatenate two tensors.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw contract_error("concat_channels: dims");
  Tensor out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.sample(i), a.sample(i) + static_cast<std::size_t>(a.c) * a.plane_size(),
              out.sample(i));
    std::copy(b.sample(i), b.sample(i) + static_cast<std::size_t>(b.c) * b.plane_size(),
              out.sample(i) + static_cast<std::size_t>(a.c) * a.plane_size());
  }
  return out;
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_NET_TENSOR_HPP
