#ifndef SPARSEFOCUS_NET_LAYERS_HPP
#define SPARSEFOCUS_NET_LAYERS_HPP

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "sparsefocus/net/tensor.hpp"

namespace sparsefocus {

// Named view into a trainable tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  float* data;
  float* grad;
  std::vector<int> shape;
  std::size_t count;
};

// Named view into a non-trainable buffer (batch-norm running stats).
struct StatRef {
  std::string name;
  float* data;
  std::vector<int> shape;
  std::size_t count;
};

// Dilated 2D convolution, stride 1, zero "same" padding, odd kernel.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int ksize, int dilation);

  void init_he(std::mt19937_64& rng);
  Tensor forward(const Tensor& input, bool cache_input);
  // Returns gradient w.r.t. the input; accumulates weight/bias gradients.
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  std::size_t param_count() const { return weight_.size() + static_cast<std::size_t>(bias_.size()); }

 private:
  int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, dilation_ = 1;
  Eigen::MatrixXf weight_;   // out_ch x (in_ch * k * k)
  Eigen::VectorXf bias_;
  Eigen::MatrixXf dweight_;
  Eigen::VectorXf dbias_;
  Tensor cached_input_;
};

// Per-channel batch normalization over (N, H, W).
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int channels, float eps, float momentum);

  Tensor forward(const Tensor& input, bool train);
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_stats(const std::string& prefix, std::vector<StatRef>& out);
  std::size_t param_count() const { return 2 * static_cast<std::size_t>(channels_); }

 private:
  int channels_ = 0;
  float eps_ = 1e-5f, momentum_ = 0.9f;
  Eigen::VectorXf gamma_, beta_, dgamma_, dbeta_;
  Eigen::VectorXf running_mean_, running_var_;
  // train-mode cache
  Tensor cached_xhat_;
  Eigen::VectorXf cached_invstd_;
};

enum class Activation { Linear, Elu, Relu, Sigmoid };

Tensor activation_forward(Activation act, const Tensor& x);
// grad through the activation given its *output* y.
Tensor activation_backward(Activation act, const Tensor& y, const Tensor& grad_out);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_NET_LAYERS_HPP
