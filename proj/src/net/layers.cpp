#include "sparsefocus/net/layers.hpp"

#include <cmath>

#include "sparsefocus/parallel.hpp"

namespace sparsefocus {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Unfold one sample (C,H,W) into (C*k*k) x (H*W); zero padding, stride 1.
void im2col(const float* x, int c, int h, int w, int k, int d, RowMat& col) {
  const int r = (k - 1) / 2;
  col.setZero();
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = x + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      const int dy = (ki - r) * d;
      for (int kj = 0; kj < k; ++kj) {
        const int dx = (kj - r) * d;
        float* row = col.data() + static_cast<std::size_t>((ch * k + ki) * k + kj) * h * w;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        if (x1 <= x0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          std::copy(plane + static_cast<std::size_t>(sy) * w + x0 + dx,
                    plane + static_cast<std::size_t>(sy) * w + x1 + dx,
                    row + static_cast<std::size_t>(y) * w + x0);
        }
      }
    }
  }
}

// Fold (C*k*k) x (H*W) gradients back onto one sample, accumulating overlaps.
void col2im(const RowMat& col, int c, int h, int w, int k, int d, float* x) {
  const int r = (k - 1) / 2;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = x + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      const int dy = (ki - r) * d;
      for (int kj = 0; kj < k; ++kj) {
        const int dx = (kj - r) * d;
        const float* row = col.data() + static_cast<std::size_t>((ch * k + ki) * k + kj) * h * w;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        if (x1 <= x0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          float* dst = plane + static_cast<std::size_t>(sy) * w + dx;
          const float* src = row + static_cast<std::size_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) dst[xx] += src[xx];
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int dilation)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), dilation_(dilation) {
  if (in_ch < 1 || out_ch < 1 || ksize < 1 || ksize % 2 == 0 || dilation < 1)
    throw contract_error("Conv2d: bad configuration");
  weight_ = Eigen::MatrixXf::Zero(out_ch, in_ch * ksize * ksize);
  bias_ = Eigen::VectorXf::Zero(out_ch);
  dweight_ = Eigen::MatrixXf::Zero(out_ch, in_ch * ksize * ksize);
  dbias_ = Eigen::VectorXf::Zero(out_ch);
}

void Conv2d::init_he(std::mt19937_64& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(weight_.cols()));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (Eigen::Index i = 0; i < weight_.rows(); ++i)
    for (Eigen::Index j = 0; j < weight_.cols(); ++j) weight_(i, j) = dist(rng);
  bias_.setZero();
}

Tensor Conv2d::forward(const Tensor& input, bool cache_input) {
  if (input.c != in_ch_) throw contract_error("Conv2d: channel mismatch");
  Tensor out(input.n, out_ch_, input.h, input.w);
  const int hw = input.h * input.w;
  parallel_for(0, input.n, default_threads(), [&](int i) {
    RowMat col(in_ch_ * ksize_ * ksize_, hw);
    im2col(input.sample(i), in_ch_, input.h, input.w, ksize_, dilation_, col);
    RowMap out_map(out.sample(i), out_ch_, hw);
    out_map.noalias() = weight_ * col;
    out_map.colwise() += bias_;
  });
  if (cache_input) cached_input_ = input;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (cached_input_.empty()) throw contract_error("Conv2d::backward: no cached forward");
  const Tensor& input = cached_input_;
  if (grad_out.n != input.n || grad_out.c != out_ch_ || grad_out.h != input.h ||
      grad_out.w != input.w)
    throw contract_error("Conv2d::backward: grad shape mismatch");
  const int hw = input.h * input.w;
  Tensor grad_in(input.n, in_ch_, input.h, input.w);
  // Per-sample weight-gradient partials summed in sample order, so the
  // result is identical for any thread count.
  std::vector<Eigen::MatrixXf> dw_parts(static_cast<std::size_t>(input.n));
  std::vector<Eigen::VectorXf> db_parts(static_cast<std::size_t>(input.n));
  parallel_for(0, input.n, default_threads(), [&](int i) {
    RowMat col(in_ch_ * ksize_ * ksize_, hw);
    im2col(input.sample(i), in_ch_, input.h, input.w, ksize_, dilation_, col);
    ConstRowMap dy(grad_out.sample(i), out_ch_, hw);
    dw_parts[i].noalias() = dy * col.transpose();
    // fixed-order scalar sums: Eigen's vectorized redux peels by pointer
    // alignment, which varies between heap allocations
    db_parts[i].resize(out_ch_);
    for (int ch = 0; ch < out_ch_; ++ch) {
      const float* row = grad_out.channel(i, ch);
      float s = 0.0f;
      for (int j = 0; j < hw; ++j) s += row[j];
      db_parts[i](ch) = s;
    }
    RowMat dcol(in_ch_ * ksize_ * ksize_, hw);
    dcol.noalias() = weight_.transpose() * dy;
    col2im(dcol, in_ch_, input.h, input.w, ksize_, dilation_, grad_in.sample(i));
  });
  for (int i = 0; i < input.n; ++i) {
    dweight_ += dw_parts[i];
    dbias_ += db_parts[i];
  }
  cached_input_ = Tensor();
  return grad_in;
}

void Conv2d::zero_grad() {
  dweight_.setZero();
  dbias_.setZero();
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", weight_.data(), dweight_.data(),
                 {out_ch_, in_ch_, ksize_, ksize_}, static_cast<std::size_t>(weight_.size())});
  out.push_back({prefix + ".bias", bias_.data(), dbias_.data(), {out_ch_},
                 static_cast<std::size_t>(bias_.size())});
}

BatchNorm2d::BatchNorm2d(int channels, float eps, float momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_ = Eigen::VectorXf::Ones(channels);
  beta_ = Eigen::VectorXf::Zero(channels);
  dgamma_ = Eigen::VectorXf::Zero(channels);
  dbeta_ = Eigen::VectorXf::Zero(channels);
  running_mean_ = Eigen::VectorXf::Zero(channels);
  running_var_ = Eigen::VectorXf::Ones(channels);
}

Tensor BatchNorm2d::forward(const Tensor& input, bool train) {
  if (input.c != channels_) throw contract_error("BatchNorm2d: channel mismatch");
  Tensor out(input.n, input.c, input.h, input.w);
  const std::size_t hw = input.plane_size();
  if (train) {
    const double m = static_cast<double>(input.n) * hw;
    cached_xhat_ = Tensor(input.n, input.c, input.h, input.w);
    cached_invstd_.resize(channels_);
    for (int ch = 0; ch < channels_; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (int i = 0; i < input.n; ++i) {
        const float* p = input.channel(i, ch);
        for (std::size_t j = 0; j < hw; ++j) {
          sum += p[j];
          sq += static_cast<double>(p[j]) * p[j];
        }
      }
      const float mean = static_cast<float>(sum / m);
      const float var = std::max(0.0f, static_cast<float>(sq / m - (sum / m) * (sum / m)));
      const float invstd = 1.0f / std::sqrt(var + eps_);
      cached_invstd_(ch) = invstd;
      for (int i = 0; i < input.n; ++i) {
        const float* p = input.channel(i, ch);
        float* xh = cached_xhat_.channel(i, ch);
        float* o = out.channel(i, ch);
        for (std::size_t j = 0; j < hw; ++j) {
          xh[j] = (p[j] - mean) * invstd;
          o[j] = gamma_(ch) * xh[j] + beta_(ch);
        }
      }
      running_mean_(ch) = momentum_ * running_mean_(ch) + (1.0f - momentum_) * mean;
      running_var_(ch) = momentum_ * running_var_(ch) + (1.0f - momentum_) * var;
    }
  } else {
    for (int ch = 0; ch < channels_; ++ch) {
      const float invstd = 1.0f / std::sqrt(running_var_(ch) + eps_);
      const float scale = gamma_(ch) * invstd;
      const float shift = beta_(ch) - scale * running_mean_(ch);
      for (int i = 0; i < input.n; ++i) {
        const float* p = input.channel(i, ch);
        float* o = out.channel(i, ch);
        for (std::size_t j = 0; j < hw; ++j) o[j] = scale * p[j] + shift;
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (cached_xhat_.empty()) throw contract_error("BatchNorm2d::backward: no cached forward");
  const Tensor& xhat = cached_xhat_;
  Tensor grad_in(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  const std::size_t hw = grad_out.plane_size();
  const double m = static_cast<double>(grad_out.n) * hw;
  for (int ch = 0; ch < channels_; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < grad_out.n; ++i) {
      const float* dy = grad_out.channel(i, ch);
      const float* xh = xhat.channel(i, ch);
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += dy[j];
        sum_dy_xhat += static_cast<double>(dy[j]) * xh[j];
      }
    }
    dbeta_(ch) += static_cast<float>(sum_dy);
    dgamma_(ch) += static_cast<float>(sum_dy_xhat);
    const float k = gamma_(ch) * cached_invstd_(ch) / static_cast<float>(m);
    const float mean_dy = static_cast<float>(sum_dy / m);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
    for (int i = 0; i < grad_out.n; ++i) {
      const float* dy = grad_out.channel(i, ch);
      const float* xh = xhat.channel(i, ch);
      float* dx = grad_in.channel(i, ch);
      for (std::size_t j = 0; j < hw; ++j)
        dx[j] = k * (static_cast<float>(m) * dy[j] - static_cast<float>(m) * mean_dy -
                     xh[j] * static_cast<float>(m) * mean_dy_xhat);
    }
  }
  cached_xhat_ = Tensor();
  return grad_in;
}

void BatchNorm2d::zero_grad() {
  dgamma_.setZero();
  dbeta_.setZero();
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", gamma_.data(), dgamma_.data(), {channels_},
                 static_cast<std::size_t>(channels_)});
  out.push_back({prefix + ".beta", beta_.data(), dbeta_.data(), {channels_},
                 static_cast<std::size_t>(channels_)});
}

void BatchNorm2d::collect_stats(const std::string& prefix, std::vector<StatRef>& out) {
  out.push_back({prefix + ".running_mean", running_mean_.data(), {channels_},
                 static_cast<std::size_t>(channels_)});
  out.push_back({prefix + ".running_var", running_var_.data(), {channels_},
                 static_cast<std::size_t>(channels_)});
}

Tensor activation_forward(Activation act, const Tensor& x) {
  Tensor y = x;
  switch (act) {
    case Activation::Linear:
      break;
    case Activation::Elu:
      for (auto& v : y.data) v = v > 0.0f ? v : std::expm1(v);
      break;
    case Activation::Relu:
      for (auto& v : y.data) v = std::max(0.0f, v);
      break;
    case Activation::Sigmoid:
      for (auto& v : y.data) v = 1.0f / (1.0f + std::exp(-v));
      break;
  }
  return y;
}

Tensor activation_backward(Activation act, const Tensor& y, const Tensor& grad_out) {
  Tensor dx = grad_out;
  switch (act) {
    case Activation::Linear:
      break;
    case Activation::Elu:
      for (std::size_t j = 0; j < dx.size(); ++j)
        if (y.data[j] <= 0.0f) dx.data[j] *= y.data[j] + 1.0f;
      break;
    case Activation::Relu:
      for (std::size_t j = 0; j < dx.size(); ++j)
        if (y.data[j] <= 0.0f) dx.data[j] = 0.0f;
      break;
    case Activation::Sigmoid:
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] *= y.data[j] * (1.0f - y.data[j]);
      break;
  }
  return dx;
}

}  // namespace sparsefocus
