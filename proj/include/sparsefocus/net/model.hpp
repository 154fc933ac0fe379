#ifndef SPARSEFOCUS_NET_MODEL_HPP
#define SPARSEFOCUS_NET_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sparsefocus/net/layers.hpp"
#include "sparsefocus/variant.hpp"

namespace sparsefocus {

struct ModelConfig {
  int levels = 3;
  int blocks_per_level = 2;
  int base_channels = 16;
  int kernel_large = 5;
  int kernel_small = 3;
  std::vector<int> dilation_schedule = {1, 2, 4};
  bool head_batchnorm = true;
  float bn_epsilon = 1e-5f;
  float bn_momentum = 0.9f;

  void validate() const;
  int level_width(int level) const { return base_channels << level; }
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Two parallel dilated convolutions (large and small kernel), each followed
// by batch norm and ELU, concatenated channel-wise.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int in_ch, int out_ch, const ModelConfig& cfg, int dilation);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void init(std::mt19937_64& rng);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_stats(const std::string& prefix, std::vector<StatRef>& out);

 private:
  int half_ = 0;
  Conv2d conv5_, conv3_;
  BatchNorm2d bn5_, bn3_;
  Tensor act5_, act3_;  // post-ELU branch outputs, kept in train mode
};

// 1x1 convolution -> optional batch norm -> activation.
class Head {
 public:
  Head() = default;
  Head(int in_ch, Activation act, const ModelConfig& cfg);

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void init(std::mt19937_64& rng);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  void collect_stats(const std::string& prefix, std::vector<StatRef>& out);

 private:
  bool has_bn_ = false;
  Activation act_ = Activation::Linear;
  Conv2d conv_;
  BatchNorm2d bn_;
  Tensor out_;  // post-activation, kept in train mode
};

// Head outputs for one batch; absent heads are empty tensors.
struct NetOutputs {
  Tensor sct;
  Tensor bone;
  Tensor mask;
};

// Full-resolution dilated encoder-decoder with up to three heads.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, VariantKind variant, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  VariantKind variant() const { return variant_; }

  void set_train(bool train) { train_ = train; }
  bool is_train() const { return train_; }

  NetOutputs forward(const Tensor& mr);
  // Gradients w.r.t. head outputs; absent heads may be empty tensors.
  void backward(const NetOutputs& output_grads);
  void zero_grad();

  std::vector<ParamRef> params();
  std::vector<StatRef> stats();
  std::size_t parameter_count();

 private:
  ModelConfig cfg_;
  VariantKind variant_ = VariantKind::ThreeTask;
  bool train_ = false;
  std::vector<std::vector<ConvBlock>> enc_, dec_;
  Head head_sct_, head_bone_, head_mask_;
};

void save_model(Model& model, const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_NET_MODEL_HPP
