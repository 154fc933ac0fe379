#include "sparsefocus/net/model.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "sparsefocus/rng.hpp"

namespace sparsefocus {

using nlohmann::json;
namespace fs = std::filesystem;

void ModelConfig::validate() const {
  if (levels < 1) throw contract_error("ModelConfig: levels must be >= 1");
  if (blocks_per_level < 1) throw contract_error("ModelConfig: blocks_per_level must be >= 1");
  if (base_channels < 1) throw contract_error("ModelConfig: base_channels must be >= 1");
  if (base_channels % 2 != 0)
    throw contract_error("ModelConfig: base_channels must be even (two parallel branches)");
  if (static_cast<int>(dilation_schedule.size()) != levels)
    throw contract_error("ModelConfig: dilation_schedule length must equal levels");
  for (int d : dilation_schedule)
    if (d < 1) throw contract_error("ModelConfig: dilations must be >= 1");
  if (kernel_large < 1 || kernel_large % 2 == 0 || kernel_small < 1 || kernel_small % 2 == 0)
    throw contract_error("ModelConfig: kernels must be odd and positive");
}

ConvBlock::ConvBlock(int in_ch, int out_ch, const ModelConfig& cfg, int dilation) {
  if (out_ch % 2 != 0) throw contract_error("ConvBlock: output width must be even");
  half_ = out_ch / 2;
  conv5_ = Conv2d(in_ch, half_, cfg.kernel_large, dilation);
  conv3_ = Conv2d(in_ch, half_, cfg.kernel_small, dilation);
  bn5_ = BatchNorm2d(half_, cfg.bn_epsilon, cfg.bn_momentum);
  bn3_ = BatchNorm2d(half_, cfg.bn_epsilon, cfg.bn_momentum);
}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
  Tensor a5 = activation_forward(Activation::Elu, bn5_.forward(conv5_.forward(x, train), train));
  Tensor a3 = activation_forward(Activation::Elu, bn3_.forward(conv3_.forward(x, train), train));
  if (train) {
    act5_ = a5;
    act3_ = a3;
  }
  return concat_channels(a5, a3);
}

namespace {

// First c0 channels / remaining channels of a tensor.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int c0) {
  Tensor a(t.n, c0, t.h, t.w), b(t.n, t.c - c0, t.h, t.w);
  const std::size_t hw = t.plane_size();
  for (int i = 0; i < t.n; ++i) {
    std::copy(t.sample(i), t.sample(i) + static_cast<std::size_t>(c0) * hw, a.sample(i));
    std::copy(t.sample(i) + static_cast<std::size_t>(c0) * hw,
              t.sample(i) + static_cast<std::size_t>(t.c) * hw, b.sample(i));
  }
  return {std::move(a), std::move(b)};
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += b.data[j];
  return out;
}

}  // namespace

Tensor ConvBlock::backward(const Tensor& grad_out) {
  if (act5_.empty()) throw contract_error("ConvBlock::backward: no cached forward");
  auto [d5, d3] = split_channels(grad_out, half_);
  Tensor dx5 = conv5_.backward(bn5_.backward(activation_backward(Activation::Elu, act5_, d5)));
  Tensor dx3 = conv3_.backward(bn3_.backward(activation_backward(Activation::Elu, act3_, d3)));
  act5_ = Tensor();
  act3_ = Tensor();
  return add_tensors(dx5, dx3);
}

void ConvBlock::zero_grad() {
  conv5_.zero_grad();
  conv3_.zero_grad();
  bn5_.zero_grad();
  bn3_.zero_grad();
}

void ConvBlock::init(std::mt19937_64& rng) {
  conv5_.init_he(rng);
  conv3_.init_he(rng);
}

void ConvBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv5_.collect_params(prefix + ".conv5", out);
  bn5_.collect_params(prefix + ".bn5", out);
  conv3_.collect_params(prefix + ".conv3", out);
  bn3_.collect_params(prefix + ".bn3", out);
}

void ConvBlock::collect_stats(const std::string& prefix, std::vector<StatRef>& out) {
  bn5_.collect_stats(prefix + ".bn5", out);
  bn3_.collect_stats(prefix + ".bn3", out);
}

Head::Head(int in_ch, Activation act, const ModelConfig& cfg)
    : has_bn_(cfg.head_batchnorm), act_(act) {
  conv_ = Conv2d(in_ch, 1, 1, 1);
  if (has_bn_) bn_ = BatchNorm2d(1, cfg.bn_epsilon, cfg.bn_momentum);
}

Tensor Head::forward(const Tensor& x, bool train) {
  Tensor t = conv_.forward(x, train);
  if (has_bn_) t = bn_.forward(t, train);
  Tensor y = activation_forward(act_, t);
  if (train) out_ = y;
  return y;
}

Tensor Head::backward(const Tensor& grad_out) {
  if (out_.empty()) throw contract_error("Head::backward: no cached forward");
  Tensor d = activation_backward(act_, out_, grad_out);
  if (has_bn_) d = bn_.backward(d);
  out_ = Tensor();
  return conv_.backward(d);
}

void Head::zero_grad() {
  conv_.zero_grad();
  if (has_bn_) bn_.zero_grad();
}

void Head::init(std::mt19937_64& rng) { conv_.init_he(rng); }

void Head::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv_.collect_params(prefix + ".conv", out);
  if (has_bn_) bn_.collect_params(prefix + ".bn", out);
}

void Head::collect_stats(const std::string& prefix, std::vector<StatRef>& out) {
  if (has_bn_) bn_.collect_stats(prefix + ".bn", out);
}

Model::Model(const ModelConfig& cfg, VariantKind variant, std::uint64_t seed)
    : cfg_(cfg), variant_(variant) {
  cfg_.validate();
  const int levels = cfg_.levels;
  enc_.resize(levels);
  dec_.resize(levels);
  for (int l = 0; l < levels; ++l) {
    const int width = cfg_.level_width(l);
    const int dil = cfg_.dilation_schedule[l];
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      const int in_ch = b > 0 ? width : (l == 0 ? 1 : cfg_.level_width(l - 1));
      enc_[l].emplace_back(in_ch, width, cfg_, dil);
    }
  }
  // Decoder runs from the deepest level down. The deepest level's input is
  // the encoder output itself; lower levels concatenate the skip from the
  // matching encoder level.
  for (int l = levels - 1; l >= 0; --l) {
    const int width = cfg_.level_width(l);
    const int dil = cfg_.dilation_schedule[l];
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      int in_ch = width;
      if (b == 0)
        in_ch = (l == levels - 1) ? cfg_.level_width(l) : cfg_.level_width(l + 1) + width;
      dec_[l].emplace_back(in_ch, width, cfg_, dil);
    }
  }
  const int feat = cfg_.level_width(0);
  head_sct_ = Head(feat, Activation::Linear, cfg_);
  if (variant_has_bone_head(variant_)) head_bone_ = Head(feat, Activation::Relu, cfg_);
  if (variant_has_mask_head(variant_)) head_mask_ = Head(feat, Activation::Sigmoid, cfg_);

  std::mt19937_64 rng(splitmix64(seed));
  for (auto& level : enc_)
    for (auto& block : level) block.init(rng);
  for (int l = levels - 1; l >= 0; --l)
    for (auto& block : dec_[l]) block.init(rng);
  head_sct_.init(rng);
  if (variant_has_bone_head(variant_)) head_bone_.init(rng);
  if (variant_has_mask_head(variant_)) head_mask_.init(rng);
}

NetOutputs Model::forward(const Tensor& mr) {
  if (mr.c != 1) throw contract_error("Model::forward: expected single-channel input");
  if (mr.h < 8 || mr.w < 8) throw contract_error("Model::forward: input below 8x8 minimum");
  const int levels = cfg_.levels;
  std::vector<Tensor> enc_out(levels);
  Tensor cur = mr;
  for (int l = 0; l < levels; ++l) {
    for (auto& block : enc_[l]) cur = block.forward(cur, train_);
    enc_out[l] = cur;
  }
  Tensor dec_cur = enc_out[levels - 1];
  for (int l = levels - 1; l >= 0; --l) {
    Tensor in = (l == levels - 1) ? dec_cur : concat_channels(dec_cur, enc_out[l]);
    for (auto& block : dec_[l]) in = block.forward(in, train_);
    dec_cur = std::move(in);
  }
  NetOutputs out;
  out.sct = head_sct_.forward(dec_cur, train_);
  if (variant_has_bone_head(variant_)) out.bone = head_bone_.forward(dec_cur, train_);
  if (variant_has_mask_head(variant_)) out.mask = head_mask_.forward(dec_cur, train_);
  return out;
}

void Model::backward(const NetOutputs& output_grads) {
  if (!train_) throw contract_error("Model::backward: model not in train mode");
  const int levels = cfg_.levels;
  Tensor d_feat = head_sct_.backward(output_grads.sct);
  if (variant_has_bone_head(variant_) && !output_grads.bone.empty())
    d_feat = add_tensors(d_feat, head_bone_.backward(output_grads.bone));
  if (variant_has_mask_head(variant_) && !output_grads.mask.empty())
    d_feat = add_tensors(d_feat, head_mask_.backward(output_grads.mask));

  // Decoder backward in reverse of processing order (level 0 first),
  // peeling skip gradients off the concatenated inputs.
  std::vector<Tensor> skip_grads(levels);
  Tensor d = std::move(d_feat);
  for (int l = 0; l < levels; ++l) {
    for (int b = static_cast<int>(dec_[l].size()) - 1; b >= 0; --b) d = dec_[l][b].backward(d);
    if (l < levels - 1) {
      auto [d_prev, d_skip] = split_channels(d, cfg_.level_width(l + 1));
      skip_grads[l] = std::move(d_skip);
      d = std::move(d_prev);
    }
  }
  // d now holds the gradient w.r.t. the deepest encoder output.
  for (int l = levels - 1; l >= 0; --l) {
    if (l < levels - 1) d = add_tensors(d, skip_grads[l]);
    for (int b = static_cast<int>(enc_[l].size()) - 1; b >= 0; --b) d = enc_[l][b].backward(d);
  }
}

void Model::zero_grad() {
  for (auto& level : enc_)
    for (auto& block : level) block.zero_grad();
  for (auto& level : dec_)
    for (auto& block : level) block.zero_grad();
  head_sct_.zero_grad();
  if (variant_has_bone_head(variant_)) head_bone_.zero_grad();
  if (variant_has_mask_head(variant_)) head_mask_.zero_grad();
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  for (int l = 0; l < cfg_.levels; ++l)
    for (int b = 0; b < static_cast<int>(enc_[l].size()); ++b)
      enc_[l][b].collect_params("enc.l" + std::to_string(l) + ".b" + std::to_string(b), out);
  for (int l = cfg_.levels - 1; l >= 0; --l)
    for (int b = 0; b < static_cast<int>(dec_[l].size()); ++b)
      dec_[l][b].collect_params("dec.l" + std::to_string(l) + ".b" + std::to_string(b), out);
  head_sct_.collect_params("head.sct", out);
  if (variant_has_bone_head(variant_)) head_bone_.collect_params("head.bone", out);
  if (variant_has_mask_head(variant_)) head_mask_.collect_params("head.mask", out);
  return out;
}

std::vector<StatRef> Model::stats() {
  std::vector<StatRef> out;
  for (int l = 0; l < cfg_.levels; ++l)
    for (int b = 0; b < static_cast<int>(enc_[l].size()); ++b)
      enc_[l][b].collect_stats("enc.l" + std::to_string(l) + ".b" + std::to_string(b), out);
  for (int l = cfg_.levels - 1; l >= 0; --l)
    for (int b = 0; b < static_cast<int>(dec_[l].size()); ++b)
      dec_[l][b].collect_stats("dec.l" + std::to_string(l) + ".b" + std::to_string(b), out);
  head_sct_.collect_stats("head.sct", out);
  if (variant_has_bone_head(variant_)) head_bone_.collect_stats("head.bone", out);
  if (variant_has_mask_head(variant_)) head_mask_.collect_stats("head.mask", out);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : params()) total += p.count;
  return total;
}

void to_json(json& j, const ModelConfig& cfg) {
  j = {{"levels", cfg.levels},
       {"blocks_per_level", cfg.blocks_per_level},
       {"base_channels", cfg.base_channels},
       {"kernel_sizes", {cfg.kernel_large, cfg.kernel_small}},
       {"dilation_schedule", cfg.dilation_schedule},
       {"head_batchnorm", cfg.head_batchnorm},
       {"bn_epsilon", cfg.bn_epsilon},
       {"bn_momentum", cfg.bn_momentum}};
}

void from_json(const json& j, ModelConfig& cfg) {
  cfg = ModelConfig{};
  cfg.levels = j.value("levels", cfg.levels);
  cfg.blocks_per_level = j.value("blocks_per_level", cfg.blocks_per_level);
  cfg.base_channels = j.value("base_channels", cfg.base_channels);
  if (j.contains("kernel_sizes")) {
    cfg.kernel_large = j["kernel_sizes"].at(0).get<int>();
    cfg.kernel_small = j["kernel_sizes"].at(1).get<int>();
  }
  if (j.contains("dilation_schedule"))
    cfg.dilation_schedule = j["dilation_schedule"].get<std::vector<int>>();
  else if (cfg.levels != 3)
    throw contract_error("model config: dilation_schedule required when levels != 3");
  cfg.head_batchnorm = j.value("head_batchnorm", cfg.head_batchnorm);
  cfg.bn_epsilon = j.value("bn_epsilon", cfg.bn_epsilon);
  cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
}

void save_model(Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["variant"] = variant_name(model.variant());
  manifest["config"] = model.config();
  json tensors = json::array();
  std::size_t offset = 0;
  std::vector<float> blob;
  auto append = [&](const std::string& name, const std::string& kind, const float* data,
                    const std::vector<int>& shape, std::size_t count) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}});
    blob.insert(blob.end(), data, data + count);
    offset += count;
  };
  for (const auto& p : model.params()) append(p.name, "param", p.data, p.shape, p.count);
  for (const auto& s : model.stats()) append(s.name, "stat", s.data, s.shape, s.count);
  manifest["tensors"] = tensors;

  std::ofstream jm(dir / "model.json");
  if (!jm) throw io_error("cannot write " + (dir / "model.json").string());
  jm << manifest.dump(2) << "\n";
  std::ofstream bin(dir / "model.f32", std::ios::binary);
  if (!bin) throw io_error("cannot write " + (dir / "model.f32").string());
  bin.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

Model load_model(const fs::path& dir) {
  std::ifstream jm(dir / "model.json");
  if (!jm) throw io_error("missing file: " + (dir / "model.json").string());
  json manifest;
  try {
    jm >> manifest;
  } catch (const json::exception& e) {
    throw io_error("bad model.json: " + std::string(e.what()));
  }
  if (manifest.value("version", 0) != 1) throw io_error("unsupported model version");
  const ModelConfig cfg = manifest.at("config").get<ModelConfig>();
  const VariantKind variant = variant_from_name(manifest.at("variant").get<std::string>());
  Model model(cfg, variant, 0);

  std::ifstream bin(dir / "model.f32", std::ios::binary);
  if (!bin) throw io_error("missing file: " + (dir / "model.f32").string());
  bin.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  bin.seekg(0);
  std::vector<float> blob(bytes / sizeof(float));
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));

  auto restore = [&](const std::string& name, float* dst, std::size_t count) {
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("name") == name) {
        const auto off = t.at("offset").get<std::size_t>();
        if (off + count > blob.size()) throw io_error("model.f32 size mismatch");
        std::copy(blob.begin() + static_cast<long>(off),
                  blob.begin() + static_cast<long>(off + count), dst);
        return;
      }
    }
    throw io_error("model.json missing tensor: " + name);
  };
  for (const auto& p : model.params()) restore(p.name, p.data, p.count);
  for (const auto& s : model.stats()) restore(s.name, s.data, s.count);
  return model;
}

}  // namespace sparsefocus
