#ifndef SPARSEFOCUS_TRAINER_HPP
#define SPARSEFOCUS_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsefocus/losses.hpp"
#include "sparsefocus/net/model.hpp"
#include "sparsefocus/sample.hpp"

namespace sparsefocus {

struct AugmentPolicy {
  double noise_sigma = 0.03;  // z-score units, MR only
  bool mirror = true;
  double rotate_max_deg = 10.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double probability = 0.5;  // per transform
};

enum class WeightSchedule { Constant, LinearDecay };
enum class Selection { MinTrainComposite, MinValComposite };

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 15;
  int epochs = 60;
  LossWeights weights;
  WeightSchedule weight_schedule = WeightSchedule::Constant;
  AugmentPolicy augment;
  std::uint64_t seed = 0;
  Selection selection = Selection::MinTrainComposite;
  double value_scale = 1.0 / 1000.0;
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochRecord {
  LossBreakdown train;
  LossBreakdown val;
  LossWeights effective_weights;
  int steps = 0;
  double wall_sec = 0.0;  // in-memory only; not serialized (determinism)
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int selected_epoch = -1;
  double selected_value = 0.0;
};

// The same geometric transform applies to mr, ct and body jointly
// (bilinear for images, nearest for the mask); noise goes to mr only.
PhantomSample augment(const PhantomSample& sample, const AugmentPolicy& policy,
                      std::mt19937_64& rng);

// Nadam moments, kept in 64-bit; parameters stay 32-bit.
struct OptimizerState {
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<ParamRef>& params);
};

// One Nadam update over all parameters; throws numeric_error naming the
// parameter on a non-finite gradient.
void nadam_step(const std::vector<ParamRef>& params, OptimizerState& state, double lr);

// Default task weights per ablation variant.
LossWeights make_variant_weights(VariantKind kind);

struct NamedSample {
  std::string id;
  PhantomSample s;
};

// Sample subdirectories of `dir`, sorted by id.
std::vector<NamedSample> load_split(const std::filesystem::path& dir);

struct Dataset {
  std::vector<NamedSample> train;
  std::vector<NamedSample> val;
};

struct TrainResult {
  Model model;  // reloaded selected checkpoint
  TrainHistory history;
  std::filesystem::path selected_checkpoint;
};

// Full training loop: per-epoch train/val loss, checkpoints at every new
// minimum of the selection criterion, history.json in run_dir.
TrainResult train(const Dataset& data, const TrainConfig& cfg, VariantKind variant,
                  const std::filesystem::path& run_dir);

void write_history(const TrainHistory& history, const std::filesystem::path& file);

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_TRAINER_HPP
