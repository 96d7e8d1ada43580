#pragma once

#include <cstdint>
#include <string>

#include "myow/augment.hpp"
#include "myow/miner.hpp"
#include "myow/nn.hpp"
#include "myow/ssl.hpp"

namespace myow {

/// Every hyperparameter of a run, expressible as flat `section.key = value`
/// text. Unknown keys are rejected; emission is canonical so that
/// parse -> emit -> parse is a fixed point.
struct RunConfig {
  // run
  std::uint64_t seed = 42;
  long epochs = 1000;
  std::size_t batch_size = 512;
  bool byol_mode = false;  // run.mode = myow | byol
  long checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  // data
  std::string data_path;
  // model
  ArchVariant variant = ArchVariant::Cascaded;
  std::size_t encoder_blocks = 4;
  std::size_t encoder_hidden = 64;
  std::size_t representation_size = 32;
  bool use_projectors = false;  // model.projectors = none | mlp
  std::size_t projector_hidden = 4096;
  std::size_t projector_out = 256;
  std::size_t predictor_hidden = 128;
  // optimizer
  OptimizerConfig::Kind opt_kind = OptimizerConfig::Kind::AdamW;
  double lr = 0.02;
  double weight_decay = 2e-5;
  double momentum = 0.9;
  long lr_warmup_epochs = 100;
  ScheduleSpec::Shape lr_schedule = ScheduleSpec::Shape::Cosine;
  // ema
  double tau_base = 0.98;
  double tau_final = 1.0;
  ScheduleSpec::Shape tau_schedule = ScheduleSpec::Shape::Cosine;
  // loss
  double lambda = 1.0;
  long lambda_warmup_epochs = 10;
  // miner
  std::size_t miner_k = 5;
  std::size_t miner_pool = 1024;
  MinerConfig::Space miner_space = MinerConfig::Space::Target;
  MaskPredicate miner_mask = MaskPredicate::None;
  double miner_window_s = 1800.0;
  MinerConfig::Metric miner_metric = MinerConfig::Metric::SquaredEuclidean;
  // transforms
  std::string aug_transforms = "none";
  std::string mine_transforms = "none";

  void validate() const;
  std::string canonical_text() const;

  static RunConfig parse_text(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Named presets: `neural-main`, `neural-appendix`, `manifold`.
  static RunConfig preset(const std::string& name);

  MlpSpec encoder_spec(std::size_t input_dim) const;
  ModelSpecs model_specs(std::size_t input_dim) const;
  MinerConfig miner_config() const;
  OptimizerConfig optimizer_config() const;
  ScheduleSpec lr_schedule_spec(long steps_per_epoch) const;
  ScheduleSpec tau_schedule_spec(long steps_per_epoch) const;
  double effective_lambda(long step, long steps_per_epoch) const;
};

}  // namespace myow
