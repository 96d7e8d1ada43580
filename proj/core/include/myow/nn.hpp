#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "myow/tensor.hpp"

namespace myow {

enum class Mode {
  Train,             // batch statistics, running stats updated
  TrainFrozenStats,  // batch statistics, running stats untouched
  Eval,              // running statistics, pure
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Registers parameters and buffers under `prefix` (dot-separated names).
  virtual void collect(const std::string& prefix, NamedTensors& params,
                       NamedTensors& buffers) = 0;

  std::vector<Tensor> parameters();
};

class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  void collect(const std::string& prefix, NamedTensors& params,
               NamedTensors& buffers) override;

  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

class BatchNorm1d : public Module {
 public:
  explicit BatchNorm1d(std::size_t width, double momentum = 0.1,
                       double eps = 1e-5);
  Tensor forward(const Tensor& x, Mode mode) override;
  void collect(const std::string& prefix, NamedTensors& params,
               NamedTensors& buffers) override;

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum;
  double eps;
};

class ReluLayer : public Module {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  void collect(const std::string&, NamedTensors&, NamedTensors&) override {}
};

class Identity : public Module {
 public:
  Tensor forward(const Tensor& x, Mode mode) override { return x; }
  void collect(const std::string&, NamedTensors&, NamedTensors&) override {}
};

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  bool block_batchnorm = true;
  bool final_batchnorm = false;   // default: plain final linear
  bool final_activation = false;
  double bn_momentum = 0.1;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  /// Trainable parameter count implied by the spec.
  std::size_t param_count() const;
};

class Mlp : public Module {
 public:
  Mlp(MlpSpec spec, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) override;
  void collect(const std::string& prefix, NamedTensors& params,
               NamedTensors& buffers) override;
  const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<std::unique_ptr<Module>> layers_;
};

/// Copies values of like-named params and buffers from src into dst.
void copy_state(Module& src, Module& dst);

// ---------------------------------------------------------------------------
// Optimizers

struct OptimizerConfig {
  enum class Kind { AdamW, SgdMomentum } kind = Kind::AdamW;
  double lr = 0.02;
  double weight_decay = 0.0;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adamw
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW (decoupled weight decay) or SGD with classical momentum and coupled
/// weight decay, over a fixed named parameter set.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, NamedTensors params);

  /// Applies one update using each parameter's accumulated gradient.
  /// Parameters without gradients are treated as zero-gradient.
  void step(double lr);
  void zero_grad();

  long step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return cfg_; }

  // Exposed for checkpointing: slot name -> flat values.
  NamedTensors state_tensors();
  void set_step_count(long c) { step_count_ = c; }

 private:
  OptimizerConfig cfg_;
  NamedTensors params_;
  std::vector<Tensor> moment1_, moment2_;  // adamw: m, v; sgd: velocity in moment1_
  long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Schedules

struct ScheduleSpec {
  double base = 0.0;
  double final_value = 0.0;
  long warmup_steps = 0;
  long total_steps = 1;
  bool warmup_from_zero = true;  // linear warmup starts at 0 (lr style)
  enum class Shape { Cosine, Constant } shape = Shape::Cosine;
};

/// Linear warmup followed by a half-cosine from base to final_value.
double schedule_value(const ScheduleSpec& spec, long step);

}  // namespace myow
