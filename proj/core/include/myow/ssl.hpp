#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "myow/augment.hpp"
#include "myow/data.hpp"
#include "myow/miner.hpp"
#include "myow/nn.hpp"
#include "myow/tensor.hpp"

namespace myow {

/// Where the mined-view projector sits relative to the augmented-view
/// projector: consuming its output (cascaded), branching off the encoder
/// (parallel), or sharing the single projection space (single).
enum class ArchVariant { Cascaded, Parallel, Single };

struct ModelSpecs {
  MlpSpec encoder;
  std::optional<MlpSpec> projector_g;  // absent => identity
  std::optional<MlpSpec> projector_h;
  MlpSpec predictor_q;
  MlpSpec predictor_r;
  ArchVariant variant = ArchVariant::Cascaded;
};

/// Online parameters (encoder f, projectors g/h, predictors q/r) and the
/// structurally identical target copies of f/g/h. At construction the target
/// equals the online network.
class ModelState {
 public:
  ModelState(ModelSpecs specs, Rng& init_rng);

  const ModelSpecs& specs() const { return specs_; }
  ArchVariant variant() const { return specs_.variant; }
  std::size_t representation_width() const {
    return specs_.encoder.output_width();
  }

  Tensor encode(const Tensor& x, bool target = false,
                Mode mode = Mode::Eval);
  /// Augmented-view projection z = g(f(x)).
  Tensor project_aug(const Tensor& x, bool target, Mode mode);
  /// Mined-view projection of an encoder representation, per variant.
  Tensor project_mined(const Tensor& rep, bool target, Mode mode);
  Tensor predict_aug(const Tensor& z, Mode mode);    // q
  Tensor predict_mined(const Tensor& v, Mode mode);  // r

  NamedTensors online_params();
  NamedTensors target_params();
  NamedTensors online_buffers();
  NamedTensors target_buffers();

  /// xi <- tau * xi + (1 - tau) * theta over all target params and buffers.
  void ema_update(double tau);

 private:
  ModelSpecs specs_;
  std::unique_ptr<Module> f_, g_, h_, q_, r_;
  std::unique_ptr<Module> tf_, tg_, th_;
};

/// -<u,v> / (||u|| ||v||) for two vectors (no gradient graph).
double cosine_distance(const std::vector<double>& u,
                       const std::vector<double>& v, double eps = 1e-12);

/// Batch mean of the row-wise negative cosine similarity.
Tensor cosine_distance_rowmean(const Tensor& u, const Tensor& v,
                               double eps = 1e-12);

/// Symmetrized BYOL term: mean_i d(q(z_i), z'_i) + d(q(u'_i), u_i), target
/// branches gradient-blocked. x and x' are two augmented views of the batch.
Tensor augmented_loss(ModelState& state, const Tensor& x, const Tensor& xp);

/// Mined term: mean_i d(r(v_i), v'_i), not symmetrized, target blocked.
/// `mined_target_reps` are the selected candidates' encoder representations.
Tensor mined_loss(ModelState& state, const Tensor& anchor_reps,
                  const Tensor& mined_target_reps);

struct StepConfig {
  TransformSpec aug_transforms;    // T
  TransformSpec mine_transforms;   // T_m
  MinerConfig miner;
  bool mining_enabled = true;      // false => plain BYOL step
  // When set, every view is z-scored after its value transforms (noise and
  // pepper act on raw rates; normalization comes last).
  const NormStats* normalization = nullptr;
  double lambda_weight = 0.0;      // effective lambda(step)
  double tau = 0.98;
  double lr = 0.02;
};

struct MiningRecord {
  std::size_t anchor_row = 0;     // dataset row of the anchor view
  std::size_t candidate_row = 0;  // dataset row of the mined view
  double distance = 0.0;
  std::size_t rank = 0;
};

struct StepResult {
  double aug_loss = 0.0;
  double mined_loss = 0.0;  // unweighted
  double total_loss = 0.0;
  std::size_t empty_pool_fallbacks = 0;  // anchors that skipped mining
  std::vector<MiningRecord> mined;
};

/// One full training iteration: view generation, both loss terms, a single
/// accumulated backward/optimizer step on the online parameters, then the
/// EMA update of the target.
StepResult myow_step(ModelState& state, Optimizer& optimizer,
                     const BinnedDataset& ds,
                     const std::vector<std::size_t>& batch_rows,
                     const std::vector<std::size_t>& candidate_rows,
                     Rng& aug_rng, Rng& mine_rng, const StepConfig& cfg);

}  // namespace myow
