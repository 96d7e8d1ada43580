#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "myow/checkpoint.hpp"
#include "myow/config.hpp"
#include "myow/data.hpp"
#include "myow/ssl.hpp"

namespace myow {

/// Raised when a training loss goes non-finite; carries diagnostics.
struct NanLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochStats {
  long epoch = 0;
  double aug_loss = 0.0;
  double mined_loss = 0.0;
  double total_loss = 0.0;
  double lambda = 0.0;  // at the last step of the epoch
  double tau = 0.0;
  double eta = 0.0;
  std::size_t empty_pool_fallbacks = 0;
};

/// Owns the full training state for one run: model, optimizer, schedules,
/// the named RNG streams, data/candidate loaders, and per-epoch logging.
/// The dataset is kept raw; z-scoring (train-split statistics) is applied per
/// view after augmentation and to eval-mode encodings.
class Trainer {
 public:
  /// `train_rows` empty means train on every row.
  Trainer(RunConfig cfg, BinnedDataset dataset,
          std::vector<std::size_t> train_rows = {});

  long steps_per_epoch() const;        // ceil(N / B)
  long total_steps() const;
  long step() const { return step_; }
  long epoch() const { return step_ / steps_per_epoch(); }

  /// Loss-trace CSV sink; the header is written with the first epoch line.
  void set_log(std::ostream* log) { log_ = log; }
  /// Mining audit sink; the header is written immediately.
  void set_audit(std::ostream* audit);

  StepResult train_step();
  EpochStats run_epoch();
  void run(const std::function<void(const EpochStats&)>& on_epoch = {});

  /// Eval-mode online representations of every dataset row, normalized input.
  Tensor encode_dataset();

  const RunConfig& config() const { return cfg_; }
  const BinnedDataset& dataset() const { return ds_; }
  const NormStats& norm_stats() const { return norm_; }
  ModelState& model() { return *model_; }

  Checkpoint make_checkpoint();
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<std::size_t> next_candidates();
  void write_log_line(const EpochStats& s);

  RunConfig cfg_;
  BinnedDataset ds_;
  std::vector<std::size_t> train_rows_;
  NormStats norm_;
  TransformSpec aug_spec_, mine_spec_;
  MinerConfig miner_cfg_;  // pool size capped at the train-set size
  std::unique_ptr<ModelState> model_;
  std::unique_ptr<Optimizer> optimizer_;
  ScheduleSpec lr_sched_, tau_sched_;
  Rng data_rng_, aug_rng_, mine_rng_, pool_rng_;
  std::vector<std::size_t> epoch_perm_;  // current pass over train_rows_
  std::vector<std::size_t> pool_perm_;   // candidate loader pass
  std::size_t pool_cursor_ = 0;
  long step_ = 0;
  std::ostream* log_ = nullptr;
  std::ostream* audit_ = nullptr;
};

}  // namespace myow
