#include "myow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace myow {

namespace {

std::string fmt(double v) { return format_double(v); }

std::string mask_text(MaskPredicate m) {
  switch (m) {
    case MaskPredicate::None: return "none";
    case MaskPredicate::ExcludeSameTrial: return "exclude-same-trial";
    case MaskPredicate::ExcludeTimeWindow: return "exclude-time-window";
  }
  return "none";
}

}  // namespace

Trainer::Trainer(RunConfig cfg, BinnedDataset dataset,
                 std::vector<std::size_t> train_rows)
    : cfg_(std::move(cfg)),
      ds_(std::move(dataset)),
      train_rows_(std::move(train_rows)),
      data_rng_(Rng::stream(cfg_.seed, "data")),
      aug_rng_(Rng::stream(cfg_.seed, "aug")),
      mine_rng_(Rng::stream(cfg_.seed, "mine")),
      pool_rng_(Rng::stream(cfg_.seed, "pool")) {
  cfg_.validate();
  ds_.validate();
  if (ds_.normalized)
    throw std::invalid_argument(
        "Trainer: expects raw rates; views are normalized internally");
  if (train_rows_.empty()) {
    train_rows_.resize(ds_.num_bins());
    std::iota(train_rows_.begin(), train_rows_.end(), std::size_t{0});
  }
  for (auto r : train_rows_)
    if (r >= ds_.num_bins())
      throw std::invalid_argument("Trainer: train row out of range");

  // z-score statistics over the training rows only
  if (train_rows_.size() == ds_.num_bins()) {
    norm_ = compute_norm_stats(ds_);
  } else {
    SplitAssignment split;
    split.tags.assign(ds_.num_bins(), SplitTag::Test);
    for (auto r : train_rows_) split.tags[r] = SplitTag::Train;
    norm_ = compute_norm_stats(ds_, &split);
  }

  aug_spec_ = TransformSpec::parse(cfg_.aug_transforms);
  mine_spec_ = TransformSpec::parse(cfg_.mine_transforms);
  miner_cfg_ = cfg_.miner_config();
  miner_cfg_.pool_size = std::min(miner_cfg_.pool_size, train_rows_.size());
  if (!cfg_.byol_mode) miner_cfg_.validate();

  Rng init = Rng::stream(cfg_.seed, "init");
  model_ = std::make_unique<ModelState>(cfg_.model_specs(ds_.d), init);
  optimizer_ = std::make_unique<Optimizer>(cfg_.optimizer_config(),
                                           model_->online_params());
  lr_sched_ = cfg_.lr_schedule_spec(steps_per_epoch());
  tau_sched_ = cfg_.tau_schedule_spec(steps_per_epoch());
}

long Trainer::steps_per_epoch() const {
  const std::size_t n = train_rows_.size();
  const std::size_t b = cfg_.batch_size;
  return static_cast<long>((n + b - 1) / b);
}

long Trainer::total_steps() const { return cfg_.epochs * steps_per_epoch(); }

void Trainer::set_audit(std::ostream* audit) {
  audit_ = audit;
  if (audit_ && step_ == 0) {
    *audit_ << "#myow-mining-audit v1\n"
            << "# mask=" << mask_text(miner_cfg_.predicate)
            << " window_s=" << fmt(miner_cfg_.window_s) << "\n"
            << "step,epoch,anchor,candidate,distance,rank\n";
  }
}

std::vector<std::size_t> Trainer::next_candidates() {
  const std::size_t n = train_rows_.size();
  const std::size_t L = miner_cfg_.pool_size;
  if (pool_cursor_ + L > pool_perm_.size()) {
    // Exhausted (or first use): reset the candidate loader with a fresh pass.
    auto perm = pool_rng_.permutation(n);
    pool_perm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pool_perm_[i] = train_rows_[perm[i]];
    pool_cursor_ = 0;
  }
  std::vector<std::size_t> out(pool_perm_.begin() + pool_cursor_,
                               pool_perm_.begin() + pool_cursor_ + L);
  pool_cursor_ += L;
  return out;
}

StepResult Trainer::train_step() {
  if (step_ >= total_steps())
    throw std::logic_error("train_step: run already finished");
  const long spe = steps_per_epoch();
  const long in_epoch = step_ % spe;
  if (in_epoch == 0) {
    auto perm = data_rng_.permutation(train_rows_.size());
    epoch_perm_.resize(train_rows_.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
      epoch_perm_[i] = train_rows_[perm[i]];
  }
  const std::size_t begin =
      static_cast<std::size_t>(in_epoch) * cfg_.batch_size;
  const std::size_t end =
      std::min(train_rows_.size(), begin + cfg_.batch_size);
  std::vector<std::size_t> batch(epoch_perm_.begin() + begin,
                                 epoch_perm_.begin() + end);

  StepConfig sc;
  sc.aug_transforms = aug_spec_;
  sc.mine_transforms = mine_spec_;
  sc.miner = miner_cfg_;
  sc.mining_enabled = !cfg_.byol_mode;
  sc.normalization = &norm_;
  sc.lambda_weight = cfg_.effective_lambda(step_, spe);
  sc.tau = schedule_value(tau_sched_, step_);
  sc.lr = schedule_value(lr_sched_, step_);

  std::vector<std::size_t> candidates;
  if (sc.mining_enabled) candidates = next_candidates();

  StepResult result = myow_step(*model_, *optimizer_, ds_, batch, candidates,
                                aug_rng_, mine_rng_, sc);
  if (!std::isfinite(result.total_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << " (epoch " << epoch()
        << "): aug=" << result.aug_loss << " mined=" << result.mined_loss
        << " total=" << result.total_loss;
    throw NanLossError(msg.str());
  }
  if (audit_ && sc.mining_enabled) {
    for (const auto& rec : result.mined)
      *audit_ << step_ << ',' << epoch() << ',' << rec.anchor_row << ','
              << rec.candidate_row << ',' << fmt(rec.distance) << ','
              << rec.rank << '\n';
  }
  ++step_;
  return result;
}

EpochStats Trainer::run_epoch() {
  const long spe = steps_per_epoch();
  EpochStats stats;
  stats.epoch = epoch();
  for (long i = 0; i < spe; ++i) {
    StepResult r = train_step();
    stats.aug_loss += r.aug_loss;
    stats.mined_loss += r.mined_loss;
    stats.total_loss += r.total_loss;
    stats.empty_pool_fallbacks += r.empty_pool_fallbacks;
  }
  stats.aug_loss /= static_cast<double>(spe);
  stats.mined_loss /= static_cast<double>(spe);
  stats.total_loss /= static_cast<double>(spe);
  const long last = step_ - 1;
  stats.lambda = cfg_.effective_lambda(last, spe);
  stats.tau = schedule_value(tau_sched_, last);
  stats.eta = schedule_value(lr_sched_, last);
  if (log_) write_log_line(stats);
  return stats;
}

void Trainer::run(const std::function<void(const EpochStats&)>& on_epoch) {
  while (step_ < total_steps()) {
    EpochStats stats = run_epoch();
    if (on_epoch) on_epoch(stats);
  }
}

void Trainer::write_log_line(const EpochStats& s) {
  if (s.epoch == 0) {
    *log_ << (cfg_.byol_mode ? "epoch,aug_loss,total_loss,lambda,tau,eta"
                             : "epoch,aug_loss,mined_loss,total_loss,lambda,"
                               "tau,eta")
          << '\n';
  }
  *log_ << s.epoch << ',' << fmt(s.aug_loss) << ',';
  if (!cfg_.byol_mode) *log_ << fmt(s.mined_loss) << ',';
  *log_ << fmt(s.total_loss) << ',' << fmt(s.lambda) << ',' << fmt(s.tau)
        << ',' << fmt(s.eta) << '\n';
  log_->flush();
}

Tensor Trainer::encode_dataset() {
  std::vector<double> values = ds_.rates;
  apply_norm(values, norm_);
  Tensor x = Tensor::from_values({ds_.num_bins(), ds_.d}, std::move(values));
  return model_->encode(x, false, Mode::Eval).detach();
}

Checkpoint Trainer::make_checkpoint() {
  Checkpoint c;
  c.config_text = cfg_.canonical_text();
  c.step = step_;
  c.epoch = epoch();
  c.optimizer_steps = optimizer_->step_count();
  auto append = [&c](NamedTensors t) {
    for (auto& [name, tensor] : t) c.tensors.emplace_back(name, tensor);
  };
  append(model_->online_params());
  append(model_->online_buffers());
  append(model_->target_params());
  append(model_->target_buffers());
  for (auto& [name, tensor] : optimizer_->state_tensors())
    c.tensors.emplace_back("opt." + name, tensor);

  auto as_tensor = [](const std::vector<std::size_t>& v) {
    std::vector<double> d(v.begin(), v.end());
    const std::size_t n = d.size();
    return Tensor::from_values({n}, std::move(d));
  };
  c.tensors.emplace_back("loader.batch.perm", as_tensor(epoch_perm_));
  c.tensors.emplace_back("loader.pool.perm", as_tensor(pool_perm_));
  c.tensors.emplace_back("loader.pool.cursor",
                         Tensor::scalar(static_cast<double>(pool_cursor_)));

  c.rng_states.emplace_back("data", data_rng_.state());
  c.rng_states.emplace_back("aug", aug_rng_.state());
  c.rng_states.emplace_back("mine", mine_rng_.state());
  c.rng_states.emplace_back("pool", pool_rng_.state());
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_text != cfg_.canonical_text())
    throw std::invalid_argument("restore: checkpoint built from a different config");

  std::vector<std::pair<std::string, const Tensor*>> stored;
  for (const auto& [name, tensor] : ckpt.tensors)
    stored.emplace_back(name, &tensor);
  auto find = [&stored](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : stored)
      if (n == name) return *t;
    throw std::invalid_argument("restore: checkpoint missing tensor " + name);
  };
  auto load_into = [&find](NamedTensors dst, const std::string& prefix = "") {
    for (auto& [name, tensor] : dst) {
      const Tensor& src = find(prefix + name);
      if (src.size() != tensor.size())
        throw std::invalid_argument("restore: size mismatch for " + name);
      tensor.mutable_values() = src.values();
    }
  };
  load_into(model_->online_params());
  load_into(model_->online_buffers());
  load_into(model_->target_params());
  load_into(model_->target_buffers());
  load_into(optimizer_->state_tensors(), "opt.");

  auto as_rows = [](const Tensor& t) {
    std::vector<std::size_t> out;
    out.reserve(t.size());
    for (double v : t.values()) out.push_back(static_cast<std::size_t>(v));
    return out;
  };
  epoch_perm_ = as_rows(find("loader.batch.perm"));
  pool_perm_ = as_rows(find("loader.pool.perm"));
  pool_cursor_ =
      static_cast<std::size_t>(find("loader.pool.cursor").value());

  for (const auto& [name, state] : ckpt.rng_states) {
    if (name == "data") data_rng_.set_state(state);
    else if (name == "aug") aug_rng_.set_state(state);
    else if (name == "mine") mine_rng_.set_state(state);
    else if (name == "pool") pool_rng_.set_state(state);
    else throw std::invalid_argument("restore: unknown rng stream " + name);
  }
  step_ = ckpt.step;
  optimizer_->set_step_count(ckpt.optimizer_steps);
}

}  // namespace myow
