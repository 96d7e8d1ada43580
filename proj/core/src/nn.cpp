#include "myow/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace myow {

std::vector<Tensor> Module::parameters() {
  NamedTensors params, buffers;
  collect("", params, buffers);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (auto& [name, t] : params) out.push_back(t);
  return out;
}

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = rand_uniform({in, out}, -bound, bound, rng);
  weight.set_requires_grad(true);
  bias = Tensor::zeros({out});
  bias.set_requires_grad(true);
}

Tensor Linear::forward(const Tensor& x, Mode) {
  if (x.cols() != weight.rows())
    throw std::invalid_argument("linear: input width mismatch");
  return add_rowvec(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedTensors& params,
                     NamedTensors&) {
  params.emplace_back(join(prefix, "weight"), weight);
  params.emplace_back(join(prefix, "bias"), bias);
}

// ---------------------------------------------------------------------------
// BatchNorm1d

BatchNorm1d::BatchNorm1d(std::size_t width, double momentum, double eps)
    : momentum(momentum), eps(eps) {
  gamma = Tensor::full({width}, 1.0);
  gamma.set_requires_grad(true);
  beta = Tensor::zeros({width});
  beta.set_requires_grad(true);
  running_mean = Tensor::zeros({width});
  running_var = Tensor::full({width}, 1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
  if (x.cols() != gamma.size())
    throw std::invalid_argument("batchnorm: width mismatch");
  const std::size_t B = x.rows();
  Tensor xhat;
  if (mode == Mode::Eval) {
    xhat = div_rowvec(add_rowvec(x, neg(running_mean)),
                      sqrt_elem(add_scalar(running_var, eps)));
  } else {
    if (B < 2)
      throw std::invalid_argument("batchnorm: train mode requires batch >= 2");
    Tensor batch_mean = mean_axis0(x);
    Tensor centered = add_rowvec(x, neg(batch_mean));
    Tensor batch_var = mean_axis0(mul(centered, centered));
    xhat = div_rowvec(centered, sqrt_elem(add_scalar(batch_var, eps)));
    if (mode == Mode::Train) {
      // Running stats track the unbiased batch variance.
      const double unbias =
          static_cast<double>(B) / static_cast<double>(B - 1);
      auto& rm = running_mean.mutable_values();
      auto& rv = running_var.mutable_values();
      for (std::size_t j = 0; j < rm.size(); ++j) {
        rm[j] = (1.0 - momentum) * rm[j] + momentum * batch_mean.at(j);
        rv[j] = (1.0 - momentum) * rv[j] + momentum * unbias * batch_var.at(j);
      }
    }
  }
  return add_rowvec(mul_rowvec(xhat, gamma), beta);
}

void BatchNorm1d::collect(const std::string& prefix, NamedTensors& params,
                          NamedTensors& buffers) {
  params.emplace_back(join(prefix, "gamma"), gamma);
  params.emplace_back(join(prefix, "beta"), beta);
  buffers.emplace_back(join(prefix, "running_mean"), running_mean);
  buffers.emplace_back(join(prefix, "running_var"), running_var);
}

Tensor ReluLayer::forward(const Tensor& x, Mode) { return relu(x); }

// ---------------------------------------------------------------------------
// Mlp

std::size_t MlpSpec::param_count() const {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need >= 1 linear");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += widths[l] * widths[l + 1] + widths[l + 1];  // weight + bias
    const bool last = l + 2 == widths.size();
    if ((last && final_batchnorm) || (!last && block_batchnorm))
      n += 2 * widths[l + 1];  // gamma + beta
  }
  return n;
}

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  if (spec_.widths.size() < 2)
    throw std::invalid_argument("mlp: need >= 1 linear");
  for (std::size_t w : spec_.widths)
    if (w == 0) throw std::invalid_argument("mlp: zero width");
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const bool last = l + 2 == spec_.widths.size();
    layers_.push_back(
        std::make_unique<Linear>(spec_.widths[l], spec_.widths[l + 1], rng));
    if ((last && spec_.final_batchnorm) || (!last && spec_.block_batchnorm))
      layers_.push_back(std::make_unique<BatchNorm1d>(spec_.widths[l + 1],
                                                      spec_.bn_momentum));
    if (!last || spec_.final_activation)
      layers_.push_back(std::make_unique<ReluLayer>());
  }
}

Tensor Mlp::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, mode);
  return h;
}

void Mlp::collect(const std::string& prefix, NamedTensors& params,
                  NamedTensors& buffers) {
  std::size_t i = 0;
  for (auto& layer : layers_)
    layer->collect(join(prefix, "l" + std::to_string(i++)), params, buffers);
}

void copy_state(Module& src, Module& dst) {
  NamedTensors sp, sb, dp, db;
  src.collect("", sp, sb);
  dst.collect("", dp, db);
  auto copy_all = [](NamedTensors& from, NamedTensors& to) {
    if (from.size() != to.size())
      throw std::invalid_argument("copy_state: structural mismatch");
    for (std::size_t i = 0; i < from.size(); ++i) {
      if (from[i].first != to[i].first ||
          from[i].second.size() != to[i].second.size())
        throw std::invalid_argument("copy_state: structural mismatch at " +
                                    from[i].first);
      to[i].second.mutable_values() = from[i].second.values();
    }
  };
  copy_all(sp, dp);
  copy_all(sb, db);
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(OptimizerConfig cfg, NamedTensors params)
    : cfg_(cfg), params_(std::move(params)) {
  for (auto& [name, p] : params_) {
    moment1_.push_back(Tensor::zeros(p.shape()));
    if (cfg_.kind == OptimizerConfig::Kind::AdamW)
      moment2_.push_back(Tensor::zeros(p.shape()));
  }
}

void Optimizer::step(double lr) {
  ++step_count_;
  const long t = step_count_;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& [name, p] = params_[pi];
    auto& theta = p.mutable_values();
    std::vector<double> zero;
    const std::vector<double>* gptr;
    if (p.has_grad()) {
      gptr = &p.grad();
    } else {
      zero.assign(theta.size(), 0.0);
      gptr = &zero;
    }
    const std::vector<double>& g = *gptr;
    for (double gv : g)
      if (!std::isfinite(gv))
        throw std::runtime_error("optimizer: non-finite gradient in " + name);
    if (cfg_.kind == OptimizerConfig::Kind::AdamW) {
      auto& m = moment1_[pi].mutable_values();
      auto& v = moment2_[pi].mutable_values();
      const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                          cfg_.weight_decay * theta[i]);
      }
    } else {
      auto& v = moment1_[pi].mutable_values();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double grad = g[i] + cfg_.weight_decay * theta[i];  // coupled
        v[i] = cfg_.momentum * v[i] + grad;
        theta[i] -= lr * v[i];
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

NamedTensors Optimizer::state_tensors() {
  NamedTensors out;
  const bool adamw = cfg_.kind == OptimizerConfig::Kind::AdamW;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].first + (adamw ? ".m" : ".vel"), moment1_[i]);
    if (adamw) out.emplace_back(params_[i].first + ".v", moment2_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schedule

double schedule_value(const ScheduleSpec& spec, long step) {
  if (step < 0 || step > spec.total_steps)
    throw std::invalid_argument("schedule_value: step out of range");
  if (step < spec.warmup_steps) {
    const double start = spec.warmup_from_zero ? 0.0 : spec.base;
    const double frac =
        static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
    return start + frac * (spec.base - start);
  }
  if (spec.shape == ScheduleSpec::Shape::Constant) return spec.base;
  const long span = spec.total_steps - spec.warmup_steps;
  if (span == 0) return spec.base;
  if (step == spec.warmup_steps) return spec.base;
  if (step == spec.total_steps) return spec.final_value;
  const double frac = static_cast<double>(step - spec.warmup_steps) /
                      static_cast<double>(span);
  return spec.final_value + (spec.base - spec.final_value) * 0.5 *
                                (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace myow
