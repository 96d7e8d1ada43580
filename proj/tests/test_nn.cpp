#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "myow/nn.hpp"
#include "support.hpp"

using namespace myow;
using testsupport::max_grad_error;
using testsupport::random_leaf;

TEST_CASE("linear layer gradients pass finite differences") {
  Rng rng(41);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t in = 1 + rng.index(5), out = 1 + rng.index(5),
                      B = 1 + rng.index(4);
    Linear lin(in, out, rng);
    Tensor x = random_leaf({B, in}, rng);
    CHECK(max_grad_error(
              [&] { return sum(mul(lin.forward(x, Mode::Train),
                                   lin.forward(x, Mode::Train))); },
              {x, lin.weight, lin.bias}) < 1e-4);
  }
}

TEST_CASE("linear init spans +-1/sqrt(fan_in) with zero bias") {
  Rng rng(43);
  Linear lin(100, 50, rng);
  const double bound = 1.0 / std::sqrt(100.0);
  double mx = 0.0;
  for (double w : lin.weight.values()) {
    CHECK(std::abs(w) <= bound);
    mx = std::max(mx, std::abs(w));
  }
  CHECK(mx > 0.9 * bound);  // actually spans the range
  for (double b : lin.bias.values()) CHECK(b == 0.0);
}

TEST_CASE("batchnorm train output matches a direct recomputation") {
  Rng rng(47);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t B = 2 + rng.index(6), d = 1 + rng.index(5);
    BatchNorm1d bn(d);
    bn.gamma.mutable_values() = rand_uniform({d}, 0.5, 2.0, rng).values();
    bn.beta.mutable_values() = rand_uniform({d}, -1.0, 1.0, rng).values();
    Tensor x = rand_uniform({B, d}, -3.0, 3.0, rng);
    Tensor y = bn.forward(x, Mode::TrainFrozenStats);
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < B; ++i) mean += x.values()[i * d + j];
      mean /= static_cast<double>(B);
      double var = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double c = x.values()[i * d + j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(B);  // biased, as normalization uses
      for (std::size_t i = 0; i < B; ++i) {
        const double expect = bn.gamma.at(j) * (x.values()[i * d + j] - mean) /
                                  std::sqrt(var + bn.eps) +
                              bn.beta.at(j);
        CHECK(y.values()[i * d + j] == doctest::Approx(expect).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("batchnorm gradients pass finite differences") {
  Rng rng(53);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t B = 2 + rng.index(4), d = 1 + rng.index(4);
    BatchNorm1d bn(d);
    bn.gamma.mutable_values() = rand_uniform({d}, 0.5, 2.0, rng).values();
    Tensor x = random_leaf({B, d}, rng, -2.0, 2.0);
    CHECK(max_grad_error(
              [&] {
                Tensor y = bn.forward(x, Mode::TrainFrozenStats);
                return sum(mul(y, y));
              },
              {x, bn.gamma, bn.beta}) < 1e-4);
  }
}

TEST_CASE("batchnorm running stats update only in full train mode") {
  Rng rng(59);
  BatchNorm1d bn(3, 0.1);
  Tensor x = rand_uniform({16, 3}, 1.0, 3.0, rng);
  const auto rm0 = bn.running_mean.values();
  const auto rv0 = bn.running_var.values();
  bn.forward(x, Mode::TrainFrozenStats);
  CHECK(bn.running_mean.values() == rm0);
  CHECK(bn.running_var.values() == rv0);
  bn.forward(x, Mode::Train);
  CHECK(bn.running_mean.values() != rm0);
  // One update from (0, 1) defaults: rm = 0.9*0 + 0.1*batch_mean.
  double batch_mean0 = 0.0;
  for (std::size_t i = 0; i < 16; ++i) batch_mean0 += x.values()[i * 3];
  batch_mean0 /= 16.0;
  CHECK(bn.running_mean.at(0) == doctest::Approx(0.1 * batch_mean0));
}

TEST_CASE("batchnorm eval mode uses running statistics, no graph") {
  BatchNorm1d bn(2);
  bn.running_mean.mutable_values() = {1.0, -1.0};
  bn.running_var.mutable_values() = {4.0, 0.25};
  Tensor x = Tensor::from_values({1, 2}, {3.0, 0.0});
  Tensor y = bn.forward(x, Mode::Eval);
  CHECK(y.values()[0] == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + bn.eps)));
  CHECK(y.values()[1] == doctest::Approx(1.0 / std::sqrt(0.25 + bn.eps)));
  CHECK_THROWS(bn.forward(Tensor::from_values({1, 2}, {0.0, 0.0}), Mode::Train));
}

TEST_CASE("mlp layout, param count and gradients") {
  Rng rng(61);
  MlpSpec spec;
  spec.widths = {6, 8, 4};
  CHECK(spec.param_count() == (6 * 8 + 8 + 2 * 8) + (8 * 4 + 4));
  Mlp mlp(spec, rng);
  NamedTensors params, buffers;
  mlp.collect("net", params, buffers);
  std::size_t total = 0;
  for (auto& [name, t] : params) {
    CHECK(name.rfind("net.", 0) == 0);
    total += t.size();
  }
  CHECK(total == spec.param_count());

  for (int inst = 0; inst < 100; ++inst) {
    Tensor x = random_leaf({3, 6}, rng);
    std::vector<Tensor> leaves = {x};
    for (auto& [name, t] : params) leaves.push_back(t);
    CHECK(max_grad_error(
              [&] {
                Tensor y = mlp.forward(x, Mode::TrainFrozenStats);
                return sum(mul(y, y));
              },
              leaves) < 1e-4);
  }
}

TEST_CASE("copy_state transfers params and buffers by name") {
  Rng rng(67);
  MlpSpec spec;
  spec.widths = {4, 5, 3};
  Mlp a(spec, rng), b(spec, rng);
  a.forward(rand_uniform({8, 4}, -1.0, 1.0, rng), Mode::Train);  // move stats
  copy_state(a, b);
  NamedTensors ap, ab, bp, bb;
  a.collect("", ap, ab);
  b.collect("", bp, bb);
  for (std::size_t i = 0; i < ap.size(); ++i)
    CHECK(ap[i].second.values() == bp[i].second.values());
  for (std::size_t i = 0; i < ab.size(); ++i)
    CHECK(ab[i].second.values() == bb[i].second.values());
}

TEST_CASE("adamw step matches a hand-computed update") {
  Tensor p = Tensor::from_values({2}, {1.0, -2.0});
  p.set_requires_grad(true);
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::AdamW;
  cfg.weight_decay = 0.01;
  Optimizer opt(cfg, {{"p", p}});

  auto run_step = [&](std::vector<double> g, double lr) {
    sum(mul(p, Tensor::from_values({2}, std::move(g)))).backward();
    opt.step(lr);
    opt.zero_grad();
  };

  // Reference trace computed alongside.
  std::vector<double> theta = {1.0, -2.0}, m = {0.0, 0.0}, v = {0.0, 0.0};
  auto ref_step = [&](std::vector<double> g, double lr, long t) {
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mhat = m[i] / (1.0 - std::pow(0.9, t));
      const double vhat = v[i] / (1.0 - std::pow(0.999, t));
      theta[i] -= lr * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * theta[i]);
    }
  };

  run_step({0.5, -1.0}, 0.1);
  ref_step({0.5, -1.0}, 0.1, 1);
  run_step({-0.2, 0.3}, 0.05);
  ref_step({-0.2, 0.3}, 0.05, 2);
  CHECK(p.values()[0] == doctest::Approx(theta[0]).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(theta[1]).epsilon(1e-12));
  CHECK(opt.step_count() == 2);
}

TEST_CASE("sgd momentum uses coupled weight decay") {
  Tensor p = Tensor::from_values({1}, {2.0});
  p.set_requires_grad(true);
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::SgdMomentum;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.1;
  Optimizer opt(cfg, {{"p", p}});

  sum(mul(p, Tensor::from_values({1}, {1.0}))).backward();  // g = 1
  opt.step(0.5);
  // v1 = 0.9*0 + (1 + 0.1*2) = 1.2; theta = 2 - 0.5*1.2 = 1.4
  CHECK(p.values()[0] == doctest::Approx(1.4).epsilon(1e-12));
  opt.zero_grad();
  sum(mul(p, Tensor::from_values({1}, {1.0}))).backward();
  opt.step(0.5);
  // v2 = 0.9*1.2 + (1 + 0.14) = 2.22; theta = 1.4 - 0.5*2.22 = 0.29
  CHECK(p.values()[0] == doctest::Approx(0.29).epsilon(1e-12));
}

TEST_CASE("missing gradients act as zero, non-finite gradients throw") {
  Tensor p = Tensor::from_values({1}, {1.0});
  p.set_requires_grad(true);
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::AdamW;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg, {{"p", p}});
  opt.step(0.1);  // no grad accumulated yet
  CHECK(p.values()[0] == doctest::Approx(1.0));

  sum(mul(p, Tensor::from_values({1}, {1.0}))).backward();
  p.mutable_values();  // keep p a leaf
  Tensor q = Tensor::from_values({1}, {1.0});
  q.set_requires_grad(true);
  Optimizer opt2(cfg, {{"q", q}});
  sum(div(q, Tensor::from_values({1}, {0.0}))).backward();  // inf grad
  CHECK_THROWS_WITH_AS(opt2.step(0.1),
                       doctest::Contains("non-finite gradient"),
                       std::runtime_error);
}

TEST_CASE("schedule hits its endpoints exactly") {
  ScheduleSpec s;
  s.base = 0.02;
  s.final_value = 0.001;
  s.warmup_steps = 10;
  s.total_steps = 100;
  s.warmup_from_zero = true;
  CHECK(schedule_value(s, 0) == 0.0);
  CHECK(schedule_value(s, 10) == 0.02);
  CHECK(schedule_value(s, 100) == 0.001);
  CHECK(schedule_value(s, 5) == doctest::Approx(0.01));
  // Monotone decrease after warmup for base > final.
  double prev = schedule_value(s, 10);
  for (long t = 11; t <= 100; ++t) {
    const double cur = schedule_value(s, t);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK_THROWS(schedule_value(s, -1));
  CHECK_THROWS(schedule_value(s, 101));

  ScheduleSpec tau;
  tau.base = 0.98;
  tau.final_value = 1.0;
  tau.warmup_steps = 0;
  tau.total_steps = 50;
  tau.warmup_from_zero = false;
  CHECK(schedule_value(tau, 0) == 0.98);
  CHECK(schedule_value(tau, 50) == 1.0);

  ScheduleSpec flat;
  flat.base = 0.5;
  flat.final_value = 0.5;
  flat.warmup_steps = 4;
  flat.total_steps = 20;
  flat.warmup_from_zero = false;
  flat.shape = ScheduleSpec::Shape::Constant;
  for (long t = 0; t <= 20; ++t) CHECK(schedule_value(flat, t) == 0.5);
}
