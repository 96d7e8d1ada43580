#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "myow/ssl.hpp"
#include "support.hpp"

using namespace myow;
using testsupport::max_grad_error;

namespace {

ModelSpecs tiny_specs(ArchVariant variant, bool projectors, std::size_t d,
                      std::size_t rep) {
  ModelSpecs specs;
  specs.variant = variant;
  specs.encoder = MlpSpec{{d, 6, rep}};
  std::size_t q_width = rep;
  std::size_t r_width = rep;
  if (projectors) {
    const std::size_t pg = 3, ph = 3;
    specs.projector_g = MlpSpec{{rep, 5, pg}};
    q_width = pg;
    switch (variant) {
      case ArchVariant::Cascaded:
        specs.projector_h = MlpSpec{{pg, 5, ph}};
        r_width = ph;
        break;
      case ArchVariant::Parallel:
        specs.projector_h = MlpSpec{{rep, 5, ph}};
        r_width = ph;
        break;
      case ArchVariant::Single:
        r_width = pg;
        break;
    }
  }
  specs.predictor_q = MlpSpec{{q_width, 5, q_width}};
  specs.predictor_r = MlpSpec{{r_width, 5, r_width}};
  return specs;
}

// FD checks need a generic point: at the spec's zero-bias init an all-dead
// relu row yields an exactly-zero predictor row, which sits on the cosine
// loss's eps-clamp discontinuity where finite differences are meaningless.
void jitter_params(ModelState& state, Rng& rng) {
  for (auto& [name, t] : state.online_params())
    for (double& v : t.mutable_values()) v += rng.uniform(-0.3, 0.3);
  for (auto& [name, t] : state.target_params())
    for (double& v : t.mutable_values()) v += rng.uniform(-0.3, 0.3);
}

std::vector<Tensor> tensors_of(NamedTensors named) {
  std::vector<Tensor> out;
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

bool grads_all_zero(NamedTensors named) {
  for (auto& [name, t] : named) {
    if (!t.has_grad()) continue;
    for (double g : t.grad())
      if (g != 0.0) return false;
  }
  return true;
}

BinnedDataset toy_dataset(std::size_t bins, std::size_t d,
                          std::size_t bins_per_trial, unsigned seed) {
  BinnedDataset ds;
  ds.d = d;
  ds.bin_width_s = 0.1;
  Rng rng(seed);
  for (std::size_t i = 0; i < bins; ++i) {
    ds.timestamps.push_back(0.1 * static_cast<double>(i));
    ds.trial_ids.push_back(static_cast<long>(i / bins_per_trial));
    ds.labels.push_back(static_cast<int>(i % 8));
    for (std::size_t j = 0; j < d; ++j)
      ds.rates.push_back(rng.poisson(3.0));
  }
  return ds;
}

}  // namespace

TEST_CASE("cosine distance matches hand values and the tensor row-mean") {
  CHECK(cosine_distance({1, 0}, {2, 0}) == doctest::Approx(-1.0));
  CHECK(cosine_distance({1, 0}, {0, 3}) == doctest::Approx(0.0));
  CHECK(cosine_distance({1, 1}, {-2, -2}) == doctest::Approx(1.0));

  Rng rng(11);
  const std::size_t B = 7, d = 5;
  Tensor u = rand_normal({B, d}, 0.0, 1.0, rng);
  Tensor v = rand_normal({B, d}, 0.0, 1.0, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> ui(u.values().begin() + i * d,
                           u.values().begin() + (i + 1) * d);
    std::vector<double> vi(v.values().begin() + i * d,
                           v.values().begin() + (i + 1) * d);
    acc += cosine_distance(ui, vi);
  }
  CHECK(cosine_distance_rowmean(u, v).value() ==
        doctest::Approx(acc / B).epsilon(1e-12));
}

TEST_CASE("cosine row-mean gradient agrees with finite differences") {
  Rng rng(13);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t B = 2 + rng.index(5), d = 2 + rng.index(4);
    Tensor u = testsupport::random_leaf({B, d}, rng, -2.0, 2.0);
    Tensor v = testsupport::random_leaf({B, d}, rng, -2.0, 2.0);
    const double err = max_grad_error(
        [&] { return cosine_distance_rowmean(u, v); }, {u, v});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("augmented loss gradient agrees with finite differences") {
  const ArchVariant variants[] = {ArchVariant::Cascaded, ArchVariant::Parallel,
                                  ArchVariant::Single};
  Rng rng(17);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t d = 3, rep = 2, B = 4;
    Rng init(100 + inst);
    ModelState state(tiny_specs(variants[inst % 3], inst % 2 == 0, d, rep),
                     init);
    jitter_params(state, rng);
    Tensor x = rand_normal({B, d}, 0.0, 1.0, rng);
    Tensor xp = rand_normal({B, d}, 0.0, 1.0, rng);
    const double err = max_grad_error(
        [&] { return augmented_loss(state, x, xp); },
        tensors_of(state.online_params()), 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("mined loss gradient agrees with finite differences") {
  const ArchVariant variants[] = {ArchVariant::Cascaded, ArchVariant::Parallel,
                                  ArchVariant::Single};
  Rng rng(19);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t d = 3, rep = 2, B = 4;
    Rng init(200 + inst);
    ModelState state(tiny_specs(variants[inst % 3], inst % 2 == 1, d, rep),
                     init);
    jitter_params(state, rng);
    Tensor anchors = testsupport::random_leaf({B, rep}, rng, -1.5, 1.5);
    Tensor mined = rand_normal({B, rep}, 0.0, 1.0, rng);
    auto leaves = tensors_of(state.online_params());
    leaves.push_back(anchors);  // gradients also flow into the anchor reps
    const double err = max_grad_error(
        [&] { return mined_loss(state, anchors, mined); }, leaves, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("target network and mined representations are gradient-blocked") {
  for (ArchVariant variant : {ArchVariant::Cascaded, ArchVariant::Parallel,
                              ArchVariant::Single}) {
    Rng init(23), rng(29);
    ModelState state(tiny_specs(variant, true, 4, 3), init);
    Tensor x = rand_normal({5, 4}, 0.0, 1.0, rng);
    Tensor xp = rand_normal({5, 4}, 0.0, 1.0, rng);
    Tensor anchors = testsupport::random_leaf({5, 3}, rng);
    Tensor mined = testsupport::random_leaf({5, 3}, rng);
    Tensor loss =
        add(augmented_loss(state, x, xp), mined_loss(state, anchors, mined));
    loss.backward();
    CHECK(grads_all_zero(state.target_params()));
    // The mined candidates enter through detach: no gradient reaches them.
    CHECK((!mined.has_grad() ||
           std::all_of(mined.grad().begin(), mined.grad().end(),
                       [](double g) { return g == 0.0; })));
    // The online side did receive gradients somewhere.
    CHECK_FALSE(grads_all_zero(state.online_params()));
    for (auto& [n, t] : state.online_params()) t.zero_grad();
  }
}

TEST_CASE("EMA update blends parameters and buffers") {
  Rng init(31), rng(37);
  ModelState state(tiny_specs(ArchVariant::Cascaded, true, 4, 3), init);

  // Make online and target diverge: nudge online params and run a Train
  // forward so online running stats move while the target's stay put.
  for (auto& [name, t] : state.online_params())
    for (double& v : t.mutable_values()) v += 0.25;
  Tensor x = rand_normal({6, 4}, 0.0, 1.0, rng);
  state.project_aug(x, false, Mode::Train);

  auto snapshot = [](NamedTensors named) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (auto& [name, t] : named) out.emplace_back(name, t.values());
    return out;
  };
  const auto tp0 = snapshot(state.target_params());
  const auto tb0 = snapshot(state.target_buffers());
  const auto op = snapshot(state.online_params());
  const auto ob = snapshot(state.online_buffers());

  // tau = 1: frozen target.
  state.ema_update(1.0);
  auto tp1 = snapshot(state.target_params());
  for (std::size_t i = 0; i < tp0.size(); ++i)
    CHECK(tp1[i].second == tp0[i].second);
  auto tb1 = snapshot(state.target_buffers());
  for (std::size_t i = 0; i < tb0.size(); ++i)
    CHECK(tb1[i].second == tb0[i].second);

  auto online_values = [&](const std::string& target_name,
                           const auto& online_snap) {
    // "target.f.0.weight" pairs with "online.f.0.weight".
    const std::string want = "online." + target_name.substr(7);
    for (const auto& [n, v] : online_snap)
      if (n == want) return v;
    REQUIRE(false);
    return std::vector<double>{};
  };

  // tau = 0.5: exact midpoint on every parameter and buffer entry.
  state.ema_update(0.5);
  auto tp_half = snapshot(state.target_params());
  for (std::size_t i = 0; i < tp_half.size(); ++i) {
    const auto ov = online_values(tp_half[i].first, op);
    for (std::size_t j = 0; j < ov.size(); ++j)
      CHECK(tp_half[i].second[j] ==
            doctest::Approx(0.5 * tp0[i].second[j] + 0.5 * ov[j])
                .epsilon(1e-14));
  }
  auto tb_half = snapshot(state.target_buffers());
  bool buffer_moved = false;
  for (std::size_t i = 0; i < tb_half.size(); ++i) {
    const auto ov = online_values(tb_half[i].first, ob);
    for (std::size_t j = 0; j < ov.size(); ++j) {
      CHECK(tb_half[i].second[j] ==
            doctest::Approx(0.5 * tb0[i].second[j] + 0.5 * ov[j])
                .epsilon(1e-14));
      if (tb_half[i].second[j] != tb0[i].second[j]) buffer_moved = true;
    }
  }
  CHECK(buffer_moved);

  // tau = 0: hard copy of the online side.
  state.ema_update(0.0);
  auto tp_copy = snapshot(state.target_params());
  for (std::size_t i = 0; i < tp_copy.size(); ++i)
    CHECK(tp_copy[i].second == online_values(tp_copy[i].first, op));

  CHECK_THROWS(state.ema_update(1.5));
}

TEST_CASE("augmented loss is symmetric in the two views") {
  Rng init(41), rng(43);
  ModelState state(tiny_specs(ArchVariant::Cascaded, true, 4, 3), init);
  Tensor x = rand_normal({6, 4}, 0.0, 1.0, rng);
  Tensor xp = rand_normal({6, 4}, 0.0, 1.0, rng);
  const double fwd = augmented_loss(state, x, xp).value();
  const double rev = augmented_loss(state, xp, x).value();
  CHECK(fwd == doctest::Approx(rev).epsilon(1e-12));
}

TEST_CASE("myow_step runs a full iteration and reports consistent losses") {
  BinnedDataset ds = toy_dataset(64, 6, 8, 47);
  Rng init(53);
  ModelState state(tiny_specs(ArchVariant::Cascaded, false, 6, 4), init);
  Optimizer opt(OptimizerConfig{}, state.online_params());
  NormStats norm = compute_norm_stats(ds);

  StepConfig cfg;
  cfg.aug_transforms = TransformSpec::parse("jitter(1)|noise(0.5,1)");
  cfg.mine_transforms = TransformSpec::parse("jitter(1)");
  cfg.miner.k = 2;
  cfg.miner.pool_size = 16;
  cfg.normalization = &norm;
  cfg.lambda_weight = 0.4;
  cfg.tau = 0.9;
  cfg.lr = 0.01;

  std::vector<std::size_t> batch = {0, 9, 18, 27, 36, 45, 54, 63};
  std::vector<std::size_t> pool_rows;
  for (std::size_t i = 0; i < 16; ++i) pool_rows.push_back(i * 4);

  auto before = state.online_params();
  std::vector<std::vector<double>> before_vals;
  for (auto& [n, t] : before) before_vals.push_back(t.values());

  Rng aug_rng(59), mine_rng(61);
  StepResult r = myow_step(state, opt, ds, batch, pool_rows, aug_rng, mine_rng, cfg);
  CHECK(std::isfinite(r.total_loss));
  CHECK(r.total_loss ==
        doctest::Approx(r.aug_loss + cfg.lambda_weight * r.mined_loss)
            .epsilon(1e-12));
  CHECK(r.empty_pool_fallbacks == 0);
  CHECK(r.mined.size() == batch.size());
  for (const auto& rec : r.mined) {
    CHECK(rec.candidate_row < ds.num_bins());
    CHECK(rec.rank < cfg.miner.k);
  }
  // The optimizer moved the online parameters and grads were cleared.
  bool moved = false;
  auto after = state.online_params();
  for (std::size_t i = 0; i < after.size(); ++i)
    if (after[i].second.values() != before_vals[i]) moved = true;
  CHECK(moved);
  CHECK(grads_all_zero(state.online_params()));
}

TEST_CASE("lambda zero with mining enabled is bitwise identical to plain BYOL") {
  BinnedDataset ds = toy_dataset(48, 5, 8, 67);
  NormStats norm = compute_norm_stats(ds);

  auto make = [&] {
    Rng init(71);
    return std::make_unique<ModelState>(
        tiny_specs(ArchVariant::Cascaded, true, 5, 3), init);
  };
  auto a = make();
  auto b = make();
  Optimizer opt_a(OptimizerConfig{}, a->online_params());
  Optimizer opt_b(OptimizerConfig{}, b->online_params());

  StepConfig base;
  base.aug_transforms = TransformSpec::parse("jitter(1)|dropout(0,0.2)");
  base.mine_transforms = TransformSpec::parse("jitter(1)");
  base.miner.k = 2;
  base.miner.pool_size = 12;
  base.normalization = &norm;
  base.tau = 0.95;
  base.lr = 0.02;

  StepConfig myow_cfg = base;
  myow_cfg.mining_enabled = true;
  myow_cfg.lambda_weight = 0.0;
  StepConfig byol_cfg = base;
  byol_cfg.mining_enabled = false;

  Rng aug_a = Rng::stream(7, "aug"), aug_b = Rng::stream(7, "aug");
  Rng mine_a = Rng::stream(7, "mine"), mine_b = Rng::stream(7, "mine");
  std::vector<std::size_t> pool_rows;
  for (std::size_t i = 0; i < 12; ++i) pool_rows.push_back(i * 3);
  for (int step = 0; step < 5; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < 8; ++i)
      batch.push_back((step * 8 + i * 5) % ds.num_bins());
    myow_step(*a, opt_a, ds, batch, pool_rows, aug_a, mine_a, myow_cfg);
    myow_step(*b, opt_b, ds, batch, {}, aug_b, mine_b, byol_cfg);
  }

  auto same = [](NamedTensors x, NamedTensors y) {
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].second.values() != y[i].second.values()) return false;
    return true;
  };
  CHECK(same(a->online_params(), b->online_params()));
  CHECK(same(a->online_buffers(), b->online_buffers()));
  CHECK(same(a->target_params(), b->target_params()));
  CHECK(same(a->target_buffers(), b->target_buffers()));
  CHECK(same(opt_a.state_tensors(), opt_b.state_tensors()));
}

TEST_CASE("myow_step rejects an empty pool when mining is on") {
  BinnedDataset ds = toy_dataset(16, 3, 8, 73);
  Rng init(79);
  ModelState state(tiny_specs(ArchVariant::Single, false, 3, 2), init);
  Optimizer opt(OptimizerConfig{}, state.online_params());
  StepConfig cfg;
  cfg.miner.k = 1;
  cfg.miner.pool_size = 4;
  Rng aug_rng(83), mine_rng(89);
  CHECK_THROWS(
      myow_step(state, opt, ds, {0, 1, 2}, {}, aug_rng, mine_rng, cfg));
}
