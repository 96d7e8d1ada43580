// Microbenchmarks for the training hot path: dense matmul, k-NN selection,
// and a full training iteration.
#include <benchmark/benchmark.h>

#include "myow/miner.hpp"
#include "myow/ssl.hpp"

using namespace myow;

static void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = rand_normal({n, n}, 0.0, 1.0, rng);
  Tensor b = rand_normal({n, n}, 0.0, 1.0, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

static void BM_KnnSelect(benchmark::State& state) {
  const std::size_t L = static_cast<std::size_t>(state.range(0));
  const std::size_t B = 128, rep = 32;
  Rng rng(2);
  CandidatePool pool;
  pool.d = pool.rep = rep;
  pool.meta.resize(L);
  for (std::size_t j = 0; j < L; ++j) {
    pool.meta[j].timestamp = static_cast<double>(j);
    pool.meta[j].source_index = j;
    for (std::size_t t = 0; t < rep; ++t) {
      pool.embeddings.push_back(rng.normal(0.0, 1.0));
      pool.raw.push_back(0.0);
    }
  }
  std::vector<double> anchors;
  std::vector<SampleMeta> am(B);
  for (std::size_t i = 0; i < B; ++i) {
    am[i].timestamp = static_cast<double>(i);
    am[i].source_index = L + i;
    for (std::size_t t = 0; t < rep; ++t)
      anchors.push_back(rng.normal(0.0, 1.0));
  }
  MinerConfig cfg;
  cfg.k = 5;
  cfg.pool_size = L;
  Rng draw(3);
  for (auto _ : state) {
    auto sel = knn_select(anchors, B, am, pool, cfg, draw);
    benchmark::DoNotOptimize(sel.data());
  }
  state.SetItemsProcessed(state.iterations() * B * L);
}
BENCHMARK(BM_KnnSelect)->Arg(256)->Arg(1024)->Arg(4096);

static void BM_MyowStep(benchmark::State& state) {
  const std::size_t B = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64, rep = 32, n = 1024;
  BinnedDataset ds;
  ds.d = d;
  ds.bin_width_s = 0.1;
  Rng rng(4);
  for (std::size_t i = 0; i < n; ++i) {
    ds.timestamps.push_back(0.1 * static_cast<double>(i));
    ds.trial_ids.push_back(static_cast<long>(i / 8));
    ds.labels.push_back(static_cast<int>(i % 8));
    for (std::size_t j = 0; j < d; ++j) ds.rates.push_back(rng.poisson(2.0));
  }
  NormStats norm = compute_norm_stats(ds);

  ModelSpecs specs;
  specs.encoder = MlpSpec{{d, 64, 64, rep}};
  specs.predictor_q = MlpSpec{{rep, 128, rep}};
  specs.predictor_r = MlpSpec{{rep, 128, rep}};
  Rng init(5);
  ModelState model(specs, init);
  Optimizer opt(OptimizerConfig{}, model.online_params());

  StepConfig cfg;
  cfg.aug_transforms = TransformSpec::parse("jitter(1)|noise(1,0.5)");
  cfg.mine_transforms = TransformSpec::parse("jitter(1)");
  cfg.miner.k = 3;
  cfg.miner.pool_size = 512;
  cfg.normalization = &norm;
  cfg.lambda_weight = 0.5;

  std::vector<std::size_t> batch, pool_rows;
  for (std::size_t i = 0; i < B; ++i) batch.push_back((i * 7) % n);
  for (std::size_t i = 0; i < 512; ++i) pool_rows.push_back((i * 2) % n);
  Rng aug_rng(6), mine_rng(7);
  for (auto _ : state) {
    StepResult r =
        myow_step(model, opt, ds, batch, pool_rows, aug_rng, mine_rng, cfg);
    benchmark::DoNotOptimize(r.total_loss);
  }
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_MyowStep)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
