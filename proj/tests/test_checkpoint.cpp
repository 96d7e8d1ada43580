#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "myow/checkpoint.hpp"
#include "myow/config.hpp"
#include "myow/trainer.hpp"

using namespace myow;
namespace fs = std::filesystem;

namespace {

fs::path tmp_file(const char* name) {
  return fs::temp_directory_path() / (std::string("myow_ckpt_test_") + name);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config_text = "run.seed = 9\n";
  c.step = 123;
  c.epoch = 4;
  c.optimizer_steps = 123;
  Rng rng(3);
  c.tensors.emplace_back("w", rand_normal({3, 4}, 0.0, 1.0, rng));
  c.tensors.emplace_back("b", rand_uniform({4}, -1.0, 1.0, rng));
  // Awkward but representable values must survive verbatim.
  c.tensors.emplace_back(
      "edge", Tensor::from_values({4}, {0.1, 1e-300, -0.0, 5e300}));
  c.rng_states.emplace_back("data", std::array<std::uint64_t, 4>{1, 2, 3, 4});
  c.rng_states.emplace_back("aug",
                            std::array<std::uint64_t, 4>{~0ull, 7, 0, 42});
  return c;
}

BinnedDataset small_reach() {
  ReachSpec spec;
  spec.n_trials = 24;
  spec.neurons = 12;
  return gen_reach_synthetic(spec, 5);
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.encoder_blocks = 1;
  cfg.encoder_hidden = 8;
  cfg.representation_size = 4;
  cfg.predictor_hidden = 8;
  cfg.lr_warmup_epochs = 1;
  cfg.lambda = 0.2;
  cfg.lambda_warmup_epochs = 1;
  cfg.miner_k = 2;
  cfg.miner_pool = 32;
  cfg.aug_transforms = "jitter(1)|noise(0.5,0.5)";
  cfg.mine_transforms = "jitter(1)";
  cfg.checkpoint_every = 0;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint save/load round trip is bit-exact") {
  const Checkpoint c = sample_checkpoint();
  const auto path = tmp_file("roundtrip.ckpt");
  save_checkpoint(c, path.string());
  Checkpoint back = load_checkpoint(path.string());
  CHECK(back.config_text == c.config_text);
  CHECK(back.step == c.step);
  CHECK(back.epoch == c.epoch);
  CHECK(back.optimizer_steps == c.optimizer_steps);
  REQUIRE(back.tensors.size() == c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == c.tensors[i].first);
    CHECK(back.tensors[i].second.shape() == c.tensors[i].second.shape());
    CHECK(back.tensors[i].second.values() == c.tensors[i].second.values());
  }
  CHECK(back.rng_states == c.rng_states);

  // Saving the loaded copy reproduces the file byte for byte.
  const auto path2 = tmp_file("roundtrip2.ckpt");
  save_checkpoint(back, path2.string());
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(sa.substr(0, 8) == "MYOWCKP1");
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("corrupt checkpoint files are rejected") {
  const auto path = tmp_file("bad.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT" << std::string(64, '\0');
  }
  CHECK_THROWS(load_checkpoint(path.string()));

  // Truncation after the magic.
  save_checkpoint(sample_checkpoint(), path.string());
  {
    std::ifstream in(path, std::ios::binary);
    std::string full((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary);
    out << full.substr(0, full.size() / 2);
  }
  CHECK_THROWS(load_checkpoint(path.string()));

  // Unsupported version.
  save_checkpoint(sample_checkpoint(), path.string());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  CHECK_THROWS(load_checkpoint(path.string()));
  CHECK_THROWS(load_checkpoint(tmp_file("missing.ckpt").string()));
  fs::remove(path);
}

TEST_CASE("trainer checkpoints restore to a bitwise identical run") {
  BinnedDataset ds = small_reach();
  RunConfig cfg = small_config();

  // Reference: straight run of all epochs with the loss trace logged.
  Trainer full(cfg, ds);
  std::ostringstream full_log;
  full.set_log(&full_log);
  full.run();

  // Interrupted: run half, checkpoint, restore into a fresh trainer.
  Trainer first(cfg, ds);
  std::ostringstream first_log;
  first.set_log(&first_log);
  first.run_epoch();
  first.run_epoch();
  Checkpoint ckpt = first.make_checkpoint();
  const auto path = tmp_file("resume.ckpt");
  save_checkpoint(ckpt, path.string());

  Trainer second(cfg, ds);
  second.restore(load_checkpoint(path.string()));
  CHECK(second.epoch() == 2);
  std::ostringstream second_log;
  second.set_log(&second_log);
  second.run_epoch();
  second.run_epoch();

  // The concatenated interrupted trace equals the unbroken one line by line
  // (the resumed log re-emits no header since it starts mid-run).
  const std::string expected = full_log.str();
  const std::string stitched = first_log.str() + second_log.str();
  CHECK(stitched == expected);

  // Final model state matches bitwise too.
  Checkpoint end_full = full.make_checkpoint();
  Checkpoint end_second = second.make_checkpoint();
  REQUIRE(end_full.tensors.size() == end_second.tensors.size());
  for (std::size_t i = 0; i < end_full.tensors.size(); ++i) {
    CHECK(end_full.tensors[i].first == end_second.tensors[i].first);
    CHECK(end_full.tensors[i].second.values() ==
          end_second.tensors[i].second.values());
  }
  CHECK(end_full.rng_states == end_second.rng_states);
  fs::remove(path);
}

TEST_CASE("restore rejects a checkpoint from a different config") {
  BinnedDataset ds = small_reach();
  RunConfig cfg = small_config();
  Trainer t(cfg, ds);
  t.run_epoch();
  Checkpoint ckpt = t.make_checkpoint();

  RunConfig other = cfg;
  other.lr = 0.01;
  Trainer fresh(other, ds);
  CHECK_THROWS_WITH_AS(fresh.restore(ckpt), doctest::Contains("config"),
                       std::invalid_argument);

  // Same config but a tensor of the wrong size is also rejected.
  Checkpoint mangled = ckpt;
  for (auto& [name, tensor] : mangled.tensors)
    if (name == "online.f.l0.weight") tensor = Tensor::zeros({2, 2});
  Trainer fresh2(cfg, ds);
  CHECK_THROWS(fresh2.restore(mangled));
}
