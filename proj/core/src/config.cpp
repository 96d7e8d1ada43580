#include "myow/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace myow {

namespace {

std::string fmt_double(double v) { return format_double(v); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": " + v);
  }
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing junk");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": " + v);
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  const long d = parse_long(key, v);
  if (d < 0) throw std::invalid_argument("config: " + key + " must be >= 0");
  return static_cast<std::size_t>(d);
}

std::string shape_name(ScheduleSpec::Shape s) {
  return s == ScheduleSpec::Shape::Cosine ? "cosine" : "constant";
}

ScheduleSpec::Shape parse_shape(const std::string& key, const std::string& v) {
  if (v == "cosine") return ScheduleSpec::Shape::Cosine;
  if (v == "constant") return ScheduleSpec::Shape::Constant;
  throw std::invalid_argument("config: " + key + " must be cosine|constant");
}

std::string mask_name(MaskPredicate m) {
  switch (m) {
    case MaskPredicate::None: return "none";
    case MaskPredicate::ExcludeSameTrial: return "exclude-same-trial";
    case MaskPredicate::ExcludeTimeWindow: return "exclude-time-window";
  }
  return "none";
}

}  // namespace

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: run.epochs must be >= 1");
  if (batch_size < 1)
    throw std::invalid_argument("config: run.batch_size must be >= 1");
  if (checkpoint_every < 0)
    throw std::invalid_argument("config: run.checkpoint_every must be >= 0");
  if (encoder_blocks < 1 || encoder_hidden < 1 || representation_size < 1)
    throw std::invalid_argument("config: model widths must be >= 1");
  if (use_projectors && (projector_hidden < 1 || projector_out < 1))
    throw std::invalid_argument("config: projector widths must be >= 1");
  if (predictor_hidden < 1)
    throw std::invalid_argument("config: model.predictor_hidden must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("config: opt.lr must be > 0");
  if (weight_decay < 0.0)
    throw std::invalid_argument("config: opt.weight_decay must be >= 0");
  if (lr_warmup_epochs < 0)
    throw std::invalid_argument("config: opt.lr_warmup_epochs must be >= 0");
  if (tau_base < 0.0 || tau_base > 1.0 || tau_final < 0.0 || tau_final > 1.0)
    throw std::invalid_argument("config: ema.tau must lie in [0, 1]");
  if (lambda < 0.0) throw std::invalid_argument("config: loss.lambda must be >= 0");
  if (lambda_warmup_epochs < 0)
    throw std::invalid_argument("config: loss.lambda_warmup_epochs must be >= 0");
  if (!byol_mode) {
    miner_config().validate();
    if (miner_mask == MaskPredicate::ExcludeTimeWindow && miner_window_s <= 0.0)
      throw std::invalid_argument(
          "config: miner.window_s must be > 0 with the time-window mask");
  }
  TransformSpec::parse(aug_transforms).validate();
  TransformSpec::parse(mine_transforms).validate();
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  auto kv = [&](const char* k, const std::string& v) {
    out << k << " = " << v << "\n";
  };
  kv("run.seed", std::to_string(seed));
  kv("run.epochs", std::to_string(epochs));
  kv("run.batch_size", std::to_string(batch_size));
  kv("run.mode", byol_mode ? "byol" : "myow");
  kv("run.checkpoint_every", std::to_string(checkpoint_every));
  kv("run.grad_clip", "none");
  kv("run.early_stop", "none");
  kv("data.path", data_path);
  kv("model.variant", variant == ArchVariant::Cascaded   ? "cascaded"
                      : variant == ArchVariant::Parallel ? "parallel"
                                                         : "single");
  kv("model.encoder_blocks", std::to_string(encoder_blocks));
  kv("model.encoder_hidden", std::to_string(encoder_hidden));
  kv("model.representation_size", std::to_string(representation_size));
  kv("model.projectors", use_projectors ? "mlp" : "none");
  kv("model.projector_hidden", std::to_string(projector_hidden));
  kv("model.projector_out", std::to_string(projector_out));
  kv("model.predictor_hidden", std::to_string(predictor_hidden));
  kv("opt.kind",
     opt_kind == OptimizerConfig::Kind::AdamW ? "adamw" : "sgd-momentum");
  kv("opt.lr", fmt_double(lr));
  kv("opt.weight_decay", fmt_double(weight_decay));
  kv("opt.momentum", fmt_double(momentum));
  kv("opt.lr_warmup_epochs", std::to_string(lr_warmup_epochs));
  kv("opt.lr_schedule", shape_name(lr_schedule));
  kv("ema.tau_base", fmt_double(tau_base));
  kv("ema.tau_final", fmt_double(tau_final));
  kv("ema.tau_schedule", shape_name(tau_schedule));
  kv("loss.lambda", fmt_double(lambda));
  kv("loss.lambda_warmup_epochs", std::to_string(lambda_warmup_epochs));
  kv("miner.k", std::to_string(miner_k));
  kv("miner.pool_size", std::to_string(miner_pool));
  kv("miner.space",
     miner_space == MinerConfig::Space::Target ? "target" : "online");
  kv("miner.mask", mask_name(miner_mask));
  kv("miner.window_s", fmt_double(miner_window_s));
  kv("miner.metric", miner_metric == MinerConfig::Metric::SquaredEuclidean
                         ? "sqeuclidean"
                         : "cosine");
  kv("transforms.aug", TransformSpec::parse(aug_transforms).to_string());
  kv("transforms.mine", TransformSpec::parse(mine_transforms).to_string());
  return out.str();
}

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (++seen[key] > 1)
      throw std::invalid_argument("config: duplicate key " + key);

    if (key == "run.seed") {
      cfg.seed = static_cast<std::uint64_t>(
          std::stoull(val));
    } else if (key == "run.epochs") {
      cfg.epochs = parse_long(key, val);
    } else if (key == "run.batch_size") {
      cfg.batch_size = parse_size(key, val);
    } else if (key == "run.mode") {
      if (val == "myow") cfg.byol_mode = false;
      else if (val == "byol") cfg.byol_mode = true;
      else throw std::invalid_argument("config: run.mode must be myow|byol");
    } else if (key == "run.checkpoint_every") {
      cfg.checkpoint_every = parse_long(key, val);
    } else if (key == "run.grad_clip" || key == "run.early_stop") {
      // Reserved for later; only the disabled value is accepted.
      if (val != "none")
        throw std::invalid_argument("config: " + key +
                                    " is reserved, only `none` is accepted");
    } else if (key == "data.path") {
      cfg.data_path = val;
    } else if (key == "model.variant") {
      if (val == "cascaded") cfg.variant = ArchVariant::Cascaded;
      else if (val == "parallel") cfg.variant = ArchVariant::Parallel;
      else if (val == "single") cfg.variant = ArchVariant::Single;
      else
        throw std::invalid_argument(
            "config: model.variant must be cascaded|parallel|single");
    } else if (key == "model.encoder_blocks") {
      cfg.encoder_blocks = parse_size(key, val);
    } else if (key == "model.encoder_hidden") {
      cfg.encoder_hidden = parse_size(key, val);
    } else if (key == "model.representation_size") {
      cfg.representation_size = parse_size(key, val);
    } else if (key == "model.projectors") {
      if (val == "none") cfg.use_projectors = false;
      else if (val == "mlp") cfg.use_projectors = true;
      else
        throw std::invalid_argument("config: model.projectors must be none|mlp");
    } else if (key == "model.projector_hidden") {
      cfg.projector_hidden = parse_size(key, val);
    } else if (key == "model.projector_out") {
      cfg.projector_out = parse_size(key, val);
    } else if (key == "model.predictor_hidden") {
      cfg.predictor_hidden = parse_size(key, val);
    } else if (key == "opt.kind") {
      if (val == "adamw") cfg.opt_kind = OptimizerConfig::Kind::AdamW;
      else if (val == "sgd-momentum")
        cfg.opt_kind = OptimizerConfig::Kind::SgdMomentum;
      else
        throw std::invalid_argument(
            "config: opt.kind must be adamw|sgd-momentum");
    } else if (key == "opt.lr") {
      cfg.lr = parse_double(key, val);
    } else if (key == "opt.weight_decay") {
      cfg.weight_decay = parse_double(key, val);
    } else if (key == "opt.momentum") {
      cfg.momentum = parse_double(key, val);
    } else if (key == "opt.lr_warmup_epochs") {
      cfg.lr_warmup_epochs = parse_long(key, val);
    } else if (key == "opt.lr_schedule") {
      cfg.lr_schedule = parse_shape(key, val);
    } else if (key == "ema.tau_base") {
      cfg.tau_base = parse_double(key, val);
    } else if (key == "ema.tau_final") {
      cfg.tau_final = parse_double(key, val);
    } else if (key == "ema.tau_schedule") {
      cfg.tau_schedule = parse_shape(key, val);
    } else if (key == "loss.lambda") {
      cfg.lambda = parse_double(key, val);
    } else if (key == "loss.lambda_warmup_epochs") {
      cfg.lambda_warmup_epochs = parse_long(key, val);
    } else if (key == "miner.k") {
      cfg.miner_k = parse_size(key, val);
    } else if (key == "miner.pool_size") {
      cfg.miner_pool = parse_size(key, val);
    } else if (key == "miner.space") {
      if (val == "target") cfg.miner_space = MinerConfig::Space::Target;
      else if (val == "online") cfg.miner_space = MinerConfig::Space::Online;
      else
        throw std::invalid_argument("config: miner.space must be target|online");
    } else if (key == "miner.mask") {
      if (val == "none") cfg.miner_mask = MaskPredicate::None;
      else if (val == "exclude-same-trial")
        cfg.miner_mask = MaskPredicate::ExcludeSameTrial;
      else if (val == "exclude-time-window")
        cfg.miner_mask = MaskPredicate::ExcludeTimeWindow;
      else
        throw std::invalid_argument(
            "config: miner.mask must be "
            "none|exclude-same-trial|exclude-time-window");
    } else if (key == "miner.window_s") {
      cfg.miner_window_s = parse_double(key, val);
    } else if (key == "miner.metric") {
      if (val == "sqeuclidean")
        cfg.miner_metric = MinerConfig::Metric::SquaredEuclidean;
      else if (val == "cosine") cfg.miner_metric = MinerConfig::Metric::Cosine;
      else
        throw std::invalid_argument(
            "config: miner.metric must be sqeuclidean|cosine");
    } else if (key == "transforms.aug") {
      TransformSpec::parse(val);  // reject bad text at parse time
      cfg.aug_transforms = val;
    } else if (key == "transforms.mine") {
      TransformSpec::parse(val);
      cfg.mine_transforms = val;
    } else {
      throw std::invalid_argument("config: unknown key " + key);
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_text(text.str());
}

RunConfig RunConfig::preset(const std::string& name) {
  // Shared spiking-data defaults.
  RunConfig cfg;
  cfg.aug_transforms =
      "jitter(2)|dropout(0,0.2)|noise(1.5,0.5)|pepper(1.5,0.3,0.5)";
  cfg.mine_transforms = cfg.aug_transforms;
  if (name == "neural-appendix") {
    cfg.miner_k = 5;
    cfg.miner_pool = 1024;
    cfg.lambda = 1.0;
    cfg.lambda_warmup_epochs = 10;
    cfg.lr = 0.02;
    cfg.weight_decay = 2e-5;
    cfg.lr_warmup_epochs = 100;
    cfg.tau_base = 0.98;
    cfg.tau_final = 1.0;
    cfg.tau_schedule = ScheduleSpec::Shape::Cosine;
  } else if (name == "neural-main") {
    cfg.miner_k = 3;
    cfg.miner_pool = 512;
    cfg.lambda = 0.1;
    cfg.lambda_warmup_epochs = 10;
    cfg.lr = 0.02;
    cfg.weight_decay = 2e-5;
    cfg.lr_warmup_epochs = 100;
    cfg.tau_base = 0.98;
    cfg.tau_final = 0.98;
    cfg.tau_schedule = ScheduleSpec::Shape::Constant;
  } else if (name == "manifold") {
    // Dense low-rate manifold data: no spiking transforms, mine across the
    // whole set with noise-only views.
    cfg.aug_transforms = "noise(0.1,1)";
    cfg.mine_transforms = "none";
    cfg.miner_k = 1;
    cfg.miner_pool = 512;
    cfg.batch_size = 256;
    cfg.lambda = 0.1;
    cfg.lambda_warmup_epochs = 10;
    cfg.encoder_hidden = 128;
    cfg.representation_size = 32;
    cfg.lr = 0.02;
    cfg.weight_decay = 2e-5;
    cfg.lr_warmup_epochs = 10;
    cfg.epochs = 200;
    cfg.tau_base = 0.98;
    cfg.tau_final = 1.0;
  } else {
    throw std::invalid_argument("config: unknown preset " + name);
  }
  return cfg;
}

MlpSpec RunConfig::encoder_spec(std::size_t input_dim) const {
  MlpSpec spec;
  spec.widths.push_back(input_dim);
  for (std::size_t i = 0; i < encoder_blocks; ++i)
    spec.widths.push_back(encoder_hidden);
  spec.widths.push_back(representation_size);
  return spec;
}

ModelSpecs RunConfig::model_specs(std::size_t input_dim) const {
  ModelSpecs specs;
  specs.encoder = encoder_spec(input_dim);
  specs.variant = variant;
  std::size_t pred_in = representation_size;
  if (use_projectors) {
    specs.projector_g =
        MlpSpec{{representation_size, projector_hidden, projector_out}};
    const std::size_t h_in =
        variant == ArchVariant::Parallel ? representation_size : projector_out;
    specs.projector_h = MlpSpec{{h_in, projector_hidden, projector_out}};
    pred_in = projector_out;
  }
  specs.predictor_q = MlpSpec{{pred_in, predictor_hidden, pred_in}};
  specs.predictor_r = MlpSpec{{pred_in, predictor_hidden, pred_in}};
  return specs;
}

MinerConfig RunConfig::miner_config() const {
  MinerConfig m;
  m.k = miner_k;
  m.pool_size = miner_pool;
  m.space = miner_space;
  m.predicate = miner_mask;
  m.window_s = miner_window_s;
  m.metric = miner_metric;
  return m;
}

OptimizerConfig RunConfig::optimizer_config() const {
  OptimizerConfig o;
  o.kind = opt_kind;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.momentum = momentum;
  return o;
}

ScheduleSpec RunConfig::lr_schedule_spec(long steps_per_epoch) const {
  ScheduleSpec s;
  s.base = lr;
  s.final_value = lr_schedule == ScheduleSpec::Shape::Cosine ? 0.0 : lr;
  s.warmup_steps = std::min(lr_warmup_epochs, epochs) * steps_per_epoch;
  s.total_steps = epochs * steps_per_epoch;
  s.warmup_from_zero = true;
  s.shape = lr_schedule;
  return s;
}

ScheduleSpec RunConfig::tau_schedule_spec(long steps_per_epoch) const {
  ScheduleSpec s;
  s.base = tau_base;
  s.final_value = tau_final;
  s.warmup_steps = 0;
  s.total_steps = epochs * steps_per_epoch;
  s.shape = tau_schedule;
  return s;
}

double RunConfig::effective_lambda(long step, long steps_per_epoch) const {
  if (byol_mode) return 0.0;
  const long warm = lambda_warmup_epochs * steps_per_epoch;
  if (warm <= 0 || step >= warm) return lambda;
  return lambda * static_cast<double>(step) / static_cast<double>(warm);
}

}  // namespace myow
