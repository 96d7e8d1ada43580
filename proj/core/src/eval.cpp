#include "myow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "myow/nn.hpp"

namespace myow {

std::vector<double> default_wd_sweep() {
  std::vector<double> out;
  out.reserve(20);
  for (int i = 0; i < 20; ++i) {
    const double exponent = -10.0 + 20.0 * static_cast<double>(i) / 19.0;
    out.push_back(std::pow(2.0, exponent));
  }
  return out;
}

namespace {

double scaled_angle(double x, double y) {
  double a = std::atan2(y, x);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return 4.0 / std::numbers::pi * a;
}

double circular_distance(double scaled, int label) {
  double diff = std::fmod(std::abs(scaled - static_cast<double>(label)), 8.0);
  return std::min(diff, 8.0 - diff);
}

}  // namespace

int reach_label(double x, double y) {
  if (x == 0.0 && y == 0.0)
    throw std::invalid_argument("reach_label: (0,0) has no direction");
  const double v = scaled_angle(x, y);
  const long rounded = std::llround(v);  // half away from zero
  return static_cast<int>(rounded % 8);
}

AccuracyPair accuracy_metrics(const std::vector<std::array<double, 2>>& pred,
                              const std::vector<int>& labels) {
  if (pred.size() != labels.size())
    throw std::invalid_argument("accuracy_metrics: size mismatch");
  if (pred.empty()) return {};
  std::size_t acc = 0, dacc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 7)
      throw std::invalid_argument("accuracy_metrics: label outside 0..7");
    const double dist =
        circular_distance(scaled_angle(pred[i][0], pred[i][1]), labels[i]);
    if (dist < 1.0) ++acc;
    if (dist < 1.5) ++dacc;
  }
  const double n = static_cast<double>(pred.size());
  return {static_cast<double>(acc) / n, static_cast<double>(dacc) / n};
}

double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, std::size_t num_classes) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("macro_f1: size mismatch");
  if (truth.empty()) throw std::invalid_argument("macro_f1: empty input");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || static_cast<std::size_t>(p) >= num_classes || t < 0 ||
        static_cast<std::size_t>(t) >= num_classes)
      throw std::invalid_argument("macro_f1: class out of range");
    if (p == t)
      ++tp[p];
    else {
      ++fp[p];
      ++fn[t];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    total += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return total / static_cast<double>(num_classes);
}

// ---------------------------------------------------------------------------
// Linear readout

namespace {

struct ReadoutEval {
  double validation_metric = 0.0;
  AccuracyPair test_acc;
  double test_f1 = 0.0;
};

Tensor rows_of(const Tensor& reps, const std::vector<std::size_t>& rows) {
  return gather_rows(reps, rows).detach();
}

ReadoutEval train_and_score(const Tensor& reps, const std::vector<int>& labels,
                            const std::vector<std::size_t>& train_rows,
                            const std::vector<std::size_t>& val_rows,
                            const std::vector<std::size_t>& test_rows,
                            const ReadoutSpec& spec, double weight_decay,
                            std::uint64_t seed) {
  const std::size_t rep = reps.cols();
  const std::size_t out_dim =
      spec.task == ReadoutSpec::Task::ReachAngle ? 2 : spec.num_classes;

  Rng init = Rng::stream(seed, "readout-init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(rep));
  Tensor w = rand_uniform({rep, out_dim}, -bound, bound, init);
  w.set_requires_grad(true);
  Tensor b = Tensor::zeros({out_dim});
  b.set_requires_grad(true);

  Tensor x_train = rows_of(reps, train_rows);
  std::vector<int> y_train, y_val, y_test;
  for (auto i : train_rows) y_train.push_back(labels[i]);
  for (auto i : val_rows) y_val.push_back(labels[i]);
  for (auto i : test_rows) y_test.push_back(labels[i]);

  Tensor targets;  // reach task regression targets [cos, sin]
  if (spec.task == ReadoutSpec::Task::ReachAngle) {
    std::vector<double> t(y_train.size() * 2);
    for (std::size_t i = 0; i < y_train.size(); ++i) {
      const double theta =
          static_cast<double>(y_train[i]) * std::numbers::pi / 4.0;
      t[2 * i] = std::cos(theta);
      t[2 * i + 1] = std::sin(theta);
    }
    targets = Tensor::from_values({y_train.size(), 2}, std::move(t));
  }

  OptimizerConfig ocfg;
  ocfg.kind = OptimizerConfig::Kind::AdamW;
  ocfg.lr = spec.lr;
  ocfg.weight_decay = weight_decay;
  Optimizer opt(ocfg, {{"w", w}, {"b", b}});
  for (long epoch = 0; epoch < spec.epochs; ++epoch) {
    Tensor logits = add_rowvec(matmul(x_train, w), b);
    Tensor loss;
    if (spec.task == ReadoutSpec::Task::ReachAngle) {
      Tensor diff = sub(logits, targets);
      loss = mean(mul(diff, diff));
    } else {
      loss = softmax_cross_entropy(logits, y_train);
    }
    loss.backward();
    opt.step(spec.lr);
    opt.zero_grad();
  }

  auto predict = [&](const std::vector<std::size_t>& rows,
                     std::vector<std::array<double, 2>>* xy,
                     std::vector<int>* cls) {
    Tensor logits = add_rowvec(matmul(rows_of(reps, rows), w), b);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* row = logits.values().data() + i * out_dim;
      if (spec.task == ReadoutSpec::Task::ReachAngle) {
        xy->push_back({row[0], row[1]});
        if (cls) cls->push_back(row[0] == 0.0 && row[1] == 0.0
                                    ? 0
                                    : reach_label(row[0], row[1]));
      } else if (cls) {
        cls->push_back(static_cast<int>(
            std::max_element(row, row + out_dim) - row));
      }
    }
  };

  ReadoutEval result;
  if (spec.task == ReadoutSpec::Task::ReachAngle) {
    std::vector<std::array<double, 2>> val_xy, test_xy;
    predict(val_rows, &val_xy, nullptr);
    predict(test_rows, &test_xy, nullptr);
    result.validation_metric = accuracy_metrics(val_xy, y_val).accuracy;
    result.test_acc = accuracy_metrics(test_xy, y_test);
    std::vector<int> test_cls;
    for (const auto& p : test_xy)
      test_cls.push_back(p[0] == 0.0 && p[1] == 0.0 ? 0
                                                    : reach_label(p[0], p[1]));
    result.test_f1 = macro_f1(test_cls, y_test, 8);
  } else {
    std::vector<std::array<double, 2>> unused;
    std::vector<int> val_cls, test_cls;
    predict(val_rows, &unused, &val_cls);
    predict(test_rows, &unused, &test_cls);
    result.validation_metric = macro_f1(val_cls, y_val, spec.num_classes);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_cls.size(); ++i)
      if (test_cls[i] == y_test[i]) ++hits;
    const double acc =
        static_cast<double>(hits) / static_cast<double>(test_cls.size());
    result.test_acc = {acc, acc};
    result.test_f1 = macro_f1(test_cls, y_test, spec.num_classes);
  }
  return result;
}

}  // namespace

DecodeResult evaluate_readout(const Tensor& representations,
                              const std::vector<int>& labels,
                              const SplitAssignment& split,
                              const ReadoutSpec& spec, std::uint64_t seed) {
  if (representations.rows() != labels.size() ||
      labels.size() != split.tags.size())
    throw std::invalid_argument("evaluate_readout: size mismatch");
  const auto train_rows = split.indices(SplitTag::Train);
  const auto val_rows = split.indices(SplitTag::Val);
  const auto test_rows = split.indices(spec.report_tag);
  if (train_rows.empty() || val_rows.empty() || test_rows.empty())
    throw std::invalid_argument("evaluate_readout: empty split");
  {
    std::set<int> classes;
    for (auto i : train_rows) classes.insert(labels[i]);
    if (classes.size() < 2)
      throw std::invalid_argument(
          "evaluate_readout: train split has a single class");
  }

  const std::vector<double> sweep =
      spec.weight_decays.empty() ? default_wd_sweep() : spec.weight_decays;
  DecodeResult best;
  double best_val = -1.0;
  for (double wd : sweep) {  // ascending: ties keep the smaller decay
    ReadoutEval e = train_and_score(representations, labels, train_rows,
                                    val_rows, test_rows, spec, wd, seed);
    if (e.validation_metric > best_val) {
      best_val = e.validation_metric;
      best.accuracy = e.test_acc.accuracy;
      best.delta_accuracy = e.test_acc.delta_accuracy;
      best.macro_f1 = e.test_f1;
      best.chosen_weight_decay = wd;
    }
  }
  const std::size_t n_classes =
      spec.task == ReadoutSpec::Task::ReachAngle ? 8 : spec.num_classes;
  best.per_class_counts.assign(n_classes, 0);
  for (auto i : test_rows) {
    const int y = labels[i];
    if (y >= 0 && static_cast<std::size_t>(y) < n_classes)
      ++best.per_class_counts[y];
  }
  return best;
}

}  // namespace myow
