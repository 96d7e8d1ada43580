#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "myow/data.hpp"
#include "myow/tensor.hpp"

namespace myow {

struct ReadoutSpec {
  enum class Task { ReachAngle, Multiclass } task = Task::ReachAngle;
  long epochs = 100;
  double lr = 0.01;
  std::vector<double> weight_decays;  // empty => default_wd_sweep()
  std::size_t num_classes = 8;
  SplitTag report_tag = SplitTag::Test;  // rows the metrics are reported on
};

/// 20 weight decays log-spaced over [2^-10, 2^10].
std::vector<double> default_wd_sweep();

struct DecodeResult {
  double accuracy = 0.0;
  double delta_accuracy = 0.0;
  double macro_f1 = 0.0;
  double chosen_weight_decay = 0.0;
  std::vector<std::size_t> per_class_counts;  // true test labels per class
};

/// Nearest of the 8 reach directions for a predicted (x, y) readout,
/// scaled angle rounded half away from zero, circular mod 8.
int reach_label(double x, double y);

struct AccuracyPair {
  double accuracy = 0.0;
  double delta_accuracy = 0.0;
};

/// Acc / delta-Acc over predicted (x, y) pairs: a prediction is a true
/// positive when its scaled angle is within 1.0 (resp. 1.5) of the label,
/// distance taken circularly mod 8.
AccuracyPair accuracy_metrics(const std::vector<std::array<double, 2>>& pred,
                              const std::vector<int>& labels);

/// Unweighted mean of per-class F1; a class absent from both prediction and
/// truth contributes 0.
double macro_f1(const std::vector<int>& predicted,
                const std::vector<int>& truth, std::size_t num_classes);

/// Trains the linear readout on frozen representations for every weight
/// decay in the sweep, selects on the validation metric (ties to the
/// smaller decay), reports on the test split.
DecodeResult evaluate_readout(const Tensor& representations,
                              const std::vector<int>& labels,
                              const SplitAssignment& split,
                              const ReadoutSpec& spec, std::uint64_t seed);

}  // namespace myow
