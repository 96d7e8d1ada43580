#pragma once

#include <string>
#include <vector>

#include "myow/data.hpp"
#include "myow/rng.hpp"

namespace myow {

struct TransformDescriptor {
  enum class Kind { TemporalJitter, Dropout, GaussianNoise, Pepper };
  Kind kind;
  // TemporalJitter: window_bins
  // Dropout:        p_min, p_max
  // GaussianNoise:  sigma, apply_prob
  // Pepper:         constant, p_activate, apply_prob
  double a = 0.0, b = 0.0, c = 0.0;
};

/// Ordered transform pipeline. Temporal jitter, when present, must be the
/// first entry: it is an index-level transform and value transforms apply to
/// the sample it resolves.
struct TransformSpec {
  std::vector<TransformDescriptor> ops;

  void validate() const;
  std::string to_string() const;  // config text form, `|`-separated
  static TransformSpec parse(const std::string& text);
};

struct ViewSample {
  std::vector<double> values;
  std::size_t source_index;  // dataset row after jitter resolution
};

/// Picks index + delta, delta uniform over the nonzero offsets within
/// `window_bins` that stay inside the dataset and the anchor's trial.
/// Falls back to the anchor itself when the window is 0 or no offset is valid.
std::size_t temporal_jitter(const BinnedDataset& ds, std::size_t index,
                            long window_bins, Rng& rng);

void neuron_dropout(std::vector<double>& x, double p_min, double p_max,
                    Rng& rng);
void gaussian_noise(std::vector<double>& x, double sigma, double apply_prob,
                    Rng& rng);
void pepper(std::vector<double>& x, double constant, double p_activate,
            double apply_prob, Rng& rng);

ViewSample apply_transform_set(const TransformSpec& spec,
                               const BinnedDataset& ds, std::size_t index,
                               Rng& rng);

}  // namespace myow
