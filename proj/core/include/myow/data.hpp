#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "myow/rng.hpp"

namespace myow {

/// Matrix of binned firing rates [T x d] with per-bin metadata.
struct BinnedDataset {
  std::vector<double> rates;  // row-major T x d
  std::size_t d = 0;
  double bin_width_s = 0.1;
  std::vector<double> timestamps;  // [T], seconds
  std::vector<long> trial_ids;     // empty when the dataset has no trials
  std::vector<int> labels;         // [T]
  bool normalized = false;

  std::size_t num_bins() const { return timestamps.size(); }
  bool has_trials() const { return !trial_ids.empty(); }
  const double* row(std::size_t i) const { return rates.data() + i * d; }
  std::vector<double> row_copy(std::size_t i) const {
    return {row(i), row(i) + d};
  }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

/// Shortest decimal text that parses back to exactly `v`; used by every
/// text format in the project.
std::string format_double(double v);

enum class SplitTag { Train, Val, Test };

struct SplitAssignment {
  std::vector<SplitTag> tags;  // [T]

  std::vector<std::size_t> indices(SplitTag tag) const;
};

// Text dataset format, full-precision CSV body. See save_dataset for layout.
BinnedDataset load_dataset(const std::string& path);
void save_dataset(const BinnedDataset& ds, const std::string& path);

SplitAssignment load_split(const std::string& path, std::size_t expected_bins);
void save_split(const SplitAssignment& split, const BinnedDataset& ds,
                const std::string& path);

/// Contiguous-in-time split; boundaries snap to trial edges when trial ids
/// are present so a trial never spans two tags.
SplitAssignment temporal_split(
    const BinnedDataset& ds,
    std::array<double, 3> ratios = {0.7, 0.1, 0.2});

// ---------------------------------------------------------------------------
// Synthetic generators

struct ReachSpec {
  std::size_t n_trials = 164;
  std::size_t bins_per_trial = 8;
  std::size_t neurons = 60;
  double bin_width_s = 0.1;
  double kappa = 2.0;             // tuning-curve concentration
  double gain_min = 4.0;          // peak counts per bin
  double gain_max = 10.0;
  double baseline = 0.2;
  double drift_rho = 0.9;         // within-trial latent autocorrelation
  double drift_scale = 0.15;      // radians
};

struct ReachGroundTruth {
  std::vector<double> preferred;  // per neuron, radians
  std::vector<double> gain;
  double baseline = 0.0;
  double kappa = 0.0;
};

/// Eight reach directions, von-Mises tuned Poisson counts, AR(1) within-trial
/// drift so adjacent bins are correlated.
BinnedDataset gen_reach_synthetic(const ReachSpec& spec, std::uint64_t seed,
                                  ReachGroundTruth* ground_truth = nullptr);

struct LatentManifoldSpec {
  std::size_t shapes = 3;  // label factor
  std::size_t orientations = 12;
  std::size_t scales = 6;
  std::size_t xs = 8;
  std::size_t ys = 8;
  double kept_orientation_fraction = 0.5;
  double kept_scale_fraction = 0.5;
  double rate = 0.075;  // fraction of the candidate set kept as train
  std::size_t obs_dim = 64;
  double obs_noise = 0.02;
};

struct ManifoldPair {
  BinnedDataset train;
  BinnedDataset test;
  std::vector<std::array<std::size_t, 5>> train_latents;
  std::vector<std::array<std::size_t, 5>> test_latents;
};

/// Enumerates the latent grid, keeps a subset of orientation/scale values,
/// downsamples the kept candidates at `rate` to form the train set; the rest
/// of the full grid forms the test set. Observations are a fixed random
/// two-layer nonlinear embedding of the latent coordinates.
ManifoldPair gen_latent_manifold(const LatentManifoldSpec& spec,
                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std_dev;  // floored at 1e-6
};

/// Per-neuron statistics over the rows tagged Train (or all rows when the
/// split is absent).
NormStats compute_norm_stats(const BinnedDataset& ds,
                             const SplitAssignment* split = nullptr);

/// Per-neuron z-score in place. Rejects datasets already normalized.
void normalize(BinnedDataset& ds, const NormStats& stats);

/// Z-scores a single sample (or row-major batch) in place.
void apply_norm(std::vector<double>& values, const NormStats& stats);

}  // namespace myow
