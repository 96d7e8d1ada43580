#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "myow/rng.hpp"

namespace myow {

enum class MaskPredicate { None, ExcludeSameTrial, ExcludeTimeWindow };

struct MinerConfig {
  std::size_t k = 1;
  std::size_t pool_size = 512;  // L
  enum class Space { Target, Online } space = Space::Target;
  MaskPredicate predicate = MaskPredicate::None;
  double window_s = 0.0;  // ExcludeTimeWindow parameter
  enum class Metric { SquaredEuclidean, Cosine } metric = Metric::SquaredEuclidean;

  void validate() const;
};

struct SampleMeta {
  double timestamp = 0.0;
  std::optional<long> trial_id;
  std::size_t source_index = 0;  // dataset row
};

struct CandidatePool {
  std::vector<double> raw;         // L x d transformed candidate samples
  std::vector<double> embeddings;  // L x rep
  std::vector<SampleMeta> meta;    // row-aligned with raw/embeddings
  std::size_t d = 0;
  std::size_t rep = 0;

  std::size_t size() const { return meta.size(); }
};

/// True when `candidate` may serve as a mined view for `anchor`. The anchor's
/// own dataset row is always excluded.
bool mask_allows(const SampleMeta& anchor, const SampleMeta& candidate,
                 MaskPredicate predicate, double window_s);

using EmbedFn =
    std::function<std::vector<double>(const std::vector<double>& raw,
                                      std::size_t count, std::size_t width)>;

/// Assembles the per-iteration pool: transformed candidate samples, their
/// embeddings in the configured space, and row-aligned metadata.
CandidatePool build_pool(std::vector<double> transformed, std::size_t d,
                         std::vector<SampleMeta> meta, const EmbedFn& embed);

struct Selection {
  bool valid = false;        // false: no candidate survived the mask
  std::size_t candidate = 0; // pool row
  double distance = 0.0;
  std::size_t rank = 0;      // 0 = nearest among valid candidates
};

/// For each anchor: distances to all mask-valid candidates, the k nearest
/// (ties broken by lowest pool index), one of them drawn uniformly.
/// When fewer than k candidates are valid, all of them form the neighbor set.
/// RNG draws are consumed in anchor order, one per valid anchor.
std::vector<Selection> knn_select(const std::vector<double>& anchor_embeddings,
                                  std::size_t n_anchors,
                                  const std::vector<SampleMeta>& anchor_meta,
                                  const CandidatePool& pool,
                                  const MinerConfig& cfg, Rng& rng);

}  // namespace myow
