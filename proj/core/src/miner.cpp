#include "myow/miner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace myow {

void MinerConfig::validate() const {
  if (k == 0) throw std::invalid_argument("miner: k must be >= 1");
  if (pool_size == 0) throw std::invalid_argument("miner: L must be >= 1");
  if (k > pool_size) throw std::invalid_argument("miner: k must be <= L");
  if (predicate == MaskPredicate::ExcludeTimeWindow && window_s <= 0.0)
    throw std::invalid_argument("miner: time window must be positive");
}

bool mask_allows(const SampleMeta& anchor, const SampleMeta& candidate,
                 MaskPredicate predicate, double window_s) {
  if (candidate.source_index == anchor.source_index) return false;  // self
  switch (predicate) {
    case MaskPredicate::None:
      return true;
    case MaskPredicate::ExcludeSameTrial:
      if (!anchor.trial_id || !candidate.trial_id)
        throw std::invalid_argument(
            "mask: exclude-same-trial requires trial ids");
      return *anchor.trial_id != *candidate.trial_id;
    case MaskPredicate::ExcludeTimeWindow:
      return std::abs(anchor.timestamp - candidate.timestamp) >= window_s;
  }
  return true;
}

CandidatePool build_pool(std::vector<double> transformed, std::size_t d,
                         std::vector<SampleMeta> meta, const EmbedFn& embed) {
  if (meta.empty()) throw std::invalid_argument("build_pool: empty pool");
  if (d == 0 || transformed.size() != meta.size() * d)
    throw std::invalid_argument("build_pool: raw size mismatch");
  CandidatePool pool;
  pool.d = d;
  pool.embeddings = embed(transformed, meta.size(), d);
  if (pool.embeddings.size() % meta.size() != 0)
    throw std::invalid_argument("build_pool: ragged embeddings");
  pool.rep = pool.embeddings.size() / meta.size();
  pool.raw = std::move(transformed);
  pool.meta = std::move(meta);
  return pool;
}

namespace {

double pair_distance(const double* a, const double* b, std::size_t n,
                     MinerConfig::Metric metric) {
  if (metric == MinerConfig::Metric::SquaredEuclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dlt = a[i] - b[i];
      s += dlt * dlt;
    }
    return s;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  return -dot / denom;
}

}  // namespace

std::vector<Selection> knn_select(const std::vector<double>& anchor_embeddings,
                                  std::size_t n_anchors,
                                  const std::vector<SampleMeta>& anchor_meta,
                                  const CandidatePool& pool,
                                  const MinerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t L = pool.size();
  const std::size_t rep = pool.rep;
  if (anchor_embeddings.size() != n_anchors * rep)
    throw std::invalid_argument("knn_select: anchor embedding size mismatch");
  if (anchor_meta.size() != n_anchors)
    throw std::invalid_argument("knn_select: anchor meta size mismatch");

  std::vector<Selection> out(n_anchors);
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(L);
  for (std::size_t i = 0; i < n_anchors; ++i) {
    ranked.clear();
    const double* a = anchor_embeddings.data() + i * rep;
    for (std::size_t j = 0; j < L; ++j) {
      if (!mask_allows(anchor_meta[i], pool.meta[j], cfg.predicate,
                       cfg.window_s))
        continue;
      ranked.emplace_back(
          pair_distance(a, pool.embeddings.data() + j * rep, rep, cfg.metric),
          j);
    }
    if (ranked.empty()) continue;  // caller applies the per-anchor fallback
    const std::size_t kk = std::min(cfg.k, ranked.size());
    // (distance, index) order gives deterministic tie-breaking.
    std::partial_sort(ranked.begin(), ranked.begin() + kk, ranked.end());
    const std::size_t pick = rng.index(kk);
    out[i].valid = true;
    out[i].candidate = ranked[pick].second;
    out[i].distance = ranked[pick].first;
    out[i].rank = pick;
  }
  return out;
}

}  // namespace myow
