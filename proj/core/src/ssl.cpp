#include "myow/ssl.hpp"

#include <cmath>
#include <stdexcept>

namespace myow {

namespace {

std::unique_ptr<Module> make_module(const std::optional<MlpSpec>& spec,
                                    Rng& rng) {
  if (!spec) return std::make_unique<Identity>();
  return std::make_unique<Mlp>(*spec, rng);
}

void collect_prefixed(Module& m, const std::string& prefix, NamedTensors& params,
                      NamedTensors& buffers) {
  m.collect(prefix, params, buffers);
}

}  // namespace

ModelState::ModelState(ModelSpecs specs, Rng& init_rng)
    : specs_(std::move(specs)) {
  f_ = std::make_unique<Mlp>(specs_.encoder, init_rng);
  g_ = make_module(specs_.projector_g, init_rng);
  h_ = make_module(specs_.projector_h, init_rng);
  q_ = std::make_unique<Mlp>(specs_.predictor_q, init_rng);
  r_ = std::make_unique<Mlp>(specs_.predictor_r, init_rng);
  tf_ = std::make_unique<Mlp>(specs_.encoder, init_rng);
  tg_ = make_module(specs_.projector_g, init_rng);
  th_ = make_module(specs_.projector_h, init_rng);
  // xi = theta at initialization
  copy_state(*f_, *tf_);
  copy_state(*g_, *tg_);
  copy_state(*h_, *th_);
}

Tensor ModelState::encode(const Tensor& x, bool target, Mode mode) {
  return (target ? *tf_ : *f_).forward(x, mode);
}

Tensor ModelState::project_aug(const Tensor& x, bool target, Mode mode) {
  Tensor y = encode(x, target, mode);
  return (target ? *tg_ : *g_).forward(y, mode);
}

Tensor ModelState::project_mined(const Tensor& rep, bool target, Mode mode) {
  Module& g = target ? *tg_ : *g_;
  Module& h = target ? *th_ : *h_;
  switch (specs_.variant) {
    case ArchVariant::Cascaded:
      return h.forward(g.forward(rep, mode), mode);
    case ArchVariant::Parallel:
      return h.forward(rep, mode);
    case ArchVariant::Single:
      return g.forward(rep, mode);
  }
  throw std::logic_error("project_mined: bad variant");
}

Tensor ModelState::predict_aug(const Tensor& z, Mode mode) {
  return q_->forward(z, mode);
}
Tensor ModelState::predict_mined(const Tensor& v, Mode mode) {
  return r_->forward(v, mode);
}

NamedTensors ModelState::online_params() {
  NamedTensors params, buffers;
  collect_prefixed(*f_, "online.f", params, buffers);
  collect_prefixed(*g_, "online.g", params, buffers);
  collect_prefixed(*h_, "online.h", params, buffers);
  collect_prefixed(*q_, "online.q", params, buffers);
  collect_prefixed(*r_, "online.r", params, buffers);
  return params;
}

NamedTensors ModelState::target_params() {
  NamedTensors params, buffers;
  collect_prefixed(*tf_, "target.f", params, buffers);
  collect_prefixed(*tg_, "target.g", params, buffers);
  collect_prefixed(*th_, "target.h", params, buffers);
  return params;
}

NamedTensors ModelState::online_buffers() {
  NamedTensors params, buffers;
  collect_prefixed(*f_, "online.f", params, buffers);
  collect_prefixed(*g_, "online.g", params, buffers);
  collect_prefixed(*h_, "online.h", params, buffers);
  collect_prefixed(*q_, "online.q", params, buffers);
  collect_prefixed(*r_, "online.r", params, buffers);
  return buffers;
}

NamedTensors ModelState::target_buffers() {
  NamedTensors params, buffers;
  collect_prefixed(*tf_, "target.f", params, buffers);
  collect_prefixed(*tg_, "target.g", params, buffers);
  collect_prefixed(*th_, "target.h", params, buffers);
  return buffers;
}

void ModelState::ema_update(double tau) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("ema_update: tau outside [0,1]");
  auto blend_pairs = [tau](NamedTensors online, NamedTensors target) {
    if (online.size() != target.size())
      throw std::logic_error("ema_update: online/target mismatch");
    for (std::size_t i = 0; i < online.size(); ++i) {
      const auto& src = online[i].second.values();
      auto& dst = target[i].second.mutable_values();
      for (std::size_t j = 0; j < dst.size(); ++j)
        dst[j] = tau * dst[j] + (1.0 - tau) * src[j];
    }
  };
  // q/r have no target counterpart; strip them from the online list.
  NamedTensors op, ob, pbuf;
  collect_prefixed(*f_, "f", op, ob);
  collect_prefixed(*g_, "g", op, ob);
  collect_prefixed(*h_, "h", op, ob);
  NamedTensors tp, tb;
  collect_prefixed(*tf_, "f", tp, tb);
  collect_prefixed(*tg_, "g", tp, tb);
  collect_prefixed(*th_, "h", tp, tb);
  blend_pairs(op, tp);
  blend_pairs(ob, tb);
}

// ---------------------------------------------------------------------------
// Losses

double cosine_distance(const std::vector<double>& u,
                       const std::vector<double>& v, double eps) {
  if (u.size() != v.size())
    throw std::invalid_argument("cosine_distance: size mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  return -dot / std::max(std::sqrt(nu) * std::sqrt(nv), eps);
}

Tensor cosine_distance_rowmean(const Tensor& u, const Tensor& v, double eps) {
  if (u.shape() != v.shape())
    throw std::invalid_argument("cosine_distance_rowmean: shape mismatch");
  Tensor uh = l2_normalize_rows(u, eps);
  Tensor vh = l2_normalize_rows(v, eps);
  return mean(neg(sum_axis1(mul(uh, vh))));
}

Tensor augmented_loss(ModelState& state, const Tensor& x, const Tensor& xp) {
  if (x.shape() != xp.shape())
    throw std::invalid_argument("augmented_loss: batch shape mismatch");
  Tensor z = state.project_aug(x, false, Mode::Train);
  Tensor zt = state.project_aug(xp, true, Mode::TrainFrozenStats).detach();
  Tensor forward_term = cosine_distance_rowmean(state.predict_aug(z, Mode::Train), zt);

  Tensor zp = state.project_aug(xp, false, Mode::Train);
  Tensor ut = state.project_aug(x, true, Mode::TrainFrozenStats).detach();
  Tensor swapped_term =
      cosine_distance_rowmean(state.predict_aug(zp, Mode::Train), ut);
  return add(forward_term, swapped_term);
}

// The online side runs with frozen running stats: the mined branch is an
// auxiliary pass, and skipping its running-stat updates keeps a lambda=0 run
// bitwise identical to plain BYOL. Batch statistics and gradients are
// unaffected.
Tensor mined_loss(ModelState& state, const Tensor& anchor_reps,
                  const Tensor& mined_target_reps) {
  Tensor v = state.project_mined(anchor_reps, false, Mode::TrainFrozenStats);
  Tensor pred = state.predict_mined(v, Mode::TrainFrozenStats);
  Tensor vt = state.project_mined(mined_target_reps.detach(), true,
                                  Mode::TrainFrozenStats)
                  .detach();
  return cosine_distance_rowmean(pred, vt);
}

// ---------------------------------------------------------------------------
// Full iteration

namespace {

SampleMeta meta_for(const BinnedDataset& ds, std::size_t row) {
  SampleMeta m;
  m.timestamp = ds.timestamps[row];
  if (ds.has_trials()) m.trial_id = ds.trial_ids[row];
  m.source_index = row;
  return m;
}

}  // namespace

StepResult myow_step(ModelState& state, Optimizer& optimizer,
                     const BinnedDataset& ds,
                     const std::vector<std::size_t>& batch_rows,
                     const std::vector<std::size_t>& candidate_rows,
                     Rng& aug_rng, Rng& mine_rng, const StepConfig& cfg) {
  const std::size_t B = batch_rows.size();
  const std::size_t d = ds.d;
  if (B == 0) throw std::invalid_argument("myow_step: empty batch");

  auto norm_view = [&cfg](std::vector<double>& v) {
    if (cfg.normalization) apply_norm(v, *cfg.normalization);
  };

  // Augmented views: t, t' ~ T per sample.
  std::vector<double> xv(B * d), xpv(B * d);
  for (std::size_t i = 0; i < B; ++i) {
    auto view = apply_transform_set(cfg.aug_transforms, ds, batch_rows[i], aug_rng);
    norm_view(view.values);
    std::copy(view.values.begin(), view.values.end(), xv.begin() + i * d);
    auto viewp = apply_transform_set(cfg.aug_transforms, ds, batch_rows[i], aug_rng);
    norm_view(viewp.values);
    std::copy(viewp.values.begin(), viewp.values.end(), xpv.begin() + i * d);
  }
  Tensor x = Tensor::from_values({B, d}, std::move(xv));
  Tensor xp = Tensor::from_values({B, d}, std::move(xpv));

  StepResult result;
  Tensor aug = augmented_loss(state, x, xp);
  result.aug_loss = aug.value();
  Tensor total = aug;

  if (cfg.mining_enabled) {
    if (candidate_rows.empty())
      throw std::invalid_argument("myow_step: mining enabled but pool empty");

    // Candidate views, one t ~ T_m per candidate.
    const std::size_t L = candidate_rows.size();
    std::vector<double> cand(L * d);
    std::vector<SampleMeta> cand_meta;
    cand_meta.reserve(L);
    for (std::size_t j = 0; j < L; ++j) {
      auto view =
          apply_transform_set(cfg.mine_transforms, ds, candidate_rows[j], mine_rng);
      norm_view(view.values);
      std::copy(view.values.begin(), view.values.end(), cand.begin() + j * d);
      cand_meta.push_back(meta_for(ds, view.source_index));
    }
    const bool target_space = cfg.miner.space == MinerConfig::Space::Target;
    EmbedFn embed = [&](const std::vector<double>& raw, std::size_t count,
                        std::size_t width) {
      Tensor input = Tensor::from_values({count, width}, raw);
      return state.encode(input, target_space, Mode::TrainFrozenStats)
          .detach()
          .values();
    };
    CandidatePool pool = build_pool(std::move(cand), d, std::move(cand_meta), embed);

    // Anchor views through the online encoder (gradients flow from here).
    std::vector<double> anchorv(B * d);
    std::vector<SampleMeta> anchor_meta;
    anchor_meta.reserve(B);
    for (std::size_t i = 0; i < B; ++i) {
      auto view =
          apply_transform_set(cfg.mine_transforms, ds, batch_rows[i], mine_rng);
      norm_view(view.values);
      std::copy(view.values.begin(), view.values.end(), anchorv.begin() + i * d);
      anchor_meta.push_back(meta_for(ds, view.source_index));
    }
    Tensor xm = Tensor::from_values({B, d}, std::move(anchorv));
    Tensor anchor_reps = state.encode(xm, false, Mode::TrainFrozenStats);

    auto selections = knn_select(anchor_reps.detach().values(), B, anchor_meta,
                                 pool, cfg.miner, mine_rng);
    std::vector<std::size_t> valid_anchors;
    std::vector<std::size_t> chosen_pool_rows;
    for (std::size_t i = 0; i < B; ++i) {
      if (!selections[i].valid) {
        ++result.empty_pool_fallbacks;
        continue;
      }
      valid_anchors.push_back(i);
      chosen_pool_rows.push_back(selections[i].candidate);
      result.mined.push_back({anchor_meta[i].source_index,
                              pool.meta[selections[i].candidate].source_index,
                              selections[i].distance, selections[i].rank});
    }

    Tensor lm = Tensor::scalar(0.0);
    if (!valid_anchors.empty()) {
      Tensor anchors_sel = gather_rows(anchor_reps, valid_anchors);
      std::vector<double> mined_reps(chosen_pool_rows.size() * pool.rep);
      for (std::size_t i = 0; i < chosen_pool_rows.size(); ++i)
        std::copy_n(pool.embeddings.data() + chosen_pool_rows[i] * pool.rep,
                    pool.rep, mined_reps.data() + i * pool.rep);
      Tensor mined_t = Tensor::from_values(
          {chosen_pool_rows.size(), pool.rep}, std::move(mined_reps));
      lm = mined_loss(state, anchors_sel, mined_t);
    }
    result.mined_loss = lm.value();
    total = add(total, scale(lm, cfg.lambda_weight));
  }

  result.total_loss = total.value();
  if (!std::isfinite(result.total_loss)) return result;  // caller raises
  total.backward();
  optimizer.step(cfg.lr);
  optimizer.zero_grad();
  state.ema_update(cfg.tau);
  return result;
}

}  // namespace myow
