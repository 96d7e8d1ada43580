#include "myow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace myow {

std::string format_double(double v) {
  char buf[40];
  // Shortest precision that survives a parse round trip.
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace {

std::string fmt_double(double v) { return format_double(v); }

[[noreturn]] void parse_error(const std::string& path, std::size_t line,
                              const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void BinnedDataset::validate() const {
  const std::size_t T = timestamps.size();
  if (d == 0) throw std::invalid_argument("dataset: d must be >= 1");
  if (rates.size() != T * d)
    throw std::invalid_argument("dataset: rates size != T*d");
  if (labels.size() != T)
    throw std::invalid_argument("dataset: labels size != T");
  if (!trial_ids.empty() && trial_ids.size() != T)
    throw std::invalid_argument("dataset: trial ids size != T");
  for (std::size_t i = 1; i < T; ++i) {
    const bool same_trial =
        trial_ids.empty() || trial_ids[i] == trial_ids[i - 1];
    if (same_trial && !(timestamps[i] > timestamps[i - 1]))
      throw std::invalid_argument(
          "dataset: timestamps not strictly increasing within trial at bin " +
          std::to_string(i));
  }
}

std::vector<std::size_t> SplitAssignment::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// File I/O
//
// Line 1: `#myow-dataset v1`
// Line 2: space-separated key=value metadata (bin_width_s, d, has_trials)
// Line 3: column header `t,trial,label,n0,...,n{d-1}`
// Body:   CSV rows, doubles printed with %.17g (bit-exact round trip)

void save_dataset(const BinnedDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "#myow-dataset v1\n";
  out << "bin_width_s=" << fmt_double(ds.bin_width_s) << " d=" << ds.d
      << " has_trials=" << (ds.has_trials() ? 1 : 0) << "\n";
  out << "t,trial,label";
  for (std::size_t j = 0; j < ds.d; ++j) out << ",n" << j;
  out << "\n";
  for (std::size_t i = 0; i < ds.num_bins(); ++i) {
    out << fmt_double(ds.timestamps[i]) << ",";
    if (ds.has_trials()) out << ds.trial_ids[i];
    out << "," << ds.labels[i];
    const double* r = ds.row(i);
    for (std::size_t j = 0; j < ds.d; ++j) out << "," << fmt_double(r[j]);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

BinnedDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "#myow-dataset v1")
    parse_error(path, lineno, "missing magic line '#myow-dataset v1'");

  BinnedDataset ds;
  bool has_trials = false;
  ++lineno;
  if (!std::getline(in, line)) parse_error(path, lineno, "missing metadata");
  {
    std::stringstream ss(line);
    std::string kv;
    bool saw_d = false, saw_bw = false;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        parse_error(path, lineno, "malformed metadata token: " + kv);
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      try {
        if (key == "bin_width_s") {
          ds.bin_width_s = std::stod(val);
          saw_bw = true;
        } else if (key == "d") {
          ds.d = std::stoul(val);
          saw_d = true;
        } else if (key == "has_trials") {
          has_trials = std::stoi(val) != 0;
        } else {
          parse_error(path, lineno, "unknown metadata key: " + key);
        }
      } catch (const std::invalid_argument&) {
        parse_error(path, lineno, "bad value for " + key);
      }
    }
    if (!saw_d || !saw_bw)
      parse_error(path, lineno, "metadata must define bin_width_s and d");
  }

  ++lineno;
  if (!std::getline(in, line)) parse_error(path, lineno, "missing header");
  {
    std::string expect = "t,trial,label";
    for (std::size_t j = 0; j < ds.d; ++j) expect += ",n" + std::to_string(j);
    if (line != expect) parse_error(path, lineno, "bad column header");
  }

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3 + ds.d)
      parse_error(path, lineno, "expected " + std::to_string(3 + ds.d) +
                                    " fields, got " +
                                    std::to_string(fields.size()));
    try {
      ds.timestamps.push_back(std::stod(fields[0]));
      if (has_trials) {
        if (fields[1].empty()) parse_error(path, lineno, "missing trial id");
        ds.trial_ids.push_back(std::stol(fields[1]));
      } else if (!fields[1].empty()) {
        parse_error(path, lineno, "trial id present but has_trials=0");
      }
      ds.labels.push_back(std::stoi(fields[2]));
      for (std::size_t j = 0; j < ds.d; ++j)
        ds.rates.push_back(std::stod(fields[3 + j]));
    } catch (const std::invalid_argument&) {
      parse_error(path, lineno, "malformed numeric field");
    }
  }
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return ds;
}

void save_split(const SplitAssignment& split, const BinnedDataset& ds,
                const std::string& path) {
  if (split.tags.size() != ds.num_bins())
    throw std::invalid_argument("save_split: tag count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "t,tag\n";
  for (std::size_t i = 0; i < split.tags.size(); ++i) {
    const char* tag = split.tags[i] == SplitTag::Train  ? "train"
                      : split.tags[i] == SplitTag::Val ? "val"
                                                       : "test";
    out << fmt_double(ds.timestamps[i]) << "," << tag << "\n";
  }
}

SplitAssignment load_split(const std::string& path,
                           std::size_t expected_bins) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "t,tag")
    parse_error(path, lineno, "expected header 't,tag'");
  SplitAssignment split;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 2) parse_error(path, lineno, "expected 2 fields");
    if (fields[1] == "train")
      split.tags.push_back(SplitTag::Train);
    else if (fields[1] == "val")
      split.tags.push_back(SplitTag::Val);
    else if (fields[1] == "test")
      split.tags.push_back(SplitTag::Test);
    else
      parse_error(path, lineno, "unknown tag: " + fields[1]);
  }
  if (split.tags.size() != expected_bins)
    throw std::runtime_error(path + ": split has " +
                             std::to_string(split.tags.size()) +
                             " rows, dataset has " +
                             std::to_string(expected_bins));
  return split;
}

// ---------------------------------------------------------------------------
// Temporal split

SplitAssignment temporal_split(const BinnedDataset& ds,
                               std::array<double, 3> ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("temporal_split: ratios must sum to 1");
  const std::size_t T = ds.num_bins();
  std::size_t b0 = static_cast<std::size_t>(
      std::floor(ratios[0] * static_cast<double>(T)));
  std::size_t b1 =
      b0 + static_cast<std::size_t>(
               std::floor(ratios[1] * static_cast<double>(T)));
  auto snap = [&](std::size_t b) {
    if (!ds.has_trials()) return b;
    while (b > 0 && b < T && ds.trial_ids[b] == ds.trial_ids[b - 1]) ++b;
    return b;
  };
  b0 = snap(b0);
  b1 = snap(std::max(b0, b1));
  if (b0 == 0 || b1 <= b0 || b1 >= T)
    throw std::invalid_argument(
        "temporal_split: not enough trials/bins for three non-empty splits");
  SplitAssignment split;
  split.tags.assign(T, SplitTag::Test);
  for (std::size_t i = 0; i < b0; ++i) split.tags[i] = SplitTag::Train;
  for (std::size_t i = b0; i < b1; ++i) split.tags[i] = SplitTag::Val;
  return split;
}

// ---------------------------------------------------------------------------
// Reach generator

BinnedDataset gen_reach_synthetic(const ReachSpec& spec, std::uint64_t seed,
                                  ReachGroundTruth* ground_truth) {
  if (spec.n_trials == 0 || spec.bins_per_trial == 0 || spec.neurons == 0)
    throw std::invalid_argument("gen_reach_synthetic: parameters must be positive");
  Rng rng = Rng::stream(seed, "gen-reach");

  const std::size_t d = spec.neurons;
  std::vector<double> pref(d), gain(d);
  for (std::size_t i = 0; i < d; ++i) {
    pref[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    gain[i] = rng.uniform(spec.gain_min, spec.gain_max);
  }
  if (ground_truth) {
    ground_truth->preferred = pref;
    ground_truth->gain = gain;
    ground_truth->baseline = spec.baseline;
    ground_truth->kappa = spec.kappa;
  }

  // Balanced direction labels: cycle through 0..7, then shuffle trial order.
  std::vector<int> trial_label(spec.n_trials);
  for (std::size_t t = 0; t < spec.n_trials; ++t)
    trial_label[t] = static_cast<int>(t % 8);
  const auto order = rng.permutation(spec.n_trials);

  BinnedDataset ds;
  ds.d = d;
  ds.bin_width_s = spec.bin_width_s;
  std::size_t bin = 0;
  for (std::size_t t = 0; t < spec.n_trials; ++t) {
    const int label = trial_label[order[t]];
    const double theta =
        static_cast<double>(label) * std::numbers::pi / 4.0;
    double drift = rng.normal();
    for (std::size_t b = 0; b < spec.bins_per_trial; ++b, ++bin) {
      if (b > 0)
        drift = spec.drift_rho * drift +
                std::sqrt(1.0 - spec.drift_rho * spec.drift_rho) * rng.normal();
      const double angle = theta + spec.drift_scale * drift;
      for (std::size_t i = 0; i < d; ++i) {
        const double rate =
            spec.baseline +
            gain[i] * std::exp(spec.kappa * (std::cos(angle - pref[i]) - 1.0));
        ds.rates.push_back(static_cast<double>(rng.poisson(rate)));
      }
      ds.timestamps.push_back(static_cast<double>(bin) * spec.bin_width_s);
      ds.trial_ids.push_back(static_cast<long>(t));
      ds.labels.push_back(label);
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Latent-manifold generator

ManifoldPair gen_latent_manifold(const LatentManifoldSpec& spec,
                                 std::uint64_t seed) {
  if (spec.shapes == 0 || spec.orientations == 0 || spec.scales == 0 ||
      spec.xs == 0 || spec.ys == 0 || spec.obs_dim == 0)
    throw std::invalid_argument("gen_latent_manifold: parameters must be positive");
  if (spec.rate <= 0.0 || spec.rate > 1.0)
    throw std::invalid_argument("gen_latent_manifold: rate must be in (0,1]");
  Rng rng = Rng::stream(seed, "gen-manifold");

  auto keep_values = [&](std::size_t card, double fraction) {
    std::size_t keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(card)));
    keep = std::max<std::size_t>(1, std::min(card, keep));
    auto chosen = rng.choice(card, keep);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  };
  const auto kept_orient = keep_values(spec.orientations,
                                       spec.kept_orientation_fraction);
  const auto kept_scale = keep_values(spec.scales, spec.kept_scale_fraction);
  auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
    return std::binary_search(v.begin(), v.end(), x);
  };

  // Fixed random two-layer embedding of the normalized latent coordinates.
  const std::size_t in_dim = spec.shapes + 4;
  const std::size_t hidden = 32;
  std::vector<double> w1(hidden * in_dim), b1(hidden),
      w2(spec.obs_dim * hidden), b2(spec.obs_dim);
  for (auto& w : w1) w = rng.normal(0.0, 1.0 / std::sqrt(double(in_dim)));
  for (auto& w : b1) w = rng.normal(0.0, 0.3);
  for (auto& w : w2) w = rng.normal(0.0, 1.0 / std::sqrt(double(hidden)));
  for (auto& w : b2) w = rng.normal(0.0, 0.3);

  auto embed = [&](const std::array<std::size_t, 5>& lat,
                   std::vector<double>& out) {
    std::vector<double> u(in_dim, 0.0);
    u[lat[0]] = 1.5;  // shape one-hot, the label factor
    auto norm = [](std::size_t v, std::size_t card) {
      return card == 1 ? 0.0
                       : 2.0 * static_cast<double>(v) /
                                 static_cast<double>(card - 1) -
                             1.0;
    };
    u[spec.shapes + 0] = norm(lat[1], spec.orientations);
    u[spec.shapes + 1] = norm(lat[2], spec.scales);
    u[spec.shapes + 2] = norm(lat[3], spec.xs);
    u[spec.shapes + 3] = norm(lat[4], spec.ys);
    std::vector<double> h(hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      double s = b1[i];
      for (std::size_t j = 0; j < in_dim; ++j) s += w1[i * in_dim + j] * u[j];
      h[i] = std::tanh(s);
    }
    out.resize(spec.obs_dim);
    for (std::size_t i = 0; i < spec.obs_dim; ++i) {
      double s = b2[i];
      for (std::size_t j = 0; j < hidden; ++j) s += w2[i * hidden + j] * h[j];
      out[i] = s + rng.normal(0.0, spec.obs_noise);
    }
  };

  std::vector<std::array<std::size_t, 5>> grid;
  std::vector<std::size_t> candidate_idx;
  for (std::size_t s = 0; s < spec.shapes; ++s)
    for (std::size_t o = 0; o < spec.orientations; ++o)
      for (std::size_t sc = 0; sc < spec.scales; ++sc)
        for (std::size_t x = 0; x < spec.xs; ++x)
          for (std::size_t y = 0; y < spec.ys; ++y) {
            if (contains(kept_orient, o) && contains(kept_scale, sc))
              candidate_idx.push_back(grid.size());
            grid.push_back({s, o, sc, x, y});
          }

  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(spec.rate * static_cast<double>(candidate_idx.size())));
  if (n_train == 0)
    throw std::invalid_argument("gen_latent_manifold: rate too small, empty train set");
  auto picks = rng.choice(candidate_idx.size(), n_train);
  std::sort(picks.begin(), picks.end());
  std::set<std::size_t> train_set;
  for (auto p : picks) train_set.insert(candidate_idx[p]);

  ManifoldPair pair;
  auto push = [&](BinnedDataset& ds,
                  std::vector<std::array<std::size_t, 5>>& lats,
                  const std::array<std::size_t, 5>& lat) {
    std::vector<double> obs;
    embed(lat, obs);
    ds.rates.insert(ds.rates.end(), obs.begin(), obs.end());
    ds.timestamps.push_back(static_cast<double>(ds.timestamps.size()));
    ds.labels.push_back(static_cast<int>(lat[0]));
    lats.push_back(lat);
  };
  pair.train.d = pair.test.d = spec.obs_dim;
  pair.train.bin_width_s = pair.test.bin_width_s = 1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (train_set.count(g))
      push(pair.train, pair.train_latents, grid[g]);
    else
      push(pair.test, pair.test_latents, grid[g]);
  }
  pair.train.validate();
  if (pair.test.num_bins() > 0) pair.test.validate();
  return pair;
}

// ---------------------------------------------------------------------------
// Normalization

NormStats compute_norm_stats(const BinnedDataset& ds,
                             const SplitAssignment* split) {
  std::vector<std::size_t> rows;
  if (split) {
    rows = split->indices(SplitTag::Train);
  } else {
    rows.resize(ds.num_bins());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }
  if (rows.empty())
    throw std::invalid_argument("compute_norm_stats: no train rows");
  NormStats st;
  st.mean.assign(ds.d, 0.0);
  st.std_dev.assign(ds.d, 0.0);
  for (auto i : rows)
    for (std::size_t j = 0; j < ds.d; ++j) st.mean[j] += ds.row(i)[j];
  const double n = static_cast<double>(rows.size());
  for (auto& m : st.mean) m /= n;
  for (auto i : rows)
    for (std::size_t j = 0; j < ds.d; ++j) {
      const double c = ds.row(i)[j] - st.mean[j];
      st.std_dev[j] += c * c;
    }
  for (auto& s : st.std_dev) s = std::max(std::sqrt(s / n), 1e-6);
  return st;
}

void normalize(BinnedDataset& ds, const NormStats& stats) {
  if (ds.normalized)
    throw std::logic_error("normalize: dataset already normalized");
  if (stats.mean.size() != ds.d)
    throw std::invalid_argument("normalize: stats width mismatch");
  for (std::size_t i = 0; i < ds.num_bins(); ++i)
    for (std::size_t j = 0; j < ds.d; ++j) {
      double& v = ds.rates[i * ds.d + j];
      v = (v - stats.mean[j]) / stats.std_dev[j];
    }
  ds.normalized = true;
}

void apply_norm(std::vector<double>& values, const NormStats& stats) {
  const std::size_t d = stats.mean.size();
  if (d == 0 || values.size() % d != 0)
    throw std::invalid_argument("apply_norm: width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t j = i % d;
    values[i] = (values[i] - stats.mean[j]) / stats.std_dev[j];
  }
}

}  // namespace myow
