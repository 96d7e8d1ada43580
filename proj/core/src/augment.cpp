#include "myow/augment.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace myow {

namespace {

void check_prob(double p, const char* what) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument(std::string(what) + " must be in [0,1]");
}

std::string fmt_param(double v) { return format_double(v); }

}  // namespace

void TransformSpec::validate() const {
  bool seen_value_transform = false;
  for (const auto& op : ops) {
    switch (op.kind) {
      case TransformDescriptor::Kind::TemporalJitter:
        if (seen_value_transform)
          throw std::invalid_argument(
              "transform spec: jitter must precede value-level transforms");
        if (op.a < 0.0)
          throw std::invalid_argument("jitter: window_bins must be >= 0");
        break;
      case TransformDescriptor::Kind::Dropout:
        check_prob(op.a, "dropout p_min");
        check_prob(op.b, "dropout p_max");
        if (op.a > op.b)
          throw std::invalid_argument("dropout: p_min > p_max");
        seen_value_transform = true;
        break;
      case TransformDescriptor::Kind::GaussianNoise:
        if (op.a < 0.0) throw std::invalid_argument("noise: sigma must be >= 0");
        check_prob(op.b, "noise apply_prob");
        seen_value_transform = true;
        break;
      case TransformDescriptor::Kind::Pepper:
        if (op.a < 0.0)
          throw std::invalid_argument("pepper: constant must be >= 0");
        check_prob(op.b, "pepper p_activate");
        check_prob(op.c, "pepper apply_prob");
        seen_value_transform = true;
        break;
    }
  }
}

std::string TransformSpec::to_string() const {
  std::string out;
  for (const auto& op : ops) {
    if (!out.empty()) out += "|";
    switch (op.kind) {
      case TransformDescriptor::Kind::TemporalJitter:
        out += "jitter(" + std::to_string(static_cast<long>(op.a)) + ")";
        break;
      case TransformDescriptor::Kind::Dropout:
        out += "dropout(" + fmt_param(op.a) + "," + fmt_param(op.b) + ")";
        break;
      case TransformDescriptor::Kind::GaussianNoise:
        out += "noise(" + fmt_param(op.a) + "," + fmt_param(op.b) + ")";
        break;
      case TransformDescriptor::Kind::Pepper:
        out += "pepper(" + fmt_param(op.a) + "," + fmt_param(op.b) + "," +
               fmt_param(op.c) + ")";
        break;
    }
  }
  return out.empty() ? "none" : out;
}

TransformSpec TransformSpec::parse(const std::string& text) {
  TransformSpec spec;
  if (text == "none" || text.empty()) return spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '|')) {
    const auto open = item.find('(');
    const auto close = item.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close < open)
      throw std::invalid_argument("transform spec: malformed entry: " + item);
    const std::string name = item.substr(0, open);
    std::vector<double> args;
    {
      std::stringstream as(item.substr(open + 1, close - open - 1));
      std::string a;
      while (std::getline(as, a, ','))
        if (!a.empty()) args.push_back(std::stod(a));
    }
    TransformDescriptor op;
    auto expect = [&](std::size_t n) {
      if (args.size() != n)
        throw std::invalid_argument("transform spec: " + name + " expects " +
                                    std::to_string(n) + " args");
    };
    if (name == "jitter") {
      expect(1);
      op.kind = TransformDescriptor::Kind::TemporalJitter;
      op.a = args[0];
    } else if (name == "dropout") {
      expect(2);
      op.kind = TransformDescriptor::Kind::Dropout;
      op.a = args[0];
      op.b = args[1];
    } else if (name == "noise") {
      expect(2);
      op.kind = TransformDescriptor::Kind::GaussianNoise;
      op.a = args[0];
      op.b = args[1];
    } else if (name == "pepper") {
      expect(3);
      op.kind = TransformDescriptor::Kind::Pepper;
      op.a = args[0];
      op.b = args[1];
      op.c = args[2];
    } else {
      throw std::invalid_argument("transform spec: unknown transform: " + name);
    }
    spec.ops.push_back(op);
  }
  spec.validate();
  return spec;
}

std::size_t temporal_jitter(const BinnedDataset& ds, std::size_t index,
                            long window_bins, Rng& rng) {
  if (index >= ds.num_bins())
    throw std::invalid_argument("temporal_jitter: index out of range");
  if (window_bins == 0) return index;
  const long T = static_cast<long>(ds.num_bins());
  const long i = static_cast<long>(index);
  std::vector<long> valid;
  for (long delta = -window_bins; delta <= window_bins; ++delta) {
    if (delta == 0) continue;  // views must be distinct samples
    const long j = i + delta;
    if (j < 0 || j >= T) continue;
    if (ds.has_trials() && ds.trial_ids[j] != ds.trial_ids[i]) continue;
    valid.push_back(j);
  }
  if (valid.empty()) return index;  // single-bin trial
  return static_cast<std::size_t>(valid[rng.index(valid.size())]);
}

void neuron_dropout(std::vector<double>& x, double p_min, double p_max,
                    Rng& rng) {
  check_prob(p_min, "dropout p_min");
  check_prob(p_max, "dropout p_max");
  if (p_min > p_max) throw std::invalid_argument("dropout: p_min > p_max");
  if (p_max == 0.0) return;
  const double p = rng.uniform(p_min, p_max);
  for (double& v : x)
    if (rng.bernoulli(p)) v = 0.0;  // survivors are not rescaled
}

void gaussian_noise(std::vector<double>& x, double sigma, double apply_prob,
                    Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise: sigma must be >= 0");
  check_prob(apply_prob, "noise apply_prob");
  if (apply_prob == 0.0 || sigma == 0.0) return;
  if (!rng.bernoulli(apply_prob)) return;
  for (double& v : x) v += rng.normal(0.0, sigma);
}

void pepper(std::vector<double>& x, double constant, double p_activate,
            double apply_prob, Rng& rng) {
  if (constant < 0.0) throw std::invalid_argument("pepper: constant must be >= 0");
  check_prob(p_activate, "pepper p_activate");
  check_prob(apply_prob, "pepper apply_prob");
  if (apply_prob == 0.0) return;
  if (!rng.bernoulli(apply_prob)) return;
  for (double& v : x)
    if (rng.bernoulli(p_activate)) v += constant;
}

ViewSample apply_transform_set(const TransformSpec& spec,
                               const BinnedDataset& ds, std::size_t index,
                               Rng& rng) {
  spec.validate();
  std::size_t src = index;
  for (const auto& op : spec.ops)
    if (op.kind == TransformDescriptor::Kind::TemporalJitter)
      src = temporal_jitter(ds, src, static_cast<long>(op.a), rng);
  ViewSample view{ds.row_copy(src), src};
  for (const auto& op : spec.ops) {
    switch (op.kind) {
      case TransformDescriptor::Kind::TemporalJitter:
        break;
      case TransformDescriptor::Kind::Dropout:
        neuron_dropout(view.values, op.a, op.b, rng);
        break;
      case TransformDescriptor::Kind::GaussianNoise:
        gaussian_noise(view.values, op.a, op.b, rng);
        break;
      case TransformDescriptor::Kind::Pepper:
        pepper(view.values, op.a, op.b, op.c, rng);
        break;
    }
  }
  return view;
}

}  // namespace myow
