#include "myow/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace myow {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  DType dtype = DType::f64;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using MapConst = Eigen::Map<const EMat>;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension");
    n *= d;
  }
  return n;
}

std::shared_ptr<TensorImpl> make_impl(std::vector<std::size_t> shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->values.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  return impl;
}

DType promote(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::f32 || b.dtype() == DType::f32) ? DType::f32
                                                              : DType::f64;
}

// f32 mode stores double but rounds every op result through float precision.
void round_to_dtype(TensorImpl& t) {
  if (t.dtype == DType::f32)
    for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
}

Tensor finish(std::shared_ptr<TensorImpl> impl,
              std::vector<std::shared_ptr<TensorImpl>> parents,
              std::function<void(TensorImpl&)> backward_fn) {
  round_to_dtype(*impl);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void check_matrix(const Tensor& a, const char* op) {
  if (a.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor");
}

void accumulate(TensorImpl& p, std::size_t i, double g) {
  p.ensure_grad();
  p.grad[i] += g;
}

}  // namespace

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(std::vector<std::size_t> shape, DType dtype) {
  return Tensor(make_impl(std::move(shape), dtype));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, DType dtype) {
  auto impl = make_impl(std::move(shape), dtype);
  std::fill(impl->values.begin(), impl->values.end(), v);
  round_to_dtype(*impl);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values, DType dtype) {
  auto impl = make_impl(std::move(shape), dtype);
  if (values.size() != impl->values.size())
    throw std::invalid_argument("from_values: size does not match shape");
  impl->values = std::move(values);
  round_to_dtype(*impl);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, DType dtype) {
  return from_values({1}, {v}, dtype);
}

const std::vector<std::size_t>& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->values.size(); }
std::size_t Tensor::rows() const {
  return impl_->shape.empty() ? 1 : impl_->shape[0];
}
std::size_t Tensor::cols() const {
  if (impl_->shape.size() != 2) throw std::logic_error("cols: rank != 2");
  return impl_->shape[1];
}
DType Tensor::dtype() const { return impl_->dtype; }

const std::vector<double>& Tensor::values() const { return impl_->values; }
std::vector<double>& Tensor::mutable_values() { return impl_->values; }

double Tensor::value() const {
  if (size() != 1) throw std::logic_error("value: tensor is not scalar");
  return impl_->values[0];
}
double Tensor::at(std::size_t i) const { return impl_->values.at(i); }

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}
bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::logic_error("grad: no gradient accumulated");
  return impl_->grad;
}
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = make_impl(impl_->shape, impl_->dtype);
  impl->values = impl_->values;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // Iterative topological sort over the parent DAG.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->backward_fn && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior nodes get a fresh sweep each call; only leaves accumulate
  // across backward calls.
  for (TensorImpl* node : order)
    if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise2(const Tensor& a, const Tensor& b, const char* name,
                    Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  auto out = make_impl(a.shape(), promote(a, b));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = fwd(av[i], bv[i]);
  auto pa = a.impl();
  auto pb = b.impl();
  return finish(out, {pa, pb}, [pa, pb, bwd](TensorImpl& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      auto [ga, gb] = bwd(pa->values[i], pb->values[i], self.grad[i]);
      if (pa->requires_grad) accumulate(*pa, i, ga);
      if (pb->requires_grad) accumulate(*pb, i, gb);
    }
  });
}

template <typename Fwd, typename Bwd>
Tensor elementwise1(const Tensor& a, Fwd fwd, Bwd bwd) {
  auto out = make_impl(a.shape(), a.dtype());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = fwd(av[i]);
  auto pa = a.impl();
  return finish(out, {pa}, [pa, bwd](TensorImpl& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(*pa, i, bwd(pa->values[i], self.values[i], self.grad[i]));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, "add",
                      [](double x, double y) { return x + y; },
                      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, "sub",
                      [](double x, double y) { return x - y; },
                      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, "mul",
                      [](double x, double y) { return x * y; },
                      [](double x, double y, double g) {
                        return std::pair{g * y, g * x};
                      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise2(a, b, "div",
                      [](double x, double y) { return x / y; },
                      [](double x, double y, double g) {
                        return std::pair{g / y, -g * x / (y * y)};
                      });
}

Tensor neg(const Tensor& a) {
  return elementwise1(a, [](double x) { return -x; },
                      [](double, double, double g) { return -g; });
}

Tensor scale(const Tensor& a, double c) {
  return elementwise1(a, [c](double x) { return c * x; },
                      [c](double, double, double g) { return c * g; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return elementwise1(a, [c](double x) { return x + c; },
                      [](double, double, double g) { return g; });
}

Tensor relu(const Tensor& a) {
  return elementwise1(a, [](double x) { return x > 0.0 ? x : 0.0; },
                      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor sqrt_elem(const Tensor& a) {
  return elementwise1(a, [](double x) { return std::sqrt(x); },
                      [](double, double y, double g) { return g / (2.0 * y); });
}

Tensor clamp_min(const Tensor& a, double m) {
  return elementwise1(a, [m](double x) { return x < m ? m : x; },
                      [m](double x, double, double g) { return x < m ? 0.0 : g; });
}

// ---------------------------------------------------------------------------
// Broadcasting over rows / columns

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  check_matrix(x, "add_rowvec");
  const std::size_t B = x.rows(), d = x.cols();
  if (v.size() != d) throw std::invalid_argument("add_rowvec: width mismatch");
  auto out = make_impl(x.shape(), promote(x, v));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = x.values()[i * d + j] + v.values()[j];
  auto px = x.impl();
  auto pv = v.impl();
  return finish(out, {px, pv}, [px, pv, B, d](TensorImpl& self) {
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        if (px->requires_grad) accumulate(*px, i * d + j, g);
        if (pv->requires_grad) accumulate(*pv, j, g);
      }
  });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  check_matrix(x, "mul_rowvec");
  const std::size_t B = x.rows(), d = x.cols();
  if (v.size() != d) throw std::invalid_argument("mul_rowvec: width mismatch");
  auto out = make_impl(x.shape(), promote(x, v));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = x.values()[i * d + j] * v.values()[j];
  auto px = x.impl();
  auto pv = v.impl();
  return finish(out, {px, pv}, [px, pv, B, d](TensorImpl& self) {
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        if (px->requires_grad) accumulate(*px, i * d + j, g * pv->values[j]);
        if (pv->requires_grad) accumulate(*pv, j, g * px->values[i * d + j]);
      }
  });
}

Tensor div_rowvec(const Tensor& x, const Tensor& v) {
  check_matrix(x, "div_rowvec");
  const std::size_t B = x.rows(), d = x.cols();
  if (v.size() != d) throw std::invalid_argument("div_rowvec: width mismatch");
  auto out = make_impl(x.shape(), promote(x, v));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = x.values()[i * d + j] / v.values()[j];
  auto px = x.impl();
  auto pv = v.impl();
  return finish(out, {px, pv}, [px, pv, B, d](TensorImpl& self) {
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        const double vj = pv->values[j];
        if (px->requires_grad) accumulate(*px, i * d + j, g / vj);
        if (pv->requires_grad)
          accumulate(*pv, j, -g * px->values[i * d + j] / (vj * vj));
      }
  });
}

Tensor div_colvec(const Tensor& x, const Tensor& c) {
  check_matrix(x, "div_colvec");
  const std::size_t B = x.rows(), d = x.cols();
  if (c.size() != B) throw std::invalid_argument("div_colvec: height mismatch");
  auto out = make_impl(x.shape(), promote(x, c));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out->values[i * d + j] = x.values()[i * d + j] / c.values()[i];
  auto px = x.impl();
  auto pc = c.impl();
  return finish(out, {px, pc}, [px, pc, B, d](TensorImpl& self) {
    for (std::size_t i = 0; i < B; ++i) {
      const double ci = pc->values[i];
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        if (px->requires_grad) accumulate(*px, i * d + j, g / ci);
        if (pc->requires_grad)
          accumulate(*pc, i, -g * px->values[i * d + j] / (ci * ci));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  auto out = make_impl({m, n}, promote(a, b));
  {
    MapConst A(a.values().data(), m, k);
    MapConst B(b.values().data(), k, n);
    MapMat C(out->values.data(), m, n);
    C.noalias() = A * B;
  }
  auto pa = a.impl();
  auto pb = b.impl();
  return finish(out, {pa, pb}, [pa, pb, m, k, n](TensorImpl& self) {
    MapConst G(self.grad.data(), m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MapConst B(pb->values.data(), k, n);
      MapMat GA(pa->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MapConst A(pa->values.data(), m, k);
      MapMat GB(pb->grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  auto out = make_impl({n, m}, a.dtype());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->values[j * m + i] = a.values()[i * n + j];
  auto pa = a.impl();
  return finish(out, {pa}, [pa, m, n](TensorImpl& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        accumulate(*pa, i * n + j, self.grad[j * m + i]);
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  check_matrix(x, "gather_rows");
  const std::size_t d = x.cols();
  auto out = make_impl({rows.size(), d}, x.dtype());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows())
      throw std::invalid_argument("gather_rows: row index out of range");
    std::copy_n(x.values().data() + rows[i] * d, d,
                out->values.data() + i * d);
  }
  auto px = x.impl();
  auto rows_copy = rows;
  return finish(out, {px}, [px, rows_copy, d](TensorImpl& self) {
    px->ensure_grad();
    for (std::size_t i = 0; i < rows_copy.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        px->grad[rows_copy[i] * d + j] += self.grad[i * d + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  auto out = make_impl({1}, a.dtype());
  double s = 0.0;
  for (double v : a.values()) s += v;
  out->values[0] = s;
  auto pa = a.impl();
  return finish(out, {pa}, [pa](TensorImpl& self) {
    const double g = self.grad[0];
    pa->ensure_grad();
    for (double& x : pa->grad) x += g;
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis0(const Tensor& a) {
  check_matrix(a, "sum_axis0");
  const std::size_t B = a.rows(), d = a.cols();
  auto out = make_impl({d}, a.dtype());
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j) out->values[j] += a.values()[i * d + j];
  auto pa = a.impl();
  return finish(out, {pa}, [pa, B, d](TensorImpl& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) pa->grad[i * d + j] += self.grad[j];
  });
}

Tensor mean_axis0(const Tensor& a) {
  return scale(sum_axis0(a), 1.0 / static_cast<double>(a.rows()));
}

Tensor sum_axis1(const Tensor& a) {
  check_matrix(a, "sum_axis1");
  const std::size_t B = a.rows(), d = a.cols();
  auto out = make_impl({B}, a.dtype());
  for (std::size_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a.values()[i * d + j];
    out->values[i] = s;
  }
  auto pa = a.impl();
  return finish(out, {pa}, [pa, B, d](TensorImpl& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) pa->grad[i * d + j] += self.grad[i];
  });
}

namespace {

// x / s with s a one-element tensor, broadcast over all of x.
Tensor div_scalar_tensor(const Tensor& x, const Tensor& s) {
  auto out = make_impl(x.shape(), promote(x, s));
  const double sv = s.value();
  for (std::size_t i = 0; i < x.size(); ++i) out->values[i] = x.values()[i] / sv;
  auto px = x.impl();
  auto ps = s.impl();
  return finish(out, {px, ps}, [px, ps](TensorImpl& self) {
    const double sv = ps->values[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (px->requires_grad) accumulate(*px, i, g / sv);
      if (ps->requires_grad)
        accumulate(*ps, 0, -g * px->values[i] / (sv * sv));
    }
  });
}

}  // namespace

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  // Clamp the squared norm, not the norm: same forward values, but an
  // all-zero row would otherwise hit sqrt'(0) and turn its (blocked, zero)
  // gradient into 0 * inf = NaN.
  if (x.shape().size() == 1) {
    Tensor n = sqrt_elem(clamp_min(sum(mul(x, x)), eps * eps));
    return div_scalar_tensor(x, n);
  }
  Tensor norms = sqrt_elem(clamp_min(sum_axis1(mul(x, x)), eps * eps));
  return div_colvec(x, norms);
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels) {
  check_matrix(logits, "softmax_cross_entropy");
  const std::size_t B = logits.rows(), C = logits.cols();
  if (labels.size() != B)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  auto out = make_impl({1}, logits.dtype());
  std::vector<double> probs(B * C);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double* row = logits.values().data() + i * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    loss += -(row[y] - mx - std::log(z));
    for (std::size_t c = 0; c < C; ++c)
      probs[i * C + c] = std::exp(row[c] - mx) / z;
  }
  out->values[0] = loss / static_cast<double>(B);
  auto pl = logits.impl();
  auto labels_copy = labels;
  auto probs_copy = std::move(probs);
  return finish(out, {pl},
                [pl, labels_copy, probs_copy, B, C](TensorImpl& self) {
                  const double g = self.grad[0] / static_cast<double>(B);
                  pl->ensure_grad();
                  for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t c = 0; c < C; ++c) {
                      double v = probs_copy[i * C + c];
                      if (static_cast<std::size_t>(labels_copy[i]) == c) v -= 1.0;
                      pl->grad[i * C + c] += g * v;
                    }
                });
}

// ---------------------------------------------------------------------------
// Random constructors

namespace {

template <typename F>
Tensor fill_random(std::vector<std::size_t> shape, F draw) {
  auto impl = make_impl(std::move(shape), DType::f64);
  for (double& v : impl->values) v = draw();
  return Tensor(std::move(impl));
}

}  // namespace

Tensor rand_uniform(std::vector<std::size_t> shape, double a, double b, Rng& rng) {
  return fill_random(std::move(shape), [&] { return rng.uniform(a, b); });
}
Tensor rand_normal(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng) {
  return fill_random(std::move(shape), [&] { return rng.normal(mu, sigma); });
}
Tensor rand_poisson(std::vector<std::size_t> shape, double lambda, Rng& rng) {
  return fill_random(std::move(shape),
                     [&] { return static_cast<double>(rng.poisson(lambda)); });
}
Tensor rand_bernoulli(std::vector<std::size_t> shape, double p, Rng& rng) {
  return fill_random(std::move(shape),
                     [&] { return rng.bernoulli(p) ? 1.0 : 0.0; });
}

}  // namespace myow
