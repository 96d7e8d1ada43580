#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "myow/rng.hpp"

namespace myow {

enum class DType { f64, f32 };

struct TensorImpl;

/// Dense n-d array of doubles participating in a define-by-run gradient
/// graph. Handles are cheap shared references; values are treated as
/// immutable once an op has produced them.
class Tensor {
 public:
  Tensor();  // empty
  static Tensor zeros(std::vector<std::size_t> shape, DType dtype = DType::f64);
  static Tensor full(std::vector<std::size_t> shape, double v,
                     DType dtype = DType::f64);
  static Tensor from_values(std::vector<std::size_t> shape,
                            std::vector<double> values,
                            DType dtype = DType::f64);
  static Tensor scalar(double v, DType dtype = DType::f64);

  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t rows() const;  // shape[0] for rank >= 1, else 1
  std::size_t cols() const;  // shape[1] for rank 2
  DType dtype() const;

  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // for in-place init only, pre-graph
  double value() const;  // scalar tensors
  double at(std::size_t i) const;

  Tensor& set_requires_grad(bool v);
  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  /// New leaf sharing no graph history (values copied).
  Tensor detach() const;

  /// Reverse-mode sweep from a scalar. Gradients accumulate across calls.
  void backward() const;

  bool defined() const { return impl_ != nullptr; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Elementwise (same shape).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor clamp_min(const Tensor& a, double m);

// Row/column broadcasting over [B x d] matrices.
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // + v[d] per row
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
Tensor div_rowvec(const Tensor& x, const Tensor& v);
Tensor div_colvec(const Tensor& x, const Tensor& c);  // / c[B] per column

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// New matrix whose rows are x's rows at `rows` (duplicates allowed).
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis0(const Tensor& a);
Tensor mean_axis0(const Tensor& a);
Tensor sum_axis1(const Tensor& a);

/// Row-wise x / max(||x||_2, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// Mean over rows of the softmax cross entropy against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Seeded random tensor constructors.
Tensor rand_uniform(std::vector<std::size_t> shape, double a, double b, Rng& rng);
Tensor rand_normal(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng);
Tensor rand_poisson(std::vector<std::size_t> shape, double lambda, Rng& rng);
Tensor rand_bernoulli(std::vector<std::size_t> shape, double p, Rng& rng);

}  // namespace myow
