#pragma once

#include "hmctc/numeric/tensor.hpp"

#include <limits>

namespace hmctc {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)); -inf operands short-circuit so that the sentinel
// never produces NaN.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros(a.rows(), b.cols());
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

inline Tensor log_softmax_rows(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto in = t.row(r);
    auto o = out.row(r);
    const Eigen::Map<const Eigen::ArrayXd> x(in.data(), static_cast<Eigen::Index>(in.size()));
    const double m = x.maxCoeff();
    const double lse = std::isfinite(m) ? m + std::log((x - m).exp().sum()) : m;
    Eigen::Map<Eigen::ArrayXd>(o.data(), static_cast<Eigen::Index>(o.size())) = x - lse;
  }
  return out;
}

inline double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Vectorized logistic and tanh over Eigen arrays. exp saturates at the
// extremes, so both stay finite and within [0, 1] and [-1, 1].
template <class Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& x) {
  return ((-x.derived()).exp() + 1.0).inverse();
}

template <class Derived>
auto tanh_array(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x.derived()).exp() + 1.0);
}

enum class ElementwiseOp { add, mul, sigmoid, tanh };

inline Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr) {
  Tensor out(a.shape());
  auto x = a.values();
  auto o = out.values();
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::mul: {
      if (!b) throw ShapeError("binary elementwise op needs two operands");
      require_same_shape(a, *b, "elementwise");
      auto y = b->values();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = op == ElementwiseOp::add ? x[i] + y[i] : x[i] * y[i];
      break;
    }
    case ElementwiseOp::sigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid(x[i]);
      break;
    case ElementwiseOp::tanh:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
      break;
  }
  return out;
}

inline Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_lastdim: row counts differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros(a.rows(), a.cols() + b.cols());
  out.mat().leftCols(a.cols()) = a.mat();
  out.mat().rightCols(b.cols()) = b.mat();
  return out;
}

// Inverted dropout: survivors are scaled by 1/keep so evaluation is a plain
// forward pass.
inline Tensor dropout_apply(const Tensor& x, const Tensor& mask, double keep) {
  require_same_shape(x, mask, "dropout_apply");
  if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("dropout keep probability must be in (0, 1]");
  Tensor out(x.shape());
  const double scale = 1.0 / keep;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i] * scale;
  return out;
}

}  // namespace hmctc
