#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

namespace autotraces {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class Derived>
Mat gelu(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

// Row-wise normalization with a 1xD gain and bias.
Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache = nullptr);

// Returns dx; accumulates into d_gain / d_bias when non-null.
Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache, Mat* d_gain, Mat* d_bias);

// log(sum(exp(row))) computed stably.
double log_sum_exp(const Row& row);

}  // namespace autotraces
