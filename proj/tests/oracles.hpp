#pragma once

// Brute-force reference implementations used by the tests. Written entry by
// entry from the defining formulas, without the library's vectorized paths.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline Matrix omega(const std::vector<double>& positions, const Vector& f, const Vector& theta) {
  Matrix out(static_cast<Index>(positions.size()), 2 * f.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (Index k = 0; k < f.size(); ++k) {
      out(static_cast<Index>(i), 2 * k) = std::cos(kTwoPi * f[k] * positions[i] + theta[k]);
      out(static_cast<Index>(i), 2 * k + 1) = std::sin(kTwoPi * f[k] * positions[i] + theta[k]);
    }
  }
  return out;
}

inline double sine_kernel_value(const Vector& f, const Vector& theta, const Vector& gain, double tau) {
  double s = 0.0;
  for (Index k = 0; k < f.size(); ++k) s += gain[k] * gain[k] * std::cos(kTwoPi * f[k] * tau + theta[k]);
  return s;
}

inline Matrix sine_kernel(const Vector& f, const Vector& theta, const Vector& gain,
                          const std::vector<double>& q, const std::vector<double>& k) {
  Matrix out(static_cast<Index>(q.size()), static_cast<Index>(k.size()));
  for (std::size_t m = 0; m < q.size(); ++m) {
    for (std::size_t n = 0; n < k.size(); ++n) {
      out(static_cast<Index>(m), static_cast<Index>(n)) = sine_kernel_value(f, theta, gain, q[m] - k[n]);
    }
  }
  return out;
}

/// Covariance of y_q(m) = sum_p fq[p] z(m - p) and y_k(n) = sum_p fk[p] z(n - p)
/// for white z, by a double loop over taps.
inline Matrix conv_kernel(const Vector& fq, const Vector& fk, Index length) {
  Matrix out = Matrix::Zero(length, length);
  for (Index m = 0; m < length; ++m) {
    for (Index n = 0; n < length; ++n) {
      for (Index p = 0; p < fq.size(); ++p) {
        for (Index p2 = 0; p2 < fk.size(); ++p2) {
          if (m - p == n - p2) out(m, n) += fq[p] * fk[p2];
        }
      }
    }
  }
  return out;
}

/// Y = sum_n a(m, n) v_n / sum_n a(m, n), a = phi_q phi_k^T, masked to n <= m when causal.
inline Matrix quadratic_linear_attention(const Matrix& pq, const Matrix& pk, const Matrix& v,
                                         bool causal) {
  Matrix y = Matrix::Zero(pq.rows(), v.cols());
  for (Index m = 0; m < pq.rows(); ++m) {
    double z = 0.0;
    for (Index n = 0; n < pk.rows(); ++n) {
      if (causal && n > m) break;
      const double a = pq.row(m).dot(pk.row(n));
      z += a;
      y.row(m) += a * v.row(n);
    }
    y.row(m) /= z;
  }
  return y;
}

inline Matrix softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale,
                                bool causal) {
  Matrix y = Matrix::Zero(q.rows(), v.cols());
  for (Index m = 0; m < q.rows(); ++m) {
    double z = 0.0;
    for (Index n = 0; n < k.rows(); ++n) {
      if (causal && n > m) break;
      const double a = std::exp(q.row(m).dot(k.row(n)) / scale);
      z += a;
      y.row(m) += a * v.row(n);
    }
    y.row(m) /= z;
  }
  return y;
}

/// Largest absolute deviation of any entry from the mean of its diagonal.
inline double max_diagonal_spread(const Matrix& a) {
  double worst = 0.0;
  for (Index off = -(a.rows() - 1); off < a.cols(); ++off) {
    std::vector<double> d;
    for (Index m = 0; m < a.rows(); ++m) {
      const Index n = m + off;
      if (n >= 0 && n < a.cols()) d.push_back(a(m, n));
    }
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(d.size());
    for (double x : d) worst = std::max(worst, std::abs(x - mean));
  }
  return worst;
}

/// Mean over diagonals (with at least two entries) of the within-diagonal
/// population standard deviation.
inline double mean_diagonal_stdev(const Matrix& a) {
  double total = 0.0;
  int count = 0;
  for (Index off = -(a.rows() - 2); off < a.cols() - 1; ++off) {
    std::vector<double> d;
    for (Index m = 0; m < a.rows(); ++m) {
      const Index n = m + off;
      if (n >= 0 && n < a.cols()) d.push_back(a(m, n));
    }
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    total += std::sqrt(var / static_cast<double>(d.size()));
    ++count;
  }
  return total / count;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
