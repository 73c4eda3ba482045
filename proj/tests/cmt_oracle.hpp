#pragma once

// Independent coupled-mode evaluation in long double: dense Gaussian
// elimination on M = i(w - W) + K K^T / 2, no Eigen. Used as the reference
// for the library's LU path and for finite-difference gradients.

#include <array>
#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

#include "spectral_codec/cmt.hpp"

namespace oracle {

using cld = std::complex<long double>;

struct Model {
  std::vector<long double> w;                 // n
  std::vector<std::array<long double, 2>> k;  // n x 2
};

inline Model from(const spectral_codec::CmtModel& m) {
  Model o;
  for (int i = 0; i < m.n_modes(); ++i) {
    o.w.push_back(m.resonance_freqs()[i]);
    o.k.push_back({m.coupling()(i, 0), m.coupling()(i, 1)});
  }
  return o;
}

// Solves A X = B in place (A n x n, B n x m), partial pivoting.
inline void solve(std::vector<std::vector<cld>>& A, std::vector<std::vector<cld>>& B) {
  const std::size_t n = A.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    if (std::abs(A[piv][c]) == 0.0L) throw std::runtime_error("oracle: singular");
    std::swap(A[c], A[piv]);
    std::swap(B[c], B[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const cld f = A[r][c] / A[c][c];
      for (std::size_t j = c; j < n; ++j) A[r][j] -= f * A[c][j];
      for (std::size_t j = 0; j < B[r].size(); ++j) B[r][j] -= f * B[c][j];
    }
  }
  for (std::size_t c = n; c-- > 0;) {
    for (std::size_t j = 0; j < B[c].size(); ++j) {
      cld s = B[c][j];
      for (std::size_t k = c + 1; k < n; ++k) s -= A[c][k] * B[k][j];
      B[c][j] = s / A[c][c];
    }
  }
}

inline std::vector<std::vector<cld>> matrix_m(const Model& m, long double omega) {
  const std::size_t n = m.w.size();
  std::vector<std::vector<cld>> A(n, std::vector<cld>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      A[i][j] = 0.5L * (m.k[i][0] * m.k[j][0] + m.k[i][1] * m.k[j][1]);
  for (std::size_t i = 0; i < n; ++i) A[i][i] += cld(0.0L, omega - m.w[i]);
  return A;
}

// a = M^-1 K s+
inline std::vector<cld> amplitudes(const Model& m, long double omega, cld s1, cld s2) {
  auto A = matrix_m(m, omega);
  std::vector<std::vector<cld>> B(m.w.size(), std::vector<cld>(1));
  for (std::size_t i = 0; i < m.w.size(); ++i) B[i][0] = m.k[i][0] * s1 + m.k[i][1] * s2;
  solve(A, B);
  std::vector<cld> a;
  for (auto& row : B) a.push_back(row[0]);
  return a;
}

// sigma = I - K^T M^-1 K, row-major 2x2.
inline std::array<cld, 4> sigma(const Model& m, long double omega) {
  auto A = matrix_m(m, omega);
  std::vector<std::vector<cld>> B(m.w.size(), std::vector<cld>(2));
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    B[i][0] = m.k[i][0];
    B[i][1] = m.k[i][1];
  }
  solve(A, B);
  std::array<cld, 4> s{};
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < 2; ++q) {
      cld acc = (p == q) ? 1.0L : 0.0L;
      for (std::size_t i = 0; i < m.w.size(); ++i) acc -= m.k[i][p] * B[i][q];
      s[2 * p + q] = acc;
    }
  return s;
}

// |H_21|^2 with C = port swap: H = C sigma, so H_21 = sigma_11.
inline long double transmission(const Model& m, long double omega) {
  return std::norm(sigma(m, omega)[0]);
}

// Parameter p in CmtModel::parameters() order.
inline long double& param(Model& m, int p) {
  const int n = static_cast<int>(m.w.size());
  if (p < n) return m.w[p];
  const int q = p - n;
  return m.k[q / 2][q % 2];
}

inline long double fd_gradient(const Model& m, long double omega, int p, long double h = 1e-6L) {
  Model a = m, b = m;
  param(a, p) += h;
  param(b, p) -= h;
  return (transmission(a, omega) - transmission(b, omega)) / (2 * h);
}

inline spectral_codec::CmtModel random_model(std::mt19937_64& rng, int n, double w_lo,
                                             double w_hi, double k_lo = 0.05,
                                             double k_hi = 0.7) {
  std::uniform_real_distribution<double> uw(w_lo, w_hi), uk(k_lo, k_hi);
  std::bernoulli_distribution sign(0.5);
  Eigen::VectorXd w(n);
  Eigen::MatrixXd K(n, 2);
  for (int i = 0; i < n; ++i) {
    w[i] = uw(rng);
    for (int p = 0; p < 2; ++p) K(i, p) = (sign(rng) ? -1.0 : 1.0) * uk(rng);
  }
  return spectral_codec::CmtModel(w, K);
}

}  // namespace oracle
