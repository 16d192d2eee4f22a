#pragma once

// Dense linear-algebra kernels shared by every solver: discrete Lyapunov
// solves, spectral radius, minimum-norm least squares.

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace magps {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Every tolerance used by the solvers. Tests may construct tighter or looser
/// copies and pass them explicitly.
struct NumericsConfig {
  // Lyapunov doubling stops once the residual drops below this (relative).
  double lyapunov_tolerance = 1e-12;
  int lyapunov_max_doublings = 200;
  // A matrix with spectral radius at or above 1 - margin is not contractive.
  double stability_margin = 1e-9;
  // Gauss-Seidel Nash sweeps stop when the max gain change is below this.
  double nash_step_tolerance = 1e-12;
  int nash_max_sweeps = 10000;
  // Acceptance level for the Nash stationarity residuals.
  double nash_residual_tolerance = 1e-8;
  // Central finite-difference step for pseudo-gradient Jacobians.
  double jacobian_step = 1e-6;
  // Stage systems with a larger condition number take the min-norm branch.
  double degenerate_condition = 1e12;
  // Eigenvalue floors for the local LQ projection.
  double state_cost_floor = 1e-6;
  double control_cost_floor = 1e-6;
};

inline const NumericsConfig& default_numerics() {
  static const NumericsConfig config{};
  return config;
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Raised when an iteration matrix has spectral radius >= 1 - margin.
class NonContractive : public Error {
 public:
  NonContractive(const std::string& what, double radius)
      : Error(what + " (spectral radius " + std::to_string(radius) + ")"),
        radius_(radius) {}
  double radius() const { return radius_; }

 private:
  double radius_;
};

/// A feedback profile whose closed loop is not exponentially stable.
class NotStabilizing : public NonContractive {
 public:
  using NonContractive::NonContractive;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw DimensionMismatch(what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline std::vector<std::complex<double>> eigenvalues(const Matrix& m) {
  require(m.rows() == m.cols(), "eigenvalues: matrix must be square");
  std::vector<std::complex<double>> out;
  if (m.rows() == 0) return out;
  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
  const auto& values = solver.eigenvalues();
  out.reserve(static_cast<std::size_t>(values.size()));
  for (Eigen::Index k = 0; k < values.size(); ++k) out.push_back(values[k]);
  return out;
}

inline double spectral_radius(const Matrix& m) {
  require(m.rows() == m.cols(), "spectral_radius: matrix must be square");
  double radius = 0.0;
  for (const auto& lambda : eigenvalues(m)) radius = std::max(radius, std::abs(lambda));
  return radius;
}

inline double min_symmetric_eigenvalue(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(m), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

/// Spectral (induced 2-) norm.
inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

/// Solves P = M' P M + W by doubling: P_{k+1} = P_k + M_k' P_k M_k,
/// M_{k+1} = M_k^2, which sums 2^k terms of the series after k doublings.
inline Matrix solve_discrete_lyapunov(const Matrix& M, const Matrix& W,
                                      const NumericsConfig& cfg = default_numerics()) {
  require(M.rows() == M.cols(), "solve_discrete_lyapunov: M must be square");
  require(W.rows() == M.rows() && W.cols() == M.cols(),
          "solve_discrete_lyapunov: W must match M");
  const double radius = spectral_radius(M);
  if (!(radius < 1.0 - cfg.stability_margin))
    throw NonContractive("solve_discrete_lyapunov: M is not contractive", radius);

  const double scale = 1.0 + W.norm();
  Matrix P = W;
  Matrix Mk = M;
  for (int k = 0; k < cfg.lyapunov_max_doublings; ++k) {
    const Matrix increment = Mk.transpose() * P * Mk;
    P += increment;
    Mk = Mk * Mk;
    if (increment.norm() <= cfg.lyapunov_tolerance * scale) {
      const double residual = (P - M.transpose() * P * M - W).norm();
      if (residual <= cfg.lyapunov_tolerance * scale) break;
    }
  }
  return symmetrize(P);
}

inline double lyapunov_residual(const Matrix& M, const Matrix& W, const Matrix& P) {
  return (P - M.transpose() * P * M - W).norm();
}

/// Least-squares solution of G z = h with minimum Euclidean norm.
inline Vector least_squares_min_norm(const Matrix& G, const Vector& h) {
  require(G.rows() == h.size(), "least_squares_min_norm: rows of G must match h");
  if (G.cols() == 0) return Vector(0);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G);
  return cod.solve(h);
}

/// Column-wise minimum-norm solve of G Z = H.
inline Matrix least_squares_min_norm(const Matrix& G, const Matrix& H) {
  require(G.rows() == H.rows(), "least_squares_min_norm: rows of G must match H");
  if (G.cols() == 0) return Matrix(0, H.cols());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(G);
  return cod.solve(H);
}

/// 2-norm condition number; infinite for singular matrices.
inline double condition_number(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace magps
