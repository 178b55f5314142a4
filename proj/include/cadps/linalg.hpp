#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cadps {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Raised when a numerical routine meets a non-finite value or an operator
// that violates its positive-definiteness contract.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline double logsumexp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

struct CgReport {
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
};

struct CgResult {
  Vector solution;
  CgReport report;
};

/// Conjugate gradient for a symmetric positive-definite operator given as a
/// callable `Vector(const Vector&)`. Stops once
/// ||op(x) - rhs|| <= tol * max(1, ||rhs||), checked against the true residual.
template <typename Operator>
CgResult conjugate_gradient_solve(Operator&& apply_operator, const Vector& rhs,
                                  double tol, int max_iter) {
  if (!(tol > 0.0)) throw std::invalid_argument("cg: tol must be positive");
  if (max_iter <= 0) throw std::invalid_argument("cg: max_iter must be positive");
  if (!all_finite(rhs)) throw NumericalError("cg: non-finite right-hand side");

  const double threshold = tol * std::max(1.0, rhs.norm());
  CgResult out{Vector::Zero(rhs.size()), {}};
  Vector r = rhs;
  double rr = r.squaredNorm();
  if (std::sqrt(rr) <= threshold) {
    out.report = {0, std::sqrt(rr), true};
    return out;
  }
  Vector p = r;
  Vector& x = out.solution;
  int it = 0;
  while (it < max_iter) {
    const Vector ap = apply_operator(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap)) throw NumericalError("cg: non-finite curvature");
    if (pap <= 0.0) throw NumericalError("cg: operator is not positive definite");
    const double step = rr / pap;
    x.noalias() += step * p;
    r.noalias() -= step * ap;
    ++it;
    double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next)) throw NumericalError("cg: non-finite residual");
    if (std::sqrt(rr_next) <= threshold) {
      // Confirm against the true residual; restart from it on drift.
      r = rhs - apply_operator(x);
      rr_next = r.squaredNorm();
      if (std::sqrt(rr_next) <= threshold) {
        out.report = {it, std::sqrt(rr_next), true};
        return out;
      }
      p = r;
      rr = rr_next;
      continue;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  const double true_res = (rhs - apply_operator(x)).norm();
  out.report = {it, true_res, true_res <= threshold};
  return out;
}

/// log N(x; mean, cov) through a Cholesky factorization of cov.
inline double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  const auto k = x.size();
  if (mean.size() != k || cov.rows() != k || cov.cols() != k)
    throw std::invalid_argument("gaussian_log_pdf: dimension mismatch");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("gaussian_log_pdf: covariance is not positive definite");
  const Matrix& l = llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) log_det += 2.0 * std::log(l(i, i));
  const Vector w = llt.matrixL().solve(x - mean);
  return -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) + log_det +
                 w.squaredNorm());
}

struct Eigensystem {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column i pairs with eigenvalues[i]
};

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
inline Eigensystem spd_eigendecomposition(const Matrix& g) {
  const auto n = g.rows();
  if (g.cols() != n) throw std::invalid_argument("eigendecomposition: matrix not square");
  if (n == 0 || n > 32) throw std::invalid_argument("eigendecomposition: size must be in [1, 32]");
  const double scale = std::max(g.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("eigendecomposition: matrix not symmetric");

  Matrix a = 0.5 * (g + g.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double frob = a.norm();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * frob) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto i, auto j) { return a(i, i) > a(j, j); });
  Eigensystem out{Vector(n), Matrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.eigenvalues[i] = a(src, src);
    out.eigenvectors.col(i) = v.col(src);
  }
  return out;
}

}  // namespace cadps
