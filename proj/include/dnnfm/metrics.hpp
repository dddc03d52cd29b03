/**
 * @file metrics.hpp
 * @brief Estimation error metrics and spectral utilities for symmetric matrices.
 */
#pragma once

#include "dnnfm/common.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <string>

namespace dnnfm
{

struct ErrorReport
{
    double function_error = 0.0;
    double cov_error = 0.0;
    double precision_error = 0.0;
};

/// max_j (1/n) sum_i (f_hat_ij - f0_ij)^2
inline double function_error(const Matrix& f_hat, const Matrix& f0)
{
    require_shape(f_hat.rows() == f0.rows() && f_hat.cols() == f0.cols(),
                  "function_error: " + shape_str(f_hat.rows(), f_hat.cols()) + " vs " + shape_str(f0.rows(), f0.cols()));
    require_shape(f_hat.rows() > 0 && f_hat.cols() > 0, "function_error: empty input");
    return (f_hat - f0).colwise().squaredNorm().maxCoeff() / static_cast<double>(f_hat.rows());
}

/// Entrywise max |A - B|.
inline double cov_error_max(const Matrix& A, const Matrix& B)
{
    require_shape(A.rows() == B.rows() && A.cols() == B.cols(),
                  "cov_error_max: " + shape_str(A.rows(), A.cols()) + " vs " + shape_str(B.rows(), B.cols()));
    if (A.size() == 0)
        return 0.0;
    return (A - B).cwiseAbs().maxCoeff();
}

inline void require_symmetric(const Matrix& S, double tol, const char* who)
{
    if (S.rows() != S.cols())
        fail(ErrorKind::shape, std::string(who) + ": matrix is not square");
    if (S.size() == 0)
        return;
    const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > tol * scale)
        fail(ErrorKind::config, std::string(who) + ": matrix is not symmetric");
}

struct PowerIterationOptions
{
    double rel_tol = 1e-10;
    int max_iter = 10000;
    std::uint64_t seed = 0x5eed;
};

/**
 * Largest absolute eigenvalue of a symmetric matrix by power iteration on S^2.
 * The start vector is the normalized ones vector plus a small seeded
 * perturbation. Stops once the eigen-residual of S^2 is below rel_tol times
 * the Rayleigh quotient. When the two leading magnitudes are nearly tied the
 * iteration can stall; at the cap the value is taken from a full symmetric
 * eigendecomposition instead.
 */
inline double spectral_norm(const Matrix& S, const PowerIterationOptions& opts = {})
{
    require_symmetric(S, 1e-10, "spectral_norm");
    const Eigen::Index J = S.rows();
    if (J == 0)
        return 0.0;
    if (S.cwiseAbs().maxCoeff() == 0.0)
        return 0.0;

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> noise(0.0, 1e-3);
    Vector v = Vector::Ones(J) / std::sqrt(static_cast<double>(J));
    for (Eigen::Index i = 0; i < J; ++i)
        v(i) += noise(rng);
    v.normalize();

    for (int it = 0; it < opts.max_iter; ++it)
    {
        Vector w = S * (S * v);
        const double norm_w = w.norm();
        if (norm_w == 0.0)
        {
            // start vector fell in the null space of S; restart from a unit basis vector
            v = Vector::Unit(J, it % J);
            continue;
        }
        const double mu = v.dot(w);  // Rayleigh quotient of S^2
        const double residual = (w - mu * v).norm();
        v = w / norm_w;
        if (residual <= opts.rel_tol * mu)
            return std::sqrt(mu);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(S, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        fail(ErrorKind::numeric, "spectral_norm: no convergence after " + std::to_string(opts.max_iter) + " iterations");
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

struct EigExtremes
{
    double eigmin = 0.0;
    double eigmax = 0.0;
};

/// Extreme eigenvalues via Householder tridiagonalization + implicit symmetric QR.
inline EigExtremes eig_extremes(const Matrix& S)
{
    require_symmetric(S, 1e-10, "eig_extremes");
    if (S.rows() == 0)
        fail(ErrorKind::shape, "eig_extremes: empty matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(S, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        fail(ErrorKind::numeric, "eig_extremes: QR iteration did not converge for " + shape_str(S.rows(), S.cols()) +
                                     " matrix");
    const auto& ev = solver.eigenvalues();
    return {ev(0), ev(ev.size() - 1)};
}

}  // namespace dnnfm
