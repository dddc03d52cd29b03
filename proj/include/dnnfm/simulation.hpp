/**
 * @file simulation.hpp
 * @brief Monte Carlo designs with known covariance structure, their
 *        signal/noise diagnostics, and a replication study driver.
 *
 * All designs share the banded moving-average innovations
 *
 *   u_1 = e_1, u_2 = e_2 + a_1 e_1, u_3 = e_3 + a_2 e_2 + b_1 e_1,
 *   u_j = e_j + a_{j-1} e_{j-1} + b_{j-2} e_{j-2} + c_{j-3} e_{j-3},
 *
 * with e iid N(0,1) and a, b, c ~ N(0, 0.25) drawn once per replication,
 * so Sigma_u = B B' for the unit lower-banded loading matrix B.
 *
 * Design 1: f_j(x) = sum_m beta_mj (x_m if m even, x_m^2 if m odd), beta, x ~ N(0,1).
 * Design 2: f_j(x) = alpha_j' x + beta_j' psi(x), alpha ~ U(-1,1), beta ~ U(-0.5,0.5).
 * Design 3: design 2 with only sparsity_cardinality(J, m) nonzeros in row m of alpha and beta.
 *
 * Every draw of replication r is a function of (seed, r) only.
 */
#pragma once

#include "dnnfm/common.hpp"
#include "dnnfm/factor_model.hpp"
#include "dnnfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dnnfm
{

struct DesignConfig
{
    int design = 1;
    Eigen::Index n = 120;
    Eigen::Index J = 50;
    Eigen::Index d = 1;
    int reps = 1;
    std::uint64_t seed = 0;
    bool diagonal_errors = false;  ///< force a = b = c = 0 (Sigma_u = I)
    bool zero_nonlinear = false;   ///< designs 2/3: force beta = 0 (linear truth)

    void validate() const
    {
        if (design < 1 || design > 3)
            fail(ErrorKind::config, "design must be 1, 2 or 3, got " + std::to_string(design));
        if (n < 1 || J < 1 || d < 1 || reps < 1)
            fail(ErrorKind::config, "n, J, d and reps must all be >= 1");
        if (design == 3 && J < 2)
            fail(ErrorKind::config, "design 3 needs J >= 2");
    }
};

struct SimulatedPanel
{
    Matrix Y;
    Matrix X;
    Matrix f0;
    Matrix U;
    Matrix sigma_f_true;
    Matrix sigma_u_true;
    Matrix sigma_y_true;
    Matrix precision_y_true;
};

struct DiagnosticsRow
{
    double signal = 0.0;
    double noise = 0.0;
    std::optional<double> snr;  ///< empty when noise == 0
    double eigmin_f = 0.0;
    double eigmax_f = 0.0;
    double eigmin_u = 0.0;
    double eigmax_u = 0.0;
};

struct ErrorDraw
{
    Matrix U;             ///< n x J
    Matrix sigma_u_true;  ///< J x J, = loadings * loadings'
    Matrix loadings;      ///< J x J unit lower-banded
};

inline constexpr double kInnovationCoefSd = 0.5;  // variance 0.25
inline constexpr Eigen::Index kSigmaFMonteCarloDraws = 100000;

/// Loading matrix of the banded MA innovations from the coefficient draws.
inline Matrix innovation_loadings(const Vector& a, const Vector& b, const Vector& c)
{
    const Eigen::Index J = a.size();
    Matrix B = Matrix::Identity(J, J);
    for (Eigen::Index j = 1; j < J; ++j)
        B(j, j - 1) = a(j - 1);
    for (Eigen::Index j = 2; j < J; ++j)
        B(j, j - 2) = b(j - 2);
    for (Eigen::Index j = 3; j < J; ++j)
        B(j, j - 3) = c(j - 3);
    return B;
}

inline ErrorDraw simulate_errors(Eigen::Index J, Eigen::Index n, std::uint64_t seed, bool diagonal = false)
{
    if (J < 1 || n < 0)
        fail(ErrorKind::config, "simulate_errors: J must be >= 1");
    std::mt19937_64 coef_rng(derive_seed(seed, {1}));
    std::normal_distribution<double> coef(0.0, kInnovationCoefSd);
    Vector a(J), b(J), c(J);
    for (Eigen::Index j = 0; j < J; ++j)
    {
        a(j) = coef(coef_rng);
        b(j) = coef(coef_rng);
        c(j) = coef(coef_rng);
    }
    if (diagonal)
    {
        a.setZero();
        b.setZero();
        c.setZero();
    }

    ErrorDraw out;
    out.loadings = innovation_loadings(a, b, c);
    out.sigma_u_true = out.loadings * out.loadings.transpose();

    std::mt19937_64 e_rng(derive_seed(seed, {2}));
    std::normal_distribution<double> std_normal;
    Matrix E(n, J);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < J; ++j)
            E(i, j) = std_normal(e_rng);
    out.U = E * out.loadings.transpose();
    return out;
}

/// Component m: x_m^2 + x_m x_{(m+1) mod d}; for d = 1 just x_1^2.
inline Vector psi_transform(const Vector& x)
{
    const Eigen::Index d = x.size();
    if (d < 1)
        fail(ErrorKind::shape, "psi_transform: empty input");
    Vector out(d);
    for (Eigen::Index m = 0; m < d; ++m)
        out(m) = x(m) * x(m) + (d >= 2 ? x(m) * x((m + 1) % d) : 0.0);
    return out;
}

/// psi_transform applied to every row of X.
inline Matrix psi_rows(const Matrix& X)
{
    const Eigen::Index d = X.cols();
    Matrix out = X.array().square().matrix();
    if (d >= 2)
        for (Eigen::Index m = 0; m < d; ++m)
            out.col(m).array() += X.col(m).array() * X.col((m + 1) % d).array();
    return out;
}

/// floor(J^p) with p = 0.5 (m=1), 0.4 (m=2,3), 0.3 (m=4,5), 0.2 (m>=6); m is 1-based.
inline Eigen::Index sparsity_cardinality(Eigen::Index J, Eigen::Index m)
{
    if (J < 2 || m < 1)
        fail(ErrorKind::config, "sparsity_cardinality: need J >= 2 and m >= 1");
    const double p = m == 1 ? 0.5 : m <= 3 ? 0.4 : m <= 5 ? 0.3 : 0.2;
    // nudge guards exact powers such as 100^0.5 against rounding below the integer
    return static_cast<Eigen::Index>(std::floor(std::pow(static_cast<double>(J), p) + 1e-9));
}

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            M(i, j) = dist(rng);
    return M;
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            M(i, j) = dist(rng);
    return M;
}

namespace detail
{

inline void finish_panel(SimulatedPanel& p, const ErrorDraw& err)
{
    p.U = err.U;
    p.Y = p.f0 + p.U;
    p.sigma_u_true = err.sigma_u_true;
    p.sigma_f_true = symmetrize(p.sigma_f_true);
    p.sigma_y_true = p.sigma_f_true + p.sigma_u_true;
    Eigen::LDLT<Matrix> ldlt(p.sigma_y_true);
    p.precision_y_true = symmetrize(ldlt.solve(Matrix::Identity(p.sigma_y_true.rows(), p.sigma_y_true.cols())));
}

inline std::uint64_t rep_seed(const DesignConfig& cfg, int rep)
{
    return derive_seed(cfg.seed, {static_cast<std::uint64_t>(rep)});
}

}  // namespace detail

/// Design 1 panel from given coefficients (d x J) and factors (n x d); Sigma_f is analytic.
inline SimulatedPanel design1_panel(const Matrix& beta, const Matrix& X, const ErrorDraw& err)
{
    require_shape(beta.rows() == X.cols() && err.U.rows() == X.rows() && err.U.cols() == beta.cols(),
                  "design1_panel: shape mismatch");
    const Eigen::Index d = X.cols();
    const Eigen::Index J = beta.cols();
    SimulatedPanel p;
    p.X = X;
    p.f0 = Matrix::Zero(X.rows(), J);
    p.sigma_f_true = Matrix::Zero(J, J);
    for (Eigen::Index m = 0; m < d; ++m)
    {
        const bool odd = (m + 1) % 2 == 1;  // 1-based index m+1
        const Vector feature = odd ? Vector(X.col(m).array().square()) : Vector(X.col(m));
        p.f0 += feature * beta.row(m);
        // Var(x) = 1, Var(x^2) = 2 and the features are mutually uncorrelated.
        p.sigma_f_true += (odd ? 2.0 : 1.0) * beta.row(m).transpose() * beta.row(m);
    }
    detail::finish_panel(p, err);
    return p;
}

inline SimulatedPanel simulate_design1(const DesignConfig& cfg, int rep = 0)
{
    cfg.validate();
    const auto seed = detail::rep_seed(cfg, rep);
    const Matrix beta = standard_normal_matrix(cfg.d, cfg.J, derive_seed(seed, {10}));
    const Matrix X = standard_normal_matrix(cfg.n, cfg.d, derive_seed(seed, {11}));
    return design1_panel(beta, X, simulate_errors(cfg.J, cfg.n, derive_seed(seed, {12}), cfg.diagonal_errors));
}

/**
 * Monte Carlo covariance of the 2d-dimensional feature z = [x, psi(x)] from
 * `draws` standard normal factor vectors. Since f = alpha' x + beta' psi(x) is
 * linear in z, C' Cov(z) C is exactly the sample covariance of f over the
 * same draws, with C = [alpha; beta].
 */
inline Matrix additive_feature_covariance(Eigen::Index d, std::uint64_t seed, Eigen::Index draws = kSigmaFMonteCarloDraws)
{
    const Matrix X = standard_normal_matrix(draws, d, seed);
    Matrix Z(draws, 2 * d);
    Z.leftCols(d) = X;
    Z.rightCols(d) = psi_rows(X);
    const Matrix centered = Z.rowwise() - Z.colwise().mean();
    return symmetrize(centered.transpose() * centered / static_cast<double>(draws - 1));
}

/// Designs 2/3 panel from given coefficients (both d x J).
inline SimulatedPanel additive_panel(const Matrix& alpha, const Matrix& beta, const Matrix& X, const ErrorDraw& err,
                                     std::uint64_t mc_seed, Eigen::Index mc_draws = kSigmaFMonteCarloDraws)
{
    require_shape(alpha.rows() == X.cols() && beta.rows() == X.cols() && alpha.cols() == beta.cols() &&
                      err.U.rows() == X.rows() && err.U.cols() == alpha.cols(),
                  "additive_panel: shape mismatch");
    const Eigen::Index d = X.cols();
    SimulatedPanel p;
    p.X = X;
    p.f0 = X * alpha + psi_rows(X) * beta;
    Matrix C(2 * d, alpha.cols());
    C.topRows(d) = alpha;
    C.bottomRows(d) = beta;
    p.sigma_f_true = C.transpose() * additive_feature_covariance(d, mc_seed, mc_draws) * C;
    detail::finish_panel(p, err);
    return p;
}

inline SimulatedPanel simulate_design2(const DesignConfig& cfg, int rep = 0)
{
    cfg.validate();
    const auto seed = detail::rep_seed(cfg, rep);
    std::mt19937_64 coef_rng(derive_seed(seed, {20}));
    const Matrix alpha = uniform_matrix(cfg.d, cfg.J, -1.0, 1.0, coef_rng);
    Matrix beta = uniform_matrix(cfg.d, cfg.J, -0.5, 0.5, coef_rng);
    if (cfg.zero_nonlinear)
        beta.setZero();
    const Matrix X = standard_normal_matrix(cfg.n, cfg.d, derive_seed(seed, {21}));
    return additive_panel(alpha, beta, X, simulate_errors(cfg.J, cfg.n, derive_seed(seed, {22}), cfg.diagonal_errors),
                          derive_seed(seed, {23}));
}

/// Zeroes all but `keep` uniformly chosen entries of row m.
inline void sparsify_row(Matrix& M, Eigen::Index m, Eigen::Index keep, std::mt19937_64& rng)
{
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(M.cols()));
    std::iota(pos.begin(), pos.end(), Eigen::Index{0});
    std::shuffle(pos.begin(), pos.end(), rng);
    for (std::size_t k = static_cast<std::size_t>(keep); k < pos.size(); ++k)
        M(m, pos[k]) = 0.0;
}

inline SimulatedPanel simulate_design3(const DesignConfig& cfg, int rep = 0)
{
    cfg.validate();
    const auto seed = detail::rep_seed(cfg, rep);
    std::mt19937_64 coef_rng(derive_seed(seed, {30}));
    Matrix alpha = uniform_matrix(cfg.d, cfg.J, -1.0, 1.0, coef_rng);
    Matrix beta = uniform_matrix(cfg.d, cfg.J, -0.5, 0.5, coef_rng);
    std::mt19937_64 pos_rng(derive_seed(seed, {31}));
    for (Eigen::Index m = 0; m < cfg.d; ++m)
    {
        const auto keep = sparsity_cardinality(cfg.J, m + 1);
        sparsify_row(alpha, m, keep, pos_rng);
        sparsify_row(beta, m, keep, pos_rng);
    }
    if (cfg.zero_nonlinear)
        beta.setZero();
    const Matrix X = standard_normal_matrix(cfg.n, cfg.d, derive_seed(seed, {32}));
    return additive_panel(alpha, beta, X, simulate_errors(cfg.J, cfg.n, derive_seed(seed, {33}), cfg.diagonal_errors),
                          derive_seed(seed, {34}));
}

inline SimulatedPanel simulate(const DesignConfig& cfg, int rep = 0)
{
    switch (cfg.design)
    {
    case 1: return simulate_design1(cfg, rep);
    case 2: return simulate_design2(cfg, rep);
    case 3: return simulate_design3(cfg, rep);
    default: cfg.validate();
    }
    fail(ErrorKind::config, "unknown design");
}

/// signal = tau' Sigma_f tau, noise = tau' Sigma_u tau, tau = 1/sqrt(J) * ones.
inline DiagnosticsRow snr_diagnostics(const Matrix& sigma_f, const Matrix& sigma_u)
{
    const Eigen::Index J = sigma_f.rows();
    require_shape(J > 0 && sigma_f.cols() == J && sigma_u.rows() == J && sigma_u.cols() == J,
                  "snr_diagnostics: expected two JxJ matrices");
    const Vector tau = Vector::Constant(J, 1.0 / std::sqrt(static_cast<double>(J)));
    DiagnosticsRow row;
    row.signal = tau.dot(sigma_f * tau);
    row.noise = tau.dot(sigma_u * tau);
    if (row.noise != 0.0)
        row.snr = row.signal / row.noise;
    const auto ef = eig_extremes(symmetrize(sigma_f));
    const auto eu = eig_extremes(symmetrize(sigma_u));
    row.eigmin_f = ef.eigmin;
    row.eigmax_f = ef.eigmax;
    row.eigmin_u = eu.eigmin;
    row.eigmax_u = eu.eigmax;
    return row;
}

/// Per-replication diagnostics of the true covariance matrices (no fitting).
inline std::vector<DiagnosticsRow> design_diagnostics(const DesignConfig& cfg, unsigned threads = 1)
{
    cfg.validate();
    std::vector<DiagnosticsRow> rows(static_cast<std::size_t>(cfg.reps));
    parallel_for(rows.size(), threads, [&](std::size_t r) {
        const auto panel = simulate(cfg, static_cast<int>(r));
        rows[r] = snr_diagnostics(panel.sigma_f_true, panel.sigma_u_true);
    });
    return rows;
}

inline DiagnosticsRow average_diagnostics(const std::vector<DiagnosticsRow>& rows)
{
    DiagnosticsRow avg;
    if (rows.empty())
        return avg;
    double snr_sum = 0.0;
    std::size_t snr_count = 0;
    for (const auto& r : rows)
    {
        avg.signal += r.signal;
        avg.noise += r.noise;
        avg.eigmin_f += r.eigmin_f;
        avg.eigmax_f += r.eigmax_f;
        avg.eigmin_u += r.eigmin_u;
        avg.eigmax_u += r.eigmax_u;
        if (r.snr)
        {
            snr_sum += *r.snr;
            ++snr_count;
        }
    }
    const double k = static_cast<double>(rows.size());
    avg.signal /= k;
    avg.noise /= k;
    avg.eigmin_f /= k;
    avg.eigmax_f /= k;
    avg.eigmin_u /= k;
    avg.eigmax_u /= k;
    if (snr_count > 0)
        avg.snr = snr_sum / static_cast<double>(snr_count);
    return avg;
}

// ---------------------------------------------------------------------------
// Replication study
// ---------------------------------------------------------------------------

struct StudyCell
{
    int design = 1;
    Eigen::Index n = 60;
    Eigen::Index J = 50;
    Eigen::Index d = 1;
};

struct StudyMetrics
{
    bool function_error = true;
    bool cov_error = true;
    bool precision_error = true;
};

struct StudyConfig
{
    std::vector<StudyCell> grid;
    std::vector<FactorMode> methods{FactorMode::dnn, FactorMode::sdnn, FactorMode::linear};
    StudyMetrics metrics;
    int reps = 1;
    std::uint64_t seed = 0;
    bool zero_nonlinear = false;
    TrainConfig dense = TrainConfig::dense();
    TrainConfig sparse = TrainConfig::sparse();
    std::optional<NetworkSpec> network;
    BundleOptions bundle;
    unsigned threads = 1;
};

struct StudyRow
{
    StudyCell cell;
    FactorMode method = FactorMode::linear;
    // per-replication values of successful replications, in replication order
    std::vector<double> function_errors;
    std::vector<double> cov_errors;
    std::vector<double> precision_errors;
    int reps_ok = 0;
    int reps_failed = 0;
};

inline double mean_of(const std::vector<double>& v)
{
    if (v.empty())
        return std::nan("");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v)
{
    if (v.empty())
        return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

/// Errors of one fitted method against the panel's ground truth.
inline ErrorReport evaluate_method(const SimulatedPanel& panel, FactorMode method, const StudyConfig& cfg,
                                   std::uint64_t train_seed)
{
    TrainConfig tc = method == FactorMode::sdnn ? cfg.sparse : cfg.dense;
    tc.seed = train_seed;
    FactorFitOptions fo;
    fo.network = cfg.network;
    fo.threads = 1;
    const auto model = fit_model(panel.Y, panel.X, method, tc, {}, fo);
    const Matrix fitted = predict(model, panel.X);

    ErrorReport rep;
    if (cfg.metrics.function_error)
        rep.function_error = function_error(fitted, panel.f0);
    if (cfg.metrics.cov_error || cfg.metrics.precision_error)
    {
        const auto bundle = bundle_from_parts(fitted, panel.Y - fitted, cfg.bundle);
        if (cfg.metrics.cov_error)
            rep.cov_error = cov_error_max(bundle.sigma_y, panel.sigma_y_true);
        if (cfg.metrics.precision_error)
            rep.precision_error = spectral_norm(symmetrize(bundle.precision_y - panel.precision_y_true));
    }
    return rep;
}

/**
 * For every grid cell and replication: simulate once, fit every method, and
 * score it against the truth. Replications run in parallel; a replication
 * whose fit fails is counted in reps_failed and left out of the values.
 * Rows are ordered cell-major, then by method.
 */
inline std::vector<StudyRow> run_study(const StudyConfig& cfg)
{
    if (cfg.reps < 1)
        fail(ErrorKind::config, "run_study: need at least one replication");
    if (cfg.methods.empty())
        fail(ErrorKind::config, "run_study: no methods");
    std::vector<StudyRow> rows;
    for (const auto& cell : cfg.grid)
    {
        DesignConfig dc{cell.design, cell.n, cell.J, cell.d, cfg.reps, cfg.seed, false, cfg.zero_nonlinear};
        dc.validate();
        const std::size_t M = cfg.methods.size();
        std::vector<std::vector<std::optional<ErrorReport>>> results(
            static_cast<std::size_t>(cfg.reps), std::vector<std::optional<ErrorReport>>(M));
        parallel_for(results.size(), cfg.threads, [&](std::size_t r) {
            const auto panel = simulate(dc, static_cast<int>(r));
            for (std::size_t mi = 0; mi < M; ++mi)
            {
                const auto train_seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(r), 0x7EA1, mi});
                try
                {
                    results[r][mi] = evaluate_method(panel, cfg.methods[mi], cfg, train_seed);
                }
                catch (const Error&)
                {
                    results[r][mi] = std::nullopt;
                }
            }
        });
        for (std::size_t mi = 0; mi < M; ++mi)
        {
            StudyRow row;
            row.cell = cell;
            row.method = cfg.methods[mi];
            for (const auto& per_rep : results)
            {
                if (!per_rep[mi])
                {
                    ++row.reps_failed;
                    continue;
                }
                ++row.reps_ok;
                row.function_errors.push_back(per_rep[mi]->function_error);
                row.cov_errors.push_back(per_rep[mi]->cov_error);
                row.precision_errors.push_back(per_rep[mi]->precision_error);
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace dnnfm
