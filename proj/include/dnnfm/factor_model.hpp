/**
 * @file factor_model.hpp
 * @brief Nonlinear observed-factor model: per-asset link fitting and the
 *        covariance / precision bundle built from its residuals.
 *
 * Pipeline for a panel Y (n x J) and factors X (n x d):
 *
 *   f_hat      = predict(fit_model(Y, X))          n x J
 *   u_hat      = Y - f_hat
 *   sigma_f    = (1/n) sum (f_hat_i - mean)(f_hat_i - mean)'
 *   sigma_u    = (1/n) u_hat' u_hat               (no demeaning)
 *   theta_jk   = (1/n) sum_i |u_ji u_ki - sigma_u_jk|
 *   sigma_u_th = sigma_u with off-diagonal entries below theta_jk * omega_n zeroed
 *   sigma_y    = sigma_f + sigma_u_th
 *
 * The precision of sigma_y is formed from the inverse of sigma_u_th only, so a
 * singular sigma_f is never inverted.
 */
#pragma once

#include "dnnfm/common.hpp"
#include "dnnfm/metrics.hpp"
#include "dnnfm/nn_core.hpp"
#include "dnnfm/trainer.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dnnfm
{

enum class FactorMode
{
    dnn,
    sdnn,
    linear
};

inline const char* to_string(FactorMode m)
{
    switch (m)
    {
    case FactorMode::dnn: return "dnn";
    case FactorMode::sdnn: return "sdnn";
    case FactorMode::linear: return "linear";
    }
    return "?";
}

inline std::optional<FactorMode> parse_factor_mode(const std::string& s)
{
    if (s == "dnn")
        return FactorMode::dnn;
    if (s == "sdnn")
        return FactorMode::sdnn;
    if (s == "linear")
        return FactorMode::linear;
    return std::nullopt;
}

/// Affine predictor y = coef(0) + coef.tail(d)' x.
struct LinearModel
{
    Vector coef;
};

using AssetPredictor = std::variant<NetworkParams, LinearModel>;

struct AssetFitInfo
{
    int stopped_epoch = 0;
    double chosen_lambda = 0.0;
    double best_val_mse = 0.0;
    std::vector<std::string> diagnostics;
};

struct FittedFactorModel
{
    FactorMode mode = FactorMode::linear;
    std::vector<AssetPredictor> models;
    std::vector<std::string> asset_ids;
    int factor_dim = 0;
    std::vector<AssetFitInfo> fit_info;  ///< empty for linear mode
};

/// Settings shared by the per-asset fits.
struct FactorFitOptions
{
    std::optional<NetworkSpec> network;  ///< default: default_network_spec(d)
    unsigned threads = 1;
};

inline std::vector<std::string> default_asset_ids(Eigen::Index J)
{
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(J));
    for (Eigen::Index j = 0; j < J; ++j)
        ids.push_back("asset" + std::to_string(j + 1));
    return ids;
}

inline Vector predict_one(const AssetPredictor& model, const Matrix& factors)
{
    return std::visit(
        [&](const auto& m) -> Vector {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, NetworkParams>)
                return forward_batch(m, factors);
            else
            {
                require_shape(m.coef.size() == factors.cols() + 1, "linear predictor: factor width mismatch");
                return (factors * m.coef.tail(factors.cols())).array() + m.coef(0);
            }
        },
        model);
}

inline LinearModel fit_ols(const Matrix& factors, const Vector& y)
{
    Matrix design(factors.rows(), factors.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(factors.cols()) = factors;
    return {design.colPivHouseholderQr().solve(y)};
}

/**
 * Fits one predictor per asset on the shared factor panel. Network fits use
 * the seed derive_seed(cfg.seed, {j}) for asset j, so results do not depend
 * on the thread schedule.
 */
inline FittedFactorModel fit_model(const Matrix& returns, const Matrix& factors, FactorMode mode,
                                   const TrainConfig& train_cfg, std::vector<std::string> asset_ids = {},
                                   const FactorFitOptions& opts = {})
{
    require_shape(returns.rows() == factors.rows(), "fit_model: returns have " + std::to_string(returns.rows()) +
                                                        " rows, factors have " + std::to_string(factors.rows()));
    if (returns.rows() < 20)
        fail(ErrorKind::data, "fit_model: need at least 20 observations, got " + std::to_string(returns.rows()));
    if (returns.cols() < 1 || factors.cols() < 1)
        fail(ErrorKind::data, "fit_model: need at least one asset and one factor");
    if (!returns.allFinite() || !factors.allFinite())
        fail(ErrorKind::data, "fit_model: non-finite input values");
    if (asset_ids.empty())
        asset_ids = default_asset_ids(returns.cols());
    require_shape(static_cast<Eigen::Index>(asset_ids.size()) == returns.cols(), "fit_model: asset id count mismatch");

    const auto J = static_cast<std::size_t>(returns.cols());
    FittedFactorModel model;
    model.mode = mode;
    model.asset_ids = std::move(asset_ids);
    model.factor_dim = static_cast<int>(factors.cols());
    model.models.resize(J);

    if (mode == FactorMode::linear)
    {
        for (std::size_t j = 0; j < J; ++j)
            model.models[j] = fit_ols(factors, returns.col(static_cast<Eigen::Index>(j)));
        return model;
    }

    TrainConfig base = train_cfg;
    if (mode == FactorMode::sdnn && base.mode != TrainMode::sparse)
        fail(ErrorKind::config, "fit_model: sdnn mode needs a sparse TrainConfig");
    if (mode == FactorMode::dnn && base.mode != TrainMode::dense)
        fail(ErrorKind::config, "fit_model: dnn mode needs a dense TrainConfig");
    const NetworkSpec spec = opts.network.value_or(default_network_spec(model.factor_dim));

    model.fit_info.resize(J);
    parallel_for(J, opts.threads, [&](std::size_t j) {
        TrainConfig cfg = base;
        cfg.seed = derive_seed(base.seed, {j});
        FitResult r = fit(factors, returns.col(static_cast<Eigen::Index>(j)), spec, cfg);
        AssetFitInfo info;
        info.stopped_epoch = r.stopped_epoch;
        info.chosen_lambda = r.chosen_lambda;
        info.best_val_mse = r.val_curve.empty() ? std::nan("") : *std::min_element(r.val_curve.begin(), r.val_curve.end());
        info.diagnostics = std::move(r.diagnostics);
        model.fit_info[j] = std::move(info);
        model.models[j] = std::move(r.params);
    });
    return model;
}

inline Matrix predict(const FittedFactorModel& model, const Matrix& factors)
{
    require_shape(factors.cols() == model.factor_dim, "predict: model expects " + std::to_string(model.factor_dim) +
                                                          " factors, got " + std::to_string(factors.cols()));
    Matrix out(factors.rows(), static_cast<Eigen::Index>(model.models.size()));
    for (std::size_t j = 0; j < model.models.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = predict_one(model.models[j], factors);
    return out;
}

inline Matrix residuals(const FittedFactorModel& model, const Matrix& returns, const Matrix& factors)
{
    require_shape(returns.rows() == factors.rows() && returns.cols() == static_cast<Eigen::Index>(model.models.size()),
                  "residuals: returns " + shape_str(returns.rows(), returns.cols()) + " do not match model/factors");
    return returns - predict(model, factors);
}

/// Demeaned outer-product average with divisor n.
inline Matrix estimate_sigma_f(const Matrix& fitted)
{
    if (fitted.rows() < 2)
        fail(ErrorKind::data, "estimate_sigma_f: need n >= 2");
    const Matrix centered = fitted.rowwise() - fitted.colwise().mean();
    return symmetrize(centered.transpose() * centered / static_cast<double>(fitted.rows()));
}

/// (1/n) U'U, no demeaning.
inline Matrix raw_residual_cov(const Matrix& u_hat)
{
    if (u_hat.rows() < 1)
        fail(ErrorKind::data, "raw_residual_cov: need n >= 1");
    return symmetrize(u_hat.transpose() * u_hat / static_cast<double>(u_hat.rows()));
}

inline Matrix compute_theta(const Matrix& u_hat, const Matrix& sigma_u_raw)
{
    const Eigen::Index J = u_hat.cols();
    require_shape(sigma_u_raw.rows() == J && sigma_u_raw.cols() == J, "compute_theta: sigma_u_raw must be JxJ");
    const double n = static_cast<double>(u_hat.rows());
    Matrix theta(J, J);
    for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = j; k < J; ++k)
        {
            const double t = ((u_hat.col(j).array() * u_hat.col(k).array()) - sigma_u_raw(j, k)).abs().sum() / n;
            theta(j, k) = t;
            theta(k, j) = t;
        }
    return theta;
}

inline constexpr double kDefaultThresholdConstant = 3.0;

/// c * sqrt(ln J / n)
inline double omega_n(Eigen::Index n, Eigen::Index J, double c = kDefaultThresholdConstant)
{
    if (n < 1 || J < 1)
        fail(ErrorKind::config, "omega_n: n and J must be >= 1");
    return c * std::sqrt(std::log(static_cast<double>(J)) / static_cast<double>(n));
}

/// Hard threshold of off-diagonal entries at theta_jk * omega; diagonal kept.
inline Matrix adaptive_threshold(const Matrix& sigma_u_raw, const Matrix& theta, double omega)
{
    require_shape(sigma_u_raw.rows() == sigma_u_raw.cols() && theta.rows() == sigma_u_raw.rows() &&
                      theta.cols() == sigma_u_raw.cols(),
                  "adaptive_threshold: shape mismatch");
    if (omega < 0.0)
        fail(ErrorKind::config, "adaptive_threshold: omega must be >= 0");
    Matrix out = sigma_u_raw;
    const Eigen::Index J = out.rows();
    for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = j + 1; k < J; ++k)
        {
            const double s = 0.5 * (sigma_u_raw(j, k) + sigma_u_raw(k, j));
            const double level = 0.5 * (theta(j, k) + theta(k, j)) * omega;
            const double kept = std::abs(s) >= level ? s : 0.0;
            out(j, k) = kept;
            out(k, j) = kept;
        }
    return out;
}

/// Maximum row-wise count of nonzero entries (diagonal included).
inline Eigen::Index sparsity_level(const Matrix& sigma)
{
    Eigen::Index best = 0;
    for (Eigen::Index j = 0; j < sigma.rows(); ++j)
        best = std::max<Eigen::Index>(best, (sigma.row(j).array() != 0.0).count());
    return best;
}

struct PrecisionResult
{
    Matrix precision_u;
    Matrix precision_y;
    bool floor_applied = false;
    double floor_shift = 0.0;   ///< amount added to the diagonal of sigma_u_th
    double rcond = 0.0;         ///< reciprocal condition estimate of I + precision_u * sigma_f
};

inline constexpr double kSingularRcond = 1e-14;

/**
 * precision_u = (sigma_u_th + shift I)^{-1}, with shift = eig_floor - lambda_min
 * when lambda_min < eig_floor (else 0), and
 *
 *   precision_y = P - P F (I + P F)^{-1} P,   P = precision_u, F = sigma_f.
 */
inline PrecisionResult precision_from_parts(const Matrix& sigma_u_th, const Matrix& sigma_f, double eig_floor)
{
    const Eigen::Index J = sigma_u_th.rows();
    require_shape(sigma_u_th.cols() == J && sigma_f.rows() == J && sigma_f.cols() == J,
                  "precision_from_parts: expected two JxJ matrices");
    if (!(eig_floor > 0.0))
        fail(ErrorKind::config, "precision_from_parts: eig_floor must be > 0");

    PrecisionResult out;
    Matrix su = symmetrize(sigma_u_th);
    const double lambda_min = eig_extremes(su).eigmin;
    if (lambda_min < eig_floor)
    {
        out.floor_applied = true;
        out.floor_shift = eig_floor - lambda_min;
        su.diagonal().array() += out.floor_shift;
    }

    Eigen::LDLT<Matrix> ldlt(su);
    if (ldlt.info() != Eigen::Success)
        fail(ErrorKind::estimation, "precision_from_parts: factorization of sigma_u_th failed");
    out.precision_u = symmetrize(ldlt.solve(Matrix::Identity(J, J)));

    const Matrix PF = out.precision_u * sigma_f;
    const Matrix system = Matrix::Identity(J, J) + PF;
    Eigen::PartialPivLU<Matrix> lu(system);
    out.rcond = lu.rcond();
    if (!(out.rcond > kSingularRcond))
        fail(ErrorKind::estimation,
             "precision_from_parts: I + precision_u*sigma_f is numerically singular (rcond " + std::to_string(out.rcond) + ")");
    out.precision_y = symmetrize(out.precision_u - PF * lu.solve(out.precision_u));
    return out;
}

/// 1e-6 times the mean diagonal; never below 1e-12 so an all-zero input still inverts.
inline double default_eig_floor(const Matrix& sigma_u_th)
{
    const double mean_diag = sigma_u_th.rows() > 0 ? sigma_u_th.diagonal().mean() : 0.0;
    return std::max(1e-6 * mean_diag, 1e-12);
}

struct CovarianceBundle
{
    Matrix sigma_f;
    Matrix sigma_u_raw;
    Matrix theta;
    Matrix sigma_u_th;
    Matrix sigma_y;
    Matrix precision_u;
    Matrix precision_y;
    double omega_n = 0.0;
    double eig_floor = 0.0;
    bool eig_floor_applied = false;
    Eigen::Index s_n = 0;
    Eigen::Index n = 0;
};

struct BundleOptions
{
    double threshold_constant = kDefaultThresholdConstant;
    std::optional<double> eig_floor;  ///< default: default_eig_floor(sigma_u_th)
};

/// Covariance bundle from fitted values and residuals directly.
inline CovarianceBundle bundle_from_parts(const Matrix& fitted, const Matrix& u_hat, const BundleOptions& opts = {})
{
    require_shape(fitted.rows() == u_hat.rows() && fitted.cols() == u_hat.cols(), "bundle: fitted/residual shape mismatch");
    CovarianceBundle b;
    b.n = u_hat.rows();
    b.sigma_f = estimate_sigma_f(fitted);
    b.sigma_u_raw = raw_residual_cov(u_hat);
    b.theta = compute_theta(u_hat, b.sigma_u_raw);
    b.omega_n = omega_n(u_hat.rows(), u_hat.cols(), opts.threshold_constant);
    b.sigma_u_th = adaptive_threshold(b.sigma_u_raw, b.theta, b.omega_n);
    b.sigma_y = b.sigma_f + b.sigma_u_th;
    b.s_n = sparsity_level(b.sigma_u_th);
    b.eig_floor = opts.eig_floor.value_or(default_eig_floor(b.sigma_u_th));
    auto prec = precision_from_parts(b.sigma_u_th, b.sigma_f, b.eig_floor);
    b.precision_u = std::move(prec.precision_u);
    b.precision_y = std::move(prec.precision_y);
    b.eig_floor_applied = prec.floor_applied;
    return b;
}

inline CovarianceBundle build_bundle(const FittedFactorModel& model, const Matrix& returns, const Matrix& factors,
                                     const BundleOptions& opts = {})
{
    const Matrix fitted = predict(model, factors);
    require_shape(returns.rows() == fitted.rows() && returns.cols() == fitted.cols(), "build_bundle: returns shape mismatch");
    return bundle_from_parts(fitted, returns - fitted, opts);
}

// ---------------------------------------------------------------------------
// Model persistence
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LinearModel& m)
{
    return {{"type", "linear"}, {"coef", std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size())}};
}

inline nlohmann::json predictor_to_json(const AssetPredictor& p)
{
    return std::visit([](const auto& m) { return to_json(m); }, p);
}

inline AssetPredictor predictor_from_json(const nlohmann::json& j)
{
    if (j.contains("type") && j.at("type") == "linear")
    {
        const auto coef = j.at("coef").get<std::vector<double>>();
        return LinearModel{Eigen::Map<const Vector>(coef.data(), static_cast<Eigen::Index>(coef.size()))};
    }
    return network_from_json(j);
}

}  // namespace dnnfm
