/**
 * @file portfolio.hpp
 * @brief Rolling-window global-minimum-variance backtesting with proportional
 *        transaction costs and turnover accounting.
 *
 * At each investment date t (0-based row index, window <= t < n) the
 * estimator sees rows [t - window, t) and sets weights w_t, which earn
 * r_t = w_t' R_t. The weights then drift to w_t^+ and are rebalanced to
 * w_{t+1}, estimated on rows [t + 1 - window, t + 1). Net return:
 *
 *   r_t^net = r_t - c (1 + r_t) sum_j |w_{t+1,j} - w_{t,j}^+|
 *
 * The series therefore has n - window entries and needs n - window + 1
 * weight vectors. Weight vectors always span all J columns of the panel;
 * assets outside the current universe carry zero weight.
 */
#pragma once

#include "dnnfm/common.hpp"
#include "dnnfm/factor_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace dnnfm
{

enum class Estimator
{
    dnn,
    sdnn,
    linear,
    sample,
    equal_weight
};

inline const char* to_string(Estimator e)
{
    switch (e)
    {
    case Estimator::dnn: return "dnn";
    case Estimator::sdnn: return "sdnn";
    case Estimator::linear: return "linear";
    case Estimator::sample: return "sample";
    case Estimator::equal_weight: return "equal_weight";
    }
    return "?";
}

inline std::optional<Estimator> parse_estimator(const std::string& s)
{
    for (auto e : {Estimator::dnn, Estimator::sdnn, Estimator::linear, Estimator::sample, Estimator::equal_weight})
        if (s == to_string(e))
            return e;
    return std::nullopt;
}

enum class MatrixKind
{
    covariance,
    precision
};

/**
 * w = M^{-1} 1 / (1' M^{-1} 1) for a covariance M, or P 1 / (1' P 1) for a
 * precision P. A covariance whose smallest eigenvalue is below `eig_floor`
 * is shifted up to it before solving. Short positions are allowed.
 */
inline Vector gmvp_weights(const Matrix& m, MatrixKind kind = MatrixKind::covariance, double eig_floor = 1e-12)
{
    const Eigen::Index J = m.rows();
    require_shape(J > 0 && m.cols() == J, "gmvp_weights: expected a square matrix");
    const Vector ones = Vector::Ones(J);
    Vector raw;
    if (kind == MatrixKind::precision)
    {
        raw = symmetrize(m) * ones;
    }
    else
    {
        Matrix s = symmetrize(m);
        const double lmin = eig_extremes(s).eigmin;
        if (lmin < eig_floor)
            s.diagonal().array() += eig_floor - lmin;
        Eigen::LDLT<Matrix> ldlt(s);
        if (ldlt.info() != Eigen::Success)
            fail(ErrorKind::estimation, "gmvp_weights: covariance factorization failed");
        raw = ldlt.solve(ones);
    }
    const double total = raw.sum();
    if (!std::isfinite(total) || std::abs(total) < 1e-300)
        fail(ErrorKind::estimation, "gmvp_weights: 1' Sigma^{-1} 1 is zero or not finite");
    Vector w = raw / total;
    w /= w.sum();
    return w;
}

inline double gross_return(const Vector& w, const Vector& r)
{
    require_shape(w.size() == r.size(), "gross_return: size mismatch");
    return w.dot(r);
}

/// w_j (1 + r_j) / (1 + w'r)
inline Vector drifted_weights(const Vector& w, const Vector& r_next)
{
    const double g = gross_return(w, r_next);
    const double wealth = 1.0 + g;
    if (!(std::abs(wealth) > 1e-14))
        fail(ErrorKind::numeric, "drifted_weights: portfolio lost all wealth (return -100%)");
    return (w.array() * (1.0 + r_next.array())).matrix() / wealth;
}

inline double trade_distance(const Vector& w_new, const Vector& w_drifted)
{
    require_shape(w_new.size() == w_drifted.size(), "trade_distance: size mismatch");
    return (w_new - w_drifted).cwiseAbs().sum();
}

/// gross - c (1 + gross) |w_new - w_drifted|_1
inline double net_return(double gross, const Vector& w_new, const Vector& w_drifted, double c)
{
    if (c < 0.0)
        fail(ErrorKind::config, "net_return: cost rate must be >= 0");
    return gross - c * (1.0 + gross) * trade_distance(w_new, w_drifted);
}

struct TurnoverSeries
{
    std::vector<double> per_period;
    double pt = 0.0;
};

/**
 * weights_history holds T + 1 vectors (w_0 .. w_T) and returns holds the T
 * realized return rows; turnover at period h is |w_{h+1} - w_h^+|_1.
 */
inline TurnoverSeries turnover_series(const std::vector<Vector>& weights_history, const Matrix& returns)
{
    require_shape(weights_history.size() == static_cast<std::size_t>(returns.rows()) + 1,
                  "turnover_series: need one more weight vector than return rows");
    TurnoverSeries out;
    for (Eigen::Index h = 0; h < returns.rows(); ++h)
    {
        const auto& w = weights_history[static_cast<std::size_t>(h)];
        const Vector plus = drifted_weights(w, returns.row(h).transpose());
        out.per_period.push_back(trade_distance(weights_history[static_cast<std::size_t>(h) + 1], plus));
    }
    if (!out.per_period.empty())
        out.pt = std::accumulate(out.per_period.begin(), out.per_period.end(), 0.0) /
                 static_cast<double>(out.per_period.size());
    return out;
}

/**
 * Picks the J_target assets with a complete history over rows
 * [at - window, at) and the largest rank value. `ranks` is either a single
 * row (static ranks) or a panel aligned with `returns`, in which case the row
 * at - 1 is used. Without ranks the score is the trailing mean absolute
 * return. Ties go to the lower column index. Returns ascending indices.
 */
inline std::vector<Eigen::Index> select_universe(const Matrix& returns, const std::optional<Matrix>& ranks,
                                                 Eigen::Index J_target, Eigen::Index at, Eigen::Index window)
{
    const Eigen::Index J = returns.cols();
    if (window < 1 || at < window || at > returns.rows())
        fail(ErrorKind::config, "select_universe: window [" + std::to_string(at - window) + ", " + std::to_string(at) +
                                    ") is outside the panel");
    if (J_target < 1)
        fail(ErrorKind::config, "select_universe: J_target must be >= 1");
    if (ranks)
    {
        require_shape(ranks->cols() == J, "select_universe: ranks must have one column per asset");
        require_shape(ranks->rows() == 1 || ranks->rows() == returns.rows(),
                      "select_universe: ranks must be a single row or aligned with returns");
    }

    const auto block = returns.middleRows(at - window, window);
    std::vector<std::pair<double, Eigen::Index>> scored;
    for (Eigen::Index j = 0; j < J; ++j)
    {
        if (!block.col(j).allFinite())
            continue;
        double score;
        if (ranks)
            score = (*ranks)(ranks->rows() == 1 ? 0 : at - 1, j);
        else
            score = block.col(j).cwiseAbs().mean();
        if (!std::isfinite(score))
            continue;
        scored.emplace_back(score, j);
    }
    if (static_cast<Eigen::Index>(scored.size()) < J_target)
        fail(ErrorKind::data, "select_universe: only " + std::to_string(scored.size()) + " assets have a complete window at row " +
                                  std::to_string(at) + ", need " + std::to_string(J_target));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Eigen::Index> chosen;
    for (Eigen::Index k = 0; k < J_target; ++k)
        chosen.push_back(scored[static_cast<std::size_t>(k)].second);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

struct PerformanceSummary
{
    double sd = 0.0;
    double av = 0.0;
    std::optional<double> sr;  ///< empty when sd == 0
};

/// AV = ppy * mean, SD = sqrt(ppy) * sample sd (divisor T - 1), SR = AV / SD.
inline PerformanceSummary summarize(const std::vector<double>& series, int periods_per_year)
{
    if (series.size() < 2)
        fail(ErrorKind::data, "summarize: need at least two observations");
    if (periods_per_year < 1)
        fail(ErrorKind::config, "summarize: periods_per_year must be >= 1");
    const double T = static_cast<double>(series.size());
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / T;
    const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
    double ss = 0.0;
    if (*lo != *hi)  // a constant series has sd 0 even if the mean rounds
        for (double x : series)
            ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (T - 1.0));
    PerformanceSummary s;
    s.av = periods_per_year * mean;
    s.sd = std::sqrt(static_cast<double>(periods_per_year)) * sd;
    if (s.sd > 0.0)
        s.sr = s.av / s.sd;
    return s;
}

struct BacktestConfig
{
    Eigen::Index window = 120;
    Eigen::Index universe_size = 50;
    double tc_rate = 0.005;
    Estimator estimator = Estimator::linear;
    int periods_per_year = 12;
    std::uint64_t seed = 0;
    int refit_every = 1;
    TrainConfig dense = TrainConfig::dense();
    TrainConfig sparse = TrainConfig::sparse();
    std::optional<NetworkSpec> network;
    BundleOptions bundle;
    unsigned threads = 1;
};

struct BacktestReport
{
    Estimator estimator = Estimator::linear;
    Eigen::Index universe_size = 0;
    Eigen::Index window = 0;
    double tc_rate = 0.0;
    std::vector<Eigen::Index> periods;  ///< row index of each realized return
    std::vector<double> gross_returns;
    std::vector<double> net_returns;
    std::vector<double> turnovers;
    std::vector<Vector> weights_history;  ///< n - window + 1 full-width vectors
    PerformanceSummary gross;
    PerformanceSummary net;
    double pt = 0.0;

    std::size_t n_oos() const { return gross_returns.size(); }
};

namespace detail
{

inline Matrix sample_covariance(const Matrix& R)
{
    const Matrix centered = R.rowwise() - R.colwise().mean();
    return symmetrize(centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(R.rows() - 1, 1)));
}

struct CachedModel
{
    std::vector<Eigen::Index> universe;
    std::optional<FittedFactorModel> model;
};

}  // namespace detail

/**
 * Runs the rolling GMVP backtest. Requires n > window + 1. Factor-model
 * estimators are refit every `refit_every` steps (and whenever the universe
 * changes); in between the stored model is re-used on the new window.
 * Missing realized returns of held assets count as zero. Any estimation
 * failure aborts the run with the failing row in the message.
 */
inline BacktestReport rolling_backtest(const Matrix& returns, const Matrix& factors, const BacktestConfig& cfg,
                                       const std::optional<Matrix>& ranks = std::nullopt)
{
    const Eigen::Index n = returns.rows();
    const Eigen::Index J = returns.cols();
    if (cfg.window < 2 || n <= cfg.window + 1)
        fail(ErrorKind::config, "rolling_backtest: need n > window + 1 (n = " + std::to_string(n) +
                                    ", window = " + std::to_string(cfg.window) + ")");
    if (cfg.universe_size < 1 || cfg.universe_size > J)
        fail(ErrorKind::config, "rolling_backtest: universe size " + std::to_string(cfg.universe_size) +
                                    " exceeds the " + std::to_string(J) + " available assets");
    if (cfg.tc_rate < 0.0)
        fail(ErrorKind::config, "rolling_backtest: tc_rate must be >= 0");
    if (cfg.refit_every < 1)
        fail(ErrorKind::config, "rolling_backtest: refit_every must be >= 1");
    const bool needs_factors = cfg.estimator == Estimator::dnn || cfg.estimator == Estimator::sdnn ||
                               cfg.estimator == Estimator::linear;
    if (needs_factors)
    {
        require_shape(factors.rows() == n, "rolling_backtest: factors and returns have different lengths");
        if (!factors.allFinite())
            fail(ErrorKind::data, "rolling_backtest: factors contain missing values");
    }

    detail::CachedModel cache;
    auto weights_at = [&](Eigen::Index t) -> Vector {
        const auto universe = select_universe(returns, ranks, cfg.universe_size, t, cfg.window);
        const auto K = static_cast<Eigen::Index>(universe.size());
        Matrix R(cfg.window, K);
        for (Eigen::Index k = 0; k < K; ++k)
            R.col(k) = returns.col(universe[static_cast<std::size_t>(k)]).segment(t - cfg.window, cfg.window);

        Vector local;
        switch (cfg.estimator)
        {
        case Estimator::equal_weight:
            local = Vector::Constant(K, 1.0 / static_cast<double>(K));
            break;
        case Estimator::sample:
            local = gmvp_weights(detail::sample_covariance(R), MatrixKind::covariance);
            break;
        default:
        {
            const Matrix F = factors.middleRows(t - cfg.window, cfg.window);
            const bool refit = !cache.model || cache.universe != universe || (t - cfg.window) % cfg.refit_every == 0;
            if (refit)
            {
                const FactorMode mode = cfg.estimator == Estimator::dnn    ? FactorMode::dnn
                                        : cfg.estimator == Estimator::sdnn ? FactorMode::sdnn
                                                                           : FactorMode::linear;
                TrainConfig tc = mode == FactorMode::sdnn ? cfg.sparse : cfg.dense;
                tc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(t)});
                FactorFitOptions fo;
                fo.network = cfg.network;
                fo.threads = cfg.threads;
                cache.model = fit_model(R, F, mode, tc, {}, fo);
                cache.universe = universe;
            }
            const auto bundle = build_bundle(*cache.model, R, F, cfg.bundle);
            local = gmvp_weights(bundle.precision_y, MatrixKind::precision);
        }
        }
        Vector w = Vector::Zero(J);
        for (Eigen::Index k = 0; k < K; ++k)
            w(universe[static_cast<std::size_t>(k)]) = local(k);
        return w;
    };
    auto guarded_weights_at = [&](Eigen::Index t) -> Vector {
        try
        {
            return weights_at(t);
        }
        catch (const Error& e)
        {
            throw Error(e.kind(), "backtest step at row " + std::to_string(t) + " failed: " + e.what());
        }
    };

    BacktestReport rep;
    rep.estimator = cfg.estimator;
    rep.universe_size = cfg.universe_size;
    rep.window = cfg.window;
    rep.tc_rate = cfg.tc_rate;
    rep.weights_history.push_back(guarded_weights_at(cfg.window));
    for (Eigen::Index t = cfg.window; t < n; ++t)
    {
        const Vector& w = rep.weights_history.back();
        Vector r = returns.row(t).transpose();
        for (Eigen::Index j = 0; j < J; ++j)
            if (!std::isfinite(r(j)))
                r(j) = 0.0;
        const double gross = gross_return(w, r);
        const Vector plus = drifted_weights(w, r);
        Vector next = guarded_weights_at(t + 1);
        const double dist = trade_distance(next, plus);
        rep.periods.push_back(t);
        rep.gross_returns.push_back(gross);
        rep.net_returns.push_back(net_return(gross, next, plus, cfg.tc_rate));
        rep.turnovers.push_back(dist);
        rep.weights_history.push_back(std::move(next));
    }
    rep.gross = summarize(rep.gross_returns, cfg.periods_per_year);
    rep.net = summarize(rep.net_returns, cfg.periods_per_year);
    rep.pt = std::accumulate(rep.turnovers.begin(), rep.turnovers.end(), 0.0) / static_cast<double>(rep.turnovers.size());
    return rep;
}

}  // namespace dnnfm
