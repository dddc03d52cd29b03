/**
 * @file trainer.hpp
 * @brief Mini-batch least-squares training of a single network with Adam.
 *
 * Dense mode is plain MSE + Adam + early stopping. Sparse mode adds an l1
 * subgradient on weights (biases are not penalized), inverted dropout on
 * hidden units and clipping of every parameter to [-1, 1] after each step.
 * The l1 strength is picked from a grid by best validation MSE.
 *
 * The validation split is chronological: the first floor(n(1-f)) rows train,
 * the rest validate. Shuffling happens only inside the training segment.
 */
#pragma once

#include "dnnfm/common.hpp"
#include "dnnfm/nn_core.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dnnfm
{

enum class TrainMode
{
    dense,
    sparse
};

struct TrainConfig
{
    int max_epochs = 500;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double dropout_rate = 0.0;
    std::vector<double> l1_lambda_grid{0.0};
    int patience = 20;
    double val_fraction = 0.2;
    TrainMode mode = TrainMode::dense;
    std::uint64_t seed = 0;
    double weight_bound = 1.0;  ///< sparse mode only

    static TrainConfig dense(std::uint64_t seed = 0)
    {
        TrainConfig cfg;
        cfg.seed = seed;
        return cfg;
    }

    static TrainConfig sparse(std::uint64_t seed = 0)
    {
        TrainConfig cfg;
        cfg.mode = TrainMode::sparse;
        cfg.dropout_rate = 0.2;
        cfg.l1_lambda_grid = {1e-5, 1e-4, 1e-3, 1e-2};
        cfg.seed = seed;
        return cfg;
    }

    void validate() const
    {
        auto bad = [](const std::string& what) { fail(ErrorKind::config, "train config: " + what); };
        if (max_epochs < 0)
            bad("max_epochs must be >= 0");
        if (batch_size < 1)
            bad("batch_size must be >= 1");
        if (!(learning_rate > 0.0))
            bad("learning_rate must be > 0");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
            bad("adam betas must lie in (0,1)");
        if (!(adam_eps > 0.0))
            bad("adam_eps must be > 0");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            bad("dropout_rate must lie in [0,1)");
        if (l1_lambda_grid.empty())
            bad("l1_lambda_grid must not be empty");
        for (double l : l1_lambda_grid)
            if (!(l >= 0.0))
                bad("l1 lambdas must be >= 0");
        if (patience < 1)
            bad("patience must be >= 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            bad("val_fraction must lie in (0,1)");
        if (mode == TrainMode::dense)
        {
            if (dropout_rate != 0.0)
                bad("dense mode requires dropout_rate = 0");
            if (l1_lambda_grid.size() != 1 || l1_lambda_grid[0] != 0.0)
                bad("dense mode requires l1_lambda_grid = {0}");
        }
        if (!(weight_bound > 0.0))
            bad("weight_bound must be > 0");
    }
};

struct FitResult
{
    NetworkParams params;
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    int stopped_epoch = 0;
    double chosen_lambda = 0.0;
    std::vector<std::string> diagnostics;  ///< one line per aborted lambda
};

struct IndexRange
{
    Eigen::Index begin = 0;
    Eigen::Index end = 0;
    Eigen::Index size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

struct TrainValSplit
{
    IndexRange train;
    IndexRange val;
};

inline TrainValSplit split_train_val(Eigen::Index n, double val_fraction)
{
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        fail(ErrorKind::config, "val_fraction must lie in (0,1)");
    if (n < 5)
        fail(ErrorKind::config, "need at least 5 observations to split, got " + std::to_string(n));
    const auto n_train = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * (1.0 - val_fraction)));
    if (n_train < 1 || n_train >= n)
        fail(ErrorKind::config, "split leaves an empty training or validation segment");
    return {{0, n_train}, {n_train, n}};
}

inline double l1_norm_weights(const NetworkParams& params)
{
    double s = 0.0;
    for (const auto& layer : params.layers)
        s += layer.W.cwiseAbs().sum();
    return s;
}

inline double mse(const NetworkParams& params, const Matrix& X, const Vector& y)
{
    require_shape(X.rows() == y.size(), "mse: X has " + std::to_string(X.rows()) + " rows, y has " + std::to_string(y.size()));
    if (y.size() == 0)
        fail(ErrorKind::data, "loss on empty data");
    return (y - forward_batch(params, X)).squaredNorm() / static_cast<double>(y.size());
}

/// (1/n) sum (y - f(x))^2 + lambda * sum |W| (biases excluded).
inline double loss(const NetworkParams& params, const Matrix& X, const Vector& y, double lambda)
{
    const double fit = mse(params, X, y);
    return lambda > 0.0 ? fit + lambda * l1_norm_weights(params) : fit;
}

/// Per-hidden-layer unit multipliers: 0 for dropped units, 1/(1-rate) otherwise.
using DropoutMasks = std::vector<Vector>;

namespace detail
{

inline NetworkParams zeros_like(const NetworkParams& params)
{
    NetworkParams z;
    z.layers.reserve(params.layers.size());
    for (const auto& layer : params.layers)
        z.layers.push_back({Matrix::Zero(layer.W.rows(), layer.W.cols()), Vector::Zero(layer.b.size())});
    return z;
}

/// Reverse-mode derivative of the batch MSE; relu'(0) = 0.
inline NetworkParams mse_gradient(const NetworkParams& params, const Matrix& X, const Vector& y,
                                  const DropoutMasks* masks)
{
    check_params(params);
    require_shape(X.rows() == y.size() && X.rows() > 0, "gradient: empty or misaligned batch");
    require_shape(X.cols() == params.input_dim(), "gradient: input width mismatch");
    const std::size_t L = params.layers.size() - 1;
    const double batch = static_cast<double>(y.size());

    std::vector<Matrix> acts;     // acts[l] = input to layer l (features x batch)
    std::vector<Matrix> gates;    // d act / d pre-activation for hidden layer l (incl. dropout scale)
    acts.reserve(L + 1);
    gates.reserve(L);
    acts.push_back(X.transpose());
    for (std::size_t l = 0; l < L; ++l)
    {
        Matrix z = params.layers[l].W * acts.back();
        z.colwise() += params.layers[l].b;
        Matrix g = (z.array() > 0.0).cast<double>().matrix();
        if (masks)
            g = (g.array().colwise() * (*masks)[l].array()).matrix();
        acts.push_back(z.cwiseProduct(g));
        gates.push_back(std::move(g));
    }
    Matrix out = params.layers[L].W * acts.back();
    out.colwise() += params.layers[L].b;

    NetworkParams grad = zeros_like(params);
    Matrix delta = (2.0 / batch) * (out.row(0).transpose() - y).transpose();  // 1 x batch
    for (std::size_t l = L + 1; l-- > 0;)
    {
        grad.layers[l].W = delta * acts[l].transpose();
        grad.layers[l].b = delta.rowwise().sum();
        if (l > 0)
            delta = (params.layers[l].W.transpose() * delta).cwiseProduct(gates[l - 1]);
    }
    return grad;
}

}  // namespace detail

/// Gradient of the unpenalized batch MSE.
inline NetworkParams gradient(const NetworkParams& params, const Matrix& X_batch, const Vector& y_batch)
{
    return detail::mse_gradient(params, X_batch, y_batch, nullptr);
}

/// Gradient with dropout masks applied to hidden activations.
inline NetworkParams gradient(const NetworkParams& params, const Matrix& X_batch, const Vector& y_batch,
                              const DropoutMasks& masks)
{
    require_shape(masks.size() + 1 == params.layers.size(), "gradient: one dropout mask per hidden layer required");
    return detail::mse_gradient(params, X_batch, y_batch, &masks);
}

/// Adds lambda * sign(w) to each weight gradient (0 at w = 0); biases untouched.
inline void add_l1_subgradient(NetworkParams& grad, const NetworkParams& params, double lambda)
{
    if (lambda == 0.0)
        return;
    for (std::size_t l = 0; l < params.layers.size(); ++l)
        grad.layers[l].W += lambda * params.layers[l].W.unaryExpr([](double w) { return double((w > 0) - (w < 0)); });
}

struct AdamState
{
    NetworkParams m;
    NetworkParams v;
    long step = 0;

    static AdamState fresh(const NetworkParams& params)
    {
        return {detail::zeros_like(params), detail::zeros_like(params), 0};
    }
};

struct AdamStepResult
{
    NetworkParams params;
    AdamState state;
};

inline AdamStepResult adam_step(NetworkParams params, const NetworkParams& grads, AdamState state, const TrainConfig& cfg)
{
    require_shape(grads.layers.size() == params.layers.size() && state.m.layers.size() == params.layers.size(),
                  "adam_step: state/gradient not congruent with params");
    state.step += 1;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double lr = cfg.learning_rate;
    const double eps = cfg.adam_eps;

    auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
        theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l)
    {
        update(params.layers[l].W, grads.layers[l].W, state.m.layers[l].W, state.v.layers[l].W);
        update(params.layers[l].b, grads.layers[l].b, state.m.layers[l].b, state.v.layers[l].b);
    }
    return {std::move(params), std::move(state)};
}

/// Disables ceil(rate * width) units per hidden layer (at most width - 1).
inline DropoutMasks sample_dropout_masks(const NetworkSpec& spec, double rate, std::mt19937_64& rng)
{
    DropoutMasks masks;
    masks.reserve(spec.widths.size());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (int width : spec.widths)
    {
        int drop = static_cast<int>(std::ceil(rate * width - 1e-12));
        drop = std::clamp(drop, 0, width - 1);
        std::vector<int> units(static_cast<std::size_t>(width));
        std::iota(units.begin(), units.end(), 0);
        std::shuffle(units.begin(), units.end(), rng);
        Vector mask = Vector::Constant(width, keep_scale);
        for (int k = 0; k < drop; ++k)
            mask(units[static_cast<std::size_t>(k)]) = 0.0;
        masks.push_back(std::move(mask));
    }
    return masks;
}

/// Starting point used by fit() for the lambda at `lambda_index` of the grid.
inline NetworkParams initial_params(const NetworkSpec& spec, const TrainConfig& cfg, std::size_t lambda_index)
{
    NetworkParams params = init_params(spec, derive_seed(derive_seed(cfg.seed, {lambda_index}), {0xA11CE}));
    if (cfg.mode == TrainMode::sparse)
        params = clip_weights(std::move(params), cfg.weight_bound);
    return params;
}

namespace detail
{

struct LambdaRun
{
    NetworkParams best_params;
    std::vector<double> train_curve;
    std::vector<double> val_curve;
    double best_val = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::string diagnostic;
};

inline Matrix take_rows(const Matrix& X, const std::vector<Eigen::Index>& idx, std::size_t from, std::size_t to)
{
    Matrix out(static_cast<Eigen::Index>(to - from), X.cols());
    for (std::size_t k = from; k < to; ++k)
        out.row(static_cast<Eigen::Index>(k - from)) = X.row(idx[k]);
    return out;
}

inline Vector take_rows(const Vector& y, const std::vector<Eigen::Index>& idx, std::size_t from, std::size_t to)
{
    Vector out(static_cast<Eigen::Index>(to - from));
    for (std::size_t k = from; k < to; ++k)
        out(static_cast<Eigen::Index>(k - from)) = y(idx[k]);
    return out;
}

inline LambdaRun train_one_lambda(const Matrix& Xtr, const Vector& ytr, const Matrix& Xva, const Vector& yva,
                                  const NetworkSpec& spec, const TrainConfig& cfg, double lambda,
                                  std::size_t lambda_index)
{
    const bool sparse = cfg.mode == TrainMode::sparse;
    const std::uint64_t stream = derive_seed(cfg.seed, {lambda_index});
    NetworkParams params = initial_params(spec, cfg, lambda_index);
    AdamState state = AdamState::fresh(params);

    LambdaRun run;
    run.best_params = params;
    const auto n_train = static_cast<std::size_t>(Xtr.rows());
    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n_train);
    std::vector<Eigen::Index> order(n_train);

    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch)
    {
        std::mt19937_64 rng(derive_seed(stream, {static_cast<std::uint64_t>(epoch) + 1}));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t start = 0; start < n_train; start += batch)
        {
            const std::size_t stop = std::min(start + batch, n_train);
            const Matrix Xb = take_rows(Xtr, order, start, stop);
            const Vector yb = take_rows(ytr, order, start, stop);
            NetworkParams grad = (sparse && cfg.dropout_rate > 0.0)
                                     ? gradient(params, Xb, yb, sample_dropout_masks(spec, cfg.dropout_rate, rng))
                                     : gradient(params, Xb, yb);
            add_l1_subgradient(grad, params, lambda);
            auto stepped = adam_step(std::move(params), grad, std::move(state), cfg);
            params = std::move(stepped.params);
            state = std::move(stepped.state);
            if (sparse)
                params = clip_weights(std::move(params), cfg.weight_bound);
        }

        const double train_mse = mse(params, Xtr, ytr);
        const double val_mse = mse(params, Xva, yva);
        if (!std::isfinite(train_mse) || !std::isfinite(val_mse))
        {
            run.diverged = true;
            run.diagnostic = "lambda " + std::to_string(lambda) + ": non-finite loss at epoch " + std::to_string(epoch);
            return run;
        }
        run.train_curve.push_back(train_mse);
        run.val_curve.push_back(val_mse);
        if (val_mse < run.best_val)
        {
            run.best_val = val_mse;
            run.best_params = params;
            since_best = 0;
        }
        else if (++since_best >= cfg.patience)
        {
            break;
        }
    }
    if (run.val_curve.empty())
        run.best_val = mse(params, Xva, yva);
    return run;
}

}  // namespace detail

/**
 * Fits one network to (X, y). For each lambda in the grid a fresh network is
 * trained with early stopping and restored to its best validation epoch; the
 * lambda with the lowest validation MSE wins. Ties keep the earlier lambda.
 *
 * Batches larger than the training segment are shrunk to it.
 */
inline FitResult fit(const Matrix& X, const Vector& y, const NetworkSpec& spec, const TrainConfig& cfg)
{
    cfg.validate();
    spec.validate();
    require_shape(X.rows() == y.size(), "fit: X has " + std::to_string(X.rows()) + " rows, y has " + std::to_string(y.size()));
    require_shape(X.cols() == spec.input_dim, "fit: X has " + std::to_string(X.cols()) + " columns, spec expects " +
                                                  std::to_string(spec.input_dim));
    if (!X.allFinite() || !y.allFinite())
        fail(ErrorKind::data, "fit: non-finite training data");
    const auto split = split_train_val(X.rows(), cfg.val_fraction);
    const Matrix Xtr = X.middleRows(split.train.begin, split.train.size());
    const Vector ytr = y.segment(split.train.begin, split.train.size());
    const Matrix Xva = X.middleRows(split.val.begin, split.val.size());
    const Vector yva = y.segment(split.val.begin, split.val.size());

    FitResult result;
    std::optional<detail::LambdaRun> best;
    double best_lambda = 0.0;
    for (std::size_t li = 0; li < cfg.l1_lambda_grid.size(); ++li)
    {
        const double lambda = cfg.l1_lambda_grid[li];
        auto run = detail::train_one_lambda(Xtr, ytr, Xva, yva, spec, cfg, lambda, li);
        if (run.diverged)
        {
            result.diagnostics.push_back(run.diagnostic);
            continue;
        }
        if (!best || run.best_val < best->best_val)
        {
            best = std::move(run);
            best_lambda = lambda;
        }
    }
    if (!best)
        fail(ErrorKind::numeric, "fit: training diverged for every lambda in the grid");

    result.params = std::move(best->best_params);
    result.train_curve = std::move(best->train_curve);
    result.val_curve = std::move(best->val_curve);
    result.stopped_epoch = static_cast<int>(result.val_curve.size());
    result.chosen_lambda = best_lambda;
    return result;
}

}  // namespace dnnfm
