#include "dnnfm/trainer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace dnnfm;

namespace
{

NetworkParams single_unit_net()
{
    NetworkParams p;
    p.layers.push_back({Matrix::Constant(1, 1, 1.0), Vector::Constant(1, -0.5)});
    p.layers.push_back({Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 1.0)});
    return p;
}

NetworkParams zero_net(const NetworkSpec& spec)
{
    return detail::zeros_like(init_params(spec, 0));
}

}  // namespace

TEST(Split, Examples)
{
    auto s = split_train_val(120, 0.2);
    EXPECT_EQ(s.train, (IndexRange{0, 96}));
    EXPECT_EQ(s.val, (IndexRange{96, 120}));
    s = split_train_val(10, 0.5);
    EXPECT_EQ(s.train, (IndexRange{0, 5}));
    EXPECT_EQ(s.val, (IndexRange{5, 10}));
    s = split_train_val(7, 0.2);
    EXPECT_EQ(s.train, (IndexRange{0, 5}));
    EXPECT_EQ(s.val, (IndexRange{5, 7}));
}

TEST(Split, Errors)
{
    EXPECT_THROW(split_train_val(4, 0.2), Error);
    EXPECT_THROW(split_train_val(10, 0.0), Error);
    EXPECT_THROW(split_train_val(10, 1.0), Error);
}

TEST(Split, PartitionProperty)
{
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> n_dist(5, 2000);
    std::uniform_real_distribution<double> f_dist(0.01, 0.99);
    int checked = 0;
    for (int trial = 0; trial < 400; ++trial)
    {
        const int n = n_dist(rng);
        const double f = f_dist(rng);
        const auto expected_train = static_cast<Eigen::Index>(std::floor(n * (1.0 - f)));
        if (expected_train < 1 || expected_train >= n)
        {
            EXPECT_THROW(split_train_val(n, f), Error);
            continue;
        }
        const auto s = split_train_val(n, f);
        EXPECT_EQ(s.train.begin, 0);
        EXPECT_EQ(s.train.end, s.val.begin);
        EXPECT_EQ(s.val.end, n);
        EXPECT_EQ(s.train.size(), expected_train);
        ++checked;
    }
    EXPECT_GT(checked, 200);
}

TEST(Loss, Examples)
{
    const NetworkSpec spec{2, 1, {3}};
    const auto z = zero_net(spec);
    const Matrix X = Matrix::Random(2, 2);
    EXPECT_DOUBLE_EQ(loss(z, X, Vector{{1.0, -1.0}}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(loss(z, X, Vector::Zero(2), 5.0), 0.0);

    const auto p = init_params(spec, 3);
    EXPECT_DOUBLE_EQ(loss(p, X, forward_batch(p, X), 0.0), 0.0);
}

TEST(Loss, PenaltyExcludesBiases)
{
    auto p = single_unit_net();
    const Matrix X = Matrix::Constant(1, 1, 2.0);
    const Vector y = Vector::Constant(1, 4.0);
    EXPECT_DOUBLE_EQ(loss(p, X, y, 0.5), 0.5 * (1.0 + 2.0));
}

TEST(Loss, EmptyDataIsError)
{
    EXPECT_THROW(loss(single_unit_net(), Matrix(0, 1), Vector(0), 0.0), Error);
}

TEST(Gradient, HandChainRule)
{
    const auto g = gradient(single_unit_net(), Matrix::Constant(1, 1, 2.0), Vector::Zero(1));
    EXPECT_DOUBLE_EQ(g.layers[1].W(0, 0), 12.0);
    EXPECT_DOUBLE_EQ(g.layers[1].b(0), 8.0);
    EXPECT_DOUBLE_EQ(g.layers[0].W(0, 0), 2.0 * 4.0 * 2.0 * 2.0);
    EXPECT_DOUBLE_EQ(g.layers[0].b(0), 2.0 * 4.0 * 2.0);
}

TEST(Gradient, ZeroResidualsGiveZeroGradient)
{
    const auto p = init_params({3, 2, {5, 4}}, 12);
    const Matrix X = Matrix::Random(6, 3);
    const auto g = gradient(p, X, forward_batch(p, X));
    for (const auto& layer : g.layers)
    {
        EXPECT_TRUE(layer.W.isZero(0.0));
        EXPECT_TRUE(layer.b.isZero(0.0));
    }
}

TEST(Gradient, DeadUnitAtKinkHasZeroDerivative)
{
    auto p = single_unit_net();
    // x = 0.5 puts the hidden pre-activation exactly at 0
    const auto g = gradient(p, Matrix::Constant(1, 1, 0.5), Vector::Zero(1));
    EXPECT_EQ(g.layers[0].W(0, 0), 0.0);
    EXPECT_EQ(g.layers[0].b(0), 0.0);
}

TEST(Gradient, MatchesCentralDifferences)
{
    const auto check = oracle::check_gradients(60, 2024);
    EXPECT_EQ(check.nets, 60);
    EXPECT_GT(check.params_checked, 1000);
    EXPECT_LE(check.max_rel_error, 1e-4);
}

TEST(Gradient, DropoutMasksScaleHiddenUnits)
{
    const NetworkSpec spec{2, 1, {3}};
    auto p = init_params(spec, 6);
    const Matrix X = Matrix::Random(4, 2);
    const Vector y = Vector::Random(4);
    DropoutMasks masks{Vector{{0.0, 1.25, 1.25}}};
    // Equivalent network: zero the dropped unit's outgoing weight, scale the rest.
    auto q = p;
    q.layers[1].W(0, 0) = 0.0;
    q.layers[1].W(0, 1) *= 1.25;
    q.layers[1].W(0, 2) *= 1.25;
    const auto gm = gradient(p, X, y, masks);
    const auto gq = gradient(q, X, y);
    EXPECT_NEAR(gm.layers[1].b(0), gq.layers[1].b(0), 1e-12);
    EXPECT_NEAR(gm.layers[1].W(0, 1), 1.25 * gq.layers[1].W(0, 1), 1e-12);
    EXPECT_EQ(gm.layers[1].W(0, 0), 0.0);
    EXPECT_TRUE(gm.layers[0].W.row(0).isZero(0.0));
}

TEST(L1Subgradient, SignOfWeightsOnly)
{
    NetworkParams p;
    p.layers.push_back({Matrix(1, 3), Vector::Constant(1, 0.7)});
    p.layers.back().W << -0.5, 0.0, 2.0;
    p.layers.push_back({Matrix::Constant(1, 1, 0.1), Vector::Zero(1)});
    auto g = detail::zeros_like(p);
    add_l1_subgradient(g, p, 0.25);
    EXPECT_DOUBLE_EQ(g.layers[0].W(0, 0), -0.25);
    EXPECT_DOUBLE_EQ(g.layers[0].W(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(g.layers[0].W(0, 2), 0.25);
    EXPECT_DOUBLE_EQ(g.layers[0].b(0), 0.0);
}

TEST(Adam, ZeroGradientLeavesParams)
{
    const auto p = init_params({2, 2, {3, 3}}, 1);
    const auto cfg = TrainConfig::dense();
    const auto r = adam_step(p, detail::zeros_like(p), AdamState::fresh(p), cfg);
    EXPECT_EQ(r.params, p);
    EXPECT_EQ(r.state.step, 1);
}

TEST(Adam, ScalarRecursion)
{
    NetworkParams p;
    p.layers.push_back({Matrix::Constant(1, 1, 1.0), Vector::Zero(1)});
    auto g = detail::zeros_like(p);
    g.layers[0].W(0, 0) = 1.0;
    auto cfg = TrainConfig::dense();
    cfg.learning_rate = 0.001;

    auto r = adam_step(p, g, AdamState::fresh(p), cfg);
    const double theta1 = r.params.layers[0].W(0, 0);
    EXPECT_NEAR(1.0 - theta1, 0.001, 1e-6);

    // independent scalar recursion
    double m = 0, v = 0, theta = 1.0;
    for (int t = 1; t <= 2; ++t)
    {
        m = 0.9 * m + 0.1;
        v = 0.999 * v + 0.001;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        theta -= 0.001 * mh / (std::sqrt(vh) + 1e-8);
        if (t == 1)
            EXPECT_NEAR(theta1, theta, 1e-15);
    }
    auto r2 = adam_step(r.params, g, r.state, cfg);
    const double theta2 = r2.params.layers[0].W(0, 0);
    EXPECT_LT(theta2, theta1);
    EXPECT_NEAR(theta2, theta, 1e-15);
    EXPECT_EQ(r2.state.step, 2);
}

TEST(Dropout, DisablesCeilFraction)
{
    std::mt19937_64 rng(5);
    const NetworkSpec spec{3, 3, {16, 5, 1}};
    for (int trial = 0; trial < 200; ++trial)
    {
        const auto masks = sample_dropout_masks(spec, 0.2, rng);
        ASSERT_EQ(masks.size(), 3u);
        const int expected_drop[] = {4, 1, 0};  // ceil(3.2), ceil(1.0), capped at width-1
        for (int l = 0; l < 3; ++l)
        {
            const auto zeros = (masks[l].array() == 0.0).count();
            EXPECT_EQ(zeros, expected_drop[l]);
            EXPECT_TRUE(((masks[l].array() == 0.0) || (masks[l].array() == 1.25)).all());
        }
    }
}

TEST(TrainConfig, Validation)
{
    auto cfg = TrainConfig::dense();
    EXPECT_NO_THROW(cfg.validate());
    cfg.dropout_rate = 0.2;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig::dense();
    cfg.l1_lambda_grid = {1e-3};
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig::sparse();
    EXPECT_NO_THROW(cfg.validate());
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig::sparse();
    cfg.l1_lambda_grid = {-1.0};
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Fit, ZeroEpochsReturnsInitialization)
{
    const NetworkSpec spec{1, 2, {4, 4}};
    auto cfg = TrainConfig::dense(17);
    cfg.max_epochs = 0;
    const Matrix X = Matrix::Random(20, 1);
    const Vector y = Vector::Random(20);
    const auto r = fit(X, y, spec, cfg);
    EXPECT_TRUE(r.train_curve.empty());
    EXPECT_TRUE(r.val_curve.empty());
    EXPECT_EQ(r.stopped_epoch, 0);
    EXPECT_EQ(r.params, initial_params(spec, cfg, 0));
}

TEST(Fit, LearnsLinearFunction)
{
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal;
    const int n = 200;
    Matrix X(n, 1);
    Vector y(n);
    for (int i = 0; i < n; ++i)
    {
        X(i, 0) = normal(rng);
        y(i) = 2.0 * X(i, 0) + 0.01 * normal(rng);
    }
    const auto r = fit(X, y, default_network_spec(1), TrainConfig::dense(1));
    const double var_y = (y.array() - y.mean()).square().sum() / (n - 1);
    const Matrix Xv = X.bottomRows(40);
    const Vector yv = y.tail(40);
    EXPECT_LE(mse(r.params, Xv, yv), 0.05 * var_y);
}

TEST(Fit, SparseModeBoundsWeights)
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> normal;
    Matrix X(80, 2);
    Vector y(80);
    for (int i = 0; i < 80; ++i)
    {
        X(i, 0) = normal(rng);
        X(i, 1) = normal(rng);
        y(i) = 5.0 * X(i, 0) - 3.0 * X(i, 1) + normal(rng);  // pushes weights towards large values
    }
    auto cfg = TrainConfig::sparse(3);
    cfg.max_epochs = 60;
    cfg.learning_rate = 0.05;
    const auto r = fit(X, y, default_network_spec(2), cfg);
    EXPECT_LE(sparsity_report(r.params).max_abs_weight, 1.0);
    EXPECT_NE(std::find(cfg.l1_lambda_grid.begin(), cfg.l1_lambda_grid.end(), r.chosen_lambda),
              cfg.l1_lambda_grid.end());
}

TEST(Fit, DeterministicUnderSeed)
{
    const Matrix X = Matrix::Random(50, 2);
    const Vector y = X.col(0) - X.col(1);
    auto cfg = TrainConfig::sparse(44);
    cfg.max_epochs = 15;
    const auto a = fit(X, y, default_network_spec(2), cfg);
    const auto b = fit(X, y, default_network_spec(2), cfg);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.val_curve, b.val_curve);
    EXPECT_EQ(a.train_curve, b.train_curve);
    EXPECT_EQ(a.chosen_lambda, b.chosen_lambda);
}

TEST(Fit, ShapeAndDataErrors)
{
    const auto spec = default_network_spec(2);
    const auto cfg = TrainConfig::dense();
    EXPECT_THROW(fit(Matrix::Zero(10, 3), Vector::Zero(10), spec, cfg), Error);
    EXPECT_THROW(fit(Matrix::Zero(10, 2), Vector::Zero(9), spec, cfg), Error);
    Matrix X = Matrix::Zero(10, 2);
    X(3, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(fit(X, Vector::Zero(10), spec, cfg), Error);
    EXPECT_THROW(fit(Matrix::Zero(4, 2), Vector::Zero(4), spec, cfg), Error);
}

TEST(Fit, AllLambdasDivergingIsNumericError)
{
    const Matrix X = Matrix::Constant(20, 1, 1e200);
    const Vector y = Vector::Constant(20, 1e200);
    auto cfg = TrainConfig::dense();
    cfg.max_epochs = 3;
    try
    {
        fit(X, y, {1, 1, {2}}, cfg);
        FAIL() << "expected divergence";
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
}

TEST(Fit, EarlyStoppingProperty)
{
    std::mt19937_64 rng(77);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> pat(1, 6);
    int stopped_early = 0;
    for (int trial = 0; trial < 25; ++trial)
    {
        const int n = 40;
        Matrix X(n, 1);
        Vector y(n);
        for (int i = 0; i < n; ++i)
        {
            X(i, 0) = normal(rng);
            y(i) = std::sin(2 * X(i, 0)) + 0.8 * normal(rng);
        }
        auto cfg = TrainConfig::dense(rng());
        cfg.patience = pat(rng);
        cfg.max_epochs = 150;
        cfg.learning_rate = 0.02;
        cfg.batch_size = 8;
        const auto r = fit(X, y, {1, 2, {8, 8}}, cfg);
        const auto& v = r.val_curve;
        ASSERT_EQ(static_cast<int>(v.size()), r.stopped_epoch);
        ASSERT_LE(r.stopped_epoch, cfg.max_epochs);
        const auto best = std::min_element(v.begin(), v.end());
        EXPECT_DOUBLE_EQ(mse(r.params, X.bottomRows(8), y.tail(8)), *best);
        if (r.stopped_epoch < cfg.max_epochs)
        {
            ++stopped_early;
            const int E = r.stopped_epoch;
            // the last `patience` epochs never beat the best before them ...
            const double before = *std::min_element(v.begin(), v.end() - cfg.patience);
            const double window = *std::min_element(v.end() - cfg.patience, v.end());
            EXPECT_LE(before, window);
            // ... and no earlier window of that length would have triggered a stop
            for (int e = cfg.patience; e < E - 1; ++e)
            {
                const double b = *std::min_element(v.begin(), v.begin() + (e - cfg.patience + 1));
                const double w = *std::min_element(v.begin() + (e - cfg.patience + 1), v.begin() + e + 1);
                EXPECT_GT(b, w) << "would have stopped at epoch " << e;
            }
        }
    }
    EXPECT_GT(stopped_early, 5);
}

TEST(Fit, L1ShrinksNonzeroCountOnAverage)
{
    std::mt19937_64 rng(123);
    std::normal_distribution<double> normal;
    const int n = 60;
    Matrix X(n, 2);
    Vector y(n);
    for (int i = 0; i < n; ++i)
    {
        X(i, 0) = normal(rng);
        X(i, 1) = normal(rng);
        y(i) = 0.5 * X(i, 0) + 0.3 * normal(rng);
    }
    const NetworkSpec spec{2, 2, {8, 8}};
    double count_zero = 0, count_hi = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        auto cfg = TrainConfig::sparse(seed);
        cfg.max_epochs = 80;
        cfg.patience = 80;
        cfg.l1_lambda_grid = {0.0};
        count_zero += static_cast<double>(sparsity_report(fit(X, y, spec, cfg).params, 1e-3).nonzero_count);
        cfg.l1_lambda_grid = {1e-2};
        count_hi += static_cast<double>(sparsity_report(fit(X, y, spec, cfg).params, 1e-3).nonzero_count);
    }
    EXPECT_LE(count_hi, count_zero);
}
