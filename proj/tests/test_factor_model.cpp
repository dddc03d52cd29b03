#include "dnnfm/factor_model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dnnfm;

namespace
{

Matrix sample_panel(std::mt19937_64& rng, int n, int J)
{
    std::normal_distribution<double> normal;
    Matrix U(n, J);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < J; ++j)
            U(i, j) = normal(rng);
    return U;
}

}  // namespace

TEST(FactorMode, ParseRoundTrip)
{
    for (auto m : {FactorMode::dnn, FactorMode::sdnn, FactorMode::linear})
        EXPECT_EQ(parse_factor_mode(to_string(m)), m);
    EXPECT_FALSE(parse_factor_mode("poet").has_value());
}

TEST(FitModel, LinearInterpolatesAffineData)
{
    std::mt19937_64 rng(1);
    const Matrix X = sample_panel(rng, 40, 2);
    Matrix Y(40, 1);
    Y.col(0) = (0.3 + 1.5 * X.col(0).array() - 0.7 * X.col(1).array()).matrix();
    const auto m = fit_model(Y, X, FactorMode::linear, TrainConfig::dense());
    EXPECT_LE(residuals(m, Y, X).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(m.asset_ids, std::vector<std::string>{"asset1"});
}

TEST(FitModel, NetworkAssetsUseDerivedSeeds)
{
    std::mt19937_64 rng(2);
    const Matrix X = sample_panel(rng, 30, 1);
    const Matrix Y = sample_panel(rng, 30, 3);
    auto cfg = TrainConfig::dense(55);
    cfg.max_epochs = 5;
    FactorFitOptions opts;
    opts.network = NetworkSpec{1, 1, {4}};
    const auto m = fit_model(Y, X, FactorMode::dnn, cfg, {}, opts);
    ASSERT_EQ(m.models.size(), 3u);
    ASSERT_EQ(m.fit_info.size(), 3u);
    for (int j = 0; j < 3; ++j)
    {
        auto cj = cfg;
        cj.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(j)});
        const auto direct = fit(X, Y.col(j), *opts.network, cj);
        EXPECT_EQ(std::get<NetworkParams>(m.models[static_cast<std::size_t>(j)]), direct.params);
    }
    EXPECT_FALSE(std::get<NetworkParams>(m.models[0]) == std::get<NetworkParams>(m.models[1]));
}

TEST(FitModel, ThreadCountDoesNotChangeResults)
{
    std::mt19937_64 rng(3);
    const Matrix X = sample_panel(rng, 30, 2);
    const Matrix Y = sample_panel(rng, 30, 4);
    auto cfg = TrainConfig::sparse(9);
    cfg.max_epochs = 4;
    FactorFitOptions serial, parallel;
    parallel.threads = 3;
    const auto a = fit_model(Y, X, FactorMode::sdnn, cfg, {}, serial);
    const auto b = fit_model(Y, X, FactorMode::sdnn, cfg, {}, parallel);
    for (std::size_t j = 0; j < 4; ++j)
    {
        const auto& pa = std::get<NetworkParams>(a.models[j]);
        EXPECT_EQ(pa, std::get<NetworkParams>(b.models[j]));
        EXPECT_LE(sparsity_report(pa).max_abs_weight, 1.0);
    }
}

TEST(FitModel, Errors)
{
    const Matrix X = Matrix::Random(30, 2);
    Matrix Y = Matrix::Random(30, 2);
    EXPECT_THROW(fit_model(Y.topRows(19), X.topRows(19), FactorMode::linear, TrainConfig::dense()), Error);
    EXPECT_THROW(fit_model(Y.topRows(29), X, FactorMode::linear, TrainConfig::dense()), Error);
    EXPECT_THROW(fit_model(Y, X, FactorMode::sdnn, TrainConfig::dense()), Error);
    Y(4, 1) = std::numeric_limits<double>::infinity();
    try
    {
        fit_model(Y, X, FactorMode::linear, TrainConfig::dense());
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::data);
    }
}

TEST(Predict, Examples)
{
    FittedFactorModel m;
    m.factor_dim = 2;
    m.models.push_back(detail::zeros_like(init_params({2, 1, {3}}, 0)));
    m.models.push_back(LinearModel{Vector{{1.0, 0.0, 0.0}}});
    m.asset_ids = default_asset_ids(2);
    const Matrix X = Matrix::Random(5, 2);
    const Matrix P = predict(m, X);
    EXPECT_TRUE(P.col(0).isZero(0.0));
    EXPECT_TRUE(P.col(1).isOnes(0.0));
    EXPECT_THROW(predict(m, Matrix::Zero(5, 3)), Error);
}

TEST(Predict, ReevaluatesNetworks)
{
    std::mt19937_64 rng(4);
    const Matrix X = sample_panel(rng, 25, 2);
    const Matrix Y = sample_panel(rng, 25, 2);
    auto cfg = TrainConfig::dense(1);
    cfg.max_epochs = 3;
    const auto m = fit_model(Y, X, FactorMode::dnn, cfg);
    const Matrix P = predict(m, X);
    for (std::size_t j = 0; j < 2; ++j)
        EXPECT_LE((P.col(static_cast<Eigen::Index>(j)) - forward_batch(std::get<NetworkParams>(m.models[j]), X))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-12);
}

TEST(Residuals, Examples)
{
    std::mt19937_64 rng(5);
    const Matrix X = sample_panel(rng, 25, 1);
    const Matrix Y = sample_panel(rng, 25, 3);
    const auto m = fit_model(Y, X, FactorMode::linear, TrainConfig::dense());
    const Matrix P = predict(m, X);
    EXPECT_TRUE(residuals(m, P, X).isZero(0.0));
    EXPECT_LE((residuals(m, P.array() + 1.0, X).array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_EQ(residuals(m, Y, X), Y - P);
    EXPECT_THROW(residuals(m, Y.leftCols(2), X), Error);
}

TEST(SigmaF, Examples)
{
    EXPECT_TRUE(estimate_sigma_f(Matrix::Constant(6, 3, 2.5)).isZero(0.0));
    Matrix f(2, 1);
    f << 0.0, 2.0;
    EXPECT_DOUBLE_EQ(estimate_sigma_f(f)(0, 0), 1.0);
    EXPECT_THROW(estimate_sigma_f(Matrix::Zero(1, 2)), Error);
}

TEST(SigmaF, PsdAndMatchesLoop)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial)
    {
        const int n = 2 + static_cast<int>(rng() % 15), J = 1 + static_cast<int>(rng() % 8);
        const Matrix f = sample_panel(rng, n, J);
        const Matrix s = estimate_sigma_f(f);
        EXPECT_GE(eig_extremes(s).eigmin, -1e-10);
        const Vector mean = f.colwise().mean();
        for (int a = 0; a < J; ++a)
            for (int b = 0; b < J; ++b)
            {
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    acc += (f(i, a) - mean(a)) * (f(i, b) - mean(b));
                EXPECT_NEAR(s(a, b), acc / n, 1e-12);
            }
    }
}

TEST(ResidualCov, Examples)
{
    EXPECT_TRUE(raw_residual_cov(Matrix::Zero(5, 3)).isZero(0.0));
    Matrix u(2, 1);
    u << 1.0, -1.0;
    EXPECT_DOUBLE_EQ(raw_residual_cov(u)(0, 0), 1.0);

    Matrix u4(4, 2);
    u4 << 1, 1, -1, 1, 1, -1, -1, -1;
    const Matrix s = raw_residual_cov(u4);
    EXPECT_TRUE(s.isIdentity(0.0));
    const Matrix th = compute_theta(u4, s);
    EXPECT_DOUBLE_EQ(th(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(th(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(th(0, 0), 0.0);
    EXPECT_TRUE(adaptive_threshold(s, th, 10.0).isIdentity(0.0));
}

TEST(Theta, ZeroAndLoopOracle)
{
    EXPECT_TRUE(compute_theta(Matrix::Zero(4, 2), Matrix::Zero(2, 2)).isZero(0.0));
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial)
    {
        const int n = 1 + static_cast<int>(rng() % 12), J = 1 + static_cast<int>(rng() % 6);
        const Matrix u = sample_panel(rng, n, J);
        const Matrix s = raw_residual_cov(u);
        const Matrix th = compute_theta(u, s);
        for (int a = 0; a < J; ++a)
            for (int b = 0; b < J; ++b)
            {
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    acc += std::abs(u(i, a) * u(i, b) - s(a, b));
                EXPECT_NEAR(th(a, b), acc / n, 1e-12);
                EXPECT_GE(th(a, b), 0.0);
            }
    }
}

TEST(OmegaN, Examples)
{
    EXPECT_EQ(omega_n(77, 1), 0.0);
    EXPECT_NEAR(omega_n(120, 50), 0.5417, 5e-5);
    EXPECT_NEAR(omega_n(480, 50), 0.5 * omega_n(120, 50), 1e-15);
    EXPECT_DOUBLE_EQ(omega_n(100, 10, 1.0), std::sqrt(std::log(10.0) / 100.0));
}

TEST(Threshold, Examples)
{
    std::mt19937_64 rng(8);
    const Matrix u = sample_panel(rng, 10, 4);
    const Matrix s = raw_residual_cov(u);
    EXPECT_EQ(adaptive_threshold(s, compute_theta(u, s), 0.0), s);

    Matrix s2(2, 2), th(2, 2);
    s2 << 1.0, 0.1, 0.1, 1.0;
    th << 0.0, 1.0, 1.0, 0.0;
    const Matrix out = adaptive_threshold(s2, th, 0.5);
    EXPECT_EQ(out(0, 1), 0.0);
    EXPECT_EQ(out(1, 0), 0.0);
    EXPECT_EQ(out(0, 0), 1.0);
}

TEST(Threshold, DiagonalNeverThresholded)
{
    Matrix s(2, 2), th(2, 2);
    s << 0.1, 0.0, 0.0, 0.2;
    th = Matrix::Constant(2, 2, 100.0);
    EXPECT_EQ(adaptive_threshold(s, th, 5.0).diagonal(), s.diagonal());
}

TEST(Threshold, MonotoneAndExactSurvivors)
{
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> om(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial)
    {
        const int n = 5 + static_cast<int>(rng() % 30), J = 2 + static_cast<int>(rng() % 8);
        const Matrix u = sample_panel(rng, n, J);
        const Matrix s = raw_residual_cov(u);
        const Matrix th = compute_theta(u, s);
        double w1 = om(rng), w2 = om(rng);
        if (w1 > w2)
            std::swap(w1, w2);
        const Matrix a = adaptive_threshold(s, th, w1);
        const Matrix b = adaptive_threshold(s, th, w2);
        EXPECT_EQ(a, a.transpose());
        for (int j = 0; j < J; ++j)
            for (int k = 0; k < J; ++k)
            {
                if (b(j, k) != 0.0)
                    EXPECT_NE(a(j, k), 0.0);
                if (a(j, k) != 0.0)
                    EXPECT_EQ(a(j, k), s(j, k));
            }
        EXPECT_GE(sparsity_level(a), sparsity_level(b));
    }
}

TEST(SparsityLevel, CountsRowNonzeros)
{
    Matrix s = Matrix::Identity(4, 4);
    EXPECT_EQ(sparsity_level(s), 1);
    s(0, 2) = s(2, 0) = 0.3;
    s(0, 3) = s(3, 0) = 0.1;
    EXPECT_EQ(sparsity_level(s), 3);
}

TEST(Precision, Examples)
{
    const Matrix I = Matrix::Identity(5, 5);
    auto r = precision_from_parts(I, Matrix::Zero(5, 5), 1e-8);
    EXPECT_LE((r.precision_y - r.precision_u).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_FALSE(r.floor_applied);
    r = precision_from_parts(I, I, 1e-8);
    EXPECT_LE((r.precision_y - 0.5 * I).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Precision, RandomJ20AgainstDenseInverse)
{
    std::mt19937_64 rng(10);
    const auto pair = oracle::random_cov_pair(rng, 20, 3);
    const auto r = precision_from_parts(pair.sigma_u, pair.sigma_f, 1e-8);
    const Matrix sum = pair.sigma_u + pair.sigma_f;
    EXPECT_LE((r.precision_y * sum - Matrix::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((r.precision_y - oracle::gauss_jordan_inverse(sum)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Precision, RandomizedInverseSuite)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial)
    {
        const int J = 1 + static_cast<int>(rng() % 40);
        const int rank = static_cast<int>(rng() % 6);
        const auto pair = oracle::random_cov_pair(rng, J, rank);
        const auto r = precision_from_parts(pair.sigma_u, pair.sigma_f, 1e-10);
        const Matrix direct = oracle::gauss_jordan_inverse(pair.sigma_u + pair.sigma_f);
        const double scale = direct.cwiseAbs().maxCoeff();
        EXPECT_LE((r.precision_y - direct).cwiseAbs().maxCoeff(), 1e-8 * scale) << "trial " << trial;
        EXPECT_EQ(r.precision_y, r.precision_y.transpose());
    }
}

TEST(Precision, ScaleEquivariance)
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> cd(0.01, 100.0);
    for (int trial = 0; trial < 200; ++trial)
    {
        const int J = 1 + static_cast<int>(rng() % 15);
        const auto pair = oracle::random_cov_pair(rng, J, 2);
        const double c = cd(rng);
        const auto a = precision_from_parts(pair.sigma_u, pair.sigma_f, 1e-9);
        const auto b = precision_from_parts(c * pair.sigma_u, c * pair.sigma_f, 1e-9 * c);
        const double scale = a.precision_y.cwiseAbs().maxCoeff();
        EXPECT_LE((c * b.precision_y - a.precision_y).cwiseAbs().maxCoeff(), 1e-9 * scale);
    }
}

TEST(Precision, FloorShiftsIndefiniteInput)
{
    Matrix s(2, 2);
    s << 1.0, 2.0, 2.0, 1.0;  // eigenvalues -1, 3
    const auto r = precision_from_parts(s, Matrix::Zero(2, 2), 0.5);
    EXPECT_TRUE(r.floor_applied);
    EXPECT_NEAR(r.floor_shift, 1.5, 1e-12);
    const Matrix shifted = s + 1.5 * Matrix::Identity(2, 2);
    EXPECT_LE((r.precision_u * shifted - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(precision_from_parts(s, Matrix::Zero(2, 2), 0.0), Error);
}

TEST(Precision, SingularSystemIsEstimationError)
{
    // P F = -I makes I + P F exactly zero
    const Matrix I = Matrix::Identity(3, 3);
    try
    {
        precision_from_parts(I, -I, 1e-12);
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::estimation);
    }
}

TEST(Bundle, DefinitionalIdentities)
{
    std::mt19937_64 rng(13);
    const Matrix X = sample_panel(rng, 60, 2);
    Matrix Y = sample_panel(rng, 60, 5);
    Y.col(0) += X.col(0);
    const auto m = fit_model(Y, X, FactorMode::linear, TrainConfig::dense());
    const auto b = build_bundle(m, Y, X);
    EXPECT_EQ(b.sigma_y, b.sigma_f + b.sigma_u_th);
    EXPECT_DOUBLE_EQ(b.omega_n, omega_n(60, 5));
    EXPECT_EQ(b.n, 60);
    EXPECT_TRUE((b.sigma_u_th.diagonal().array() > 0).all());
    EXPECT_LE((b.precision_y * b.sigma_y - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(b.s_n, sparsity_level(b.sigma_u_th));
}

TEST(Bundle, SingleAssetKeepsRawCovariance)
{
    std::mt19937_64 rng(14);
    const Matrix X = sample_panel(rng, 30, 1);
    const Matrix Y = sample_panel(rng, 30, 1);
    const auto b = build_bundle(fit_model(Y, X, FactorMode::linear, TrainConfig::dense()), Y, X);
    EXPECT_EQ(b.sigma_u_th, b.sigma_u_raw);
}

TEST(Bundle, ZeroResidualsUseFloor)
{
    std::mt19937_64 rng(15);
    const Matrix fitted = sample_panel(rng, 30, 3);
    const auto b = bundle_from_parts(fitted, Matrix::Zero(30, 3));
    EXPECT_TRUE(b.sigma_u_raw.isZero(0.0));
    EXPECT_TRUE(b.eig_floor_applied);
    EXPECT_DOUBLE_EQ(b.eig_floor, 1e-12);
    EXPECT_LE((b.precision_u - 1e12 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Persistence, LinearPredictorRoundTrip)
{
    const AssetPredictor p = LinearModel{Vector{{0.25, -1.5, 3.0}}};
    const auto back = predictor_from_json(nlohmann::json::parse(predictor_to_json(p).dump()));
    EXPECT_EQ(std::get<LinearModel>(back).coef, std::get<LinearModel>(p).coef);
    const AssetPredictor net = init_params({2, 1, {3}}, 4);
    EXPECT_EQ(std::get<NetworkParams>(predictor_from_json(predictor_to_json(net))), std::get<NetworkParams>(net));
}
