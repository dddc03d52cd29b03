/**
 * @file nn_core.hpp
 * @brief Feedforward ReLU regression network: architecture, evaluation,
 *        parameter accounting, initialization and sparsity constraints.
 *
 * A network maps R^input_dim -> R through `depth` hidden ReLU layers and a
 * linear output unit. Parameters are plain values; every mutating operation
 * returns a new NetworkParams.
 */
#pragma once

#include "dnnfm/common.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dnnfm
{

struct NetworkSpec
{
    int input_dim = 1;
    int depth = 1;
    std::vector<int> widths{1};
    static constexpr int output_dim = 1;

    /// Layer sizes p_0 .. p_{L+1}.
    std::vector<int> layer_sizes() const
    {
        std::vector<int> sizes;
        sizes.reserve(widths.size() + 2);
        sizes.push_back(input_dim);
        sizes.insert(sizes.end(), widths.begin(), widths.end());
        sizes.push_back(output_dim);
        return sizes;
    }

    void validate() const
    {
        if (input_dim < 1)
            fail(ErrorKind::config, "network input_dim must be >= 1");
        if (depth < 1)
            fail(ErrorKind::config, "network depth must be >= 1");
        if (static_cast<int>(widths.size()) != depth)
            fail(ErrorKind::config, "network widths must have exactly `depth` entries");
        for (int w : widths)
            if (w < 1)
                fail(ErrorKind::config, "network widths must be >= 1");
    }

    bool operator==(const NetworkSpec&) const = default;
};

/// Two hidden layers of 16 units: the default used by the CLI and studies.
inline NetworkSpec default_network_spec(int input_dim)
{
    return NetworkSpec{input_dim, 2, {16, 16}};
}

struct DenseLayer
{
    Matrix W;  ///< next_width x prev_width
    Vector b;  ///< next_width

    bool operator==(const DenseLayer& o) const
    {
        return W.rows() == o.W.rows() && W.cols() == o.W.cols() && b.size() == o.b.size() && W == o.W && b == o.b;
    }
};

struct NetworkParams
{
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }

    NetworkSpec spec() const
    {
        NetworkSpec s;
        s.input_dim = input_dim();
        s.depth = static_cast<int>(layers.size()) - 1;
        s.widths.clear();
        for (std::size_t l = 0; l + 1 < layers.size(); ++l)
            s.widths.push_back(static_cast<int>(layers[l].W.rows()));
        return s;
    }

    std::size_t scalar_count() const
    {
        std::size_t n = 0;
        for (const auto& layer : layers)
            n += static_cast<std::size_t>(layer.W.size() + layer.b.size());
        return n;
    }

    bool operator==(const NetworkParams&) const = default;
};

struct SparsityReport
{
    std::size_t nonzero_count = 0;
    double max_abs_weight = 0.0;
    std::size_t total_count = 0;
};

inline double relu(double x)
{
    return x > 0.0 ? x : 0.0;
}

/// W_j = sum_l (p_l + 1) p_{l+1}.
inline std::size_t param_count(const NetworkSpec& spec)
{
    spec.validate();
    const auto sizes = spec.layer_sizes();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        total += static_cast<std::size_t>(sizes[l] + 1) * static_cast<std::size_t>(sizes[l + 1]);
    return total;
}

inline void check_params(const NetworkParams& params)
{
    require_shape(params.layers.size() >= 2, "network needs at least one hidden layer");
    for (std::size_t l = 0; l < params.layers.size(); ++l)
    {
        const auto& layer = params.layers[l];
        require_shape(layer.W.rows() == layer.b.size(), "layer " + std::to_string(l) + ": bias length mismatch");
        if (l > 0)
            require_shape(layer.W.cols() == params.layers[l - 1].W.rows(),
                          "layer " + std::to_string(l) + ": input width mismatch");
    }
    require_shape(params.layers.back().W.rows() == 1, "output layer must have one unit");
}

/**
 * Evaluates the network on every row of X (n x input_dim). Returns n outputs.
 * Hidden layers apply ReLU; the output layer is affine.
 */
inline Vector forward_batch(const NetworkParams& params, const Matrix& X)
{
    check_params(params);
    require_shape(X.cols() == params.input_dim(),
                  "forward: expected " + std::to_string(params.input_dim()) + " inputs, got " + std::to_string(X.cols()));
    Matrix a = X.transpose();
    const std::size_t last = params.layers.size() - 1;
    for (std::size_t l = 0; l < last; ++l)
    {
        Matrix z = params.layers[l].W * a;
        z.colwise() += params.layers[l].b;
        a = z.cwiseMax(0.0);
    }
    Matrix out = params.layers[last].W * a;
    out.colwise() += params.layers[last].b;
    return out.row(0).transpose();
}

inline double forward(const NetworkParams& params, const Vector& x)
{
    require_shape(x.size() == params.input_dim(),
                  "forward: expected " + std::to_string(params.input_dim()) + " inputs, got " + std::to_string(x.size()));
    return forward_batch(params, x.transpose())(0);
}

/// Uniform(-s, s) weights with s = sqrt(2 / fan_in), clipped to [-1, 1]; zero biases.
inline NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    const auto sizes = spec.layer_sizes();
    NetworkParams params;
    params.layers.reserve(sizes.size() - 1);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    {
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const double scale = std::sqrt(2.0 / fan_in);
        std::uniform_real_distribution<double> dist(-scale, scale);
        DenseLayer layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c)
                layer.W(r, c) = std::clamp(dist(rng), -1.0, 1.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

inline NetworkParams clip_weights(NetworkParams params, double bound)
{
    if (!(bound > 0.0))
        fail(ErrorKind::config, "clip bound must be positive");
    for (auto& layer : params.layers)
    {
        layer.W = layer.W.cwiseMax(-bound).cwiseMin(bound);
        layer.b = layer.b.cwiseMax(-bound).cwiseMin(bound);
    }
    return params;
}

/// Exact zeros never appear under subgradient training, hence the tolerance.
inline constexpr double kDefaultZeroTol = 1e-8;

inline SparsityReport sparsity_report(const NetworkParams& params, double zero_tol = kDefaultZeroTol)
{
    if (zero_tol < 0.0)
        fail(ErrorKind::config, "zero_tol must be nonnegative");
    SparsityReport report;
    auto visit = [&](const auto& block) {
        for (Eigen::Index i = 0; i < block.size(); ++i)
        {
            const double a = std::abs(block.data()[i]);
            if (a > zero_tol)
                ++report.nonzero_count;
            report.max_abs_weight = std::max(report.max_abs_weight, a);
        }
    };
    for (const auto& layer : params.layers)
    {
        visit(layer.W);
        visit(layer.b);
    }
    report.total_count = params.scalar_count();
    return report;
}

// ---------------------------------------------------------------------------
// JSON persistence:
//   {"spec": {"input_dim", "depth", "widths"}, "layers": [{"W": [[...]], "b": [...]}]}
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const NetworkParams& params)
{
    const NetworkSpec spec = params.spec();
    nlohmann::json j;
    j["spec"] = {{"input_dim", spec.input_dim}, {"depth", spec.depth}, {"widths", spec.widths}};
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : params.layers)
    {
        nlohmann::json W = nlohmann::json::array();
        for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
        {
            std::vector<double> row(static_cast<std::size_t>(layer.W.cols()));
            for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
                row[static_cast<std::size_t>(c)] = layer.W(r, c);
            W.push_back(row);
        }
        std::vector<double> b(layer.b.data(), layer.b.data() + layer.b.size());
        j["layers"].push_back({{"W", W}, {"b", b}});
    }
    return j;
}

inline NetworkParams network_from_json(const nlohmann::json& j)
{
    try
    {
        NetworkSpec spec;
        spec.input_dim = j.at("spec").at("input_dim").get<int>();
        spec.depth = j.at("spec").at("depth").get<int>();
        spec.widths = j.at("spec").at("widths").get<std::vector<int>>();
        spec.validate();
        const auto sizes = spec.layer_sizes();
        const auto& layers = j.at("layers");
        if (layers.size() + 1 != sizes.size())
            fail(ErrorKind::data, "model JSON: layer count does not match spec");

        NetworkParams params;
        for (std::size_t l = 0; l < layers.size(); ++l)
        {
            const auto rows = sizes[l + 1];
            const auto cols = sizes[l];
            const auto& Wj = layers[l].at("W");
            const auto bj = layers[l].at("b").get<std::vector<double>>();
            if (static_cast<int>(Wj.size()) != rows || static_cast<int>(bj.size()) != rows)
                fail(ErrorKind::data, "model JSON: layer " + std::to_string(l) + " shape does not match spec");
            DenseLayer layer{Matrix(rows, cols), Vector(rows)};
            for (int r = 0; r < rows; ++r)
            {
                const auto row = Wj[static_cast<std::size_t>(r)].get<std::vector<double>>();
                if (static_cast<int>(row.size()) != cols)
                    fail(ErrorKind::data, "model JSON: layer " + std::to_string(l) + " row width mismatch");
                for (int c = 0; c < cols; ++c)
                    layer.W(r, c) = row[static_cast<std::size_t>(c)];
                layer.b(r) = bj[static_cast<std::size_t>(r)];
            }
            if (!layer.W.allFinite() || !layer.b.allFinite())
                fail(ErrorKind::data, "model JSON: non-finite parameter");
            params.layers.push_back(std::move(layer));
        }
        return params;
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::data, std::string("model JSON: ") + e.what());
    }
}

}  // namespace dnnfm
