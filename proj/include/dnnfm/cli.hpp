/**
 * @file cli.hpp
 * @brief `dnnfm` command line: simulate, fit and backtest subcommands.
 *
 * Exit codes: 0 ok, 2 usage/validation, 3 I/O, 4 data consistency,
 * 5 numeric failure. `--config FILE` reads a JSON object whose flat keys
 * mirror the long flag names (underscores or dashes); explicit flags win.
 *
 * CSV outputs carry no metadata rows; each run writes manifest.json with
 * the seed, config hash, tool version and a hash of every emitted file.
 */
#pragma once

#include "dnnfm/dnnfm.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dnnfm::cli
{

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int
{
    kOk = 0,
    kUsage = 2,
    kIo = 3,
    kData = 4,
    kNumeric = 5,
};

inline int exit_code_for(ErrorKind kind)
{
    switch (kind)
    {
    case ErrorKind::config: return kUsage;
    case ErrorKind::io: return kIo;
    case ErrorKind::shape:
    case ErrorKind::data: return kData;
    case ErrorKind::numeric:
    case ErrorKind::estimation: return kNumeric;
    }
    return kNumeric;
}

/// Training knobs shared by every subcommand that fits networks.
struct TrainFlags
{
    int max_epochs = 500;
    int batch_size = 32;
    double learning_rate = 1e-3;
    int patience = 20;
    int depth = 2;
    std::vector<int> widths{16, 16};
    double dropout = 0.2;
    std::vector<double> l1_grid{1e-5, 1e-4, 1e-3, 1e-2};
    double c_star = kDefaultThresholdConstant;

    void add_to(CLI::App& app)
    {
        app.add_option("--max-epochs", max_epochs, "maximum training epochs")->check(CLI::NonNegativeNumber);
        app.add_option("--batch-size", batch_size, "mini-batch size")->check(CLI::PositiveNumber);
        app.add_option("--learning-rate", learning_rate, "Adam step size")->check(CLI::PositiveNumber);
        app.add_option("--patience", patience, "early-stopping patience (epochs)")->check(CLI::PositiveNumber);
        app.add_option("--depth", depth, "hidden layers")->check(CLI::PositiveNumber);
        app.add_option("--widths", widths, "hidden widths, comma separated")->delimiter(',');
        app.add_option("--dropout", dropout, "sparse-mode dropout rate")->check(CLI::Range(0.0, 0.999));
        app.add_option("--l1-grid", l1_grid, "sparse-mode l1 penalty grid, comma separated")->delimiter(',');
        app.add_option("--c-star", c_star, "threshold constant in omega_n = c sqrt(log J / n)")->check(CLI::NonNegativeNumber);
    }

    NetworkSpec network(int input_dim) const
    {
        NetworkSpec spec{input_dim, depth, widths};
        if (static_cast<int>(spec.widths.size()) == 1 && depth > 1)
            spec.widths.assign(static_cast<std::size_t>(depth), widths.front());
        spec.validate();
        return spec;
    }

    TrainConfig dense(std::uint64_t seed) const
    {
        TrainConfig cfg = TrainConfig::dense(seed);
        apply_common(cfg);
        return cfg;
    }

    TrainConfig sparse(std::uint64_t seed) const
    {
        TrainConfig cfg = TrainConfig::sparse(seed);
        apply_common(cfg);
        cfg.dropout_rate = dropout;
        cfg.l1_lambda_grid = l1_grid;
        return cfg;
    }

    json to_json() const
    {
        return {{"max_epochs", max_epochs}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
                {"patience", patience},     {"depth", depth},           {"widths", widths},
                {"dropout", dropout},       {"l1_grid", l1_grid},       {"c_star", c_star}};
    }

private:
    void apply_common(TrainConfig& cfg) const
    {
        cfg.max_epochs = max_epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.patience = patience;
    }
};

/// Converts a flat JSON config object into `--key value` tokens.
inline std::vector<std::string> config_tokens(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::io, "cannot open config '" + path.string() + "'");
    json j;
    try
    {
        in >> j;
    }
    catch (const json::exception& e)
    {
        fail(ErrorKind::config, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object())
        fail(ErrorKind::config, "config '" + path.string() + "' must be a JSON object");

    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items())
    {
        std::string flag = "--" + key;
        for (auto& ch : flag)
            if (ch == '_')
                ch = '-';
        auto scalar = [](const json& v) -> std::string {
            if (v.is_string())
                return v.get<std::string>();
            if (v.is_number_integer())
                return std::to_string(v.get<long long>());
            if (v.is_number())
                return io::format_double(v.get<double>());
            fail(ErrorKind::config, "config values must be scalars or arrays of scalars");
        };
        if (value.is_boolean())
        {
            if (value.get<bool>())
                tokens.push_back(flag);
        }
        else if (value.is_array())
        {
            std::string joined;
            for (std::size_t k = 0; k < value.size(); ++k)
                joined += (k ? "," : "") + scalar(value[k]);
            tokens.push_back(flag);
            tokens.push_back(joined);
        }
        else
        {
            tokens.push_back(flag);
            tokens.push_back(scalar(value));
        }
    }
    return tokens;
}

/**
 * Splices config-file tokens in right after the subcommand name so that
 * flags given on the command line (parsed later, TakeLast) take precedence.
 */
inline std::vector<std::string> expand_config(std::vector<std::string> args)
{
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
    {
        std::string path;
        if (args[i] == "--config")
            path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            path = args[i].substr(9);
        else
            continue;
        auto tokens = config_tokens(path);
        if (args.size() > 1)
            args.insert(args.begin() + 2, tokens.begin(), tokens.end());
        return args;
    }
    return args;
}

struct Manifest
{
    json doc;
    fs::path dir;

    Manifest(std::string command, const fs::path& out_dir, std::uint64_t seed, const json& config)
        : dir(out_dir)
    {
        doc["command"] = std::move(command);
        doc["tool_version"] = kToolVersion;
        doc["seed"] = seed;
        doc["config"] = config;
        doc["config_hash"] = io::fnv1a_hex(config.dump());
        doc["files"] = json::object();
    }

    const std::string& config_hash() const { return doc["config_hash"].get_ref<const std::string&>(); }

    json provenance() const
    {
        return {{"seed", doc["seed"]}, {"config_hash", doc["config_hash"]}, {"tool_version", kToolVersion}};
    }

    void record(const fs::path& file)
    {
        std::ifstream in(file, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        doc["files"][fs::relative(file, dir).generic_string()] = io::fnv1a_hex(ss.str());
    }

    void write_json(const fs::path& file, const json& j)
    {
        io::write_text(file, j.dump(2) + "\n");
        record(file);
    }

    void finish()
    {
        io::write_text(dir / "manifest.json", doc.dump(2) + "\n");
    }
};

inline std::vector<std::string> index_labels(Eigen::Index n)
{
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i)
        out.push_back(std::to_string(i + 1));
    return out;
}

inline void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        fail(ErrorKind::io, "cannot create output directory '" + dir.string() + "'");
}

inline json optional_number(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

inline std::string csv_number(const std::optional<double>& v)
{
    return v ? io::format_double(*v) : std::string("NaN");
}

inline std::string diagnostics_line(Eigen::Index d, Eigen::Index J, const DiagnosticsRow& r)
{
    std::ostringstream os;
    os << d << ',' << J << ',' << io::format_double(r.signal) << ',' << io::format_double(r.noise) << ','
       << csv_number(r.snr) << ',' << io::format_double(r.eigmin_f) << ',' << io::format_double(r.eigmax_f) << ','
       << io::format_double(r.eigmin_u) << ',' << io::format_double(r.eigmax_u) << '\n';
    return os.str();
}

inline constexpr const char* kDiagnosticsHeader = "d,J,signal,noise,snr,eigmin_f,eigmax_f,eigmin_u,eigmax_u\n";

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs
{
    int design = 1;
    long n = 120;
    long J = 50;
    long d = 1;
    int reps = 1;
    std::uint64_t seed = 0;
    std::string out = "out";
    bool with_methods = false;
    std::vector<std::string> methods{"dnn", "sdnn", "linear"};
    unsigned threads = 0;
    TrainFlags train;
};

inline int run_simulate(const SimulateArgs& a)
{
    DesignConfig cfg{a.design, a.n, a.J, a.d, a.reps, a.seed};
    cfg.validate();
    std::vector<FactorMode> modes;
    for (const auto& m : a.methods)
    {
        auto mode = parse_factor_mode(m);
        if (!mode)
            fail(ErrorKind::config, "unknown method '" + m + "'");
        modes.push_back(*mode);
    }
    const fs::path out(a.out);
    ensure_dir(out);

    json config = {{"design", a.design}, {"n", a.n}, {"J", a.J}, {"d", a.d}, {"reps", a.reps}, {"with_methods", a.with_methods}};
    if (a.with_methods)
    {
        config["methods"] = a.methods;
        config["train"] = a.train.to_json();
    }
    Manifest manifest("simulate", out, a.seed, config);

    const auto rows = design_diagnostics(cfg, a.threads);
    {
        std::string text = kDiagnosticsHeader;
        for (const auto& r : rows)
            text += diagnostics_line(a.d, a.J, r);
        io::write_text(out / "diagnostics.csv", text);
        manifest.record(out / "diagnostics.csv");
        io::write_text(out / "diagnostics_summary.csv",
                       std::string(kDiagnosticsHeader) + diagnostics_line(a.d, a.J, average_diagnostics(rows)));
        manifest.record(out / "diagnostics_summary.csv");
    }

    // first replication's panel and truth
    const auto panel = simulate(cfg, 0);
    const auto ids = default_asset_ids(a.J);
    std::vector<std::string> factor_ids;
    for (long m = 0; m < a.d; ++m)
        factor_ids.push_back("x" + std::to_string(m + 1));
    const auto dates = index_labels(a.n);
    io::write_panel_csv(out / "Y.csv", dates, ids, panel.Y);
    io::write_panel_csv(out / "X.csv", dates, factor_ids, panel.X);
    io::write_matrix_csv(out / "sigma_f_true.csv", ids, panel.sigma_f_true);
    io::write_matrix_csv(out / "sigma_u_true.csv", ids, panel.sigma_u_true);
    for (const char* f : {"Y.csv", "X.csv", "sigma_f_true.csv", "sigma_u_true.csv"})
        manifest.record(out / f);

    if (a.with_methods)
    {
        StudyConfig sc;
        sc.grid = {{a.design, a.n, a.J, a.d}};
        sc.methods = modes;
        sc.reps = a.reps;
        sc.seed = a.seed;
        sc.dense = a.train.dense(a.seed);
        sc.sparse = a.train.sparse(a.seed);
        sc.network = a.train.network(static_cast<int>(a.d));
        sc.bundle.threshold_constant = a.train.c_star;
        sc.threads = a.threads;
        const auto study = run_study(sc);
        std::ostringstream os;
        os << "design,n,J,d,method,function_error,cov_error,precision_error,reps_ok\n";
        for (const auto& r : study)
            os << r.cell.design << ',' << r.cell.n << ',' << r.cell.J << ',' << r.cell.d << ',' << to_string(r.method)
               << ',' << io::format_double(mean_of(r.function_errors)) << ','
               << io::format_double(mean_of(r.cov_errors)) << ',' << io::format_double(mean_of(r.precision_errors))
               << ',' << r.reps_ok << '\n';
        io::write_text(out / "study.csv", os.str());
        manifest.record(out / "study.csv");
    }
    manifest.finish();
    return kOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs
{
    std::string returns;
    std::string factors;
    std::string model = "dnn";
    std::string out = "out";
    std::uint64_t seed = 0;
    unsigned threads = 0;
    TrainFlags train;
};

/// Rows must carry identical date labels; reports the first mismatch.
inline void check_alignment(const io::Panel& returns, const io::Panel& factors)
{
    const std::size_t common = std::min(returns.dates.size(), factors.dates.size());
    for (std::size_t i = 0; i < common; ++i)
        if (returns.dates[i] != factors.dates[i])
            fail(ErrorKind::data, "returns and factors are misaligned at date " + returns.dates[i] + " (factors have " +
                                      factors.dates[i] + ")");
    if (returns.dates.size() != factors.dates.size())
    {
        const auto& longer = returns.dates.size() > factors.dates.size() ? returns.dates : factors.dates;
        fail(ErrorKind::data, "returns and factors are misaligned at date " + longer[common] +
                                  " (present in only one file)");
    }
}

inline int run_fit(const FitArgs& a)
{
    const auto mode = parse_factor_mode(a.model);
    if (!mode)
        fail(ErrorKind::config, "unknown model '" + a.model + "'");
    const auto R = io::read_panel_csv(a.returns);
    const auto F = io::read_panel_csv(a.factors);
    check_alignment(R, F);
    if (!R.values.allFinite() || !F.values.allFinite())
        fail(ErrorKind::data, "fit: returns and factors must not contain missing values");

    const fs::path out(a.out);
    ensure_dir(out);
    const int d = static_cast<int>(F.columns.size());
    json config = {{"model", a.model}, {"returns", fs::path(a.returns).filename().string()},
                   {"factors", fs::path(a.factors).filename().string()}, {"train", a.train.to_json()}};
    Manifest manifest("fit", out, a.seed, config);

    FactorFitOptions fo;
    fo.threads = a.threads;
    fo.network = a.train.network(d);
    const TrainConfig tc = *mode == FactorMode::sdnn ? a.train.sparse(a.seed) : a.train.dense(a.seed);
    const auto model = fit_model(R.values, F.values, *mode, tc, R.columns, fo);
    BundleOptions bo;
    bo.threshold_constant = a.train.c_star;
    const auto bundle = build_bundle(model, R.values, F.values, bo);

    json all_models = json::array();
    for (std::size_t j = 0; j < model.models.size(); ++j)
    {
        json entry = {{"asset", model.asset_ids[j]}, {"mode", to_string(model.mode)}, {"model", predictor_to_json(model.models[j])}};
        if (!model.fit_info.empty())
        {
            const auto& info = model.fit_info[j];
            entry["fit"] = {{"stopped_epoch", info.stopped_epoch}, {"chosen_lambda", info.chosen_lambda},
                            {"best_val_mse", info.best_val_mse}, {"diagnostics", info.diagnostics}};
        }
        entry.update(manifest.provenance());
        manifest.write_json(out / "models" / (model.asset_ids[j] + ".json"), entry);
        all_models.push_back(entry);
    }
    manifest.write_json(out / "models.json", all_models);

    io::write_panel_csv(out / "residuals.csv", R.dates, R.columns, residuals(model, R.values, F.values));
    manifest.record(out / "residuals.csv");
    const std::vector<std::pair<const char*, const Matrix*>> mats = {
        {"sigma_f.csv", &bundle.sigma_f},         {"sigma_u_raw.csv", &bundle.sigma_u_raw},
        {"theta.csv", &bundle.theta},             {"sigma_u_th.csv", &bundle.sigma_u_th},
        {"sigma_y.csv", &bundle.sigma_y},         {"precision_u.csv", &bundle.precision_u},
        {"precision_y.csv", &bundle.precision_y}};
    for (const auto& [name, m] : mats)
    {
        io::write_matrix_csv(out / name, R.columns, *m);
        manifest.record(out / name);
    }
    json sidecar = {{"J", R.values.cols()},       {"n", R.values.rows()},  {"omega_n", bundle.omega_n},
                    {"eig_floor", bundle.eig_floor}, {"eig_floor_applied", bundle.eig_floor_applied},
                    {"s_n", bundle.s_n}};
    sidecar.update(manifest.provenance());
    manifest.write_json(out / "bundle.json", sidecar);

    manifest.doc["omega_n"] = bundle.omega_n;
    manifest.doc["s_n"] = bundle.s_n;
    manifest.doc["eig_floor"] = bundle.eig_floor;
    manifest.doc["eig_floor_events"] = bundle.eig_floor_applied ? 1 : 0;
    manifest.finish();
    return kOk;
}

// ---------------------------------------------------------------------------
// backtest
// ---------------------------------------------------------------------------

struct BacktestArgs
{
    std::string returns;
    std::string factors;
    std::string ranks;
    std::vector<std::string> estimators{"dnn", "sdnn", "linear", "equal_weight"};
    std::vector<long> sizes{50, 100};
    long window = 120;
    double tc_bps = 50.0;
    int periods_per_year = 12;
    int refit_every = 1;
    std::uint64_t seed = 0;
    std::string out = "out";
    unsigned threads = 0;
    TrainFlags train;
};

inline int run_backtest(const BacktestArgs& a)
{
    std::vector<Estimator> estimators;
    bool needs_factors = false;
    for (const auto& s : a.estimators)
    {
        auto e = parse_estimator(s);
        if (!e)
            fail(ErrorKind::config, "unknown estimator '" + s + "'");
        estimators.push_back(*e);
        needs_factors |= (*e == Estimator::dnn || *e == Estimator::sdnn || *e == Estimator::linear);
    }
    if (needs_factors && a.factors.empty())
        fail(ErrorKind::config, "--factors is required for dnn, sdnn and linear estimators");

    const auto R = io::read_panel_csv(a.returns);
    io::Panel F;
    if (!a.factors.empty())
    {
        F = io::read_panel_csv(a.factors);
        check_alignment(R, F);
    }
    const auto n = R.values.rows();
    if (a.window < 2 || a.window + 1 >= n)
        fail(ErrorKind::config, "window " + std::to_string(a.window) + " leaves no out-of-sample periods for n = " +
                                    std::to_string(n));
    std::optional<Matrix> ranks;
    if (!a.ranks.empty())
    {
        auto RK = io::read_panel_csv(a.ranks);
        if (RK.columns != R.columns)
            fail(ErrorKind::data, "ranks columns must match the returns columns");
        if (RK.values.rows() != 1)
            check_alignment(R, RK);
        ranks = RK.values;
    }
    for (long size : a.sizes)
        if (size < 1 || size > R.values.cols())
            fail(ErrorKind::config, "universe size " + std::to_string(size) + " exceeds the " +
                                        std::to_string(R.values.cols()) + " assets in the panel");

    const fs::path out(a.out);
    ensure_dir(out);
    json config = {{"estimators", a.estimators}, {"sizes", a.sizes},       {"window", a.window},
                   {"tc_bps", a.tc_bps},         {"refit_every", a.refit_every}, {"periods_per_year", a.periods_per_year},
                   {"returns", fs::path(a.returns).filename().string()}, {"ranks", !a.ranks.empty()},
                   {"train", a.train.to_json()}};
    Manifest manifest("backtest", out, a.seed, config);

    // summary[costs][size][metric][estimator]
    std::map<long, std::vector<BacktestReport>> by_size;
    for (long size : a.sizes)
        for (Estimator e : estimators)
        {
            BacktestConfig bc;
            bc.window = a.window;
            bc.universe_size = size;
            bc.tc_rate = a.tc_bps / 10000.0;
            bc.estimator = e;
            bc.periods_per_year = a.periods_per_year;
            bc.seed = a.seed;
            bc.refit_every = a.refit_every;
            bc.dense = a.train.dense(a.seed);
            bc.sparse = a.train.sparse(a.seed);
            bc.network = a.train.network(static_cast<int>(std::max<std::size_t>(F.columns.size(), 1)));
            bc.bundle.threshold_constant = a.train.c_star;
            bc.threads = a.threads;
            auto rep = rolling_backtest(R.values, F.values, bc, ranks);

            const std::string stem = std::string(to_string(e)) + "_J" + std::to_string(size);
            json rj = {{"estimator", to_string(e)},
                       {"J", size},
                       {"window", a.window},
                       {"tc_rate", bc.tc_rate},
                       {"SD", rep.gross.sd},
                       {"AV", rep.gross.av},
                       {"SR", optional_number(rep.gross.sr)},
                       {"SD_net", rep.net.sd},
                       {"AV_net", rep.net.av},
                       {"SR_net", optional_number(rep.net.sr)},
                       {"PT", rep.pt},
                       {"n_oos", rep.n_oos()}};
            rj.update(manifest.provenance());
            manifest.write_json(out / ("report_" + stem + ".json"), rj);

            std::ostringstream os;
            os << "date,gross,net,turnover\n";
            for (std::size_t k = 0; k < rep.n_oos(); ++k)
                os << R.dates[static_cast<std::size_t>(rep.periods[k])] << ',' << io::format_double(rep.gross_returns[k])
                   << ',' << io::format_double(rep.net_returns[k]) << ',' << io::format_double(rep.turnovers[k]) << '\n';
            io::write_text(out / ("series_" + stem + ".csv"), os.str());
            manifest.record(out / ("series_" + stem + ".csv"));
            by_size[size].push_back(std::move(rep));
        }

    std::ostringstream os;
    os << "costs,J,metric";
    for (const auto& s : a.estimators)
        os << ',' << s;
    os << '\n';
    for (const char* costs : {"gross", "net"})
        for (long size : a.sizes)
        {
            const auto& reps = by_size[size];
            const bool net = std::string(costs) == "net";
            auto line = [&](const char* metric, auto get) {
                os << costs << ',' << size << ',' << metric;
                for (const auto& r : reps)
                    os << ',' << get(r);
                os << '\n';
            };
            line("SD", [&](const BacktestReport& r) { return io::format_double(net ? r.net.sd : r.gross.sd); });
            line("AV", [&](const BacktestReport& r) { return io::format_double(net ? r.net.av : r.gross.av); });
            line("SR", [&](const BacktestReport& r) { return csv_number(net ? r.net.sr : r.gross.sr); });
            if (!net)
                line("PT", [&](const BacktestReport& r) { return io::format_double(r.pt); });
        }
    io::write_text(out / "summary.csv", os.str());
    manifest.record(out / "summary.csv");
    manifest.finish();
    return kOk;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    try
    {
        args = expand_config(std::move(args));
    }
    catch (const Error& e)
    {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    }

    CLI::App app{"Deep-network factor model covariance estimation, simulation and GMVP backtesting", "dnnfm"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    std::string config_path;

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo designs: diagnostics, panels, optional method study");
    sim_cmd->add_option("--design", sim.design, "design 1, 2 or 3")->required()->check(CLI::Range(1, 3));
    sim_cmd->add_option("--n", sim.n, "time dimension")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--j", sim.J, "number of assets")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--d", sim.d, "number of factors")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--reps", sim.reps, "replications")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim.seed, "base seed");
    sim_cmd->add_option("--out", sim.out, "output directory");
    sim_cmd->add_flag("--with-methods", sim.with_methods, "also fit methods and write study.csv");
    sim_cmd->add_option("--methods", sim.methods, "methods for the study")->delimiter(',');
    sim_cmd->add_option("--threads", sim.threads, "worker threads (0 = auto)");
    sim_cmd->add_option("--config", config_path, "JSON config file");
    sim.train.add_to(*sim_cmd);

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit", "Fit a factor model and export the covariance bundle");
    fit_cmd->add_option("--returns", fit_args.returns, "returns CSV")->required();
    fit_cmd->add_option("--factors", fit_args.factors, "factors CSV")->required();
    fit_cmd->add_option("--model", fit_args.model, "dnn, sdnn or linear")
        ->check(CLI::IsMember({"dnn", "sdnn", "linear"}));
    fit_cmd->add_option("--out", fit_args.out, "output directory");
    fit_cmd->add_option("--seed", fit_args.seed, "base seed");
    fit_cmd->add_option("--threads", fit_args.threads, "worker threads (0 = auto)");
    fit_cmd->add_option("--config", config_path, "JSON config file");
    fit_args.train.add_to(*fit_cmd);

    BacktestArgs bt;
    auto* bt_cmd = app.add_subcommand("backtest", "Rolling-window GMVP backtest");
    bt_cmd->add_option("--returns", bt.returns, "returns CSV")->required();
    bt_cmd->add_option("--factors", bt.factors, "factors CSV");
    bt_cmd->add_option("--ranks", bt.ranks, "optional size/liquidity ranks CSV");
    bt_cmd->add_option("--estimators", bt.estimators, "dnn,sdnn,linear,sample,equal_weight")->delimiter(',');
    bt_cmd->add_option("--sizes", bt.sizes, "universe sizes")->delimiter(',');
    bt_cmd->add_option("--window", bt.window, "in-sample window length");
    bt_cmd->add_option("--tc-bps", bt.tc_bps, "proportional transaction cost in basis points")->check(CLI::NonNegativeNumber);
    bt_cmd->add_option("--periods-per-year", bt.periods_per_year, "annualization factor")->check(CLI::PositiveNumber);
    bt_cmd->add_option("--refit-every", bt.refit_every, "refit networks every k steps")->check(CLI::PositiveNumber);
    bt_cmd->add_option("--seed", bt.seed, "base seed");
    bt_cmd->add_option("--out", bt.out, "output directory");
    bt_cmd->add_option("--threads", bt.threads, "worker threads (0 = auto)");
    bt_cmd->add_option("--config", config_path, "JSON config file");
    bt.train.add_to(*bt_cmd);

    std::vector<std::string> argv_tail(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(argv_tail.begin(), argv_tail.end());
    try
    {
        app.parse(argv_tail);
    }
    catch (const CLI::Success& e)
    {
        app.exit(e, out, err);
        return kOk;
    }
    catch (const CLI::ParseError& e)
    {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kUsage;
    }

    try
    {
        if (sim_cmd->parsed())
            return run_simulate(sim);
        if (fit_cmd->parsed())
        {
            if (!fs::exists(fit_args.returns) || !fs::exists(fit_args.factors))
                fail(ErrorKind::io, "input file not found: " +
                                        (fs::exists(fit_args.returns) ? fit_args.factors : fit_args.returns));
            return run_fit(fit_args);
        }
        if (bt_cmd->parsed())
            return run_backtest(bt);
    }
    catch (const Error& e)
    {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    }
    catch (const std::exception& e)
    {
        err << "error: " << e.what() << '\n';
        return kNumeric;
    }
    return kUsage;
}

inline int run(int argc, char** argv)
{
    return run(std::vector<std::string>(argv, argv + argc));
}

}  // namespace dnnfm::cli
