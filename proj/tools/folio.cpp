// Command line front end: ingest market data, train a policy, run a
// backtest against the reference strategies, and verify written reports.
//
// Exit codes: 0 success, 1 bad configuration or usage, 2 data problems
// (files, payloads, network), 3 numeric failures.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "folio/accounting.hpp"
#include "folio/backtest.hpp"
#include "folio/eiie.hpp"
#include "folio/errors.hpp"
#include "folio/fetch.hpp"
#include "folio/marketdata.hpp"
#include "folio/report.hpp"
#include "folio/runconfig.hpp"
#include "folio/training.hpp"
#include "folio/version.hpp"

namespace fs = std::filesystem;
using namespace folio;

namespace {

std::string default_cache_dir() {
    const char* env = std::getenv("FOLIO_CACHE_DIR");
    return env ? std::string(env) : std::string("cache");
}

// Shared assembly with per-asset coverage lines; mirrors assemble_history but
// keeps the clipped series around so gaps can be reported and snapshots written.
market_history assemble_with_report(const run_config& cfg,
                                    const std::vector<candle_series>& universe,
                                    std::vector<candle_series>* keep_rows) {
    const auto chosen = preselect_assets(universe, cfg.volume_observation_days, cfg.asset_count,
                                         cfg.train_start);
    std::vector<candle_series> rows;
    rows.reserve(chosen.size());
    for (const auto& sym : chosen) {
        for (const auto& s : universe) {
            if (s.symbol != sym) continue;
            auto clipped = clip_series(s, grid_start_time(cfg), cfg.test_end);
            int gaps = 0;
            for (bool m : clipped.missing) gaps += m ? 1 : 0;
            std::cout << "  " << sym << ": " << clipped.slots() << " periods, " << gaps
                      << " gaps filled\n";
            rows.push_back(fill_missing(clipped));
            break;
        }
    }
    if (keep_rows) *keep_rows = rows;
    return market_history::from_series(std::move(rows), cfg.cash_symbol);
}

int run_ingest(const std::string& config_path, const std::string& cache_dir,
               const std::string& out_path) {
    run_config cfg = read_run_config(config_path);
    cfg.validate();
    std::vector<candle_series> universe;
    int failures = 0;
    if (cfg.data_source == run_config::source_kind::http) {
        fetch_config http = cfg.http;
        http.cache_dir = cache_dir;
        const auto range = http_fetch_range(cfg);
        for (const auto& pair : cfg.http_pairs) {
            try {
                universe.push_back(fetch_candles(http, pair, cfg.trading_period_seconds,
                                                 range.from, range.to));
                std::cout << "fetched " << pair << "\n";
            } catch (const data_error& e) {
                ++failures;
                std::cerr << "pair " << pair << ": " << e.what() << "\n";
            }
        }
        if (failures > 0) {
            std::cerr << failures << " of " << cfg.http_pairs.size()
                      << " pairs failed; cache keeps what succeeded\n";
            return 2;
        }
    } else {
        universe = load_universe(cfg, cache_dir);
    }
    std::cout << "selected assets:\n";
    std::vector<candle_series> rows;
    const market_history hist = assemble_with_report(cfg, universe, &rows);
    std::cout << hist.assets() << " assets + " << hist.cash_symbol << " over " << hist.slots()
              << " periods, fingerprint " << hex64(history_fingerprint(hist)) << "\n";
    if (!out_path.empty()) {
        write_candles_csv(out_path, rows);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int run_train(const std::string& config_path, const std::string& cache_dir,
              const std::string& out_path, const std::string& curve_path, bool resume) {
    run_config cfg = read_run_config(config_path);
    cfg.validate();
    const market_history hist = load_history(cfg, cache_dir);
    const period_range pr = resolve_periods(cfg, hist);
    trainer tr(hist, cfg.topology(), cfg.training(), init_parameters(cfg.topology(), cfg.seed));
    if (resume) tr.load(out_path);
    const std::int64_t before = tr.steps();

    std::ofstream curve;
    if (!curve_path.empty()) {
        curve.open(curve_path, std::ios::trunc);
        if (!curve) throw data_error("train: cannot open " + curve_path + " for writing");
        curve << "step,batch_start,reward,l2,objective\n";
    }
    step_stats last{};
    tr.pretrain(pr.train_last, cfg.total_steps, [&](const step_stats& s) {
        if (curve.is_open())
            curve << s.step << ',' << s.batch_start << ',' << detail::fmt(s.reward) << ','
                  << detail::fmt(s.l2) << ',' << detail::fmt(s.objective) << "\n";
        last = s;
        if (s.step % 1000 == 0)
            std::cerr << "step " << s.step << "/" << cfg.total_steps << "\n";
    });
    if (curve.is_open() && !curve) throw data_error("train: write failed for " + curve_path);

    tr.save(out_path);
    nlohmann::json artifacts;
    artifacts["checkpoint"] = out_path;
    if (!curve_path.empty()) artifacts["curve"] = curve_path;
    write_manifest_json(out_path + ".manifest.json", "train", cfg.raw_text, cfg.seed, hist,
                        artifacts);

    std::cout << hist.assets() << " assets + " << hist.cash_symbol << " over " << hist.slots()
              << " periods, training through period " << pr.train_last << "\n";
    std::cout << "steps: " << before << " -> " << tr.steps() << "\n";
    if (tr.steps() > before)
        std::cout << "final objective: " << detail::fmt(last.objective) << "\n";
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_backtest_cmd(const std::string& config_path, const std::string& cache_dir,
                     const std::string& in_path, const std::string& out_dir) {
    run_config cfg = read_run_config(config_path);
    cfg.validate();
    const market_history hist = load_history(cfg, cache_dir);
    const period_range pr = resolve_periods(cfg, hist);
    trainer tr(hist, cfg.topology(), cfg.training(), init_parameters(cfg.topology(), cfg.seed));
    tr.load(in_path);

    backtest_config bc;
    bc.start = pr.test_first;
    bc.end = pr.test_last_excl;
    bc.fees = commission_schedule::flat(cfg.commission_rate);
    bc.benchmark_fees = cfg.benchmark_fees;
    bc.mu_tolerance = cfg.mu_tolerance;
    bc.online_learning = cfg.online_learning;
    bc.rolling_steps = cfg.rolling_steps;
    bc.initial_value = cfg.initial_value;
    bc.validate(hist, cfg.window_size);

    const run_result pol = run_backtest(tr, bc);
    const run_result hold = run_uniform_hold(hist, bc);
    const run_result reb = run_uniform_rebalance(hist, bc);
    const run_result best = run_best_single_asset(hist, bc);

    fs::create_directories(out_dir);
    const auto at = [&out_dir](const char* name) { return (fs::path(out_dir) / name).string(); };
    write_ledger_csv(at("ledger.csv"), pol, hist);
    write_value_paths_csv(at("values.csv"), bc.start,
                          {{pol.name, pol.value_path},
                           {hold.name, hold.value_path},
                           {reb.name, reb.value_path},
                           {best.name, best.value_path}});
    nlohmann::json extra;
    extra["start_period"] = bc.start;
    extra["end_period"] = bc.end;
    extra["online_learning"] = cfg.online_learning;
    write_summary_json(at("summary.json"), pol, extra);
    const comparison cmp = compare_strategies(
        {metrics_of(pol), metrics_of(hold), metrics_of(reb), metrics_of(best)});
    write_comparison_csv(at("comparison.csv"), cmp);
    nlohmann::json artifacts;
    artifacts["checkpoint"] = in_path;
    artifacts["ledger"] = at("ledger.csv");
    artifacts["values"] = at("values.csv");
    artifacts["summary"] = at("summary.json");
    artifacts["comparison"] = at("comparison.csv");
    write_manifest_json(at("manifest.json"), "backtest", cfg.raw_text, cfg.seed, hist, artifacts);

    std::cout << format_comparison_table(cmp);
    std::cout << "wrote " << out_dir << "\n";
    return 0;
}

// ---- report: re-derive metrics from the ledger and check the summary --------

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double csv_number(const std::string& cell, int line_no, const std::string& file) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
        throw parse_error(file + " line " + std::to_string(line_no) + ": '" + cell +
                          "' is not a number");
    return v;
}

struct ledger_data {
    std::vector<double> mu, log_return, rate, value;
    std::vector<std::vector<double>> weights;
};

ledger_data read_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("report: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ": empty file");
    const auto header = split_csv(line);
    if (header.size() < 8 || header[0] != "t" || header[2] != "mu")
        throw parse_error(path + ": unexpected ledger header");
    const std::size_t cols = header.size();
    ledger_data out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != cols)
            throw parse_error(path + " line " + std::to_string(line_no) + ": expected " +
                              std::to_string(cols) + " fields, got " + std::to_string(f.size()));
        out.mu.push_back(csv_number(f[2], line_no, path));
        out.log_return.push_back(csv_number(f[3], line_no, path));
        out.rate.push_back(csv_number(f[4], line_no, path));
        out.value.push_back(csv_number(f[5], line_no, path));
        std::vector<double> w;
        for (std::size_t i = 6; i < cols; ++i) w.push_back(csv_number(f[i], line_no, path));
        out.weights.push_back(std::move(w));
    }
    if (out.mu.empty()) throw parse_error(path + ": no ledger rows");
    return out;
}

std::vector<strategy_metrics> read_comparison(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("report: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "strategy,fapv,sharpe,max_drawdown")
        throw parse_error(path + ": unexpected comparison header");
    std::vector<strategy_metrics> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 4)
            throw parse_error(path + " line " + std::to_string(line_no) +
                              ": expected 4 fields");
        strategy_metrics m;
        m.name = f[0];
        m.fapv = csv_number(f[1], line_no, path);
        if (f[2] != "n/a") m.sharpe = csv_number(f[2], line_no, path);
        m.max_drawdown = csv_number(f[3], line_no, path);
        rows.push_back(std::move(m));
    }
    if (rows.empty()) throw parse_error(path + ": no comparison rows");
    return rows;
}

void check(bool ok, const std::string& what) {
    if (!ok) throw data_error("report: " + what);
}

bool close_to(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

int run_report(const std::string& out_dir) {
    const auto at = [&out_dir](const char* name) { return (fs::path(out_dir) / name).string(); };
    std::ifstream sin(at("summary.json"));
    if (!sin) throw data_error("report: cannot open " + at("summary.json"));
    nlohmann::json summary;
    try {
        sin >> summary;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(at("summary.json") + ": " + e.what());
    }
    const ledger_data led = read_ledger(at("ledger.csv"));
    const double tol = 1e-9;

    // internal consistency of the trade log
    for (std::size_t i = 0; i < led.mu.size(); ++i) {
        const std::string row = "ledger row " + std::to_string(i + 1);
        check(led.mu[i] > 0.0 && led.mu[i] <= 1.0 + 1e-9, row + ": mu outside (0, 1]");
        check(close_to(led.rate[i], std::expm1(led.log_return[i]), tol),
              row + ": rate and log return disagree");
        double sum = 0.0;
        for (double w : led.weights[i]) {
            check(w >= -1e-12, row + ": negative weight");
            sum += w;
        }
        check(std::abs(sum - 1.0) <= 1e-9, row + ": weights do not sum to 1");
    }

    // the value path follows from the log returns and the stake
    const double initial = summary.value("initial_value", 0.0);
    check(initial > 0.0, "summary has no positive initial_value");
    std::vector<double> path{initial};
    for (std::size_t i = 0; i < led.mu.size(); ++i) {
        path.push_back(path.back() * std::exp(led.log_return[i]));
        check(close_to(path.back(), led.value[i], tol),
              "ledger row " + std::to_string(i + 1) + ": portfolio value drifts from returns");
    }

    // headline numbers match a recomputation
    check(summary.value("periods", std::size_t{0}) == led.mu.size(),
          "summary period count disagrees with the ledger");
    check(close_to(summary.value("final_value", 0.0), path.back(), tol),
          "summary final_value disagrees with the ledger");
    check(close_to(summary.value("fapv", 0.0), path.back() / initial, tol),
          "summary fapv disagrees with the ledger");
    check(close_to(summary.value("max_drawdown", -1.0), max_drawdown(path), tol),
          "summary max_drawdown disagrees with the ledger");
    const auto sharpe = sharpe_ratio(led.rate);
    if (summary.contains("sharpe") && !summary["sharpe"].is_null()) {
        check(sharpe.has_value() && close_to(summary["sharpe"].get<double>(), *sharpe, tol),
              "summary sharpe disagrees with the ledger");
    } else {
        check(!sharpe.has_value(), "summary sharpe is null but the ledger defines one");
    }

    // the comparison row for this strategy carries the same numbers
    const auto rows = read_comparison(at("comparison.csv"));
    const std::string name = summary.value("strategy", "");
    bool found = false;
    for (const auto& m : rows) {
        if (m.name != name) continue;
        found = true;
        check(close_to(m.fapv, path.back() / initial, tol),
              "comparison fapv disagrees with the ledger");
        check(close_to(m.max_drawdown, max_drawdown(path), tol),
              "comparison max_drawdown disagrees with the ledger");
    }
    check(found, "comparison.csv has no row for strategy '" + name + "'");

    std::cout << "ledger verified: " << led.mu.size() << " periods, fapv "
              << detail::fmt(path.back() / initial) << ", max drawdown "
              << detail::fmt(max_drawdown(path)) << ", sharpe "
              << (sharpe ? detail::fmt(*sharpe) : std::string("n/a")) << "\n";
    std::cout << format_comparison_table(compare_strategies(rows));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"portfolio policy training and backtesting"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string);

    std::string config_path, cache_dir = default_cache_dir();
    std::string out_path, curve_path, checkpoint_path, out_dir;
    bool resume = false;

    auto* ingest = app.add_subcommand("ingest", "fetch and cache the configured universe");
    ingest->add_option("-c,--config", config_path, "run configuration file")->required();
    ingest->add_option("--cache-dir", cache_dir, "candle cache directory");
    ingest->add_option("--out", out_path, "write the aligned universe as candle CSV");

    auto* train = app.add_subcommand("train", "train a policy and write a checkpoint");
    train->add_option("-c,--config", config_path, "run configuration file")->required();
    train->add_option("-o,--output", out_path, "checkpoint file to write")->required();
    train->add_option("--curve", curve_path, "per-step training curve CSV");
    train->add_option("--cache-dir", cache_dir, "candle cache directory");
    train->add_flag("--resume", resume, "continue from the checkpoint at the output path");

    auto* backtest = app.add_subcommand("backtest", "run a checkpoint over the test range");
    backtest->add_option("-c,--config", config_path, "run configuration file")->required();
    backtest->add_option("-i,--input", checkpoint_path, "checkpoint file to load")->required();
    backtest->add_option("-d,--out-dir", out_dir, "directory for reports")->required();
    backtest->add_option("--cache-dir", cache_dir, "candle cache directory");

    auto* report = app.add_subcommand("report", "verify and re-render a backtest directory");
    report->add_option("-d,--out-dir", out_dir, "backtest report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(ingest)) return run_ingest(config_path, cache_dir, out_path);
        if (app.got_subcommand(train))
            return run_train(config_path, cache_dir, out_path, curve_path, resume);
        if (app.got_subcommand(backtest))
            return run_backtest_cmd(config_path, cache_dir, checkpoint_path, out_dir);
        if (app.got_subcommand(report)) return run_report(out_dir);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const convergence_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
