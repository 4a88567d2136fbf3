#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "accounting.hpp"
#include "eiie.hpp"
#include "errors.hpp"
#include "marketdata.hpp"
#include "training.hpp"

namespace folio {

// One executed decision: the portfolio chosen at period t, what rebalancing
// into it cost, and where that left the account.
struct ledger_row {
    int t = 0;
    double mu = 0.0;
    double log_return = 0.0;
    double rate_of_return = 0.0;
    double portfolio_value = 0.0;
    portfolio_vector weights;
};

struct run_result {
    std::string name;
    std::vector<ledger_row> rows;
    std::vector<double> value_path;  // one more entry than rows; [0] is the stake
    double fapv = 0.0;               // final value over initial value
    std::optional<double> sharpe;
    double max_drawdown = 0.0;
};

struct backtest_config {
    int start = 0;  // first decision period
    int end = 0;    // one past the last
    commission_schedule fees = commission_schedule::flat(0.0025);
    bool benchmark_fees = true;  // benchmarks trade at the same rates
    double mu_tolerance = 1e-10;
    bool online_learning = true;
    int rolling_steps = 30;
    double initial_value = 1.0;

    void validate(const market_history& hist, int window) const {
        if (start >= end) throw config_error("backtest: empty period range");
        if (start < std::max(1, window - 1))
            throw config_error("backtest: start period " + std::to_string(start) +
                               " has no room for a " + std::to_string(window) +
                               "-period window");
        if (end > hist.slots())
            throw config_error("backtest: range ends at " + std::to_string(end) +
                               ", history has " + std::to_string(hist.slots()) + " periods");
        if (!(initial_value > 0.0)) throw config_error("backtest: stake must be positive");
        if (!(mu_tolerance > 0.0)) throw config_error("backtest: mu tolerance must be positive");
        if (rolling_steps < 0) throw config_error("backtest: negative rolling steps");
        fees.validate();
    }
};

// Drives one portfolio rule through the shared accounting loop.  At each
// period the previous action drifts with prices, the rule picks the next
// target, and the transaction remainder prices the move.  The rule sees the
// period, the drifted weights, and the previous action.
using weight_rule =
    std::function<portfolio_vector(int t, const portfolio_vector& evolved,
                                   const portfolio_vector& prev)>;

inline run_result run_weight_rule(const market_history& hist, int start, int end,
                                  commission_schedule fees, double mu_tolerance,
                                  double initial_value, std::string name,
                                  const weight_rule& rule) {
    if (start < 1 || start >= end || end > hist.slots())
        throw config_error("weight rule run: bad period range");
    run_result out;
    out.name = std::move(name);
    out.rows.reserve(end - start);
    std::vector<double> log_returns;
    log_returns.reserve(end - start);
    portfolio_vector prev = portfolio_vector::all_cash(hist.assets() + 1);
    const auto mode = solve_mode::tolerance(mu_tolerance);
    for (int t = start; t < end; ++t) {
        const auto y = hist.relatives(t);
        const auto evolved = evolve_weights(prev, y);
        portfolio_vector target = rule(t, evolved, prev);
        target.validate();
        const double mu = solve_mu(target, evolved, fees, mode).mu;
        ledger_row row;
        row.t = t;
        row.mu = mu;
        row.rate_of_return = period_rate_of_return(y, prev, mu);
        row.log_return = period_log_return(y, prev, mu);
        row.weights = target;
        out.rows.push_back(std::move(row));
        log_returns.push_back(out.rows.back().log_return);
        prev = std::move(target);
    }
    out.value_path = portfolio_value_path(initial_value, log_returns);
    for (std::size_t i = 0; i < out.rows.size(); ++i)
        out.rows[i].portfolio_value = out.value_path[i + 1];
    out.fapv = fapv(out.value_path);
    out.sharpe = sharpe_ratio([&] {
        std::vector<double> rates;
        rates.reserve(out.rows.size());
        for (const auto& r : out.rows) rates.push_back(r.rate_of_return);
        return rates;
    }());
    out.max_drawdown = max_drawdown(out.value_path);
    return out;
}

// The learned policy walked over [start, end), optionally retraining on a
// rolling window as each period's data arrives.  The ledger keeps its own
// weight chain: what was actually executed stays fixed even though online
// steps keep rewriting the portfolio memory behind it.
inline run_result run_backtest(trainer& tr, const backtest_config& cfg) {
    const market_history& hist = tr.history();
    cfg.validate(hist, tr.topology().window);
    policy pol(tr.topology(), tr.params());
    run_result out;
    out.name = "policy";
    out.rows.reserve(cfg.end - cfg.start);
    std::vector<double> log_returns;
    portfolio_vector prev = portfolio_vector::all_cash(hist.assets() + 1);
    const auto mode = solve_mode::tolerance(cfg.mu_tolerance);
    for (int t = cfg.start; t < cfg.end; ++t) {
        if (cfg.online_learning && t - tr.config().batch_size >= tr.t_min())
            tr.online_update(t, cfg.rolling_steps);
        const auto y = hist.relatives(t);
        const auto evolved = evolve_weights(prev, y);
        portfolio_vector target = act(pol, hist.window(t, tr.topology().window), prev);
        const double mu = solve_mu(target, evolved, cfg.fees, mode).mu;
        ledger_row row;
        row.t = t;
        row.mu = mu;
        row.rate_of_return = period_rate_of_return(y, prev, mu);
        row.log_return = period_log_return(y, prev, mu);
        row.weights = target;
        out.rows.push_back(row);
        log_returns.push_back(row.log_return);
        tr.memory().write(t, target);  // the executed action becomes memory
        prev = std::move(target);
    }
    out.value_path = portfolio_value_path(cfg.initial_value, log_returns);
    for (std::size_t i = 0; i < out.rows.size(); ++i)
        out.rows[i].portfolio_value = out.value_path[i + 1];
    out.fapv = fapv(out.value_path);
    out.sharpe = sharpe_ratio([&] {
        std::vector<double> rates;
        rates.reserve(out.rows.size());
        for (const auto& r : out.rows) rates.push_back(r.rate_of_return);
        return rates;
    }());
    out.max_drawdown = max_drawdown(out.value_path);
    return out;
}

// ---- reference strategies ---------------------------------------------------

// Buy and hold an equal split over cash and every asset.
inline run_result run_uniform_hold(const market_history& hist, const backtest_config& cfg) {
    const auto fees = cfg.benchmark_fees ? cfg.fees : commission_schedule::flat(0.0);
    const int entries = hist.assets() + 1;
    return run_weight_rule(
        hist, cfg.start, cfg.end, fees, cfg.mu_tolerance, cfg.initial_value, "uniform hold",
        [&, entries](int t, const portfolio_vector& evolved, const portfolio_vector&) {
            return t == cfg.start ? portfolio_vector::uniform(entries) : evolved;
        });
}

// Rebalance back to the equal split every period.
inline run_result run_uniform_rebalance(const market_history& hist, const backtest_config& cfg) {
    const auto fees = cfg.benchmark_fees ? cfg.fees : commission_schedule::flat(0.0);
    const int entries = hist.assets() + 1;
    return run_weight_rule(hist, cfg.start, cfg.end, fees, cfg.mu_tolerance, cfg.initial_value,
                           "uniform rebalance",
                           [entries](int, const portfolio_vector&, const portfolio_vector&) {
                               return portfolio_vector::uniform(entries);
                           });
}

// Hold whichever single asset (or cash) grew most over the run, picked with
// hindsight; ties go to the alphabetically first symbol.
inline run_result run_best_single_asset(const market_history& hist, const backtest_config& cfg) {
    const auto fees = cfg.benchmark_fees ? cfg.fees : commission_schedule::flat(0.0);
    // positions open at the close of the first decision period
    int winner = 0;
    double best_growth = 1.0;  // cash
    std::string best_symbol = hist.cash_symbol;
    for (int i = 0; i < hist.assets(); ++i) {
        const double growth = hist.close(i, cfg.end - 1) / hist.close(i, cfg.start);
        const std::string& sym = hist.series[i].symbol;
        const bool better =
            growth > best_growth || (growth == best_growth && sym < best_symbol);
        if (better) {
            winner = i + 1;
            best_growth = growth;
            best_symbol = sym;
        }
    }
    std::vector<double> w(hist.assets() + 1, 0.0);
    w[winner] = 1.0;
    portfolio_vector pick(std::move(w));
    auto out = run_weight_rule(
        hist, cfg.start, cfg.end, fees, cfg.mu_tolerance, cfg.initial_value,
        "best asset (" + best_symbol + ")",
        [&pick, &cfg](int t, const portfolio_vector& evolved, const portfolio_vector&) {
            return t == cfg.start ? pick : evolved;
        });
    return out;
}

// ---- side-by-side metrics ---------------------------------------------------

struct strategy_metrics {
    std::string name;
    double fapv = 0.0;
    std::optional<double> sharpe;
    double max_drawdown = 0.0;
};

inline strategy_metrics metrics_of(const run_result& r) {
    return {r.name, r.fapv, r.sharpe, r.max_drawdown};
}

// Winners by column: growth and risk-adjusted growth want the largest value,
// drawdown the smallest.  Undefined Sharpe ratios sit the column out; the
// first listed strategy wins ties.
struct comparison {
    std::vector<strategy_metrics> rows;
    std::string best_fapv;
    std::string best_sharpe;  // empty when every row is undefined
    std::string best_drawdown;
};

inline comparison compare_strategies(std::vector<strategy_metrics> rows) {
    if (rows.empty()) throw domain_error("compare: nothing to compare");
    comparison out;
    const strategy_metrics* fapv_best = nullptr;
    const strategy_metrics* sharpe_best = nullptr;
    const strategy_metrics* dd_best = nullptr;
    for (const auto& r : rows) {
        if (!fapv_best || r.fapv > fapv_best->fapv) fapv_best = &r;
        if (r.sharpe && (!sharpe_best || *r.sharpe > *sharpe_best->sharpe)) sharpe_best = &r;
        if (!dd_best || r.max_drawdown < dd_best->max_drawdown) dd_best = &r;
    }
    out.best_fapv = fapv_best->name;
    out.best_sharpe = sharpe_best ? sharpe_best->name : "";
    out.best_drawdown = dd_best->name;
    out.rows = std::move(rows);
    return out;
}

}  // namespace folio
