#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"

namespace folio {

// Tolerance for "these weights still sum to one" checks at module borders.
inline constexpr double weight_sum_tolerance = 1e-12;

// Allocation over cash plus m risky assets; index 0 is always cash.
struct portfolio_vector {
    std::vector<double> w;

    portfolio_vector() = default;
    explicit portfolio_vector(std::vector<double> weights) : w(std::move(weights)) {}

    int assets() const { return static_cast<int>(w.size()) - 1; }
    int size() const { return static_cast<int>(w.size()); }
    double cash() const { return w[0]; }
    double operator[](int i) const { return w[i]; }

    static portfolio_vector uniform(int entries) {
        return portfolio_vector(std::vector<double>(entries, 1.0 / entries));
    }

    static portfolio_vector all_cash(int entries) {
        std::vector<double> w(entries, 0.0);
        w[0] = 1.0;
        return portfolio_vector(std::move(w));
    }

    void validate(double tol = weight_sum_tolerance) const {
        if (w.size() < 2) throw domain_error("portfolio_vector: need cash plus at least one asset");
        double sum = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw domain_error("portfolio_vector: negative or NaN weight");
            sum += x;
        }
        if (std::abs(sum - 1.0) > tol)
            throw domain_error("portfolio_vector: weights sum to " + std::to_string(sum) +
                               ", expected 1 within tolerance");
    }
};

// Proportional commission rates for selling and purchasing.  Rates must stay
// below 0.38, the bound under which the transaction-factor fixed point exists.
struct commission_schedule {
    double sell_rate = 0.0;
    double purchase_rate = 0.0;

    static commission_schedule flat(double c) { return {c, c}; }

    bool zero() const { return sell_rate == 0.0 && purchase_rate == 0.0; }

    void validate() const {
        if (!(sell_rate >= 0.0 && sell_rate < 0.38) ||
            !(purchase_rate >= 0.0 && purchase_rate < 0.38))
            throw domain_error("commission_schedule: rates must lie in [0, 0.38)");
    }
};

// How solve_mu decides it is done: a fixed number of map applications
// (training, so the unrolled graph has a static depth) or a step-size
// tolerance (backtests).
struct solve_mode {
    enum class kind { fixed_iterations, tolerance };
    kind how = kind::tolerance;
    int iterations = 0;
    double delta = 1e-10;

    static solve_mode fixed(int k) { return {kind::fixed_iterations, k, 0.0}; }
    static solve_mode tolerance(double delta) { return {kind::tolerance, 0, delta}; }
};

inline constexpr int mu_iteration_cap = 10000;

struct mu_solution {
    double mu = 1.0;
    int iterations = 0;
};

// Weights at period end after relative price moves y, before any trading:
// w' = (y .* w) / (y . w).  Entry 0 of y is cash and must be exactly 1.
inline portfolio_vector evolve_weights(const portfolio_vector& prev, const std::vector<double>& y) {
    prev.validate();
    if (y.size() != prev.w.size()) throw domain_error("evolve_weights: length mismatch");
    if (y[0] != 1.0) throw domain_error("evolve_weights: cash relative must be 1");
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > 0.0)) throw domain_error("evolve_weights: price relatives must be positive");
        dot += y[i] * prev.w[i];
    }
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] * prev.w[i] / dot;
    return portfolio_vector(std::move(out));
}

// One application of the transaction-factor map
//   f(mu) = [1 - cp*w'_0 - (cs + cp - cs*cp) * sum_i (w'_i - mu*w_i)^+]
//           / (1 - cp*w_0),
// whose fixed point is the fraction of portfolio value surviving the
// rebalance from drifted weights w' to target weights w.
inline double remainder_map(double mu, const portfolio_vector& target,
                            const portfolio_vector& evolved, commission_schedule fees) {
    fees.validate();
    if (target.w.size() != evolved.w.size()) throw domain_error("remainder_map: length mismatch");
    const double k = fees.sell_rate + fees.purchase_rate - fees.sell_rate * fees.purchase_rate;
    double sold = 0.0;
    for (std::size_t i = 1; i < target.w.size(); ++i)
        sold += std::max(evolved.w[i] - mu * target.w[i], 0.0);
    return (1.0 - fees.purchase_rate * evolved.w[0] - k * sold) /
           (1.0 - fees.purchase_rate * target.w[0]);
}

// Starting point for the fixed-point iteration: total non-cash turnover
// scaled by the commission rate, clamped into [0, 1].
inline double initial_guess(const portfolio_vector& target, const portfolio_vector& evolved,
                            double rate) {
    if (target.w.size() != evolved.w.size()) throw domain_error("initial_guess: length mismatch");
    double turnover = 0.0;
    for (std::size_t i = 1; i < target.w.size(); ++i)
        turnover += std::abs(evolved.w[i] - target.w[i]);
    return std::clamp(rate * turnover, 0.0, 1.0);
}

// Iterates the remainder map to its fixed point.  Convergence from any start
// in [0, 1] is guaranteed for valid fee rates; the iteration cap only guards
// against a misuse such as a tolerance of zero.
inline mu_solution solve_mu(const portfolio_vector& target, const portfolio_vector& evolved,
                            commission_schedule fees, solve_mode mode) {
    target.validate();
    evolved.validate();
    fees.validate();
    double mu = initial_guess(target, evolved, 0.5 * (fees.sell_rate + fees.purchase_rate));
    if (mode.how == solve_mode::kind::fixed_iterations) {
        if (mode.iterations < 1) throw domain_error("solve_mu: need at least one iteration");
        for (int i = 0; i < mode.iterations; ++i) mu = remainder_map(mu, target, evolved, fees);
        return {mu, mode.iterations};
    }
    if (!(mode.delta > 0.0)) throw domain_error("solve_mu: tolerance must be positive");
    for (int i = 1; i <= mu_iteration_cap; ++i) {
        const double next = remainder_map(mu, target, evolved, fees);
        const double step = std::abs(next - mu);
        mu = next;
        if (step < mode.delta) return {mu, i};
    }
    throw convergence_error("solve_mu: no convergence within " +
                            std::to_string(mu_iteration_cap) + " iterations (delta=" +
                            std::to_string(mode.delta) + ")");
}

// Rate of return of one period: mu * (y . w_prev) - 1.
inline double period_rate_of_return(const std::vector<double>& y, const portfolio_vector& prev,
                                    double mu) {
    if (y.size() != prev.w.size()) throw domain_error("period return: length mismatch");
    if (!(mu > 0.0 && mu <= 1.0)) throw domain_error("period return: mu outside (0, 1]");
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * prev.w[i];
    return mu * dot - 1.0;
}

// Logarithmic return of one period: ln(mu * (y . w_prev)).
inline double period_log_return(const std::vector<double>& y, const portfolio_vector& prev,
                                double mu) {
    const double growth = period_rate_of_return(y, prev, mu) + 1.0;
    if (!(growth > 0.0)) throw domain_error("period_log_return: ln argument not positive");
    return std::log(growth);
}

// Value path from an initial value and per-period log returns; element 0 is
// the initial value itself, so the result has one more entry than r.
inline std::vector<double> portfolio_value_path(double initial, const std::vector<double>& r) {
    if (!(initial > 0.0)) throw domain_error("portfolio_value_path: initial value must be positive");
    std::vector<double> path;
    path.reserve(r.size() + 1);
    path.push_back(initial);
    double acc = 0.0;
    for (double lr : r) {
        acc += lr;
        path.push_back(initial * std::exp(acc));
    }
    return path;
}

// Mean over population standard deviation of per-period rates of return
// (risk-free rate zero).  Undefined for fewer than two periods or a
// zero-variance series; callers render that as "n/a" rather than +-inf.
inline std::optional<double> sharpe_ratio(const std::vector<double>& rates) {
    const std::size_t n = rates.size();
    if (n < 2) return std::nullopt;
    double mean = 0.0;
    for (double r : rates) mean += r;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double r : rates) var += (r - mean) * (r - mean);
    var /= static_cast<double>(n);
    if (var == 0.0) return std::nullopt;
    return mean / std::sqrt(var);
}

// Largest peak-to-trough loss fraction over the value path, single pass.
inline double max_drawdown(const std::vector<double>& values) {
    if (values.empty()) throw domain_error("max_drawdown: empty value path");
    double peak = 0.0, worst = 0.0;
    for (double p : values) {
        if (!(p > 0.0)) throw domain_error("max_drawdown: values must be positive");
        peak = std::max(peak, p);
        worst = std::max(worst, (peak - p) / peak);
    }
    return worst;
}

// Final accumulated portfolio value: terminal over initial.
inline double fapv(const std::vector<double>& values) {
    if (values.empty()) throw domain_error("fapv: empty value path");
    if (!(values.front() > 0.0)) throw domain_error("fapv: initial value must be positive");
    return values.back() / values.front();
}

}  // namespace folio
