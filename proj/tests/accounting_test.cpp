#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "folio/accounting.hpp"
#include "folio/rng.hpp"
#include "support/oracles.hpp"

using folio::commission_schedule;
using folio::portfolio_vector;
using folio::solve_mode;

namespace {

portfolio_vector random_portfolio(std::mt19937_64& rng, int entries, bool allow_zeros = true) {
    std::vector<double> w(entries);
    for (auto& x : w) x = -std::log(folio::uniform01_open(rng));
    if (allow_zeros) {
        for (auto& x : w)
            if (folio::uniform01(rng) < 0.25) x = 0.0;
    }
    double sum = 0.0;
    for (double x : w) sum += x;
    if (sum == 0.0) {
        w[0] = 1.0;
        sum = 1.0;
    }
    for (auto& x : w) x /= sum;
    return portfolio_vector(std::move(w));
}

std::vector<double> random_relatives(std::mt19937_64& rng, int entries) {
    std::vector<double> y(entries);
    y[0] = 1.0;
    for (int i = 1; i < entries; ++i) y[i] = std::exp(0.1 * folio::standard_normal(rng));
    return y;
}

}  // namespace

TEST_CASE("evolve_weights matches the worked example") {
    const auto out = folio::evolve_weights(portfolio_vector({0.5, 0.25, 0.25}), {1.0, 2.0, 1.0});
    REQUIRE(out.w.size() == 3);
    CHECK(out[0] == Catch::Approx(0.4).margin(1e-15));
    CHECK(out[1] == Catch::Approx(0.4).margin(1e-15));
    CHECK(out[2] == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("evolve_weights is identity on flat markets and basis vectors") {
    const portfolio_vector w({0.3, 0.3, 0.4});
    const auto flat = folio::evolve_weights(w, {1.0, 1.0, 1.0});
    for (int i = 0; i < 3; ++i) CHECK(flat[i] == w[i]);

    // A single-asset portfolio cannot drift, whatever prices do.
    const portfolio_vector basis({0.0, 1.0, 0.0});
    const auto moved = folio::evolve_weights(basis, {1.0, 3.7, 0.2});
    CHECK(moved[0] == 0.0);
    CHECK(moved[1] == 1.0);
    CHECK(moved[2] == 0.0);
}

TEST_CASE("evolve_weights output stays on the simplex") {
    auto rng = folio::seeded_engine(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int entries = 2 + static_cast<int>(rng() % 12);
        const auto w = random_portfolio(rng, entries);
        const auto y = random_relatives(rng, entries);
        const auto out = folio::evolve_weights(w, y);
        double sum = 0.0;
        for (int i = 0; i < entries; ++i) {
            CHECK(out[i] >= 0.0);
            sum += out[i];
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("evolve_weights rejects bad input") {
    const portfolio_vector w({0.5, 0.5});
    CHECK_THROWS_AS(folio::evolve_weights(w, {1.0, 0.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::evolve_weights(w, {1.0, -2.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::evolve_weights(w, {0.99, 1.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::evolve_weights(w, {1.0, 1.0, 1.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::evolve_weights(portfolio_vector({0.5, 0.6}), {1.0, 1.0}),
                    folio::domain_error);
}

TEST_CASE("remainder_map matches the hand-computed point") {
    // mu = 0, both vectors (0, 0.5, 0.5), flat 25 bps:
    // (1 - 0 - 0.00499375 * 1) / 1 = 0.99500625.
    const portfolio_vector w({0.0, 0.5, 0.5});
    const double out = folio::remainder_map(0.0, w, w, commission_schedule::flat(0.0025));
    CHECK(out == Catch::Approx(0.99500625).margin(1e-15));
}

TEST_CASE("remainder_map is 1 at mu=1 with equal vectors, and constant 1 without fees") {
    const portfolio_vector w({0.1, 0.4, 0.5});
    CHECK(folio::remainder_map(1.0, w, w, commission_schedule::flat(0.0025)) == 1.0);
    auto rng = folio::seeded_engine(7);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_portfolio(rng, 4);
        const auto b = random_portfolio(rng, 4);
        CHECK(folio::remainder_map(folio::uniform01(rng), a, b, {}) == 1.0);
    }
}

TEST_CASE("remainder_map is monotone increasing with f(0) > 0 and f(1) <= 1") {
    auto rng = folio::seeded_engine(11);
    for (int trial = 0; trial < 300; ++trial) {
        const int entries = 2 + static_cast<int>(rng() % 10);
        const auto target = random_portfolio(rng, entries);
        const auto evolved = random_portfolio(rng, entries);
        const commission_schedule fees{0.37 * folio::uniform01(rng), 0.37 * folio::uniform01(rng)};
        const double lo = folio::uniform01(rng);
        const double hi = lo + (1.0 - lo) * folio::uniform01(rng);
        CHECK(folio::remainder_map(lo, target, evolved, fees) <=
              folio::remainder_map(hi, target, evolved, fees) + 1e-15);
        CHECK(folio::remainder_map(0.0, target, evolved, fees) > 0.0);
        CHECK(folio::remainder_map(1.0, target, evolved, fees) <= 1.0 + 1e-15);
    }
}

TEST_CASE("fixed-point iterates approach mu* monotonically from both ends") {
    auto rng = folio::seeded_engine(13);
    for (int trial = 0; trial < 100; ++trial) {
        const auto target = random_portfolio(rng, 5);
        const auto evolved = random_portfolio(rng, 5);
        const commission_schedule fees{0.3 * folio::uniform01(rng), 0.3 * folio::uniform01(rng)};
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 30; ++i) {
            const double next_lo = folio::remainder_map(lo, target, evolved, fees);
            const double next_hi = folio::remainder_map(hi, target, evolved, fees);
            CHECK(next_lo >= lo - 1e-15);
            CHECK(next_hi <= hi + 1e-15);
            lo = next_lo;
            hi = next_hi;
        }
        CHECK(lo <= hi + 1e-12);
    }
}

TEST_CASE("initial_guess scales non-cash turnover") {
    const double g = folio::initial_guess(portfolio_vector({0.6, 0.2, 0.2}),
                                          portfolio_vector({0.2, 0.5, 0.3}), 0.0025);
    CHECK(g == Catch::Approx(0.001).margin(1e-16));
    CHECK(folio::initial_guess(portfolio_vector({1.0, 0.0}), portfolio_vector({1.0, 0.0}), 0.3) ==
          0.0);
}

TEST_CASE("solve_mu agrees with the bisection oracle") {
    // Worked instance; the fixed point solves a linear equation here, and the
    // frozen value below is that exact solution 0.995505 / 0.9965025.
    const portfolio_vector target({0.6, 0.2, 0.2});
    const portfolio_vector evolved({0.2, 0.5, 0.3});
    const auto fees = commission_schedule::flat(0.0025);

    const auto tol = folio::solve_mu(target, evolved, fees, solve_mode::tolerance(1e-12));
    CHECK(tol.mu == Catch::Approx(0.998998997808).margin(1e-10));
    CHECK(tol.mu == Catch::Approx(oracle::mu_bisect(target.w, evolved.w, 0.0025, 0.0025))
                        .margin(1e-10));
    CHECK(tol.iterations >= 1);

    const auto fixed = folio::solve_mu(target, evolved, fees, solve_mode::fixed(10));
    CHECK(fixed.iterations == 10);
    CHECK(fixed.mu == Catch::Approx(tol.mu).margin(1e-6));

    auto rng = folio::seeded_engine(17);
    for (int trial = 0; trial < 200; ++trial) {
        const int entries = 2 + static_cast<int>(rng() % 11);
        const auto t = random_portfolio(rng, entries);
        const auto e = random_portfolio(rng, entries);
        const commission_schedule f{0.3 * folio::uniform01(rng), 0.3 * folio::uniform01(rng)};
        const double expected = oracle::mu_bisect(t.w, e.w, f.sell_rate, f.purchase_rate);
        const auto got = folio::solve_mu(t, e, f, solve_mode::tolerance(1e-12));
        CHECK(got.mu == Catch::Approx(expected).margin(1e-10));
        CHECK(got.mu > 0.0);
        CHECK(got.mu <= 1.0);
    }
}

TEST_CASE("solve_mu degenerate cases") {
    const portfolio_vector w({0.25, 0.25, 0.5});
    const auto zero_fee = folio::solve_mu(w, portfolio_vector({0.1, 0.6, 0.3}), {},
                                          solve_mode::tolerance(1e-12));
    CHECK(zero_fee.mu == 1.0);

    // No turnover: the factor is 1 up to the tolerance of the final step.
    const auto hold = folio::solve_mu(w, w, commission_schedule::flat(0.0025),
                                      solve_mode::tolerance(1e-12));
    CHECK(std::abs(hold.mu - 1.0) < 1e-14);

    CHECK_THROWS_AS(folio::solve_mu(w, w, commission_schedule::flat(0.5), solve_mode::fixed(5)),
                    folio::domain_error);
    CHECK_THROWS_AS(folio::solve_mu(w, w, {}, solve_mode::fixed(0)), folio::domain_error);
    CHECK_THROWS_AS(folio::solve_mu(w, w, {}, solve_mode::tolerance(0.0)), folio::domain_error);
}

TEST_CASE("solved mu balances the selling and purchasing cash flows") {
    auto rng = folio::seeded_engine(19);
    for (int trial = 0; trial < 200; ++trial) {
        const int entries = 2 + static_cast<int>(rng() % 9);
        const auto t = random_portfolio(rng, entries);
        const auto e = random_portfolio(rng, entries);
        const commission_schedule f{0.3 * folio::uniform01(rng), 0.3 * folio::uniform01(rng)};
        const auto got = folio::solve_mu(t, e, f, solve_mode::tolerance(1e-13));
        CHECK(std::abs(oracle::cash_flow_residual(t.w, e.w, f.sell_rate, f.purchase_rate,
                                                  got.mu)) < 1e-12);
    }
}

TEST_CASE("period returns") {
    const portfolio_vector w({0.0, 1.0, 0.0});
    const std::vector<double> y{1.0, 2.0, 1.0};
    CHECK(folio::period_rate_of_return(y, w, 0.9975) == Catch::Approx(0.995).margin(1e-15));
    CHECK(folio::period_log_return(y, w, 0.9975) ==
          Catch::Approx(std::log(1.995)).margin(1e-15));

    // Flat market, no trading cost: exactly zero.
    CHECK(folio::period_log_return({1.0, 1.0}, portfolio_vector({0.5, 0.5}), 1.0) == 0.0);

    CHECK_THROWS_AS(folio::period_log_return(y, w, 0.0), folio::domain_error);
    CHECK_THROWS_AS(folio::period_log_return(y, w, 1.5), folio::domain_error);
    CHECK_THROWS_AS(folio::period_log_return({1.0}, w, 1.0), folio::domain_error);
}

TEST_CASE("portfolio_value_path accumulates log returns") {
    CHECK(folio::portfolio_value_path(1.0, {}) == std::vector<double>{1.0});

    const auto path = folio::portfolio_value_path(1.0, {std::log(2.0), std::log(2.0)});
    REQUIRE(path.size() == 3);
    CHECK(path[0] == 1.0);
    CHECK(path[1] == Catch::Approx(2.0).margin(1e-12));
    CHECK(path[2] == Catch::Approx(4.0).margin(1e-12));

    // Exp-of-sum must match the direct running product.
    auto rng = folio::seeded_engine(23);
    std::vector<double> r(1000);
    for (auto& x : r) x = 0.05 * folio::standard_normal(rng);
    const auto long_path = folio::portfolio_value_path(2.5, r);
    double product = 2.5;
    for (std::size_t i = 0; i < r.size(); ++i) {
        product *= std::exp(r[i]);
        CHECK(long_path[i + 1] == Catch::Approx(product).epsilon(1e-9));
    }

    CHECK_THROWS_AS(folio::portfolio_value_path(0.0, {}), folio::domain_error);
}

TEST_CASE("sharpe_ratio: frozen value, oracle agreement, undefined cases") {
    const auto sr = folio::sharpe_ratio({0.01, 0.02, 0.03});
    REQUIRE(sr.has_value());
    // mean 0.02 over population stdev 0.01*sqrt(2/3) = sqrt(6).
    CHECK(*sr == Catch::Approx(2.449489742783178).margin(1e-12));

    CHECK_FALSE(folio::sharpe_ratio({}).has_value());
    CHECK_FALSE(folio::sharpe_ratio({0.01}).has_value());
    CHECK_FALSE(folio::sharpe_ratio({0.02, 0.02, 0.02}).has_value());

    auto rng = folio::seeded_engine(29);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> rates(3 + rng() % 200);
        for (auto& x : rates) x = 0.01 * folio::standard_normal(rng);
        const auto mine = folio::sharpe_ratio(rates);
        const auto ref = oracle::sharpe_two_pass(rates);
        REQUIRE(mine.has_value() == ref.has_value());
        if (mine) CHECK(*mine == Catch::Approx(*ref).margin(1e-12));
    }
}

TEST_CASE("max_drawdown: frozen value and exhaustive oracle") {
    CHECK(folio::max_drawdown({1.0, 1.1, 1.2, 1.3}) == 0.0);
    CHECK(folio::max_drawdown({5.0}) == 0.0);
    CHECK(folio::max_drawdown({1.0, 1.2, 0.8, 1.5, 0.9}) == Catch::Approx(0.4).margin(1e-15));

    auto rng = folio::seeded_engine(31);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> path(2 + rng() % 499);
        double v = 1.0;
        for (auto& x : path) {
            v *= std::exp(0.03 * folio::standard_normal(rng));
            x = v;
        }
        CHECK(folio::max_drawdown(path) ==
              Catch::Approx(oracle::mdd_exhaustive(path)).margin(1e-12));
    }

    CHECK_THROWS_AS(folio::max_drawdown({}), folio::domain_error);
    CHECK_THROWS_AS(folio::max_drawdown({1.0, -1.0}), folio::domain_error);
}

TEST_CASE("fapv is terminal over initial") {
    CHECK(folio::fapv({2.0, 1.0, 8.0}) == 4.0);
    CHECK(folio::fapv({3.0}) == 1.0);
    CHECK_THROWS_AS(folio::fapv({}), folio::domain_error);
}

TEST_CASE("portfolio_vector validation") {
    CHECK_THROWS_AS(portfolio_vector({1.0}).validate(), folio::domain_error);
    CHECK_THROWS_AS(portfolio_vector({0.5, 0.6}).validate(), folio::domain_error);
    CHECK_THROWS_AS(portfolio_vector({-0.1, 1.1}).validate(), folio::domain_error);
    CHECK_NOTHROW(portfolio_vector::uniform(12).validate());
    CHECK_NOTHROW(portfolio_vector::all_cash(3).validate());
    CHECK(portfolio_vector::uniform(12)[0] == Catch::Approx(1.0 / 12).margin(1e-16));
}
