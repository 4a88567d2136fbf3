#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "folio/errors.hpp"
#include "folio/fetch.hpp"
#include "folio/marketdata.hpp"
#include "folio/rng.hpp"

namespace {

constexpr std::int64_t kPeriod = 1800;
constexpr std::int64_t kStart = 1000000000;  // multiple of nothing special

folio::candle_series make_series(const std::string& symbol, const std::vector<double>& closes,
                                 const std::vector<int>& missing_slots = {},
                                 double volume = 10.0) {
    folio::candle_series s;
    s.symbol = symbol;
    s.period_seconds = kPeriod;
    s.start_time = kStart;
    const int n = static_cast<int>(closes.size());
    s.candles.resize(n);
    s.missing.assign(n, false);
    for (int i = 0; i < n; ++i) {
        const double c = closes[i];
        s.candles[i] = {s.slot_time(i), c, c * 1.25, c * 0.75, volume};
    }
    for (int i : missing_slots) {
        s.missing[i] = true;
        s.candles[i] = {s.slot_time(i), 0, 0, 0, 0};
    }
    return s;
}

bool same_candles(const folio::candle_series& a, const folio::candle_series& b) {
    if (a.symbol != b.symbol || a.period_seconds != b.period_seconds ||
        a.start_time != b.start_time || a.slots() != b.slots())
        return false;
    for (int i = 0; i < a.slots(); ++i) {
        if (a.missing[i] != b.missing[i]) return false;
        if (a.missing[i]) continue;
        const auto& x = a.candles[i];
        const auto& y = b.candles[i];
        if (x.open_time != y.open_time || x.close != y.close || x.high != y.high ||
            x.low != y.low || x.volume != y.volume)
            return false;
    }
    return true;
}

std::filesystem::path fresh_dir(const std::string& tag) {
    auto rng = folio::seeded_engine(std::random_device{}(), 0);
    const auto p = std::filesystem::temp_directory_path() /
                   (tag + "_" + std::to_string(rng() >> 32));
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("gap filling carries the previous close and flattens the head") {
    auto s = make_series("AAA", {2.0, 4.0, 8.0, 16.0, 32.0}, {0, 2, 3});
    auto f = folio::fill_missing(s);
    REQUIRE(f.slots() == 5);
    for (int i = 0; i < f.slots(); ++i) REQUIRE_FALSE(f.missing[i]);
    // head gap sits at the first traded close
    CHECK(f.candles[0].close == 4.0);
    CHECK(f.candles[0].high == 4.0);
    CHECK(f.candles[0].low == 4.0);
    CHECK(f.candles[0].volume == 0.0);
    // interior gap carries the close before it
    CHECK(f.candles[2].close == 4.0);
    CHECK(f.candles[3].close == 4.0);
    CHECK(f.candles[3].volume == 0.0);
    // traded candles pass through untouched
    CHECK(f.candles[1].close == 4.0);
    CHECK(f.candles[4].close == 32.0);
    CHECK(f.candles[4].volume == 10.0);

    SECTION("idempotent") {
        auto g = folio::fill_missing(f);
        CHECK(same_candles(f, g));
    }
}

TEST_CASE("gap filling refuses a series with no trades") {
    auto s = make_series("AAA", {1.0, 1.0}, {0, 1});
    CHECK_THROWS_AS(folio::fill_missing(s), folio::data_error);
}

TEST_CASE("trailing gap carries forward") {
    auto s = make_series("AAA", {3.0, 5.0, 7.0}, {2});
    auto f = folio::fill_missing(s);
    CHECK(f.candles[2].close == 5.0);
    CHECK(f.candles[2].volume == 0.0);
}

TEST_CASE("asset preselection ranks by summed volume inside the window") {
    // 48 slots = one day of 1800s periods; observation window = 1 day ending
    // right after the last slot.
    const int n = 48;
    const std::int64_t as_of = kStart + n * kPeriod;
    std::vector<double> flat(n, 1.0);
    auto a = make_series("AAA", flat, {}, 5.0);   // 240 total
    auto b = make_series("BBB", flat, {}, 7.0);   // 336 total
    auto c = make_series("CCC", flat, {}, 1.0);   // 48 total
    auto d = make_series("DDD", flat, {}, 7.0);   // ties with BBB
    auto chosen = folio::preselect_assets({a, b, c, d}, 1, 3, as_of);
    REQUIRE(chosen.size() == 3);
    CHECK(chosen[0] == "BBB");  // tie with DDD breaks by symbol
    CHECK(chosen[1] == "DDD");
    CHECK(chosen[2] == "AAA");

    SECTION("volume outside the window does not count") {
        // EEE trades huge volume but only in the first half; a half-day
        // window sees none of it.
        std::vector<int> missing_late;
        for (int i = n / 2; i < n; ++i) missing_late.push_back(i);
        auto e = make_series("EEE", flat, missing_late, 1000.0);
        const std::int64_t half_day_cutoff = as_of;
        auto eve = folio::preselect_assets({a, e}, 1, 1, half_day_cutoff);
        // full-day window still sees EEE's early trades
        CHECK(eve[0] == "EEE");
        // shrink the data so the window misses EEE entirely: move as_of far out
        CHECK_THROWS_AS(folio::preselect_assets({e}, 1, 1, as_of + 2 * 86400),
                        folio::data_error);
    }

    SECTION("too few qualifying assets") {
        CHECK_THROWS_AS(folio::preselect_assets({a, b}, 1, 3, as_of), folio::data_error);
    }
}

TEST_CASE("price relatives divide elementwise with a unit cash entry") {
    auto y = folio::price_relative({1.0, 2.0, 4.0}, {1.0, 3.0, 2.0});
    REQUIRE(y.size() == 3);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 1.5);
    CHECK(y[2] == 0.5);
    CHECK_THROWS_AS(folio::price_relative({2.0, 2.0}, {1.0, 3.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::price_relative({1.0, 0.0}, {1.0, 3.0}), folio::domain_error);
    CHECK_THROWS_AS(folio::price_relative({1.0, 2.0}, {1.0}), folio::domain_error);
}

TEST_CASE("price tensor normalizes every feature by the latest close") {
    auto a = make_series("AAA", {1.0, 2.0, 4.0, 8.0});
    auto b = make_series("BBB", {10.0, 10.0, 20.0, 5.0});
    auto pt = folio::build_price_tensor({a, b}, 3, 3);
    REQUIRE(pt.x.shape == std::vector<int>({3, 2, 3}));
    CHECK(pt.assets == 2);
    CHECK(pt.window == 3);
    CHECK(pt.as_of == kStart + 3 * kPeriod);
    // close feature, asset 0: (2,4,8)/8
    CHECK(pt.x.at3(0, 0, 0) == 0.25);
    CHECK(pt.x.at3(0, 0, 1) == 0.5);
    CHECK(pt.x.at3(0, 0, 2) == 1.0);  // exactly, by construction
    // close feature, asset 1: (10,20,5)/5
    CHECK(pt.x.at3(0, 1, 0) == 2.0);
    CHECK(pt.x.at3(0, 1, 2) == 1.0);
    // high and low features use the same divisor
    CHECK(pt.x.at3(1, 0, 0) == Catch::Approx(2.0 * 1.25 / 8.0));
    CHECK(pt.x.at3(2, 1, 1) == Catch::Approx(20.0 * 0.75 / 5.0));
    for (double v : pt.x.v) CHECK(v > 0.0);
}

TEST_CASE("price tensor boundary and integrity errors") {
    auto a = make_series("AAA", {1.0, 2.0, 4.0, 8.0});
    SECTION("lookback beyond the data start names the earliest timestamp") {
        try {
            folio::build_price_tensor({a}, 2, 4);
            FAIL("expected data_error");
        } catch (const folio::data_error& e) {
            CHECK(std::string(e.what()).find(std::to_string(kStart)) != std::string::npos);
        }
    }
    SECTION("t beyond the series") {
        CHECK_THROWS_AS(folio::build_price_tensor({a}, 4, 2), folio::data_error);
    }
    SECTION("unfilled gap inside the window") {
        auto g = make_series("GGG", {1.0, 2.0, 4.0, 8.0}, {2});
        CHECK_THROWS_AS(folio::build_price_tensor({g}, 3, 3), folio::data_error);
    }
    SECTION("mismatched grid") {
        auto off = make_series("OFF", {1.0, 2.0, 4.0, 8.0});
        off.start_time += kPeriod;
        for (int i = 0; i < off.slots(); ++i) off.candles[i].open_time = off.slot_time(i);
        CHECK_THROWS_AS(folio::build_price_tensor({a, off}, 3, 2), folio::data_error);
    }
    SECTION("window too short") {
        CHECK_THROWS_AS(folio::build_price_tensor({a}, 3, 1), folio::domain_error);
    }
}

TEST_CASE("synthetic market is reproducible and well formed") {
    folio::synthetic_market_spec spec;
    spec.assets = {{"AAA", 0.001, 0.02, 3.0, 10.0}, {"BBB", -0.0005, 0.05, 1.0, 2.0}};
    auto m1 = folio::generate_synthetic_market(spec, 500, 42);
    auto m2 = folio::generate_synthetic_market(spec, 500, 42);
    auto m3 = folio::generate_synthetic_market(spec, 500, 43);
    REQUIRE(m1.size() == 2);
    CHECK(same_candles(m1[0], m2[0]));
    CHECK(same_candles(m1[1], m2[1]));
    CHECK_FALSE(same_candles(m1[0], m3[0]));
    for (const auto& s : m1) {
        s.validate();
        CHECK(s.slots() == 500);
        for (int i = 0; i < s.slots(); ++i) {
            const auto& c = s.candles[i];
            CHECK(c.low > 0.0);
            CHECK(c.low <= c.close);
            CHECK(c.close <= c.high);
            CHECK(c.high <= c.close * 1.5);  // spread clamp
        }
        CHECK(s.candles[0].close == (s.symbol == "AAA" ? 10.0 : 2.0));
        CHECK(s.candles[3].volume == (s.symbol == "AAA" ? 3.0 : 1.0));
    }

    SECTION("asset streams are independent of list position") {
        folio::synthetic_market_spec one;
        one.assets = {spec.assets[0]};
        auto solo = folio::generate_synthetic_market(one, 500, 42);
        CHECK(same_candles(solo[0], m1[0]));
    }
}

TEST_CASE("synthetic drift matches the requested log growth") {
    // 400 independent single-asset runs; mean terminal log return should sit
    // near drift * steps within a few standard errors.
    const double drift = 0.002, vol = 0.01;
    const int steps = 1000;
    const int runs = 400;
    double sum = 0.0;
    folio::synthetic_market_spec spec;
    spec.assets = {{"AAA", drift, vol, 1.0, 1.0}};
    for (int r = 0; r < runs; ++r) {
        auto m = folio::generate_synthetic_market(spec, steps, 9000 + r);
        sum += std::log(m[0].candles[steps - 1].close / m[0].candles[0].close);
    }
    const double mean = sum / runs;
    const double expected = drift * (steps - 1);
    const double stderr_mean = vol * std::sqrt(static_cast<double>(steps - 1)) / std::sqrt(runs);
    CHECK(std::abs(mean - expected) < 4.0 * stderr_mean);
}

TEST_CASE("candle csv round trips exactly") {
    auto dir = fresh_dir("folio_csv");
    auto a = make_series("AAA", {0.1, 1.0 / 3.0, 2.25, 7.0}, {2});
    auto b = make_series("BBB", {5.0, 6.0}, {});
    const std::string path = (dir / "candles.csv").string();
    folio::write_candles_csv(path, {a, b});
    auto back = folio::read_candles_csv(path, kPeriod);
    REQUIRE(back.size() == 2);
    CHECK(same_candles(back[0], a));
    CHECK(same_candles(back[1], b));

    SECTION("open column carries the previous close") {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        CHECK(line == "timestamp,asset,open,high,low,close,volume");
        const auto open_of = [](const std::string& row) {
            // field 2 (0-based) of timestamp,asset,open,...
            std::stringstream ss(row);
            std::string cell;
            for (int i = 0; i <= 2; ++i) std::getline(ss, cell, ',');
            return std::strtod(cell.c_str(), nullptr);
        };
        std::getline(in, line);  // first AAA row: open == its own close
        CHECK(open_of(line) == 0.1);
        std::getline(in, line);  // second row opens at the previous close
        CHECK(open_of(line) == 0.1);
        std::getline(in, line);  // slot 2 is a gap; next row is slot 3, opening at slot 1's close
        CHECK(open_of(line) == 1.0 / 3.0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("candle csv rejects malformed input") {
    auto dir = fresh_dir("folio_csv_bad");
    const auto write = [&](const std::string& name, const std::string& body) {
        const std::string p = (dir / name).string();
        std::ofstream out(p);
        out << body;
        return p;
    };
    const std::string head = "timestamp,asset,open,high,low,close,volume\n";
    CHECK_THROWS_AS(folio::read_candles_csv(write("h.csv", "nope\n1,2\n"), kPeriod),
                    folio::parse_error);
    CHECK_THROWS_AS(folio::read_candles_csv(write("f.csv", head + "1,AAA,1,1\n"), kPeriod),
                    folio::parse_error);
    CHECK_THROWS_AS(
        folio::read_candles_csv(write("n.csv", head + "10,AAA,1,2,0.5,abc,3\n"), kPeriod),
        folio::parse_error);
    CHECK_THROWS_AS(
        folio::read_candles_csv(
            write("g.csv", head + "1000,AAA,1,2,0.5,1,3\n1900,AAA,1,2,0.5,1,3\n"), kPeriod),
        folio::parse_error);
    CHECK_THROWS_AS(
        folio::read_candles_csv(
            write("d.csv", head + "1000,AAA,1,2,0.5,1,3\n1000,AAA,1,2,0.5,1,3\n"), kPeriod),
        folio::parse_error);
    const std::string missing_line = "file does not exist";
    CHECK_THROWS_AS(folio::read_candles_csv((dir / "absent.csv").string(), kPeriod),
                    folio::data_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv read restores gaps as missing slots") {
    auto dir = fresh_dir("folio_csv_gap");
    auto a = make_series("AAA", {1.0, 2.0, 3.0, 4.0, 5.0}, {1, 3});
    const std::string path = (dir / "gap.csv").string();
    folio::write_candles_csv(path, {a});
    auto back = folio::read_candles_csv(path, kPeriod);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].slots() == 5);
    CHECK(back[0].missing[1]);
    CHECK(back[0].missing[3]);
    CHECK_FALSE(back[0].missing[4]);
    CHECK(same_candles(back[0], a));
    std::filesystem::remove_all(dir);
}

TEST_CASE("clip regrids a series with missing padding") {
    auto a = make_series("AAA", {1.0, 2.0, 3.0});
    auto c = folio::clip_series(a, kStart - 2 * kPeriod, kStart + 5 * kPeriod);
    REQUIRE(c.slots() == 7);
    CHECK(c.missing[0]);
    CHECK(c.missing[1]);
    CHECK_FALSE(c.missing[2]);
    CHECK(c.candles[2].close == 1.0);
    CHECK(c.candles[4].close == 3.0);
    CHECK(c.missing[5]);
    CHECK(c.missing[6]);
    CHECK(c.start_time == kStart - 2 * kPeriod);

    SECTION("interior clip") {
        auto inner = folio::clip_series(a, kStart + kPeriod, kStart + 2 * kPeriod);
        REQUIRE(inner.slots() == 1);
        CHECK(inner.candles[0].close == 2.0);
    }
    SECTION("misaligned boundary") {
        CHECK_THROWS_AS(folio::clip_series(a, kStart + 7, kStart + kPeriod + 7),
                        folio::data_error);
    }
    SECTION("empty range") {
        CHECK_THROWS_AS(folio::clip_series(a, kStart, kStart), folio::data_error);
    }
}

TEST_CASE("market history stitches aligned filled series") {
    auto a = make_series("AAA", {1.0, 2.0, 4.0});
    auto b = make_series("BBB", {10.0, 5.0, 20.0});
    auto h = folio::market_history::from_series({a, b}, "CASH");
    CHECK(h.assets() == 2);
    CHECK(h.slots() == 3);
    auto y = h.relatives(1);
    REQUIRE(y.size() == 3);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 2.0);
    CHECK(y[2] == 0.5);
    auto pt = h.window(2, 2);
    CHECK(pt.x.at3(0, 0, 1) == 1.0);
    CHECK(h.slot_of(kStart + 2 * kPeriod) == 2);
    CHECK_THROWS_AS(h.slot_of(kStart + 1), folio::data_error);
    CHECK_THROWS_AS(h.relatives(0), folio::data_error);

    SECTION("rejects gaps, grid mismatch, cash collision") {
        auto gap = make_series("GGG", {1.0, 2.0, 3.0}, {1});
        CHECK_THROWS_AS(folio::market_history::from_series({a, gap}, "CASH"),
                        folio::data_error);
        auto shr = make_series("SSS", {1.0, 2.0});
        CHECK_THROWS_AS(folio::market_history::from_series({a, shr}, "CASH"),
                        folio::data_error);
        CHECK_THROWS_AS(folio::market_history::from_series({a, b}, "AAA"), folio::data_error);
    }
}

// ---- fetch over a local server ---------------------------------------------

namespace {

struct chart_server {
    httplib::Server svr;
    std::thread worker;
    int port = 0;
    std::atomic<int> hits{0};

    explicit chart_server(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
        svr.Get("/public", [this, fn = std::move(fn)](const httplib::Request& req,
                                                      httplib::Response& res) {
            ++hits;
            fn(req, res);
        });
        port = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        worker = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~chart_server() {
        svr.stop();
        worker.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

nlohmann::json chart_row(std::int64_t date, double close, double volume = 10.0) {
    return {{"date", date},        {"high", close * 1.25}, {"low", close * 0.75},
            {"open", close},       {"close", close},       {"volume", volume * 2},
            {"quoteVolume", volume}};
}

folio::fetch_config test_config(const chart_server& s, int retries = 2) {
    folio::fetch_config cfg;
    cfg.base_url = s.url();
    cfg.retries = retries;
    cfg.backoff_ms = 1;
    return cfg;
}

}  // namespace

TEST_CASE("fetch parses a chart-data response onto the requested grid") {
    std::string seen_query;
    chart_server server([&](const httplib::Request& req, httplib::Response& res) {
        seen_query = req.get_param_value("currencyPair") + "|" + req.get_param_value("start") +
                     "|" + req.get_param_value("end") + "|" + req.get_param_value("period");
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 0; i < 5; ++i) rows.push_back(chart_row(kStart + i * kPeriod, 1.0 + i));
        res.set_content(rows.dump(), "application/json");
    });
    auto s = folio::fetch_candles_remote(test_config(server), "BTC_AAA", kPeriod, kStart,
                                         kStart + 5 * kPeriod);
    CHECK(seen_query == "BTC_AAA|" + std::to_string(kStart) + "|" +
                            std::to_string(kStart + 5 * kPeriod) + "|" + std::to_string(kPeriod));
    REQUIRE(s.slots() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK_FALSE(s.missing[i]);
        CHECK(s.candles[i].close == 1.0 + i);
        CHECK(s.candles[i].volume == 10.0);  // quoteVolume, not volume
    }
}

TEST_CASE("fetch marks periods before a mid-range listing as missing") {
    chart_server server([&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 3; i < 6; ++i) rows.push_back(chart_row(kStart + i * kPeriod, 2.0));
        res.set_content(rows.dump(), "application/json");
    });
    auto s = folio::fetch_candles_remote(test_config(server), "BTC_NEW", kPeriod, kStart,
                                         kStart + 6 * kPeriod);
    REQUIRE(s.slots() == 6);
    CHECK(s.missing[0]);
    CHECK(s.missing[1]);
    CHECK(s.missing[2]);
    CHECK_FALSE(s.missing[3]);
    CHECK_FALSE(s.missing[5]);
}

TEST_CASE("fetch treats the empty-range placeholder row as no data") {
    chart_server server([&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json rows = nlohmann::json::array();
        rows.push_back({{"date", 0}, {"high", 0}, {"low", 0}, {"close", 0}, {"open", 0},
                        {"volume", 0}, {"quoteVolume", 0}});
        res.set_content(rows.dump(), "application/json");
    });
    auto s = folio::fetch_candles_remote(test_config(server), "BTC_GONE", kPeriod, kStart,
                                         kStart + 3 * kPeriod);
    REQUIRE(s.slots() == 3);
    CHECK(s.missing[0]);
    CHECK(s.missing[1]);
    CHECK(s.missing[2]);
}

TEST_CASE("fetch retries transient failures and then succeeds") {
    std::atomic<int> failures{2};
    chart_server server([&](const httplib::Request&, httplib::Response& res) {
        if (failures-- > 0) {
            res.status = 500;
            return;
        }
        nlohmann::json rows = nlohmann::json::array();
        rows.push_back(chart_row(kStart, 3.0));
        res.set_content(rows.dump(), "application/json");
    });
    auto cfg = test_config(server, 3);
    auto s = folio::fetch_candles_remote(cfg, "BTC_FLK", kPeriod, kStart, kStart + kPeriod);
    CHECK(server.hits == 3);
    REQUIRE_FALSE(s.missing[0]);
    CHECK(s.candles[0].close == 3.0);
}

TEST_CASE("fetch reports how many attempts failed") {
    chart_server server([&](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
    });
    try {
        folio::fetch_candles_remote(test_config(server, 2), "BTC_DWN", kPeriod, kStart,
                                    kStart + kPeriod);
        FAIL("expected network_error");
    } catch (const folio::network_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2 attempts") != std::string::npos);
        CHECK(msg.find("503") != std::string::npos);
    }
    CHECK(server.hits == 2);
}

TEST_CASE("fetch fails cleanly when nothing listens") {
    folio::fetch_config cfg;
    cfg.base_url = "http://127.0.0.1:9";  // discard port, nothing there
    cfg.retries = 1;
    cfg.backoff_ms = 1;
    CHECK_THROWS_AS(folio::fetch_candles_remote(cfg, "BTC_X", kPeriod, kStart, kStart + kPeriod),
                    folio::network_error);
}

TEST_CASE("fetch rejects malformed payloads without retrying them as network faults") {
    SECTION("row missing a field names it") {
        chart_server server([&](const httplib::Request&, httplib::Response& res) {
            auto row = chart_row(kStart, 1.0);
            row.erase("close");
            res.set_content(nlohmann::json::array({row}).dump(), "application/json");
        });
        try {
            folio::fetch_candles_remote(test_config(server), "BTC_M", kPeriod, kStart,
                                        kStart + kPeriod);
            FAIL("expected parse_error");
        } catch (const folio::parse_error& e) {
            CHECK(std::string(e.what()).find("close") != std::string::npos);
        }
        CHECK(server.hits == 1);
    }
    SECTION("non-numeric field") {
        chart_server server([&](const httplib::Request&, httplib::Response& res) {
            auto row = chart_row(kStart, 1.0);
            row["high"] = "not a price";
            res.set_content(nlohmann::json::array({row}).dump(), "application/json");
        });
        CHECK_THROWS_AS(folio::fetch_candles_remote(test_config(server), "BTC_M", kPeriod,
                                                    kStart, kStart + kPeriod),
                        folio::parse_error);
    }
    SECTION("numeric strings are accepted") {
        chart_server server([&](const httplib::Request&, httplib::Response& res) {
            auto row = chart_row(kStart, 1.0);
            row["close"] = "1.0";
            row["high"] = "1.25";
            res.set_content(nlohmann::json::array({row}).dump(), "application/json");
        });
        auto s = folio::fetch_candles_remote(test_config(server), "BTC_S", kPeriod, kStart,
                                             kStart + kPeriod);
        CHECK(s.candles[0].close == 1.0);
    }
    SECTION("not an array") {
        chart_server server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"error\":\"nope\"}", "application/json");
        });
        CHECK_THROWS_AS(folio::fetch_candles_remote(test_config(server), "BTC_M", kPeriod,
                                                    kStart, kStart + kPeriod),
                        folio::parse_error);
    }
    SECTION("off-grid timestamp") {
        chart_server server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content(nlohmann::json::array({chart_row(kStart + 7, 1.0)}).dump(),
                            "application/json");
        });
        CHECK_THROWS_AS(folio::fetch_candles_remote(test_config(server), "BTC_M", kPeriod,
                                                    kStart, kStart + kPeriod),
                        folio::parse_error);
    }
}

TEST_CASE("fetch cache serves repeat requests from disk") {
    auto dir = fresh_dir("folio_cache");
    chart_server server([&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json rows = nlohmann::json::array();
        for (int i = 1; i < 4; ++i) rows.push_back(chart_row(kStart + i * kPeriod, 1.0 + i));
        res.set_content(rows.dump(), "application/json");
    });
    auto cfg = test_config(server);
    cfg.cache_dir = dir.string();

    auto first = folio::fetch_candles(cfg, "BTC_C", kPeriod, kStart, kStart + 4 * kPeriod);
    CHECK(server.hits == 1);
    CHECK(first.missing[0]);  // listing starts one period in
    auto second = folio::fetch_candles(cfg, "BTC_C", kPeriod, kStart, kStart + 4 * kPeriod);
    CHECK(server.hits == 1);  // served from disk
    CHECK(same_candles(first, second));

    SECTION("a different range fetches again") {
        auto third = folio::fetch_candles(cfg, "BTC_C", kPeriod, kStart, kStart + 3 * kPeriod);
        CHECK(server.hits == 2);
        CHECK(third.slots() == 3);
    }
    SECTION("an all-gap answer is cached too") {
        chart_server empty([&](const httplib::Request&, httplib::Response& res) {
            res.set_content(nlohmann::json::array().dump(), "application/json");
        });
        auto cfg2 = test_config(empty);
        cfg2.cache_dir = dir.string();
        auto a = folio::fetch_candles(cfg2, "BTC_E", kPeriod, kStart, kStart + 2 * kPeriod);
        auto b = folio::fetch_candles(cfg2, "BTC_E", kPeriod, kStart, kStart + 2 * kPeriod);
        CHECK(empty.hits == 1);
        CHECK(a.missing[0]);
        CHECK(b.missing[1]);
        CHECK(same_candles(a, b));
    }
    std::filesystem::remove_all(dir);
}
