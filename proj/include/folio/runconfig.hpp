#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "backtest.hpp"
#include "eiie.hpp"
#include "errors.hpp"
#include "fetch.hpp"
#include "marketdata.hpp"
#include "training.hpp"

namespace folio {

// Flat key = value configuration, '#' comments.  One file describes the
// experiment end to end: data source, universe, topology, training and
// backtest settings.
struct run_config {
    policy_kind policy = policy_kind::cnn;
    int asset_count = 11;
    int window_size = 50;
    int batch_size = 50;
    std::int64_t total_steps = 20000;
    double learning_rate = 3e-5;
    double regularization_coefficient = 1e-8;
    double sample_bias = 5e-5;
    double commission_rate = 0.0025;
    int rolling_steps = 30;
    int mu_iterations = 10;
    double mu_tolerance = 1e-10;
    int volume_observation_days = 30;
    std::int64_t trading_period_seconds = 1800;
    std::uint64_t seed = 1;
    bool online_learning = true;
    bool benchmark_fees = true;
    double initial_value = 1.0;
    std::string cash_symbol = "BTC";

    int conv1_maps = 2;
    int conv1_width = 3;
    int conv2_maps = 20;
    int hidden_units = 20;

    enum class source_kind { synthetic, csv, http };
    source_kind data_source = source_kind::synthetic;
    std::vector<synthetic_asset> synthetic_assets;
    std::int64_t synthetic_start_time = -1;  // default: derived from train.start
    std::string csv_path;
    fetch_config http;
    std::vector<std::string> http_pairs;

    std::int64_t train_start = 0;
    std::int64_t train_end = 0;
    std::int64_t test_start = 0;
    std::int64_t test_end = 0;

    std::string raw_text;  // the file verbatim, for the manifest

    policy_topology topology() const {
        policy_topology t;
        t.kind = policy;
        t.assets = asset_count;
        t.window = window_size;
        t.conv1_maps = conv1_maps;
        t.conv1_width = conv1_width;
        t.conv2_maps = conv2_maps;
        t.hidden = hidden_units;
        return t;
    }

    trainer_config training() const {
        trainer_config c;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.l2_coefficient = regularization_coefficient;
        c.sample_bias = sample_bias;
        c.fees = commission_schedule::flat(commission_rate);
        c.mu_iterations = mu_iterations;
        c.seed = seed;
        return c;
    }

    void validate() const {
        topology().validate();
        training().validate();
        if (total_steps < 1) throw config_error("config: total_steps must be positive");
        if (trading_period_seconds < 1)
            throw config_error("config: trading_period_seconds must be positive");
        if (volume_observation_days < 1)
            throw config_error("config: volume_observation_days must be positive");
        if (rolling_steps < 0) throw config_error("config: rolling_steps must be non-negative");
        if (!(mu_tolerance > 0.0)) throw config_error("config: mu_tolerance must be positive");
        if (!(initial_value > 0.0)) throw config_error("config: initial_value must be positive");
        if (cash_symbol.empty()) throw config_error("config: cash_symbol must be set");
        if (train_start == 0 || train_end == 0 || test_start == 0 || test_end == 0)
            throw config_error("config: train.start, train.end, test.start and test.end "
                               "are all required");
        if (!(train_start < train_end && train_end <= test_start && test_start < test_end))
            throw config_error("config: ranges must satisfy train.start < train.end <= "
                               "test.start < test.end");
        const auto aligned = [this](std::int64_t t, const char* what) {
            if ((t - train_start) % trading_period_seconds != 0)
                throw config_error(std::string("config: ") + what +
                                   " is not a whole number of trading periods from train.start");
        };
        aligned(train_end, "train.end");
        aligned(test_start, "test.start");
        aligned(test_end, "test.end");
        if (data_source == source_kind::synthetic && synthetic_assets.empty())
            throw config_error("config: synthetic data needs synthetic.assets");
        if (data_source == source_kind::csv && csv_path.empty())
            throw config_error("config: csv data needs csv.path");
        if (data_source == source_kind::http && http_pairs.empty())
            throw config_error("config: http data needs http.pairs");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double to_number(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw config_error("config: " + key + " = '" + v + "' is not a number");
    return d;
}

inline std::int64_t to_integer(const std::string& v, const std::string& key) {
    const double d = to_number(v, key);
    const auto i = static_cast<std::int64_t>(d);
    if (static_cast<double>(i) != d)
        throw config_error("config: " + key + " = '" + v + "' is not a whole number");
    return i;
}

inline bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw config_error("config: " + key + " = '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_words(const std::string& v) {
    std::vector<std::string> out;
    std::istringstream in(v);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// "SYM:drift:vol", optionally ":volume" and ":initial_price" after that
inline synthetic_asset parse_synthetic_asset(const std::string& spec) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream in(spec);
    while (std::getline(in, cell, ':')) f.push_back(cell);
    if (f.size() < 3 || f.size() > 5)
        throw config_error("config: synthetic asset '" + spec +
                           "' wants SYMBOL:drift:vol[:volume[:price]]");
    synthetic_asset a;
    a.symbol = f[0];
    if (a.symbol.empty()) throw config_error("config: synthetic asset with empty symbol");
    a.drift = to_number(f[1], "synthetic drift");
    a.volatility = to_number(f[2], "synthetic volatility");
    if (f.size() > 3) a.volume_scale = to_number(f[3], "synthetic volume");
    if (f.size() > 4) a.initial_price = to_number(f[4], "synthetic price");
    return a;
}

}  // namespace detail

// Epoch seconds, "YYYY-MM-DD" or "YYYY-MM-DD HH:MM", all UTC.
inline std::int64_t parse_time(const std::string& raw) {
    const std::string s = detail::trim(raw);
    if (s.empty()) throw config_error("config: empty timestamp");
    if (s.find_first_not_of("0123456789") == std::string::npos) {
        char* end = nullptr;
        return static_cast<std::int64_t>(std::strtoll(s.c_str(), &end, 10));
    }
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    const int got = std::sscanf(s.c_str(), "%d-%d-%d %d:%d", &y, &mo, &d, &h, &mi);
    if (got != 3 && got != 5)
        throw config_error("config: timestamp '" + s +
                           "' wants epoch seconds, YYYY-MM-DD or YYYY-MM-DD HH:MM");
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    const std::time_t t = timegm(&tm);
    if (t == static_cast<std::time_t>(-1) || mo < 1 || mo > 12 || d < 1 || d > 31)
        throw config_error("config: timestamp '" + s + "' is not a valid date");
    return static_cast<std::int64_t>(t);
}

inline run_config parse_run_config(const std::string& text) {
    run_config cfg;
    cfg.raw_text = text;
    std::istringstream in(text);
    std::string line;
    std::map<std::string, bool> seen;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw config_error("config line " + std::to_string(line_no) +
                               ": empty key or value");
        if (seen[key])
            throw config_error("config line " + std::to_string(line_no) + ": duplicate key " +
                               key);
        seen[key] = true;

        if (key == "policy") cfg.policy = parse_policy_kind(value);
        else if (key == "asset_count") cfg.asset_count = static_cast<int>(detail::to_integer(value, key));
        else if (key == "window_size") cfg.window_size = static_cast<int>(detail::to_integer(value, key));
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(detail::to_integer(value, key));
        else if (key == "total_steps") cfg.total_steps = detail::to_integer(value, key);
        else if (key == "learning_rate") cfg.learning_rate = detail::to_number(value, key);
        else if (key == "regularization_coefficient") cfg.regularization_coefficient = detail::to_number(value, key);
        else if (key == "sample_bias") cfg.sample_bias = detail::to_number(value, key);
        else if (key == "commission_rate") cfg.commission_rate = detail::to_number(value, key);
        else if (key == "rolling_steps") cfg.rolling_steps = static_cast<int>(detail::to_integer(value, key));
        else if (key == "mu_iterations") cfg.mu_iterations = static_cast<int>(detail::to_integer(value, key));
        else if (key == "mu_tolerance") cfg.mu_tolerance = detail::to_number(value, key);
        else if (key == "volume_observation_days") cfg.volume_observation_days = static_cast<int>(detail::to_integer(value, key));
        else if (key == "trading_period_seconds") cfg.trading_period_seconds = detail::to_integer(value, key);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::to_integer(value, key));
        else if (key == "online_learning") cfg.online_learning = detail::to_bool(value, key);
        else if (key == "benchmark_fees") cfg.benchmark_fees = detail::to_bool(value, key);
        else if (key == "initial_value") cfg.initial_value = detail::to_number(value, key);
        else if (key == "cash_symbol") cfg.cash_symbol = value;
        else if (key == "conv1_maps") cfg.conv1_maps = static_cast<int>(detail::to_integer(value, key));
        else if (key == "conv1_width") cfg.conv1_width = static_cast<int>(detail::to_integer(value, key));
        else if (key == "conv2_maps") cfg.conv2_maps = static_cast<int>(detail::to_integer(value, key));
        else if (key == "hidden_units") cfg.hidden_units = static_cast<int>(detail::to_integer(value, key));
        else if (key == "data.source") {
            if (value == "synthetic") cfg.data_source = run_config::source_kind::synthetic;
            else if (value == "csv") cfg.data_source = run_config::source_kind::csv;
            else if (value == "http") cfg.data_source = run_config::source_kind::http;
            else throw config_error("config: data.source '" + value +
                                    "' is not synthetic, csv or http");
        }
        else if (key == "synthetic.assets") {
            for (const auto& w : detail::split_words(value))
                cfg.synthetic_assets.push_back(detail::parse_synthetic_asset(w));
        }
        else if (key == "synthetic.start_time") cfg.synthetic_start_time = parse_time(value);
        else if (key == "csv.path") cfg.csv_path = value;
        else if (key == "http.base_url") cfg.http.base_url = value;
        else if (key == "http.path_template") cfg.http.path_template = value;
        else if (key == "http.volume_field") cfg.http.volume_field = value;
        else if (key == "http.retries") cfg.http.retries = static_cast<int>(detail::to_integer(value, key));
        else if (key == "http.backoff_ms") cfg.http.backoff_ms = static_cast<int>(detail::to_integer(value, key));
        else if (key == "http.pairs") cfg.http_pairs = detail::split_words(value);
        else if (key == "train.start") cfg.train_start = parse_time(value);
        else if (key == "train.end") cfg.train_end = parse_time(value);
        else if (key == "test.start") cfg.test_start = parse_time(value);
        else if (key == "test.end") cfg.test_end = parse_time(value);
        else throw config_error("config line " + std::to_string(line_no) + ": unknown key '" +
                                key + "'");
    }
    return cfg;
}

inline run_config read_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

// ---- data assembly ----------------------------------------------------------

// The grid every run lives on: enough lookback before train.start for the
// first price window, through the end of the test range.
inline std::int64_t grid_start_time(const run_config& cfg) {
    return cfg.train_start - static_cast<std::int64_t>(cfg.window_size) *
                                 cfg.trading_period_seconds;
}

// Remote pulls start early enough to cover both the first price window and
// the volume observation window used for asset selection, rounded down onto
// the trading grid.
struct time_range {
    std::int64_t from = 0;
    std::int64_t to = 0;
};

inline time_range http_fetch_range(const run_config& cfg) {
    const std::int64_t obs_start =
        cfg.train_start - static_cast<std::int64_t>(cfg.volume_observation_days) * 86400;
    std::int64_t from = std::min(grid_start_time(cfg), obs_start);
    from -= ((from - cfg.train_start) % cfg.trading_period_seconds +
             cfg.trading_period_seconds) %
            cfg.trading_period_seconds;
    return {from, cfg.test_end};
}

// Loads the raw universe for the configured source.  Series come back on
// their own grids, possibly gappy; selection and alignment happen next.
inline std::vector<candle_series> load_universe(const run_config& cfg,
                                                const std::string& cache_dir) {
    switch (cfg.data_source) {
        case run_config::source_kind::synthetic: {
            synthetic_market_spec spec;
            spec.assets = cfg.synthetic_assets;
            spec.period_seconds = cfg.trading_period_seconds;
            spec.start_time = cfg.synthetic_start_time >= 0 ? cfg.synthetic_start_time
                                                            : grid_start_time(cfg);
            if (spec.start_time > grid_start_time(cfg))
                throw config_error("config: synthetic.start_time leaves no room for the "
                                   "first price window");
            if ((cfg.test_end - spec.start_time) % cfg.trading_period_seconds != 0)
                throw config_error("config: synthetic.start_time is not aligned with the "
                                   "trading period");
            const int periods =
                static_cast<int>((cfg.test_end - spec.start_time) / cfg.trading_period_seconds);
            return generate_synthetic_market(spec, periods, cfg.seed);
        }
        case run_config::source_kind::csv:
            return read_candles_csv(cfg.csv_path, cfg.trading_period_seconds);
        case run_config::source_kind::http: {
            fetch_config http = cfg.http;
            http.cache_dir = cache_dir;
            const time_range range = http_fetch_range(cfg);
            std::vector<candle_series> out;
            for (const auto& pair : cfg.http_pairs)
                out.push_back(fetch_candles(http, pair, cfg.trading_period_seconds, range.from,
                                            range.to));
            return out;
        }
    }
    throw config_error("config: unhandled data source");
}

// Universe -> the m most traded assets, aligned and gap-filled over the run's
// grid, in volume order.
inline market_history assemble_history(const run_config& cfg,
                                       std::vector<candle_series> universe) {
    const auto chosen = preselect_assets(universe, cfg.volume_observation_days, cfg.asset_count,
                                         cfg.train_start);
    std::vector<candle_series> rows;
    rows.reserve(chosen.size());
    for (const auto& sym : chosen) {
        for (const auto& s : universe) {
            if (s.symbol != sym) continue;
            rows.push_back(fill_missing(clip_series(s, grid_start_time(cfg), cfg.test_end)));
            break;
        }
    }
    return market_history::from_series(std::move(rows), cfg.cash_symbol);
}

inline market_history load_history(const run_config& cfg, const std::string& cache_dir) {
    return assemble_history(cfg, load_universe(cfg, cache_dir));
}

// Slot indices of the configured time ranges on the loaded grid.
struct period_range {
    int train_first = 0;
    int train_last = 0;       // last period whose data pretraining may see
    int test_first = 0;
    int test_last_excl = 0;
};

inline period_range resolve_periods(const run_config& cfg, const market_history& hist) {
    const auto boundary = [&hist](std::int64_t time, const char* what) {
        const std::int64_t off = time - hist.start_time();
        if (off < 0 || off % hist.period_seconds() != 0 ||
            off / hist.period_seconds() > hist.slots())
            throw config_error(std::string("config: ") + what + " falls outside the loaded data");
        return static_cast<int>(off / hist.period_seconds());
    };
    period_range r;
    r.train_first = boundary(cfg.train_start, "train.start");
    r.train_last = boundary(cfg.train_end, "train.end") - 1;
    r.test_first = boundary(cfg.test_start, "test.start");
    r.test_last_excl = boundary(cfg.test_end, "test.end");
    return r;
}

}  // namespace folio
