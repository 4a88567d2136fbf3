#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace folio {

// One trading period.  Prices are quoted in the cash asset; volume is the
// amount traded over the period, denominated in the cash asset as well.
struct candle {
    std::int64_t open_time = 0;
    double close = 0.0;
    double high = 0.0;
    double low = 0.0;
    double volume = 0.0;
};

// Candles for one asset on a fixed time grid.  Slot i opens at
// start_time + i * period_seconds; slots with no trade are flagged missing.
struct candle_series {
    std::string symbol;
    std::int64_t period_seconds = 0;
    std::int64_t start_time = 0;
    std::vector<candle> candles;
    std::vector<bool> missing;

    int slots() const { return static_cast<int>(candles.size()); }
    std::int64_t slot_time(int i) const { return start_time + i * period_seconds; }

    void validate() const {
        if (period_seconds <= 0) throw data_error(symbol + ": period must be positive");
        if (missing.size() != candles.size())
            throw data_error(symbol + ": missing mask length mismatch");
        for (int i = 0; i < slots(); ++i) {
            if (candles[i].open_time != slot_time(i))
                throw data_error(symbol + ": candle at index " + std::to_string(i) +
                                 " is off the time grid");
            if (missing[i]) continue;
            const candle& c = candles[i];
            if (!(c.low > 0.0 && c.low <= c.close && c.close <= c.high))
                throw data_error(symbol + ": bad prices at t=" + std::to_string(c.open_time));
            if (!(c.volume >= 0.0))
                throw data_error(symbol + ": negative volume at t=" + std::to_string(c.open_time));
        }
    }
};

// Repairs gaps with flat fake price movements: a leading gap sits at the
// first traded close, later gaps carry the previous close forward; filled
// slots trade no volume.  Idempotent.
inline candle_series fill_missing(const candle_series& in) {
    in.validate();
    int first_real = -1;
    for (int i = 0; i < in.slots(); ++i)
        if (!in.missing[i]) {
            first_real = i;
            break;
        }
    if (first_real < 0) throw data_error(in.symbol + ": no traded candles at all");
    candle_series out = in;
    const double head = in.candles[first_real].close;
    double carry = head;
    for (int i = 0; i < out.slots(); ++i) {
        if (!out.missing[i]) {
            carry = out.candles[i].close;
            continue;
        }
        const double level = i < first_real ? head : carry;
        out.candles[i] = {out.slot_time(i), level, level, level, 0.0};
        out.missing[i] = false;
    }
    return out;
}

// The m symbols with the largest summed volume over the observation window
// [as_of - days*86400, as_of); ties break by symbol ascending.  Symbols that
// never trade inside the window do not qualify.
inline std::vector<std::string> preselect_assets(const std::vector<candle_series>& universe,
                                                 int observation_days, int m,
                                                 std::int64_t as_of) {
    if (m < 1) throw config_error("preselect_assets: m must be at least 1");
    if (observation_days < 1) throw config_error("preselect_assets: window must be at least a day");
    const std::int64_t from = as_of - static_cast<std::int64_t>(observation_days) * 86400;
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& s : universe) {
        s.validate();
        double sum = 0.0;
        for (int i = 0; i < s.slots(); ++i) {
            const std::int64_t t = s.slot_time(i);
            if (t < from || t >= as_of || s.missing[i]) continue;
            sum += s.candles[i].volume;
        }
        if (sum > 0.0) ranked.emplace_back(sum, s.symbol);
    }
    if (static_cast<int>(ranked.size()) < m)
        throw data_error("preselect_assets: only " + std::to_string(ranked.size()) +
                         " assets traded in the window, need " + std::to_string(m));
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::string> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) out.push_back(ranked[i].second);
    return out;
}

// Elementwise price relatives y = v_now / v_prev.  Both vectors carry the
// cash entry first, which is identically 1.
inline std::vector<double> price_relative(const std::vector<double>& v_prev,
                                          const std::vector<double>& v_now) {
    if (v_prev.size() != v_now.size() || v_prev.empty())
        throw domain_error("price_relative: length mismatch");
    if (v_prev[0] != 1.0 || v_now[0] != 1.0)
        throw domain_error("price_relative: cash entry must be 1");
    std::vector<double> y(v_prev.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(v_prev[i] > 0.0 && v_now[i] > 0.0))
            throw domain_error("price_relative: prices must be positive");
        y[i] = v_now[i] / v_prev[i];
    }
    return y;
}

// Network input: (feature, asset, time) with features (close, high, low),
// every column divided by the latest close of its asset.  The close feature
// of the newest column is exactly 1 by construction.
struct price_tensor {
    int assets = 0;
    int window = 0;
    std::int64_t as_of = 0;
    tensor x;  // shape (3, assets, window), row-major
};

inline price_tensor build_price_tensor(const std::vector<candle_series>& series, int t, int n) {
    if (series.empty()) throw domain_error("build_price_tensor: no assets");
    if (n < 2) throw domain_error("build_price_tensor: window must cover at least 2 periods");
    const int m = static_cast<int>(series.size());
    price_tensor out;
    out.assets = m;
    out.window = n;
    out.x = tensor({3, m, n});
    for (int i = 0; i < m; ++i) {
        const candle_series& s = series[i];
        if (s.period_seconds != series[0].period_seconds || s.start_time != series[0].start_time)
            throw data_error("build_price_tensor: " + s.symbol + " is not on the shared grid");
        if (t >= s.slots())
            throw data_error("build_price_tensor: " + s.symbol + " ends before requested period");
        if (t - n + 1 < 0)
            throw data_error("build_price_tensor: lookback passes the start of data; earliest "
                             "covered timestamp is " +
                             std::to_string(s.slot_time(0)));
        const double latest = s.candles[t].close;
        for (int j = 0; j < n; ++j) {
            const int slot = t - n + 1 + j;
            if (s.missing[slot])
                throw data_error("build_price_tensor: " + s.symbol + " has an unfilled gap at t=" +
                                 std::to_string(s.slot_time(slot)));
            const candle& c = s.candles[slot];
            out.x.at3(0, i, j) = c.close / latest;
            out.x.at3(1, i, j) = c.high / latest;
            out.x.at3(2, i, j) = c.low / latest;
        }
    }
    out.as_of = series[0].slot_time(t);
    return out;
}

// ---- synthetic market ------------------------------------------------------

struct synthetic_asset {
    std::string symbol;
    double drift = 0.0;        // per-period log drift
    double volatility = 0.0;   // per-period log stdev
    double volume_scale = 1.0; // constant reported volume
    double initial_price = 1.0;
};

struct synthetic_market_spec {
    std::vector<synthetic_asset> assets;
    std::int64_t start_time = 1451606400;  // arbitrary fixed epoch
    std::int64_t period_seconds = 1800;
};

// Geometric Brownian closes with highs/lows spread around each close.  Every
// asset draws from its own seed stream, so output is bit-identical for a
// given (spec, seed) on any platform.
inline std::vector<candle_series> generate_synthetic_market(const synthetic_market_spec& spec,
                                                            int periods, std::uint64_t seed) {
    if (periods < 1) throw config_error("synthetic market: need at least one period");
    if (spec.assets.empty()) throw config_error("synthetic market: no assets");
    std::vector<candle_series> out;
    out.reserve(spec.assets.size());
    for (std::size_t a = 0; a < spec.assets.size(); ++a) {
        const synthetic_asset& sa = spec.assets[a];
        if (!(sa.initial_price > 0.0) || !(sa.volatility >= 0.0))
            throw config_error("synthetic market: bad parameters for " + sa.symbol);
        auto rng = seeded_engine(seed, a);
        candle_series s;
        s.symbol = sa.symbol;
        s.period_seconds = spec.period_seconds;
        s.start_time = spec.start_time;
        s.candles.resize(periods);
        s.missing.assign(periods, false);
        double close = sa.initial_price;
        for (int t = 0; t < periods; ++t) {
            if (t > 0) close *= std::exp(sa.drift + sa.volatility * standard_normal(rng));
            const double spread = std::min(std::abs(sa.volatility * standard_normal(rng)), 0.5);
            s.candles[t] = {s.slot_time(t), close, close * (1.0 + spread),
                            close * (1.0 - spread), sa.volume_scale};
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---- candle CSV ------------------------------------------------------------
//
// Format: header "timestamp,asset,open,high,low,close,volume", one row per
// traded candle; gaps in a series simply have no row.  The open column is
// carried for interoperability (trades happen at the previous close) and is
// reconstructed on write, not stored.

inline void write_candles_csv(const std::string& path, const std::vector<candle_series>& all) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("candle csv: cannot open " + path + " for writing");
    out << "timestamp,asset,open,high,low,close,volume\n";
    char buf[512];
    for (const auto& s : all) {
        s.validate();
        double prev_close = 0.0;
        for (int i = 0; i < s.slots(); ++i) {
            if (s.missing[i]) continue;
            const candle& c = s.candles[i];
            const double open = prev_close > 0.0 ? prev_close : c.close;
            std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          static_cast<long long>(c.open_time), s.symbol.c_str(), open, c.high,
                          c.low, c.close, c.volume);
            out << buf;
            prev_close = c.close;
        }
    }
    if (!out) throw data_error("candle csv: write failed for " + path);
}

inline std::vector<candle_series> read_candles_csv(const std::string& path,
                                                   std::int64_t period_seconds) {
    std::ifstream in(path);
    if (!in) throw data_error("candle csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("timestamp,asset,", 0) != 0)
        throw parse_error("candle csv: " + path + " lacks the expected header");
    std::map<std::string, candle_series> by_symbol;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7)
            throw parse_error("candle csv: line " + std::to_string(line_no) + " has " +
                              std::to_string(f.size()) + " fields, expected 7");
        const auto num = [&](int idx, const char* what) {
            char* end = nullptr;
            const double v = std::strtod(f[idx].c_str(), &end);
            if (end == f[idx].c_str() || *end != '\0')
                throw parse_error("candle csv: line " + std::to_string(line_no) +
                                  ": field '" + std::string(what) + "' is not a number");
            return v;
        };
        candle c;
        c.open_time = static_cast<std::int64_t>(num(0, "timestamp"));
        c.high = num(3, "high");
        c.low = num(4, "low");
        c.close = num(5, "close");
        c.volume = num(6, "volume");
        auto& s = by_symbol[f[1]];
        if (s.symbol.empty()) {
            s.symbol = f[1];
            s.period_seconds = period_seconds;
            s.start_time = c.open_time;
        }
        const std::int64_t offset = c.open_time - s.start_time;
        if (offset < 0 || offset % period_seconds != 0)
            throw parse_error("candle csv: line " + std::to_string(line_no) +
                              ": timestamp off the " + std::to_string(period_seconds) +
                              "s grid (or not ascending)");
        const int slot = static_cast<int>(offset / period_seconds);
        if (slot < s.slots())
            throw parse_error("candle csv: line " + std::to_string(line_no) +
                              ": duplicate or out-of-order timestamp for " + s.symbol);
        while (s.slots() < slot) {
            s.candles.push_back({s.slot_time(s.slots()), 0, 0, 0, 0});
            s.missing.push_back(true);
        }
        s.candles.push_back(c);
        s.missing.push_back(false);
    }
    std::vector<candle_series> out;
    out.reserve(by_symbol.size());
    for (auto& [sym, s] : by_symbol) {
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

// Re-grids one series onto [from, to): slots outside the source range come
// back flagged missing.
inline candle_series clip_series(const candle_series& in, std::int64_t from, std::int64_t to) {
    if ((from - in.start_time) % in.period_seconds != 0)
        throw data_error(in.symbol + ": clip boundary off the time grid");
    if (to <= from) throw data_error(in.symbol + ": empty clip range");
    candle_series out;
    out.symbol = in.symbol;
    out.period_seconds = in.period_seconds;
    out.start_time = from;
    const int n = static_cast<int>((to - from) / in.period_seconds);
    out.candles.resize(n);
    out.missing.assign(n, true);
    for (int i = 0; i < n; ++i) {
        const std::int64_t t = out.slot_time(i);
        const std::int64_t off = (t - in.start_time) / in.period_seconds;
        out.candles[i].open_time = t;
        if (off >= 0 && off < in.slots() && !in.missing[static_cast<int>(off)]) {
            out.candles[i] = in.candles[static_cast<int>(off)];
            out.missing[i] = false;
        }
    }
    return out;
}

// Gap-free aligned view over the preselected assets; the backbone handed to
// tensors, training and backtests.  Cash is implicit at index 0 of every
// relative vector.
struct market_history {
    std::string cash_symbol;
    std::vector<candle_series> series;  // tensor row order

    static market_history from_series(std::vector<candle_series> series, std::string cash_symbol) {
        if (series.empty()) throw data_error("market_history: no assets");
        market_history h;
        for (auto& s : series) {
            s.validate();
            if (s.period_seconds != series[0].period_seconds ||
                s.start_time != series[0].start_time || s.slots() != series[0].slots())
                throw data_error("market_history: " + s.symbol + " is not on the shared grid");
            for (int i = 0; i < s.slots(); ++i)
                if (s.missing[i])
                    throw data_error("market_history: " + s.symbol + " still has gaps; fill first");
            if (s.symbol == cash_symbol)
                throw data_error("market_history: cash asset cannot also be a traded row");
        }
        h.cash_symbol = std::move(cash_symbol);
        h.series = std::move(series);
        return h;
    }

    int assets() const { return static_cast<int>(series.size()); }
    int slots() const { return series[0].slots(); }
    std::int64_t period_seconds() const { return series[0].period_seconds; }
    std::int64_t start_time() const { return series[0].start_time; }
    std::int64_t slot_time(int t) const { return series[0].slot_time(t); }
    double close(int asset, int t) const { return series[asset].candles[t].close; }

    // Index of the slot opening at exactly the given time.
    int slot_of(std::int64_t time) const {
        const std::int64_t off = time - start_time();
        if (off < 0 || off % period_seconds() != 0 || off / period_seconds() >= slots())
            throw data_error("market_history: no slot opens at t=" + std::to_string(time));
        return static_cast<int>(off / period_seconds());
    }

    // Price relatives over period t: y[0] = 1 (cash), y[i+1] = close ratio.
    std::vector<double> relatives(int t) const {
        if (t < 1 || t >= slots()) throw data_error("market_history: relatives need t >= 1");
        std::vector<double> y(assets() + 1);
        y[0] = 1.0;
        for (int i = 0; i < assets(); ++i) y[i + 1] = close(i, t) / close(i, t - 1);
        return y;
    }

    price_tensor window(int t, int n) const { return build_price_tensor(series, t, n); }
};

}  // namespace folio
