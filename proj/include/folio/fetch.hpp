#pragma once

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "errors.hpp"
#include "marketdata.hpp"

namespace folio {

// Chart-data endpoint in the Poloniex style: a JSON array of candle objects,
// one per period, plus a single {date: 0} placeholder row when the range is
// empty.  Plain http only; point it at a local mirror for anything else.
struct fetch_config {
    std::string base_url = "http://127.0.0.1:8080";
    std::string path_template =
        "/public?command=returnChartData&currencyPair={pair}"
        "&start={start}&end={end}&period={period}";
    std::string volume_field = "quoteVolume";  // volume in cash-asset units
    int retries = 3;
    int backoff_ms = 250;
    std::string cache_dir;  // empty disables the cache
};

namespace detail {

inline std::string expand_template(std::string t, const std::string& pair, std::int64_t start,
                                   std::int64_t end, std::int64_t period) {
    const auto sub = [&t](const std::string& key, const std::string& value) {
        for (std::string::size_type p; (p = t.find(key)) != std::string::npos;)
            t.replace(p, key.size(), value);
    };
    sub("{pair}", pair);
    sub("{start}", std::to_string(start));
    sub("{end}", std::to_string(end));
    sub("{period}", std::to_string(period));
    return t;
}

inline double json_number(const nlohmann::json& row, const std::string& field) {
    if (!row.contains(field))
        throw parse_error("chart data: row lacks field '" + field + "'");
    const auto& v = row[field];
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        char* endp = nullptr;
        const double d = std::strtod(s.c_str(), &endp);
        if (endp != s.c_str() && *endp == '\0') return d;
    }
    throw parse_error("chart data: field '" + field + "' is not numeric");
}

inline std::string cache_file(const fetch_config& cfg, const std::string& pair,
                              std::int64_t period, std::int64_t start, std::int64_t end) {
    std::string key = pair;
    for (char& c : key)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return cfg.cache_dir + "/" + key + "_" + std::to_string(period) + "_" +
           std::to_string(start) + "_" + std::to_string(end) + ".csv";
}

}  // namespace detail

// One network fetch, no cache.  Returns a series on the grid anchored at
// `start`; periods the exchange has no data for (before listing, outages)
// come back flagged missing.
inline candle_series fetch_candles_remote(const fetch_config& cfg, const std::string& pair,
                                          std::int64_t period_seconds, std::int64_t start,
                                          std::int64_t end) {
    if (period_seconds <= 0) throw config_error("fetch: period must be positive");
    if (end <= start || (end - start) % period_seconds != 0)
        throw config_error("fetch: range must be a positive whole number of periods");
    const std::string path =
        detail::expand_template(cfg.path_template, pair, start, end, period_seconds);

    std::string body;
    std::string last_failure;
    bool got = false;
    for (int attempt = 1; attempt <= cfg.retries; ++attempt) {
        if (attempt > 1)
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms * (attempt - 1)));
        httplib::Client client(cfg.base_url);
        client.set_connection_timeout(10);
        client.set_read_timeout(30);
        auto res = client.Get(path);
        if (!res) {
            last_failure = "no response (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_failure = "http status " + std::to_string(res->status);
            continue;
        }
        body = res->body;
        got = true;
        break;
    }
    if (!got)
        throw network_error("fetch " + pair + ": " + std::to_string(cfg.retries) +
                            " attempts failed, last: " + last_failure);

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("chart data: response is not JSON: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw parse_error("chart data: expected a JSON array");

    candle_series s;
    s.symbol = pair;
    s.period_seconds = period_seconds;
    s.start_time = start;
    const int n = static_cast<int>((end - start) / period_seconds);
    s.candles.resize(n);
    s.missing.assign(n, true);
    for (int i = 0; i < n; ++i) s.candles[i].open_time = s.slot_time(i);

    for (const auto& row : doc) {
        if (!row.is_object()) throw parse_error("chart data: row is not an object");
        const auto date = static_cast<std::int64_t>(detail::json_number(row, "date"));
        if (date == 0) continue;  // the exchange's empty-range placeholder
        candle c;
        c.open_time = date;
        c.high = detail::json_number(row, "high");
        c.low = detail::json_number(row, "low");
        c.close = detail::json_number(row, "close");
        c.volume = detail::json_number(row, cfg.volume_field);
        if (!(c.low > 0.0 && c.low <= c.close && c.close <= c.high) || !(c.volume >= 0.0))
            continue;  // bogus filler row
        if (date < start || date >= end) continue;
        if ((date - start) % period_seconds != 0)
            throw parse_error("chart data: timestamp " + std::to_string(date) + " is off the " +
                              std::to_string(period_seconds) + "s grid");
        const int slot = static_cast<int>((date - start) / period_seconds);
        s.candles[slot] = c;
        s.missing[slot] = false;
    }
    return s;
}

// Cache-through fetch: an exact (pair, period, range) hit is served from
// disk, anything else goes to the network and lands in the cache on the way
// back.  A series that is entirely gaps never hits the network path twice
// either; it is cached as a header-only file.
inline candle_series fetch_candles(const fetch_config& cfg, const std::string& pair,
                                   std::int64_t period_seconds, std::int64_t start,
                                   std::int64_t end) {
    if (cfg.cache_dir.empty()) return fetch_candles_remote(cfg, pair, period_seconds, start, end);
    const std::string file = detail::cache_file(cfg, pair, period_seconds, start, end);
    if (std::filesystem::exists(file)) {
        auto cached = read_candles_csv(file, period_seconds);
        if (cached.size() > 1)
            throw data_error("fetch cache: " + file + " holds more than one series");
        if (cached.size() == 1) return clip_series(cached[0], start, end);
        candle_series empty;  // header-only file: a remembered all-gap range
        empty.symbol = pair;
        empty.period_seconds = period_seconds;
        empty.start_time = start;
        const int n = static_cast<int>((end - start) / period_seconds);
        empty.candles.resize(n);
        empty.missing.assign(n, true);
        for (int i = 0; i < n; ++i) empty.candles[i].open_time = empty.slot_time(i);
        return empty;
    }
    candle_series s = fetch_candles_remote(cfg, pair, period_seconds, start, end);
    std::filesystem::create_directories(cfg.cache_dir);
    write_candles_csv(file, {s});
    return s;
}

}  // namespace folio
