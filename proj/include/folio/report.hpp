#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "backtest.hpp"
#include "errors.hpp"
#include "marketdata.hpp"
#include "version.hpp"

namespace folio {

// FNV-1a over raw bytes; stable across platforms for the little-endian
// doubles we feed it.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// One number that pins down the exact dataset a run saw: symbols, grid and
// every price and volume.
inline std::uint64_t history_fingerprint(const market_history& hist) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    const auto mix_str = [&mix](const std::string& s) { mix(s.data(), s.size()); };
    mix_str(hist.cash_symbol);
    for (const auto& s : hist.series) {
        mix_str(s.symbol);
        mix(&s.period_seconds, sizeof s.period_seconds);
        mix(&s.start_time, sizeof s.start_time);
        for (const auto& c : s.candles) {
            mix(&c.close, sizeof c.close);
            mix(&c.high, sizeof c.high);
            mix(&c.low, sizeof c.low);
            mix(&c.volume, sizeof c.volume);
        }
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("report: cannot open " + path + " for writing");
    return out;
}

}  // namespace detail

// Per-period trade log: what was held, what the move cost, where the account
// stood.  One weight column per entry, cash first.
inline void write_ledger_csv(const std::string& path, const run_result& r,
                             const market_history& hist) {
    auto out = detail::open_out(path);
    out << "t,timestamp,mu,log_return,rate_of_return,portfolio_value,w_" << hist.cash_symbol;
    for (const auto& s : hist.series) out << ",w_" << s.symbol;
    out << "\n";
    for (const auto& row : r.rows) {
        out << row.t << ',' << hist.slot_time(row.t) << ',' << detail::fmt(row.mu) << ','
            << detail::fmt(row.log_return) << ',' << detail::fmt(row.rate_of_return) << ','
            << detail::fmt(row.portfolio_value);
        for (int i = 0; i < row.weights.size(); ++i) out << ',' << detail::fmt(row.weights[i]);
        out << "\n";
    }
    if (!out) throw data_error("report: write failed for " + path);
}

// Value trajectories side by side for plotting.  Row t holds each strategy's
// account value after the decision at t; the first row is the common stake
// one period before the range starts.
inline void write_value_paths_csv(const std::string& path, int start,
                                  const std::vector<std::pair<std::string,
                                                              std::vector<double>>>& paths) {
    if (paths.empty()) throw domain_error("report: no value paths");
    for (const auto& [name, p] : paths)
        if (p.size() != paths[0].second.size())
            throw domain_error("report: value paths differ in length");
    auto out = detail::open_out(path);
    out << "t";
    for (const auto& [name, p] : paths) {
        std::string clean = name;
        for (char& c : clean)
            if (c == ',' || c == '\n') c = '_';
        out << ',' << clean;
    }
    out << "\n";
    for (std::size_t i = 0; i < paths[0].second.size(); ++i) {
        out << (start - 1 + static_cast<int>(i));
        for (const auto& [name, p] : paths) out << ',' << detail::fmt(p[i]);
        out << "\n";
    }
    if (!out) throw data_error("report: write failed for " + path);
}

// Headline metrics as JSON.  Everything in here is a pure function of the
// inputs, so reruns of the same experiment produce identical bytes.
inline void write_summary_json(const std::string& path, const run_result& r,
                               const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["strategy"] = r.name;
    j["periods"] = r.rows.size();
    j["initial_value"] = r.value_path.empty() ? 0.0 : r.value_path.front();
    j["final_value"] = r.value_path.empty() ? 0.0 : r.value_path.back();
    j["fapv"] = r.fapv;
    if (r.sharpe)
        j["sharpe"] = *r.sharpe;
    else
        j["sharpe"] = nullptr;
    j["max_drawdown"] = r.max_drawdown;
    j["version"] = version_string;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    auto out = detail::open_out(path);
    out << j.dump(2) << "\n";
    if (!out) throw data_error("report: write failed for " + path);
}

inline void write_comparison_csv(const std::string& path, const comparison& c) {
    auto out = detail::open_out(path);
    out << "strategy,fapv,sharpe,max_drawdown\n";
    for (const auto& r : c.rows) {
        out << r.name << ',' << detail::fmt(r.fapv) << ','
            << (r.sharpe ? detail::fmt(*r.sharpe) : "n/a") << ','
            << detail::fmt(r.max_drawdown) << "\n";
    }
    if (!out) throw data_error("report: write failed for " + path);
}

// Fixed-width text table with a star on each column's winner.
inline std::string format_comparison_table(const comparison& c) {
    const auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"strategy", "fapv", "sharpe", "max_drawdown"});
    for (const auto& r : c.rows) {
        cells.push_back({r.name, num(r.fapv) + (r.name == c.best_fapv ? " *" : ""),
                         r.sharpe ? num(*r.sharpe) + (r.name == c.best_sharpe ? " *" : "")
                                  : std::string("n/a"),
                         num(r.max_drawdown) + (r.name == c.best_drawdown ? " *" : "")});
    }
    std::vector<std::size_t> width(4, 0);
    for (const auto& row : cells)
        for (int i = 0; i < 4; ++i) width[i] = std::max(width[i], row[i].size());
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (int i = 0; i < 4; ++i) {
            out << cells[r][i] << std::string(width[i] - cells[r][i].size(), ' ');
            out << (i + 1 < 4 ? "  " : "");
        }
        out << "\n";
        if (r == 0) {
            for (int i = 0; i < 4; ++i)
                out << std::string(width[i], '-') << (i + 1 < 4 ? "  " : "");
            out << "\n";
        }
    }
    return out.str();
}

// Everything needed to reproduce a run: tool version, the configuration text
// verbatim, the seed, and a fingerprint of the exact data.
inline void write_manifest_json(const std::string& path, const std::string& command,
                                const std::string& config_text, std::uint64_t seed,
                                const market_history& hist,
                                const nlohmann::json& artifacts = nlohmann::json::object()) {
    nlohmann::json j;
    j["version"] = version_string;
    j["command"] = command;
    j["config"] = config_text;
    j["seed"] = seed;
    nlohmann::json data;
    data["cash"] = hist.cash_symbol;
    nlohmann::json syms = nlohmann::json::array();
    for (const auto& s : hist.series) syms.push_back(s.symbol);
    data["assets"] = syms;
    data["periods"] = hist.slots();
    data["period_seconds"] = hist.period_seconds();
    data["start_time"] = hist.start_time();
    data["fingerprint"] = hex64(history_fingerprint(hist));
    j["data"] = data;
    j["artifacts"] = artifacts;
    auto out = detail::open_out(path);
    out << j.dump(2) << "\n";
    if (!out) throw data_error("report: write failed for " + path);
}

}  // namespace folio
