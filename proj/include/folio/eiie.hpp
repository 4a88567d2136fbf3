#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "accounting.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "marketdata.hpp"
#include "rng.hpp"

namespace folio {

// Every topology scores each asset through the same stack of weights; assets
// only meet in the final softmax.  That keeps the parameter count independent
// of how many assets trade and lets one set of weights transfer across
// portfolio sizes.
enum class policy_kind { cnn, rnn, lstm };

inline std::string to_string(policy_kind k) {
    switch (k) {
        case policy_kind::cnn: return "cnn";
        case policy_kind::rnn: return "rnn";
        case policy_kind::lstm: return "lstm";
    }
    throw domain_error("policy_kind: bad value");
}

inline policy_kind parse_policy_kind(const std::string& s) {
    if (s == "cnn") return policy_kind::cnn;
    if (s == "rnn") return policy_kind::rnn;
    if (s == "lstm") return policy_kind::lstm;
    throw config_error("unknown policy kind '" + s + "' (expected cnn, rnn or lstm)");
}

struct policy_topology {
    policy_kind kind = policy_kind::cnn;
    int assets = 0;  // m, cash excluded
    int window = 0;  // n periods of history per decision

    int conv1_maps = 2;
    int conv1_width = 3;
    int conv2_maps = 20;
    int hidden = 20;  // recurrent units

    static constexpr int features = 3;  // close, high, low

    void validate() const {
        if (assets < 1) throw config_error("topology: need at least one asset");
        if (window < 2) throw config_error("topology: window must cover at least 2 periods");
        if (kind == policy_kind::cnn) {
            if (conv1_maps < 1 || conv2_maps < 1) throw config_error("topology: conv maps < 1");
            if (window <= conv1_width)
                throw config_error("topology: window must exceed the first kernel width " +
                                   std::to_string(conv1_width));
        } else if (hidden < 1) {
            throw config_error("topology: hidden units < 1");
        }
    }

    // channels feeding the scoring layer, before the previous-weight channel
    int feature_channels() const {
        return kind == policy_kind::cnn ? conv2_maps : hidden;
    }
};

// Fresh weights: He-scaled truncated normals on the multiplicative tensors,
// zero biases, and a unit forget-gate bias so early LSTM gradients pass
// through.  Scoring happens per asset, so nothing here depends on m.
inline std::shared_ptr<parameter_set> init_parameters(const policy_topology& t,
                                                      std::uint64_t seed) {
    t.validate();
    auto rng = seeded_engine(seed, 0);
    auto params = std::make_shared<parameter_set>();
    const auto he = [&rng](std::vector<int> shape, int fan_in) {
        tensor w(std::move(shape));
        const double stddev = std::sqrt(2.0 / fan_in);
        for (double& x : w.v) x = truncated_normal(rng, stddev);
        return w;
    };
    const int f = policy_topology::features;
    switch (t.kind) {
        case policy_kind::cnn: {
            const int w2 = t.window - t.conv1_width + 1;  // second kernel spans the rest
            params->add("conv1.kernel", he({t.conv1_maps, f, t.conv1_width}, f * t.conv1_width),
                        true);
            params->add("conv1.bias", tensor({t.conv1_maps}), false);
            params->add("conv2.kernel", he({t.conv2_maps, t.conv1_maps, w2}, t.conv1_maps * w2),
                        true);
            params->add("conv2.bias", tensor({t.conv2_maps}), false);
            break;
        }
        case policy_kind::rnn: {
            params->add("rnn.Wx", he({t.hidden, f}, f), true);
            params->add("rnn.Wh", he({t.hidden, t.hidden}, t.hidden), true);
            params->add("rnn.b", tensor({t.hidden}), false);
            break;
        }
        case policy_kind::lstm: {
            params->add("lstm.Wx", he({4 * t.hidden, f}, f), true);
            params->add("lstm.Wh", he({4 * t.hidden, t.hidden}, t.hidden), true);
            tensor b({4 * t.hidden});
            for (int i = t.hidden; i < 2 * t.hidden; ++i) b.v[i] = 1.0;  // forget gate
            params->add("lstm.b", std::move(b), false);
            break;
        }
    }
    const int channels = t.feature_channels() + 1;  // plus the previous-weight channel
    params->add("score.kernel", he({1, channels, 1}, channels), true);
    params->add("score.bias", tensor({1}), false);
    params->add("cash_bias", tensor({1}), false);
    return params;
}

// Per-asset scores before the softmax; exposed so tests can watch evaluator
// isolation directly.
struct tower_nodes {
    int scores = -1;   // (m,)
    int weights = -1;  // (m+1,), cash first
};

// Appends one evaluator tower to g.  x is a (features, m, window) price
// tensor node; w_prev holds the previous non-cash weights (m,).  Parameters
// must already sit in the graph's parameter set (see init_parameters), so
// towers added to one graph share weights.
inline tower_nodes build_policy_tower(graph& g, const policy_topology& t, int x, int w_prev) {
    t.validate();
    int feat;  // (feature_channels, m, 1)
    if (t.kind == policy_kind::cnn) {
        const int h1 = g.relu(g.conv_1xk(x, g.param("conv1.kernel"), g.param("conv1.bias")));
        feat = g.relu(g.conv_1xk(h1, g.param("conv2.kernel"), g.param("conv2.bias")));
    } else {
        const bool lstm = t.kind == policy_kind::lstm;
        const int wx = g.param(lstm ? "lstm.Wx" : "rnn.Wx");
        const int wh = g.param(lstm ? "lstm.Wh" : "rnn.Wh");
        const int b = g.param(lstm ? "lstm.b" : "rnn.b");
        std::vector<int> columns;
        columns.reserve(t.assets);
        for (int i = 0; i < t.assets; ++i) {
            int state = g.constant(lstm ? tensor({2, t.hidden}) : tensor({t.hidden}));
            for (int j = 0; j < t.window; ++j) {
                const int xt = g.pick_column(x, i, j);
                state = lstm ? g.lstm_cell(xt, state, wx, wh, b)
                             : g.rnn_cell(xt, state, wx, wh, b);
            }
            const int h = lstm ? g.reshape(g.slice(state, 0, 1), {t.hidden}) : state;
            columns.push_back(g.reshape(h, {t.hidden, 1, 1}));
        }
        feat = t.assets == 1 ? columns[0] : g.concat(columns, 1);
    }
    const int with_prev = g.concat({feat, g.reshape(w_prev, {1, t.assets, 1})}, 0);
    const int scored = g.conv_1xk(with_prev, g.param("score.kernel"), g.param("score.bias"));
    tower_nodes out;
    out.scores = g.reshape(scored, {t.assets});
    out.weights = g.softmax(g.concat({g.param("cash_bias"), out.scores}, 0));
    return out;
}

// A single evaluator wired for inference: feed a price tensor and the
// previous portfolio, read the next one.
struct policy {
    policy_topology topo;
    std::shared_ptr<parameter_set> params;
    graph g;
    int x_in;
    int wprev_in;
    tower_nodes nodes;

    policy(policy_topology t, std::shared_ptr<parameter_set> p)
        : topo(t), params(std::move(p)), g(params) {
        topo.validate();
        x_in = g.input("x", {policy_topology::features, topo.assets, topo.window});
        wprev_in = g.input("w_prev", {topo.assets});
        nodes = build_policy_tower(g, topo, x_in, wprev_in);
    }
};

inline portfolio_vector act(policy& p, const price_tensor& x, const portfolio_vector& previous) {
    if (x.assets != p.topo.assets || x.window != p.topo.window)
        throw domain_error("act: price tensor is " + std::to_string(x.assets) + "x" +
                           std::to_string(x.window) + ", policy wants " +
                           std::to_string(p.topo.assets) + "x" + std::to_string(p.topo.window));
    if (previous.assets() != p.topo.assets)
        throw domain_error("act: previous portfolio has the wrong asset count");
    p.g.set_input(p.x_in, x.x);
    tensor wp({p.topo.assets});
    for (int i = 0; i < p.topo.assets; ++i) wp.v[i] = previous.w[i + 1];
    p.g.set_input(p.wprev_in, wp);
    p.g.forward();
    portfolio_vector next;
    next.w = p.g.value(p.nodes.weights).v;
    next.validate();
    return next;
}

}  // namespace folio
