#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace folio {

// Named trainable tensors shared between graphs.  "weight" entries receive
// scaled random init and L2 regularization; bias-like entries get neither.
struct parameter {
    std::string name;
    tensor value;
    tensor grad;
    bool weight = true;
};

class parameter_set {
public:
    int add(std::string name, tensor init, bool weight) {
        if (index_.count(name)) throw domain_error("parameter_set: duplicate name " + name);
        const int id = static_cast<int>(items_.size());
        index_.emplace(name, id);
        tensor grad(init.shape);
        items_.push_back({std::move(name), std::move(init), std::move(grad), weight});
        return id;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    parameter& at(int id) { return items_[id]; }
    const parameter& at(int id) const { return items_[id]; }

    parameter& named(const std::string& name) {
        const int id = find(name);
        if (id < 0) throw domain_error("parameter_set: unknown parameter " + name);
        return items_[id];
    }

    int size() const { return static_cast<int>(items_.size()); }

    void zero_grads() {
        for (auto& p : items_) p.grad.fill(0.0);
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.value.size();
        return n;
    }

private:
    std::vector<parameter> items_;
    std::unordered_map<std::string, int> index_;
};

// L2 penalty over weight entries only: coefficient * sum of squares.
inline double l2_penalty(const parameter_set& params, double coefficient) {
    double sum = 0.0;
    for (int i = 0; i < params.size(); ++i) {
        const parameter& p = params.at(i);
        if (!p.weight) continue;
        for (double x : p.value.v) sum += x * x;
    }
    return coefficient * sum;
}

enum class op : std::uint8_t {
    input,
    param,
    constant,
    conv_1xk,     // x (C,H,W), kernel (F,C,K), bias (F) -> (F,H,W-K+1)
    relu,
    log_e,
    add,
    sub,
    mul,
    divide,       // elementwise; either side of a binary op may be scalar
    matmul,       // (A,B) x (B,C) -> (A,C)
    dot,          // (L,) . (L,) -> scalar
    reduce_sum,   // anything -> scalar
    mean,         // n-ary over equal shapes, elementwise
    concat0,      // n-ary along axis 0
    concat1,      // n-ary along axis 1 (rank >= 2)
    slice0,       // contiguous [start, start+len) along axis 0
    reshape,
    pick_column,  // x (C,H,W) at (row, col) -> (C,)
    softmax,      // (L,) -> (L,)
    rnn_cell,     // x (I,), h (H,), Wx (H,I), Wh (H,H), b (H,) -> (H,)
    lstm_cell,    // x (I,), state (2,H), Wx (4H,I), Wh (4H,H), b (4H,) -> (2,H)
};

struct node {
    op kind;
    std::vector<int> in;
    tensor value;
    tensor grad;
    tensor aux;    // cached pre-activations (lstm)
    int a0 = 0;    // op-specific: slice start, pick row, param id
    int a1 = 0;    // op-specific: slice length, pick col
    std::string name;
};

// Static define-once / run-many computation graph.  Shapes are inferred and
// buffers allocated at build time; forward/backward then run allocation-free.
class graph {
public:
    explicit graph(std::shared_ptr<parameter_set> params)
        : params_(std::move(params)) {
        if (!params_) throw domain_error("graph: null parameter set");
    }

    // ---- construction ----------------------------------------------------

    int input(const std::string& name, std::vector<int> shape) {
        if (inputs_.count(name)) throw domain_error("graph: duplicate input " + name);
        const int id = push(op::input, {}, std::move(shape));
        nodes_[id].name = name;
        inputs_.emplace(name, id);
        fed_.push_back(false);
        input_ids_.push_back(id);
        return id;
    }

    int param(const std::string& name) {
        const int pid = params_->find(name);
        if (pid < 0) throw domain_error("graph: unknown parameter " + name);
        auto it = param_nodes_.find(pid);
        if (it != param_nodes_.end()) return it->second;
        const int id = push(op::param, {}, params_->at(pid).value.shape);
        nodes_[id].a0 = pid;
        nodes_[id].name = name;
        param_nodes_.emplace(pid, id);
        return id;
    }

    int constant(tensor t) {
        const int id = push(op::constant, {}, t.shape);
        nodes_[id].value = std::move(t);
        return id;
    }

    int constant(double x) { return constant(tensor::scalar(x)); }

    int conv_1xk(int x, int kernel, int bias) {
        const auto& xs = shape_of(x, "conv input");
        const auto& ks = shape_of(kernel, "conv kernel");
        const auto& bs = shape_of(bias, "conv bias");
        if (xs.size() != 3 || ks.size() != 3)
            throw shape_fail("conv_1xk", x, "rank-3 input and kernel");
        if (ks[1] != xs[0]) throw shape_fail("conv_1xk", kernel, "kernel channels == input channels");
        if (bs != std::vector<int>{ks[0]}) throw shape_fail("conv_1xk", bias, "bias length == filters");
        const int wo = xs[2] - ks[2] + 1;
        if (wo < 1) throw shape_fail("conv_1xk", x, "kernel wider than input");
        return push(op::conv_1xk, {x, kernel, bias}, {ks[0], xs[1], wo});
    }

    int relu(int x) { return push(op::relu, {x}, shape_of(x, "relu")); }

    int log_e(int x) { return push(op::log_e, {x}, shape_of(x, "log")); }

    int add(int a, int b) { return binary(op::add, a, b); }
    int sub(int a, int b) { return binary(op::sub, a, b); }
    int mul(int a, int b) { return binary(op::mul, a, b); }
    int divide(int a, int b) { return binary(op::divide, a, b); }

    int matmul(int a, int b) {
        const auto& as = shape_of(a, "matmul lhs");
        const auto& bs = shape_of(b, "matmul rhs");
        if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
            throw shape_fail("matmul", a, "(A,B) x (B,C)");
        return push(op::matmul, {a, b}, {as[0], bs[1]});
    }

    int dot(int a, int b) {
        const auto& as = shape_of(a, "dot lhs");
        const auto& bs = shape_of(b, "dot rhs");
        if (as.size() != 1 || as != bs) throw shape_fail("dot", a, "two equal-length vectors");
        return push(op::dot, {a, b}, {1});
    }

    int reduce_sum(int x) { return push(op::reduce_sum, {x}, {1}); }

    int mean(std::vector<int> xs) {
        if (xs.empty()) throw domain_error("graph: mean of nothing");
        const auto shape = shape_of(xs[0], "mean");
        for (int x : xs)
            if (shape_of(x, "mean") != shape) throw shape_fail("mean", x, "equal shapes");
        return push(op::mean, std::move(xs), shape);
    }

    int concat(std::vector<int> xs, int axis = 0) {
        if (xs.empty()) throw domain_error("graph: concat of nothing");
        if (axis != 0 && axis != 1) throw domain_error("graph: concat axis must be 0 or 1");
        auto shape = shape_of(xs[0], "concat");
        if (axis >= static_cast<int>(shape.size())) throw shape_fail("concat", xs[0], "rank > axis");
        for (std::size_t i = 1; i < xs.size(); ++i) {
            auto s = shape_of(xs[i], "concat");
            auto a = shape, c = s;
            a[axis] = c[axis] = 0;
            if (a != c) throw shape_fail("concat", xs[i], "shapes equal off the concat axis");
            shape[axis] += s[axis];
        }
        return push(axis == 0 ? op::concat0 : op::concat1, std::move(xs), shape);
    }

    int slice(int x, int start, int len) {
        auto shape = shape_of(x, "slice");
        if (start < 0 || len < 1 || start + len > shape[0])
            throw shape_fail("slice", x, "[start, start+len) within axis 0");
        shape[0] = len;
        const int id = push(op::slice0, {x}, std::move(shape));
        nodes_[id].a0 = start;
        nodes_[id].a1 = len;
        return id;
    }

    int reshape(int x, std::vector<int> shape) {
        if (tensor::count(shape) != tensor::count(shape_of(x, "reshape")))
            throw shape_fail("reshape", x, "same element count");
        return push(op::reshape, {x}, std::move(shape));
    }

    int pick_column(int x, int row, int col) {
        const auto& xs = shape_of(x, "pick_column");
        if (xs.size() != 3) throw shape_fail("pick_column", x, "rank-3 input");
        if (row < 0 || row >= xs[1] || col < 0 || col >= xs[2])
            throw shape_fail("pick_column", x, "row/col inside (H,W)");
        const int id = push(op::pick_column, {x}, {xs[0]});
        nodes_[id].a0 = row;
        nodes_[id].a1 = col;
        return id;
    }

    int softmax(int x) {
        const auto& xs = shape_of(x, "softmax");
        if (xs.size() != 1) throw shape_fail("softmax", x, "rank-1 input");
        return push(op::softmax, {x}, xs);
    }

    int rnn_cell(int x, int h, int wx, int wh, int b) {
        const auto& xs = shape_of(x, "rnn x");
        const auto& hs = shape_of(h, "rnn h");
        const auto& wxs = shape_of(wx, "rnn Wx");
        const auto& whs = shape_of(wh, "rnn Wh");
        const auto& bs = shape_of(b, "rnn b");
        if (xs.size() != 1 || hs.size() != 1) throw shape_fail("rnn_cell", x, "vector x and h");
        const int hid = hs[0];
        if (wxs != std::vector<int>{hid, xs[0]} || whs != std::vector<int>{hid, hid} ||
            bs != std::vector<int>{hid})
            throw shape_fail("rnn_cell", wx, "Wx (H,I), Wh (H,H), b (H)");
        return push(op::rnn_cell, {x, h, wx, wh, b}, {hid});
    }

    int lstm_cell(int x, int state, int wx, int wh, int b) {
        const auto& xs = shape_of(x, "lstm x");
        const auto& ss = shape_of(state, "lstm state");
        const auto& wxs = shape_of(wx, "lstm Wx");
        const auto& whs = shape_of(wh, "lstm Wh");
        const auto& bs = shape_of(b, "lstm b");
        if (xs.size() != 1 || ss.size() != 2 || ss[0] != 2)
            throw shape_fail("lstm_cell", state, "x (I,), state (2,H)");
        const int hid = ss[1];
        if (wxs != std::vector<int>{4 * hid, xs[0]} || whs != std::vector<int>{4 * hid, hid} ||
            bs != std::vector<int>{4 * hid})
            throw shape_fail("lstm_cell", wx, "Wx (4H,I), Wh (4H,H), b (4H)");
        const int id = push(op::lstm_cell, {x, state, wx, wh, b}, {2, hid});
        nodes_[id].aux = tensor({4 * hid});
        return id;
    }

    // ---- execution -------------------------------------------------------

    int input_id(const std::string& name) const {
        auto it = inputs_.find(name);
        if (it == inputs_.end()) throw domain_error("graph: no input named " + name);
        return it->second;
    }

    void set_input(int id, const tensor& t) {
        node& n = nodes_[id];
        if (n.kind != op::input) throw domain_error("graph: set_input on a non-input node");
        if (t.shape != n.value.shape)
            throw domain_error("graph: input " + n.name + " expects " +
                               shape_string(n.value.shape) + ", got " + shape_string(t.shape));
        n.value.v = t.v;
        mark_fed(id);
    }

    void set_input(int id, const std::vector<double>& flat) {
        node& n = nodes_[id];
        if (n.kind != op::input) throw domain_error("graph: set_input on a non-input node");
        if (flat.size() != n.value.size())
            throw domain_error("graph: input " + n.name + " expects " +
                               std::to_string(n.value.size()) + " values, got " +
                               std::to_string(flat.size()));
        n.value.v = flat;
        mark_fed(id);
    }

    void set_input(const std::string& name, const tensor& t) { set_input(input_id(name), t); }

    void forward() {
        for (std::size_t i = 0; i < input_ids_.size(); ++i)
            if (!fed_[i])
                throw domain_error("graph: input " + nodes_[input_ids_[i]].name + " never fed");
        for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) eval(id);
    }

    // Reverse sweep from a scalar node; overwrites gradients in the shared
    // parameter set.  Parameters that do not reach the target end up with
    // exact zeros.
    void backward(int target) {
        if (target < 0 || target >= static_cast<int>(nodes_.size()))
            throw domain_error("graph: backward target out of range");
        if (!nodes_[target].value.is_scalar())
            throw domain_error("graph: backward target must be scalar, node has shape " +
                               shape_string(nodes_[target].value.shape));
        for (auto& n : nodes_) n.grad.fill(0.0);
        params_->zero_grads();
        nodes_[target].grad.v[0] = 1.0;
        for (int id = target; id >= 0; --id) propagate(id);
        for (const auto& [pid, nid] : param_nodes_) params_->at(pid).grad.v = nodes_[nid].grad.v;
    }

    const tensor& value(int id) const { return nodes_[id].value; }
    const tensor& adjoint(int id) const { return nodes_[id].grad; }
    parameter_set& params() { return *params_; }
    const std::shared_ptr<parameter_set>& params_handle() const { return params_; }
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    int push(op kind, std::vector<int> in, std::vector<int> shape) {
        for (int i : in)
            if (i < 0 || i >= static_cast<int>(nodes_.size()))
                throw domain_error("graph: node input id out of range");
        node n;
        n.kind = kind;
        n.in = std::move(in);
        n.value = tensor(shape);
        n.grad = tensor(std::move(shape));
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const std::vector<int>& shape_of(int id, const char* what) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw domain_error(std::string("graph: bad node id for ") + what);
        return nodes_[id].value.shape;
    }

    domain_error shape_fail(const char* opname, int id, const char* want) const {
        return domain_error(std::string("graph: ") + opname + " node " + std::to_string(id) +
                            " has shape " + shape_string(nodes_[id].value.shape) + ", needs " +
                            want);
    }

    int binary(op kind, int a, int b) {
        const auto& as = shape_of(a, "binary lhs");
        const auto& bs = shape_of(b, "binary rhs");
        const bool a1 = tensor::count(as) == 1, b1 = tensor::count(bs) == 1;
        if (!(as == bs || a1 || b1))
            throw shape_fail("elementwise", b, "matching shapes or a scalar side");
        return push(kind, {a, b}, a1 ? bs : as);
    }

    void mark_fed(int id) {
        for (std::size_t i = 0; i < input_ids_.size(); ++i)
            if (input_ids_[i] == id) fed_[i] = true;
    }

    static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

    void eval(int id);
    void propagate(int id);

    std::vector<node> nodes_;
    std::unordered_map<std::string, int> inputs_;
    std::unordered_map<int, int> param_nodes_;
    std::vector<int> input_ids_;
    std::vector<bool> fed_;
    std::shared_ptr<parameter_set> params_;
};

inline void graph::eval(int id) {
    node& n = nodes_[id];
    const auto in = [&](int k) -> const tensor& { return nodes_[n.in[k]].value; };
    switch (n.kind) {
        case op::input:
        case op::constant:
            break;
        case op::param:
            n.value.v = params_->at(n.a0).value.v;
            break;
        case op::conv_1xk: {
            const tensor& x = in(0);
            const tensor& ker = in(1);
            const tensor& bias = in(2);
            const int f = ker.shape[0], c = ker.shape[1], kw = ker.shape[2];
            const int h = x.shape[1], wo = n.value.shape[2];
            for (int fi = 0; fi < f; ++fi)
                for (int hi = 0; hi < h; ++hi)
                    for (int wi = 0; wi < wo; ++wi) {
                        double acc = bias.v[fi];
                        for (int ci = 0; ci < c; ++ci)
                            for (int ki = 0; ki < kw; ++ki)
                                acc += x.at3(ci, hi, wi + ki) * ker.at3(fi, ci, ki);
                        n.value.at3(fi, hi, wi) = acc;
                    }
            break;
        }
        case op::relu: {
            const auto& x = in(0).v;
            for (std::size_t i = 0; i < x.size(); ++i) n.value.v[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        }
        case op::log_e: {
            const auto& x = in(0).v;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (!(x[i] > 0.0))
                    throw domain_error("graph: log of non-positive value at node " +
                                       std::to_string(id));
                n.value.v[i] = std::log(x[i]);
            }
            break;
        }
        case op::add:
        case op::sub:
        case op::mul:
        case op::divide: {
            const tensor& a = in(0);
            const tensor& b = in(1);
            const bool sa = a.size() == 1 && n.value.size() != 1;
            const bool sb = b.size() == 1 && n.value.size() != 1;
            for (std::size_t i = 0; i < n.value.size(); ++i) {
                const double av = a.v[sa ? 0 : i];
                const double bv = b.v[sb ? 0 : i];
                double r = 0.0;
                switch (n.kind) {
                    case op::add: r = av + bv; break;
                    case op::sub: r = av - bv; break;
                    case op::mul: r = av * bv; break;
                    default:
                        if (bv == 0.0)
                            throw domain_error("graph: division by zero at node " +
                                               std::to_string(id));
                        r = av / bv;
                }
                n.value.v[i] = r;
            }
            break;
        }
        case op::matmul: {
            const tensor& a = in(0);
            const tensor& b = in(1);
            const int ra = a.shape[0], cb = b.shape[1], inner = a.shape[1];
            for (int i = 0; i < ra; ++i)
                for (int j = 0; j < cb; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < inner; ++k) acc += a.at2(i, k) * b.at2(k, j);
                    n.value.at2(i, j) = acc;
                }
            break;
        }
        case op::dot: {
            const auto& a = in(0).v;
            const auto& b = in(1).v;
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
            n.value.v[0] = acc;
            break;
        }
        case op::reduce_sum: {
            double acc = 0.0;
            for (double x : in(0).v) acc += x;
            n.value.v[0] = acc;
            break;
        }
        case op::mean: {
            const double inv = 1.0 / static_cast<double>(n.in.size());
            for (std::size_t i = 0; i < n.value.size(); ++i) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n.in.size(); ++k) acc += nodes_[n.in[k]].value.v[i];
                n.value.v[i] = acc * inv;
            }
            break;
        }
        case op::concat0: {
            std::size_t off = 0;
            for (int src : n.in) {
                const auto& s = nodes_[src].value.v;
                std::copy(s.begin(), s.end(), n.value.v.begin() + off);
                off += s.size();
            }
            break;
        }
        case op::concat1: {
            // Row blocks interleaved per leading index.
            const int lead = n.value.shape[0];
            const std::size_t row = n.value.size() / n.value.shape[0] / n.value.shape[1];
            std::size_t col_off = 0;
            for (int src : n.in) {
                const tensor& s = nodes_[src].value;
                const std::size_t rows_i = s.shape[1];
                const std::size_t chunk = rows_i * row;
                for (int l = 0; l < lead; ++l)
                    std::copy(s.v.begin() + l * chunk, s.v.begin() + (l + 1) * chunk,
                              n.value.v.begin() + l * (n.value.size() / lead) + col_off);
                col_off += chunk;
            }
            break;
        }
        case op::slice0: {
            const tensor& x = in(0);
            const std::size_t stride = x.size() / x.shape[0];
            std::copy(x.v.begin() + n.a0 * stride, x.v.begin() + (n.a0 + n.a1) * stride,
                      n.value.v.begin());
            break;
        }
        case op::reshape:
            n.value.v = in(0).v;
            break;
        case op::pick_column: {
            const tensor& x = in(0);
            for (int c = 0; c < x.shape[0]; ++c) n.value.v[c] = x.at3(c, n.a0, n.a1);
            break;
        }
        case op::softmax: {
            const auto& x = in(0).v;
            double peak = x[0];
            for (double v : x) peak = std::max(peak, v);
            double sum = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                n.value.v[i] = std::exp(x[i] - peak);
                sum += n.value.v[i];
            }
            for (auto& v : n.value.v) v /= sum;
            break;
        }
        case op::rnn_cell: {
            const auto& x = in(0).v;
            const auto& h = in(1).v;
            const tensor& wx = in(2);
            const tensor& wh = in(3);
            const auto& b = in(4).v;
            const int hid = static_cast<int>(h.size());
            for (int i = 0; i < hid; ++i) {
                double acc = b[i];
                for (std::size_t j = 0; j < x.size(); ++j) acc += wx.at2(i, j) * x[j];
                for (int j = 0; j < hid; ++j) acc += wh.at2(i, j) * h[j];
                n.value.v[i] = std::tanh(acc);
            }
            break;
        }
        case op::lstm_cell: {
            const auto& x = in(0).v;
            const tensor& state = in(1);
            const tensor& wx = in(2);
            const tensor& wh = in(3);
            const auto& b = in(4).v;
            const int hid = state.shape[1];
            auto& z = n.aux.v;
            for (int i = 0; i < 4 * hid; ++i) {
                double acc = b[i];
                for (std::size_t j = 0; j < x.size(); ++j) acc += wx.at2(i, j) * x[j];
                for (int j = 0; j < hid; ++j) acc += wh.at2(i, j) * state.at2(0, j);
                z[i] = acc;
            }
            for (int i = 0; i < hid; ++i) {
                const double gi = sigmoid(z[i]);
                const double gf = sigmoid(z[hid + i]);
                const double go = sigmoid(z[2 * hid + i]);
                const double gc = std::tanh(z[3 * hid + i]);
                const double c = gf * state.at2(1, i) + gi * gc;
                n.value.at2(1, i) = c;
                n.value.at2(0, i) = go * std::tanh(c);
            }
            break;
        }
    }
}

inline void graph::propagate(int id) {
    node& n = nodes_[id];
    bool any = false;
    for (double g : n.grad.v)
        if (g != 0.0) {
            any = true;
            break;
        }
    if (!any) return;
    const auto in_v = [&](int k) -> const tensor& { return nodes_[n.in[k]].value; };
    const auto in_g = [&](int k) -> tensor& { return nodes_[n.in[k]].grad; };
    switch (n.kind) {
        case op::input:
        case op::param:
        case op::constant:
            break;
        case op::conv_1xk: {
            const tensor& x = in_v(0);
            const tensor& ker = in_v(1);
            tensor& gx = in_g(0);
            tensor& gk = in_g(1);
            tensor& gb = in_g(2);
            const int f = ker.shape[0], c = ker.shape[1], kw = ker.shape[2];
            const int h = x.shape[1], wo = n.value.shape[2];
            for (int fi = 0; fi < f; ++fi)
                for (int hi = 0; hi < h; ++hi)
                    for (int wi = 0; wi < wo; ++wi) {
                        const double g = n.grad.at3(fi, hi, wi);
                        if (g == 0.0) continue;
                        gb.v[fi] += g;
                        for (int ci = 0; ci < c; ++ci)
                            for (int ki = 0; ki < kw; ++ki) {
                                gx.at3(ci, hi, wi + ki) += g * ker.at3(fi, ci, ki);
                                gk.at3(fi, ci, ki) += g * x.at3(ci, hi, wi + ki);
                            }
                    }
            break;
        }
        case op::relu: {
            const auto& x = in_v(0).v;
            auto& gx = in_g(0).v;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] > 0.0) gx[i] += n.grad.v[i];
            break;
        }
        case op::log_e: {
            const auto& x = in_v(0).v;
            auto& gx = in_g(0).v;
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += n.grad.v[i] / x[i];
            break;
        }
        case op::add:
        case op::sub:
        case op::mul:
        case op::divide: {
            const tensor& a = in_v(0);
            const tensor& b = in_v(1);
            tensor& ga = in_g(0);
            tensor& gb = in_g(1);
            const bool sa = a.size() == 1 && n.value.size() != 1;
            const bool sb = b.size() == 1 && n.value.size() != 1;
            for (std::size_t i = 0; i < n.value.size(); ++i) {
                const double g = n.grad.v[i];
                if (g == 0.0) continue;
                const double av = a.v[sa ? 0 : i];
                const double bv = b.v[sb ? 0 : i];
                switch (n.kind) {
                    case op::add:
                        ga.v[sa ? 0 : i] += g;
                        gb.v[sb ? 0 : i] += g;
                        break;
                    case op::sub:
                        ga.v[sa ? 0 : i] += g;
                        gb.v[sb ? 0 : i] -= g;
                        break;
                    case op::mul:
                        ga.v[sa ? 0 : i] += g * bv;
                        gb.v[sb ? 0 : i] += g * av;
                        break;
                    default:
                        ga.v[sa ? 0 : i] += g / bv;
                        gb.v[sb ? 0 : i] -= g * av / (bv * bv);
                }
            }
            break;
        }
        case op::matmul: {
            const tensor& a = in_v(0);
            const tensor& b = in_v(1);
            tensor& ga = in_g(0);
            tensor& gb = in_g(1);
            const int ra = a.shape[0], cb = b.shape[1], inner = a.shape[1];
            for (int i = 0; i < ra; ++i)
                for (int j = 0; j < cb; ++j) {
                    const double g = n.grad.at2(i, j);
                    if (g == 0.0) continue;
                    for (int k = 0; k < inner; ++k) {
                        ga.at2(i, k) += g * b.at2(k, j);
                        gb.at2(k, j) += g * a.at2(i, k);
                    }
                }
            break;
        }
        case op::dot: {
            const double g = n.grad.v[0];
            const auto& a = in_v(0).v;
            const auto& b = in_v(1).v;
            auto& ga = in_g(0).v;
            auto& gb = in_g(1).v;
            for (std::size_t i = 0; i < a.size(); ++i) {
                ga[i] += g * b[i];
                gb[i] += g * a[i];
            }
            break;
        }
        case op::reduce_sum: {
            const double g = n.grad.v[0];
            for (auto& gx : in_g(0).v) gx += g;
            break;
        }
        case op::mean: {
            const double inv = 1.0 / static_cast<double>(n.in.size());
            for (std::size_t k = 0; k < n.in.size(); ++k) {
                auto& gx = nodes_[n.in[k]].grad.v;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad.v[i] * inv;
            }
            break;
        }
        case op::concat0: {
            std::size_t off = 0;
            for (int src : n.in) {
                auto& gx = nodes_[src].grad.v;
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad.v[off + i];
                off += gx.size();
            }
            break;
        }
        case op::concat1: {
            const int lead = n.value.shape[0];
            const std::size_t row = n.value.size() / n.value.shape[0] / n.value.shape[1];
            std::size_t col_off = 0;
            for (int src : n.in) {
                tensor& gs = nodes_[src].grad;
                const std::size_t chunk = static_cast<std::size_t>(gs.shape[1]) * row;
                for (int l = 0; l < lead; ++l)
                    for (std::size_t i = 0; i < chunk; ++i)
                        gs.v[l * chunk + i] += n.grad.v[l * (n.value.size() / lead) + col_off + i];
                col_off += chunk;
            }
            break;
        }
        case op::slice0: {
            tensor& gx = in_g(0);
            const std::size_t stride = gx.size() / gx.shape[0];
            for (std::size_t i = 0; i < n.value.size(); ++i) gx.v[n.a0 * stride + i] += n.grad.v[i];
            break;
        }
        case op::reshape: {
            auto& gx = in_g(0).v;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad.v[i];
            break;
        }
        case op::pick_column: {
            tensor& gx = in_g(0);
            for (int c = 0; c < gx.shape[0]; ++c) gx.at3(c, n.a0, n.a1) += n.grad.v[c];
            break;
        }
        case op::softmax: {
            const auto& s = n.value.v;
            auto& gx = in_g(0).v;
            double dot_gs = 0.0;
            for (std::size_t i = 0; i < s.size(); ++i) dot_gs += n.grad.v[i] * s[i];
            for (std::size_t i = 0; i < s.size(); ++i) gx[i] += s[i] * (n.grad.v[i] - dot_gs);
            break;
        }
        case op::rnn_cell: {
            const auto& x = in_v(0).v;
            const auto& h = in_v(1).v;
            const tensor& wx = in_v(2);
            const tensor& wh = in_v(3);
            auto& gx = in_g(0).v;
            auto& gh = in_g(1).v;
            tensor& gwx = in_g(2);
            tensor& gwh = in_g(3);
            auto& gb = in_g(4).v;
            const int hid = static_cast<int>(h.size());
            for (int i = 0; i < hid; ++i) {
                const double out = n.value.v[i];
                const double da = n.grad.v[i] * (1.0 - out * out);
                if (da == 0.0) continue;
                gb[i] += da;
                for (std::size_t j = 0; j < x.size(); ++j) {
                    gx[j] += da * wx.at2(i, j);
                    gwx.at2(i, j) += da * x[j];
                }
                for (int j = 0; j < hid; ++j) {
                    gh[j] += da * wh.at2(i, j);
                    gwh.at2(i, j) += da * h[j];
                }
            }
            break;
        }
        case op::lstm_cell: {
            const auto& x = in_v(0).v;
            const tensor& state = in_v(1);
            const tensor& wx = in_v(2);
            const tensor& wh = in_v(3);
            auto& gx = in_g(0).v;
            tensor& gstate = in_g(1);
            tensor& gwx = in_g(2);
            tensor& gwh = in_g(3);
            auto& gb = in_g(4).v;
            const int hid = state.shape[1];
            const auto& z = n.aux.v;
            for (int i = 0; i < hid; ++i) {
                const double gi = sigmoid(z[i]);
                const double gf = sigmoid(z[hid + i]);
                const double go = sigmoid(z[2 * hid + i]);
                const double gc = std::tanh(z[3 * hid + i]);
                const double c = n.value.at2(1, i);
                const double tc = std::tanh(c);
                const double gh_i = n.grad.at2(0, i);
                double gc_i = n.grad.at2(1, i) + gh_i * go * (1.0 - tc * tc);
                const double dzo = gh_i * tc * go * (1.0 - go);
                const double dzi = gc_i * gc * gi * (1.0 - gi);
                const double dzf = gc_i * state.at2(1, i) * gf * (1.0 - gf);
                const double dzg = gc_i * gi * (1.0 - gc * gc);
                gstate.at2(1, i) += gc_i * gf;
                const double dz[4] = {dzi, dzf, dzo, dzg};
                for (int gate = 0; gate < 4; ++gate) {
                    const int r = gate * hid + i;
                    const double d = dz[gate];
                    if (d == 0.0) continue;
                    gb[r] += d;
                    for (std::size_t j = 0; j < x.size(); ++j) {
                        gx[j] += d * wx.at2(r, j);
                        gwx.at2(r, j) += d * x[j];
                    }
                    for (int j = 0; j < hid; ++j) {
                        gstate.at2(0, j) += d * wh.at2(r, j);
                        gwh.at2(r, j) += d * state.at2(0, j);
                    }
                }
            }
            break;
        }
    }
}

}  // namespace folio
