#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "accounting.hpp"
#include "checkpoint.hpp"
#include "eiie.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "marketdata.hpp"
#include "optimizer.hpp"
#include "rng.hpp"

namespace folio {

// One stored portfolio vector per period.  Slots start uniform, so early
// training sees a plausible previous portfolio instead of garbage; each
// gradient step overwrites the slots of the batch it trained on.
struct portfolio_memory {
    portfolio_memory(int assets, int periods) : assets_(assets) {
        if (assets < 1 || periods < 1) throw domain_error("portfolio memory: empty dimensions");
        slots_.assign(periods, portfolio_vector::uniform(assets + 1));
    }

    int assets() const { return assets_; }
    int periods() const { return static_cast<int>(slots_.size()); }

    const portfolio_vector& read(int t) const {
        if (t < 0 || t >= periods())
            throw domain_error("portfolio memory: read at t=" + std::to_string(t) +
                               ", have " + std::to_string(periods()) + " periods");
        return slots_[t];
    }

    void write(int t, const portfolio_vector& w) {
        if (t < 0 || t >= periods())
            throw domain_error("portfolio memory: write at t=" + std::to_string(t) +
                               ", have " + std::to_string(periods()) + " periods");
        if (w.assets() != assets_) throw domain_error("portfolio memory: wrong vector length");
        w.validate();
        slots_[t] = w;
    }

    void extend(int periods) {
        if (periods < this->periods())
            throw domain_error("portfolio memory: cannot shrink");
        slots_.resize(periods, portfolio_vector::uniform(assets_ + 1));
    }

    tensor to_tensor() const {
        tensor t({periods(), assets_ + 1});
        for (int i = 0; i < periods(); ++i)
            for (int j = 0; j <= assets_; ++j) t.at2(i, j) = slots_[i][j];
        return t;
    }

  private:
    int assets_;
    std::vector<portfolio_vector> slots_;
};

// Batch starts follow a geometric distribution looking back from t: the
// start t_b = t - n_b - k with P(k) ~ (1 - beta)^k, so recent windows
// dominate but old ones keep showing up.  Draws landing before t_min are
// rejected and redrawn.
inline int sample_batch_start(std::mt19937_64& rng, int t, int n_b, double beta, int t_min = 1) {
    if (n_b < 1) throw config_error("batch sampling: batch size must be positive");
    if (!(beta > 0.0 && beta < 1.0)) throw config_error("batch sampling: bias must sit in (0, 1)");
    if (t_min < 0) throw config_error("batch sampling: t_min must be non-negative");
    if (t - n_b < t_min)
        throw domain_error("batch sampling: no feasible start before t=" + std::to_string(t));
    const double log_keep = std::log1p(-beta);
    for (;;) {
        const double u = uniform01(rng);
        const int k = static_cast<int>(std::floor(std::log1p(-u) / log_keep));
        const int t_b = t - n_b - k;
        if (t_b >= t_min) return t_b;
    }
}

struct trainer_config {
    int batch_size = 50;
    double learning_rate = 3e-5;
    double l2_coefficient = 1e-8;
    double sample_bias = 5e-5;  // beta of the geometric batch sampler
    commission_schedule fees = commission_schedule::flat(0.0025);
    int mu_iterations = 10;  // fixed-point unrolls inside the reward graph
    std::uint64_t seed = 1;

    void validate() const {
        if (batch_size < 1) throw config_error("trainer: batch size must be positive");
        if (!(learning_rate >= 0.0)) throw config_error("trainer: negative learning rate");
        if (!(l2_coefficient >= 0.0)) throw config_error("trainer: negative regularization");
        if (!(sample_bias > 0.0 && sample_bias < 1.0))
            throw config_error("trainer: sample bias must sit in (0, 1)");
        if (mu_iterations < 1) throw config_error("trainer: mu iterations must be positive");
        fees.validate();
    }
};

struct step_stats {
    std::int64_t step = 0;   // 1-based, after the step completes
    int batch_start = 0;     // t_b
    double reward = 0.0;     // mean log return over the batch
    double l2 = 0.0;         // weight penalty value
    double objective = 0.0;  // reward - l2, the ascended quantity
};

// Gradient-ascent trainer over mini-batches of consecutive periods.  The
// batch graph holds batch_size weight-sharing evaluator towers; tower tau
// decides period t_b+tau from the price window ending there plus the stored
// portfolio of t_b+tau-1.  Each of the batch's rewards
//
//   r = ln(mu * (y . w_prev))
//
// uses the freshly computed action as w_prev and the next fresh action (the
// stored one, for the last period) as the rebalancing target inside mu, so
// gradients reach the towers through both the return and the shrinkage.
class trainer {
  public:
    trainer(const market_history& hist, policy_topology topo, trainer_config cfg,
            std::shared_ptr<parameter_set> params)
        : hist_(&hist),
          topo_(topo),
          cfg_(cfg),
          params_(std::move(params)),
          adam_(*params_),
          memory_(topo.assets, hist.slots()),
          g_(params_) {
        topo_.validate();
        cfg_.validate();
        if (hist.assets() != topo_.assets)
            throw config_error("trainer: history has " + std::to_string(hist.assets()) +
                               " assets, topology wants " + std::to_string(topo_.assets));
        if (hist.slots() < t_min() + cfg_.batch_size + 1)
            throw config_error("trainer: history too short for one batch (" +
                               std::to_string(hist.slots()) + " periods)");
        adam_cfg_.learning_rate = cfg_.learning_rate;
        adam_cfg_.ascend = true;
        build_graph();
    }

    // One sampled gradient step using data up to period t inclusive.
    step_stats train_step(int t) {
        if (t >= hist_->slots())
            throw domain_error("train_step: period " + std::to_string(t) + " beyond history");
        auto rng = seeded_engine(cfg_.seed, static_cast<std::uint64_t>(steps_) + 1);
        const int t_b = sample_batch_start(rng, t, cfg_.batch_size, cfg_.sample_bias, t_min());
        return run_batch(t_b);
    }

    // Training on historical data: every step looks at the full range ending
    // at train_end.  Runs until total_steps steps have accumulated, so a
    // resumed trainer picks up exactly where the checkpoint left off.
    void pretrain(int train_end, std::int64_t total_steps,
                  const std::function<void(const step_stats&)>& tap = {}) {
        while (steps_ < total_steps) {
            const step_stats s = train_step(train_end);
            if (tap) tap(s);
        }
    }

    // Rolling refresh once period t's data is known.
    void online_update(int t, int rolling_steps) {
        for (int i = 0; i < rolling_steps; ++i) train_step(t);
    }

    // Objective of the batch starting at t_b under the current parameters.
    // A pure probe: no gradient step, no memory writes, no counters.
    double batch_objective(int t_b) {
        feed_batch(t_b);
        g_.forward();
        return g_.value(objective_).scalar_value();
    }

    // Gradient of that objective for every parameter, in registration order.
    // Optimizer state and memory stay untouched.
    std::vector<tensor> batch_gradient(int t_b) {
        feed_batch(t_b);
        g_.forward();
        g_.backward(objective_);
        std::vector<tensor> out;
        out.reserve(params_->size());
        for (int i = 0; i < params_->size(); ++i) out.push_back(params_->at(i).grad);
        return out;
    }

    const market_history& history() const { return *hist_; }
    const portfolio_memory& memory() const { return memory_; }
    portfolio_memory& memory() { return memory_; }
    const std::shared_ptr<parameter_set>& params() const { return params_; }
    std::int64_t steps() const { return steps_; }
    const trainer_config& config() const { return cfg_; }
    const policy_topology& topology() const { return topo_; }
    int t_min() const { return std::max(1, topo_.window - 1); }

    void save(const std::string& path) const {
        tensor_map out = snapshot_parameters(*params_, "param.");
        for (int i = 0; i < params_->size(); ++i) {
            out.emplace_back("adam.m." + params_->at(i).name, adam_.first_moments()[i]);
            out.emplace_back("adam.v." + params_->at(i).name, adam_.second_moments()[i]);
        }
        out.emplace_back("adam.step", tensor::scalar(static_cast<double>(adam_.steps_taken())));
        out.emplace_back("trainer.step", tensor::scalar(static_cast<double>(steps_)));
        out.emplace_back("pvm", memory_.to_tensor());
        out.emplace_back("meta", meta_tensor());
        write_tensor_file(path, out);
    }

    void load(const std::string& path) {
        const tensor_map in = read_tensor_file(path);
        const tensor* meta = find_tensor(in, "meta");
        if (!meta) throw parse_error("checkpoint: missing meta record");
        const tensor want = meta_tensor();
        if (meta->v != want.v)
            throw parse_error("checkpoint: topology in " + path +
                              " does not match this trainer");
        restore_parameters(*params_, in, "param.");
        for (int i = 0; i < params_->size(); ++i) {
            const std::string& name = params_->at(i).name;
            adam_.first_moments()[i] = required(in, "adam.m." + name, params_->at(i).value.shape);
            adam_.second_moments()[i] = required(in, "adam.v." + name, params_->at(i).value.shape);
        }
        adam_.set_steps(scalar_field(in, "adam.step"));
        steps_ = scalar_field(in, "trainer.step");
        const tensor* pvm = find_tensor(in, "pvm");
        if (!pvm || pvm->shape.size() != 2 || pvm->shape[1] != topo_.assets + 1)
            throw parse_error("checkpoint: portfolio memory record is missing or misshapen");
        if (pvm->shape[0] > memory_.periods())
            throw parse_error("checkpoint: memory covers " + std::to_string(pvm->shape[0]) +
                              " periods, history only " + std::to_string(memory_.periods()));
        for (int i = 0; i < pvm->shape[0]; ++i) {
            portfolio_vector w;
            w.w.assign(pvm->v.begin() + static_cast<std::ptrdiff_t>(i) * (topo_.assets + 1),
                       pvm->v.begin() + static_cast<std::ptrdiff_t>(i + 1) * (topo_.assets + 1));
            memory_.write(i, w);
        }
    }

  private:
    tensor meta_tensor() const {
        tensor t({8});
        t.v = {static_cast<double>(static_cast<int>(topo_.kind)),
               static_cast<double>(topo_.assets),
               static_cast<double>(topo_.window),
               static_cast<double>(topo_.conv1_maps),
               static_cast<double>(topo_.conv1_width),
               static_cast<double>(topo_.conv2_maps),
               static_cast<double>(topo_.hidden),
               static_cast<double>(cfg_.batch_size)};
        return t;
    }

    static tensor required(const tensor_map& in, const std::string& name,
                           const std::vector<int>& shape) {
        const tensor* t = find_tensor(in, name);
        if (!t) throw parse_error("checkpoint: missing record " + name);
        if (t->shape != shape)
            throw parse_error("checkpoint: record " + name + " has shape " +
                              shape_string(t->shape) + ", expected " + shape_string(shape));
        return *t;
    }

    static std::int64_t scalar_field(const tensor_map& in, const std::string& name) {
        const tensor* t = find_tensor(in, name);
        if (!t || !t->is_scalar()) throw parse_error("checkpoint: missing counter " + name);
        return static_cast<std::int64_t>(t->scalar_value());
    }

    // The mu solver unrolled as graph nodes, kept numerically identical to
    // solve_mu with fixed iterations: same seed, same per-iteration
    // arithmetic, same summation order.
    int unrolled_mu(int target, int evolved, int one, int cp, int kfac, int cbar) {
        const int m = topo_.assets;
        const int tt = g_.slice(target, 1, m);
        const int et = g_.slice(evolved, 1, m);
        const int t0 = g_.slice(target, 0, 1);
        const int e0 = g_.slice(evolved, 0, 1);
        const int turnover =
            g_.reduce_sum(g_.add(g_.relu(g_.sub(et, tt)), g_.relu(g_.sub(tt, et))));
        int mu = g_.mul(cbar, turnover);
        const int numerator_base = g_.sub(one, g_.mul(cp, e0));
        const int denominator = g_.sub(one, g_.mul(cp, t0));
        for (int i = 0; i < cfg_.mu_iterations; ++i) {
            const int sold = g_.reduce_sum(g_.relu(g_.sub(et, g_.mul(mu, tt))));
            mu = g_.divide(g_.sub(numerator_base, g_.mul(kfac, sold)), denominator);
        }
        return mu;
    }

    void build_graph() {
        const int m = topo_.assets;
        const int n = topo_.window;
        const int nb = cfg_.batch_size;
        x_in_.reserve(nb);
        wprev_in_.reserve(nb);
        y_in_.reserve(nb);
        actions_.reserve(nb);
        for (int tau = 0; tau < nb; ++tau) {
            x_in_.push_back(g_.input("x" + std::to_string(tau), {3, m, n}));
            wprev_in_.push_back(g_.input("wprev" + std::to_string(tau), {m}));
        }
        for (int sigma = 1; sigma <= nb; ++sigma)
            y_in_.push_back(g_.input("y" + std::to_string(sigma), {m + 1}));
        wfinal_in_ = g_.input("w_final", {m + 1});
        for (int tau = 0; tau < nb; ++tau)
            actions_.push_back(build_policy_tower(g_, topo_, x_in_[tau], wprev_in_[tau]).weights);

        const int one = g_.constant(1.0);
        const int cp = g_.constant(cfg_.fees.purchase_rate);
        const int kfac = g_.constant(cfg_.fees.sell_rate + cfg_.fees.purchase_rate -
                                     cfg_.fees.sell_rate * cfg_.fees.purchase_rate);
        const int cbar = g_.constant(0.5 * (cfg_.fees.sell_rate + cfg_.fees.purchase_rate));

        std::vector<int> rewards;
        rewards.reserve(nb);
        for (int sigma = 1; sigma <= nb; ++sigma) {
            const int prev = actions_[sigma - 1];
            const int y = y_in_[sigma - 1];
            const int growth = g_.dot(y, prev);
            const int evolved = g_.divide(g_.mul(y, prev), growth);
            const int target = sigma < nb ? actions_[sigma] : wfinal_in_;
            const int mu = unrolled_mu(target, evolved, one, cp, kfac, cbar);
            rewards.push_back(g_.log_e(g_.mul(mu, growth)));
        }
        reward_ = g_.mean(rewards);

        int l2_sum = -1;
        for (int i = 0; i < params_->size(); ++i) {
            if (!params_->at(i).weight) continue;
            const int p = g_.param(params_->at(i).name);
            const int sq = g_.reduce_sum(g_.mul(p, p));
            l2_sum = l2_sum < 0 ? sq : g_.add(l2_sum, sq);
        }
        l2_ = l2_sum < 0 ? g_.constant(0.0)
                         : g_.mul(g_.constant(cfg_.l2_coefficient), l2_sum);
        objective_ = g_.sub(reward_, l2_);
    }

    void feed_batch(int t_b) {
        const int nb = cfg_.batch_size;
        const int m = topo_.assets;
        for (int tau = 0; tau < nb; ++tau) {
            g_.set_input(x_in_[tau], hist_->window(t_b + tau, topo_.window).x);
            const portfolio_vector& prev = memory_.read(t_b + tau - 1);
            tensor wp({m});
            for (int i = 0; i < m; ++i) wp.v[i] = prev[i + 1];
            g_.set_input(wprev_in_[tau], wp);
        }
        for (int sigma = 1; sigma <= nb; ++sigma)
            g_.set_input(y_in_[sigma - 1], hist_->relatives(t_b + sigma));
        g_.set_input(wfinal_in_, memory_.read(t_b + nb).w);
    }

    step_stats run_batch(int t_b) {
        const int nb = cfg_.batch_size;
        feed_batch(t_b);
        g_.forward();
        step_stats s;
        s.batch_start = t_b;
        s.reward = g_.value(reward_).scalar_value();
        s.l2 = g_.value(l2_).scalar_value();
        s.objective = g_.value(objective_).scalar_value();
        if (!std::isfinite(s.objective))
            throw domain_error("train_step: objective not finite at step " +
                               std::to_string(steps_ + 1) + ", batch start " +
                               std::to_string(t_b));
        g_.backward(objective_);
        adam_.step(*params_, adam_cfg_);
        for (int tau = 0; tau < nb; ++tau)
            memory_.write(t_b + tau, portfolio_vector(g_.value(actions_[tau]).v));
        s.step = ++steps_;
        return s;
    }

    const market_history* hist_;
    policy_topology topo_;
    trainer_config cfg_;
    std::shared_ptr<parameter_set> params_;
    adam_state adam_;
    adam_config adam_cfg_;
    portfolio_memory memory_;
    graph g_;
    std::vector<int> x_in_, wprev_in_, y_in_, actions_;
    int wfinal_in_ = -1;
    int reward_ = -1, l2_ = -1, objective_ = -1;
    std::int64_t steps_ = 0;
};

}  // namespace folio
