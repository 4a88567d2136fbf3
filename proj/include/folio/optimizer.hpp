#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "graph.hpp"
#include "tensor.hpp"

namespace folio {

struct adam_config {
    double learning_rate = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool ascend = true;  // gradient ascent on a reward objective
};

// First/second moment accumulators, one pair per parameter, plus the shared
// step counter used for bias correction.
class adam_state {
public:
    adam_state() = default;

    explicit adam_state(const parameter_set& params) {
        for (int i = 0; i < params.size(); ++i) {
            m_.emplace_back(params.at(i).value.shape);
            v_.emplace_back(params.at(i).value.shape);
        }
    }

    void step(parameter_set& params, const adam_config& cfg) {
        if (static_cast<int>(m_.size()) != params.size())
            throw domain_error("adam_state: built for a different parameter set");
        ++steps_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_));
        const double sign = cfg.ascend ? 1.0 : -1.0;
        for (int p = 0; p < params.size(); ++p) {
            parameter& par = params.at(p);
            auto& m = m_[p].v;
            auto& v = v_[p].v;
            for (std::size_t i = 0; i < par.value.size(); ++i) {
                const double g = par.grad.v[i];
                if (!std::isfinite(g))
                    throw domain_error("adam_state: non-finite gradient in parameter " + par.name);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                par.value.v[i] += sign * cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
            }
        }
    }

    std::int64_t steps_taken() const { return steps_; }

    // Checkpoint access.
    std::vector<tensor>& first_moments() { return m_; }
    std::vector<tensor>& second_moments() { return v_; }
    const std::vector<tensor>& first_moments() const { return m_; }
    const std::vector<tensor>& second_moments() const { return v_; }
    void set_steps(std::int64_t s) { steps_ = s; }

private:
    std::vector<tensor> m_, v_;
    std::int64_t steps_ = 0;
};

}  // namespace folio
