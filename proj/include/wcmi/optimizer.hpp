#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "wcmi/network.hpp"

namespace wcmi {

enum class Direction { ascend, descend };

/**
 * First-order parameter update rule with per-parameter state. `sgd` is the
 * plain gradient step; `adam` is the adaptive-moment rule with the usual
 * (0.9, 0.999, 1e-8) constants. Ascent is implemented by negating the
 * gradient before the update, so ascend on f and descend on -f produce
 * bit-identical parameters.
 */
class Optimizer {
public:
    enum class Rule { sgd, adam };

    Optimizer(Rule rule, double step_size, std::size_t param_count)
        : rule_(rule), step_(step_size), m_(param_count, 0.0), v_(param_count, 0.0) {
        if (!(step_size > 0.0)) throw std::invalid_argument("Optimizer: step size must be > 0");
    }

    static Rule rule_from_name(const std::string& s) {
        if (s == "sgd") return Rule::sgd;
        if (s == "adam") return Rule::adam;
        throw std::invalid_argument("unknown optimizer rule: " + s);
    }

    Rule rule() const { return rule_; }
    double step_size() const { return step_; }
    std::uint64_t steps_taken() const { return t_; }

    /// One update of a raw parameter vector.
    void apply(Vec& params, const Vec& grads, Direction dir) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw std::invalid_argument("Optimizer::apply: gradient/parameter size mismatch");
        ++t_;
        const double sign = (dir == Direction::ascend) ? -1.0 : 1.0;
        if (rule_ == Rule::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step_ * sign * grads[i];
            return;
        }
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, double(t_));
        const double c2 = 1.0 - std::pow(b2, double(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = sign * grads[i];
            m_[i] = b1 * m_[i] + (1.0 - b1) * g;
            v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
            params[i] -= step_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
        }
    }

    /// One update of a network's parameter store from a gradient bundle.
    void apply(Network& net, const GradientBundle& grads, Direction dir) {
        if (grads.param_grads.size() != net.param_count())
            throw std::invalid_argument("Optimizer::apply: bundle not aligned with network");
        apply(net.params(), grads.param_grads, dir);
    }

private:
    Rule rule_;
    double step_;
    Vec m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace wcmi
