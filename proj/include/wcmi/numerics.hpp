#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>

#include "wcmi/matrix.hpp"

namespace wcmi {

/// Raised when an iterative computation produces a non-finite value; carries
/// enough context (stage, iteration index) to locate the failure.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr double kSqrt2 = 1.4142135623730951;
inline constexpr double kLnSqrtPi = 0.5723649429247001;  // ln Γ(1/2)

/// Lower regularized incomplete gamma P(a,x) by power series; use for x < a+1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - kLnSqrtPi);
}

/// Upper regularized incomplete gamma Q(a,x) by modified Lentz continued
/// fraction; use for x >= a+1.
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-17) break;
    }
    return h * std::exp(-x + a * std::log(x) - kLnSqrtPi);
}

/// erfc(z) for z >= 0 through the incomplete gamma functions. Relative
/// error is near machine epsilon, comfortably inside the documented
/// 1e-12 absolute budget for the normal CDF built on top of it.
inline double erfc_nonneg(double z) {
    if (z == 0.0) return 1.0;
    const double x = z * z;
    if (x < 1.5) return 1.0 - gamma_p_series(0.5, x);
    if (x > 708.0) return 0.0;  // exp underflow floor
    return gamma_q_cf(0.5, x);
}

inline double erfc_own(double z) {
    return z >= 0.0 ? erfc_nonneg(z) : 2.0 - erfc_nonneg(-z);
}

}  // namespace detail

/**
 * Standard normal CDF Φ(x), evaluated by an in-house series / continued
 * fraction routine (absolute error <= 1e-12; in practice ~1e-15) so results
 * do not depend on the platform math library. Throws on non-finite input.
 */
inline double std_normal_cdf(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("std_normal_cdf: non-finite input");
    return 0.5 * detail::erfc_own(-x / detail::kSqrt2);
}

/**
 * Binary entropy H2(theta) in nats, with the 0*log 0 = 0 convention.
 * theta must lie in [0, 1].
 */
inline double binary_entropy(double theta) {
    if (!(theta >= 0.0 && theta <= 1.0))
        throw std::invalid_argument("binary_entropy: theta must be in [0,1]");
    if (theta == 0.0 || theta == 1.0) return 0.0;
    return -theta * std::log(theta) - (1.0 - theta) * std::log(1.0 - theta);
}

/// Joint probability table over finite outcome pairs. Entries must be
/// nonnegative and sum to 1 within 1e-12.
struct DiscreteJoint {
    Matrix table;

    explicit DiscreteJoint(Matrix t) : table(std::move(t)) {
        double sum = 0.0;
        for (double p : table.data()) {
            if (!(p >= 0.0)) throw std::invalid_argument("DiscreteJoint: negative entry");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("DiscreteJoint: entries must sum to 1");
    }
};

/**
 * Exact mutual information of a finite joint distribution, in nats.
 * Zero-probability cells contribute 0. The mathematically nonnegative
 * result is floored at 0 against sub-1e-12 rounding residue.
 */
inline double discrete_mutual_information(const DiscreteJoint& joint) {
    const Matrix& t = joint.table;
    Vec pi(t.rows(), 0.0), pj(t.cols(), 0.0);
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
            pi[i] += t(i, j);
            pj[j] += t(i, j);
        }
    double mi = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
            const double p = t(i, j);
            if (p > 0.0) mi += p * std::log(p / (pi[i] * pj[j]));
        }
    if (mi < 0.0) {
        if (mi < -1e-12) throw std::logic_error("discrete_mutual_information: negative result");
        mi = 0.0;
    }
    return mi;
}

/**
 * An lp perturbation budget: norm exponent p in {2, inf}, radius epsilon,
 * and an optional per-coordinate [lo, hi] domain clamp applied after every
 * ball projection. The dual exponent q is the Hölder conjugate of p.
 */
struct PerturbationBudget {
    double p = 2.0;
    double epsilon = 0.0;
    std::optional<std::array<double, 2>> domain_box;

    PerturbationBudget(double p_, double epsilon_,
                       std::optional<std::array<double, 2>> box = std::nullopt)
        : p(p_), epsilon(epsilon_), domain_box(box) {
        if (!(p == 2.0 || std::isinf(p)))
            throw std::invalid_argument("PerturbationBudget: only p=2 and p=inf are supported");
        if (!(epsilon >= 0.0))
            throw std::invalid_argument("PerturbationBudget: epsilon must be >= 0");
        if (domain_box && !((*domain_box)[0] <= (*domain_box)[1]))
            throw std::invalid_argument("PerturbationBudget: domain box has lo > hi");
    }

    double dual_exponent() const { return std::isinf(p) ? 1.0 : 2.0; }

    static PerturbationBudget l2(double eps,
                                 std::optional<std::array<double, 2>> box = std::nullopt) {
        return {2.0, eps, box};
    }
    static PerturbationBudget linf(double eps,
                                   std::optional<std::array<double, 2>> box = std::nullopt) {
        return {std::numeric_limits<double>::infinity(), eps, box};
    }
};

/// Dual norm ||w||_q of the budget's lp norm: l1 for p=inf, l2 for p=2.
inline double dual_norm(std::span<const double> w, const PerturbationBudget& budget) {
    if (w.empty()) throw std::invalid_argument("dual_norm: empty vector");
    double s = 0.0;
    if (std::isinf(budget.p)) {
        for (double x : w) s += std::fabs(x);
        return s;
    }
    for (double x : w) s += x * x;
    return std::sqrt(s);
}

inline double dual_norm(const Vec& w, const PerturbationBudget& budget) {
    return dual_norm(std::span<const double>(w.data(), w.size()), budget);
}

/**
 * Projects `point` onto the lp ball of radius epsilon around `center`
 * (nearest point in the Euclidean sense), then clamps to the domain box
 * if one is declared. In-place variant over raw coordinate spans.
 */
inline void project_ball_inplace(std::span<double> point, std::span<const double> center,
                                 const PerturbationBudget& budget) {
    if (point.size() != center.size())
        throw std::invalid_argument("project_ball: dimension mismatch");
    const std::size_t d = point.size();
    if (std::isinf(budget.p)) {
        for (std::size_t i = 0; i < d; ++i)
            point[i] = std::clamp(point[i], center[i] - budget.epsilon, center[i] + budget.epsilon);
    } else {
        double n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double di = point[i] - center[i];
            n2 += di * di;
        }
        const double n = std::sqrt(n2);
        if (n > budget.epsilon) {
            const double scale = budget.epsilon / n;
            for (std::size_t i = 0; i < d; ++i)
                point[i] = center[i] + (point[i] - center[i]) * scale;
        }
    }
    if (budget.domain_box) {
        const auto [lo, hi] = *budget.domain_box;
        for (std::size_t i = 0; i < d; ++i) point[i] = std::clamp(point[i], lo, hi);
    }
}

inline Vec project_ball(const Vec& point, const Vec& center, const PerturbationBudget& budget) {
    Vec out = point;
    project_ball_inplace(std::span<double>(out.data(), out.size()),
                         std::span<const double>(center.data(), center.size()), budget);
    return out;
}

/// lp distance between two coordinate spans (p from the budget).
inline double lp_distance(std::span<const double> a, std::span<const double> b,
                          const PerturbationBudget& budget) {
    if (a.size() != b.size()) throw std::invalid_argument("lp_distance: dimension mismatch");
    double s = 0.0;
    if (std::isinf(budget.p)) {
        for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a[i] - b[i]));
        return s;
    }
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace wcmi
