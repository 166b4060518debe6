#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include "wcmi/matrix.hpp"
#include "wcmi/network.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/rng.hpp"

namespace wcmi::gmm {

namespace detail {

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
inline Matrix cholesky_lower(const Matrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t d = a.rows();
    Matrix L(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= L(i, k) * L(j, k);
            if (i == j) {
                if (!(sum > 0.0))
                    throw std::invalid_argument("cholesky: matrix not positive definite");
                L(i, j) = std::sqrt(sum);
            } else {
                L(i, j) = sum / L(j, j);
            }
        }
    }
    return L;
}

}  // namespace detail

/**
 * Two-component symmetric Gaussian mixture: y uniform on {-1,+1},
 * x ~ N(y * theta_star, sigma_star). The Cholesky factor of sigma_star is
 * computed once at construction and cached for sampling.
 */
struct GaussianMixtureSpec {
    Vec theta_star;
    Matrix sigma_star;
    Matrix chol;  // lower factor, cached

    GaussianMixtureSpec(Vec theta, Matrix sigma)
        : theta_star(std::move(theta)), sigma_star(std::move(sigma)) {
        const std::size_t d = theta_star.size();
        if (d == 0) throw std::invalid_argument("GaussianMixtureSpec: empty mean");
        if (sigma_star.rows() != d || sigma_star.cols() != d)
            throw std::invalid_argument("GaussianMixtureSpec: covariance shape mismatch");
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j)
                if (std::fabs(sigma_star(i, j) - sigma_star(j, i)) > 1e-12)
                    throw std::invalid_argument("GaussianMixtureSpec: covariance not symmetric");
        chol = detail::cholesky_lower(sigma_star);
    }

    static GaussianMixtureSpec isotropic(Vec theta, double variance) {
        const std::size_t d = theta.size();
        Matrix sigma(d, d);
        for (std::size_t i = 0; i < d; ++i) sigma(i, i) = variance;
        return {std::move(theta), std::move(sigma)};
    }

    std::size_t dim() const { return theta_star.size(); }
};

/// Unit-norm linear direction; the induced feature is the sign of w.x.
struct LinearSignFeature {
    Vec w;

    explicit LinearSignFeature(Vec w_) : w(std::move(w_)) {
        if (w.empty()) throw std::invalid_argument("LinearSignFeature: empty direction");
        if (std::fabs(l2_norm(w) - 1.0) > 1e-9)
            throw std::invalid_argument("LinearSignFeature: direction must have unit l2 norm");
    }

    static LinearSignFeature normalized(Vec v) {
        const double n = l2_norm(v);
        if (!(n > 0.0)) throw std::invalid_argument("LinearSignFeature: zero direction");
        for (double& x : v) x /= n;
        return LinearSignFeature(std::move(v));
    }
};

/// Closed-form analysis of one (mixture, feature, budget) triple.
struct GmmReport {
    double risk = 0.0;         // standard risk of the better sign head
    double adv_risk_h1 = 0.0;  // adversarial risk of head sgn(w.x)
    double adv_risk_h2 = 0.0;  // adversarial risk of head -sgn(w.x)
    double adv_gap_opt = 0.0;  // adversarial gap of the better head
    double p_int = 0.0;        // mixture mass within eps-dual reach of the boundary
    double rv_closed_form = 0.0;
    double sandwich_lower = 0.0;  // entropy envelope from half the gap
    double sandwich_upper = 0.0;  // entropy envelope from the full gap
    bool envelope_holds = false;
    bool gap_sandwich_holds = false;  // gap <= p_int <= 2 * gap
    std::string chosen_head;          // "h1" when w.theta >= 0, else "h2"
};

/**
 * Evaluates every closed form at once. With m = w.theta, s = sqrt(w.Sigma.w)
 * and eq = epsilon * dual_norm(w):
 *   risk(h1) = Phi(-m/s), adv_risk(h1) = Phi((eq - m)/s) (h2 mirrors in -m),
 *   p_int    = Phi((m + eq)/s) - Phi((m - eq)/s),
 *   rv       = H2(1/2) - H2(1/2 - p_int/2).
 * The envelope brackets rv by the same entropy drop evaluated at gap/2 and
 * at the full gap; both orderings are reported and containment is checked
 * against the interval they span.
 */
inline GmmReport analyze(const GaussianMixtureSpec& spec, const LinearSignFeature& feature,
                         const PerturbationBudget& budget) {
    if (feature.w.size() != spec.dim())
        throw std::invalid_argument("analyze: feature dimension mismatch");
    const std::size_t d = spec.dim();
    const double m = dot(feature.w, spec.theta_star);
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            quad += feature.w[i] * spec.sigma_star(i, j) * feature.w[j];
    if (!(quad > 0.0)) throw std::invalid_argument("analyze: degenerate feature variance");
    const double s = std::sqrt(quad);
    const double eq = budget.epsilon * dual_norm(feature.w, budget);

    GmmReport r;
    r.chosen_head = (m >= 0.0) ? "h1" : "h2";
    r.adv_risk_h1 = std_normal_cdf((eq - m) / s);
    r.adv_risk_h2 = std_normal_cdf((eq + m) / s);
    const double mm = std::fabs(m);  // the better head sees the positive margin
    r.risk = std_normal_cdf(-mm / s);
    r.adv_gap_opt = std_normal_cdf(mm / s) - std_normal_cdf((mm - eq) / s);
    r.p_int = std_normal_cdf((mm + eq) / s) - std_normal_cdf((mm - eq) / s);

    const double half = 0.5;
    auto entropy_drop = [&](double shift) {
        // gaps above one half pin the envelope at the entropy maximum
        const double arg = std::clamp(half - shift, 0.0, 1.0);
        return binary_entropy(half) - binary_entropy(arg);
    };
    r.rv_closed_form = entropy_drop(0.5 * r.p_int);
    r.sandwich_lower = entropy_drop(0.5 * r.adv_gap_opt);
    r.sandwich_upper = entropy_drop(r.adv_gap_opt);
    if (r.sandwich_lower > r.sandwich_upper) std::swap(r.sandwich_lower, r.sandwich_upper);
    r.envelope_holds = (r.rv_closed_form >= r.sandwich_lower - 1e-12) &&
                       (r.rv_closed_form <= r.sandwich_upper + 1e-12);
    r.gap_sandwich_holds =
        (r.adv_gap_opt <= r.p_int + 1e-12) && (r.p_int <= 2.0 * r.adv_gap_opt + 1e-12);
    return r;
}

/// Risk fields only (standard and adversarial risks plus the gap).
inline GmmReport closed_form_risks(const GaussianMixtureSpec& spec,
                                   const LinearSignFeature& feature,
                                   const PerturbationBudget& budget) {
    return analyze(spec, feature, budget);
}

/// (p_int, representation vulnerability) of the sign feature.
inline std::pair<double, double> closed_form_rv(const GaussianMixtureSpec& spec,
                                                const LinearSignFeature& feature,
                                                const PerturbationBudget& budget) {
    const GmmReport r = analyze(spec, feature, budget);
    return {r.p_int, r.rv_closed_form};
}

/// Envelope view: lower/upper entropy bounds around the closed-form rv.
struct EnvelopeReport {
    double lower = 0.0, rv = 0.0, upper = 0.0;
    bool holds = false;           // rv inside [lower, upper]
    bool gap_sandwich = false;    // gap <= p_int <= 2 gap
};

inline EnvelopeReport vulnerability_envelope(const GaussianMixtureSpec& spec,
                                             const LinearSignFeature& feature,
                                             const PerturbationBudget& budget) {
    const GmmReport r = analyze(spec, feature, budget);
    return {r.sandwich_lower, r.rv_closed_form, r.sandwich_upper, r.envelope_holds,
            r.gap_sandwich_holds};
}

/**
 * Draws n labeled samples: label uniform on {-1,+1}, row = label * theta
 * plus the Cholesky factor applied to a standard normal vector.
 */
inline SampleBatch sample_gmm(const GaussianMixtureSpec& spec, std::size_t n, SeededRng& rng) {
    if (n == 0) throw std::invalid_argument("sample_gmm: need n >= 1");
    const std::size_t d = spec.dim();
    Matrix rows(n, d);
    std::vector<int> labels(n);
    Vec z(d);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = rng.uniform01() < 0.5 ? 1 : -1;
        labels[i] = y;
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
        double* row = rows.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = y * spec.theta_star[j];
            for (std::size_t k = 0; k <= j; ++k) acc += spec.chol(j, k) * z[k];
            row[j] = acc;
        }
    }
    return {std::move(rows), std::move(labels)};
}

/// Monte Carlo estimates next to their closed forms, with absolute deviations.
struct McReport {
    std::size_t n = 0;
    double mc_risk = 0.0, mc_adv_risk = 0.0, mc_p_int = 0.0, mc_rv = 0.0;
    double dev_risk = 0.0, dev_adv_risk = 0.0, dev_p_int = 0.0, dev_rv = 0.0;
    GmmReport closed;
};

/**
 * Independent sampling oracle for the closed forms. Risks use per-sample
 * flip feasibility (a point errs adversarially iff some in-budget shift
 * crosses the decision boundary, i.e. label * w.x <= eq). p_int counts
 * |w.x| <= eq. rv transports every sample by the dual-optimal shift
 * (epsilon * w / ||w||2 for p=2, epsilon * sign(w) for p=inf) and measures
 * the drop in empirical sign-output entropy.
 */
inline McReport monte_carlo_verify(const GaussianMixtureSpec& spec,
                                   const LinearSignFeature& feature,
                                   const PerturbationBudget& budget, std::size_t n,
                                   SeededRng& rng) {
    if (n < 10000) throw std::invalid_argument("monte_carlo_verify: need n >= 10^4");
    McReport rep;
    rep.n = n;
    rep.closed = analyze(spec, feature, budget);
    const double eq = budget.epsilon * dual_norm(feature.w, budget);
    const bool head_h1 = rep.closed.chosen_head == "h1";

    const SampleBatch batch = sample_gmm(spec, n, rng);
    std::size_t errs = 0, adv_errs = 0, near = 0, clean_pos = 0, shifted_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = dot_row(batch.rows, i, feature.w);
        const int y = batch.labels[i];
        // h1 predicts sign(w.x), h2 its negation; ties at 0 go to the h1-positive side
        const int pred = (t >= 0.0 ? 1 : -1) * (head_h1 ? 1 : -1);
        if (pred != y) ++errs;
        // flip feasibility: in-budget shifts move w.x by at most eq, so the
        // indicator below reduces exactly to the clean one when eq == 0
        const bool adv_err = head_h1 ? (y == 1 ? t < eq : t >= -eq)   //
                                     : (y == 1 ? t >= -eq : t < eq);  //
        if (adv_err) ++adv_errs;
        if (std::fabs(t) <= eq) ++near;
        if (t >= 0.0) ++clean_pos;
        if (t - eq >= 0.0) ++shifted_pos;
    }
    rep.mc_risk = double(errs) / double(n);
    rep.mc_adv_risk = double(adv_errs) / double(n);
    rep.mc_p_int = double(near) / double(n);
    rep.mc_rv = binary_entropy(double(clean_pos) / double(n)) -
                binary_entropy(double(shifted_pos) / double(n));

    const double closed_adv = head_h1 ? rep.closed.adv_risk_h1 : rep.closed.adv_risk_h2;
    rep.dev_risk = std::fabs(rep.mc_risk - rep.closed.risk);
    rep.dev_adv_risk = std::fabs(rep.mc_adv_risk - closed_adv);
    rep.dev_p_int = std::fabs(rep.mc_p_int - rep.closed.p_int);
    rep.dev_rv = std::fabs(rep.mc_rv - rep.closed.rv_closed_form);
    return rep;
}

/// Frozen steep-slope surrogate for the sign of w.x: tanh(slope * w.x).
/// Differentiable, so projected-gradient attacks can pass through it.
inline Network sign_surrogate(const LinearSignFeature& feature, double slope = 50.0) {
    Matrix W(1, feature.w.size());
    for (std::size_t j = 0; j < feature.w.size(); ++j) W(0, j) = slope * feature.w[j];
    Network net = Network::linear(W, {0.0});
    net.append_activation(LayerKind::tanh);
    return net;
}

}  // namespace wcmi::gmm
