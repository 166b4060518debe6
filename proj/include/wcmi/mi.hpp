#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wcmi/matrix.hpp"
#include "wcmi/network.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/optimizer.hpp"
#include "wcmi/rng.hpp"

namespace wcmi::mi {

/**
 * Negative-sampling plan: row i of a batch is paired with the feature rows
 * listed in its index list (length n_negatives, drawn without replacement,
 * excluding i itself whenever the batch allows it).
 */
struct PairingScheme {
    std::size_t batch_size = 0;
    std::size_t n_negatives = 0;
    std::vector<std::size_t> idx;  // flattened batch_size x n_negatives

    std::size_t at(std::size_t i, std::size_t j) const { return idx[i * n_negatives + j]; }

    static PairingScheme sample(std::size_t batch, std::size_t negatives, SeededRng& rng) {
        if (batch == 0) throw std::invalid_argument("PairingScheme: empty batch");
        if (negatives == 0 || negatives > batch)
            throw std::invalid_argument("PairingScheme: need 1 <= negatives <= batch");
        PairingScheme p;
        p.batch_size = batch;
        p.n_negatives = negatives;
        p.idx.reserve(batch * negatives);
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < batch; ++i) {
            pool.clear();
            for (std::size_t k = 0; k < batch; ++k)
                if (k != i || negatives == batch) pool.push_back(k);
            // partial Fisher-Yates over the candidate pool
            for (std::size_t j = 0; j < negatives; ++j) {
                const std::size_t pick = j + rng.below(pool.size() - j);
                std::swap(pool[j], pool[pick]);
                p.idx.push_back(pool[j]);
            }
        }
        return p;
    }
};

/// Projected-gradient search hyperparameters (iterations, step, ball).
struct AttackConfig {
    std::size_t steps = 10;
    double step_size = 0.1;
    PerturbationBudget budget{2.0, 0.0};

    AttackConfig(std::size_t steps_, double step_size_, PerturbationBudget budget_)
        : steps(steps_), step_size(step_size_), budget(std::move(budget_)) {
        if (!(step_size > 0.0)) throw std::invalid_argument("AttackConfig: step size must be > 0");
    }
};

/// Estimator hyperparameters shared by the standard and worst-case paths.
struct EstimatorConfig {
    std::size_t epochs = 300;           // critic training epochs
    double step_size = 1e-3;            // critic learning rate
    std::size_t batch_size = 128;       // rows per training batch
    std::size_t negatives = 16;         // negative samples per row
    std::size_t test_batches = 10;      // disjoint evaluation mini-batches
    std::vector<std::size_t> critic_hidden{64, 64};
    Optimizer::Rule rule = Optimizer::Rule::adam;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("EstimatorConfig: epochs must be >= 1");
        if (test_batches < 1)
            throw std::invalid_argument("EstimatorConfig: test_batches must be >= 1");
        if (negatives < 1 || negatives > batch_size)
            throw std::invalid_argument("EstimatorConfig: need 1 <= negatives <= batch_size");
        if (!(step_size > 0.0))
            throw std::invalid_argument("EstimatorConfig: step size must be > 0");
    }
};

/// Gradients of the estimation objective with respect to everything that can
/// move: critic parameters, encoder parameters, and raw input coordinates.
struct DvGradients {
    double value = 0.0;
    Vec critic_grads;
    Vec encoder_grads;
    Matrix input_grads;
};

namespace detail {

struct Scores {
    Vec joint;     // batch_size critic scores on matched pairs
    Vec negative;  // batch_size * n_negatives scores on mismatched pairs
    double j = 0.0;
    double lse = 0.0;   // log of the mean exponentiated negative score
    double zmax = 0.0;  // shift used inside the log-sum-exp
};

inline Matrix joint_input(const Matrix& x, const Matrix& z) { return hcat(x, z); }

inline Matrix negative_input(const Matrix& x, const Matrix& z, const PairingScheme& p) {
    const std::size_t b = p.batch_size, n = p.n_negatives;
    Matrix out(b * n, x.cols() + z.cols());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double* row = out.row(i * n + j);
            std::copy(x.row(i), x.row(i) + x.cols(), row);
            const std::size_t zi = p.at(i, j);
            std::copy(z.row(zi), z.row(zi) + z.cols(), row + x.cols());
        }
    return out;
}

/**
 * Donsker-Varadhan value with negative sampling:
 *   J = mean_i T(x_i, z_i) - log( mean_{i,j} exp T(x_i, z_{pi(i,j)}) ).
 * Exponentials are max-shifted, so J is finite whenever the scores are.
 */
inline Scores dv_scores(const Network& critic, const Matrix& x, const Matrix& z,
                        const PairingScheme& p) {
    if (p.batch_size != x.rows() || z.rows() != x.rows())
        throw std::invalid_argument("dv_scores: pairing not sized to the batch");
    Scores s;
    const Matrix joint = critic.forward(joint_input(x, z));
    const Matrix neg = critic.forward(negative_input(x, z, p));
    s.joint.resize(joint.rows());
    for (std::size_t i = 0; i < joint.rows(); ++i) s.joint[i] = joint(i, 0);
    s.negative.resize(neg.rows());
    for (std::size_t i = 0; i < neg.rows(); ++i) s.negative[i] = neg(i, 0);

    double mean_joint = 0.0;
    for (double v : s.joint) mean_joint += v;
    mean_joint /= double(s.joint.size());

    s.zmax = *std::max_element(s.negative.begin(), s.negative.end());
    double acc = 0.0;
    for (double v : s.negative) acc += std::exp(v - s.zmax);
    s.lse = s.zmax + std::log(acc / double(s.negative.size()));
    s.j = mean_joint - s.lse;
    return s;
}

}  // namespace detail

/// Objective value only (no gradients); z supplied explicitly.
inline double dv_value_pairs(const Network& critic, const Matrix& x, const Matrix& z,
                             const PairingScheme& pairing) {
    return detail::dv_scores(critic, x, z, pairing).j;
}

/// Objective value only; features come from the encoder.
inline double dv_value(const Network& critic, const Network& encoder, const Matrix& inputs,
                       const PairingScheme& pairing) {
    return dv_value_pairs(critic, inputs, encoder.forward(inputs), pairing);
}

/**
 * Full gradient evaluation. The joint term receives cotangent 1/B per row;
 * the negative term receives minus its softmax weights, which is exact for
 * the log of the batch mean. Feature cotangents accumulate across every
 * appearance of a row (once as a matched pair, many times as a negative),
 * then flow through the encoder when one is given.
 */
inline DvGradients dv_objective_pairs(const Network& critic, const Matrix& x, const Matrix& z,
                                      const PairingScheme& pairing,
                                      const Network* encoder = nullptr,
                                      const Matrix* raw_inputs = nullptr) {
    const detail::Scores s = detail::dv_scores(critic, x, z, pairing);
    if (!std::isfinite(s.j)) throw NumericError("dv objective is not finite");
    const std::size_t b = pairing.batch_size, n = pairing.n_negatives;
    const std::size_t dx = x.cols(), dz = z.cols();

    const Matrix joint = detail::joint_input(x, z);
    Matrix cot_joint(b, 1);
    for (std::size_t i = 0; i < b; ++i) cot_joint(i, 0) = 1.0 / double(b);
    const GradientBundle gj = critic.backward(joint, cot_joint);

    const Matrix neg = detail::negative_input(x, z, pairing);
    double norm = 0.0;
    for (double v : s.negative) norm += std::exp(v - s.zmax);
    Matrix cot_neg(b * n, 1);
    for (std::size_t i = 0; i < b * n; ++i)
        cot_neg(i, 0) = -std::exp(s.negative[i] - s.zmax) / norm;
    const GradientBundle gn = critic.backward(neg, cot_neg);

    DvGradients out;
    out.value = s.j;
    out.critic_grads = gj.param_grads;
    for (std::size_t i = 0; i < out.critic_grads.size(); ++i)
        out.critic_grads[i] += gn.param_grads[i];

    // split critic input gradients into x slots and feature slots
    Matrix dx_direct(b, dx);
    Matrix dz_total(b, dz);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t c = 0; c < dx; ++c) dx_direct(i, c) = gj.input_grads(i, c);
        for (std::size_t c = 0; c < dz; ++c) dz_total(i, c) = gj.input_grads(i, dx + c);
    }
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t r = i * n + j;
            const std::size_t zi = pairing.at(i, j);
            for (std::size_t c = 0; c < dx; ++c) dx_direct(i, c) += gn.input_grads(r, c);
            for (std::size_t c = 0; c < dz; ++c) dz_total(zi, c) += gn.input_grads(r, dx + c);
        }

    if (encoder) {
        const GradientBundle ge = encoder->backward(*raw_inputs, dz_total);
        out.encoder_grads = ge.param_grads;
        out.input_grads = Matrix(b, dx);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t c = 0; c < dx; ++c)
                out.input_grads(i, c) = dx_direct(i, c) + ge.input_grads(i, c);
    } else {
        out.input_grads = std::move(dx_direct);
    }
    return out;
}

/// Gradient evaluation in encoder mode: z = encoder(inputs).
inline DvGradients dv_objective(const Network& critic, const Network& encoder,
                                const Matrix& inputs, const PairingScheme& pairing) {
    return dv_objective_pairs(critic, inputs, encoder.forward(inputs), pairing, &encoder, &inputs);
}

/// Outcome of the projected-gradient search over input perturbations.
struct AttackResult {
    Matrix perturbed;   // best-iterate rows, every one inside its ball
    double v1 = 0.0;    // objective at the returned perturbation
    Vec critic_grads;   // objective gradient for the critic there
    Vec encoder_grads;  // and for the encoder (used by min-max training)
};

/**
 * Simultaneous per-row projected gradient descent on the estimation
 * objective: S rounds of x' <- project(x' - step * grad). Tracks the
 * minimum-objective iterate, iterate 0 included, so the returned value never
 * exceeds the clean objective. Zero steps or a zero radius return the clean
 * batch.
 */
inline AttackResult worst_case_perturb(const Matrix& batch, const Network& encoder,
                                       const Network& critic, const PairingScheme& pairing,
                                       const AttackConfig& attack) {
    AttackResult best;
    DvGradients g = dv_objective(critic, encoder, batch, pairing);
    best.perturbed = batch;
    best.v1 = g.value;
    best.critic_grads = g.critic_grads;
    best.encoder_grads = g.encoder_grads;
    if (attack.steps == 0 || attack.budget.epsilon == 0.0) return best;

    Matrix cur = batch;
    const std::size_t d = batch.cols();
    for (std::size_t s = 0; s < attack.steps; ++s) {
        for (std::size_t r = 0; r < cur.rows(); ++r) {
            double* row = cur.row(r);
            for (std::size_t c = 0; c < d; ++c)
                row[c] -= attack.step_size * g.input_grads(r, c);
            project_ball_inplace(std::span<double>(row, d),
                                 std::span<const double>(batch.row(r), d), attack.budget);
        }
        g = dv_objective(critic, encoder, cur, pairing);
        if (g.value < best.v1) {
            best.perturbed = cur;
            best.v1 = g.value;
            best.critic_grads = g.critic_grads;
            best.encoder_grads = g.encoder_grads;
        }
    }
    return best;
}

/// A point estimate, the per-epoch objective history behind it, and the
/// critic snapshot that produced the estimate (useful for saliency maps).
struct MiEstimate {
    double value = 0.0;
    std::vector<double> history;
    Network critic;
};

namespace detail {

struct CriticTrainer {
    Network critic;
    Optimizer opt;
    SeededRng batches;
    SeededRng pairing;
    SeededRng test_pairing;

    CriticTrainer(std::size_t input_dim, const EstimatorConfig& cfg)
        : critic(make_critic(input_dim, cfg)),
          opt(cfg.rule, cfg.step_size, critic.param_count()),
          batches(derive_seed(cfg.seed, "estimator-batches")),
          pairing(derive_seed(cfg.seed, "estimator-pairing")),
          test_pairing(derive_seed(cfg.seed, "estimator-test-pairing")) {}

    static Network make_critic(std::size_t input_dim, const EstimatorConfig& cfg) {
        std::vector<std::size_t> dims{input_dim};
        dims.insert(dims.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
        dims.push_back(1);
        SeededRng init(derive_seed(cfg.seed, "critic-init"));
        return Network::mlp(dims, init);
    }
};

inline void require_finite(double v, const char* stage, std::size_t epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string(stage) + ": objective became non-finite at epoch " +
                           std::to_string(epoch));
}

/// Contiguous K-way split of [0, n); each chunk has floor(n/K) rows and the
/// remainder is dropped, keeping chunk sizes equal as the testing phase
/// expects.
inline std::vector<std::vector<std::size_t>> equal_chunks(std::size_t n, std::size_t k) {
    const std::size_t size = n / k;
    if (size == 0) throw std::invalid_argument("equal_chunks: fewer test rows than mini-batches");
    std::vector<std::vector<std::size_t>> chunks(k);
    for (std::size_t c = 0; c < k; ++c) {
        chunks[c].reserve(size);
        for (std::size_t i = 0; i < size; ++i) chunks[c].push_back(c * size + i);
    }
    return chunks;
}

}  // namespace detail

/**
 * Standard mutual-information estimate between explicit sample pairs
 * (x_i, z_i): trains a critic by stochastic ascent on the objective,
 * snapshots the parameters at the best recorded epoch, then averages the
 * objective over disjoint test mini-batches with fresh pairings.
 */
inline MiEstimate estimate_mi_pairs(const Matrix& x_train, const Matrix& z_train,
                                    const Matrix& x_test, const Matrix& z_test,
                                    const EstimatorConfig& cfg) {
    cfg.validate();
    if (x_train.rows() != z_train.rows() || x_test.rows() != z_test.rows())
        throw std::invalid_argument("estimate_mi_pairs: x/z row mismatch");
    const std::size_t b = std::min(cfg.batch_size, x_train.rows());
    const std::size_t neg = std::min(cfg.negatives, b);
    detail::CriticTrainer t(x_train.cols() + z_train.cols(), cfg);

    MiEstimate est;
    est.history.reserve(cfg.epochs);
    Vec best_params = t.critic.params();
    double best_v1 = -std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto idx = t.batches.sample_indices(x_train.rows(), b);
        const Matrix xb = gather_rows(x_train, idx);
        const Matrix zb = gather_rows(z_train, idx);
        const PairingScheme p = PairingScheme::sample(b, neg, t.pairing);
        const DvGradients g = dv_objective_pairs(t.critic, xb, zb, p);
        detail::require_finite(g.value, "estimate_mi_pairs", epoch);
        est.history.push_back(g.value);
        if (g.value > best_v1) {
            best_v1 = g.value;
            best_params = t.critic.params();
        }
        t.opt.apply(t.critic.params(), g.critic_grads, Direction::ascend);
    }
    t.critic.params() = best_params;

    const auto chunks = detail::equal_chunks(x_test.rows(), cfg.test_batches);
    double sum = 0.0;
    for (const auto& chunk : chunks) {
        const Matrix xc = gather_rows(x_test, chunk);
        const Matrix zc = gather_rows(z_test, chunk);
        const PairingScheme p =
            PairingScheme::sample(chunk.size(), std::min(cfg.negatives, chunk.size()),
                                  t.test_pairing);
        sum += dv_value_pairs(t.critic, xc, zc, p);
    }
    est.value = sum / double(chunks.size());
    est.critic = std::move(t.critic);
    return est;
}

/// Standard MI of (X, encoder(X)) from train/test input batches.
inline MiEstimate estimate_standard_mi(const Matrix& train, const Matrix& test,
                                       const Network& encoder, const EstimatorConfig& cfg) {
    return estimate_mi_pairs(train, encoder.forward(train), test, encoder.forward(test), cfg);
}

/**
 * Worst-case mutual-information estimate. Training phase: every epoch
 * attacks a fresh batch with the current critic, records the attacked
 * objective V1, snapshots the critic parameters whenever V1 sets a record,
 * and ascends the critic by the objective gradient at the attacked points.
 * Testing phase: the test rows are split into equal mini-batches, each is
 * attacked under the frozen snapshot, and the mean attacked objective is
 * returned.
 */
inline MiEstimate estimate_worst_case_mi(const Matrix& train, const Matrix& test,
                                         const Network& encoder, const EstimatorConfig& cfg,
                                         const AttackConfig& attack) {
    cfg.validate();
    const std::size_t b = std::min(cfg.batch_size, train.rows());
    const std::size_t neg = std::min(cfg.negatives, b);
    detail::CriticTrainer t(train.cols() + encoder.output_dim(), cfg);

    MiEstimate est;
    est.history.reserve(cfg.epochs);
    Vec best_params = t.critic.params();
    double best_v1 = -std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto idx = t.batches.sample_indices(train.rows(), b);
        const Matrix xb = gather_rows(train, idx);
        const PairingScheme p = PairingScheme::sample(b, neg, t.pairing);
        const AttackResult r = worst_case_perturb(xb, encoder, t.critic, p, attack);
        detail::require_finite(r.v1, "estimate_worst_case_mi", epoch);
        est.history.push_back(r.v1);
        if (r.v1 > best_v1) {
            best_v1 = r.v1;
            best_params = t.critic.params();
        }
        t.opt.apply(t.critic.params(), r.critic_grads, Direction::ascend);
    }
    t.critic.params() = best_params;

    const auto chunks = detail::equal_chunks(test.rows(), cfg.test_batches);
    double sum = 0.0;
    for (const auto& chunk : chunks) {
        const Matrix xc = gather_rows(test, chunk);
        const PairingScheme p =
            PairingScheme::sample(chunk.size(), std::min(cfg.negatives, chunk.size()),
                                  t.test_pairing);
        sum += worst_case_perturb(xc, encoder, t.critic, p, attack).v1;
    }
    est.value = sum / double(chunks.size());
    est.critic = std::move(t.critic);
    return est;
}

/// Paired standard / worst-case estimate and their difference.
struct RVReport {
    double j1 = 0.0;  // standard MI estimate
    double j2 = 0.0;  // worst-case MI estimate
    double rv = 0.0;  // j1 - j2, exactly
    std::vector<double> history_standard;
    std::vector<double> history_worst;
};

/**
 * Representation vulnerability estimate: the two terms use independently
 * trained critics (with seeds split from the config seed) but identical data
 * splits, and rv is their exact difference.
 */
inline RVReport estimate_rv(const Matrix& train, const Matrix& test, const Network& encoder,
                            const EstimatorConfig& cfg, const AttackConfig& attack) {
    EstimatorConfig c1 = cfg;
    c1.seed = derive_seed(cfg.seed, "standard-term");
    EstimatorConfig c2 = cfg;
    c2.seed = derive_seed(cfg.seed, "worst-case-term");

    RVReport rep;
    MiEstimate e1 = estimate_standard_mi(train, test, encoder, c1);
    MiEstimate e2 = estimate_worst_case_mi(train, test, encoder, c2, attack);
    rep.j1 = e1.value;
    rep.j2 = e2.value;
    rep.rv = rep.j1 - rep.j2;
    rep.history_standard = std::move(e1.history);
    rep.history_worst = std::move(e2.history);
    return rep;
}

/// Frozen selector of one encoder output coordinate.
inline Network output_selector(const Network& encoder, std::size_t coord) {
    if (coord >= encoder.output_dim())
        throw std::invalid_argument("output_selector: coordinate out of range");
    Matrix w(1, encoder.output_dim());
    w(0, coord) = 1.0;
    return Network::chain(encoder, Network::linear(w, {0.0}));
}

/// Scalar-feature vulnerability, one report per encoder output coordinate.
inline std::vector<RVReport> estimate_rv_per_feature(const Matrix& train, const Matrix& test,
                                                     const Network& encoder,
                                                     const EstimatorConfig& cfg,
                                                     const AttackConfig& attack) {
    std::vector<RVReport> out;
    out.reserve(encoder.output_dim());
    for (std::size_t c = 0; c < encoder.output_dim(); ++c) {
        EstimatorConfig cc = cfg;
        cc.seed = derive_seed(cfg.seed, "per-feature", c);
        out.push_back(estimate_rv(train, test, output_selector(encoder, c), cc, attack));
    }
    return out;
}

}  // namespace wcmi::mi
