#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wcmi/matrix.hpp"
#include "wcmi/mi.hpp"
#include "wcmi/network.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/optimizer.hpp"
#include "wcmi/rng.hpp"

namespace wcmi::repr {

/// Training objective for the encoder: plain mutual-information maximization
/// on clean batches, or maximization of the worst-case value under per-batch
/// input perturbations (the min-max form).
enum class Objective { infomax, worst_case };

inline std::string objective_name(Objective o) {
    switch (o) {
        case Objective::infomax: return "infomax";
        case Objective::worst_case: return "worst_case";
    }
    throw std::logic_error("objective_name: unknown objective");
}

inline Objective objective_from_name(const std::string& s) {
    if (s == "infomax") return Objective::infomax;
    if (s == "worst_case") return Objective::worst_case;
    throw std::invalid_argument("unknown training objective: " + s);
}

/**
 * Encoder training plan. The critic sub-config supplies the critic
 * architecture, its optimizer rule and step size, and the batch/negative
 * sampling sizes; its epoch and test-batch fields are ignored here because
 * the alternation schedule below replaces them. In worst_case mode the
 * perturbations restart from the clean batch at every refresh (one refresh
 * per encoder step), since each step draws a fresh batch anyway.
 */
struct TrainPrincipleConfig {
    Objective objective = Objective::infomax;
    // weight of the vulnerability penalty in the regularized objective; only
    // the value 1 (where the penalty and the plain objective merge into the
    // worst-case value) is supported
    double beta = 1.0;
    std::vector<std::size_t> encoder_dims;  // input width first, feature width last
    mi::EstimatorConfig critic;
    mi::AttackConfig attack{10, 0.1, PerturbationBudget::l2(0.0)};
    std::size_t critic_steps = 5;   // critic updates per encoder update
    std::size_t encoder_steps = 200;
    double encoder_step_size = 1e-3;
    Optimizer::Rule encoder_rule = Optimizer::Rule::adam;
    std::uint64_t seed = 0;

    void validate() const {
        if (encoder_dims.size() < 2)
            throw std::invalid_argument("TrainPrincipleConfig: need input and output widths");
        for (std::size_t d : encoder_dims)
            if (d == 0) throw std::invalid_argument("TrainPrincipleConfig: zero encoder width");
        if (objective == Objective::worst_case && beta != 1.0)
            throw std::invalid_argument(
                "TrainPrincipleConfig: general beta is not supported; the worst-case "
                "objective is the beta = 1 case of the vulnerability-regularized principle");
        if (critic_steps < 1)
            throw std::invalid_argument("TrainPrincipleConfig: critic_steps must be >= 1");
        if (!(encoder_step_size > 0.0))
            throw std::invalid_argument("TrainPrincipleConfig: encoder step size must be > 0");
        critic.validate();
    }
};

/// Which update produced a logged objective value.
enum class TrainPhase { attack, critic, encoder };

inline std::string train_phase_name(TrainPhase p) {
    switch (p) {
        case TrainPhase::attack: return "attack";
        case TrainPhase::critic: return "critic";
        case TrainPhase::encoder: return "encoder";
    }
    throw std::logic_error("train_phase_name: unknown phase");
}

struct TrainLogEntry {
    std::size_t step = 0;  // outer (encoder) step index
    double j = 0.0;        // objective value observed at this update
    TrainPhase phase = TrainPhase::encoder;
};

struct TrainResult {
    Network encoder;
    std::vector<TrainLogEntry> log;
};

/// Values of one phase in training order; the encoder series is the usual
/// progress curve (one value per outer step).
inline std::vector<double> phase_series(const std::vector<TrainLogEntry>& log, TrainPhase phase) {
    std::vector<double> out;
    for (const TrainLogEntry& e : log)
        if (e.phase == phase) out.push_back(e.j);
    return out;
}

/// The seeded encoder before any update; training with zero encoder steps
/// returns exactly this network.
inline Network initial_encoder(const TrainPrincipleConfig& cfg) {
    cfg.validate();
    SeededRng rng(derive_seed(cfg.seed, "encoder-init"));
    return Network::mlp(cfg.encoder_dims, rng);
}

/**
 * Trains an encoder by stochastic ascent on the estimation objective.
 * Per outer step: draw a batch and a pairing; in worst_case mode, push the
 * batch to the objective's minimizer inside the budget ball first; then run
 * `critic_steps` critic updates on the (possibly perturbed) batch and one
 * encoder update on the same batch. Encoder gradients flow through the
 * perturbed points themselves, never through the search that produced them.
 * Labels are never read: the method is unsupervised.
 */
inline TrainResult train_encoder(const Matrix& data, const TrainPrincipleConfig& cfg) {
    cfg.validate();
    if (data.rows() == 0) throw std::invalid_argument("train_encoder: no training rows");
    if (data.cols() != cfg.encoder_dims.front())
        throw std::invalid_argument("train_encoder: data width does not match the encoder input");

    TrainResult res;
    res.encoder = initial_encoder(cfg);

    std::vector<std::size_t> cdims{data.cols() + res.encoder.output_dim()};
    cdims.insert(cdims.end(), cfg.critic.critic_hidden.begin(), cfg.critic.critic_hidden.end());
    cdims.push_back(1);
    SeededRng critic_init(derive_seed(cfg.seed, "train-critic-init"));
    Network critic = Network::mlp(cdims, critic_init);

    Optimizer critic_opt(cfg.critic.rule, cfg.critic.step_size, critic.param_count());
    Optimizer encoder_opt(cfg.encoder_rule, cfg.encoder_step_size, res.encoder.param_count());
    SeededRng batches(derive_seed(cfg.seed, "train-batches"));
    SeededRng pairing(derive_seed(cfg.seed, "train-pairing"));

    const std::size_t b = std::min(cfg.critic.batch_size, data.rows());
    const std::size_t neg = std::min(cfg.critic.negatives, b);

    for (std::size_t step = 0; step < cfg.encoder_steps; ++step) {
        try {
            const auto idx = batches.sample_indices(data.rows(), b);
            Matrix xb = gather_rows(data, idx);
            const mi::PairingScheme p = mi::PairingScheme::sample(b, neg, pairing);

            if (cfg.objective == Objective::worst_case) {
                mi::AttackResult r = mi::worst_case_perturb(xb, res.encoder, critic, p, cfg.attack);
                res.log.push_back({step, r.v1, TrainPhase::attack});
                xb = std::move(r.perturbed);
            }

            const Matrix zb = res.encoder.forward(xb);
            for (std::size_t c = 0; c < cfg.critic_steps; ++c) {
                const mi::DvGradients g = mi::dv_objective_pairs(critic, xb, zb, p);
                res.log.push_back({step, g.value, TrainPhase::critic});
                critic_opt.apply(critic.params(), g.critic_grads, Direction::ascend);
            }

            const mi::DvGradients g = mi::dv_objective(critic, res.encoder, xb, p);
            res.log.push_back({step, g.value, TrainPhase::encoder});
            encoder_opt.apply(res.encoder.params(), g.encoder_grads, Direction::ascend);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (training step " +
                               std::to_string(step) + ")");
        }
    }
    return res;
}

/// Labeled-data overload; the labels are ignored.
inline TrainResult train_encoder(const SampleBatch& data, const TrainPrincipleConfig& cfg) {
    return train_encoder(data.rows, cfg);
}

/// Gradient of the critic score on the matched pair, T(x, g(x)), with respect
/// to the input coordinates. Highlights where the pairing decision looks.
inline Vec saliency_mi(const Network& encoder, const Network& critic, const Vec& x) {
    if (x.size() != encoder.input_dim())
        throw std::invalid_argument("saliency_mi: input dimension mismatch");
    if (critic.input_dim() != encoder.input_dim() + encoder.output_dim())
        throw std::invalid_argument("saliency_mi: critic does not accept (input, feature) pairs");
    Matrix xb(1, x.size());
    for (std::size_t c = 0; c < x.size(); ++c) xb(0, c) = x[c];
    const Matrix z = encoder.forward(xb);
    const Matrix joint = hcat(xb, z);
    Matrix cot(1, 1);
    cot(0, 0) = 1.0;
    const GradientBundle gc = critic.backward(joint, cot);
    Matrix dz(1, encoder.output_dim());
    for (std::size_t c = 0; c < encoder.output_dim(); ++c)
        dz(0, c) = gc.input_grads(0, x.size() + c);
    const GradientBundle ge = encoder.backward(xb, dz);
    Vec out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c)
        out[c] = gc.input_grads(0, c) + ge.input_grads(0, c);
    return out;
}

/// Gradient of the softmax cross-entropy of net(x) at `label` with respect to
/// the input coordinates.
inline Vec saliency_ce(const Network& net, const Vec& x, int label) {
    if (x.size() != net.input_dim())
        throw std::invalid_argument("saliency_ce: input dimension mismatch");
    Matrix xb(1, x.size());
    for (std::size_t c = 0; c < x.size(); ++c) xb(0, c) = x[c];
    const Matrix logits = net.forward(xb);
    Matrix dlogits;
    softmax_cross_entropy(logits, {label}, &dlogits);
    return net.backward(xb, dlogits).input_grads.row_copy(0);
}

/// Gradient of the output energy, half the squared norm of net(x), with
/// respect to the input coordinates. For a single affine layer this is the
/// plain adjoint W^T (W x + b).
inline Vec saliency_energy(const Network& net, const Vec& x) {
    if (x.size() != net.input_dim())
        throw std::invalid_argument("saliency_energy: input dimension mismatch");
    Matrix xb(1, x.size());
    for (std::size_t c = 0; c < x.size(); ++c) xb(0, c) = x[c];
    const Matrix y = net.forward(xb);
    return net.backward(xb, y).input_grads.row_copy(0);
}

/// Loss selector for the dispatching entry point below.
enum class SaliencySelector { mi_critic, cross_entropy };

inline SaliencySelector saliency_selector_from_name(const std::string& s) {
    if (s == "mi_critic") return SaliencySelector::mi_critic;
    if (s == "cross_entropy") return SaliencySelector::cross_entropy;
    throw std::invalid_argument("unknown saliency loss: " + s);
}

/// Networks a saliency request can draw on. mi_critic needs encoder+critic;
/// cross_entropy needs the composed classifier.
struct SaliencyModel {
    const Network* encoder = nullptr;
    const Network* critic = nullptr;
    const Network* classifier = nullptr;
};

inline Vec saliency(const SaliencyModel& model, const Vec& x, SaliencySelector sel,
                    std::optional<int> label = std::nullopt) {
    switch (sel) {
        case SaliencySelector::mi_critic:
            if (!model.encoder || !model.critic)
                throw std::invalid_argument("saliency: mi_critic needs an encoder and a critic");
            return saliency_mi(*model.encoder, *model.critic, x);
        case SaliencySelector::cross_entropy:
            if (!model.classifier)
                throw std::invalid_argument("saliency: cross_entropy needs a classifier");
            if (!label) throw std::invalid_argument("saliency: cross_entropy needs a label");
            return saliency_ce(*model.classifier, x, *label);
    }
    throw std::logic_error("saliency: unknown selector");
}

}  // namespace wcmi::repr
