#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "wcmi/matrix.hpp"
#include "wcmi/mi.hpp"
#include "wcmi/network.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/optimizer.hpp"
#include "wcmi/rng.hpp"

namespace wcmi::eval {

/// Classifier head shape: a bare affine map or one hidden rectified layer.
enum class HeadKind { linear, mlp };

inline std::string head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::linear: return "linear";
        case HeadKind::mlp: return "mlp";
    }
    throw std::logic_error("head_kind_name: unknown kind");
}

inline HeadKind head_kind_from_name(const std::string& s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "mlp") return HeadKind::mlp;
    throw std::invalid_argument("unknown head kind: " + s);
}

enum class TrainMode { standard, adversarial };

inline std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::standard: return "standard";
        case TrainMode::adversarial: return "adversarial";
    }
    throw std::logic_error("train_mode_name: unknown mode");
}

inline TrainMode train_mode_from_name(const std::string& s) {
    if (s == "standard") return TrainMode::standard;
    if (s == "adversarial") return TrainMode::adversarial;
    throw std::invalid_argument("unknown training mode: " + s);
}

/// Network from feature space to one logit per class.
struct ClassifierHead {
    Network net;
    HeadKind kind = HeadKind::linear;

    std::size_t classes() const { return net.output_dim(); }

    bool operator==(const ClassifierHead& other) const {
        return kind == other.kind && net == other.net;
    }
};

inline ClassifierHead make_head(HeadKind kind, std::size_t feature_dim, std::size_t classes,
                                std::size_t hidden, SeededRng& rng) {
    if (classes < 2) throw std::invalid_argument("make_head: need at least two classes");
    ClassifierHead head;
    head.kind = kind;
    if (kind == HeadKind::linear)
        head.net = Network::mlp({feature_dim, classes}, rng);
    else
        head.net = Network::mlp({feature_dim, hidden, classes}, rng);
    return head;
}

/**
 * Head training plan. `epochs` counts batch updates. The attack config is
 * used by adversarial-mode training and, when early stopping is requested,
 * by the per-epoch robustness measurement that picks the snapshot. The step
 * size keeps the fixed-rate convention, scaled for desk-sized data.
 */
struct HeadTrainConfig {
    HeadKind kind = HeadKind::linear;
    std::size_t hidden = 200;  // width of the mlp head's single hidden layer
    std::size_t classes = 2;
    TrainMode mode = TrainMode::standard;
    mi::AttackConfig attack{10, 0.1, PerturbationBudget::linf(0.0)};
    std::size_t epochs = 200;
    double step_size = 1e-3;
    std::size_t batch_size = 128;
    Optimizer::Rule rule = Optimizer::Rule::adam;
    bool early_stop = false;  // snapshot the best adversarial-accuracy epoch
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw std::invalid_argument("HeadTrainConfig: need at least two classes");
        if (kind == HeadKind::mlp && hidden == 0)
            throw std::invalid_argument("HeadTrainConfig: zero hidden width");
        if (batch_size == 0) throw std::invalid_argument("HeadTrainConfig: zero batch size");
        if (!(step_size > 0.0))
            throw std::invalid_argument("HeadTrainConfig: step size must be > 0");
    }
};

/// Accuracy of a classifier under attack, next to its clean accuracy.
struct EvalReport {
    double natural_accuracy = 0.0;
    double adversarial_accuracy = 0.0;
    double adversarial_risk = 0.0;  // 1 - adversarial_accuracy
    double adversarial_gap = 0.0;   // adversarial_risk - (1 - natural_accuracy)
    mi::AttackConfig attack{0, 0.1, PerturbationBudget::l2(0.0)};  // echo
    std::size_t samples = 0;
};

namespace detail {

/// Mean cross-entropy of head(encoder(x)) against the labels, its logits,
/// and (optionally) its gradient with respect to the raw inputs.
struct ClsEval {
    double loss = 0.0;
    Matrix logits;
    Matrix dx;
};

inline ClsEval cls_eval(const Network& encoder, const Network& head, const Matrix& x,
                        const std::vector<int>& labels, bool want_grad) {
    ClsEval out;
    const Matrix feats = encoder.forward(x);
    out.logits = head.forward(feats);
    Matrix dlogits;
    out.loss = softmax_cross_entropy(out.logits, labels, want_grad ? &dlogits : nullptr);
    if (want_grad) {
        const GradientBundle gh = head.backward(feats, dlogits);
        out.dx = encoder.backward(x, gh.input_grads).input_grads;
    }
    return out;
}

/// One steepest-ascent step per row: the sign of the gradient under an
/// l-infinity budget, the normalized gradient under l2. Rows with zero
/// gradient stay put.
inline void require_finite_loss(double v, std::size_t epoch) {
    if (!std::isfinite(v))
        throw NumericError("train_head: loss became non-finite at epoch " + std::to_string(epoch));
}

inline void steepest_step(Matrix& cur, const Matrix& grad, const mi::AttackConfig& attack,
                          const Matrix& center) {
    const std::size_t d = cur.cols();
    for (std::size_t r = 0; r < cur.rows(); ++r) {
        double* row = cur.row(r);
        const double* g = grad.row(r);
        if (std::isinf(attack.budget.p)) {
            for (std::size_t c = 0; c < d; ++c)
                if (g[c] != 0.0) row[c] += attack.step_size * (g[c] > 0.0 ? 1.0 : -1.0);
        } else {
            double n = 0.0;
            for (std::size_t c = 0; c < d; ++c) n += g[c] * g[c];
            n = std::sqrt(n);
            if (n > 0.0)
                for (std::size_t c = 0; c < d; ++c) row[c] += attack.step_size * g[c] / n;
        }
        project_ball_inplace(std::span<double>(row, d),
                             std::span<const double>(center.row(r), d), attack.budget);
    }
}

}  // namespace detail

/**
 * PGD on the classification loss: signed (l-infinity) or normalized (l2)
 * gradient steps from the clean points, projected into the budget ball and
 * the domain box after every step. Returns the iterate with the largest mean
 * cross-entropy, the clean batch included, so the returned loss never
 * undercuts the clean one.
 */
inline Matrix classification_attack(const Network& encoder, const Network& head, const Matrix& x,
                                    const std::vector<int>& labels,
                                    const mi::AttackConfig& attack) {
    if (attack.steps == 0 || attack.budget.epsilon == 0.0) return x;
    Matrix cur = x, best = x;
    detail::ClsEval e = detail::cls_eval(encoder, head, cur, labels, true);
    double best_loss = e.loss;
    for (std::size_t s = 0; s < attack.steps; ++s) {
        detail::steepest_step(cur, e.dx, attack, x);
        e = detail::cls_eval(encoder, head, cur, labels, s + 1 < attack.steps);
        if (e.loss > best_loss) {
            best_loss = e.loss;
            best = cur;
        }
    }
    return best;
}

/**
 * Clean and attacked accuracy of head(encoder(.)). A sample counts as
 * adversarially correct only if its prediction matches the label at the
 * clean point and after every attack step, which is the per-point
 * worst-over-iterates rule and forces adversarial <= natural.
 */
inline EvalReport evaluate(const Network& encoder, const ClassifierHead& head,
                           const SampleBatch& data, const mi::AttackConfig& attack) {
    if (!data.has_labels()) throw std::invalid_argument("evaluate: labeled data required");
    const std::size_t n = data.size();
    const std::size_t k = head.classes();
    for (int y : data.labels)
        if (y < 0 || std::size_t(y) >= k)
            throw std::invalid_argument("evaluate: label out of range");

    EvalReport rep;
    rep.attack = attack;
    rep.samples = n;

    std::vector<char> broken(n, 0);
    std::size_t clean_correct = 0;
    {
        const Matrix logits = head.net.forward(encoder.forward(data.rows));
        for (std::size_t i = 0; i < n; ++i) {
            if (argmax_row(logits.row(i), k) == data.labels[i])
                ++clean_correct;
            else
                broken[i] = 1;
        }
    }
    rep.natural_accuracy = double(clean_correct) / double(n);

    if (attack.steps > 0 && attack.budget.epsilon > 0.0) {
        Matrix cur = data.rows;
        detail::ClsEval e = detail::cls_eval(encoder, head.net, cur, data.labels, true);
        for (std::size_t s = 0; s < attack.steps; ++s) {
            detail::steepest_step(cur, e.dx, attack, data.rows);
            e = detail::cls_eval(encoder, head.net, cur, data.labels, s + 1 < attack.steps);
            for (std::size_t i = 0; i < n; ++i)
                if (argmax_row(e.logits.row(i), k) != data.labels[i]) broken[i] = 1;
        }
    }

    std::size_t adv_correct = 0;
    for (char b : broken)
        if (!b) ++adv_correct;
    rep.adversarial_accuracy = double(adv_correct) / double(n);
    rep.adversarial_risk = 1.0 - rep.adversarial_accuracy;
    rep.adversarial_gap = rep.adversarial_risk - (1.0 - rep.natural_accuracy);
    return rep;
}

/// The seeded head before any update; training with zero epochs returns
/// exactly this head.
inline ClassifierHead initial_head(std::size_t feature_dim, const HeadTrainConfig& cfg) {
    cfg.validate();
    SeededRng rng(derive_seed(cfg.seed, "head-init"));
    return make_head(cfg.kind, feature_dim, cfg.classes, cfg.hidden, rng);
}

/// Trained head plus its loss curve and the early-stopping record.
struct HeadTrainResult {
    ClassifierHead head;
    std::vector<double> loss_history;  // mean batch loss per epoch
    bool early_stopped = false;
    std::size_t snapshot_epoch = 0;
    std::string metadata;
};

/**
 * Trains a head on frozen features by cross-entropy descent. Standard mode
 * fits clean features; adversarial mode first pushes each batch's raw inputs
 * toward maximum loss through the frozen encoder, then fits the features of
 * the perturbed points. The encoder is never touched, and that is checked
 * bit-exactly. With `early_stop`, the head is measured on `stop_data` after
 * every epoch and the parameters from the best adversarial-accuracy epoch
 * are kept; the split-reuse is recorded in the result metadata.
 */
inline HeadTrainResult train_head(const Network& encoder, const SampleBatch& data,
                                  const HeadTrainConfig& cfg,
                                  const SampleBatch* stop_data = nullptr) {
    cfg.validate();
    if (!data.has_labels()) throw std::invalid_argument("train_head: labeled data required");
    if (data.size() == 0) throw std::invalid_argument("train_head: no training rows");
    for (int y : data.labels)
        if (y < 0 || std::size_t(y) >= cfg.classes)
            throw std::invalid_argument("train_head: label out of range");
    if (cfg.early_stop && !stop_data)
        throw std::invalid_argument("train_head: early stopping needs an evaluation split");

    const Vec encoder_before = encoder.params();
    HeadTrainResult res;
    res.head = initial_head(encoder.output_dim(), cfg);
    Optimizer opt(cfg.rule, cfg.step_size, res.head.net.param_count());
    SeededRng batches(derive_seed(cfg.seed, "head-batches"));

    const std::size_t b = std::min(cfg.batch_size, data.size());
    const Matrix clean_features = encoder.forward(data.rows);

    Vec best_params = res.head.net.params();
    double best_acc = -1.0;
    std::size_t best_epoch = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto idx = batches.sample_indices(data.size(), b);
        std::vector<int> yb(b);
        for (std::size_t i = 0; i < b; ++i) yb[i] = data.labels[idx[i]];

        Matrix feats;
        if (cfg.mode == TrainMode::adversarial) {
            const Matrix xb = gather_rows(data.rows, idx);
            feats = encoder.forward(classification_attack(encoder, res.head.net, xb, yb,
                                                          cfg.attack));
        } else {
            feats = gather_rows(clean_features, idx);
        }

        Matrix dlogits;
        const double loss = softmax_cross_entropy(res.head.net.forward(feats), yb, &dlogits);
        detail::require_finite_loss(loss, epoch);
        res.loss_history.push_back(loss);
        const GradientBundle g = res.head.net.backward(feats, dlogits);
        opt.apply(res.head.net.params(), g.param_grads, Direction::descend);

        if (cfg.early_stop) {
            const double acc =
                evaluate(encoder, res.head, *stop_data, cfg.attack).adversarial_accuracy;
            if (acc > best_acc) {
                best_acc = acc;
                best_params = res.head.net.params();
                best_epoch = epoch;
            }
        }
    }

    if (cfg.early_stop) {
        res.head.net.params() = best_params;
        res.early_stopped = true;
        res.snapshot_epoch = best_epoch;
        res.metadata = "early stopping measured on the supplied evaluation split";
    }

    if (encoder.params() != encoder_before)
        throw std::logic_error("train_head: the frozen encoder changed");
    return res;
}

/// Axis-aligned lattice: coordinate k on axis d is lo[d] + k * spacing[d].
struct GridDomain {
    Vec lo;
    Vec spacing;
    std::vector<std::size_t> counts;

    void validate() const {
        if (lo.size() != spacing.size() || lo.size() != counts.size() || lo.empty())
            throw std::invalid_argument("GridDomain: per-axis fields must align");
        for (double h : spacing)
            if (!(h > 0.0)) throw std::invalid_argument("GridDomain: spacing must be > 0");
        for (std::size_t c : counts)
            if (c == 0) throw std::invalid_argument("GridDomain: empty axis");
    }

    std::size_t dims() const { return lo.size(); }
    double coord(std::size_t axis, std::size_t k) const {
        return lo[axis] + double(k) * spacing[axis];
    }
};

/**
 * Exact adversarial risk over grid-supported perturbations: a labeled point
 * counts as an error when any lattice point inside its budget ball (or the
 * point itself, so a zero radius reproduces the standard risk) is
 * misclassified by the network's argmax rule. Refuses to enumerate more than
 * `candidate_limit` lattice points across the whole dataset.
 */
inline double brute_force_adv_risk(const Network& classifier, const SampleBatch& data,
                                   const GridDomain& grid, const PerturbationBudget& budget,
                                   std::size_t candidate_limit = 1000000) {
    grid.validate();
    if (!data.has_labels())
        throw std::invalid_argument("brute_force_adv_risk: labeled data required");
    if (data.dim() != grid.dims())
        throw std::invalid_argument("brute_force_adv_risk: grid dimension mismatch");
    const std::size_t d = grid.dims();
    const double tol = 1e-9;

    // per-point per-axis candidate index ranges [first, last]
    struct Range {
        std::size_t first = 0, last = 0;
        bool empty = true;
    };
    const auto axis_range = [&](std::size_t axis, double center) {
        Range r;
        const double lo = center - budget.epsilon - tol;
        const double hi = center + budget.epsilon + tol;
        const double flo = std::ceil((lo - grid.lo[axis]) / grid.spacing[axis]);
        const double fhi = std::floor((hi - grid.lo[axis]) / grid.spacing[axis]);
        const double kmax = double(grid.counts[axis] - 1);
        const double a = std::max(flo, 0.0), b = std::min(fhi, kmax);
        if (a > b) return r;
        r.first = std::size_t(a);
        r.last = std::size_t(b);
        r.empty = false;
        return r;
    };

    // enumeration size check before any classification work
    std::size_t total = data.size();  // the points themselves
    std::vector<Range> ranges(data.size() * d);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t count = 1;
        bool empty = false;
        for (std::size_t axis = 0; axis < d; ++axis) {
            const Range r = axis_range(axis, data.rows(i, axis));
            ranges[i * d + axis] = r;
            if (r.empty) empty = true;
            else count *= r.last - r.first + 1;
        }
        if (!empty) total += count;
        if (total > candidate_limit)
            throw std::length_error("brute_force_adv_risk: enumeration exceeds " +
                                    std::to_string(candidate_limit) + " candidates");
    }

    const auto misclassified = [&](const Vec& x, int label) {
        const Vec logits = classifier.forward_row(x);
        return argmax_row(logits.data(), logits.size()) != label;
    };

    std::size_t errors = 0;
    Vec candidate(d);
    std::vector<std::size_t> k(d);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vec center = data.rows.row_copy(i);
        bool err = misclassified(center, data.labels[i]);

        bool feasible = !err;
        for (std::size_t axis = 0; axis < d && feasible; ++axis)
            if (ranges[i * d + axis].empty) feasible = false;
        if (feasible) {
            for (std::size_t axis = 0; axis < d; ++axis) k[axis] = ranges[i * d + axis].first;
            // odometer sweep over the per-axis ranges
            while (true) {
                for (std::size_t axis = 0; axis < d; ++axis)
                    candidate[axis] = grid.coord(axis, k[axis]);
                if (lp_distance(std::span<const double>(candidate.data(), d),
                                std::span<const double>(center.data(), d), budget) <=
                    budget.epsilon + tol) {
                    if (misclassified(candidate, data.labels[i])) {
                        err = true;
                        break;
                    }
                }
                std::size_t axis = 0;
                while (axis < d && k[axis] == ranges[i * d + axis].last) {
                    k[axis] = ranges[i * d + axis].first;
                    ++axis;
                }
                if (axis == d) break;
                ++k[axis];
            }
        }
        if (err) ++errors;
    }
    return double(errors) / double(data.size());
}

/// Information-theoretic floor on adversarial risk under uniform labels.
struct FanoBound {
    double min_adv_risk = 0.0;
    double max_adv_accuracy = 1.0;
    bool clamped_mi = false;  // a negative estimate was floored at zero
};

/**
 * min_adv_risk = clamp(1 - (mi_worst + ln 2) / ln(classes), 0, 1). Negative
 * worst-case estimates (estimation noise) are floored at zero and flagged.
 */
inline FanoBound fano_bound(double mi_worst, std::size_t num_classes) {
    if (num_classes < 2) throw std::invalid_argument("fano_bound: need at least two classes");
    if (!std::isfinite(mi_worst))
        throw std::invalid_argument("fano_bound: the estimate must be finite");
    FanoBound out;
    if (mi_worst < 0.0) {
        mi_worst = 0.0;
        out.clamped_mi = true;
    }
    const double raw = 1.0 - (mi_worst + std::log(2.0)) / std::log(double(num_classes));
    out.min_adv_risk = std::clamp(raw, 0.0, 1.0);
    out.max_adv_accuracy = 1.0 - out.min_adv_risk;
    return out;
}

/// Total-variation distance of an empirical label distribution from uniform;
/// the experiment driver warns above 0.05 because the bound assumes uniform
/// labels.
inline double label_uniformity_tv(const std::vector<int>& labels, std::size_t classes) {
    if (classes < 2) throw std::invalid_argument("label_uniformity_tv: need at least two classes");
    if (labels.empty()) throw std::invalid_argument("label_uniformity_tv: no labels");
    Vec counts(classes, 0.0);
    for (int y : labels) {
        if (y < 0 || std::size_t(y) >= classes)
            throw std::invalid_argument("label_uniformity_tv: label out of range");
        counts[std::size_t(y)] += 1.0;
    }
    double tv = 0.0;
    for (double c : counts) tv += std::fabs(c / double(labels.size()) - 1.0 / double(classes));
    return 0.5 * tv;
}

/**
 * Discrete channel family with coordinates conditionally independent given
 * X by construction: p(x, z_1..z_m) = px[x] * prod_i channels[i](x, z_i).
 */
struct ConditionalModel {
    Vec px;                        // marginal of X
    std::vector<Matrix> channels;  // per coordinate: |X| rows, one per x, row-stochastic

    void validate() const {
        if (px.empty() || channels.empty())
            throw std::invalid_argument("ConditionalModel: empty construction");
        double sum = 0.0;
        for (double p : px) {
            if (!(p >= 0.0)) throw std::invalid_argument("ConditionalModel: negative marginal");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("ConditionalModel: marginal must sum to 1");
        for (const Matrix& ch : channels) {
            if (ch.rows() != px.size() || ch.cols() == 0)
                throw std::invalid_argument("ConditionalModel: channel shape mismatch");
            for (std::size_t x = 0; x < ch.rows(); ++x) {
                double row = 0.0;
                for (std::size_t z = 0; z < ch.cols(); ++z) {
                    if (!(ch(x, z) >= 0.0))
                        throw std::invalid_argument("ConditionalModel: negative channel entry");
                    row += ch(x, z);
                }
                if (std::fabs(row - 1.0) > 1e-12)
                    throw std::invalid_argument("ConditionalModel: channel rows must sum to 1");
            }
        }
    }
};

struct TensorizationReport {
    double lhs = 0.0;  // I(X; Z) for the joint feature
    double rhs = 0.0;  // sum of per-coordinate I(X; Z_i)
    bool holds = false;
};

/**
 * Exact check that joint information never beats the per-coordinate sum
 * when the coordinates are conditionally independent given X:
 * I(X; Z) <= sum_i I(X; Z_i), verified to 1e-12.
 */
inline TensorizationReport tensorization_check(const ConditionalModel& model) {
    model.validate();
    const std::size_t nx = model.px.size();

    std::size_t nz = 1;
    for (const Matrix& ch : model.channels) {
        if (nz > 100000 / ch.cols())
            throw std::invalid_argument("tensorization_check: joint alphabet too large");
        nz *= ch.cols();
    }

    Matrix joint(nx, nz);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t z = 0; z < nz; ++z) {
            double p = model.px[x];
            std::size_t rest = z;
            for (const Matrix& ch : model.channels) {
                p *= ch(x, rest % ch.cols());
                rest /= ch.cols();
            }
            joint(x, z) = p;
        }

    TensorizationReport rep;
    rep.lhs = discrete_mutual_information(DiscreteJoint(joint));
    for (const Matrix& ch : model.channels) {
        Matrix pair(nx, ch.cols());
        for (std::size_t x = 0; x < nx; ++x)
            for (std::size_t z = 0; z < ch.cols(); ++z) pair(x, z) = model.px[x] * ch(x, z);
        rep.rhs += discrete_mutual_information(DiscreteJoint(pair));
    }
    rep.holds = rep.lhs <= rep.rhs + 1e-12;
    return rep;
}

}  // namespace wcmi::eval
