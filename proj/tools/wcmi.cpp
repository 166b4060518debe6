// wcmi: command-line laboratory for measuring how much information a learned
// representation keeps under worst-case input perturbations.
//
// Every run is driven by one JSON config (file values override defaults,
// flags override the file), all randomness flows from a single master seed
// through named stages, and numeric results are printed with 17 significant
// digits, so re-running a saved manifest reproduces result.json bit-exactly.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "wcmi/dataset.hpp"
#include "wcmi/downstream.hpp"
#include "wcmi/gmm.hpp"
#include "wcmi/json_io.hpp"
#include "wcmi/mi.hpp"
#include "wcmi/network.hpp"
#include "wcmi/numerics.hpp"
#include "wcmi/repr.hpp"
#include "wcmi/result_schema.hpp"
#include "wcmi/rng.hpp"

namespace fs = std::filesystem;
using wcmi::Matrix;
using wcmi::Network;
using wcmi::NumericError;
using wcmi::PerturbationBudget;
using wcmi::SampleBatch;
using wcmi::SeededRng;
using wcmi::Vec;
using wcmi::io::JsonValue;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// small utilities

std::string fmt_real(double v) {
    if (v == 0.0 && std::signbit(v)) return "-0.0";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string iso_utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// ASCII PGM of per-pixel gradient magnitudes, normalized per image.
std::string pgm_text(const double* g, std::size_t height, std::size_t width) {
    double mx = 0.0;
    for (std::size_t i = 0; i < height * width; ++i) mx = std::max(mx, std::fabs(g[i]));
    std::string s = "P2\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double v = mx > 0.0 ? std::fabs(g[r * width + c]) / mx : 0.0;
            s += std::to_string(long(std::lround(255.0 * v)));
            s += (c + 1 < width) ? ' ' : '\n';
        }
    }
    return s;
}

/// Exclusive ownership of an output directory for the lifetime of a run.
struct DirLock {
    fs::path lock_path;
    bool owned = false;

    explicit DirLock(const fs::path& dir) {
        fs::create_directories(dir);
        lock_path = dir / ".lock";
        std::FILE* f = std::fopen(lock_path.c_str(), "wx");
        if (!f)
            throw std::runtime_error(lock_path.string() +
                                     ": output directory is already in use by another run "
                                     "(remove the stale lock file if that run is gone)");
        std::fputs("wcmi run in progress\n", f);
        std::fclose(f);
        owned = true;
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;
    ~DirLock() {
        if (owned) {
            std::error_code ec;
            fs::remove(lock_path, ec);
        }
    }
};

// ---------------------------------------------------------------------------
// config plumbing

const JsonValue* find_path(const JsonValue& root, const std::string& dotted) {
    const JsonValue* cur = &root;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot - pos);
        if (!cur->is_object()) return nullptr;
        cur = cur->find(part);
        if (!cur || dot == std::string::npos) return cur;
        pos = dot + 1;
    }
}

const JsonValue& need_path(const JsonValue& root, const std::string& dotted) {
    const JsonValue* v = find_path(root, dotted);
    if (!v || v->is_null())
        throw std::invalid_argument("config key '" + dotted + "' is required");
    return *v;
}

void set_path(JsonValue& root, const std::string& dotted, JsonValue value) {
    JsonValue* cur = &root;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string part = dotted.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            (*cur)[part] = std::move(value);
            return;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

template <typename F>
auto get_as(const JsonValue& root, const std::string& key, F&& f) {
    const JsonValue& v = need_path(root, key);  // reports the key itself
    try {
        return f(v);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
}

double get_real(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) { return v.as_real(); });
}
std::size_t get_count(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) { return std::size_t(v.as_uint()); });
}
bool get_bool(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) { return v.as_bool(); });
}
std::string get_text(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) { return v.as_string(); });
}
Vec get_reals(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) {
        Vec out;
        for (const auto& item : v.items()) out.push_back(item.as_real());
        return out;
    });
}
std::vector<std::size_t> get_sizes(const JsonValue& c, const std::string& k) {
    return get_as(c, k, [](const JsonValue& v) {
        std::vector<std::size_t> out;
        for (const auto& item : v.items()) out.push_back(std::size_t(item.as_uint()));
        return out;
    });
}

/// Strict deep merge: every patch key must already exist in the base, so
/// config typos fail loudly instead of being ignored.
void overlay_config(JsonValue& base, const JsonValue& patch, const std::string& where) {
    for (const auto& [key, value] : patch.members()) {
        if (where.empty() && key == "seed") continue;  // handled by the driver
        if (!base.find(key))
            throw std::invalid_argument("unknown config key '" + where + key + "'");
        JsonValue& slot = base[key];
        if (slot.is_object() && value.is_object())
            overlay_config(slot, value, where + key + ".");
        else
            slot = value;
    }
}

// ---------------------------------------------------------------------------
// typed builders from the resolved config

wcmi::gmm::GaussianMixtureSpec mixture_from(const JsonValue& cfg, const std::string& prefix) {
    const Vec theta = get_reals(cfg, prefix + "theta");
    if (const JsonValue* s = find_path(cfg, prefix + "sigma"); s && !s->is_null()) {
        Matrix sigma(s->size(), theta.size());
        for (std::size_t i = 0; i < s->size(); ++i) {
            const JsonValue& row = (*s)[i];
            if (row.size() != theta.size())
                throw std::invalid_argument("config key '" + prefix +
                                            "sigma': rows must match the theta dimension");
            for (std::size_t j = 0; j < theta.size(); ++j) sigma(i, j) = row[j].as_real();
        }
        return wcmi::gmm::GaussianMixtureSpec(theta, sigma);
    }
    return wcmi::gmm::GaussianMixtureSpec::isotropic(theta, get_real(cfg, prefix + "variance"));
}

PerturbationBudget budget_from(const JsonValue& cfg, const std::string& prefix) {
    const std::string norm = get_text(cfg, prefix + "norm");
    const double eps = get_real(cfg, prefix + "epsilon");
    std::optional<std::array<double, 2>> box;
    if (const JsonValue* b = find_path(cfg, prefix + "box"); b && !b->is_null()) {
        const Vec lims = get_reals(cfg, prefix + "box");
        if (lims.size() != 2)
            throw std::invalid_argument("config key '" + prefix + "box': expected [lo, hi]");
        box = {lims[0], lims[1]};
    }
    if (norm == "l2") return PerturbationBudget::l2(eps, box);
    if (norm == "linf") return PerturbationBudget::linf(eps, box);
    throw std::invalid_argument("config key '" + prefix + "norm': expected 'l2' or 'linf'");
}

wcmi::mi::AttackConfig attack_from(const JsonValue& cfg) {
    return {get_count(cfg, "attack.steps"), get_real(cfg, "attack.step_size"),
            budget_from(cfg, "attack.")};
}

wcmi::mi::EstimatorConfig estimator_from(const JsonValue& cfg, const std::string& prefix,
                                         std::uint64_t seed) {
    wcmi::mi::EstimatorConfig e;
    e.epochs = get_count(cfg, prefix + "epochs");
    e.step_size = get_real(cfg, prefix + "step_size");
    e.batch_size = get_count(cfg, prefix + "batch_size");
    e.negatives = get_count(cfg, prefix + "negatives");
    e.test_batches = get_count(cfg, prefix + "test_batches");
    e.critic_hidden = get_sizes(cfg, prefix + "hidden");
    e.rule = wcmi::Optimizer::rule_from_name(get_text(cfg, prefix + "rule"));
    e.seed = seed;
    return e;
}

wcmi::io::DatasetSpec dataset_from(const JsonValue& cfg) {
    wcmi::io::DatasetSpec d;
    const std::string source = get_text(cfg, "data.source");
    if (source == "synthetic_gmm") {
        d.source = wcmi::io::DatasetSpec::Source::synthetic_gmm;
        d.mixture = mixture_from(cfg, "data.");
        d.n = get_count(cfg, "data.n");
    } else if (source == "idx_files") {
        d.source = wcmi::io::DatasetSpec::Source::idx_files;
        d.image_path = get_text(cfg, "data.image_path");
        d.label_path = get_text(cfg, "data.label_path");
        d.downsample = get_count(cfg, "data.downsample");
        if (d.image_path.empty())
            throw std::invalid_argument("config key 'data.image_path' is required (--images)");
    } else if (source == "csv") {
        d.source = wcmi::io::DatasetSpec::Source::csv;
        d.csv_path = get_text(cfg, "data.csv_path");
        d.csv_labeled = get_bool(cfg, "data.csv_labeled");
        if (d.csv_path.empty())
            throw std::invalid_argument("config key 'data.csv_path' is required (--csv)");
    } else {
        throw std::invalid_argument(
            "config key 'data.source': expected synthetic_gmm, idx_files, or csv");
    }
    d.take = get_count(cfg, "data.take");
    const std::string norm = get_text(cfg, "data.normalization");
    if (norm == "none")
        d.normalization = wcmi::io::DatasetSpec::Normalize::none;
    else if (norm == "to_unit_box")
        d.normalization = wcmi::io::DatasetSpec::Normalize::to_unit_box;
    else
        throw std::invalid_argument(
            "config key 'data.normalization': expected 'none' or 'to_unit_box'");
    return d;
}

// ---------------------------------------------------------------------------
// run context and driver

class RunContext {
public:
    RunContext(std::string name, const JsonValue& cfg, std::uint64_t seed,
               std::optional<fs::path> out)
        : name_(std::move(name)), cfg_(cfg), seed_(seed), out_(std::move(out)),
          stage_seeds_(JsonValue::object()) {}

    const std::string& name() const { return name_; }
    const JsonValue& cfg() const { return cfg_; }
    std::uint64_t master_seed() const { return seed_; }

    /// Derives, records, and returns the seed of a named stage.
    std::uint64_t stage(const std::string& stage_name, std::uint64_t index = 0) {
        const std::uint64_t s = wcmi::derive_seed(seed_, stage_name, index);
        const std::string key =
            index == 0 ? stage_name : stage_name + "[" + std::to_string(index) + "]";
        stage_seeds_[key] = JsonValue(s);
        return s;
    }

    bool has_out() const { return out_.has_value(); }
    const fs::path& out() const { return *out_; }
    JsonValue& stage_seeds() { return stage_seeds_; }

    /// Writes a file under the output directory; silently skipped without one.
    void write_side(const std::string& rel, const std::string& content) const {
        if (!out_) return;
        const fs::path p = *out_ / rel;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        wcmi::io::write_text_file(p.string(), content);
    }

private:
    std::string name_;
    const JsonValue& cfg_;
    std::uint64_t seed_;
    std::optional<fs::path> out_;
    JsonValue stage_seeds_;
};

JsonValue run_subcommand(RunContext& ctx);  // forward; defined after the runners

/// Executes one subcommand end to end: locks the output directory, runs,
/// and persists result.json plus the replayable manifest.
JsonValue run_one(const std::string& name, const JsonValue& config, std::uint64_t seed,
                  const std::optional<fs::path>& out) {
    std::optional<DirLock> lock;
    if (out) lock.emplace(*out);
    const std::string started = iso_utc_now();

    RunContext ctx(name, config, seed, out);
    JsonValue result = run_subcommand(ctx);

    JsonValue doc = JsonValue::object();
    doc["tool_version"] = JsonValue(kToolVersion);
    doc["subcommand"] = JsonValue(name);
    doc["result"] = std::move(result);

    if (out) {
        JsonValue manifest = JsonValue::object();
        manifest["tool_version"] = JsonValue(kToolVersion);
        manifest["subcommand"] = JsonValue(name);
        manifest["seed"] = JsonValue(seed);
        manifest["started_utc"] = JsonValue(started);
        manifest["finished_utc"] = JsonValue(iso_utc_now());
        manifest["stage_seeds"] = ctx.stage_seeds();
        manifest["config"] = config;
        wcmi::io::save_json((*out / "result.json").string(), doc);
        wcmi::io::save_json((*out / "manifest.json").string(), manifest);
    }
    return doc;
}

// ---------------------------------------------------------------------------
// shared data loading

wcmi::io::Dataset load_data(RunContext& ctx) {
    const wcmi::io::DatasetSpec spec = dataset_from(ctx.cfg());
    SeededRng rng(ctx.stage("data"));
    return wcmi::io::load_dataset(spec, rng);
}

/// Seeded shuffle split into (train, test) by the configured test fraction.
std::pair<SampleBatch, SampleBatch> split_for_estimation(RunContext& ctx,
                                                         const wcmi::io::Dataset& d) {
    const double tf = get_real(ctx.cfg(), "data.test_fraction");
    if (!(tf > 0.0 && tf < 1.0))
        throw std::invalid_argument(
            "config key 'data.test_fraction': must lie strictly between 0 and 1");
    if (d.batch.size() < 2)
        throw std::invalid_argument("need at least two rows to form a train/test split");
    SeededRng rng(ctx.stage("split"));
    const auto order = rng.sample_indices(d.batch.size(), d.batch.size());
    const std::size_t n_test = std::clamp<std::size_t>(
        std::size_t(std::llround(tf * double(d.batch.size()))), 1, d.batch.size() - 1);
    const std::vector<std::size_t> test_idx(order.begin(), order.begin() + long(n_test));
    const std::vector<std::size_t> train_idx(order.begin() + long(n_test), order.end());
    return {d.batch.subset(train_idx), d.batch.subset(test_idx)};
}

Network load_net(const JsonValue& cfg, const std::string& key, std::size_t want_inputs,
                 const std::string& what) {
    const std::string path = get_text(cfg, key);
    if (path.empty())
        throw std::invalid_argument("config key '" + key + "': a " + what +
                                    " network file is required");
    Network net = wcmi::io::load_network(path);
    if (want_inputs != 0 && net.input_dim() != want_inputs)
        throw std::invalid_argument(path + ": " + what + " expects " +
                                    std::to_string(net.input_dim()) + " inputs but the data has " +
                                    std::to_string(want_inputs) + " columns");
    return net;
}

// ---------------------------------------------------------------------------
// runners

JsonValue run_gmm_analyze(RunContext& ctx) {
    const auto spec = mixture_from(ctx.cfg(), "");
    const wcmi::gmm::LinearSignFeature feature{get_reals(ctx.cfg(), "w")};
    const auto r = wcmi::gmm::analyze(spec, feature, budget_from(ctx.cfg(), ""));

    JsonValue out = JsonValue::object();
    out["risk"] = JsonValue(r.risk);
    out["adv_risk_h1"] = JsonValue(r.adv_risk_h1);
    out["adv_risk_h2"] = JsonValue(r.adv_risk_h2);
    out["adv_gap"] = JsonValue(r.adv_gap_opt);
    out["p_int"] = JsonValue(r.p_int);
    out["rv"] = JsonValue(r.rv_closed_form);
    out["envelope_lower"] = JsonValue(r.sandwich_lower);
    out["envelope_upper"] = JsonValue(r.sandwich_upper);
    out["envelope_holds"] = JsonValue(r.envelope_holds);
    out["gap_sandwich_holds"] = JsonValue(r.gap_sandwich_holds);
    out["chosen_head"] = JsonValue(r.chosen_head);
    return out;
}

JsonValue run_gmm_verify(RunContext& ctx) {
    const auto spec = mixture_from(ctx.cfg(), "");
    const wcmi::gmm::LinearSignFeature feature{get_reals(ctx.cfg(), "w")};
    const auto budget = budget_from(ctx.cfg(), "");
    SeededRng rng(ctx.stage("sampling"));
    const auto r = wcmi::gmm::monte_carlo_verify(spec, feature, budget,
                                                 get_count(ctx.cfg(), "samples"), rng);

    JsonValue out = JsonValue::object();
    out["samples"] = JsonValue(r.n);
    out["mc_risk"] = JsonValue(r.mc_risk);
    out["mc_adv_risk"] = JsonValue(r.mc_adv_risk);
    out["mc_p_int"] = JsonValue(r.mc_p_int);
    out["mc_rv"] = JsonValue(r.mc_rv);
    out["dev_risk"] = JsonValue(r.dev_risk);
    out["dev_adv_risk"] = JsonValue(r.dev_adv_risk);
    out["dev_p_int"] = JsonValue(r.dev_p_int);
    out["dev_rv"] = JsonValue(r.dev_rv);
    JsonValue closed = JsonValue::object();
    closed["risk"] = JsonValue(r.closed.risk);
    closed["adv_risk"] = JsonValue(r.closed.chosen_head == "h1" ? r.closed.adv_risk_h1
                                                                : r.closed.adv_risk_h2);
    closed["p_int"] = JsonValue(r.closed.p_int);
    closed["rv"] = JsonValue(r.closed.rv_closed_form);
    out["closed"] = std::move(closed);
    return out;
}

JsonValue run_bound(RunContext& ctx) {
    const double mi_worst = get_real(ctx.cfg(), "mi_worst");
    const std::size_t classes = get_count(ctx.cfg(), "classes");
    const auto b = wcmi::eval::fano_bound(mi_worst, classes);

    JsonValue out = JsonValue::object();
    out["mi_worst"] = JsonValue(mi_worst);
    out["classes"] = JsonValue(classes);
    out["min_adv_risk"] = JsonValue(b.min_adv_risk);
    out["max_adv_accuracy"] = JsonValue(b.max_adv_accuracy);
    out["clamped"] = JsonValue(b.clamped_mi);
    return out;
}

JsonValue run_mi_estimate(RunContext& ctx) {
    const auto d = load_data(ctx);
    const auto [train, test] = split_for_estimation(ctx, d);
    const Network encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");
    const auto cfg = estimator_from(ctx.cfg(), "estimator.", ctx.stage("estimator"));
    const std::string mode = get_text(ctx.cfg(), "mode");

    wcmi::mi::MiEstimate est;
    if (mode == "standard")
        est = wcmi::mi::estimate_standard_mi(train.rows, test.rows, encoder, cfg);
    else if (mode == "worst_case")
        est = wcmi::mi::estimate_worst_case_mi(train.rows, test.rows, encoder, cfg,
                                               attack_from(ctx.cfg()));
    else
        throw std::invalid_argument("config key 'mode': expected 'standard' or 'worst_case'");

    std::string csv = "epoch,objective\n";
    for (std::size_t i = 0; i < est.history.size(); ++i)
        csv += std::to_string(i) + "," + fmt_real(est.history[i]) + "\n";
    ctx.write_side("history.csv", csv);
    ctx.write_side("critic.json", wcmi::io::network_to_json(est.critic).dump());
    if (!ctx.has_out())
        std::cerr << "note: no --out directory; the trained critic was not persisted\n";

    JsonValue out = JsonValue::object();
    out["mode"] = JsonValue(mode);
    out["value"] = JsonValue(est.value);
    out["epochs"] = JsonValue(est.history.size());
    return out;
}

JsonValue run_rv_estimate(RunContext& ctx) {
    const auto d = load_data(ctx);
    const auto [train, test] = split_for_estimation(ctx, d);
    const Network encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");
    const auto cfg = estimator_from(ctx.cfg(), "estimator.", ctx.stage("estimator"));
    const auto attack = attack_from(ctx.cfg());

    const auto rep = wcmi::mi::estimate_rv(train.rows, test.rows, encoder, cfg, attack);

    std::string csv = "epoch,standard,worst_case\n";
    for (std::size_t i = 0; i < rep.history_standard.size(); ++i)
        csv += std::to_string(i) + "," + fmt_real(rep.history_standard[i]) + "," +
               fmt_real(rep.history_worst[i]) + "\n";
    ctx.write_side("history.csv", csv);

    JsonValue out = JsonValue::object();
    out["j1"] = JsonValue(rep.j1);
    out["j2"] = JsonValue(rep.j2);
    out["rv"] = JsonValue(rep.rv);
    out["epochs"] = JsonValue(rep.history_standard.size());
    if (get_bool(ctx.cfg(), "per_feature")) {
        wcmi::mi::EstimatorConfig per = cfg;
        per.seed = ctx.stage("per-feature");
        const auto reports =
            wcmi::mi::estimate_rv_per_feature(train.rows, test.rows, encoder, per, attack);
        JsonValue arr = JsonValue::array();
        for (std::size_t c = 0; c < reports.size(); ++c) {
            JsonValue item = JsonValue::object();
            item["feature"] = JsonValue(c);
            item["j1"] = JsonValue(reports[c].j1);
            item["j2"] = JsonValue(reports[c].j2);
            item["rv"] = JsonValue(reports[c].rv);
            arr.push_back(std::move(item));
        }
        out["per_feature"] = std::move(arr);
    }
    return out;
}

JsonValue run_repr_train(RunContext& ctx) {
    const auto d = load_data(ctx);

    wcmi::repr::TrainPrincipleConfig tc;
    tc.objective = wcmi::repr::objective_from_name(get_text(ctx.cfg(), "objective"));
    tc.beta = get_real(ctx.cfg(), "beta");
    tc.encoder_dims = get_sizes(ctx.cfg(), "encoder_dims");
    tc.critic = estimator_from(ctx.cfg(), "critic.", 0);
    tc.attack = attack_from(ctx.cfg());
    tc.critic_steps = get_count(ctx.cfg(), "critic_steps");
    tc.encoder_steps = get_count(ctx.cfg(), "encoder_steps");
    tc.encoder_step_size = get_real(ctx.cfg(), "encoder_step_size");
    tc.encoder_rule = wcmi::Optimizer::rule_from_name(get_text(ctx.cfg(), "encoder_rule"));
    tc.seed = ctx.stage("train");
    if (!tc.encoder_dims.empty() && tc.encoder_dims.front() != d.batch.dim())
        throw std::invalid_argument("config key 'encoder_dims': first width " +
                                    std::to_string(tc.encoder_dims.front()) +
                                    " does not match the data dimension " +
                                    std::to_string(d.batch.dim()));

    const auto res = wcmi::repr::train_encoder(d.batch, tc);

    std::string csv = "step,phase,objective\n";
    for (const auto& e : res.log)
        csv += std::to_string(e.step) + "," + wcmi::repr::train_phase_name(e.phase) + "," +
               fmt_real(e.j) + "\n";
    ctx.write_side("history.csv", csv);
    ctx.write_side("encoder.json", wcmi::io::network_to_json(res.encoder).dump());
    if (!ctx.has_out())
        std::cerr << "note: no --out directory; the trained encoder was not persisted\n";

    const Vec progress = wcmi::repr::phase_series(res.log, wcmi::repr::TrainPhase::encoder);
    JsonValue out = JsonValue::object();
    out["objective"] = JsonValue(wcmi::repr::objective_name(tc.objective));
    out["encoder_steps"] = JsonValue(tc.encoder_steps);
    out["log_entries"] = JsonValue(res.log.size());
    out["final_objective"] = progress.empty() ? JsonValue() : JsonValue(progress.back());
    return out;
}

JsonValue run_clf_train(RunContext& ctx) {
    const auto d = load_data(ctx);
    const Network encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");

    wcmi::eval::HeadTrainConfig hc;
    hc.kind = wcmi::eval::head_kind_from_name(get_text(ctx.cfg(), "head.kind"));
    hc.hidden = get_count(ctx.cfg(), "head.hidden");
    hc.classes = get_count(ctx.cfg(), "head.classes");
    hc.mode = wcmi::eval::train_mode_from_name(get_text(ctx.cfg(), "head.mode"));
    hc.attack = attack_from(ctx.cfg());
    hc.epochs = get_count(ctx.cfg(), "head.epochs");
    hc.step_size = get_real(ctx.cfg(), "head.step_size");
    hc.batch_size = get_count(ctx.cfg(), "head.batch_size");
    hc.rule = wcmi::Optimizer::rule_from_name(get_text(ctx.cfg(), "head.rule"));
    hc.early_stop = get_bool(ctx.cfg(), "head.early_stop");
    hc.seed = ctx.stage("head");

    wcmi::eval::HeadTrainResult r;
    if (hc.early_stop) {
        // hold out a slice of the training data for the stopping criterion
        const double frac = get_real(ctx.cfg(), "head.holdout_fraction");
        if (!(frac > 0.0 && frac < 1.0))
            throw std::invalid_argument(
                "config key 'head.holdout_fraction': must lie strictly between 0 and 1");
        if (d.batch.size() < 2)
            throw std::invalid_argument("need at least two rows for an early-stopping holdout");
        SeededRng rng(ctx.stage("holdout"));
        const auto order = rng.sample_indices(d.batch.size(), d.batch.size());
        const std::size_t n_hold = std::clamp<std::size_t>(
            std::size_t(std::llround(frac * double(d.batch.size()))), 1, d.batch.size() - 1);
        const std::vector<std::size_t> hold_idx(order.begin(), order.begin() + long(n_hold));
        const std::vector<std::size_t> rest_idx(order.begin() + long(n_hold), order.end());
        const SampleBatch hold = d.batch.subset(hold_idx);
        const SampleBatch rest = d.batch.subset(rest_idx);
        r = wcmi::eval::train_head(encoder, rest, hc, &hold);
    } else {
        r = wcmi::eval::train_head(encoder, d.batch, hc);
    }

    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < r.loss_history.size(); ++i)
        csv += std::to_string(i) + "," + fmt_real(r.loss_history[i]) + "\n";
    ctx.write_side("history.csv", csv);
    ctx.write_side("head.json", wcmi::io::network_to_json(r.head.net).dump());
    if (!ctx.has_out())
        std::cerr << "note: no --out directory; the trained head was not persisted\n";

    JsonValue out = JsonValue::object();
    out["final_loss"] =
        r.loss_history.empty() ? JsonValue() : JsonValue(r.loss_history.back());
    out["epochs"] = JsonValue(r.loss_history.size());
    out["early_stopped"] = JsonValue(r.early_stopped);
    out["snapshot_epoch"] = JsonValue(r.snapshot_epoch);
    JsonValue notes = JsonValue::array();
    if (!r.metadata.empty()) notes.push_back(JsonValue(r.metadata));
    out["notes"] = std::move(notes);
    return out;
}

/// A single affine layer is reported as a linear head, anything else as mlp.
wcmi::eval::ClassifierHead head_from_net(Network net) {
    const auto kind = net.layers().size() == 1 ? wcmi::eval::HeadKind::linear
                                               : wcmi::eval::HeadKind::mlp;
    return {std::move(net), kind};
}

JsonValue run_eval(RunContext& ctx) {
    const auto d = load_data(ctx);
    const Network encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");
    const auto head =
        head_from_net(load_net(ctx.cfg(), "head", encoder.output_dim(), "classifier head"));
    const auto rep = wcmi::eval::evaluate(encoder, head, d.batch, attack_from(ctx.cfg()));

    JsonValue warnings = JsonValue::array();
    const double tv = wcmi::eval::label_uniformity_tv(d.batch.labels, head.classes());
    if (tv > 0.05) {
        char buf[96];
        std::snprintf(buf, sizeof buf,
                      "label distribution deviates from uniform (total variation %.4f)", tv);
        warnings.push_back(JsonValue(std::string(buf)));
    }

    JsonValue out = JsonValue::object();
    out["natural_accuracy"] = JsonValue(rep.natural_accuracy);
    out["adversarial_accuracy"] = JsonValue(rep.adversarial_accuracy);
    out["adversarial_risk"] = JsonValue(rep.adversarial_risk);
    out["adversarial_gap"] = JsonValue(rep.adversarial_gap);
    out["samples"] = JsonValue(rep.samples);
    JsonValue atk = JsonValue::object();
    atk["norm"] = JsonValue(std::isinf(rep.attack.budget.p) ? "linf" : "l2");
    atk["epsilon"] = JsonValue(rep.attack.budget.epsilon);
    atk["steps"] = JsonValue(rep.attack.steps);
    atk["step_size"] = JsonValue(rep.attack.step_size);
    out["attack"] = std::move(atk);
    out["warnings"] = std::move(warnings);
    return out;
}

JsonValue run_saliency(RunContext& ctx) {
    if (!ctx.has_out())
        throw std::invalid_argument("saliency writes image files and requires --out DIR");
    const auto d = load_data(ctx);
    const auto sel = wcmi::repr::saliency_selector_from_name(get_text(ctx.cfg(), "loss"));
    const std::size_t count = std::min(get_count(ctx.cfg(), "count"), d.batch.size());
    if (count == 0) throw std::invalid_argument("config key 'count': need at least one sample");

    // owners for whichever networks the selector needs
    std::optional<Network> encoder, critic, classifier;
    wcmi::repr::SaliencyModel model;
    if (sel == wcmi::repr::SaliencySelector::mi_critic) {
        encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");
        critic = load_net(ctx.cfg(), "critic", d.batch.dim() + encoder->output_dim(), "critic");
        model.encoder = &*encoder;
        model.critic = &*critic;
    } else {
        if (!d.batch.has_labels())
            throw std::invalid_argument("cross_entropy saliency needs labeled data");
        if (get_text(ctx.cfg(), "encoder").empty()) {
            classifier = load_net(ctx.cfg(), "head", d.batch.dim(), "classifier");
        } else {
            encoder = load_net(ctx.cfg(), "encoder", d.batch.dim(), "encoder");
            classifier = Network::chain(
                *encoder, load_net(ctx.cfg(), "head", encoder->output_dim(), "classifier head"));
        }
        model.classifier = &*classifier;
    }

    const std::size_t height = d.height > 0 ? d.height : 1;
    const std::size_t width = d.height > 0 ? d.width : d.batch.dim();
    JsonValue files = JsonValue::array();
    for (std::size_t i = 0; i < count; ++i) {
        const Vec x = d.batch.rows.row_copy(i);
        std::optional<int> label;
        if (sel == wcmi::repr::SaliencySelector::cross_entropy) label = d.batch.labels[i];
        const Vec g = wcmi::repr::saliency(model, x, sel, label);
        char name[48];
        std::snprintf(name, sizeof name, "saliency/%04zu.pgm", i);
        ctx.write_side(name, pgm_text(g.data(), height, width));
        files.push_back(JsonValue(std::string(name)));
    }

    JsonValue out = JsonValue::object();
    out["loss"] = JsonValue(get_text(ctx.cfg(), "loss"));
    out["samples"] = JsonValue(count);
    out["files"] = std::move(files);
    return out;
}

// ---------------------------------------------------------------------------
// selftest: fast invariants from every module plus a replay matrix

JsonValue defaults_for(const std::string& name);  // forward

namespace selfcheck {

bool seeds_split() {
    using wcmi::derive_seed;
    return derive_seed(1, "a") == derive_seed(1, "a") &&
           derive_seed(1, "a") != derive_seed(1, "b") &&
           derive_seed(1, "a") != derive_seed(2, "a") &&
           derive_seed(1, "a", 1) != derive_seed(1, "a", 0);
}

bool rng_repeats() {
    SeededRng a(7), b(7);
    for (int i = 0; i < 5; ++i)
        if (a.next_u64() != b.next_u64()) return false;
    const double u = a.uniform01();
    return u >= 0.0 && u < 1.0;
}

bool ball_projection() {
    Vec x = {3.0, 4.0};
    const Vec c = {0.0, 0.0};
    wcmi::project_ball_inplace(x, c, PerturbationBudget::l2(1.0));
    const double n = std::sqrt(x[0] * x[0] + x[1] * x[1]);
    Vec inside = {0.25, 0.0};
    wcmi::project_ball_inplace(inside, c, PerturbationBudget::l2(1.0));
    return n <= 1.0 + 1e-12 && inside[0] == 0.25 && inside[1] == 0.0;
}

bool independent_table_mi_zero() {
    Matrix t(2, 2);
    t(0, 0) = t(0, 1) = t(1, 0) = t(1, 1) = 0.25;
    return wcmi::discrete_mutual_information(wcmi::DiscreteJoint(t)) == 0.0;
}

bool forward_arithmetic() {
    Matrix w(1, 1);
    w(0, 0) = 2.0;
    const Network net = Network::linear(w, {1.0});
    Matrix x(1, 1);
    x(0, 0) = 3.0;
    return net.forward(x)(0, 0) == 7.0;
}

bool uniform_softmax_ce() {
    const Matrix logits(2, 4);
    const double loss = wcmi::softmax_cross_entropy(logits, {0, 2}, nullptr);
    return loss == std::log(4.0);
}

bool zero_budget_mixture() {
    const auto spec = wcmi::gmm::GaussianMixtureSpec::isotropic({1.0, 0.0}, 1.0);
    const wcmi::gmm::LinearSignFeature f{{1.0, 0.0}};
    const auto r = wcmi::gmm::analyze(spec, f, PerturbationBudget::l2(0.0));
    return r.adv_risk_h1 == r.risk && r.rv_closed_form == 0.0 && r.p_int == 0.0;
}

// an isotropic problem only depends on <w, theta> and the variance, so
// rotating mean and feature together must not change any closed form
bool mixture_rotation_invariance() {
    const auto budget = PerturbationBudget::l2(0.4);
    const auto a = wcmi::gmm::analyze(wcmi::gmm::GaussianMixtureSpec::isotropic({0.8, 0.6}, 1.3),
                                      wcmi::gmm::LinearSignFeature{{0.8, 0.6}}, budget);
    const auto b = wcmi::gmm::analyze(wcmi::gmm::GaussianMixtureSpec::isotropic({-0.6, 0.8}, 1.3),
                                      wcmi::gmm::LinearSignFeature{{-0.6, 0.8}}, budget);
    return a.risk == b.risk && a.p_int == b.p_int && a.rv_closed_form == b.rv_closed_form;
}

bool sample_determinism() {
    const auto spec = wcmi::gmm::GaussianMixtureSpec::isotropic({1.0, 0.0}, 1.0);
    SeededRng r1(11), r2(11);
    const auto a = wcmi::gmm::sample_gmm(spec, 16, r1);
    const auto b = wcmi::gmm::sample_gmm(spec, 16, r2);
    return a.rows.data() == b.rows.data() && a.labels == b.labels;
}

bool constant_critic_dv_zero() {
    const Network critic = Network::linear(Matrix(1, 4), {0.0});
    Matrix x(6, 2), z(6, 2);
    SeededRng rng(3);
    for (auto& v : x.data()) v = rng.normal();
    for (auto& v : z.data()) v = rng.normal();
    SeededRng pr(4);
    const auto p = wcmi::mi::PairingScheme::sample(6, 2, pr);
    return wcmi::mi::dv_value_pairs(critic, x, z, p) == 0.0;
}

bool pairing_determinism() {
    SeededRng r1(9), r2(9);
    const auto a = wcmi::mi::PairingScheme::sample(8, 3, r1);
    const auto b = wcmi::mi::PairingScheme::sample(8, 3, r2);
    return a.idx == b.idx;
}

bool train_zero_steps() {
    wcmi::repr::TrainPrincipleConfig tc;
    tc.encoder_dims = {2, 3, 2};
    tc.encoder_steps = 0;
    tc.critic.batch_size = 8;
    tc.critic.negatives = 2;
    tc.seed = 5;
    Matrix data(8, 2);
    SeededRng rng(6);
    for (auto& v : data.data()) v = rng.normal();
    const auto res = wcmi::repr::train_encoder(data, tc);
    return res.log.empty() && res.encoder == wcmi::repr::initial_encoder(tc);
}

bool infomax_attack_blind() {
    wcmi::repr::TrainPrincipleConfig a;
    a.objective = wcmi::repr::Objective::infomax;
    a.encoder_dims = {2, 3, 2};
    a.encoder_steps = 2;
    a.critic_steps = 1;
    a.critic.batch_size = 8;
    a.critic.negatives = 2;
    a.critic.critic_hidden = {4};
    a.seed = 12;
    wcmi::repr::TrainPrincipleConfig b = a;
    a.attack = wcmi::mi::AttackConfig(2, 0.5, PerturbationBudget::l2(1.0));
    b.attack = wcmi::mi::AttackConfig(9, 0.01, PerturbationBudget::linf(0.2));
    Matrix data(12, 2);
    SeededRng rng(13);
    for (auto& v : data.data()) v = rng.normal();
    const auto ra = wcmi::repr::train_encoder(data, a);
    const auto rb = wcmi::repr::train_encoder(data, b);
    return ra.encoder == rb.encoder;
}

bool fano_reference_points() {
    const auto hi = wcmi::eval::fano_bound(1.08, 10);
    const auto lo = wcmi::eval::fano_bound(0.0, 10);
    return std::fabs(hi.max_adv_accuracy - 0.770068036119493169) < 1e-12 &&
           std::fabs(lo.max_adv_accuracy - 0.301029995663981195) < 1e-12;
}

bool fano_saturation() {
    return wcmi::eval::fano_bound(std::log(10.0), 10).min_adv_risk == 0.0;
}

bool alternating_coin_head() {
    Matrix w(1, 1);
    w(0, 0) = 1.0;
    const Network id = Network::linear(w, {0.0});
    const wcmi::eval::ClassifierHead head{Network::linear(Matrix(2, 1), {0.0, 0.0}),
                                          wcmi::eval::HeadKind::linear};
    Matrix x(4, 1);
    for (std::size_t i = 0; i < 4; ++i) x(i, 0) = double(i);
    const SampleBatch data(std::move(x), {0, 1, 0, 1});
    const auto rep = wcmi::eval::evaluate(
        id, head, data, wcmi::mi::AttackConfig(3, 0.1, PerturbationBudget::l2(0.0)));
    return rep.natural_accuracy == 0.5 && rep.adversarial_accuracy == 0.5;
}

bool balanced_label_tv() {
    return wcmi::eval::label_uniformity_tv({0, 1, 0, 1}, 2) == 0.0;
}

bool tensorization_independent_bits() {
    wcmi::eval::ConditionalModel m;
    m.px = {0.5, 0.5};
    Matrix copy(2, 2);
    copy(0, 0) = 1.0;
    copy(1, 1) = 1.0;
    Matrix noise(2, 2);
    noise(0, 0) = noise(0, 1) = noise(1, 0) = noise(1, 1) = 0.5;
    m.channels = {copy, noise};
    const auto rep = wcmi::eval::tensorization_check(m);
    return rep.holds && std::fabs(rep.rhs - rep.lhs) <= 1e-12;
}

bool idx_roundtrip(const fs::path& dir) {
    Matrix rows(2, 4);
    for (std::size_t i = 0; i < 8; ++i) rows.data()[i] = double(i) * 30.0 / 255.0;
    const std::string img = (dir / "st_img.idx").string();
    const std::string lbl = (dir / "st_lbl.idx").string();
    wcmi::io::write_idx_images(img, rows, 2, 2);
    wcmi::io::write_idx_labels(lbl, {3, 7});
    const auto back = wcmi::io::read_idx_images(img);
    return back.rows.data() == rows.data() && wcmi::io::read_idx_labels(lbl) ==
                                                  std::vector<int>{3, 7};
}

bool constant_image_pool() {
    Matrix img(1, 784);
    for (auto& v : img.data()) v = 0.4;
    const Matrix pooled = wcmi::io::mean_pool(img, 28, 28, 2);
    if (pooled.cols() != 196) return false;
    for (double v : pooled.data())
        if (v != 0.4) return false;
    return true;
}

bool json_stability() {
    JsonValue v = JsonValue::object();
    v["a"] = JsonValue(0.1);
    v["b"] = JsonValue(18446744073709551615ULL);
    v["c"] = JsonValue(-0.0);
    v["d"] = JsonValue::array();
    v["d"].push_back(JsonValue(1));
    v["d"].push_back(JsonValue(true));
    v["d"].push_back(JsonValue());
    const std::string first = v.dump();
    return wcmi::io::parse_json(first).dump() == first;
}

bool network_json_roundtrip() {
    SeededRng rng(3);
    const Network net = Network::mlp({2, 3, 1}, rng);
    return wcmi::io::network_from_json(wcmi::io::network_to_json(net)) == net;
}

bool unit_box_columns() {
    Matrix m(3, 1);
    m(0, 0) = 0.0;
    m(1, 0) = 2.0;
    m(2, 0) = 1.0;
    wcmi::io::scale_to_unit_box(m);
    return m(0, 0) == 0.0 && m(1, 0) == 1.0 && m(2, 0) == 0.5;
}

bool csv_roundtrip(const fs::path& dir) {
    const std::string path = (dir / "st.csv").string();
    wcmi::io::write_text_file(path, "0.5,1\n-0.25,0\n");
    const SampleBatch b = wcmi::io::read_csv(path, true);
    return b.size() == 2 && b.rows(0, 0) == 0.5 && b.rows(1, 0) == -0.25 &&
           b.labels == std::vector<int>{1, 0};
}

bool schema_rejects_extras(const JsonValue& schema) {
    JsonValue doc = JsonValue::object();
    doc["tool_version"] = JsonValue(kToolVersion);
    doc["subcommand"] = JsonValue("bound");
    JsonValue res = JsonValue::object();
    res["mi_worst"] = JsonValue(1.0);
    res["classes"] = JsonValue(10);
    res["min_adv_risk"] = JsonValue(0.1);
    res["max_adv_accuracy"] = JsonValue(0.9);
    res["clamped"] = JsonValue(false);
    doc["result"] = res;
    if (wcmi::io::schema_error(doc, schema)) return false;  // must accept the good doc
    doc["result"]["surprise"] = JsonValue(1);
    return wcmi::io::schema_error(doc, schema).has_value();
}

}  // namespace selfcheck

JsonValue run_selftest(RunContext& ctx) {
    const JsonValue schema = wcmi::io::parse_json(std::string(wcmi::io::kResultSchemaJson));

    // scratch space: under --out when given, otherwise a throwaway temp tree
    fs::path root;
    bool temp_root = false;
    if (ctx.has_out()) {
        root = ctx.out() / "matrix";
    } else {
        root = fs::temp_directory_path() / ("wcmi_selftest_" + std::to_string(::getpid()));
        temp_root = true;
    }
    fs::create_directories(root);

    JsonValue checks = JsonValue::array();
    bool all_pass = true;
    const auto record = [&](const std::string& name, bool ok) {
        JsonValue c = JsonValue::object();
        c["name"] = JsonValue(name);
        c["pass"] = JsonValue(ok);
        checks.push_back(std::move(c));
        if (!ok) {
            all_pass = false;
            std::cerr << "selftest: check failed: " << name << "\n";
        }
    };
    const auto check = [&](const std::string& name, const std::function<bool()>& f) {
        bool ok = false;
        try {
            ok = f();
        } catch (const std::exception& e) {
            std::cerr << "selftest: check threw: " << name << ": " << e.what() << "\n";
        }
        record(name, ok);
    };

    check("seed-splitting", selfcheck::seeds_split);
    check("rng-repeatability", selfcheck::rng_repeats);
    check("ball-projection", selfcheck::ball_projection);
    check("independent-table-mi-zero", selfcheck::independent_table_mi_zero);
    check("forward-arithmetic", selfcheck::forward_arithmetic);
    check("uniform-softmax-ce", selfcheck::uniform_softmax_ce);
    check("zero-budget-mixture", selfcheck::zero_budget_mixture);
    check("mixture-rotation-invariance", selfcheck::mixture_rotation_invariance);
    check("sample-determinism", selfcheck::sample_determinism);
    check("constant-critic-dv-zero", selfcheck::constant_critic_dv_zero);
    check("pairing-determinism", selfcheck::pairing_determinism);
    check("train-zero-steps", selfcheck::train_zero_steps);
    check("infomax-attack-blind", selfcheck::infomax_attack_blind);
    check("fano-reference-points", selfcheck::fano_reference_points);
    check("fano-saturation", selfcheck::fano_saturation);
    check("alternating-coin-head", selfcheck::alternating_coin_head);
    check("balanced-label-tv", selfcheck::balanced_label_tv);
    check("tensorization-independent-bits", selfcheck::tensorization_independent_bits);
    check("idx-roundtrip", [&] { return selfcheck::idx_roundtrip(root); });
    check("constant-image-pool", selfcheck::constant_image_pool);
    check("json-stability", selfcheck::json_stability);
    check("network-json-roundtrip", selfcheck::network_json_roundtrip);
    check("unit-box-columns", selfcheck::unit_box_columns);
    check("csv-roundtrip", [&] { return selfcheck::csv_roundtrip(root); });
    check("schema-rejects-extras", [&] { return selfcheck::schema_rejects_extras(schema); });

    // Matrix: run every subcommand at a small scale, validate its result
    // against the schema, then replay its manifest and require byte-equal
    // numeric outputs. Later entries consume artifacts of earlier ones.
    struct Entry {
        std::string name;
        std::function<void(JsonValue&)> tweak;
    };
    const fs::path enc_dir = root / "m03";
    const fs::path mi_dir = root / "m04";
    const fs::path head_dir = root / "m06";
    const auto small_data = [&](JsonValue& cfg, std::size_t n) {
        set_path(cfg, "data.n", JsonValue(n));
    };
    const std::vector<Entry> entries = {
        {"gmm analyze", [](JsonValue&) {}},
        {"gmm verify", [](JsonValue& cfg) { set_path(cfg, "samples", JsonValue(20000)); }},
        {"bound",
         [](JsonValue& cfg) {
             set_path(cfg, "mi_worst", JsonValue(1.08));
             set_path(cfg, "classes", JsonValue(10));
         }},
        {"repr train",
         [&](JsonValue& cfg) {
             small_data(cfg, 48);
             set_path(cfg, "objective", JsonValue("worst_case"));
             set_path(cfg, "encoder_dims", wcmi::io::parse_json("[2, 4, 2]"));
             set_path(cfg, "encoder_steps", JsonValue(3));
             set_path(cfg, "encoder_step_size", JsonValue(0.003));
             set_path(cfg, "critic_steps", JsonValue(2));
             set_path(cfg, "critic.batch_size", JsonValue(32));
             set_path(cfg, "critic.negatives", JsonValue(4));
             set_path(cfg, "critic.hidden", wcmi::io::parse_json("[8, 8]"));
             set_path(cfg, "attack.epsilon", JsonValue(0.25));
             set_path(cfg, "attack.steps", JsonValue(2));
             set_path(cfg, "attack.step_size", JsonValue(0.2));
         }},
        {"mi estimate",
         [&](JsonValue& cfg) {
             small_data(cfg, 90);
             set_path(cfg, "encoder", JsonValue((enc_dir / "encoder.json").string()));
             set_path(cfg, "mode", JsonValue("worst_case"));
             set_path(cfg, "estimator.epochs", JsonValue(4));
             set_path(cfg, "estimator.batch_size", JsonValue(32));
             set_path(cfg, "estimator.negatives", JsonValue(4));
             set_path(cfg, "estimator.test_batches", JsonValue(2));
             set_path(cfg, "estimator.hidden", wcmi::io::parse_json("[8, 8]"));
             set_path(cfg, "attack.epsilon", JsonValue(0.25));
             set_path(cfg, "attack.steps", JsonValue(2));
             set_path(cfg, "attack.step_size", JsonValue(0.2));
         }},
        {"rv estimate",
         [&](JsonValue& cfg) {
             small_data(cfg, 90);
             set_path(cfg, "encoder", JsonValue((enc_dir / "encoder.json").string()));
             set_path(cfg, "estimator.epochs", JsonValue(3));
             set_path(cfg, "estimator.batch_size", JsonValue(32));
             set_path(cfg, "estimator.negatives", JsonValue(4));
             set_path(cfg, "estimator.test_batches", JsonValue(2));
             set_path(cfg, "estimator.hidden", wcmi::io::parse_json("[8, 8]"));
             set_path(cfg, "attack.epsilon", JsonValue(0.25));
             set_path(cfg, "attack.steps", JsonValue(2));
             set_path(cfg, "attack.step_size", JsonValue(0.2));
         }},
        {"clf train",
         [&](JsonValue& cfg) {
             small_data(cfg, 60);
             set_path(cfg, "encoder", JsonValue((enc_dir / "encoder.json").string()));
             set_path(cfg, "head.epochs", JsonValue(4));
             set_path(cfg, "head.batch_size", JsonValue(32));
         }},
        {"eval",
         [&](JsonValue& cfg) {
             small_data(cfg, 40);
             set_path(cfg, "encoder", JsonValue((enc_dir / "encoder.json").string()));
             set_path(cfg, "head", JsonValue((head_dir / "head.json").string()));
             set_path(cfg, "attack.norm", JsonValue("linf"));
             set_path(cfg, "attack.epsilon", JsonValue(0.1));
             set_path(cfg, "attack.steps", JsonValue(2));
         }},
        {"saliency",
         [&](JsonValue& cfg) {
             small_data(cfg, 6);
             set_path(cfg, "count", JsonValue(3));
             set_path(cfg, "encoder", JsonValue((enc_dir / "encoder.json").string()));
             set_path(cfg, "critic", JsonValue((mi_dir / "critic.json").string()));
         }},
    };

    JsonValue matrix = JsonValue::array();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& entry = entries[i];
        bool schema_ok = false, replay_ok = false;
        try {
            JsonValue cfg = defaults_for(entry.name);
            entry.tweak(cfg);
            const std::uint64_t seed = wcmi::derive_seed(ctx.master_seed(), "matrix", i);
            char dirname[24];
            std::snprintf(dirname, sizeof dirname, "m%02zu", i);
            const fs::path dir_a = root / dirname;
            const JsonValue doc = run_one(entry.name, cfg, seed, dir_a);
            schema_ok = !wcmi::io::schema_error(doc, schema).has_value();
            if (!schema_ok)
                std::cerr << "selftest: schema violation in " << entry.name << ": "
                          << *wcmi::io::schema_error(doc, schema) << "\n";

            // replay from the recorded manifest into a sibling directory
            const JsonValue manifest =
                wcmi::io::load_json((dir_a / "manifest.json").string());
            const fs::path dir_b = root / (std::string(dirname) + "_replay");
            run_one(manifest.at("subcommand").as_string(), manifest.at("config"),
                    manifest.at("seed").as_uint(), dir_b);
            replay_ok = wcmi::io::read_text_file((dir_a / "result.json").string()) ==
                        wcmi::io::read_text_file((dir_b / "result.json").string());
            if (replay_ok && fs::exists(dir_a / "history.csv"))
                replay_ok = wcmi::io::read_text_file((dir_a / "history.csv").string()) ==
                            wcmi::io::read_text_file((dir_b / "history.csv").string());
            if (!replay_ok)
                std::cerr << "selftest: replay mismatch for " << entry.name << "\n";
        } catch (const std::exception& e) {
            std::cerr << "selftest: matrix entry failed: " << entry.name << ": " << e.what()
                      << "\n";
        }
        JsonValue m = JsonValue::object();
        m["subcommand"] = JsonValue(entry.name);
        m["schema_ok"] = JsonValue(schema_ok);
        m["replay_identical"] = JsonValue(replay_ok);
        matrix.push_back(std::move(m));
        all_pass = all_pass && schema_ok && replay_ok;
    }

    if (temp_root) {
        std::error_code ec;
        fs::remove_all(root, ec);
    }

    JsonValue out = JsonValue::object();
    out["pass"] = JsonValue(all_pass);
    out["checks"] = std::move(checks);
    out["matrix"] = std::move(matrix);

    // the selftest report itself must satisfy the published schema
    JsonValue preview = JsonValue::object();
    preview["tool_version"] = JsonValue(kToolVersion);
    preview["subcommand"] = JsonValue("selftest");
    preview["result"] = out;
    if (const auto err = wcmi::io::schema_error(preview, schema)) {
        std::cerr << "selftest: own result violates the schema: " << *err << "\n";
        out["pass"] = JsonValue(false);
    }
    return out;
}

JsonValue run_subcommand(RunContext& ctx) {
    const std::string& n = ctx.name();
    if (n == "gmm analyze") return run_gmm_analyze(ctx);
    if (n == "gmm verify") return run_gmm_verify(ctx);
    if (n == "bound") return run_bound(ctx);
    if (n == "mi estimate") return run_mi_estimate(ctx);
    if (n == "rv estimate") return run_rv_estimate(ctx);
    if (n == "repr train") return run_repr_train(ctx);
    if (n == "clf train") return run_clf_train(ctx);
    if (n == "eval") return run_eval(ctx);
    if (n == "saliency") return run_saliency(ctx);
    if (n == "selftest") return run_selftest(ctx);
    throw std::logic_error("unknown subcommand: " + n);
}

// ---------------------------------------------------------------------------
// defaults and flag wiring

JsonValue data_defaults(bool with_split) {
    JsonValue d = JsonValue::object();
    d["source"] = JsonValue("synthetic_gmm");
    d["theta"] = wcmi::io::parse_json("[1.0, 0.0]");
    d["variance"] = JsonValue(1.0);
    d["sigma"] = JsonValue();
    d["n"] = JsonValue(1000);
    d["image_path"] = JsonValue("");
    d["label_path"] = JsonValue("");
    d["downsample"] = JsonValue(1);
    d["csv_path"] = JsonValue("");
    d["csv_labeled"] = JsonValue(false);
    d["take"] = JsonValue(0);
    d["normalization"] = JsonValue("none");
    if (with_split) d["test_fraction"] = JsonValue(1.0 / 3.0);
    return d;
}

JsonValue attack_defaults(const char* norm, double eps) {
    JsonValue a = JsonValue::object();
    a["norm"] = JsonValue(norm);
    a["epsilon"] = JsonValue(eps);
    a["steps"] = JsonValue(10);
    a["step_size"] = JsonValue(0.1);
    a["box"] = JsonValue();
    return a;
}

JsonValue estimator_defaults() {
    JsonValue e = JsonValue::object();
    e["epochs"] = JsonValue(300);
    e["step_size"] = JsonValue(0.001);
    e["batch_size"] = JsonValue(128);
    e["negatives"] = JsonValue(16);
    e["test_batches"] = JsonValue(10);
    e["hidden"] = wcmi::io::parse_json("[64, 64]");
    e["rule"] = JsonValue("adam");
    return e;
}

JsonValue defaults_for(const std::string& name) {
    JsonValue c = JsonValue::object();
    if (name == "gmm analyze" || name == "gmm verify") {
        c["theta"] = wcmi::io::parse_json("[1.0, 0.0]");
        c["variance"] = JsonValue(1.0);
        c["sigma"] = JsonValue();
        c["w"] = wcmi::io::parse_json("[1.0, 0.0]");
        c["norm"] = JsonValue("l2");
        c["epsilon"] = JsonValue(0.5);
        if (name == "gmm verify") c["samples"] = JsonValue(1000000);
    } else if (name == "bound") {
        c["mi_worst"] = JsonValue();
        c["classes"] = JsonValue(10);
    } else if (name == "mi estimate" || name == "rv estimate") {
        c["data"] = data_defaults(true);
        c["encoder"] = JsonValue("");
        if (name == "mi estimate") c["mode"] = JsonValue("standard");
        if (name == "rv estimate") c["per_feature"] = JsonValue(false);
        c["estimator"] = estimator_defaults();
        c["attack"] = attack_defaults("l2", 0.5);
    } else if (name == "repr train") {
        c["data"] = data_defaults(false);
        c["objective"] = JsonValue("infomax");
        c["beta"] = JsonValue(1.0);
        c["encoder_dims"] = wcmi::io::parse_json("[2, 8, 2]");
        c["critic"] = estimator_defaults();
        c["attack"] = attack_defaults("l2", 0.0);
        c["critic_steps"] = JsonValue(5);
        c["encoder_steps"] = JsonValue(200);
        c["encoder_step_size"] = JsonValue(0.001);
        c["encoder_rule"] = JsonValue("adam");
    } else if (name == "clf train") {
        c["data"] = data_defaults(false);
        c["encoder"] = JsonValue("");
        JsonValue h = JsonValue::object();
        h["kind"] = JsonValue("linear");
        h["hidden"] = JsonValue(200);
        h["classes"] = JsonValue(2);
        h["mode"] = JsonValue("standard");
        h["epochs"] = JsonValue(200);
        h["step_size"] = JsonValue(0.001);
        h["batch_size"] = JsonValue(128);
        h["rule"] = JsonValue("adam");
        h["early_stop"] = JsonValue(false);
        h["holdout_fraction"] = JsonValue(0.25);
        c["head"] = std::move(h);
        c["attack"] = attack_defaults("linf", 0.0);
    } else if (name == "eval") {
        c["data"] = data_defaults(false);
        c["encoder"] = JsonValue("");
        c["head"] = JsonValue("");
        c["attack"] = attack_defaults("linf", 0.0);
    } else if (name == "saliency") {
        c["data"] = data_defaults(false);
        c["encoder"] = JsonValue("");
        c["critic"] = JsonValue("");
        c["head"] = JsonValue("");
        c["loss"] = JsonValue("mi_critic");
        c["count"] = JsonValue(16);
    } else if (name == "selftest") {
        // no options beyond the common trio
    } else {
        throw std::logic_error("defaults_for: unknown subcommand " + name);
    }
    return c;
}

enum class FlagKind { real, count, text, toggle, reals, sizes, matrix };

double parse_flag_real(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = s.find(sep, pos);
        parts.push_back(s.substr(pos, next - pos));
        if (next == std::string::npos) return parts;
        pos = next + 1;
    }
}

JsonValue flag_to_json(FlagKind kind, const std::string& raw) {
    switch (kind) {
        case FlagKind::real: return JsonValue(parse_flag_real(raw));
        case FlagKind::count: return JsonValue((unsigned long long)std::stoull(raw));
        case FlagKind::text: return JsonValue(raw);
        case FlagKind::toggle: return JsonValue(true);
        case FlagKind::reals: {
            JsonValue arr = JsonValue::array();
            for (const auto& p : split_on(raw, ',')) arr.push_back(JsonValue(parse_flag_real(p)));
            return arr;
        }
        case FlagKind::sizes: {
            JsonValue arr = JsonValue::array();
            for (const auto& p : split_on(raw, ','))
                arr.push_back(JsonValue((unsigned long long)std::stoull(p)));
            return arr;
        }
        case FlagKind::matrix: {
            JsonValue rows = JsonValue::array();
            for (const auto& row : split_on(raw, ';')) {
                JsonValue r = JsonValue::array();
                for (const auto& p : split_on(row, ','))
                    r.push_back(JsonValue(parse_flag_real(p)));
                rows.push_back(std::move(r));
            }
            return rows;
        }
    }
    throw std::logic_error("flag_to_json: unknown kind");
}

/// One CLI option bound to a dotted config key.
struct FlagBinding {
    std::string key;
    FlagKind kind;
    std::shared_ptr<std::string> buf;
    CLI::Option* opt = nullptr;
};

struct SubcommandWiring {
    std::string name;
    CLI::App* app = nullptr;
    std::vector<FlagBinding> flags;
    std::shared_ptr<std::string> config_path = std::make_shared<std::string>();
    std::shared_ptr<std::string> out_dir = std::make_shared<std::string>();
    std::shared_ptr<std::uint64_t> seed = std::make_shared<std::uint64_t>(1);
    CLI::Option* seed_opt = nullptr;

    void add(const std::string& flag, const std::string& key, FlagKind kind,
             const std::string& help) {
        FlagBinding b{key, kind, std::make_shared<std::string>(), nullptr};
        if (kind == FlagKind::toggle)
            b.opt = app->add_flag(flag, help);
        else
            b.opt = app->add_option(flag, *b.buf, help);
        flags.push_back(std::move(b));
    }

    void apply_flags(JsonValue& cfg) const {
        for (const auto& b : flags) {
            if (!b.opt->count()) continue;
            try {
                set_path(cfg, b.key, flag_to_json(b.kind, *b.buf));
            } catch (const std::exception& e) {
                throw std::invalid_argument("flag for config key '" + b.key + "': " + e.what());
            }
        }
    }
};

void add_common(SubcommandWiring& w) {
    w.app->add_option("--config", *w.config_path,
                      "JSON config file, or a manifest.json to replay");
    w.seed_opt = w.app->add_option("--seed", *w.seed, "master seed (default 1)");
    w.app->add_option("--out", *w.out_dir,
                      "output directory for manifest.json, result.json and artifacts");
}

void add_data_flags(SubcommandWiring& w, bool with_split) {
    w.add("--data", "data.source", FlagKind::text,
          "dataset source: synthetic_gmm, idx_files, or csv");
    w.add("--theta", "data.theta", FlagKind::reals, "mixture mean, comma separated");
    w.add("--variance", "data.variance", FlagKind::real, "isotropic mixture variance");
    w.add("--sigma", "data.sigma", FlagKind::matrix,
          "full covariance, rows separated by ';'");
    w.add("--n", "data.n", FlagKind::count, "synthetic sample count");
    w.add("--images", "data.image_path", FlagKind::text, "IDX image file");
    w.add("--labels", "data.label_path", FlagKind::text, "IDX label file");
    w.add("--downsample", "data.downsample", FlagKind::count, "mean-pool factor");
    w.add("--csv", "data.csv_path", FlagKind::text, "CSV file of rows");
    w.add("--csv-labeled", "data.csv_labeled", FlagKind::toggle,
          "treat the last CSV column as integer labels");
    w.add("--take", "data.take", FlagKind::count, "seeded subsample size (0 keeps all)");
    w.add("--normalize", "data.normalization", FlagKind::text, "none or to_unit_box");
    if (with_split)
        w.add("--test-fraction", "data.test_fraction", FlagKind::real,
              "held-out fraction for the estimator's test term");
}

void add_attack_flags(SubcommandWiring& w) {
    w.add("--attack-steps", "attack.steps", FlagKind::count, "projected gradient steps");
    w.add("--attack-lr", "attack.step_size", FlagKind::real, "attack step size");
    w.add("--attack-norm", "attack.norm", FlagKind::text, "perturbation norm: l2 or linf");
    w.add("--attack-eps", "attack.epsilon", FlagKind::real, "perturbation radius");
    w.add("--attack-box", "attack.box", FlagKind::reals, "clamp values to lo,hi");
}

void add_estimator_flags(SubcommandWiring& w) {
    w.add("--epochs", "estimator.epochs", FlagKind::count, "critic training epochs");
    w.add("--lr", "estimator.step_size", FlagKind::real, "critic learning rate");
    w.add("--batch", "estimator.batch_size", FlagKind::count, "rows per training batch");
    w.add("--negatives", "estimator.negatives", FlagKind::count, "negative samples per row");
    w.add("--test-batches", "estimator.test_batches", FlagKind::count,
          "evaluation mini-batches");
    w.add("--hidden", "estimator.hidden", FlagKind::sizes, "critic hidden widths");
    w.add("--rule", "estimator.rule", FlagKind::text, "optimizer rule: adam or sgd");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"worst-case mutual information laboratory: closed-form mixture analysis, "
                 "neural MI and vulnerability estimation, robust representation training, "
                 "and downstream robustness evaluation"};
    app.name("wcmi");
    app.require_subcommand(1);

    std::vector<std::shared_ptr<SubcommandWiring>> wired;
    const auto wire = [&](CLI::App* parent, const std::string& sub, const std::string& full,
                          const std::string& help) -> SubcommandWiring& {
        auto w = std::make_shared<SubcommandWiring>();
        w->name = full;
        w->app = parent->add_subcommand(sub, help);
        add_common(*w);
        wired.push_back(w);
        return *w;
    };

    CLI::App* gmm = app.add_subcommand("gmm", "closed-form two-component mixture analysis");
    gmm->require_subcommand(1);
    {
        auto& w = wire(gmm, "analyze", "gmm analyze",
                       "closed-form risks, boundary mass, and vulnerability of a sign feature");
        w.add("--theta", "theta", FlagKind::reals, "mixture mean, comma separated");
        w.add("--variance", "variance", FlagKind::real, "isotropic variance");
        w.add("--sigma", "sigma", FlagKind::matrix, "full covariance, rows separated by ';'");
        w.add("--w", "w", FlagKind::reals, "linear feature direction");
        w.add("--norm", "norm", FlagKind::text, "perturbation norm: l2 or linf");
        w.add("--epsilon", "epsilon", FlagKind::real, "perturbation radius");
    }
    {
        auto& w = wire(gmm, "verify", "gmm verify",
                       "Monte Carlo check of the closed forms with per-sample optimal shifts");
        w.add("--theta", "theta", FlagKind::reals, "mixture mean, comma separated");
        w.add("--variance", "variance", FlagKind::real, "isotropic variance");
        w.add("--sigma", "sigma", FlagKind::matrix, "full covariance, rows separated by ';'");
        w.add("--w", "w", FlagKind::reals, "linear feature direction");
        w.add("--norm", "norm", FlagKind::text, "perturbation norm: l2 or linf");
        w.add("--epsilon", "epsilon", FlagKind::real, "perturbation radius");
        w.add("--samples", "samples", FlagKind::count, "Monte Carlo sample count");
    }

    CLI::App* rv = app.add_subcommand("rv", "representation vulnerability estimation");
    rv->require_subcommand(1);
    {
        auto& w = wire(rv, "estimate", "rv estimate",
                       "standard minus worst-case information of an encoder on a dataset");
        add_data_flags(w, true);
        w.add("--encoder", "encoder", FlagKind::text, "encoder network JSON file");
        w.add("--per-feature", "per_feature", FlagKind::toggle,
              "also estimate each output coordinate separately");
        add_estimator_flags(w);
        add_attack_flags(w);
    }

    CLI::App* mi = app.add_subcommand("mi", "neural mutual information estimation");
    mi->require_subcommand(1);
    {
        auto& w = wire(mi, "estimate", "mi estimate",
                       "variational lower bound on I(X; encoder(X)), standard or worst-case");
        add_data_flags(w, true);
        w.add("--encoder", "encoder", FlagKind::text, "encoder network JSON file");
        w.add("--mode", "mode", FlagKind::text, "standard or worst_case");
        add_estimator_flags(w);
        add_attack_flags(w);
    }

    CLI::App* repr = app.add_subcommand("repr", "representation training");
    repr->require_subcommand(1);
    {
        auto& w = wire(repr, "train", "repr train",
                       "train an encoder by infomax or by the worst-case objective");
        add_data_flags(w, false);
        w.add("--objective", "objective", FlagKind::text, "infomax or worst_case");
        w.add("--beta", "beta", FlagKind::real,
              "vulnerability penalty weight (only 1 is supported)");
        w.add("--dims", "encoder_dims", FlagKind::sizes, "encoder widths, input first");
        w.add("--steps", "encoder_steps", FlagKind::count, "encoder update steps");
        w.add("--enc-lr", "encoder_step_size", FlagKind::real, "encoder learning rate");
        w.add("--enc-rule", "encoder_rule", FlagKind::text, "encoder optimizer: adam or sgd");
        w.add("--critic-steps", "critic_steps", FlagKind::count,
              "critic updates per encoder update");
        w.add("--critic-lr", "critic.step_size", FlagKind::real, "critic learning rate");
        w.add("--batch", "critic.batch_size", FlagKind::count, "rows per training batch");
        w.add("--negatives", "critic.negatives", FlagKind::count, "negative samples per row");
        w.add("--critic-hidden", "critic.hidden", FlagKind::sizes, "critic hidden widths");
        add_attack_flags(w);
    }

    CLI::App* clf = app.add_subcommand("clf", "downstream classifier training");
    clf->require_subcommand(1);
    {
        auto& w = wire(clf, "train", "clf train",
                       "train a classification head on frozen encoder features");
        add_data_flags(w, false);
        w.add("--encoder", "encoder", FlagKind::text, "encoder network JSON file");
        w.add("--kind", "head.kind", FlagKind::text, "head type: linear or mlp");
        w.add("--hidden", "head.hidden", FlagKind::count, "mlp head hidden width");
        w.add("--classes", "head.classes", FlagKind::count, "number of classes");
        w.add("--mode", "head.mode", FlagKind::text, "standard or adversarial");
        w.add("--epochs", "head.epochs", FlagKind::count, "training epochs");
        w.add("--lr", "head.step_size", FlagKind::real, "head learning rate");
        w.add("--batch", "head.batch_size", FlagKind::count, "rows per training batch");
        w.add("--rule", "head.rule", FlagKind::text, "optimizer rule: adam or sgd");
        w.add("--early-stop", "head.early_stop", FlagKind::toggle,
              "snapshot the best holdout adversarial accuracy");
        w.add("--holdout", "head.holdout_fraction", FlagKind::real,
              "holdout fraction for early stopping");
        add_attack_flags(w);
    }

    {
        auto& w = wire(&app, "eval", "eval",
                       "natural and adversarial accuracy of an encoder plus head");
        add_data_flags(w, false);
        w.add("--encoder", "encoder", FlagKind::text, "encoder network JSON file");
        w.add("--head", "head", FlagKind::text, "classifier head JSON file");
        add_attack_flags(w);
    }
    {
        auto& w = wire(&app, "bound", "bound",
                       "information-theoretic floor on adversarial risk of any classifier");
        w.add("--mi-worst", "mi_worst", FlagKind::real, "worst-case mutual information, nats");
        w.add("--classes", "classes", FlagKind::count, "label alphabet size");
    }
    {
        auto& w = wire(&app, "saliency", "saliency",
                       "per-pixel input gradients written as PGM images");
        add_data_flags(w, false);
        w.add("--encoder", "encoder", FlagKind::text, "encoder network JSON file");
        w.add("--critic", "critic", FlagKind::text, "critic network JSON file");
        w.add("--head", "head", FlagKind::text, "classifier (head) JSON file");
        w.add("--loss", "loss", FlagKind::text, "mi_critic or cross_entropy");
        w.add("--count", "count", FlagKind::count, "number of samples to render");
    }
    wire(&app, "selftest", "selftest",
         "run fast invariant checks and a replayed subcommand matrix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto chosen = [&]() -> std::shared_ptr<SubcommandWiring> {
        for (const auto& w : wired)
            if (w->app->parsed()) return w;
        return nullptr;
    }();
    if (!chosen) {
        std::cerr << "error: no subcommand selected\n";
        return 2;
    }

    try {
        JsonValue config = defaults_for(chosen->name);
        std::uint64_t seed = *chosen->seed;
        const bool seed_given = chosen->seed_opt->count() > 0;

        if (!chosen->config_path->empty()) {
            const JsonValue doc = wcmi::io::load_json(*chosen->config_path);
            const JsonValue* nested = doc.is_object() ? doc.find("config") : nullptr;
            if (nested && nested->is_object() && doc.find("subcommand")) {
                // a manifest: replay its config and seed
                const std::string recorded = doc.at("subcommand").as_string();
                if (recorded != chosen->name)
                    throw std::invalid_argument(*chosen->config_path +
                                                ": manifest was recorded for '" + recorded +
                                                "', not '" + chosen->name + "'");
                overlay_config(config, *nested, "");
                if (!seed_given) seed = doc.at("seed").as_uint();
            } else {
                overlay_config(config, doc, "");
                if (!seed_given)
                    if (const JsonValue* s = doc.is_object() ? doc.find("seed") : nullptr)
                        seed = s->as_uint();
            }
        }
        chosen->apply_flags(config);

        std::optional<fs::path> out;
        if (!chosen->out_dir->empty()) out = fs::path(*chosen->out_dir);

        const JsonValue doc = run_one(chosen->name, config, seed, out);
        std::cout << doc.dump();
        if (chosen->name == "selftest" && !doc.at("result").at("pass").as_bool()) return 2;
        return 0;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
