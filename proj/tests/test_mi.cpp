#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "support.hpp"
#include "wcmi/gmm.hpp"
#include "wcmi/mi.hpp"

using namespace wcmi;
using namespace wcmi::mi;

namespace {

EstimatorConfig small_config(std::uint64_t seed) {
    EstimatorConfig cfg;
    cfg.epochs = 250;
    cfg.step_size = 1e-3;
    cfg.batch_size = 128;
    cfg.negatives = 16;
    cfg.test_batches = 10;
    cfg.critic_hidden = {32, 32};
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("PairingScheme draws valid negative indices") {
    SeededRng rng(1);
    const PairingScheme p = PairingScheme::sample(10, 4, rng);
    REQUIRE(p.idx.size() == 40);
    for (std::size_t i = 0; i < 10; ++i) {
        std::set<std::size_t> seen;
        for (std::size_t j = 0; j < 4; ++j) {
            const std::size_t v = p.at(i, j);
            CHECK(v < 10);
            CHECK(v != i);  // self excluded while the pool allows it
            seen.insert(v);
        }
        CHECK(seen.size() == 4);  // without replacement
    }

    SECTION("full-width pairing must include self") {
        SeededRng r2(2);
        const PairingScheme full = PairingScheme::sample(3, 3, r2);
        for (std::size_t i = 0; i < 3; ++i) {
            std::set<std::size_t> seen;
            for (std::size_t j = 0; j < 3; ++j) seen.insert(full.at(i, j));
            CHECK(seen == std::set<std::size_t>{0, 1, 2});
        }
    }
    SECTION("identical seeds give identical schemes") {
        SeededRng a(9), b(9);
        CHECK(PairingScheme::sample(8, 3, a).idx == PairingScheme::sample(8, 3, b).idx);
    }
    SECTION("size validation") {
        SeededRng r(3);
        CHECK_THROWS_AS(PairingScheme::sample(0, 1, r), std::invalid_argument);
        CHECK_THROWS_AS(PairingScheme::sample(4, 0, r), std::invalid_argument);
        CHECK_THROWS_AS(PairingScheme::sample(4, 5, r), std::invalid_argument);
    }
}

TEST_CASE("dv objective degenerate values") {
    SECTION("constant critic scores zero") {
        // zero weights and bias c: T(anything) = c, so both terms cancel
        Network critic = Network::linear(Matrix(1, 4), {2.5});
        SeededRng rng(5);
        Matrix x(6, 2), z(6, 2);
        for (double& v : x.data()) v = rng.normal();
        for (double& v : z.data()) v = rng.normal();
        const PairingScheme p = PairingScheme::sample(6, 3, rng);
        CHECK(dv_value_pairs(critic, x, z, p) == 0.0);
    }
    SECTION("single-row batch with forced self-pairing scores zero") {
        SeededRng rng(6);
        Network critic = Network::mlp({3, 8, 1}, rng);
        Matrix x(1, 2), z(1, 1);
        x(0, 0) = 0.4;
        x(0, 1) = -1.1;
        z(0, 0) = 0.7;
        const PairingScheme p = PairingScheme::sample(1, 1, rng);
        CHECK_THAT(dv_value_pairs(critic, x, z, p), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    SECTION("huge scores stay finite through the max shift") {
        Network critic = Network::linear(Matrix::from_rows({{500.0, 500.0}}), {0.0});
        Matrix x(2, 1), z(2, 1);
        x(0, 0) = 1.0;
        x(1, 0) = 2.0;
        z(0, 0) = 1.0;
        z(1, 0) = 2.0;
        SeededRng rng(7);
        const PairingScheme p = PairingScheme::sample(2, 2, rng);
        CHECK(std::isfinite(dv_value_pairs(critic, x, z, p)));
    }
}

TEST_CASE("dv gradients match finite differences through every path") {
    SeededRng rng(42);
    Network critic = Network::mlp({4, 6, 1}, Activation::tanh, Activation::none, rng);
    Network encoder = Network::mlp({2, 5, 2}, Activation::tanh, Activation::none, rng);
    const std::size_t b = 5;
    Matrix inputs(b, 2);
    for (double& v : inputs.data()) v = rng.uniform(-1.5, 1.5);
    const PairingScheme p = PairingScheme::sample(b, 3, rng);

    const DvGradients g = dv_objective(critic, encoder, inputs, p);
    const double h = 1e-6;

    SECTION("critic parameters") {
        Network probe = critic;
        for (std::size_t i = 0; i < probe.param_count(); ++i) {
            const double saved = probe.params()[i];
            probe.params()[i] = saved + h;
            const double up = dv_value(probe, encoder, inputs, p);
            probe.params()[i] = saved - h;
            const double down = dv_value(probe, encoder, inputs, p);
            probe.params()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            CHECK_THAT(g.critic_grads[i], Catch::Matchers::WithinAbs(fd, 1e-6));
        }
    }
    SECTION("encoder parameters") {
        Network probe = encoder;
        for (std::size_t i = 0; i < probe.param_count(); ++i) {
            const double saved = probe.params()[i];
            probe.params()[i] = saved + h;
            const double up = dv_value(critic, probe, inputs, p);
            probe.params()[i] = saved - h;
            const double down = dv_value(critic, probe, inputs, p);
            probe.params()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            CHECK_THAT(g.encoder_grads[i], Catch::Matchers::WithinAbs(fd, 1e-6));
        }
    }
    SECTION("inputs, through both the pair and the negative paths") {
        Matrix probe = inputs;
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < 2; ++c) {
                const double saved = probe(r, c);
                probe(r, c) = saved + h;
                const double up = dv_value(critic, encoder, probe, p);
                probe(r, c) = saved - h;
                const double down = dv_value(critic, encoder, probe, p);
                probe(r, c) = saved;
                const double fd = (up - down) / (2.0 * h);
                CHECK_THAT(g.input_grads(r, c), Catch::Matchers::WithinAbs(fd, 1e-6));
            }
    }
}

TEST_CASE("worst_case_perturb respects budgets and never raises the objective") {
    SeededRng rng(77);
    Network encoder = Network::mlp({2, 6, 2}, rng);
    Network critic = Network::mlp({4, 8, 1}, rng);
    Matrix batch(12, 2);
    for (double& v : batch.data()) v = rng.uniform(-1.0, 1.0);
    const PairingScheme p = PairingScheme::sample(12, 4, rng);
    const double clean = dv_value(critic, encoder, batch, p);

    SECTION("zero radius returns the clean batch") {
        AttackConfig a(10, 0.1, PerturbationBudget::l2(0.0));
        const AttackResult r = worst_case_perturb(batch, encoder, critic, p, a);
        CHECK(r.perturbed == batch);
        CHECK(r.v1 == clean);
    }
    SECTION("zero steps returns the clean batch") {
        AttackConfig a(0, 0.1, PerturbationBudget::l2(0.5));
        const AttackResult r = worst_case_perturb(batch, encoder, critic, p, a);
        CHECK(r.perturbed == batch);
        CHECK(r.v1 == clean);
    }
    SECTION("iterates stay inside the ball and the best one is kept") {
        for (auto budget : {PerturbationBudget::l2(0.3), PerturbationBudget::linf(0.2)}) {
            AttackConfig a(8, 0.05, budget);
            const AttackResult r = worst_case_perturb(batch, encoder, critic, p, a);
            CHECK(r.v1 <= clean);
            for (std::size_t i = 0; i < batch.rows(); ++i) {
                const Vec prow = r.perturbed.row_copy(i);
                const Vec brow = batch.row_copy(i);
                CHECK(lp_distance(prow, brow, budget) <= budget.epsilon + 1e-9);
            }
        }
    }
    SECTION("a small-step attack strictly lowers the objective here") {
        AttackConfig a(12, 0.02, PerturbationBudget::l2(0.4));
        const AttackResult r = worst_case_perturb(batch, encoder, critic, p, a);
        CHECK(r.v1 < clean);
    }
}

TEST_CASE("independent variables estimate to nearly zero") {
    // features are fresh noise, unrelated to the inputs
    const std::size_t n = 3000;
    SeededRng rng(909);
    Matrix x(n, 2), z(n, 2), xt(n / 2, 2), zt(n / 2, 2);
    for (double& v : x.data()) v = rng.normal();
    for (double& v : z.data()) v = rng.normal();
    for (double& v : xt.data()) v = rng.normal();
    for (double& v : zt.data()) v = rng.normal();
    EstimatorConfig cfg = small_config(100);
    cfg.epochs = 150;
    const MiEstimate est = estimate_mi_pairs(x, z, xt, zt, cfg);
    CHECK(est.value <= 0.05);
    CHECK(est.history.size() == cfg.epochs);
}

TEST_CASE("correlated Gaussian pairs recover the analytic mutual information") {
    // I(U;V) = -0.5 ln(1 - 0.8^2) = 0.51083, from the bivariate normal law
    auto [x, z] = test_support::bivariate_gaussian_pairs(4000, 0.8, 1234);
    auto [xt, zt] = test_support::bivariate_gaussian_pairs(2000, 0.8, 5678);
    const MiEstimate est = estimate_mi_pairs(x, z, xt, zt, small_config(11));
    CHECK_THAT(est.value, Catch::Matchers::WithinAbs(0.5108256237659907, 0.05));
}

TEST_CASE("discrete table pairs recover the exact finite-alphabet value") {
    const Matrix table = Matrix::from_rows({{0.4, 0.1}, {0.1, 0.4}});
    auto [x, z] = test_support::one_hot_table_pairs(table, 4000, 321);
    auto [xt, zt] = test_support::one_hot_table_pairs(table, 2000, 654);
    const MiEstimate est = estimate_mi_pairs(x, z, xt, zt, small_config(12));
    CHECK_THAT(est.value, Catch::Matchers::WithinAbs(0.19274475702175743, 0.05));
}

TEST_CASE("deterministic balanced binary feature carries ln 2") {
    const gmm::GaussianMixtureSpec spec = gmm::GaussianMixtureSpec::isotropic({1.0, 0.0}, 1.0);
    const gmm::LinearSignFeature feature({1.0, 0.0});
    const Network encoder = gmm::sign_surrogate(feature);
    SeededRng rng(2121);
    const Matrix train = gmm::sample_gmm(spec, 4000, rng).rows;
    const Matrix test = gmm::sample_gmm(spec, 2000, rng).rows;
    // the optimal critic diverges on mismatched sign pairs, so the estimate
    // approaches ln 2 slowly from below and needs the longer schedule
    EstimatorConfig cfg = small_config(13);
    cfg.epochs = 800;
    cfg.step_size = 3e-3;
    const MiEstimate est = estimate_standard_mi(train, test, encoder, cfg);
    CHECK_THAT(est.value, Catch::Matchers::WithinAbs(0.6931471805599453, 0.05));
}

TEST_CASE("disabled attack reduces the worst-case path to the standard one") {
    SeededRng rng(31);
    Network encoder = Network::mlp({2, 6, 2}, rng);
    Matrix train(600, 2), test(400, 2);
    for (double& v : train.data()) v = rng.normal();
    for (double& v : test.data()) v = rng.normal();
    EstimatorConfig cfg = small_config(77);
    cfg.epochs = 40;
    const MiEstimate standard = estimate_standard_mi(train, test, encoder, cfg);
    const MiEstimate worst = estimate_worst_case_mi(train, test, encoder, cfg,
                                                    AttackConfig(10, 0.1, PerturbationBudget::l2(0.0)));
    CHECK_THAT(worst.value, Catch::Matchers::WithinAbs(standard.value, 1e-12));
}

TEST_CASE("worst-case estimate on the reference mixture sits near its closed form") {
    const gmm::GaussianMixtureSpec spec = gmm::GaussianMixtureSpec::isotropic({1.0, 0.0}, 1.0);
    const gmm::LinearSignFeature feature({1.0, 0.0});
    const Network encoder = gmm::sign_surrogate(feature);
    SeededRng rng(515);
    const Matrix train = gmm::sample_gmm(spec, 3000, rng).rows;
    const Matrix test = gmm::sample_gmm(spec, 1500, rng).rows;

    EstimatorConfig cfg = small_config(21);
    cfg.epochs = 250;
    cfg.step_size = 3e-3;
    cfg.batch_size = 64;
    cfg.negatives = 8;
    AttackConfig attack(10, 0.1, PerturbationBudget::l2(0.5));
    const RVReport rep = estimate_rv(train, test, encoder, cfg, attack);

    // closed forms: J1 = ln 2, J2 = ln 2 - 0.029508, from the mixture theory
    CHECK_THAT(rep.j1, Catch::Matchers::WithinAbs(0.6931471805599453, 0.1));
    CHECK_THAT(rep.j2, Catch::Matchers::WithinAbs(0.6636389957473377, 0.1));
    CHECK(rep.rv == rep.j1 - rep.j2);
    CHECK(rep.history_standard.size() == cfg.epochs);
    CHECK(rep.history_worst.size() == cfg.epochs);
}

TEST_CASE("per-feature reports stay above the estimation noise floor") {
    SeededRng rng(61);
    Network encoder = Network::mlp({2, 4, 2}, rng);
    Matrix train(800, 2), test(600, 2);
    for (double& v : train.data()) v = rng.normal();
    for (double& v : test.data()) v = rng.normal();
    EstimatorConfig cfg = small_config(91);
    cfg.epochs = 60;
    cfg.batch_size = 64;
    cfg.negatives = 8;
    AttackConfig attack(3, 0.05, PerturbationBudget::l2(0.1));
    const auto reports = estimate_rv_per_feature(train, test, encoder, cfg, attack);
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) CHECK(r.rv >= -0.05);
}

TEST_CASE("estimator configuration is validated") {
    EstimatorConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EstimatorConfig{};
    cfg.negatives = cfg.batch_size + 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EstimatorConfig{};
    cfg.test_batches = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(AttackConfig(5, 0.0, PerturbationBudget::l2(0.1)), std::invalid_argument);
}

TEST_CASE("identical seeds reproduce the full report bit-exactly") {
    SeededRng rng(71);
    Network encoder = Network::mlp({2, 4, 1}, rng);
    Matrix train(400, 2), test(300, 2);
    for (double& v : train.data()) v = rng.normal();
    for (double& v : test.data()) v = rng.normal();
    EstimatorConfig cfg = small_config(55);
    cfg.epochs = 30;
    cfg.batch_size = 64;
    cfg.negatives = 8;
    AttackConfig attack(3, 0.05, PerturbationBudget::linf(0.1));
    const RVReport a = estimate_rv(train, test, encoder, cfg, attack);
    const RVReport b = estimate_rv(train, test, encoder, cfg, attack);
    CHECK(a.j1 == b.j1);
    CHECK(a.j2 == b.j2);
    CHECK(a.rv == b.rv);
    CHECK(a.history_worst == b.history_worst);
}
