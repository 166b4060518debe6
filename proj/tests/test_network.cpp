#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "wcmi/network.hpp"
#include "wcmi/optimizer.hpp"
#include "wcmi/rng.hpp"

using namespace wcmi;

namespace {

double scalar_objective(const Network& net, const Matrix& batch, const Matrix& cot) {
    Matrix out = net.forward(batch);
    double s = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) s += cot(i, j) * out(i, j);
    return s;
}

// central finite differences; relative error uses a unit floor so exact-zero
// gradients compare against absolute noise
void check_against_fd(const Network& net, const Matrix& batch, const Matrix& cot) {
    const double h = 1e-5;
    GradientBundle g = net.backward(batch, cot);

    Network probe = net;
    for (std::size_t i = 0; i < net.param_count(); ++i) {
        const double saved = probe.params()[i];
        probe.params()[i] = saved + h;
        const double up = scalar_objective(probe, batch, cot);
        probe.params()[i] = saved - h;
        const double down = scalar_objective(probe, batch, cot);
        probe.params()[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double rel = std::fabs(g.param_grads[i] - fd) / std::max(1.0, std::fabs(fd));
        CHECK(rel <= 1e-4);
    }

    Matrix pert = batch;
    for (std::size_t r = 0; r < batch.rows(); ++r)
        for (std::size_t c = 0; c < batch.cols(); ++c) {
            const double saved = pert(r, c);
            pert(r, c) = saved + h;
            const double up = scalar_objective(net, pert, cot);
            pert(r, c) = saved - h;
            const double down = scalar_objective(net, pert, cot);
            pert(r, c) = saved;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::fabs(g.input_grads(r, c) - fd) / std::max(1.0, std::fabs(fd));
            CHECK(rel <= 1e-4);
        }
}

}  // namespace

TEST_CASE("forward worked examples") {
    SECTION("identity affine map") {
        Network net = Network::linear(Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}), {0.0, 0.0});
        Matrix batch = Matrix::from_rows({{3.0, -2.0}, {0.5, 0.25}});
        CHECK(net.forward(batch) == batch);
    }
    SECTION("relu clamps negatives") {
        SeededRng rng(1);
        Network net = Network::linear(Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}), {0.0, 0.0});
        net.append_activation(LayerKind::relu);
        Matrix out = net.forward(Matrix::from_rows({{-1.0, 2.0}}));
        CHECK(out(0, 0) == 0.0);
        CHECK(out(0, 1) == 2.0);
    }
    SECTION("scalar affine") {
        Network net = Network::linear(Matrix::from_rows({{2.0}}), {1.0});
        CHECK(net.forward_row({3.0})[0] == 7.0);
    }
}

TEST_CASE("forward is deterministic") {
    SeededRng rng(3);
    Network net = Network::mlp({4, 8, 3}, rng);
    Matrix batch(5, 4);
    for (double& v : batch.data()) v = rng.uniform(-2.0, 2.0);
    Matrix a = net.forward(batch);
    Matrix b = net.forward(batch);
    CHECK(a == b);
}

TEST_CASE("backward worked examples") {
    SECTION("linear map adjoint") {
        Network net = Network::linear(Matrix::from_rows({{2.0}}), {1.0});
        GradientBundle g = net.backward(Matrix::from_rows({{3.0}}), Matrix::from_rows({{1.0}}));
        CHECK(g.value == 7.0);
        CHECK(g.input_grads(0, 0) == 2.0);  // W^T cot
        CHECK(g.param_grads[0] == 3.0);     // dW = cot * x
        CHECK(g.param_grads[1] == 1.0);     // db = cot
    }
    SECTION("relu subgradient at 0 is 0") {
        Network net = Network::linear(Matrix::from_rows({{1.0}}), {0.0});
        net.append_activation(LayerKind::relu);
        GradientBundle g = net.backward(Matrix::from_rows({{0.0}}), Matrix::from_rows({{1.0}}));
        CHECK(g.input_grads(0, 0) == 0.0);
    }
    SECTION("tanh derivative") {
        Network net = Network::linear(Matrix::from_rows({{1.0}}), {0.0});
        net.append_activation(LayerKind::tanh);
        GradientBundle g = net.backward(Matrix::from_rows({{0.5}}), Matrix::from_rows({{1.0}}));
        const double t = std::tanh(0.5);
        CHECK_THAT(g.input_grads(0, 0), Catch::Matchers::WithinAbs(1.0 - t * t, 1e-15));
    }
}

TEST_CASE("reverse-mode gradients match central finite differences") {
    SeededRng rng(2024);
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t in = 2 + rng.below(4);
        const std::size_t hidden = 3 + rng.below(6);
        const std::size_t out = 1 + rng.below(3);
        const Activation hid_act = (inst % 2 == 0) ? Activation::relu : Activation::tanh;
        const Activation out_act = (inst % 3 == 0) ? Activation::tanh : Activation::none;
        Network net = Network::mlp({in, hidden, out}, hid_act, out_act, rng);
        const std::size_t n = 1 + rng.below(4);
        Matrix batch(n, in), cot(n, out);
        for (double& v : batch.data()) v = rng.uniform(-2.0, 2.0);
        for (double& v : cot.data()) v = rng.uniform(-1.0, 1.0);
        check_against_fd(net, batch, cot);
    }
}

TEST_CASE("network validation") {
    SeededRng rng(4);
    CHECK_THROWS_AS(Network::mlp({3}, rng), std::invalid_argument);
    CHECK_THROWS_AS(Network::mlp({3, 0, 2}, rng), std::invalid_argument);
    CHECK_THROWS_AS(Network::linear(Matrix::from_rows({{1.0, 2.0}}), {0.0, 0.0}),
                    std::invalid_argument);

    Network net = Network::mlp({3, 4, 2}, rng);
    CHECK_THROWS_AS(net.forward(Matrix(2, 5)), std::invalid_argument);
    CHECK_THROWS_AS(net.backward(Matrix(2, 3), Matrix(2, 5)), std::invalid_argument);
    CHECK_THROWS_AS(net.backward(Matrix(2, 3), Matrix(3, 2)), std::invalid_argument);
}

TEST_CASE("mlp initialization is seeded and bounded") {
    SeededRng r1(77), r2(77), r3(78);
    Network a = Network::mlp({5, 7, 2}, r1);
    Network b = Network::mlp({5, 7, 2}, r2);
    Network c = Network::mlp({5, 7, 2}, r3);
    CHECK(a == b);
    CHECK(!(a == c));

    for (const auto& layer : a.layers()) {
        if (layer.kind != LayerKind::affine) continue;
        const double bound = std::sqrt(6.0 / double(layer.in + layer.out));
        const std::size_t count = layer.out * layer.in + layer.out;
        for (std::size_t i = 0; i < count; ++i) {
            CHECK(a.params()[layer.offset + i] >= -bound);
            CHECK(a.params()[layer.offset + i] <= bound);
        }
    }
    CHECK(a.param_count() == (5 * 7 + 7) + (7 * 2 + 2));
}

TEST_CASE("from_layers round-trips and validates") {
    SeededRng rng(9);
    Network net = Network::mlp({3, 5, 2}, Activation::relu, Activation::tanh, rng);
    Network copy = Network::from_layers(
        std::vector<Network::Layer>(net.layers().begin(), net.layers().end()), net.params(),
        net.input_dim(), net.output_dim());
    CHECK(net == copy);

    auto layers = net.layers();
    layers[0].out = 4;  // break the chain
    CHECK_THROWS_AS(Network::from_layers(layers, net.params(), 3, 2), std::invalid_argument);
}

TEST_CASE("optimizer_step worked examples") {
    SECTION("plain ascent") {
        Vec params{1.0};
        Optimizer opt(Optimizer::Rule::sgd, 0.1, 1);
        opt.apply(params, Vec{2.0}, Direction::ascend);
        CHECK_THAT(params[0], Catch::Matchers::WithinAbs(1.2, 1e-15));
    }
    SECTION("zero gradient leaves parameters unchanged") {
        Vec p_sgd{1.5}, p_adam{1.5};
        Optimizer sgd(Optimizer::Rule::sgd, 0.1, 1), adam(Optimizer::Rule::adam, 0.1, 1);
        sgd.apply(p_sgd, Vec{0.0}, Direction::descend);
        adam.apply(p_adam, Vec{0.0}, Direction::descend);
        CHECK(p_sgd[0] == 1.5);
        CHECK(p_adam[0] == 1.5);
    }
    SECTION("ascent increases a concave objective") {
        auto f = [](double t) { return -(t - 3.0) * (t - 3.0); };
        auto df = [](double t) { return -2.0 * (t - 3.0); };
        Vec params{0.0};
        Optimizer opt(Optimizer::Rule::sgd, 0.1, 1);
        const double f0 = f(params[0]);
        opt.apply(params, Vec{df(params[0])}, Direction::ascend);
        const double f1 = f(params[0]);
        opt.apply(params, Vec{df(params[0])}, Direction::ascend);
        const double f2 = f(params[0]);
        CHECK(f1 > f0);
        CHECK(f2 > f1);
    }
}

TEST_CASE("ascend equals descend on the negated objective, bit-exact") {
    for (auto rule : {Optimizer::Rule::sgd, Optimizer::Rule::adam}) {
        SeededRng rng(31);
        Vec pa(6), pd(6);
        for (std::size_t i = 0; i < 6; ++i) pa[i] = pd[i] = rng.uniform(-1.0, 1.0);
        Optimizer oa(rule, 0.05, 6), od(rule, 0.05, 6);
        for (int step = 0; step < 10; ++step) {
            Vec g(6);
            for (double& v : g) v = rng.uniform(-2.0, 2.0);
            Vec neg = g;
            for (double& v : neg) v = -v;
            oa.apply(pa, g, Direction::ascend);
            od.apply(pd, neg, Direction::descend);
        }
        CHECK(pa == pd);
    }
}

TEST_CASE("optimizer validates alignment") {
    SeededRng rng(12);
    Network net = Network::mlp({2, 3}, rng);
    Optimizer opt(Optimizer::Rule::sgd, 0.1, net.param_count());
    GradientBundle bad;
    bad.param_grads.assign(net.param_count() + 1, 0.0);
    CHECK_THROWS_AS(opt.apply(net, bad, Direction::descend), std::invalid_argument);
    CHECK_THROWS_AS(Optimizer(Optimizer::Rule::sgd, 0.0, 3), std::invalid_argument);
}

TEST_CASE("softmax cross-entropy values and gradient") {
    SECTION("uniform logits give log of class count") {
        const double ce =
            softmax_cross_entropy(Matrix::from_rows({{0.0, 0.0}}), std::vector<int>{0});
        CHECK_THAT(ce, Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
    }
    SECTION("large logits stay finite") {
        const double ce =
            softmax_cross_entropy(Matrix::from_rows({{1000.0, 0.0}}), std::vector<int>{0});
        CHECK(std::isfinite(ce));
        CHECK(ce < 1e-12);
    }
    SECTION("gradient matches finite differences") {
        SeededRng rng(63);
        Matrix logits(3, 4);
        for (double& v : logits.data()) v = rng.uniform(-2.0, 2.0);
        std::vector<int> labels{1, 3, 0};
        Matrix grad;
        softmax_cross_entropy(logits, labels, &grad);
        const double h = 1e-6;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 4; ++c) {
                Matrix p = logits;
                p(r, c) += h;
                const double up = softmax_cross_entropy(p, labels);
                p(r, c) -= 2.0 * h;
                const double down = softmax_cross_entropy(p, labels);
                const double fd = (up - down) / (2.0 * h);
                CHECK_THAT(grad(r, c), Catch::Matchers::WithinAbs(fd, 1e-8));
            }
    }
    SECTION("label out of range throws") {
        CHECK_THROWS_AS(softmax_cross_entropy(Matrix::from_rows({{0.0, 0.0}}), std::vector<int>{2}),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            softmax_cross_entropy(Matrix::from_rows({{0.0, 0.0}}), std::vector<int>{-1}),
            std::invalid_argument);
    }
}

TEST_CASE("argmax_row breaks ties toward the lower index") {
    Vec z{0.5, 0.5, 0.1};
    CHECK(argmax_row(z.data(), 3) == 0);
    Vec w{0.1, 0.2, 0.9};
    CHECK(argmax_row(w.data(), 3) == 2);
}
