#include "test_util.hpp"

#include "tta/linearize.hpp"

#include <doctest.h>

#include <cmath>

using namespace tta;
using namespace tta::testing;

namespace {

Model make_model(std::uint64_t seed, Activation act = Activation::tanh, std::size_t c = 3)
{
    auto net = small_network(2, {6, 5}, 4, c, act, seed + 100);
    return Model(net, random_init(net.spec(), seed));
}

TaskVector random_tau(const Model& m, std::mt19937_64& rng, double scale, Origin origin = Origin::nonlinear)
{
    return TaskVector(random_params(m.params.layout_ptr(), rng, scale), origin);
}

// Gradient of logit j at a single example through the reverse-mode tape.
std::vector<double> logit_grad(const Model& m, const Tensor& x, std::size_t j)
{
    Tensor cot(Shape{1, m.spec().num_classes});
    cot.at(0, j) = 1.0;
    auto g = ad::vjp(m.net, m.params, x.reshaped(Shape{1, x.size()}), cot);
    return {g.values().begin(), g.values().end()};
}

Tensor row(const Tensor& x, std::size_t i)
{
    Tensor r(Shape{x.cols()});
    for (std::size_t k = 0; k < x.cols(); ++k) {
        r[k] = x.at(i, k);
    }
    return r;
}

}  // namespace

TEST_CASE("zero displacement reproduces the base model")
{
    std::mt19937_64 rng(1);
    auto m = make_model(1);
    auto x = random_tensor(Shape{7, 2}, rng);
    auto lm = posthoc_linearize(m, TaskVector::zeros(m.params.layout_ptr(), Origin::nonlinear));
    CHECK(max_abs_diff(linearized_forward(lm, x), logits(m, x)) == 0.0);
}

TEST_CASE("linearized displacement is linear in tau")
{
    for (auto act : {Activation::relu, Activation::tanh, Activation::gelu}) {
        std::mt19937_64 rng(2);
        auto m = make_model(2, act);
        auto x = random_tensor(Shape{9, 2}, rng);
        const Tensor f0 = logits(m, x);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int k = 0; k < 10; ++k) {
            auto t1 = random_tau(m, rng, 0.5);
            auto t2 = random_tau(m, rng, 0.5);
            const double a = u(rng);
            const double b = u(rng);
            std::vector<TaskVector> both{t1, t2};
            std::vector<double> ab{a, b};
            auto disp = [&](const TaskVector& t) {
                Tensor d = linearized_forward(LinearizedModel(m, t), x);
                d -= f0;
                return d;
            };
            Tensor lhs = disp(combine(both, ab));
            Tensor rhs = disp(t1);
            rhs *= a;
            Tensor r2 = disp(t2);
            r2 *= b;
            rhs += r2;
            CHECK(max_abs_diff(lhs, rhs) <= 1e-10);
        }
    }
}

TEST_CASE("Taylor remainder shrinks quadratically")
{
    for (auto act : {Activation::tanh, Activation::gelu}) {
        std::mt19937_64 rng(3);
        auto m = make_model(3, act);
        auto x = random_tensor(Shape{5, 2}, rng);
        auto u = random_tau(m, rng, 1.0);
        std::vector<double> scales{1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
        std::vector<double> ratio;
        for (double s : scales) {
            auto tau = scale(u, s);
            Tensor lin = linearized_forward(LinearizedModel(m, tau), x);
            Tensor full = logits(m.with_params(apply(m.params, tau)), x);
            ratio.push_back(max_abs_diff(lin, full) / (s * s));
        }
        // C fitted at the largest scale bounds every smaller one.
        const double c = ratio.front();
        CHECK(c > 0.0);
        for (double r : ratio) {
            CHECK(r <= 2.0 * c);
            CHECK(r >= 0.5 * c);
        }
    }
}

TEST_CASE("post-hoc linearization differs from the non-linear edit")
{
    std::mt19937_64 rng(4);
    auto m = make_model(4, Activation::relu);
    auto x = random_tensor(Shape{16, 2}, rng);
    auto tau = random_tau(m, rng, 0.5);
    Tensor lin = linearized_forward(posthoc_linearize(m, tau), x);
    Tensor full = logits(m.with_params(apply(m.params, tau)), x);
    CHECK(max_abs_diff(lin, full) > 1e-3);
}

TEST_CASE("for a linear model the linearization is exact")
{
    std::mt19937_64 rng(5);
    LinearModel f(4);
    auto theta0 = random_params(f.lay, rng);
    auto tau = random_params(f.lay, rng);
    auto x = random_tensor(Shape{6, 4}, rng);
    auto jvp = ad::forward_jvp(f, theta0, tau, x);
    Tensor lin = jvp.primal;
    lin += jvp.tangent;
    Tensor full = ad::forward_eval(f, apply(theta0, TaskVector(tau, Origin::nonlinear)), x);
    CHECK(rel_err(lin, full) <= 1e-14);
}

TEST_CASE("ntk_kernel agrees with explicit reverse-mode gradients")
{
    std::mt19937_64 rng(6);
    for (auto act : {Activation::relu, Activation::tanh}) {
        auto m = make_model(6, act);
        for (int k = 0; k < 5; ++k) {
            auto a = random_tensor(Shape{2}, rng);
            auto b = random_tensor(Shape{2}, rng);
            Tensor kab = ntk_kernel(m, a, b);
            Tensor kba = ntk_kernel(m, b, a);
            Tensor kaa = ntk_kernel(m, a, a);
            REQUIRE(kab.size() == 3);
            for (std::size_t j = 0; j < 3; ++j) {
                auto ga = logit_grad(m, a, j);
                auto gb = logit_grad(m, b, j);
                double dot = 0.0;
                double scale = 0.0;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    dot += ga[i] * gb[i];
                    scale += std::abs(ga[i] * gb[i]);
                }
                CHECK(std::abs(kab[j] - dot) <= 1e-8 * std::max(1.0, scale));
                CHECK(std::abs(kab[j] - kba[j]) <= 1e-10 * std::max(1.0, scale));
                CHECK(kaa[j] >= 0.0);
            }
        }
    }
}

TEST_CASE("class_jacobian rows are per-example logit gradients")
{
    std::mt19937_64 rng(7);
    auto m = make_model(7);
    auto x = random_tensor(Shape{4, 2}, rng);
    auto jac = class_jacobian(m, x, 1, 2);
    REQUIRE(static_cast<std::size_t>(jac.rows()) == 4);
    REQUIRE(static_cast<std::size_t>(jac.cols()) == m.params.size());
    for (std::size_t i = 0; i < 4; ++i) {
        auto g = logit_grad(m, row(x, i), 1);
        for (std::size_t p = 0; p < g.size(); ++p) {
            CHECK(jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) == doctest::Approx(g[p]).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(class_jacobian(m, x, 3), LayoutError);
}

TEST_CASE("kernel_fit with zero residual gives zero coefficients")
{
    std::mt19937_64 rng(8);
    auto m = make_model(8);
    auto x = random_tensor(Shape{6, 2}, rng);
    auto kp = kernel_fit(m, x, logits(m, x));
    for (const auto& b : kp.betas) {
        CHECK(b.cwiseAbs().maxCoeff() == 0.0);
    }
    auto q = random_tensor(Shape{3, 2}, rng);
    CHECK(max_abs_diff(kernel_predict(kp, q), logits(m, q)) <= 1e-15);
}

TEST_CASE("kernel_fit on one point interpolates up to the ridge bias")
{
    std::mt19937_64 rng(9);
    auto m = make_model(9);
    auto x = random_tensor(Shape{1, 2}, rng);
    auto target = random_tensor(Shape{1, 3}, rng);
    auto kp = kernel_fit(m, x, target);
    Tensor pred = kernel_predict(kp, x);
    Tensor f0 = logits(m, x);
    for (std::size_t j = 0; j < 3; ++j) {
        const double r = std::abs(target.at(0, j) - f0.at(0, j));
        CHECK(std::abs(pred.at(0, j) - target.at(0, j)) <= 2 * default_relative_ridge * r + 1e-12);
    }
}

TEST_CASE("kernel_predict matches the explicit kernel expansion")
{
    std::mt19937_64 rng(10);
    auto m = make_model(10);
    auto x = random_tensor(Shape{5, 2}, rng);
    auto target = random_tensor(Shape{5, 3}, rng);
    auto kp = kernel_fit(m, x, target, 1e-3);
    auto q = random_tensor(Shape{4, 2}, rng);
    Tensor pred = kernel_predict(kp, q);
    Tensor f0 = logits(m, q);
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = f0.at(a, j);
            for (std::size_t nu = 0; nu < 5; ++nu) {
                s += kp.betas[j](static_cast<Eigen::Index>(nu)) * ntk_kernel(m, row(x, nu), row(q, a))[j];
            }
            CHECK(pred.at(a, j) == doctest::Approx(s).epsilon(1e-9));
        }
    }
}

TEST_CASE("kernel_fit without a ridge reports the singular class")
{
    std::mt19937_64 rng(11);
    auto m = make_model(11);
    auto p = random_tensor(Shape{1, 2}, rng);
    std::vector<Tensor> twice{p, p};
    auto x = concat_rows(twice);
    auto target = random_tensor(Shape{2, 3}, rng);
    try {
        kernel_fit(m, x, target, 0.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("class 0") != std::string::npos);
    }
    CHECK_NOTHROW(kernel_fit(m, x, target));
    CHECK_THROWS_AS(kernel_fit(m, x, target, -1.0), ContractError);
    CHECK_THROWS_AS(kernel_fit(m, x, random_tensor(Shape{2, 2}, rng)), LayoutError);
}

TEST_CASE("linearized models reject foreign layouts")
{
    std::mt19937_64 rng(12);
    auto m = make_model(12);
    auto other = small_network(2, {6, 4}, 4, 3);
    CHECK_THROWS_AS(LinearizedModel(m, TaskVector::zeros(other.layout_ptr(), Origin::linearized)), LayoutError);
}
