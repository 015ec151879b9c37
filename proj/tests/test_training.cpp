#include "test_util.hpp"

#include "tta/rng.hpp"
#include "tta/training.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace tta;
using namespace tta::testing;

namespace {

struct Fixture {
    Suite suite;
    Network net;
    Dataset corpus;
    TrainLog pretrain_log;
    Model base;
};

// Default suite with a pretrained surrogate base, built once.
const Fixture& fixture()
{
    static const Fixture f = [] {
        SuiteConfig sc;
        auto suite = make_suite(sc);
        ModelSpec spec;
        Network net(spec, FrozenHead::orthonormal(spec.num_classes, spec.embed_dim, derive_seed(0, {100})));
        auto corpus = pretrain_corpus(suite.tasks, 4096, 0);
        TrainConfig pc;
        TrainLog log;
        auto theta0 = pretrain(net, corpus, pc, derive_seed(0, {101}), &log);
        Model base(net, std::move(theta0));
        return Fixture{std::move(suite), net, std::move(corpus), std::move(log), std::move(base)};
    }();
    return f;
}

Model tiny_model(std::uint64_t seed, std::size_t c = 2)
{
    auto net = small_network(2, {8}, 4, c, Activation::tanh, seed + 50);
    return Model(net, random_init(net.spec(), seed));
}

Dataset tiny_dataset(std::mt19937_64& rng, std::size_t n, int classes)
{
    Dataset ds;
    ds.inputs = random_tensor(Shape{n, 2}, rng);
    std::uniform_int_distribution<int> u(0, classes - 1);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels.push_back(u(rng));
    }
    return ds;
}

TrainConfig short_config()
{
    TrainConfig cfg;
    cfg.iterations = 40;
    cfg.warmup_steps = 5;
    cfg.batch_size = 8;
    cfg.lr = 1e-2;
    return cfg;
}

}  // namespace

TEST_CASE("lr_schedule ramps up then decays along a cosine")
{
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.warmup_steps = 50;
    cfg.lr = 1e-3;
    CHECK(lr_schedule(0, cfg) == 0.0);
    CHECK(lr_schedule(50, cfg) == cfg.lr);
    CHECK(lr_schedule(25, cfg) == doctest::Approx(cfg.lr / 2).epsilon(1e-15));
    const std::size_t last = cfg.iterations - 1;
    const double x = static_cast<double>(last - 50) / 450.0;
    CHECK(lr_schedule(last, cfg) == doctest::Approx(cfg.lr * (1.0 + std::cos(std::numbers::pi * x)) / 2.0));
    for (std::size_t s = 51; s < cfg.iterations; ++s) {
        CHECK(lr_schedule(s, cfg) <= lr_schedule(s - 1, cfg));
    }
    CHECK_THROWS_AS(lr_schedule(cfg.iterations, cfg), ContractError);

    cfg.schedule = Schedule::constant;
    CHECK(lr_schedule(last, cfg) == cfg.lr);
}

TEST_CASE("TrainConfig validation names the field")
{
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
    auto expect_field = [](TrainConfig c, const std::string& field) {
        try {
            c.validate();
            FAIL("expected ConfigError for " << field);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(field) != std::string::npos);
        }
    };
    TrainConfig c;
    c.warmup_steps = c.iterations;
    expect_field(c, "warmup_steps");
    c = {};
    c.batch_size = 0;
    expect_field(c, "batch_size");
    c = {};
    c.lr = -1.0;
    expect_field(c, "lr");
    c = {};
    c.lr = NAN;
    expect_field(c, "lr");
    c = {};
    c.beta2 = 1.0;
    expect_field(c, "beta2");
    c = {};
    c.eps = 0.0;
    expect_field(c, "eps");
    c = {};
    c.iterations = 0;
    CHECK_NOTHROW(c.validate());
    CHECK(optimizer_from_string(to_string(OptimizerKind::sgd)) == OptimizerKind::sgd);
    CHECK(loss_from_string(to_string(Loss::mse)) == Loss::mse);
    CHECK(schedule_from_string(to_string(Schedule::constant)) == Schedule::constant);
    CHECK_THROWS_AS(loss_from_string("hinge"), ConfigError);
}

TEST_CASE("AdamW step matches a hand-computed update")
{
    auto lay = std::make_shared<ParamLayout>();
    lay->add("w", Shape{2});
    ParamVector p(lay, {1.0, -2.0});
    ParamVector g(lay, {0.5, 0.0});
    OptimizerState st(lay);
    TrainConfig cfg;
    cfg.weight_decay = 0.1;
    optimizer_step(p, g, st, 0.01, cfg);
    // First step: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(p[0] == doctest::Approx((1.0 - 0.01 * 0.1) * 1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx((1.0 - 0.01 * 0.1) * -2.0).epsilon(1e-14));
    CHECK(st.step == 1);
    CHECK(st.first_moment[1] == 0.0);
    CHECK(st.second_moment[0] == doctest::Approx(0.001 * 0.25).epsilon(1e-14));
}

TEST_CASE("cross-entropy cotangent matches finite differences")
{
    std::mt19937_64 rng(1);
    const std::size_t c = 6;
    Dataset ds = tiny_dataset(rng, 5, 3);
    auto logits = random_tensor(Shape{5, c}, rng, 2.0);
    std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    for (bool grouped : {false, true}) {
        TrainSet data = TrainSet::classification(ds);
        if (grouped) {
            data.label_groups = {{0, 1}, {2, 3, 4}, {5}};
        }
        auto le = loss_and_cotangent(logits, data, rows, Loss::cross_entropy);
        const double h = 1e-6;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            Tensor up = logits;
            Tensor dn = logits;
            up[i] += h;
            dn[i] -= h;
            const double fd = (loss_and_cotangent(up, data, rows, Loss::cross_entropy).value -
                               loss_and_cotangent(dn, data, rows, Loss::cross_entropy).value) /
                              (2 * h);
            CHECK(le.cotangent[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("grouped cross-entropy is minimized by ties within the group")
{
    Dataset ds;
    ds.inputs = Tensor(Shape{1, 2});
    ds.labels = {0};
    TrainSet data = TrainSet::classification(ds);
    data.label_groups = {{1, 2}};
    std::vector<std::size_t> rows{0};
    Tensor tied(Shape{1, 4});
    tied.at(0, 1) = 5.0;
    tied.at(0, 2) = 5.0;
    Tensor split = tied;
    split.at(0, 1) = 5.5;
    split.at(0, 2) = 4.5;
    const auto a = loss_and_cotangent(tied, data, rows, Loss::cross_entropy);
    const auto b = loss_and_cotangent(split, data, rows, Loss::cross_entropy);
    CHECK(a.value < b.value);
    CHECK(a.cotangent.at(0, 1) == doctest::Approx(a.cotangent.at(0, 2)).epsilon(1e-15));
}

TEST_CASE("mse loss and labels out of range")
{
    std::mt19937_64 rng(2);
    auto x = random_tensor(Shape{3, 2}, rng);
    auto y = random_tensor(Shape{3, 2}, rng);
    auto data = TrainSet::regression(x, y);
    std::vector<std::size_t> rows{0, 1, 2};
    auto le = loss_and_cotangent(y, data, rows, Loss::mse);
    CHECK(le.value == 0.0);
    CHECK(max_abs(le.cotangent) == 0.0);
    CHECK_THROWS_AS(TrainSet::regression(x, random_tensor(Shape{2, 2}, rng)), LayoutError);

    Dataset ds;
    ds.inputs = x;
    ds.labels = {0, 1, 7};
    CHECK_THROWS_AS(loss_and_cotangent(y, TrainSet::classification(ds), rows, Loss::cross_entropy), LayoutError);
}

TEST_CASE("zero learning rate leaves parameters untouched")
{
    std::mt19937_64 rng(3);
    auto m = tiny_model(3);
    auto data = TrainSet::classification(tiny_dataset(rng, 16, 2));
    auto cfg = short_config();
    cfg.lr = 0.0;
    auto nl = finetune_nonlinear(m, data, cfg);
    for (double v : nl.tau.values()) {
        CHECK(v == 0.0);
    }
    CHECK(nl.theta_star == m.params);
    auto lin = finetune_linearized(m, data, cfg);
    for (double v : lin.values()) {
        CHECK(v == 0.0);
    }
    CHECK(nl.tau.origin() == Origin::nonlinear);
    CHECK(lin.origin() == Origin::linearized);
}

TEST_CASE("zero iterations returns the initialization")
{
    std::mt19937_64 rng(4);
    auto m = tiny_model(4);
    Dataset ds = tiny_dataset(rng, 16, 2);
    TrainConfig cfg;
    cfg.iterations = 0;
    CHECK(pretrain(m.net, ds, cfg, 77) == random_init(m.spec(), 77));
    CHECK(init_params(m.net, 77, InitMode::random) == random_init(m.spec(), 77));
    SurrogateSetup setup{ds, cfg};
    CHECK(init_params(m.net, 77, InitMode::pretrained_surrogate, &setup) == random_init(m.spec(), 77));
    CHECK_THROWS_AS(init_params(m.net, 77, InitMode::pretrained_surrogate), ContractError);
}

TEST_CASE("training is deterministic and streams differ")
{
    std::mt19937_64 rng(5);
    auto m = tiny_model(5);
    auto data = TrainSet::classification(tiny_dataset(rng, 40, 2));
    auto cfg = short_config();
    auto a = finetune_nonlinear(m, data, cfg, 3);
    auto b = finetune_nonlinear(m, data, cfg, 3);
    CHECK(a.tau == b.tau);
    auto la = finetune_linearized(m, data, cfg, 3);
    auto lb = finetune_linearized(m, data, cfg, 3);
    CHECK(la == lb);
    auto other = finetune_nonlinear(m, data, cfg, 4);
    CHECK_FALSE(other.tau == a.tau);
}

TEST_CASE("training never touches the frozen head")
{
    std::mt19937_64 rng(6);
    auto m = tiny_model(6);
    const FrozenHead before = m.head();
    auto data = TrainSet::classification(tiny_dataset(rng, 20, 2));
    auto r = finetune_nonlinear(m, data, short_config());
    (void)finetune_linearized(m, data, short_config());
    CHECK(m.head() == before);
    CHECK(m.with_params(r.theta_star).head() == before);
}

TEST_CASE("linearized training evaluates the network only at theta0")
{
    std::mt19937_64 rng(7);
    auto m = tiny_model(7);
    auto data = TrainSet::classification(tiny_dataset(rng, 20, 2));
    std::size_t sites = 0;
    std::size_t elsewhere = 0;
    {
        ad::ScopedEvaluationProbe probe([&](const ParamVector& p) {
            ++sites;
            if (!(p == m.params)) {
                ++elsewhere;
            }
        });
        auto tau = finetune_linearized(m, data, short_config());
        CHECK_FALSE(tau == TaskVector::zeros(m.params.layout_ptr(), Origin::linearized));
    }
    CHECK(sites >= short_config().iterations);
    CHECK(elsewhere == 0);

    std::size_t moved = 0;
    {
        ad::ScopedEvaluationProbe probe([&](const ParamVector& p) { moved += !(p == m.params); });
        (void)finetune_nonlinear(m, data, short_config());
    }
    CHECK(moved > 0);
}

TEST_CASE("training rejects mismatched inputs and diverges loudly")
{
    std::mt19937_64 rng(8);
    auto m = tiny_model(8);
    Dataset ds;
    ds.inputs = random_tensor(Shape{4, 3}, rng);
    ds.labels = {0, 1, 0, 1};
    CHECK_THROWS_AS(finetune_nonlinear(m, TrainSet::classification(ds), short_config()), LayoutError);
    CHECK_THROWS_AS(TrainSet::classification(Dataset{}), ContractError);

    auto data = TrainSet::classification(tiny_dataset(rng, 16, 2));
    auto cfg = short_config();
    cfg.optimizer = OptimizerKind::sgd;
    cfg.lr = 1e300;
    CHECK_THROWS_AS(finetune_nonlinear(m, data, cfg), NumericError);
}

TEST_CASE("linearized gradient descent converges to the kernel predictor")
{
    std::mt19937_64 rng(9);
    auto m = tiny_model(9, 1);
    const std::size_t n = 6;
    auto x = random_tensor(Shape{n, 2}, rng);
    auto target = random_tensor(Shape{n, 1}, rng, 0.5);
    auto kp = kernel_fit(m, x, target);

    // Step size from the largest Gram eigenvalue; loss is (1/n) sum r^2.
    auto jac = class_jacobian(m, x, 0);
    Eigen::MatrixXd gram = jac * jac.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    REQUIRE(lmin > 0.0);
    TrainConfig cfg;
    cfg.loss = Loss::mse;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.schedule = Schedule::constant;
    cfg.warmup_steps = 0;
    cfg.weight_decay = 0.0;
    cfg.batch_size = n;
    cfg.lr = 0.9 * static_cast<double>(n) / (2.0 * lmax);
    // Contraction per step is 1 - 2 lr lmin / n; run until it is below 1e-9.
    const double rate = 1.0 - 2.0 * cfg.lr * lmin / static_cast<double>(n);
    cfg.iterations = static_cast<std::size_t>(std::ceil(std::log(1e-9) / std::log(rate))) + 1;
    INFO("iterations " << cfg.iterations);
    REQUIRE(cfg.iterations < 2000000);
    auto tau = finetune_linearized(m, TrainSet::regression(x, target), cfg);

    auto q = random_tensor(Shape{5, 2}, rng);
    std::vector<Tensor> parts{x, q};
    auto all = concat_rows(parts);
    Tensor gd = linearized_forward(LinearizedModel(m, tau), all);
    Tensor kernel = kernel_predict(kp, all);
    CHECK(max_abs_diff(gd, kernel) <= 1e-3);
}

TEST_CASE("pretraining descends and beats chance on the corpus")
{
    const auto& f = fixture();
    const auto& losses = f.pretrain_log.losses;
    REQUIRE(losses.size() == TrainConfig{}.iterations);
    double head = 0.0;
    double tail = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        head += losses[i];
        tail += losses[losses.size() - 1 - i];
    }
    CHECK(tail < head);
    // A uniform guess lands in a 2-class group with probability 2/8.
    const double chance = static_cast<double>(f.suite.config.classes_per_task) /
                          static_cast<double>(f.suite.config.num_classes);
    CHECK(accuracy(f.base, f.corpus) >= 3.0 * chance);
}

TEST_CASE("default fine-tuning solves every suite task")
{
    const auto& f = fixture();
    TrainConfig cfg;
    for (std::size_t t = 0; t < f.suite.size(); ++t) {
        const auto& d = f.suite.data[t];
        auto data = TrainSet::classification(d.train);
        auto nl = finetune_nonlinear(f.base, data, cfg, t);
        auto lin = finetune_linearized(f.base, data, cfg, t);
        const double acc_nl = accuracy(f.base.with_params(nl.theta_star), d.test);
        const double acc_lin = accuracy(LinearizedModel(f.base, lin), d.test);
        INFO("task " << t << " nonlinear " << acc_nl << " linearized " << acc_lin);
        CHECK(acc_nl >= 0.9);
        CHECK(acc_lin >= acc_nl - 0.10);
        CHECK(acc_nl >= acc_lin - 0.02);
    }
}
