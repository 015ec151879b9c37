#include "test_util.hpp"

#include "tta/ntk_spectral.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace tta;
using namespace tta::testing;

namespace {

Model small_model(std::uint64_t seed, Activation act = Activation::tanh)
{
    auto net = small_network(2, {8, 6}, 4, 3, act, seed + 1);
    return Model(net, random_init(net.spec(), seed));
}

Tensor row(const Tensor& x, std::size_t i)
{
    Tensor r(Shape{x.cols()});
    for (std::size_t k = 0; k < x.cols(); ++k) {
        r[k] = x.at(i, k);
    }
    return r;
}

std::vector<Partition> split(std::size_t n_train, std::size_t n_control)
{
    std::vector<Partition> p(n_train, Partition::train);
    p.resize(n_train + n_control, Partition::control);
    return p;
}

TaskCoefficients random_coeffs(std::size_t tasks, std::size_t size, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    TaskCoefficients c(tasks, Eigen::VectorXd(static_cast<Eigen::Index>(size)));
    for (auto& v : c) {
        for (auto& x : v) {
            x = n(rng);
        }
    }
    return c;
}

}  // namespace

TEST_CASE("gram_matrix matches entrywise kernel calls")
{
    std::mt19937_64 rng(1);
    auto m = small_model(1);
    auto rows = random_tensor(Shape{4, 2}, rng);
    auto extra = random_tensor(Shape{3, 2}, rng);
    std::vector<Tensor> parts{rows, extra};
    auto cols = concat_rows(parts);
    std::vector<std::size_t> classes{0, 2};
    auto grams = gram_matrix(m, rows, cols, classes, 3);
    REQUIRE(grams.size() == 2);
    for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(grams[c].rows() == 4);
        REQUIRE(grams[c].cols() == 7);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t k = 0; k < 7; ++k) {
                const double direct = ntk_kernel(m, row(rows, i), row(cols, k))[classes[c]];
                CHECK(std::abs(grams[c](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) - direct) <=
                      1e-10 * std::max(1.0, std::abs(direct)));
            }
        }
        // Rows equal the first columns, so the leading square block is a Gram.
        Eigen::MatrixXd square = grams[c].leftCols(4);
        CHECK((square - square.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * square.trace());
        CHECK(gram_is_psd(square));
    }
    auto serial = gram_matrix(m, rows, cols, classes, 1);
    CHECK(serial[0] == grams[0]);
}

TEST_CASE("a single point gives the squared gradient norm")
{
    std::mt19937_64 rng(2);
    auto m = small_model(2);
    auto x = random_tensor(Shape{1, 2}, rng);
    std::vector<std::size_t> classes{1};
    auto g = gram_matrix(m, x, x, classes);
    REQUIRE(g[0].size() == 1);
    Tensor cot(Shape{1, 3});
    cot.at(0, 1) = 1.0;
    auto grad = ad::vjp(m.net, m.params, x, cot);
    double sq = 0.0;
    for (double v : grad.values()) {
        sq += v * v;
    }
    CHECK(g[0](0, 0) == doctest::Approx(sq).epsilon(1e-12));
}

TEST_CASE("gram_matrix guards its inputs")
{
    std::mt19937_64 rng(3);
    auto m = small_model(3);
    auto rows = random_tensor(Shape{2, 2}, rng);
    std::vector<std::size_t> classes{0};
    CHECK_THROWS_AS(gram_matrix(m, rows, Tensor(Shape{max_gram_columns + 1, 2}), classes), ContractError);
    std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(gram_matrix(m, rows, rows, bad), LayoutError);
    CHECK_THROWS_AS(min_eigenvalue_over_trace(Eigen::MatrixXd(2, 3)), LayoutError);
    Eigen::MatrixXd indefinite{{1.0, 0.0}, {0.0, -1.0}};
    CHECK_FALSE(gram_is_psd(indefinite));
}

TEST_CASE("eigenbasis of simple Grams")
{
    auto id = eigenbasis(Eigen::MatrixXd::Identity(4, 4), 2);
    CHECK(id.class_index == 2);
    CHECK((id.lambdas.array() - 1.0).abs().maxCoeff() <= 1e-15);
    CHECK((id.phi.cwiseAbs() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((id.phi - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-15 * 4);

    Eigen::VectorXd u{{1.0, -2.0, 0.5}};
    Eigen::VectorXd v{{0.3, 0.0, -1.0, 2.0}};
    auto r1 = eigenbasis(u * v.transpose());
    CHECK(r1.lambdas(0) == doctest::Approx(u.norm() * v.norm()).epsilon(1e-12));
    for (Eigen::Index k = 1; k < r1.lambdas.size(); ++k) {
        CHECK(r1.lambdas(k) <= 1e-12 * r1.lambdas(0));
    }
    Eigen::Index at = 0;
    r1.phi.col(0).cwiseAbs().maxCoeff(&at);
    CHECK(r1.phi(at, 0) > 0.0);

    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
    bad(0, 1) = NAN;
    CHECK_THROWS_AS(eigenbasis(bad), NumericError);
}

TEST_CASE("eigenbasis reconstructs the Gram and is deterministic")
{
    std::mt19937_64 rng(4);
    auto m = small_model(4, Activation::relu);
    auto rows = random_tensor(Shape{10, 2}, rng);
    auto cols = concat_rows(std::vector<Tensor>{rows, random_tensor(Shape{10, 2}, rng)});
    std::vector<std::size_t> classes{0};
    const auto gram = gram_matrix(m, rows, cols, classes)[0];
    auto b = eigenbasis(gram);
    REQUIRE(b.phi.rows() == 20);
    REQUIRE(b.phi.cols() == 10);
    // U = K V diag(1/lambda); reconstruct K V V^T from the right factors.
    const Eigen::MatrixXd orth = b.phi.transpose() * b.phi;
    CHECK((orth - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-8);
    for (Eigen::Index k = 1; k < b.lambdas.size(); ++k) {
        CHECK(b.lambdas(k) <= b.lambdas(k - 1));
        CHECK(b.lambdas(k) >= 0.0);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd rebuilt = svd.matrixU() * b.lambdas.asDiagonal() * svd.matrixV().transpose();
    CHECK((gram - rebuilt).norm() / gram.norm() <= 1e-10);
    const Eigen::MatrixXd projected = gram * b.phi * b.phi.transpose();
    CHECK((gram - projected).norm() / gram.norm() <= 1e-10);

    auto again = eigenbasis(gram);
    CHECK(again.phi == b.phi);
    CHECK(again.lambdas == b.lambdas);
    for (Eigen::Index r = 0; r < b.phi.cols(); ++r) {
        Eigen::Index at = 0;
        b.phi.col(r).cwiseAbs().maxCoeff(&at);
        CHECK(b.phi(at, r) > 0.0);
    }
}

TEST_CASE("local energy of orthonormal and localized bases")
{
    std::mt19937_64 rng(5);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(6, 6);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    EigenBasis q{qr.householderQ(), Eigen::VectorXd::Ones(6), 0};
    auto rep = local_energy(q, split(3, 3));
    for (double e : rep.local_energy) {
        CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(rep.concentration_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(rep.ratio_flagged);

    EigenBasis block{Eigen::MatrixXd::Zero(5, 2), Eigen::VectorXd::Ones(2), 1};
    block.phi(0, 0) = 1.0;
    block.phi(1, 1) = 1.0;
    auto loc = local_energy(block, split(2, 3));
    CHECK(loc.class_index == 1);
    CHECK(loc.train_mean == 1.0);
    CHECK(loc.control_mean == 0.0);
    CHECK(std::isinf(loc.concentration_ratio));
    CHECK(loc.ratio_flagged);

    CHECK_THROWS_AS(local_energy(block, split(2, 2)), LayoutError);

    LocalEnergyOptions top;
    top.top_k = 1;
    auto first = local_energy(block, split(2, 3), top);
    CHECK(first.local_energy[0] == 1.0);
    CHECK(first.local_energy[1] == 0.0);
    EigenBasis weighted = block;
    weighted.lambdas = Eigen::VectorXd{{2.0, 1.0}};
    LocalEnergyOptions lw;
    lw.lambda_weighted = true;
    auto w = local_energy(weighted, split(2, 3), lw);
    CHECK(w.local_energy[0] == 1.0);
    CHECK(w.local_energy[1] == 0.25);

    std::vector<SpectralReport> reps{rep, loc};
    const auto csv = local_energy_csv(reps);
    CHECK(csv.rfind("point_index,partition,class,local_energy\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == 1 + 6 + 5);
    CHECK(csv.find("\n0,train,1,1\n") != std::string::npos);
}

TEST_CASE("bump bases are orthonormal and localized")
{
    auto ring = make_ring_grid(400);
    REQUIRE(ring.masks.size() == 2);
    auto bump = make_bump_basis(ring.masks, ring.weights, 5);
    REQUIRE(bump.values.cols() == 10);
    const Eigen::MatrixXd gram = bump.values.transpose() * ring.weights.asDiagonal() * bump.values;
    CHECK((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-10);
    for (Eigen::Index r = 0; r < bump.values.cols(); ++r) {
        const int d = bump.owner[static_cast<std::size_t>(r)];
        REQUIRE(d >= 0);
        for (Eigen::Index i = 0; i < bump.values.rows(); ++i) {
            if (!ring.masks[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)]) {
                CHECK(bump.values(i, r) == 0.0);
            }
        }
    }
    CHECK_THROWS_AS(make_bump_basis(ring.masks, ring.weights, 0), ContractError);
    CHECK_THROWS_AS(make_ring_grid(4), ContractError);
}

TEST_CASE("localized tasks satisfy task arithmetic")
{
    std::mt19937_64 rng(6);
    auto ring = make_ring_grid(400);
    auto bump = make_bump_basis(ring.masks, ring.weights, 4);
    auto coeffs = random_coeffs(2, 8, rng);
    // Each task only uses the functions living in its own domain.
    for (std::size_t t = 0; t < 2; ++t) {
        for (Eigen::Index r = 0; r < 8; ++r) {
            if (bump.owner[static_cast<std::size_t>(r)] != static_cast<int>(t)) {
                coeffs[t](r) = 0.0;
            }
        }
    }
    auto rep = proposition1_residual(bump, coeffs, ring.masks);
    CHECK(rep.holds);
    CHECK(rep.max_residual <= 1e-12);
    CHECK(pointwise_task_arithmetic_gap(bump, coeffs, ring.masks) <= 1e-10);

    // A single task has nothing to interfere with.
    std::vector<std::vector<bool>> one{ring.masks[0]};
    TaskCoefficients dense = random_coeffs(1, 8, rng);
    auto single = proposition1_residual(bump, dense, one);
    CHECK(single.max_residual == 0.0);
    CHECK(single.holds);
}

TEST_CASE("Fourier atoms on the ring break task arithmetic")
{
    const std::size_t n = 360;
    const std::size_t freqs = 6;
    auto ring = make_ring_grid(n);
    auto fourier = make_fourier_ring_basis(n, freqs);
    REQUIRE(fourier.values.cols() == static_cast<Eigen::Index>(2 * freqs + 1));
    for (Eigen::Index r = 0; r < fourier.values.cols(); ++r) {
        CHECK(fourier.owner[static_cast<std::size_t>(r)] == -1);
        for (const auto& mask : ring.masks) {
            double e = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask[i]) {
                    e += fourier.weights(static_cast<Eigen::Index>(i)) *
                         std::pow(fourier.values(static_cast<Eigen::Index>(i), r), 2);
                }
            }
            CHECK(e > 1e-3);
        }
    }
    const Eigen::MatrixXd full = fourier.values.transpose() * fourier.weights.asDiagonal() * fourier.values;
    CHECK((full - Eigen::MatrixXd::Identity(full.rows(), full.cols())).cwiseAbs().maxCoeff() <= 1e-10);
    for (const auto& mask : ring.masks) {
        CHECK(min_singular_value(restricted_gram(fourier, mask)) > 0.0);
        // Well above the ~1e-16 round-off floor of a 13-column matrix.
        CHECK(local_independence_margin(fourier, mask) > 1e-12);
    }

    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto coeffs = random_coeffs(2, 2 * freqs + 1, rng);
        auto rep = proposition1_residual(fourier, coeffs, ring.masks);
        CHECK_FALSE(rep.holds);
        CHECK(rep.max_relative > 0.1);
        CHECK(pointwise_task_arithmetic_gap(fourier, coeffs, ring.masks) > 1e-3);
    }
}

TEST_CASE("residuals reject overlapping or mismatched domains")
{
    auto ring = make_ring_grid(100);
    auto fourier = make_fourier_ring_basis(100, 2);
    std::mt19937_64 rng(8);
    auto coeffs = random_coeffs(2, 5, rng);
    std::vector<std::vector<bool>> overlap{ring.masks[0], ring.masks[0]};
    CHECK_THROWS_AS(proposition1_residual(fourier, coeffs, overlap), ContractError);
    std::vector<std::vector<bool>> short_masks{std::vector<bool>(50, false), std::vector<bool>(50, false)};
    CHECK_THROWS_AS(proposition1_residual(fourier, coeffs, short_masks), LayoutError);
    auto wrong = random_coeffs(2, 4, rng);
    CHECK_THROWS_AS(proposition1_residual(fourier, wrong, ring.masks), LayoutError);
    auto three = random_coeffs(3, 5, rng);
    CHECK_THROWS_AS(pointwise_task_arithmetic_gap(fourier, three, ring.masks), LayoutError);
}
