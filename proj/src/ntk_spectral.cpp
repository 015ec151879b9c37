#include "tta/ntk_spectral.hpp"

#include "tta/io.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace tta {

std::vector<Eigen::MatrixXd> gram_matrix(const Model& base, const Tensor& rows, const Tensor& cols,
                                         std::span<const std::size_t> classes, std::size_t threads)
{
    const Tensor r = ad::detail::as_batch(rows);
    const Tensor c = ad::detail::as_batch(cols);
    if (c.rows() > max_gram_columns) {
        throw ContractError("gram_matrix: " + std::to_string(c.rows()) + " columns exceed the limit of " +
                            std::to_string(max_gram_columns));
    }
    const auto jr = class_jacobians(base, r, classes, threads);
    const auto jc = class_jacobians(base, c, classes, threads);
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        out.push_back(jr[k] * jc[k].transpose());
    }
    return out;
}

double min_eigenvalue_over_trace(const Eigen::MatrixXd& square)
{
    if (square.rows() != square.cols() || square.rows() == 0) {
        throw LayoutError("PSD check needs a non-empty square matrix");
    }
    const Eigen::MatrixXd sym = 0.5 * (square + square.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericError("eigenvalue solver failed");
    }
    const double trace = sym.trace();
    return es.eigenvalues().minCoeff() / (trace > 0 ? trace : 1.0);
}

bool gram_is_psd(const Eigen::MatrixXd& square, double rel_tol)
{
    return min_eigenvalue_over_trace(square) >= -rel_tol;
}

EigenBasis eigenbasis(const Eigen::MatrixXd& gram, std::size_t class_index)
{
    if (gram.size() == 0 || !gram.allFinite()) {
        throw NumericError("eigenbasis: Gram matrix is empty or not finite");
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
        throw NumericError("eigenbasis: SVD failed");
    }
    EigenBasis b{svd.matrixV(), svd.singularValues(), class_index};
    for (Eigen::Index r = 0; r < b.phi.cols(); ++r) {
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < b.phi.rows(); ++i) {
            if (std::abs(b.phi(i, r)) > std::abs(b.phi(arg, r))) {
                arg = i;
            }
        }
        if (b.phi(arg, r) < 0) {
            b.phi.col(r) *= -1.0;
        }
    }
    return b;
}

std::string to_string(Partition p) { return p == Partition::train ? "train" : "control"; }

SpectralReport local_energy(const EigenBasis& basis, std::span<const Partition> partition,
                            const LocalEnergyOptions& opts)
{
    const auto n = static_cast<std::size_t>(basis.phi.rows());
    if (partition.size() != n) {
        throw LayoutError("local_energy: " + std::to_string(partition.size()) + " partition labels for " +
                          std::to_string(n) + " points");
    }
    auto k = static_cast<std::size_t>(basis.phi.cols());
    if (opts.top_k) {
        k = std::min(k, *opts.top_k);
    }
    const double lmax = basis.lambdas.size() > 0 ? basis.lambdas(0) : 0.0;
    SpectralReport rep;
    rep.class_index = basis.class_index;
    rep.partition.assign(partition.begin(), partition.end());
    rep.local_energy.assign(n, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
        const auto rr = static_cast<Eigen::Index>(r);
        double w = 1.0;
        if (opts.lambda_weighted) {
            w = lmax > 0 ? std::pow(basis.lambdas(rr) / lmax, 2) : 0.0;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double v = basis.phi(static_cast<Eigen::Index>(i), rr);
            rep.local_energy[i] += w * v * v;
        }
    }
    double st = 0.0;
    double sc = 0.0;
    std::size_t nt = 0;
    std::size_t nc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (partition[i] == Partition::train) {
            st += rep.local_energy[i];
            ++nt;
        } else {
            sc += rep.local_energy[i];
            ++nc;
        }
    }
    rep.train_mean = nt ? st / static_cast<double>(nt) : 0.0;
    rep.control_mean = nc ? sc / static_cast<double>(nc) : 0.0;
    if (rep.control_mean > 0.0) {
        rep.concentration_ratio = rep.train_mean / rep.control_mean;
    } else {
        rep.concentration_ratio = std::numeric_limits<double>::infinity();
        rep.ratio_flagged = true;
    }
    return rep;
}

std::string local_energy_csv(std::span<const SpectralReport> reports)
{
    std::string out = "point_index,partition,class,local_energy\n";
    for (const auto& rep : reports) {
        for (std::size_t i = 0; i < rep.local_energy.size(); ++i) {
            out += io::csv_line({std::to_string(i), to_string(rep.partition[i]), std::to_string(rep.class_index),
                                 io::format_g17(rep.local_energy[i])});
        }
    }
    return out;
}

RingGrid make_ring_grid(std::size_t n_points)
{
    if (n_points < 8) {
        throw ContractError("ring grid needs at least 8 points");
    }
    RingGrid g;
    const double h = 2.0 * std::numbers::pi / static_cast<double>(n_points);
    g.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_points), h);
    g.masks.assign(2, std::vector<bool>(n_points, false));
    for (std::size_t i = 0; i < n_points; ++i) {
        const double t = h * static_cast<double>(i);
        g.theta.push_back(t);
        g.masks[0][i] = t < std::numbers::pi / 2;
        g.masks[1][i] = t >= std::numbers::pi && t < 1.5 * std::numbers::pi;
    }
    return g;
}

namespace {

void check_masks(std::span<const std::vector<bool>> masks, std::size_t n)
{
    for (const auto& m : masks) {
        if (m.size() != n) {
            throw LayoutError("domain mask length does not match the grid");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        int owners = 0;
        for (const auto& m : masks) {
            owners += m[i] ? 1 : 0;
        }
        if (owners > 1) {
            throw ContractError("domain masks overlap at grid point " + std::to_string(i));
        }
    }
}

Eigen::VectorXd task_function(const SampledBasis& basis, const Eigen::VectorXd& c)
{
    if (c.size() != basis.values.cols()) {
        throw LayoutError("task coefficients do not match the basis size");
    }
    return basis.values * c;
}

}  // namespace

SampledBasis make_bump_basis(std::span<const std::vector<bool>> masks, const Eigen::VectorXd& weights,
                             std::size_t per_domain)
{
    if (per_domain < 1) {
        throw ContractError("bump basis needs at least one function per domain");
    }
    const auto n = static_cast<std::size_t>(weights.size());
    check_masks(masks, n);
    SampledBasis b;
    b.weights = weights;
    b.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                     static_cast<Eigen::Index>(masks.size() * per_domain));
    Eigen::Index col = 0;
    for (std::size_t d = 0; d < masks.size(); ++d) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (masks[d][i]) {
                idx.push_back(static_cast<Eigen::Index>(i));
            }
        }
        if (idx.size() < per_domain) {
            throw ContractError("domain " + std::to_string(d) + " has fewer grid points than bump functions");
        }
        const double m = static_cast<double>(idx.size());
        const Eigen::Index first = col;
        for (std::size_t k = 1; k <= per_domain; ++k, ++col) {
            for (std::size_t p = 0; p < idx.size(); ++p) {
                b.values(idx[p], col) =
                    std::sin(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(p) + 1) / (m + 1));
            }
            // Gram-Schmidt against the earlier functions of this domain.
            for (Eigen::Index q = first; q < col; ++q) {
                const double proj = (b.values.col(q).array() * b.values.col(col).array() * weights.array()).sum();
                b.values.col(col) -= proj * b.values.col(q);
            }
            const double norm = std::sqrt((b.values.col(col).array().square() * weights.array()).sum());
            if (!(norm > 0)) {
                throw NumericError("bump basis: degenerate function in domain " + std::to_string(d));
            }
            b.values.col(col) /= norm;
            b.owner.push_back(static_cast<int>(d));
        }
    }
    return b;
}

SampledBasis make_fourier_ring_basis(std::size_t n_points, std::size_t n_freqs)
{
    if (n_points < 1 || n_freqs < 1) {
        throw ContractError("Fourier basis needs at least one point and one frequency");
    }
    const RingGrid g = make_ring_grid(n_points);
    SampledBasis b;
    b.weights = g.weights;
    b.values.resize(static_cast<Eigen::Index>(n_points), static_cast<Eigen::Index>(2 * n_freqs + 1));
    const double c0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const double ck = 1.0 / std::sqrt(std::numbers::pi);
    for (std::size_t i = 0; i < n_points; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        b.values(ii, 0) = c0;
        for (std::size_t k = 1; k <= n_freqs; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            b.values(ii, 2 * kk - 1) = ck * std::cos(static_cast<double>(k) * g.theta[i]);
            b.values(ii, 2 * kk) = ck * std::sin(static_cast<double>(k) * g.theta[i]);
        }
    }
    b.owner.assign(2 * n_freqs + 1, -1);
    return b;
}

Eigen::MatrixXd restricted_gram(const SampledBasis& basis, const std::vector<bool>& mask)
{
    if (mask.size() != static_cast<std::size_t>(basis.values.rows())) {
        throw LayoutError("mask length does not match the grid");
    }
    Eigen::VectorXd w = basis.weights;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) {
            w(static_cast<Eigen::Index>(i)) = 0.0;
        }
    }
    return basis.values.transpose() * w.asDiagonal() * basis.values;
}

double min_singular_value(const Eigen::MatrixXd& m)
{
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues().size() ? svd.singularValues().minCoeff() : 0.0;
}

double local_independence_margin(const SampledBasis& basis, const std::vector<bool>& mask)
{
    if (mask.size() != static_cast<std::size_t>(basis.values.rows())) {
        throw LayoutError("mask length does not match the grid");
    }
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            rows.push_back(static_cast<Eigen::Index>(i));
        }
    }
    if (rows.size() < static_cast<std::size_t>(basis.values.cols())) {
        return 0.0;
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), basis.values.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        a.row(r) = std::sqrt(basis.weights(rows[static_cast<std::size_t>(r)])) *
                   basis.values.row(rows[static_cast<std::size_t>(r)]);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto sv = svd.singularValues();
    return sv.maxCoeff() > 0.0 ? sv.minCoeff() / sv.maxCoeff() : 0.0;
}

ResidualReport proposition1_residual(const SampledBasis& basis, const TaskCoefficients& coeffs,
                                     std::span<const std::vector<bool>> masks)
{
    const auto n = static_cast<std::size_t>(basis.values.rows());
    check_masks(masks, n);
    if (coeffs.size() != masks.size()) {
        throw LayoutError("need one coefficient vector per domain");
    }
    if (basis.weights.size() != basis.values.rows() || (basis.weights.array() <= 0).any()) {
        throw ContractError("quadrature weights must be positive, one per grid point");
    }
    const std::size_t T = coeffs.size();
    std::vector<Eigen::VectorXd> g;
    for (const auto& c : coeffs) {
        g.push_back(task_function(basis, c));
    }
    ResidualReport rep;
    for (std::size_t tp = 0; tp < T; ++tp) {
        Eigen::VectorXd other = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t t = 0; t < T; ++t) {
            if (t != tp) {
                other += g[t];
            }
        }
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (masks[tp][i]) {
                const auto ii = static_cast<Eigen::Index>(i);
                r += basis.weights(ii) * other(ii) * other(ii);
            }
        }
        const double total = (other.array().square() * basis.weights.array()).sum();
        rep.residuals.push_back(r);
        rep.relative.push_back(total > 0 ? r / total : 0.0);
    }
    for (std::size_t t = 0; t < T; ++t) {
        rep.max_residual = std::max(rep.max_residual, rep.residuals[t]);
        rep.max_relative = std::max(rep.max_relative, rep.relative[t]);
    }
    rep.holds = rep.max_residual <= 1e-10;
    return rep;
}

double pointwise_task_arithmetic_gap(const SampledBasis& basis, const TaskCoefficients& coeffs,
                                     std::span<const std::vector<bool>> masks)
{
    const auto n = static_cast<std::size_t>(basis.values.rows());
    check_masks(masks, n);
    if (coeffs.size() != masks.size()) {
        throw LayoutError("need one coefficient vector per domain");
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<Eigen::VectorXd> g;
    for (const auto& c : coeffs) {
        g.push_back(task_function(basis, c));
        sum += g.back();
    }
    double gap = 0.0;
    for (std::size_t tp = 0; tp < coeffs.size(); ++tp) {
        for (std::size_t i = 0; i < n; ++i) {
            if (masks[tp][i]) {
                const auto ii = static_cast<Eigen::Index>(i);
                gap = std::max(gap, std::abs(sum(ii) - g[tp](ii)));
            }
        }
    }
    return gap;
}

}  // namespace tta
