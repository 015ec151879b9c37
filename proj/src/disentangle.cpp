#include "tta/disentangle.hpp"

#include "tta/io.hpp"
#include "tta/parallel.hpp"
#include "tta/rng.hpp"

#include <random>

namespace tta {

PairLogits pair_logits(const Model& base, Method method, const TaskVector& tau1, const TaskVector& tau2,
                       const Tensor& x)
{
    tau1.params().require_same_layout(tau2.params(), "pair_logits");
    base.params.require_same_layout(tau1.params(), "pair_logits");
    if (method == Method::nonlinear) {
        return [base, tau1, tau2, x](double a1, double a2) {
            const double alphas[] = {a1, a2};
            const TaskVector taus[] = {tau1, tau2};
            return logits(base.with_params(apply(base.params, combine(taus, alphas))), x);
        };
    }
    auto r1 = ad::forward_jvp(base.net, base.params, tau1.params(), x);
    auto r2 = ad::forward_jvp(base.net, base.params, tau2.params(), x);
    return [f0 = std::move(r1.primal), s1 = std::move(r1.tangent), s2 = std::move(r2.tangent)](double a1, double a2) {
        Tensor out = f0;
        auto o = out.data();
        const auto p = s1.data();
        const auto q = s2.data();
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] += a1 * p[i] + a2 * q[i];
        }
        return out;
    };
}

double mean_distance(const Tensor& a, const Tensor& b, Distance dist)
{
    if (a.shape() != b.shape() || a.rank() != 2) {
        throw LayoutError("mean_distance needs two equal (n, c) blocks");
    }
    const std::size_t n = a.rows();
    const std::size_t c = a.cols();
    double s = 0.0;
    if (dist == Distance::prediction_error) {
        const auto pa = predict_rows(a);
        const auto pb = predict_rows(b);
        for (std::size_t i = 0; i < n; ++i) {
            s += pa[i] != pb[i] ? 1.0 : 0.0;
        }
    } else {
        for (std::size_t i = 0; i < n * c; ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
    }
    return s / static_cast<double>(n);
}

double disentanglement_error(const PairLogits& on_task1, const PairLogits& on_task2, double a1, double a2,
                             Distance dist)
{
    return mean_distance(on_task1(a1, 0.0), on_task1(a1, a2), dist) +
           mean_distance(on_task2(0.0, a2), on_task2(a1, a2), dist);
}

Tensor disentangle_samples(const TaskSpec& spec, std::size_t n, std::uint64_t seed)
{
    if (n == 0) {
        throw ContractError("disentanglement needs at least one sample per task");
    }
    std::mt19937_64 rng(derive_seed(seed, {6, spec.index}));
    return spec.sample(n, rng);
}

std::vector<double> GridSpec::values() const
{
    validate();
    std::vector<double> v(points);
    for (std::size_t i = 0; i < points; ++i) {
        v[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return v;
}

void GridSpec::validate() const
{
    if (points == 0) {
        throw ConfigError("xi_grid.points: must be >= 1");
    }
    if (!(hi >= lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw ConfigError("xi_grid: need finite lo <= hi");
    }
}

DisentanglementGrid grid_scan(const PairLogits& on_task1, const PairLogits& on_task2, const GridSpec& spec,
                              Distance dist, std::size_t threads)
{
    DisentanglementGrid g;
    g.alpha1_values = spec.values();
    g.alpha2_values = spec.values();
    const std::size_t n1 = g.alpha1_values.size();
    const std::size_t n2 = g.alpha2_values.size();

    // Single-vector comparands depend on one axis only.
    std::vector<Tensor> single1(n1);
    std::vector<Tensor> single2(n2);
    parallel_for(n1, threads, [&](std::size_t i) { single1[i] = on_task1(g.alpha1_values[i], 0.0); });
    parallel_for(n2, threads, [&](std::size_t j) { single2[j] = on_task2(0.0, g.alpha2_values[j]); });
    g.sample_size = single1.empty() ? 0 : single1.front().rows();

    g.xi.assign(n1 * n2, 0.0);
    parallel_for(n1 * n2, threads, [&](std::size_t k) {
        const std::size_t i = k / n2;
        const std::size_t j = k % n2;
        const double a1 = g.alpha1_values[i];
        const double a2 = g.alpha2_values[j];
        g.xi[k] = mean_distance(single1[i], on_task1(a1, a2), dist) + mean_distance(single2[j], on_task2(a1, a2), dist);
    });
    return g;
}

double area_fraction(const DisentanglementGrid& grid, double threshold)
{
    if (grid.xi.empty()) {
        throw ContractError("area_fraction of an empty grid");
    }
    std::size_t hits = 0;
    for (double v : grid.xi) {
        hits += v < threshold ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(grid.xi.size());
}

std::string grid_csv(const DisentanglementGrid& grid)
{
    std::string out = "alpha1,alpha2,xi\n";
    for (std::size_t i = 0; i < grid.alpha1_values.size(); ++i) {
        for (std::size_t j = 0; j < grid.alpha2_values.size(); ++j) {
            out += io::csv_line({io::format_g17(grid.alpha1_values[i]), io::format_g17(grid.alpha2_values[j]),
                                 io::format_g17(grid.at(i, j))});
        }
    }
    return out;
}

}  // namespace tta
