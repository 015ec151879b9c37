#include "tta/taskvec.hpp"

#include "tta/error.hpp"
#include "tta/parallel.hpp"

#include <cmath>
#include <exception>
#include <optional>

namespace tta {

std::string to_string(Origin o)
{
    switch (o) {
        case Origin::nonlinear:
            return "nonlinear";
        case Origin::linearized:
            return "linearized";
        case Origin::random:
            return "random";
    }
    return "nonlinear";
}

Origin origin_from_string(const std::string& s)
{
    if (s == "nonlinear") {
        return Origin::nonlinear;
    }
    if (s == "linearized") {
        return Origin::linearized;
    }
    if (s == "random") {
        return Origin::random;
    }
    throw ConfigError("unknown task vector origin '" + s + "'");
}

TaskVector::TaskVector(ParamVector values, Origin origin) : values_(std::move(values)), origin_(origin)
{
    if (!values_.layout_ptr()) {
        throw LayoutError("task vector needs a layout");
    }
}

TaskVector TaskVector::zeros(std::shared_ptr<const ParamLayout> layout, Origin origin)
{
    return TaskVector(ParamVector::zeros(std::move(layout)), origin);
}

TaskVector make_task_vector(const ParamVector& theta_star, const ParamVector& theta0, Origin origin)
{
    theta_star.require_same_layout(theta0, "make_task_vector");
    std::vector<double> v(theta_star.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = theta_star[i] - theta0[i];
    }
    return TaskVector(ParamVector(theta0.layout_ptr(), std::move(v)), origin);
}

TaskVector combine(std::span<const TaskVector> taus, std::span<const double> alphas)
{
    if (taus.empty()) {
        throw ContractError("combine needs at least one task vector");
    }
    if (taus.size() != alphas.size()) {
        throw ContractError("combine: " + std::to_string(taus.size()) + " task vectors but " +
                            std::to_string(alphas.size()) + " coefficients");
    }
    for (const auto& t : taus) {
        taus.front().params().require_same_layout(t.params(), "combine");
        if (t.origin() != taus.front().origin()) {
            throw ContractError("combine: cannot mix " + to_string(taus.front().origin()) + " and " +
                                to_string(t.origin()) + " task vectors");
        }
    }
    std::vector<double> out(taus.front().size(), 0.0);
    for (std::size_t t = 0; t < taus.size(); ++t) {
        const auto v = taus[t].values();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += alphas[t] * v[i];
        }
    }
    return TaskVector(ParamVector(taus.front().layout_ptr(), std::move(out)), taus.front().origin());
}

TaskVector scale(const TaskVector& tau, double alpha)
{
    std::vector<double> out(tau.values().begin(), tau.values().end());
    for (auto& v : out) {
        v *= alpha;
    }
    return TaskVector(ParamVector(tau.layout_ptr(), std::move(out)), tau.origin());
}

TaskVector negate(const TaskVector& tau)
{
    std::vector<double> out(tau.values().begin(), tau.values().end());
    for (auto& v : out) {
        v = -v;
    }
    return TaskVector(ParamVector(tau.layout_ptr(), std::move(out)), tau.origin());
}

ParamVector apply(const ParamVector& theta0, const TaskVector& tau)
{
    theta0.require_same_layout(tau.params(), "apply");
    std::vector<double> out(theta0.values().begin(), theta0.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += tau[i];
    }
    return ParamVector(theta0.layout_ptr(), std::move(out));
}

std::vector<double> default_alpha_grid()
{
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) {
        g.push_back(i / 20.0);
    }
    return g;
}

void MixingConfig::validate() const
{
    if (search_grid.empty()) {
        throw ConfigError("mixing.search_grid: must not be empty");
    }
    for (std::size_t i = 0; i < search_grid.size(); ++i) {
        if (!std::isfinite(search_grid[i])) {
            throw ConfigError("mixing.search_grid[" + std::to_string(i) + "]: must be finite");
        }
        if (i > 0 && !(search_grid[i] > search_grid[i - 1])) {
            throw ConfigError("mixing.search_grid[" + std::to_string(i) + "]: values must be strictly increasing");
        }
    }
}

AlphaEvaluationError::AlphaEvaluationError(double alpha, const std::string& what)
    : std::runtime_error("evaluation failed at alpha=" + std::to_string(alpha) + ": " + what), alpha_(alpha)
{
}

namespace {

double evaluate_at(const AlphaScore& evaluate, double alpha)
{
    try {
        return evaluate(alpha);
    } catch (const std::exception& e) {
        std::throw_with_nested(AlphaEvaluationError(alpha, e.what()));
    }
}

}  // namespace

SearchResult alpha_search(const AlphaScore& evaluate, std::span<const double> grid, SearchMode mode,
                          const AlphaConstraint& constraint, std::size_t threads)
{
    MixingConfig check;
    check.search_grid.assign(grid.begin(), grid.end());
    try {
        check.validate();
    } catch (const ConfigError& e) {
        throw ContractError(std::string("alpha_search: ") + e.what());
    }

    std::vector<double> scores(grid.size());
    std::vector<char> ok(grid.size(), 1);
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        scores[i] = evaluate_at(evaluate, grid[i]);
        if (constraint) {
            try {
                ok[i] = constraint(grid[i]) ? 1 : 0;
            } catch (const std::exception& e) {
                std::throw_with_nested(AlphaEvaluationError(grid[i], e.what()));
            }
        }
    });

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!ok[i]) {
            continue;
        }
        if (!best || (mode == SearchMode::maximize ? scores[i] > scores[*best] : scores[i] < scores[*best])) {
            best = i;
        }
    }
    // Under a constraint, alpha = 0 is the do-nothing fallback and does not
    // by itself make the search feasible.
    bool any_edit = !constraint;
    for (std::size_t i = 0; i < grid.size() && !any_edit; ++i) {
        any_edit = ok[i] && grid[i] != 0.0;
    }
    if (best) {
        return {grid[*best], scores[*best], any_edit};
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] == 0.0) {
            return {0.0, scores[i], false};
        }
    }
    return {0.0, evaluate_at(evaluate, 0.0), false};
}

}  // namespace tta
