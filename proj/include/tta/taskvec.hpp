#pragma once

#include "tta/autodiff/params.hpp"

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tta {

enum class Origin { nonlinear, linearized, random };

std::string to_string(Origin o);
Origin origin_from_string(const std::string& s);

// tau = theta* - theta0, tagged with how theta* was obtained.
class TaskVector {
public:
    TaskVector(ParamVector values, Origin origin);

    static TaskVector zeros(std::shared_ptr<const ParamLayout> layout, Origin origin);

    const ParamVector& params() const noexcept { return values_; }
    const ParamLayout& layout() const { return values_.layout(); }
    const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return values_.layout_ptr(); }
    std::span<const double> values() const noexcept { return values_.values(); }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    Origin origin() const noexcept { return origin_; }

    friend bool operator==(const TaskVector&, const TaskVector&) = default;

private:
    ParamVector values_;
    Origin origin_;
};

TaskVector make_task_vector(const ParamVector& theta_star, const ParamVector& theta0,
                            Origin origin = Origin::nonlinear);

// sum_t alphas[t] * taus[t]. All taus must share layout and origin.
TaskVector combine(std::span<const TaskVector> taus, std::span<const double> alphas);
TaskVector scale(const TaskVector& tau, double alpha);
TaskVector negate(const TaskVector& tau);
// theta0 + tau.
ParamVector apply(const ParamVector& theta0, const TaskVector& tau);

// {0, 0.05, ..., 1}.
std::vector<double> default_alpha_grid();

struct MixingConfig {
    std::vector<double> alphas;
    std::vector<double> search_grid = default_alpha_grid();

    // Throws ConfigError unless search_grid is non-empty and strictly increasing.
    void validate() const;
};

enum class SearchMode { maximize, constrained_minimize };

struct SearchResult {
    double alpha = 0.0;
    double score = 0.0;
    bool feasible = true;
};

// Raised when the evaluator fails; the original error is nested.
class AlphaEvaluationError : public std::runtime_error {
public:
    AlphaEvaluationError(double alpha, const std::string& what);
    double alpha() const noexcept { return alpha_; }

private:
    double alpha_;
};

using AlphaScore = std::function<double(double alpha)>;
using AlphaConstraint = std::function<bool(double alpha)>;

// Best feasible alpha on the grid, ties toward the smallest alpha. With a
// constraint, feasible is set only when some non-zero alpha satisfies it;
// otherwise the result is alpha 0 with feasible = false. Grid points are
// evaluated on up to `threads` workers; the result does not depend on order.
SearchResult alpha_search(const AlphaScore& evaluate, std::span<const double> grid, SearchMode mode,
                          const AlphaConstraint& constraint = {}, std::size_t threads = 1);

}  // namespace tta
