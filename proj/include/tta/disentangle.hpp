#pragma once

#include "tta/bench.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace tta {

// Logits on a fixed sample batch at theta0 + a1 tau1 + a2 tau2.
using PairLogits = std::function<Tensor(double a1, double a2)>;

// Builds PairLogits for a model and method. Linearized methods reuse two JVPs.
PairLogits pair_logits(const Model& base, Method method, const TaskVector& tau1, const TaskVector& tau2,
                       const Tensor& x);

enum class Distance { prediction_error, squared };

// Mean over rows of dist(a_row, b_row).
double mean_distance(const Tensor& a, const Tensor& b, Distance dist);

// xi = E_{mu1}[dist(f(a1 tau1), f(a1 tau1 + a2 tau2))] + E_{mu2}[dist(f(a2 tau2), f(a1 tau1 + a2 tau2))].
double disentanglement_error(const PairLogits& on_task1, const PairLogits& on_task2, double a1, double a2,
                             Distance dist = Distance::prediction_error);

// Seeded draws from a task's input distribution, independent of the suite splits.
Tensor disentangle_samples(const TaskSpec& spec, std::size_t n, std::uint64_t seed);

struct GridSpec {
    double lo = -3.0;
    double hi = 3.0;
    std::size_t points = 20;

    // Equispaced, both ends included.
    std::vector<double> values() const;
    void validate() const;
};

struct DisentanglementGrid {
    std::vector<double> alpha1_values;
    std::vector<double> alpha2_values;
    // Row-major: xi[i * alpha2_values.size() + j] is at (alpha1_values[i], alpha2_values[j]).
    std::vector<double> xi;
    std::size_t sample_size = 0;
    std::pair<std::size_t, std::size_t> task_pair{0, 1};
    std::string method;

    double at(std::size_t i, std::size_t j) const { return xi[i * alpha2_values.size() + j]; }
    friend bool operator==(const DisentanglementGrid&, const DisentanglementGrid&) = default;
};

// Every cell reuses the same two sample sets. Cells run on up to `threads` workers.
DisentanglementGrid grid_scan(const PairLogits& on_task1, const PairLogits& on_task2, const GridSpec& spec,
                              Distance dist = Distance::prediction_error, std::size_t threads = 1);

// Fraction of cells with xi < threshold.
double area_fraction(const DisentanglementGrid& grid, double threshold = 0.05);

// Header "alpha1,alpha2,xi", one row per cell in row-major order.
std::string grid_csv(const DisentanglementGrid& grid);

}  // namespace tta
