#pragma once

#include "tta/linearize.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tta {

inline constexpr std::size_t max_gram_columns = 1024;

// Per-class kernel blocks K_j[i][k] = <grad f_j(rows_i), grad f_j(cols_k)>,
// one matrix per entry of `classes`.
std::vector<Eigen::MatrixXd> gram_matrix(const Model& base, const Tensor& rows, const Tensor& cols,
                                         std::span<const std::size_t> classes, std::size_t threads = 1);

// Smallest eigenvalue of a symmetric block divided by its trace.
double min_eigenvalue_over_trace(const Eigen::MatrixXd& square);
// min eigenvalue >= -rel_tol * trace.
bool gram_is_psd(const Eigen::MatrixXd& square, double rel_tol = 1e-8);

// Sampled eigenfunctions: column r of phi holds phi_r on the Gram's columns.
struct EigenBasis {
    Eigen::MatrixXd phi;
    Eigen::VectorXd lambdas;  // descending
    std::size_t class_index = 0;
};

// Thin SVD. Each right singular vector is signed so that its largest-magnitude
// entry (first on ties) is positive.
EigenBasis eigenbasis(const Eigen::MatrixXd& gram, std::size_t class_index = 0);

enum class Partition { train, control };
std::string to_string(Partition p);

struct LocalEnergyOptions {
    // Only the leading components; all when empty.
    std::optional<std::size_t> top_k;
    // Weight phi_r^2 by lambda_r^2 / lambda_max^2.
    bool lambda_weighted = false;
};

struct SpectralReport {
    std::size_t class_index = 0;
    std::vector<double> local_energy;
    std::vector<Partition> partition;
    double train_mean = 0.0;
    double control_mean = 0.0;
    // train_mean / control_mean; +inf with `ratio_flagged` when control_mean is 0.
    double concentration_ratio = 0.0;
    bool ratio_flagged = false;
};

// E_loc(x_j) = sum_r phi_r(x_j)^2.
SpectralReport local_energy(const EigenBasis& basis, std::span<const Partition> partition,
                            const LocalEnergyOptions& opts = {});

// Header "point_index,partition,class,local_energy".
std::string local_energy_csv(std::span<const SpectralReport> reports);

// Functions sampled on a quadrature grid: values(i, r) = phi_r(x_i).
struct SampledBasis {
    Eigen::MatrixXd values;
    Eigen::VectorXd weights;
    // Domain each function lives in, or -1 for global functions.
    std::vector<int> owner;
};

// n equispaced angles on the ring with two task arcs, [0, pi/2) and [pi, 3pi/2).
struct RingGrid {
    std::vector<double> theta;
    Eigen::VectorXd weights;
    std::vector<std::vector<bool>> masks;
};
RingGrid make_ring_grid(std::size_t n_points);

// `per_domain` sine modes on each domain, zero elsewhere, orthonormalized
// within the domain under the grid weights.
SampledBasis make_bump_basis(std::span<const std::vector<bool>> masks, const Eigen::VectorXd& weights,
                             std::size_t per_domain);

// 1/sqrt(2 pi), cos(k t)/sqrt(pi), sin(k t)/sqrt(pi) for k = 1..n_freqs.
SampledBasis make_fourier_ring_basis(std::size_t n_points, std::size_t n_freqs);

// Gram of the basis restricted to one domain, under the grid weights.
Eigen::MatrixXd restricted_gram(const SampledBasis& basis, const std::vector<bool>& mask);
double min_singular_value(const Eigen::MatrixXd& m);
// sigma_min / sigma_max of diag(sqrt(w)) Phi restricted to the domain. The Gram
// squares this, so a Gram eigenvalue can sit at round-off while this does not.
double local_independence_margin(const SampledBasis& basis, const std::vector<bool>& mask);

// Task t's function is sum_r coeffs[t][r] phi_r.
using TaskCoefficients = std::vector<Eigen::VectorXd>;

struct ResidualReport {
    // R_t' = sum_{x in D_t'} w(x) (sum_{t != t'} g_t(x))^2.
    std::vector<double> residuals;
    // R_t' over the full-grid energy of the interfering functions.
    std::vector<double> relative;
    double max_residual = 0.0;
    double max_relative = 0.0;
    // max residual <= 1e-10.
    bool holds = false;
};

ResidualReport proposition1_residual(const SampledBasis& basis, const TaskCoefficients& coeffs,
                                     std::span<const std::vector<bool>> masks);

// max over t' and x in D_t' of |sum_t g_t(x) - g_t'(x)|.
double pointwise_task_arithmetic_gap(const SampledBasis& basis, const TaskCoefficients& coeffs,
                                     std::span<const std::vector<bool>> masks);

}  // namespace tta
