#pragma once

#include "tta/models.hpp"
#include "tta/predictor.hpp"
#include "tta/taskvec.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace tta {

// f_lin(x; theta0 + tau) = f(x; theta0) + tau^T grad f(x; theta0).
class LinearizedModel {
public:
    LinearizedModel(Model base, TaskVector tau);

    const Model& base() const noexcept { return base_; }
    const TaskVector& tau() const noexcept { return tau_; }
    LinearizedModel with_tau(TaskVector tau) const { return LinearizedModel(base_, std::move(tau)); }

private:
    Model base_;
    TaskVector tau_;
};

Tensor linearized_forward(const LinearizedModel& lm, const Tensor& x);
// Wraps a task vector from ordinary fine-tuning; no training happens.
LinearizedModel posthoc_linearize(const Model& base, const TaskVector& tau_nonlinear);

inline Tensor predict_logits(const LinearizedModel& lm, const Tensor& x) { return linearized_forward(lm, x); }

// For each requested class j, the (n x P) matrix with rows d f_j(x_i) / d theta.
std::vector<Eigen::MatrixXd> class_jacobians(const Model& base, const Tensor& x, std::span<const std::size_t> classes,
                                             std::size_t threads = 1);
Eigen::MatrixXd class_jacobian(const Model& base, const Tensor& x, std::size_t j, std::size_t threads = 1);

// Per-class NTK <grad f_j(x), grad f_j(x')> for j = 0..c-1; x and x' are single examples.
Tensor ntk_kernel(const Model& base, const Tensor& x, const Tensor& xp);

// f(x) = f(x; theta0) + sum_nu beta_nu k(x_nu, x), one kernel per class.
struct KernelPredictor {
    Model base;
    Tensor support_points;
    // betas[j] has one entry per support point.
    std::vector<Eigen::VectorXd> betas;
    // J_j(support)^T betas[j], so the expansion is a JVP at theta0.
    std::vector<ParamVector> weights;
    std::vector<double> ridges;
};

// Relative ridge used when none is given: 1e-8 times the mean Gram diagonal.
inline constexpr double default_relative_ridge = 1e-8;

// Solves (K_j + ridge I) beta_j = targets_j - f_j(x; theta0) for every class.
// targets is (n x c). With ridge = 0 a singular K_j raises NumericError naming j.
KernelPredictor kernel_fit(const Model& base, const Tensor& x, const Tensor& targets,
                           std::optional<double> ridge = std::nullopt, std::size_t threads = 1);
Tensor kernel_predict(const KernelPredictor& kp, const Tensor& x);

inline Tensor predict_logits(const KernelPredictor& kp, const Tensor& x) { return kernel_predict(kp, x); }

}  // namespace tta
