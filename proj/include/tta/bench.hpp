#pragma once

#include "tta/linearize.hpp"
#include "tta/tasks.hpp"
#include "tta/taskvec.hpp"
#include "tta/training.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tta {

// How an edited parameter vector theta0 + tau is turned into a predictor.
// posthoc and linearized both use f_lin; they differ in how tau was trained.
enum class Method { nonlinear, posthoc, linearized };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

// (1/T) sum_t multi_acc[t] / single_acc[t].
double normalized_addition_accuracy(std::span<const double> multi_acc, std::span<const double> single_acc);

// Fraction of rows whose argmax equals the label.
double accuracy_of_logits(const Tensor& logits, std::span<const int> labels);

// Logits of theta0 + alpha * tau on a fixed input batch as a function of alpha.
// For the linearized methods the curve is affine and costs one JVP up front.
class EditCurve {
public:
    EditCurve(const Model& base, Method method, const TaskVector& tau, const Tensor& x);
    Tensor operator()(double alpha) const;

private:
    Model base_;
    Method method_;
    TaskVector tau_;
    Tensor x_;
    Tensor f0_;
    Tensor slope_;
};

struct AdditionResult {
    Method method = Method::nonlinear;
    double alpha = 0.0;
    double heldout_normalized = 0.0;
    std::vector<double> single_acc;  // test accuracy of theta0 + tau_t
    std::vector<double> multi_acc;   // test accuracy of theta0 + alpha sum_t tau_t
    double normalized = 0.0;
    double absolute = 0.0;           // mean of multi_acc

    friend bool operator==(const AdditionResult&, const AdditionResult&) = default;
};

// Picks alpha on held-out splits by normalized accuracy, reports test metrics.
AdditionResult task_addition(const Model& base, std::span<const TaskVector> taus, const Suite& suite,
                             std::span<const double> grid, Method method, std::size_t threads = 1);

// Minimum control accuracy a feasible negation may keep.
inline double negation_threshold(double pretrained_control_acc) { return 0.95 * pretrained_control_acc; }

struct NegationResult {
    Method method = Method::nonlinear;
    std::size_t target = 0;
    std::size_t control = 0;
    double alpha = 0.0;
    bool feasible = true;
    double target_acc = 0.0;               // test
    double control_acc = 0.0;              // test
    double pretrained_target_acc = 0.0;    // test, alpha = 0
    double pretrained_control_acc = 0.0;   // test, alpha = 0
    double heldout_target_acc = 0.0;
    double heldout_control_acc = 0.0;
    double heldout_pretrained_control_acc = 0.0;

    friend bool operator==(const NegationResult&, const NegationResult&) = default;
};

// theta0 - alpha tau_target: minimizes held-out target accuracy subject to
// held-out control accuracy >= 0.95 x its value at alpha = 0.
NegationResult task_negation(const Model& base, const TaskVector& tau_target, std::size_t target,
                             std::size_t control, const Suite& suite, std::span<const double> grid, Method method,
                             std::size_t threads = 1);

// Fine-tunes every task of the suite from `base` and returns the task vectors.
// nonlinear and posthoc share non-linear vectors; linearized trains in the tangent space.
std::vector<TaskVector> finetune_suite(const Model& base, const Suite& suite, const TrainConfig& cfg, Method method,
                                       std::size_t threads = 1);

struct RandomInitControl {
    AdditionResult nonlinear;
    AdditionResult linearized;

    friend bool operator==(const RandomInitControl&, const RandomInitControl&) = default;
};

// Task addition from random_init(spec, seed) instead of a pretrained theta0.
RandomInitControl random_init_control(const Network& net, const Suite& suite, const TrainConfig& cfg,
                                      std::uint64_t seed, std::span<const double> grid, std::size_t threads = 1);

}  // namespace tta
