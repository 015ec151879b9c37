#include "tta/bench.hpp"

#include "tta/parallel.hpp"

#include <numeric>
#include <optional>

namespace tta {

std::string to_string(Method m)
{
    switch (m) {
        case Method::nonlinear:
            return "nonlinear";
        case Method::posthoc:
            return "posthoc";
        case Method::linearized:
            return "linearized";
    }
    return "nonlinear";
}

Method method_from_string(const std::string& s)
{
    if (s == "nonlinear") {
        return Method::nonlinear;
    }
    if (s == "posthoc") {
        return Method::posthoc;
    }
    if (s == "linearized") {
        return Method::linearized;
    }
    throw ConfigError("unknown method '" + s + "' (expected nonlinear, posthoc or linearized)");
}

double normalized_addition_accuracy(std::span<const double> multi_acc, std::span<const double> single_acc)
{
    if (multi_acc.size() != single_acc.size() || multi_acc.empty()) {
        throw ContractError("normalized accuracy needs two non-empty lists of equal length");
    }
    double s = 0.0;
    for (std::size_t t = 0; t < multi_acc.size(); ++t) {
        if (!(single_acc[t] > 0.0)) {
            throw ContractError("normalized accuracy undefined: single-task accuracy of task " + std::to_string(t) +
                                " is zero");
        }
        s += multi_acc[t] / single_acc[t];
    }
    return s / static_cast<double>(multi_acc.size());
}

double accuracy_of_logits(const Tensor& logits, std::span<const int> labels)
{
    if (labels.empty()) {
        throw ContractError("accuracy of an empty dataset");
    }
    const auto pred = predict_rows(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += pred[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EditCurve::EditCurve(const Model& base, Method method, const TaskVector& tau, const Tensor& x)
    : base_(base), method_(method), tau_(tau), x_(x)
{
    base_.params.require_same_layout(tau_.params(), "edit");
    if (method_ != Method::nonlinear) {
        auto r = ad::forward_jvp(base_.net, base_.params, tau_.params(), x_);
        f0_ = std::move(r.primal);
        slope_ = std::move(r.tangent);
    }
}

Tensor EditCurve::operator()(double alpha) const
{
    if (method_ == Method::nonlinear) {
        return logits(base_.with_params(apply(base_.params, scale(tau_, alpha))), x_);
    }
    Tensor out = slope_;
    out *= alpha;
    out += f0_;
    return out;
}

namespace {

void check_method(Method method, const TaskVector& tau)
{
    const bool lin = tau.origin() == Origin::linearized;
    if ((method == Method::linearized) != lin) {
        throw ContractError("method " + to_string(method) + " cannot use " + to_string(tau.origin()) +
                            " task vectors");
    }
}

}  // namespace

AdditionResult task_addition(const Model& base, std::span<const TaskVector> taus, const Suite& suite,
                             std::span<const double> grid, Method method, std::size_t threads)
{
    const std::size_t T = taus.size();
    if (T == 0 || T > suite.size()) {
        throw ContractError("task_addition: need between 1 and " + std::to_string(suite.size()) +
                            " task vectors, got " + std::to_string(T));
    }
    for (const auto& tau : taus) {
        check_method(method, tau);
    }
    const std::vector<double> ones(T, 1.0);
    const TaskVector sum = combine(taus, ones);

    std::vector<EditCurve> held_multi;
    std::vector<EditCurve> test_multi;
    std::vector<double> single_held(T);
    AdditionResult res;
    res.method = method;
    res.single_acc.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto& d = suite.data[t];
        held_multi.emplace_back(base, method, sum, d.heldout.inputs);
        test_multi.emplace_back(base, method, sum, d.test.inputs);
        single_held[t] = accuracy_of_logits(EditCurve(base, method, taus[t], d.heldout.inputs)(1.0), d.heldout.labels);
        res.single_acc[t] = accuracy_of_logits(EditCurve(base, method, taus[t], d.test.inputs)(1.0), d.test.labels);
    }

    const auto objective = [&](double alpha) {
        std::vector<double> multi(T);
        for (std::size_t t = 0; t < T; ++t) {
            multi[t] = accuracy_of_logits(held_multi[t](alpha), suite.data[t].heldout.labels);
        }
        return normalized_addition_accuracy(multi, single_held);
    };
    const auto best = alpha_search(objective, grid, SearchMode::maximize, {}, threads);
    res.alpha = best.alpha;
    res.heldout_normalized = best.score;
    res.multi_acc.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        res.multi_acc[t] = accuracy_of_logits(test_multi[t](res.alpha), suite.data[t].test.labels);
    }
    res.normalized = normalized_addition_accuracy(res.multi_acc, res.single_acc);
    res.absolute = std::accumulate(res.multi_acc.begin(), res.multi_acc.end(), 0.0) / static_cast<double>(T);
    return res;
}

NegationResult task_negation(const Model& base, const TaskVector& tau_target, std::size_t target,
                             std::size_t control, const Suite& suite, std::span<const double> grid, Method method,
                             std::size_t threads)
{
    if (target >= suite.size() || control >= suite.size()) {
        throw ContractError("task_negation: task index out of range");
    }
    if (target == control) {
        throw ContractError("task_negation: control task must differ from the target task");
    }
    check_method(method, tau_target);
    const TaskVector neg = negate(tau_target);
    const auto& td = suite.data[target];
    const auto& cd = suite.data[control];
    const EditCurve target_held(base, method, neg, td.heldout.inputs);
    const EditCurve control_held(base, method, neg, cd.heldout.inputs);
    const EditCurve target_test(base, method, neg, td.test.inputs);
    const EditCurve control_test(base, method, neg, cd.test.inputs);

    NegationResult res;
    res.method = method;
    res.target = target;
    res.control = control;
    res.heldout_pretrained_control_acc = accuracy_of_logits(control_held(0.0), cd.heldout.labels);
    const double threshold = negation_threshold(res.heldout_pretrained_control_acc);

    const auto objective = [&](double alpha) { return accuracy_of_logits(target_held(alpha), td.heldout.labels); };
    const auto constraint = [&](double alpha) {
        return accuracy_of_logits(control_held(alpha), cd.heldout.labels) >= threshold;
    };
    const auto best = alpha_search(objective, grid, SearchMode::constrained_minimize, constraint, threads);
    res.alpha = best.alpha;
    res.feasible = best.feasible;
    res.heldout_target_acc = best.score;
    res.heldout_control_acc = accuracy_of_logits(control_held(res.alpha), cd.heldout.labels);
    res.target_acc = accuracy_of_logits(target_test(res.alpha), td.test.labels);
    res.control_acc = accuracy_of_logits(control_test(res.alpha), cd.test.labels);
    res.pretrained_target_acc = accuracy_of_logits(target_test(0.0), td.test.labels);
    res.pretrained_control_acc = accuracy_of_logits(control_test(0.0), cd.test.labels);
    return res;
}

std::vector<TaskVector> finetune_suite(const Model& base, const Suite& suite, const TrainConfig& cfg, Method method,
                                       std::size_t threads)
{
    std::vector<std::optional<TaskVector>> out(suite.size());
    parallel_for(suite.size(), threads, [&](std::size_t t) {
        const auto data = TrainSet::classification(suite.data[t].train);
        if (method == Method::linearized) {
            out[t] = finetune_linearized(base, data, cfg, t);
        } else {
            out[t] = finetune_nonlinear(base, data, cfg, t).tau;
        }
    });
    std::vector<TaskVector> taus;
    for (auto& t : out) {
        taus.push_back(std::move(*t));
    }
    return taus;
}

RandomInitControl random_init_control(const Network& net, const Suite& suite, const TrainConfig& cfg,
                                      std::uint64_t seed, std::span<const double> grid, std::size_t threads)
{
    const Model base(net, random_init(net.spec(), seed));
    const auto nl = finetune_suite(base, suite, cfg, Method::nonlinear, threads);
    const auto lin = finetune_suite(base, suite, cfg, Method::linearized, threads);
    return {task_addition(base, nl, suite, grid, Method::nonlinear, threads),
            task_addition(base, lin, suite, grid, Method::linearized, threads)};
}

}  // namespace tta
