#include "tta/training.hpp"

#include "tta/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace tta {

std::string to_string(Loss l) { return l == Loss::mse ? "mse" : "cross_entropy"; }
std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adamw"; }
std::string to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

Loss loss_from_string(const std::string& s)
{
    if (s == "cross_entropy") {
        return Loss::cross_entropy;
    }
    if (s == "mse") {
        return Loss::mse;
    }
    throw ConfigError("unknown loss '" + s + "' (expected cross_entropy or mse)");
}

OptimizerKind optimizer_from_string(const std::string& s)
{
    if (s == "adamw") {
        return OptimizerKind::adamw;
    }
    if (s == "sgd") {
        return OptimizerKind::sgd;
    }
    throw ConfigError("unknown optimizer '" + s + "' (expected adamw or sgd)");
}

Schedule schedule_from_string(const std::string& s)
{
    if (s == "cosine") {
        return Schedule::cosine;
    }
    if (s == "constant") {
        return Schedule::constant;
    }
    throw ConfigError("unknown schedule '" + s + "' (expected cosine or constant)");
}

void TrainConfig::validate() const
{
    if (iterations > 0 && warmup_steps >= iterations) {
        throw ConfigError("train.warmup_steps: must be < iterations");
    }
    if (batch_size < 1) {
        throw ConfigError("train.batch_size: must be >= 1");
    }
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ConfigError("train.lr: must be finite and >= 0");
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw ConfigError("train.weight_decay: must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) {
        throw ConfigError("train.beta1: must lie in [0, 1)");
    }
    if (!(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train.beta2: must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("train.eps: must be > 0");
    }
}

double lr_schedule(std::size_t step, const TrainConfig& cfg)
{
    if (step >= cfg.iterations) {
        throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(cfg.iterations) + ")");
    }
    if (step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    if (cfg.schedule == Schedule::constant) {
        return cfg.lr;
    }
    const double x =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.iterations - cfg.warmup_steps);
    return cfg.lr * (1.0 + std::cos(std::numbers::pi * x)) / 2.0;
}

OptimizerState::OptimizerState(const std::shared_ptr<const ParamLayout>& layout)
    : first_moment(ParamVector::zeros(layout)), second_moment(ParamVector::zeros(layout))
{
}

void optimizer_step(ParamVector& params, const ParamVector& grad, OptimizerState& state, double lr,
                    const TrainConfig& cfg)
{
    params.require_same_layout(grad, "optimizer step");
    params.require_same_layout(state.first_moment, "optimizer state");
    ++state.step;
    auto p = params.mutable_values();
    const auto g = grad.values();
    const double decay = 1.0 - lr * cfg.weight_decay;
    if (cfg.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = decay * p[i] - lr * g[i];
        }
        return;
    }
    auto m = state.first_moment.mutable_values();
    auto v = state.second_moment.mutable_values();
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] = decay * p[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
    for (double x : p) {
        if (!std::isfinite(x)) {
            throw NumericError("optimizer step produced non-finite parameters (divergence)");
        }
    }
}

TrainSet TrainSet::classification(const Dataset& ds)
{
    if (ds.empty()) {
        throw ContractError("training set is empty");
    }
    return {ds.inputs, ds.labels, {}, ds.label_groups};
}

TrainSet TrainSet::regression(Tensor inputs, Tensor targets)
{
    if (inputs.rank() != 2 || targets.rank() != 2 || inputs.rows() != targets.rows() || inputs.rows() == 0) {
        throw LayoutError("regression set needs (n, d) inputs and (n, c) targets");
    }
    return {std::move(inputs), {}, std::move(targets), {}};
}

LossEval loss_and_cotangent(const Tensor& logits, const TrainSet& data, std::span<const std::size_t> rows,
                            Loss loss)
{
    const std::size_t n = rows.size();
    const std::size_t c = logits.cols();
    LossEval out{0.0, Tensor(logits.shape())};
    const double inv_n = 1.0 / static_cast<double>(n);
    if (loss == Loss::cross_entropy) {
        if (data.labels.empty()) {
            throw ContractError("cross-entropy needs class labels");
        }
        std::vector<char> in_group(c);
        for (std::size_t r = 0; r < n; ++r) {
            const auto z = logits.data().subspan(r * c, c);
            const double mx = *std::max_element(z.begin(), z.end());
            const auto y = data.labels[rows[r]];
            std::fill(in_group.begin(), in_group.end(), 0);
            if (data.label_groups.empty()) {
                if (y < 0 || static_cast<std::size_t>(y) >= c) {
                    throw LayoutError("label " + std::to_string(y) + " out of range for " + std::to_string(c) +
                                      " classes");
                }
                in_group[static_cast<std::size_t>(y)] = 1;
            } else {
                for (int j : data.label_groups.at(static_cast<std::size_t>(y))) {
                    in_group.at(static_cast<std::size_t>(j)) = 1;
                }
            }
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                s += std::exp(z[j] - mx);
            }
            // Cross-entropy against the uniform distribution over the group.
            const double k = static_cast<double>(std::count(in_group.begin(), in_group.end(), 1));
            const double log_s = std::log(s) + mx;
            for (std::size_t j = 0; j < c; ++j) {
                const double target = in_group[j] ? 1.0 / k : 0.0;
                out.value += target * (log_s - z[j]) * inv_n;
                out.cotangent.at(r, j) = (std::exp(z[j] - mx) / s - target) * inv_n;
            }
        }
    } else {
        if (data.targets.empty() || data.targets.cols() != c) {
            throw ContractError("mse needs targets with one column per output");
        }
        const double inv = 1.0 / static_cast<double>(n * c);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < c; ++j) {
                const double d = logits.at(r, j) - data.targets.at(rows[r], j);
                out.value += d * d * inv;
                out.cotangent.at(r, j) = 2.0 * d * inv;
            }
        }
    }
    if (!std::isfinite(out.value)) {
        throw NumericError("training loss is not finite (divergence)");
    }
    return out;
}

namespace {

// Seeded epoch-wise shuffling; a batch at least as large as the data is the
// whole set in its original order.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(std::min(batch, n)), rng_(seed)
    {
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), 0);
        pos_ = n_;
    }

    std::span<const std::size_t> next()
    {
        if (batch_ == n_) {
            return order_;
        }
        if (pos_ + batch_ > n_) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        auto out = std::span<const std::size_t>(order_).subspan(pos_, batch_);
        pos_ += batch_;
        return out;
    }

private:
    std::size_t n_;
    std::size_t batch_;
    std::size_t pos_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
};

void check_data(const Model& base, const TrainSet& data, const TrainConfig& cfg)
{
    cfg.validate();
    if (data.size() == 0) {
        throw ContractError("training set is empty");
    }
    if (data.inputs.cols() != base.spec().input_dim) {
        throw LayoutError("training inputs have width " + std::to_string(data.inputs.cols()) + ", model expects " +
                          std::to_string(base.spec().input_dim));
    }
}

ParamVector train_nonlinear(const Model& base, const TrainSet& data, const TrainConfig& cfg, std::uint64_t stream,
                            TrainLog* log)
{
    check_data(base, data, cfg);
    ParamVector theta = base.params;
    OptimizerState state(theta.layout_ptr());
    BatchSampler sampler(data.size(), cfg.batch_size, derive_seed(cfg.seed, {stream}));
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        const auto rows = sampler.next();
        const Tensor x = data.inputs.gather_rows(rows);
        ad::Tape tape(theta);
        const auto z = base.net(tape, x);
        const auto le = loss_and_cotangent(tape.value(z), data, rows, cfg.loss);
        const auto grad = tape.backward(z, le.cotangent);
        optimizer_step(theta, grad, state, lr_schedule(step, cfg), cfg);
        if (log) {
            log->losses.push_back(le.value);
        }
    }
    return theta;
}

}  // namespace

ParamVector pretrain(const Network& net, const Dataset& corpus, const TrainConfig& cfg, std::uint64_t init_seed,
                     TrainLog* log)
{
    Model m(net, random_init(net.spec(), init_seed));
    return train_nonlinear(m, TrainSet::classification(corpus), cfg, 0, log);
}

ParamVector init_params(const Network& net, std::uint64_t seed, InitMode mode, const SurrogateSetup* setup)
{
    if (mode == InitMode::random) {
        return random_init(net.spec(), seed);
    }
    if (!setup) {
        throw ContractError("pretrained_surrogate init needs a corpus and a training config");
    }
    return pretrain(net, setup->corpus, setup->cfg, seed);
}

FinetuneResult finetune_nonlinear(const Model& base, const TrainSet& data, const TrainConfig& cfg,
                                  std::uint64_t stream, TrainLog* log)
{
    ParamVector theta = train_nonlinear(base, data, cfg, stream, log);
    TaskVector tau = make_task_vector(theta, base.params, Origin::nonlinear);
    return {std::move(theta), std::move(tau)};
}

TaskVector finetune_linearized(const Model& base, const TrainSet& data, const TrainConfig& cfg, std::uint64_t stream,
                               TrainLog* log)
{
    check_data(base, data, cfg);
    ParamVector tau = ParamVector::zeros(base.params.layout_ptr());
    OptimizerState state(tau.layout_ptr());
    BatchSampler sampler(data.size(), cfg.batch_size, derive_seed(cfg.seed, {stream}));
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        const auto rows = sampler.next();
        const Tensor x = data.inputs.gather_rows(rows);
        auto r = ad::forward_jvp(base.net, base.params, tau, x);
        r.primal += r.tangent;
        const auto le = loss_and_cotangent(r.primal, data, rows, cfg.loss);
        // d/dtau L(f0 + J tau) = J^T dL/df, a pullback at theta0.
        const auto grad = ad::vjp(base.net, base.params, x, le.cotangent);
        optimizer_step(tau, grad, state, lr_schedule(step, cfg), cfg);
        if (log) {
            log->losses.push_back(le.value);
        }
    }
    return TaskVector(std::move(tau), Origin::linearized);
}

}  // namespace tta
