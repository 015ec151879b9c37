#pragma once

#include "tta/linearize.hpp"
#include "tta/tasks.hpp"
#include "tta/taskvec.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tta {

enum class Loss { cross_entropy, mse };
enum class OptimizerKind { adamw, sgd };
enum class Schedule { cosine, constant };

std::string to_string(Loss l);
std::string to_string(OptimizerKind o);
std::string to_string(Schedule s);
Loss loss_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);
Schedule schedule_from_string(const std::string& s);

struct TrainConfig {
    std::size_t iterations = 500;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::size_t warmup_steps = 50;
    Schedule schedule = Schedule::cosine;
    double weight_decay = 0.01;
    Loss loss = Loss::cross_entropy;
    OptimizerKind optimizer = OptimizerKind::adamw;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the field. iterations = 0 means no training.
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear warm-up 0 -> lr over warmup_steps, then cosine decay to 0 at
// `iterations` (or flat at lr for the constant schedule).
double lr_schedule(std::size_t step, const TrainConfig& cfg);

struct OptimizerState {
    ParamVector first_moment;
    ParamVector second_moment;
    std::size_t step = 0;

    explicit OptimizerState(const std::shared_ptr<const ParamLayout>& layout);
};

// One update of `params` in place. Weight decay is decoupled: it shrinks the
// parameters directly and never enters the moments.
void optimizer_step(ParamVector& params, const ParamVector& grad, OptimizerState& state, double lr,
                    const TrainConfig& cfg);

// Inputs with class labels (cross-entropy) or dense targets (mse). With
// label groups, the cross-entropy target is uniform over the labelled group.
struct TrainSet {
    Tensor inputs;
    std::vector<int> labels;
    Tensor targets;
    std::vector<std::vector<int>> label_groups;

    static TrainSet classification(const Dataset& ds);
    static TrainSet regression(Tensor inputs, Tensor targets);
    std::size_t size() const { return inputs.rows(); }
};

// Mean loss of a (n, c) logit block and its gradient with respect to the logits.
struct LossEval {
    double value;
    Tensor cotangent;
};
LossEval loss_and_cotangent(const Tensor& logits, const TrainSet& data, std::span<const std::size_t> rows,
                            Loss loss);

struct TrainLog {
    std::vector<double> losses;
};

// Trains all encoder weights from random_init(spec, init_seed) on the corpus.
ParamVector pretrain(const Network& net, const Dataset& corpus, const TrainConfig& cfg, std::uint64_t init_seed,
                     TrainLog* log = nullptr);

enum class InitMode { random, pretrained_surrogate };

struct SurrogateSetup {
    Dataset corpus;
    TrainConfig cfg;
};

// random: scaled Gaussian init. pretrained_surrogate: pretrain() from that init.
ParamVector init_params(const Network& net, std::uint64_t seed, InitMode mode,
                        const SurrogateSetup* setup = nullptr);

struct FinetuneResult {
    ParamVector theta_star;
    TaskVector tau;
};

// Ordinary fine-tuning of every encoder weight; the head never changes.
// `stream` separates mini-batch orders of different tasks.
FinetuneResult finetune_nonlinear(const Model& base, const TrainSet& data, const TrainConfig& cfg,
                                  std::uint64_t stream = 0, TrainLog* log = nullptr);

// Trains tau inside f_lin(.; theta0 + tau). Every model evaluation happens at theta0.
TaskVector finetune_linearized(const Model& base, const TrainSet& data, const TrainConfig& cfg,
                               std::uint64_t stream = 0, TrainLog* log = nullptr);

}  // namespace tta
