#pragma once

#include "tta/bench.hpp"
#include "tta/disentangle.hpp"
#include "tta/ntk_spectral.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tta {

inline constexpr const char* tta_version = "0.1.0";

struct SpectralConfig {
    std::size_t train_points = 200;
    std::size_t control_points = 200;
    // Build the Gram at theta0 instead of the fine-tuned theta*.
    bool at_theta0 = false;
    std::optional<std::size_t> top_k;
    bool lambda_weighted = false;

    void validate() const;
    friend bool operator==(const SpectralConfig&, const SpectralConfig&) = default;
};

// One seed drives everything: suite sampling, the head, both initializations
// and every mini-batch order. Nested seed fields are overwritten from it.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    SuiteConfig suite;
    ModelSpec model;
    std::size_t corpus_size = 4096;
    TrainConfig pretrain;
    TrainConfig finetune;
    MixingConfig mixing;
    GridSpec xi_grid;
    std::size_t xi_samples = 512;
    SpectralConfig spectral;
    std::string output_dir = "out";

    // Throws ConfigError naming the field path.
    void validate() const;
    ExperimentConfig with_seed(std::uint64_t s) const;
};

// JSON document; unknown keys and a missing "seed" are rejected with field paths.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Sorted-key compact JSON of every field, defaults included.
std::string canonical_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

// {"config_hash", "seed", "tta_version", "checkpoint_version", "command", "artifacts"}.
std::string manifest_json(const ExperimentConfig& cfg, const std::string& command,
                          const std::vector<std::string>& artifacts);

// Suite, head and initializations derived from the experiment seed.
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    const Suite& suite() const { return suite_; }
    const Network& network() const { return net_; }

    Dataset corpus() const;
    ParamVector pretrain(TrainLog* log = nullptr) const;
    Model random_base() const;
    std::uint64_t random_init_seed() const;

    // Rebinds a loaded parameter vector to the network's layout.
    ParamVector adopt(const ParamVector& loaded, const std::string& source) const;

private:
    ExperimentConfig cfg_;
    Suite suite_;
    Network net_;
};

// Local-energy reports for every class of a model on `task` vs `control`:
// rows are the first train_points training inputs of the task, columns are
// those rows followed by the first control_points training inputs of the control.
std::vector<SpectralReport> task_spectrum(const Model& model, const Suite& suite, std::size_t task,
                                          std::size_t control, const SpectralConfig& cfg, std::size_t threads = 1);

// Mean concentration ratio over classes; flagged (infinite) ratios count as `cap`.
double mean_concentration(std::span<const SpectralReport> reports, double cap = 1e6);

}  // namespace tta
