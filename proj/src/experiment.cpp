#include "tta/experiment.hpp"

#include "tta/io.hpp"
#include "tta/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <set>

namespace tta {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) {
            throw ConfigError(where() + ": expected an object");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key)
    {
        seen_.insert(key);
        return j_.at(key);
    }

    Reader child(const std::string& key) { return Reader(raw(key), field(key)); }

    template <class T>
    void read(const std::string& key, T& out)
    {
        if (has(key)) {
            out = convert<T>(raw(key), field(key));
        }
    }

    template <class T, class F>
    void read_enum(const std::string& key, T& out, F parse)
    {
        if (has(key)) {
            const auto& v = raw(key);
            if (!v.is_string()) {
                throw ConfigError(field(key) + ": expected a string");
            }
            try {
                out = parse(v.template get<std::string>());
            } catch (const ConfigError& e) {
                throw ConfigError(field(key) + ": " + e.what());
            }
        }
    }

    // Throws for keys nobody asked for.
    void finish() const
    {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) {
                throw ConfigError(field(k) + ": unknown key");
            }
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    template <class T>
    static T convert(const json& v, const std::string& f)
    {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) {
                throw ConfigError(f + ": expected true or false");
            }
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                throw ConfigError(f + ": expected a string");
            }
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) {
                throw ConfigError(f + ": expected a number");
            }
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            if (!v.is_array()) {
                throw ConfigError(f + ": expected an array of numbers");
            }
            std::vector<double> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<double>(v[i], f + "[" + std::to_string(i) + "]"));
            }
            return out;
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            if (!v.is_array()) {
                throw ConfigError(f + ": expected an array of counts");
            }
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<std::size_t>(v[i], f + "[" + std::to_string(i) + "]"));
            }
            return out;
        } else if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
            if (v.is_null()) {
                return std::nullopt;
            }
            return convert<std::size_t>(v, f);
        } else {
            static_assert(std::is_unsigned_v<T>);
            if (!v.is_number_unsigned()) {
                throw ConfigError(f + ": expected a non-negative integer");
            }
            return static_cast<T>(v.get<std::uint64_t>());
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_suite(Reader r, SuiteConfig& s)
{
    r.read("num_tasks", s.num_tasks);
    r.read("points_per_task", s.points_per_task);
    r.read("input_dim", s.input_dim);
    r.read("num_classes", s.num_classes);
    r.read("classes_per_task", s.classes_per_task);
    if (r.has("control_task")) {
        std::optional<std::size_t> c;
        r.read("control_task", c);
        s.control_task = c;
    }
    r.read("box_scale", s.box_scale);
    r.read("cluster_std_frac", s.cluster_std_frac);
    r.read("heldout_fraction", s.heldout_fraction);
    r.finish();
}

void read_model(Reader r, ModelSpec& m)
{
    r.read("input_dim", m.input_dim);
    r.read("hidden", m.hidden);
    r.read_enum("activation", m.activation, activation_from_string);
    r.read("use_attention_block", m.use_attention_block);
    r.read("embed_dim", m.embed_dim);
    r.read("num_classes", m.num_classes);
    r.read("normalize_output", m.normalize_output);
    r.finish();
}

void read_train(Reader r, TrainConfig& t)
{
    r.read("iterations", t.iterations);
    r.read("batch_size", t.batch_size);
    r.read("lr", t.lr);
    r.read("warmup_steps", t.warmup_steps);
    r.read_enum("schedule", t.schedule, schedule_from_string);
    r.read("weight_decay", t.weight_decay);
    r.read_enum("loss", t.loss, loss_from_string);
    r.read_enum("optimizer", t.optimizer, optimizer_from_string);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("eps", t.eps);
    r.finish();
}

json suite_json(const SuiteConfig& s)
{
    return {{"num_tasks", s.num_tasks},
            {"points_per_task", s.points_per_task},
            {"input_dim", s.input_dim},
            {"num_classes", s.num_classes},
            {"classes_per_task", s.classes_per_task},
            {"control_task", s.control_task ? json(*s.control_task) : json(nullptr)},
            {"box_scale", s.box_scale},
            {"cluster_std_frac", s.cluster_std_frac},
            {"heldout_fraction", s.heldout_fraction}};
}

json model_json(const ModelSpec& m)
{
    return {{"input_dim", m.input_dim},
            {"hidden", m.hidden},
            {"activation", to_string(m.activation)},
            {"use_attention_block", m.use_attention_block},
            {"embed_dim", m.embed_dim},
            {"num_classes", m.num_classes},
            {"normalize_output", m.normalize_output}};
}

json train_json(const TrainConfig& t)
{
    return {{"iterations", t.iterations},
            {"batch_size", t.batch_size},
            {"lr", t.lr},
            {"warmup_steps", t.warmup_steps},
            {"schedule", to_string(t.schedule)},
            {"weight_decay", t.weight_decay},
            {"loss", to_string(t.loss)},
            {"optimizer", to_string(t.optimizer)},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"eps", t.eps}};
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void SpectralConfig::validate() const
{
    if (train_points == 0) {
        throw ConfigError("spectral.train_points: must be >= 1");
    }
    if (control_points == 0) {
        throw ConfigError("spectral.control_points: must be >= 1");
    }
    if (train_points + control_points > max_gram_columns) {
        throw ConfigError("spectral.control_points: train_points + control_points exceeds " +
                          std::to_string(max_gram_columns) + " Gram columns");
    }
    if (top_k && *top_k == 0) {
        throw ConfigError("spectral.top_k: must be >= 1 when set");
    }
}

void ExperimentConfig::validate() const
{
    suite.validate();
    model.validate();
    if (model.input_dim != suite.input_dim) {
        throw ConfigError("model.input_dim: must equal suite.input_dim (" + std::to_string(suite.input_dim) + ")");
    }
    if (model.num_classes != suite.num_classes) {
        throw ConfigError("model.num_classes: must equal suite.num_classes (" + std::to_string(suite.num_classes) +
                          ")");
    }
    if (corpus_size == 0) {
        throw ConfigError("corpus_size: must be >= 1");
    }
    // TrainConfig names its fields "train.*".
    auto train_path = [](const std::string& which, const TrainConfig& t) {
        try {
            t.validate();
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            if (msg.rfind("train.", 0) == 0) {
                msg = msg.substr(6);
            }
            throw ConfigError(which + "." + msg);
        }
    };
    train_path("pretrain", pretrain);
    train_path("finetune", finetune);
    mixing.validate();
    xi_grid.validate();
    if (xi_samples == 0) {
        throw ConfigError("xi_samples: must be >= 1");
    }
    spectral.validate();
    if (output_dir.empty()) {
        throw ConfigError("output_dir: must not be empty");
    }
}

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t s) const
{
    ExperimentConfig c = *this;
    c.seed = s;
    c.suite.seed = s;
    c.pretrain.seed = s;
    c.finetune.seed = s;
    return c;
}

ExperimentConfig parse_config(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    Reader r(j, "");
    if (!r.has("seed")) {
        throw ConfigError("seed: required");
    }
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    r.read("seed", seed);
    if (r.has("suite")) {
        read_suite(r.child("suite"), cfg.suite);
    }
    if (r.has("model")) {
        read_model(r.child("model"), cfg.model);
    }
    r.read("corpus_size", cfg.corpus_size);
    if (r.has("pretrain")) {
        read_train(r.child("pretrain"), cfg.pretrain);
    }
    if (r.has("finetune")) {
        read_train(r.child("finetune"), cfg.finetune);
    }
    if (r.has("mixing")) {
        Reader m = r.child("mixing");
        m.read("search_grid", cfg.mixing.search_grid);
        m.finish();
    }
    if (r.has("xi_grid")) {
        Reader g = r.child("xi_grid");
        g.read("lo", cfg.xi_grid.lo);
        g.read("hi", cfg.xi_grid.hi);
        g.read("points", cfg.xi_grid.points);
        g.finish();
    }
    r.read("xi_samples", cfg.xi_samples);
    if (r.has("spectral")) {
        Reader s = r.child("spectral");
        s.read("train_points", cfg.spectral.train_points);
        s.read("control_points", cfg.spectral.control_points);
        s.read("at_theta0", cfg.spectral.at_theta0);
        s.read("top_k", cfg.spectral.top_k);
        s.read("lambda_weighted", cfg.spectral.lambda_weighted);
        s.finish();
    }
    r.read("output_dir", cfg.output_dir);
    r.finish();
    cfg = cfg.with_seed(seed);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    return parse_config(io::read_file(path));
}

std::string canonical_json(const ExperimentConfig& cfg)
{
    json j = {{"seed", cfg.seed},
              {"suite", suite_json(cfg.suite)},
              {"model", model_json(cfg.model)},
              {"corpus_size", cfg.corpus_size},
              {"pretrain", train_json(cfg.pretrain)},
              {"finetune", train_json(cfg.finetune)},
              {"mixing", {{"search_grid", cfg.mixing.search_grid}}},
              {"xi_grid", {{"lo", cfg.xi_grid.lo}, {"hi", cfg.xi_grid.hi}, {"points", cfg.xi_grid.points}}},
              {"xi_samples", cfg.xi_samples},
              {"spectral",
               {{"train_points", cfg.spectral.train_points},
                {"control_points", cfg.spectral.control_points},
                {"at_theta0", cfg.spectral.at_theta0},
                {"top_k", cfg.spectral.top_k ? json(*cfg.spectral.top_k) : json(nullptr)},
                {"lambda_weighted", cfg.spectral.lambda_weighted}}},
              {"output_dir", cfg.output_dir}};
    return j.dump();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return io::fnv1a64(canonical_json(cfg)); }

std::string manifest_json(const ExperimentConfig& cfg, const std::string& command,
                          const std::vector<std::string>& artifacts)
{
    json j = {{"config_hash", hex64(config_hash(cfg))},
              {"seed", cfg.seed},
              {"tta_version", tta_version},
              {"checkpoint_version", io::checkpoint_version},
              {"command", command},
              {"artifacts", artifacts}};
    return j.dump(2) + "\n";
}

Experiment::Experiment(ExperimentConfig cfg)
    : cfg_(std::move(cfg)),
      suite_(make_suite(cfg_.suite)),
      net_(cfg_.model, FrozenHead::orthonormal(cfg_.model.num_classes, cfg_.model.embed_dim,
                                               derive_seed(cfg_.seed, {100})))
{
    cfg_.validate();
}

Dataset Experiment::corpus() const { return pretrain_corpus(suite_.tasks, cfg_.corpus_size, cfg_.seed); }

ParamVector Experiment::pretrain(TrainLog* log) const
{
    return tta::pretrain(net_, corpus(), cfg_.pretrain, derive_seed(cfg_.seed, {101}), log);
}

std::uint64_t Experiment::random_init_seed() const { return derive_seed(cfg_.seed, {102}); }

Model Experiment::random_base() const { return Model(net_, random_init(cfg_.model, random_init_seed())); }

ParamVector Experiment::adopt(const ParamVector& loaded, const std::string& source) const
{
    if (!(loaded.layout() == net_.layout())) {
        throw LayoutError(source + ": checkpoint layout does not match the configured model");
    }
    return ParamVector(net_.layout_ptr(), {loaded.values().begin(), loaded.values().end()});
}

std::vector<SpectralReport> task_spectrum(const Model& model, const Suite& suite, std::size_t task,
                                          std::size_t control, const SpectralConfig& cfg, std::size_t threads)
{
    cfg.validate();
    if (task >= suite.size() || control >= suite.size() || task == control) {
        throw ContractError("task_spectrum: need two distinct task indices below " + std::to_string(suite.size()));
    }
    auto first = [](const Dataset& d, std::size_t n, const std::string& what) {
        if (d.size() < n) {
            throw ContractError("task_spectrum: " + what + " has " + std::to_string(d.size()) + " points, need " +
                                std::to_string(n));
        }
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        return d.inputs.gather_rows(idx);
    };
    const Tensor rows = first(suite.data[task].train, cfg.train_points, "task " + std::to_string(task));
    const Tensor ctl = first(suite.data[control].train, cfg.control_points, "control " + std::to_string(control));
    const std::vector<Tensor> parts{rows, ctl};
    const Tensor cols = concat_rows(parts);
    std::vector<Partition> part(cfg.train_points, Partition::train);
    part.resize(cfg.train_points + cfg.control_points, Partition::control);

    std::vector<std::size_t> classes(model.spec().num_classes);
    for (std::size_t j = 0; j < classes.size(); ++j) {
        classes[j] = j;
    }
    const auto grams = gram_matrix(model, rows, cols, classes, threads);
    LocalEnergyOptions opts;
    opts.top_k = cfg.top_k;
    opts.lambda_weighted = cfg.lambda_weighted;
    std::vector<SpectralReport> out;
    for (std::size_t j = 0; j < grams.size(); ++j) {
        out.push_back(local_energy(eigenbasis(grams[j], j), part, opts));
    }
    return out;
}

double mean_concentration(std::span<const SpectralReport> reports, double cap)
{
    if (reports.empty()) {
        throw ContractError("mean_concentration of no reports");
    }
    double s = 0.0;
    for (const auto& r : reports) {
        s += r.ratio_flagged ? cap : std::min(r.concentration_ratio, cap);
    }
    return s / static_cast<double>(reports.size());
}

}  // namespace tta
