#include "tta/experiment.hpp"
#include "tta/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>

using namespace tta;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* sub, CommonOptions& o)
{
    sub->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--out", o.out, "Output directory (default: config output_dir)");
    sub->add_option("--threads", o.threads, "Worker threads (fallback: TTA_THREADS, then 1)");
}

std::size_t resolve_threads(const std::optional<std::size_t>& flag)
{
    if (flag) {
        return std::max<std::size_t>(1, *flag);
    }
    if (const char* env = std::getenv("TTA_THREADS")) {
        try {
            return std::max<std::size_t>(1, std::stoul(env));
        } catch (const std::exception&) {
            throw ConfigError(std::string("TTA_THREADS: not a count: '") + env + "'");
        }
    }
    return 1;
}

// Resolved config, output directory and the artifacts written so far.
class Run {
public:
    Run(const CommonOptions& o, std::string command)
        : cfg_(load_config(o.config)), command_(std::move(command)), threads_(resolve_threads(o.threads))
    {
        if (o.seed) {
            cfg_ = cfg_.with_seed(*o.seed);
        }
        if (!o.out.empty()) {
            cfg_.output_dir = o.out;
        }
        cfg_.validate();
        exp_.emplace(cfg_);
    }

    const Experiment& exp() const { return *exp_; }
    const ExperimentConfig& cfg() const { return cfg_; }
    std::size_t threads() const { return threads_; }
    fs::path path(const std::string& name) const { return fs::path(cfg_.output_dir) / name; }

    void write(const std::string& name, const std::string& bytes)
    {
        io::atomic_write(path(name), bytes);
        artifacts_.push_back(name);
        std::cout << "wrote " << path(name).string() << "\n";
    }

    void save(const std::string& name, const ParamVector& p)
    {
        io::save_checkpoint(path(name), p);
        artifacts_.push_back(name);
        std::cout << "wrote " << path(name).string() << "\n";
    }

    ParamVector load(const std::string& name) const
    {
        const auto p = path(name);
        return exp_->adopt(io::load_checkpoint(p), p.string());
    }

    Model base() const { return Model(exp_->network(), load("theta0.ckpt")); }

    void finish() { io::atomic_write(path(command_ + ".manifest.json"), manifest_json(cfg_, command_, artifacts_)); }

private:
    ExperimentConfig cfg_;
    std::string command_;
    std::size_t threads_;
    std::optional<Experiment> exp_;
    std::vector<std::string> artifacts_;
};

std::string g17(double v) { return io::format_g17(v); }

std::string tau_name(Origin origin, std::size_t t)
{
    return "tau_" + to_string(origin) + "_task" + std::to_string(t) + ".ckpt";
}

Origin origin_for(Method m) { return m == Method::linearized ? Origin::linearized : Origin::nonlinear; }

std::vector<TaskVector> load_taus(const Run& run, Method method)
{
    std::vector<TaskVector> taus;
    for (std::size_t t = 0; t < run.exp().suite().size(); ++t) {
        taus.emplace_back(run.load(tau_name(origin_for(method), t)), origin_for(method));
    }
    return taus;
}

int cmd_pretrain(const CommonOptions& o)
{
    Run run(o, "pretrain");
    TrainLog log;
    const Model base(run.exp().network(), run.exp().pretrain(&log));
    run.save("theta0.ckpt", base.params);

    std::string metrics = "metric,value\n";
    metrics += io::csv_line({"corpus_accuracy", g17(accuracy(base, run.exp().corpus()))});
    metrics += io::csv_line({"initial_loss", g17(log.losses.empty() ? 0.0 : log.losses.front())});
    metrics += io::csv_line({"final_loss", g17(log.losses.empty() ? 0.0 : log.losses.back())});
    for (std::size_t t = 0; t < run.exp().suite().size(); ++t) {
        metrics += io::csv_line({"test_accuracy_task" + std::to_string(t),
                                 g17(accuracy(base, run.exp().suite().data[t].test))});
    }
    run.write("pretrain_metrics.csv", metrics);

    std::string curve = "step,loss\n";
    for (std::size_t i = 0; i < log.losses.size(); ++i) {
        curve += io::csv_line({std::to_string(i), g17(log.losses[i])});
    }
    run.write("pretrain_loss.csv", curve);
    run.finish();
    return 0;
}

int cmd_finetune(const CommonOptions& o, const std::optional<std::size_t>& task, const std::string& mode)
{
    Run run(o, "finetune");
    const Origin origin = origin_from_string(mode);
    if (origin == Origin::random) {
        throw ConfigError("--mode: expected nonlinear or linearized");
    }
    const auto& suite = run.exp().suite();
    const Model base = run.base();
    std::vector<std::size_t> tasks;
    if (task) {
        if (*task >= suite.size()) {
            throw ConfigError("--task: must be < " + std::to_string(suite.size()));
        }
        tasks.push_back(*task);
    } else {
        tasks.resize(suite.size());
        std::iota(tasks.begin(), tasks.end(), 0);
    }
    std::string metrics = "task,mode,test_accuracy,heldout_accuracy,tau_l2\n";
    for (std::size_t t : tasks) {
        const auto data = TrainSet::classification(suite.data[t].train);
        TaskVector tau = origin == Origin::linearized
                             ? finetune_linearized(base, data, run.cfg().finetune, t)
                             : finetune_nonlinear(base, data, run.cfg().finetune, t).tau;
        const EditCurve test(base, origin == Origin::linearized ? Method::linearized : Method::nonlinear, tau,
                             suite.data[t].test.inputs);
        const EditCurve held(base, origin == Origin::linearized ? Method::linearized : Method::nonlinear, tau,
                             suite.data[t].heldout.inputs);
        double sq = 0.0;
        for (double v : tau.values()) {
            sq += v * v;
        }
        metrics += io::csv_line({std::to_string(t), mode, g17(accuracy_of_logits(test(1.0), suite.data[t].test.labels)),
                                 g17(accuracy_of_logits(held(1.0), suite.data[t].heldout.labels)),
                                 g17(std::sqrt(sq))});
        run.save(tau_name(origin, t), tau.params());
    }
    run.write(task ? "finetune_" + mode + "_task" + std::to_string(*task) + ".csv" : "finetune_" + mode + ".csv",
              metrics);
    run.finish();
    return 0;
}

int cmd_addition(const CommonOptions& o, const std::string& method_name)
{
    Run run(o, "addition");
    const Method method = method_from_string(method_name);
    const Model base = run.base();
    const auto taus = load_taus(run, method);
    const auto r = task_addition(base, taus, run.exp().suite(), run.cfg().mixing.search_grid, method, run.threads());
    std::string csv = "method,alpha,task,single_acc,multi_acc,normalized,absolute,heldout_normalized\n";
    for (std::size_t t = 0; t < taus.size(); ++t) {
        csv += io::csv_line({to_string(method), g17(r.alpha), std::to_string(t), g17(r.single_acc[t]),
                             g17(r.multi_acc[t]), g17(r.normalized), g17(r.absolute), g17(r.heldout_normalized)});
    }
    run.write("addition_" + to_string(method) + ".csv", csv);
    run.finish();
    return 0;
}

int cmd_negation(const CommonOptions& o, const std::string& method_name, const std::optional<std::size_t>& target)
{
    Run run(o, "negation");
    const Method method = method_from_string(method_name);
    const auto& suite = run.exp().suite();
    const std::size_t control = suite.control();
    if (target && (*target >= suite.size() || *target == control)) {
        throw ConfigError("--target: must be a task index below " + std::to_string(suite.size()) +
                          " other than the control task " + std::to_string(control));
    }
    const Model base = run.base();
    std::string csv =
        "method,target,control,alpha,feasible,target_acc,control_acc,pretrained_target_acc,pretrained_control_acc\n";
    for (std::size_t t = 0; t < suite.size(); ++t) {
        if (t == control || (target && t != *target)) {
            continue;
        }
        const TaskVector tau(run.load(tau_name(origin_for(method), t)), origin_for(method));
        const auto r = task_negation(base, tau, t, control, suite, run.cfg().mixing.search_grid, method,
                                     run.threads());
        csv += io::csv_line({to_string(method), std::to_string(t), std::to_string(control), g17(r.alpha),
                             r.feasible ? "1" : "0", g17(r.target_acc), g17(r.control_acc),
                             g17(r.pretrained_target_acc), g17(r.pretrained_control_acc)});
    }
    run.write("negation_" + to_string(method) + ".csv", csv);
    run.finish();
    return 0;
}

int cmd_disentangle(const CommonOptions& o, const std::string& method_name, const std::vector<std::size_t>& pair)
{
    Run run(o, "disentangle");
    const Method method = method_from_string(method_name);
    const auto& suite = run.exp().suite();
    if (pair.size() != 2 || pair[0] == pair[1] || pair[0] >= suite.size() || pair[1] >= suite.size()) {
        throw ConfigError("--pair: need two distinct task indices below " + std::to_string(suite.size()));
    }
    const Model base = run.base();
    const TaskVector t1(run.load(tau_name(origin_for(method), pair[0])), origin_for(method));
    const TaskVector t2(run.load(tau_name(origin_for(method), pair[1])), origin_for(method));
    const auto x1 = disentangle_samples(suite.tasks[pair[0]], run.cfg().xi_samples, run.cfg().seed);
    const auto x2 = disentangle_samples(suite.tasks[pair[1]], run.cfg().xi_samples, run.cfg().seed);
    auto grid = grid_scan(pair_logits(base, method, t1, t2, x1), pair_logits(base, method, t1, t2, x2),
                          run.cfg().xi_grid, Distance::prediction_error, run.threads());
    std::cout << "area fraction (xi < 0.05): " << g17(area_fraction(grid)) << "\n";
    run.write("xi_" + to_string(method) + "_" + std::to_string(pair[0]) + "_" + std::to_string(pair[1]) + ".csv",
              grid_csv(grid));
    run.finish();
    return 0;
}

int cmd_ntk(const CommonOptions& o, std::size_t task, const std::optional<std::size_t>& control_flag, bool at_theta0)
{
    Run run(o, "ntk");
    const auto& suite = run.exp().suite();
    const std::size_t control = control_flag.value_or(suite.control());
    if (task >= suite.size() || control >= suite.size() || task == control) {
        throw ConfigError("--task/--control: need two distinct task indices below " + std::to_string(suite.size()));
    }
    Model model = run.base();
    const bool theta0 = at_theta0 || run.cfg().spectral.at_theta0;
    if (!theta0) {
        const TaskVector tau(run.load(tau_name(Origin::nonlinear, task)), Origin::nonlinear);
        model = model.with_params(apply(model.params, tau));
    }
    const auto reports = task_spectrum(model, suite, task, control, run.cfg().spectral, run.threads());
    std::cout << "mean concentration ratio: " << g17(mean_concentration(reports)) << "\n";
    run.write("ntk_task" + std::to_string(task) + "_control" + std::to_string(control) + ".csv",
              local_energy_csv(reports));
    run.finish();
    return 0;
}

int cmd_verify_spectral(const std::string& basis, const std::string& out, std::size_t points, std::size_t per_domain,
                        std::size_t freqs, std::uint64_t seed)
{
    const auto ring = make_ring_grid(points);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    SampledBasis b;
    if (basis == "bump") {
        b = make_bump_basis(ring.masks, ring.weights, per_domain);
    } else if (basis == "fourier") {
        b = make_fourier_ring_basis(points, freqs);
    } else {
        throw ConfigError("basis: expected bump or fourier");
    }
    TaskCoefficients coeffs(ring.masks.size(), Eigen::VectorXd::Zero(b.values.cols()));
    for (std::size_t t = 0; t < coeffs.size(); ++t) {
        for (Eigen::Index r = 0; r < b.values.cols(); ++r) {
            const int owner = b.owner[static_cast<std::size_t>(r)];
            // Bump tasks only use their own domain's functions; Fourier atoms are global.
            if (owner < 0 || owner == static_cast<int>(t)) {
                coeffs[t](r) = n(rng);
            }
        }
    }
    const auto rep = proposition1_residual(b, coeffs, ring.masks);
    const double gap = pointwise_task_arithmetic_gap(b, coeffs, ring.masks);
    const bool pointwise_holds = gap <= 1e-10;
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& mask : ring.masks) {
        margin = std::min(margin, local_independence_margin(b, mask));
    }
    // The necessity argument needs the atoms to stay independent on every domain.
    const bool independent = margin > 1e-12;
    const bool expected = basis == "bump"
                              ? (rep.holds && pointwise_holds)
                              : (independent && !rep.holds && rep.max_relative > 0.1 && !pointwise_holds);

    std::string csv = "domain,residual,relative\n";
    for (std::size_t t = 0; t < rep.residuals.size(); ++t) {
        csv += io::csv_line({std::to_string(t), g17(rep.residuals[t]), g17(rep.relative[t])});
    }
    csv += io::csv_line({"max", g17(rep.max_residual), g17(rep.max_relative)});
    csv += io::csv_line({"pointwise_gap", g17(gap), ""});
    csv += io::csv_line({"independence_margin", g17(margin), ""});
    const auto path = fs::path(out) / ("verify_" + basis + ".csv");
    io::atomic_write(path, csv);
    std::cout << "wrote " << path.string() << "\n"
              << basis << ": max residual " << g17(rep.max_residual) << ", relative " << g17(rep.max_relative)
              << ", pointwise gap " << g17(gap)
              << ", independence margin " << g17(margin) << " -> " << (expected ? "as expected" : "UNEXPECTED") << "\n";
    return expected ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Task arithmetic in the tangent space: desk-scale experiments"};
    app.require_subcommand(1);

    CommonOptions common;
    auto* pretrain = app.add_subcommand("pretrain", "Pretrain theta0 on the surrogate corpus");
    add_common(pretrain, common);

    auto* finetune = app.add_subcommand("finetune", "Fine-tune task vectors from theta0");
    add_common(finetune, common);
    std::optional<std::size_t> ft_task;
    std::string ft_mode = "nonlinear";
    finetune->add_option("--task", ft_task, "Task index (default: every task)");
    finetune->add_option("--mode", ft_mode, "nonlinear or linearized")
        ->check(CLI::IsMember({"nonlinear", "linearized"}));

    std::string method = "nonlinear";
    auto method_check = CLI::IsMember({"nonlinear", "posthoc", "linearized"});
    auto* addition = app.add_subcommand("addition", "Task addition benchmark");
    add_common(addition, common);
    addition->add_option("--method", method, "nonlinear, posthoc or linearized")->check(method_check);

    auto* negation = app.add_subcommand("negation", "Task negation benchmark");
    add_common(negation, common);
    std::optional<std::size_t> neg_target;
    negation->add_option("--method", method, "nonlinear, posthoc or linearized")->check(method_check);
    negation->add_option("--target", neg_target, "Target task (default: every non-control task)");

    auto* disentangle = app.add_subcommand("disentangle", "Disentanglement error grid");
    add_common(disentangle, common);
    std::vector<std::size_t> pair{0, 1};
    disentangle->add_option("--method", method, "nonlinear, posthoc or linearized")->check(method_check);
    disentangle->add_option("--pair", pair, "Two task indices")->delimiter(',')->expected(2);

    auto* ntk = app.add_subcommand("ntk", "NTK eigenfunction local energy");
    add_common(ntk, common);
    std::size_t ntk_task = 0;
    std::optional<std::size_t> ntk_control;
    bool at_theta0 = false;
    ntk->add_option("--task", ntk_task, "Task the model was fine-tuned on");
    ntk->add_option("--control", ntk_control, "Control task (default: the suite's control)");
    ntk->add_flag("--at-theta0", at_theta0, "Build the Gram at theta0 instead of theta*");

    auto* verify = app.add_subcommand("verify-spectral", "Check the localization criterion on a ring");
    std::string basis;
    std::string verify_out = "out";
    std::size_t points = 400;
    std::size_t per_domain = 4;
    std::size_t freqs = 6;
    std::uint64_t verify_seed = 0;
    verify->add_option("basis", basis, "bump or fourier")->required()->check(CLI::IsMember({"bump", "fourier"}));
    verify->add_option("--out", verify_out, "Output directory");
    verify->add_option("--points", points, "Ring grid points");
    verify->add_option("--per-domain", per_domain, "Bump functions per domain");
    verify->add_option("--freqs", freqs, "Fourier frequencies");
    verify->add_option("--seed", verify_seed, "Coefficient seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) {
            return cmd_pretrain(common);
        }
        if (finetune->parsed()) {
            return cmd_finetune(common, ft_task, ft_mode);
        }
        if (addition->parsed()) {
            return cmd_addition(common, method);
        }
        if (negation->parsed()) {
            return cmd_negation(common, method, neg_target);
        }
        if (disentangle->parsed()) {
            return cmd_disentangle(common, method, pair);
        }
        if (ntk->parsed()) {
            return cmd_ntk(common, ntk_task, ntk_control, at_theta0);
        }
        if (verify->parsed()) {
            return cmd_verify_spectral(basis, verify_out, points, per_domain, freqs, verify_seed);
        }
    } catch (const ConfigError& e) {
        std::cerr << "tta: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "tta: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
