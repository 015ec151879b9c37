#include "tta/experiment.hpp"
#include "tta/io.hpp"
#include "tta/linearize.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <optional>

namespace py = pybind11;
using namespace tta;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(std::span<const double> v)
{
    Array a(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

Array to_array(const Tensor& t)
{
    const auto& s = t.shape();
    std::vector<py::ssize_t> dims(s.begin(), s.end());
    Array a(dims);
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

Array to_array(const Eigen::MatrixXd& m)
{
    Array a({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            a.mutable_at(i, j) = m(i, j);
        }
    }
    return a;
}

Tensor to_tensor(const Array& a, std::size_t width)
{
    if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(1)) != width) {
        throw LayoutError("expected an (n, " + std::to_string(width) + ") array of inputs");
    }
    const auto n = static_cast<std::size_t>(a.shape(0));
    return Tensor(Shape{n, width}, std::vector<double>(a.data(), a.data() + n * width));
}

// The C++ core keeps every run deterministic from one seed; Python only sees flat arrays.
class PyExperiment {
public:
    explicit PyExperiment(const std::string& config_json) : exp_(parse_config(config_json)) {}

    const Experiment& exp() const { return exp_; }

    ParamVector params(const Array& a) const
    {
        if (a.ndim() != 1 || static_cast<std::size_t>(a.shape(0)) != exp_.network().layout().total_len()) {
            throw LayoutError("expected a flat parameter array of length " +
                              std::to_string(exp_.network().layout().total_len()));
        }
        return ParamVector(exp_.network().layout_ptr(), std::vector<double>(a.data(), a.data() + a.shape(0)));
    }

    Model model(const Array& theta) const { return Model(exp_.network(), params(theta)); }

    TaskVector tau(const Array& a, Method method) const
    {
        return TaskVector(params(a), method == Method::linearized ? Origin::linearized : Origin::nonlinear);
    }

    std::vector<TaskVector> taus(const std::vector<Array>& arrays, Method method) const
    {
        std::vector<TaskVector> out;
        for (const auto& a : arrays) {
            out.push_back(tau(a, method));
        }
        return out;
    }

    Tensor inputs(const Array& x) const { return to_tensor(x, exp_.config().model.input_dim); }

    const Dataset& split(std::size_t task, const std::string& name) const
    {
        if (task >= exp_.suite().size()) {
            throw ContractError("task index out of range");
        }
        const auto& d = exp_.suite().data[task];
        if (name == "train") {
            return d.train;
        }
        if (name == "heldout") {
            return d.heldout;
        }
        if (name == "test") {
            return d.test;
        }
        throw ConfigError("split: expected train, heldout or test");
    }

private:
    Experiment exp_;
};

py::dict addition_dict(const AdditionResult& r)
{
    py::dict d;
    d["method"] = to_string(r.method);
    d["alpha"] = r.alpha;
    d["single_acc"] = r.single_acc;
    d["multi_acc"] = r.multi_acc;
    d["normalized"] = r.normalized;
    d["absolute"] = r.absolute;
    d["heldout_normalized"] = r.heldout_normalized;
    return d;
}

py::dict negation_dict(const NegationResult& r)
{
    py::dict d;
    d["method"] = to_string(r.method);
    d["target"] = r.target;
    d["control"] = r.control;
    d["alpha"] = r.alpha;
    d["feasible"] = r.feasible;
    d["target_acc"] = r.target_acc;
    d["control_acc"] = r.control_acc;
    d["pretrained_target_acc"] = r.pretrained_target_acc;
    d["pretrained_control_acc"] = r.pretrained_control_acc;
    d["heldout_control_acc"] = r.heldout_control_acc;
    d["heldout_pretrained_control_acc"] = r.heldout_pretrained_control_acc;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Task arithmetic in the tangent space: desk-scale experiments";
    m.attr("__version__") = tta_version;
    m.attr("checkpoint_version") = io::checkpoint_version;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<LayoutError>(m, "LayoutError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "canonical_config", [](const std::string& text) { return canonical_json(parse_config(text)); },
        py::arg("config_json"), "Sorted-key JSON of a config with every default filled in.");
    m.def(
        "config_hash",
        [](const std::string& text) {
            char buf[17];
            std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(parse_config(text))));
            return std::string(buf);
        },
        py::arg("config_json"));

    py::class_<PyExperiment>(m, "Experiment")
        .def(py::init<const std::string&>(), py::arg("config_json"))
        .def_property_readonly("seed", [](const PyExperiment& e) { return e.exp().config().seed; })
        .def_property_readonly("num_tasks", [](const PyExperiment& e) { return e.exp().suite().size(); })
        .def_property_readonly("control_task", [](const PyExperiment& e) { return e.exp().suite().control(); })
        .def_property_readonly("num_params",
                               [](const PyExperiment& e) { return e.exp().network().layout().total_len(); })
        .def_property_readonly("num_classes",
                               [](const PyExperiment& e) { return e.exp().config().model.num_classes; })
        .def(
            "data",
            [](const PyExperiment& e, std::size_t task, const std::string& split) {
                const auto& d = e.split(task, split);
                return py::make_tuple(to_array(d.inputs), d.labels);
            },
            py::arg("task"), py::arg("split") = "test", "(inputs, labels) of one split.")
        .def(
            "pretrain",
            [](const PyExperiment& e) {
                ParamVector theta0;
                {
                    py::gil_scoped_release release;
                    theta0 = e.exp().pretrain();
                }
                return to_array(theta0.values());
            },
            "theta0 as a flat array.")
        .def(
            "random_init", [](const PyExperiment& e) { return to_array(e.exp().random_base().params.values()); })
        .def(
            "finetune",
            [](const PyExperiment& e, const Array& theta0, std::size_t task, const std::string& mode) {
                const Model base = e.model(theta0);
                const Origin origin = origin_from_string(mode);
                if (origin == Origin::random) {
                    throw ConfigError("mode: expected nonlinear or linearized");
                }
                const auto& cfg = e.exp().config().finetune;
                const auto data = TrainSet::classification(e.split(task, "train"));
                std::optional<TaskVector> tau;
                {
                    py::gil_scoped_release release;
                    tau = origin == Origin::linearized ? finetune_linearized(base, data, cfg, task)
                                                       : finetune_nonlinear(base, data, cfg, task).tau;
                }
                return to_array(tau->values());
            },
            py::arg("theta0"), py::arg("task"), py::arg("mode") = "nonlinear", "Task vector for one task.")
        .def(
            "logits",
            [](const PyExperiment& e, const Array& theta, const Array& x) {
                return to_array(logits(e.model(theta), e.inputs(x)));
            },
            py::arg("theta"), py::arg("x"))
        .def(
            "linearized_logits",
            [](const PyExperiment& e, const Array& theta0, const Array& tau, const Array& x) {
                return to_array(linearized_forward(LinearizedModel(e.model(theta0), e.tau(tau, Method::linearized)),
                                                   e.inputs(x)));
            },
            py::arg("theta0"), py::arg("tau"), py::arg("x"), "f(x; theta0) + tau . grad f(x; theta0).")
        .def(
            "ntk_gram",
            [](const PyExperiment& e, const Array& theta, const Array& x, const Array& xp, std::size_t cls,
               std::size_t threads) {
                if (cls >= e.exp().config().model.num_classes) {
                    throw LayoutError("class index out of range");
                }
                const std::vector<std::size_t> classes{cls};
                return to_array(gram_matrix(e.model(theta), e.inputs(x), e.inputs(xp), classes, threads).front());
            },
            py::arg("theta"), py::arg("x"), py::arg("xp"), py::arg("cls") = 0, py::arg("threads") = 1,
            "(n, m) NTK block <grad f_cls(x_i), grad f_cls(xp_j)>.")
        .def(
            "addition",
            [](const PyExperiment& e, const Array& theta0, const std::vector<Array>& taus, const std::string& method,
               std::size_t threads) {
                const Method mth = method_from_string(method);
                const auto tv = e.taus(taus, mth);
                const Model base = e.model(theta0);
                AdditionResult r;
                {
                    py::gil_scoped_release release;
                    r = task_addition(base, tv, e.exp().suite(), e.exp().config().mixing.search_grid, mth, threads);
                }
                return addition_dict(r);
            },
            py::arg("theta0"), py::arg("taus"), py::arg("method") = "nonlinear", py::arg("threads") = 1)
        .def(
            "negation",
            [](const PyExperiment& e, const Array& theta0, const Array& tau, std::size_t target,
               const std::string& method, std::size_t threads) {
                const Method mth = method_from_string(method);
                const auto tv = e.tau(tau, mth);
                const Model base = e.model(theta0);
                NegationResult r;
                {
                    py::gil_scoped_release release;
                    r = task_negation(base, tv, target, e.exp().suite().control(), e.exp().suite(),
                                      e.exp().config().mixing.search_grid, mth, threads);
                }
                return negation_dict(r);
            },
            py::arg("theta0"), py::arg("tau"), py::arg("target"), py::arg("method") = "nonlinear",
            py::arg("threads") = 1)
        .def(
            "disentangle",
            [](const PyExperiment& e, const Array& theta0, const Array& tau1, const Array& tau2,
               std::pair<std::size_t, std::size_t> pair, const std::string& method, std::size_t threads) {
                const Method mth = method_from_string(method);
                const auto& suite = e.exp().suite();
                if (pair.first >= suite.size() || pair.second >= suite.size() || pair.first == pair.second) {
                    throw ConfigError("pair: need two distinct task indices");
                }
                const Model base = e.model(theta0);
                const auto t1 = e.tau(tau1, mth);
                const auto t2 = e.tau(tau2, mth);
                const auto& cfg = e.exp().config();
                const auto x1 = disentangle_samples(suite.tasks[pair.first], cfg.xi_samples, cfg.seed);
                const auto x2 = disentangle_samples(suite.tasks[pair.second], cfg.xi_samples, cfg.seed);
                DisentanglementGrid g;
                {
                    py::gil_scoped_release release;
                    g = grid_scan(pair_logits(base, mth, t1, t2, x1), pair_logits(base, mth, t1, t2, x2), cfg.xi_grid,
                                  Distance::prediction_error, threads);
                }
                Array xi({static_cast<py::ssize_t>(g.alpha1_values.size()),
                          static_cast<py::ssize_t>(g.alpha2_values.size())});
                std::copy(g.xi.begin(), g.xi.end(), xi.mutable_data());
                return py::make_tuple(to_array(g.alpha1_values), to_array(g.alpha2_values), xi);
            },
            py::arg("theta0"), py::arg("tau1"), py::arg("tau2"), py::arg("pair"), py::arg("method") = "nonlinear",
            py::arg("threads") = 1, "(alpha1, alpha2, xi) over the configured grid.")
        .def(
            "spectrum",
            [](const PyExperiment& e, const Array& theta, std::size_t task, std::size_t threads) {
                const Model model = e.model(theta);
                std::vector<SpectralReport> reports;
                {
                    py::gil_scoped_release release;
                    reports = task_spectrum(model, e.exp().suite(), task, e.exp().suite().control(),
                                            e.exp().config().spectral, threads);
                }
                py::list per_class;
                for (const auto& r : reports) {
                    py::dict d;
                    d["class_index"] = r.class_index;
                    d["local_energy"] = to_array(r.local_energy);
                    d["train_mean"] = r.train_mean;
                    d["control_mean"] = r.control_mean;
                    d["ratio"] = r.ratio_flagged ? std::numeric_limits<double>::infinity() : r.concentration_ratio;
                    per_class.append(d);
                }
                py::dict out;
                out["classes"] = per_class;
                out["mean_ratio"] = mean_concentration(reports);
                return out;
            },
            py::arg("theta"), py::arg("task"), py::arg("threads") = 1,
            "Local energy of the per-class NTK eigenbasis on task vs control points.")
        .def(
            "save",
            [](const PyExperiment& e, const std::string& path, const Array& theta) {
                io::save_checkpoint(path, e.params(theta));
            },
            py::arg("path"), py::arg("params"))
        .def(
            "load",
            [](const PyExperiment& e, const std::string& path) {
                return to_array(e.exp().adopt(io::load_checkpoint(path), path).values());
            },
            py::arg("path"));

    m.def(
        "gram_psd_margin", [](const Array& a) {
            if (a.ndim() != 2 || a.shape(0) != a.shape(1)) {
                throw LayoutError("expected a square matrix");
            }
            Eigen::MatrixXd g(a.shape(0), a.shape(1));
            for (py::ssize_t i = 0; i < a.shape(0); ++i) {
                for (py::ssize_t j = 0; j < a.shape(1); ++j) {
                    g(i, j) = a.at(i, j);
                }
            }
            return min_eigenvalue_over_trace(g);
        },
        py::arg("gram"), "Smallest eigenvalue over trace.");
    m.def(
        "ring_basis",
        [](const std::string& kind, std::size_t points, std::size_t per_domain, std::size_t freqs) {
            const auto ring = make_ring_grid(points);
            const SampledBasis b = kind == "bump"      ? make_bump_basis(ring.masks, ring.weights, per_domain)
                                   : kind == "fourier" ? make_fourier_ring_basis(points, freqs)
                                                       : throw ConfigError("kind: expected bump or fourier");
            py::list masks;
            for (const auto& mk : ring.masks) {
                masks.append(std::vector<bool>(mk.begin(), mk.end()));
            }
            return py::make_tuple(to_array(b.values), to_array(std::span<const double>(b.weights.data(),
                                                                                          b.weights.size())),
                                  masks);
        },
        py::arg("kind"), py::arg("points") = 400, py::arg("per_domain") = 4, py::arg("freqs") = 6,
        "(values, quadrature weights, domain masks) of a sampled ring basis.");
}
