#include "tta/tasks.hpp"

#include "tta/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace tta {

bool Box::contains(std::span<const double> x) const
{
    if (x.size() != lo.size()) {
        throw LayoutError("point of dimension " + std::to_string(x.size()) + " tested against a box of dimension " +
                          std::to_string(lo.size()));
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (x[k] < lo[k] || x[k] > hi[k]) {
            return false;
        }
    }
    return true;
}

double Box::volume() const
{
    double v = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) {
        v *= hi[k] - lo[k];
    }
    return v;
}

bool intersects(const Box& a, const Box& b)
{
    for (std::size_t k = 0; k < a.dim(); ++k) {
        if (a.hi[k] < b.lo[k] || b.hi[k] < a.lo[k]) {
            return false;
        }
    }
    return true;
}

double box_distance(const Box& a, const Box& b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.dim(); ++k) {
        const double gap = std::max({0.0, b.lo[k] - a.hi[k], a.lo[k] - b.hi[k]});
        s += gap * gap;
    }
    return std::sqrt(s);
}

int TaskSpec::label(std::span<const double> x) const
{
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double d = x[k] - centers[i][k];
            s += d * d;
        }
        if (s < best_d) {
            best_d = s;
            best = i;
        }
    }
    return class_subset[best];
}

Tensor TaskSpec::sample(std::size_t n, std::mt19937_64& rng) const
{
    const std::size_t d = domain.dim();
    Tensor out(Shape{n, d});
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    std::normal_distribution<double> normal(0.0, cluster_std);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centers[pick(rng)];
        do {
            for (std::size_t k = 0; k < d; ++k) {
                x[k] = c[k] + normal(rng);
            }
        } while (!domain.contains(x));
        std::copy(x.begin(), x.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

double label_accuracy(std::span<const int> predicted, const Dataset& ds)
{
    if (ds.empty()) {
        throw ContractError("accuracy of an empty dataset");
    }
    if (predicted.size() != ds.size()) {
        throw LayoutError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(ds.size()) + " labels");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (ds.label_groups.empty()) {
            hits += predicted[i] == ds.labels[i] ? 1 : 0;
        } else {
            const auto& g = ds.label_groups.at(static_cast<std::size_t>(ds.labels[i]));
            hits += std::find(g.begin(), g.end(), predicted[i]) != g.end() ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::string to_string(Split s)
{
    switch (s) {
        case Split::train:
            return "train";
        case Split::heldout:
            return "heldout";
        case Split::test:
            return "test";
        case Split::pretrain:
            return "pretrain";
    }
    return "train";
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const
{
    Dataset out{inputs.gather_rows(indices), {}, split, seed, label_groups};
    for (auto i : indices) {
        out.labels.push_back(labels.at(i));
    }
    return out;
}

Dataset concat(std::span<const Dataset> parts)
{
    if (parts.empty()) {
        throw ContractError("concat needs at least one dataset");
    }
    std::vector<Tensor> inputs;
    Dataset out{{}, {}, parts.front().split, parts.front().seed, parts.front().label_groups};
    for (const auto& p : parts) {
        inputs.push_back(p.inputs);
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    out.inputs = concat_rows(inputs);
    return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes)
{
    Tensor t(Shape{labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw LayoutError("label " + std::to_string(labels[i]) + " out of range");
        }
        t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

void SuiteConfig::validate() const
{
    if (num_tasks < 2) {
        throw ConfigError("suite.num_tasks: must be >= 2");
    }
    if (points_per_task < 64) {
        throw ConfigError("suite.points_per_task: must be >= 64");
    }
    if (input_dim < 1) {
        throw ConfigError("suite.input_dim: must be >= 1");
    }
    if (classes_per_task < 2) {
        throw ConfigError("suite.classes_per_task: must be >= 2");
    }
    if (num_tasks * classes_per_task > num_classes) {
        throw ConfigError("suite.num_classes: " + std::to_string(num_tasks) + " tasks with " +
                          std::to_string(classes_per_task) + " classes each need at least " +
                          std::to_string(num_tasks * classes_per_task) + " classes");
    }
    if (control_task && *control_task >= num_tasks) {
        throw ConfigError("suite.control_task: must be < num_tasks");
    }
    if (!(box_scale > 0.0 && box_scale < 1.0)) {
        throw ConfigError("suite.box_scale: boxes cannot be packed disjointly unless 0 < box_scale < 1");
    }
    if (!(cluster_std_frac > 0.0)) {
        throw ConfigError("suite.cluster_std_frac: must be > 0");
    }
    if (!(heldout_fraction > 0.0 && heldout_fraction < 0.5)) {
        throw ConfigError("suite.heldout_fraction: must lie in (0, 0.5)");
    }
}

std::vector<TaskSpec> gen_disjoint_suite(const SuiteConfig& cfg)
{
    cfg.validate();
    const std::size_t d = cfg.input_dim;
    std::size_t m = 1;
    while (std::pow(static_cast<double>(m), static_cast<double>(d)) < static_cast<double>(cfg.num_tasks)) {
        ++m;
    }
    const double cell = 2.0 / static_cast<double>(m);
    const double side = cfg.box_scale * cell;
    if (static_cast<double>(cfg.num_tasks) * std::pow(side, static_cast<double>(d)) > std::pow(2.0, d)) {
        throw ConfigError("suite.num_tasks: boxes do not fit in [-1, 1]^" + std::to_string(d));
    }

    std::vector<TaskSpec> specs;
    for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
        TaskSpec spec;
        spec.id = "task" + std::to_string(t);
        spec.index = t;
        std::vector<double> mid(d);
        std::size_t code = t;
        for (std::size_t k = 0; k < d; ++k) {
            const auto digit = code % m;
            code /= m;
            mid[k] = -1.0 + (static_cast<double>(digit) + 0.5) * cell;
            spec.domain.lo.push_back(mid[k] - side / 2);
            spec.domain.hi.push_back(mid[k] + side / 2);
        }
        spec.cluster_std = cfg.cluster_std_frac * side;
        for (std::size_t i = 0; i < cfg.classes_per_task; ++i) {
            spec.class_subset.push_back(static_cast<int>(t * cfg.classes_per_task + i));
        }

        // Centers in the middle half of the box, reasonably apart.
        std::mt19937_64 rng(derive_seed(cfg.seed, {1, t}));
        std::uniform_real_distribution<double> u(-side / 4, side / 4);
        for (int attempt = 0;; ++attempt) {
            spec.centers.assign(cfg.classes_per_task, std::vector<double>(d));
            for (auto& c : spec.centers) {
                for (std::size_t k = 0; k < d; ++k) {
                    c[k] = mid[k] + u(rng);
                }
            }
            double closest = INFINITY;
            for (std::size_t a = 0; a < spec.centers.size(); ++a) {
                for (std::size_t b = a + 1; b < spec.centers.size(); ++b) {
                    double s = 0;
                    for (std::size_t k = 0; k < d; ++k) {
                        s += std::pow(spec.centers[a][k] - spec.centers[b][k], 2);
                    }
                    closest = std::min(closest, std::sqrt(s));
                }
            }
            if (closest >= 0.3 * side || attempt > 1000) {
                break;
            }
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

namespace {

Dataset sample_dataset(const TaskSpec& spec, std::size_t n, Split split, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    Dataset ds{spec.sample(n, rng), {}, split, seed, {}};
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels.push_back(spec.label(ds.inputs.data().subspan(i * spec.domain.dim(), spec.domain.dim())));
    }
    return ds;
}

}  // namespace

Suite make_suite(const SuiteConfig& cfg)
{
    Suite suite{cfg, gen_disjoint_suite(cfg), {}};
    const std::size_t n = cfg.points_per_task;
    const auto n_held = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.heldout_fraction * static_cast<double>(n))));
    for (const auto& spec : suite.tasks) {
        const auto t = spec.index;
        Dataset train = sample_dataset(spec, n, Split::train, derive_seed(cfg.seed, {2, t}));
        Dataset test = sample_dataset(spec, n, Split::test, derive_seed(cfg.seed, {3, t}));

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg.seed, {4, t}));
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::size_t> held(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_held));
        std::vector<std::size_t> rest(perm.begin() + static_cast<std::ptrdiff_t>(n_held), perm.end());
        std::sort(held.begin(), held.end());
        std::sort(rest.begin(), rest.end());
        Dataset heldout = train.subset(held);
        heldout.split = Split::heldout;
        suite.data.push_back({train.subset(rest), std::move(heldout), std::move(test)});
    }
    return suite;
}

Dataset pretrain_corpus(std::span<const TaskSpec> specs, std::size_t n, std::uint64_t seed)
{
    if (specs.empty()) {
        throw ContractError("pretrain_corpus needs at least one task");
    }
    const std::size_t d = specs.front().domain.dim();
    std::mt19937_64 rng(derive_seed(seed, {5}));
    std::uniform_int_distribution<std::size_t> pick(0, specs.size() - 1);
    Dataset ds{Tensor(Shape{n, d}), {}, Split::pretrain, seed, {}};
    for (const auto& spec : specs) {
        ds.label_groups.push_back(spec.class_subset);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& spec = specs[pick(rng)];
        const Tensor x = spec.sample(1, rng);
        std::copy(x.data().begin(), x.data().end(), ds.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * d));
        ds.labels.push_back(static_cast<int>(spec.index));
    }
    return ds;
}

namespace {

std::uint32_t read_u32(std::istream& in, const std::string& path)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError(path + ": truncated header");
    }
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void expect_magic(std::istream& in, const std::string& path, const char* magic)
{
    char m[4];
    if (!in.read(m, 4) || std::string(m, 4) != magic) {
        throw IoError(path + ": expected magic \"" + magic + "\"");
    }
}

}  // namespace

Dataset load_image_dataset(const std::string& image_path, const std::string& label_path)
{
    std::ifstream img(image_path, std::ios::binary);
    if (!img) {
        throw IoError("cannot open " + image_path);
    }
    std::ifstream lbl(label_path, std::ios::binary);
    if (!lbl) {
        throw IoError("cannot open " + label_path);
    }
    expect_magic(img, image_path, "IMG0");
    const auto count = read_u32(img, image_path);
    const auto height = read_u32(img, image_path);
    const auto width = read_u32(img, image_path);
    expect_magic(lbl, label_path, "LBL0");
    const auto lcount = read_u32(lbl, label_path);
    if (count != lcount) {
        throw IoError(image_path + " has " + std::to_string(count) + " images but " + label_path + " has " +
                      std::to_string(lcount) + " labels");
    }
    if (count == 0 || height == 0 || width == 0) {
        throw IoError(image_path + ": empty image set");
    }
    const std::size_t pixels = static_cast<std::size_t>(height) * width;
    std::vector<unsigned char> raw(count * pixels);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw IoError(image_path + ": truncated pixel data");
    }
    std::vector<unsigned char> labels(count);
    if (!lbl.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()))) {
        throw IoError(label_path + ": truncated label data");
    }
    Dataset ds{Tensor(Shape{count, pixels}), {}, Split::train, 0, {}};
    for (std::size_t i = 0; i < raw.size(); ++i) {
        ds.inputs[i] = raw[i] / 255.0;
    }
    ds.labels.assign(labels.begin(), labels.end());
    return ds;
}

}  // namespace tta
