#pragma once

#include "tta/error.hpp"
#include "tta/predictor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tta {

// Axis-aligned closed box.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    std::size_t dim() const { return lo.size(); }
    bool contains(std::span<const double> x) const;
    double volume() const;
};

bool intersects(const Box& a, const Box& b);
// Euclidean distance between the closest points of two boxes.
double box_distance(const Box& a, const Box& b);

// (D_t, mu_t, f*_t): a box, a Gaussian mixture truncated to it, and a
// nearest-center labelling onto the task's class subset.
struct TaskSpec {
    std::string id;
    std::size_t index = 0;
    Box domain;
    // One center per class in class_subset.
    std::vector<std::vector<double>> centers;
    double cluster_std = 0.1;
    std::vector<int> class_subset;

    int label(std::span<const double> x) const;
    // n points from mu_t, each inside the box.
    Tensor sample(std::size_t n, std::mt19937_64& rng) const;
};

enum class Split { train, heldout, test, pretrain };

std::string to_string(Split s);

struct Dataset {
    Tensor inputs;  // (n, d)
    std::vector<int> labels;
    Split split = Split::train;
    std::uint64_t seed = 0;
    // When non-empty, label y names the group of head classes label_groups[y]
    // and a prediction is correct when it falls anywhere in that group.
    std::vector<std::vector<int>> label_groups;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    Dataset subset(std::span<const std::size_t> indices) const;
};

Dataset concat(std::span<const Dataset> parts);
// (n, c) matrix with a 1 at each label.
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

struct SuiteConfig {
    std::size_t num_tasks = 4;
    std::size_t points_per_task = 512;
    std::size_t input_dim = 2;
    std::size_t num_classes = 8;
    std::size_t classes_per_task = 2;
    // Defaults to the last task.
    std::optional<std::size_t> control_task;
    // Box side as a fraction of its lattice cell.
    double box_scale = 0.8;
    // Cluster standard deviation as a fraction of the box side.
    double cluster_std_frac = 0.15;
    double heldout_fraction = 0.1;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the field.
    void validate() const;
    std::size_t control() const { return control_task.value_or(num_tasks - 1); }
    friend bool operator==(const SuiteConfig&, const SuiteConfig&) = default;
};

// T boxes on distinct cells of a lattice over [-1, 1]^d.
std::vector<TaskSpec> gen_disjoint_suite(const SuiteConfig& cfg);

struct TaskData {
    Dataset train;
    Dataset heldout;
    Dataset test;
};

struct Suite {
    SuiteConfig config;
    std::vector<TaskSpec> tasks;
    std::vector<TaskData> data;

    std::size_t size() const { return tasks.size(); }
    std::size_t control() const { return config.control(); }
};

// Specs plus seeded train/heldout/test samples. The held-out split is carved
// out of the points_per_task training draws.
Suite make_suite(const SuiteConfig& cfg);

// n points drawn uniformly across tasks. The coarse label of a point is its
// task index, whose group is the task's class subset. Seeds never collide with
// make_suite's streams.
Dataset pretrain_corpus(std::span<const TaskSpec> specs, std::size_t n, std::uint64_t seed);

// Fraction of predictions that match the labels (or their groups).
double label_accuracy(std::span<const int> predicted, const Dataset& ds);

template <Predictor P>
double accuracy(const P& p, const Dataset& ds)
{
    if (ds.empty()) {
        throw ContractError("accuracy of an empty dataset");
    }
    return label_accuracy(predict_labels(p, ds.inputs), ds);
}

// Reads an "IMG0" image file (u8 pixels, scaled to [0, 1]) and an "LBL0" label file.
Dataset load_image_dataset(const std::string& image_path, const std::string& label_path);

}  // namespace tta
