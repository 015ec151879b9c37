#include "tta/models.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace tta {

std::string to_string(Activation a)
{
    switch (a) {
        case Activation::relu:
            return "relu";
        case Activation::tanh:
            return "tanh";
        case Activation::gelu:
            return "gelu";
    }
    return "relu";
}

Activation activation_from_string(const std::string& s)
{
    if (s == "relu") {
        return Activation::relu;
    }
    if (s == "tanh") {
        return Activation::tanh;
    }
    if (s == "gelu") {
        return Activation::gelu;
    }
    throw ConfigError("unknown activation '" + s + "' (expected relu, tanh or gelu)");
}

void ModelSpec::validate() const
{
    if (input_dim < 1) {
        throw ConfigError("model.input_dim: must be >= 1");
    }
    if (hidden.empty()) {
        throw ConfigError("model.hidden: must list at least one layer width");
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (hidden[i] < 1) {
            throw ConfigError("model.hidden[" + std::to_string(i) + "]: must be >= 1");
        }
    }
    if (embed_dim < 1) {
        throw ConfigError("model.embed_dim: must be >= 1");
    }
    if (num_classes < 1) {
        throw ConfigError("model.num_classes: must be >= 1");
    }
    if (num_classes > embed_dim) {
        throw ConfigError("model.num_classes: an orthonormal head needs num_classes <= embed_dim");
    }
    if (use_attention_block && hidden.front() % 4 != 0) {
        throw ConfigError("model.hidden[0]: must be divisible by 4 when use_attention_block is set");
    }
}

std::shared_ptr<const ParamLayout> make_layout(const ModelSpec& spec)
{
    spec.validate();
    auto layout = std::make_shared<ParamLayout>();
    std::size_t fan_in = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const auto prefix = "encoder." + std::to_string(i);
        layout->add(prefix + ".weight", Shape{spec.hidden[i], fan_in});
        layout->add(prefix + ".bias", Shape{spec.hidden[i]});
        fan_in = spec.hidden[i];
        if (i == 0 && spec.use_attention_block) {
            const auto dk = spec.hidden[0] / 4;
            for (const char* part : {"query", "key", "value"}) {
                layout->add(std::string("attention.") + part + ".weight", Shape{dk, dk});
                layout->add(std::string("attention.") + part + ".bias", Shape{dk});
            }
        }
    }
    layout->add("encoder.out.weight", Shape{spec.embed_dim, fan_in});
    layout->add("encoder.out.bias", Shape{spec.embed_dim});
    return layout;
}

FrozenHead FrozenHead::orthonormal(std::size_t num_classes, std::size_t embed_dim, std::uint64_t seed)
{
    if (num_classes < 1 || num_classes > embed_dim) {
        throw ConfigError("head: need 1 <= num_classes <= embed_dim");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(embed_dim, num_classes);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            g(r, c) = normal(rng);
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(embed_dim, num_classes);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(num_classes).triangularView<Eigen::Upper>();
    // Unique frame: positive diagonal of R.
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        if (r(c, c) < 0) {
            q.col(c) *= -1.0;
        }
    }
    Tensor head(Shape{num_classes, embed_dim});
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t e = 0; e < embed_dim; ++e) {
            head.at(c, e) = q(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c));
        }
    }
    return FrozenHead{std::move(head)};
}

ParamVector random_init(const ModelSpec& spec, std::uint64_t seed)
{
    auto layout = make_layout(spec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(layout->total_len(), 0.0);
    // Weights and biases alike draw from N(0, 1/fan_in); a bias shares its
    // layer's fan-in.
    double std = 1.0;
    for (const auto& e : layout->entries()) {
        if (e.shape.size() == 2) {
            std = 1.0 / std::sqrt(static_cast<double>(e.shape[1]));
        }
        for (std::size_t k = 0; k < e.size(); ++k) {
            values[e.offset + k] = std * normal(rng);
        }
    }
    return ParamVector(std::move(layout), std::move(values));
}

Network::Network(ModelSpec spec, FrozenHead head)
    : spec_(std::move(spec)), head_(std::move(head)), layout_(make_layout(spec_))
{
    if (head_.num_classes() != spec_.num_classes || head_.embed_dim() != spec_.embed_dim) {
        throw LayoutError("head shape " + shape_string(head_.class_embeddings.shape()) + " does not match the model");
    }
}

Model::Model(Network n, ParamVector p) : net(std::move(n)), params(std::move(p))
{
    if (!(params.layout() == net.layout())) {
        throw LayoutError("model parameters do not match the model layout");
    }
}

Tensor encode(const Model& model, const Tensor& x)
{
    return ad::forward_eval(EncoderFn(model.net), model.params, x);
}

Tensor logits(const Model& model, const Tensor& x) { return ad::forward_eval(model.net, model.params, x); }

std::size_t argmax(std::span<const double> values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

std::size_t predict(const Model& model, const Tensor& x)
{
    if (x.rank() != 1) {
        throw LayoutError("predict expects a single example");
    }
    return argmax(logits(model, x).data());
}

std::vector<int> predict_rows(const Tensor& logits)
{
    const auto n = logits.rows();
    const auto c = logits.cols();
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        out[r] = static_cast<int>(argmax(logits.data().subspan(r * c, c)));
    }
    return out;
}

}  // namespace tta
