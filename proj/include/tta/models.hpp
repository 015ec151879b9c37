#pragma once

#include "tta/autodiff/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tta {

enum class Activation { relu, tanh, gelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ModelSpec {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::relu;
    // Single-head self-attention over 4 tokens carved out of the first hidden layer.
    bool use_attention_block = false;
    std::size_t embed_dim = 16;
    std::size_t num_classes = 8;
    // L2-normalize the embedding before the head.
    bool normalize_output = false;

    // Throws ConfigError.
    void validate() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::shared_ptr<const ParamLayout> make_layout(const ModelSpec& spec);

// Row-orthonormal class embeddings (num_classes x embed_dim). Never trained.
struct FrozenHead {
    Tensor class_embeddings;

    static FrozenHead orthonormal(std::size_t num_classes, std::size_t embed_dim, std::uint64_t seed);
    std::size_t num_classes() const { return class_embeddings.rows(); }
    std::size_t embed_dim() const { return class_embeddings.cols(); }
    friend bool operator==(const FrozenHead&, const FrozenHead&) = default;
};

// Gaussian weights and biases with std 1/sqrt(fan_in).
ParamVector random_init(const ModelSpec& spec, std::uint64_t seed);

// The encoder followed by the frozen head, as a parametric function of the encoder weights.
class Network {
public:
    Network(ModelSpec spec, FrozenHead head);

    const ModelSpec& spec() const { return spec_; }
    const FrozenHead& head() const { return head_; }
    const ParamLayout& layout() const { return *layout_; }
    const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }

    template <class Ops>
    typename Ops::Value embed(Ops& ops, const Tensor& x) const;

    // Logits = embed(x) head^T.
    template <class Ops>
    typename Ops::Value operator()(Ops& ops, const Tensor& x) const
    {
        auto e = embed(ops, x);
        auto h = ops.constant(head_.class_embeddings);
        return ad::matmul_t(ops, e, h);
    }

private:
    template <class Ops>
    typename Ops::Value attention(Ops& ops, const typename Ops::Value& h, std::size_t& next) const;

    ModelSpec spec_;
    FrozenHead head_;
    std::shared_ptr<const ParamLayout> layout_;
};

// Only the embedding, as a parametric function.
class EncoderFn {
public:
    explicit EncoderFn(const Network& net) : net_(&net) {}
    const ParamLayout& layout() const { return net_->layout(); }
    template <class Ops>
    typename Ops::Value operator()(Ops& ops, const Tensor& x) const
    {
        return net_->embed(ops, x);
    }

private:
    const Network* net_;
};

struct Model {
    Network net;
    ParamVector params;

    Model(Network n, ParamVector p);
    const ModelSpec& spec() const { return net.spec(); }
    const FrozenHead& head() const { return net.head(); }
    Model with_params(ParamVector p) const { return Model(net, std::move(p)); }
};

Tensor encode(const Model& model, const Tensor& x);
Tensor logits(const Model& model, const Tensor& x);
// argmax with ties broken toward the lowest index.
std::size_t argmax(std::span<const double> values);
std::size_t predict(const Model& model, const Tensor& x);
std::vector<int> predict_rows(const Tensor& logits);

// ---------------------------------------------------------------------------

template <class Ops>
typename Ops::Value Network::embed(Ops& ops, const Tensor& x) const
{
    if (x.rank() != 2 || x.cols() != spec_.input_dim) {
        throw LayoutError("model expects inputs of width " + std::to_string(spec_.input_dim) + ", got " +
                          shape_string(x.shape()));
    }
    const auto act = [&] {
        switch (spec_.activation) {
            case Activation::tanh:
                return ad::prim::tanh();
            case Activation::gelu:
                return ad::prim::gelu();
            default:
                return ad::prim::relu();
        }
    }();
    std::size_t next = 0;
    auto h = ops.constant(x);
    for (std::size_t layer = 0; layer < spec_.hidden.size(); ++layer) {
        const auto& w = ops.param(next++);
        const auto& b = ops.param(next++);
        h = ad::unary(ops, act, ad::affine(ops, h, w, b));
        if (layer == 0 && spec_.use_attention_block) {
            h = attention(ops, h, next);
        }
    }
    const auto& w = ops.param(next++);
    const auto& b = ops.param(next++);
    h = ad::affine(ops, h, w, b);
    if (spec_.normalize_output) {
        h = ad::unary(ops, ad::prim::l2_normalize(), h);
    }
    return h;
}

// Each example's hidden vector is split into 4 tokens; a block mask keeps
// attention within the example. Residual connection around the block.
template <class Ops>
typename Ops::Value Network::attention(Ops& ops, const typename Ops::Value& h, std::size_t& next) const
{
    constexpr std::size_t tokens = 4;
    const std::size_t width = spec_.hidden.front();
    const std::size_t dk = width / tokens;
    const auto n = [&] {
        if constexpr (requires { h.primal; }) {
            return h.primal.rows();
        } else if constexpr (requires { h.rows(); }) {
            return h.rows();
        } else {
            return ops.value(h).rows();
        }
    }();
    const std::size_t t = n * tokens;

    auto seq = ops.apply(ad::prim::reshape(Shape{t, dk}), {&h});
    const auto& wq = ops.param(next++);
    const auto& bq = ops.param(next++);
    const auto& wk = ops.param(next++);
    const auto& bk = ops.param(next++);
    const auto& wv = ops.param(next++);
    const auto& bv = ops.param(next++);
    auto q = ad::affine(ops, seq, wq, bq);
    auto k = ad::affine(ops, seq, wk, bk);
    auto v = ad::affine(ops, seq, wv, bv);

    Tensor scale(Shape{t, t}, 1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor mask(Shape{t, t}, -1e30);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = (i / tokens) * tokens; j < (i / tokens + 1) * tokens; ++j) {
            mask.at(i, j) = 0.0;
        }
    }
    auto scores = ad::mul(ops, ad::matmul_t(ops, q, k), ops.constant(std::move(scale)));
    auto weights = ad::unary(ops, ad::prim::softmax(), ad::add(ops, scores, ops.constant(std::move(mask))));
    auto vt = ops.apply(ad::prim::transpose(), {&v});
    auto mixed = ad::matmul_t(ops, weights, vt);
    auto out = ad::add(ops, seq, mixed);
    return ops.apply(ad::prim::reshape(Shape{n, width}), {&out});
}

}  // namespace tta
