#pragma once

#include "tta/autodiff/autodiff.hpp"
#include "tta/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace tta::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        v = n(rng);
    }
    return t;
}

inline ParamVector random_params(const std::shared_ptr<const ParamLayout>& layout, std::mt19937_64& rng,
                                 double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(layout->total_len());
    for (auto& x : v) {
        x = n(rng);
    }
    return ParamVector(layout, std::move(v));
}

// Normwise relative error max|a-b| / max|b|.
inline double rel_err(const Tensor& a, const Tensor& b)
{
    return max_abs_diff(a, b) / std::max(max_abs(b), 1e-300);
}

inline double rel_err(std::span<const double> a, std::span<const double> b)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-300);
}

// f(x; theta) = x theta^T with theta of shape (1, d): a scalar linear model.
struct LinearModel {
    std::shared_ptr<const ParamLayout> lay;

    explicit LinearModel(std::size_t d)
    {
        auto l = std::make_shared<ParamLayout>();
        l->add("theta", Shape{1, d});
        lay = l;
    }
    const ParamLayout& layout() const { return *lay; }
    template <class Ops>
    typename Ops::Value operator()(Ops& ops, const Tensor& x) const
    {
        auto in = ops.constant(x);
        return ad::matmul_t(ops, in, ops.param(0));
    }
};

// f(x; theta) = theta * theta for a scalar theta, independent of x.
struct SquareModel {
    std::shared_ptr<const ParamLayout> lay;

    SquareModel()
    {
        auto l = std::make_shared<ParamLayout>();
        l->add("theta", Shape{1});
        lay = l;
    }
    const ParamLayout& layout() const { return *lay; }
    template <class Ops>
    typename Ops::Value operator()(Ops& ops, const Tensor&) const
    {
        const auto& t = ops.param(0);
        return ad::mul(ops, t, t);
    }
};

inline Network small_network(std::size_t d, std::vector<std::size_t> hidden, std::size_t e, std::size_t c,
                             Activation act = Activation::relu, std::uint64_t head_seed = 7,
                             bool attention = false, bool normalize = false)
{
    ModelSpec spec;
    spec.input_dim = d;
    spec.hidden = std::move(hidden);
    spec.embed_dim = e;
    spec.num_classes = c;
    spec.activation = act;
    spec.use_attention_block = attention;
    spec.normalize_output = normalize;
    return Network(spec, FrozenHead::orthonormal(c, e, head_seed));
}

}  // namespace tta::testing
