#pragma once

#include "tta/models.hpp"

#include <concepts>

namespace tta {

// Anything that maps a batch of inputs to per-class logits.
template <class P>
concept Predictor = requires(const P& p, const Tensor& x) {
    { predict_logits(p, x) } -> std::convertible_to<Tensor>;
};

inline Tensor predict_logits(const Model& model, const Tensor& x) { return logits(model, x); }

template <Predictor P>
std::vector<int> predict_labels(const P& p, const Tensor& x)
{
    Tensor z = predict_logits(p, x);
    if (z.rank() == 1) {
        z = std::move(z).reshaped(Shape{1, z.size()});
    }
    return predict_rows(z);
}

}  // namespace tta
