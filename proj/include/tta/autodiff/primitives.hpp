#pragma once

#include "tta/autodiff/tensor.hpp"

#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace tta::ad {

// A differentiable operation with forward, tangent (JVP) and cotangent (VJP) rules.
//
// Activations are rank-2 (rows = examples). Row-wise operations act on the last
// dimension. Every rule must be exact: the JVP of a primitive is linear in the
// input tangents and the VJP is its adjoint.
class Primitive {
public:
    virtual ~Primitive() = default;

    virtual std::string_view name() const = 0;
    virtual std::size_t arity() const = 0;

    virtual Tensor forward(std::span<const Tensor* const> in) const = 0;

    // tangents[i] == nullptr marks a constant input. At least one tangent is set.
    virtual Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> tangents,
                       const Tensor& out) const = 0;

    // Accumulates input cotangents into cin[i] (pre-sized, may be nullptr when not needed).
    virtual void vjp(std::span<const Tensor* const> in, const Tensor& out, const Tensor& cot,
                     std::span<Tensor* const> cin) const = 0;
};

using PrimitivePtr = std::shared_ptr<const Primitive>;

namespace prim {

// y = x W^T (+ b). x: (n, k), W: (o, k), b: (o). Two-input form omits the bias.
PrimitivePtr affine();
PrimitivePtr affine_no_bias();
PrimitivePtr relu();
PrimitivePtr tanh();
PrimitivePtr gelu();
// Row-wise.
PrimitivePtr softmax();
PrimitivePtr layer_norm(double eps = 1e-5);
PrimitivePtr l2_normalize();
// Elementwise; the second operand may also be a rank-1 row broadcast over rows.
PrimitivePtr add();
PrimitivePtr mul();
// Mean of all entries, scalar result.
PrimitivePtr mean();
PrimitivePtr reshape(Shape shape);
PrimitivePtr transpose();
// Mean over rows of -log softmax(z)[label].
PrimitivePtr cross_entropy(std::vector<int> labels);

}  // namespace prim

}  // namespace tta::ad
