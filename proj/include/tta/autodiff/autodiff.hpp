#pragma once

#include "tta/autodiff/backends.hpp"
#include "tta/error.hpp"

#include <concepts>
#include <string>
#include <utility>

namespace tta::ad {

// A function f(x; theta) written once over any backend. Inputs are batches
// (rows = examples) and outputs are (rows, outputs).
template <class F>
concept ParametricFunction = requires(const F& f, EvalOps& e, JvpOps& j, Tape& t, const Tensor& x) {
    { f.layout() } -> std::convertible_to<const ParamLayout&>;
    { f(e, x) } -> std::convertible_to<Tensor>;
    { f(j, x) } -> std::convertible_to<Dual>;
    { f(t, x) } -> std::convertible_to<Tape::Var>;
};

namespace detail {

inline Tensor as_batch(const Tensor& x)
{
    if (x.rank() == 1) {
        return x.reshaped(Shape{1, x.size()});
    }
    if (x.rank() != 2) {
        throw LayoutError("model inputs must be rank 1 or 2, got " + shape_string(x.shape()));
    }
    return x;
}

// A single-example input returns a rank-1 output.
inline Tensor unbatch(Tensor y, const Tensor& x)
{
    if (x.rank() == 1 && y.rank() == 2 && y.rows() == 1) {
        const auto c = y.cols();
        return std::move(y).reshaped(Shape{c});
    }
    return y;
}

template <class F>
void check_layout(const F& f, const ParamVector& params)
{
    if (!(f.layout() == params.layout())) {
        throw LayoutError("parameter layout does not match the model");
    }
}

}  // namespace detail

// f(x; params).
template <ParametricFunction F>
Tensor forward_eval(const F& f, const ParamVector& params, const Tensor& x)
{
    detail::check_layout(f, params);
    EvalOps ops(params);
    return detail::unbatch(f(ops, detail::as_batch(x)), x);
}

struct JvpResult {
    Tensor primal;
    Tensor tangent;
};

// (f(x; params0), d/dt f(x; params0 + t*direction) at t = 0) in one forward pass.
template <ParametricFunction F>
JvpResult forward_jvp(const F& f, const ParamVector& params0, const ParamVector& direction, const Tensor& x)
{
    detail::check_layout(f, params0);
    JvpOps ops(params0, direction);
    Dual out = f(ops, detail::as_batch(x));
    Tensor tangent = out.tangent ? std::move(*out.tangent) : Tensor(out.primal.shape());
    return {detail::unbatch(std::move(out.primal), x), detail::unbatch(std::move(tangent), x)};
}

// Central difference (f(p0 + h d) - f(p0 - h d)) / 2h.
template <ParametricFunction F>
Tensor finite_diff_directional(const F& f, const ParamVector& params0, const ParamVector& direction,
                               const Tensor& x, double h)
{
    if (!(h > 0.0)) {
        throw ContractError("finite difference step must be positive");
    }
    params0.require_same_layout(direction, "finite_diff_directional");
    std::vector<double> plus(params0.values().begin(), params0.values().end());
    std::vector<double> minus = plus;
    for (std::size_t i = 0; i < plus.size(); ++i) {
        plus[i] += h * direction[i];
        minus[i] -= h * direction[i];
    }
    Tensor hi = forward_eval(f, ParamVector(params0.layout_ptr(), std::move(plus)), x);
    Tensor lo = forward_eval(f, ParamVector(params0.layout_ptr(), std::move(minus)), x);
    hi -= lo;
    hi *= 1.0 / (2.0 * h);
    return hi;
}

// Pullback of an output cotangent: J(x; params)^T cotangent.
template <ParametricFunction F>
ParamVector vjp(const F& f, const ParamVector& params, const Tensor& x, const Tensor& cotangent)
{
    detail::check_layout(f, params);
    Tape tape(params);
    auto out = f(tape, detail::as_batch(x));
    const auto& shape = tape.value(out).shape();
    return tape.backward(out, cotangent.reshaped(shape));
}

struct ValueAndGrad {
    double value;
    ParamVector grad;
};

// `loss_fn(tape, batch)` must return a scalar variable.
template <class LossFn, class Batch>
ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParamVector& params, const Batch& batch)
{
    Tape tape(params);
    Tape::Var loss = loss_fn(tape, batch);
    const Tensor& v = tape.value(loss);
    if (v.size() != 1) {
        throw ContractError("loss must be scalar, got shape " + shape_string(v.shape()));
    }
    return {v[0], tape.backward(loss)};
}

template <class LossFn, class Batch>
ParamVector reverse_grad(const LossFn& loss_fn, const ParamVector& params, const Batch& batch)
{
    return value_and_grad(loss_fn, params, batch).grad;
}

}  // namespace tta::ad
