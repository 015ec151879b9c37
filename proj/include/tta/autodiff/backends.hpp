#pragma once

// Three interpreters for the same primitive set. Model code is written once as a
// template over an `Ops` backend and runs as plain evaluation (EvalOps), forward
// mode with dual tensors (JvpOps), or recorded on a tape for reverse mode (Tape).

#include "tta/autodiff/params.hpp"
#include "tta/autodiff/primitives.hpp"

#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

namespace tta::ad {

// Called with the parameter vector at which a backend is instantiated.
using EvaluationProbe = std::function<void(const ParamVector&)>;

// Installs a probe on the current thread for the lifetime of the object.
class ScopedEvaluationProbe {
public:
    explicit ScopedEvaluationProbe(EvaluationProbe probe);
    ~ScopedEvaluationProbe();
    ScopedEvaluationProbe(const ScopedEvaluationProbe&) = delete;
    ScopedEvaluationProbe& operator=(const ScopedEvaluationProbe&) = delete;

private:
    EvaluationProbe previous_;
};

class EvalOps {
public:
    using Value = Tensor;

    explicit EvalOps(const ParamVector& params);

    Value constant(Tensor t) const { return t; }
    const Value& param(std::size_t i) const;
    Value apply(const PrimitivePtr& p, std::initializer_list<const Value*> args) const;

private:
    std::vector<Tensor> params_;
};

// Primal value with an optional tangent; no tangent means "constant".
struct Dual {
    Tensor primal;
    std::optional<Tensor> tangent;
};

class JvpOps {
public:
    using Value = Dual;

    JvpOps(const ParamVector& params, const ParamVector& direction);

    Value constant(Tensor t) const { return Dual{std::move(t), std::nullopt}; }
    const Value& param(std::size_t i) const;
    Value apply(const PrimitivePtr& p, std::initializer_list<const Value*> args) const;

private:
    std::vector<Dual> params_;
};

class Tape {
public:
    struct Var {
        std::size_t id;
    };
    using Value = Var;

    // Every parameter is a differentiable leaf.
    explicit Tape(const ParamVector& params);

    Var constant(Tensor t);
    Var param(std::size_t i);
    Var apply(const PrimitivePtr& p, std::initializer_list<const Var*> args);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    // Reverse sweep seeded with d(out)/d(root) = seed. Returns the parameter gradient.
    ParamVector backward(Var root, const Tensor& seed) const;
    // Scalar root, seed 1.
    ParamVector backward(Var root) const;

private:
    struct Node {
        PrimitivePtr prim;
        std::vector<std::size_t> inputs;
        Tensor value;
        bool needs_grad = false;
        int param_index = -1;
    };

    const ParamVector* params_;
    std::vector<Node> nodes_;
    std::vector<std::optional<std::size_t>> param_nodes_;
};

// Helpers so model code reads as ordinary math.
template <class Ops>
auto affine(Ops& ops, const typename Ops::Value& x, const typename Ops::Value& w, const typename Ops::Value& b)
{
    return ops.apply(prim::affine(), {&x, &w, &b});
}

template <class Ops>
auto matmul_t(Ops& ops, const typename Ops::Value& x, const typename Ops::Value& w)
{
    return ops.apply(prim::affine_no_bias(), {&x, &w});
}

template <class Ops>
auto add(Ops& ops, const typename Ops::Value& a, const typename Ops::Value& b)
{
    return ops.apply(prim::add(), {&a, &b});
}

template <class Ops>
auto mul(Ops& ops, const typename Ops::Value& a, const typename Ops::Value& b)
{
    return ops.apply(prim::mul(), {&a, &b});
}

template <class Ops>
auto unary(Ops& ops, const PrimitivePtr& p, const typename Ops::Value& x)
{
    return ops.apply(p, {&x});
}

}  // namespace tta::ad
