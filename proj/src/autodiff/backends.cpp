#include "tta/autodiff/backends.hpp"

#include "tta/error.hpp"

#include <string>

namespace tta::ad {

namespace {

thread_local EvaluationProbe g_probe;

void notify(const ParamVector& params)
{
    if (g_probe) {
        g_probe(params);
    }
}

void check_arity(const Primitive& p, std::size_t n)
{
    if (p.arity() != n) {
        throw ContractError(std::string(p.name()) + " takes " + std::to_string(p.arity()) + " inputs, got " +
                            std::to_string(n));
    }
}

void check_finite(const Tensor& t, const Primitive& p, const char* what)
{
    if (!t.all_finite()) {
        throw NumericError(std::string(p.name()) + " produced a non-finite " + what);
    }
}

}  // namespace

ScopedEvaluationProbe::ScopedEvaluationProbe(EvaluationProbe probe) : previous_(std::move(g_probe))
{
    g_probe = std::move(probe);
}

ScopedEvaluationProbe::~ScopedEvaluationProbe() { g_probe = std::move(previous_); }

// ---------------------------------------------------------------------------

EvalOps::EvalOps(const ParamVector& params) : params_(params.unflatten()) { notify(params); }

const Tensor& EvalOps::param(std::size_t i) const
{
    if (i >= params_.size()) {
        throw LayoutError("parameter index " + std::to_string(i) + " out of range");
    }
    return params_[i];
}

Tensor EvalOps::apply(const PrimitivePtr& p, std::initializer_list<const Tensor*> args) const
{
    check_arity(*p, args.size());
    Tensor y = p->forward(std::span<const Tensor* const>(args.begin(), args.size()));
    check_finite(y, *p, "value");
    return y;
}

// ---------------------------------------------------------------------------

JvpOps::JvpOps(const ParamVector& params, const ParamVector& direction)
{
    params.require_same_layout(direction, "forward_jvp direction");
    notify(params);
    auto primals = params.unflatten();
    auto tangents = direction.unflatten();
    params_.reserve(primals.size());
    for (std::size_t i = 0; i < primals.size(); ++i) {
        params_.push_back(Dual{std::move(primals[i]), std::move(tangents[i])});
    }
}

const Dual& JvpOps::param(std::size_t i) const
{
    if (i >= params_.size()) {
        throw LayoutError("parameter index " + std::to_string(i) + " out of range");
    }
    return params_[i];
}

Dual JvpOps::apply(const PrimitivePtr& p, std::initializer_list<const Dual*> args) const
{
    check_arity(*p, args.size());
    std::vector<const Tensor*> primals;
    std::vector<const Tensor*> tangents;
    bool any_tangent = false;
    for (const Dual* a : args) {
        primals.push_back(&a->primal);
        tangents.push_back(a->tangent ? &*a->tangent : nullptr);
        any_tangent = any_tangent || a->tangent.has_value();
    }
    Dual out{p->forward(primals), std::nullopt};
    check_finite(out.primal, *p, "value");
    if (any_tangent) {
        out.tangent = p->jvp(primals, tangents, out.primal);
        check_finite(*out.tangent, *p, "tangent");
    }
    return out;
}

// ---------------------------------------------------------------------------

Tape::Tape(const ParamVector& params) : params_(&params), param_nodes_(params.layout().size())
{
    notify(params);
}

Tape::Var Tape::constant(Tensor t)
{
    nodes_.push_back(Node{nullptr, {}, std::move(t), false, -1});
    return Var{nodes_.size() - 1};
}

Tape::Var Tape::param(std::size_t i)
{
    if (i >= param_nodes_.size()) {
        throw LayoutError("parameter index " + std::to_string(i) + " out of range");
    }
    if (!param_nodes_[i]) {
        nodes_.push_back(Node{nullptr, {}, params_->unflatten(i), true, static_cast<int>(i)});
        param_nodes_[i] = nodes_.size() - 1;
    }
    return Var{*param_nodes_[i]};
}

Tape::Var Tape::apply(const PrimitivePtr& p, std::initializer_list<const Var*> args)
{
    check_arity(*p, args.size());
    Node node;
    node.prim = p;
    std::vector<const Tensor*> in;
    for (const Var* a : args) {
        node.inputs.push_back(a->id);
        in.push_back(&nodes_[a->id].value);
        node.needs_grad = node.needs_grad || nodes_[a->id].needs_grad;
    }
    node.value = p->forward(in);
    check_finite(node.value, *p, "value");
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

ParamVector Tape::backward(Var root) const
{
    const auto& v = nodes_.at(root.id).value;
    if (v.size() != 1) {
        throw ContractError("reverse gradient needs a scalar output, got shape " + shape_string(v.shape()));
    }
    return backward(root, Tensor(v.shape(), 1.0));
}

ParamVector Tape::backward(Var root, const Tensor& seed) const
{
    if (root.id >= nodes_.size()) {
        throw ContractError("backward from an unknown variable");
    }
    if (seed.shape() != nodes_[root.id].value.shape()) {
        throw LayoutError("backward seed shape " + shape_string(seed.shape()) + " does not match output " +
                          shape_string(nodes_[root.id].value.shape()));
    }
    std::vector<std::optional<Tensor>> grads(root.id + 1);
    grads[root.id] = seed;
    for (std::size_t id = root.id + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!grads[id] || !node.prim || !node.needs_grad) {
            continue;
        }
        std::vector<const Tensor*> in;
        std::vector<Tensor*> cin;
        for (auto src : node.inputs) {
            in.push_back(&nodes_[src].value);
            if (nodes_[src].needs_grad) {
                if (!grads[src]) {
                    grads[src] = Tensor(nodes_[src].value.shape());
                }
                cin.push_back(&*grads[src]);
            } else {
                cin.push_back(nullptr);
            }
        }
        node.prim->vjp(in, node.value, *grads[id], cin);
        grads[id].reset();
    }
    std::vector<double> out(params_->size(), 0.0);
    const auto& layout = params_->layout();
    for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
        if (!param_nodes_[i] || *param_nodes_[i] > root.id || !grads[*param_nodes_[i]]) {
            continue;
        }
        const auto& g = *grads[*param_nodes_[i]];
        const auto off = layout.entry(i).offset;
        for (std::size_t k = 0; k < g.size(); ++k) {
            out[off + k] = g[k];
        }
    }
    return ParamVector(params_->layout_ptr(), std::move(out));
}

}  // namespace tta::ad
