#include "tta/autodiff/primitives.hpp"

#include "tta/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>

namespace tta::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;
using VecMapC = Eigen::Map<const Eigen::VectorXd>;
using VecMapM = Eigen::Map<Eigen::VectorXd>;

MapC as_mat(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
MapM as_mat(Tensor& t) { return MapM(t.data().data(), t.rows(), t.cols()); }

void require(bool ok, std::string_view prim, const std::string& what)
{
    if (!ok) {
        throw LayoutError(std::string(prim) + ": " + what);
    }
}

void require_rank2(const Tensor& t, std::string_view prim)
{
    require(t.rank() == 2, prim, "expects a rank-2 input, got " + shape_string(t.shape()));
}

// ---------------------------------------------------------------------------
// Affine
// ---------------------------------------------------------------------------

class Affine final : public Primitive {
public:
    explicit Affine(bool bias) : bias_(bias) {}

    std::string_view name() const override { return bias_ ? "affine" : "affine_no_bias"; }
    std::size_t arity() const override { return bias_ ? 3 : 2; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        check(in);
        const auto& x = *in[0];
        const auto& w = *in[1];
        Tensor y(Shape{x.rows(), w.rows()});
        as_mat(y).noalias() = as_mat(x) * as_mat(w).transpose();
        if (bias_) {
            add_bias(y, *in[2]);
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& out) const override
    {
        Tensor dy(out.shape());
        auto dym = as_mat(dy);
        if (t[0]) {
            dym.noalias() += as_mat(*t[0]) * as_mat(*in[1]).transpose();
        }
        if (t[1]) {
            dym.noalias() += as_mat(*in[0]) * as_mat(*t[1]).transpose();
        }
        if (bias_ && t[2]) {
            add_bias(dy, *t[2]);
        }
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        auto gm = as_mat(g);
        if (cin[0]) {
            as_mat(*cin[0]).noalias() += gm * as_mat(*in[1]);
        }
        if (cin[1]) {
            as_mat(*cin[1]).noalias() += gm.transpose() * as_mat(*in[0]);
        }
        if (bias_ && cin[2]) {
            VecMapM(cin[2]->data().data(), static_cast<Eigen::Index>(cin[2]->size())) += gm.colwise().sum().transpose();
        }
    }

private:
    void check(std::span<const Tensor* const> in) const
    {
        const auto& x = *in[0];
        const auto& w = *in[1];
        require_rank2(x, name());
        require(w.rank() == 2, name(), "weight must be rank-2, got " + shape_string(w.shape()));
        require(x.cols() == w.cols(), name(),
                "input width " + std::to_string(x.cols()) + " does not match weight " + shape_string(w.shape()));
        if (bias_) {
            const auto& b = *in[2];
            require(b.rank() == 1 && b.size() == w.rows(), name(),
                    "bias shape " + shape_string(b.shape()) + " does not match weight " + shape_string(w.shape()));
        }
    }

    static void add_bias(Tensor& y, const Tensor& b)
    {
        const auto n = y.rows();
        const auto o = y.cols();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < o; ++c) {
                y[r * o + c] += b[c];
            }
        }
    }

    bool bias_;
};

// ---------------------------------------------------------------------------
// Elementwise unary activations
// ---------------------------------------------------------------------------

template <class Derived>
class Unary : public Primitive {
public:
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        Tensor y = *in[0];
        for (auto& v : y.data()) {
            v = Derived::f(v);
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& out) const override
    {
        Tensor dy(out.shape());
        const auto& x = *in[0];
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dy[i] = Derived::df(x[i], out[i]) * (*t[0])[i];
        }
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (!cin[0]) {
            return;
        }
        const auto& x = *in[0];
        auto& dx = *cin[0];
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] += Derived::df(x[i], out[i]) * g[i];
        }
    }
};

class Relu final : public Unary<Relu> {
public:
    std::string_view name() const override { return "relu"; }
    static double f(double x) { return x > 0.0 ? x : 0.0; }
    static double df(double x, double) { return x > 0.0 ? 1.0 : 0.0; }
};

class Tanh final : public Unary<Tanh> {
public:
    std::string_view name() const override { return "tanh"; }
    static double f(double x) { return std::tanh(x); }
    static double df(double, double y) { return 1.0 - y * y; }
};

// Exact (erf) GELU.
class Gelu final : public Unary<Gelu> {
public:
    std::string_view name() const override { return "gelu"; }
    static double f(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
    static double df(double x, double)
    {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
    }
};

// ---------------------------------------------------------------------------
// Row-wise normalizations
// ---------------------------------------------------------------------------

class Softmax final : public Primitive {
public:
    std::string_view name() const override { return "softmax"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        require_rank2(*in[0], name());
        Tensor y = *in[0];
        const auto n = y.rows();
        const auto k = y.cols();
        for (std::size_t r = 0; r < n; ++r) {
            double* row = y.data().data() + r * k;
            double m = row[0];
            for (std::size_t c = 1; c < k; ++c) {
                m = std::max(m, row[c]);
            }
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                row[c] = std::exp(row[c] - m);
                s += row[c];
            }
            for (std::size_t c = 0; c < k; ++c) {
                row[c] /= s;
            }
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const>, std::span<const Tensor* const> t, const Tensor& y) const override
    {
        Tensor dy(y.shape());
        apply_jacobian(y, *t[0], dy);
        return dy;
    }

    void vjp(std::span<const Tensor* const>, const Tensor& y, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (cin[0]) {
            // The softmax Jacobian is symmetric.
            apply_jacobian(y, g, *cin[0]);
        }
    }

private:
    static void apply_jacobian(const Tensor& y, const Tensor& v, Tensor& acc)
    {
        const auto n = y.rows();
        const auto k = y.cols();
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                dot += y[r * k + c] * v[r * k + c];
            }
            for (std::size_t c = 0; c < k; ++c) {
                acc[r * k + c] += y[r * k + c] * (v[r * k + c] - dot);
            }
        }
    }
};

// (x - mean) / sqrt(var + eps), no learned gain or shift.
class LayerNorm final : public Primitive {
public:
    explicit LayerNorm(double eps) : eps_(eps) {}

    std::string_view name() const override { return "layer_norm"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        require_rank2(*in[0], name());
        const auto& x = *in[0];
        Tensor y(x.shape());
        const auto n = x.rows();
        const auto k = x.cols();
        for (std::size_t r = 0; r < n; ++r) {
            const auto [mu, sigma] = moments(x, r);
            for (std::size_t c = 0; c < k; ++c) {
                y[r * k + c] = (x[r * k + c] - mu) / sigma;
            }
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& y) const override
    {
        Tensor dy(y.shape());
        apply_jacobian(*in[0], y, *t[0], dy);
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (cin[0]) {
            // Symmetric Jacobian: (I - 11^T/k - y y^T/k) / sigma.
            apply_jacobian(*in[0], y, g, *cin[0]);
        }
    }

private:
    std::pair<double, double> moments(const Tensor& x, std::size_t r) const
    {
        const auto k = x.cols();
        double mu = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            mu += x[r * k + c];
        }
        mu /= static_cast<double>(k);
        double var = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = x[r * k + c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(k);
        return {mu, std::sqrt(var + eps_)};
    }

    void apply_jacobian(const Tensor& x, const Tensor& y, const Tensor& v, Tensor& acc) const
    {
        const auto n = y.rows();
        const auto k = y.cols();
        const double kd = static_cast<double>(k);
        for (std::size_t r = 0; r < n; ++r) {
            const double sigma = moments(x, r).second;
            double mv = 0.0;
            double myv = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                mv += v[r * k + c];
                myv += y[r * k + c] * v[r * k + c];
            }
            mv /= kd;
            myv /= kd;
            for (std::size_t c = 0; c < k; ++c) {
                acc[r * k + c] += (v[r * k + c] - mv - y[r * k + c] * myv) / sigma;
            }
        }
    }

    double eps_;
};

class L2Normalize final : public Primitive {
public:
    std::string_view name() const override { return "l2_normalize"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        require_rank2(*in[0], name());
        const auto& x = *in[0];
        Tensor y(x.shape());
        const auto n = x.rows();
        const auto k = x.cols();
        for (std::size_t r = 0; r < n; ++r) {
            const double nrm = row_norm(x, r);
            for (std::size_t c = 0; c < k; ++c) {
                y[r * k + c] = x[r * k + c] / nrm;
            }
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& y) const override
    {
        Tensor dy(y.shape());
        apply_jacobian(*in[0], y, *t[0], dy);
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor& y, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (cin[0]) {
            apply_jacobian(*in[0], y, g, *cin[0]);
        }
    }

private:
    static double row_norm(const Tensor& x, std::size_t r)
    {
        const auto k = x.cols();
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            s += x[r * k + c] * x[r * k + c];
        }
        if (s == 0.0) {
            throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
        }
        return std::sqrt(s);
    }

    // (I - y y^T) / |x|, symmetric.
    static void apply_jacobian(const Tensor& x, const Tensor& y, const Tensor& v, Tensor& acc)
    {
        const auto n = y.rows();
        const auto k = y.cols();
        for (std::size_t r = 0; r < n; ++r) {
            const double nrm = row_norm(x, r);
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                dot += y[r * k + c] * v[r * k + c];
            }
            for (std::size_t c = 0; c < k; ++c) {
                acc[r * k + c] += (v[r * k + c] - y[r * k + c] * dot) / nrm;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Binary elementwise with optional row broadcast of the second operand
// ---------------------------------------------------------------------------

enum class Broadcast { none, row };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, std::string_view prim)
{
    if (a.shape() == b.shape()) {
        return Broadcast::none;
    }
    if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) {
        return Broadcast::row;
    }
    throw LayoutError(std::string(prim) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                      shape_string(b.shape()));
}

// Value of b aligned with flat index i of a.
inline double bval(const Tensor& b, Broadcast kind, std::size_t i, std::size_t cols)
{
    return kind == Broadcast::none ? b[i] : b[i % cols];
}

void reduce_into(const Tensor& full, Broadcast kind, Tensor& target)
{
    if (kind == Broadcast::none) {
        target += full;
        return;
    }
    const auto k = target.size();
    for (std::size_t i = 0; i < full.size(); ++i) {
        target[i % k] += full[i];
    }
}

class Add final : public Primitive {
public:
    std::string_view name() const override { return "add"; }
    std::size_t arity() const override { return 2; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        const auto& a = *in[0];
        const auto& b = *in[1];
        const auto kind = broadcast_kind(a, b, name());
        const auto cols = a.rank() == 2 ? a.cols() : 1;
        Tensor y = a;
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] += bval(b, kind, i, cols);
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& out) const override
    {
        const auto kind = broadcast_kind(*in[0], *in[1], name());
        const auto cols = out.rank() == 2 ? out.cols() : 1;
        Tensor dy = t[0] ? *t[0] : Tensor(out.shape());
        if (t[1]) {
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dy[i] += bval(*t[1], kind, i, cols);
            }
        }
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        const auto kind = broadcast_kind(*in[0], *in[1], name());
        if (cin[0]) {
            *cin[0] += g;
        }
        if (cin[1]) {
            reduce_into(g, kind, *cin[1]);
        }
    }
};

class Mul final : public Primitive {
public:
    std::string_view name() const override { return "mul"; }
    std::size_t arity() const override { return 2; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        const auto& a = *in[0];
        const auto& b = *in[1];
        const auto kind = broadcast_kind(a, b, name());
        const auto cols = a.rank() == 2 ? a.cols() : 1;
        Tensor y = a;
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] *= bval(b, kind, i, cols);
        }
        return y;
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor& out) const override
    {
        const auto& a = *in[0];
        const auto& b = *in[1];
        const auto kind = broadcast_kind(a, b, name());
        const auto cols = out.rank() == 2 ? out.cols() : 1;
        Tensor dy(out.shape());
        for (std::size_t i = 0; i < dy.size(); ++i) {
            double v = 0.0;
            if (t[0]) {
                v += (*t[0])[i] * bval(b, kind, i, cols);
            }
            if (t[1]) {
                v += a[i] * bval(*t[1], kind, i, cols);
            }
            dy[i] = v;
        }
        return dy;
    }

    void vjp(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        const auto& a = *in[0];
        const auto& b = *in[1];
        const auto kind = broadcast_kind(a, b, name());
        const auto cols = a.rank() == 2 ? a.cols() : 1;
        if (cin[0]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*cin[0])[i] += g[i] * bval(b, kind, i, cols);
            }
        }
        if (cin[1]) {
            Tensor ga(a.shape());
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] = g[i] * a[i];
            }
            reduce_into(ga, kind, *cin[1]);
        }
    }
};

// ---------------------------------------------------------------------------
// Reductions and structural ops
// ---------------------------------------------------------------------------

class Mean final : public Primitive {
public:
    std::string_view name() const override { return "mean"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        const auto& x = *in[0];
        double s = 0.0;
        for (double v : x.data()) {
            s += v;
        }
        return Tensor::scalar(s / static_cast<double>(x.size()));
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor&) const override
    {
        double s = 0.0;
        for (double v : t[0]->data()) {
            s += v;
        }
        return Tensor::scalar(s / static_cast<double>(in[0]->size()));
    }

    void vjp(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (!cin[0]) {
            return;
        }
        const double share = g[0] / static_cast<double>(in[0]->size());
        for (auto& v : cin[0]->data()) {
            v += share;
        }
    }
};

class Reshape final : public Primitive {
public:
    explicit Reshape(Shape shape) : shape_(std::move(shape)) {}

    std::string_view name() const override { return "reshape"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        require(shape_size(shape_) == in[0]->size(), name(),
                "cannot reshape " + shape_string(in[0]->shape()) + " to " + shape_string(shape_));
        return in[0]->reshaped(shape_);
    }

    Tensor jvp(std::span<const Tensor* const>, std::span<const Tensor* const> t, const Tensor&) const override
    {
        return t[0]->reshaped(shape_);
    }

    void vjp(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (cin[0]) {
            *cin[0] += g.reshaped(cin[0]->shape());
        }
    }

private:
    Shape shape_;
};

class Transpose final : public Primitive {
public:
    std::string_view name() const override { return "transpose"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        require_rank2(*in[0], name());
        return transposed(*in[0]);
    }

    Tensor jvp(std::span<const Tensor* const>, std::span<const Tensor* const> t, const Tensor&) const override
    {
        return transposed(*t[0]);
    }

    void vjp(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (cin[0]) {
            *cin[0] += transposed(g);
        }
    }

private:
    static Tensor transposed(const Tensor& x)
    {
        Tensor y(Shape{x.cols(), x.rows()});
        as_mat(y) = as_mat(x).transpose();
        return y;
    }
};

class CrossEntropy final : public Primitive {
public:
    explicit CrossEntropy(std::vector<int> labels) : labels_(std::move(labels)) {}

    std::string_view name() const override { return "cross_entropy"; }
    std::size_t arity() const override { return 1; }

    Tensor forward(std::span<const Tensor* const> in) const override
    {
        const auto& z = *in[0];
        check(z);
        const auto n = z.rows();
        const auto k = z.cols();
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double* row = z.data().data() + r * k;
            double m = row[0];
            for (std::size_t c = 1; c < k; ++c) {
                m = std::max(m, row[c]);
            }
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                s += std::exp(row[c] - m);
            }
            total += m + std::log(s) - row[labels_[r]];
        }
        return Tensor::scalar(total / static_cast<double>(n));
    }

    Tensor jvp(std::span<const Tensor* const> in, std::span<const Tensor* const> t, const Tensor&) const override
    {
        const auto d = residual(*in[0]);
        double s = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            s += d[i] * (*t[0])[i];
        }
        return Tensor::scalar(s / static_cast<double>(in[0]->rows()));
    }

    void vjp(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
             std::span<Tensor* const> cin) const override
    {
        if (!cin[0]) {
            return;
        }
        const auto d = residual(*in[0]);
        const double scale = g[0] / static_cast<double>(in[0]->rows());
        for (std::size_t i = 0; i < d.size(); ++i) {
            (*cin[0])[i] += scale * d[i];
        }
    }

private:
    void check(const Tensor& z) const
    {
        require_rank2(z, name());
        require(z.rows() == labels_.size(), name(),
                std::to_string(labels_.size()) + " labels for " + std::to_string(z.rows()) + " rows");
        for (int l : labels_) {
            require(l >= 0 && static_cast<std::size_t>(l) < z.cols(), name(),
                    "label " + std::to_string(l) + " out of range");
        }
    }

    // softmax(z) - onehot(label)
    Tensor residual(const Tensor& z) const
    {
        check(z);
        const Tensor* args[] = {&z};
        Tensor p = Softmax().forward(args);
        const auto k = z.cols();
        for (std::size_t r = 0; r < labels_.size(); ++r) {
            p[r * k + static_cast<std::size_t>(labels_[r])] -= 1.0;
        }
        return p;
    }

    std::vector<int> labels_;
};

}  // namespace

namespace prim {

PrimitivePtr affine()
{
    static const auto p = std::make_shared<const Affine>(true);
    return p;
}
PrimitivePtr affine_no_bias()
{
    static const auto p = std::make_shared<const Affine>(false);
    return p;
}
PrimitivePtr relu()
{
    static const auto p = std::make_shared<const Relu>();
    return p;
}
PrimitivePtr tanh()
{
    static const auto p = std::make_shared<const Tanh>();
    return p;
}
PrimitivePtr gelu()
{
    static const auto p = std::make_shared<const Gelu>();
    return p;
}
PrimitivePtr softmax()
{
    static const auto p = std::make_shared<const Softmax>();
    return p;
}
PrimitivePtr layer_norm(double eps) { return std::make_shared<const LayerNorm>(eps); }
PrimitivePtr l2_normalize()
{
    static const auto p = std::make_shared<const L2Normalize>();
    return p;
}
PrimitivePtr add()
{
    static const auto p = std::make_shared<const Add>();
    return p;
}
PrimitivePtr mul()
{
    static const auto p = std::make_shared<const Mul>();
    return p;
}
PrimitivePtr mean()
{
    static const auto p = std::make_shared<const Mean>();
    return p;
}
PrimitivePtr reshape(Shape shape) { return std::make_shared<const Reshape>(std::move(shape)); }
PrimitivePtr transpose()
{
    static const auto p = std::make_shared<const Transpose>();
    return p;
}
PrimitivePtr cross_entropy(std::vector<int> labels) { return std::make_shared<const CrossEntropy>(std::move(labels)); }

}  // namespace prim

}  // namespace tta::ad
