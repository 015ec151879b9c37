#include "tta/linearize.hpp"

#include "tta/error.hpp"
#include "tta/parallel.hpp"

#include <numeric>

namespace tta {

LinearizedModel::LinearizedModel(Model base, TaskVector tau) : base_(std::move(base)), tau_(std::move(tau))
{
    base_.params.require_same_layout(tau_.params(), "linearized model");
}

Tensor linearized_forward(const LinearizedModel& lm, const Tensor& x)
{
    auto r = ad::forward_jvp(lm.base().net, lm.base().params, lm.tau().params(), x);
    r.primal += r.tangent;
    return std::move(r.primal);
}

LinearizedModel posthoc_linearize(const Model& base, const TaskVector& tau_nonlinear)
{
    return LinearizedModel(base, tau_nonlinear);
}

std::vector<Eigen::MatrixXd> class_jacobians(const Model& base, const Tensor& x, std::span<const std::size_t> classes,
                                             std::size_t threads)
{
    const Tensor batch = ad::detail::as_batch(x);
    const std::size_t n = batch.rows();
    const std::size_t c = base.spec().num_classes;
    const std::size_t p = base.params.size();
    for (auto j : classes) {
        if (j >= c) {
            throw LayoutError("class index " + std::to_string(j) + " out of range for " + std::to_string(c) +
                              " classes");
        }
    }
    std::vector<Eigen::MatrixXd> out(classes.size(), Eigen::MatrixXd(static_cast<Eigen::Index>(n),
                                                                      static_cast<Eigen::Index>(p)));
    parallel_for(n, threads, [&](std::size_t i) {
        ad::Tape tape(base.params);
        auto z = base.net(tape, batch.row(i).reshaped(Shape{1, batch.cols()}));
        for (std::size_t k = 0; k < classes.size(); ++k) {
            Tensor seed(Shape{1, c});
            seed[classes[k]] = 1.0;
            const auto g = tape.backward(z, seed);
            const auto v = g.values();
            for (std::size_t q = 0; q < p; ++q) {
                out[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = v[q];
            }
        }
    });
    return out;
}

Eigen::MatrixXd class_jacobian(const Model& base, const Tensor& x, std::size_t j, std::size_t threads)
{
    const std::size_t cls[] = {j};
    return std::move(class_jacobians(base, x, cls, threads).front());
}

Tensor ntk_kernel(const Model& base, const Tensor& x, const Tensor& xp)
{
    if (x.rank() != 1 || xp.rank() != 1) {
        throw LayoutError("ntk_kernel expects two single examples");
    }
    const std::size_t c = base.spec().num_classes;
    std::vector<std::size_t> classes(c);
    std::iota(classes.begin(), classes.end(), 0);
    const auto jx = class_jacobians(base, x, classes);
    const auto jxp = class_jacobians(base, xp, classes);
    Tensor k(Shape{c});
    for (std::size_t j = 0; j < c; ++j) {
        k[j] = jx[j].row(0).dot(jxp[j].row(0));
    }
    return k;
}

KernelPredictor kernel_fit(const Model& base, const Tensor& x, const Tensor& targets, std::optional<double> ridge,
                           std::size_t threads)
{
    const Tensor batch = ad::detail::as_batch(x);
    const std::size_t n = batch.rows();
    const std::size_t c = base.spec().num_classes;
    if (n == 0) {
        throw ContractError("kernel_fit needs at least one support point");
    }
    if (targets.rank() != 2 || targets.rows() != n || targets.cols() != c) {
        throw LayoutError("kernel_fit targets must be " + shape_string(Shape{n, c}) + ", got " +
                          shape_string(targets.shape()));
    }
    if (ridge && !(*ridge >= 0.0)) {
        throw ContractError("ridge must be non-negative");
    }
    const Tensor f0 = logits(base, batch);

    KernelPredictor kp{base, batch, {}, {}, {}};
    const auto nn = static_cast<Eigen::Index>(n);
    for (std::size_t j = 0; j < c; ++j) {
        // One class at a time keeps at most one n x P Jacobian alive.
        const Eigen::MatrixXd jac = class_jacobian(base, batch, j, threads);
        Eigen::MatrixXd k = jac * jac.transpose();
        const double lambda = ridge ? *ridge : default_relative_ridge * k.diagonal().mean();
        k.diagonal().array() += lambda;

        Eigen::VectorXd r(nn);
        for (std::size_t i = 0; i < n; ++i) {
            r(static_cast<Eigen::Index>(i)) = targets.at(i, j) - f0.at(i, j);
        }
        Eigen::VectorXd beta;
        if (lambda == 0.0) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
            if (!lu.isInvertible()) {
                throw NumericError("kernel_fit: Gram matrix for class " + std::to_string(j) +
                                   " is singular (rank " + std::to_string(lu.rank()) + " of " + std::to_string(n) +
                                   "); use a positive ridge");
            }
            beta = lu.solve(r);
        } else {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(k);
            if (ldlt.info() != Eigen::Success) {
                throw NumericError("kernel_fit: factorization failed for class " + std::to_string(j));
            }
            beta = ldlt.solve(r);
        }
        if (!beta.allFinite()) {
            throw NumericError("kernel_fit: non-finite coefficients for class " + std::to_string(j));
        }
        const Eigen::VectorXd w = jac.transpose() * beta;
        kp.weights.emplace_back(base.params.layout_ptr(), std::vector<double>(w.data(), w.data() + w.size()));
        kp.betas.push_back(std::move(beta));
        kp.ridges.push_back(lambda);
    }
    return kp;
}

Tensor kernel_predict(const KernelPredictor& kp, const Tensor& x)
{
    const std::size_t c = kp.betas.size();
    Tensor out = logits(kp.base, x);
    const Tensor batch = ad::detail::as_batch(x);
    for (std::size_t j = 0; j < c; ++j) {
        const auto r = ad::forward_jvp(kp.base.net, kp.base.params, kp.weights[j], batch);
        for (std::size_t i = 0; i < batch.rows(); ++i) {
            out[i * c + j] += r.tangent.at(i, j);
        }
    }
    return out;
}

}  // namespace tta
