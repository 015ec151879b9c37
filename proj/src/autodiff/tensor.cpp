#include "tta/autodiff/tensor.hpp"

#include "tta/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace tta {

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += ", ";
        }
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

namespace {

void check_dims(const Shape& shape)
{
    for (auto d : shape) {
        if (d == 0) {
            throw LayoutError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    check_dims(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    check_dims(shape_);
    if (data_.size() != shape_size(shape_)) {
        throw LayoutError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::initializer_list<double> values) { return vector(std::vector<double>(values)); }

Tensor Tensor::vector(std::vector<double> values)
{
    const auto n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const
{
    if (rank() != 2) {
        throw LayoutError("rows() needs a rank-2 tensor, got " + shape_string(shape_));
    }
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (rank() != 2) {
        throw LayoutError("cols() needs a rank-2 tensor, got " + shape_string(shape_));
    }
    return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const&
{
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) &&
{
    return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::row(std::size_t r) const
{
    const auto c = cols();
    if (r >= rows()) {
        throw LayoutError("row index out of range");
    }
    return Tensor(Shape{c}, std::vector<double>(data_.begin() + r * c, data_.begin() + (r + 1) * c));
}

Tensor Tensor::rows(std::size_t begin, std::size_t count) const
{
    const auto c = cols();
    if (count == 0 || begin + count > rows()) {
        throw LayoutError("row range out of bounds");
    }
    return Tensor(Shape{count, c},
                  std::vector<double>(data_.begin() + begin * c, data_.begin() + (begin + count) * c));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const
{
    const auto c = cols();
    const auto n = rows();
    std::vector<double> out;
    out.reserve(indices.size() * c);
    for (auto i : indices) {
        if (i >= n) {
            throw LayoutError("gather index out of range");
        }
        out.insert(out.end(), data_.begin() + i * c, data_.begin() + (i + 1) * c);
    }
    return Tensor(Shape{indices.size(), c}, std::move(out));
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    if (other.shape_ != shape_) {
        throw LayoutError("shape mismatch in +=: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::plus<>());
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other)
{
    if (other.shape_ != shape_) {
        throw LayoutError("shape mismatch in -=: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    }
    std::transform(data_.begin(), data_.end(), other.data_.begin(), data_.begin(), std::minus<>());
    return *this;
}

Tensor& Tensor::operator*=(double s)
{
    for (auto& v : data_) {
        v *= s;
    }
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(double s, Tensor a) { return a *= s; }

Tensor concat_rows(std::span<const Tensor> parts)
{
    if (parts.empty()) {
        throw LayoutError("concat_rows of nothing");
    }
    const auto c = parts.front().cols();
    std::size_t n = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
        if (p.cols() != c) {
            throw LayoutError("concat_rows column mismatch");
        }
        n += p.rows();
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return Tensor(Shape{n, c}, std::move(out));
}

double max_abs(const Tensor& t)
{
    double m = 0.0;
    for (double v : t.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw LayoutError("max_abs_diff shape mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace tta
