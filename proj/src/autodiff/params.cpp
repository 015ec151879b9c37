#include "tta/autodiff/params.hpp"

#include "tta/error.hpp"

#include <algorithm>
#include <cmath>

namespace tta {

void ParamLayout::add(std::string name, Shape shape)
{
    if (name.empty()) {
        throw LayoutError("parameter names must be non-empty");
    }
    for (const auto& e : entries_) {
        if (e.name == name) {
            throw LayoutError("duplicate parameter name '" + name + "'");
        }
    }
    for (auto d : shape) {
        if (d == 0) {
            throw LayoutError("parameter '" + name + "' has a zero dimension");
        }
    }
    ParamEntry e{std::move(name), std::move(shape), total_len_};
    total_len_ += e.size();
    entries_.push_back(std::move(e));
}

const ParamEntry& ParamLayout::entry(std::size_t i) const
{
    if (i >= entries_.size()) {
        throw LayoutError("parameter index " + std::to_string(i) + " out of range");
    }
    return entries_[i];
}

std::size_t ParamLayout::index_of(std::string_view name) const
{
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) {
            return i;
        }
    }
    throw LayoutError("no parameter named '" + std::string(name) + "'");
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values))
{
    if (!layout_) {
        throw LayoutError("parameter vector without layout");
    }
    if (values_.size() != layout_->total_len()) {
        throw LayoutError("parameter vector length " + std::to_string(values_.size()) +
                          " does not match layout length " + std::to_string(layout_->total_len()));
    }
    if (!std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); })) {
        throw NumericError("parameter vector contains non-finite values");
    }
}

ParamVector::ParamVector(ParamLayout layout, std::vector<double> values)
    : ParamVector(std::make_shared<const ParamLayout>(std::move(layout)), std::move(values))
{
}

ParamVector ParamVector::zeros(std::shared_ptr<const ParamLayout> layout)
{
    const auto n = layout->total_len();
    return ParamVector(std::move(layout), std::vector<double>(n, 0.0));
}

ParamVector ParamVector::flatten(std::shared_ptr<const ParamLayout> layout, std::span<const Tensor> tensors)
{
    if (tensors.size() != layout->size()) {
        throw LayoutError("flatten: expected " + std::to_string(layout->size()) + " tensors, got " +
                          std::to_string(tensors.size()));
    }
    std::vector<double> values;
    values.reserve(layout->total_len());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& e = layout->entry(i);
        if (tensors[i].shape() != e.shape) {
            throw LayoutError("flatten: tensor for '" + e.name + "' has shape " + shape_string(tensors[i].shape()) +
                              ", layout wants " + shape_string(e.shape));
        }
        values.insert(values.end(), tensors[i].data().begin(), tensors[i].data().end());
    }
    return ParamVector(std::move(layout), std::move(values));
}

std::span<const double> ParamVector::entry_values(std::size_t i) const
{
    const auto& e = layout_->entry(i);
    return std::span<const double>(values_).subspan(e.offset, e.size());
}

Tensor ParamVector::unflatten(std::size_t i) const
{
    const auto& e = layout_->entry(i);
    auto v = entry_values(i);
    return Tensor(e.shape, std::vector<double>(v.begin(), v.end()));
}

std::vector<Tensor> ParamVector::unflatten() const
{
    std::vector<Tensor> out;
    out.reserve(layout_->size());
    for (std::size_t i = 0; i < layout_->size(); ++i) {
        out.push_back(unflatten(i));
    }
    return out;
}

bool ParamVector::same_layout(const ParamVector& other) const
{
    if (layout_ == other.layout_) {
        return true;
    }
    return layout_ && other.layout_ && *layout_ == *other.layout_;
}

void ParamVector::require_same_layout(const ParamVector& other, std::string_view what) const
{
    if (!same_layout(other)) {
        throw LayoutError(std::string(what) + ": parameter layouts differ");
    }
}

}  // namespace tta
