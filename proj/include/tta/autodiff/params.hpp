#pragma once

#include "tta/autodiff/tensor.hpp"

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tta {

struct ParamEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;

    std::size_t size() const { return shape_size(shape); }
    friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Ordered, contiguous naming of a flat parameter vector.
class ParamLayout {
public:
    ParamLayout() = default;

    // Appends an entry directly after the last one.
    void add(std::string name, Shape shape);

    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t total_len() const noexcept { return total_len_; }
    const ParamEntry& entry(std::size_t i) const;
    std::size_t index_of(std::string_view name) const;

    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

private:
    std::vector<ParamEntry> entries_;
    std::size_t total_len_ = 0;
};

// Flat weight vector tagged with its layout. Values are always finite.
class ParamVector {
public:
    ParamVector() = default;
    ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values);
    ParamVector(ParamLayout layout, std::vector<double> values);

    static ParamVector zeros(std::shared_ptr<const ParamLayout> layout);
    static ParamVector flatten(std::shared_ptr<const ParamLayout> layout, std::span<const Tensor> tensors);

    const ParamLayout& layout() const { return *layout_; }
    const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::span<const double> values() const noexcept { return values_; }
    // Mutable access; callers must keep values finite.
    std::span<double> mutable_values() noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<const double> entry_values(std::size_t i) const;
    Tensor unflatten(std::size_t i) const;
    std::vector<Tensor> unflatten() const;

    bool same_layout(const ParamVector& other) const;
    // Throws LayoutError naming `what` when layouts differ.
    void require_same_layout(const ParamVector& other, std::string_view what) const;

    friend bool operator==(const ParamVector& a, const ParamVector& b)
    {
        return a.same_layout(b) && a.values_ == b.values_;
    }

private:
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<double> values_;
};

}  // namespace tta
