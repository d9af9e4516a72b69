#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmeta/error.hpp"
#include "fedmeta/tensor.hpp"

namespace fedmeta {

struct Segment {
    std::string name;
    Shape shape;

    std::size_t size() const { return shape_size(shape); }
    bool operator==(const Segment&) const = default;
};

/// Ordered list of named segments describing how a flat parameter array is
/// sliced into layers.
class Layout {
public:
    Layout() = default;
    explicit Layout(std::vector<Segment> segments);

    const std::vector<Segment>& segments() const { return segments_; }
    std::size_t total_size() const { return total_; }
    std::size_t offset(std::size_t segment_index) const { return offsets_.at(segment_index); }
    std::optional<std::size_t> find(const std::string& name) const;

    /// Concatenation, used to append matching-head segments to a network.
    Layout appended(const Layout& other) const;

    bool operator==(const Layout& other) const { return segments_ == other.segments_; }

private:
    std::vector<Segment> segments_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const Layout>;

inline bool same_layout(const LayoutPtr& a, const LayoutPtr& b) {
    return a == b || (a && b && *a == *b);
}

/// Flat parameters plus their layout. Element-wise arithmetic requires
/// identical layouts and throws ErrorKind::LayoutMismatch otherwise.
template <class T>
class BasicParamVector {
public:
    using value_type = T;

    BasicParamVector() : layout_(std::make_shared<Layout>()) {}
    explicit BasicParamVector(LayoutPtr layout, T fill = T{})
        : layout_(std::move(layout)), values_(layout_->total_size(), fill) {}
    BasicParamVector(LayoutPtr layout, std::vector<T> values)
        : layout_(std::move(layout)), values_(std::move(values)) {
        require(values_.size() == layout_->total_size(), ErrorKind::LayoutMismatch,
                "value count " + std::to_string(values_.size()) + " does not match layout size " +
                    std::to_string(layout_->total_size()));
    }

    const Layout& layout() const { return *layout_; }
    const LayoutPtr& layout_ptr() const { return layout_; }
    std::size_t size() const { return values_.size(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::span<T> segment(std::size_t index) {
        return {values_.data() + layout_->offset(index), layout_->segments()[index].size()};
    }
    std::span<const T> segment(std::size_t index) const {
        return {values_.data() + layout_->offset(index), layout_->segments()[index].size()};
    }
    std::span<T> segment(const std::string& name) { return segment(index_of(name)); }
    std::span<const T> segment(const std::string& name) const { return segment(index_of(name)); }

    void check_compatible(const BasicParamVector& other) const {
        require(same_layout(layout_, other.layout_), ErrorKind::LayoutMismatch,
                "parameter layouts differ");
    }

    BasicParamVector& operator+=(const BasicParamVector& other) {
        check_compatible(other);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
        return *this;
    }
    BasicParamVector& operator-=(const BasicParamVector& other) {
        check_compatible(other);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
        return *this;
    }
    BasicParamVector& operator*=(T scale) {
        for (auto& v : values_) v *= scale;
        return *this;
    }

    bool all_finite() const {
        for (const auto& v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

    template <class U>
    BasicParamVector<U> cast() const {
        return BasicParamVector<U>(layout_, std::vector<U>(values_.begin(), values_.end()));
    }

    bool operator==(const BasicParamVector& other) const {
        return same_layout(layout_, other.layout_) && values_ == other.values_;
    }

private:
    std::size_t index_of(const std::string& name) const {
        auto idx = layout_->find(name);
        require(idx.has_value(), ErrorKind::LayoutMismatch, "no segment named '" + name + "'");
        return *idx;
    }

    LayoutPtr layout_;
    std::vector<T> values_;
};

using ParamVector = BasicParamVector<float>;

template <class T>
BasicParamVector<T> operator+(BasicParamVector<T> a, const BasicParamVector<T>& b) {
    a += b;
    return a;
}

template <class T>
BasicParamVector<T> operator-(BasicParamVector<T> a, const BasicParamVector<T>& b) {
    a -= b;
    return a;
}

template <class T>
BasicParamVector<T> operator*(T scale, BasicParamVector<T> a) {
    a *= scale;
    return a;
}

/// Euclidean norm with 64-bit accumulation.
template <class T>
double l2_norm(const BasicParamVector<T>& p) {
    double sum = 0.0;
    for (T v : p.values()) sum += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sum);
}

/// Concatenates two parameter vectors; the result's layout is a.layout() then b.layout().
template <class T>
BasicParamVector<T> concat(const BasicParamVector<T>& a, const BasicParamVector<T>& b) {
    auto layout = std::make_shared<Layout>(a.layout().appended(b.layout()));
    std::vector<T> values(a.values().begin(), a.values().end());
    values.insert(values.end(), b.values().begin(), b.values().end());
    return BasicParamVector<T>(std::move(layout), std::move(values));
}

/// Copies the segments named in `layout` out of `source`.
template <class T>
BasicParamVector<T> extract(const BasicParamVector<T>& source, LayoutPtr layout) {
    BasicParamVector<T> out(layout);
    for (std::size_t i = 0; i < layout->segments().size(); ++i) {
        const auto& seg = layout->segments()[i];
        auto src_index = source.layout().find(seg.name);
        require(src_index.has_value() && source.layout().segments()[*src_index].shape == seg.shape,
                ErrorKind::LayoutMismatch, "segment '" + seg.name + "' missing or reshaped");
        auto src = source.segment(*src_index);
        std::copy(src.begin(), src.end(), out.segment(i).begin());
    }
    return out;
}

}  // namespace fedmeta
