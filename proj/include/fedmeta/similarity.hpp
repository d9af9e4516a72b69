#pragma once

#include <cmath>
#include <span>

#include "fedmeta/error.hpp"

namespace fedmeta {

/// <u, v> / (|u| |v|) accumulated in 64-bit. A zero-norm operand yields 0 so
/// a dead embedding never injects NaN into the attention softmax.
template <class T>
double cosine_similarity(std::span<const T> u, std::span<const T> v) {
    require(u.size() == v.size(), ErrorKind::ShapeMismatch, "cosine similarity needs equal-length vectors");
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double a = u[i], b = v[i];
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if (uu == 0.0 || vv == 0.0) return 0.0;
    const double c = uv / (std::sqrt(uu) * std::sqrt(vv));
    return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

}  // namespace fedmeta
