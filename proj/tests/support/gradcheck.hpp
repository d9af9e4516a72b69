#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

namespace fedmeta::testing {

struct GradCheckReport {
    std::size_t checked = 0;
    std::size_t passed = 0;
    double worst_rel = 0.0;

    double pass_fraction() const { return checked == 0 ? 1.0 : static_cast<double>(passed) / checked; }
    GradCheckReport& operator+=(const GradCheckReport& o) {
        checked += o.checked;
        passed += o.passed;
        worst_rel = std::max(worst_rel, o.worst_rel);
        return *this;
    }
};

/// Central differences of `loss` around `x`, compared against `analytic`.
/// A component passes when |a - n| <= abs_tol or |a - n| <= rel_tol * max(|a|, |n|).
inline GradCheckReport check_gradient(std::span<double> x, std::span<const double> analytic,
                                      const std::function<double()>& loss, double step = 1e-4,
                                      double rel_tol = 1e-4, double abs_tol = 1e-6) {
    GradCheckReport r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = loss();
        x[i] = saved - step;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double diff = std::abs(numeric - analytic[i]);
        const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
        ++r.checked;
        if (diff <= abs_tol || diff <= rel_tol * scale) {
            ++r.passed;
        } else {
            r.worst_rel = std::max(r.worst_rel, diff / scale);
        }
    }
    return r;
}

}  // namespace fedmeta::testing
