#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "smoe/numkernel/params.hpp"

namespace smoe {

using ParamGrads = std::map<std::string, Tensor>;

/// Central-difference gradient estimate (f(p+h) - f(p-h)) / 2h for every
/// scalar entry of every trainable parameter. `f` is called with `params`
/// perturbed in place; each entry is restored before moving on.
template <class F>
ParamGrads finite_diff_grad(F&& f, ParamSet& params, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
    ParamGrads out;
    for (auto& [name, entry] : params) {
        if (!entry.trainable) continue;
        Tensor est(entry.value.shape());
        for (std::size_t i = 0; i < entry.value.size(); ++i) {
            const double saved = entry.value[i];
            entry.value[i] = saved + h;
            const double fp = f(static_cast<const ParamSet&>(params));
            entry.value[i] = saved - h;
            const double fm = f(static_cast<const ParamSet&>(params));
            entry.value[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw DomainError("finite_diff_grad: non-finite objective while perturbing " + name);
            est[i] = (fp - fm) / (2.0 * h);
        }
        out.emplace(name, std::move(est));
    }
    return out;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
    a.require_same_shape(b, "relative_error");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double denom = std::max({std::sqrt(squared_norm(a)), std::sqrt(squared_norm(b)), floor});
    return std::sqrt(diff) / denom;
}

}  // namespace smoe
