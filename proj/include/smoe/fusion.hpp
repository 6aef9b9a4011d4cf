#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "smoe/experts.hpp"

namespace smoe {

namespace pname {
inline const std::string gate_w = "gate.W";
inline const std::string norm_gamma = "norm.gamma";
inline const std::string norm_beta = "norm.beta";
}  // namespace pname

/// Mixture weights over (AE, ORE, BE, GE).
struct GateWeights {
    std::array<double, kExperts> w{};

    static GateWeights uniform() { return {{0.25, 0.25, 0.25, 0.25}}; }

    static GateWeights from(const Tensor& t) {
        if (t.size() != kExperts) throw DimensionError("gate weights need 4 entries, got shape " + to_string(t.shape()));
        GateWeights g;
        for (std::size_t i = 0; i < kExperts; ++i) g.w[i] = t[i];
        return g;
    }

    double operator[](std::size_t i) const { return w.at(i); }
    double operator[](ExpertId e) const { return w.at(static_cast<std::size_t>(e)); }
    double global() const { return w[static_cast<std::size_t>(ExpertId::GE)]; }

    double sum() const { return w[0] + w[1] + w[2] + w[3]; }

    /// Entries strictly inside (0,1) and summing to 1 within `tol`.
    bool valid(double tol = 1e-12) const {
        for (double v : w)
            if (!(v > 0.0 && v < 1.0)) return false;
        return std::abs(sum() - 1.0) <= tol;
    }

    /// Spread max - min over the three local experts.
    double local_spread() const {
        const double hi = std::max({w[0], w[1], w[2]});
        const double lo = std::min({w[0], w[1], w[2]});
        return hi - lo;
    }

    friend bool operator==(const GateWeights&, const GateWeights&) = default;
};

namespace detail {
inline void check_experts(std::span<const ExpertOutput, kExperts> experts) {
    const Shape& shape = experts[0].value().shape();
    for (std::size_t i = 0; i < kExperts; ++i) {
        if (static_cast<std::size_t>(experts[i].tag) != i)
            throw std::invalid_argument("expert outputs must be ordered AE, ORE, BE, GE");
        if (experts[i].value().shape() != shape)
            throw DimensionError(std::string("expert ") + expert_name(experts[i].tag) + " output " +
                                 to_string(experts[i].value().shape()) + " differs from " + to_string(shape));
    }
}

/// S_AE + S_ORE + S_BE + S_GE, summed in that fixed order.
inline Var expert_sum(std::span<const ExpertOutput, kExperts> experts) {
    Var s = experts[0].rows;
    for (std::size_t i = 1; i < kExperts; ++i) s = add(s, experts[i].rows);
    return s;
}
}  // namespace detail

/// Expert gate g = softmax(W_g . pooled), where pooled is the frame mean of
/// sum_i S_i. One (1 x 4) gate per video.
inline Var gate(Tape& tape, const ParamSet& params, std::span<const ExpertOutput, kExperts> experts) {
    detail::check_experts(experts);
    Var pooled = mean_rows(detail::expert_sum(experts));
    Var logits = matmul(pooled, transpose(tape.param(params, pname::gate_w)));
    return softmax(logits, 1);
}

/// Gate held at 0.25 per expert (the expert-gate ablation).
inline Var uniform_gate(Tape& tape) { return tape.constant(Tensor({1, kExperts}, 0.25)); }

struct FusedOutput {
    Var rows;
    Var gate;
    GateWeights weights() const { return GateWeights::from(gate.value()); }
};

/// O = LayerNorm(sum_i g_i S_i), row by row.
inline FusedOutput fuse(Tape& tape, const ParamSet& params, std::span<const ExpertOutput, kExperts> experts, Var g,
                        double eps = 1e-5) {
    detail::check_experts(experts);
    if (g.value().size() != kExperts) throw DimensionError("fuse: gate must have 4 entries");
    Var mix = scale_by(experts[0].rows, g, 0);
    for (std::size_t i = 1; i < kExperts; ++i) mix = add(mix, scale_by(experts[i].rows, g, i));
    Var o = layer_norm(mix, tape.param(params, pname::norm_gamma), tape.param(params, pname::norm_beta), eps);
    return {o, g};
}

}  // namespace smoe
