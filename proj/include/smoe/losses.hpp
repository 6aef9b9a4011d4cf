#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smoe/fusion.hpp"

namespace smoe {

inline constexpr double kDefaultAlpha = 0.4;
inline constexpr std::size_t kLocalExperts = 3;

// ---------------------------------------------------------------------------
// Gated spatial balancing
// ---------------------------------------------------------------------------

/// (1/n_local) sum_{local} -log g_i  -  log g_global, where the global weight
/// is the last entry. Minimized on the simplex at g_local = 1/(2 n_local),
/// g_global = 1/2, with value ln(4 n_local).
inline double gsb_loss(std::span<const double> g) {
    if (g.size() < 2) throw DimensionError("gsb_loss needs at least one local and one global weight");
    const std::size_t n_local = g.size() - 1;
    double local = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(g[i] > 0.0)) throw DomainError("gsb_loss: gate weight " + std::to_string(i) + " is not positive");
    for (std::size_t i = 0; i < n_local; ++i) local -= std::log(g[i]);
    return local / static_cast<double>(n_local) - std::log(g[n_local]);
}

inline double gsb_loss(const GateWeights& g) { return gsb_loss(std::span<const double>(g.w)); }

/// Lower bound of gsb_loss over the simplex.
inline double gsb_minimum(std::size_t n_local = kLocalExperts) { return std::log(4.0 * static_cast<double>(n_local)); }

inline Var gsb_loss(Var g) {
    const std::size_t n = g.value().size();
    if (n < 2) throw DimensionError("gsb_loss needs at least one local and one global weight");
    std::vector<double> w(n, -1.0 / static_cast<double>(n - 1));
    w.back() = -1.0;
    return weighted_sum(log(g), std::move(w));
}

// ---------------------------------------------------------------------------
// Task surrogate: four quadruple-element heads plus a per-frame abnormality head
// ---------------------------------------------------------------------------

namespace pname {
inline const std::string head_subject_w = "head.subject.W";
inline const std::string head_subject_b = "head.subject.b";
inline const std::string head_type_w = "head.type.W";
inline const std::string head_type_b = "head.type.b";
inline const std::string head_object_w = "head.object.W";
inline const std::string head_object_b = "head.object.b";
inline const std::string head_scene_w = "head.scene.W";
inline const std::string head_scene_b = "head.scene.b";
inline const std::string head_frame_w = "head.frame.W";
inline const std::string head_frame_b = "head.frame.b";
}  // namespace pname

struct TaskTargets {
    std::size_t subject = 0;
    std::size_t event_type = 0;
    std::size_t object = 0;
    std::size_t scene = 0;
    std::vector<std::uint8_t> frame_labels;
};

struct HeadOutputs {
    Var subject, event_type, object, scene;  // (1 x K) logits
    Var frame;                               // (M x 1) logits
};

inline Var linear_head(Tape& tape, const ParamSet& params, Var x, const std::string& w, const std::string& b) {
    return add_row(matmul(x, tape.param(params, w)), tape.param(params, b));
}

inline HeadOutputs task_heads(Tape& tape, const ParamSet& params, Var o) {
    Var pooled = mean_rows(o);
    return {linear_head(tape, params, pooled, pname::head_subject_w, pname::head_subject_b),
            linear_head(tape, params, pooled, pname::head_type_w, pname::head_type_b),
            linear_head(tape, params, pooled, pname::head_object_w, pname::head_object_b),
            linear_head(tape, params, pooled, pname::head_scene_w, pname::head_scene_b),
            linear_head(tape, params, o, pname::head_frame_w, pname::head_frame_b)};
}

/// Mean of five equally weighted terms: cross-entropy of the subject, type,
/// object and scene heads on the frame-mean of O, and mean binary
/// cross-entropy of the per-frame abnormality head.
inline Var task_loss(const HeadOutputs& heads, const TaskTargets& targets) {
    const auto check = [](Var logits, std::size_t id, const char* what) {
        if (id >= logits.value().size())
            throw DomainError(std::string("task_loss: ") + what + " id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(logits.value().size()));
    };
    check(heads.subject, targets.subject, "subject");
    check(heads.event_type, targets.event_type, "event type");
    check(heads.object, targets.object, "object");
    check(heads.scene, targets.scene, "scene");
    if (targets.frame_labels.size() != heads.frame.value().size())
        throw DimensionError("task_loss: " + std::to_string(targets.frame_labels.size()) + " frame labels for " +
                             std::to_string(heads.frame.value().size()) + " frames");
    std::vector<double> labels(targets.frame_labels.begin(), targets.frame_labels.end());
    Var total = cross_entropy(heads.subject, targets.subject);
    total = add(total, cross_entropy(heads.event_type, targets.event_type));
    total = add(total, cross_entropy(heads.object, targets.object));
    total = add(total, cross_entropy(heads.scene, targets.scene));
    total = add(total, binary_cross_entropy(heads.frame, std::move(labels)));
    return scale(total, 1.0 / 5.0);
}

inline Var task_loss(Tape& tape, const ParamSet& params, const FusedOutput& o, const TaskTargets& targets) {
    return task_loss(task_heads(tape, params, o.rows), targets);
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double l_task = 0.0;
    double l_gate = 0.0;
    double alpha = kDefaultAlpha;
    double total = 0.0;
};

inline LossBreakdown total_loss(double l_task, double l_gate, double alpha = kDefaultAlpha) {
    if (!(alpha >= 0.0)) throw DomainError("alpha must be non-negative");
    return {l_task, l_gate, alpha, l_task + alpha * l_gate};
}

inline Var total_loss(Var l_task, Var l_gate, double alpha = kDefaultAlpha) {
    if (!(alpha >= 0.0)) throw DomainError("alpha must be non-negative");
    return add(l_task, scale(l_gate, alpha));
}

}  // namespace smoe
