#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoe/losses.hpp"
#include "smoe/metrics.hpp"
#include "smoe/synthdata.hpp"
#include "smoe/vocab.hpp"

namespace smoe {

struct ModelConfig {
    std::size_t d = 32;
    std::size_t background_width = 32;
    std::size_t global_width = 16;
    GtnOptions gtn;

    void validate() const {
        if (d < 1) throw std::invalid_argument("model width must be positive");
        if (gtn.layers < 1) throw std::invalid_argument("MaskGTN needs at least one layer");
        if (background_width < 1 || global_width < 1) throw std::invalid_argument("feature widths must be positive");
    }
};

/// Which experts contribute, whether the gate is learned, whether the
/// balancing term is optimized.
struct Ablation {
    std::array<bool, kExperts> expert = {true, true, true, true};
    bool gate = true;
    bool sir = true;

    bool enabled(ExpertId e) const { return expert[static_cast<std::size_t>(e)]; }
    std::size_t enabled_count() const { return std::size_t(expert[0]) + expert[1] + expert[2] + expert[3]; }

    /// Applies a switch by its short name: ae, ore, be, ge, eg, sir.
    void disable(const std::string& name) {
        const std::string n = vocab::normalize(name);
        if (n == "ae") expert[0] = false;
        else if (n == "ore") expert[1] = false;
        else if (n == "be") expert[2] = false;
        else if (n == "ge") expert[3] = false;
        else if (n == "eg") gate = false;
        else if (n == "sir") sir = false;
        else throw std::invalid_argument("unknown ablation switch '" + name + "' (expected ae, ore, be, ge, eg, sir)");
    }

    /// Short names of the disabled switches, in canonical order.
    std::vector<std::string> disabled() const {
        std::vector<std::string> out;
        static const char* names[] = {"ae", "ore", "be", "ge"};
        for (std::size_t i = 0; i < kExperts; ++i)
            if (!expert[i]) out.emplace_back(names[i]);
        if (!gate) out.emplace_back("eg");
        if (!sir) out.emplace_back("sir");
        return out;
    }

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

inline constexpr std::array<const char*, 6> kAblationSwitches = {"ae", "ore", "be", "ge", "eg", "sir"};

/// Parameter-name prefix owned by each expert.
inline const char* expert_prefix(ExpertId e) {
    static constexpr const char* p[] = {"ae.", "ore.", "be.", "ge."};
    return p[static_cast<std::size_t>(e)];
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and embeddings,
/// zero biases, unit layer-norm gain.
inline ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParamSet ps;
    const std::size_t d = cfg.d;
    auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor t({rows, cols});
        for (double& x : t.data()) x = u(rng);
        ps.add(name, std::move(t));
    };
    weight(pname::ae_pose, kJoints * kJointFeatures, d);
    weight(pname::ae_attn, d, d);
    weight(pname::ae_combine, 2 * d, d);
    weight(pname::ae_query, cfg.global_width, d);
    weight(pname::ae_key, d, d);
    weight(pname::ae_value, d, d);
    weight(pname::ore_entity, vocab::entity_count(), d);
    weight(pname::ore_relation, vocab::relations().size(), d);
    weight(pname::ore_box, 4, d);
    for (std::size_t l = 0; l < cfg.gtn.layers; ++l) weight(pname::ore_layer(l), d, d);
    weight(pname::be_proj, cfg.background_width, d);
    weight(pname::ge_w1, cfg.global_width, d);
    ps.add(pname::ge_b1, Tensor({1, d}));
    weight(pname::ge_w2, d, d);
    ps.add(pname::ge_b2, Tensor({1, d}));
    // gate.W is (4 x d) and applied transposed, so its fan-in is d.
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor t({kExperts, d});
        for (double& x : t.data()) x = u(rng);
        ps.add(pname::gate_w, std::move(t));
    }
    ps.add(pname::norm_gamma, Tensor({1, d}, 1.0));
    ps.add(pname::norm_beta, Tensor({1, d}));
    const std::pair<const std::string*, std::size_t> heads[] = {
        {&pname::head_subject_w, vocab::subjects().size()},
        {&pname::head_type_w, vocab::event_types().size()},
        {&pname::head_object_w, vocab::objects().size()},
        {&pname::head_scene_w, vocab::scenes().size()},
        {&pname::head_frame_w, 1}};
    const std::string* biases[] = {&pname::head_subject_b, &pname::head_type_b, &pname::head_object_b,
                                   &pname::head_scene_b, &pname::head_frame_b};
    for (std::size_t i = 0; i < 5; ++i) {
        weight(*heads[i].first, d, heads[i].second);
        ps.add(*biases[i], Tensor({1, heads[i].second}));
    }
    return ps;
}

/// Marks parameters of disabled experts (and the gate under the gate
/// ablation) non-trainable; everything else trainable.
inline void apply_freezing(ParamSet& ps, const Ablation& ab) {
    for (auto& [name, entry] : ps) {
        bool on = true;
        for (std::size_t i = 0; i < kExperts; ++i)
            if (!ab.expert[i] && name.rfind(expert_prefix(static_cast<ExpertId>(i)), 0) == 0) on = false;
        if (!ab.gate && name == pname::gate_w) on = false;
        entry.trainable = on;
    }
}

/// Recovers the model shape from a parameter set.
inline ModelConfig infer_model_config(const ParamSet& ps, GtnOptions gtn) {
    ModelConfig cfg;
    cfg.d = ps.value(pname::be_proj).dim(1);
    cfg.background_width = ps.value(pname::be_proj).dim(0);
    cfg.global_width = ps.value(pname::ge_w1).dim(0);
    gtn.layers = 0;
    while (ps.contains(pname::ore_layer(gtn.layers))) ++gtn.layers;
    cfg.gtn = gtn;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardPass {
    std::array<ExpertOutput, kExperts> experts;
    FusedOutput fused;
    HeadOutputs heads;
    Var l_task{}, l_gate{}, total{};
};

inline std::array<ExpertOutput, kExperts> run_experts(Tape& tape, const ParamSet& params, const ModelConfig& cfg,
                                                      const Ablation& ab, const SyntheticVideo& v) {
    const std::size_t m = v.frame_count();
    if (v.poses.size() != m || v.graphs.size() != m || v.features.size() != m)
        throw DimensionError("video '" + v.id + "' lacks per-frame inputs for " + std::to_string(m) + " frames");
    auto zeros = [&](ExpertId e) { return ExpertOutput{e, tape.constant(Tensor({m, cfg.d}))}; };
    std::array<ExpertOutput, kExperts> out;
    out[0] = ab.enabled(ExpertId::AE) ? action_expert_forward(tape, params, v.poses, global_matrix(v.features))
                                      : zeros(ExpertId::AE);
    out[1] = ab.enabled(ExpertId::ORE) ? mask_gtn_forward(tape, params, v.graphs, cfg.gtn) : zeros(ExpertId::ORE);
    out[2] = ab.enabled(ExpertId::BE) ? background_expert_forward(tape, params, v.features) : zeros(ExpertId::BE);
    out[3] = ab.enabled(ExpertId::GE) ? global_expert_forward(tape, params, v.features) : zeros(ExpertId::GE);
    return out;
}

/// Experts, gate, fusion and heads; with `targets`, also the losses
/// total = l_task + alpha l_gate (l_gate is still computed but left out of
/// the total when the balancing term is disabled).
inline ForwardPass forward(Tape& tape, const ParamSet& params, const ModelConfig& cfg, const Ablation& ab,
                           const SyntheticVideo& v, double alpha, const TaskTargets* targets) {
    ForwardPass fp;
    fp.experts = run_experts(tape, params, cfg, ab, v);
    Var g = ab.gate ? gate(tape, params, fp.experts) : uniform_gate(tape);
    fp.fused = fuse(tape, params, fp.experts, g);
    fp.heads = task_heads(tape, params, fp.fused.rows);
    if (targets) {
        fp.l_task = task_loss(fp.heads, *targets);
        fp.l_gate = gsb_loss(g);
        fp.total = ab.sir && alpha > 0.0 ? total_loss(fp.l_task, fp.l_gate, alpha) : fp.l_task;
    }
    return fp;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

inline std::size_t argmax(const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

struct VideoInference {
    VideoPrediction prediction;
    QuadrupleIds quadruple;
    std::vector<double> frame_probability;
    GateWeights gate;
};

/// Frames with abnormality probability >= 0.5 form events (maximal runs);
/// every event carries the video-level argmax quadruple and the mean
/// probability over its span as confidence.
inline VideoInference infer(const ParamSet& params, const ModelConfig& cfg, const Ablation& ab, const SyntheticVideo& v) {
    Tape tape;
    const ForwardPass fp = forward(tape, params, cfg, ab, v, 0.0, nullptr);
    VideoInference out;
    out.quadruple = {argmax(fp.heads.subject.value()), argmax(fp.heads.event_type.value()),
                     argmax(fp.heads.object.value()), argmax(fp.heads.scene.value())};
    out.gate = fp.fused.weights();
    const Tensor& logits = fp.heads.frame.value();
    out.frame_probability.resize(logits.size());
    out.prediction.id = v.id;
    out.prediction.frames.resize(logits.size());
    for (std::size_t f = 0; f < logits.size(); ++f) {
        out.frame_probability[f] = sigmoid(logits[f]);
        out.prediction.frames[f] = out.frame_probability[f] >= 0.5 ? 1 : 0;
    }
    const EventQuadruple q = quadruple_names(out.quadruple);
    for (auto [a, b] : label_runs(out.prediction.frames)) {
        double s = 0.0;
        for (std::size_t f = a; f < b; ++f) s += out.frame_probability[f];
        out.prediction.events.push_back({static_cast<double>(a) / v.fps, static_cast<double>(b) / v.fps, q,
                                         s / static_cast<double>(b - a)});
    }
    return out;
}

inline std::vector<VideoPrediction> predict(const ParamSet& params, const ModelConfig& cfg, const Ablation& ab,
                                            const Dataset& data) {
    std::vector<VideoPrediction> out;
    out.reserve(data.size());
    for (const auto& v : data) out.push_back(infer(params, cfg, ab, v).prediction);
    return out;
}

/// Video-level accuracy of each quadruple head against the video's quadruple.
struct HeadAccuracy {
    std::array<double, 4> element{};  // subject, type, object, scene
    double event_type() const { return element[1]; }
};

struct ModelEvaluation {
    EvalReport report;
    HeadAccuracy accuracy;
    GateWeights mean_gate;
    std::vector<VideoPrediction> predictions;
};

inline ModelEvaluation evaluate_model(const ParamSet& params, const ModelConfig& cfg, const Ablation& ab,
                                      const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("evaluation set is empty");
    ModelEvaluation ev;
    ev.mean_gate.w = {0, 0, 0, 0};
    std::size_t scored = 0;
    for (const auto& v : data) {
        VideoInference inf = infer(params, cfg, ab, v);
        for (std::size_t i = 0; i < kExperts; ++i) ev.mean_gate.w[i] += inf.gate.w[i] / static_cast<double>(data.size());
        if (!v.events.empty()) {
            const QuadrupleIds gold = quadruple_ids(v.events.front().quadruple);
            const std::array<bool, 4> hit = {inf.quadruple.subject == gold.subject,
                                             inf.quadruple.event_type == gold.event_type,
                                             inf.quadruple.object == gold.object, inf.quadruple.scene == gold.scene};
            for (std::size_t i = 0; i < 4; ++i) ev.accuracy.element[i] += hit[i];
            ++scored;
        }
        ev.predictions.push_back(std::move(inf.prediction));
    }
    if (scored)
        for (double& a : ev.accuracy.element) a /= static_cast<double>(scored);
    ev.report = evaluate(ev.predictions, data);
    return ev;
}

}  // namespace smoe
