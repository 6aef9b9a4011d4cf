#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoe/io.hpp"
#include "smoe/model.hpp"
#include "smoe/numkernel/finite_diff.hpp"

namespace smoe {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    double alpha = kDefaultAlpha;
    double lr = 1e-3;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    std::uint64_t seed = 1;
    Ablation ablation;
    double weight_decay = 0.01;
    std::size_t log_every = 10;
    /// Linear warmup then cosine decay to zero over the run; off by default.
    bool cosine_schedule = false;
    std::size_t warmup_steps = 0;
    /// Parameter file whose expert parameters replace the initialization.
    std::string warm_start;

    void validate() const {
        model.validate();
        if (ablation.enabled_count() == 0) throw std::invalid_argument("at least one expert must stay enabled");
        if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
        if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
        if (log_every < 1) throw std::invalid_argument("log cadence must be positive");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::map<std::string, Tensor> m, v;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// One adaptive-moment step with decoupled decay over trainable parameters;
/// frozen parameters are left untouched.
inline void adamw_step(ParamSet& params, OptimizerState& st, double lr) {
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (auto& [name, e] : params) {
        if (!e.trainable) continue;
        auto [mi, fresh_m] = st.m.try_emplace(name, e.value.shape());
        auto [vi, fresh_v] = st.v.try_emplace(name, e.value.shape());
        Tensor& m = mi->second;
        Tensor& v = vi->second;
        e.value.require_same_shape(m, "adamw_step");
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            e.value[i] -= lr * st.weight_decay * e.value[i];
            e.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
        }
    }
}

inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (!cfg.cosine_schedule) return cfg.lr;
    if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    const std::size_t span = total_steps > cfg.warmup_steps ? total_steps - cfg.warmup_steps : 1;
    const double t = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::acos(-1.0) * t));
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceRecord {
    std::size_t step = 0;
    GateWeights gate;  // batch mean
    double l_task = 0.0, l_gate = 0.0, total = 0.0;
    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

using GateTrace = std::vector<TraceRecord>;

struct StepLoss {
    double l_task = 0.0, l_gate = 0.0, total = 0.0;
    friend bool operator==(const StepLoss&, const StepLoss&) = default;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t step, const std::string& video)
        : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (video '" + video + "')"),
          step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

struct TrainResult {
    ParamSet params;
    GateTrace trace;
    std::vector<StepLoss> curve;       // every optimizer step
    std::vector<double> epoch_loss;    // mean total loss per epoch
    std::size_t steps = 0;
};

// ---------------------------------------------------------------------------
// Parameter files
// ---------------------------------------------------------------------------

inline constexpr const char* kParamFormat = "smoe-params";
inline constexpr int kParamVersion = 1;

struct ModelFile {
    ModelConfig config;
    ParamSet params;
    Ablation ablation;
};

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"background_width", c.background_width},
            {"global_width", c.global_width},
            {"layers", c.gtn.layers},
            {"relation_nodes", c.gtn.relation_nodes},
            {"literal_sqrt_degree", c.gtn.literal_sqrt_degree},
            {"linear_activation", c.gtn.linear_activation}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d = j.at("d").get<std::size_t>();
    c.background_width = j.at("background_width").get<std::size_t>();
    c.global_width = j.at("global_width").get<std::size_t>();
    c.gtn.layers = j.at("layers").get<std::size_t>();
    c.gtn.relation_nodes = j.at("relation_nodes").get<bool>();
    c.gtn.literal_sqrt_degree = j.at("literal_sqrt_degree").get<bool>();
    c.gtn.linear_activation = j.at("linear_activation").get<bool>();
    c.validate();
    return c;
}

inline std::string params_to_string(const ModelConfig& cfg, const ParamSet& ps, const Ablation& ab = {}) {
    using nlohmann::json;
    std::string out = json{{"format", kParamFormat},
                           {"version", kParamVersion},
                           {"count", ps.size()},
                           {"model", model_config_json(cfg)},
                           {"ablation", ab.disabled()}}
                          .dump();
    out += '\n';
    for (const auto& [name, e] : ps) {
        out += json{{"name", name}, {"shape", e.value.shape()}, {"trainable", e.trainable}, {"values", e.value.values()}}
                   .dump();
        out += '\n';
    }
    return out;
}

inline void write_params(const ModelConfig& cfg, const ParamSet& ps, const std::string& path, const Ablation& ab = {}) {
    write_file(path, params_to_string(cfg, ps, ab));
}

inline ModelFile read_params(const std::string& path) {
    struct Row {
        std::string name;
        Tensor value;
        bool trainable;
    };
    const auto rows = detail::read_records<Row>(path, kParamFormat, kParamVersion, [](const nlohmann::json& j) {
        return Row{j.at("name").get<std::string>(),
                   Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>()),
                   j.at("trainable").get<bool>()};
    });
    ModelFile mf;
    {
        std::istringstream in(read_file(path));
        std::string header;
        std::getline(in, header);
        try {
            const auto j = nlohmann::json::parse(header);
            mf.config = model_config_from_json(j.at("model"));
            if (j.contains("ablation"))
                for (const auto& s : j.at("ablation")) mf.ablation.disable(s.get<std::string>());
        } catch (const std::exception& e) {
            throw ParseError(path, 1, std::string("bad model description: ") + e.what());
        }
    }
    for (const auto& r : rows) {
        try {
            mf.params.add(r.name, r.value, r.trainable);
        } catch (const std::exception& e) {
            throw ParseError(path, 0, e.what());
        }
    }
    // Shapes must agree with a fresh model of the recorded configuration.
    const ParamSet ref = init_params(mf.config, 0);
    for (const auto& [name, e] : ref) {
        if (!mf.params.contains(name)) throw ParseError(path, 0, "missing parameter '" + name + "'");
        if (mf.params.value(name).shape() != e.value.shape())
            throw ParseError(path, 0, "parameter '" + name + "' has shape " + to_string(mf.params.value(name).shape()) +
                                          ", expected " + to_string(e.value.shape()));
    }
    if (mf.params.size() != ref.size()) throw ParseError(path, 0, "unexpected extra parameters");
    return mf;
}

// ---------------------------------------------------------------------------
// Trace and config text formats
// ---------------------------------------------------------------------------

inline std::string trace_to_csv(const GateTrace& trace) {
    std::string out = "step,gate_ae,gate_ore,gate_be,gate_ge,l_task,l_gate,total\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out += buf;
    };
    for (const auto& r : trace) {
        out += std::to_string(r.step);
        for (double g : r.gate.w) put(g);
        put(r.l_task);
        put(r.l_gate);
        put(r.total);
        out += '\n';
    }
    return out;
}

inline std::string curve_to_csv(const std::vector<StepLoss>& curve) {
    std::string out = "step,l_task,l_gate,total\n";
    char buf[96];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i + 1, curve[i].l_task, curve[i].l_gate,
                      curve[i].total);
        out += buf;
    }
    return out;
}

inline GateTrace trace_from_csv(const std::string& text, const std::string& path = "<trace>") {
    GateTrace trace;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ParseError(path, lineno, "expected 8 columns");
        try {
            TraceRecord r;
            r.step = std::stoul(cells[0]);
            for (std::size_t i = 0; i < kExperts; ++i) r.gate.w[i] = std::stod(cells[1 + i]);
            r.l_task = std::stod(cells[5]);
            r.l_gate = std::stod(cells[6]);
            r.total = std::stod(cells[7]);
            trace.push_back(r);
        } catch (const std::exception& e) {
            throw ParseError(path, lineno, e.what());
        }
    }
    return trace;
}

/// Flat `key = value` text; `#` starts a comment. Keys: d, layers,
/// background_width, global_width, relation_nodes, literal_sqrt_degree,
/// linear_activation, alpha, lr, batch_size, epochs, seed, weight_decay, log_every,
/// cosine_schedule, warmup_steps, ablate (comma list), warm_start.
inline TrainConfig parse_train_config(const std::string& text, const std::string& path = "<config>") {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path, lineno, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        auto as_bool = [&] {
            if (val == "true" || val == "1") return true;
            if (val == "false" || val == "0") return false;
            throw ParseError(path, lineno, "expected true or false for '" + key + "'");
        };
        try {
            std::size_t used = 0;
            auto as_size = [&] {
                if (!val.empty() && val[0] == '-') throw std::invalid_argument("negative value");
                const auto v = std::stoull(val, &used);
                if (used != val.size()) throw std::invalid_argument("trailing characters");
                return static_cast<std::size_t>(v);
            };
            auto as_double = [&] {
                const double v = std::stod(val, &used);
                if (used != val.size()) throw std::invalid_argument("trailing characters");
                return v;
            };
            if (key == "d") c.model.d = as_size();
            else if (key == "layers") c.model.gtn.layers = as_size();
            else if (key == "background_width") c.model.background_width = as_size();
            else if (key == "global_width") c.model.global_width = as_size();
            else if (key == "relation_nodes") c.model.gtn.relation_nodes = as_bool();
            else if (key == "literal_sqrt_degree") c.model.gtn.literal_sqrt_degree = as_bool();
            else if (key == "linear_activation") c.model.gtn.linear_activation = as_bool();
            else if (key == "alpha") c.alpha = as_double();
            else if (key == "lr") c.lr = as_double();
            else if (key == "batch_size") c.batch_size = as_size();
            else if (key == "epochs") c.epochs = as_size();
            else if (key == "seed") c.seed = as_size();
            else if (key == "weight_decay") c.weight_decay = as_double();
            else if (key == "log_every") c.log_every = as_size();
            else if (key == "cosine_schedule") c.cosine_schedule = as_bool();
            else if (key == "warmup_steps") c.warmup_steps = as_size();
            else if (key == "warm_start") c.warm_start = val;
            else if (key == "ablate") {
                std::istringstream ss(val);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!trim(item).empty()) c.ablation.disable(trim(item));
            } else throw ParseError(path, lineno, "unknown key '" + key + "'");
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(path, lineno, "bad value for '" + key + "': " + e.what());
        }
    }
    return c;
}

inline std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "d = " << c.model.d << '\n'
       << "layers = " << c.model.gtn.layers << '\n'
       << "background_width = " << c.model.background_width << '\n'
       << "global_width = " << c.model.global_width << '\n'
       << "relation_nodes = " << (c.model.gtn.relation_nodes ? "true" : "false") << '\n'
       << "literal_sqrt_degree = " << (c.model.gtn.literal_sqrt_degree ? "true" : "false") << '\n'
       << "linear_activation = " << (c.model.gtn.linear_activation ? "true" : "false") << '\n'
       << "alpha = " << format_double(c.alpha) << '\n'
       << "lr = " << format_double(c.lr) << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "epochs = " << c.epochs << '\n'
       << "seed = " << c.seed << '\n'
       << "weight_decay = " << format_double(c.weight_decay) << '\n'
       << "log_every = " << c.log_every << '\n'
       << "cosine_schedule = " << (c.cosine_schedule ? "true" : "false") << '\n'
       << "warmup_steps = " << c.warmup_steps << '\n';
    std::string ablate;
    for (const auto& s : c.ablation.disabled()) ablate += (ablate.empty() ? "" : ",") + s;
    os << "ablate = " << ablate << '\n';
    if (!c.warm_start.empty()) os << "warm_start = " << c.warm_start << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Gate weights averaged over a dataset under fixed parameters.
inline GateWeights mean_gate(const ParamSet& params, const ModelConfig& cfg, const Ablation& ab, const Dataset& data) {
    GateWeights g;
    g.w = {0, 0, 0, 0};
    for (const auto& v : data) {
        Tape tape;
        const auto experts = run_experts(tape, params, cfg, ab, v);
        const GateWeights w = ab.gate ? GateWeights::from(gate(tape, params, experts).value()) : GateWeights::uniform();
        for (std::size_t i = 0; i < kExperts; ++i) g.w[i] += w.w[i] / static_cast<double>(data.size());
    }
    return g;
}

inline ParamSet initial_params(const TrainConfig& cfg) {
    ParamSet ps = init_params(cfg.model, detail::splitmix64(cfg.seed));
    if (!cfg.warm_start.empty()) {
        const ModelFile mf = read_params(cfg.warm_start);
        for (const auto& [name, e] : mf.params) {
            const bool expert = name.rfind("ae.", 0) == 0 || name.rfind("ore.", 0) == 0 || name.rfind("be.", 0) == 0 ||
                                name.rfind("ge.", 0) == 0;
            if (expert && ps.contains(name)) ps.assign(name, e.value);
        }
    }
    apply_freezing(ps, cfg.ablation);
    return ps;
}

/// Called after every optimizer step with the 1-based step index; returning
/// false stops training early.
using StepCallback = std::function<bool(std::size_t step, const StepLoss& loss, const ParamSet& params)>;

/// Mini-batch training of experts, gate and heads on total loss. Batches
/// follow a seeded per-epoch shuffle; per-video gradients are summed in
/// batch order, so runs are bitwise reproducible.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const StepCallback& on_step = {}) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("training set is empty");
    std::vector<TaskTargets> targets;
    targets.reserve(data.size());
    for (const auto& v : data) targets.push_back(task_targets(v));

    TrainResult res;
    res.params = initial_params(cfg);
    OptimizerState opt;
    opt.weight_decay = cfg.weight_decay;

    const std::size_t batches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = batches * cfg.epochs;
    std::mt19937_64 order_rng(detail::splitmix64(cfg.seed ^ 0x5eed0fba7c4ull));
    std::vector<std::size_t> order(data.size());
    bool stop = false;

    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_total = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t b = 0; b < batches && !stop; ++b) {
            const std::size_t lo = b * cfg.batch_size;
            const std::size_t hi = std::min(data.size(), lo + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(hi - lo);
            res.params.zero_grad();
            StepLoss loss;
            GateWeights batch_gate;
            batch_gate.w = {0, 0, 0, 0};
            for (std::size_t k = lo; k < hi; ++k) {
                const SyntheticVideo& v = data[order[k]];
                Tape tape;
                const ForwardPass fp = forward(tape, res.params, cfg.model, cfg.ablation, v, cfg.alpha, &targets[order[k]]);
                const double lt = fp.l_task.value().item(), lg = fp.l_gate.value().item(), tot = fp.total.value().item();
                if (!std::isfinite(lt) || !std::isfinite(lg) || !std::isfinite(tot))
                    throw TrainingDiverged(res.steps + 1, v.id);
                backward(scale(fp.total, inv), tape, res.params);
                loss.l_task += lt * inv;
                loss.l_gate += lg * inv;
                loss.total += tot * inv;
                const GateWeights g = fp.fused.weights();
                for (std::size_t i = 0; i < kExperts; ++i) batch_gate.w[i] += g.w[i] * inv;
            }
            adamw_step(res.params, opt, scheduled_lr(cfg, res.steps, total_steps));
            ++res.steps;
            res.curve.push_back(loss);
            epoch_total += loss.total;
            ++epoch_steps;
            if (res.steps % cfg.log_every == 0 || res.steps == total_steps)
                res.trace.push_back({res.steps, batch_gate, loss.l_task, loss.l_gate, loss.total});
            if (on_step && !on_step(res.steps, loss, res.params)) stop = true;
        }
        res.epoch_loss.push_back(epoch_total / static_cast<double>(epoch_steps));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct Variant {
    std::string name;
    Ablation ablation;
};

/// The full model followed by one variant per switch.
inline std::vector<Variant> ablation_variants() {
    std::vector<Variant> out{{"full", Ablation{}}};
    for (const char* s : kAblationSwitches) {
        Ablation a;
        a.disable(s);
        std::string name = "w/o ";
        for (const char* c = s; *c; ++c) name += static_cast<char>(std::toupper(static_cast<unsigned char>(*c)));
        out.push_back({name, a});
    }
    return out;
}

struct AblationRow {
    std::string name;
    Ablation ablation;
    ModelEvaluation eval;
};

/// Trains and evaluates each variant with the same seed and data.
inline std::vector<AblationRow> ablate(const TrainConfig& base, const Dataset& train_set, const Dataset& eval_set,
                                       const std::vector<Variant>& variants = ablation_variants()) {
    std::vector<AblationRow> rows;
    for (const auto& var : variants) {
        TrainConfig cfg = base;
        cfg.ablation = var.ablation;
        const TrainResult tr = train(cfg, train_set);
        rows.push_back({var.name, var.ablation, evaluate_model(tr.params, cfg.model, var.ablation, eval_set)});
    }
    return rows;
}

struct ComparisonRow {
    std::string name;
    EvalReport report;
};

/// Extraction, localization and frame columns per variant, with the change
/// of each headline average relative to the first row.
inline std::string comparison_table(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    auto pct = [](std::optional<double> v) {
        char buf[16];
        if (!v) return std::string("n/a");
        std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
        return std::string(buf);
    };
    auto delta = [](std::optional<double> v, std::optional<double> ref) {
        char buf[16];
        if (!v || !ref) return std::string("n/a");
        std::snprintf(buf, sizeof buf, "%+.2f", (*v - *ref) * 100.0);
        return std::string(buf);
    };
    const char* head[] = {"variant", "sub",  "type", "obj", "sce", "sub-type", "obj-type", "sub-sce", "obj-sce",
                          "quad",    "avg",  "d.avg", "mAP", "d.mAP", "FNRs", "d.FNRs", "F2", "d.F2"};
    for (std::size_t i = 0; i < std::size(head); ++i) os << (i ? " " : "") << std::setw(i ? 8 : 10) << head[i];
    os << '\n';
    if (rows.empty()) return os.str();
    const EvalReport& ref = rows.front().report;
    for (const auto& r : rows) {
        const EvalReport& e = r.report;
        std::vector<std::string> cells;
        for (const auto& s : e.single) cells.push_back(pct(s.value));
        for (const auto& p : e.pair) cells.push_back(pct(p.value));
        cells.push_back(pct(e.quadruple.value));
        cells.push_back(pct(e.extraction_average()));
        cells.push_back(delta(e.extraction_average(), ref.extraction_average()));
        cells.push_back(pct(e.localization.mean));
        cells.push_back(delta(e.localization.mean, ref.localization.mean));
        cells.push_back(pct(e.fnr));
        cells.push_back(delta(e.fnr, ref.fnr));
        cells.push_back(pct(e.f2));
        cells.push_back(delta(e.f2, ref.f2));
        os << std::setw(10) << r.name;
        for (const auto& c : cells) os << ' ' << std::setw(8) << c;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct BlockCheck {
    std::string name;
    std::size_t size = 0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    double rel_error = 0.0;
    bool passed = false;
};

struct GradcheckReport {
    std::vector<BlockCheck> blocks;
    double loss = 0.0;

    bool passed() const {
        return !blocks.empty() && std::all_of(blocks.begin(), blocks.end(), [](const BlockCheck& b) { return b.passed; });
    }
    std::vector<std::string> failed() const {
        std::vector<std::string> out;
        for (const auto& b : blocks)
            if (!b.passed) out.push_back(b.name);
        return out;
    }
    std::string to_text() const {
        std::ostringstream os;
        for (const auto& b : blocks) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%-18s %6zu  |g| %.6e  rel.err %.3e  %s\n", b.name.c_str(), b.size,
                          b.analytic_norm, b.rel_error, b.passed ? "ok" : "FAIL");
            os << buf;
        }
        os << (passed() ? "PASS" : "FAIL") << " (" << blocks.size() << " blocks)\n";
        return os.str();
    }
};

struct GradcheckOptions {
    std::uint64_t seed = 1;
    std::size_t d = 6;
    std::size_t frames = 4;
    std::size_t layers = 2;
    double alpha = kDefaultAlpha;
    double h = 1e-5;
    double tolerance = 1e-4;
    /// Test hook: perturbs the analytic gradient of this block before comparing.
    std::string corrupt_block;
    /// Parameter draws are repeated while a ReLU input lies closer than this
    /// to the kink or some block has an all-zero gradient.
    double kink_margin = 1e-4;
    std::size_t max_redraws = 20;
};

/// A short video whose frames exercise every expert: uniformly random
/// joints for one or two persons, relation graphs with and without event
/// nodes, noisy provider features.
inline SyntheticVideo gradcheck_sample(std::uint64_t seed, std::size_t frames, std::size_t width) {
    GeneratorConfig g;
    g.seed = seed;
    g.videos = 1;
    g.min_duration_s = g.max_duration_s = 1;
    g.min_event_s = 0.25;
    g.max_event_s = 0.375;
    g.events_mean = 1.0;
    g.mix = {0.0, 1.0, 0.0};
    g.noise = 0.5;
    g.background_width = g.global_width = width;
    SyntheticVideo v = generate(g).front();
    frames = std::min(frames, v.frame_count());
    // Keep a window that starts one frame before the event so both normal
    // and event graphs are present.
    const auto& ev = v.events.front();
    const std::size_t first = static_cast<std::size_t>(std::llround(ev.start_s * kFps));
    std::size_t lo = first > 0 ? first - 1 : 0;
    lo = std::min(lo, v.frame_count() - frames);
    auto cut = [&](auto& vec) { vec = std::vector(vec.begin() + static_cast<std::ptrdiff_t>(lo),
                                                  vec.begin() + static_cast<std::ptrdiff_t>(lo + frames)); };
    cut(v.poses);
    cut(v.graphs);
    cut(v.features);
    cut(v.labels);
    std::mt19937_64 rng(detail::splitmix64(seed + 17));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& pf : v.poses)
        for (auto& person : pf.persons)
            for (auto& j : person) j = {u(rng), u(rng), u(rng)};
    // The window is shorter than a second, so count it at one frame per second.
    v.fps = 1;
    v.duration_s = static_cast<int>(frames);
    return v;
}

/// Redraws every parameter uniformly in [-scale, scale] (layer-norm gain
/// around 1), so no block sits near a degenerate point.
inline void randomize_params(ParamSet& ps, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& [name, e] : ps)
        for (double& x : e.value.data()) x = (name == pname::norm_gamma ? 1.0 : 0.0) + u(rng);
}

/// Smallest |x| over all ReLU inputs of one forward pass. Central
/// differences are only meaningful when this is well above the step size.
inline double relu_margin(const ParamSet& params, const ModelConfig& cfg, const Ablation& ab,
                          const SyntheticVideo& sample) {
    Tape tape;
    forward(tape, params, cfg, ab, sample, 0.0, nullptr);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t id : tape.ops_named("relu"))
        for (double x : tape.value(tape.inputs(id).front()).data()) margin = std::min(margin, std::abs(x));
    return margin;
}

/// Analytic gradient of the full objective vs central differences, per
/// parameter block.
inline GradcheckReport gradcheck(const ModelConfig& cfg, const Ablation& ab, const SyntheticVideo& sample,
                                 ParamSet params, const GradcheckOptions& opt) {
    const TaskTargets targets = task_targets(sample);
    auto objective = [&](const ParamSet& ps) {
        Tape tape;
        return forward(tape, ps, cfg, ab, sample, opt.alpha, &targets).total.value().item();
    };
    GradcheckReport rep;
    params.zero_grad();
    {
        Tape tape;
        const ForwardPass fp = forward(tape, params, cfg, ab, sample, opt.alpha, &targets);
        rep.loss = fp.total.value().item();
        backward(fp.total, tape, params);
    }
    ParamGrads analytic;
    for (const auto& [name, e] : params)
        if (e.trainable) analytic.emplace(name, e.grad);
    if (!opt.corrupt_block.empty()) {
        auto it = analytic.find(opt.corrupt_block);
        if (it == analytic.end()) throw std::invalid_argument("unknown parameter block '" + opt.corrupt_block + "'");
        for (double& x : it->second.data()) x = x * 1.01 + 1e-3;
    }
    const ParamGrads numeric = finite_diff_grad(objective, params, opt.h);
    for (const auto& [name, a] : analytic) {
        const Tensor& n = numeric.at(name);
        BlockCheck b;
        b.name = name;
        b.size = a.size();
        b.analytic_norm = std::sqrt(squared_norm(a));
        b.numeric_norm = std::sqrt(squared_norm(n));
        b.rel_error = relative_error(a, n);
        b.passed = b.rel_error < opt.tolerance;
        rep.blocks.push_back(b);
    }
    return rep;
}

inline GradcheckReport gradcheck(const GradcheckOptions& opt) {
    ModelConfig cfg;
    cfg.d = opt.d;
    cfg.background_width = cfg.global_width = opt.d;
    cfg.gtn.layers = opt.layers;
    const SyntheticVideo sample = gradcheck_sample(opt.seed, opt.frames, opt.d);
    ParamSet ps = init_params(cfg, 0);
    std::uint64_t draw = detail::splitmix64(opt.seed);
    const TaskTargets targets = task_targets(sample);
    auto usable = [&] {
        if (relu_margin(ps, cfg, Ablation{}, sample) < opt.kink_margin) return false;
        ps.zero_grad();
        Tape tape;
        backward(forward(tape, ps, cfg, Ablation{}, sample, opt.alpha, &targets).total, tape, ps);
        for (const auto& [_, e] : ps)
            if (squared_norm(e.grad) == 0.0) return false;
        return true;
    };
    for (std::size_t attempt = 0;; ++attempt) {
        randomize_params(ps, draw, 0.5);
        if (usable() || attempt >= opt.max_redraws) break;
        draw = detail::splitmix64(draw);
    }
    return gradcheck(cfg, Ablation{}, sample, std::move(ps), opt);
}

}  // namespace smoe
