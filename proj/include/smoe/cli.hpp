#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smoe/smoe.hpp"

namespace smoe::cli {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsage = 2, kIoError = 3 };

/// Bad flag values or combinations that the parser itself cannot see.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using nlohmann::json;

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(vocab::normalize(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(vocab::normalize(cur));
    return out;
}

inline std::array<double, 3> parse_mix(const std::string& s) {
    const auto parts = split_list(s);
    if (parts.size() != 3) throw UsageError("--mix needs three comma-separated weights, got '" + s + "'");
    std::array<double, 3> mix{};
    for (std::size_t i = 0; i < 3; ++i) {
        char* end = nullptr;
        mix[i] = std::strtod(parts[i].c_str(), &end);
        if (parts[i].empty() || *end != '\0') throw UsageError("--mix: '" + parts[i] + "' is not a number");
    }
    return mix;
}

inline json generator_config_json(const GeneratorConfig& g) {
    return {{"seed", g.seed},
            {"videos", g.videos},
            {"min_duration_s", g.min_duration_s},
            {"max_duration_s", g.max_duration_s},
            {"min_event_s", g.min_event_s},
            {"max_event_s", g.max_event_s},
            {"events_mean", g.events_mean},
            {"mix", g.mix},
            {"noise", g.noise},
            {"subjects", g.subjects},
            {"objects", g.objects},
            {"min_persons", g.min_persons},
            {"max_persons", g.max_persons},
            {"background_width", g.background_width},
            {"global_width", g.global_width},
            {"world_seed", g.world_seed}};
}

/// Config file keys and values as a flat object.
inline json train_config_json(const TrainConfig& c) {
    json out = json::object();
    std::istringstream in(config_to_text(c));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

/// Record of one run: enough to re-execute it and to check its files.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    std::optional<std::uint64_t> seed;
    std::string dataset_hash;
    std::vector<std::string> inputs;
    std::vector<std::string> artifacts;

    json to_json() const {
        json j{{"tool", "smoe"}, {"version", kVersion}, {"command", command}, {"argv", argv}, {"config", config}};
        j["seed"] = seed ? json(*seed) : json(nullptr);
        j["dataset_hash"] = dataset_hash;
        auto files = [](const std::vector<std::string>& paths) {
            json arr = json::array();
            for (const auto& p : paths) arr.push_back({{"path", p}, {"hash", file_hash(p)}});
            return arr;
        };
        j["inputs"] = files(inputs);
        j["artifacts"] = files(artifacts);
        return j;
    }
    void write(const std::string& path) const { write_file(path, to_json().dump(2) + "\n"); }
};

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

inline std::string slug(const std::string& name) {
    std::string out;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else if (!out.empty() && out.back() != '-')
            out += '-';
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out;
}

/// Provider feature widths of a dataset, checked for consistency.
inline std::pair<std::size_t, std::size_t> feature_widths(const Dataset& d, const std::string& path) {
    if (d.empty()) throw UsageError("dataset '" + path + "' is empty");
    const auto& f = d.front().features.front();
    return {f.background.size(), f.global.size()};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out, manifest, mix;
    GeneratorConfig gen;
};

inline int gen_data(const GenDataArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    GeneratorConfig g = a.gen;
    if (!a.mix.empty()) g.mix = parse_mix(a.mix);
    try {
        g.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const Dataset d = generate(g);
    write_dataset(d, a.out);

    std::size_t events = 0, frames = 0;
    for (const auto& v : d) {
        events += v.events.size();
        frames += v.frame_count();
    }
    RunManifest m;
    m.command = "gen-data";
    m.argv = argv;
    m.config = generator_config_json(g);
    if (!a.mix.empty()) m.config["mix_flag"] = a.mix;
    m.seed = g.seed;
    m.dataset_hash = file_hash(a.out);
    m.artifacts = {a.out};
    const std::string manifest = a.manifest.empty() ? a.out + ".manifest.json" : a.manifest;
    m.write(manifest);

    out << "videos " << d.size() << "  events " << events << "  events/video " << std::fixed << std::setprecision(3)
        << (d.empty() ? 0.0 : static_cast<double>(events) / static_cast<double>(d.size())) << "  frames " << frames
        << '\n'
        << "dataset " << a.out << "  hash " << m.dataset_hash << '\n'
        << "manifest " << manifest << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data, out, config, warm_start, ablate;
    std::optional<double> alpha, lr;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch_size, d, layers, log_every;
};

inline TrainConfig resolve_train_config(const TrainArgs& a) {
    TrainConfig c;
    if (!a.config.empty()) c = parse_train_config(read_file(a.config), a.config);
    if (a.alpha) c.alpha = *a.alpha;
    if (a.lr) c.lr = *a.lr;
    if (a.seed) c.seed = *a.seed;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.d) c.model.d = *a.d;
    if (a.layers) c.model.gtn.layers = *a.layers;
    if (a.log_every) c.log_every = *a.log_every;
    if (!a.warm_start.empty()) c.warm_start = a.warm_start;
    if (!a.ablate.empty())
        for (const auto& s : split_list(a.ablate)) c.ablation.disable(s);
    return c;
}

inline int train_cmd(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    TrainConfig c = resolve_train_config(a);
    const Dataset data = read_dataset(a.data);
    std::tie(c.model.background_width, c.model.global_width) = feature_widths(data, a.data);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const TrainResult res = train(c, data);
    ensure_dir(a.out);
    const std::string model = join(a.out, "model.params"), trace = join(a.out, "trace.csv"),
                      curve = join(a.out, "curve.csv"), config = join(a.out, "config.txt");
    write_params(c.model, res.params, model, c.ablation);
    write_file(trace, trace_to_csv(res.trace));
    write_file(curve, curve_to_csv(res.curve));
    write_file(config, config_to_text(c));

    RunManifest m;
    m.command = "train";
    m.argv = argv;
    m.config = train_config_json(c);
    m.seed = c.seed;
    m.dataset_hash = file_hash(a.data);
    m.inputs = {a.data};
    if (!a.config.empty()) m.inputs.push_back(a.config);
    if (!c.warm_start.empty()) m.inputs.push_back(c.warm_start);
    m.artifacts = {model, trace, curve, config};
    m.write(join(a.out, "manifest.json"));

    out << "steps " << res.steps;
    if (!res.curve.empty())
        out << "  final l_task " << format_double(res.curve.back().l_task) << "  l_gate "
            << format_double(res.curve.back().l_gate);
    out << '\n';
    if (!res.trace.empty()) {
        const auto& g = res.trace.back().gate.w;
        out << "gate ae " << format_double(g[0]) << "  ore " << format_double(g[1]) << "  be " << format_double(g[2])
            << "  ge " << format_double(g[3]) << '\n';
    }
    out << "model " << model << '\n';
    return kOk;
}

struct PredictArgs {
    std::string model, data, out;
};

inline int predict_cmd(const PredictArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    const ModelFile mf = read_params(a.model);
    const Dataset data = read_dataset(a.data);
    const auto preds = predict(mf.params, mf.config, mf.ablation, data);
    write_predictions(preds, a.out);
    RunManifest m;
    m.command = "predict";
    m.argv = argv;
    m.config = {{"model", model_config_json(mf.config)}, {"ablation", mf.ablation.disabled()}};
    m.dataset_hash = file_hash(a.data);
    m.inputs = {a.model, a.data};
    m.artifacts = {a.out};
    m.write(a.out + ".manifest.json");
    std::size_t events = 0;
    for (const auto& p : preds) events += p.events.size();
    out << "videos " << preds.size() << "  predicted events " << events << '\n' << "predictions " << a.out << '\n';
    return kOk;
}

struct EvalArgs {
    std::string predictions, gold, json_out, table_out;
};

inline int eval_cmd(const EvalArgs& a, std::ostream& out) {
    const auto preds = read_predictions(a.predictions);
    const Dataset gold = read_annotations(a.gold);
    const EvalReport r = evaluate(preds, gold);
    const std::string table = to_table(r);
    out << table;
    if (!a.table_out.empty()) write_file(a.table_out, table);
    if (!a.json_out.empty()) write_file(a.json_out, to_json(r).dump(2) + "\n");
    return kOk;
}

struct GradcheckArgs {
    GradcheckOptions opt;
};

inline int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out) {
    if (a.opt.d < 1 || a.opt.frames < 1) throw UsageError("--d and --frames must be positive");
    const GradcheckReport rep = gradcheck(a.opt);
    out << "seed " << a.opt.seed << "  d " << a.opt.d << "  frames " << a.opt.frames << "  loss "
        << format_double(rep.loss) << '\n'
        << rep.to_text();
    if (rep.passed()) return kOk;
    out << "failed blocks:";
    for (const auto& b : rep.failed()) out << ' ' << b;
    out << '\n';
    return kVerificationFailed;
}

struct AblateArgs {
    TrainArgs train;
    std::string eval_data, variants;
};

inline int ablate_cmd(const AblateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    TrainConfig base = resolve_train_config(a.train);
    const Dataset train_set = read_dataset(a.train.data);
    const Dataset eval_set = read_dataset(a.eval_data);
    std::tie(base.model.background_width, base.model.global_width) = feature_widths(train_set, a.train.data);
    try {
        base.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    std::vector<Variant> variants;
    if (a.variants.empty()) {
        variants = ablation_variants();
    } else {
        for (const auto& s : split_list(a.variants)) {
            if (s == "full") {
                variants.push_back({"full", Ablation{}});
                continue;
            }
            bool found = false;
            for (const auto& v : ablation_variants())
                if (slug(v.name) == "w-o-" + s) {
                    variants.push_back(v);
                    found = true;
                }
            if (!found) throw UsageError("unknown variant '" + s + "' (use full, ae, ore, be, ge, eg, sir)");
        }
    }
    // Each variant starts from the base switches plus its own.
    for (auto& v : variants)
        for (const auto& s : base.ablation.disabled()) v.ablation.disable(s);

    const auto rows = ablate(base, train_set, eval_set, variants);
    ensure_dir(a.train.out);
    RunManifest m;
    m.command = "ablate";
    m.argv = argv;
    m.config = train_config_json(base);
    m.seed = base.seed;
    m.dataset_hash = file_hash(a.train.data);
    m.inputs = {a.train.data, a.eval_data};
    std::vector<ComparisonRow> cmp;
    for (const auto& r : rows) {
        const std::string stem = join(a.train.out, slug(r.name));
        write_predictions(r.eval.predictions, stem + ".predictions.jsonl");
        write_file(stem + ".report.json", to_json(r.eval.report).dump(2) + "\n");
        m.artifacts.push_back(stem + ".predictions.jsonl");
        m.artifacts.push_back(stem + ".report.json");
        cmp.push_back({r.name, r.eval.report});
    }
    const std::string table = comparison_table(cmp);
    const std::string table_path = join(a.train.out, "comparison.txt");
    write_file(table_path, table);
    m.artifacts.push_back(table_path);
    m.write(join(a.train.out, "manifest.json"));
    out << table;
    return kOk;
}

struct ReportArgs {
    std::string gold, out;
    std::vector<std::string> compare;
};

inline int report_cmd(const ReportArgs& a, std::ostream& out) {
    if (a.compare.empty()) throw UsageError("report needs at least one --compare NAME=PREDICTIONS");
    const Dataset gold = read_annotations(a.gold);
    std::vector<ComparisonRow> rows;
    for (const auto& spec : a.compare) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw UsageError("--compare expects NAME=PREDICTIONS, got '" + spec + "'");
        const auto preds = read_predictions(spec.substr(eq + 1));
        rows.push_back({spec.substr(0, eq), evaluate(preds, gold)});
    }
    const std::string table = comparison_table(rows);
    out << table;
    if (!a.out.empty()) write_file(a.out, table);
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline void add_train_options(CLI::App* sub, TrainArgs& t) {
    sub->add_option("--config", t.config, "Config file (flat key = value)");
    sub->add_option("--ablate", t.ablate, "Comma-separated switches to disable: ae, ore, be, ge, eg, sir");
    sub->add_option("--alpha", t.alpha, "Weight of the gate balancing loss (0 disables it)");
    sub->add_option("--lr", t.lr, "Learning rate");
    sub->add_option("--seed", t.seed, "Initialization and shuffling seed");
    sub->add_option("--epochs", t.epochs, "Passes over the training set");
    sub->add_option("--batch-size", t.batch_size, "Videos per optimizer step");
    sub->add_option("--d", t.d, "Model width");
    sub->add_option("--layers", t.layers, "Propagation layers of the relation graph network");
    sub->add_option("--log-every", t.log_every, "Gate trace cadence in steps");
    sub->add_option("--warm-start", t.warm_start, "Parameter file whose expert weights initialize the model");
}

/// Runs one command line; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
    CLI::App app{"Synthetic mixture-of-experts video anomaly toolkit", "smoe"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and its manifest");
    gen->add_option("--out", gd.out, "Dataset file to write")->required();
    gen->add_option("--manifest", gd.manifest, "Manifest path (default: <out>.manifest.json)");
    gen->add_option("--videos", gd.gen.videos, "Number of videos")->capture_default_str();
    gen->add_option("--seed", gd.gen.seed, "Dataset seed")->capture_default_str();
    gen->add_option("--world-seed", gd.gen.world_seed, "Seed of the shared class signatures")->capture_default_str();
    gen->add_option("--mix", gd.mix, "Action,relation,background informativeness weights (default 0.45,0.25,0.30)");
    gen->add_option("--events-mean", gd.gen.events_mean, "Mean events per video")->capture_default_str();
    gen->add_option("--noise", gd.gen.noise, "Noise level")->capture_default_str();
    gen->add_option("--min-duration", gd.gen.min_duration_s, "Shortest video in seconds")->capture_default_str();
    gen->add_option("--max-duration", gd.gen.max_duration_s, "Longest video in seconds")->capture_default_str();
    gen->add_option("--min-event", gd.gen.min_event_s, "Shortest event in seconds")->capture_default_str();
    gen->add_option("--max-event", gd.gen.max_event_s, "Longest event in seconds")->capture_default_str();
    gen->add_option("--subjects", gd.gen.subjects, "Subject vocabulary size")->capture_default_str();
    gen->add_option("--objects", gd.gen.objects, "Object vocabulary size")->capture_default_str();
    gen->add_option("--min-persons", gd.gen.min_persons, "Fewest persons per video")->capture_default_str();
    gen->add_option("--max-persons", gd.gen.max_persons, "Most persons per video")->capture_default_str();
    gen->add_option("--background-width", gd.gen.background_width, "Background feature width")->capture_default_str();
    gen->add_option("--global-width", gd.gen.global_width, "Global feature width")->capture_default_str();

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Train experts, gate and heads");
    trn->add_option("--data", tr.data, "Training dataset")->required();
    trn->add_option("--out", tr.out, "Output directory")->required();
    add_train_options(trn, tr);

    PredictArgs pr;
    auto* prd = app.add_subcommand("predict", "Predict events for a dataset");
    prd->add_option("--model", pr.model, "Parameter file")->required();
    prd->add_option("--data", pr.data, "Dataset")->required();
    prd->add_option("--out", pr.out, "Predictions file to write")->required();

    EvalArgs ev;
    auto* evl = app.add_subcommand("eval", "Score predictions against gold annotations");
    evl->add_option("--pred", ev.predictions, "Predictions file")->required();
    evl->add_option("--gold", ev.gold, "Gold dataset")->required();
    evl->add_option("--json", ev.json_out, "Write the structured report here");
    evl->add_option("--table", ev.table_out, "Write the table here");

    GradcheckArgs gc;
    auto* grd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter block");
    grd->add_option("--seed", gc.opt.seed, "Sample and parameter seed")->capture_default_str();
    grd->add_option("--d", gc.opt.d, "Model width")->capture_default_str();
    grd->add_option("--frames", gc.opt.frames, "Frames in the sample")->capture_default_str();
    grd->add_option("--layers", gc.opt.layers, "Relation graph layers")->capture_default_str();
    grd->add_option("--alpha", gc.opt.alpha, "Gate balancing weight")->capture_default_str();
    grd->add_option("--tolerance", gc.opt.tolerance, "Largest accepted relative error")->capture_default_str();
    grd->add_option("--corrupt", gc.opt.corrupt_block, "Perturb this block's analytic gradient (test hook)")
        ->group("");

    AblateArgs ab;
    auto* abl = app.add_subcommand("ablate", "Train and evaluate the full model and each ablation");
    abl->add_option("--data", ab.train.data, "Training dataset")->required();
    abl->add_option("--eval", ab.eval_data, "Evaluation dataset")->required();
    abl->add_option("--out", ab.train.out, "Output directory")->required();
    abl->add_option("--variants", ab.variants, "Comma-separated subset of full, ae, ore, be, ge, eg, sir");
    add_train_options(abl, ab.train);

    ReportArgs rp;
    auto* rep = app.add_subcommand("report", "Tabulate several prediction files against one gold set");
    rep->add_option("--gold", rp.gold, "Gold dataset")->required();
    rep->add_option("--compare", rp.compare, "NAME=PREDICTIONS; the first is the reference row")->required();
    rep->add_option("--out", rp.out, "Write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return gen_data(gd, args, out);
        if (*trn) return train_cmd(tr, args, out);
        if (*prd) return predict_cmd(pr, args, out);
        if (*evl) return eval_cmd(ev, out);
        if (*grd) return gradcheck_cmd(gc, out);
        if (*abl) return ablate_cmd(ab, args, out);
        if (*rep) return report_cmd(rp, out);
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const DimensionError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const TrainingDiverged& e) {
        err << "error: " << e.what() << '\n';
        return kVerificationFailed;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kVerificationFailed;
    }
    return kUsage;
}

}  // namespace smoe::cli
