#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoe/experts.hpp"
#include "smoe/io.hpp"
#include "smoe/losses.hpp"
#include "smoe/vocab.hpp"

namespace smoe {

inline constexpr int kFps = 8;

struct EventQuadruple {
    std::string subject;
    std::string event_type;
    std::string object;
    std::string scene;
    friend bool operator==(const EventQuadruple&, const EventQuadruple&) = default;
};

struct AbnormalEvent {
    double start_s = 0.0;
    double end_s = 0.0;
    EventQuadruple quadruple;
    /// Channel the generator planted the event signature into.
    ExpertId channel = ExpertId::AE;
    friend bool operator==(const AbnormalEvent&, const AbnormalEvent&) = default;
};

/// One generated video. Every frame carries a pose frame, a relation graph
/// and provider features; frame f covers [f/8, (f+1)/8) seconds.
struct SyntheticVideo {
    std::string id;
    int duration_s = 0;
    int fps = kFps;
    std::vector<PoseFrame> poses;
    std::vector<ObjectRelationGraph> graphs;
    std::vector<FrameFeatures> features;
    std::vector<std::uint8_t> labels;
    std::vector<AbnormalEvent> events;

    std::size_t frame_count() const { return static_cast<std::size_t>(duration_s) * static_cast<std::size_t>(fps); }
    friend bool operator==(const SyntheticVideo&, const SyntheticVideo&) = default;
};

using Dataset = std::vector<SyntheticVideo>;

struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t videos = 100;
    int min_duration_s = 40;
    int max_duration_s = 120;
    double min_event_s = 2.0;
    double max_event_s = 8.0;
    double events_mean = 1.68;
    /// Probability an event is planted into the action, object-relation or background channel.
    std::array<double, 3> mix = {0.45, 0.25, 0.30};
    double noise = 0.0;
    std::size_t subjects = 40;
    std::size_t objects = 40;
    std::size_t min_persons = 1;
    std::size_t max_persons = 2;
    std::size_t background_width = 32;
    std::size_t global_width = 16;
    /// Seeds the class signatures; datasets sharing it are drawn from the same world.
    std::uint64_t world_seed = 20240601;

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("generator config: " + m); };
        double total = 0.0;
        for (double m : mix) {
            if (!(m >= 0.0)) fail("mix entries must be non-negative");
            total += m;
        }
        if (std::abs(total - 1.0) > 1e-9) fail("mix entries must sum to 1");
        if (min_duration_s < 1 || max_duration_s < min_duration_s) fail("invalid duration range");
        if (!(min_event_s > 0.0) || max_event_s < min_event_s) fail("invalid event length range");
        if (min_event_s > min_duration_s) fail("events longer than the shortest video");
        if (!(events_mean >= 1.0)) fail("events-per-video mean must be at least 1");
        if (!(noise >= 0.0)) fail("noise must be non-negative");
        if (subjects < 1 || subjects > vocab::subjects().size()) fail("subject vocabulary size out of range");
        if (objects < 1 || objects > vocab::objects().size()) fail("object vocabulary size out of range");
        if (min_persons > max_persons || max_persons > 8) fail("invalid persons range");
        if (background_width < 1 || global_width < 1) fail("feature widths must be positive");
    }
};

/// Class signatures shared by every dataset drawn with the same world seed.
struct World {
    static constexpr double kPoseDelta = 0.2;
    static constexpr double kPoseRadius = 1.0;
    static constexpr double kBackgroundRadius = 6.0;

    /// Joint group carrying each element's pose signature: head for the
    /// event type, arms for the subject, legs for the object.
    enum class Slot { Type, Subject, Object, Scene };
    static Slot joint_slot(std::size_t j) {
        if (j <= 4) return Slot::Type;
        if (j <= 10) return Slot::Subject;
        return Slot::Object;
    }
    /// Background dimensions in quarters: type, subject, object, scene.
    /// Widths under four leave the later slots empty.
    static Slot feature_slot(std::size_t i, std::size_t width) {
        const std::size_t q = std::max<std::size_t>(1, width / 4);
        return static_cast<Slot>(std::min<std::size_t>(3, i / q));
    }

    std::array<std::array<double, 2>, kJoints> template_pose{};
    std::vector<std::vector<double>> pose_type, pose_subject, pose_object;
    std::vector<double> pose_abnormal;
    std::vector<std::vector<double>> bg_scene, bg_type, bg_subject, bg_object;
    std::vector<double> bg_abnormal;
    std::vector<std::vector<double>> global_scene;
    std::vector<double> global_abnormal;
    std::vector<std::array<double, 2>> entity_center;

    World(std::uint64_t seed, std::size_t bg_width, std::size_t global_width) {
        template_pose = {{{0.50, 0.20}, {0.48, 0.18}, {0.52, 0.18}, {0.46, 0.19}, {0.54, 0.19}, {0.42, 0.30},
                          {0.58, 0.30}, {0.38, 0.42}, {0.62, 0.42}, {0.36, 0.54}, {0.64, 0.54}, {0.45, 0.55},
                          {0.55, 0.55}, {0.45, 0.70}, {0.55, 0.70}, {0.45, 0.83}, {0.55, 0.83}}};
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> pose_u(-kPoseDelta, kPoseDelta);
        std::uniform_real_distribution<double> feat_u(-1.0, 1.0);
        auto draw = [&rng](std::size_t n, std::size_t width, auto& dist) {
            std::vector<std::vector<double>> out(n, std::vector<double>(width));
            for (auto& v : out)
                for (double& x : v) x = dist(rng);
            return out;
        };
        const std::size_t pose_width = kJoints * 2;
        pose_abnormal = draw(1, pose_width, pose_u)[0];
        bg_abnormal = draw(1, bg_width, feat_u)[0];

        // Element codes live only on their own slot, so elements never
        // interfere. Signed unit axes first, random directions once those
        // run out; equal norms keep every class linearly separable.
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto codes = [&](std::size_t n, std::size_t width, auto&& in_slot, double radius, bool axes = true) {
            std::vector<std::size_t> dims;
            for (std::size_t i = 0; i < width; ++i)
                if (in_slot(i)) dims.push_back(i);
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            std::vector<std::vector<double>> out(n, std::vector<double>(width, 0.0));
            if (dims.empty()) return out;
            for (std::size_t c = 0; c < n; ++c) {
                auto& v = out[order[c]];
                if (axes && c < 2 * dims.size()) {
                    v[dims[c / 2]] = c % 2 ? -radius : radius;
                    continue;
                }
                double norm = 0.0;
                for (auto i : dims) norm += (v[i] = gauss(rng)) * v[i];
                for (auto i : dims) v[i] *= radius / std::sqrt(norm);
            }
            return out;
        };
        auto pose_slot = [](Slot slot) { return [slot](std::size_t i) { return joint_slot(i / 2) == slot; }; };
        auto bg_slot = [bg_width](Slot slot) {
            return [slot, bg_width](std::size_t i) { return feature_slot(i, bg_width) == slot; };
        };
        pose_type = codes(vocab::event_types().size(), pose_width, pose_slot(Slot::Type), kPoseRadius, false);
        pose_subject = codes(vocab::subjects().size(), pose_width, pose_slot(Slot::Subject), kPoseRadius, false);
        pose_object = codes(vocab::objects().size(), pose_width, pose_slot(Slot::Object), kPoseRadius, false);
        bg_type = codes(vocab::event_types().size(), bg_width, bg_slot(Slot::Type), kBackgroundRadius);
        bg_subject = codes(vocab::subjects().size(), bg_width, bg_slot(Slot::Subject), kBackgroundRadius);
        bg_object = codes(vocab::objects().size(), bg_width, bg_slot(Slot::Object), kBackgroundRadius);
        bg_scene = codes(vocab::scenes().size(), bg_width, bg_slot(Slot::Scene), kBackgroundRadius);
        global_scene = codes(vocab::scenes().size(), global_width, [](std::size_t) { return true; },
                             std::sqrt(static_cast<double>(global_width) / 3.0));
        global_abnormal = draw(1, global_width, feat_u)[0];
        std::uniform_real_distribution<double> center_u(0.2, 0.8);
        entity_center.resize(vocab::entity_count());
        for (auto& c : entity_center) c = {center_u(rng), center_u(rng)};
    }

    /// Props (a, b related; c unrelated) shown in a scene.
    static std::array<std::size_t, 3> scene_props(std::size_t scene) {
        const std::size_t n = vocab::props().size();
        return {scene % n, (scene + 3) % n, (scene + 5) % n};
    }
    static std::size_t scene_relation(std::size_t scene) { return scene % vocab::kNormalRelations; }
};

/// Class ids of a video's quadruple.
struct QuadrupleIds {
    std::size_t subject = 0, event_type = 0, object = 0, scene = 0;
};

inline QuadrupleIds quadruple_ids(const EventQuadruple& q) {
    auto need = [](const std::vector<std::string>& v, const std::string& s, const char* what) {
        auto i = vocab::index_of(v, s);
        if (!i) throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
        return *i;
    };
    return {need(vocab::subjects(), q.subject, "subject"), need(vocab::event_types(), q.event_type, "event type"),
            need(vocab::objects(), q.object, "object"), need(vocab::scenes(), q.scene, "scene")};
}

inline EventQuadruple quadruple_names(const QuadrupleIds& q) {
    return {vocab::subjects().at(q.subject), vocab::event_types().at(q.event_type), vocab::objects().at(q.object),
            vocab::scenes().at(q.scene)};
}

/// Supervision for the task heads; all events of a video share one quadruple.
inline TaskTargets task_targets(const SyntheticVideo& v) {
    if (v.events.empty()) throw std::invalid_argument("video '" + v.id + "' has no events to supervise");
    const QuadrupleIds q = quadruple_ids(v.events.front().quadruple);
    return {q.subject, q.event_type, q.object, q.scene, v.labels};
}

/// Frame labels from event windows.
inline std::vector<std::uint8_t> labels_from_events(std::size_t frames, std::span<const AbnormalEvent> events, int fps) {
    std::vector<std::uint8_t> labels(frames, 0);
    for (const auto& e : events) {
        const auto a = static_cast<std::size_t>(std::llround(e.start_s * fps));
        const auto b = std::min(frames, static_cast<std::size_t>(std::llround(e.end_s * fps)));
        for (std::size_t f = a; f < b; ++f) labels[f] = 1;
    }
    return labels;
}

/// Maximal runs of 1-labels as [start, end) frame ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> label_runs(std::span<const std::uint8_t> labels) {
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t f = 0; f < labels.size();) {
        if (!labels[f]) {
            ++f;
            continue;
        }
        std::size_t e = f;
        while (e < labels.size() && labels[e]) ++e;
        runs.emplace_back(f, e);
        f = e;
    }
    return runs;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct EventWindow {
    std::size_t first = 0, last = 0;  // [first, last)
    ExpertId channel = ExpertId::AE;
};

inline SyntheticVideo generate_video(const GeneratorConfig& cfg, const World& world, std::size_t index) {
    std::mt19937_64 rng(splitmix64(cfg.seed * 0x100000001b3ull + index));
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto noise = [&](double scale) { return cfg.noise > 0.0 ? cfg.noise * scale * gauss(rng) : 0.0; };

    SyntheticVideo v;
    {
        std::ostringstream id;
        id << "s" << cfg.seed << "_v" << index;
        v.id = id.str();
    }
    v.duration_s = std::uniform_int_distribution<int>(cfg.min_duration_s, cfg.max_duration_s)(rng);
    const std::size_t frames = v.frame_count();

    QuadrupleIds q;
    q.subject = std::uniform_int_distribution<std::size_t>(0, cfg.subjects - 1)(rng);
    q.event_type = std::uniform_int_distribution<std::size_t>(0, vocab::event_types().size() - 1)(rng);
    q.object = std::uniform_int_distribution<std::size_t>(0, cfg.objects - 1)(rng);
    q.scene = std::uniform_int_distribution<std::size_t>(0, vocab::scenes().size() - 1)(rng);
    const EventQuadruple quad = quadruple_names(q);

    // Event count, lengths and non-overlapping placement with at least one normal frame between events.
    std::size_t count = 1;
    if (cfg.events_mean > 1.0)
        count += static_cast<std::size_t>(std::poisson_distribution<int>(cfg.events_mean - 1.0)(rng));
    const auto min_len = static_cast<std::size_t>(std::llround(cfg.min_event_s * kFps));
    const auto max_len = std::min(frames, static_cast<std::size_t>(std::llround(cfg.max_event_s * kFps)));
    std::uniform_int_distribution<std::size_t> len_dist(std::max<std::size_t>(1, min_len), std::max(min_len, max_len));
    std::vector<std::size_t> lengths(count);
    for (auto& l : lengths) l = len_dist(rng);
    auto needed = [&] {
        std::size_t s = 0;
        for (auto l : lengths) s += l;
        return s + lengths.size() - 1;
    };
    while (lengths.size() > 1 && needed() > frames) lengths.pop_back();
    if (needed() > frames) throw std::invalid_argument("generator config: event longer than video");
    const std::size_t slack = frames - needed();
    std::vector<std::size_t> cuts(lengths.size());
    std::uniform_int_distribution<std::size_t> cut_dist(0, slack);
    for (auto& c : cuts) c = cut_dist(rng);
    std::sort(cuts.begin(), cuts.end());

    std::discrete_distribution<int> channel_dist(cfg.mix.begin(), cfg.mix.end());
    std::vector<EventWindow> windows;
    std::size_t cursor = 0, prev_cut = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        cursor += cuts[i] - prev_cut + (i ? 1 : 0);
        prev_cut = cuts[i];
        EventWindow w{cursor, cursor + lengths[i], static_cast<ExpertId>(channel_dist(rng))};
        windows.push_back(w);
        cursor = w.last;
        v.events.push_back({static_cast<double>(w.first) / kFps, static_cast<double>(w.last) / kFps, quad, w.channel});
    }
    v.labels = labels_from_events(frames, v.events, kFps);

    const std::size_t persons = std::uniform_int_distribution<std::size_t>(cfg.min_persons, cfg.max_persons)(rng);
    const auto props = World::scene_props(q.scene);
    v.poses.resize(frames);
    v.graphs.resize(frames);
    v.features.resize(frames);

    std::size_t w = 0;
    for (std::size_t f = 0; f < frames; ++f) {
        while (w < windows.size() && windows[w].last <= f) ++w;
        const bool in_event = w < windows.size() && windows[w].first <= f;
        const ExpertId channel = in_event ? windows[w].channel : ExpertId::GE;

        PoseFrame& pf = v.poses[f];
        pf.persons.resize(persons);
        for (std::size_t p = 0; p < persons; ++p) {
            const double shift = (static_cast<double>(p) - 0.5 * static_cast<double>(persons - 1)) * 0.1;
            for (std::size_t j = 0; j < kJoints; ++j) {
                double x = world.template_pose[j][0] + shift;
                double y = world.template_pose[j][1];
                if (channel == ExpertId::AE) {
                    for (const auto* sig : {&world.pose_abnormal, &world.pose_type[q.event_type],
                                            &world.pose_subject[q.subject], &world.pose_object[q.object]}) {
                        x += (*sig)[2 * j];
                        y += (*sig)[2 * j + 1];
                    }
                }
                pf.persons[p][j] = {clamp01(x + noise(0.05)), clamp01(y + noise(0.05)), clamp01(0.9 + noise(0.05))};
            }
        }

        ObjectRelationGraph& g = v.graphs[f];
        auto box_for = [&](std::size_t entity) {
            const auto& c = world.entity_center[entity];
            const double cx = std::clamp(c[0] + noise(0.02), 0.1, 0.9);
            const double cy = std::clamp(c[1] + noise(0.02), 0.1, 0.9);
            return Box{cx - 0.1, cy - 0.1, cx + 0.1, cy + 0.1};
        };
        for (std::size_t p : props) g.nodes.push_back({vocab::prop_entity(p), box_for(vocab::prop_entity(p))});
        g.edges.push_back({0, World::scene_relation(q.scene), 1});
        if (channel == ExpertId::ORE) {
            const std::size_t s = vocab::subject_entity(q.subject), o = vocab::object_entity(q.object);
            g.nodes.push_back({s, box_for(s)});
            g.nodes.push_back({o, box_for(o)});
            g.edges.push_back({3, vocab::type_relation(q.event_type), 4});
        }

        FrameFeatures& ff = v.features[f];
        ff.background.resize(cfg.background_width);
        for (std::size_t i = 0; i < cfg.background_width; ++i) {
            double x = world.bg_scene[q.scene][i];
            if (channel == ExpertId::BE)
                x += world.bg_abnormal[i] + world.bg_type[q.event_type][i] + world.bg_subject[q.subject][i] +
                     world.bg_object[q.object][i];
            ff.background[i] = x + noise(1.0);
        }
        ff.global.resize(cfg.global_width);
        for (std::size_t i = 0; i < cfg.global_width; ++i)
            ff.global[i] = world.global_scene[q.scene][i] + (in_event ? world.global_abnormal[i] : 0.0) + noise(1.0);
    }
    return v;
}

}  // namespace detail

/// Deterministic dataset: video i depends only on (seed, i) and the world seed.
inline Dataset generate(const GeneratorConfig& cfg) {
    cfg.validate();
    const World world(cfg.world_seed, cfg.background_width, cfg.global_width);
    Dataset out;
    out.reserve(cfg.videos);
    for (std::size_t i = 0; i < cfg.videos; ++i) out.push_back(detail::generate_video(cfg, world, i));
    return out;
}

// ---------------------------------------------------------------------------
// Dataset files: a header line, then one JSON object per video.
// ---------------------------------------------------------------------------

inline constexpr const char* kDatasetFormat = "smoe-dataset";
inline constexpr int kDatasetVersion = 1;

namespace detail {

using nlohmann::json;

inline ExpertId parse_expert(const std::string& s) {
    for (std::size_t i = 0; i < kExperts; ++i)
        if (s == expert_name(static_cast<ExpertId>(i))) return static_cast<ExpertId>(i);
    throw std::invalid_argument("unknown expert tag '" + s + "'");
}

inline json event_to_json(const AbnormalEvent& e) {
    return json{{"start_s", e.start_s},          {"end_s", e.end_s},
                {"subject", e.quadruple.subject}, {"event_type", e.quadruple.event_type},
                {"object", e.quadruple.object},   {"scene", e.quadruple.scene},
                {"channel", expert_name(e.channel)}};
}

inline AbnormalEvent event_from_json(const json& j) {
    AbnormalEvent e;
    e.start_s = j.at("start_s").get<double>();
    e.end_s = j.at("end_s").get<double>();
    e.quadruple = {j.at("subject").get<std::string>(), j.at("event_type").get<std::string>(),
                   j.at("object").get<std::string>(), j.at("scene").get<std::string>()};
    if (j.contains("channel")) e.channel = parse_expert(j.at("channel").get<std::string>());
    if (!(e.start_s >= 0.0 && e.start_s < e.end_s)) throw std::invalid_argument("event needs 0 <= start_s < end_s");
    return e;
}

inline std::string labels_to_string(std::span<const std::uint8_t> labels) {
    std::string s(labels.size(), '0');
    for (std::size_t i = 0; i < labels.size(); ++i) s[i] = labels[i] ? '1' : '0';
    return s;
}

inline std::vector<std::uint8_t> labels_from_string(const std::string& s) {
    std::vector<std::uint8_t> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '0' && s[i] != '1') throw std::invalid_argument("frame labels must be '0' or '1'");
        out[i] = s[i] == '1';
    }
    return out;
}

inline json video_to_json(const SyntheticVideo& v) {
    json poses = json::array();
    for (const auto& pf : v.poses) {
        json persons = json::array();
        for (const auto& p : pf.persons) {
            json joints = json::array();
            for (const auto& j : p) joints.push_back({j.x, j.y, j.confidence});
            persons.push_back(std::move(joints));
        }
        poses.push_back(std::move(persons));
    }
    json graphs = json::array();
    for (const auto& g : v.graphs) {
        json nodes = json::array(), edges = json::array();
        for (const auto& n : g.nodes) nodes.push_back({n.class_id, n.box.x1, n.box.y1, n.box.x2, n.box.y2});
        for (const auto& e : g.edges) edges.push_back({e.subject, e.relation, e.object});
        graphs.push_back({{"nodes", std::move(nodes)}, {"edges", std::move(edges)}});
    }
    json background = json::array(), global = json::array();
    for (const auto& f : v.features) {
        background.push_back(f.background);
        global.push_back(f.global);
    }
    json events = json::array();
    for (const auto& e : v.events) events.push_back(event_to_json(e));
    return json{{"id", v.id},
                {"duration_s", v.duration_s},
                {"fps", v.fps},
                {"labels", labels_to_string(v.labels)},
                {"events", std::move(events)},
                {"poses", std::move(poses)},
                {"graphs", std::move(graphs)},
                {"background", std::move(background)},
                {"global", std::move(global)}};
}

/// Identity, timing, labels and events; per-frame inputs when `full`.
inline SyntheticVideo video_from_json(const json& j, bool full) {
    SyntheticVideo v;
    v.id = j.at("id").get<std::string>();
    v.duration_s = j.at("duration_s").get<int>();
    v.fps = j.at("fps").get<int>();
    if (v.duration_s < 1 || v.fps != kFps) throw std::invalid_argument("unsupported duration or frame rate");
    v.labels = labels_from_string(j.at("labels").get<std::string>());
    if (v.labels.size() != v.frame_count()) throw std::invalid_argument("label count does not match duration x fps");
    for (const auto& e : j.at("events")) {
        v.events.push_back(event_from_json(e));
        if (v.events.back().end_s > v.duration_s) throw std::invalid_argument("event ends after the video");
    }
    if (!full) return v;

    const std::size_t frames = v.frame_count();
    const auto& poses = j.at("poses");
    const auto& graphs = j.at("graphs");
    const auto& background = j.at("background");
    const auto& global = j.at("global");
    if (poses.size() != frames || graphs.size() != frames || background.size() != frames || global.size() != frames)
        throw std::invalid_argument("per-frame arrays must hold one entry per frame");
    v.poses.resize(frames);
    v.graphs.resize(frames);
    v.features.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        for (const auto& person : poses[f]) {
            if (person.size() != kJoints) throw std::invalid_argument("a person must have 17 joints");
            PersonPose p;
            for (std::size_t k = 0; k < kJoints; ++k) {
                const auto& jt = person[k];
                p[k] = {jt.at(0).get<double>(), jt.at(1).get<double>(), jt.at(2).get<double>()};
            }
            v.poses[f].persons.push_back(p);
        }
        for (const auto& n : graphs[f].at("nodes"))
            v.graphs[f].nodes.push_back({n.at(0).get<std::size_t>(),
                                         {n.at(1).get<double>(), n.at(2).get<double>(), n.at(3).get<double>(),
                                          n.at(4).get<double>()}});
        for (const auto& e : graphs[f].at("edges"))
            v.graphs[f].edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<std::size_t>()});
        v.graphs[f].validate();
        v.features[f].background = background[f].get<std::vector<double>>();
        v.features[f].global = global[f].get<std::vector<double>>();
    }
    return v;
}

template <class Record>
std::vector<Record> read_records(const std::string& path, const char* format, int version,
                                 const std::function<Record(const json&)>& parse) {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path, 1, "missing header line");
    ++lineno;
    std::size_t count = 0;
    try {
        const json header = json::parse(line);
        if (header.at("format").get<std::string>() != format)
            throw ParseError(path, lineno, "expected format '" + std::string(format) + "'");
        if (header.at("version").get<int>() != version)
            throw ParseError(path, lineno,
                             "unsupported version " + std::to_string(header.at("version").get<int>()) + ", expected " +
                                 std::to_string(version));
        count = header.at("count").get<std::size_t>();
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(path, lineno, std::string("bad header: ") + e.what());
    }
    std::vector<Record> out;
    out.reserve(count);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(parse(json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(path, lineno, e.what());
        }
    }
    if (out.size() != count)
        throw ParseError(path, lineno,
                         "header announces " + std::to_string(count) + " records, found " + std::to_string(out.size()));
    return out;
}

}  // namespace detail

inline std::string dataset_to_string(const Dataset& d) {
    std::string out = nlohmann::json{{"format", kDatasetFormat}, {"version", kDatasetVersion}, {"count", d.size()}}.dump();
    out += '\n';
    for (const auto& v : d) {
        out += detail::video_to_json(v).dump();
        out += '\n';
    }
    return out;
}

inline void write_dataset(const Dataset& d, const std::string& path) { write_file(path, dataset_to_string(d)); }

inline Dataset read_dataset(const std::string& path) {
    return detail::read_records<SyntheticVideo>(path, kDatasetFormat, kDatasetVersion,
                                                [](const nlohmann::json& j) { return detail::video_from_json(j, true); });
}

/// Reads only ids, durations, labels and events; per-frame inputs may be absent.
inline Dataset read_annotations(const std::string& path) {
    return detail::read_records<SyntheticVideo>(path, kDatasetFormat, kDatasetVersion,
                                                [](const nlohmann::json& j) { return detail::video_from_json(j, false); });
}

}  // namespace smoe
