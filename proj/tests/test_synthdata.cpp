#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <optional>

#include "smoe/synthdata.hpp"
#include "test_support.hpp"

using namespace smoe;

namespace {

GeneratorConfig short_config(std::uint64_t seed, std::size_t videos) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.videos = videos;
    cfg.min_duration_s = 10;
    cfg.max_duration_s = 20;
    cfg.min_event_s = 2.0;
    cfg.max_event_s = 4.0;
    return cfg;
}

World world_of(const GeneratorConfig& cfg) { return World(cfg.world_seed, cfg.background_width, cfg.global_width); }

double sq(double x) { return x * x; }

template <class Cost>
std::size_t nearest(std::size_t classes, Cost cost) {
    std::size_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
        const double v = cost(c);
        if (v < best_cost) best_cost = v, best = c;
    }
    return best;
}

std::size_t first_normal_frame(const SyntheticVideo& v) {
    for (std::size_t f = 0; f < v.labels.size(); ++f)
        if (!v.labels[f]) return f;
    ADD_FAILURE() << v.id << " has no normal frame";
    return 0;
}

// Decodes one element from the pose channel: for each candidate class,
// rebuild the expected joints of the element's joint group from the
// person's normal-frame pose and compare.
std::size_t decode_pose(const World& w, const SyntheticVideo& v, std::size_t frame, World::Slot slot,
                        const std::vector<std::vector<double>>& codes) {
    const PersonPose& base = v.poses[first_normal_frame(v)].persons[0];
    const PersonPose& seen = v.poses[frame].persons[0];
    return nearest(codes.size(), [&](std::size_t c) {
        double cost = 0.0;
        for (std::size_t j = 0; j < kJoints; ++j) {
            if (World::joint_slot(j) != slot) continue;
            const double ex = std::clamp(base[j].x + w.pose_abnormal[2 * j] + codes[c][2 * j], 0.0, 1.0);
            const double ey = std::clamp(base[j].y + w.pose_abnormal[2 * j + 1] + codes[c][2 * j + 1], 0.0, 1.0);
            cost += sq(seen[j].x - ex) + sq(seen[j].y - ey);
        }
        return cost;
    });
}

std::size_t decode_scene(const World& w, const SyntheticVideo& v) {
    const auto& g = v.features[first_normal_frame(v)].global;
    return nearest(w.global_scene.size(), [&](std::size_t c) {
        double cost = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) cost += sq(g[i] - w.global_scene[c][i]);
        return cost;
    });
}

std::size_t decode_background(const World& w, const SyntheticVideo& v, std::size_t frame, World::Slot slot,
                              const std::vector<std::vector<double>>& codes) {
    const auto& bg = v.features[frame].background;
    const std::size_t scene = decode_scene(w, v);
    return nearest(codes.size(), [&](std::size_t c) {
        double cost = 0.0;
        for (std::size_t i = 0; i < bg.size(); ++i) {
            if (World::feature_slot(i, bg.size()) != slot) continue;
            cost += sq(bg[i] - w.bg_scene[scene][i] - w.bg_abnormal[i] - codes[c][i]);
        }
        return cost;
    });
}

struct Decoded {
    std::optional<std::size_t> type, subject, object;
};

// Object-relation channel: the event relation and its endpoints, when present.
Decoded decode_graph(const ObjectRelationGraph& g) {
    Decoded d;
    for (const auto& e : g.edges) {
        if (e.relation < vocab::kNormalRelations) continue;
        d.type = e.relation - vocab::type_relation(0);
        d.subject = g.nodes[e.subject].class_id - vocab::subject_entity(0);
        d.object = g.nodes[e.object].class_id - vocab::object_entity(0);
    }
    return d;
}

std::size_t middle_frame(const AbnormalEvent& e) {
    return static_cast<std::size_t>(std::llround((e.start_s + e.end_s) / 2.0 * kFps));
}

}  // namespace

TEST(Generate, DeterministicForSeed) {
    GeneratorConfig cfg = short_config(5, 20);
    EXPECT_EQ(generate(cfg), generate(cfg));
    EXPECT_EQ(dataset_to_string(generate(cfg)), dataset_to_string(generate(cfg)));
    GeneratorConfig other = cfg;
    other.seed = 6;
    EXPECT_NE(generate(cfg), generate(other));
}

TEST(Generate, VideoDependsOnlyOnSeedAndIndex) {
    GeneratorConfig small = short_config(7, 3);
    GeneratorConfig large = short_config(7, 10);
    Dataset a = generate(small), b = generate(large);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Generate, StructuralInvariants) {
    Dataset d = generate(short_config(8, 50));
    for (const auto& v : d) {
        ASSERT_EQ(v.fps, 8);
        const std::size_t m = v.frame_count();
        EXPECT_EQ(m, static_cast<std::size_t>(v.duration_s) * 8);
        EXPECT_EQ(v.poses.size(), m);
        EXPECT_EQ(v.graphs.size(), m);
        EXPECT_EQ(v.features.size(), m);
        EXPECT_EQ(v.labels.size(), m);
        ASSERT_FALSE(v.events.empty());
        for (std::size_t i = 0; i < v.events.size(); ++i) {
            const auto& e = v.events[i];
            EXPECT_LE(0.0, e.start_s);
            EXPECT_LT(e.start_s, e.end_s);
            EXPECT_LE(e.end_s, v.duration_s);
            EXPECT_EQ(e.quadruple, v.events[0].quadruple);
            if (i) EXPECT_LT(v.events[i - 1].end_s, e.start_s);
            quadruple_ids(e.quadruple);
        }
        for (const auto& f : v.poses)
            for (const auto& p : f.persons)
                for (const auto& j : p) {
                    EXPECT_TRUE(0.0 <= j.x && j.x <= 1.0 && 0.0 <= j.y && j.y <= 1.0);
                    EXPECT_TRUE(0.0 <= j.confidence && j.confidence <= 1.0);
                }
        for (const auto& g : v.graphs) EXPECT_NO_THROW(g.validate());
    }
}

TEST(Generate, LabelsReconstructEvents) {
    Dataset d = generate(short_config(9, 100));
    for (const auto& v : d) {
        auto runs = label_runs(v.labels);
        ASSERT_EQ(runs.size(), v.events.size()) << v.id;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            EXPECT_DOUBLE_EQ(runs[i].first / 8.0, v.events[i].start_s);
            EXPECT_DOUBLE_EQ(runs[i].second / 8.0, v.events[i].end_s);
        }
    }
}

TEST(Generate, EventsPerVideoMean) {
    GeneratorConfig cfg;
    cfg.seed = 10;
    cfg.videos = 1000;
    cfg.background_width = 4;
    cfg.global_width = 4;
    cfg.max_persons = 1;
    std::size_t events = 0;
    for (const auto& v : generate(cfg)) events += v.events.size();
    EXPECT_NEAR(events / 1000.0, 1.68, 0.1);
}

TEST(Generate, ChannelProportionsFollowMix) {
    for (std::array<double, 3> mix : {std::array<double, 3>{0.45, 0.25, 0.30}, std::array<double, 3>{0.2, 0.5, 0.3}}) {
        GeneratorConfig cfg = short_config(11, 700);
        cfg.mix = mix;
        std::array<double, 3> count{};
        double total = 0;
        for (const auto& v : generate(cfg))
            for (const auto& e : v.events) {
                count[static_cast<std::size_t>(e.channel)] += 1;
                total += 1;
            }
        ASSERT_GE(total, 1000);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(count[c] / total, mix[c], 0.03);
    }
}

TEST(Generate, NoiselessSignaturesDecodeExactly) {
    GeneratorConfig cfg = short_config(12, 120);
    const World w = world_of(cfg);
    std::size_t checked = 0;
    for (const auto& v : generate(cfg)) {
        const QuadrupleIds q = quadruple_ids(v.events[0].quadruple);
        EXPECT_EQ(decode_scene(w, v), q.scene) << v.id;
        for (const auto& e : v.events) {
            const std::size_t f = middle_frame(e);
            ASSERT_TRUE(v.labels[f]);
            QuadrupleIds got = q;
            switch (e.channel) {
                case ExpertId::AE:
                    got.event_type = decode_pose(w, v, f, World::Slot::Type, w.pose_type);
                    got.subject = decode_pose(w, v, f, World::Slot::Subject, w.pose_subject);
                    got.object = decode_pose(w, v, f, World::Slot::Object, w.pose_object);
                    break;
                case ExpertId::ORE: {
                    Decoded d = decode_graph(v.graphs[f]);
                    ASSERT_TRUE(d.type && d.subject && d.object);
                    got = {*d.subject, *d.type, *d.object, q.scene};
                    break;
                }
                case ExpertId::BE:
                    got.event_type = decode_background(w, v, f, World::Slot::Type, w.bg_type);
                    got.subject = decode_background(w, v, f, World::Slot::Subject, w.bg_subject);
                    got.object = decode_background(w, v, f, World::Slot::Object, w.bg_object);
                    break;
                case ExpertId::GE:
                    FAIL() << "events are never planted in the global channel";
            }
            EXPECT_EQ(got.event_type, q.event_type) << v.id << " via " << expert_name(e.channel);
            EXPECT_EQ(got.subject, q.subject) << v.id << " via " << expert_name(e.channel);
            EXPECT_EQ(got.object, q.object) << v.id << " via " << expert_name(e.channel);
            ++checked;
        }
    }
    EXPECT_GT(checked, 150u);
}

TEST(Generate, PoseOnlyMixIsInvisibleToOtherChannels) {
    GeneratorConfig cfg = short_config(13, 400);
    cfg.mix = {1.0, 0.0, 0.0};
    const World w = world_of(cfg);
    std::size_t events = 0, pose_hits = 0, graph_hits = 0;
    for (const auto& v : generate(cfg)) {
        const QuadrupleIds q = quadruple_ids(v.events[0].quadruple);
        const std::size_t normal = first_normal_frame(v);
        for (const auto& e : v.events) {
            const std::size_t f = middle_frame(e);
            ++events;
            pose_hits += decode_pose(w, v, f, World::Slot::Type, w.pose_type) == q.event_type;
            // The graph and background of an event frame equal those of a normal frame.
            EXPECT_EQ(v.graphs[f], v.graphs[normal]);
            EXPECT_EQ(v.features[f].background, v.features[normal].background);
            Decoded d = decode_graph(v.graphs[f]);
            graph_hits += d.type.value_or(0) == q.event_type;
        }
    }
    EXPECT_EQ(pose_hits, events);
    EXPECT_NEAR(double(graph_hits) / events, 1.0 / 11.0, 0.05);
}

TEST(Generate, GlobalFeaturesCarrySceneInsideEvents) {
    GeneratorConfig cfg = short_config(14, 60);
    const World w = world_of(cfg);
    for (const auto& v : generate(cfg)) {
        const QuadrupleIds q = quadruple_ids(v.events[0].quadruple);
        for (const auto& e : v.events) {
            const auto& g = v.features[middle_frame(e)].global;
            for (std::size_t i = 0; i < g.size(); ++i)
                EXPECT_DOUBLE_EQ(g[i], w.global_scene[q.scene][i] + w.global_abnormal[i]);
        }
    }
}

TEST(Generate, SignatureCodesAreDistinctWithinEachSlot) {
    const World w(20240601, 32, 16);
    auto distinct = [](const std::vector<std::vector<double>>& codes) {
        for (std::size_t a = 0; a < codes.size(); ++a)
            for (std::size_t b = a + 1; b < codes.size(); ++b)
                if (codes[a] == codes[b]) return false;
        return true;
    };
    EXPECT_TRUE(distinct(w.pose_type));
    EXPECT_TRUE(distinct(w.pose_subject));
    EXPECT_TRUE(distinct(w.bg_type));
    EXPECT_TRUE(distinct(w.bg_subject));
    EXPECT_TRUE(distinct(w.bg_object));
    EXPECT_TRUE(distinct(w.bg_scene));
    EXPECT_TRUE(distinct(w.global_scene));
}

TEST(Generate, InfeasibleConfigsRejected) {
    GeneratorConfig cfg = short_config(1, 1);
    cfg.min_event_s = 30;
    cfg.max_event_s = 40;
    EXPECT_THROW(generate(cfg), std::invalid_argument);
    cfg = short_config(1, 1);
    cfg.mix = {0.5, 0.5, 0.5};
    EXPECT_THROW(generate(cfg), std::invalid_argument);
    cfg.mix = {1.2, -0.2, 0.0};
    EXPECT_THROW(generate(cfg), std::invalid_argument);
    cfg = short_config(1, 1);
    cfg.max_duration_s = 5;
    EXPECT_THROW(generate(cfg), std::invalid_argument);
    cfg = short_config(1, 1);
    cfg.subjects = 0;
    EXPECT_THROW(generate(cfg), std::invalid_argument);
}

TEST(Generate, NoiseChangesFeaturesButNotAnnotations) {
    GeneratorConfig clean = short_config(15, 5);
    GeneratorConfig noisy = clean;
    noisy.noise = 0.3;
    Dataset a = generate(clean), b = generate(noisy);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].events, b[i].events);
        EXPECT_EQ(a[i].labels, b[i].labels);
        EXPECT_NE(a[i].features, b[i].features);
    }
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

TEST(DatasetFile, EmptyDatasetRoundTrips) {
    smoe::test::TempDir dir;
    write_dataset({}, dir.file("empty.jsonl"));
    EXPECT_TRUE(read_dataset(dir.file("empty.jsonl")).empty());
}

TEST(DatasetFile, SingleVideoRoundTrips) {
    smoe::test::TempDir dir;
    GeneratorConfig cfg = short_config(16, 1);
    cfg.noise = 0.1;
    Dataset d = generate(cfg);
    write_dataset(d, dir.file("one.jsonl"));
    EXPECT_EQ(read_dataset(dir.file("one.jsonl")), d);
}

TEST(DatasetFile, HundredVideosHashIdentical) {
    smoe::test::TempDir dir;
    GeneratorConfig cfg = short_config(17, 100);
    cfg.noise = 0.05;
    Dataset d = generate(cfg);
    write_dataset(d, dir.file("a.jsonl"));
    Dataset back = read_dataset(dir.file("a.jsonl"));
    EXPECT_EQ(back, d);
    write_dataset(back, dir.file("b.jsonl"));
    EXPECT_EQ(file_hash(dir.file("a.jsonl")), file_hash(dir.file("b.jsonl")));
}

TEST(DatasetFile, AnnotationsOnlyReadSkipsFrames) {
    smoe::test::TempDir dir;
    Dataset d = generate(short_config(18, 3));
    write_dataset(d, dir.file("d.jsonl"));
    Dataset ann = read_annotations(dir.file("d.jsonl"));
    ASSERT_EQ(ann.size(), 3u);
    EXPECT_EQ(ann[1].events, d[1].events);
    EXPECT_TRUE(ann[1].poses.empty());
}

TEST(DatasetFile, MalformedLineReportsLineNumber) {
    smoe::test::TempDir dir;
    Dataset d = generate(short_config(19, 3));
    std::string text = dataset_to_string(d);
    const auto second = text.find('\n', text.find('\n') + 1);
    text.insert(second + 1, "{\"id\": broken");
    write_file(dir.file("bad.jsonl"), text);
    try {
        read_dataset(dir.file("bad.jsonl"));
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(DatasetFile, VersionAndFormatChecked) {
    smoe::test::TempDir dir;
    write_file(dir.file("v.jsonl"), "{\"format\":\"smoe-dataset\",\"version\":2,\"count\":0}\n");
    EXPECT_THROW(read_dataset(dir.file("v.jsonl")), ParseError);
    write_file(dir.file("f.jsonl"), "{\"format\":\"other\",\"version\":1,\"count\":0}\n");
    EXPECT_THROW(read_dataset(dir.file("f.jsonl")), ParseError);
    write_file(dir.file("c.jsonl"), "{\"format\":\"smoe-dataset\",\"version\":1,\"count\":2}\n");
    EXPECT_THROW(read_dataset(dir.file("c.jsonl")), ParseError);
    EXPECT_THROW(read_dataset(dir.file("missing.jsonl")), IoError);
}
