#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smoe/model.hpp"
#include "test_support.hpp"

using namespace smoe;
using smoe::test::expect_near;
using smoe::test::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
    return m;
}

Mat mul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

ModelConfig small_config(std::size_t d = 4) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.background_width = 5;
    cfg.global_width = 3;
    return cfg;
}

PersonPose random_person(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PersonPose p;
    for (auto& j : p) j = {u(rng), u(rng), u(rng)};
    return p;
}

// Straight-line evaluation of the action expert for one video.
Mat reference_action_expert(const ParamSet& ps, const std::vector<PoseFrame>& frames, const Mat& video_tokens) {
    const Mat w_pose = to_mat(ps.value(pname::ae_pose));
    const Mat w_a = to_mat(ps.value(pname::ae_attn));
    const Mat w_k = to_mat(ps.value(pname::ae_combine));
    const std::size_t d = w_a.size();
    std::vector<std::vector<std::size_t>> adj(kJoints);
    for (std::size_t j = 0; j < kJoints; ++j) adj[j].push_back(j);
    for (auto [a, b] : skeleton_edges()) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }

    Mat tokens;
    for (const auto& frame : frames) {
        std::vector<double> token(d, 0.0);
        for (const auto& person : frame.persons) {
            double cx = 0.0, cy = 0.0;
            for (const auto& jt : person) cx += jt.x / kJoints, cy += jt.y / kJoints;
            Mat h(kJoints, std::vector<double>(d, 0.0));
            for (std::size_t j = 0; j < kJoints; ++j) {
                const double in[3] = {person[j].x - cx, person[j].y - cy, person[j].confidence};
                for (std::size_t t = 0; t < 3; ++t)
                    for (std::size_t c = 0; c < d; ++c) h[j][c] += in[t] * w_pose[3 * j + t][c];
            }
            const Mat z = mul(h, w_a);
            for (std::size_t j = 0; j < kJoints; ++j) {
                std::vector<double> logits;
                for (std::size_t k : adj[j]) logits.push_back(dot(z[j], z[k]) / std::sqrt(double(d)));
                const double mx = *std::max_element(logits.begin(), logits.end());
                double total = 0.0;
                for (double& l : logits) total += (l = std::exp(l - mx));
                std::vector<double> cat(2 * d, 0.0);
                for (std::size_t i = 0; i < adj[j].size(); ++i)
                    for (std::size_t c = 0; c < d; ++c) cat[c] += logits[i] / total * h[adj[j][i]][c];
                for (std::size_t c = 0; c < d; ++c) cat[d + c] = h[j][c];
                for (std::size_t c = 0; c < d; ++c) {
                    double v = 0.0;
                    for (std::size_t r = 0; r < 2 * d; ++r) v += cat[r] * w_k[r][c];
                    token[c] += std::max(v, 0.0) / double(kJoints * frame.persons.size());
                }
            }
        }
        tokens.push_back(token);
    }
    const Mat q = mul(video_tokens, to_mat(ps.value(pname::ae_query)));
    const Mat k = mul(tokens, to_mat(ps.value(pname::ae_key)));
    const Mat v = mul(tokens, to_mat(ps.value(pname::ae_value)));
    Mat out(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> w;
        for (const auto& kr : k) w.push_back(dot(q[i], kr));
        const double mx = *std::max_element(w.begin(), w.end());
        double total = 0.0;
        for (double& x : w) total += (x = std::exp(x - mx));
        for (std::size_t j = 0; j < k.size(); ++j)
            for (std::size_t c = 0; c < d; ++c) out[i][c] += w[j] / total * v[j][c];
    }
    return out;
}

ObjectRelationGraph two_node_graph() {
    ObjectRelationGraph g;
    g.nodes = {{vocab::subject_entity(0), {0.1, 0.2, 0.4, 0.9}}, {vocab::object_entity(1), {0.5, 0.5, 0.9, 0.8}}};
    g.edges = {{0, 2, 1}};
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph attention
// ---------------------------------------------------------------------------

TEST(GraphAttention, IdenticalMutualNodesSplitEvenly) {
    Tape t;
    Var h = t.constant(Tensor::matrix({{0.3, -0.7}, {0.3, -0.7}}));
    std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}};
    std::vector<std::vector<double>> alpha;
    graph_attention(h, neighborhoods(2, edges, false), t.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                    t.constant(Tensor::identity(4).reshaped({4, 4})), &alpha);
    // Without self-loops each node sees only the other; with them, itself too.
    ASSERT_EQ(alpha.size(), 2u);
    EXPECT_EQ(alpha[0], std::vector<double>{1.0});
    graph_attention(h, neighborhoods(2, edges, true), t.constant(Tensor::matrix({{1, 2}, {3, 4}})),
                    t.constant(Tensor({4, 2}, 0.1)), &alpha);
    for (const auto& row : alpha) {
        ASSERT_EQ(row.size(), 2u);
        EXPECT_DOUBLE_EQ(row[0], 0.5);
        EXPECT_DOUBLE_EQ(row[1], 0.5);
    }
}

TEST(GraphAttention, IsolatedNodeWithSelfLoopKeepsItsFeatures) {
    Tape t;
    Tensor h = Tensor::matrix({{0.5, -1.0, 2.0}});
    Tensor wk = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}, {1, 0}, {0, 1}, {-1, 1}});
    std::vector<std::pair<std::size_t, std::size_t>> none;
    std::vector<std::vector<double>> alpha;
    Var out = graph_attention(t.constant(h), neighborhoods(1, none, true), t.constant(Tensor::identity(3)),
                              t.constant(wk), &alpha);
    EXPECT_EQ(alpha[0], std::vector<double>{1.0});
    // [h, h] . W_k = (0.5 + 2 + 0.5 - 2, -1 + 2 - 1 + 2) = (1, 2)
    expect_near(out.value(), Tensor::matrix({{1.0, 2.0}}), 1e-15);
}

TEST(GraphAttention, PathGraphHandEvaluation) {
    // Path 0-1-2 with self-loops, W_a = diag(1, 2), d = 2.
    Tensor h = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
    Tensor wa = Tensor::matrix({{1, 0}, {0, 2}});
    Tensor wk = Tensor::matrix({{1, 0}, {0, 1}, {0.5, 0}, {0, -0.5}});
    std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}, {1, 2}};
    Tape t;
    std::vector<std::vector<double>> alpha;
    Var out = graph_attention(t.constant(h), neighborhoods(3, edges, true), t.constant(wa), t.constant(wk), &alpha);

    // z = (1,0), (0,2), (1,2); logits z_k.z_j / sqrt(2).
    const double s = 1.0 / std::sqrt(2.0);
    auto soft = [](std::vector<double> l) {
        double total = 0.0;
        for (double& x : l) total += (x = std::exp(x));
        for (double& x : l) x /= total;
        return l;
    };
    const auto a0 = soft({1 * s, 0 * s});          // node 0: {0, 1}
    const auto a1 = soft({0 * s, 4 * s, 4 * s});   // node 1: {0, 1, 2}
    const auto a2 = soft({4 * s, 5 * s});          // node 2: {1, 2}
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(alpha[0][i], a0[i], 1e-15);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(alpha[1][i], a1[i], 1e-15);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(alpha[2][i], a2[i], 1e-15);

    const double hh[3][2] = {{a0[0] * 1 + a0[1] * 0, a0[0] * 0 + a0[1] * 1},
                             {a1[0] * 1 + a1[1] * 0 + a1[2] * 1, a1[0] * 0 + a1[1] * 1 + a1[2] * 1},
                             {a2[0] * 0 + a2[1] * 1, a2[0] * 1 + a2[1] * 1}};
    for (std::size_t k = 0; k < 3; ++k) {
        const double o0 = std::max(0.0, hh[k][0] + 0.5 * h(k, 0));
        const double o1 = std::max(0.0, hh[k][1] - 0.5 * h(k, 1));
        EXPECT_NEAR(out.value()(k, 0), o0, 1e-12);
        EXPECT_NEAR(out.value()(k, 1), o1, 1e-12);
    }
}

TEST(GraphAttention, AlphaRowsSumToOne) {
    std::mt19937_64 rng(9);
    Tape t;
    std::vector<std::vector<double>> alpha;
    auto nb = neighborhoods(kJoints, skeleton_edges(), true);
    graph_attention(t.constant(random_tensor({kJoints, 5}, rng)), nb, t.constant(random_tensor({5, 5}, rng, -3, 3)),
                    t.constant(random_tensor({10, 5}, rng)), &alpha);
    for (const auto& row : alpha) EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
}

TEST(GraphAttention, EmptyNeighborhoodRejected) {
    Tape t;
    std::vector<std::pair<std::size_t, std::size_t>> edges = {{0, 1}};
    EXPECT_THROW(graph_attention(t.constant(Tensor::zeros(3, 2)), neighborhoods(3, edges, false),
                                 t.constant(Tensor::identity(2)), t.constant(Tensor::zeros(4, 2))),
                 DomainError);
}

TEST(GraphAttention, SkeletonIsSymmetricAndConnected) {
    auto nb = neighborhoods(kJoints, skeleton_edges(), false);
    for (std::size_t a = 0; a < kJoints; ++a)
        for (std::size_t b : nb[a]) EXPECT_NE(std::find(nb[b].begin(), nb[b].end(), a), nb[b].end());
    std::vector<bool> seen(kJoints, false);
    std::vector<std::size_t> stack = {0};
    seen[0] = true;
    while (!stack.empty()) {
        std::size_t a = stack.back();
        stack.pop_back();
        for (std::size_t b : nb[a])
            if (!seen[b]) seen[b] = true, stack.push_back(b);
    }
    EXPECT_EQ(std::count(seen.begin(), seen.end(), true), static_cast<long>(kJoints));
}

// ---------------------------------------------------------------------------
// Action expert
// ---------------------------------------------------------------------------

TEST(ActionExpert, ZeroPosesGiveZeroRows) {
    ParamSet ps = init_params(small_config(), 1);
    std::vector<PoseFrame> frames(3, PoseFrame{{PersonPose{}}});
    std::mt19937_64 rng(1);
    Tape t;
    ExpertOutput out = action_expert_forward(t, ps, frames, random_tensor({3, 3}, rng));
    EXPECT_EQ(out.tag, ExpertId::AE);
    for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(ActionExpert, SingleTokenReturnsValueRow) {
    ParamSet ps = init_params(small_config(), 2);
    std::mt19937_64 rng(2);
    std::vector<PoseFrame> frames = {PoseFrame{{random_person(rng)}}};
    Tape t;
    Var token = action_tokens(t, ps, frames);
    Tensor v = matmul(token.value(), ps.value(pname::ae_value));
    ExpertOutput out = action_expert_forward(t, ps, frames, random_tensor({1, 3}, rng));
    expect_near(out.value(), v, 1e-14);
}

TEST(ActionExpert, MatchesStraightLineReference) {
    ParamSet ps = init_params(small_config(), 3);
    std::mt19937_64 rng(3);
    std::vector<PoseFrame> frames = {PoseFrame{{random_person(rng), random_person(rng)}},
                                     PoseFrame{{random_person(rng), random_person(rng)}}};
    Tensor video = random_tensor({2, 3}, rng);
    Tape t;
    Tensor out = action_expert_forward(t, ps, frames, video).value();
    Mat ref = reference_action_expert(ps, frames, to_mat(video));
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            EXPECT_LT(std::abs(out(r, c) - ref[r][c]), 1e-10 * std::max(1.0, std::abs(ref[r][c])));
}

TEST(ActionExpert, InvariantToPersonOrder) {
    ParamSet ps = init_params(small_config(), 4);
    std::mt19937_64 rng(4);
    PersonPose a = random_person(rng), b = random_person(rng), c = random_person(rng);
    Tensor video = random_tensor({1, 3}, rng);
    Tape t;
    std::vector<PoseFrame> one = {PoseFrame{{a, b, c}}};
    std::vector<PoseFrame> two = {PoseFrame{{c, a, b}}};
    Tensor first = action_expert_forward(t, ps, one, video).value();
    expect_near(first, action_expert_forward(t, ps, two, video).value(), 1e-14);
}

TEST(ActionExpert, EmptyFrameContributesZeroToken) {
    ParamSet ps = init_params(small_config(), 5);
    std::mt19937_64 rng(5);
    std::vector<PoseFrame> frames = {PoseFrame{}, PoseFrame{{random_person(rng)}}};
    Tape t;
    Tensor tokens = action_tokens(t, ps, frames).value();
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(tokens(0, c), 0.0);
    ExpertOutput out = action_expert_forward(t, ps, frames, random_tensor({2, 3}, rng));
    EXPECT_TRUE(out.value().all_finite());
}

TEST(ActionExpert, FrameCountMismatchRejected) {
    ParamSet ps = init_params(small_config(), 6);
    std::vector<PoseFrame> frames(2);
    Tape t;
    EXPECT_THROW(action_expert_forward(t, ps, frames, Tensor::zeros(3, 3)), DimensionError);
}

// ---------------------------------------------------------------------------
// Object-relation expert
// ---------------------------------------------------------------------------

TEST(MaskGtn, RelationFreeFramesAreFullyMasked) {
    ParamSet ps = init_params(small_config(), 7);
    ObjectRelationGraph g = two_node_graph();
    g.edges.clear();
    std::vector<ObjectRelationGraph> graphs = {g, g};
    Tape t;
    ExpertOutput out = mask_gtn_forward(t, ps, graphs, GtnOptions{});
    EXPECT_EQ(out.tag, ExpertId::ORE);
    EXPECT_EQ(out.value(), Tensor::zeros(2, 4));
}

TEST(MaskGtn, TwoNodeSingleLayerHandEvaluation) {
    ParamSet ps = init_params(small_config(), 8);
    GtnOptions opt;
    opt.layers = 1;
    opt.relation_nodes = false;
    std::vector<ObjectRelationGraph> graphs = {two_node_graph()};
    Tape t;
    Tensor out = mask_gtn_forward(t, ps, graphs, opt).value();

    // Self-loops plus the edge: A = ones(2,2), D = diag(2,2), D^-1/2 A D^-1/2 = 0.5 ones.
    const Mat ent = to_mat(ps.value(pname::ore_entity));
    const Mat wb = to_mat(ps.value(pname::ore_box));
    const Mat w0 = to_mat(ps.value(pname::ore_layer(0)));
    Mat h(2, std::vector<double>(4, 0.0));
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& n = graphs[0].nodes[i];
        const double box[4] = {n.box.x1, n.box.y1, n.box.x2, n.box.y2};
        for (std::size_t c = 0; c < 4; ++c) {
            h[i][c] = ent[n.class_id][c];
            for (std::size_t r = 0; r < 4; ++r) h[i][c] += box[r] * wb[r][c];
        }
    }
    for (std::size_t c = 0; c < 4; ++c) {
        double v = 0.0;
        for (std::size_t r = 0; r < 4; ++r) v += 0.5 * (h[0][r] + h[1][r]) * w0[r][c];
        EXPECT_NEAR(out(0, c), std::max(v, 0.0), 1e-12);
    }
}

TEST(MaskGtn, LiteralDegreeFormScalesUp) {
    ParamSet ps = init_params(small_config(), 8);
    GtnOptions opt;
    opt.layers = 1;
    opt.relation_nodes = false;
    opt.linear_activation = true;
    std::vector<ObjectRelationGraph> graphs = {two_node_graph()};
    Tape t;
    Tensor standard = mask_gtn_forward(t, ps, graphs, opt).value();
    opt.literal_sqrt_degree = true;
    Tensor literal = mask_gtn_forward(t, ps, graphs, opt).value();
    // Entries become 2 instead of 0.5 on this graph.
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(literal(0, c), 4.0 * standard(0, c), 1e-12);
}

TEST(MaskGtn, TwoLinearIdentityLayersApplyAdjacencyTwice) {
    ModelConfig cfg = small_config();
    cfg.gtn.layers = 2;
    ParamSet ps = init_params(cfg, 9);
    ps.assign(pname::ore_layer(0), Tensor::identity(4));
    ps.assign(pname::ore_layer(1), Tensor::identity(4));
    GtnOptions opt;
    opt.layers = 2;
    opt.relation_nodes = false;
    opt.linear_activation = true;
    // Path a - b - c.
    ObjectRelationGraph g;
    g.nodes = {{0, {0.1, 0.1, 0.3, 0.3}}, {9, {0.2, 0.2, 0.6, 0.7}}, {15, {0.5, 0.1, 0.9, 0.4}}};
    g.edges = {{0, 0, 1}, {1, 1, 2}};
    std::vector<ObjectRelationGraph> graphs = {g};
    Tape t;
    Tensor out = mask_gtn_forward(t, ps, graphs, opt).value();

    const GtnLayout lay = build_gtn_layout(graphs, opt);
    Mat a(3, std::vector<double>(3, 0.0));
    for (const auto& e : lay.adjacency->entries) a[e.row][e.col] = e.value;
    EXPECT_NEAR(a[0][1], 1.0 / std::sqrt(2.0 * 3.0), 1e-15);
    EXPECT_NEAR(a[1][1], 1.0 / 3.0, 1e-15);
    Tape t0;
    Mat h0 = to_mat(add(gather_rows(t0.param(ps, pname::ore_entity), lay.object_classes),
                        matmul(t0.constant(lay.boxes), t0.param(ps, pname::ore_box)))
                        .value());
    Mat h2 = mul(a, mul(a, h0));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(0, c), (h2[0][c] + h2[1][c] + h2[2][c]) / 3.0, 1e-12);
}

TEST(MaskGtn, InvariantToNodeOrder) {
    ParamSet ps = init_params(small_config(), 10);
    ObjectRelationGraph g;
    g.nodes = {{0, {0.1, 0.1, 0.3, 0.3}}, {9, {0.2, 0.2, 0.6, 0.7}}, {15, {0.5, 0.1, 0.9, 0.4}},
               {20, {0.0, 0.0, 0.1, 0.1}}};
    g.edges = {{0, 5, 1}, {2, 1, 1}};
    const std::size_t perm[4] = {3, 1, 0, 2};  // old index -> new index
    ObjectRelationGraph p;
    p.nodes.resize(4);
    for (std::size_t i = 0; i < 4; ++i) p.nodes[perm[i]] = g.nodes[i];
    for (const auto& e : g.edges) p.edges.push_back({perm[e.subject], e.relation, perm[e.object]});
    std::vector<ObjectRelationGraph> a = {g}, b = {p};
    Tape t;
    Tensor first = mask_gtn_forward(t, ps, a, GtnOptions{}).value();
    expect_near(first, mask_gtn_forward(t, ps, b, GtnOptions{}).value(), 1e-12);
}

TEST(MaskGtn, RejectsInvalidGraphs) {
    ParamSet ps = init_params(small_config(), 11);
    ObjectRelationGraph g = two_node_graph();
    g.edges = {{0, 1, 0}};
    std::vector<ObjectRelationGraph> graphs = {g};
    Tape t;
    EXPECT_THROW(mask_gtn_forward(t, ps, graphs, GtnOptions{}), std::invalid_argument);
    g = two_node_graph();
    g.nodes[0].box = {0.5, 0.5, 0.4, 0.9};
    graphs = {g};
    EXPECT_THROW(mask_gtn_forward(t, ps, graphs, GtnOptions{}), std::invalid_argument);
    GtnOptions none;
    none.layers = 0;
    graphs = {two_node_graph()};
    EXPECT_THROW(mask_gtn_forward(t, ps, graphs, none), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Background and global experts
// ---------------------------------------------------------------------------

TEST(BackgroundExpert, ZeroInputGivesZeroRows) {
    ParamSet ps = init_params(small_config(), 12);
    std::vector<FrameFeatures> frames(3, FrameFeatures{std::vector<double>(5, 0.0), std::vector<double>(3, 1.0)});
    Tape t;
    EXPECT_EQ(background_expert_forward(t, ps, frames).value(), Tensor::zeros(3, 4));
}

TEST(BackgroundExpert, IdentityProjectionPassesThrough) {
    ModelConfig cfg = small_config();
    cfg.background_width = 4;
    ParamSet ps = init_params(cfg, 13);
    ps.assign(pname::be_proj, Tensor::identity(4));
    std::vector<FrameFeatures> frames = {{{1, -2, 3, 0.5}, {0, 0, 0}}, {{0, 7, -1, 2}, {0, 0, 0}}};
    Tape t;
    EXPECT_EQ(background_expert_forward(t, ps, frames).value(), Tensor::matrix({{1, -2, 3, 0.5}, {0, 7, -1, 2}}));
}

TEST(BackgroundExpert, GradientMatchesFiniteDifferences) {
    ParamSet ps = init_params(small_config(), 14);
    std::mt19937_64 rng(14);
    std::vector<FrameFeatures> frames;
    for (int f = 0; f < 4; ++f) {
        Tensor b = random_tensor({5}, rng);
        frames.push_back({b.values(), {0, 0, 0}});
    }
    for (auto& [name, e] : ps) e.trainable = name == pname::be_proj;
    double err = smoe::test::gradient_error(
        ps, [&](Tape& t, const ParamSet& p) { return sum(background_expert_forward(t, p, frames).rows); });
    EXPECT_LT(err, 1e-5);
}

TEST(BackgroundExpert, MissingVectorRejected) {
    ParamSet ps = init_params(small_config(), 15);
    std::vector<FrameFeatures> frames = {{{1, 2, 3, 4, 5}, {0, 0, 0}}, {{}, {0, 0, 0}}};
    Tape t;
    EXPECT_THROW(background_expert_forward(t, ps, frames), std::invalid_argument);
}

TEST(GlobalExpert, ZeroInputZeroBiasesGiveZeroRows) {
    ParamSet ps = init_params(small_config(), 16);
    std::vector<FrameFeatures> frames(2, FrameFeatures{std::vector<double>(5, 1.0), std::vector<double>(3, 0.0)});
    Tape t;
    EXPECT_EQ(global_expert_forward(t, ps, frames).value(), Tensor::zeros(2, 4));
}

TEST(GlobalExpert, IdentityWeightsPassNonNegativeInput) {
    ModelConfig cfg = small_config();
    cfg.global_width = 4;
    ParamSet ps = init_params(cfg, 17);
    ps.assign(pname::ge_w1, Tensor::identity(4));
    ps.assign(pname::ge_w2, Tensor::identity(4));
    std::vector<FrameFeatures> frames = {{{0, 0, 0, 0, 0}, {0.5, 2, 0, 3}}};
    Tape t;
    EXPECT_EQ(global_expert_forward(t, ps, frames).value(), Tensor::matrix({{0.5, 2, 0, 3}}));
}

TEST(GlobalExpert, GradientMatchesFiniteDifferences) {
    ParamSet ps = init_params(small_config(), 18);
    std::mt19937_64 rng(18);
    ps.assign(pname::ge_b1, random_tensor({1, 4}, rng, 0.05, 0.3));
    std::vector<FrameFeatures> frames;
    for (int f = 0; f < 3; ++f) frames.push_back({std::vector<double>(5, 0.0), random_tensor({3}, rng).values()});
    for (auto& [name, e] : ps) e.trainable = name.rfind("ge.", 0) == 0;
    Tensor w = random_tensor({3, 4}, rng);
    double err = smoe::test::gradient_error(ps, [&](Tape& t, const ParamSet& p) {
        return weighted_sum(global_expert_forward(t, p, frames).rows, w.values());
    });
    EXPECT_LT(err, 1e-5);
}

// ---------------------------------------------------------------------------
// All four together
// ---------------------------------------------------------------------------

TEST(Experts, ShapesTagsAndDeterminism) {
    ModelConfig cfg = small_config();
    ParamSet ps = init_params(cfg, 19);
    std::mt19937_64 rng(19);
    SyntheticVideo v;
    v.id = "v";
    for (int f = 0; f < 5; ++f) {
        v.poses.push_back(PoseFrame{{random_person(rng)}});
        v.graphs.push_back(two_node_graph());
        v.features.push_back({random_tensor({5}, rng).values(), random_tensor({3}, rng).values()});
        v.labels.push_back(0);
    }
    v.fps = 1;
    v.duration_s = 5;
    Tape t1, t2;
    auto a = run_experts(t1, ps, cfg, Ablation{}, v);
    auto b = run_experts(t2, ps, cfg, Ablation{}, v);
    for (std::size_t i = 0; i < kExperts; ++i) {
        EXPECT_EQ(static_cast<std::size_t>(a[i].tag), i);
        EXPECT_EQ(a[i].value().shape(), (Shape{5, 4}));
        EXPECT_EQ(a[i].value(), b[i].value());
    }
}
