#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smoe/numkernel/ops.hpp"
#include "smoe/numkernel/params.hpp"
#include "smoe/numkernel/tape.hpp"

namespace smoe {

inline constexpr std::size_t kJoints = 17;
inline constexpr std::size_t kJointFeatures = 3;  // x, y, confidence
inline constexpr std::size_t kExperts = 4;

enum class ExpertId : std::size_t { AE = 0, ORE = 1, BE = 2, GE = 3 };

inline const char* expert_name(ExpertId id) {
    static constexpr const char* names[] = {"AE", "ORE", "BE", "GE"};
    return names[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Structured per-frame inputs
// ---------------------------------------------------------------------------

struct Joint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
    friend bool operator==(const Joint&, const Joint&) = default;
};

using PersonPose = std::array<Joint, kJoints>;

/// Poses of every detected person in one frame.
struct PoseFrame {
    std::vector<PersonPose> persons;
    friend bool operator==(const PoseFrame&, const PoseFrame&) = default;
};

/// COCO 17-keypoint skeleton: head chain, arms, legs and torso links.
inline const std::vector<std::pair<std::size_t, std::size_t>>& skeleton_edges() {
    static const std::vector<std::pair<std::size_t, std::size_t>> edges = {
        {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12}, {5, 6}, {5, 7}, {6, 8},
        {7, 9},   {8, 10},  {1, 2},   {0, 1},   {0, 2},   {1, 3},  {2, 4},  {3, 5}, {4, 6}};
    return edges;
}

struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
    friend bool operator==(const Box&, const Box&) = default;
};

struct ObjectNode {
    std::size_t class_id = 0;
    Box box;
    friend bool operator==(const ObjectNode&, const ObjectNode&) = default;
};

/// Directed (subject node, relation category, object node) triple.
struct RelationEdge {
    std::size_t subject = 0;
    std::size_t relation = 0;
    std::size_t object = 0;
    friend bool operator==(const RelationEdge&, const RelationEdge&) = default;
};

struct ObjectRelationGraph {
    std::vector<ObjectNode> nodes;
    std::vector<RelationEdge> edges;

    void validate() const {
        for (const auto& n : nodes)
            if (!(n.box.x1 < n.box.x2) || !(n.box.y1 < n.box.y2))
                throw std::invalid_argument("object box must satisfy x1 < x2 and y1 < y2");
        for (const auto& e : edges) {
            if (e.subject >= nodes.size() || e.object >= nodes.size())
                throw std::invalid_argument("relation edge references a missing node");
            if (e.subject == e.object) throw std::invalid_argument("relation edge links a node to itself");
        }
    }

    friend bool operator==(const ObjectRelationGraph&, const ObjectRelationGraph&) = default;
};

/// Provider outputs for one frame: background and global feature vectors.
struct FrameFeatures {
    std::vector<double> background;
    std::vector<double> global;
    friend bool operator==(const FrameFeatures&, const FrameFeatures&) = default;
};

/// Per-expert (M x d) frame embeddings.
struct ExpertOutput {
    ExpertId tag = ExpertId::AE;
    Var rows;

    const Tensor& value() const { return rows.value(); }
    std::size_t frames() const { return rows.value().dim(0); }
    std::size_t width() const { return rows.value().dim(1); }
};

// ---------------------------------------------------------------------------
// Graph helpers
// ---------------------------------------------------------------------------

using Neighborhoods = std::vector<std::vector<std::size_t>>;

/// Neighborhoods of an undirected graph; self-loops optionally prepended.
inline Neighborhoods neighborhoods(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> edges,
                                   bool self_loops) {
    Neighborhoods nb(n);
    if (self_loops)
        for (std::size_t i = 0; i < n; ++i) nb[i].push_back(i);
    for (const auto& [a, b] : edges) {
        if (a >= n || b >= n) throw DimensionError("graph edge references a missing node");
        if (a == b) continue;
        nb[a].push_back(b);
        nb[b].push_back(a);
    }
    for (auto& list : nb) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    return nb;
}

/// Graph attention over node features h (n x d):
///   z = h W_a, alpha_kj = softmax_{j in N(k)}(z_k . z_j / sqrt(d)),
///   hhat_k = sum_j alpha_kj h_j, out_k = ReLU([hhat_k, h_k] W_k).
inline Var graph_attention(Var h, const Neighborhoods& nb, Var w_a, Var w_k,
                           std::vector<std::vector<double>>* alpha_out = nullptr) {
    if (nb.size() != h.value().dim(0))
        throw DimensionError("graph_attention: " + std::to_string(nb.size()) + " neighborhoods for " +
                             to_string(h.value().shape()) + " node features");
    for (std::size_t k = 0; k < nb.size(); ++k)
        if (nb[k].empty())
            throw DomainError("graph_attention: node " + std::to_string(k) + " has an empty neighborhood");
    Var z = matmul(h, w_a);
    const double scale = 1.0 / std::sqrt(static_cast<double>(z.value().dim(1)));
    Var hhat = neighbor_attention(z, h, std::make_shared<const Neighborhoods>(nb), scale, alpha_out);
    return relu(matmul(concat_cols(hhat, h), w_k));
}

// ---------------------------------------------------------------------------
// Parameter names
// ---------------------------------------------------------------------------

namespace pname {
inline const std::string ae_pose = "ae.W_pose";
inline const std::string ae_attn = "ae.W_a";
inline const std::string ae_combine = "ae.W_k";
inline const std::string ae_query = "ae.W_query";
inline const std::string ae_key = "ae.W_key";
inline const std::string ae_value = "ae.W_value";
inline const std::string ore_entity = "ore.E_entity";
inline const std::string ore_relation = "ore.E_relation";
inline const std::string ore_box = "ore.W_box";
inline std::string ore_layer(std::size_t l) { return "ore.W_layer" + std::to_string(l); }
inline const std::string be_proj = "be.W";
inline const std::string ge_w1 = "ge.W1";
inline const std::string ge_b1 = "ge.b1";
inline const std::string ge_w2 = "ge.W2";
inline const std::string ge_b2 = "ge.b2";
}  // namespace pname

// ---------------------------------------------------------------------------
// Action expert
// ---------------------------------------------------------------------------

/// Per-joint embedding input: the row of joint j of a person carries
/// (x, y, confidence) in columns 3j..3j+2, so one (51 x d) map embeds every
/// joint type with its own weights. Coordinates are taken relative to the
/// person's mean joint position in that frame.
inline Tensor pose_embedding_input(std::span<const PoseFrame> frames) {
    std::size_t persons = 0;
    for (const auto& f : frames) persons += f.persons.size();
    Tensor x({persons * kJoints, kJoints * kJointFeatures});
    std::size_t row = 0;
    for (const auto& f : frames)
        for (const auto& person : f.persons) {
            double cx = 0.0, cy = 0.0;
            for (const auto& jt : person) {
                cx += jt.x;
                cy += jt.y;
            }
            cx /= kJoints;
            cy /= kJoints;
            for (std::size_t j = 0; j < kJoints; ++j, ++row) {
                x(row, j * 3) = person[j].x - cx;
                x(row, j * 3 + 1) = person[j].y - cy;
                x(row, j * 3 + 2) = person[j].confidence;
            }
        }
    return x;
}

/// Per-frame action tokens (M x d): graph attention over each person's
/// skeleton, then mean pooling over joints and persons. Frames without
/// persons give a zero token.
inline Var action_tokens(Tape& tape, const ParamSet& params, std::span<const PoseFrame> frames) {
    const std::size_t d = params.value(pname::ae_attn).dim(1);
    std::size_t persons = 0;
    for (const auto& f : frames) persons += f.persons.size();
    if (persons == 0) return tape.constant(Tensor({frames.size(), d}));

    Var h = matmul(tape.constant(pose_embedding_input(frames)), tape.param(params, pname::ae_pose));

    const auto base = neighborhoods(kJoints, skeleton_edges(), true);
    Neighborhoods nb;
    nb.reserve(persons * kJoints);
    std::vector<std::vector<std::size_t>> segments(frames.size());
    std::size_t offset = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        for (std::size_t p = 0; p < frames[f].persons.size(); ++p) {
            for (std::size_t j = 0; j < kJoints; ++j) {
                std::vector<std::size_t> list;
                list.reserve(base[j].size());
                for (std::size_t k : base[j]) list.push_back(offset + k);
                nb.push_back(std::move(list));
                segments[f].push_back(offset + j);
            }
            offset += kJoints;
        }
    }
    Var g = graph_attention(h, nb, tape.param(params, pname::ae_attn), tape.param(params, pname::ae_combine));
    return segment_mean(g, std::move(segments));
}

/// Action expert: action tokens refined by unscaled cross-attention with
/// queries from the video tokens, softmax(Q_v K_a^T) V_a.
inline ExpertOutput action_expert_forward(Tape& tape, const ParamSet& params, std::span<const PoseFrame> frames,
                                          const Tensor& video_tokens) {
    if (video_tokens.rank() != 2 || video_tokens.dim(0) != frames.size())
        throw DimensionError("action expert: " + std::to_string(frames.size()) + " pose frames but video tokens " +
                             to_string(video_tokens.shape()));
    Var a = action_tokens(tape, params, frames);
    Var q = matmul(tape.constant(video_tokens), tape.param(params, pname::ae_query));
    Var k = matmul(a, tape.param(params, pname::ae_key));
    Var v = matmul(a, tape.param(params, pname::ae_value));
    return {ExpertId::AE, attention(q, k, v, false)};
}

// ---------------------------------------------------------------------------
// Object-relation expert
// ---------------------------------------------------------------------------

struct GtnOptions {
    std::size_t layers = 2;
    /// Relation categories become graph nodes between subject and object.
    bool relation_nodes = true;
    /// Use D^{1/2} A D^{1/2} as literally printed instead of D^{-1/2} A D^{-1/2}.
    bool literal_sqrt_degree = false;
    /// Identity activation instead of ReLU (composition tests only).
    bool linear_activation = false;
};

/// Block-diagonal propagation structure for a sequence of relation graphs
/// after object-aware masking.
struct GtnLayout {
    std::vector<std::size_t> object_classes;    // surviving object nodes, all frames
    std::vector<std::size_t> relation_classes;  // relation nodes, all frames
    Tensor boxes;                                // rows: objects then relations
    std::shared_ptr<SparseMatrix> adjacency;     // normalized, includes self-loops
    std::vector<std::vector<std::size_t>> segments;
    std::size_t node_count() const { return object_classes.size() + relation_classes.size(); }
};

inline GtnLayout build_gtn_layout(std::span<const ObjectRelationGraph> graphs, const GtnOptions& opt) {
    GtnLayout lay;
    lay.segments.resize(graphs.size());
    struct FrameNodes {
        std::vector<std::size_t> object_index;  // per original node, global id or npos
        std::size_t first_relation = 0;
    };
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<FrameNodes> frame_nodes(graphs.size());
    std::vector<Box> object_boxes, relation_boxes;

    for (std::size_t f = 0; f < graphs.size(); ++f) {
        const auto& g = graphs[f];
        g.validate();
        std::vector<bool> used(g.nodes.size(), false);
        for (const auto& e : g.edges) used[e.subject] = used[e.object] = true;
        auto& fn = frame_nodes[f];
        fn.object_index.assign(g.nodes.size(), npos);
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            if (!used[i]) continue;
            fn.object_index[i] = lay.object_classes.size();
            lay.object_classes.push_back(g.nodes[i].class_id);
            object_boxes.push_back(g.nodes[i].box);
        }
        if (opt.relation_nodes) {
            fn.first_relation = lay.relation_classes.size();
            for (const auto& e : g.edges) {
                lay.relation_classes.push_back(e.relation);
                const Box& a = g.nodes[e.subject].box;
                const Box& b = g.nodes[e.object].box;
                relation_boxes.push_back(
                    {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)});
            }
        }
    }

    const std::size_t n_obj = lay.object_classes.size();
    const std::size_t n = lay.node_count();
    if (n == 0) return lay;

    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t f = 0; f < graphs.size(); ++f) {
        const auto& g = graphs[f];
        const auto& fn = frame_nodes[f];
        for (std::size_t i = 0; i < g.nodes.size(); ++i)
            if (fn.object_index[i] != npos) lay.segments[f].push_back(fn.object_index[i]);
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const std::size_t s = fn.object_index[g.edges[e].subject];
            const std::size_t o = fn.object_index[g.edges[e].object];
            if (opt.relation_nodes) {
                const std::size_t r = n_obj + fn.first_relation + e;
                lay.segments[f].push_back(r);
                edges.emplace_back(s, r);
                edges.emplace_back(r, o);
            } else {
                edges.emplace_back(s, o);
            }
        }
    }

    const auto nb = neighborhoods(n, edges, true);
    std::vector<double> degree(n);
    for (std::size_t i = 0; i < n; ++i) degree[i] = static_cast<double>(nb[i].size());
    auto adj = std::make_shared<SparseMatrix>();
    adj->rows = adj->cols = n;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : nb[i]) {
            const double w = opt.literal_sqrt_degree ? std::sqrt(degree[i] * degree[j])
                                                     : 1.0 / std::sqrt(degree[i] * degree[j]);
            adj->entries.push_back({i, j, w});
        }
    lay.adjacency = std::move(adj);

    lay.boxes = Tensor({n, 4});
    auto put = [&](std::size_t row, const Box& b) {
        lay.boxes(row, 0) = b.x1;
        lay.boxes(row, 1) = b.y1;
        lay.boxes(row, 2) = b.x2;
        lay.boxes(row, 3) = b.y2;
    };
    for (std::size_t i = 0; i < n_obj; ++i) put(i, object_boxes[i]);
    for (std::size_t i = 0; i < relation_boxes.size(); ++i) put(n_obj + i, relation_boxes[i]);
    return lay;
}

/// MaskGTN: relation-free objects are masked out, node features start as
/// class embedding + box embedding, then L layers of
/// H <- act(D^{-1/2} A D^{-1/2} H W_l); nodes are mean-pooled per frame.
inline ExpertOutput mask_gtn_forward(Tape& tape, const ParamSet& params, std::span<const ObjectRelationGraph> graphs,
                                     const GtnOptions& opt) {
    if (opt.layers < 1) throw std::invalid_argument("MaskGTN needs at least one layer");
    const std::size_t d = params.value(pname::ore_box).dim(1);
    const GtnLayout lay = build_gtn_layout(graphs, opt);
    if (lay.node_count() == 0) return {ExpertId::ORE, tape.constant(Tensor({graphs.size(), d}))};

    Var cls = gather_rows(tape.param(params, pname::ore_entity), lay.object_classes);
    if (!lay.relation_classes.empty()) {
        Var rel = gather_rows(tape.param(params, pname::ore_relation), lay.relation_classes);
        cls = lay.object_classes.empty() ? rel : concat_rows(cls, rel);
    }
    Var h = add(cls, matmul(tape.constant(lay.boxes), tape.param(params, pname::ore_box)));
    for (std::size_t l = 0; l < opt.layers; ++l) {
        h = sparse_matmul(lay.adjacency, matmul(h, tape.param(params, pname::ore_layer(l))));
        if (!opt.linear_activation) h = relu(h);
    }
    return {ExpertId::ORE, segment_mean(h, lay.segments)};
}

// ---------------------------------------------------------------------------
// Background and global experts
// ---------------------------------------------------------------------------

namespace detail {
inline Tensor stack_features(std::span<const FrameFeatures> frames, bool background) {
    if (frames.empty()) throw DimensionError("no frames");
    const auto& first = background ? frames[0].background : frames[0].global;
    const std::size_t width = first.size();
    const char* what = background ? "background" : "global";
    if (width == 0) throw std::invalid_argument(std::string("missing ") + what + " feature vector in frame 0");
    Tensor x({frames.size(), width});
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& v = background ? frames[f].background : frames[f].global;
        if (v.size() != width)
            throw std::invalid_argument(std::string("missing or mis-sized ") + what + " feature vector in frame " +
                                        std::to_string(f));
        std::copy(v.begin(), v.end(), x.row(f).begin());
    }
    return x;
}
}  // namespace detail

inline Tensor background_matrix(std::span<const FrameFeatures> frames) { return detail::stack_features(frames, true); }
inline Tensor global_matrix(std::span<const FrameFeatures> frames) { return detail::stack_features(frames, false); }

/// Linear projection of provided background features, d_b -> d, no bias.
inline ExpertOutput background_expert_forward(Tape& tape, const ParamSet& params, std::span<const FrameFeatures> frames) {
    return {ExpertId::BE, matmul(tape.constant(background_matrix(frames)), tape.param(params, pname::be_proj))};
}

/// Two-layer FFN over provided global features: Linear, ReLU, Linear.
inline ExpertOutput global_expert_forward(Tape& tape, const ParamSet& params, std::span<const FrameFeatures> frames) {
    Var x = tape.constant(global_matrix(frames));
    Var h = relu(add_row(matmul(x, tape.param(params, pname::ge_w1)), tape.param(params, pname::ge_b1)));
    return {ExpertId::GE, add_row(matmul(h, tape.param(params, pname::ge_w2)), tape.param(params, pname::ge_b2))};
}

}  // namespace smoe
