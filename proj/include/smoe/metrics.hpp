#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "smoe/synthdata.hpp"
#include "smoe/vocab.hpp"

// Evaluation protocol: event matching, Single/Pair/Quadruple F1,
// mAP over temporal IoU thresholds, frame-level FNRs and F2.
//
// Choices not fixed by the task definition live here and nowhere else:
//  * matching: greedy one-to-one by descending tIoU, ties by higher
//    confidence, then earlier prediction start, then earlier gold start;
//    zero-overlap pairs never match;
//  * element strings compare after lowercase + whitespace trim;
//  * Single F1 is a macro average over classes seen in gold or predictions,
//    Pair F1 over gold pair values only; Quadruple F1 is micro over events;
//  * AP uses all-points interpolation (precision envelope), averaged over
//    event types present in gold.

namespace smoe {

struct PredictedEvent {
    double start_s = 0.0;
    double end_s = 0.0;
    EventQuadruple quadruple;
    double confidence = 1.0;
    friend bool operator==(const PredictedEvent&, const PredictedEvent&) = default;
};

/// Model output for one video: events plus binary per-frame abnormality.
struct VideoPrediction {
    std::string id;
    std::vector<PredictedEvent> events;
    std::vector<std::uint8_t> frames;
    friend bool operator==(const VideoPrediction&, const VideoPrediction&) = default;
};

inline double tiou(double a_start, double a_end, double b_start, double b_end) {
    const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
    const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
    return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct Matching {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, gold)
    std::vector<std::size_t> unmatched_predictions;
    std::vector<std::size_t> unmatched_golds;
};

inline Matching match_events(std::span<const PredictedEvent> preds, std::span<const AbnormalEvent> golds) {
    struct Candidate {
        double iou;
        std::size_t p, g;
    };
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < preds.size(); ++p)
        for (std::size_t g = 0; g < golds.size(); ++g) {
            const double iou = tiou(preds[p].start_s, preds[p].end_s, golds[g].start_s, golds[g].end_s);
            if (iou > 0.0) cands.push_back({iou, p, g});
        }
    std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (preds[a.p].confidence != preds[b.p].confidence) return preds[a.p].confidence > preds[b.p].confidence;
        if (preds[a.p].start_s != preds[b.p].start_s) return preds[a.p].start_s < preds[b.p].start_s;
        if (golds[a.g].start_s != golds[b.g].start_s) return golds[a.g].start_s < golds[b.g].start_s;
        return std::tie(a.p, a.g) < std::tie(b.p, b.g);
    });
    std::vector<bool> pu(preds.size(), false), gu(golds.size(), false);
    Matching m;
    for (const auto& c : cands) {
        if (pu[c.p] || gu[c.g]) continue;
        pu[c.p] = gu[c.g] = true;
        m.pairs.emplace_back(c.p, c.g);
    }
    for (std::size_t p = 0; p < preds.size(); ++p)
        if (!pu[p]) m.unmatched_predictions.push_back(p);
    for (std::size_t g = 0; g < golds.size(); ++g)
        if (!gu[g]) m.unmatched_golds.push_back(g);
    return m;
}

/// Dataset-wide extraction outcome after per-video matching.
struct ExtractionSet {
    std::vector<std::pair<EventQuadruple, EventQuadruple>> matched;  // (predicted, gold)
    std::vector<EventQuadruple> unmatched_predictions;
    std::vector<EventQuadruple> unmatched_golds;

    void add_video(std::span<const PredictedEvent> preds, std::span<const AbnormalEvent> golds) {
        const Matching m = match_events(preds, golds);
        for (auto [p, g] : m.pairs) matched.emplace_back(preds[p].quadruple, golds[g].quadruple);
        for (auto p : m.unmatched_predictions) unmatched_predictions.push_back(preds[p].quadruple);
        for (auto g : m.unmatched_golds) unmatched_golds.push_back(golds[g].quadruple);
    }
};

// ---------------------------------------------------------------------------
// F1 scores
// ---------------------------------------------------------------------------

enum class Element { Subject, Type, Object, Scene };
enum class PairSlot { SubjectType, ObjectType, SubjectScene, ObjectScene };

inline constexpr std::array<Element, 4> kElements = {Element::Subject, Element::Type, Element::Object, Element::Scene};
inline constexpr std::array<PairSlot, 4> kPairSlots = {PairSlot::SubjectType, PairSlot::ObjectType,
                                                       PairSlot::SubjectScene, PairSlot::ObjectScene};

inline const char* element_name(Element e) {
    static constexpr const char* names[] = {"subject", "type", "object", "scene"};
    return names[static_cast<int>(e)];
}

inline const char* pair_name(PairSlot p) {
    static constexpr const char* names[] = {"sub-type", "obj-type", "sub-sce", "obj-sce"};
    return names[static_cast<int>(p)];
}

inline const std::string& element_of(const EventQuadruple& q, Element e) {
    switch (e) {
        case Element::Subject: return q.subject;
        case Element::Type: return q.event_type;
        case Element::Object: return q.object;
        case Element::Scene: return q.scene;
    }
    return q.subject;
}

inline std::pair<Element, Element> pair_elements(PairSlot p) {
    switch (p) {
        case PairSlot::SubjectType: return {Element::Subject, Element::Type};
        case PairSlot::ObjectType: return {Element::Object, Element::Type};
        case PairSlot::SubjectScene: return {Element::Subject, Element::Scene};
        case PairSlot::ObjectScene: return {Element::Object, Element::Scene};
    }
    return {Element::Subject, Element::Type};
}

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
    double f1() const {
        const std::size_t denom = 2 * tp + fp + fn;
        return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    }
};

struct F1Result {
    double value = 0.0;
    std::map<std::string, ClassCounts> classes;
};

/// Macro-F1 over the class keys produced by `key`. Classes are those seen
/// in gold or predictions, or in gold only when `gold_classes_only`.
template <class Key>
F1Result macro_f1(const ExtractionSet& set, Key&& key, bool gold_classes_only = false) {
    F1Result r;
    for (const auto& [p, g] : set.matched) {
        const std::string kp = key(p), kg = key(g);
        if (kp == kg) {
            ++r.classes[kg].tp;
        } else {
            ++r.classes[kp].fp;
            ++r.classes[kg].fn;
        }
    }
    for (const auto& p : set.unmatched_predictions) ++r.classes[key(p)].fp;
    for (const auto& g : set.unmatched_golds) ++r.classes[key(g)].fn;
    if (gold_classes_only) std::erase_if(r.classes, [](const auto& kv) { return kv.second.tp + kv.second.fn == 0; });
    if (r.classes.empty()) return r;
    double s = 0.0;
    for (const auto& [_, c] : r.classes) s += c.f1();
    r.value = s / static_cast<double>(r.classes.size());
    return r;
}

inline F1Result f1_single(const ExtractionSet& set, Element e) {
    return macro_f1(set, [e](const EventQuadruple& q) { return vocab::normalize(element_of(q, e)); });
}

inline F1Result f1_pair(const ExtractionSet& set, PairSlot slot) {
    const auto [a, b] = pair_elements(slot);
    return macro_f1(set, [a = a, b = b](const EventQuadruple& q) {
        return vocab::normalize(element_of(q, a)) + "|" + vocab::normalize(element_of(q, b));
    }, true);
}

inline bool same_quadruple(const EventQuadruple& a, const EventQuadruple& b) {
    for (Element e : kElements)
        if (vocab::normalize(element_of(a, e)) != vocab::normalize(element_of(b, e))) return false;
    return true;
}

struct QuadrupleResult {
    std::size_t tp = 0, predicted = 0, gold = 0;
    double value = 0.0;
};

/// Micro-F1 over events: a matched pair is correct iff all four elements agree.
inline QuadrupleResult f1_quadruple(const ExtractionSet& set) {
    QuadrupleResult r;
    for (const auto& [p, g] : set.matched)
        if (same_quadruple(p, g)) ++r.tp;
    r.predicted = set.matched.size() + set.unmatched_predictions.size();
    r.gold = set.matched.size() + set.unmatched_golds.size();
    const std::size_t denom = r.predicted + r.gold;
    r.value = denom ? 2.0 * static_cast<double>(r.tp) / static_cast<double>(denom) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Localization: mAP at temporal IoU thresholds
// ---------------------------------------------------------------------------

/// Area under the precision-recall curve with the precision envelope.
/// `hits` are TP flags in ranked order; `positives` is the gold count.
inline double average_precision(const std::vector<bool>& hits, std::size_t positives) {
    if (positives == 0) return 0.0;
    const std::size_t n = hits.size();
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += hits[i];
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        rec[i] = static_cast<double>(tp) / static_cast<double>(positives);
    }
    for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double ap = 0.0, prev_rec = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (rec[i] != prev_rec) {
            ap += (rec[i] - prev_rec) * prec[i];
            prev_rec = rec[i];
        }
    }
    return ap;
}

struct VideoEvents {
    std::string id;
    std::vector<PredictedEvent> predictions;
    std::vector<AbnormalEvent> golds;
};

struct MapResult {
    std::vector<double> thresholds;
    std::vector<std::optional<double>> map;  // per threshold, absent without gold events
    std::optional<double> mean;
    /// AP per event type per threshold.
    std::map<std::string, std::vector<double>> per_type;
};

inline const std::vector<double>& default_tiou_thresholds() {
    static const std::vector<double> t = {0.1, 0.2, 0.3};
    return t;
}

/// Per event type: rank predictions of that type dataset-wide by confidence
/// (ties: earlier start, then video id); each is a hit when its best
/// unconsumed same-video, same-type gold reaches the threshold.
inline MapResult map_at_tiou(std::span<const VideoEvents> videos,
                             const std::vector<double>& thresholds = default_tiou_thresholds()) {
    MapResult r;
    r.thresholds = thresholds;
    std::map<std::string, std::size_t> positives;
    for (const auto& v : videos)
        for (const auto& g : v.golds) ++positives[vocab::normalize(g.quadruple.event_type)];
    if (positives.empty()) {
        r.map.assign(thresholds.size(), std::nullopt);
        return r;
    }

    struct Ranked {
        double confidence, start;
        std::size_t video, index;
    };
    for (const auto& [type, npos] : positives) {
        std::vector<Ranked> ranked;
        for (std::size_t vi = 0; vi < videos.size(); ++vi)
            for (std::size_t pi = 0; pi < videos[vi].predictions.size(); ++pi) {
                const auto& p = videos[vi].predictions[pi];
                if (vocab::normalize(p.quadruple.event_type) == type) ranked.push_back({p.confidence, p.start_s, vi, pi});
            }
        std::stable_sort(ranked.begin(), ranked.end(), [&](const Ranked& a, const Ranked& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            if (a.start != b.start) return a.start < b.start;
            if (videos[a.video].id != videos[b.video].id) return videos[a.video].id < videos[b.video].id;
            return a.index < b.index;
        });
        auto& aps = r.per_type[type];
        for (double thr : thresholds) {
            std::vector<std::vector<bool>> consumed(videos.size());
            for (std::size_t vi = 0; vi < videos.size(); ++vi) consumed[vi].assign(videos[vi].golds.size(), false);
            std::vector<bool> hits;
            hits.reserve(ranked.size());
            for (const auto& rk : ranked) {
                const auto& v = videos[rk.video];
                const auto& p = v.predictions[rk.index];
                double best = -1.0;
                std::size_t best_g = 0;
                for (std::size_t gi = 0; gi < v.golds.size(); ++gi) {
                    if (consumed[rk.video][gi] || vocab::normalize(v.golds[gi].quadruple.event_type) != type) continue;
                    const double iou = tiou(p.start_s, p.end_s, v.golds[gi].start_s, v.golds[gi].end_s);
                    if (iou > best) {
                        best = iou;
                        best_g = gi;
                    }
                }
                const bool hit = best >= thr && best > 0.0;
                if (hit) consumed[rk.video][best_g] = true;
                hits.push_back(hit);
            }
            aps.push_back(average_precision(hits, npos));
        }
    }
    double overall = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        double s = 0.0;
        for (const auto& [_, aps] : r.per_type) s += aps[t];
        const double m = s / static_cast<double>(r.per_type.size());
        r.map.push_back(m);
        overall += m;
    }
    r.mean = overall / static_cast<double>(thresholds.size());
    return r;
}

// ---------------------------------------------------------------------------
// Frame-level classification
// ---------------------------------------------------------------------------

struct FrameCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t positives() const { return tp + fn; }

    FrameCounts& operator+=(const FrameCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

inline FrameCounts frame_counts(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gold) {
    if (predicted.size() != gold.size())
        throw DimensionError("frame predictions (" + std::to_string(predicted.size()) + ") and labels (" +
                             std::to_string(gold.size()) + ") differ in length");
    FrameCounts c;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool p = predicted[i] != 0, g = gold[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// False-negative frames / positive frames; absent without positive frames.
inline std::optional<double> fnr(const FrameCounts& c) {
    if (c.positives() == 0) return std::nullopt;
    return static_cast<double>(c.fn) / static_cast<double>(c.positives());
}

inline std::optional<double> fnr(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gold) {
    return fnr(frame_counts(predicted, gold));
}

inline std::optional<double> frame_recall(const FrameCounts& c) {
    if (c.positives() == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(c.positives());
}

/// 5PR / (4P + R) over abnormal frames; 0 when P = R = 0, absent when there
/// are neither predicted nor gold positives.
inline std::optional<double> f2(const FrameCounts& c) {
    if (c.tp + c.fp == 0 && c.tp + c.fn == 0) return std::nullopt;
    const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    if (p + r == 0.0) return 0.0;
    return 5.0 * p * r / (4.0 * p + r);
}

inline std::optional<double> f2(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gold) {
    return f2(frame_counts(predicted, gold));
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::array<F1Result, 4> single;
    std::array<F1Result, 4> pair;
    QuadrupleResult quadruple;
    MapResult localization;
    FrameCounts frames;
    std::optional<double> fnr;
    std::optional<double> f2;
    std::size_t videos = 0;
    std::size_t matched = 0;

    /// Mean of the eight Single/Pair scores and Quadruple F1.
    double extraction_average() const {
        double s = quadruple.value;
        for (const auto& r : single) s += r.value;
        for (const auto& r : pair) s += r.value;
        return s / 9.0;
    }
};

/// Scores predictions against gold annotations joined by video id. A gold
/// video without a prediction counts as no events and all frames normal.
inline EvalReport evaluate(std::span<const VideoPrediction> predictions, std::span<const SyntheticVideo> golds) {
    std::unordered_map<std::string, const VideoPrediction*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.id, &p).second) throw std::invalid_argument("duplicate prediction for video '" + p.id + "'");
    }
    std::unordered_map<std::string, bool> gold_ids;
    for (const auto& g : golds) gold_ids[g.id] = true;
    for (const auto& p : predictions)
        if (!gold_ids.count(p.id)) throw std::invalid_argument("prediction for unknown video '" + p.id + "'");

    EvalReport r;
    r.videos = golds.size();
    ExtractionSet set;
    std::vector<VideoEvents> loc;
    for (const auto& g : golds) {
        const auto it = by_id.find(g.id);
        const std::vector<PredictedEvent> none;
        const auto& events = it != by_id.end() ? it->second->events : none;
        set.add_video(events, g.events);
        loc.push_back({g.id, events, g.events});
        if (it != by_id.end() && !it->second->frames.empty()) {
            r.frames += frame_counts(it->second->frames, g.labels);
        } else {
            const std::vector<std::uint8_t> normal(g.labels.size(), 0);
            r.frames += frame_counts(normal, g.labels);
        }
    }
    r.matched = set.matched.size();
    for (std::size_t i = 0; i < 4; ++i) {
        r.single[i] = f1_single(set, kElements[i]);
        r.pair[i] = f1_pair(set, kPairSlots[i]);
    }
    r.quadruple = f1_quadruple(set);
    r.localization = map_at_tiou(loc);
    r.fnr = smoe::fnr(r.frames);
    r.f2 = smoe::f2(r.frames);
    return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
    using nlohmann::json;
    auto f1_json = [](const F1Result& f) {
        json classes = json::object();
        for (const auto& [k, c] : f.classes) classes[k] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
        return json{{"f1", f.value}, {"classes", std::move(classes)}};
    };
    json single = json::object(), pair = json::object();
    for (std::size_t i = 0; i < 4; ++i) {
        single[element_name(kElements[i])] = f1_json(r.single[i]);
        pair[pair_name(kPairSlots[i])] = f1_json(r.pair[i]);
    }
    json map = json::object();
    for (std::size_t t = 0; t < r.localization.thresholds.size(); ++t)
        map[format_double(r.localization.thresholds[t])] = optional_json(r.localization.map[t]);
    json per_type = json::object();
    for (const auto& [type, aps] : r.localization.per_type) per_type[type] = aps;
    return json{{"videos", r.videos},
                {"matched_events", r.matched},
                {"single", std::move(single)},
                {"pair", std::move(pair)},
                {"quadruple",
                 {{"f1", r.quadruple.value},
                  {"tp", r.quadruple.tp},
                  {"predicted", r.quadruple.predicted},
                  {"gold", r.quadruple.gold}}},
                {"extraction_average", r.extraction_average()},
                {"map_tiou", {{"per_threshold", std::move(map)}, {"mean", optional_json(r.localization.mean)}, {"per_type", std::move(per_type)}}},
                {"frames", {{"tp", r.frames.tp}, {"fp", r.frames.fp}, {"fn", r.frames.fn}, {"tn", r.frames.tn}}},
                {"fnr", optional_json(r.fnr)},
                {"f2", optional_json(r.f2)}};
}

/// Fixed-layout text table; rates shown x100 with two decimals, absent values as "n/a".
inline std::string to_table(const EvalReport& r) {
    std::ostringstream os;
    auto pct = [](std::optional<double> v) {
        if (!v) return std::string("n/a");
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << *v * 100.0;
        return s.str();
    };
    auto row = [&os](const std::string& name, const std::string& value) {
        os << std::left << std::setw(22) << name << std::right << std::setw(8) << value << '\n';
    };
    os << "videos " << r.videos << ", matched events " << r.matched << '\n';
    os << "-- Single (F1)\n";
    for (std::size_t i = 0; i < 4; ++i) row(element_name(kElements[i]), pct(r.single[i].value));
    os << "-- Pair (F1)\n";
    for (std::size_t i = 0; i < 4; ++i) row(pair_name(kPairSlots[i]), pct(r.pair[i].value));
    os << "-- Quadruple\n";
    row("F1", pct(r.quadruple.value));
    row("extraction average", pct(r.extraction_average()));
    os << "-- mAP@tIoU\n";
    for (std::size_t t = 0; t < r.localization.thresholds.size(); ++t)
        row(format_double(r.localization.thresholds[t]), pct(r.localization.map[t]));
    row("average", pct(r.localization.mean));
    os << "-- Frames\n";
    row("FNRs", pct(r.fnr));
    row("F2", pct(r.f2));
    return os.str();
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

inline constexpr const char* kPredictionFormat = "smoe-predictions";
inline constexpr int kPredictionVersion = 1;

inline std::string predictions_to_string(std::span<const VideoPrediction> preds) {
    using nlohmann::json;
    std::string out = json{{"format", kPredictionFormat}, {"version", kPredictionVersion}, {"count", preds.size()}}.dump();
    out += '\n';
    for (const auto& p : preds) {
        json events = json::array();
        for (const auto& e : p.events)
            events.push_back({{"start_s", e.start_s},
                              {"end_s", e.end_s},
                              {"subject", e.quadruple.subject},
                              {"event_type", e.quadruple.event_type},
                              {"object", e.quadruple.object},
                              {"scene", e.quadruple.scene},
                              {"confidence", e.confidence}});
        out += json{{"id", p.id}, {"events", std::move(events)}, {"frames", detail::labels_to_string(p.frames)}}.dump();
        out += '\n';
    }
    return out;
}

inline void write_predictions(std::span<const VideoPrediction> preds, const std::string& path) {
    write_file(path, predictions_to_string(preds));
}

inline std::vector<VideoPrediction> read_predictions(const std::string& path) {
    return detail::read_records<VideoPrediction>(path, kPredictionFormat, kPredictionVersion, [](const nlohmann::json& j) {
        VideoPrediction p;
        p.id = j.at("id").get<std::string>();
        for (const auto& e : j.at("events")) {
            PredictedEvent pe;
            pe.start_s = e.at("start_s").get<double>();
            pe.end_s = e.at("end_s").get<double>();
            pe.quadruple = {e.at("subject").get<std::string>(), e.at("event_type").get<std::string>(),
                            e.at("object").get<std::string>(), e.at("scene").get<std::string>()};
            pe.confidence = e.at("confidence").get<double>();
            if (!(pe.start_s < pe.end_s)) throw std::invalid_argument("predicted event needs start_s < end_s");
            if (!std::isfinite(pe.confidence)) throw std::invalid_argument("confidence must be finite");
            p.events.push_back(std::move(pe));
        }
        p.frames = detail::labels_from_string(j.value("frames", std::string()));
        return p;
    });
}

}  // namespace smoe
