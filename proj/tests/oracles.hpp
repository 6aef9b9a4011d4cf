#pragma once

// Brute-force reference implementations of the evaluation metrics, written
// independently of smoe/metrics.hpp and meant only for tiny instances.

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "smoe/metrics.hpp"

namespace smoe::oracle {

inline double overlap_ratio(double a0, double a1, double b0, double b1) {
    const double lo = std::max(a0, b0), hi = std::min(a1, b1);
    if (hi <= lo) return 0.0;
    return (hi - lo) / ((a1 - a0) + (b1 - b0) - (hi - lo));
}

/// All one-to-one assignments between predictions and golds (over
/// overlapping pairs only); returns the one whose IoUs, sorted in
/// descending order, are lexicographically largest.
inline std::set<std::pair<std::size_t, std::size_t>> best_assignment(const std::vector<PredictedEvent>& preds,
                                                                     const std::vector<AbnormalEvent>& golds) {
    std::set<std::pair<std::size_t, std::size_t>> best, current;
    std::vector<double> best_key;
    std::vector<bool> used(golds.size(), false);
    auto key_of = [&](const std::set<std::pair<std::size_t, std::size_t>>& a) {
        std::vector<double> k;
        for (auto [p, g] : a)
            k.push_back(overlap_ratio(preds[p].start_s, preds[p].end_s, golds[g].start_s, golds[g].end_s));
        std::sort(k.rbegin(), k.rend());
        return k;
    };
    std::function<void(std::size_t)> rec = [&](std::size_t p) {
        if (p == preds.size()) {
            auto k = key_of(current);
            if (std::lexicographical_compare(best_key.begin(), best_key.end(), k.begin(), k.end())) {
                best_key = k;
                best = current;
            }
            return;
        }
        rec(p + 1);
        for (std::size_t g = 0; g < golds.size(); ++g) {
            if (used[g]) continue;
            if (overlap_ratio(preds[p].start_s, preds[p].end_s, golds[g].start_s, golds[g].end_s) <= 0.0) continue;
            used[g] = true;
            current.insert({p, g});
            rec(p + 1);
            current.erase({p, g});
            used[g] = false;
        }
    };
    rec(0);
    return best;
}

/// Average precision for one event type at one threshold. Precision at
/// each hit is replaced by the best precision at any deeper rank, and
/// the hits are averaged over the gold count.
inline double type_ap(const std::vector<VideoEvents>& videos, const std::string& type, double threshold) {
    struct Item {
        double conf, start;
        std::string vid;
        std::size_t v, p;
    };
    std::vector<Item> items;
    std::size_t positives = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
        for (const auto& g : videos[v].golds) positives += g.quadruple.event_type == type;
        for (std::size_t p = 0; p < videos[v].predictions.size(); ++p)
            if (videos[v].predictions[p].quadruple.event_type == type)
                items.push_back({videos[v].predictions[p].confidence, videos[v].predictions[p].start_s, videos[v].id, v, p});
    }
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        if (a.start != b.start) return a.start < b.start;
        if (a.vid != b.vid) return a.vid < b.vid;
        return a.p < b.p;
    });
    std::map<std::pair<std::size_t, std::size_t>, bool> taken;
    std::vector<int> hit;
    for (const auto& it : items) {
        const auto& pred = videos[it.v].predictions[it.p];
        double best = 0.0;
        std::size_t which = 0;
        bool any = false;
        for (std::size_t g = 0; g < videos[it.v].golds.size(); ++g) {
            const auto& gold = videos[it.v].golds[g];
            if (gold.quadruple.event_type != type || taken[{it.v, g}]) continue;
            const double r = overlap_ratio(pred.start_s, pred.end_s, gold.start_s, gold.end_s);
            if (!any || r > best) best = r, which = g, any = true;
        }
        const bool ok = any && best > 0.0 && best >= threshold;
        if (ok) taken[{it.v, which}] = true;
        hit.push_back(ok);
    }
    double total = 0.0;
    int seen = 0;
    for (std::size_t k = 0; k < hit.size(); ++k) {
        if (!hit[k]) continue;
        double envelope = 0.0;
        int tp = seen;
        for (std::size_t j = k; j < hit.size(); ++j) {
            tp += hit[j];
            envelope = std::max(envelope, double(tp) / double(j + 1));
        }
        total += envelope;
        ++seen;
    }
    return positives ? total / double(positives) : 0.0;
}

/// Mean over gold event types, per threshold.
inline std::vector<double> map_per_threshold(const std::vector<VideoEvents>& videos, const std::vector<double>& thresholds) {
    std::set<std::string> types;
    for (const auto& v : videos)
        for (const auto& g : v.golds) types.insert(g.quadruple.event_type);
    std::vector<double> out;
    for (double t : thresholds) {
        double s = 0.0;
        for (const auto& type : types) s += type_ap(videos, type, t);
        out.push_back(types.empty() ? 0.0 : s / double(types.size()));
    }
    return out;
}

/// Macro-F1 from per-class counts of predictions, golds and agreements.
inline double macro_f1(const std::vector<std::pair<std::string, std::string>>& matched,
                       const std::vector<std::string>& extra_preds, const std::vector<std::string>& extra_golds,
                       bool gold_classes_only) {
    std::map<std::string, int> pred_n, gold_n, agree;
    for (const auto& [p, g] : matched) {
        ++pred_n[p];
        ++gold_n[g];
        if (p == g) ++agree[g];
    }
    for (const auto& p : extra_preds) ++pred_n[p];
    for (const auto& g : extra_golds) ++gold_n[g];
    std::set<std::string> classes;
    for (const auto& [c, _] : gold_n) classes.insert(c);
    if (!gold_classes_only)
        for (const auto& [c, _] : pred_n) classes.insert(c);
    if (classes.empty()) return 0.0;
    double s = 0.0;
    for (const auto& c : classes) {
        const int tp = agree[c], fp = pred_n[c] - tp, fn = gold_n[c] - tp;
        s += 2 * tp + fp + fn ? 2.0 * tp / (2 * tp + fp + fn) : 0.0;
    }
    return s / double(classes.size());
}

// ---------------------------------------------------------------------------
// Random micro-cases
// ---------------------------------------------------------------------------

struct MicroCase {
    std::vector<VideoEvents> videos;
    std::vector<SyntheticVideo> golds;
    std::vector<VideoPrediction> predictions;
};

/// 1-3 videos with 0-4 gold and 0-4 predicted events each. Endpoints are
/// continuous so IoU and confidence ties have probability zero; element
/// strings come from small pools so agreements and confusions both occur.
inline MicroCase random_micro_case(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> count(0, 4);
    const std::vector<std::string> types = {"fighting", "theft", "fire"};
    const std::vector<std::string> names = {"man", "woman", "dog"};
    auto pick = [&](const std::vector<std::string>& pool) { return pool[rng() % pool.size()]; };
    auto quad = [&] { return EventQuadruple{pick(names), pick(types), pick(names), pick({"street", "shop"})}; };

    MicroCase mc;
    const int n_videos = 1 + static_cast<int>(rng() % 3);
    for (int v = 0; v < n_videos; ++v) {
        SyntheticVideo gold;
        gold.id = "v" + std::to_string(v);
        gold.duration_s = 30;
        VideoPrediction pred;
        pred.id = gold.id;
        const int ng = count(rng), np = count(rng);
        // Gold events are disjoint: one per 7.5 s slot.
        for (int g = 0; g < ng; ++g) {
            const double lo = 7.5 * g, len = 1.0 + 5.0 * u(rng);
            const double start = lo + (7.5 - len) * u(rng);
            gold.events.push_back({start, start + len, quad(), ExpertId::AE});
        }
        for (int p = 0; p < np; ++p) {
            const double start = 28.0 * u(rng), len = 0.5 + 6.0 * u(rng);
            pred.events.push_back({start, std::min(30.0, start + len), quad(), u(rng)});
        }
        // Frame labels: 30 s at 8 fps.
        gold.labels = labels_from_events(240, gold.events, kFps);
        pred.frames.resize(240);
        for (auto& f : pred.frames) f = u(rng) < 0.5;
        mc.videos.push_back({gold.id, pred.events, gold.events});
        mc.golds.push_back(std::move(gold));
        mc.predictions.push_back(std::move(pred));
    }
    return mc;
}

}  // namespace smoe::oracle
