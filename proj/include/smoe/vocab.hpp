#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smoe::vocab {

inline const std::vector<std::string>& subjects() {
    static const std::vector<std::string> v = {
        "people",  "man",        "woman",     "child",      "boy",       "girl",    "driver",  "cyclist",
        "worker",  "student",    "police",    "thief",      "robber",    "crowd",   "customer", "passenger",
        "guard",   "teenager",   "elderly",   "pedestrian", "car",       "truck",   "bus",     "motorcycle",
        "bicycle", "dog",        "cat",       "cow",        "horse",     "bird",    "boat",    "ship",
        "train",   "fire",       "water",     "smoke",      "swimmer",   "diver",   "vandal",  "shopper"};
    return v;
}

inline const std::vector<std::string>& objects() {
    static const std::vector<std::string> v = {
        "car",    "truck",  "bus",    "motorcycle", "bicycle", "person",  "man",    "woman",
        "child",  "door",   "window", "shop",       "bag",     "phone",   "wallet", "money",
        "atm",    "store",  "wall",   "fence",      "road",    "tree",    "house",  "building",
        "boat",   "water",  "fire",   "dog",        "animal",  "glass",   "shelf",  "goods",
        "machine", "bench", "sign",   "pole",       "traffic light", "camera", "box", "bottle"};
    return v;
}

inline const std::vector<std::string>& event_types() {
    static const std::vector<std::string> v = {"Fighting",  "Animals", "Water",      "Vandalism",
                                               "Accidents", "Robbery", "Theft",      "Pedestrian",
                                               "Fire",      "Violations", "Forbidden"};
    return v;
}

inline const std::vector<std::string>& scenes() {
    static const std::vector<std::string> v = {"School", "Shop",      "Underwater", "Street",  "Road",
                                               "Boat",   "Wild",      "Forest",     "Residence", "Bank",
                                               "Commercial", "Factory", "Lawn",     "Other"};
    return v;
}

/// Scene props that populate object-relation graphs outside events.
inline const std::vector<std::string>& props() {
    static const std::vector<std::string> v = {"lamp", "bench", "pole", "sign", "bin", "plant", "table", "chair"};
    return v;
}

/// Relations used between props; then one relation per event type.
inline const std::vector<std::string>& relations() {
    static const std::vector<std::string> v = {
        "near",   "on",      "next to",    "behind",  "hits",    "attacks", "falls into", "damages",
        "crashes into", "robs", "steals", "walks across", "burns", "violates", "enters"};
    return v;
}

inline constexpr std::size_t kNormalRelations = 4;

/// Entity vocabulary of relation-graph nodes: subjects, then objects, then props.
inline std::size_t entity_count() { return subjects().size() + objects().size() + props().size(); }
inline std::size_t subject_entity(std::size_t s) { return s; }
inline std::size_t object_entity(std::size_t o) { return subjects().size() + o; }
inline std::size_t prop_entity(std::size_t p) { return subjects().size() + objects().size() + p; }
inline std::size_t type_relation(std::size_t t) { return kNormalRelations + t; }

/// Lowercase with surrounding whitespace removed.
inline std::string normalize(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out(s.substr(b, e - b));
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::optional<std::size_t> index_of(const std::vector<std::string>& vocab, std::string_view s) {
    const std::string key = normalize(s);
    for (std::size_t i = 0; i < vocab.size(); ++i)
        if (normalize(vocab[i]) == key) return i;
    return std::nullopt;
}

}  // namespace smoe::vocab
