#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmcar {

using Vec = std::vector<double>;

// User/data errors (bad input files, bad configs). CLI maps these to exit 1.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Broken internal invariants. CLI maps these to exit 2.
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DesignRecord {
    std::string id;
    std::string mood;
    Vec image_vec;
    Vec text_vec;
};

struct AudioRecord {
    std::string id;
    std::string mood;
    Vec vec;
};

struct DatasetManifest {
    int dimension = 0;
    std::vector<std::string> moods;  // order is canonical for mood indices

    int mood_count() const { return static_cast<int>(moods.size()); }

    // Index in canonical order, -1 if unknown.
    int mood_index(const std::string& mood) const {
        for (int m = 0; m < mood_count(); ++m)
            if (moods[m] == mood) return m;
        return -1;
    }
};

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

inline void normalize_in_place(Vec& v) {
    double n = norm(v);
    if (n == 0.0) throw DataError("cannot normalize a zero vector");
    for (double& x : v) x /= n;
}

inline double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw DataError("cosine_similarity: dimension mismatch (" +
                        std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0)
        throw DataError("cosine_similarity: zero-norm input");
    double c = dot(a, b) / (na * nb);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

// The 38-label default mood vocabulary, row-major over the published table.
inline const std::vector<std::string>& default_mood_vocabulary() {
    static const std::vector<std::string> moods = {
        "adventure", "advertising", "drama",       "funny",        "love",
        "fun",       "commercial",  "dramatic",    "groovy",       "romantic",
        "game",      "corporate",   "movie",       "happy",        "nature",
        "holiday",   "ambiental",   "dream",       "hopeful",      "summer",
        "horror",    "calm",        "emotional",   "motivational", "retro",
        "space",     "relaxing",    "heavy",       "melodic",      "background",
        "sport",     "soft",        "melancholic", "children",
        "upbeat",    "mellow",      "sad",         "christmas"};
    return moods;
}

}  // namespace mmcar
