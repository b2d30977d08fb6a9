#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcar/rng.hpp"
#include "mmcar/types.hpp"

namespace mmcar {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest I/O

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    DatasetManifest m;
    if (!j.contains("dimension") || !j["dimension"].is_number_integer())
        throw DataError("manifest missing integer \"dimension\": " + path);
    m.dimension = j["dimension"].get<int>();
    if (m.dimension < 1) throw DataError("manifest dimension must be >= 1");
    if (j.contains("moods")) {
        m.moods = j["moods"].get<std::vector<std::string>>();
    } else {
        m.moods = default_mood_vocabulary();
    }
    if (m.mood_count() < 2) throw DataError("manifest must declare at least 2 moods");
    std::unordered_set<std::string> seen;
    for (const auto& mood : m.moods)
        if (!seen.insert(mood).second) throw DataError("manifest mood listed twice: " + mood);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["dimension"] = m.dimension;
    j["moods"] = m.moods;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// JSONL record I/O

namespace detail {

inline Vec parse_vec(const json& j, const char* field, int d, const std::string& where) {
    if (!j.contains(field) || !j[field].is_array())
        throw DataError(where + ": missing vector field \"" + field + "\"");
    Vec v = j[field].get<Vec>();
    if (static_cast<int>(v.size()) != d)
        throw DataError(where + ": field \"" + field + "\" has dimension " +
                        std::to_string(v.size()) + ", manifest declares " + std::to_string(d));
    if (!all_finite(v)) throw DataError(where + ": non-finite entry in \"" + field + "\"");
    return v;
}

inline void check_common(const json& j, const DatasetManifest& m, const std::string& where,
                         std::unordered_set<std::string>& ids, std::string& id, std::string& mood) {
    if (!j.contains("id") || !j["id"].is_string()) throw DataError(where + ": missing string \"id\"");
    if (!j.contains("mood") || !j["mood"].is_string()) throw DataError(where + ": missing string \"mood\"");
    id = j["id"].get<std::string>();
    mood = j["mood"].get<std::string>();
    if (m.mood_index(mood) < 0) throw DataError(where + ": unknown mood \"" + mood + "\" (id " + id + ")");
    if (!ids.insert(id).second) throw DataError(where + ": duplicate id \"" + id + "\"");
}

}  // namespace detail

inline std::vector<DesignRecord> load_designs(const std::string& path, const DatasetManifest& m) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open designs file: " + path);
    std::vector<DesignRecord> out;
    std::unordered_set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        DesignRecord r;
        detail::check_common(j, m, where, ids, r.id, r.mood);
        r.image_vec = detail::parse_vec(j, "image_vec", m.dimension, where);
        r.text_vec = detail::parse_vec(j, "text_vec", m.dimension, where);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<AudioRecord> load_audio(const std::string& path, const DatasetManifest& m) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open audio file: " + path);
    std::vector<AudioRecord> out;
    std::unordered_set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        AudioRecord r;
        detail::check_common(j, m, where, ids, r.id, r.mood);
        r.vec = detail::parse_vec(j, "vec", m.dimension, where);
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_designs(const std::vector<DesignRecord>& recs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write designs file: " + path);
    for (const auto& r : recs) {
        json j;
        j["id"] = r.id;
        j["mood"] = r.mood;
        j["image_vec"] = r.image_vec;
        j["text_vec"] = r.text_vec;
        out << j.dump() << "\n";
    }
}

inline void save_audio(const std::vector<AudioRecord>& recs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write audio file: " + path);
    for (const auto& r : recs) {
        json j;
        j["id"] = r.id;
        j["mood"] = r.mood;
        j["vec"] = r.vec;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// TSV export (id, mood, then d value columns), for external plotting.

struct LabeledVec {
    std::string id;
    std::string mood;
    Vec values;
};

inline void export_embeddings(const std::vector<LabeledVec>& records, const std::string& path) {
    if (records.empty()) throw DataError("export_embeddings: no records to export");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write export file: " + path);
    char buf[64];
    for (const auto& r : records) {
        out << r.id << "\t" << r.mood;
        for (double x : r.values) {
            auto res = std::to_chars(buf, buf + sizeof(buf), x);
            out << "\t" << std::string_view(buf, res.ptr - buf);
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<LabeledVec> import_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open export file: " + path);
    std::vector<LabeledVec> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        LabeledVec r;
        std::istringstream ss(line);
        std::string field;
        if (!std::getline(ss, r.id, '\t') || !std::getline(ss, r.mood, '\t'))
            throw DataError(path + ":" + std::to_string(lineno) + ": short TSV row");
        while (std::getline(ss, field, '\t')) r.values.push_back(std::stod(field));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic mood-clustered dataset generation

struct SynthConfig {
    int d = 16;
    int moods = 6;
    int designs_per_mood = 50;
    int audios_per_mood = 20;
    double noise_std = 0.1;
    std::uint64_t seed = 42;

    void validate() const {
        if (d < 1) throw DataError("SynthConfig: d must be >= 1");
        if (moods < 2) throw DataError("SynthConfig: moods must be >= 2");
        if (designs_per_mood < 1 || audios_per_mood < 1)
            throw DataError("SynthConfig: per-mood counts must be >= 1");
        if (noise_std < 0.0) throw DataError("SynthConfig: noise_std must be >= 0");
    }
};

struct SynthResult {
    std::vector<DesignRecord> designs;
    std::vector<AudioRecord> audios;
    DatasetManifest manifest;
    std::vector<Vec> prototypes;  // one unit vector per mood
};

// All vectors of mood m are normalize(p_m + noise); a single seeded stream
// drives every draw, so identical configs produce bitwise-identical output.
inline SynthResult generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    SynthResult out;
    out.manifest.dimension = cfg.d;
    const auto& vocab = default_mood_vocabulary();
    for (int m = 0; m < cfg.moods; ++m) {
        if (m < static_cast<int>(vocab.size()))
            out.manifest.moods.push_back(vocab[m]);
        else
            out.manifest.moods.push_back("mood" + std::to_string(m));
    }

    Rng rng(cfg.seed);
    auto noisy_copy = [&](const Vec& p) {
        Vec v = p;
        if (cfg.noise_std > 0.0) {
            for (double& x : v) x += cfg.noise_std * rng.gaussian();
            normalize_in_place(v);
        } else {
            // still consume the stream so noise_std only rescales draws
            for (std::size_t i = 0; i < v.size(); ++i) rng.gaussian();
        }
        return v;
    };

    for (int m = 0; m < cfg.moods; ++m) {
        Vec proto(cfg.d);
        do {
            for (double& x : proto) x = rng.gaussian();
        } while (norm(proto) == 0.0);
        normalize_in_place(proto);
        out.prototypes.push_back(proto);

        const std::string& mood = out.manifest.moods[m];
        for (int j = 0; j < cfg.designs_per_mood; ++j) {
            DesignRecord r;
            r.id = "d" + std::to_string(m) + "_" + std::to_string(j);
            r.mood = mood;
            r.image_vec = noisy_copy(proto);
            r.text_vec = noisy_copy(proto);
            out.designs.push_back(std::move(r));
        }
        for (int j = 0; j < cfg.audios_per_mood; ++j) {
            AudioRecord r;
            r.id = "a" + std::to_string(m) + "_" + std::to_string(j);
            r.mood = mood;
            r.vec = noisy_copy(proto);
            out.audios.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace mmcar
