#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcar/rng.hpp"
#include "mmcar/types.hpp"

namespace mmcar {

struct PairingConfig {
    double lambda1 = 0.5;  // weight on image-audio similarity
    double lambda2 = 0.5;  // weight on text-audio similarity
    int top_n = 10;        // positive audios per design
    int neg_moods = 5;     // distinct wrong moods per design
    int neg_per_mood = 2;  // audios sampled per wrong mood
    std::uint64_t seed = 42;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0 || lambda1 + lambda2 <= 0.0)
            throw DataError("PairingConfig: need lambda1, lambda2 >= 0 and lambda1 + lambda2 > 0");
        if (top_n < 1 || neg_moods < 1 || neg_per_mood < 1)
            throw DataError("PairingConfig: top_n, neg_moods, neg_per_mood must be >= 1");
    }
};

struct Triplet {
    std::string design_id;
    std::string audio_id;
    int label = 0;  // 1 = matched pair, 0 = mismatch
};

struct DatasetSplit {
    struct Part {
        std::vector<std::string> designs;
        std::vector<std::string> audios;
    };
    Part train, val, test;
};

// Weighted sum of the two cross-modal cosine similarities.
inline double pair_score(const DesignRecord& design, const AudioRecord& audio,
                         const PairingConfig& cfg) {
    return cfg.lambda1 * cosine_similarity(design.image_vec, audio.vec) +
           cfg.lambda2 * cosine_similarity(design.text_vec, audio.vec);
}

// Top-N same-mood audios by pair_score, score ties broken by ascending id.
inline std::vector<std::string> select_positives(const DesignRecord& design,
                                                 const std::vector<const AudioRecord*>& pool,
                                                 const PairingConfig& cfg) {
    for (const AudioRecord* a : pool)
        if (a->mood != design.mood)
            throw InternalError("select_positives: pool audio " + a->id + " has mood " + a->mood +
                                ", design " + design.id + " has mood " + design.mood);
    std::vector<std::pair<double, const AudioRecord*>> scored;
    scored.reserve(pool.size());
    for (const AudioRecord* a : pool) scored.emplace_back(pair_score(design, *a, cfg), a);
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second->id < y.second->id;
    });
    std::vector<std::string> out;
    std::size_t n = std::min<std::size_t>(cfg.top_n, scored.size());
    for (std::size_t i = 0; i < n; ++i) out.push_back(scored[i].second->id);
    return out;
}

// Audio ids grouped by mood, each group sorted by id; mood keys in manifest order.
struct MoodPools {
    std::vector<std::string> moods;                                    // manifest order
    std::unordered_map<std::string, std::vector<std::string>> by_mood; // sorted ids

    static MoodPools build(const std::vector<AudioRecord>& audios, const DatasetManifest& m) {
        MoodPools p;
        p.moods = m.moods;
        for (const auto& a : audios) p.by_mood[a.mood].push_back(a.id);
        for (auto& [mood, ids] : p.by_mood) std::sort(ids.begin(), ids.end());
        return p;
    }
};

// neg_moods distinct wrong moods, neg_per_mood audios from each, all uniform
// without replacement. The stream is derived from (seed, design id) so
// per-design work is order-independent.
inline std::vector<std::string> sample_negatives(const DesignRecord& design, const MoodPools& pools,
                                                 const PairingConfig& cfg) {
    std::vector<std::string> candidates;
    for (const auto& mood : pools.moods)
        if (mood != design.mood) candidates.push_back(mood);
    if (static_cast<int>(candidates.size()) < cfg.neg_moods)
        throw DataError("sample_negatives: only " + std::to_string(candidates.size()) +
                        " moods differ from \"" + design.mood + "\", need " +
                        std::to_string(cfg.neg_moods));

    Rng rng(hash64(cfg.seed, "neg:" + design.id));
    // partial Fisher-Yates for the mood choice
    for (int i = 0; i < cfg.neg_moods; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }

    std::vector<std::string> out;
    for (int i = 0; i < cfg.neg_moods; ++i) {
        const std::string& mood = candidates[i];
        auto it = pools.by_mood.find(mood);
        std::size_t avail = (it == pools.by_mood.end()) ? 0 : it->second.size();
        if (avail < static_cast<std::size_t>(cfg.neg_per_mood))
            throw DataError("sample_negatives: mood \"" + mood + "\" has " + std::to_string(avail) +
                            " audios, need " + std::to_string(cfg.neg_per_mood));
        std::vector<std::string> ids = it->second;
        for (int k = 0; k < cfg.neg_per_mood; ++k) {
            std::size_t j = k + static_cast<std::size_t>(rng.below(ids.size() - k));
            std::swap(ids[k], ids[j]);
            out.push_back(ids[k]);
        }
    }
    return out;
}

struct TripletBuildResult {
    std::vector<Triplet> triplets;
    std::vector<std::string> warnings;  // designs with no positive pool
};

inline TripletBuildResult build_triplets(const std::vector<DesignRecord>& designs,
                                         const std::vector<AudioRecord>& audios,
                                         const DatasetManifest& manifest,
                                         const PairingConfig& cfg) {
    cfg.validate();
    MoodPools pools = MoodPools::build(audios, manifest);
    std::unordered_map<std::string, std::vector<const AudioRecord*>> same_mood;
    for (const auto& a : audios) same_mood[a.mood].push_back(&a);
    for (auto& [mood, ptrs] : same_mood)
        std::sort(ptrs.begin(), ptrs.end(),
                  [](const AudioRecord* x, const AudioRecord* y) { return x->id < y->id; });

    TripletBuildResult out;
    for (const auto& d : designs) {
        auto it = same_mood.find(d.mood);
        std::vector<const AudioRecord*> pool =
            (it == same_mood.end()) ? std::vector<const AudioRecord*>{} : it->second;
        if (pool.empty()) {
            out.warnings.push_back("design " + d.id + ": no audios of mood \"" + d.mood +
                                   "\", no positive triplets");
        } else {
            for (const auto& aid : select_positives(d, pool, cfg))
                out.triplets.push_back({d.id, aid, 1});
        }
        for (const auto& aid : sample_negatives(d, pools, cfg))
            out.triplets.push_back({d.id, aid, 0});
    }
    if (out.triplets.empty()) throw DataError("build_triplets: no triplets produced");
    return out;
}

// Per-mood 60/20/20 partition: train = ceil(0.6 n), val = ceil(rest / 2),
// test = remainder.
inline DatasetSplit split_dataset(const std::vector<DesignRecord>& designs,
                                  const std::vector<AudioRecord>& audios,
                                  const DatasetManifest& manifest, std::uint64_t seed) {
    std::unordered_map<std::string, std::vector<std::string>> design_ids, audio_ids;
    for (const auto& d : designs) design_ids[d.mood].push_back(d.id);
    for (const auto& a : audios) audio_ids[a.mood].push_back(a.id);

    DatasetSplit split;
    auto partition = [&](std::vector<std::string> ids, const std::string& tag, bool is_designs,
                         const std::string& mood) {
        if (ids.size() < 5)
            throw DataError("split_dataset: mood \"" + mood + "\" has only " +
                            std::to_string(ids.size()) + (is_designs ? " designs" : " audios") +
                            ", need >= 5");
        std::sort(ids.begin(), ids.end());
        Rng rng(hash64(seed, tag + ":" + mood));
        rng.shuffle(ids);
        std::size_t n = ids.size();
        std::size_t n_train = (6 * n + 9) / 10;  // ceil(0.6 n)
        std::size_t rest = n - n_train;
        std::size_t n_val = (rest + 1) / 2;  // ceil(rest / 2)
        auto& dst_train = is_designs ? split.train.designs : split.train.audios;
        auto& dst_val = is_designs ? split.val.designs : split.val.audios;
        auto& dst_test = is_designs ? split.test.designs : split.test.audios;
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_train)
                dst_train.push_back(ids[i]);
            else if (i < n_train + n_val)
                dst_val.push_back(ids[i]);
            else
                dst_test.push_back(ids[i]);
        }
    };
    for (const auto& mood : manifest.moods) {
        partition(design_ids[mood], "split:designs", true, mood);
        partition(audio_ids[mood], "split:audios", false, mood);
    }
    return split;
}

// ---------------------------------------------------------------------------
// File formats

inline void save_triplets(const std::vector<Triplet>& ts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write triplets file: " + path);
    for (const auto& t : ts) {
        nlohmann::json j;
        j["design_id"] = t.design_id;
        j["audio_id"] = t.audio_id;
        j["label"] = t.label;
        out << j.dump() << "\n";
    }
}

inline std::vector<Triplet> load_triplets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open triplets file: " + path);
    std::vector<Triplet> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        Triplet t;
        t.design_id = j.at("design_id").get<std::string>();
        t.audio_id = j.at("audio_id").get<std::string>();
        t.label = j.at("label").get<int>();
        if (t.label != 0 && t.label != 1)
            throw DataError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
        out.push_back(std::move(t));
    }
    return out;
}

inline void save_split(const DatasetSplit& s, const std::string& path) {
    auto part = [](const DatasetSplit::Part& p) {
        nlohmann::json j;
        j["designs"] = p.designs;
        j["audios"] = p.audios;
        return j;
    };
    nlohmann::json j;
    j["train"] = part(s.train);
    j["val"] = part(s.val);
    j["test"] = part(s.test);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write splits file: " + path);
    out << j.dump(2) << "\n";
}

inline DatasetSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open splits file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("splits parse error in " + path + ": " + e.what());
    }
    auto part = [&](const char* key) {
        DatasetSplit::Part p;
        p.designs = j.at(key).at("designs").get<std::vector<std::string>>();
        p.audios = j.at(key).at("audios").get<std::vector<std::string>>();
        return p;
    };
    return DatasetSplit{part("train"), part("val"), part("test")};
}

}  // namespace mmcar
