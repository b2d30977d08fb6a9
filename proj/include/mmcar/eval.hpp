#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcar/fusion.hpp"
#include "mmcar/pairing.hpp"
#include "mmcar/parallel.hpp"
#include "mmcar/types.hpp"

namespace mmcar {

// Per-mood arithmetic means of audio embeddings, manifest order.
struct MoodMeans {
    std::vector<Vec> means;
};

struct ScoreVector {
    std::string design_id;
    Vec scores;  // length M, manifest mood order
    int true_mood = 0;
};

struct EvalReport {
    double med_r = 0.0;
    double mean_rank = 0.0;
    std::vector<int> ks;
    Vec recall;                              // aligned with ks
    std::vector<std::vector<long>> confusion;  // rows true, cols argmax predicted
    std::vector<std::string> moods;
};

inline MoodMeans compute_mood_means(const std::vector<AudioRecord>& audios,
                                    const DatasetManifest& manifest) {
    MoodMeans mm;
    mm.means.assign(manifest.mood_count(), Vec(manifest.dimension, 0.0));
    std::vector<long> counts(manifest.mood_count(), 0);
    for (const auto& a : audios) {
        int m = manifest.mood_index(a.mood);
        if (m < 0) throw DataError("compute_mood_means: unknown mood \"" + a.mood + "\"");
        for (int k = 0; k < manifest.dimension; ++k) mm.means[m][k] += a.vec[k];
        ++counts[m];
    }
    for (int m = 0; m < manifest.mood_count(); ++m) {
        if (counts[m] == 0)
            throw DataError("compute_mood_means: mood \"" + manifest.moods[m] + "\" has no audios");
        for (double& x : mm.means[m]) x /= static_cast<double>(counts[m]);
    }
    return mm;
}

// One model score per mood mean.
inline ScoreVector score_moods(const DesignRecord& design, const MoodMeans& means,
                               const ModelParams& params, const DatasetManifest& manifest) {
    ScoreVector sv;
    sv.design_id = design.id;
    sv.true_mood = manifest.mood_index(design.mood);
    if (sv.true_mood < 0) throw DataError("score_moods: unknown mood \"" + design.mood + "\"");
    sv.scores.reserve(means.means.size());
    for (const Vec& m : means.means)
        sv.scores.push_back(forward(design.image_vec, design.text_vec, m, params).zhat);
    return sv;
}

// Rank of the true mood under descending scores; ties go to the earlier
// manifest position.
inline int rank_of_true(const ScoreVector& sv) {
    double s = sv.scores[sv.true_mood];
    int rank = 1;
    for (int m = 0; m < static_cast<int>(sv.scores.size()); ++m) {
        if (sv.scores[m] > s) ++rank;
        else if (sv.scores[m] == s && m < sv.true_mood) ++rank;
    }
    return rank;
}

inline double recall_at_k(const std::vector<int>& ranks, int k) {
    if (ranks.empty()) throw DataError("recall_at_k: empty rank list");
    if (k < 1) throw DataError("recall_at_k: k must be >= 1");
    long hits = 0;
    for (int r : ranks)
        if (r <= k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline double med_r(std::vector<int> ranks) {
    if (ranks.empty()) throw DataError("med_r: empty rank list");
    std::sort(ranks.begin(), ranks.end());
    std::size_t n = ranks.size();
    if (n % 2 == 1) return static_cast<double>(ranks[n / 2]);
    return 0.5 * (ranks[n / 2 - 1] + ranks[n / 2]);
}

inline double mean_rank(const std::vector<int>& ranks) {
    if (ranks.empty()) throw DataError("mean_rank: empty rank list");
    double s = 0.0;
    for (int r : ranks) s += r;
    return s / static_cast<double>(ranks.size());
}

inline std::vector<std::vector<long>> confusion_matrix(const std::vector<ScoreVector>& svs, int M) {
    if (svs.empty()) throw DataError("confusion_matrix: no score vectors");
    std::vector<std::vector<long>> cm(M, std::vector<long>(M, 0));
    for (const auto& sv : svs) {
        int arg = 0;
        for (int m = 1; m < static_cast<int>(sv.scores.size()); ++m)
            if (sv.scores[m] > sv.scores[arg]) arg = m;  // ties keep earlier mood
        ++cm[sv.true_mood][arg];
    }
    return cm;
}

// Scores every candidate audio, sorts descending (ties by ascending id),
// returns the first min(k, n).
inline std::vector<std::pair<std::string, double>> retrieve_topk(
    const DesignRecord& design, const std::vector<AudioRecord>& candidates,
    const ModelParams& params, int k, int threads = 1) {
    if (k < 1) throw DataError("retrieve_topk: k must be >= 1");
    if (candidates.empty()) throw DataError("retrieve_topk: no candidate audios");
    std::vector<std::pair<std::string, double>> scored(candidates.size());
    parallel_for(candidates.size(), threads, [&](std::size_t idx) {
        scored[idx] = {candidates[idx].id,
                       forward(design.image_vec, design.text_vec, candidates[idx].vec, params).zhat};
    });
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (scored.size() > static_cast<std::size_t>(k)) scored.resize(k);
    return scored;
}

// Untrained reference: weighted cosine against the mood means.
inline ScoreVector baseline_cosine_scores(const DesignRecord& design, const MoodMeans& means,
                                          const PairingConfig& cfg,
                                          const DatasetManifest& manifest) {
    ScoreVector sv;
    sv.design_id = design.id;
    sv.true_mood = manifest.mood_index(design.mood);
    if (sv.true_mood < 0) throw DataError("baseline_cosine_scores: unknown mood \"" + design.mood + "\"");
    for (const Vec& m : means.means) {
        if (norm(m) == 0.0) throw DataError("baseline_cosine_scores: zero-norm mood mean");
        sv.scores.push_back(cfg.lambda1 * cosine_similarity(design.image_vec, m) +
                            cfg.lambda2 * cosine_similarity(design.text_vec, m));
    }
    return sv;
}

// Assembles the full report from per-design score vectors.
inline EvalReport make_report(const std::vector<ScoreVector>& svs, const DatasetManifest& manifest,
                              const std::vector<int>& ks = {1, 5, 10, 15, 20}) {
    if (svs.empty()) throw DataError("make_report: no score vectors");
    std::vector<int> ranks;
    ranks.reserve(svs.size());
    for (const auto& sv : svs) ranks.push_back(rank_of_true(sv));
    EvalReport rep;
    rep.med_r = med_r(ranks);
    rep.mean_rank = mean_rank(ranks);
    rep.ks = ks;
    for (int k : ks) rep.recall.push_back(recall_at_k(ranks, k));
    rep.confusion = confusion_matrix(svs, manifest.mood_count());
    rep.moods = manifest.moods;
    return rep;
}

inline void save_report(const EvalReport& rep, const std::string& path) {
    nlohmann::json j;
    j["med_r"] = rep.med_r;
    j["mean_rank"] = rep.mean_rank;
    nlohmann::json recall;
    for (std::size_t i = 0; i < rep.ks.size(); ++i)
        recall[std::to_string(rep.ks[i])] = rep.recall[i];
    j["recall"] = recall;
    j["confusion"] = rep.confusion;
    j["moods"] = rep.moods;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

inline EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path);
    nlohmann::json j;
    in >> j;
    EvalReport rep;
    rep.med_r = j.at("med_r").get<double>();
    rep.mean_rank = j.at("mean_rank").get<double>();
    for (auto& [k, v] : j.at("recall").items()) {
        rep.ks.push_back(std::stoi(k));
        rep.recall.push_back(v.get<double>());
    }
    rep.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
    rep.moods = j.at("moods").get<std::vector<std::string>>();
    return rep;
}

// Labeled (M+1) x (M+1) table for external plotting.
inline void save_confusion_tsv(const EvalReport& rep, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write confusion table: " + path);
    out << "true\\pred";
    for (const auto& m : rep.moods) out << "\t" << m;
    out << "\n";
    for (std::size_t r = 0; r < rep.confusion.size(); ++r) {
        out << rep.moods[r];
        for (long c : rep.confusion[r]) out << "\t" << c;
        out << "\n";
    }
}

}  // namespace mmcar
