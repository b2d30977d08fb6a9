#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>

#include "mmcar/dataset.hpp"
#include "mmcar/eval.hpp"

using namespace mmcar;

namespace {

DatasetManifest manifest2(int d) {
    DatasetManifest m;
    m.dimension = d;
    m.moods = {"happy", "sad"};
    return m;
}

ScoreVector sv(Vec scores, int true_mood) {
    ScoreVector s;
    s.design_id = "d";
    s.scores = std::move(scores);
    s.true_mood = true_mood;
    return s;
}

}  // namespace

TEST_CASE("compute_mood_means: single audio, symmetric pair, empty mood") {
    DatasetManifest m = manifest2(2);
    std::vector<AudioRecord> audios = {{"a1", "happy", {0.25, -0.5}}, {"a2", "sad", {1, 0}},
                                       {"a3", "sad", {-1, 0}}};
    MoodMeans mm = compute_mood_means(audios, m);
    CHECK(mm.means[0] == Vec{0.25, -0.5});
    CHECK(mm.means[1] == Vec{0.0, 0.0});
    CHECK_THROWS_AS(compute_mood_means({{"a1", "happy", {1, 0}}}, m), DataError);
}

TEST_CASE("zero-noise synthetic: mood means recover the prototypes") {
    SynthConfig cfg;
    cfg.d = 8;
    cfg.moods = 3;
    cfg.designs_per_mood = 1;
    cfg.audios_per_mood = 5;
    cfg.noise_std = 0.0;
    cfg.seed = 2;
    SynthResult res = generate_synthetic(cfg);
    MoodMeans mm = compute_mood_means(res.audios, res.manifest);
    for (int m = 0; m < 3; ++m)
        for (int k = 0; k < 8; ++k)
            CHECK(mm.means[m][k] == Catch::Approx(res.prototypes[m][k]).margin(1e-15));
}

TEST_CASE("score_moods: each entry is an independent forward pass") {
    SynthConfig cfg;
    cfg.d = 4;
    cfg.moods = 3;
    cfg.designs_per_mood = 2;
    cfg.audios_per_mood = 3;
    cfg.noise_std = 0.2;
    cfg.seed = 6;
    SynthResult res = generate_synthetic(cfg);
    MoodMeans mm = compute_mood_means(res.audios, res.manifest);
    ModelParams params = init_params(4, SharingMode::PerPair, 10);
    ScoreVector s = score_moods(res.designs[0], mm, params, res.manifest);
    REQUIRE(s.scores.size() == 3);
    for (int m = 0; m < 3; ++m) {
        double expect =
            forward(res.designs[0].image_vec, res.designs[0].text_vec, mm.means[m], params).zhat;
        CHECK(s.scores[m] == expect);
        CHECK(s.scores[m] >= 0.0);
        CHECK(s.scores[m] <= 1.0);
    }
    CHECK(s.true_mood == res.manifest.mood_index(res.designs[0].mood));
}

TEST_CASE("rank_of_true: direct cases and tie rule") {
    CHECK(rank_of_true(sv({0.9, 0.1, 0.2}, 0)) == 1);
    CHECK(rank_of_true(sv({0.1, 0.9, 0.2}, 2)) == 2);
    // all equal: rank is the manifest position + 1
    CHECK(rank_of_true(sv({0.5, 0.5, 0.5}, 0)) == 1);
    CHECK(rank_of_true(sv({0.5, 0.5, 0.5}, 2)) == 3);
}

TEST_CASE("rank_of_true matches a stable-sort oracle on random vectors") {
    Rng rng(404);
    for (int trial = 0; trial < 300; ++trial) {
        int M = 2 + static_cast<int>(rng.below(12));
        Vec scores(M);
        for (double& x : scores) x = rng.below(8) / 8.0;  // coarse grid forces ties
        int true_mood = static_cast<int>(rng.below(M));

        // oracle: stable sort of mood indices by descending score
        std::vector<int> idx(M);
        for (int m = 0; m < M; ++m) idx[m] = m;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int x, int y) { return scores[x] > scores[y]; });
        int oracle = 1 + static_cast<int>(std::find(idx.begin(), idx.end(), true_mood) - idx.begin());

        CHECK(rank_of_true(sv(scores, true_mood)) == oracle);
    }
}

TEST_CASE("rank_of_true is invariant to constant score shifts") {
    Rng rng(5);
    Vec scores(6);
    for (double& x : scores) x = rng.uniform01();
    int base = rank_of_true(sv(scores, 3));
    Vec shifted = scores;
    for (double& x : shifted) x += 0.123;
    CHECK(rank_of_true(sv(shifted, 3)) == base);
}

TEST_CASE("recall_at_k: values, saturation, monotonicity") {
    CHECK(recall_at_k({1, 6, 11, 2}, 5) == 0.5);
    CHECK(recall_at_k({3, 7, 2}, 100) == 1.0);
    CHECK_THROWS_AS(recall_at_k({}, 1), DataError);
    Rng rng(8);
    std::vector<int> ranks;
    for (int n = 0; n < 50; ++n) ranks.push_back(1 + static_cast<int>(rng.below(20)));
    double prev = 0.0;
    for (int k = 1; k <= 20; ++k) {
        double r = recall_at_k(ranks, k);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("med_r and mean_rank") {
    CHECK(med_r({1, 3, 7}) == 3.0);
    CHECK(med_r({1, 2, 3, 10}) == 2.5);
    CHECK(mean_rank({1, 2, 3, 10}) == 4.0);
    CHECK_THROWS_AS(med_r({}), DataError);
    Rng rng(21);
    std::vector<int> ranks;
    for (int n = 0; n < 1000; ++n) ranks.push_back(1 + static_cast<int>(rng.below(38)));
    // oracle: sorted middle element(s)
    std::vector<int> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    double oracle = 0.5 * (sorted[499] + sorted[500]);
    CHECK(med_r(ranks) == oracle);
}

TEST_CASE("confusion_matrix: diagonal case, conservation, recount oracle") {
    std::vector<ScoreVector> svs;
    svs.push_back(sv({0.9, 0.1}, 0));
    svs.push_back(sv({0.8, 0.2}, 0));
    svs.push_back(sv({0.3, 0.7}, 1));
    auto cm = confusion_matrix(svs, 2);
    CHECK(cm[0][0] == 2);
    CHECK(cm[1][1] == 1);
    CHECK(cm[0][1] + cm[1][0] == 0);

    Rng rng(3);
    std::vector<ScoreVector> rand_svs;
    int M = 5;
    for (int n = 0; n < 200; ++n) {
        Vec scores(M);
        for (double& x : scores) x = rng.below(4) / 4.0;
        rand_svs.push_back(sv(scores, static_cast<int>(rng.below(M))));
    }
    auto rcm = confusion_matrix(rand_svs, M);
    long total = 0;
    std::vector<long> row_expect(M, 0);
    for (const auto& s : rand_svs) ++row_expect[s.true_mood];
    for (int r = 0; r < M; ++r) {
        long row = 0;
        for (long c : rcm[r]) {
            row += c;
            total += c;
        }
        CHECK(row == row_expect[r]);
    }
    CHECK(total == 200);
    // independent tally
    std::vector<std::vector<long>> oracle(M, std::vector<long>(M, 0));
    for (const auto& s : rand_svs) {
        int best = 0;
        for (int m = 1; m < M; ++m)
            if (s.scores[m] > s.scores[best]) best = m;
        ++oracle[s.true_mood][best];
    }
    CHECK(rcm == oracle);
}

TEST_CASE("retrieve_topk matches a full-sort oracle") {
    SynthConfig cfg;
    cfg.d = 6;
    cfg.moods = 5;
    cfg.designs_per_mood = 1;
    cfg.audios_per_mood = 10;
    cfg.noise_std = 0.4;
    cfg.seed = 77;
    SynthResult res = generate_synthetic(cfg);
    ModelParams params = init_params(6, SharingMode::PerPair, 3);
    const auto& design = res.designs[0];

    auto top = retrieve_topk(design, res.audios, params, 7);
    REQUIRE(top.size() == 7);
    for (std::size_t k = 1; k < top.size(); ++k) CHECK(top[k - 1].second >= top[k].second);

    std::vector<std::pair<double, std::string>> oracle;
    for (const auto& a : res.audios)
        oracle.emplace_back(forward(design.image_vec, design.text_vec, a.vec, params).zhat, a.id);
    std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    for (std::size_t k = 0; k < top.size(); ++k) {
        CHECK(top[k].first == oracle[k].second);
        CHECK(top[k].second == oracle[k].first);
    }

    auto all = retrieve_topk(design, res.audios, params, 1000);
    CHECK(all.size() == res.audios.size());
}

TEST_CASE("baseline_cosine_scores: perfect separation at zero noise, bounds, toy oracle") {
    SynthConfig cfg;
    cfg.d = 8;
    cfg.moods = 4;
    cfg.designs_per_mood = 3;
    cfg.audios_per_mood = 4;
    cfg.noise_std = 0.0;
    cfg.seed = 9;
    SynthResult res = generate_synthetic(cfg);
    MoodMeans mm = compute_mood_means(res.audios, res.manifest);
    PairingConfig pcfg;
    for (const auto& d : res.designs) {
        ScoreVector s = baseline_cosine_scores(d, mm, pcfg, res.manifest);
        CHECK(rank_of_true(s) == 1);
        for (double x : s.scores) {
            CHECK(x >= -(pcfg.lambda1 + pcfg.lambda2) - 1e-12);
            CHECK(x <= pcfg.lambda1 + pcfg.lambda2 + 1e-12);
        }
    }

    // d=2, M=2 hand computation
    DatasetManifest m = manifest2(2);
    MoodMeans means;
    means.means = {{1.0, 0.0}, {0.0, 1.0}};
    DesignRecord d{"d", "happy", {1.0, 0.0}, {1.0, 1.0}};
    ScoreVector s = baseline_cosine_scores(d, means, pcfg, m);
    CHECK(s.scores[0] == Catch::Approx(0.5 + 0.5 / std::sqrt(2.0)).margin(1e-12));
    CHECK(s.scores[1] == Catch::Approx(0.0 + 0.5 / std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("report assembly and file round-trip") {
    namespace fs = std::filesystem;
    std::vector<ScoreVector> svs;
    svs.push_back(sv({0.9, 0.1, 0.3}, 0));  // rank 1
    svs.push_back(sv({0.2, 0.5, 0.9}, 1));  // rank 2
    svs.push_back(sv({0.8, 0.3, 0.2}, 2));  // rank 3
    DatasetManifest m;
    m.dimension = 2;
    m.moods = {"happy", "sad", "calm"};
    EvalReport rep = make_report(svs, m, {1, 2, 3});
    CHECK(rep.med_r == 2.0);
    CHECK(rep.mean_rank == 2.0);
    CHECK(rep.recall[0] == Catch::Approx(1.0 / 3.0));
    CHECK(rep.recall[2] == 1.0);

    fs::path dir = fs::temp_directory_path() / "mmcar_eval_io";
    fs::create_directories(dir);
    save_report(rep, (dir / "report.json").string());
    EvalReport back = load_report((dir / "report.json").string());
    CHECK(back.med_r == rep.med_r);
    CHECK(back.mean_rank == rep.mean_rank);
    CHECK(back.confusion == rep.confusion);

    save_confusion_tsv(rep, (dir / "confusion.tsv").string());
    std::ifstream in(dir / "confusion.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "true\\pred\thappy\tsad\tcalm");
    fs::remove_all(dir);
}
