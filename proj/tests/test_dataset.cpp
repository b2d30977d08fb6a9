#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmcar/dataset.hpp"

using namespace mmcar;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mmcar_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

DatasetManifest small_manifest(int d) {
    DatasetManifest m;
    m.dimension = d;
    m.moods = {"happy", "sad"};
    return m;
}

}  // namespace

TEST_CASE("load_designs reads valid lines and round-trips") {
    TempDir tmp;
    std::string path = tmp.file("designs.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"d1","mood":"happy","image_vec":[1,0,0,0],"text_vec":[0,1,0,0]})" << "\n";
        out << R"({"id":"d2","mood":"sad","image_vec":[0,0,1,0],"text_vec":[0,0,0,1]})" << "\n";
    }
    auto recs = load_designs(path, small_manifest(4));
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].id == "d1");
    CHECK(recs[1].mood == "sad");

    std::string copy = tmp.file("copy.jsonl");
    save_designs(recs, copy);
    auto again = load_designs(copy, small_manifest(4));
    REQUIRE(again.size() == 2);
    CHECK(again[0].image_vec == recs[0].image_vec);
    CHECK(again[1].text_vec == recs[1].text_vec);
}

TEST_CASE("load_designs reports the offending line") {
    TempDir tmp;
    std::string path = tmp.file("designs.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"d1","mood":"happy","image_vec":[1,0,0],"text_vec":[0,1,0,0]})" << "\n";
    }
    REQUIRE_THROWS_WITH(load_designs(path, small_manifest(4)),
                        Catch::Matchers::ContainsSubstring(":1") &&
                            Catch::Matchers::ContainsSubstring("dimension"));
}

TEST_CASE("load_designs rejects unknown mood, duplicate id, malformed JSON") {
    TempDir tmp;
    std::string path = tmp.file("designs.jsonl");
    auto write = [&](const std::string& body) {
        std::ofstream out(path);
        out << body;
    };
    write(R"({"id":"d1","mood":"angry","image_vec":[1,0],"text_vec":[0,1]})" "\n");
    REQUIRE_THROWS_WITH(load_designs(path, small_manifest(2)),
                        Catch::Matchers::ContainsSubstring("unknown mood"));
    write(R"({"id":"d1","mood":"happy","image_vec":[1,0],"text_vec":[0,1]})" "\n"
          R"({"id":"d1","mood":"sad","image_vec":[1,0],"text_vec":[0,1]})" "\n");
    REQUIRE_THROWS_WITH(load_designs(path, small_manifest(2)),
                        Catch::Matchers::ContainsSubstring("duplicate id"));
    write("{not json\n");
    REQUIRE_THROWS_WITH(load_designs(path, small_manifest(2)),
                        Catch::Matchers::ContainsSubstring("malformed"));
}

TEST_CASE("load_audio: empty file and duplicate ids") {
    TempDir tmp;
    std::string path = tmp.file("audio.jsonl");
    { std::ofstream out(path); }
    CHECK(load_audio(path, small_manifest(2)).empty());
    {
        std::ofstream out(path);
        out << R"({"id":"a1","mood":"happy","vec":[1,0]})" << "\n";
        out << R"({"id":"a1","mood":"happy","vec":[0,1]})" << "\n";
    }
    REQUIRE_THROWS_WITH(load_audio(path, small_manifest(2)),
                        Catch::Matchers::ContainsSubstring("duplicate id"));
}

TEST_CASE("generated dataset survives a disk round-trip bit-for-bit") {
    SynthConfig cfg;
    cfg.d = 8;
    cfg.moods = 3;
    cfg.designs_per_mood = 4;
    cfg.audios_per_mood = 3;
    cfg.noise_std = 0.2;
    cfg.seed = 11;
    SynthResult gen = generate_synthetic(cfg);

    TempDir tmp;
    save_designs(gen.designs, tmp.file("designs.jsonl"));
    save_audio(gen.audios, tmp.file("audio.jsonl"));
    save_manifest(gen.manifest, tmp.file("manifest.json"));
    auto m = load_manifest(tmp.file("manifest.json"));
    auto designs = load_designs(tmp.file("designs.jsonl"), m);
    auto audios = load_audio(tmp.file("audio.jsonl"), m);

    REQUIRE(designs.size() == gen.designs.size());
    REQUIRE(audios.size() == gen.audios.size());
    for (std::size_t i = 0; i < designs.size(); ++i) {
        CHECK(designs[i].id == gen.designs[i].id);
        CHECK(designs[i].image_vec == gen.designs[i].image_vec);
        CHECK(designs[i].text_vec == gen.designs[i].text_vec);
    }
    for (std::size_t i = 0; i < audios.size(); ++i) CHECK(audios[i].vec == gen.audios[i].vec);
}

TEST_CASE("generate_synthetic: zero noise collapses onto prototypes") {
    SynthConfig cfg;
    cfg.d = 6;
    cfg.moods = 3;
    cfg.designs_per_mood = 2;
    cfg.audios_per_mood = 2;
    cfg.noise_std = 0.0;
    cfg.seed = 5;
    SynthResult res = generate_synthetic(cfg);
    for (const auto& a : res.audios) {
        int m = res.manifest.mood_index(a.mood);
        CHECK(a.vec == res.prototypes[m]);
    }
    for (const auto& d : res.designs) {
        int m = res.manifest.mood_index(d.mood);
        CHECK(d.image_vec == res.prototypes[m]);
        CHECK(cosine_similarity(d.image_vec, res.prototypes[m]) == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("generate_synthetic is a pure function of its config") {
    SynthConfig cfg;
    cfg.d = 16;
    cfg.moods = 4;
    cfg.designs_per_mood = 5;
    cfg.audios_per_mood = 5;
    cfg.noise_std = 0.3;
    cfg.seed = 123;
    SynthResult a = generate_synthetic(cfg);
    SynthResult b = generate_synthetic(cfg);
    REQUIRE(a.designs.size() == b.designs.size());
    for (std::size_t i = 0; i < a.designs.size(); ++i) {
        CHECK(a.designs[i].image_vec == b.designs[i].image_vec);
        CHECK(a.designs[i].text_vec == b.designs[i].text_vec);
    }
    for (std::size_t i = 0; i < a.audios.size(); ++i) CHECK(a.audios[i].vec == b.audios[i].vec);
}

namespace {

// Brute-force within/cross mood mean cosine over all audio pairs.
std::pair<double, double> mood_cosine_means(const SynthResult& res) {
    double win = 0, cross = 0;
    long nw = 0, nc = 0;
    for (std::size_t i = 0; i < res.audios.size(); ++i)
        for (std::size_t j = i + 1; j < res.audios.size(); ++j) {
            double c = cosine_similarity(res.audios[i].vec, res.audios[j].vec);
            if (res.audios[i].mood == res.audios[j].mood) {
                win += c;
                ++nw;
            } else {
                cross += c;
                ++nc;
            }
        }
    return {win / nw, cross / nc};
}

}  // namespace

TEST_CASE("moderate noise keeps moods separable") {
    SynthConfig cfg;
    cfg.d = 16;
    cfg.moods = 6;
    cfg.designs_per_mood = 5;
    cfg.audios_per_mood = 10;
    cfg.noise_std = 0.1;
    cfg.seed = 7;
    auto [win, cross] = mood_cosine_means(generate_synthetic(cfg));
    CHECK(win > cross);
}

TEST_CASE("with a fixed seed, less noise means tighter clusters") {
    SynthConfig cfg;
    cfg.d = 12;
    cfg.moods = 4;
    cfg.designs_per_mood = 3;
    cfg.audios_per_mood = 8;
    cfg.seed = 99;
    double prev = -2.0;
    for (double noise : {0.8, 0.4, 0.2, 0.1, 0.0}) {
        cfg.noise_std = noise;
        auto [win, cross] = mood_cosine_means(generate_synthetic(cfg));
        (void)cross;
        CHECK(win >= prev);
        prev = win;
    }
}

TEST_CASE("export_embeddings writes TSV and round-trips full precision") {
    TempDir tmp;
    SECTION("single record layout") {
        std::vector<LabeledVec> recs = {{"id", "mood", {0.0, 1.0}}};
        export_embeddings(recs, tmp.file("one.tsv"));
        std::ifstream in(tmp.file("one.tsv"));
        std::string line;
        std::getline(in, line);
        CHECK(line == "id\tmood\t0\t1");
    }
    SECTION("empty input is an error, not an empty file") {
        CHECK_THROWS_AS(export_embeddings({}, tmp.file("none.tsv")), DataError);
        CHECK(!fs::exists(tmp.file("none.tsv")));
    }
    SECTION("export then reload preserves every bit") {
        SynthConfig cfg;
        cfg.d = 5;
        cfg.moods = 2;
        cfg.designs_per_mood = 1;
        cfg.audios_per_mood = 4;
        cfg.noise_std = 0.17;
        cfg.seed = 3;
        SynthResult res = generate_synthetic(cfg);
        std::vector<LabeledVec> rows;
        for (const auto& a : res.audios) rows.push_back({a.id, a.mood, a.vec});
        export_embeddings(rows, tmp.file("audio.tsv"));
        auto back = import_embeddings(tmp.file("audio.tsv"));
        REQUIRE(back.size() == rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(back[i].id == rows[i].id);
            CHECK(back[i].values == rows[i].values);
        }
    }
}

TEST_CASE("manifest validation") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("manifest.json"));
        out << R"({"dimension": 4, "moods": ["a", "b", "a"]})";
    }
    CHECK_THROWS_AS(load_manifest(tmp.file("manifest.json")), DataError);
    {
        std::ofstream out(tmp.file("manifest.json"));
        out << R"({"dimension": 512})";
    }
    auto m = load_manifest(tmp.file("manifest.json"));
    CHECK(m.moods.size() == 38);  // default vocabulary
    CHECK(m.mood_index("adventure") == 0);
    CHECK(m.mood_index("christmas") == 37);
}
