// mmcar: end-to-end pipeline driver.
// Stages write their artifacts to --out and read prior artifacts from --data
// (both default to "."); every stage derives its own seed from the global
// --seed, so one flag pins the whole run.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmcar/dataset.hpp"
#include "mmcar/eval.hpp"
#include "mmcar/fusion.hpp"
#include "mmcar/pairing.hpp"
#include "mmcar/trainer.hpp"

namespace fs = std::filesystem;
using mmcar::json;

namespace {

struct Common {
    std::string data_dir = ".";
    std::string out_dir = ".";
    std::uint64_t seed = 42;
    int threads = 1;
    std::string config_path;

    json config;

    void add_to(CLI::App* app) {
        app->add_option("--data", data_dir, "directory with input artifacts");
        app->add_option("-o,--out", out_dir, "directory for output artifacts");
        app->add_option("--seed", seed, "global seed; all stage seeds derive from it");
        app->add_option("--threads", threads, "internal parallelism bound (outputs unaffected)");
        app->add_option("--config", config_path, "JSON run config; flags override file values");
    }

    void load_config(const CLI::App& app) {
        if (config_path.empty()) return;
        std::ifstream in(config_path);
        if (!in) throw mmcar::DataError("cannot open config: " + config_path);
        try {
            in >> config;
        } catch (const json::exception& e) {
            throw mmcar::DataError("config parse error: " + std::string(e.what()));
        }
        if (!app.count("--data") && config.contains("data_dir")) data_dir = config["data_dir"];
        if (!app.count("--out") && config.contains("out_dir")) out_dir = config["out_dir"];
        if (!app.count("--seed") && config.contains("seed")) seed = config["seed"];
        if (!app.count("--threads") && config.contains("threads")) threads = config["threads"];
    }

    // Pull a value from a config section unless the flag was given explicitly.
    template <typename T>
    void override_from(const CLI::App& app, const std::string& flag, const char* section,
                      const char* key, T& value) const {
        if (app.count(flag)) return;
        if (config.contains(section) && config[section].contains(key))
            value = config[section][key].get<T>();
    }

    std::string in_path(const std::string& name) const { return (fs::path(data_dir) / name).string(); }
    std::string out_path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }
};

struct LoadedData {
    mmcar::DatasetManifest manifest;
    std::vector<mmcar::DesignRecord> designs;
    std::vector<mmcar::AudioRecord> audios;
};

LoadedData load_data(const Common& c) {
    LoadedData d;
    d.manifest = mmcar::load_manifest(c.in_path("manifest.json"));
    d.designs = mmcar::load_designs(c.in_path("designs.jsonl"), d.manifest);
    d.audios = mmcar::load_audio(c.in_path("audio.jsonl"), d.manifest);
    return d;
}

template <typename Rec>
std::vector<Rec> filter_by_ids(const std::vector<Rec>& recs, const std::vector<std::string>& ids) {
    std::unordered_set<std::string> keep(ids.begin(), ids.end());
    std::vector<Rec> out;
    for (const auto& r : recs)
        if (keep.count(r.id)) out.push_back(r);
    return out;
}

const mmcar::DatasetSplit::Part& split_part(const mmcar::DatasetSplit& s, const std::string& name) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    throw mmcar::DataError("unknown split: " + name + " (expected train, val, or test)");
}

// Mean within-mood and cross-mood cosine over all design/audio vector pairs.
std::pair<double, double> cohesion_summary(const LoadedData& d) {
    std::vector<std::pair<std::string, const mmcar::Vec*>> vecs;
    for (const auto& r : d.designs) {
        vecs.emplace_back(r.mood, &r.image_vec);
        vecs.emplace_back(r.mood, &r.text_vec);
    }
    for (const auto& r : d.audios) vecs.emplace_back(r.mood, &r.vec);
    double win = 0, cross = 0;
    long nw = 0, nc = 0;
    for (std::size_t i = 0; i < vecs.size(); ++i)
        for (std::size_t j = i + 1; j < vecs.size(); ++j) {
            double cs = mmcar::cosine_similarity(*vecs[i].second, *vecs[j].second);
            if (vecs[i].first == vecs[j].first) {
                win += cs;
                ++nw;
            } else {
                cross += cs;
                ++nc;
            }
        }
    return {nw ? win / nw : 0.0, nc ? cross / nc : 0.0};
}

int cmd_synth(const CLI::App& app, Common& c, mmcar::SynthConfig& scfg) {
    c.override_from(app, "--d", "synth", "d", scfg.d);
    c.override_from(app, "--moods", "synth", "moods", scfg.moods);
    c.override_from(app, "--designs-per-mood", "synth", "designs_per_mood", scfg.designs_per_mood);
    c.override_from(app, "--audios-per-mood", "synth", "audios_per_mood", scfg.audios_per_mood);
    c.override_from(app, "--noise", "synth", "noise_std", scfg.noise_std);
    scfg.seed = mmcar::hash64(c.seed, "synth");
    fs::create_directories(c.out_dir);
    mmcar::SynthResult res = mmcar::generate_synthetic(scfg);
    mmcar::save_manifest(res.manifest, c.out_path("manifest.json"));
    mmcar::save_designs(res.designs, c.out_path("designs.jsonl"));
    mmcar::save_audio(res.audios, c.out_path("audio.jsonl"));
    std::cout << "wrote " << res.designs.size() << " designs, " << res.audios.size()
              << " audios (d=" << scfg.d << ", M=" << scfg.moods << ")\n";
    for (int m = 0; m < scfg.moods; ++m)
        std::cout << "  " << res.manifest.moods[m] << ": " << scfg.designs_per_mood << " designs, "
                  << scfg.audios_per_mood << " audios\n";
    LoadedData d{res.manifest, res.designs, res.audios};
    auto [win, cross] = cohesion_summary(d);
    std::cout << "mean cosine within-mood " << win << ", cross-mood " << cross << "\n";
    return 0;
}

int cmd_split(Common& c) {
    LoadedData d = load_data(c);
    mmcar::DatasetSplit split =
        mmcar::split_dataset(d.designs, d.audios, d.manifest, mmcar::hash64(c.seed, "split"));
    fs::create_directories(c.out_dir);
    mmcar::save_split(split, c.out_path("splits.json"));
    std::cout << "split: " << split.train.designs.size() << "/" << split.val.designs.size() << "/"
              << split.test.designs.size() << " designs, " << split.train.audios.size() << "/"
              << split.val.audios.size() << "/" << split.test.audios.size() << " audios\n";
    return 0;
}

int cmd_pair(const CLI::App& app, Common& c, mmcar::PairingConfig& pcfg) {
    c.override_from(app, "--lambda1", "pairing", "lambda1", pcfg.lambda1);
    c.override_from(app, "--lambda2", "pairing", "lambda2", pcfg.lambda2);
    c.override_from(app, "--top-n", "pairing", "top_n", pcfg.top_n);
    c.override_from(app, "--neg-moods", "pairing", "neg_moods", pcfg.neg_moods);
    c.override_from(app, "--neg-per-mood", "pairing", "neg_per_mood", pcfg.neg_per_mood);
    pcfg.seed = mmcar::hash64(c.seed, "pair");
    pcfg.validate();
    LoadedData d = load_data(c);
    mmcar::DatasetSplit split = mmcar::load_split(c.in_path("splits.json"));
    fs::create_directories(c.out_dir);
    std::vector<mmcar::Triplet> all;
    for (const char* name : {"train", "val", "test"}) {
        const auto& part = split_part(split, name);
        auto designs = filter_by_ids(d.designs, part.designs);
        auto audios = filter_by_ids(d.audios, part.audios);
        mmcar::TripletBuildResult res = mmcar::build_triplets(designs, audios, d.manifest, pcfg);
        for (const auto& w : res.warnings) std::cerr << "warning [" << name << "]: " << w << "\n";
        mmcar::save_triplets(res.triplets, c.out_path(std::string("triplets_") + name + ".jsonl"));
        std::cout << name << ": " << res.triplets.size() << " triplets\n";
        all.insert(all.end(), res.triplets.begin(), res.triplets.end());
    }
    mmcar::save_triplets(all, c.out_path("triplets.jsonl"));
    return 0;
}

int cmd_train(const CLI::App& app, Common& c, mmcar::TrainConfig& tcfg, std::string& sharing,
              std::string& optimizer) {
    c.override_from(app, "--batch-size", "train", "batch_size", tcfg.batch_size);
    c.override_from(app, "--lr", "train", "learning_rate", tcfg.learning_rate);
    c.override_from(app, "--epochs", "train", "max_epochs", tcfg.max_epochs);
    c.override_from(app, "--patience", "train", "patience", tcfg.patience);
    c.override_from(app, "--sharing", "train", "sharing_mode", sharing);
    c.override_from(app, "--optimizer", "train", "optimizer", optimizer);
    tcfg.seed = mmcar::hash64(c.seed, "train");
    tcfg.threads = c.threads;
    if (optimizer == "sgd")
        tcfg.optimizer = mmcar::Optimizer::Sgd;
    else if (optimizer == "adam")
        tcfg.optimizer = mmcar::Optimizer::Adam;
    else
        throw mmcar::DataError("unknown optimizer: " + optimizer);

    LoadedData d = load_data(c);
    auto train_trips = mmcar::load_triplets(c.in_path("triplets_train.jsonl"));
    auto val_trips = mmcar::load_triplets(c.in_path("triplets_val.jsonl"));
    auto train_rt = mmcar::resolve_triplets(train_trips, d.designs, d.audios);
    auto val_rt = mmcar::resolve_triplets(val_trips, d.designs, d.audios);
    mmcar::ModelParams init = mmcar::init_params(
        d.manifest.dimension, mmcar::sharing_mode_from_string(sharing), mmcar::hash64(c.seed, "init"));
    fs::create_directories(c.out_dir);
    mmcar::TrainResult res =
        mmcar::train(train_rt, val_rt, tcfg, init, [](const mmcar::TrainLog::Epoch& e) {
            std::cout << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss
                      << "\n";
        });
    mmcar::save_checkpoint(res.best, c.out_path("best.ckpt"));
    mmcar::save_checkpoint(res.last, c.out_path("last.ckpt"));
    mmcar::save_trainlog(res.log, c.out_path("trainlog.jsonl"));
    std::cout << "best epoch " << res.log.best_epoch << ", val loss "
              << res.log.epochs[res.log.best_epoch].val_loss << "\n";
    return 0;
}

int cmd_eval(Common& c, const std::string& split_name, const std::string& ckpt,
             const std::string& baseline, const std::vector<int>& ks,
             const std::string& export_unified) {
    LoadedData d = load_data(c);
    mmcar::DatasetSplit split = mmcar::load_split(c.in_path("splits.json"));
    const auto& part = split_part(split, split_name);
    auto designs = filter_by_ids(d.designs, part.designs);
    auto audios = filter_by_ids(d.audios, part.audios);
    std::sort(designs.begin(), designs.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    mmcar::MoodMeans means = mmcar::compute_mood_means(audios, d.manifest);
    fs::create_directories(c.out_dir);

    std::vector<mmcar::ScoreVector> svs(designs.size());
    std::string report_name;
    if (baseline == "cosine") {
        mmcar::PairingConfig pcfg;  // default equal weights
        mmcar::parallel_for(designs.size(), c.threads, [&](std::size_t i) {
            svs[i] = mmcar::baseline_cosine_scores(designs[i], means, pcfg, d.manifest);
        });
        report_name = "report_baseline.json";
    } else if (baseline.empty()) {
        mmcar::ModelParams params = mmcar::load_checkpoint(c.in_path(ckpt));
        if (params.d != d.manifest.dimension)
            throw mmcar::DataError("checkpoint dimension does not match manifest");
        mmcar::parallel_for(designs.size(), c.threads, [&](std::size_t i) {
            svs[i] = mmcar::score_moods(designs[i], means, params, d.manifest);
        });
        report_name = "report.json";
        if (!export_unified.empty()) {
            std::vector<mmcar::LabeledVec> rows(designs.size());
            mmcar::parallel_for(designs.size(), c.threads, [&](std::size_t i) {
                const auto& de = designs[i];
                int m = d.manifest.mood_index(de.mood);
                auto tr = mmcar::forward(de.image_vec, de.text_vec, means.means[m], params);
                rows[i] = {de.id, de.mood, tr.u_all};
            });
            mmcar::export_embeddings(rows, c.out_path(export_unified));
        }
    } else {
        throw mmcar::DataError("unknown baseline: " + baseline + " (expected \"cosine\")");
    }
    mmcar::EvalReport rep = mmcar::make_report(svs, d.manifest, ks);
    mmcar::save_report(rep, c.out_path(report_name));
    mmcar::save_confusion_tsv(rep, c.out_path(baseline == "cosine" ? "confusion_baseline.tsv"
                                                                   : "confusion.tsv"));
    std::cout << "split " << split_name << ": med_r " << rep.med_r << ", mean_rank "
              << rep.mean_rank;
    for (std::size_t i = 0; i < rep.ks.size(); ++i)
        std::cout << ", recall@" << rep.ks[i] << " " << rep.recall[i];
    std::cout << "\n";
    return 0;
}

int cmd_retrieve(Common& c, const std::string& design_id, const std::string& split_name,
                 const std::string& ckpt, int k) {
    LoadedData d = load_data(c);
    std::vector<mmcar::AudioRecord> candidates = d.audios;
    if (!split_name.empty()) {
        mmcar::DatasetSplit split = mmcar::load_split(c.in_path("splits.json"));
        candidates = filter_by_ids(d.audios, split_part(split, split_name).audios);
    }
    const mmcar::DesignRecord* design = nullptr;
    for (const auto& r : d.designs)
        if (r.id == design_id) design = &r;
    if (!design) throw mmcar::DataError("unknown design id: " + design_id);
    mmcar::ModelParams params = mmcar::load_checkpoint(c.in_path(ckpt));
    auto ranked = mmcar::retrieve_topk(*design, candidates, params, k, c.threads);
    json j;
    j["design_id"] = design_id;
    j["results"] = json::array();
    for (const auto& [id, score] : ranked) {
        j["results"].push_back({{"audio_id", id}, {"score", score}});
        std::cout << id << "\t" << score << "\n";
    }
    fs::create_directories(c.out_dir);
    std::ofstream out(c.out_path("retrieval.json"));
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(Common& c, int d, double h, double tol) {
    double worst = 0.0;
    json j;
    j["d"] = d;
    j["h"] = h;
    j["tol"] = tol;
    for (auto mode : {mmcar::SharingMode::PerPair, mmcar::SharingMode::FullyShared}) {
        mmcar::ModelParams params = mmcar::init_params(d, mode, mmcar::hash64(c.seed, "gradcheck"));
        mmcar::Rng rng(mmcar::hash64(c.seed, "gradcheck_sample"));
        mmcar::GradSample s;
        for (int k = 0; k < d; ++k) {
            s.i.push_back(rng.gaussian());
            s.t.push_back(rng.gaussian());
            s.a.push_back(rng.gaussian());
        }
        s.z = 1;
        mmcar::GradCheckReport rep = mmcar::grad_check(params, s, h, tol);
        j[mmcar::to_string(mode)] = {{"max_rel_error", rep.max_rel_error},
                                     {"worst_coord", rep.worst_coord},
                                     {"pass", rep.pass}};
        std::cout << mmcar::to_string(mode) << ": max relative error " << rep.max_rel_error
                  << " at " << rep.worst_coord << (rep.pass ? " (pass)" : " (FAIL)") << "\n";
        worst = std::max(worst, rep.max_rel_error);
    }
    fs::create_directories(c.out_dir);
    std::ofstream out(c.out_path("gradcheck.json"));
    out << j.dump(2) << "\n";
    return worst <= tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMCAR multimodal cross-attention audio retrieval pipeline"};
    app.require_subcommand(1);
    Common common;

    auto* synth = app.add_subcommand("synth", "generate a synthetic mood-clustered dataset");
    mmcar::SynthConfig scfg;
    common.add_to(synth);
    synth->add_option("--d", scfg.d, "embedding dimension");
    synth->add_option("--moods", scfg.moods, "number of mood categories");
    synth->add_option("--designs-per-mood", scfg.designs_per_mood, "designs per mood");
    synth->add_option("--audios-per-mood", scfg.audios_per_mood, "audios per mood");
    synth->add_option("--noise", scfg.noise_std, "cluster noise std");

    auto* split = app.add_subcommand("split", "60/20/20 per-mood dataset split");
    common.add_to(split);

    auto* pair = app.add_subcommand("pair", "build training triplets per split");
    mmcar::PairingConfig pcfg;
    common.add_to(pair);
    pair->add_option("--lambda1", pcfg.lambda1, "weight on image-audio similarity");
    pair->add_option("--lambda2", pcfg.lambda2, "weight on text-audio similarity");
    pair->add_option("--top-n", pcfg.top_n, "positive audios per design");
    pair->add_option("--neg-moods", pcfg.neg_moods, "wrong moods per design");
    pair->add_option("--neg-per-mood", pcfg.neg_per_mood, "audios per wrong mood");

    auto* train = app.add_subcommand("train", "train the cross-attention model");
    mmcar::TrainConfig tcfg;
    std::string sharing = "per-pair", optimizer = "adam";
    common.add_to(train);
    train->add_option("--batch-size", tcfg.batch_size, "mini-batch size");
    train->add_option("--lr", tcfg.learning_rate, "learning rate");
    train->add_option("--epochs", tcfg.max_epochs, "max epochs");
    train->add_option("--patience", tcfg.patience, "early-stop patience (epochs)");
    train->add_option("--sharing", sharing, "per-pair or fully-shared");
    train->add_option("--optimizer", optimizer, "sgd or adam");

    auto* eval = app.add_subcommand("eval", "rank-based retrieval evaluation");
    std::string eval_split = "test", ckpt = "best.ckpt", baseline, export_unified;
    std::vector<int> ks = {1, 5, 10, 15, 20};
    common.add_to(eval);
    eval->add_option("--split", eval_split, "train, val, or test");
    eval->add_option("--ckpt", ckpt, "checkpoint file (relative to --data)");
    eval->add_option("--baseline", baseline, "evaluate a baseline instead (cosine)");
    eval->add_option("--k", ks, "recall@k values");
    eval->add_option("--export-unified", export_unified, "write unified embeddings TSV to this file");

    auto* retrieve = app.add_subcommand("retrieve", "top-k audio retrieval for one design");
    std::string design_id, retr_split;
    int topk = 10;
    common.add_to(retrieve);
    retrieve->add_option("--design-id", design_id, "design to retrieve for")->required();
    retrieve->add_option("--split", retr_split, "restrict candidates to a split");
    retrieve->add_option("--ckpt", ckpt, "checkpoint file (relative to --data)");
    retrieve->add_option("--k", topk, "number of results");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    int gc_d = 4;
    double gc_h = 1e-5, gc_tol = 1e-4;
    common.add_to(gradcheck);
    gradcheck->add_option("--d", gc_d, "dimension (<= 16)");
    gradcheck->add_option("--step", gc_h, "finite-difference step");
    gradcheck->add_option("--tol", gc_tol, "max relative error allowed");

    try {
        app.parse(argc, argv);
        CLI::App* sub = app.get_subcommands().front();
        common.load_config(*sub);
        if (sub == synth) return cmd_synth(*sub, common, scfg);
        if (sub == split) return cmd_split(common);
        if (sub == pair) return cmd_pair(*sub, common, pcfg);
        if (sub == train) return cmd_train(*sub, common, tcfg, sharing, optimizer);
        if (sub == eval) return cmd_eval(common, eval_split, ckpt, baseline, ks, export_unified);
        if (sub == retrieve) return cmd_retrieve(common, design_id, retr_split, ckpt, topk);
        if (sub == gradcheck) return cmd_gradcheck(common, gc_d, gc_h, gc_tol);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const mmcar::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mmcar::InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
