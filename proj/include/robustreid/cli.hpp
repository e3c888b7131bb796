#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "robustreid/balancing.hpp"
#include "robustreid/checkpoint.hpp"
#include "robustreid/dataset.hpp"
#include "robustreid/errors.hpp"
#include "robustreid/eval.hpp"
#include "robustreid/io.hpp"
#include "robustreid/meta_trainer.hpp"
#include "robustreid/model.hpp"

namespace robustreid::cli {

namespace fs = std::filesystem;

inline uint64_t seed_fallback(uint64_t cli_seed, bool seed_given) {
    if (seed_given) return cli_seed;
    if (const char* env = std::getenv("ROBUST_REID_SEED")) return std::strtoull(env, nullptr, 10);
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

// Synthetic dataset document: shared appearance fields plus one section per
// split ("train", "query", "gallery"), each holding per_id / per_id_counts /
// profile.
inline SynthSpec split_spec(const nlohmann::json& doc, const std::string& split, uint64_t seed) {
    nlohmann::json merged = doc;
    merged.erase("train");
    merged.erase("query");
    merged.erase("gallery");
    if (doc.contains(split))
        for (const auto& [key, val] : doc.at(split).items()) merged[key] = val;
    merged["appearance_seed"] = seed;
    return synth_spec_from_json(merged);
}

inline void run_synth(const std::string& spec_path, const std::string& out_dir, uint64_t seed,
                      bool force) {
    nlohmann::json doc = nlohmann::json::parse(read_text_file(spec_path));
    fs::path out(out_dir);
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw IOFailure("output directory exists and is not empty (use --force): " + out_dir);
    fs::create_directories(out);

    nlohmann::json manifest = {{"seed", seed}, {"spec", doc}, {"splits", nlohmann::json::object()}};
    int split_tag = 0;
    for (const char* name : {"train", "query", "gallery"}) {
        ++split_tag;
        if (!doc.contains(name)) continue;
        SynthSpec spec = split_spec(doc, name, seed);
        Rng rng(splitmix64(seed) ^ splitmix64(0x5eed0 + split_tag));
        ReIDDataset ds = make_synthetic(spec, rng);
        ds.split = split_from_name(name);
        std::vector<std::string> files = save_dataset(ds, out_dir);
        uint64_t content = 0xcbf29ce484222325ULL;
        for (const std::string& f : files) {
            std::string bytes = read_text_file((out / name / f).string());
            content = fnv1a64(bytes.data(), bytes.size(), content);
        }
        char hash_hex[32];
        std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                      static_cast<unsigned long long>(content));
        manifest["splits"][name] = {{"files", files.size()},
                                    {"identities", ds.num_identities()},
                                    {"cameras", ds.num_cameras()},
                                    {"content_hash", hash_hex}};
    }
    write_text_file((out / "manifest.json").string(), manifest.dump(2) + "\n");
    nlohmann::json resolved = {{"command", "synth"}, {"seed", seed}, {"spec", doc}};
    write_text_file((out / "resolved_config.json").string(), resolved.dump(2) + "\n");
    std::cout << "synth: wrote " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

inline void run_ingest(const std::string& root, const std::string& out_dir) {
    fs::create_directories(out_dir);
    nlohmann::json report = {{"root", root}, {"splits", nlohmann::json::object()}};
    bool any = false;
    for (const char* name : {"train", "query", "gallery"}) {
        if (!fs::is_directory(fs::path(root) / name)) continue;
        ReIDDataset ds = load_dataset(root, split_from_name(name));
        any = true;
        IdentityStats st = identity_stats(ds);
        CsvWriter csv((fs::path(out_dir) / (std::string(name) + "_stats.csv")).string());
        csv.row({"identity", "count", "dominant_camera", "dominant_proportion"});
        for (const auto& [id, n] : st.per_id_count) {
            const auto& dom = st.dominant_camera.at(id);
            csv.row({std::to_string(id), std::to_string(n), std::to_string(dom.camera),
                     std::to_string(dom.proportion)});
        }
        report["splits"][name] = {{"samples", ds.samples.size()},
                                  {"identities", ds.num_identities()},
                                  {"cameras", ds.num_cameras()}};
        std::cout << "ingest: " << name << " " << ds.samples.size() << " samples, "
                  << ds.num_identities() << " identities, " << ds.num_cameras() << " cameras\n";
    }
    if (!any) throw EmptyDataset("no split directories under " + root);
    write_text_file((fs::path(out_dir) / "ingest_report.json").string(), report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// balance
// ---------------------------------------------------------------------------

inline void run_balance(const std::string& in_dir, const std::string& out_dir,
                        const BalanceConfig& cfg, uint64_t seed) {
    cfg.validate();
    ReIDDataset train = load_dataset(in_dir, Split::train);
    AugmentationGenerator gen(train);  // on-disk datasets: jitter-only generator
    Rng rng(splitmix64(seed) ^ 0xba1a);
    BalanceReport report;
    ReIDDataset balanced = balance(train, cfg, gen, rng, &report);

    fs::create_directories(out_dir);
    save_dataset(balanced, out_dir);
    for (const char* name : {"query", "gallery"}) {  // eval splits pass through
        fs::path src = fs::path(in_dir) / name;
        if (fs::is_directory(src))
            fs::copy(src, fs::path(out_dir) / name,
                     fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    }
    write_balance_csv(report, (fs::path(out_dir) / "balance_report.csv").string());
    nlohmann::json resolved = {{"command", "balance"},
                               {"in", in_dir},
                               {"delta1", report.delta1_used},
                               {"delta2", report.delta2_used},
                               {"seed", seed}};
    write_text_file((fs::path(out_dir) / "resolved_config.json").string(), resolved.dump(2) + "\n");
    std::cout << "balance: " << train.samples.size() << " -> " << balanced.samples.size()
              << " samples (delta1=" << report.delta1_used << ", delta2=" << report.delta2_used
              << ")\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainRunOptions {
    std::string config_path;
    std::string resume_checkpoint;  // empty: fresh run
    // command-line overrides; unset members keep the config file values
    std::optional<std::string> mode;
    std::optional<std::string> out_dir;
    std::optional<uint64_t> seed;
    std::optional<int> epochs;
    bool no_fnes = false, no_meta = false, no_advinv = false, no_balance = false;
};

struct TrainRunResult {
    TrainState state;
    std::string out_dir;
    std::string final_checkpoint;
};

inline TrainRunResult run_train(const TrainRunOptions& opt) {
    nlohmann::json doc = nlohmann::json::parse(read_text_file(opt.config_path));

    TrainConfig cfg = TrainConfig::from_json(doc);
    if (opt.mode) cfg.mode = *opt.mode;
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.epochs) cfg.epochs = *opt.epochs;
    cfg.no_fnes |= opt.no_fnes;
    cfg.no_meta |= opt.no_meta;
    cfg.no_advinv |= opt.no_advinv;
    cfg.no_balance |= opt.no_balance;
    cfg.validate();

    std::string out_dir = opt.out_dir ? *opt.out_dir : doc.value("out_dir", std::string("run"));
    fs::create_directories(fs::path(out_dir) / "checkpoints");

    // data: either an on-disk root or an inline synthetic block
    ReIDDataset train;
    AugmentationGenerator::CameraTransform cam_transform = nullptr;
    if (doc.contains("data") && doc["data"].contains("synth")) {
        SynthSpec spec = split_spec(doc["data"]["synth"], "train", cfg.seed);
        Rng rng(splitmix64(cfg.seed) ^ splitmix64(0x5eed0 + 1));
        train = make_synthetic(spec, rng);
        cam_transform = apply_camera_nuisance;  // synthetic cameras are reproducible
    } else if (doc.contains("data") && doc["data"].contains("root")) {
        train = load_dataset(doc["data"]["root"].get<std::string>(), Split::train);
    } else {
        throw InvalidSpec("train config needs data.root or data.synth");
    }

    bool balance_enabled = doc.value("balance", nlohmann::json::object()).value("enabled", true);
    BalanceConfig bal_cfg;
    if (doc.contains("balance")) {
        bal_cfg.delta1 = doc["balance"].value("delta1", 0);
        bal_cfg.delta2 = doc["balance"].value("delta2", 0.5);
    }
    if (balance_enabled && !cfg.no_balance) {
        AugmentationGenerator gen(train, cam_transform);
        Rng rng(splitmix64(cfg.seed) ^ 0xba1a);
        BalanceReport report;
        train = balance(train, bal_cfg, gen, rng, &report);
        write_balance_csv(report, (fs::path(out_dir) / "balance_report.csv").string());
    }

    ArchSpec arch;
    if (doc.contains("arch")) {
        nlohmann::json aj = doc["arch"];
        aj["num_classes"] = std::max(1, train.num_identities());
        aj["height"] = train.samples.front().image.height;
        aj["width"] = train.samples.front().image.width;
        arch = ArchSpec::from_json(aj);
    } else {
        arch.height = train.samples.front().image.height;
        arch.width = train.samples.front().image.width;
        arch.num_classes = train.num_identities();
    }

    nlohmann::json resolved = cfg.to_json();
    resolved["out_dir"] = out_dir;
    resolved["data"] = doc.value("data", nlohmann::json::object());
    resolved["balance"] = {{"enabled", balance_enabled && !cfg.no_balance},
                           {"delta1", bal_cfg.delta1},
                           {"delta2", bal_cfg.delta2}};
    resolved["arch"] = arch.to_json();
    if (!opt.resume_checkpoint.empty()) resolved["resumed_from"] = opt.resume_checkpoint;
    write_text_file((fs::path(out_dir) / "resolved_config.json").string(), resolved.dump(2) + "\n");

    CheckpointSink sink = [&](const TrainState& st, int epoch) {
        char name[64];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        save_checkpoint((fs::path(out_dir) / "checkpoints" / name).string(), st);
    };

    FitResult fitres;
    if (!opt.resume_checkpoint.empty()) {
        TrainState st = load_checkpoint(opt.resume_checkpoint);
        fitres = fit(train, cfg, sink, &st);
    } else {
        fitres = fit_with_arch(train, cfg, arch, sink);
    }

    CsvWriter log((fs::path(out_dir) / "training_log.csv").string());
    log.row({"epoch", "step", "cls", "tri", "enc_adv", "disc", "total"});
    for (const auto& row : fitres.log)
        log.row({std::to_string(row.epoch), std::to_string(row.step), std::to_string(row.report.cls),
                 std::to_string(row.report.tri), std::to_string(row.report.enc_adv),
                 std::to_string(row.report.disc), std::to_string(row.report.total)});

    std::string final_path = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
    save_checkpoint(final_path, fitres.state);
    std::cout << "train: mode=" << cfg.mode << " epochs=" << fitres.state.epoch << " -> "
              << final_path << "\n";
    return {std::move(fitres.state), out_dir, final_path};
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRunOptions {
    std::string checkpoint;
    std::string query_dir;    // dataset roots holding query/ and gallery/
    std::string gallery_dir;
    std::string out_dir = "eval";
    std::string attack = "none";  // none | fna | sma | mifgsm
    std::string eps = "8/255";
    int steps = 16;
    bool no_random_init = false;
    std::string source_checkpoint;  // transfer attacks
    uint64_t seed = 0;
    bool dump_features = false;
};

inline EvalReport run_eval(const EvalRunOptions& opt) {
    TrainState state = load_checkpoint(opt.checkpoint);
    ReIDDataset query = load_dataset(opt.query_dir, Split::query);
    ReIDDataset gallery = load_dataset(opt.gallery_dir, Split::gallery);

    fs::create_directories(opt.out_dir);
    EvalReport report;
    if (opt.attack == "none") {
        FeatureBatch qf = extract_features(state.bundle, query.samples);
        FeatureBatch gf = extract_features(state.bundle, gallery.samples);
        report = compute_map_cmc(qf, gf);
        if (opt.dump_features) {
            write_features_csv(qf, (fs::path(opt.out_dir) / "features_query.csv").string());
            write_features_csv(gf, (fs::path(opt.out_dir) / "features_gallery.csv").string());
        }
    } else {
        AttackSpec spec;
        spec.kind = attack_from_name(opt.attack);
        spec.epsilon = parse_fraction(opt.eps);
        spec.steps = opt.steps;
        spec.random_init = !opt.no_random_init;
        spec.validate();
        Rng rng(splitmix64(opt.seed) ^ 0xe7a1);
        if (!opt.source_checkpoint.empty()) {
            TrainState source = load_checkpoint(opt.source_checkpoint);
            report = transfer_eval(source.bundle, state.bundle, query.samples, gallery.samples,
                                   spec, rng);
        } else {
            report = robust_eval(state.bundle, query.samples, gallery.samples, spec, rng);
        }
    }

    write_text_file((fs::path(opt.out_dir) / "eval_report.json").string(),
                    report.to_json().dump(2) + "\n");
    write_per_id_csv(report, (fs::path(opt.out_dir) / "per_id_ap.csv").string());
    nlohmann::json resolved = {{"command", "eval"},       {"checkpoint", opt.checkpoint},
                               {"query", opt.query_dir},  {"gallery", opt.gallery_dir},
                               {"attack", opt.attack},    {"eps", opt.eps},
                               {"steps", opt.steps},      {"seed", opt.seed},
                               {"source", opt.source_checkpoint}};
    write_text_file((fs::path(opt.out_dir) / "resolved_config.json").string(),
                    resolved.dump(2) + "\n");
    std::cout << "mAP/Rank-1: " << report.summary_line() << "\n";
    return report;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

inline nlohmann::json run_report(const std::vector<std::string>& run_dirs,
                                 const std::string& out_path) {
    if (run_dirs.empty()) throw MissingReport("report: no run directories given");
    struct Row {
        std::string dir;
        double map = 0.0, rank1 = 0.0;
        std::string attack = "none";
    };
    std::vector<Row> rows;
    for (const std::string& dir : run_dirs) {
        fs::path file = fs::path(dir) / "eval_report.json";
        if (!fs::exists(file)) throw MissingReport("missing eval_report.json in " + dir);
        nlohmann::json j = nlohmann::json::parse(read_text_file(file.string()));
        Row r;
        r.dir = dir;
        r.map = j.value("map", 0.0);
        if (j.contains("cmc") && !j["cmc"].empty()) r.rank1 = j["cmc"][0].get<double>();
        if (j.contains("attack") && !j["attack"].is_null())
            r.attack = j["attack"].value("kind", "none");
        rows.push_back(r);
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.map > b.map; });

    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"run", r.dir}, {"map", r.map}, {"rank1", r.rank1}, {"attack", r.attack}});
    if (!out_path.empty()) {
        write_text_file(out_path, out.dump(2) + "\n");
        std::string csv_path = out_path;
        auto dot = csv_path.rfind('.');
        csv_path = (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".csv";
        CsvWriter csv(csv_path);
        csv.row({"run", "map", "rank1", "attack"});
        for (const auto& r : rows)
            csv.row({r.dir, std::to_string(r.map), std::to_string(r.rank1), r.attack});
    }
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f/%.2f", 100.0 * r.map, 100.0 * r.rank1);
        std::cout << buf << "  " << r.attack << "  " << r.dir << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// dispatcher
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"robust_reid: debiased dual-invariant defense for person re-identification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset on disk");
    std::string synth_spec, synth_out;
    uint64_t seed = 0;
    bool seed_given = false, force = false;
    synth->add_option("--spec", synth_spec, "synthetic spec JSON")->required();
    synth->add_option("--out", synth_out, "output dataset root")->required();
    synth->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    synth->add_flag("--force", force, "overwrite a non-empty output directory");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a dataset directory and emit stats");
    std::string ingest_root, ingest_out = "ingest";
    ingest->add_option("--root", ingest_root, "dataset root with split subdirectories")->required();
    ingest->add_option("--out", ingest_out, "report output directory");

    // balance
    auto* bal = app.add_subcommand("balance", "apply inter-ID and intra-ID data balancing");
    std::string bal_in, bal_out;
    BalanceConfig bal_cfg;
    bal->add_option("--in", bal_in, "input dataset root")->required();
    bal->add_option("--out", bal_out, "output dataset root")->required();
    bal->add_option("--delta1", bal_cfg.delta1, "count threshold (0 = rounded mean)");
    bal->add_option("--delta2", bal_cfg.delta2, "dominant-camera proportion threshold");
    bal->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });

    // train
    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    TrainRunOptions topt;
    std::string t_mode, t_out, t_resume;
    uint64_t t_seed = 0;
    int t_epochs = -1;
    train->add_option("--config", topt.config_path, "training config JSON")->required();
    train->add_option("--mode", t_mode, "override mode: full | vanilla | metric-at");
    train->add_option("--out", t_out, "override output directory");
    train->add_option("--seed", t_seed)->each([&](const std::string&) { seed_given = true; });
    train->add_option("--epochs", t_epochs, "override epoch count");
    train->add_option("--resume", t_resume, "resume from a checkpoint");
    train->add_flag("--no-fnes", topt.no_fnes, "disable FNES");
    train->add_flag("--no-meta", topt.no_meta, "disable self-meta learning");
    train->add_flag("--no-advinv", topt.no_advinv, "disable adversarial-invariant learning");
    train->add_flag("--no-balance", topt.no_balance, "disable data balancing");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (clean or under attack)");
    EvalRunOptions eopt;
    ev->add_option("--checkpoint", eopt.checkpoint)->required();
    ev->add_option("--query", eopt.query_dir, "root holding query/")->required();
    ev->add_option("--gallery", eopt.gallery_dir, "root holding gallery/")->required();
    ev->add_option("--out", eopt.out_dir, "report output directory");
    ev->add_option("--attack", eopt.attack, "none | fna | sma | mifgsm");
    ev->add_option("--eps", eopt.eps, "budget, fraction form accepted (8/255)");
    ev->add_option("--steps", eopt.steps, "attack iterations");
    ev->add_flag("--no-random-init", eopt.no_random_init);
    ev->add_option("--source-checkpoint", eopt.source_checkpoint, "transfer-attack source model");
    ev->add_option("--seed", seed)->each([&](const std::string&) { seed_given = true; });
    ev->add_flag("--dump-features", eopt.dump_features, "export feature matrices as CSV");

    // report
    auto* rep = app.add_subcommand("report", "consolidate eval reports across run dirs");
    std::vector<std::string> rep_dirs;
    std::string rep_out = "report.json";
    rep->add_option("dirs", rep_dirs, "run directories")->required();
    rep->add_option("--out", rep_out, "consolidated report path (.json; .csv written beside)");

    std::vector<const char*> argv;
    std::string prog = "robust_reid";
    argv.push_back(prog.c_str());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            run_synth(synth_spec, synth_out, seed_fallback(seed, seed_given), force);
        } else if (ingest->parsed()) {
            run_ingest(ingest_root, ingest_out);
        } else if (bal->parsed()) {
            run_balance(bal_in, bal_out, bal_cfg, seed_fallback(seed, seed_given));
        } else if (train->parsed()) {
            if (!t_mode.empty()) topt.mode = t_mode;
            if (!t_out.empty()) topt.out_dir = t_out;
            if (seed_given) topt.seed = t_seed;
            if (t_epochs >= 0) topt.epochs = t_epochs;
            topt.resume_checkpoint = t_resume;
            run_train(topt);
        } else if (ev->parsed()) {
            eopt.seed = seed_fallback(seed, seed_given);
            run_eval(eopt);
        } else if (rep->parsed()) {
            run_report(rep_dirs, rep_out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace robustreid::cli
