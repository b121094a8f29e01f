// quietroom: command-line driver for synthetic scenarios, training,
// evaluation, privacy sweeps, cross-validation and sealed storage.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "quietroom/binio.hpp"
#include "quietroom/config.hpp"
#include "quietroom/crossval.hpp"
#include "quietroom/dataset.hpp"
#include "quietroom/error.hpp"
#include "quietroom/eval.hpp"
#include "quietroom/hash.hpp"
#include "quietroom/store.hpp"
#include "quietroom/synth.hpp"
#include "quietroom/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace quietroom;

namespace {

constexpr const char* kManifestName = "run.json";

struct Args {
    std::string command;
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    int workers = 1;
    std::optional<std::uint64_t> dp_test_seed;

    std::string scenario;
    std::string checkpoint;
    std::string key;
    std::string input;
    std::string manifest;
    std::optional<int> scheme;
    std::optional<std::string> encoder;
    std::optional<double> epsilon;
    std::optional<double> clip;
    std::optional<int> bits;
    bool quiet = false;
};

struct Run {
    config::KeyValues kv;
    Args args;
    json inputs = json::object();
    json extra = json::object();
};

void log(const Run& run, const std::string& msg) {
    if (!run.args.quiet) std::cerr << msg << '\n';
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::vector<int> folds_from(const config::KeyValues& kv, const std::string& key) {
    std::vector<int> out;
    for (double v : kv.get_doubles(key)) {
        if (v != static_cast<int>(v) || v < 0) throw ConfigError("config: " + key + " must list fold indices");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

// SHA-256 of a file, or of the sorted (relative path, file hash) list of a
// directory. The run manifest of a directory is not part of its identity.
std::string hash_path(const std::string& path) {
    if (fs::is_regular_file(path)) return sha256_file(path);
    if (!fs::is_directory(path)) throw DataError("no such file or directory: " + path);
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file()) {
            auto rel = fs::relative(e.path(), path).generic_string();
            if (rel != kManifestName) files.push_back(std::move(rel));
        }
    std::sort(files.begin(), files.end());
    Sha256 h;
    for (const auto& f : files) {
        h.update(f);
        h.update(std::string_view("\0", 1));
        h.update(sha256_file((fs::path(path) / f).string()));
        h.update(std::string_view("\n", 1));
    }
    return h.hex();
}

void record_input(Run& run, const std::string& name, const std::string& path) {
    run.inputs[name] = {{"path", path}, {"sha256", hash_path(path)}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!(out << text)) throw DataError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json args_json(const Args& a) {
    json j = json::object();
    if (!a.scenario.empty()) j["scenario"] = a.scenario;
    if (!a.checkpoint.empty()) j["checkpoint"] = a.checkpoint;
    if (!a.key.empty()) j["key"] = a.key;
    if (!a.input.empty()) j["input"] = a.input;
    if (a.bits) j["bits"] = *a.bits;
    j["workers"] = a.workers;
    if (a.dp_test_seed) j["dp_test_seed"] = *a.dp_test_seed;
    return j;
}

void write_manifest(const Run& run) {
    json outputs = json::object();
    for (const auto& e : fs::recursive_directory_iterator(run.args.out))
        if (e.is_regular_file()) {
            const auto rel = fs::relative(e.path(), run.args.out).generic_string();
            if (rel != kManifestName) outputs[rel] = sha256_file(e.path().string());
        }
    const json m{{"tool", "quietroom"},
                 {"command", run.args.command},
                 {"seed", run.kv.get_int("seed")},
                 {"config", run.kv.to_json()},
                 {"args", args_json(run.args)},
                 {"inputs", run.inputs},
                 {"outputs", outputs},
                 {"details", run.extra}};
    write_json(fs::path(run.args.out) / kManifestName, m);
}

// Corpus directories (saved front-end output) are used as is; scenario
// directories are processed.
data::Corpus corpus_for(const Run& run, const data::PipelineConfig& pc) {
    if (fs::exists(fs::path(run.args.scenario) / "corpus.json")) {
        auto corpus = data::load_corpus(run.args.scenario);
        if (data::to_json(corpus.config) != data::to_json(pc)) {
            // Fold count is a split choice, not a front-end one.
            auto a = data::to_json(corpus.config), b = data::to_json(pc);
            a.erase("folds");
            b.erase("folds");
            if (a != b) throw ConfigError(run.args.scenario + ": stored corpus was built with a different front-end config");
            corpus.config.folds = pc.folds;
        }
        return corpus;
    }
    log(run, "processing " + run.args.scenario);
    return data::process_scenario_dir(run.args.scenario, pc, run.args.workers);
}

privacy::NoiseSource noise_source(const Run& run) {
    return run.args.dp_test_seed ? privacy::NoiseSource::seeded(*run.args.dp_test_seed) : privacy::NoiseSource::system();
}

void require(const std::string& value, const std::string& flag, const std::string& command) {
    if (value.empty()) throw ConfigError(command + ": " + flag + " is required");
}

void cmd_synth(Run& run) {
    const auto sc = config::scenario_config(run.kv);
    log(run, "generating " + std::to_string(sc.duration_s) + " s scenario");
    const auto scenario = synth::make_scenario(sc);
    synth::write_scenario(run.args.out, scenario);
    run.extra["events"] = scenario.events.size();
}

void cmd_train(Run& run) {
    require(run.args.scenario, "--scenario", "train");
    record_input(run, "scenario", run.args.scenario);
    const auto pc = config::pipeline_config(run.kv);
    auto mc = config::model_config(run.kv);
    auto tc = config::train_config(run.kv);
    const auto dp = config::dp_params(run.kv);
    if (dp) mc.clip_bound = dp->clip_bound;

    const auto corpus = corpus_for(run, pc);
    const auto dataset = data::Dataset::build(corpus);
    std::vector<const TrainWindow*> windows;
    for (auto i : dataset.indices_in_folds(folds_from(run.kv, "train.train_folds"))) windows.push_back(&dataset.fetch(i));
    if (!run.args.quiet)
        tc.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << fmt("%.5f", loss) << '\n'; };
    auto result = train(mc, windows, tc);

    json meta{{"pipeline", data::to_json(pc)},
              {"train_folds", folds_from(run.kv, "train.train_folds")},
              {"loss_history", result.loss_history},
              {"dataset_sha256", dataset.content_hash()}};
    if (dp) meta["dp"] = {{"clip_bound", dp->clip_bound}, {"epsilon", dp->epsilon}};
    result.model.save((fs::path(run.args.out) / "model.qrparams").string(), meta);

    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_history.size(); ++e) csv += std::to_string(e + 1) + "," + fmt("%.17g", result.loss_history[e]) + "\n";
    write_text(fs::path(run.args.out) / "loss.csv", csv);
    run.extra["train_windows"] = windows.size();
    run.extra["final_loss"] = result.loss_history.empty() ? json(nullptr) : json(result.loss_history.back());
}

void cmd_eval(Run& run) {
    require(run.args.scenario, "--scenario", "eval");
    require(run.args.checkpoint, "--checkpoint", "eval");
    record_input(run, "scenario", run.args.scenario);
    record_input(run, "checkpoint", run.args.checkpoint);
    json meta;
    const auto model = Regressor::load(run.args.checkpoint, &meta);
    auto pc = data::pipeline_config_from_json(meta.at("pipeline"));
    pc.folds = static_cast<int>(run.kv.get_int("pipeline.folds"));
    const auto corpus = corpus_for(run, pc);
    const auto dataset = data::Dataset::build(corpus);

    const auto train_folds = folds_from(run.kv, "train.train_folds");
    const auto test_folds = folds_from(run.kv, "train.test_folds");
    std::vector<const TrainWindow*> test_set;
    for (auto i : dataset.indices_in_folds(test_folds)) test_set.push_back(&dataset.fetch(i));
    if (test_set.empty()) throw DataError("eval: test folds contain no windows");

    std::optional<privacy::PrivacyParams> dp = config::dp_params(run.kv);
    if (!dp && meta.contains("dp")) dp = privacy::PrivacyParams{meta["dp"].at("clip_bound"), meta["dp"].at("epsilon")};
    auto source = noise_source(run);
    privacy::PrivacyLedger ledger;
    std::optional<DpContext> ctx;
    if (dp) ctx = DpContext{*dp, &source, &ledger};

    const auto series = predict_aligned(model, test_set, ctx ? &*ctx : nullptr);
    const auto metrics = eval::compute_metrics(series.pred, series.truth);
    std::vector<double> train_truth;
    for (auto i : dataset.indices_in_folds(train_folds)) {
        const auto& t = dataset.fetch(i).target;
        train_truth.insert(train_truth.end(), t.data(), t.data() + t.size());
    }
    const auto baseline = eval::baseline_mean(train_truth, series.truth);

    const auto modality = pc.scheme == 1 ? "Non-speech audio" : "Masked audio + speech prob.";
    const std::string name = pc.encoder == embed::EncoderKind::Trainable ? "CNN + Transformer" : "Frozen + Transformer";
    std::vector<eval::TableRow> rows{{name, modality, metrics}, {"Mean baseline", "-", baseline}};

    json aggregated = json::array();
    for (double w : run.kv.get_doubles("eval.windows")) {
        const auto win = static_cast<std::int64_t>(w);
        if (win < 1) throw ConfigError("eval.windows must be positive");
        const auto begin = series.seconds.front() - series.seconds.front() % win;
        const auto agg = eval::aggregate_aligned(series, win, begin, dataset.duration_s());
        if (agg.size() == 0) continue;
        const auto m = eval::compute_metrics(agg.pred, agg.truth);
        aggregated.push_back({{"window_s", win}, {"metrics", eval::to_json(m)}});
        rows.push_back({name + " @" + std::to_string(win) + "s", modality, m});
    }

    const auto seconds_in_test = static_cast<std::size_t>(std::count_if(
        corpus.truth.begin(), corpus.truth.end(), [&, s = std::int64_t{0}](double) mutable {
            const int f = data::fold_of(s++, corpus.duration_s, pc.folds);
            return std::find(test_folds.begin(), test_folds.end(), f) != test_folds.end();
        }));
    json report{{"model", eval::to_json(metrics)},
                {"baseline", eval::to_json(baseline)},
                {"aggregated", aggregated},
                {"test_seconds", seconds_in_test},
                {"predicted_seconds", series.size()},
                {"excluded_seconds", seconds_in_test - series.size()}};
    if (dp) report["privacy"] = {{"clip_bound", dp->clip_bound}, {"ledger", ledger.to_json()}, {"seeded", source.is_seeded()}};
    write_json(fs::path(run.args.out) / "metrics.json", report);
    write_text(fs::path(run.args.out) / "metrics.txt", eval::format_table(rows));
    eval::write_plot_csv((fs::path(run.args.out) / "plot.csv").string(), series);
    if (!run.args.quiet) std::cout << eval::format_table(rows);
}

void cmd_dp_sweep(Run& run) {
    require(run.args.scenario, "--scenario", "dp-sweep");
    record_input(run, "scenario", run.args.scenario);
    const auto pc = config::pipeline_config(run.kv);
    const auto mc = config::model_config(run.kv);
    auto tc = config::train_config(run.kv);
    tc.dp.reset();
    SweepOptions opt;
    opt.epsilons = run.kv.get_doubles("dp.sweep");
    opt.clip_bound = run.kv.get_double("dp.clip_bound");
    opt.noise_aware = run.kv.get_bool("dp.noise_aware");
    opt.eval_noise_seed = run.args.dp_test_seed;

    const auto corpus = corpus_for(run, pc);
    const auto dataset = data::Dataset::build(corpus);
    const auto rows = dp_sweep(dataset, folds_from(run.kv, "train.train_folds"), folds_from(run.kv, "train.test_folds"), mc,
                               tc, opt, [&](const SweepRow& r) {
                                   log(run, "epsilon " + fmt("%g", r.epsilon) + " MAE " + fmt("%.3f", r.metrics.mae));
                               });
    json j = json::array();
    for (const auto& r : rows) j.push_back(to_json(r));
    write_json(fs::path(run.args.out) / "sweep.json", {{"noise_aware", opt.noise_aware}, {"clip_bound", opt.clip_bound}, {"rows", j}});
    const auto table = format_sweep_table(rows);
    write_text(fs::path(run.args.out) / "sweep.txt", table);
    if (!run.args.quiet) std::cout << table;
}

void cmd_crossval(Run& run) {
    require(run.args.scenario, "--scenario", "crossval");
    record_input(run, "scenario", run.args.scenario);
    const auto pc = config::pipeline_config(run.kv);
    const auto mc = config::model_config(run.kv);
    const auto tc = config::train_config(run.kv);
    const auto corpus = corpus_for(run, pc);
    const auto dataset = data::Dataset::build(corpus);
    const auto result = cross_validate(dataset, mc, tc, run.args.workers, [&](const FoldReport& f) {
        log(run, "fold " + std::to_string(f.fold) + " MAE " + fmt("%.3f", f.model.mae) + " rho " + fmt("%.3f", f.model.rho));
    });
    std::vector<eval::TableRow> rows;
    for (const auto& f : result.folds) rows.push_back({"fold " + std::to_string(f.fold), "held out", f.model});
    rows.push_back({"mean", "model", result.mean_model});
    rows.push_back({"mean", "baseline", result.mean_baseline});
    write_json(fs::path(run.args.out) / "crossval.json", to_json(result));
    write_text(fs::path(run.args.out) / "crossval.txt", eval::format_table(rows));
    if (!run.args.quiet) std::cout << eval::format_table(rows);
}

void cmd_keygen(Run& run) {
    const auto pair = store::generate_keypair(run.args.bits.value_or(3072));
    write_text(fs::path(run.args.out) / "public.pem", pair.public_pem);
    const auto priv = fs::path(run.args.out) / "private.pem";
    write_text(priv, pair.private_pem);
    fs::permissions(priv, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
}

void cmd_seal(Run& run, bool sealing) {
    const std::string name = sealing ? "seal" : "unseal";
    require(run.args.input, "--in", name);
    require(run.args.key, "--key", name);
    record_input(run, "input", run.args.input);
    std::vector<std::string> files;
    if (sealing) {
        const auto key = store::PublicKey::load(run.args.key);
        if (fs::is_directory(run.args.input)) {
            files = store::seal_directory(run.args.input, run.args.out, key);
        } else {
            const auto dst = fs::path(run.args.out) / (fs::path(run.args.input).filename().string() + std::string(store::kExtension));
            store::seal_file(run.args.input, dst.string(), key, "blob");
            files.push_back(dst.string());
        }
    } else {
        const auto key = store::PrivateKey::load(run.args.key);
        if (fs::is_directory(run.args.input)) {
            files = store::unseal_directory(run.args.input, run.args.out, key);
        } else {
            auto stem = fs::path(run.args.input).filename().string();
            if (stem.ends_with(store::kExtension)) stem.resize(stem.size() - store::kExtension.size());
            const auto dst = fs::path(run.args.out) / stem;
            store::unseal_file(run.args.input, dst.string(), key);
            files.push_back(dst.string());
        }
    }
    run.extra["files"] = files.size();
    log(run, name + "ed " + std::to_string(files.size()) + " file(s)");
}

void dispatch(Run& run) {
    fs::create_directories(run.args.out);
    const auto& c = run.args.command;
    if (c == "synth") cmd_synth(run);
    else if (c == "train") cmd_train(run);
    else if (c == "eval") cmd_eval(run);
    else if (c == "dp-sweep") cmd_dp_sweep(run);
    else if (c == "crossval") cmd_crossval(run);
    else if (c == "keygen") cmd_keygen(run);
    else if (c == "seal") cmd_seal(run, true);
    else if (c == "unseal") cmd_seal(run, false);
    else throw ConfigError("unknown command " + c);
    // Key material and decrypted payloads are not described by a manifest.
    if (c != "keygen" && c != "unseal") write_manifest(run);
}

// Config file, then --set entries, then dedicated flags, then --seed.
config::KeyValues resolve_config(const Args& a) {
    config::KeyValues user;
    if (!a.config_path.empty()) user = config::KeyValues::load(a.config_path);
    for (const auto& o : a.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
        auto k = o.substr(0, eq), v = o.substr(eq + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
        };
        trim(k);
        trim(v);
        user.set(k, v);
    }
    if (a.scheme) user.set("pipeline.scheme", std::to_string(*a.scheme));
    if (a.encoder) user.set("pipeline.encoder", *a.encoder);
    if (a.epsilon) user.set("dp.epsilon", fmt("%.17g", *a.epsilon));
    if (a.clip) user.set("dp.clip_bound", fmt("%.17g", *a.clip));
    if (a.seed) user.set("seed", std::to_string(*a.seed));
    return config::resolve(user);
}

void rerun(const Args& outer) {
    require(outer.manifest, "--manifest", "rerun");
    require(outer.out, "--out", "rerun");
    std::ifstream in(outer.manifest);
    if (!in) throw DataError("cannot read manifest " + outer.manifest);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(outer.manifest + ": " + e.what());
    }
    Run run;
    run.args.command = m.at("command").get<std::string>();
    run.args.out = outer.out;
    run.args.quiet = outer.quiet;
    const auto& a = m.at("args");
    run.args.scenario = a.value("scenario", "");
    run.args.checkpoint = a.value("checkpoint", "");
    run.args.key = a.value("key", "");
    run.args.input = a.value("input", "");
    run.args.workers = outer.workers > 1 ? outer.workers : a.value("workers", 1);
    if (a.contains("bits")) run.args.bits = a["bits"].get<int>();
    if (a.contains("dp_test_seed")) run.args.dp_test_seed = a["dp_test_seed"].get<std::uint64_t>();
    run.kv = config::resolve(config::KeyValues::from_json(m.at("config")));
    for (const auto& [name, entry] : m.at("inputs").items()) {
        const auto path = entry.at("path").get<std::string>();
        if (hash_path(path) != entry.at("sha256").get<std::string>())
            throw DataError("rerun: input " + name + " (" + path + ") differs from the recorded run");
    }
    dispatch(run);
}

int run_main(int argc, char** argv) {
    CLI::App app{"quietroom: privacy-preserving occupancy estimation from audio"};
    app.require_subcommand(1);
    Args a;
    app.add_option("--config", a.config_path, "Key-value config file")->check(CLI::ExistingFile);
    app.add_option("--set", a.overrides, "Override a config key (key=value); repeatable");
    app.add_option("--seed", a.seed, "Run seed");
    app.add_option("--out", a.out, "Output directory");
    app.add_option("--workers", a.workers, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--dp-test-seed", a.dp_test_seed,
                   "TESTING ONLY: seed the privacy noise. Seeded noise is reproducible and gives no privacy.");
    app.add_flag("-q,--quiet", a.quiet, "Suppress progress output");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario directory");
    auto* train = app.add_subcommand("train", "Train a model on a scenario");
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on held-out folds");
    auto* sweep = app.add_subcommand("dp-sweep", "Utility across privacy levels");
    auto* cv = app.add_subcommand("crossval", "Leave-one-fold-out cross-validation");
    auto* keygen = app.add_subcommand("keygen", "Generate an RSA key pair for sealing");
    auto* seal = app.add_subcommand("seal", "Encrypt a file or directory");
    auto* unseal = app.add_subcommand("unseal", "Decrypt a sealed file or directory");
    auto* re = app.add_subcommand("rerun", "Repeat a run from its manifest");
    (void)synth;

    for (auto* sc : {train, evalc, sweep, cv}) sc->add_option("--scenario", a.scenario, "Scenario or corpus directory")->required();
    for (auto* sc : {train, sweep, cv}) {
        sc->add_option("--scheme", a.scheme, "Speech handling: 1 drop, 2 mask")->check(CLI::IsMember({1, 2}));
        sc->add_option("--encoder", a.encoder, "frozen or trainable")->check(CLI::IsMember({"frozen", "trainable"}));
    }
    for (auto* sc : {train, evalc}) sc->add_option("--epsilon", a.epsilon, "Privacy level per released second");
    for (auto* sc : {train, evalc, sweep}) sc->add_option("--clip", a.clip, "L1 clip bound");
    evalc->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    keygen->add_option("--bits", a.bits, "RSA modulus size");
    for (auto* sc : {seal, unseal}) {
        sc->add_option("--in", a.input, "File or directory")->required()->check(CLI::ExistingPath);
        sc->add_option("--key", a.key, "PEM key file")->required()->check(CLI::ExistingFile);
    }
    re->add_option("--manifest", a.manifest, "run.json of an earlier run")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    a.command = app.get_subcommands().front()->get_name();
    if (a.command == "rerun") {
        rerun(a);
        return 0;
    }
    require(a.out, "--out", a.command);
    for (auto* p : {&a.scenario, &a.checkpoint, &a.key, &a.input})
        if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
    Run run;
    run.args = a;
    run.kv = resolve_config(a);
    dispatch(run);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_main(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
