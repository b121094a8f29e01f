#include "quietroom/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "quietroom/error.hpp"
#include "quietroom/hash.hpp"
#include "quietroom/wav.hpp"

namespace quietroom::data {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    spectrogram.validate();
    if (max_lag < 0) throw ConfigError("pipeline: max_lag must be >= 0");
    if (scheme != 1 && scheme != 2) throw ConfigError("pipeline: scheme must be 1 or 2");
    if (window < 1) throw ConfigError("pipeline: window must be >= 1");
    if (folds < 1) throw ConfigError("pipeline: folds must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("pipeline: gate threshold must lie in [0, 1]");
    if (encoder == embed::EncoderKind::Trainable) cnn_spec().validate();
}

int PipelineConfig::feature_dim() const {
    if (encoder == embed::EncoderKind::Frozen) return 4 * spectrogram.n_mels;
    return embed::pooled_height(spectrogram, pool) * embed::pooled_width(spectrogram, pool);
}

CnnSpec PipelineConfig::cnn_spec() const {
    CnnSpec s;
    s.height = embed::pooled_height(spectrogram, pool);
    s.width = embed::pooled_width(spectrogram, pool);
    return s;
}

nlohmann::json to_json(const PipelineConfig& c) {
    const auto& s = c.spectrogram;
    return {{"spectrogram",
             {{"sample_rate", s.sample_rate},
              {"window_len", s.window_len},
              {"hop_len", s.hop_len},
              {"n_mels", s.n_mels},
              {"fmin", s.fmin},
              {"fmax", s.fmax},
              {"log_floor", s.log_floor}}},
            {"beamform", c.beamform},
            {"max_lag", c.max_lag},
            {"encoder", embed::to_string(c.encoder)},
            {"pool", {{"frame_pool", c.pool.frame_pool}, {"mel_pool", c.pool.mel_pool}}},
            {"scheme", c.scheme},
            {"window", c.window},
            {"threshold", c.threshold},
            {"folds", c.folds}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        const auto& s = j.at("spectrogram");
        c.spectrogram.sample_rate = s.at("sample_rate");
        c.spectrogram.window_len = s.at("window_len");
        c.spectrogram.hop_len = s.at("hop_len");
        c.spectrogram.n_mels = s.at("n_mels");
        c.spectrogram.fmin = s.at("fmin");
        c.spectrogram.fmax = s.at("fmax");
        c.spectrogram.log_floor = s.at("log_floor");
        c.beamform = j.at("beamform");
        c.max_lag = j.at("max_lag");
        c.encoder = embed::encoder_from_string(j.at("encoder").get<std::string>());
        c.pool.frame_pool = j.at("pool").at("frame_pool");
        c.pool.mel_pool = j.at("pool").at("mel_pool");
        c.scheme = j.at("scheme");
        c.window = j.at("window");
        c.threshold = j.at("threshold");
        c.folds = j.at("folds");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

ChunkProcessor::ChunkProcessor(const PipelineConfig& config)
    : config_((config.validate(), config)), engine_(config.spectrogram), frozen_(config.spectrogram.n_mels) {}

dsp::Spectrogram ChunkProcessor::spectrogram(const dsp::MultichannelClip& second) {
    if (second.length() != static_cast<std::size_t>(config_.spectrogram.sample_rate))
        throw DataError("chunk processor: expected exactly one second of audio");
    if (second.sample_rate != config_.spectrogram.sample_rate)
        throw DataError("chunk processor: audio sample rate " + std::to_string(second.sample_rate) +
                        " differs from the front-end's " + std::to_string(config_.spectrogram.sample_rate));
    if (config_.beamform && second.channel_count() > 1) {
        const auto lags = dsp::estimate_tdoas(second, config_.max_lag);
        const auto mono = dsp::beamform(second, lags);
        return engine_.compute(mono.samples);
    }
    return engine_.compute(second.channels.front());
}

ChunkProcessor::Result ChunkProcessor::process(const dsp::MultichannelClip& second) {
    const auto spec = spectrogram(second);
    Result r;
    r.speech_prob = gate::speech_probability(spec);
    r.features = config_.encoder == embed::EncoderKind::Frozen ? frozen_.features(spec.frames)
                                                                : embed::pooled_input(spec, config_.pool);
    return r;
}

std::vector<gate::GateDecision> Corpus::decisions() const {
    std::vector<gate::GateDecision> out;
    out.reserve(probs.size());
    for (std::size_t s = 0; s < probs.size(); ++s)
        out.push_back({static_cast<std::int64_t>(s), probs[s], !(probs[s] > config.threshold)});
    return out;
}

namespace {

using BlockSource = std::function<dsp::MultichannelClip(std::int64_t frames)>;

Corpus process_stream(const BlockSource& next, std::int64_t duration_s, int sample_rate, const PipelineConfig& config,
                      int workers, const Progress& progress) {
    config.validate();
    if (sample_rate != config.spectrogram.sample_rate)
        throw DataError("scenario sample rate " + std::to_string(sample_rate) + " differs from the front-end's " +
                        std::to_string(config.spectrogram.sample_rate));
    workers = std::max(1, workers);
    Corpus corpus;
    corpus.config = config;
    corpus.duration_s = duration_s;
    corpus.features.resize(duration_s, config.feature_dim());
    corpus.probs.assign(static_cast<std::size_t>(duration_s), 0.0);

    std::vector<ChunkProcessor> procs;
    procs.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) procs.emplace_back(config);

    constexpr std::int64_t kBlockSeconds = 60;
    for (std::int64_t start = 0; start < duration_s; start += kBlockSeconds) {
        const auto secs = std::min(kBlockSeconds, duration_s - start);
        const auto block = next(secs * sample_rate);
        if (static_cast<std::int64_t>(block.length()) < secs * sample_rate) throw DataError("audio ends before the scenario does");
        auto work = [&](int w) {
            for (std::int64_t i = w; i < secs; i += workers) {
                dsp::MultichannelClip second;
                second.sample_rate = sample_rate;
                for (const auto& ch : block.channels)
                    second.channels.emplace_back(ch.begin() + i * sample_rate, ch.begin() + (i + 1) * sample_rate);
                auto r = procs[static_cast<std::size_t>(w)].process(second);
                corpus.features.row(start + i) = r.features.transpose();
                corpus.probs[static_cast<std::size_t>(start + i)] = r.speech_prob;
            }
        };
        if (workers == 1) {
            work(0);
        } else {
            std::vector<std::jthread> pool;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    try {
                        work(w);
                    } catch (...) {
                        errors[static_cast<std::size_t>(w)] = std::current_exception();
                    }
                });
            pool.clear();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        if (progress) progress(start + secs, duration_s);
    }
    return corpus;
}

}  // namespace

Corpus process_scenario(const synth::Scenario& scenario, const PipelineConfig& config, int workers, const Progress& progress) {
    auto renderer = scenario.renderer();
    Corpus c = process_stream([&](std::int64_t frames) { return renderer.next(frames); }, scenario.config.duration_s,
                              scenario.config.sample_rate, config, workers, progress);
    c.truth.assign(scenario.truth.counts.begin(), scenario.truth.counts.end());
    c.speech_labels = scenario.plan.speech_labels;
    return c;
}

Corpus process_scenario_dir(const std::string& dir, const PipelineConfig& config, int workers, const Progress& progress) {
    const auto files = synth::read_scenario(dir);
    wav::WavReader reader(files.audio_path);
    const auto duration = files.config.duration_s;
    if (reader.info().frames < static_cast<std::uint64_t>(duration * files.config.sample_rate))
        throw DataError(files.audio_path + ": audio shorter than the scenario");
    Corpus c = process_stream([&](std::int64_t frames) { return reader.read(static_cast<std::uint64_t>(frames)); }, duration,
                              reader.info().sample_rate, config, workers, progress);
    c.truth.assign(files.truth.counts.begin(), files.truth.counts.end());
    c.speech_labels = files.speech_labels;
    return c;
}

int fold_of(std::int64_t second, std::int64_t duration_s, int folds) {
    return static_cast<int>(second * folds / duration_s);
}

Dataset Dataset::build(const Corpus& corpus) {
    const auto& cfg = corpus.config;
    cfg.validate();
    const auto d = corpus.duration_s;
    if (d < cfg.window) throw DataError("scenario is shorter than one window");
    if (corpus.truth.size() != static_cast<std::size_t>(d) || corpus.probs.size() != static_cast<std::size_t>(d) ||
        corpus.features.rows() != d)
        throw DataError("corpus arrays do not cover the scenario duration");

    Dataset ds;
    ds.config_ = cfg;
    ds.truth_ = corpus.truth;
    ds.reads_ = std::make_unique<std::atomic<std::uint64_t>[]>(static_cast<std::size_t>(cfg.folds));
    const auto w = static_cast<std::size_t>(cfg.window);

    auto emit = [&](const gate::Window<std::int64_t>& win, int fold) {
        TrainWindow tw;
        tw.fold = fold;
        tw.rows.resize(static_cast<Eigen::Index>(w), corpus.features.cols());
        tw.target.resize(static_cast<Eigen::Index>(w));
        for (std::size_t i = 0; i < w; ++i) {
            const auto s = win.items[i];
            const auto row = static_cast<Eigen::Index>(i);
            if (win.mask[i])
                tw.rows.row(row) = corpus.features.row(s);
            else
                tw.rows.row(row).setZero();
            tw.target(row) = corpus.truth[static_cast<std::size_t>(s)];
        }
        tw.probs = win.probs;
        tw.mask = win.mask;
        tw.seconds = win.timestamps;
        ds.windows_.push_back(std::move(tw));
    };

    for (int f = 0; f < cfg.folds; ++f) {
        const std::int64_t lo = (static_cast<std::int64_t>(f) * d + cfg.folds - 1) / cfg.folds;
        const std::int64_t hi = (static_cast<std::int64_t>(f + 1) * d + cfg.folds - 1) / cfg.folds;
        gate::Scheme1Assembler<std::int64_t> s1(w, cfg.threshold);
        gate::Scheme2Assembler<std::int64_t> s2(w, [](const std::int64_t& s) { return s; }, cfg.threshold);
        for (std::int64_t s = lo; s < hi; ++s) {
            gate::Labeled<std::int64_t> chunk{s, corpus.probs[static_cast<std::size_t>(s)], s};
            auto out = cfg.scheme == 1 ? s1.push(chunk) : s2.push(chunk);
            if (out) emit(*out, f);
        }
    }
    return ds;
}

const TrainWindow& Dataset::fetch(std::size_t index) const {
    const auto& w = windows_.at(index);
    reads_[static_cast<std::size_t>(w.fold)].fetch_add(1, std::memory_order_relaxed);
    return w;
}

std::uint64_t Dataset::reads(int fold) const {
    if (fold < 0 || fold >= config_.folds) throw ConfigError("no fold " + std::to_string(fold));
    return reads_[static_cast<std::size_t>(fold)].load(std::memory_order_relaxed);
}

void Dataset::reset_reads() const {
    for (int f = 0; f < config_.folds; ++f) reads_[static_cast<std::size_t>(f)].store(0, std::memory_order_relaxed);
}

std::vector<std::size_t> Dataset::indices_in_folds(const std::vector<int>& folds) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < windows_.size(); ++i)
        for (int f : folds)
            if (windows_[i].fold == f) {
                out.push_back(i);
                break;
            }
    return out;
}

std::vector<double> Dataset::truth_in_folds(const std::vector<int>& folds) const {
    std::vector<double> out;
    const auto d = duration_s();
    for (std::int64_t s = 0; s < d; ++s) {
        const int f = fold_of(s, d, config_.folds);
        for (int g : folds)
            if (g == f) {
                out.push_back(truth_[static_cast<std::size_t>(s)]);
                break;
            }
    }
    return out;
}

std::string Dataset::content_hash() const {
    Sha256 h;
    h.update(nlohmann::json(to_json(config_)).dump());
    for (const auto& w : windows_) {
        h.update(w.rows.data(), sizeof(double) * static_cast<std::size_t>(w.rows.size()));
        h.update(w.target.data(), sizeof(double) * static_cast<std::size_t>(w.target.size()));
        h.update(w.probs.data(), sizeof(double) * w.probs.size());
        h.update(w.mask.data(), w.mask.size());
        h.update(w.seconds.data(), sizeof(std::int64_t) * w.seconds.size());
        h.update(&w.fold, sizeof w.fold);
    }
    return h.hex();
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
    fs::create_directories(dir);
    write_matrix((fs::path(dir) / "features.qrm").string(), corpus.features);
    std::ofstream csv(fs::path(dir) / "seconds.csv");
    if (!csv) throw DataError("cannot write " + dir + "/seconds.csv");
    csv << "second,speech_prob,truth,speech_label\n" << std::setprecision(17);
    for (std::int64_t s = 0; s < corpus.duration_s; ++s) {
        const auto i = static_cast<std::size_t>(s);
        csv << s << ',' << corpus.probs[i] << ',' << corpus.truth[i] << ','
            << (i < corpus.speech_labels.size() ? static_cast<int>(corpus.speech_labels[i]) : 0) << '\n';
    }
    std::ofstream meta(fs::path(dir) / "corpus.json");
    meta << nlohmann::json{{"pipeline", to_json(corpus.config)}, {"duration_s", corpus.duration_s}}.dump(2) << '\n';
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream meta_in(fs::path(dir) / "corpus.json");
    if (!meta_in) throw DataError(dir + ": no corpus.json");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/corpus.json: " + e.what());
    }
    Corpus c;
    c.config = pipeline_config_from_json(meta.at("pipeline"));
    c.duration_s = meta.at("duration_s");
    c.features = read_matrix((fs::path(dir) / "features.qrm").string()).values;
    std::ifstream csv(fs::path(dir) / "seconds.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
        std::istringstream ls(line);
        std::string cell[4];
        for (auto& x : cell) std::getline(ls, x, ',');
        c.probs.push_back(std::stod(cell[1]));
        c.truth.push_back(std::stod(cell[2]));
        c.speech_labels.push_back(static_cast<std::uint8_t>(std::stoi(cell[3])));
    }
    if (c.probs.size() != static_cast<std::size_t>(c.duration_s) || c.features.rows() != c.duration_s)
        throw DataError(dir + ": corpus files disagree on duration");
    return c;
}

}  // namespace quietroom::data
