#include <benchmark/benchmark.h>

#include <vector>

#include "quietroom/dataset.hpp"
#include "quietroom/dsp.hpp"
#include "quietroom/privacy.hpp"
#include "quietroom/random.hpp"
#include "quietroom/regressor.hpp"
#include "quietroom/store.hpp"
#include "quietroom/train.hpp"

using namespace quietroom;

namespace {

dsp::MonoClip noise(Rng& rng, std::size_t n) {
    dsp::MonoClip c;
    c.samples.resize(n);
    for (auto& v : c.samples) v = rng.normal();
    return c;
}

void BM_GccPhat(benchmark::State& state) {
    Rng rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = noise(rng, n), b = noise(rng, n);
    for (auto _ : state) benchmark::DoNotOptimize(dsp::gcc_phat_tdoa(a, b, 4));
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GccPhat)->Arg(1024)->Arg(16000)->Arg(65536);

void BM_LogMelOneSecond(benchmark::State& state) {
    Rng rng(2);
    const auto clip = noise(rng, 16000);
    dsp::SpectrogramEngine engine(dsp::SpectrogramConfig{});
    for (auto _ : state) benchmark::DoNotOptimize(engine.compute(clip.samples));
}
BENCHMARK(BM_LogMelOneSecond);

void BM_ChunkFrontEnd(benchmark::State& state) {
    Rng rng(3);
    dsp::MultichannelClip clip;
    for (int c = 0; c < 4; ++c) clip.channels.push_back(noise(rng, 16000).samples);
    clip.sample_rate = 16000;
    data::ChunkProcessor proc(data::PipelineConfig{});
    for (auto _ : state) benchmark::DoNotOptimize(proc.process(clip));
}
BENCHMARK(BM_ChunkFrontEnd);

TrainWindow random_window(const ModelConfig& cfg, Rng& rng, int t) {
    TrainWindow w;
    w.rows.resize(t, cfg.input_dim());
    for (Eigen::Index i = 0; i < w.rows.size(); ++i) w.rows.data()[i] = rng.normal();
    for (int i = 0; i < t; ++i) {
        w.probs.push_back(0.1);
        w.mask.push_back(1);
        w.seconds.push_back(i);
    }
    w.target = Vector::Constant(t, 3.0);
    return w;
}

// Forward, backward and one Adam update on a 60-second window.
void BM_TrainStep(benchmark::State& state) {
    ModelConfig cfg;
    cfg.encoder = state.range(0) ? embed::EncoderKind::Trainable : embed::EncoderKind::Frozen;
    Rng rng(4);
    const auto w = random_window(cfg, rng, 60);
    Regressor model(cfg, 1);
    Adam adam(model.params(), AdamConfig{});
    Parameters grads = model.params().zeros_like();
    for (auto _ : state) {
        Regressor::Cache cache;
        const Vector pred = model.forward(w.input(), nullptr, &cache);
        grads.set_zero();
        model.backward(cache, mse_gradient(pred, w.target), grads);
        adam.step(model.params(), grads);
    }
    state.SetLabel(state.range(0) ? "trainable encoder" : "frozen encoder");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Privatize(benchmark::State& state) {
    Rng rng(5);
    Matrix rows(60, 129);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = 0.01 * rng.normal();
    auto src = privacy::NoiseSource::seeded(5);
    privacy::PrivacyLedger ledger;
    for (auto _ : state) benchmark::DoNotOptimize(privacy::privatize(rows, {1.0, 1.0}, src, ledger));
}
BENCHMARK(BM_Privatize);

void BM_Seal(benchmark::State& state) {
    const auto pair = store::generate_keypair(3072);
    const auto pub = store::PublicKey::from_pem(pair.public_pem);
    std::vector<std::uint8_t> payload(static_cast<std::size_t>(state.range(0)), 0x5a);
    for (auto _ : state) benchmark::DoNotOptimize(store::serialize(store::seal(payload, pub)));
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Seal)->Arg(4096)->Arg(1 << 20);

}  // namespace
BENCHMARK_MAIN();
