#include <random>

#include <benchmark/benchmark.h>

#include "histreg/decision.hpp"
#include "histreg/demons.hpp"
#include "histreg/local_affine.hpp"
#include "histreg/mind.hpp"
#include "histreg/preprocess.hpp"
#include "histreg/tps.hpp"
#include "synth.hpp"

using namespace histreg;

namespace {

Image scene_image(int n, std::uint64_t seed = 1) { return synth::render(synth::dense_scene(n, seed), n, n); }

DisplacementField smooth_field(int n, double amp) {
    const auto w = synth::random_smooth_warp(n, 3, amp);
    return synth::field_from_map([w](Point2 p) {
        const Point2 d = w.displacement(p);
        return Point2{p.x + d.x, p.y + d.y};
    }, n, n);
}

void BM_WarpImage(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Image img = scene_image(n);
    const auto f = smooth_field(n, 8.0);
    for (auto _ : state) benchmark::DoNotOptimize(warp_image(img, f));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_WarpImage)->Arg(256)->Arg(512)->Arg(1024);

void BM_ComposeFields(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto f = smooth_field(n, 8.0);
    for (auto _ : state) benchmark::DoNotOptimize(compose_fields(f, f));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_ComposeFields)->Arg(256)->Arg(512)->Arg(1024);

void BM_GaussianSmooth(benchmark::State& state) {
    const Image img = scene_image(512);
    for (auto _ : state) benchmark::DoNotOptimize(preprocess::gaussian_smooth(img, static_cast<double>(state.range(0))));
}
BENCHMARK(BM_GaussianSmooth)->Arg(1)->Arg(2)->Arg(4);

void BM_MindDescriptor(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Image img = scene_image(n);
    for (auto _ : state) benchmark::DoNotOptimize(nonrigid::mind_descriptor(img));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_MindDescriptor)->Arg(256)->Arg(512)->Arg(1024);

void BM_MaskedMindSsd(benchmark::State& state) {
    const Image a = scene_image(512, 1), b = scene_image(512, 2);
    const BinaryMask mask(512, 512, true);
    for (auto _ : state) benchmark::DoNotOptimize(decision::masked_mind_ssd(a, b, mask));
}
BENCHMARK(BM_MaskedMindSsd);

template <bool Mind>
void BM_DemonsLevel(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Image fixed = scene_image(n);
    const Image moving = warp_image(fixed, smooth_field(n, 5.0));
    nonrigid::DemonsParams p;
    p.levels = 1;
    p.iters_per_level = 10;
    p.tolerance = 0.0;
    const DisplacementField zero(n, n);
    for (auto _ : state) {
        if constexpr (Mind) benchmark::DoNotOptimize(nonrigid::mind_demons_register(fixed, moving, zero, p));
        else benchmark::DoNotOptimize(nonrigid::demons_register(fixed, moving, zero, p));
    }
    state.counters["iters"] = p.iters_per_level;
}
BENCHMARK(BM_DemonsLevel<false>)->Name("BM_DemonsTenIterations")->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DemonsLevel<true>)->Name("BM_MindDemonsTenIterations")->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_LocalAffine(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Image fixed = scene_image(n);
    const Image moving = warp_image(fixed, smooth_field(n, 4.0));
    const DisplacementField zero(n, n);
    for (auto _ : state) benchmark::DoNotOptimize(nonrigid::local_affine_register(fixed, moving, zero, {}));
}
BENCHMARK(BM_LocalAffine)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_TpsFitAndField(benchmark::State& state) {
    const auto count = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 512), e(-4, 4);
    std::vector<Point2> src(count), tgt(count);
    for (std::size_t i = 0; i < count; ++i) {
        src[i] = {u(rng), u(rng)};
        tgt[i] = {src[i].x + e(rng), src[i].y + e(rng)};
    }
    for (auto _ : state) {
        const auto m = nonrigid::tps_fit(src, tgt, 10.0);
        benchmark::DoNotOptimize(nonrigid::tps_to_field(m, 512, 512, static_cast<int>(state.range(1))));
    }
}
BENCHMARK(BM_TpsFitAndField)->Args({100, 1})->Args({100, 4})->Args({1000, 4})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
