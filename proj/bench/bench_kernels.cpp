#include <benchmark/benchmark.h>

#include <random>

#include "floodcnn/demo.hpp"
#include "floodcnn/hydrosolver.hpp"
#include "floodcnn/nnet_layers.hpp"

using namespace floodcnn;

namespace {

// A demo event advanced to its peak, so most of the grid carries water.
struct Flooded {
    RasterGrid dem;
    BoundarySet boundaries;
    SolverConfig cfg;
    SolverState state;

    Flooded() {
        const DemoSpec spec;
        const DemoCatchment demo = build_demo(spec, 42);
        dem = demo.dem;
        std::vector<std::pair<std::string, CellIndex>> pts(demo.inflows.begin(), demo.inflows.end());
        boundaries = make_boundary_set(dem, pts, demo.events.back().hydrographs);
        cfg.outflow_edge = Edge::west;
        cfg.output_interval = 3600.0;
        cfg.duration = 3600.0;
        LocalInertialSolver s(dem, boundaries, cfg);
        while (s.state().t < cfg.duration) s.advance(std::min(s.stable_dt(), cfg.duration - s.state().t));
        state = s.state();
    }
};

const Flooded& flooded() {
    static const Flooded f;
    return f;
}

void BM_SolverStep(benchmark::State& st) {
    const auto& f = flooded();
    LocalInertialSolver s(f.dem, f.boundaries, f.cfg, f.state);
    const double dt = s.stable_dt();
    for (auto _ : st) s.advance(dt);
    st.SetItemsProcessed(st.iterations() * static_cast<long>(f.dem.size()));
}
BENCHMARK(BM_SolverStep);

void BM_SolverStepReference(benchmark::State& st) {
    const auto& f = flooded();
    LocalInertialSolver s(f.dem, f.boundaries, f.cfg, f.state);
    const double dt = s.stable_dt();
    for (auto _ : st) s.advance_reference(dt);
    st.SetItemsProcessed(st.iterations() * static_cast<long>(f.dem.size()));
}
BENCHMARK(BM_SolverStepReference);

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Second convolution of the default network: 28 positions, 32 -> 128 channels.
void BM_ConvIm2col(benchmark::State& st) {
    nn::Conv1d conv(28, 32, 128, 3, "conv");
    conv.weight = random_matrix(3 * 32, 128, 1);
    const RowMatrix x = random_matrix(st.range(0), 28 * 32, 2);
    for (auto _ : st) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::infer, nullptr));
}
BENCHMARK(BM_ConvIm2col)->Arg(10)->Arg(256);

void BM_ConvReference(benchmark::State& st) {
    const RowMatrix w = random_matrix(3 * 32, 128, 1), b = RowMatrix::Zero(1, 128);
    const RowMatrix x = random_matrix(st.range(0), 28 * 32, 2);
    for (auto _ : st) benchmark::DoNotOptimize(nn::conv1d_forward_reference(x, w, b, 28, 32, 3));
}
BENCHMARK(BM_ConvReference)->Arg(10)->Arg(256);

// Output layer of a demo-sized network.
void BM_Adam(benchmark::State& st) {
    const std::size_t n = 512 * 3000;
    std::vector<double> p(n, 0.1), g(n, 0.01), m(n, 0.0), v(n, 0.0);
    long long t = 0;
    for (auto _ : st) nn::adam_update(p.data(), g.data(), m.data(), v.data(), n, {}, ++t);
}
BENCHMARK(BM_Adam);

void BM_AdamReference(benchmark::State& st) {
    const std::size_t n = 512 * 3000;
    std::vector<double> p(n, 0.1), g(n, 0.01), m(n, 0.0), v(n, 0.0);
    long long t = 0;
    for (auto _ : st) nn::adam_update_reference(p.data(), g.data(), m.data(), v.data(), n, {}, ++t);
}
BENCHMARK(BM_AdamReference);

}  // namespace

BENCHMARK_MAIN();
