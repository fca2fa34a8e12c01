// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. The end-to-end criteria share one plain and one defended
// pipeline run on the demo catchment, written under the temp directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "floodcnn/demo.hpp"
#include "floodcnn/error.hpp"
#include "floodcnn/pipeline.hpp"
#include "oracles.hpp"

using namespace floodcnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("C%-2d %-34s %s  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

const std::string held_out = "test_b";
const char* const stage_label[] = {"early", "growing", "peak", "receding"};

// ------------------------------------------------------------------ 1, 2

Outcome solver_conservation() {
    const DemoSpec spec;
    const DemoCatchment demo = build_demo(spec, 42);
    const DemoEvent* ev = nullptr;
    for (const auto& e : demo.events)
        if (e.training) {
            ev = &e;
            break;
        }
    std::vector<std::pair<std::string, CellIndex>> points(demo.inflows.begin(), demo.inflows.end());
    const BoundarySet bounds = make_boundary_set(demo.dem, points, ev->hydrographs);
    SolverConfig cfg;
    cfg.output_interval = spec.step;
    cfg.duration = bounds.duration();
    cfg.outflow_edge.reset();
    const auto t0 = Clock::now();
    const ScenarioRun run = run_scenario(demo.dem, bounds, cfg);
    const double wall = seconds_since(t0);
    double worst = 0.0;
    for (const auto& e : run.mass_ledger)
        if (e.inflow > 0.0) worst = std::max(worst, std::abs(e.inflow - e.outflow - e.storage) / e.inflow);
    return {worst <= 1e-3 && wall < 60.0 && run.mass_ledger.size() == spec.samples,
            ev->name + ": worst relative imbalance " + fmt(worst) + " over " +
                std::to_string(run.mass_ledger.size()) + " snapshots, " + fmt(wall, 3) + " s"};
}

Outcome lake_at_rest() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> bed(0.0, 2.0);
        GridGeometry g;
        g.ncols = g.nrows = 32;
        g.cellsize = 5.0;
        std::vector<double> z(g.cell_count());
        for (auto& v : z) v = bed(rng);
        z[40] = RasterGrid::default_nodata;
        const RasterGrid dem(g, RasterGrid::default_nodata, z);
        SolverState s0 = SolverState::dry(g);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (!dem.is_nodata(i)) s0.h[i] = std::max(0.0, 1.2 - z[i]);
        LocalInertialSolver solver(dem, BoundarySet{}, SolverConfig{}, s0);
        for (int k = 0; k < 1000; ++k) solver.advance(solver.stable_dt());
        for (std::size_t i = 0; i < s0.h.size(); ++i)
            worst = std::max(worst, std::abs(solver.state().h[i] - s0.h[i]));
    }
    return {worst <= 1e-12, "max depth drift " + fmt(worst) + " m over 1000 steps, 3 beds"};
}

// ------------------------------------------------------------------ 3

Outcome gradients() {
    const auto t0 = Clock::now();
    double plain = 0.0, bn = 0.0;
    std::size_t entries = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (bool batchnorm : {false, true}) {
            NetSpec spec;
            spec.input_len = 28;
            spec.conv_filters = {3, 4};
            spec.kernel_size = 3;
            spec.dense_units = {4, 5, 6};
            spec.output_dim = 3;
            spec.use_batchnorm = batchnorm;
            CnnModel model = init_model(spec, seed);
            std::mt19937_64 rng(seed * 7919);
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            for (auto& p : model.params())
                for (Eigen::Index i = 0; i < p.value->size(); ++i)
                    if (p.value->data()[i] == 0.0) p.value->data()[i] = u(rng);
            RowMatrix x(6, 28), y(6, 3);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng) + 0.5;
            for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = u(rng);
            const auto g = oracle::check_gradients(model, x, y);
            plain = std::max(plain, g.worst_plain);
            bn = std::max(bn, g.worst_batchnorm);
            entries += g.entries;
        }
    }
    const double wall = seconds_since(t0);
    return {plain <= 1e-4 && bn <= 1e-3 && wall < 30.0,
            "worst relative error " + fmt(plain) + " (batchnorm " + fmt(bn) + ") over " + std::to_string(entries) +
                " entries, " + fmt(wall, 3) + " s"};
}

// ------------------------------------------------------------------ 4-8, 11, 12

struct PipelineRun {
    Context ctx;
    double seconds = 0.0;
    EvaluationReport cnn, svr;
    std::vector<RasterGrid> reference;  // thresholded solver maps of the held-out event
    std::vector<RasterGrid> cnn_maps;
    std::string error;
};

PipelineRun run_pipeline(const fs::path& root, Variant variant, bool with_svr) {
    PipelineRun p;
    try {
        RunConfig cfg = RunConfig::load(root / "config.txt");
        p.ctx = make_context(cfg, variant, root / "out", "acceptance");
        const auto t0 = Clock::now();
        cmd_simulate(p.ctx);
        cmd_build_dataset(p.ctx);
        cmd_train_cnn(p.ctx);
        cmd_predict(p.ctx, ModelKind::cnn, held_out);
        p.cnn = cmd_evaluate(p.ctx, ModelKind::cnn, held_out);
        if (with_svr) {
            cmd_train_svr(p.ctx);
            cmd_predict(p.ctx, ModelKind::svr, held_out);
            p.svr = cmd_evaluate(p.ctx, ModelKind::svr, held_out);
        }
        p.seconds = seconds_since(t0);
        p.reference = threshold_maps(read_scenario(p.ctx.sim_dir(held_out).string()).depths, cfg.tau);
        p.cnn_maps = read_scenario(p.ctx.pred_dir(held_out, ModelKind::cnn).string()).depths;
    } catch (const std::exception& e) {
        p.error = e.what();
    }
    return p;
}

Outcome need(const PipelineRun& p) {
    return {false, p.error.empty() ? "pipeline did not run" : "pipeline failed: " + p.error};
}

Outcome emulation(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    const auto& cp = p.cnn.control_points;
    const double nse = cp.mean_nse.value_or(-1e9);
    return {nse >= 0.80 && cp.mean_rmse <= 0.15 && p.seconds < 600.0,
            "mean NSE " + fmt(nse) + ", mean RMSE " + fmt(cp.mean_rmse) + " m over " +
                std::to_string(cp.rmse.size()) + " points (" + std::to_string(cp.undefined_nse) +
                " undefined NSE), pipeline " + fmt(p.seconds, 3) + " s"};
}

Outcome peak_f1(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    const double f1 = p.cnn.stages[2].metrics.f1.value_or(0.0);
    return {f1 >= 0.90, "peak F1 " + fmt(f1) + " at t=" + fmt(p.cnn.stages[2].time, 6) + " s"};
}

Outcome ordering(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    bool ok = true, ahead = false;
    std::string detail = "F1 gap cnn-svr:";
    for (std::size_t s = 0; s < 4; ++s) {
        const double gap = p.cnn.stages[s].metrics.f1.value_or(0.0) - p.svr.stages[s].metrics.f1.value_or(0.0);
        ok = ok && gap >= -0.02;
        if (s != 2 && gap > 0.0) ahead = true;
        detail += std::string(" ") + stage_label[s] + " " + fmt(gap, 3);
    }
    if (!(ok && ahead))
        detail += "; maps in " + p.ctx.eval_dir(held_out, ModelKind::cnn).string() + " and " +
                  p.ctx.eval_dir(held_out, ModelKind::svr).string();
    return {ok && ahead, detail};
}

Outcome percentile(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    const double p99 = p.cnn.stages[2].p99_error;
    return {p99 <= 0.5, "peak p99 depth error " + fmt(p99) + " m"};
}

Outcome speedup(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    const BenchmarkResult b = cmd_benchmark(p.ctx, held_out);
    return {b.inference_seconds * 10.0 <= b.solver_seconds,
            "solver " + fmt(b.solver_seconds, 3) + " s, inference " + fmt(b.inference_seconds, 3) + " s, ratio " +
                fmt(b.ratio, 4)};
}

Outcome defence_effect(const PipelineRun& plain, const PipelineRun& defended) {
    if (!plain.error.empty()) return need(plain);
    if (!defended.error.empty()) return need(defended);
    // Stage instants of the undefended run, applied to both variants.
    const StageIndices idx = plain.cnn.indices;
    const std::size_t skip_p = plain.reference.size() - plain.cnn_maps.size();
    const std::size_t skip_d = defended.reference.size() - defended.cnn_maps.size();
    auto wet = [](const RasterGrid& m) { return wet_counts({m}, default_depth_threshold).front(); };
    const double sp_g = wet(plain.reference[skip_p + idx.growing]);
    const double sd_g = wet(defended.reference[skip_d + idx.growing]);
    const double sp_p = wet(plain.reference[skip_p + idx.peak]);
    const double sd_p = wet(defended.reference[skip_d + idx.peak]);
    const double cp_g = wet(plain.cnn_maps[idx.growing]);
    const double cd_g = wet(defended.cnn_maps[idx.growing]);
    const double cp_p = wet(plain.cnn_maps[idx.peak]);
    const double cd_p = wet(defended.cnn_maps[idx.peak]);
    const bool ok = sd_g < sp_g && cd_g < cp_g && std::abs(sd_p - sp_p) <= 0.1 * sp_p &&
                    std::abs(cd_p - cp_p) <= 0.1 * cp_p;
    return {ok, "wet cells plain->defended: solver growing " + fmt(sp_g, 6) + "->" + fmt(sd_g, 6) + ", peak " +
                    fmt(sp_p, 6) + "->" + fmt(sd_p, 6) + "; cnn growing " + fmt(cp_g, 6) + "->" + fmt(cd_g, 6) +
                    ", peak " + fmt(cp_p, 6) + "->" + fmt(cd_p, 6)};
}

Outcome svr_kkt_and_kriging(const PipelineRun& p) {
    if (!p.error.empty()) return need(p);
    const Dataset data = read_dataset(p.ctx.dataset_stem().string());
    const auto models = read_svr_archive((p.ctx.svr_dir() / "models.bin").string());
    const auto& t = data.targets;
    double worst_kkt = 0.0;
    for (const auto& m : models) {
        const std::size_t cell = t.geometry.linear(m.location);
        std::vector<double> z(t.rows(), 0.0);
        const auto it = std::lower_bound(t.cell_map.begin(), t.cell_map.end(), cell);
        if (it != t.cell_map.end() && *it == cell) {
            const auto col = static_cast<Eigen::Index>(it - t.cell_map.begin());
            for (std::size_t r = 0; r < z.size(); ++r) z[r] = t.values(static_cast<Eigen::Index>(r), col);
        }
        worst_kkt = std::max(worst_kkt, kkt_residual(m, data.features.values, z));
    }

    // Kriging at the peak of the held-out event: the SVR point predictions
    // are the samples; with zero nugget every sample is reproduced.
    const RasterGrid dem = load_dem(p.ctx);
    const EventInput ev = find_event(p.ctx, dem, held_out);
    const FeatureMatrix f = event_features(p.ctx, ev, *data.features.norm);
    const auto row = static_cast<Eigen::Index>(p.svr.indices.peak);
    std::vector<std::pair<CellIndex, double>> pts;
    for (const auto& m : models) pts.push_back({m.location, m.predict(&f.values(row, 0), f.cols())});
    KrigingModel km = fit_rk(dem, pts);
    km.variogram.nugget = 0.0;
    solve_kriging_weights(km);
    // The kriging estimate itself, evaluated at the sample coordinates.
    const auto& g = dem.geometry();
    double worst_krig = 0.0;
    for (const auto& [c, v] : pts)
        worst_krig = std::max(worst_krig, std::abs(km.estimate(g.x_of(c.col), g.y_of(c.row), dem.at(c)) - v));
    return {models.size() == p.ctx.cfg.svr_locations && worst_kkt <= 1e-3 && worst_krig <= 1e-8,
            std::to_string(models.size()) + " models, worst KKT residual " + fmt(worst_kkt) +
                "; kriging max sample misfit " + fmt(worst_krig) + (km.jittered ? " (jittered)" : "")};
}

// ------------------------------------------------------------------ 9, 10

Outcome metric_oracles() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> pu(0.5, 100.0);
    // Differences are scaled by max(1, |oracle|): NSE reaches magnitudes of
    // 1e4 on small grids, where 1e-12 absolute is below one ulp.
    double worst = 0.0;
    std::size_t mismatches = 0;
    auto diff = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    for (int k = 0; k < 1000; ++k) {
        RasterGrid ref = oracle::random_grid(rng, 16, 0.1, 0.0, 1.5);
        if (ref.valid_count() < 2) ref = oracle::random_grid(rng, 16, 0.0, 0.0, 1.5);
        if (ref.valid_count() < 2) continue;
        const RasterGrid pred = oracle::random_like(rng, ref, 0.0, 1.5);
        const auto o = oracle::valid_values(ref), q = oracle::valid_values(pred);
        worst = std::max(worst, diff(rmse(o, q), oracle::rmse(o, q)));
        worst = std::max(worst, diff(nse(o, q), oracle::nse(o, q)));

        const auto c = oracle::count_cells(ref, pred, 0.3);
        const MetricsReport r = confusion_scores(ref, pred, 0.3);
        if (r.confusion.tp != c.tp || r.confusion.fp != c.fp || r.confusion.fn != c.fn || r.confusion.tn != c.tn)
            ++mismatches;
        if (r.precision != oracle::ratio(c.tp, c.tp + c.fp) || r.recall != oracle::ratio(c.tp, c.tp + c.fn))
            ++mismatches;
        worst = std::max(worst, diff(r.rmse, oracle::rmse(o, q)));

        const RasterGrid err = error_map(ref, pred);
        std::vector<double> abs_err;
        for (std::size_t i = 0; i < o.size(); ++i) abs_err.push_back(std::abs(o[i] - q[i]));
        const double p = k % 4 == 0 ? 99.0 : pu(rng);
        worst = std::max(worst, diff(percentile_error(err, p), oracle::percentile(abs_err, p)));
    }
    return {worst <= 1e-12 && mismatches == 0,
            "1000 instances, worst scaled difference " + fmt(worst) + ", " + std::to_string(mismatches) + " count mismatches"};
}

Outcome scaling_and_threshold() {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> len(2, 80);
    std::uniform_real_distribution<double> q(0.0, 400.0), up(0.01, 4.0), unit(0.0, 1.0);
    double peak_err = 0.0, ratio_err = 0.0;
    for (int k = 0; k < 500; ++k) {
        std::vector<double> f(len(rng));
        for (auto& v : f) v = q(rng);
        f[f.size() / 3] += 1.0;
        const Hydrograph h(f, 300.0);
        const double target = h.peak() * (1.0 + up(rng));
        const Hydrograph s = scale_hydrograph(h, target);
        peak_err = std::max(peak_err, std::abs(s.peak() - target) / target);
        const std::size_t ref = h.peak_index();
        for (std::size_t i = 0; i < h.size(); ++i)
            ratio_err = std::max(ratio_err, std::abs(s[i] / s[ref] - h[i] / h[ref]));
    }
    std::size_t threshold_bad = 0;
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> v(1 + k % 64);
        for (auto& x : v) x = unit(rng) < 0.1 ? 0.3 : unit(rng);
        const auto once = threshold_depths(v, 0.3);
        if (threshold_depths(once, 0.3) != once) ++threshold_bad;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (once[i] != (v[i] > 0.3 ? v[i] : 0.0)) ++threshold_bad;
    }
    return {peak_err <= 1e-12 && ratio_err <= 1e-12 && threshold_bad == 0,
            "peak error " + fmt(peak_err) + ", ratio error " + fmt(ratio_err) + ", " + std::to_string(threshold_bad) +
                " threshold violations"};
}

}  // namespace

int main() {
    report(1, "solver conservation", solver_conservation);
    report(2, "lake at rest", lake_at_rest);
    report(3, "gradient check", gradients);

    const fs::path root = fs::temp_directory_path() / "floodcnn_acceptance";
    fs::remove_all(root);
    cmd_make_demo(root, 42);
    std::cout << "running the plain demo pipeline in " << root.string() << std::endl;
    const PipelineRun plain = run_pipeline(root, Variant::plain, true);

    report(4, "end-to-end emulation", [&] { return emulation(plain); });
    report(5, "peak wet/dry F1", [&] { return peak_f1(plain); });
    report(6, "cnn vs svr F1 ordering", [&] { return ordering(plain); });
    report(7, "peak p99 depth error", [&] { return percentile(plain); });
    report(8, "inference speedup", [&] { return speedup(plain); });
    report(9, "metric oracles", metric_oracles);
    report(10, "scaling and threshold properties", scaling_and_threshold);

    std::cout << "running the defended demo pipeline" << std::endl;
    const PipelineRun defended = run_pipeline(root, Variant::defended, false);
    report(11, "defence effect", [&] { return defence_effect(plain, defended); });
    report(12, "svr kkt and kriging exactness", [&] { return svr_kkt_and_kriging(plain); });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
