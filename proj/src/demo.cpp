#include "floodcnn/demo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "floodcnn/config.hpp"
#include "floodcnn/error.hpp"

namespace floodcnn {

namespace fs = std::filesystem;

namespace {

// Upstream 1..3 peaks (m^3/s) of the eight training and two test events.
struct PeakRow {
    const char* name;
    bool training;
    double u1, u2, u3;
};
constexpr PeakRow peak_table[] = {
    {"train_a", true, 5.00, 0.4681, 1.9473},   {"train_b", true, 18.00, 1.3888, 3.6565},
    {"train_c", true, 9.00, 0.4259, 1.0920},   {"train_d", true, 17.00, 0.8368, 2.0963},
    {"train_e", true, 7.00, 0.0574, 0.6543},   {"train_f", true, 8.5428, 0.8257, 1.9333},
    {"train_g", true, 13.3807, 0.9916, 2.2674}, {"train_h", true, 19.5050, 0.5199, 2.6691},
    {"test_a", false, 12.7294, 0.8257, 2.4874}, {"test_b", false, 14.8619, 0.7890, 2.7930},
};

constexpr double flow_scale = 3.0;
constexpr double cross_slope = 0.01;
constexpr double main_depth = 0.5;
constexpr double tributary_depth = 0.4;
constexpr int tributary_cols[2] = {30, 70};
constexpr int basin_col = 70;
constexpr double basin_offset = 7.0, basin_half_rows = 5.0, basin_half_cols = 12.0, basin_depth = 0.7;
constexpr int levee_half = 14;

struct Terrain {
    int n;
    double dx;
    double phase;
    std::vector<std::array<double, 4>> waves;  // amplitude, kx, ky, phase

    double centerline(int col) const {
        return 0.42 * n + 0.06 * n * std::sin(2.0 * std::numbers::pi * 1.2 * col / n + phase);
    }
    double surface(int row, int col) const {
        const double valley = 10.0 + 0.001 * dx * col;
        const double d = std::max(0.0, std::abs(row - centerline(col)) - 1.5);
        double z = valley + cross_slope * dx * d;
        for (const auto& w : waves) z += w[0] * std::sin(w[1] * col * dx + w[2] * row * dx + w[3]);
        // Backswamp north of the channel, linked to it by a shallow swale.
        const double bc = basin_col * n / 96.0, br = centerline(col) - basin_offset;
        const double ex = (col - bc) / basin_half_cols, ey = (row - br) / basin_half_rows;
        const double e2 = ex * ex + ey * ey;
        if (e2 < 1.0) z -= basin_depth * (1.0 - e2) * (1.0 - e2);
        return z;
    }
    bool main_channel(int row, int col) const { return std::abs(row - centerline(col)) <= 1.5; }
    bool tributary(int row, int col) const {
        for (int t : tributary_cols) {
            const int tc = t * n / 96;
            if ((col == tc || col == tc + 1) && row > centerline(col)) return true;
        }
        return false;
    }
};

}  // namespace

DemoCatchment build_demo(const DemoSpec& spec, std::uint64_t seed) {
    if (spec.size < 24) throw DomainError("demo grid must be at least 24 cells across");
    if (spec.samples < 10) throw DomainError("demo events need at least 10 samples");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    Terrain t{spec.size, spec.cellsize, 0.4 * uni(rng), {}};
    for (int k = 0; k < 4; ++k) {
        const double wl = spec.cellsize * spec.size * (0.2 + 0.3 * uni(rng));
        const double dir = 2.0 * std::numbers::pi * uni(rng);
        t.waves.push_back({0.03 * uni(rng), 2.0 * std::numbers::pi / wl * std::cos(dir),
                           2.0 * std::numbers::pi / wl * std::sin(dir), 2.0 * std::numbers::pi * uni(rng)});
    }

    const int n = spec.size;
    const GridGeometry g{n, n, 0.0, 0.0, spec.cellsize};
    std::vector<double> z(g.cell_count());
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double v = t.surface(r, c);
            if (t.main_channel(r, c)) v = 10.0 + 0.001 * spec.cellsize * c - main_depth;
            else if (t.tributary(r, c)) v -= tributary_depth;
            z[g.linear({r, c})] = std::round(v * 1e4) / 1e4;
        }
    }

    DemoCatchment demo;
    demo.dem = RasterGrid(g, RasterGrid::default_nodata, std::move(z));

    // Levee ring around the backswamp: along the bank, then up both flanks.
    std::vector<CellIndex> levee;
    const int bc = basin_col * n / 96;
    const int half = levee_half;
    const int lf = bc - half, lt = bc + half;
    const int off = 2, arm = 12;
    int prev = -1;
    for (int c = lf; c <= lt; ++c) {
        const int r = static_cast<int>(std::lround(t.centerline(c))) - off;
        if (prev >= 0)
            for (int rr = std::min(prev, r); rr <= std::max(prev, r); ++rr) levee.push_back({rr, c});
        levee.push_back({r, c});
        if (c == lf || c == lt)
            for (int k = 1; k <= arm - off; ++k) levee.push_back({r - k, c});
        prev = r;
    }
    std::set<CellIndex> uniq(levee.begin(), levee.end());
    demo.defenses.segments = {std::vector<CellIndex>(uniq.begin(), uniq.end())};
    demo.defenses.crest_height = 2.0;

    demo.inflows = {{{"Upstream 1", {static_cast<int>(std::lround(t.centerline(n - 1))), n - 1}},
                     {"Upstream 2", {n - 1, tributary_cols[0] * n / 96}},
                     {"Upstream 3", {n - 1, tributary_cols[1] * n / 96}}}};

    const double duration = static_cast<double>(spec.samples - 1) * spec.step;
    for (const auto& row : peak_table) {
        DemoEvent ev{row.name, row.training, {}};
        for (double q : {row.u1, row.u2, row.u3}) {
            const double peak = flow_scale * q;
            const double tp = duration * (0.28 + 0.14 * uni(rng));
            const double shape = 2.5 + 2.0 * uni(rng);
            const double base = 0.05 + 0.05 * uni(rng);
            // A gauged-looking curve rescaled to the event peak.
            const Hydrograph observed =
                gamma_hydrograph(0.5 * base * peak, 0.5 * peak, tp, shape, spec.samples, spec.step);
            ev.hydrographs.push_back(scale_hydrograph(observed, peak));
        }
        demo.events.push_back(std::move(ev));
    }

    for (int k = 0; k < spec.control_points; ++k) {
        int c = std::min(n - 2, 6 * n / 96 + k * 5 * n / 96);
        const bool north = k % 2 == 0;
        int offset = 3 + k % 3;
        if (north && c >= lf && c <= lt) offset = 3;
        int r = static_cast<int>(std::lround(t.centerline(c))) + (north ? -offset : offset);
        if (t.tributary(r, c)) c += 3;
        if (uniq.count({r, c})) r += north ? 1 : -1;
        demo.control_points.push_back({"CP" + std::to_string(k + 1), {r, c}});
    }
    return demo;
}

void write_demo(const fs::path& out_dir, const DemoCatchment& demo, const DemoSpec& spec, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(out_dir / "events", ec);
    if (ec) throw DomainError("cannot create '" + out_dir.string() + "': " + ec.message());
    write_ascii_grid_file((out_dir / "dem.asc").string(), demo.dem);
    write_defense_file((out_dir / "defenses.txt").string(), demo.defenses);
    write_control_points((out_dir / "control_points.csv").string(), demo.control_points);

    std::vector<std::string> train, test;
    for (const auto& ev : demo.events) {
        const fs::path dir = out_dir / "events" / ev.name;
        fs::create_directories(dir, ec);
        if (ec) throw DomainError("cannot create '" + dir.string() + "'");
        std::vector<std::pair<std::string, CellIndex>> pts(demo.inflows.begin(), demo.inflows.end());
        const BoundarySet set = make_boundary_set(demo.dem, pts, ev.hydrographs);
        std::vector<std::string> csvs;
        for (std::size_t k = 0; k < ev.hydrographs.size(); ++k) {
            const std::string file = "u" + std::to_string(k + 1) + ".csv";
            write_hydrograph_csv((dir / file).string(), ev.hydrographs[k]);
            csvs.push_back(ev.name + "/" + file);
        }
        const std::string manifest = "events/" + ev.name + ".manifest";
        write_boundary_manifest((out_dir / manifest).string(), set, csvs);
        (ev.training ? train : test).push_back(manifest);
    }

    RunConfig cfg;
    cfg.dem = "dem.asc";
    cfg.defenses = "defenses.txt";
    cfg.train_events = train;
    cfg.test_events = test;
    cfg.control_points = "control_points.csv";
    cfg.out_dir = "out";
    cfg.solver.output_interval = spec.step;
    cfg.solver.outflow_edge = Edge::west;
    cfg.train.adam.learning_rate = 3e-4;
    cfg.train.max_epochs = 200;
    cfg.train.patience = 30;
    cfg.seed = seed;
    std::ofstream out(out_dir / "config.txt");
    if (!out) throw DomainError("cannot write '" + (out_dir / "config.txt").string() + "'");
    out << "# demo catchment run configuration\n" << cfg.to_text();
}

}  // namespace floodcnn
