#include "floodcnn/hydrosolver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "floodcnn/error.hpp"

namespace floodcnn {

namespace {

// Semi-implicit friction update of a face discharge.
inline double inertial_flux(double q, double hf, double slope, double g, double n2, double dt) {
    const double hf73 = hf * hf * std::cbrt(hf);
    return (q - g * hf * dt * slope) / (1.0 + g * dt * n2 * std::abs(q) / hf73);
}

// Interior face between cells a (west/north) and b (east/south).
inline double interior_face(double q, double za, double ha, double zb, double hb, double dx,
                            double floor, double g, double n2, double dt) {
    const double eta_a = za + ha;
    const double eta_b = zb + hb;
    const double hf = std::max(eta_a, eta_b) - std::max(za, zb);
    if (hf <= floor) return 0.0;
    return inertial_flux(q, hf, (eta_b - eta_a) / dx, g, n2, dt);
}

// Outward discharge magnitude through a free-outfall edge face.
inline double outfall_face(double q_out, double h, double slope, double floor, double g, double n2,
                           double dt) {
    if (h <= floor) return 0.0;
    return std::max(0.0, inertial_flux(q_out, h, -slope, g, n2, dt));
}

std::string time_tag(double t) {
    double r = std::round(t);
    std::ostringstream ss;
    if (std::abs(r - t) < 1e-9) {
        ss << static_cast<long long>(r);
    } else {
        ss << std::setprecision(12) << t;
    }
    return ss.str();
}

}  // namespace

std::optional<Edge> parse_edge(const std::string& name) {
    if (name == "north") return Edge::north;
    if (name == "south") return Edge::south;
    if (name == "east") return Edge::east;
    if (name == "west") return Edge::west;
    if (name == "none" || name.empty()) return std::nullopt;
    throw ConfigError("unknown edge '" + name + "' (north|south|east|west|none)");
}

std::string edge_name(std::optional<Edge> e) {
    if (!e) return "none";
    switch (*e) {
        case Edge::north: return "north";
        case Edge::south: return "south";
        case Edge::east: return "east";
        case Edge::west: return "west";
    }
    return "none";
}

void SolverConfig::validate() const {
    if (!(manning_n > 0.0)) throw DomainError("manning_n must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
    if (!(depth_floor > 0.0)) throw DomainError("depth_floor must be positive");
    if (!(g > 0.0)) throw DomainError("gravity must be positive");
    if (!(output_interval > 0.0)) throw DomainError("output_interval must be positive");
    if (!(duration >= 0.0)) throw DomainError("duration must be non-negative");
    if (!(dt_max > 0.0)) throw DomainError("dt_max must be positive");
    if (outfall_slope < 0.0) throw DomainError("outfall_slope must be non-negative");
}

SolverState SolverState::dry(const GridGeometry& g) {
    SolverState s;
    s.h.assign(g.cell_count(), 0.0);
    s.qx.assign(static_cast<std::size_t>(g.nrows) * (g.ncols + 1), 0.0);
    s.qy.assign(static_cast<std::size_t>(g.nrows + 1) * g.ncols, 0.0);
    return s;
}

RasterGrid SolverState::depth_raster(const RasterGrid& dem) const {
    std::vector<double> v(h);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (dem.is_nodata(i)) v[i] = dem.nodata();
    return RasterGrid(dem.geometry(), dem.nodata(), std::move(v));
}

double SolverState::stored_volume(const RasterGrid& dem) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (!dem.is_nodata(i)) sum += h[i];
    return sum * dem.cellsize() * dem.cellsize();
}

double ScenarioRun::max_mass_error() const {
    double m = 0.0;
    for (const auto& e : mass_ledger) m = std::max(m, e.rel_error);
    return m;
}

LocalInertialSolver::LocalInertialSolver(const RasterGrid& dem, BoundarySet boundaries,
                                         SolverConfig cfg)
    : LocalInertialSolver(dem, std::move(boundaries), cfg, SolverState::dry(dem.geometry())) {}

LocalInertialSolver::LocalInertialSolver(const RasterGrid& dem, BoundarySet boundaries,
                                         SolverConfig cfg, SolverState initial)
    : dem_(dem),
      boundaries_(std::move(boundaries)),
      cfg_(cfg),
      state_(std::move(initial)),
      nrows_(dem.nrows()),
      ncols_(dem.ncols()),
      dx_(dem.cellsize()) {
    cfg_.validate();
    require_aligned(boundaries_);
    const auto& g = dem.geometry();
    if (state_.h.size() != g.cell_count() ||
        state_.qx.size() != static_cast<std::size_t>(nrows_) * (ncols_ + 1) ||
        state_.qy.size() != static_cast<std::size_t>(nrows_ + 1) * ncols_)
        throw AlignmentError("solver state does not match the DEM");
    for (const auto& e : boundaries_.entries) {
        if (!g.contains(e.cell) || dem.is_nodata(e.cell))
            throw IndexError("boundary '" + e.label + "' is outside the valid DEM");
    }
    bed_.resize(g.cell_count());
    valid_.resize(g.cell_count());
    for (std::size_t i = 0; i < bed_.size(); ++i) {
        valid_[i] = !dem.is_nodata(i);
        bed_[i] = valid_[i] ? dem[i] : std::numeric_limits<double>::infinity();
        if (!valid_[i]) state_.h[i] = 0.0;
        if (state_.h[i] < 0.0 || !std::isfinite(state_.h[i]))
            throw DomainError("initial depth must be finite and non-negative");
    }
    limit_.assign(g.cell_count(), 1.0);
}

double LocalInertialSolver::stable_dt() const {
    double hmax = 0.0;
    const auto n = static_cast<std::ptrdiff_t>(state_.h.size());
    const double* h = state_.h.data();
#pragma omp parallel for reduction(max : hmax) schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) hmax = std::max(hmax, h[i]);
    if (hmax <= 0.0) return cfg_.dt_max;
    return std::min(cfg_.dt_max, cfg_.alpha * dx_ / std::sqrt(cfg_.g * hmax));
}

void LocalInertialSolver::add_inflows(double dt) {
    const double area = dx_ * dx_;
    for (const auto& e : boundaries_.entries) {
        const double q = e.hydrograph.value_at(state_.t);
        state_.h[dem_.geometry().linear(e.cell)] += q * dt / area;
        state_.inflow_volume += q * dt;
    }
}

void LocalInertialSolver::advance(double dt) {
    const int nr = nrows_, nc = ncols_;
    const std::size_t sx = static_cast<std::size_t>(nc) + 1;
    const double dx = dx_, g = cfg_.g, n2 = cfg_.manning_n * cfg_.manning_n;
    const double floor = cfg_.depth_floor;
    const double* z = bed_.data();
    const unsigned char* ok = valid_.data();
    double* h = state_.h.data();
    double* qx = state_.qx.data();
    double* qy = state_.qy.data();
    double* lim = limit_.data();
    const auto out_edge = cfg_.outflow_edge;
    const double fixed_slope = cfg_.outfall_slope;
    auto edge_slope = [&](std::size_t edge_cell, std::size_t inner_cell, bool inner_ok) {
        if (fixed_slope > 0.0) return fixed_slope;
        double s = inner_ok ? (z[inner_cell] - z[edge_cell]) / dx : 0.0;
        return std::max(s, 1e-4);
    };

#pragma omp parallel
    {
        // x faces
#pragma omp for schedule(static)
        for (int r = 0; r < nr; ++r) {
            const std::size_t row = static_cast<std::size_t>(r) * nc;
            double* qrow = qx + static_cast<std::size_t>(r) * sx;
            for (int c = 1; c < nc; ++c) {
                const std::size_t a = row + c - 1, b = row + c;
                qrow[c] = (ok[a] && ok[b])
                              ? interior_face(qrow[c], z[a], h[a], z[b], h[b], dx, floor, g, n2, dt)
                              : 0.0;
            }
            if (out_edge == Edge::west && ok[row]) {
                const double s = edge_slope(row, row + 1, nc > 1 && ok[row + 1]);
                qrow[0] = -outfall_face(-qrow[0], h[row], s, floor, g, n2, dt);
            } else {
                qrow[0] = 0.0;
            }
            const std::size_t last = row + nc - 1;
            if (out_edge == Edge::east && ok[last]) {
                const double s = edge_slope(last, last - 1, nc > 1 && ok[last - 1]);
                qrow[nc] = outfall_face(qrow[nc], h[last], s, floor, g, n2, dt);
            } else {
                qrow[nc] = 0.0;
            }
        }
        // y faces
#pragma omp for schedule(static)
        for (int f = 0; f <= nr; ++f) {
            double* qrow = qy + static_cast<std::size_t>(f) * nc;
            if (f == 0 || f == nr) {
                const bool open = (f == 0) ? out_edge == Edge::north : out_edge == Edge::south;
                const int r = (f == 0) ? 0 : nr - 1;
                const int rin = (f == 0) ? 1 : nr - 2;
                for (int c = 0; c < nc; ++c) {
                    const std::size_t e = static_cast<std::size_t>(r) * nc + c;
                    if (!open || !ok[e]) {
                        qrow[c] = 0.0;
                        continue;
                    }
                    const std::size_t in = static_cast<std::size_t>(std::max(rin, 0)) * nc + c;
                    const double s = edge_slope(e, in, nr > 1 && ok[in]);
                    const double mag = outfall_face(f == 0 ? -qrow[c] : qrow[c], h[e], s, floor, g, n2, dt);
                    qrow[c] = (f == 0) ? -mag : mag;
                }
                continue;
            }
            const std::size_t top = static_cast<std::size_t>(f - 1) * nc;
            const std::size_t bot = static_cast<std::size_t>(f) * nc;
            for (int c = 0; c < nc; ++c) {
                const std::size_t a = top + c, b = bot + c;
                qrow[c] = (ok[a] && ok[b])
                              ? interior_face(qrow[c], z[a], h[a], z[b], h[b], dx, floor, g, n2, dt)
                              : 0.0;
            }
        }
        // outgoing-volume limiter
#pragma omp for schedule(static)
        for (int r = 0; r < nr; ++r) {
            const double* qxr = qx + static_cast<std::size_t>(r) * sx;
            const double* qn = qy + static_cast<std::size_t>(r) * nc;
            const double* qs = qy + static_cast<std::size_t>(r + 1) * nc;
            for (int c = 0; c < nc; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * nc + c;
                const double out = dt / dx *
                                   (std::max(0.0, -qxr[c]) + std::max(0.0, qxr[c + 1]) +
                                    std::max(0.0, -qn[c]) + std::max(0.0, qs[c]));
                lim[i] = (out > h[i]) ? h[i] / out : 1.0;
            }
        }
#pragma omp for schedule(static)
        for (int r = 0; r < nr; ++r) {
            double* qxr = qx + static_cast<std::size_t>(r) * sx;
            const std::size_t row = static_cast<std::size_t>(r) * nc;
            for (int c = 0; c <= nc; ++c) {
                const double q = qxr[c];
                if (q > 0.0 && c > 0) qxr[c] = q * lim[row + c - 1];
                else if (q < 0.0 && c < nc) qxr[c] = q * lim[row + c];
            }
        }
#pragma omp for schedule(static)
        for (int f = 0; f <= nr; ++f) {
            double* qrow = qy + static_cast<std::size_t>(f) * nc;
            for (int c = 0; c < nc; ++c) {
                const double q = qrow[c];
                if (q > 0.0 && f > 0) qrow[c] = q * lim[static_cast<std::size_t>(f - 1) * nc + c];
                else if (q < 0.0 && f < nr) qrow[c] = q * lim[static_cast<std::size_t>(f) * nc + c];
            }
        }
        // continuity
#pragma omp for schedule(static)
        for (int r = 0; r < nr; ++r) {
            const double* qxr = qx + static_cast<std::size_t>(r) * sx;
            const double* qn = qy + static_cast<std::size_t>(r) * nc;
            const double* qs = qy + static_cast<std::size_t>(r + 1) * nc;
            for (int c = 0; c < nc; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * nc + c;
                if (!ok[i]) continue;
                const double v = h[i] + dt / dx * ((qxr[c] - qxr[c + 1]) + (qn[c] - qs[c]));
                h[i] = v > 0.0 ? v : (v < 0.0 ? 0.0 : v);
            }
        }
    }

    // Outflow through the open edge, summed in fixed order.
    if (out_edge) {
        double q = 0.0;
        switch (*out_edge) {
            case Edge::west:
                for (int r = 0; r < nr; ++r) q -= qx[static_cast<std::size_t>(r) * sx];
                break;
            case Edge::east:
                for (int r = 0; r < nr; ++r) q += qx[static_cast<std::size_t>(r) * sx + nc];
                break;
            case Edge::north:
                for (int c = 0; c < nc; ++c) q -= qy[c];
                break;
            case Edge::south:
                for (int c = 0; c < nc; ++c) q += qy[static_cast<std::size_t>(nr) * nc + c];
                break;
        }
        state_.outflow_volume += q * dx * dt;
    }
    add_inflows(dt);
    state_.t += dt;
    check_finite();
}

void LocalInertialSolver::advance_reference(double dt) {
    const int nr = nrows_, nc = ncols_;
    const double dx = dx_, g = cfg_.g, n2 = cfg_.manning_n * cfg_.manning_n;
    const double floor = cfg_.depth_floor;
    const auto& geo = dem_.geometry();
    auto cell = [&](int r, int c) { return geo.linear({r, c}); };
    auto QX = [&](int r, int c) -> double& {
        return state_.qx[static_cast<std::size_t>(r) * (nc + 1) + c];
    };
    auto QY = [&](int f, int c) -> double& { return state_.qy[static_cast<std::size_t>(f) * nc + c]; };
    auto& h = state_.h;
    auto slope_at = [&](int r, int c, int rin, int cin) {
        if (cfg_.outfall_slope > 0.0) return cfg_.outfall_slope;
        bool inner = rin >= 0 && rin < nr && cin >= 0 && cin < nc && valid_[cell(rin, cin)];
        double s = inner ? (bed_[cell(rin, cin)] - bed_[cell(r, c)]) / dx : 0.0;
        return std::max(s, 1e-4);
    };

    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c <= nc; ++c) {
            double& q = QX(r, c);
            if (c == 0 || c == nc) {
                const int ce = (c == 0) ? 0 : nc - 1;
                const bool open = (c == 0) ? cfg_.outflow_edge == Edge::west
                                           : cfg_.outflow_edge == Edge::east;
                if (!open || !valid_[cell(r, ce)]) {
                    q = 0.0;
                } else {
                    const double s = slope_at(r, ce, r, c == 0 ? 1 : nc - 2);
                    const double mag = outfall_face(c == 0 ? -q : q, h[cell(r, ce)], s, floor, g, n2, dt);
                    q = (c == 0) ? -mag : mag;
                }
                continue;
            }
            const auto a = cell(r, c - 1), b = cell(r, c);
            q = (valid_[a] && valid_[b])
                    ? interior_face(q, bed_[a], h[a], bed_[b], h[b], dx, floor, g, n2, dt)
                    : 0.0;
        }
    }
    for (int f = 0; f <= nr; ++f) {
        for (int c = 0; c < nc; ++c) {
            double& q = QY(f, c);
            if (f == 0 || f == nr) {
                const int re = (f == 0) ? 0 : nr - 1;
                const bool open = (f == 0) ? cfg_.outflow_edge == Edge::north
                                           : cfg_.outflow_edge == Edge::south;
                if (!open || !valid_[cell(re, c)]) {
                    q = 0.0;
                } else {
                    const double s = slope_at(re, c, f == 0 ? 1 : nr - 2, c);
                    const double mag = outfall_face(f == 0 ? -q : q, h[cell(re, c)], s, floor, g, n2, dt);
                    q = (f == 0) ? -mag : mag;
                }
                continue;
            }
            const auto a = cell(f - 1, c), b = cell(f, c);
            q = (valid_[a] && valid_[b])
                    ? interior_face(q, bed_[a], h[a], bed_[b], h[b], dx, floor, g, n2, dt)
                    : 0.0;
        }
    }
    std::vector<double> lim(h.size(), 1.0);
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            const double out = dt / dx *
                               (std::max(0.0, -QX(r, c)) + std::max(0.0, QX(r, c + 1)) +
                                std::max(0.0, -QY(r, c)) + std::max(0.0, QY(r + 1, c)));
            const auto i = cell(r, c);
            lim[i] = (out > h[i]) ? h[i] / out : 1.0;
        }
    }
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c <= nc; ++c) {
            double& q = QX(r, c);
            if (q > 0.0 && c > 0) q *= lim[cell(r, c - 1)];
            else if (q < 0.0 && c < nc) q *= lim[cell(r, c)];
        }
    }
    for (int f = 0; f <= nr; ++f) {
        for (int c = 0; c < nc; ++c) {
            double& q = QY(f, c);
            if (q > 0.0 && f > 0) q *= lim[cell(f - 1, c)];
            else if (q < 0.0 && f < nr) q *= lim[cell(f, c)];
        }
    }
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            const auto i = cell(r, c);
            if (!valid_[i]) continue;
            const double v = h[i] + dt / dx * ((QX(r, c) - QX(r, c + 1)) + (QY(r, c) - QY(r + 1, c)));
            h[i] = v > 0.0 ? v : (v < 0.0 ? 0.0 : v);
        }
    }
    if (cfg_.outflow_edge) {
        double q = 0.0;
        switch (*cfg_.outflow_edge) {
            case Edge::west: for (int r = 0; r < nr; ++r) q -= QX(r, 0); break;
            case Edge::east: for (int r = 0; r < nr; ++r) q += QX(r, nc); break;
            case Edge::north: for (int c = 0; c < nc; ++c) q -= QY(0, c); break;
            case Edge::south: for (int c = 0; c < nc; ++c) q += QY(nr, c); break;
        }
        state_.outflow_volume += q * dx * dt;
    }
    add_inflows(dt);
    state_.t += dt;
    check_finite();
}

void LocalInertialSolver::check_finite() const {
    for (std::size_t i = 0; i < state_.h.size(); ++i) {
        if (!std::isfinite(state_.h[i])) {
            auto c = dem_.geometry().cell(i);
            std::ostringstream ss;
            ss << "numerical blow-up: depth at cell (" << c.row << ", " << c.col
               << ") is not finite at t = " << state_.t << " s";
            throw NumericalError(ss.str());
        }
    }
}

double stable_dt(const SolverState& state, const RasterGrid& dem, const SolverConfig& cfg) {
    double hmax = 0.0;
    for (std::size_t i = 0; i < state.h.size(); ++i)
        if (!dem.is_nodata(i)) hmax = std::max(hmax, state.h[i]);
    if (hmax <= 0.0) return cfg.dt_max;
    return std::min(cfg.dt_max, cfg.alpha * dem.cellsize() / std::sqrt(cfg.g * hmax));
}

SolverState step(const SolverState& state, const RasterGrid& dem, const BoundarySet& boundaries,
                 const SolverConfig& cfg, double dt) {
    if (!(dt > 0.0)) throw DomainError("time step must be positive");
    LocalInertialSolver solver(dem, boundaries, cfg, state);
    solver.advance(dt);
    return solver.state();
}

ScenarioRun run_scenario(const RasterGrid& dem, const BoundarySet& boundaries,
                         const SolverConfig& cfg, std::string dem_id, std::string boundary_id) {
    cfg.validate();
    const double ratio = cfg.duration / cfg.output_interval;
    const auto outputs = static_cast<long long>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(outputs)) > 1e-9 * std::max(1.0, ratio))
        throw DomainError("duration must be a multiple of output_interval");

    const auto wall0 = std::chrono::steady_clock::now();
    LocalInertialSolver solver(dem, boundaries, cfg);
    ScenarioRun run;
    run.dem_id = std::move(dem_id);
    run.boundary_id = std::move(boundary_id);
    const double storage0 = solver.state().stored_volume(dem);

    auto snapshot = [&](double t) {
        const auto& s = solver.state();
        run.times.push_back(t);
        run.depths.push_back(s.depth_raster(dem));
        MassLedgerEntry e;
        e.time = t;
        e.inflow = s.inflow_volume;
        e.outflow = s.outflow_volume;
        e.storage = s.stored_volume(dem);
        const double imbalance = std::abs(e.inflow - e.outflow - (e.storage - storage0));
        e.rel_error = e.inflow > 0.0 ? imbalance / e.inflow : imbalance;
        run.mass_ledger.push_back(e);
    };

    snapshot(0.0);
    for (long long k = 1; k <= outputs; ++k) {
        const double t_out = static_cast<double>(k) * cfg.output_interval;
        while (t_out - solver.state().t > 1e-9 * t_out) {
            const double dt_stable = solver.stable_dt();
            if (dt_stable < cfg.dt_min) {
                std::ostringstream ss;
                ss << "time step collapsed to " << dt_stable << " s at t = " << solver.state().t;
                throw InstabilityError(ss.str());
            }
            const double remaining = t_out - solver.state().t;
            solver.advance(std::min(dt_stable, remaining));
        }
        snapshot(t_out);
    }
    run.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    return run;
}

void write_scenario(const std::string& dir, const ScenarioRun& run) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["dem_id"] = run.dem_id;
    manifest["boundary_id"] = run.boundary_id;
    manifest["times"] = run.times;
    std::vector<std::string> files;
    for (std::size_t i = 0; i < run.times.size(); ++i) {
        std::string name = "depth_" + time_tag(run.times[i]) + ".asc";
        write_ascii_grid_file((fs::path(dir) / name).string(), run.depths[i]);
        files.push_back(name);
    }
    manifest["files"] = files;
    std::ofstream(fs::path(dir) / "run.json") << manifest.dump(2) << '\n';

    std::ofstream ledger(fs::path(dir) / "mass_ledger.csv");
    ledger << "time_s,inflow_m3,outflow_m3,storage_m3,rel_error\n" << std::setprecision(12);
    for (const auto& e : run.mass_ledger)
        ledger << e.time << ',' << e.inflow << ',' << e.outflow << ',' << e.storage << ','
               << e.rel_error << '\n';
}

ScenarioRun read_scenario(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "run.json");
    if (!in) throw ManifestError("no scenario manifest in '" + dir + "' (run `simulate` first)");
    nlohmann::json manifest;
    try {
        in >> manifest;
        ScenarioRun run;
        run.dem_id = manifest.at("dem_id").get<std::string>();
        run.boundary_id = manifest.at("boundary_id").get<std::string>();
        run.times = manifest.at("times").get<std::vector<double>>();
        for (const auto& f : manifest.at("files"))
            run.depths.push_back(read_ascii_grid_file((fs::path(dir) / f.get<std::string>()).string()));
        if (run.depths.size() != run.times.size())
            throw ManifestError(dir + ": times and depth files differ in count");
        return run;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(dir + "/run.json: " + e.what());
    }
}

}  // namespace floodcnn
