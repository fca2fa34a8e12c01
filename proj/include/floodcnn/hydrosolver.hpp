#pragma once

#include <optional>
#include <string>
#include <vector>

#include "floodcnn/hydrograph.hpp"
#include "floodcnn/raster.hpp"

namespace floodcnn {

enum class Edge { north, south, east, west };

std::optional<Edge> parse_edge(const std::string& name);  // "none" -> nullopt
std::string edge_name(std::optional<Edge> e);

struct SolverConfig {
    double manning_n = 0.055;      // s m^-1/3, uniform
    double alpha = 0.7;            // time-step safety factor
    double g = 9.80665;
    double depth_floor = 1e-3;     // faces shallower than this carry no flux
    double output_interval = 900.0;
    double duration = 0.0;
    double dt_max = 10.0;          // used while the domain is dry
    double dt_min = 1e-6;          // below this the run is declared unstable
    // Free-outfall edge; every other edge is a closed wall.
    std::optional<Edge> outflow_edge;
    // Bed slope used by the outfall; 0 means the local bed gradient.
    double outfall_slope = 0.0;

    void validate() const;
};

/// Water depth on cells and unit discharge on faces.
///
/// qx has nrows x (ncols + 1) entries: face c of row r is the west side of
/// cell (r, c), positive flow runs east. qy has (nrows + 1) x ncols entries:
/// face r of column c is the north side of cell (r, c), positive flow runs
/// south.
struct SolverState {
    std::vector<double> h;
    std::vector<double> qx;
    std::vector<double> qy;
    double t = 0.0;
    double inflow_volume = 0.0;
    double outflow_volume = 0.0;

    static SolverState dry(const GridGeometry& g);
    RasterGrid depth_raster(const RasterGrid& dem) const;
    double stored_volume(const RasterGrid& dem) const;
};

struct MassLedgerEntry {
    double time = 0.0;
    double inflow = 0.0;
    double outflow = 0.0;
    double storage = 0.0;
    double rel_error = 0.0;
};

struct ScenarioRun {
    std::string dem_id;
    std::string boundary_id;
    std::vector<double> times;
    std::vector<RasterGrid> depths;
    std::vector<MassLedgerEntry> mass_ledger;
    double wall_seconds = 0.0;

    double max_mass_error() const;
};

/// Explicit local-inertial raster flood solver.
///
/// Face discharges follow the semi-implicit friction update
///   q' = (q - g h_f dt S) / (1 + g dt n^2 |q| / h_f^(7/3))
/// with h_f the flow depth across the face and S the water-surface slope.
/// Positivity of depth is kept by scaling the outgoing fluxes of any cell
/// that would otherwise be over-drained. `advance` is the OpenMP kernel;
/// `advance_reference` is the serial cell-by-cell version used in tests.
class LocalInertialSolver {
public:
    LocalInertialSolver(const RasterGrid& dem, BoundarySet boundaries, SolverConfig cfg);
    LocalInertialSolver(const RasterGrid& dem, BoundarySet boundaries, SolverConfig cfg,
                        SolverState initial);

    const SolverState& state() const { return state_; }
    const RasterGrid& dem() const { return dem_; }
    const SolverConfig& config() const { return cfg_; }

    double stable_dt() const;
    void advance(double dt);
    void advance_reference(double dt);

private:
    void check_finite() const;
    void add_inflows(double dt);

    RasterGrid dem_;
    BoundarySet boundaries_;
    SolverConfig cfg_;
    SolverState state_;
    int nrows_, ncols_;
    double dx_;
    std::vector<double> bed_;          // nodata cells hold +inf
    std::vector<unsigned char> valid_;
    // workspace
    std::vector<double> limit_;
};

double stable_dt(const SolverState& state, const RasterGrid& dem, const SolverConfig& cfg);
SolverState step(const SolverState& state, const RasterGrid& dem, const BoundarySet& boundaries,
                 const SolverConfig& cfg, double dt);

// Adaptive sub-stepping between output instants, snapshotting depths at
// t = 0, output_interval, ... , duration.
ScenarioRun run_scenario(const RasterGrid& dem, const BoundarySet& boundaries,
                         const SolverConfig& cfg, std::string dem_id = "dem",
                         std::string boundary_id = "boundaries");

// `<dir>/depth_<t>.asc`, `<dir>/mass_ledger.csv` and `<dir>/run.json`.
void write_scenario(const std::string& dir, const ScenarioRun& run);
ScenarioRun read_scenario(const std::string& dir);

}  // namespace floodcnn
