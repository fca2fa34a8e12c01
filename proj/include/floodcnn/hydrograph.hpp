#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "floodcnn/raster.hpp"

namespace floodcnn {

/// Uniformly sampled discharge series (m^3/s) at a boundary point. Time zero
/// is the series start; sample i sits at t0 + i * dt.
class Hydrograph {
public:
    static constexpr double default_step = 900.0;

    Hydrograph(std::vector<double> flows, double dt = default_step, double t0 = 0.0);

    double t0() const { return t0_; }
    double dt() const { return dt_; }
    std::size_t size() const { return flows_.size(); }
    std::span<const double> flows() const { return flows_; }
    double operator[](std::size_t i) const { return flows_[i]; }

    double time_of(std::size_t i) const { return t0_ + static_cast<double>(i) * dt_; }
    double duration() const { return static_cast<double>(flows_.size() - 1) * dt_; }
    double peak() const;
    std::size_t peak_index() const;

    // Linear interpolation; held constant outside the sampled range.
    double value_at(double t) const;

    friend bool operator==(const Hydrograph&, const Hydrograph&) = default;

private:
    double t0_;
    double dt_;
    std::vector<double> flows_;
};

// Rescale an observed series so that its peak becomes `peak_max`, keeping
// its shape: Q_n = Q_obs * peak_max / Q_max. Requires peak_max > Q_max > 0.
Hydrograph scale_hydrograph(const Hydrograph& obs, double peak_max);

// Linear interpolation onto a step of `dt_new`. Samples run from t0 while
// they stay inside the original span, so the end point is kept whenever the
// duration is a multiple of the new step.
Hydrograph resample_to_step(const Hydrograph& h, double dt_new);

// Single-peaked gamma-like curve used for synthetic events:
//   Q(t) = base + (peak - base) * (t/tp)^k * exp(k * (1 - t/tp)).
Hydrograph gamma_hydrograph(double base_flow, double peak_flow, double time_to_peak,
                            double shape, std::size_t samples, double dt = Hydrograph::default_step);

struct BoundaryEntry {
    std::string label;
    CellIndex cell;
    Hydrograph hydrograph;
};

/// Point inflows sharing one time base. `warnings` collects soft-constraint
/// notes raised at construction (for example a tributary out-peaking the
/// main river).
struct BoundarySet {
    std::vector<BoundaryEntry> entries;
    std::vector<std::string> warnings;

    std::size_t steps() const { return entries.empty() ? 0 : entries.front().hydrograph.size(); }
    double dt() const { return entries.empty() ? 0.0 : entries.front().hydrograph.dt(); }
    double duration() const { return entries.empty() ? 0.0 : entries.front().hydrograph.duration(); }
};

BoundarySet make_boundary_set(const RasterGrid& dem,
                              const std::vector<std::pair<std::string, CellIndex>>& points,
                              const std::vector<Hydrograph>& hydros);

// Throws AlignmentError unless every hydrograph shares dt, t0 and length.
void require_aligned(const BoundarySet& set);

// CSV with header `time_s,flow_m3s`.
void write_hydrograph_csv(const std::string& path, const Hydrograph& h);
Hydrograph read_hydrograph_csv(const std::string& path);

// Manifest lines: `<label> = <row> <col> <csv path>`; relative paths are
// resolved against the manifest's directory.
void write_boundary_manifest(const std::string& path, const BoundarySet& set,
                             const std::vector<std::string>& csv_paths);
BoundarySet read_boundary_manifest(const std::string& path, const RasterGrid& dem);

}  // namespace floodcnn
