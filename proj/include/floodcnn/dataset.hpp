#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "floodcnn/hydrograph.hpp"
#include "floodcnn/hydrosolver.hpp"
#include "floodcnn/matrix.hpp"
#include "floodcnn/raster.hpp"

namespace floodcnn {

inline constexpr double default_depth_threshold = 0.3;

enum class LagPadding { repeat_first, drop_rows };

struct FeatureSpec {
    int lags = 8;
    int upstream_count = 3;
    bool include_time = true;
    LagPadding padding = LagPadding::repeat_first;

    int width() const { return upstream_count * (lags + 1) + (include_time ? 1 : 0); }
    // Leading samples without a full lag history.
    std::size_t skipped_rows() const {
        return padding == LagPadding::drop_rows ? static_cast<std::size_t>(lags) : 0;
    }
};

// Per-column min-max scaling to [0, 1].
struct Normalizer {
    std::vector<double> min;
    std::vector<double> max;
};

struct FeatureMatrix {
    RowMatrix values;
    std::vector<std::string> col_names;
    std::optional<Normalizer> norm;
    std::vector<std::size_t> scenario_rows;  // samples contributed by each stacked scenario

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

/// Stacked thresholded depths. Column j holds DEM cell `cell_map[j]`
/// (row-major linear index); nodata cells have no column.
struct TargetMatrix {
    RowMatrix values;
    double threshold = default_depth_threshold;
    GridGeometry geometry;
    double nodata = RasterGrid::default_nodata;
    std::vector<std::size_t> cell_map;
    std::vector<std::size_t> dry_cells;  // valid cells pruned away; they read back as 0
    std::vector<std::size_t> scenario_rows;

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

struct Dataset {
    FeatureMatrix features;
    TargetMatrix targets;
};

enum class SplitMode { by_row, by_scenario };

struct SplitSpec {
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    SplitMode mode = SplitMode::by_row;
};

// out[i] = depths[i] when depths[i] > tau, else 0.
std::vector<double> threshold_depths(std::span<const double> depths, double tau = default_depth_threshold);

FeatureMatrix build_features(const BoundarySet& boundaries, const FeatureSpec& spec);
// Stacks scenarios in order; column layouts must agree.
FeatureMatrix stack_features(const std::vector<FeatureMatrix>& parts);

TargetMatrix build_targets(const ScenarioRun& run, double tau = default_depth_threshold);
// Aligns against the features of the same scenario, dropping leading
// snapshots when the feature spec drops lag-incomplete rows.
TargetMatrix build_targets(const ScenarioRun& run, double tau, const FeatureSpec& spec,
                           std::size_t feature_rows);
TargetMatrix stack_targets(const std::vector<TargetMatrix>& parts);
// Keeps only the columns wet in at least one row. Dropped cells read back as
// dry through the cell map.
TargetMatrix prune_dry_columns(const TargetMatrix& targets);
// Same column selection applied to another matrix (for example test targets).
TargetMatrix select_columns(const TargetMatrix& targets, const std::vector<std::size_t>& cell_map);

// Cells map for a DEM: every non-nodata cell in row-major order.
std::vector<std::size_t> valid_cell_map(const RasterGrid& dem);

RasterGrid unflatten(std::span<const double> row, const std::vector<std::size_t>& cell_map,
                     const GridGeometry& geometry, double nodata,
                     const std::vector<std::size_t>& dry_cells = {});
RasterGrid unflatten(const TargetMatrix& targets, std::size_t row);
std::vector<double> flatten(const RasterGrid& grid, const std::vector<std::size_t>& cell_map);

FeatureMatrix fit_normalizer(const FeatureMatrix& features);
FeatureMatrix apply_normalizer(const FeatureMatrix& features, const Normalizer& norm);

// Returns (train, validation).
std::pair<Dataset, Dataset> split(const FeatureMatrix& features, const TargetMatrix& targets,
                                  const SplitSpec& spec);
Dataset select_rows(const Dataset& data, const std::vector<std::size_t>& rows);

// Flat binary: 8-byte magic "FCMATRX1", u64 rows, u64 cols, row-major
// little-endian float64.
void write_matrix_binary(const std::string& path, const RowMatrix& m);
RowMatrix read_matrix_binary(const std::string& path);
void write_matrix_csv(const std::string& path, const RowMatrix& m,
                      const std::vector<std::string>& header = {});

// `<stem>.features.bin`, `<stem>.targets.bin` plus `<stem>.manifest.json`.
void write_dataset(const std::string& stem, const Dataset& data);
Dataset read_dataset(const std::string& stem);

}  // namespace floodcnn
