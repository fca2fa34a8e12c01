#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "floodcnn/raster.hpp"

namespace floodcnn {

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
};

/// Scores of one predicted map against its reference. Ratios whose
/// denominator is zero are left empty ("undefined"), never reported as 0.
struct MetricsReport {
    double rmse = 0.0;
    std::optional<double> nse;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    Confusion confusion;
    std::size_t n = 0;
    std::string notes;
};

struct DescriptiveStats {
    double max = 0.0;
    double mean = 0.0;
    double std = 0.0;
};

struct ControlPoint {
    std::string label;
    CellIndex cell;
};

double rmse(std::span<const double> observed, std::span<const double> predicted);
// Throws DomainError when the observed series is constant.
double nse(std::span<const double> observed, std::span<const double> predicted);
std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall);

// Wet means depth > tau. Counts run over cells that are valid in both grids.
MetricsReport confusion_scores(const RasterGrid& reference, const RasterGrid& predicted,
                               double tau = 0.3);

RasterGrid error_map(const RasterGrid& reference, const RasterGrid& predicted);
// Nearest-rank percentile over valid cells, p in (0, 100].
double percentile_error(const RasterGrid& errors, double p = 99.0);
// Over valid cells, dry cells counting as zero depth; population std.
DescriptiveStats descriptive_stats(const RasterGrid& raster);

// One series per point, each screened with the depth threshold.
std::vector<std::vector<double>> control_point_series(const std::vector<RasterGrid>& maps,
                                                      const std::vector<ControlPoint>& points,
                                                      double tau = 0.3);

struct ControlPointScores {
    std::vector<double> rmse;
    std::vector<std::optional<double>> nse;  // empty where the reference series is constant
    double mean_rmse = 0.0;
    std::optional<double> mean_nse;          // over points with a defined NSE
    std::size_t undefined_nse = 0;
};

ControlPointScores score_control_points(const std::vector<RasterGrid>& reference,
                                        const std::vector<RasterGrid>& predicted,
                                        const std::vector<ControlPoint>& points, double tau = 0.3);

// Control points file: `label,row,col` per line after a header.
std::vector<ControlPoint> read_control_points(const std::string& path);
void write_control_points(const std::string& path, const std::vector<ControlPoint>& points);

}  // namespace floodcnn
