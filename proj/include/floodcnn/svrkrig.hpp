#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "floodcnn/dataset.hpp"
#include "floodcnn/matrix.hpp"
#include "floodcnn/raster.hpp"

namespace floodcnn {

// ---------------------------------------------------------------------------
// epsilon-SVR

struct SvrParams {
    double cost = 25.296;
    double epsilon = 0.031;
    double gamma = 0.016;

    void validate() const;
    friend bool operator==(const SvrParams&, const SvrParams&) = default;
};

struct SvrTrainingState {
    std::vector<double> slack_upper;  // xi_i: target above the tube
    std::vector<double> slack_lower;  // xi_i*: target below the tube
    std::vector<std::size_t> support_rows;  // training row of each support vector
    double kkt_violation = 0.0;
    long iterations = 0;
};

/// Kernel expansion f(x) = sum_i dual_i K(sv_i, x) + bias with an RBF kernel.
struct SvrModel {
    RowMatrix support_vectors;
    std::vector<double> dual_coeffs;  // alpha_i - alpha_i*
    double bias = 0.0;
    SvrParams params;
    CellIndex location;
    SvrTrainingState state;

    double predict(const double* x, std::size_t n) const;
};

struct SvrSolverSettings {
    double tolerance = 1e-3;
    long max_iterations = 1'000'000;
};

double rbf_kernel(const double* a, const double* b, std::size_t n, double gamma);
// K[i][j] = exp(-gamma |a_i - b_j|^2).
RowMatrix rbf_kernel_matrix(const RowMatrix& a, const RowMatrix& b, double gamma);

// Pairwise (SMO) solver for the epsilon-SVR dual. Throws ConvergenceError when
// the iteration cap is reached before the KKT gap drops below tolerance.
SvrModel train_svr(const RowMatrix& features, std::span<const double> targets,
                   const SvrParams& params, CellIndex location = {},
                   const SvrSolverSettings& settings = {});
// Same, with the training kernel matrix precomputed (shared across locations).
SvrModel train_svr(const RowMatrix& features, const RowMatrix& kernel,
                   std::span<const double> targets, const SvrParams& params,
                   CellIndex location = {}, const SvrSolverSettings& settings = {});

std::vector<double> predict_svr(const SvrModel& model, const RowMatrix& features);

// Largest per-sample violation of the epsilon-tube optimality conditions on
// the training set, given the model's own training predictions.
double kkt_residual(const SvrModel& model, const RowMatrix& features,
                    std::span<const double> targets);

// Dual objective (to maximise) of beta = alpha - alpha* for kernel K:
//   -1/2 beta' K beta - eps sum |beta| + sum z beta.
double svr_dual_objective(const RowMatrix& kernel, std::span<const double> beta,
                          std::span<const double> targets, double epsilon);

// Binary archive of per-location models.
void write_svr_archive(const std::string& path, const std::vector<SvrModel>& models);
std::vector<SvrModel> read_svr_archive(const std::string& path);

// ---------------------------------------------------------------------------
// Regression kriging

struct Variogram {
    double nugget = 0.0;
    double sill = 1.0;    // total sill, nugget included
    double range = 1.0;   // metres; gamma(h) = nugget + (sill - nugget)(1 - exp(-h / range))

    double gamma(double h) const;
    // Covariance of the stationary process; cov(0) = sill.
    double covariance(double h) const;
};

struct EmpiricalVariogram {
    std::vector<double> lag;
    std::vector<double> gamma;
    std::vector<std::size_t> pairs;
};

struct KrigingPoint {
    CellIndex cell;
    double x = 0.0;
    double y = 0.0;
    double elevation = 0.0;
    double value = 0.0;
    double residual = 0.0;
};

struct KrigingModel {
    double intercept = 0.0;
    double slope = 0.0;
    bool mean_only_trend = false;  // elevation carried no signal
    bool zero_residuals = false;
    bool jittered = false;         // kriging system regularised
    Variogram variogram;
    std::vector<KrigingPoint> sample_points;
    // Dual weights of the ordinary-kriging system; the last entry belongs to
    // the unbiasedness constraint.
    std::vector<double> weights;

    double trend(double elevation) const { return intercept + slope * elevation; }
    // Unclamped estimate at a location.
    double estimate(double x, double y, double elevation) const;
};

// Semivariances of values at (x, y), in `bins` log-spaced distance classes.
EmpiricalVariogram empirical_variogram(const std::vector<double>& x, const std::vector<double>& y,
                                       const std::vector<double>& values, int bins = 12);
// Weighted least-squares exponential fit (pair count over squared lag).
Variogram fit_exponential(const EmpiricalVariogram& ev);

KrigingModel fit_rk(const RasterGrid& dem, const std::vector<std::pair<CellIndex, double>>& points);
// Re-solves the ordinary-kriging weights for the model's current variogram.
void solve_kriging_weights(KrigingModel& model);
// Trend plus kriged residual at each valid cell, negatives clamped to zero,
// then the depth threshold applied.
RasterGrid interpolate_rk(const KrigingModel& model, const RasterGrid& dem,
                          double tau = default_depth_threshold);
// Without clamping or threshold.
RasterGrid interpolate_rk_raw(const KrigingModel& model, const RasterGrid& dem);

// ---------------------------------------------------------------------------
// Pipeline

// `wet_mask` flags cells wet in at least one training snapshot. About 90% of
// the locations are drawn from wet cells, the rest from all valid cells.
std::vector<CellIndex> sample_locations(const RasterGrid& dem, const std::vector<unsigned char>& wet_mask,
                                        std::size_t n = 500, std::uint64_t seed = 0);

struct SvrPipelineResult {
    std::vector<CellIndex> locations;
    std::vector<SvrModel> models;
    std::vector<RasterGrid> rasters;           // one per prediction row
    std::vector<double> point_predictions;     // rows x locations, row-major
    std::vector<KrigingModel> kriging;         // per row, without the point lists
};

// Trains one SVR per sampled location on (train.features, train.targets) and
// interpolates the predictions for every row of `features` with regression
// kriging. Rows map to time snapshots of the evaluated event.
SvrPipelineResult run_svr_pipeline(const Dataset& train, const FeatureMatrix& features,
                                   const RasterGrid& dem, std::size_t n_locations,
                                   const SvrParams& params, std::uint64_t seed,
                                   double tau = default_depth_threshold);

// Cells wet in at least one training row.
std::vector<unsigned char> training_wet_mask(const TargetMatrix& targets, const RasterGrid& dem);

// Point predictions of trained models for every feature row, each row kriged
// onto the grid.
SvrPipelineResult predict_svr_maps(const std::vector<SvrModel>& models, const FeatureMatrix& features,
                                   const RasterGrid& dem, double tau = default_depth_threshold);

// Train models at given locations (used by the pipeline and by the global
// parameter search).
std::vector<SvrModel> train_svr_locations(const Dataset& train, const std::vector<CellIndex>& locations,
                                          const SvrParams& params,
                                          const SvrSolverSettings& settings = {});

}  // namespace floodcnn
