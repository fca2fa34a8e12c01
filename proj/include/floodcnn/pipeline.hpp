#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "floodcnn/config.hpp"
#include "floodcnn/dataset.hpp"
#include "floodcnn/evalmetrics.hpp"
#include "floodcnn/hydrosolver.hpp"
#include "floodcnn/hyperopt.hpp"
#include "floodcnn/nnet.hpp"
#include "floodcnn/svrkrig.hpp"

namespace floodcnn {

// DEM variant a pipeline runs on. `defended` embeds the configured defence
// set once, on load.
enum class Variant { plain, defended };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

enum class ModelKind { cnn, svr };
std::string model_name(ModelKind k);
ModelKind parse_model(const std::string& name);

/// Everything a command needs: the parsed configuration, the variant and
/// the output root. Artifacts of a variant live under `root/<variant>/`.
struct Context {
    RunConfig cfg;
    Variant variant = Variant::plain;
    std::filesystem::path root;
    std::string command = "floodcnn";
    bool deterministic = false;
    bool verbose = false;

    std::filesystem::path dir() const { return root / variant_name(variant); }
    std::filesystem::path sim_dir(const std::string& event) const { return dir() / "sim" / event; }
    std::filesystem::path pred_dir(const std::string& event, ModelKind k) const {
        return dir() / "pred" / event / model_name(k);
    }
    std::filesystem::path eval_dir(const std::string& event, ModelKind k) const {
        return dir() / "eval" / event / model_name(k);
    }
    std::filesystem::path dataset_stem() const { return dir() / "dataset" / "train"; }
    std::filesystem::path cnn_dir() const { return dir() / "cnn"; }
    std::filesystem::path svr_dir() const { return dir() / "svr"; }
};

// Output root defaults to the config's out_dir, resolved against the config.
Context make_context(RunConfig cfg, Variant variant, const std::optional<std::filesystem::path>& out,
                     std::string command);

RasterGrid load_dem(const Context& ctx);
std::vector<ControlPoint> load_control_points(const Context& ctx);

struct EventInput {
    std::string name;
    bool training = true;
    BoundarySet boundaries;
};
std::vector<EventInput> load_events(const Context& ctx, const RasterGrid& dem);
EventInput find_event(const Context& ctx, const RasterGrid& dem, const std::string& name);

// JSON sidecar naming the producing command, config hash and seed.
void write_stage_manifest(const std::filesystem::path& path, const Context& ctx,
                          const std::string& stage);

// ---------------------------------------------------------------- stages

enum class Stage { early, growing, peak, receding };
inline constexpr std::array<Stage, 4> all_stages = {Stage::early, Stage::growing, Stage::peak, Stage::receding};
std::string stage_name(Stage s);

// Snapshot indices of the four stages, from per-snapshot wet-cell counts:
// first wet, first at or before the peak reaching half the peak count, the
// peak (earliest maximum) and last wet. Throws DomainError if never wet.
struct StageIndices {
    std::size_t early = 0, growing = 0, peak = 0, receding = 0;
    std::size_t at(Stage s) const;
};
StageIndices select_stages(const std::vector<std::size_t>& wet_counts);
std::vector<std::size_t> wet_counts(const std::vector<RasterGrid>& maps, double tau);

// Reference depths screened with the wet/dry threshold, as the models see them.
std::vector<RasterGrid> threshold_maps(const std::vector<RasterGrid>& maps, double tau);

// ---------------------------------------------------------------- commands

void cmd_make_demo(const std::filesystem::path& out_dir, std::uint64_t seed);

struct SimulationSummary {
    std::string event;
    double wall_seconds = 0.0;
    double max_mass_error = 0.0;
    std::size_t snapshots = 0;
};
// Runs every configured event (or only `only` when given).
std::vector<SimulationSummary> cmd_simulate(const Context& ctx, const std::optional<std::string>& only = {});

// Training matrix from the simulated training events: normalized features,
// thresholded (and optionally pruned) targets.
Dataset cmd_build_dataset(const Context& ctx);
// Normalized features of any configured event, using the dataset normalizer.
FeatureMatrix event_features(const Context& ctx, const EventInput& event, const Normalizer& norm);

struct CnnTrainingSummary {
    std::size_t parameters = 0;
    int epochs = 0;
    int best_epoch = 0;
    double best_val_mse = 0.0;
    double initial_train_mse = 0.0;
    double wall_seconds = 0.0;
};
CnnTrainingSummary cmd_train_cnn(const Context& ctx);
// Same, with explicit network and training settings (used by the search).
CnnModel train_cnn(const Context& ctx, const Dataset& data, const NetSpec& net, const TrainConfig& train);

struct SvrTrainingSummary {
    std::size_t locations = 0;
    double max_kkt = 0.0;
    double wall_seconds = 0.0;
};
SvrTrainingSummary cmd_train_svr(const Context& ctx);

struct PredictionSummary {
    std::string event;
    ModelKind model = ModelKind::cnn;
    std::size_t maps = 0;
    double wall_seconds = 0.0;  // model load plus inference
};
PredictionSummary cmd_predict(const Context& ctx, ModelKind model, const std::string& event);

struct StageReport {
    Stage stage = Stage::early;
    std::size_t index = 0;
    double time = 0.0;
    MetricsReport metrics;
    double p99_error = 0.0;
    DescriptiveStats predicted_stats;
    std::size_t wet_reference = 0;
    std::size_t wet_predicted = 0;
};

struct EvaluationReport {
    std::vector<StageReport> stages;
    ControlPointScores control_points;
    std::vector<ControlPoint> points;
    StageIndices indices;
    std::vector<double> times;  // of the predicted maps
    double tau = default_depth_threshold;
};

// Scores predicted maps against the reference run: control-point series
// over the whole event plus the four stage snapshots. Stage indices come
// from the reference unless given. Reports, error maps and the stage maps
// are written under `out_dir` when it is non-empty.
EvaluationReport evaluate_maps(const std::vector<RasterGrid>& reference, const std::vector<double>& times,
                               const std::vector<RasterGrid>& predicted,
                               const std::vector<ControlPoint>& points, double tau,
                               const std::optional<StageIndices>& stages = {});
void write_evaluation(const std::filesystem::path& out_dir, const EvaluationReport& report,
                      const std::vector<RasterGrid>& reference, const std::vector<RasterGrid>& predicted);

EvaluationReport cmd_evaluate(const Context& ctx, ModelKind model, const std::string& event,
                              const std::optional<StageIndices>& stages = {});
// Generic form over two scenario directories.
EvaluationReport cmd_evaluate_dirs(const Context& ctx, const std::filesystem::path& reference,
                                   const std::filesystem::path& predicted, const std::filesystem::path& out_dir);

struct HyperoptSummary {
    std::string target;
    SearchResult result;
    std::optional<SvrParams> svr_params;  // chosen global SVR parameters
    std::string best_config_text;         // config lines reproducing the best trial
};
HyperoptSummary cmd_hyperopt(const Context& ctx);

struct BenchmarkResult {
    std::string event;
    double solver_seconds = 0.0;
    double inference_seconds = 0.0;
    double ratio = 0.0;  // solver over inference
    std::size_t snapshots = 0;
};
BenchmarkResult cmd_benchmark(const Context& ctx, const std::string& event);

}  // namespace floodcnn
