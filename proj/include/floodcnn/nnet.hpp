#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "floodcnn/dataset.hpp"
#include "floodcnn/matrix.hpp"
#include "floodcnn/nnet_layers.hpp"

namespace floodcnn {

struct NetSpec {
    int input_len = 28;
    std::vector<int> conv_filters = {32, 128};
    int kernel_size = 3;
    std::vector<int> dense_units = {32, 256, 512};
    int output_dim = 1;
    bool use_batchnorm = false;
    double dropout_rate = 0.0;

    void validate() const;
    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

struct TrainConfig {
    int batch_size = 10;
    nn::AdamSettings adam;
    int max_epochs = 200;
    int patience = 10;
    double min_delta = 1e-5;
    std::uint64_t seed = 0;
    bool verbose = false;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

/// Early-stopping bookkeeping: an epoch counts as an improvement when its
/// validation loss beats the best so far by more than min_delta.
class EarlyStopping {
public:
    EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

    // Returns true when training should stop after this epoch.
    bool update(int epoch, double val_loss);
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    bool improved() const { return improved_; }

private:
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int stale_ = 0;
    bool improved_ = false;
};

/// Conv1d stack followed by dense layers, regressing one depth per cell.
///
/// input (L x 1) -> [conv -> relu (-> batchnorm) (-> dropout)] x n_conv
///   -> flatten -> [dense -> relu] x n_dense -> dense (identity)
class CnnModel {
public:
    explicit CnnModel(NetSpec spec);
    CnnModel(const CnnModel& other);
    CnnModel& operator=(const CnnModel& other);
    CnnModel(CnnModel&&) noexcept = default;
    CnnModel& operator=(CnnModel&&) noexcept = default;

    const NetSpec& spec() const { return spec_; }
    std::vector<nn::Param> params();
    std::vector<nn::Buffer> buffers();
    std::size_t parameter_count();

    RowMatrix forward(const RowMatrix& batch, nn::Mode mode, nn::Rng* rng = nullptr);
    // Backpropagates d loss / d output through the last train-mode forward.
    void backward(const RowMatrix& grad_output);
    void zero_grad();

    std::vector<EpochLog> training_log;
    std::optional<double> initial_train_mse;

private:
    void build();

    NetSpec spec_;
    std::vector<std::unique_ptr<nn::Layer>> layers_;
};

// Fan-in scaled uniform weights, zero biases.
CnnModel init_model(const NetSpec& spec, std::uint64_t seed);

double loss_mse(const RowMatrix& pred, const RowMatrix& target);
// d MSE / d pred.
RowMatrix loss_mse_grad(const RowMatrix& pred, const RowMatrix& target);

// Gradient of the MSE loss for one batch; the model keeps the gradients in
// its parameters. Returns the loss.
double compute_gradients(CnnModel& model, const RowMatrix& batch, const RowMatrix& targets,
                         nn::Rng* rng);

// Mini-batch Adam with per-epoch shuffling and early stopping on the
// validation set. Returns the best-validation snapshot with its log.
CnnModel train(const CnnModel& model, const Dataset& train_set, const Dataset& val_set,
               const TrainConfig& cfg);

RowMatrix predict(CnnModel& model, const RowMatrix& features, std::size_t batch_rows = 256);

// Forward in inference mode, clamp negatives to zero, apply the depth
// threshold and map each row back onto the grid.
std::vector<RasterGrid> predict_depth_maps(CnnModel& model, const FeatureMatrix& features,
                                           const std::vector<std::size_t>& cell_map,
                                           const GridGeometry& geometry, double nodata,
                                           double tau = default_depth_threshold,
                                           const std::vector<std::size_t>& dry_cells = {});

void save_model(const std::string& path, CnnModel& model);
CnnModel load_model(const std::string& path);
// Fails with a ShapeError naming the first layer that disagrees with `expected`.
CnnModel load_model(const std::string& path, const NetSpec& expected);

void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace floodcnn
