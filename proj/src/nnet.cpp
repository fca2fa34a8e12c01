#include "floodcnn/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>

#include "floodcnn/error.hpp"

namespace floodcnn {

void NetSpec::validate() const {
    if (input_len < 1) throw DomainError("input_len must be positive");
    if (output_dim < 1) throw DomainError("output_dim must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw DomainError("kernel_size must be odd");
    if (conv_filters.empty() || dense_units.empty())
        throw DomainError("network needs at least one conv and one dense layer");
    for (int f : conv_filters)
        if (f < 1) throw DomainError("conv filter counts must be positive");
    for (int u : dense_units)
        if (u < 1) throw DomainError("dense widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must lie in [0, 1)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw DomainError("batch_size must be at least 1");
    if (patience < 1) throw DomainError("patience must be at least 1");
    if (max_epochs < 0) throw DomainError("max_epochs must be non-negative");
    if (!(adam.learning_rate > 0.0)) throw DomainError("learning rate must be positive");
}

bool EarlyStopping::update(int epoch, double val_loss) {
    improved_ = val_loss < best_ - min_delta_;
    if (improved_) {
        best_ = val_loss;
        best_epoch_ = epoch;
        stale_ = 0;
        return false;
    }
    return ++stale_ >= patience_;
}

// ---------------------------------------------------------------- model

CnnModel::CnnModel(NetSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    build();
}

CnnModel::CnnModel(const CnnModel& other)
    : training_log(other.training_log), initial_train_mse(other.initial_train_mse), spec_(other.spec_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

CnnModel& CnnModel::operator=(const CnnModel& other) {
    if (this != &other) {
        CnnModel tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void CnnModel::build() {
    const int len = spec_.input_len;
    int channels = 1;
    for (std::size_t i = 0; i < spec_.conv_filters.size(); ++i) {
        const int f = spec_.conv_filters[i];
        layers_.push_back(std::make_unique<nn::Conv1d>(len, channels, f, spec_.kernel_size,
                                                       "conv" + std::to_string(i + 1)));
        layers_.push_back(std::make_unique<nn::Relu>());
        if (spec_.use_batchnorm)
            layers_.push_back(std::make_unique<nn::BatchNorm>(f, "bn" + std::to_string(i + 1)));
        if (spec_.dropout_rate > 0.0) layers_.push_back(std::make_unique<nn::Dropout>(spec_.dropout_rate));
        channels = f;
    }
    int width = len * channels;
    for (std::size_t i = 0; i < spec_.dense_units.size(); ++i) {
        layers_.push_back(std::make_unique<nn::Dense>(width, spec_.dense_units[i], "dense" + std::to_string(i + 1)));
        layers_.push_back(std::make_unique<nn::Relu>());
        width = spec_.dense_units[i];
    }
    layers_.push_back(std::make_unique<nn::Dense>(width, spec_.output_dim, "output"));
}

std::vector<nn::Param> CnnModel::params() {
    std::vector<nn::Param> out;
    for (auto& l : layers_)
        for (auto& p : l->params()) out.push_back(p);
    return out;
}

std::vector<nn::Buffer> CnnModel::buffers() {
    std::vector<nn::Buffer> out;
    for (auto& l : layers_)
        for (auto& b : l->buffers()) out.push_back(b);
    return out;
}

std::size_t CnnModel::parameter_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += static_cast<std::size_t>(p.value->size());
    return n;
}

RowMatrix CnnModel::forward(const RowMatrix& batch, nn::Mode mode, nn::Rng* rng) {
    if (batch.cols() != spec_.input_len)
        throw ShapeError("input width " + std::to_string(batch.cols()) + " does not match the network input " +
                         std::to_string(spec_.input_len));
    RowMatrix x = batch;
    for (auto& l : layers_) x = l->forward(x, mode, rng);
    return x;
}

void CnnModel::backward(const RowMatrix& grad_output) {
    RowMatrix g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
}

void CnnModel::zero_grad() {
    for (auto& p : params()) p.grad->setZero();
}

CnnModel init_model(const NetSpec& spec, std::uint64_t seed) {
    CnnModel model(spec);
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto ps = model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps[i];
        if (p.batchnorm || p.name.ends_with(".bias")) continue;  // keep ones / zeros
        const double fan_in = static_cast<double>(p.value->rows());
        const bool output = p.name.starts_with("output.");
        const double limit = std::sqrt((output ? 3.0 : 6.0) / fan_in);
        for (Eigen::Index k = 0; k < p.value->size(); ++k) p.value->data()[k] = limit * unit(rng);
    }
    return model;
}

double loss_mse(const RowMatrix& pred, const RowMatrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ShapeError("prediction and target shapes differ");
    if (pred.size() == 0) throw ShapeError("empty prediction");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

RowMatrix loss_mse_grad(const RowMatrix& pred, const RowMatrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ShapeError("prediction and target shapes differ");
    return (2.0 / static_cast<double>(pred.size())) * (pred - target);
}

double compute_gradients(CnnModel& model, const RowMatrix& batch, const RowMatrix& targets, nn::Rng* rng) {
    RowMatrix pred = model.forward(batch, nn::Mode::train, rng);
    const double loss = loss_mse(pred, targets);
    model.backward(loss_mse_grad(pred, targets));
    return loss;
}

RowMatrix predict(CnnModel& model, const RowMatrix& features, std::size_t batch_rows) {
    RowMatrix out(features.rows(), model.spec().output_dim);
    const auto step = static_cast<Eigen::Index>(std::max<std::size_t>(batch_rows, 1));
    for (Eigen::Index r = 0; r < features.rows(); r += step) {
        const Eigen::Index n = std::min(step, features.rows() - r);
        out.middleRows(r, n) = model.forward(features.middleRows(r, n), nn::Mode::infer);
    }
    return out;
}

CnnModel train(const CnnModel& model, const Dataset& train_set, const Dataset& val_set,
               const TrainConfig& cfg) {
    cfg.validate();
    CnnModel current = model;
    current.training_log.clear();
    if (cfg.max_epochs == 0) return current;

    const auto& X = train_set.features.values;
    const auto& Y = train_set.targets.values;
    if (X.rows() != Y.rows() || X.rows() == 0) throw AlignmentError("training features/targets misaligned or empty");
    if (val_set.features.rows() == 0 || val_set.features.rows() != val_set.targets.rows())
        throw AlignmentError("validation set misaligned or empty");
    if (Y.cols() != current.spec().output_dim) throw ShapeError("targets do not match the network output width");

    nn::Rng rng(cfg.seed);
    auto params = current.params();
    std::vector<RowMatrix> m, v;
    for (auto& p : params) {
        m.push_back(RowMatrix::Zero(p.value->rows(), p.value->cols()));
        v.push_back(RowMatrix::Zero(p.value->rows(), p.value->cols()));
    }

    current.initial_train_mse = loss_mse(predict(current, X), Y);
    CnnModel best = current;
    EarlyStopping stopper(cfg.patience, cfg.min_delta);
    std::vector<EpochLog> log;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), 0);
    long long t = 0;
    RowMatrix xb, yb;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
            xb.resize(static_cast<Eigen::Index>(n), X.cols());
            yb.resize(static_cast<Eigen::Index>(n), Y.cols());
            for (std::size_t i = 0; i < n; ++i) {
                xb.row(i) = X.row(order[start + i]);
                yb.row(i) = Y.row(order[start + i]);
            }
            current.zero_grad();
            const double loss = compute_gradients(current, xb, yb, &rng);
            ++batch_index;
            if (!std::isfinite(loss))
                throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_index));
            loss_sum += loss * static_cast<double>(n);
            ++t;
            for (std::size_t k = 0; k < params.size(); ++k)
                nn::adam_update(params[k].value->data(), params[k].grad->data(), m[k].data(), v[k].data(),
                                static_cast<std::size_t>(params[k].value->size()), cfg.adam, t);
        }
        EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()),
                       loss_mse(predict(current, val_set.features.values), val_set.targets.values)};
        log.push_back(entry);
        if (cfg.verbose)
            std::cerr << "epoch " << epoch << "  train " << entry.train_mse << "  val " << entry.val_mse << '\n';
        const bool stop = stopper.update(epoch, entry.val_mse);
        if (stopper.improved()) best = current;
        if (stop) break;
    }
    best.training_log = std::move(log);
    return best;
}

std::vector<RasterGrid> predict_depth_maps(CnnModel& model, const FeatureMatrix& features,
                                           const std::vector<std::size_t>& cell_map,
                                           const GridGeometry& geometry, double nodata, double tau,
                                           const std::vector<std::size_t>& dry_cells) {
    if (cell_map.empty() || static_cast<int>(cell_map.size()) != model.spec().output_dim)
        throw ManifestError("cell map missing or inconsistent with the model output width");
    RowMatrix pred = predict(model, features.values);
    std::vector<RasterGrid> maps;
    maps.reserve(static_cast<std::size_t>(pred.rows()));
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(pred.cols()));
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
            const double v = std::max(pred(r, c), 0.0);
            row[static_cast<std::size_t>(c)] = v > tau ? v : 0.0;
        }
        maps.push_back(unflatten(row, cell_map, geometry, nodata, dry_cells));
    }
    return maps;
}

// ---------------------------------------------------------------- persistence

namespace {

constexpr char model_magic[8] = {'F', 'C', 'N', 'N', 'M', 'D', 'L', '1'};
constexpr std::uint32_t model_version = 1;

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw LoadError("model file truncated while reading " + what);
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
    const auto n = get<std::uint32_t>(in, what);
    if (n > 4096) throw LoadError("model file corrupt near " + what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw LoadError("model file truncated while reading " + what);
    return s;
}

void put_tensor(std::ostream& out, const std::string& name, const RowMatrix& m) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void get_tensor(std::istream& in, const std::string& expected_name, RowMatrix& dest) {
    const std::string name = get_string(in, expected_name);
    if (name != expected_name)
        throw ShapeError("layer mismatch: expected tensor '" + expected_name + "', file has '" + name + "'");
    const auto rows = get<std::uint64_t>(in, name);
    const auto cols = get<std::uint64_t>(in, name);
    if (rows != static_cast<std::uint64_t>(dest.rows()) || cols != static_cast<std::uint64_t>(dest.cols()))
        throw ShapeError("shape mismatch in layer '" + name + "': file " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", network " + std::to_string(dest.rows()) + "x" +
                         std::to_string(dest.cols()));
    in.read(reinterpret_cast<char*>(dest.data()), static_cast<std::streamsize>(dest.size() * sizeof(double)));
    if (!in) throw LoadError("model file truncated inside '" + name + "'");
}

NetSpec read_spec(std::istream& in) {
    NetSpec s;
    s.input_len = get<std::int32_t>(in, "spec");
    const auto nconv = get<std::uint32_t>(in, "spec");
    if (nconv > 64) throw LoadError("model file corrupt: conv layer count");
    s.conv_filters.resize(nconv);
    for (auto& f : s.conv_filters) f = get<std::int32_t>(in, "spec");
    s.kernel_size = get<std::int32_t>(in, "spec");
    const auto ndense = get<std::uint32_t>(in, "spec");
    if (ndense > 64) throw LoadError("model file corrupt: dense layer count");
    s.dense_units.resize(ndense);
    for (auto& u : s.dense_units) u = get<std::int32_t>(in, "spec");
    s.output_dim = get<std::int32_t>(in, "spec");
    s.use_batchnorm = get<std::uint8_t>(in, "spec") != 0;
    s.dropout_rate = get<double>(in, "spec");
    return s;
}

CnnModel read_model(std::istream& in, const NetSpec& spec) {
    CnnModel model(spec);
    for (auto& p : model.params()) get_tensor(in, p.name, *p.value);
    for (auto& b : model.buffers()) get_tensor(in, b.name, *b.value);
    const auto nlog = get<std::uint64_t>(in, "training log");
    if (nlog > 1'000'000) throw LoadError("model file corrupt: training log length");
    for (std::uint64_t i = 0; i < nlog; ++i) {
        EpochLog e;
        e.epoch = get<std::int32_t>(in, "training log");
        e.train_mse = get<double>(in, "training log");
        e.val_mse = get<double>(in, "training log");
        model.training_log.push_back(e);
    }
    return model;
}

}  // namespace

void save_model(const std::string& path, CnnModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write model '" + path + "'");
    const auto& s = model.spec();
    out.write(model_magic, sizeof model_magic);
    put<std::uint32_t>(out, model_version);
    put<std::int32_t>(out, s.input_len);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.conv_filters.size()));
    for (int f : s.conv_filters) put<std::int32_t>(out, f);
    put<std::int32_t>(out, s.kernel_size);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.dense_units.size()));
    for (int u : s.dense_units) put<std::int32_t>(out, u);
    put<std::int32_t>(out, s.output_dim);
    put<std::uint8_t>(out, s.use_batchnorm ? 1 : 0);
    put<double>(out, s.dropout_rate);
    for (auto& p : model.params()) put_tensor(out, p.name, *p.value);
    for (auto& b : model.buffers()) put_tensor(out, b.name, *b.value);
    put<std::uint64_t>(out, model.training_log.size());
    for (const auto& e : model.training_log) {
        put<std::int32_t>(out, e.epoch);
        put<double>(out, e.train_mse);
        put<double>(out, e.val_mse);
    }
    if (!out) throw DomainError("failed writing model '" + path + "'");
}

namespace {
NetSpec open_model(std::ifstream& in, const std::string& path) {
    if (!in) throw LoadError("cannot open model '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, model_magic, sizeof magic) != 0)
        throw LoadError("'" + path + "' is not a model file");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != model_version)
        throw LoadError("'" + path + "' has unsupported model version " + std::to_string(version));
    NetSpec spec = read_spec(in);
    try {
        spec.validate();
    } catch (const DomainError& e) {
        throw LoadError("'" + path + "' holds an invalid network spec: " + e.what());
    }
    return spec;
}
}  // namespace

CnnModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    NetSpec spec = open_model(in, path);
    return read_model(in, spec);
}

CnnModel load_model(const std::string& path, const NetSpec& expected) {
    std::ifstream in(path, std::ios::binary);
    (void)open_model(in, path);
    return read_model(in, expected);
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out << "epoch,train_mse,val_mse\n" << std::setprecision(10);
    for (const auto& e : log) out << e.epoch << ',' << e.train_mse << ',' << e.val_mse << '\n';
}

}  // namespace floodcnn
