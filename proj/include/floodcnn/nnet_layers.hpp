#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "floodcnn/matrix.hpp"

namespace floodcnn::nn {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

// A trainable tensor and its gradient, both stored as row-major matrices.
struct Param {
    std::string name;
    RowMatrix* value;
    RowMatrix* grad;
    bool batchnorm;
};

// Non-trainable state that still has to be persisted (running statistics).
struct Buffer {
    std::string name;
    RowMatrix* value;
};

/// Layer interface. Activations are `batch x features` matrices; sequence
/// layers lay a length-L, C-channel signal out position-major, so feature
/// `l * C + c` is channel c at position l.
class Layer {
public:
    virtual ~Layer() = default;
    virtual RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) = 0;
    // Consumes the caches of the last train-mode forward; accumulates into
    // parameter gradients (which the caller zeroes) and returns d loss / d x.
    virtual RowMatrix backward(const RowMatrix& grad_out) = 0;
    virtual std::vector<Param> params() { return {}; }
    virtual std::vector<Buffer> buffers() { return {}; }
    virtual std::string kind() const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
};

class Dense final : public Layer {
public:
    Dense(int in, int out, std::string name);
    RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) override;
    RowMatrix backward(const RowMatrix& grad_out) override;
    std::vector<Param> params() override;
    std::string kind() const override { return "dense"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

    RowMatrix weight;  // in x out
    RowMatrix bias;    // 1 x out
    RowMatrix dweight, dbias;

private:
    std::string name_;
    RowMatrix input_;
};

/// Stride-1 convolution with zero "same" padding over a length-L sequence.
class Conv1d final : public Layer {
public:
    Conv1d(int length, int in_channels, int out_channels, int kernel, std::string name);
    RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) override;
    RowMatrix backward(const RowMatrix& grad_out) override;
    std::vector<Param> params() override;
    std::string kind() const override { return "conv1d"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1d>(*this); }

    int length() const { return length_; }
    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int kernel() const { return k_; }

    RowMatrix weight;  // (kernel * in_channels) x out_channels, tap-major
    RowMatrix bias;    // 1 x out_channels
    RowMatrix dweight, dbias;

private:
    int length_, cin_, cout_, k_;
    std::string name_;
    RowMatrix cols_;
};

class Relu final : public Layer {
public:
    RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) override;
    RowMatrix backward(const RowMatrix& grad_out) override;
    std::string kind() const override { return "relu"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

private:
    RowMatrix output_;
};

/// Per-channel batch normalisation for position-major sequences: statistics
/// run over the batch and every position.
class BatchNorm final : public Layer {
public:
    static constexpr double eps = 1e-5;
    static constexpr double momentum = 0.9;

    BatchNorm(int channels, std::string name);
    RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) override;
    RowMatrix backward(const RowMatrix& grad_out) override;
    std::vector<Param> params() override;
    std::vector<Buffer> buffers() override;
    std::string kind() const override { return "batchnorm"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

    RowMatrix gamma, beta;               // 1 x channels
    RowMatrix running_mean, running_var; // 1 x channels
    RowMatrix dgamma, dbeta;

private:
    int channels_;
    std::string name_;
    RowMatrix xhat_;      // (batch * L) x channels
    Eigen::RowVectorXd inv_std_;
};

/// Inverted dropout: surviving activations are scaled by 1 / (1 - rate) in
/// training so inference is the identity.
class Dropout final : public Layer {
public:
    explicit Dropout(double rate) : rate_(rate) {}
    RowMatrix forward(const RowMatrix& x, Mode mode, Rng* rng) override;
    RowMatrix backward(const RowMatrix& grad_out) override;
    std::string kind() const override { return "dropout"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

private:
    double rate_;
    RowMatrix mask_;
};

// Kernels. The OpenMP versions are used by the layers; the serial
// references are kept for tests and benchmarks.
void im2col(const RowMatrix& x, int length, int channels, int kernel, RowMatrix& cols);
void col2im(const RowMatrix& cols, int length, int channels, int kernel, RowMatrix& dx);
RowMatrix conv1d_forward_reference(const RowMatrix& x, const RowMatrix& weight, const RowMatrix& bias,
                                   int length, int in_channels, int kernel);

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// In-place Adam step at (1-based) iteration t.
void adam_update(double* param, const double* grad, double* m, double* v, std::size_t n,
                 const AdamSettings& s, long long t);
void adam_update_reference(double* param, const double* grad, double* m, double* v, std::size_t n,
                           const AdamSettings& s, long long t);

}  // namespace floodcnn::nn
