#include "floodcnn/nnet_layers.hpp"

#include <cmath>

#include "floodcnn/error.hpp"

namespace floodcnn::nn {

namespace {

using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void require_width(const RowMatrix& x, Eigen::Index width, const std::string& layer) {
    if (x.cols() != width)
        throw ShapeError(layer + ": expected width " + std::to_string(width) + ", got " +
                         std::to_string(x.cols()));
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(int in, int out, std::string name)
    : weight(RowMatrix::Zero(in, out)),
      bias(RowMatrix::Zero(1, out)),
      dweight(RowMatrix::Zero(in, out)),
      dbias(RowMatrix::Zero(1, out)),
      name_(std::move(name)) {}

RowMatrix Dense::forward(const RowMatrix& x, Mode mode, Rng*) {
    require_width(x, weight.rows(), name_);
    if (mode == Mode::train) input_ = x;
    RowMatrix y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
}

RowMatrix Dense::backward(const RowMatrix& grad_out) {
    dweight.noalias() += input_.transpose() * grad_out;
    dbias += grad_out.colwise().sum();
    return grad_out * weight.transpose();
}

std::vector<Param> Dense::params() {
    return {{name_ + ".weight", &weight, &dweight, false}, {name_ + ".bias", &bias, &dbias, false}};
}

// ---------------------------------------------------------------- Conv1d

void im2col(const RowMatrix& x, int length, int channels, int kernel, RowMatrix& cols) {
    const auto n = static_cast<int>(x.rows());
    const int half = kernel / 2;
    cols.resize(static_cast<Eigen::Index>(n) * length, static_cast<Eigen::Index>(kernel) * channels);
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
        const double* src = x.data() + static_cast<std::size_t>(s) * length * channels;
        for (int l = 0; l < length; ++l) {
            double* dst = cols.data() + (static_cast<std::size_t>(s) * length + l) * kernel * channels;
            for (int k = 0; k < kernel; ++k) {
                const int p = l + k - half;
                double* d = dst + static_cast<std::size_t>(k) * channels;
                if (p < 0 || p >= length) {
                    for (int c = 0; c < channels; ++c) d[c] = 0.0;
                } else {
                    const double* sp = src + static_cast<std::size_t>(p) * channels;
                    for (int c = 0; c < channels; ++c) d[c] = sp[c];
                }
            }
        }
    }
}

void col2im(const RowMatrix& cols, int length, int channels, int kernel, RowMatrix& dx) {
    const auto n = static_cast<int>(cols.rows() / length);
    const int half = kernel / 2;
    dx.setZero(n, static_cast<Eigen::Index>(length) * channels);
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
        double* dst = dx.data() + static_cast<std::size_t>(s) * length * channels;
        for (int l = 0; l < length; ++l) {
            const double* src = cols.data() + (static_cast<std::size_t>(s) * length + l) * kernel * channels;
            for (int k = 0; k < kernel; ++k) {
                const int p = l + k - half;
                if (p < 0 || p >= length) continue;
                const double* sk = src + static_cast<std::size_t>(k) * channels;
                double* dp = dst + static_cast<std::size_t>(p) * channels;
                for (int c = 0; c < channels; ++c) dp[c] += sk[c];
            }
        }
    }
}

RowMatrix conv1d_forward_reference(const RowMatrix& x, const RowMatrix& weight, const RowMatrix& bias,
                                   int length, int in_channels, int kernel) {
    const auto n = x.rows();
    const auto out_channels = weight.cols();
    const int half = kernel / 2;
    RowMatrix y(n, length * out_channels);
    for (Eigen::Index s = 0; s < n; ++s) {
        for (int l = 0; l < length; ++l) {
            for (Eigen::Index o = 0; o < out_channels; ++o) {
                double acc = bias(0, o);
                for (int k = 0; k < kernel; ++k) {
                    const int p = l + k - half;
                    if (p < 0 || p >= length) continue;
                    for (int c = 0; c < in_channels; ++c)
                        acc += x(s, p * in_channels + c) * weight(k * in_channels + c, o);
                }
                y(s, l * out_channels + o) = acc;
            }
        }
    }
    return y;
}

Conv1d::Conv1d(int length, int in_channels, int out_channels, int kernel, std::string name)
    : weight(RowMatrix::Zero(static_cast<Eigen::Index>(kernel) * in_channels, out_channels)),
      bias(RowMatrix::Zero(1, out_channels)),
      dweight(RowMatrix::Zero(static_cast<Eigen::Index>(kernel) * in_channels, out_channels)),
      dbias(RowMatrix::Zero(1, out_channels)),
      length_(length),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      name_(std::move(name)) {}

RowMatrix Conv1d::forward(const RowMatrix& x, Mode, Rng*) {
    require_width(x, static_cast<Eigen::Index>(length_) * cin_, name_);
    im2col(x, length_, cin_, k_, cols_);
    RowMatrix y(x.rows(), static_cast<Eigen::Index>(length_) * cout_);
    RowMap yv(y.data(), x.rows() * length_, cout_);
    yv.noalias() = cols_ * weight;
    yv.rowwise() += bias.row(0);
    return y;
}

RowMatrix Conv1d::backward(const RowMatrix& grad_out) {
    const Eigen::Index n = grad_out.rows();
    ConstRowMap g(grad_out.data(), n * length_, cout_);
    dweight.noalias() += cols_.transpose() * g;
    dbias += g.colwise().sum();
    RowMatrix dcols = g * weight.transpose();
    RowMatrix dx;
    col2im(dcols, length_, cin_, k_, dx);
    return dx;
}

std::vector<Param> Conv1d::params() {
    return {{name_ + ".weight", &weight, &dweight, false}, {name_ + ".bias", &bias, &dbias, false}};
}

// ---------------------------------------------------------------- Relu

RowMatrix Relu::forward(const RowMatrix& x, Mode mode, Rng*) {
    RowMatrix y = x.cwiseMax(0.0);
    if (mode == Mode::train) output_ = y;
    return y;
}

RowMatrix Relu::backward(const RowMatrix& grad_out) {
    return (output_.array() > 0.0).select(grad_out, 0.0);
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, std::string name)
    : gamma(RowMatrix::Ones(1, channels)),
      beta(RowMatrix::Zero(1, channels)),
      running_mean(RowMatrix::Zero(1, channels)),
      running_var(RowMatrix::Ones(1, channels)),
      dgamma(RowMatrix::Zero(1, channels)),
      dbeta(RowMatrix::Zero(1, channels)),
      channels_(channels),
      name_(std::move(name)) {}

RowMatrix BatchNorm::forward(const RowMatrix& x, Mode mode, Rng*) {
    if (x.cols() % channels_ != 0) throw ShapeError(name_ + ": width is not a multiple of the channel count");
    const Eigen::Index rows = x.rows() * (x.cols() / channels_);
    ConstRowMap xv(x.data(), rows, channels_);
    RowMatrix y(x.rows(), x.cols());
    RowMap yv(y.data(), rows, channels_);
    if (mode == Mode::infer) {
        Eigen::RowVectorXd scale =
            gamma.row(0).array() / (running_var.row(0).array() + eps).sqrt();
        Eigen::RowVectorXd shift = beta.row(0).array() - running_mean.row(0).array() * scale.array();
        yv = (xv.array().rowwise() * scale.array()).rowwise() + shift.array();
        return y;
    }
    Eigen::RowVectorXd mean = xv.colwise().mean();
    RowMatrix centred = xv.rowwise() - mean;
    Eigen::RowVectorXd var = centred.array().square().colwise().mean();
    inv_std_ = (var.array() + eps).rsqrt();
    xhat_ = centred.array().rowwise() * inv_std_.array();
    yv = (xhat_.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
    running_mean = momentum * running_mean + (1.0 - momentum) * mean;
    // unbiased variance for the running estimate
    const double m = static_cast<double>(rows);
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    running_var = momentum * running_var + (1.0 - momentum) * unbias * var;
    return y;
}

RowMatrix BatchNorm::backward(const RowMatrix& grad_out) {
    const Eigen::Index rows = xhat_.rows();
    ConstRowMap g(grad_out.data(), rows, channels_);
    dbeta += g.colwise().sum();
    dgamma += (g.array() * xhat_.array()).matrix().colwise().sum();
    RowMatrix dxhat = g.array().rowwise() * gamma.row(0).array();
    Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * xhat_.array()).matrix().colwise().sum();
    const double m = static_cast<double>(rows);
    RowMatrix dx(grad_out.rows(), grad_out.cols());
    RowMap dxv(dx.data(), rows, channels_);
    dxv = ((m * dxhat.array()).rowwise() - sum_dxhat.array() -
           xhat_.array().rowwise() * sum_dxhat_xhat.array())
              .rowwise() *
          (inv_std_.array() / m);
    return dx;
}

std::vector<Param> BatchNorm::params() {
    return {{name_ + ".gamma", &gamma, &dgamma, true}, {name_ + ".beta", &beta, &dbeta, true}};
}

std::vector<Buffer> BatchNorm::buffers() {
    return {{name_ + ".running_mean", &running_mean}, {name_ + ".running_var", &running_var}};
}

// ---------------------------------------------------------------- Dropout

RowMatrix Dropout::forward(const RowMatrix& x, Mode mode, Rng* rng) {
    if (mode == Mode::infer || rate_ <= 0.0) {
        if (mode == Mode::train) mask_ = RowMatrix::Ones(x.rows(), x.cols());
        return x;
    }
    if (!rng) throw DomainError("dropout in training mode needs a random generator");
    const double keep = 1.0 - rate_;
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i)
        mask_.data()[i] = unit_uniform(*rng) < keep ? 1.0 / keep : 0.0;
    return x.cwiseProduct(mask_);
}

RowMatrix Dropout::backward(const RowMatrix& grad_out) { return grad_out.cwiseProduct(mask_); }

// ---------------------------------------------------------------- Adam

void adam_update(double* param, const double* grad, double* m, double* v, std::size_t n,
                 const AdamSettings& s, long long t) {
    const double c1 = 1.0 / (1.0 - std::pow(s.beta1, static_cast<double>(t)));
    const double c2 = 1.0 / (1.0 - std::pow(s.beta2, static_cast<double>(t)));
    const double b1 = s.beta1, b2 = s.beta2, lr = s.learning_rate, eps = s.eps;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const double g = grad[i];
        const double mi = b1 * m[i] + (1.0 - b1) * g;
        const double vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = mi;
        v[i] = vi;
        param[i] -= lr * (mi * c1) / (std::sqrt(vi * c2) + eps);
    }
}

void adam_update_reference(double* param, const double* grad, double* m, double* v, std::size_t n,
                           const AdamSettings& s, long long t) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad[i];
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / (1.0 - std::pow(s.beta1, static_cast<double>(t)));
        const double vhat = v[i] / (1.0 - std::pow(s.beta2, static_cast<double>(t)));
        param[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.eps);
    }
}

}  // namespace floodcnn::nn
