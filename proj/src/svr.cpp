#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "floodcnn/error.hpp"
#include "floodcnn/svrkrig.hpp"

namespace floodcnn {

void SvrParams::validate() const {
    if (!(cost > 0.0) || !std::isfinite(cost)) throw DomainError("svr cost must be > 0");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw DomainError("svr epsilon must be >= 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("svr gamma must be > 0");
}

double rbf_kernel(const double* a, const double* b, std::size_t n, double gamma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

RowMatrix rbf_kernel_matrix(const RowMatrix& a, const RowMatrix& b, double gamma) {
    if (a.cols() != b.cols()) throw ShapeError("kernel operands differ in width");
    const Vector na = a.rowwise().squaredNorm();
    const Vector nb = b.rowwise().squaredNorm();
    RowMatrix k = -2.0 * (a * b.transpose());
    for (Eigen::Index i = 0; i < k.rows(); ++i)
        for (Eigen::Index j = 0; j < k.cols(); ++j)
            k(i, j) = std::exp(-gamma * std::max(0.0, k(i, j) + na(i) + nb(j)));
    return k;
}

double SvrModel::predict(const double* x, std::size_t n) const {
    if (static_cast<Eigen::Index>(n) != support_vectors.cols() && support_vectors.rows() > 0)
        throw ShapeError("feature width differs from the support vectors");
    double f = bias;
    for (Eigen::Index i = 0; i < support_vectors.rows(); ++i)
        f += dual_coeffs[static_cast<std::size_t>(i)] *
             rbf_kernel(support_vectors.row(i).data(), x, n, params.gamma);
    return f;
}

namespace {

// libsvm-style solver over 2n variables: index t < n is alpha_t (y = +1),
// t >= n is alpha*_{t-n} (y = -1).
struct SmoResult {
    std::vector<double> beta;
    double rho = 0.0;
    double gap = 0.0;
    long iterations = 0;
};

SmoResult solve_smo(const RowMatrix& kernel, std::span<const double> z, const SvrParams& p,
                    const SvrSolverSettings& s) {
    const std::size_t n = z.size();
    const std::size_t l = 2 * n;
    const double c = p.cost;
    constexpr double tau = 1e-12;
    std::vector<double> alpha(l, 0.0), grad(l);
    std::vector<signed char> y(l);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = 1;
        y[i + n] = -1;
        grad[i] = p.epsilon - z[i];
        grad[i + n] = p.epsilon + z[i];
    }
    auto kv = [&](std::size_t a, std::size_t b) {
        return kernel(static_cast<Eigen::Index>(a % n), static_cast<Eigen::Index>(b % n));
    };
    auto upper = [&](std::size_t t) { return alpha[t] >= c; };
    auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

    SmoResult r;
    long it = 0;
    for (;; ++it) {
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = l;
        for (std::size_t t = 0; t < l; ++t) {
            if (y[t] == 1) {
                if (!upper(t) && -grad[t] >= gmax) { gmax = -grad[t]; i = t; }
            } else {
                if (!lower(t) && grad[t] >= gmax) { gmax = grad[t]; i = t; }
            }
        }
        double gmax2 = -std::numeric_limits<double>::infinity();
        std::size_t j = l;
        double best = std::numeric_limits<double>::infinity();
        if (i < l) {
            const double kii = kv(i, i);
            for (std::size_t t = 0; t < l; ++t) {
                const double kit = kv(i, t);
                if (y[t] == 1) {
                    if (lower(t)) continue;
                    gmax2 = std::max(gmax2, grad[t]);
                    const double diff = gmax + grad[t];
                    if (diff > 0.0) {
                        double quad = kii + kv(t, t) - 2.0 * y[i] * kit;
                        if (quad <= 0.0) quad = tau;
                        const double obj = -diff * diff / quad;
                        if (obj <= best) { best = obj; j = t; }
                    }
                } else {
                    if (upper(t)) continue;
                    gmax2 = std::max(gmax2, -grad[t]);
                    const double diff = gmax - grad[t];
                    if (diff > 0.0) {
                        double quad = kii + kv(t, t) + 2.0 * y[i] * kit;
                        if (quad <= 0.0) quad = tau;
                        const double obj = -diff * diff / quad;
                        if (obj <= best) { best = obj; j = t; }
                    }
                }
            }
        }
        r.gap = gmax + gmax2;
        if (i == l || j == l || r.gap < s.tolerance) break;
        if (it >= s.max_iterations)
            throw ConvergenceError("SVR solver hit the iteration cap with KKT gap " +
                                   std::to_string(r.gap));

        const double qij = y[i] * y[j] * kv(i, j);
        const double old_i = alpha[i], old_j = alpha[j];
        if (y[i] != y[j]) {
            double quad = kv(i, i) + kv(j, j) + 2.0 * qij;
            if (quad <= 0.0) quad = tau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) { alpha[j] = 0.0; alpha[i] = diff; }
            } else {
                if (alpha[i] < 0.0) { alpha[i] = 0.0; alpha[j] = -diff; }
            }
            if (diff > 0.0) {
                if (alpha[i] > c) { alpha[i] = c; alpha[j] = c - diff; }
            } else {
                if (alpha[j] > c) { alpha[j] = c; alpha[i] = c + diff; }
            }
        } else {
            double quad = kv(i, i) + kv(j, j) - 2.0 * qij;
            if (quad <= 0.0) quad = tau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > c) {
                if (alpha[i] > c) { alpha[i] = c; alpha[j] = sum - c; }
            } else {
                if (alpha[j] < 0.0) { alpha[j] = 0.0; alpha[i] = sum; }
            }
            if (sum > c) {
                if (alpha[j] > c) { alpha[j] = c; alpha[i] = sum - c; }
            } else {
                if (alpha[i] < 0.0) { alpha[i] = 0.0; alpha[j] = sum; }
            }
        }
        const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
        for (std::size_t t = 0; t < l; ++t)
            grad[t] += y[t] * (y[i] * kv(i, t) * di + y[j] * kv(j, t) * dj);
    }
    r.iterations = it;

    // Bias from free variables, or the middle of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
    std::size_t nfree = 0;
    for (std::size_t t = 0; t < l; ++t) {
        const double yg = y[t] * grad[t];
        if (upper(t)) {
            if (y[t] == -1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (lower(t)) {
            if (y[t] == 1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++nfree;
            sum_free += yg;
        }
    }
    r.rho = nfree > 0 ? sum_free / static_cast<double>(nfree) : (ub + lb) / 2.0;
    r.beta.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.beta[i] = alpha[i] - alpha[i + n];
    return r;
}

}  // namespace

SvrModel train_svr(const RowMatrix& features, std::span<const double> targets,
                   const SvrParams& params, CellIndex location, const SvrSolverSettings& settings) {
    params.validate();
    return train_svr(features, rbf_kernel_matrix(features, features, params.gamma), targets,
                     params, location, settings);
}

SvrModel train_svr(const RowMatrix& features, const RowMatrix& kernel,
                   std::span<const double> targets, const SvrParams& params, CellIndex location,
                   const SvrSolverSettings& settings) {
    params.validate();
    const auto n = static_cast<std::size_t>(features.rows());
    if (targets.size() != n) throw AlignmentError("svr targets and features differ in rows");
    if (n == 0) throw DomainError("svr needs at least one training row");
    if (kernel.rows() != features.rows() || kernel.cols() != features.rows())
        throw ShapeError("kernel matrix does not match the training rows");
    for (double z : targets)
        if (!std::isfinite(z)) throw DomainError("non-finite svr target");

    const SmoResult r = solve_smo(kernel, targets, params, settings);
    SvrModel m;
    m.params = params;
    m.location = location;
    m.bias = -r.rho;
    std::vector<Eigen::Index> sv;
    for (std::size_t i = 0; i < n; ++i)
        if (r.beta[i] != 0.0) sv.push_back(static_cast<Eigen::Index>(i));
    m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), features.cols());
    for (std::size_t k = 0; k < sv.size(); ++k) {
        m.support_vectors.row(static_cast<Eigen::Index>(k)) = features.row(sv[k]);
        m.dual_coeffs.push_back(r.beta[static_cast<std::size_t>(sv[k])]);
        m.state.support_rows.push_back(static_cast<std::size_t>(sv[k]));
    }
    m.state.kkt_violation = std::max(0.0, r.gap);
    m.state.iterations = r.iterations;
    m.state.slack_upper.resize(n);
    m.state.slack_lower.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double f = m.bias;
        for (std::size_t k = 0; k < n; ++k)
            f += r.beta[k] * kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        m.state.slack_upper[i] = std::max(0.0, targets[i] - f - params.epsilon);
        m.state.slack_lower[i] = std::max(0.0, f - targets[i] - params.epsilon);
    }
    return m;
}

std::vector<double> predict_svr(const SvrModel& model, const RowMatrix& features) {
    std::vector<double> out(static_cast<std::size_t>(features.rows()), model.bias);
    if (model.support_vectors.rows() == 0) return out;
    if (features.cols() != model.support_vectors.cols())
        throw ShapeError("feature width differs from the support vectors");
    const RowMatrix k = rbf_kernel_matrix(features, model.support_vectors, model.params.gamma);
    const Eigen::Map<const Vector> beta(model.dual_coeffs.data(),
                                        static_cast<Eigen::Index>(model.dual_coeffs.size()));
    const Vector f = k * beta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += f(static_cast<Eigen::Index>(i));
    return out;
}

double kkt_residual(const SvrModel& model, const RowMatrix& features, std::span<const double> targets) {
    if (targets.size() != static_cast<std::size_t>(features.rows()))
        throw AlignmentError("svr targets and features differ in rows");
    const auto f = predict_svr(model, features);
    // Dual coefficient of each training row.
    std::vector<double> beta(targets.size(), 0.0);
    if (model.state.support_rows.size() != model.dual_coeffs.size())
        throw DomainError("svr model carries no training-row map");
    for (std::size_t k = 0; k < model.dual_coeffs.size(); ++k) {
        const std::size_t i = model.state.support_rows[k];
        if (i >= beta.size()) throw IndexError("support row outside the training set");
        beta[i] = model.dual_coeffs[k];
    }
    const double c = model.params.cost, eps = model.params.epsilon;
    double worst = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double e = targets[i] - f[i];
        const double b = beta[i];
        double v;
        if (b == 0.0) v = std::max(0.0, std::abs(e) - eps);
        else if (b >= c) v = std::max(0.0, eps - e);
        else if (b <= -c) v = std::max(0.0, e + eps);
        else if (b > 0.0) v = std::abs(e - eps);
        else v = std::abs(e + eps);
        worst = std::max(worst, v);
    }
    return worst;
}

double svr_dual_objective(const RowMatrix& kernel, std::span<const double> beta,
                          std::span<const double> targets, double epsilon) {
    const Eigen::Map<const Vector> b(beta.data(), static_cast<Eigen::Index>(beta.size()));
    double obj = -0.5 * b.dot(kernel * b);
    for (std::size_t i = 0; i < beta.size(); ++i) obj += targets[i] * beta[i] - epsilon * std::abs(beta[i]);
    return obj;
}

namespace {
constexpr char archive_magic[8] = {'F', 'C', 'S', 'V', 'R', 'A', 'R', '2'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError(path + ": truncated svr archive");
    return v;
}
}  // namespace

void write_svr_archive(const std::string& path, const std::vector<SvrModel>& models) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out.write(archive_magic, sizeof(archive_magic));
    put<std::uint64_t>(out, models.size());
    for (const auto& m : models) {
        put<std::int32_t>(out, m.location.row);
        put<std::int32_t>(out, m.location.col);
        put(out, m.params.cost);
        put(out, m.params.epsilon);
        put(out, m.params.gamma);
        put(out, m.bias);
        put(out, m.state.kkt_violation);
        put<std::int64_t>(out, m.state.iterations);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.support_vectors.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.support_vectors.cols()));
        out.write(reinterpret_cast<const char*>(m.support_vectors.data()),
                  static_cast<std::streamsize>(m.support_vectors.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(m.dual_coeffs.data()),
                  static_cast<std::streamsize>(m.dual_coeffs.size() * sizeof(double)));
        put<std::uint8_t>(out, m.state.support_rows.size() == m.dual_coeffs.size());
        if (m.state.support_rows.size() == m.dual_coeffs.size())
            for (std::size_t r : m.state.support_rows) put<std::uint64_t>(out, r);
    }
    if (!out) throw DomainError("write failed for '" + path + "'");
}

std::vector<SvrModel> read_svr_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open svr archive '" + path + "' (run train-svr first)");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, archive_magic, 8) != 0)
        throw LoadError(path + ": not an svr archive");
    const auto count = get<std::uint64_t>(in, path);
    std::vector<SvrModel> models;
    for (std::uint64_t k = 0; k < count; ++k) {
        SvrModel m;
        m.location.row = get<std::int32_t>(in, path);
        m.location.col = get<std::int32_t>(in, path);
        m.params.cost = get<double>(in, path);
        m.params.epsilon = get<double>(in, path);
        m.params.gamma = get<double>(in, path);
        m.bias = get<double>(in, path);
        m.state.kkt_violation = get<double>(in, path);
        m.state.iterations = get<std::int64_t>(in, path);
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows > (1u << 24) || cols > (1u << 16)) throw LoadError(path + ": implausible svr shape");
        m.support_vectors.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        m.dual_coeffs.resize(rows);
        if (!in.read(reinterpret_cast<char*>(m.support_vectors.data()),
                     static_cast<std::streamsize>(rows * cols * sizeof(double))) ||
            !in.read(reinterpret_cast<char*>(m.dual_coeffs.data()),
                     static_cast<std::streamsize>(rows * sizeof(double))))
            throw LoadError(path + ": truncated svr archive");
        if (get<std::uint8_t>(in, path))
            for (std::uint64_t r = 0; r < rows; ++r) m.state.support_rows.push_back(get<std::uint64_t>(in, path));
        models.push_back(std::move(m));
    }
    return models;
}

}  // namespace floodcnn
