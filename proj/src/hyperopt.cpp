#include "floodcnn/hyperopt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

#include "floodcnn/error.hpp"

namespace floodcnn {

Dimension Dimension::integer(std::string name, long lo, long hi) {
    return {std::move(name), DimKind::integer, static_cast<double>(lo), static_cast<double>(hi), {}};
}
Dimension Dimension::real(std::string name, double lo, double hi) {
    return {std::move(name), DimKind::real, lo, hi, {}};
}
Dimension Dimension::real_log(std::string name, double lo, double hi) {
    return {std::move(name), DimKind::real_log, lo, hi, {}};
}
Dimension Dimension::categorical(std::string name, std::vector<std::string> choices) {
    const double hi = choices.empty() ? 0.0 : static_cast<double>(choices.size() - 1);
    return {std::move(name), DimKind::categorical, 0.0, hi, std::move(choices)};
}

void SearchSpace::validate() const {
    if (dimensions.empty()) throw SearchError("search space has no dimensions");
    for (const auto& d : dimensions) {
        if (d.kind == DimKind::categorical) {
            if (d.choices.empty()) throw SearchError("categorical '" + d.name + "' has no choices");
        } else if (!(d.lo <= d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi)) {
            throw SearchError("dimension '" + d.name + "' has unordered bounds");
        } else if (d.kind == DimKind::real_log && !(d.lo > 0.0)) {
            throw SearchError("log dimension '" + d.name + "' needs positive bounds");
        }
    }
}

SearchStrategy parse_strategy(const std::string& name) {
    if (name == "random") return SearchStrategy::random;
    if (name == "smbo") return SearchStrategy::smbo;
    throw ConfigError("unknown search strategy '" + name + "' (expected random or smbo)");
}

namespace {

double decode(const Dimension& d, double u) {
    u = std::clamp(u, 0.0, 1.0);
    switch (d.kind) {
        case DimKind::integer:
            return std::clamp(std::floor(d.lo + u * (d.hi - d.lo + 1.0)), d.lo, d.hi);
        case DimKind::real:
            return d.lo + u * (d.hi - d.lo);
        case DimKind::real_log:
            return std::clamp(std::exp(std::log(d.lo) + u * (std::log(d.hi) - std::log(d.lo))), d.lo, d.hi);
        case DimKind::categorical: {
            const double k = static_cast<double>(d.choices.size());
            return std::min(std::floor(u * k), k - 1.0);
        }
    }
    return d.lo;
}

double encode(const Dimension& d, double v) {
    switch (d.kind) {
        case DimKind::integer:
            return (v - d.lo + 0.5) / (d.hi - d.lo + 1.0);
        case DimKind::real:
            return d.hi > d.lo ? (v - d.lo) / (d.hi - d.lo) : 0.5;
        case DimKind::real_log:
            return d.hi > d.lo ? (std::log(v) - std::log(d.lo)) / (std::log(d.hi) - std::log(d.lo)) : 0.5;
        case DimKind::categorical:
            return (v + 0.5) / static_cast<double>(d.choices.size());
    }
    return 0.5;
}

TrialConfig decode_point(const SearchSpace& s, const std::vector<double>& u) {
    TrialConfig c;
    for (std::size_t k = 0; k < s.dimensions.size(); ++k) c[s.dimensions[k].name] = decode(s.dimensions[k], u[k]);
    return c;
}

Vector encode_config(const SearchSpace& s, const TrialConfig& c) {
    Vector u(static_cast<Eigen::Index>(s.dimensions.size()));
    for (std::size_t k = 0; k < s.dimensions.size(); ++k)
        u(static_cast<Eigen::Index>(k)) = encode(s.dimensions[k], c.at(s.dimensions[k].name));
    return u;
}

std::vector<double> uniform_point(std::size_t d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> u(d);
    for (auto& x : u) x = uni(rng);
    return u;
}

// Squared-exponential Gaussian process on standardized targets.
class GaussianProcess {
public:
    GaussianProcess(std::vector<Vector> x, std::vector<double> y) : x_(std::move(x)) {
        const auto n = static_cast<Eigen::Index>(y.size());
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : y) var += (v - mean) * (v - mean);
        sd_ = std::sqrt(var / static_cast<double>(n));
        if (!(sd_ > 0.0)) sd_ = 1.0;
        mean_ = mean;
        y_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) y_(i) = (y[static_cast<std::size_t>(i)] - mean_) / sd_;

        double best = -std::numeric_limits<double>::infinity();
        for (double ell : {0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0}) {
            Eigen::LLT<Eigen::MatrixXd> llt(gram(ell));
            if (llt.info() != Eigen::Success) continue;
            const Vector alpha = llt.solve(y_);
            const Eigen::MatrixXd l = llt.matrixL();
            const double lml = -0.5 * y_.dot(alpha) - l.diagonal().array().log().sum();
            if (lml > best) {
                best = lml;
                ell_ = ell;
                alpha_ = alpha;
                llt_ = llt;
            }
        }
        if (!std::isfinite(best)) throw NumericalError("surrogate covariance is not positive definite");
    }

    // Predictive mean and standard deviation in objective units.
    std::pair<double, double> predict(const Vector& u) const {
        Vector k(static_cast<Eigen::Index>(x_.size()));
        for (std::size_t i = 0; i < x_.size(); ++i) k(static_cast<Eigen::Index>(i)) = kern(x_[i], u, ell_);
        const double mu = k.dot(alpha_);
        const Vector v = llt_.matrixL().solve(k);
        const double var = std::max(1e-12, 1.0 - v.squaredNorm());
        return {mean_ + sd_ * mu, sd_ * std::sqrt(var)};
    }

private:
    static double kern(const Vector& a, const Vector& b, double ell) {
        return std::exp(-(a - b).squaredNorm() / (2.0 * ell * ell));
    }
    Eigen::MatrixXd gram(double ell) const {
        const auto n = static_cast<Eigen::Index>(x_.size());
        Eigen::MatrixXd k(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                k(i, j) = kern(x_[static_cast<std::size_t>(i)], x_[static_cast<std::size_t>(j)], ell);
        k.diagonal().array() += 1e-6;
        return k;
    }

    std::vector<Vector> x_;
    Vector y_;
    double mean_ = 0.0, sd_ = 1.0, ell_ = 0.2;
    Vector alpha_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

double expected_improvement(double mu, double sigma, double best) {
    const double z = (best - mu) / sigma;
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    return (best - mu) * cdf + sigma * pdf;
}

}  // namespace

SearchResult optimize(const SearchSpace& space, const Objective& objective, int budget,
                      SearchStrategy strategy, std::uint64_t seed) {
    space.validate();
    if (budget < 1) throw SearchError("search budget must be at least 1");
    const std::size_t d = space.dimensions.size();
    std::mt19937_64 rng(seed);
    const int warmup = strategy == SearchStrategy::random ? budget : std::min(budget, std::max(5, budget / 4));
    SearchResult res;
    for (int t = 0; t < budget; ++t) {
        TrialConfig cfg;
        std::vector<Vector> xs;
        std::vector<double> ys;
        for (const auto& tr : res.trials) {
            if (tr.status != TrialStatus::ok) continue;
            xs.push_back(encode_config(space, tr.config));
            ys.push_back(tr.objective);
        }
        if (t < warmup || xs.size() < 2) {
            cfg = decode_point(space, uniform_point(d, rng));
        } else {
            const GaussianProcess gp(xs, ys);
            const double best = *std::min_element(ys.begin(), ys.end());
            double best_ei = -1.0;
            for (int c = 0; c < 1024; ++c) {
                TrialConfig cand = decode_point(space, uniform_point(d, rng));
                const auto [mu, sigma] = gp.predict(encode_config(space, cand));
                const double ei = expected_improvement(mu, sigma, best);
                if (ei > best_ei) {
                    best_ei = ei;
                    cfg = std::move(cand);
                }
            }
        }
        Trial tr;
        tr.index = t;
        tr.config = cfg;
        try {
            tr.objective = objective(cfg);
            if (!std::isfinite(tr.objective)) {
                tr.status = TrialStatus::failed;
                tr.message = "non-finite objective";
            }
        } catch (const std::exception& e) {
            tr.status = TrialStatus::failed;
            tr.message = e.what();
        }
        res.trials.push_back(std::move(tr));
    }
    const Trial* best = nullptr;
    for (const auto& tr : res.trials)
        if (tr.status == TrialStatus::ok && (!best || tr.objective < best->objective)) best = &tr;
    if (!best) throw SearchError("every trial failed; first failure: " + res.trials.front().message);
    res.best = *best;
    return res;
}

std::string format_value(const SearchSpace& space, const std::string& name, double value) {
    for (const auto& d : space.dimensions) {
        if (d.name != name) continue;
        if (d.kind == DimKind::categorical) return d.choices.at(static_cast<std::size_t>(value));
        if (d.kind == DimKind::integer) return std::to_string(static_cast<long>(value));
        std::ostringstream os;
        os.precision(17);
        os << value;
        return os.str();
    }
    throw SearchError("unknown dimension '" + name + "'");
}

void write_trials_csv(const std::string& path, const SearchSpace& space, const std::vector<Trial>& trials) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out << "trial";
    for (const auto& d : space.dimensions) out << ',' << d.name;
    out << ",objective,status\n";
    out.precision(17);
    for (const auto& t : trials) {
        out << t.index;
        for (const auto& d : space.dimensions) out << ',' << format_value(space, d.name, t.config.at(d.name));
        out << ',';
        if (t.status == TrialStatus::ok) out << t.objective;
        out << ',' << (t.status == TrialStatus::ok ? "ok" : "failed") << '\n';
    }
}

SearchSpace cnn_search_space() {
    const std::vector<std::string> filters = {"16", "32", "64", "128"};
    const std::vector<std::string> units = {"32", "64", "128", "256", "512"};
    return {{
        Dimension::categorical("conv1_filters", filters),
        Dimension::categorical("conv2_filters", filters),
        Dimension::categorical("dense1_units", units),
        Dimension::categorical("dense2_units", units),
        Dimension::categorical("dense3_units", units),
        Dimension::categorical("batch_size", {"10", "32"}),
        Dimension::real_log("learning_rate", 1e-4, 1e-2),
    }};
}

SearchSpace svr_search_space() {
    return {{
        Dimension::real_log("cost", 0.1, 100.0),
        Dimension::real_log("epsilon", 1e-3, 0.3),
        Dimension::real_log("gamma", 1e-3, 1.0),
    }};
}

SvrParams select_global_svr_params(const std::vector<SvrParams>& candidates, const SvrEvaluator& eval) {
    if (candidates.empty()) throw SearchError("no SVR parameter candidates");
    const SvrParams* best = nullptr;
    double best_sum = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
        const auto errs = eval(c);
        double sum = 0.0;
        for (double e : errs) sum += e;
        if (!std::isfinite(sum)) continue;
        const bool better = sum < best_sum ||
                            (sum == best_sum && best &&
                             (c.cost < best->cost || (c.cost == best->cost && c.gamma < best->gamma)));
        if (!best || better) {
            best = &c;
            best_sum = sum;
        }
    }
    if (!best) throw SearchError("every SVR candidate produced a non-finite error");
    return *best;
}

}  // namespace floodcnn
