#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include <Eigen/LU>

#include "floodcnn/error.hpp"
#include "floodcnn/svrkrig.hpp"

namespace floodcnn {

double Variogram::gamma(double h) const {
    if (h <= 0.0) return 0.0;
    return nugget + (sill - nugget) * (1.0 - std::exp(-h / range));
}

double Variogram::covariance(double h) const {
    if (h <= 0.0) return sill;
    return (sill - nugget) * std::exp(-h / range);
}

EmpiricalVariogram empirical_variogram(const std::vector<double>& x, const std::vector<double>& y,
                                       const std::vector<double>& values, int bins) {
    const std::size_t n = values.size();
    if (x.size() != n || y.size() != n) throw AlignmentError("variogram inputs differ in length");
    if (n < 2 || bins < 1) throw DomainError("variogram needs at least two points and one bin");
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::hypot(x[i] - x[j], y[i] - y[j]);
            if (d > 0.0) dmin = std::min(dmin, d);
            dmax = std::max(dmax, d);
        }
    if (!(dmax > 0.0)) throw DomainError("variogram points are coincident");
    const double dlim = std::max(dmin, 0.5 * dmax);
    const double ratio = dlim / dmin;
    auto bin_of = [&](double d) -> int {
        if (d > dlim * (1.0 + 1e-12)) return -1;
        if (d <= dmin || ratio <= 1.0) return 0;
        const int b = static_cast<int>(std::floor(std::log(d / dmin) / std::log(ratio) * bins));
        return std::clamp(b, 0, bins - 1);
    };
    std::vector<double> sum_d(static_cast<std::size_t>(bins), 0.0), sum_g(sum_d);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::hypot(x[i] - x[j], y[i] - y[j]);
            if (d <= 0.0) continue;
            const int b = bin_of(d);
            if (b < 0) continue;
            const double dv = values[i] - values[j];
            sum_d[static_cast<std::size_t>(b)] += d;
            sum_g[static_cast<std::size_t>(b)] += 0.5 * dv * dv;
            ++count[static_cast<std::size_t>(b)];
        }
    EmpiricalVariogram ev;
    for (std::size_t b = 0; b < count.size(); ++b) {
        if (count[b] == 0) continue;
        ev.lag.push_back(sum_d[b] / static_cast<double>(count[b]));
        ev.gamma.push_back(sum_g[b] / static_cast<double>(count[b]));
        ev.pairs.push_back(count[b]);
    }
    return ev;
}

namespace {

struct LinearFit {
    double nugget = 0.0;
    double partial = 0.0;
    double sse = std::numeric_limits<double>::infinity();
};

// Non-negative weighted least squares of gamma ~ c0 + c1 (1 - exp(-h / a)).
LinearFit fit_for_range(const EmpiricalVariogram& ev, const std::vector<double>& w, double a) {
    double sw = 0, sf = 0, sff = 0, sg = 0, sfg = 0;
    for (std::size_t k = 0; k < ev.lag.size(); ++k) {
        const double f = 1.0 - std::exp(-ev.lag[k] / a);
        sw += w[k];
        sf += w[k] * f;
        sff += w[k] * f * f;
        sg += w[k] * ev.gamma[k];
        sfg += w[k] * f * ev.gamma[k];
    }
    LinearFit fit;
    const double det = sw * sff - sf * sf;
    if (det > 1e-14 * sw * sff) {
        fit.nugget = (sff * sg - sf * sfg) / det;
        fit.partial = (sw * sfg - sf * sg) / det;
    }
    if (!(det > 1e-14 * sw * sff) || fit.nugget < 0.0 || fit.partial < 0.0) {
        // Best of the two one-parameter boundary fits.
        const LinearFit only_partial{0.0, sff > 0 ? std::max(0.0, sfg / sff) : 0.0, 0.0};
        const LinearFit only_nugget{std::max(0.0, sg / sw), 0.0, 0.0};
        auto sse = [&](const LinearFit& c) {
            double s = 0.0;
            for (std::size_t k = 0; k < ev.lag.size(); ++k) {
                const double r = ev.gamma[k] - c.nugget - c.partial * (1.0 - std::exp(-ev.lag[k] / a));
                s += w[k] * r * r;
            }
            return s;
        };
        const double s1 = sse(only_partial), s2 = sse(only_nugget);
        fit = s1 <= s2 ? only_partial : only_nugget;
        fit.sse = std::min(s1, s2);
        return fit;
    }
    double s = 0.0;
    for (std::size_t k = 0; k < ev.lag.size(); ++k) {
        const double r = ev.gamma[k] - fit.nugget - fit.partial * (1.0 - std::exp(-ev.lag[k] / a));
        s += w[k] * r * r;
    }
    fit.sse = s;
    return fit;
}

}  // namespace

Variogram fit_exponential(const EmpiricalVariogram& ev) {
    if (ev.lag.empty()) throw DomainError("empty empirical variogram");
    // Pair counts over squared lag: short lags, which drive kriging, count most.
    std::vector<double> w(ev.lag.size());
    for (std::size_t k = 0; k < w.size(); ++k)
        w[k] = static_cast<double>(ev.pairs[k]) / (ev.lag[k] * ev.lag[k]);
    const double lo = std::log(ev.lag.front() / 4.0);
    const double hi = std::log(ev.lag.back() * 10.0);
    constexpr int grid = 120;
    auto at = [&](int k) { return std::exp(lo + (hi - lo) * k / grid); };
    int best = 0;
    LinearFit best_fit;
    for (int k = 0; k <= grid; ++k) {
        const LinearFit f = fit_for_range(ev, w, at(k));
        if (f.sse < best_fit.sse) {
            best_fit = f;
            best = k;
        }
    }
    // Golden-section refinement in log range between the grid neighbours.
    double a = std::log(at(std::max(0, best - 1))), b = std::log(at(std::min(grid, best + 1)));
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = fit_for_range(ev, w, std::exp(c)).sse, fd = fit_for_range(ev, w, std::exp(d)).sse;
    for (int it = 0; it < 60; ++it) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - phi * (b - a);
            fc = fit_for_range(ev, w, std::exp(c)).sse;
        } else {
            a = c; c = d; fc = fd;
            d = a + phi * (b - a);
            fd = fit_for_range(ev, w, std::exp(d)).sse;
        }
    }
    double range = std::exp(0.5 * (a + b));
    LinearFit fit = fit_for_range(ev, w, range);
    if (best_fit.sse < fit.sse) {
        fit = best_fit;
        range = at(best);
    }
    Variogram v;
    v.range = range;
    v.nugget = fit.nugget;
    v.sill = fit.nugget + fit.partial;
    if (!(v.sill > 0.0)) {
        // Flat zero semivariance: no spatial signal left to model.
        v.nugget = 0.0;
        v.sill = 1.0;
    }
    return v;
}

double KrigingModel::estimate(double x, double y, double elevation) const {
    double r = 0.0;
    if (!zero_residuals) {
        const std::size_t n = sample_points.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = sample_points[i];
            r += weights[i] * variogram.covariance(std::hypot(p.x - x, p.y - y));
        }
        r += weights[n];
    }
    return trend(elevation) + r;
}

KrigingModel fit_rk(const RasterGrid& dem, const std::vector<std::pair<CellIndex, double>>& points) {
    if (points.size() < 10) throw DomainError("regression kriging needs at least 10 points");
    const auto& g = dem.geometry();
    KrigingModel m;
    std::vector<CellIndex> seen;
    for (const auto& [cell, value] : points) {
        if (!g.contains(cell)) throw IndexError("kriging point outside the grid");
        if (dem.is_nodata(cell)) throw DomainError("kriging point on a nodata cell");
        if (!std::isfinite(value)) throw DomainError("non-finite kriging sample value");
        seen.push_back(cell);
        m.sample_points.push_back({cell, g.x_of(cell.col), g.y_of(cell.row), dem.at(cell), value, 0.0});
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw DomainError("kriging points must be distinct");

    const double n = static_cast<double>(points.size());
    double me = 0.0, mv = 0.0;
    for (const auto& p : m.sample_points) {
        me += p.elevation;
        mv += p.value;
    }
    me /= n;
    mv /= n;
    double see = 0.0, sev = 0.0;
    for (const auto& p : m.sample_points) {
        see += (p.elevation - me) * (p.elevation - me);
        sev += (p.elevation - me) * (p.value - mv);
    }
    if (see > 1e-12 * n * (1.0 + me * me)) {
        m.slope = sev / see;
        m.intercept = mv - m.slope * me;
    } else {
        m.mean_only_trend = true;
        m.intercept = mv;
    }

    double scale = 0.0, rmax = 0.0;
    for (auto& p : m.sample_points) {
        p.residual = p.value - m.trend(p.elevation);
        scale = std::max(scale, std::abs(p.value));
        rmax = std::max(rmax, std::abs(p.residual));
    }
    if (rmax <= 1e-12 * (1.0 + scale)) {
        m.zero_residuals = true;
        m.variogram = {0.0, 1.0, g.cellsize};
        m.weights.assign(points.size() + 1, 0.0);
        return m;
    }

    std::vector<double> xs, ys, rs;
    for (const auto& p : m.sample_points) {
        xs.push_back(p.x);
        ys.push_back(p.y);
        rs.push_back(p.residual);
    }
    m.variogram = fit_exponential(empirical_variogram(xs, ys, rs));

    solve_kriging_weights(m);
    return m;
}

void solve_kriging_weights(KrigingModel& m) {
    m.jittered = false;
    const auto k = static_cast<Eigen::Index>(m.sample_points.size());
    RowMatrix a(k + 1, k + 1);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto& p = m.sample_points[static_cast<std::size_t>(i)];
            const auto& q = m.sample_points[static_cast<std::size_t>(j)];
            a(i, j) = i == j ? m.variogram.sill : m.variogram.covariance(std::hypot(p.x - q.x, p.y - q.y));
        }
        a(i, k) = 1.0;
        a(k, i) = 1.0;
    }
    a(k, k) = 0.0;
    Vector rhs(k + 1);
    for (Eigen::Index i = 0; i < k; ++i) rhs(i) = m.sample_points[static_cast<std::size_t>(i)].residual;
    rhs(k) = 0.0;

    auto solve = [&](const RowMatrix& mat) -> std::optional<Vector> {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(mat);
        Vector w = lu.solve(rhs);
        if (!w.allFinite()) return std::nullopt;
        const double res = (mat * w - rhs).norm();
        if (!(res <= 1e-8 * (1.0 + rhs.norm()))) return std::nullopt;
        return w;
    };
    auto w = solve(a);
    for (double jitter = 1e-10; !w && jitter <= 1e-2; jitter *= 10.0) {
        RowMatrix aj = a;
        for (Eigen::Index i = 0; i < k; ++i) aj(i, i) += jitter * m.variogram.sill;
        w = solve(aj);
        m.jittered = true;
    }
    if (!w) throw NumericalError("kriging system could not be solved even with regularisation");
    m.weights.assign(w->data(), w->data() + w->size());
}

RasterGrid interpolate_rk_raw(const KrigingModel& model, const RasterGrid& dem) {
    const auto& g = dem.geometry();
    std::vector<double> out(dem.size(), dem.nodata());
    std::vector<long> sample_at(dem.size(), -1);
    for (std::size_t i = 0; i < model.sample_points.size(); ++i)
        sample_at[g.linear(model.sample_points[i].cell)] = static_cast<long>(i);
    for (std::size_t i = 0; i < dem.size(); ++i) {
        if (dem.is_nodata(i)) continue;
        if (sample_at[i] >= 0) {
            // Kriging interpolates exactly at its data.
            out[i] = model.sample_points[static_cast<std::size_t>(sample_at[i])].value;
            continue;
        }
        const CellIndex c = g.cell(i);
        out[i] = model.estimate(g.x_of(c.col), g.y_of(c.row), dem[i]);
    }
    return RasterGrid(g, dem.nodata(), std::move(out));
}

RasterGrid interpolate_rk(const KrigingModel& model, const RasterGrid& dem, double tau) {
    RasterGrid raw = interpolate_rk_raw(model, dem);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw.is_nodata(i)) continue;
        const double v = raw[i];
        raw.set(i, v > tau ? v : 0.0);
    }
    return raw;
}

std::vector<CellIndex> sample_locations(const RasterGrid& dem, const std::vector<unsigned char>& wet_mask,
                                        std::size_t n, std::uint64_t seed) {
    if (!wet_mask.empty() && wet_mask.size() != dem.size())
        throw AlignmentError("wet mask does not match the DEM");
    std::vector<std::size_t> wet, valid;
    for (std::size_t i = 0; i < dem.size(); ++i) {
        if (dem.is_nodata(i)) continue;
        valid.push_back(i);
        if (!wet_mask.empty() && wet_mask[i]) wet.push_back(i);
    }
    if (n > valid.size())
        throw DomainError("cannot sample " + std::to_string(n) + " locations from " +
                          std::to_string(valid.size()) + " valid cells");
    std::mt19937_64 rng(seed);
    const auto n_wet = std::min(wet.size(), static_cast<std::size_t>(std::llround(0.9 * static_cast<double>(n))));
    std::shuffle(wet.begin(), wet.end(), rng);
    std::vector<std::size_t> chosen(wet.begin(), wet.begin() + static_cast<std::ptrdiff_t>(n_wet));
    std::vector<unsigned char> taken(dem.size(), 0);
    for (auto i : chosen) taken[i] = 1;
    std::vector<std::size_t> rest;
    for (auto i : valid)
        if (!taken[i]) rest.push_back(i);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t k = 0; chosen.size() < n; ++k) chosen.push_back(rest[k]);
    std::vector<CellIndex> out;
    for (auto i : chosen) out.push_back(dem.geometry().cell(i));
    return out;
}

namespace {
// Cells without a target column were never wet in training.
std::optional<std::size_t> target_column(const TargetMatrix& t, CellIndex cell) {
    if (!t.geometry.contains(cell))
        throw IndexError("location (" + std::to_string(cell.row) + ", " + std::to_string(cell.col) +
                         ") outside the grid");
    const std::size_t lin = t.geometry.linear(cell);
    const auto it = std::lower_bound(t.cell_map.begin(), t.cell_map.end(), lin);
    if (it == t.cell_map.end() || *it != lin) return std::nullopt;
    return static_cast<std::size_t>(it - t.cell_map.begin());
}
}  // namespace

std::vector<SvrModel> train_svr_locations(const Dataset& train, const std::vector<CellIndex>& locations,
                                          const SvrParams& params, const SvrSolverSettings& settings) {
    params.validate();
    const RowMatrix& x = train.features.values;
    if (x.rows() != train.targets.values.rows())
        throw AlignmentError("svr features and targets differ in rows");
    const RowMatrix kernel = rbf_kernel_matrix(x, x, params.gamma);
    std::vector<std::optional<std::size_t>> cols;
    for (const auto& c : locations) cols.push_back(target_column(train.targets, c));
    std::vector<SvrModel> models(locations.size());
    std::exception_ptr failure;
    std::size_t failed_at = 0;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < locations.size(); ++k) {
        try {
            std::vector<double> z(static_cast<std::size_t>(x.rows()), 0.0);
            if (cols[k])
                for (std::size_t r = 0; r < z.size(); ++r)
                    z[r] = train.targets.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(*cols[k]));
            models[k] = train_svr(x, kernel, z, params, locations[k], settings);
        } catch (...) {
#pragma omp critical(svr_failure)
            if (!failure || k < failed_at) {
                failure = std::current_exception();
                failed_at = k;
            }
        }
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const ConvergenceError& e) {
            const auto& c = locations[failed_at];
            throw ConvergenceError("location (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                                   "): " + e.what());
        }
    }
    return models;
}

std::vector<unsigned char> training_wet_mask(const TargetMatrix& t, const RasterGrid& dem) {
    if (t.geometry != dem.geometry()) throw AlignmentError("training targets do not match the DEM grid");
    std::vector<unsigned char> wet(dem.size(), 0);
    for (Eigen::Index j = 0; j < t.values.cols(); ++j)
        if ((t.values.col(j).array() > 0.0).any()) wet[t.cell_map[static_cast<std::size_t>(j)]] = 1;
    return wet;
}

SvrPipelineResult predict_svr_maps(const std::vector<SvrModel>& models, const FeatureMatrix& features,
                                   const RasterGrid& dem, double tau) {
    SvrPipelineResult res;
    for (const auto& m : models) {
        if (static_cast<std::size_t>(m.support_vectors.cols()) != features.cols() && m.support_vectors.rows() > 0)
            throw ShapeError("feature width differs from the trained svr models");
        res.locations.push_back(m.location);
    }
    const std::size_t rows = features.rows(), nl = models.size();
    res.point_predictions.assign(rows * nl, 0.0);
    for (std::size_t k = 0; k < nl; ++k) {
        const auto p = predict_svr(models[k], features.values);
        for (std::size_t r = 0; r < rows; ++r) res.point_predictions[r * nl + k] = p[r];
    }

    res.rasters.resize(rows);
    res.kriging.resize(rows);
    std::exception_ptr failure;
    std::size_t failed_at = 0;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t r = 0; r < rows; ++r) {
        try {
            std::vector<std::pair<CellIndex, double>> pts;
            pts.reserve(nl);
            for (std::size_t k = 0; k < nl; ++k) pts.emplace_back(res.locations[k], res.point_predictions[r * nl + k]);
            KrigingModel km = fit_rk(dem, pts);
            res.rasters[r] = interpolate_rk(km, dem, tau);
            km.sample_points.clear();
            km.weights.clear();
            res.kriging[r] = std::move(km);
        } catch (...) {
#pragma omp critical(rk_failure)
            if (!failure || r < failed_at) {
                failure = std::current_exception();
                failed_at = r;
            }
        }
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const NumericalError& e) {
            throw NumericalError("kriging at row " + std::to_string(failed_at) + ": " + e.what());
        }
    }
    return res;
}

SvrPipelineResult run_svr_pipeline(const Dataset& train, const FeatureMatrix& features,
                                   const RasterGrid& dem, std::size_t n_locations,
                                   const SvrParams& params, std::uint64_t seed, double tau) {
    if (features.cols() != train.features.cols()) throw ShapeError("feature width differs from training");
    const auto locations = sample_locations(dem, training_wet_mask(train.targets, dem), n_locations, seed);
    return predict_svr_maps(train_svr_locations(train, locations, params), features, dem, tau);
}

}  // namespace floodcnn
