#include <doctest.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "floodcnn/error.hpp"
#include "floodcnn/svrkrig.hpp"

using namespace floodcnn;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

std::vector<double> smooth_targets(const RowMatrix& x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<double> z(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        z[static_cast<std::size_t>(i)] = std::sin(3.0 * x(i, 0)) + x.row(i).sum() * 0.2 + noise(rng);
    return z;
}

// Brute-force kernel expansion.
double expand(const SvrModel& m, const double* x, std::size_t n) {
    double s = m.bias;
    for (Eigen::Index k = 0; k < m.support_vectors.rows(); ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = m.support_vectors(k, static_cast<Eigen::Index>(j)) - x[j];
            d += e * e;
        }
        s += m.dual_coeffs[static_cast<std::size_t>(k)] * std::exp(-m.params.gamma * d);
    }
    return s;
}

std::vector<double> full_beta(const SvrModel& m, std::size_t n) {
    std::vector<double> b(n, 0.0);
    for (std::size_t k = 0; k < m.dual_coeffs.size(); ++k) b[m.state.support_rows[k]] = m.dual_coeffs[k];
    return b;
}

GridGeometry geometry(int rows, int cols, double cellsize) {
    GridGeometry g;
    g.nrows = rows;
    g.ncols = cols;
    g.cellsize = cellsize;
    return g;
}

// Gaussian random field with exponential covariance sill * exp(-h / range)
// at the given locations, by Cholesky factorisation.
std::vector<double> gaussian_field(const std::vector<double>& x, const std::vector<double>& y, double sill,
                                   double range, std::mt19937_64& rng) {
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            c(i, j) = sill * std::exp(-std::hypot(x[i] - x[j], y[i] - y[j]) / range) + (i == j ? 1e-10 : 0.0);
    const Eigen::MatrixXd l = c.llt().matrixL();
    std::normal_distribution<double> nd;
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = nd(rng);
    const Eigen::VectorXd f = l * w;
    return {f.data(), f.data() + f.size()};
}

}  // namespace

TEST_SUITE("svrkrig") {

TEST_CASE("rbf kernel identities") {
    const RowMatrix a = random_matrix(5, 4, 1);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(rbf_kernel(a.row(i).data(), a.row(i).data(), 4, 0.7) == 1.0);
    const RowMatrix k = rbf_kernel_matrix(a, a, 0.7);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 5; ++j) {
            const double d = (a.row(i) - a.row(j)).squaredNorm();
            CHECK(std::abs(k(i, j) - std::exp(-0.7 * d)) <= 1e-15);
        }
}

TEST_CASE("a single support vector with unit dual predicts 1 at itself") {
    SvrModel m;
    m.support_vectors = random_matrix(1, 3, 2);
    m.dual_coeffs = {1.0};
    m.params.gamma = 0.5;
    CHECK(m.predict(m.support_vectors.data(), 3) == 1.0);
}

TEST_CASE("prediction matches a direct kernel sum") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        SvrModel m;
        m.support_vectors = random_matrix(15, 6, 10 + t);
        m.dual_coeffs.resize(15);
        for (auto& d : m.dual_coeffs) d = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        m.bias = 0.3;
        m.params.gamma = 0.8;
        const RowMatrix x = random_matrix(9, 6, 50 + t);
        const auto p = predict_svr(m, x);
        for (Eigen::Index i = 0; i < 9; ++i)
            CHECK(std::abs(p[static_cast<std::size_t>(i)] - expand(m, x.row(i).data(), 6)) <= 1e-12);
    }
}

TEST_CASE("a constant target is fitted within the tube with vanishing duals") {
    const RowMatrix x = random_matrix(30, 5, 4);
    const std::vector<double> z(30, 0.7);
    SvrParams p;
    p.epsilon = 0.05;
    const SvrModel m = train_svr(x, z, p);
    for (double f : predict_svr(m, x)) CHECK(std::abs(f - 0.7) <= p.epsilon + 1e-3);
    double total = 0.0;
    for (double d : m.dual_coeffs) total += std::abs(d);
    CHECK(total <= 1e-6);
}

TEST_CASE("solutions satisfy the tube optimality conditions") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const RowMatrix x = random_matrix(60, 8, seed);
        const auto z = smooth_targets(x, seed);
        SvrParams p;
        p.cost = seed % 2 ? 25.296 : 0.5;
        p.gamma = 0.5;
        const SvrModel m = train_svr(x, z, p);
        CHECK(kkt_residual(m, x, z) <= 1e-3);
        CHECK(m.state.kkt_violation <= 1e-3);
        const auto f = predict_svr(m, x);
        const auto beta = full_beta(m, z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            const bool in_tube = std::abs(f[i] - z[i]) <= p.epsilon + 1e-3;
            const bool at_bound = std::abs(beta[i]) >= p.cost - 1e-12;
            CHECK((in_tube || at_bound));
            CHECK(std::abs(beta[i]) <= p.cost);
            CHECK(m.state.slack_upper[i] >= 0.0);
            CHECK(m.state.slack_lower[i] >= 0.0);
        }
        for (std::size_t k = 0; k < m.dual_coeffs.size(); ++k)
            CHECK(std::abs(m.predict(x.row(static_cast<Eigen::Index>(m.state.support_rows[k])).data(), 8) -
                           f[m.state.support_rows[k]]) <= 1e-12);
    }
}

TEST_CASE("the solution beats 100 random feasible dual points") {
    const RowMatrix x = random_matrix(40, 6, 9);
    const auto z = smooth_targets(x, 9);
    SvrParams p;
    p.cost = 3.0;
    p.gamma = 0.4;
    const SvrModel m = train_svr(x, z, p);
    const RowMatrix k = rbf_kernel_matrix(x, x, p.gamma);
    const double best = svr_dual_objective(k, full_beta(m, z.size()), z, p.epsilon);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-p.cost, p.cost);
    for (int t = 0; t < 100; ++t) {
        // Feasible: |beta| <= C and sum beta = 0, by pairing opposite entries.
        std::vector<double> b(z.size(), 0.0);
        for (std::size_t i = 0; i + 1 < b.size(); i += 2) {
            b[i] = u(rng);
            b[i + 1] = -b[i];
        }
        std::shuffle(b.begin(), b.end(), rng);
        CHECK(best >= svr_dual_objective(k, b, z, p.epsilon) - 1e-9);
    }
}

TEST_CASE("the iteration cap raises a convergence error") {
    const RowMatrix x = random_matrix(50, 5, 2);
    SvrSolverSettings s;
    s.max_iterations = 3;
    CHECK_THROWS_AS(train_svr(x, smooth_targets(x, 2), SvrParams{}, {}, s), ConvergenceError);
    SvrParams bad;
    bad.cost = 0.0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("model archives round-trip") {
    const RowMatrix x = random_matrix(25, 4, 5);
    std::vector<SvrModel> models;
    for (int k = 0; k < 3; ++k) models.push_back(train_svr(x, smooth_targets(x, k), SvrParams{}, {k, 2 * k}));
    const auto path = (std::filesystem::temp_directory_path() / "floodcnn_test_svr.bin").string();
    write_svr_archive(path, models);
    const auto back = read_svr_archive(path);
    REQUIRE(back.size() == 3);
    for (int k = 0; k < 3; ++k) {
        CHECK(back[k].location == models[k].location);
        CHECK(predict_svr(back[k], x) == predict_svr(models[k], x));
        CHECK(kkt_residual(back[k], x, smooth_targets(x, k)) <= 1e-3);
    }
    std::filesystem::remove(path);
}

TEST_CASE("sampling is seeded, exhaustive at the limit and bounded") {
    const RasterGrid dem(geometry(10, 10, 5.0), 1.0);
    std::vector<unsigned char> wet(100, 0);
    for (int i = 0; i < 40; ++i) wet[i] = 1;
    CHECK(sample_locations(dem, wet, 30, 4) == sample_locations(dem, wet, 30, 4));
    CHECK(sample_locations(dem, wet, 30, 4) != sample_locations(dem, wet, 30, 5));
    auto all = sample_locations(dem, wet, 100, 1);
    std::set<CellIndex> distinct(all.begin(), all.end());
    CHECK(distinct.size() == 100);
    CHECK_THROWS_AS(sample_locations(dem, wet, 101, 1), DomainError);
    const auto some = sample_locations(dem, wet, 20, 2);
    const auto in_wet = std::count_if(some.begin(), some.end(), [&](CellIndex c) { return wet[c.row * 10 + c.col]; });
    CHECK(in_wet == 18);
}

TEST_CASE("sampled locations are spread like a uniform sample") {
    const int side = 60;
    const RasterGrid dem(geometry(side, side, 5.0), 1.0);
    const std::vector<unsigned char> wet(dem.size(), 1);
    const std::size_t n = 200;
    // Clark-Evans expectation for a uniform pattern: 0.5 sqrt(area / n), in cells.
    const double expected = 0.5 * std::sqrt(static_cast<double>(side * side) / n);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto pts = sample_locations(dem, wet, n, seed);
        double mean = 0.0;
        for (const auto& a : pts) {
            double best = INFINITY;
            for (const auto& b : pts)
                if (!(a == b)) best = std::min(best, std::hypot(a.row - b.row, a.col - b.col));
            mean += best;
        }
        mean /= static_cast<double>(n);
        CHECK(mean <= 3.0 * expected);
        CHECK(mean >= expected / 3.0);
    }
}

TEST_CASE("an exact linear depth-elevation relation is recovered") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<double> z(400);
    for (auto& v : z) v = u(rng);
    const RasterGrid dem(geometry(20, 20, 5.0), RasterGrid::default_nodata, z);
    std::vector<std::pair<CellIndex, double>> pts;
    for (int k = 0; k < 40; ++k) {
        const CellIndex c{k / 2, (k * 7) % 20};
        pts.push_back({c, 2.5 - 0.2 * dem.at(c)});
    }
    const KrigingModel m = fit_rk(dem, pts);
    CHECK(std::abs(m.intercept - 2.5) <= 1e-9);
    CHECK(std::abs(m.slope + 0.2) <= 1e-9);
    CHECK(m.zero_residuals);
    CHECK(m.variogram.nugget == 0.0);
    const RasterGrid out = interpolate_rk(m, dem, 0.3);
    for (std::size_t i = 0; i < dem.size(); ++i) {
        const double t = std::max(0.0, 2.5 - 0.2 * dem[i]);
        CHECK(std::abs(out[i] - (t > 0.3 ? t : 0.0)) <= 1e-9);
    }
}

TEST_CASE("a flat DEM falls back to a mean-only trend") {
    const RasterGrid dem(geometry(8, 8, 5.0), 3.0);
    std::vector<std::pair<CellIndex, double>> pts;
    for (int k = 0; k < 12; ++k) pts.push_back({{2 * (k / 4), 2 * (k % 4)}, 0.1 * k});
    const KrigingModel m = fit_rk(dem, pts);
    CHECK(m.mean_only_trend);
    CHECK(m.intercept == doctest::Approx(0.55));
    CHECK_THROWS_AS(fit_rk(dem, {pts.begin(), pts.begin() + 9}), DomainError);
}

TEST_CASE("kriging with zero nugget reproduces the samples exactly") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    std::vector<double> z(30 * 30);
    for (auto& v : z) v = u(rng);
    const RasterGrid dem(geometry(30, 30, 5.0), RasterGrid::default_nodata, z);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::pair<CellIndex, double>> pts;
        std::set<CellIndex> used;
        std::uniform_int_distribution<int> cell(0, 29);
        while (pts.size() < 60) {
            const CellIndex c{cell(rng), cell(rng)};
            if (used.insert(c).second) pts.push_back({c, u(rng)});
        }
        KrigingModel m = fit_rk(dem, pts);
        m.variogram.nugget = 0.0;
        solve_kriging_weights(m);
        const auto& g = dem.geometry();
        for (const auto& [c, v] : pts) {
            const double e = m.estimate(g.x_of(c.col), g.y_of(c.row), dem.at(c));
            CHECK(std::abs(e - v) <= 1e-8 * (1.0 + std::abs(v)));
        }
        const RasterGrid raw = interpolate_rk_raw(m, dem);
        for (const auto& [c, v] : pts) CHECK(std::abs(raw.at(c) - v) <= 1e-8 * (1.0 + std::abs(v)));
    }
}

TEST_CASE("the variogram fit recovers a known exponential field") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    double mean_range = 0.0, mean_sill = 0.0;
    const int realizations = 10;
    for (int k = 0; k < realizations; ++k) {
        std::vector<double> x(600), y(600);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = u(rng);
            y[i] = u(rng);
        }
        const auto f = gaussian_field(x, y, 1.0, 50.0, rng);
        const Variogram v = fit_exponential(empirical_variogram(x, y, f));
        CHECK(v.sill >= v.nugget);
        CHECK(v.range > 0.0);
        mean_range += v.range / realizations;
        mean_sill += v.sill / realizations;
    }
    CHECK(std::abs(mean_range - 50.0) <= 0.3 * 50.0);
    CHECK(std::abs(mean_sill - 1.0) <= 0.2);
}

TEST_CASE("leave-one-out kriging beats the trend alone on a correlated field") {
    std::mt19937_64 rng(31);
    const GridGeometry g = geometry(40, 40, 5.0);
    std::vector<double> elev(g.cell_count());
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 40; ++c) elev[g.linear({r, c})] = 0.05 * c + 0.02 * r;
    const RasterGrid dem(g, RasterGrid::default_nodata, elev);
    std::vector<CellIndex> cells;
    std::set<CellIndex> used;
    std::uniform_int_distribution<int> cell(0, 39);
    while (cells.size() < 80) {
        const CellIndex c{cell(rng), cell(rng)};
        if (used.insert(c).second) cells.push_back(c);
    }
    std::vector<double> x, y;
    for (const auto& c : cells) {
        x.push_back(g.x_of(c.col));
        y.push_back(g.y_of(c.row));
    }
    const auto field = gaussian_field(x, y, 0.25, 60.0, rng);
    std::vector<std::pair<CellIndex, double>> pts;
    for (std::size_t i = 0; i < cells.size(); ++i) pts.push_back({cells[i], 1.0 - 0.3 * dem.at(cells[i]) + field[i]});
    double err_rk = 0.0, err_trend = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        auto rest = pts;
        rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i));
        const KrigingModel m = fit_rk(dem, rest);
        const double elev_i = dem.at(pts[i].first);
        err_rk += std::abs(m.estimate(x[i], y[i], elev_i) - pts[i].second);
        err_trend += std::abs(m.trend(elev_i) - pts[i].second);
    }
    CHECK(err_rk < err_trend);
}

TEST_CASE("the pipeline on a toy problem") {
    const GridGeometry g = geometry(8, 8, 5.0);
    std::vector<double> elev(g.cell_count());
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) elev[g.linear({r, c})] = 0.1 * c;
    const RasterGrid dem(g, RasterGrid::default_nodata, elev);
    Dataset train;
    train.features.values = random_matrix(30, 4, 1);
    train.targets.geometry = g;
    train.targets.values = RowMatrix::Zero(30, 64);
    for (std::size_t i = 0; i < 64; ++i) train.targets.cell_map.push_back(i);
    for (Eigen::Index r = 0; r < 30; ++r)
        for (int c = 0; c < 4; ++c)
            for (int row = 0; row < 8; ++row)
                train.targets.values(r, g.linear({row, c})) = 0.4 + train.features.values(r, 0) * (1.0 - 0.2 * c);
    FeatureMatrix test;
    test.values = random_matrix(5, 4, 2);

    SUBCASE("rasters reproduce the point predictions at the sampled cells") {
        const auto res = run_svr_pipeline(train, test, dem, 32, SvrParams{}, 3);
        REQUIRE(res.rasters.size() == 5);
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t k = 0; k < res.locations.size(); ++k) {
                const double p = std::max(0.0, res.point_predictions[r * res.locations.size() + k]);
                CHECK(std::abs(res.rasters[r].at(res.locations[k]) - (p > 0.3 ? p : 0.0)) <= 1e-12);
            }
        const auto again = run_svr_pipeline(train, test, dem, 32, SvrParams{}, 3);
        for (std::size_t r = 0; r < 5; ++r) CHECK(again.rasters[r] == res.rasters[r]);
    }

    SUBCASE("location order does not matter") {
        const auto locs = sample_locations(dem, training_wet_mask(train.targets, dem), 20, 1);
        auto shuffled = locs;
        std::reverse(shuffled.begin(), shuffled.end());
        const auto a = train_svr_locations(train, locs, SvrParams{});
        const auto b = train_svr_locations(train, shuffled, SvrParams{});
        for (std::size_t k = 0; k < locs.size(); ++k) {
            const auto& mb = b[locs.size() - 1 - k];
            CHECK(mb.location == a[k].location);
            CHECK(predict_svr(mb, test.values) == predict_svr(a[k], test.values));
        }
    }

    SUBCASE("a dry scenario stays dry") {
        Dataset dry = train;
        dry.targets.values.setZero();
        const auto res = run_svr_pipeline(dry, test, dem, 20, SvrParams{}, 2);
        for (const auto& r : res.rasters)
            for (double v : r.values()) CHECK(v == 0.0);
    }
}

}
