#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "floodcnn/error.hpp"
#include "floodcnn/hydrograph.hpp"

using namespace floodcnn;

namespace {

Hydrograph random_hydrograph(std::mt19937_64& rng, std::size_t n = 0) {
    std::uniform_int_distribution<std::size_t> len(2, 60);
    std::uniform_real_distribution<double> q(0.0, 500.0);
    if (n == 0) n = len(rng);
    std::vector<double> f(n);
    for (auto& x : f) x = q(rng);
    f[n / 2] += 1.0;  // a positive peak
    return Hydrograph(f, 900.0);
}

RasterGrid flat_dem(int n = 6) {
    GridGeometry g;
    g.ncols = g.nrows = n;
    return RasterGrid(g, 0.0);
}

}  // namespace

TEST_SUITE("hydrograph") {

TEST_CASE("construction enforces the hydrograph invariants") {
    CHECK_THROWS_AS(Hydrograph({1.0}), DomainError);
    CHECK_THROWS_AS(Hydrograph({1.0, -0.1}), DomainError);
    CHECK_THROWS_AS(Hydrograph({1.0, 2.0}, 0.0), DomainError);
    CHECK_THROWS_AS(Hydrograph({1.0, INFINITY}), DomainError);
    const Hydrograph h({1.0, 2.0, 3.0});
    CHECK(h.dt() == 900.0);
    CHECK(h.duration() == 1800.0);
    CHECK(h.value_at(450.0) == doctest::Approx(1.5));
    CHECK(h.value_at(-10.0) == 1.0);
    CHECK(h.value_at(1e9) == 3.0);
}

TEST_CASE("scaling [10, 50, 20] to 100 gives [20, 100, 40]") {
    const Hydrograph s = scale_hydrograph(Hydrograph({10.0, 50.0, 20.0}), 100.0);
    CHECK(s[0] == 20.0);
    CHECK(s[1] == 100.0);
    CHECK(s[2] == 40.0);
}

TEST_CASE("scaled peak equals the requested 1800 m3/s") {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 20; ++k) {
        const Hydrograph h = random_hydrograph(rng);
        const Hydrograph s = scale_hydrograph(h, 1800.0);
        CHECK(s.peak() == 1800.0);
        CHECK(s.peak_index() == h.peak_index());
        CHECK(s.dt() == h.dt());
        CHECK(s.t0() == h.t0());
        CHECK(s.size() == h.size());
    }
}

TEST_CASE("scaling preserves flow ratios on 100 random hydrographs") {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 100; ++k) {
        const Hydrograph h = random_hydrograph(rng);
        const double target = h.peak() * (1.0 + std::uniform_real_distribution<double>(0.01, 5.0)(rng));
        const Hydrograph s = scale_hydrograph(h, target);
        CHECK(std::abs(s.peak() - target) <= 1e-12 * target);
        for (std::size_t i = 0; i < h.size(); ++i)
            for (std::size_t j = 0; j < h.size(); ++j)
                if (h[j] > 0.0) REQUIRE(std::abs(s[i] / s[j] - h[i] / h[j]) <= 1e-12 * std::max(1.0, h[i] / h[j]));
    }
}

TEST_CASE("scaling twice equals scaling once") {
    std::mt19937_64 rng(23);
    for (int k = 0; k < 50; ++k) {
        const Hydrograph h = random_hydrograph(rng);
        const double p1 = h.peak() * 1.7, p2 = h.peak() * 3.1;
        const Hydrograph a = scale_hydrograph(scale_hydrograph(h, p1), p2), b = scale_hydrograph(h, p2);
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * std::max(1.0, b[i]));
    }
}

TEST_CASE("scaling rejects a target at or below the observed peak") {
    const Hydrograph h({1.0, 5.0, 2.0});
    CHECK_THROWS_AS(scale_hydrograph(h, 5.0), DomainError);
    CHECK_THROWS_AS(scale_hydrograph(h, 4.0), DomainError);
    CHECK_THROWS_AS(scale_hydrograph(Hydrograph({0.0, 0.0}), 10.0), DomainError);
}

TEST_CASE("resampling to the same step is the identity") {
    std::mt19937_64 rng(2);
    const Hydrograph h = random_hydrograph(rng, 20);
    CHECK(resample_to_step(h, 900.0) == h);
}

TEST_CASE("resampling [0, 10] to half the step inserts the midpoint") {
    const Hydrograph r = resample_to_step(Hydrograph({0.0, 10.0}, 900.0), 450.0);
    REQUIRE(r.size() == 3);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 5.0);
    CHECK(r[2] == 10.0);
}

TEST_CASE("resampling down and back up round-trips and never overshoots") {
    std::mt19937_64 rng(9);
    for (int k = 0; k < 50; ++k) {
        const Hydrograph h = random_hydrograph(rng);
        const Hydrograph fine = resample_to_step(h, 450.0);
        const Hydrograph back = resample_to_step(fine, 900.0);
        REQUIRE(back.size() == h.size());
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(back[i] - h[i]) <= 1e-12 * std::max(1.0, h[i]));
        const auto [lo, hi] = std::minmax_element(h.flows().begin(), h.flows().end());
        for (double q : fine.flows()) {
            CHECK(q >= *lo);
            CHECK(q <= *hi);
        }
        CHECK(fine[fine.size() - 1] == h[h.size() - 1]);
    }
}

TEST_CASE("three aligned hydrographs form a boundary set in order") {
    const RasterGrid dem = flat_dem();
    const std::vector<std::pair<std::string, CellIndex>> pts = {{"u1", {0, 5}}, {"u2", {5, 2}}, {"u3", {5, 4}}};
    const std::vector<Hydrograph> hs = {Hydrograph({1, 9, 3}), Hydrograph({1, 2, 1}), Hydrograph({0, 3, 1})};
    const BoundarySet set = make_boundary_set(dem, pts, hs);
    REQUIRE(set.entries.size() == 3);
    CHECK(set.entries[1].label == "u2");
    CHECK(set.entries[2].cell == CellIndex{5, 4});
    CHECK(set.warnings.empty());
    CHECK(set.steps() == 3);
}

TEST_CASE("misaligned, misplaced or duplicated boundaries are rejected") {
    const RasterGrid dem = flat_dem();
    const std::vector<std::pair<std::string, CellIndex>> pts = {{"u1", {0, 5}}, {"u2", {5, 2}}};
    CHECK_THROWS_AS(make_boundary_set(dem, pts, {Hydrograph({1, 2}, 900.0), Hydrograph({1, 2}, 600.0)}),
                    AlignmentError);
    CHECK_THROWS_AS(make_boundary_set(dem, pts, {Hydrograph({1, 2}), Hydrograph({1, 2, 3})}), AlignmentError);
    CHECK_THROWS_AS(make_boundary_set(dem, pts, {Hydrograph({1, 2})}), AlignmentError);
    CHECK_THROWS_AS(make_boundary_set(dem, {{"u1", {6, 0}}}, {Hydrograph({1, 2})}), IndexError);
    CHECK_THROWS_AS(make_boundary_set(dem, {{"a", {1, 1}}, {"b", {1, 1}}}, {Hydrograph({1, 2}), Hydrograph({1, 2})}),
                    IndexError);
}

TEST_CASE("a tributary out-peaking the main inflow raises a warning") {
    const RasterGrid dem = flat_dem();
    const BoundarySet set = make_boundary_set(dem, {{"main", {0, 5}}, {"trib", {5, 2}}},
                                              {Hydrograph({1, 5, 2}), Hydrograph({1, 8, 2})});
    REQUIRE(set.warnings.size() == 1);
    CHECK(set.warnings[0].find("trib") != std::string::npos);
}

TEST_CASE("gamma hydrographs peak at the requested time") {
    const Hydrograph h = gamma_hydrograph(10.0, 100.0, 9000.0, 3.0, 41, 900.0);
    CHECK(h.peak_index() == 10);
    CHECK(h.peak() == doctest::Approx(100.0));
    CHECK(h[0] == 10.0);
}

TEST_CASE("csv and manifest files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "floodcnn_test_hydro";
    std::filesystem::create_directories(dir);
    const RasterGrid dem = flat_dem();
    const BoundarySet set = make_boundary_set(dem, {{"u1", {0, 5}}, {"u2", {5, 2}}},
                                              {Hydrograph({1.25, 7.5, 2.0}, 300.0), Hydrograph({0.5, 1.0, 0.75}, 300.0)});
    write_hydrograph_csv((dir / "u1.csv").string(), set.entries[0].hydrograph);
    write_hydrograph_csv((dir / "u2.csv").string(), set.entries[1].hydrograph);
    CHECK(read_hydrograph_csv((dir / "u1.csv").string()) == set.entries[0].hydrograph);
    write_boundary_manifest((dir / "event.manifest").string(), set, {"u1.csv", "u2.csv"});
    const BoundarySet back = read_boundary_manifest((dir / "event.manifest").string(), dem);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].label == "u2");
    CHECK(back.entries[1].cell == CellIndex{5, 2});
    CHECK(back.entries[1].hydrograph == set.entries[1].hydrograph);
    std::filesystem::remove_all(dir);
}

}
