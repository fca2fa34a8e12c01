#include "floodcnn/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <random>

#include <json.hpp>

#include "floodcnn/error.hpp"

namespace floodcnn {

static_assert(std::endian::native == std::endian::little, "matrix files assume little-endian hosts");

std::vector<double> threshold_depths(std::span<const double> depths, double tau) {
    if (tau < 0.0) throw DomainError("depth threshold must be non-negative");
    std::vector<double> out(depths.size());
    for (std::size_t i = 0; i < depths.size(); ++i) out[i] = depths[i] > tau ? depths[i] : 0.0;
    return out;
}

FeatureMatrix build_features(const BoundarySet& boundaries, const FeatureSpec& spec) {
    if (spec.lags < 0 || spec.upstream_count < 1) throw DomainError("invalid feature spec");
    if (static_cast<int>(boundaries.entries.size()) != spec.upstream_count)
        throw AlignmentError("feature spec expects " + std::to_string(spec.upstream_count) +
                             " upstream points, boundary set has " +
                             std::to_string(boundaries.entries.size()));
    require_aligned(boundaries);
    const std::size_t n = boundaries.steps();
    const std::size_t skip = spec.skipped_rows();
    if (n <= skip) throw AlignmentError("hydrograph shorter than the lag depth");
    const std::size_t rows = n - skip;

    FeatureMatrix fm;
    fm.values.resize(static_cast<Eigen::Index>(rows), spec.width());
    if (spec.include_time) fm.col_names.push_back("time_s");
    for (const auto& e : boundaries.entries)
        for (int k = 0; k <= spec.lags; ++k)
            fm.col_names.push_back(e.label + "_lag" + std::to_string(k));

    const auto& first = boundaries.entries.front().hydrograph;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = r + skip;
        Eigen::Index col = 0;
        if (spec.include_time) fm.values(r, col++) = first.time_of(t) - first.t0();
        for (const auto& e : boundaries.entries) {
            const auto& h = e.hydrograph;
            for (int k = 0; k <= spec.lags; ++k) {
                const auto lagged = static_cast<std::ptrdiff_t>(t) - k;
                fm.values(r, col++) = h[static_cast<std::size_t>(std::max<std::ptrdiff_t>(lagged, 0))];
            }
        }
    }
    fm.scenario_rows = {rows};
    return fm;
}

FeatureMatrix stack_features(const std::vector<FeatureMatrix>& parts) {
    if (parts.empty()) throw DomainError("nothing to stack");
    FeatureMatrix out;
    out.col_names = parts.front().col_names;
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.col_names != out.col_names) throw AlignmentError("feature layouts differ between scenarios");
        if (p.norm) throw DomainError("stack raw features, then normalize");
        total += p.values.rows();
    }
    out.values.resize(total, static_cast<Eigen::Index>(out.col_names.size()));
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.values.middleRows(at, p.values.rows()) = p.values;
        at += p.values.rows();
        out.scenario_rows.insert(out.scenario_rows.end(), p.scenario_rows.begin(), p.scenario_rows.end());
    }
    return out;
}

std::vector<std::size_t> valid_cell_map(const RasterGrid& dem) {
    std::vector<std::size_t> map;
    map.reserve(dem.size());
    for (std::size_t i = 0; i < dem.size(); ++i)
        if (!dem.is_nodata(i)) map.push_back(i);
    return map;
}

TargetMatrix build_targets(const ScenarioRun& run, double tau) {
    if (tau < 0.0) throw DomainError("depth threshold must be non-negative");
    if (run.depths.empty()) throw AlignmentError("scenario has no snapshots");
    TargetMatrix tm;
    tm.threshold = tau;
    tm.geometry = run.depths.front().geometry();
    tm.nodata = run.depths.front().nodata();
    tm.cell_map = valid_cell_map(run.depths.front());
    tm.values.resize(static_cast<Eigen::Index>(run.depths.size()),
                     static_cast<Eigen::Index>(tm.cell_map.size()));
    for (std::size_t s = 0; s < run.depths.size(); ++s) {
        const auto& d = run.depths[s];
        if (!d.compatible_with(run.depths.front()))
            throw AlignmentError("snapshot " + std::to_string(s) + " is not grid-compatible");
        for (std::size_t j = 0; j < tm.cell_map.size(); ++j) {
            const double v = d[tm.cell_map[j]];
            if (d.is_nodata(tm.cell_map[j]))
                throw AlignmentError("snapshot " + std::to_string(s) + " has nodata where the first does not");
            tm.values(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = v > tau ? v : 0.0;
        }
    }
    tm.scenario_rows = {run.depths.size()};
    return tm;
}

TargetMatrix build_targets(const ScenarioRun& run, double tau, const FeatureSpec& spec,
                           std::size_t feature_rows) {
    const std::size_t skip = spec.skipped_rows();
    if (run.depths.size() < skip || run.depths.size() - skip != feature_rows)
        throw AlignmentError("scenario has " + std::to_string(run.depths.size()) +
                             " snapshots but features have " + std::to_string(feature_rows) +
                             " rows (skipping " + std::to_string(skip) + ")");
    TargetMatrix tm = build_targets(run, tau);
    if (skip > 0) {
        RowMatrix kept = tm.values.bottomRows(static_cast<Eigen::Index>(feature_rows));
        tm.values = std::move(kept);
        tm.scenario_rows = {feature_rows};
    }
    return tm;
}

TargetMatrix stack_targets(const std::vector<TargetMatrix>& parts) {
    if (parts.empty()) throw DomainError("nothing to stack");
    TargetMatrix out;
    const auto& f = parts.front();
    out.threshold = f.threshold;
    out.geometry = f.geometry;
    out.nodata = f.nodata;
    out.cell_map = f.cell_map;
    out.dry_cells = f.dry_cells;
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.cell_map != f.cell_map || p.dry_cells != f.dry_cells || !(p.geometry == f.geometry))
            throw AlignmentError("target layouts differ between scenarios");
        if (p.threshold != f.threshold) throw AlignmentError("targets use different thresholds");
        total += p.values.rows();
    }
    out.values.resize(total, static_cast<Eigen::Index>(f.cell_map.size()));
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.values.middleRows(at, p.values.rows()) = p.values;
        at += p.values.rows();
        out.scenario_rows.insert(out.scenario_rows.end(), p.scenario_rows.begin(), p.scenario_rows.end());
    }
    return out;
}

TargetMatrix prune_dry_columns(const TargetMatrix& targets) {
    std::vector<std::size_t> keep;
    for (Eigen::Index j = 0; j < targets.values.cols(); ++j)
        if ((targets.values.col(j).array() > 0.0).any()) keep.push_back(targets.cell_map[static_cast<std::size_t>(j)]);
    return select_columns(targets, keep);
}

TargetMatrix select_columns(const TargetMatrix& targets, const std::vector<std::size_t>& cell_map) {
    TargetMatrix out = targets;
    out.cell_map = cell_map;
    out.values.resize(targets.values.rows(), static_cast<Eigen::Index>(cell_map.size()));
    for (std::size_t k = 0; k < cell_map.size(); ++k) {
        const auto it = std::lower_bound(targets.cell_map.begin(), targets.cell_map.end(), cell_map[k]);
        if (it == targets.cell_map.end() || *it != cell_map[k])
            throw IndexError("cell " + std::to_string(cell_map[k]) + " has no target column");
        out.values.col(static_cast<Eigen::Index>(k)) = targets.values.col(it - targets.cell_map.begin());
    }
    std::vector<std::size_t> kept = cell_map, dropped;
    std::sort(kept.begin(), kept.end());
    std::set_difference(targets.cell_map.begin(), targets.cell_map.end(), kept.begin(), kept.end(),
                        std::back_inserter(dropped));
    out.dry_cells.clear();
    std::merge(targets.dry_cells.begin(), targets.dry_cells.end(), dropped.begin(), dropped.end(),
               std::back_inserter(out.dry_cells));
    return out;
}

RasterGrid unflatten(std::span<const double> row, const std::vector<std::size_t>& cell_map,
                     const GridGeometry& geometry, double nodata, const std::vector<std::size_t>& dry_cells) {
    if (row.size() != cell_map.size()) throw ShapeError("row length does not match the cell map");
    std::vector<double> v(geometry.cell_count(), nodata);
    for (std::size_t c : dry_cells) v.at(c) = 0.0;
    for (std::size_t j = 0; j < cell_map.size(); ++j) v.at(cell_map[j]) = row[j];
    return RasterGrid(geometry, nodata, std::move(v));
}

RasterGrid unflatten(const TargetMatrix& targets, std::size_t row) {
    const auto r = targets.values.row(static_cast<Eigen::Index>(row));
    return unflatten(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())),
                     targets.cell_map, targets.geometry, targets.nodata, targets.dry_cells);
}

std::vector<double> flatten(const RasterGrid& grid, const std::vector<std::size_t>& cell_map) {
    std::vector<double> out(cell_map.size());
    for (std::size_t j = 0; j < cell_map.size(); ++j) out[j] = grid[cell_map[j]];
    return out;
}

FeatureMatrix apply_normalizer(const FeatureMatrix& features, const Normalizer& norm) {
    if (norm.min.size() != features.cols() || norm.max.size() != features.cols())
        throw ShapeError("normalizer width does not match the features");
    FeatureMatrix out = features;
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
        const double lo = norm.min[c], span = norm.max[c] - norm.min[c];
        if (span > 0.0) {
            out.values.col(c) = (features.values.col(c).array() - lo) / span;
        } else {
            out.values.col(c).setZero();
        }
    }
    out.norm = norm;
    return out;
}

FeatureMatrix fit_normalizer(const FeatureMatrix& features) {
    if (features.rows() == 0) throw DomainError("cannot fit a normalizer on zero rows");
    Normalizer n;
    for (Eigen::Index c = 0; c < features.values.cols(); ++c) {
        n.min.push_back(features.values.col(c).minCoeff());
        n.max.push_back(features.values.col(c).maxCoeff());
    }
    return apply_normalizer(features, n);
}

Dataset select_rows(const Dataset& data, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.features.col_names = data.features.col_names;
    out.features.norm = data.features.norm;
    out.targets.threshold = data.targets.threshold;
    out.targets.geometry = data.targets.geometry;
    out.targets.nodata = data.targets.nodata;
    out.targets.cell_map = data.targets.cell_map;
    out.targets.dry_cells = data.targets.dry_cells;
    out.features.values.resize(static_cast<Eigen::Index>(rows.size()), data.features.values.cols());
    out.targets.values.resize(static_cast<Eigen::Index>(rows.size()), data.targets.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.values.row(i) = data.features.values.row(rows[i]);
        out.targets.values.row(i) = data.targets.values.row(rows[i]);
    }
    out.features.scenario_rows = {rows.size()};
    out.targets.scenario_rows = {rows.size()};
    return out;
}

std::pair<Dataset, Dataset> split(const FeatureMatrix& features, const TargetMatrix& targets,
                                  const SplitSpec& spec) {
    if (features.rows() != targets.rows())
        throw AlignmentError("features and targets differ in row count");
    if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0))
        throw DomainError("val_fraction must lie in (0, 1)");
    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> train, val;
    const Dataset all{features, targets};

    if (spec.mode == SplitMode::by_row) {
        const std::size_t n = features.rows();
        const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
        if (n_val == 0 || n_val >= n) throw DomainError("split leaves one side empty");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
        std::sort(val.begin(), val.end());
        std::sort(train.begin(), train.end());
        return {select_rows(all, train), select_rows(all, val)};
    }

    const auto& counts = features.scenario_rows;
    if (counts.empty() || std::accumulate(counts.begin(), counts.end(), std::size_t{0}) != features.rows())
        throw AlignmentError("feature matrix lacks per-scenario row counts");
    const std::size_t s = counts.size();
    const auto s_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(s)));
    if (s_val == 0 || s_val >= s) throw DomainError("split leaves one side without scenarios");
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_val(s, false);
    for (std::size_t k = 0; k < s_val; ++k) is_val[order[k]] = true;
    std::vector<std::size_t> train_counts, val_counts;
    std::size_t start = 0;
    for (std::size_t k = 0; k < s; ++k) {
        auto& dest = is_val[k] ? val : train;
        for (std::size_t r = 0; r < counts[k]; ++r) dest.push_back(start + r);
        (is_val[k] ? val_counts : train_counts).push_back(counts[k]);
        start += counts[k];
    }
    auto tr = select_rows(all, train);
    auto va = select_rows(all, val);
    tr.features.scenario_rows = tr.targets.scenario_rows = train_counts;
    va.features.scenario_rows = va.targets.scenario_rows = val_counts;
    return {std::move(tr), std::move(va)};
}

namespace {
constexpr char matrix_magic[8] = {'F', 'C', 'M', 'A', 'T', 'R', 'X', '1'};
}

void write_matrix_binary(const std::string& path, const RowMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write '" + path + "'");
    const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
    out.write(matrix_magic, sizeof matrix_magic);
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!out) throw DomainError("failed writing '" + path + "'");
}

RowMatrix read_matrix_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open matrix '" + path + "'");
    char magic[8];
    std::uint64_t rows = 0, cols = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!in || std::memcmp(magic, matrix_magic, sizeof magic) != 0)
        throw LoadError("'" + path + "' is not a matrix file");
    if (rows > (1ull << 32) || cols > (1ull << 32)) throw LoadError("'" + path + "' has an absurd shape");
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!in) throw LoadError("'" + path + "' is truncated");
    return m;
}

void write_matrix_csv(const std::string& path, const RowMatrix& m, const std::vector<std::string>& header) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    if (!header.empty()) out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
        out << '\n';
    }
}

void write_dataset(const std::string& stem, const Dataset& data) {
    write_matrix_binary(stem + ".features.bin", data.features.values);
    write_matrix_binary(stem + ".targets.bin", data.targets.values);
    nlohmann::json j;
    j["col_names"] = data.features.col_names;
    j["scenario_rows"] = data.features.scenario_rows;
    if (data.features.norm) {
        j["norm"]["min"] = data.features.norm->min;
        j["norm"]["max"] = data.features.norm->max;
    } else {
        j["norm"] = nullptr;
    }
    const auto& t = data.targets;
    j["threshold"] = t.threshold;
    j["geometry"] = {{"ncols", t.geometry.ncols},         {"nrows", t.geometry.nrows},
                     {"xllcorner", t.geometry.xllcorner}, {"yllcorner", t.geometry.yllcorner},
                     {"cellsize", t.geometry.cellsize},   {"nodata", t.nodata}};
    j["cell_map"] = t.cell_map;
    j["dry_cells"] = t.dry_cells;
    std::ofstream(stem + ".manifest.json") << j.dump() << '\n';
}

Dataset read_dataset(const std::string& stem) {
    std::ifstream in(stem + ".manifest.json");
    if (!in) throw ManifestError("missing dataset manifest '" + stem + ".manifest.json' (run `build-dataset` first)");
    Dataset d;
    try {
        nlohmann::json j;
        in >> j;
        d.features.values = read_matrix_binary(stem + ".features.bin");
        d.targets.values = read_matrix_binary(stem + ".targets.bin");
        d.features.col_names = j.at("col_names").get<std::vector<std::string>>();
        d.features.scenario_rows = j.at("scenario_rows").get<std::vector<std::size_t>>();
        d.targets.scenario_rows = d.features.scenario_rows;
        if (!j.at("norm").is_null())
            d.features.norm = Normalizer{j["norm"].at("min").get<std::vector<double>>(),
                                         j["norm"].at("max").get<std::vector<double>>()};
        d.targets.threshold = j.at("threshold").get<double>();
        const auto& g = j.at("geometry");
        d.targets.geometry = {g.at("ncols").get<int>(), g.at("nrows").get<int>(),
                              g.at("xllcorner").get<double>(), g.at("yllcorner").get<double>(),
                              g.at("cellsize").get<double>()};
        d.targets.nodata = g.at("nodata").get<double>();
        d.targets.cell_map = j.at("cell_map").get<std::vector<std::size_t>>();
        d.targets.dry_cells = j.value("dry_cells", std::vector<std::size_t>{});
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(stem + ".manifest.json: " + e.what());
    }
    if (d.features.rows() != d.targets.rows()) throw ManifestError(stem + ": feature/target rows differ");
    if (d.features.cols() != d.features.col_names.size() || d.targets.cols() != d.targets.cell_map.size())
        throw ManifestError(stem + ": matrix widths disagree with the manifest");
    return d;
}

}  // namespace floodcnn
