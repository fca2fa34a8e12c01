#include "floodcnn/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "floodcnn/error.hpp"

namespace floodcnn {

namespace {
void require_series(std::span<const double> o, std::span<const double> p) {
    if (o.size() != p.size()) throw AlignmentError("observed and predicted lengths differ");
    if (o.empty()) throw DomainError("metric of an empty series");
}
}  // namespace

double rmse(std::span<const double> observed, std::span<const double> predicted) {
    require_series(observed, predicted);
    double ss = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double d = observed[i] - predicted[i];
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(observed.size()));
}

double nse(std::span<const double> observed, std::span<const double> predicted) {
    require_series(observed, predicted);
    double mean = 0.0;
    for (double o : observed) mean += o;
    mean /= static_cast<double>(observed.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        num += (observed[i] - predicted[i]) * (observed[i] - predicted[i]);
        den += (observed[i] - mean) * (observed[i] - mean);
    }
    if (!(den > 0.0)) throw DomainError("NSE undefined: observed series is constant");
    return 1.0 - num / den;
}

std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) {
    if (!precision || !recall) return std::nullopt;
    const double s = *precision + *recall;
    if (!(s > 0.0)) return std::nullopt;
    return 2.0 * *precision * *recall / s;
}

MetricsReport confusion_scores(const RasterGrid& reference, const RasterGrid& predicted, double tau) {
    require_compatible(reference, predicted, "confusion_scores");
    MetricsReport rep;
    std::vector<double> o, p;
    o.reserve(reference.size());
    p.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference.is_nodata(i) || predicted.is_nodata(i)) continue;
        const bool ref_wet = reference[i] > tau;
        const bool pred_wet = predicted[i] > tau;
        auto& c = rep.confusion;
        if (ref_wet && pred_wet) ++c.tp;
        else if (!ref_wet && pred_wet) ++c.fp;
        else if (ref_wet && !pred_wet) ++c.fn;
        else ++c.tn;
        o.push_back(reference[i]);
        p.push_back(predicted[i]);
    }
    rep.n = o.size();
    if (rep.n == 0) throw DomainError("no valid cells to score");
    rep.rmse = rmse(o, p);
    try {
        rep.nse = nse(o, p);
    } catch (const DomainError&) {
        rep.notes += "nse undefined (constant reference); ";
    }
    const auto& c = rep.confusion;
    if (c.tp + c.fp > 0) rep.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    else rep.notes += "precision undefined (no predicted wet cells); ";
    if (c.tp + c.fn > 0) rep.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    else rep.notes += "recall undefined (no reference wet cells); ";
    rep.f1 = f1_score(rep.precision, rep.recall);
    return rep;
}

RasterGrid error_map(const RasterGrid& reference, const RasterGrid& predicted) {
    require_compatible(reference, predicted, "error_map");
    const double nodata = reference.nodata();
    std::vector<double> v(reference.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = (reference.is_nodata(i) || predicted.is_nodata(i)) ? nodata
                                                                  : std::abs(reference[i] - predicted[i]);
    }
    return RasterGrid(reference.geometry(), nodata, std::move(v));
}

double percentile_error(const RasterGrid& errors, double p) {
    if (!(p > 0.0 && p <= 100.0)) throw DomainError("percentile must lie in (0, 100]");
    std::vector<double> v;
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors.is_nodata(i)) v.push_back(errors[i]);
    if (v.empty()) throw DomainError("percentile of an empty domain");
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()) / 100.0));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
    return v[rank - 1];
}

DescriptiveStats descriptive_stats(const RasterGrid& raster) {
    DescriptiveStats s;
    std::size_t n = 0;
    double sum = 0.0;
    s.max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < raster.size(); ++i) {
        if (raster.is_nodata(i)) continue;
        ++n;
        sum += raster[i];
        s.max = std::max(s.max, raster[i]);
    }
    if (n == 0) throw DomainError("statistics of an empty raster");
    s.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < raster.size(); ++i)
        if (!raster.is_nodata(i)) ss += (raster[i] - s.mean) * (raster[i] - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(n));
    return s;
}

std::vector<std::vector<double>> control_point_series(const std::vector<RasterGrid>& maps,
                                                      const std::vector<ControlPoint>& points,
                                                      double tau) {
    std::vector<std::vector<double>> out(points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
        out[k].reserve(maps.size());
        for (const auto& m : maps) {
            if (!m.geometry().contains(points[k].cell))
                throw IndexError("control point '" + points[k].label + "' outside the grid");
            const double v = m.is_nodata(points[k].cell) ? 0.0 : m.at(points[k].cell);
            out[k].push_back(v > tau ? v : 0.0);
        }
    }
    return out;
}

ControlPointScores score_control_points(const std::vector<RasterGrid>& reference,
                                        const std::vector<RasterGrid>& predicted,
                                        const std::vector<ControlPoint>& points, double tau) {
    if (reference.size() != predicted.size()) throw AlignmentError("map sequences differ in length");
    const auto ref = control_point_series(reference, points, tau);
    const auto pred = control_point_series(predicted, points, tau);
    ControlPointScores s;
    double nse_sum = 0.0;
    std::size_t nse_count = 0;
    for (std::size_t k = 0; k < points.size(); ++k) {
        s.rmse.push_back(rmse(ref[k], pred[k]));
        try {
            const double v = nse(ref[k], pred[k]);
            s.nse.push_back(v);
            nse_sum += v;
            ++nse_count;
        } catch (const DomainError&) {
            s.nse.push_back(std::nullopt);
            ++s.undefined_nse;
        }
    }
    if (!points.empty()) {
        double sum = 0.0;
        for (double r : s.rmse) sum += r;
        s.mean_rmse = sum / static_cast<double>(points.size());
    }
    if (nse_count > 0) s.mean_nse = nse_sum / static_cast<double>(nse_count);
    return s;
}

std::vector<ControlPoint> read_control_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open control points '" + path + "'");
    std::string line;
    std::getline(in, line);  // header
    std::vector<ControlPoint> pts;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string label, r, c;
        if (!std::getline(ss, label, ',') || !std::getline(ss, r, ',') || !std::getline(ss, c))
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected label,row,col");
        try {
            pts.push_back({label, {std::stoi(r), std::stoi(c)}});
        } catch (const std::exception&) {
            throw ParseError(path + ": line " + std::to_string(lineno) + ": bad row/col");
        }
    }
    return pts;
}

void write_control_points(const std::string& path, const std::vector<ControlPoint>& points) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out << "label,row,col\n";
    for (const auto& p : points) out << p.label << ',' << p.cell.row << ',' << p.cell.col << '\n';
}

}  // namespace floodcnn
