#include "floodcnn/hydrograph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "floodcnn/error.hpp"

namespace floodcnn {

Hydrograph::Hydrograph(std::vector<double> flows, double dt, double t0)
    : t0_(t0), dt_(dt), flows_(std::move(flows)) {
    if (flows_.size() < 2) throw DomainError("hydrograph needs at least two samples");
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) throw DomainError("hydrograph step must be positive");
    if (!std::isfinite(t0_)) throw DomainError("hydrograph start time must be finite");
    for (std::size_t i = 0; i < flows_.size(); ++i) {
        if (!std::isfinite(flows_[i]) || flows_[i] < 0.0)
            throw DomainError("hydrograph flow at sample " + std::to_string(i) +
                              " must be finite and non-negative");
    }
}

double Hydrograph::peak() const { return *std::max_element(flows_.begin(), flows_.end()); }

std::size_t Hydrograph::peak_index() const {
    return static_cast<std::size_t>(std::max_element(flows_.begin(), flows_.end()) - flows_.begin());
}

double Hydrograph::value_at(double t) const {
    double s = (t - t0_) / dt_;
    if (s <= 0.0) return flows_.front();
    auto last = static_cast<double>(flows_.size() - 1);
    if (s >= last) return flows_.back();
    auto i = static_cast<std::size_t>(s);
    double w = s - static_cast<double>(i);
    return flows_[i] + w * (flows_[i + 1] - flows_[i]);
}

Hydrograph scale_hydrograph(const Hydrograph& obs, double peak_max) {
    const double q_max = obs.peak();
    if (!(q_max > 0.0)) throw DomainError("cannot scale a hydrograph with zero observed peak");
    if (!(peak_max > q_max))
        throw DomainError("target peak must exceed the observed peak");
    std::vector<double> out(obs.flows().begin(), obs.flows().end());
    // The peak sample is set directly so the new maximum is exactly peak_max.
    const std::size_t ip = obs.peak_index();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (out[i] == q_max) ? peak_max : out[i] * peak_max / q_max;
    out[ip] = peak_max;
    return Hydrograph(std::move(out), obs.dt(), obs.t0());
}

Hydrograph resample_to_step(const Hydrograph& h, double dt_new) {
    if (!(dt_new > 0.0)) throw DomainError("resample step must be positive");
    const double ratio = h.duration() / dt_new;
    auto n = static_cast<std::size_t>(std::floor(ratio + 1e-9)) + 1;
    n = std::max<std::size_t>(n, 2);
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        // Sample on the original index axis to keep exact hits exact.
        double s = static_cast<double>(k) * dt_new / h.dt();
        auto i = static_cast<std::size_t>(std::floor(s + 1e-12));
        if (i >= h.size() - 1) {
            out[k] = h[h.size() - 1];
            continue;
        }
        double w = s - static_cast<double>(i);
        if (w < 1e-12) {
            out[k] = h[i];
        } else {
            out[k] = h[i] + w * (h[i + 1] - h[i]);
        }
    }
    return Hydrograph(std::move(out), dt_new, h.t0());
}

Hydrograph gamma_hydrograph(double base_flow, double peak_flow, double time_to_peak, double shape,
                            std::size_t samples, double dt) {
    if (!(peak_flow >= base_flow) || base_flow < 0.0)
        throw DomainError("gamma hydrograph needs 0 <= base <= peak");
    if (!(time_to_peak > 0.0) || !(shape > 0.0)) throw DomainError("gamma hydrograph needs tp, k > 0");
    std::vector<double> q(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        double r = static_cast<double>(i) * dt / time_to_peak;
        double f = r > 0.0 ? std::pow(r, shape) * std::exp(shape * (1.0 - r)) : 0.0;
        q[i] = base_flow + (peak_flow - base_flow) * f;
    }
    return Hydrograph(std::move(q), dt);
}

void require_aligned(const BoundarySet& set) {
    if (set.entries.empty()) return;
    const auto& ref = set.entries.front().hydrograph;
    for (const auto& e : set.entries) {
        const auto& h = e.hydrograph;
        if (h.dt() != ref.dt() || h.size() != ref.size() || h.t0() != ref.t0())
            throw AlignmentError("hydrograph '" + e.label + "' is not aligned with '" +
                                 set.entries.front().label + "' (dt/t0/length differ)");
    }
}

BoundarySet make_boundary_set(const RasterGrid& dem,
                              const std::vector<std::pair<std::string, CellIndex>>& points,
                              const std::vector<Hydrograph>& hydros) {
    if (points.size() != hydros.size())
        throw AlignmentError("boundary points and hydrographs differ in count");
    BoundarySet set;
    std::set<CellIndex> seen;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& [label, cell] = points[i];
        if (!dem.geometry().contains(cell))
            throw IndexError("boundary '" + label + "' cell (" + std::to_string(cell.row) + ", " +
                             std::to_string(cell.col) + ") outside DEM");
        if (dem.is_nodata(cell)) throw IndexError("boundary '" + label + "' lies on a nodata cell");
        if (!seen.insert(cell).second)
            throw IndexError("boundary '" + label + "' duplicates another boundary cell");
        set.entries.push_back({label, cell, hydros[i]});
    }
    require_aligned(set);
    if (set.entries.size() > 1) {
        const double main_peak = set.entries.front().hydrograph.peak();
        for (std::size_t i = 1; i < set.entries.size(); ++i) {
            if (set.entries[i].hydrograph.peak() >= main_peak)
                set.warnings.push_back("tributary '" + set.entries[i].label +
                                       "' peak is not below the main inflow '" +
                                       set.entries.front().label + "' peak");
        }
    }
    return set;
}

void write_hydrograph_csv(const std::string& path, const Hydrograph& h) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out << "time_s,flow_m3s\n" << std::setprecision(17);
    for (std::size_t i = 0; i < h.size(); ++i) out << h.time_of(i) << ',' << h[i] << '\n';
}

Hydrograph read_hydrograph_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open hydrograph '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("time_s,flow_m3s", 0) != 0)
        throw ParseError(path + ": expected header 'time_s,flow_m3s'");
    std::vector<double> times, flows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected two columns");
        try {
            times.push_back(std::stod(line.substr(0, comma)));
            flows.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ParseError(path + ": line " + std::to_string(lineno) + ": non-numeric value");
        }
    }
    if (times.size() < 2) throw ParseError(path + ": need at least two samples");
    const double dt = times[1] - times[0];
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (std::abs((times[i] - times[i - 1]) - dt) > 1e-6 * std::max(1.0, dt))
            throw ParseError(path + ": non-uniform time step at sample " + std::to_string(i));
    }
    return Hydrograph(std::move(flows), dt, times[0]);
}

void write_boundary_manifest(const std::string& path, const BoundarySet& set,
                             const std::vector<std::string>& csv_paths) {
    if (csv_paths.size() != set.entries.size())
        throw AlignmentError("manifest needs one csv path per boundary");
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    out << "# label = row col hydrograph.csv\n";
    for (std::size_t i = 0; i < set.entries.size(); ++i) {
        const auto& e = set.entries[i];
        out << e.label << " = " << e.cell.row << ' ' << e.cell.col << ' ' << csv_paths[i] << '\n';
    }
}

BoundarySet read_boundary_manifest(const std::string& path, const RasterGrid& dem) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open boundary manifest '" + path + "'");
    const auto base = std::filesystem::path(path).parent_path();
    std::vector<std::pair<std::string, CellIndex>> points;
    std::vector<Hydrograph> hydros;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected 'label = row col file'");
        std::istringstream key(line.substr(0, eq));
        std::istringstream val(line.substr(eq + 1));
        std::string label, file;
        CellIndex c;
        if (!(key >> label) || !(val >> c.row >> c.col >> file))
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected 'label = row col file'");
        std::filesystem::path fp(file);
        if (fp.is_relative()) fp = base / fp;
        points.emplace_back(label, c);
        hydros.push_back(read_hydrograph_csv(fp.string()));
    }
    return make_boundary_set(dem, points, hydros);
}

}  // namespace floodcnn
