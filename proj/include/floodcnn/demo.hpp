#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "floodcnn/evalmetrics.hpp"
#include "floodcnn/hydrograph.hpp"
#include "floodcnn/raster.hpp"

namespace floodcnn {

/// Synthetic catchment: a valley tilted towards the west edge, a burned
/// meandering main channel entering from the east edge and two tributaries
/// entering from the south edge.
struct DemoSpec {
    int size = 96;
    double cellsize = 5.0;
    std::size_t samples = 49;     // hydrograph samples per event
    double step = 300.0;          // seconds between samples and snapshots
    int control_points = 18;
};

struct DemoEvent {
    std::string name;
    bool training = true;
    std::vector<Hydrograph> hydrographs;  // Upstream 1..3
};

struct DemoCatchment {
    RasterGrid dem;
    DefenseSet defenses;
    std::array<std::pair<std::string, CellIndex>, 3> inflows;
    std::vector<DemoEvent> events;
    std::vector<ControlPoint> control_points;
};

DemoCatchment build_demo(const DemoSpec& spec, std::uint64_t seed);

// Writes dem.asc, defenses.txt, events/<name>/{u1,u2,u3}.csv plus
// events/<name>.manifest, control_points.csv and config.txt.
void write_demo(const std::filesystem::path& out_dir, const DemoCatchment& demo, const DemoSpec& spec,
                std::uint64_t seed);

}  // namespace floodcnn
