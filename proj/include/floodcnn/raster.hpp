#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace floodcnn {

struct CellIndex {
    int row = 0;
    int col = 0;

    friend bool operator==(const CellIndex&, const CellIndex&) = default;
    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

// Placement of a grid in map coordinates. Two rasters are compatible when
// their geometries compare equal.
struct GridGeometry {
    int ncols = 1;
    int nrows = 1;
    double xllcorner = 0.0;
    double yllcorner = 0.0;
    double cellsize = 1.0;

    std::size_t cell_count() const { return static_cast<std::size_t>(ncols) * nrows; }
    bool contains(CellIndex c) const {
        return c.row >= 0 && c.row < nrows && c.col >= 0 && c.col < ncols;
    }
    std::size_t linear(CellIndex c) const {
        return static_cast<std::size_t>(c.row) * ncols + c.col;
    }
    CellIndex cell(std::size_t linear_index) const {
        return {static_cast<int>(linear_index / ncols), static_cast<int>(linear_index % ncols)};
    }
    // Cell-centre coordinates (northing decreases with row).
    double x_of(int col) const { return xllcorner + (col + 0.5) * cellsize; }
    double y_of(int row) const { return yllcorner + (nrows - row - 0.5) * cellsize; }

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Georeferenced 2D raster, row-major from the northern row downward.
///
/// A cell is either exactly equal to the nodata sentinel or a finite real;
/// the constructor enforces this together with the shape invariants.
class RasterGrid {
public:
    static constexpr double default_nodata = -9999.0;

    RasterGrid() = default;
    RasterGrid(GridGeometry geometry, double nodata, std::vector<double> values);
    // Uniform fill.
    RasterGrid(GridGeometry geometry, double fill, double nodata = default_nodata);

    const GridGeometry& geometry() const { return geometry_; }
    int ncols() const { return geometry_.ncols; }
    int nrows() const { return geometry_.nrows; }
    double cellsize() const { return geometry_.cellsize; }
    double nodata() const { return nodata_; }
    std::size_t size() const { return values_.size(); }

    std::span<const double> values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double at(CellIndex c) const;
    double at(int row, int col) const { return at(CellIndex{row, col}); }

    bool is_nodata(std::size_t i) const { return values_[i] == nodata_; }
    bool is_nodata(CellIndex c) const { return is_nodata(geometry_.linear(c)); }
    std::size_t valid_count() const;

    // Mutation keeps the finiteness invariant; writing the nodata value is
    // allowed and turns the cell into nodata.
    void set(CellIndex c, double v);
    void set(std::size_t i, double v);

    bool compatible_with(const RasterGrid& other) const { return geometry_ == other.geometry_; }

    friend bool operator==(const RasterGrid& a, const RasterGrid& b);

private:
    GridGeometry geometry_;
    double nodata_ = default_nodata;
    std::vector<double> values_ = std::vector<double>(1, 0.0);
};

// Throws AlignmentError naming `what` when the grids do not share geometry.
void require_compatible(const RasterGrid& a, const RasterGrid& b, const std::string& what);

struct DefenseSet {
    std::vector<std::vector<CellIndex>> segments;
    double crest_height = 2.0;
};

RasterGrid read_ascii_grid(std::istream& in);
RasterGrid read_ascii_grid(const std::string& text);
RasterGrid read_ascii_grid_file(const std::string& path);

void write_ascii_grid(std::ostream& out, const RasterGrid& grid);
std::string write_ascii_grid(const RasterGrid& grid);
void write_ascii_grid_file(const std::string& path, const RasterGrid& grid);

// Raise every distinct defence cell by the crest height. Cells shared by
// several segments are raised once. Apply exactly once per DEM.
RasterGrid embed_defenses(const RasterGrid& dem, const DefenseSet& defenses);

// Defence sets on disk: first line `crest_height <m>`, then one segment per
// line as whitespace-separated `row,col` pairs.
DefenseSet read_defense_file(const std::string& path);
void write_defense_file(const std::string& path, const DefenseSet& defenses);

// Plain PGM (P2) preview, values scaled linearly from [lo, hi] to [0, 255];
// nodata cells are written as 0. The scaling is recorded in a header comment.
void write_pgm(std::ostream& out, const RasterGrid& grid, double lo, double hi);
void write_pgm_file(const std::string& path, const RasterGrid& grid, double lo, double hi);

}  // namespace floodcnn
