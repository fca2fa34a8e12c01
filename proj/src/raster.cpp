#include "floodcnn/raster.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "floodcnn/error.hpp"

namespace floodcnn {

namespace {

void check_geometry(const GridGeometry& g) {
    if (g.ncols < 1 || g.nrows < 1)
        throw DomainError("raster must have at least one row and column");
    if (!(g.cellsize > 0.0) || !std::isfinite(g.cellsize))
        throw DomainError("raster cellsize must be positive");
}

struct Token {
    std::string_view text;
    int line;
    int column;
};

// Whitespace tokenizer that remembers 1-based line/column of each token.
class Tokenizer {
public:
    explicit Tokenizer(std::string_view text) : text_(text) {}

    bool next(Token& tok) {
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '\n') {
                ++line_;
                col_ = 1;
                ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\r') {
                ++col_;
                ++pos_;
            } else {
                break;
            }
        }
        if (pos_ >= text_.size()) return false;
        std::size_t start = pos_;
        tok.line = line_;
        tok.column = col_;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '\n' || c == ' ' || c == '\t' || c == '\r') break;
            ++pos_;
            ++col_;
        }
        tok.text = text_.substr(start, pos_ - start);
        return true;
    }

    int line() const { return line_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

std::string where(const Token& t) {
    return "line " + std::to_string(t.line) + ", column " + std::to_string(t.column);
}

double parse_real(const Token& t) {
    double v = 0.0;
    auto first = t.text.data();
    auto last = first + t.text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError("non-numeric token '" + std::string(t.text) + "' at " + where(t));
    return v;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) ==
                      std::tolower(static_cast<unsigned char>(y));
           });
}

void append_real(std::string& out, double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), ptr);
}

}  // namespace

RasterGrid::RasterGrid(GridGeometry geometry, double nodata, std::vector<double> values)
    : geometry_(geometry), nodata_(nodata), values_(std::move(values)) {
    check_geometry(geometry_);
    if (values_.size() != geometry_.cell_count())
        throw DomainError("cell count mismatch: expected " + std::to_string(geometry_.cell_count()) +
                          ", got " + std::to_string(values_.size()));
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] != nodata_ && !std::isfinite(values_[i]))
            throw DomainError("non-finite value at cell " + std::to_string(i));
    }
}

RasterGrid::RasterGrid(GridGeometry geometry, double fill, double nodata)
    : RasterGrid(geometry, nodata, std::vector<double>(geometry.cell_count(), fill)) {}

double RasterGrid::at(CellIndex c) const {
    if (!geometry_.contains(c))
        throw IndexError("cell (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                         ") outside raster");
    return values_[geometry_.linear(c)];
}

std::size_t RasterGrid::valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [this](double v) { return v != nodata_; }));
}

void RasterGrid::set(CellIndex c, double v) {
    if (!geometry_.contains(c))
        throw IndexError("cell (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                         ") outside raster");
    set(geometry_.linear(c), v);
}

void RasterGrid::set(std::size_t i, double v) {
    if (v != nodata_ && !std::isfinite(v)) throw DomainError("non-finite raster value");
    values_.at(i) = v;
}

bool operator==(const RasterGrid& a, const RasterGrid& b) {
    return a.geometry_ == b.geometry_ && a.nodata_ == b.nodata_ && a.values_ == b.values_;
}

void require_compatible(const RasterGrid& a, const RasterGrid& b, const std::string& what) {
    if (!a.compatible_with(b)) throw AlignmentError(what + ": grids are not compatible");
}

RasterGrid read_ascii_grid(const std::string& text) {
    Tokenizer tz(text);
    static constexpr std::array<std::string_view, 6> keys = {
        "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"};
    std::array<double, 6> header{};
    Token tok;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (!tz.next(tok))
            throw ParseError("malformed header: missing '" + std::string(keys[k]) + "' at line " +
                             std::to_string(tz.line()));
        if (!iequals(tok.text, keys[k]))
            throw ParseError("malformed header: expected '" + std::string(keys[k]) + "', found '" +
                             std::string(tok.text) + "' at " + where(tok));
        Token val;
        if (!tz.next(val) || val.line != tok.line)
            throw ParseError("malformed header: missing value for '" + std::string(keys[k]) +
                             "' at " + where(tok));
        header[k] = parse_real(val);
    }
    auto as_count = [&](double v, std::string_view name) {
        if (v < 1 || v != std::floor(v) || v > 1e8)
            throw ParseError("malformed header: " + std::string(name) + " must be a positive integer");
        return static_cast<int>(v);
    };
    GridGeometry g;
    g.ncols = as_count(header[0], "ncols");
    g.nrows = as_count(header[1], "nrows");
    g.xllcorner = header[2];
    g.yllcorner = header[3];
    g.cellsize = header[4];
    if (!(g.cellsize > 0.0)) throw ParseError("malformed header: cellsize must be positive");
    const double nodata = header[5];

    std::vector<double> values;
    values.reserve(g.cell_count());
    while (tz.next(tok)) {
        double v = parse_real(tok);
        if (v != nodata && !std::isfinite(v))
            throw ParseError("non-finite value at " + where(tok));
        values.push_back(v);
    }
    if (values.size() != g.cell_count())
        throw ParseError("cell count mismatch: header declares " + std::to_string(g.cell_count()) +
                         " cells, found " + std::to_string(values.size()));
    return RasterGrid(g, nodata, std::move(values));
}

RasterGrid read_ascii_grid(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    return read_ascii_grid(ss.str());
}

RasterGrid read_ascii_grid_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open grid file '" + path + "'");
    try {
        return read_ascii_grid(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::string write_ascii_grid(const RasterGrid& grid) {
    const auto& g = grid.geometry();
    std::string out;
    out.reserve(grid.size() * 8 + 160);
    auto header = [&](std::string_view key, double v) {
        out.append(key);
        out.push_back(' ');
        append_real(out, v);
        out.push_back('\n');
    };
    header("ncols        ", g.ncols);
    header("nrows        ", g.nrows);
    header("xllcorner    ", g.xllcorner);
    header("yllcorner    ", g.yllcorner);
    header("cellsize     ", g.cellsize);
    header("NODATA_value ", grid.nodata());
    auto vals = grid.values();
    for (int r = 0; r < g.nrows; ++r) {
        for (int c = 0; c < g.ncols; ++c) {
            if (c) out.push_back(' ');
            append_real(out, vals[static_cast<std::size_t>(r) * g.ncols + c]);
        }
        out.push_back('\n');
    }
    return out;
}

void write_ascii_grid(std::ostream& out, const RasterGrid& grid) { out << write_ascii_grid(grid); }

void write_ascii_grid_file(const std::string& path, const RasterGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot write grid file '" + path + "'");
    write_ascii_grid(out, grid);
}

RasterGrid embed_defenses(const RasterGrid& dem, const DefenseSet& defenses) {
    if (!(defenses.crest_height > 0.0)) throw DomainError("defence crest height must be positive");
    std::set<CellIndex> cells;
    for (const auto& seg : defenses.segments) {
        for (CellIndex c : seg) {
            if (!dem.geometry().contains(c))
                throw IndexError("defence cell (" + std::to_string(c.row) + ", " +
                                 std::to_string(c.col) + ") outside DEM");
            if (dem.is_nodata(c))
                throw DomainError("defence cell (" + std::to_string(c.row) + ", " +
                                  std::to_string(c.col) + ") lies on nodata");
            cells.insert(c);
        }
    }
    RasterGrid out = dem;
    for (CellIndex c : cells) out.set(c, dem.at(c) + defenses.crest_height);
    return out;
}

DefenseSet read_defense_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open defence file '" + path + "'");
    DefenseSet d;
    std::string line;
    int lineno = 0;
    bool have_crest = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first) || first[0] == '#') continue;
        if (!have_crest) {
            if (first != "crest_height" || !(ls >> d.crest_height))
                throw ParseError(path + ": line " + std::to_string(lineno) +
                                 ": expected 'crest_height <m>'");
            have_crest = true;
            continue;
        }
        std::vector<CellIndex> seg;
        std::string tok = first;
        do {
            auto comma = tok.find(',');
            if (comma == std::string::npos)
                throw ParseError(path + ": line " + std::to_string(lineno) + ": bad cell '" + tok + "'");
            try {
                seg.push_back({std::stoi(tok.substr(0, comma)), std::stoi(tok.substr(comma + 1))});
            } catch (const std::exception&) {
                throw ParseError(path + ": line " + std::to_string(lineno) + ": bad cell '" + tok + "'");
            }
        } while (ls >> tok);
        d.segments.push_back(std::move(seg));
    }
    if (!have_crest) throw ParseError(path + ": missing crest_height");
    return d;
}

void write_defense_file(const std::string& path, const DefenseSet& defenses) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write defence file '" + path + "'");
    std::string s = "crest_height ";
    append_real(s, defenses.crest_height);
    out << s << '\n';
    for (const auto& seg : defenses.segments) {
        for (std::size_t i = 0; i < seg.size(); ++i)
            out << (i ? " " : "") << seg[i].row << ',' << seg[i].col;
        out << '\n';
    }
}

void write_pgm(std::ostream& out, const RasterGrid& grid, double lo, double hi) {
    const double span = hi > lo ? hi - lo : 1.0;
    out << "P2\n# linear scale: value " << lo << " -> 0, value " << hi
        << " -> 255; nodata -> 0\n"
        << grid.ncols() << ' ' << grid.nrows() << "\n255\n";
    for (int r = 0; r < grid.nrows(); ++r) {
        for (int c = 0; c < grid.ncols(); ++c) {
            std::size_t i = grid.geometry().linear({r, c});
            int level = 0;
            if (!grid.is_nodata(i))
                level = static_cast<int>(std::lround(std::clamp((grid[i] - lo) / span, 0.0, 1.0) * 255));
            out << (c ? " " : "") << level;
        }
        out << '\n';
    }
}

void write_pgm_file(const std::string& path, const RasterGrid& grid, double lo, double hi) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path + "'");
    write_pgm(out, grid, lo, hi);
}

}  // namespace floodcnn
