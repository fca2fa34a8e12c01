#include "floodcnn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "floodcnn/error.hpp"

namespace floodcnn {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    return out;
}

long to_long(const std::string& key, const std::string& v) {
    long out = 0;
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& s : to_list(v)) out.push_back(static_cast<int>(to_long(key, s)));
    return out;
}

std::string fmt(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

struct Key {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define STR_KEY(k, field) \
    Key{k, [](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}
#define REAL_KEY(k, field)                                                              \
    Key{k, [](RunConfig& c, const std::string& v) { c.field = to_double(k, v); },       \
        [](const RunConfig& c) { return fmt(c.field); }}
#define INT_KEY(k, field, type)                                                         \
    Key{k, [](RunConfig& c, const std::string& v) { c.field = static_cast<type>(to_long(k, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }}
#define BOOL_KEY(k, field)                                                              \
    Key{k, [](RunConfig& c, const std::string& v) { c.field = to_bool(k, v); },         \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        STR_KEY("dem", dem),
        STR_KEY("defenses", defenses),
        Key{"train_events", [](RunConfig& c, const std::string& v) { c.train_events = to_list(v); },
            [](const RunConfig& c) { return join(c.train_events); }},
        Key{"test_events", [](RunConfig& c, const std::string& v) { c.test_events = to_list(v); },
            [](const RunConfig& c) { return join(c.test_events); }},
        STR_KEY("control_points", control_points),
        STR_KEY("out_dir", out_dir),
        REAL_KEY("manning_n", solver.manning_n),
        REAL_KEY("alpha", solver.alpha),
        REAL_KEY("depth_floor", solver.depth_floor),
        REAL_KEY("output_interval", solver.output_interval),
        REAL_KEY("dt_max", solver.dt_max),
        Key{"outflow_edge", [](RunConfig& c, const std::string& v) { c.solver.outflow_edge = parse_edge(v); },
            [](const RunConfig& c) { return edge_name(c.solver.outflow_edge); }},
        REAL_KEY("outfall_slope", solver.outfall_slope),
        INT_KEY("lags", features.lags, int),
        BOOL_KEY("include_time", features.include_time),
        Key{"lag_padding",
            [](RunConfig& c, const std::string& v) {
                if (v == "repeat_first") c.features.padding = LagPadding::repeat_first;
                else if (v == "drop_rows") c.features.padding = LagPadding::drop_rows;
                else throw ConfigError("key 'lag_padding': expected repeat_first or drop_rows");
            },
            [](const RunConfig& c) {
                return std::string(c.features.padding == LagPadding::repeat_first ? "repeat_first" : "drop_rows");
            }},
        REAL_KEY("tau", tau),
        Key{"conv_filters", [](RunConfig& c, const std::string& v) { c.net.conv_filters = to_int_list("conv_filters", v); },
            [](const RunConfig& c) { return join(c.net.conv_filters); }},
        INT_KEY("kernel_size", net.kernel_size, int),
        Key{"dense_units", [](RunConfig& c, const std::string& v) { c.net.dense_units = to_int_list("dense_units", v); },
            [](const RunConfig& c) { return join(c.net.dense_units); }},
        BOOL_KEY("batchnorm", net.use_batchnorm),
        REAL_KEY("dropout", net.dropout_rate),
        INT_KEY("batch_size", train.batch_size, int),
        REAL_KEY("learning_rate", train.adam.learning_rate),
        INT_KEY("max_epochs", train.max_epochs, int),
        INT_KEY("patience", train.patience, int),
        REAL_KEY("min_delta", train.min_delta),
        REAL_KEY("val_fraction", val_fraction),
        Key{"split_mode",
            [](RunConfig& c, const std::string& v) {
                if (v == "by_row") c.split_mode = SplitMode::by_row;
                else if (v == "by_scenario") c.split_mode = SplitMode::by_scenario;
                else throw ConfigError("key 'split_mode': expected by_row or by_scenario");
            },
            [](const RunConfig& c) { return std::string(c.split_mode == SplitMode::by_row ? "by_row" : "by_scenario"); }},
        BOOL_KEY("prune_dry_cells", prune_dry_cells),
        REAL_KEY("svr_cost", svr.cost),
        REAL_KEY("svr_epsilon", svr.epsilon),
        REAL_KEY("svr_gamma", svr.gamma),
        INT_KEY("svr_locations", svr_locations, std::size_t),
        STR_KEY("search_target", search_target),
        STR_KEY("search_strategy", search_strategy),
        INT_KEY("search_budget", search_budget, int),
        INT_KEY("search_max_epochs", search_max_epochs, int),
        INT_KEY("seed", seed, std::uint64_t),
    };
    return table;
}

#undef STR_KEY
#undef REAL_KEY
#undef INT_KEY
#undef BOOL_KEY

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        try {
            set_config_value(cfg, key, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

RunConfig RunConfig::parse(const std::string& text, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.base_dir = base_dir;
    apply_config_text(cfg, text);
    return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    return parse(ss.str(), base);
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k.name << " = " << k.get(*this) << '\n';
    return os.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_text()); }

fs::path RunConfig::resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

std::string RunConfig::event_name(const std::string& manifest) const {
    auto stem = fs::path(manifest).stem().string();
    return stem;
}

}  // namespace floodcnn
