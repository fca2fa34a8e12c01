#include "floodcnn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "floodcnn/demo.hpp"
#include "floodcnn/error.hpp"

namespace floodcnn {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Fails with the command that produces `path` when it is missing.
void require_artifact(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw ManifestError("missing '" + path.string() + "'; run `floodcnn " + producer + "` first");
}

std::string opt(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os << std::setprecision(10) << *v;
    return os.str();
}

void make_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DomainError("cannot create '" + dir.string() + "': " + ec.message());
}

std::vector<double> event_times(const EventInput& ev, const FeatureSpec& spec, std::size_t rows) {
    std::vector<double> t;
    const auto& h = ev.boundaries.entries.front().hydrograph;
    for (std::size_t r = 0; r < rows; ++r) t.push_back(h.time_of(r + spec.skipped_rows()));
    return t;
}

ScenarioRun as_run(const std::vector<RasterGrid>& maps, std::vector<double> times, std::string dem_id,
                   std::string boundary_id) {
    ScenarioRun run;
    run.dem_id = std::move(dem_id);
    run.boundary_id = std::move(boundary_id);
    run.times = std::move(times);
    run.depths = maps;
    return run;
}

}  // namespace

std::string variant_name(Variant v) { return v == Variant::plain ? "plain" : "defended"; }

Variant parse_variant(const std::string& name) {
    if (name == "plain") return Variant::plain;
    if (name == "defended") return Variant::defended;
    throw ConfigError("unknown variant '" + name + "' (expected plain or defended)");
}

std::string model_name(ModelKind k) { return k == ModelKind::cnn ? "cnn" : "svr"; }

ModelKind parse_model(const std::string& name) {
    if (name == "cnn") return ModelKind::cnn;
    if (name == "svr") return ModelKind::svr;
    throw ConfigError("unknown model '" + name + "' (expected cnn or svr)");
}

Context make_context(RunConfig cfg, Variant variant, const std::optional<fs::path>& out, std::string command) {
    Context ctx;
    ctx.root = out ? *out : cfg.resolve(cfg.out_dir);
    ctx.cfg = std::move(cfg);
    ctx.variant = variant;
    ctx.command = std::move(command);
    return ctx;
}

RasterGrid load_dem(const Context& ctx) {
    const fs::path path = ctx.cfg.resolve(ctx.cfg.dem);
    require_artifact(path, "make-demo");
    RasterGrid dem = read_ascii_grid_file(path.string());
    if (ctx.variant == Variant::plain) return dem;
    if (ctx.cfg.defenses.empty()) throw ConfigError("variant 'defended' needs a `defenses` entry in the config");
    const fs::path dpath = ctx.cfg.resolve(ctx.cfg.defenses);
    require_artifact(dpath, "make-demo");
    return embed_defenses(dem, read_defense_file(dpath.string()));
}

std::vector<ControlPoint> load_control_points(const Context& ctx) {
    if (ctx.cfg.control_points.empty()) throw ConfigError("config has no `control_points` entry");
    const fs::path path = ctx.cfg.resolve(ctx.cfg.control_points);
    require_artifact(path, "make-demo");
    return read_control_points(path.string());
}

std::vector<EventInput> load_events(const Context& ctx, const RasterGrid& dem) {
    std::vector<EventInput> out;
    auto add = [&](const std::vector<std::string>& list, bool training) {
        for (const auto& m : list) {
            const fs::path path = ctx.cfg.resolve(m);
            require_artifact(path, "make-demo");
            out.push_back({ctx.cfg.event_name(m), training, read_boundary_manifest(path.string(), dem)});
        }
    };
    add(ctx.cfg.train_events, true);
    add(ctx.cfg.test_events, false);
    if (out.empty()) throw ConfigError("config lists no events");
    return out;
}

EventInput find_event(const Context& ctx, const RasterGrid& dem, const std::string& name) {
    for (auto& ev : load_events(ctx, dem))
        if (ev.name == name) return ev;
    throw ConfigError("event '" + name + "' is not listed in train_events or test_events");
}

void write_stage_manifest(const fs::path& path, const Context& ctx, const std::string& stage) {
    nlohmann::json j;
    j["command"] = ctx.command;
    j["stage"] = stage;
    j["variant"] = variant_name(ctx.variant);
    j["config_hash"] = hex64(ctx.cfg.hash());
    j["seed"] = ctx.cfg.seed;
    j["deterministic"] = ctx.deterministic;
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- stages

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::early: return "early";
        case Stage::growing: return "growing";
        case Stage::peak: return "peak";
        case Stage::receding: return "receding";
    }
    return "?";
}

std::size_t StageIndices::at(Stage s) const {
    switch (s) {
        case Stage::early: return early;
        case Stage::growing: return growing;
        case Stage::peak: return peak;
        case Stage::receding: return receding;
    }
    return 0;
}

StageIndices select_stages(const std::vector<std::size_t>& w) {
    const auto first = std::find_if(w.begin(), w.end(), [](std::size_t c) { return c > 0; });
    if (first == w.end()) throw DomainError("reference run is never wet; no stages to select");
    StageIndices s;
    s.early = static_cast<std::size_t>(first - w.begin());
    s.peak = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    for (std::size_t i = 0; i <= s.peak; ++i) {
        if (2 * w[i] >= w[s.peak]) {
            s.growing = i;
            break;
        }
    }
    for (std::size_t i = w.size(); i-- > 0;) {
        if (w[i] > 0) {
            s.receding = i;
            break;
        }
    }
    return s;
}

std::vector<std::size_t> wet_counts(const std::vector<RasterGrid>& maps, double tau) {
    std::vector<std::size_t> out;
    for (const auto& m : maps) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (!m.is_nodata(i) && m[i] > tau) ++n;
        out.push_back(n);
    }
    return out;
}

std::vector<RasterGrid> threshold_maps(const std::vector<RasterGrid>& maps, double tau) {
    std::vector<RasterGrid> out;
    out.reserve(maps.size());
    for (const auto& m : maps) {
        RasterGrid t = m;
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!t.is_nodata(i) && !(t[i] > tau)) t.set(i, 0.0);
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------- commands

void cmd_make_demo(const fs::path& out_dir, std::uint64_t seed) {
    const DemoSpec spec;
    write_demo(out_dir, build_demo(spec, seed), spec, seed);
}

std::vector<SimulationSummary> cmd_simulate(const Context& ctx, const std::optional<std::string>& only) {
    const RasterGrid dem = load_dem(ctx);
    std::vector<SimulationSummary> out;
    for (const auto& ev : load_events(ctx, dem)) {
        if (only && ev.name != *only) continue;
        SolverConfig solver = ctx.cfg.solver;
        solver.duration = ev.boundaries.duration();
        const ScenarioRun run = run_scenario(dem, ev.boundaries, solver, variant_name(ctx.variant), ev.name);
        const fs::path dir = ctx.sim_dir(ev.name);
        write_scenario(dir.string(), run);
        write_stage_manifest(dir / "manifest.json", ctx, "simulate");
        out.push_back({ev.name, run.wall_seconds, run.max_mass_error(), run.depths.size()});
    }
    if (only && out.empty()) throw ConfigError("event '" + *only + "' is not listed in the config");
    return out;
}

Dataset cmd_build_dataset(const Context& ctx) {
    const RasterGrid dem = load_dem(ctx);
    std::vector<FeatureMatrix> features;
    std::vector<TargetMatrix> targets;
    for (const auto& ev : load_events(ctx, dem)) {
        if (!ev.training) continue;
        const fs::path dir = ctx.sim_dir(ev.name);
        require_artifact(dir / "run.json", "simulate");
        const ScenarioRun run = read_scenario(dir.string());
        FeatureMatrix f = build_features(ev.boundaries, ctx.cfg.features);
        targets.push_back(build_targets(run, ctx.cfg.tau, ctx.cfg.features, f.rows()));
        features.push_back(std::move(f));
    }
    if (features.empty()) throw ConfigError("config lists no training events");
    Dataset data{fit_normalizer(stack_features(features)), stack_targets(targets)};
    if (ctx.cfg.prune_dry_cells) data.targets = prune_dry_columns(data.targets);
    if (data.targets.cols() == 0) throw DomainError("training targets are dry everywhere");
    const fs::path stem = ctx.dataset_stem();
    make_dirs(stem.parent_path());
    write_dataset(stem.string(), data);
    write_stage_manifest(stem.parent_path() / "manifest.json", ctx, "build-dataset");
    return data;
}

FeatureMatrix event_features(const Context& ctx, const EventInput& event, const Normalizer& norm) {
    return apply_normalizer(build_features(event.boundaries, ctx.cfg.features), norm);
}

CnnModel train_cnn(const Context& ctx, const Dataset& data, const NetSpec& net, const TrainConfig& train_cfg) {
    const auto [train_set, val_set] =
        split(data.features, data.targets, SplitSpec{ctx.cfg.val_fraction, ctx.cfg.seed, ctx.cfg.split_mode});
    NetSpec spec = net;
    spec.input_len = static_cast<int>(data.features.cols());
    spec.output_dim = static_cast<int>(data.targets.cols());
    return train(init_model(spec, ctx.cfg.seed), train_set, val_set, train_cfg);
}

CnnTrainingSummary cmd_train_cnn(const Context& ctx) {
    require_artifact(ctx.dataset_stem().string() + ".manifest.json", "build-dataset");
    const Dataset data = read_dataset(ctx.dataset_stem().string());
    TrainConfig tc = ctx.cfg.train;
    tc.seed = ctx.cfg.seed;
    tc.verbose = ctx.verbose;
    const auto t0 = Clock::now();
    CnnModel model = train_cnn(ctx, data, ctx.cfg.net, tc);
    CnnTrainingSummary s;
    s.wall_seconds = seconds_since(t0);
    s.parameters = model.parameter_count();
    s.epochs = static_cast<int>(model.training_log.size());
    s.initial_train_mse = model.initial_train_mse.value_or(0.0);
    s.best_val_mse = std::numeric_limits<double>::infinity();
    for (const auto& e : model.training_log) {
        if (e.val_mse < s.best_val_mse) {
            s.best_val_mse = e.val_mse;
            s.best_epoch = e.epoch;
        }
    }

    make_dirs(ctx.cnn_dir());
    save_model((ctx.cnn_dir() / "model.bin").string(), model);
    write_training_log((ctx.cnn_dir() / "training_log.csv").string(), model.training_log);
    write_stage_manifest(ctx.cnn_dir() / "manifest.json", ctx, "train-cnn");
    return s;
}

SvrTrainingSummary cmd_train_svr(const Context& ctx) {
    require_artifact(ctx.dataset_stem().string() + ".manifest.json", "build-dataset");
    const Dataset data = read_dataset(ctx.dataset_stem().string());
    const RasterGrid dem = load_dem(ctx);
    const auto t0 = Clock::now();
    const auto locations =
        sample_locations(dem, training_wet_mask(data.targets, dem), ctx.cfg.svr_locations, ctx.cfg.seed);
    const auto models = train_svr_locations(data, locations, ctx.cfg.svr);
    SvrTrainingSummary s;
    s.wall_seconds = seconds_since(t0);
    s.locations = models.size();
    for (const auto& m : models) s.max_kkt = std::max(s.max_kkt, m.state.kkt_violation);

    make_dirs(ctx.svr_dir());
    write_svr_archive((ctx.svr_dir() / "models.bin").string(), models);
    std::ofstream loc(ctx.svr_dir() / "locations.csv");
    loc << "row,col,support_vectors,kkt\n";
    for (const auto& m : models)
        loc << m.location.row << ',' << m.location.col << ',' << m.support_vectors.rows() << ','
            << m.state.kkt_violation << '\n';
    write_stage_manifest(ctx.svr_dir() / "manifest.json", ctx, "train-svr");
    return s;
}

PredictionSummary cmd_predict(const Context& ctx, ModelKind kind, const std::string& event) {
    require_artifact(ctx.dataset_stem().string() + ".manifest.json", "build-dataset");
    const Dataset data = read_dataset(ctx.dataset_stem().string());
    if (!data.features.norm) throw ManifestError("dataset has no feature normalizer; rerun `floodcnn build-dataset`");
    const RasterGrid dem = load_dem(ctx);
    const EventInput ev = find_event(ctx, dem, event);

    const auto t0 = Clock::now();
    const FeatureMatrix features = event_features(ctx, ev, *data.features.norm);
    std::vector<RasterGrid> maps;
    if (kind == ModelKind::cnn) {
        const fs::path path = ctx.cnn_dir() / "model.bin";
        require_artifact(path, "train-cnn");
        CnnModel model = load_model(path.string());
        const auto& t = data.targets;
        maps = predict_depth_maps(model, features, t.cell_map, t.geometry, t.nodata, ctx.cfg.tau, t.dry_cells);
    } else {
        const fs::path path = ctx.svr_dir() / "models.bin";
        require_artifact(path, "train-svr");
        maps = predict_svr_maps(read_svr_archive(path.string()), features, dem, ctx.cfg.tau).rasters;
    }
    PredictionSummary s{event, kind, maps.size(), seconds_since(t0)};

    const fs::path dir = ctx.pred_dir(event, kind);
    write_scenario(dir.string(), as_run(maps, event_times(ev, ctx.cfg.features, maps.size()),
                                        variant_name(ctx.variant), event + "/" + model_name(kind)));
    write_stage_manifest(dir / "manifest.json", ctx, "predict");
    return s;
}

EvaluationReport evaluate_maps(const std::vector<RasterGrid>& reference_in, const std::vector<double>& times_in,
                               const std::vector<RasterGrid>& predicted, const std::vector<ControlPoint>& points,
                               double tau, const std::optional<StageIndices>& stages) {
    if (predicted.empty() || predicted.size() > reference_in.size())
        throw AlignmentError("predicted run has " + std::to_string(predicted.size()) +
                             " maps but the reference has " + std::to_string(reference_in.size()));
    // Predictions may start later when lag-incomplete rows were dropped.
    const std::size_t skip = reference_in.size() - predicted.size();
    const std::vector<RasterGrid> reference(reference_in.begin() + static_cast<std::ptrdiff_t>(skip),
                                            reference_in.end());
    std::vector<double> times;
    if (times_in.size() == reference_in.size()) times.assign(times_in.begin() + static_cast<std::ptrdiff_t>(skip), times_in.end());
    else times.assign(reference.size(), 0.0);

    EvaluationReport rep;
    rep.points = points;
    rep.times = times;
    rep.tau = tau;
    rep.control_points = score_control_points(reference, predicted, points, tau);
    rep.indices = stages ? *stages : select_stages(wet_counts(reference, tau));
    for (Stage st : all_stages) {
        const std::size_t i = rep.indices.at(st);
        if (i >= reference.size()) throw IndexError("stage index " + std::to_string(i) + " outside the run");
        StageReport s;
        s.stage = st;
        s.index = i;
        s.time = times[i];
        s.metrics = confusion_scores(reference[i], predicted[i], tau);
        s.p99_error = percentile_error(error_map(reference[i], predicted[i]), 99.0);
        s.predicted_stats = descriptive_stats(predicted[i]);
        s.wet_reference = wet_counts({reference[i]}, tau).front();
        s.wet_predicted = wet_counts({predicted[i]}, tau).front();
        rep.stages.push_back(s);
    }
    return rep;
}

void write_evaluation(const fs::path& out_dir, const EvaluationReport& rep, const std::vector<RasterGrid>& reference,
                      const std::vector<RasterGrid>& predicted) {
    make_dirs(out_dir);
    const std::size_t skip = reference.size() - predicted.size();
    std::ofstream out(out_dir / "report.csv");
    if (!out) throw DomainError("cannot write '" + (out_dir / "report.csv").string() + "'");
    out << "time_s,rmse,nse,precision,recall,f1,tp,fp,fn,tn,p99_err,max,mean,std,stage,index,wet_ref,wet_pred\n"
        << std::setprecision(10);
    for (const auto& s : rep.stages) {
        const auto& m = s.metrics;
        out << s.time << ',' << m.rmse << ',' << opt(m.nse) << ',' << opt(m.precision) << ',' << opt(m.recall) << ','
            << opt(m.f1) << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ','
            << m.confusion.tn << ',' << s.p99_error << ',' << s.predicted_stats.max << ',' << s.predicted_stats.mean
            << ',' << s.predicted_stats.std << ',' << stage_name(s.stage) << ',' << s.index << ','
            << s.wet_reference << ',' << s.wet_predicted << '\n';

        const RasterGrid& ref = reference[skip + s.index];
        const RasterGrid& pred = predicted[s.index];
        const RasterGrid err = error_map(ref, pred);
        const std::string name = stage_name(s.stage);
        write_ascii_grid_file((out_dir / ("reference_" + name + ".asc")).string(), ref);
        write_ascii_grid_file((out_dir / ("predicted_" + name + ".asc")).string(), pred);
        write_ascii_grid_file((out_dir / ("error_" + name + ".asc")).string(), err);
        write_pgm_file((out_dir / ("error_" + name + ".pgm")).string(), err, 0.0, 1.0);
    }

    std::ofstream cp(out_dir / "control_points.csv");
    cp << "label,row,col,rmse,nse\n" << std::setprecision(10);
    for (std::size_t k = 0; k < rep.points.size(); ++k)
        cp << rep.points[k].label << ',' << rep.points[k].cell.row << ',' << rep.points[k].cell.col << ','
           << rep.control_points.rmse[k] << ',' << opt(rep.control_points.nse[k]) << '\n';
    cp << "mean,,," << rep.control_points.mean_rmse << ',' << opt(rep.control_points.mean_nse) << '\n';

    const std::vector<RasterGrid> ref_tail(reference.begin() + static_cast<std::ptrdiff_t>(skip), reference.end());
    const auto rs = control_point_series(ref_tail, rep.points, rep.tau);
    const auto ps = control_point_series(predicted, rep.points, rep.tau);
    std::ofstream series(out_dir / "control_point_series.csv");
    series << "time_s";
    for (const auto& p : rep.points) series << ',' << p.label << "_ref," << p.label << "_pred";
    series << '\n' << std::setprecision(10);
    for (std::size_t t = 0; t < predicted.size(); ++t) {
        series << (t < rep.times.size() ? rep.times[t] : 0.0);
        for (std::size_t k = 0; k < rep.points.size(); ++k) series << ',' << rs[k][t] << ',' << ps[k][t];
        series << '\n';
    }
}

EvaluationReport cmd_evaluate_dirs(const Context& ctx, const fs::path& reference, const fs::path& predicted,
                                   const fs::path& out_dir) {
    require_artifact(reference / "run.json", "simulate");
    require_artifact(predicted / "run.json", "predict");
    const ScenarioRun ref = read_scenario(reference.string());
    const ScenarioRun pred = read_scenario(predicted.string());
    const auto ref_maps = threshold_maps(ref.depths, ctx.cfg.tau);
    const auto rep = evaluate_maps(ref_maps, ref.times, pred.depths, load_control_points(ctx), ctx.cfg.tau);
    write_evaluation(out_dir, rep, ref_maps, pred.depths);
    write_stage_manifest(out_dir / "manifest.json", ctx, "evaluate");
    return rep;
}

EvaluationReport cmd_evaluate(const Context& ctx, ModelKind kind, const std::string& event,
                              const std::optional<StageIndices>& stages) {
    const fs::path ref_dir = ctx.sim_dir(event), pred_dir = ctx.pred_dir(event, kind);
    require_artifact(ref_dir / "run.json", "simulate");
    require_artifact(pred_dir / "run.json", "predict --model " + model_name(kind) + " --event " + event);
    const ScenarioRun ref = read_scenario(ref_dir.string());
    const ScenarioRun pred = read_scenario(pred_dir.string());
    const auto ref_maps = threshold_maps(ref.depths, ctx.cfg.tau);
    const auto rep = evaluate_maps(ref_maps, ref.times, pred.depths, load_control_points(ctx), ctx.cfg.tau, stages);
    const fs::path out = ctx.eval_dir(event, kind);
    write_evaluation(out, rep, ref_maps, pred.depths);
    write_stage_manifest(out / "manifest.json", ctx, "evaluate");
    return rep;
}

// ---------------------------------------------------------------- search

namespace {

int choice_value(const SearchSpace& space, const TrialConfig& c, const std::string& name) {
    return std::stoi(format_value(space, name, c.at(name)));
}

HyperoptSummary search_cnn(const Context& ctx, const Dataset& data) {
    const SearchSpace space = cnn_search_space();
    auto net_of = [&](const TrialConfig& c) {
        NetSpec net = ctx.cfg.net;
        net.conv_filters = {choice_value(space, c, "conv1_filters"), choice_value(space, c, "conv2_filters")};
        net.dense_units = {choice_value(space, c, "dense1_units"), choice_value(space, c, "dense2_units"),
                           choice_value(space, c, "dense3_units")};
        return net;
    };
    auto train_of = [&](const TrialConfig& c) {
        TrainConfig tc = ctx.cfg.train;
        tc.batch_size = choice_value(space, c, "batch_size");
        tc.adam.learning_rate = c.at("learning_rate");
        tc.max_epochs = ctx.cfg.search_max_epochs;
        tc.seed = ctx.cfg.seed;
        return tc;
    };
    const Objective objective = [&](const TrialConfig& c) {
        const CnnModel m = train_cnn(ctx, data, net_of(c), train_of(c));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& e : m.training_log) best = std::min(best, e.val_mse);
        return best;
    };
    HyperoptSummary s;
    s.target = "cnn";
    s.result = optimize(space, objective, ctx.cfg.search_budget, parse_strategy(ctx.cfg.search_strategy), ctx.cfg.seed);
    const auto& best = s.result.best.config;
    const NetSpec net = net_of(best);
    const TrainConfig tc = train_of(best);
    std::ostringstream os;
    os << "conv_filters = " << net.conv_filters[0] << ',' << net.conv_filters[1] << '\n'
       << "dense_units = " << net.dense_units[0] << ',' << net.dense_units[1] << ',' << net.dense_units[2] << '\n'
       << "batch_size = " << tc.batch_size << '\n'
       << "learning_rate = " << std::setprecision(6) << tc.adam.learning_rate << '\n';
    s.best_config_text = os.str();
    make_dirs(ctx.dir() / "hyperopt");
    write_trials_csv((ctx.dir() / "hyperopt" / "cnn_trials.csv").string(), space, s.result.trials);
    return s;
}

HyperoptSummary search_svr(const Context& ctx, const Dataset& data) {
    const SearchSpace space = svr_search_space();
    const auto points = load_control_points(ctx);
    const auto [train_set, val_set] =
        split(data.features, data.targets, SplitSpec{ctx.cfg.val_fraction, ctx.cfg.seed, ctx.cfg.split_mode});
    auto column = [](const Dataset& d, CellIndex c) {
        std::vector<double> z(d.targets.rows(), 0.0);
        const std::size_t lin = d.targets.geometry.linear(c);
        const auto it = std::lower_bound(d.targets.cell_map.begin(), d.targets.cell_map.end(), lin);
        if (it != d.targets.cell_map.end() && *it == lin) {
            const auto j = static_cast<Eigen::Index>(it - d.targets.cell_map.begin());
            for (std::size_t r = 0; r < z.size(); ++r) z[r] = d.targets.values(static_cast<Eigen::Index>(r), j);
        }
        return z;
    };
    auto point_rmse = [&](const SvrParams& p, const ControlPoint& cp) {
        const SvrModel m = train_svr(train_set.features.values, column(train_set, cp.cell), p, cp.cell);
        return rmse(column(val_set, cp.cell), predict_svr(m, val_set.features.values));
    };
    auto params_of = [](const TrialConfig& c) { return SvrParams{c.at("cost"), c.at("epsilon"), c.at("gamma")}; };

    HyperoptSummary s;
    s.target = "svr";
    make_dirs(ctx.dir() / "hyperopt");
    std::vector<SvrParams> candidates;
    for (const auto& cp : points) {
        const Objective objective = [&](const TrialConfig& c) { return point_rmse(params_of(c), cp); };
        auto r = optimize(space, objective, ctx.cfg.search_budget, parse_strategy(ctx.cfg.search_strategy),
                          ctx.cfg.seed);
        write_trials_csv((ctx.dir() / "hyperopt" / ("svr_trials_" + cp.label + ".csv")).string(), space, r.trials);
        candidates.push_back(params_of(r.best.config));
        for (auto& t : r.trials) s.result.trials.push_back(std::move(t));
        if (candidates.size() == 1 || r.best.objective < s.result.best.objective) s.result.best = r.best;
    }
    const SvrEvaluator eval = [&](const SvrParams& p) {
        std::vector<double> errs;
        for (const auto& cp : points) errs.push_back(point_rmse(p, cp));
        return errs;
    };
    s.svr_params = select_global_svr_params(candidates, eval);
    std::ostringstream os;
    os << std::setprecision(8) << "svr_cost = " << s.svr_params->cost << '\n'
       << "svr_epsilon = " << s.svr_params->epsilon << '\n'
       << "svr_gamma = " << s.svr_params->gamma << '\n';
    s.best_config_text = os.str();
    return s;
}

}  // namespace

HyperoptSummary cmd_hyperopt(const Context& ctx) {
    require_artifact(ctx.dataset_stem().string() + ".manifest.json", "build-dataset");
    const Dataset data = read_dataset(ctx.dataset_stem().string());
    HyperoptSummary s;
    if (ctx.cfg.search_target == "cnn") s = search_cnn(ctx, data);
    else if (ctx.cfg.search_target == "svr") s = search_svr(ctx, data);
    else throw ConfigError("search_target must be cnn or svr, not '" + ctx.cfg.search_target + "'");
    // A complete config (absolute paths) with the best trial applied.
    RunConfig best = ctx.cfg;
    apply_config_text(best, s.best_config_text);
    auto absolute = [&](std::string& p) {
        if (!p.empty()) p = fs::absolute(ctx.cfg.resolve(p)).lexically_normal().string();
    };
    absolute(best.dem);
    absolute(best.defenses);
    absolute(best.control_points);
    absolute(best.out_dir);
    for (auto& e : best.train_events) absolute(e);
    for (auto& e : best.test_events) absolute(e);
    std::ofstream(ctx.dir() / "hyperopt" / (s.target + "_best_config.txt"))
        << "# best " << s.target << " trial (objective " << s.result.best.objective << ")\n" << best.to_text();
    write_stage_manifest(ctx.dir() / "hyperopt" / (s.target + "_manifest.json"), ctx, "hyperopt");
    return s;
}

BenchmarkResult cmd_benchmark(const Context& ctx, const std::string& event) {
    require_artifact(ctx.cnn_dir() / "model.bin", "train-cnn");
    require_artifact(ctx.dataset_stem().string() + ".manifest.json", "build-dataset");
    const RasterGrid dem = load_dem(ctx);
    const EventInput ev = find_event(ctx, dem, event);
    SolverConfig solver = ctx.cfg.solver;
    solver.duration = ev.boundaries.duration();

    BenchmarkResult b;
    b.event = event;
    auto t0 = Clock::now();
    const ScenarioRun run = run_scenario(dem, ev.boundaries, solver);
    b.solver_seconds = seconds_since(t0);
    b.snapshots = run.depths.size();

    const Dataset data = read_dataset(ctx.dataset_stem().string());
    t0 = Clock::now();
    CnnModel model = load_model((ctx.cnn_dir() / "model.bin").string());
    const FeatureMatrix features = event_features(ctx, ev, *data.features.norm);
    const auto& t = data.targets;
    const auto maps = predict_depth_maps(model, features, t.cell_map, t.geometry, t.nodata, ctx.cfg.tau, t.dry_cells);
    b.inference_seconds = seconds_since(t0);
    b.ratio = b.inference_seconds > 0.0 ? b.solver_seconds / b.inference_seconds : 0.0;

    nlohmann::json j;
    j["event"] = event;
    j["solver_seconds"] = b.solver_seconds;
    j["inference_seconds"] = b.inference_seconds;
    j["ratio"] = b.ratio;
    j["snapshots"] = b.snapshots;
    j["predicted_maps"] = maps.size();
    j["command"] = ctx.command;
    j["config_hash"] = hex64(ctx.cfg.hash());
    j["seed"] = ctx.cfg.seed;
    make_dirs(ctx.dir());
    std::ofstream(ctx.dir() / "benchmark.json") << j.dump(2) << '\n';
    return b;
}

}  // namespace floodcnn
