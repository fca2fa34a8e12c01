#include <omp.h>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "floodcnn/config.hpp"
#include "floodcnn/error.hpp"
#include "floodcnn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace floodcnn;

namespace {

constexpr int exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numerical = 3;

struct GlobalOptions {
    std::string config = "config.txt";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int threads = 0;
    bool deterministic = false;
    std::string variant = "plain";
    std::vector<std::string> overrides;
    bool verbose = false;
};

Context context_for(const GlobalOptions& g, const std::string& command) {
    RunConfig cfg = RunConfig::load(g.config);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    std::optional<fs::path> out;
    if (g.out) out = fs::path(*g.out);
    Context ctx = make_context(std::move(cfg), parse_variant(g.variant), out, command);
    ctx.deterministic = g.deterministic;
    ctx.verbose = g.verbose;
    return ctx;
}

std::string fmt_opt(const std::optional<double>& v) {
    if (!v) return "undefined";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

void print_evaluation(const EvaluationReport& rep) {
    std::cout << "control points: mean RMSE " << std::fixed << std::setprecision(4) << rep.control_points.mean_rmse
              << " m, mean NSE " << fmt_opt(rep.control_points.mean_nse);
    if (rep.control_points.undefined_nse) std::cout << " (" << rep.control_points.undefined_nse << " undefined)";
    std::cout << '\n';
    for (const auto& s : rep.stages)
        std::cout << "  " << std::left << std::setw(9) << stage_name(s.stage) << std::right << " t=" << std::setw(7)
                  << std::setprecision(0) << s.time << std::setprecision(4) << "  F1 " << fmt_opt(s.metrics.f1)
                  << "  precision " << fmt_opt(s.metrics.precision) << "  recall " << fmt_opt(s.metrics.recall)
                  << "  RMSE " << s.metrics.rmse << "  p99 " << s.p99_error << "  wet " << s.wet_reference << "/"
                  << s.wet_predicted << '\n';
}

std::vector<std::string> test_event_names(const Context& ctx) {
    std::vector<std::string> names;
    for (const auto& m : ctx.cfg.test_events) names.push_back(ctx.cfg.event_name(m));
    return names;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"floodcnn: flood-depth surrogate pipeline (solver, CNN emulator, SVR baseline, metrics)"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    std::uint64_t seed_value = 0;
    std::string out_value;
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding the config");
    auto* out_opt = app.add_option("--out", out_value, "Output root (default: config out_dir)");
    app.add_option("--config", g.config, "Run configuration file");
    app.add_option("--threads", g.threads, "OpenMP threads (0: runtime default)")->check(CLI::NonNegativeNumber);
    app.add_flag("--deterministic", g.deterministic, "Single-threaded, reproducible execution");
    app.add_option("--variant", g.variant, "DEM variant: plain or defended")->check(CLI::IsMember({"plain", "defended"}));
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)");
    app.add_flag("-v,--verbose", g.verbose, "Progress output");

    auto* make_demo = app.add_subcommand("make-demo", "Write the synthetic demo catchment and its config");
    auto* simulate = app.add_subcommand("simulate", "Run the hydraulic solver for the configured events");
    std::string sim_event;
    simulate->add_option("--event", sim_event, "Only this event");
    auto* build = app.add_subcommand("build-dataset", "Stack features and targets of the training events");
    auto* train_cnn_cmd = app.add_subcommand("train-cnn", "Train the CNN emulator");
    auto* train_svr_cmd = app.add_subcommand("train-svr", "Train the SVR models at sampled locations");
    auto* predict = app.add_subcommand("predict", "Predict depth maps of an event");
    std::string model = "cnn", event;
    predict->add_option("--model", model, "cnn or svr")->check(CLI::IsMember({"cnn", "svr"}));
    predict->add_option("--event", event, "Event name")->required();
    auto* evaluate = app.add_subcommand("evaluate", "Score predicted maps against the solver run");
    std::string eval_model = "cnn", eval_event, reference, predicted, report_dir;
    evaluate->add_option("--model", eval_model, "cnn or svr")->check(CLI::IsMember({"cnn", "svr"}));
    evaluate->add_option("--event", eval_event, "Event name");
    evaluate->add_option("--reference", reference, "Reference scenario directory");
    evaluate->add_option("--predicted", predicted, "Predicted scenario directory");
    evaluate->add_option("--report-dir", report_dir, "Where to write the report (with --reference)");
    auto* hyperopt = app.add_subcommand("hyperopt", "Hyperparameter search (search_target in the config)");
    auto* benchmark = app.add_subcommand("benchmark", "Solver versus CNN wall-clock on one event");
    std::string bench_event;
    benchmark->add_option("--event", bench_event, "Event name (default: first test event)");
    auto* run_all = app.add_subcommand("run-all", "simulate, build-dataset, train, predict and evaluate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }
    if (seed_opt->count()) g.seed = seed_value;
    if (out_opt->count()) g.out = out_value;
    if (g.deterministic) omp_set_num_threads(1);
    else if (g.threads > 0) omp_set_num_threads(g.threads);

    try {
        if (make_demo->parsed()) {
            const fs::path dir = g.out ? fs::path(*g.out) : fs::path("demo");
            cmd_make_demo(dir, g.seed.value_or(42));
            std::cout << "demo catchment written to " << dir.string() << " (config: "
                      << (dir / "config.txt").string() << ")\n";
            return exit_ok;
        }
        const std::string command = app.get_subcommands().front()->get_name();
        const Context ctx = context_for(g, command);

        if (simulate->parsed()) {
            std::optional<std::string> only;
            if (!sim_event.empty()) only = sim_event;
            for (const auto& s : cmd_simulate(ctx, only))
                std::cout << s.event << ": " << s.snapshots << " snapshots, " << std::setprecision(3) << s.wall_seconds
                          << " s, max mass error " << s.max_mass_error << '\n';
        } else if (build->parsed()) {
            const Dataset d = cmd_build_dataset(ctx);
            std::cout << "dataset: " << d.features.rows() << " rows, " << d.features.cols() << " features, "
                      << d.targets.cols() << " target cells\n";
        } else if (train_cnn_cmd->parsed()) {
            const auto s = cmd_train_cnn(ctx);
            std::cout << "cnn: " << s.parameters << " parameters, " << s.epochs << " epochs (best " << s.best_epoch
                      << ", val MSE " << s.best_val_mse << "), " << std::setprecision(3) << s.wall_seconds << " s\n";
        } else if (train_svr_cmd->parsed()) {
            const auto s = cmd_train_svr(ctx);
            std::cout << "svr: " << s.locations << " locations, max KKT residual " << s.max_kkt << ", "
                      << s.wall_seconds << " s\n";
        } else if (predict->parsed()) {
            const auto s = cmd_predict(ctx, parse_model(model), event);
            std::cout << model << " " << event << ": " << s.maps << " maps in " << s.wall_seconds << " s\n";
        } else if (evaluate->parsed()) {
            if (!reference.empty() || !predicted.empty()) {
                if (reference.empty() || predicted.empty())
                    throw ConfigError("--reference and --predicted go together");
                const fs::path out = report_dir.empty() ? fs::path(predicted) / "eval" : fs::path(report_dir);
                print_evaluation(cmd_evaluate_dirs(ctx, reference, predicted, out));
            } else {
                if (eval_event.empty()) throw ConfigError("evaluate needs --event (or --reference/--predicted)");
                print_evaluation(cmd_evaluate(ctx, parse_model(eval_model), eval_event));
            }
        } else if (hyperopt->parsed()) {
            const auto s = cmd_hyperopt(ctx);
            std::cout << s.target << " search: " << s.result.trials.size() << " trials, best objective "
                      << s.result.best.objective << "\n" << s.best_config_text;
        } else if (benchmark->parsed()) {
            const auto names = test_event_names(ctx);
            if (bench_event.empty() && names.empty()) throw ConfigError("benchmark needs --event");
            const auto b = cmd_benchmark(ctx, bench_event.empty() ? names.front() : bench_event);
            std::cout << b.event << ": solver " << b.solver_seconds << " s, CNN inference " << b.inference_seconds
                      << " s, ratio " << b.ratio << '\n';
        } else if (run_all->parsed()) {
            for (const auto& s : cmd_simulate(ctx))
                std::cout << "simulate " << s.event << ": " << std::setprecision(3) << s.wall_seconds << " s\n";
            const Dataset d = cmd_build_dataset(ctx);
            std::cout << "dataset: " << d.features.rows() << " x " << d.targets.cols() << '\n';
            const auto c = cmd_train_cnn(ctx);
            std::cout << "cnn: " << c.epochs << " epochs, " << c.wall_seconds << " s\n";
            const auto s = cmd_train_svr(ctx);
            std::cout << "svr: " << s.locations << " models, " << s.wall_seconds << " s\n";
            for (const auto& name : test_event_names(ctx)) {
                for (ModelKind k : {ModelKind::cnn, ModelKind::svr}) {
                    cmd_predict(ctx, k, name);
                    std::cout << "== " << name << " / " << model_name(k) << '\n';
                    print_evaluation(cmd_evaluate(ctx, k, name));
                }
            }
        }
        return exit_ok;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.category() == Error::Category::numerical ? exit_numerical : exit_data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
}
