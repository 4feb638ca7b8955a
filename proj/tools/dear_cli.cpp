// dear: deep equilibrium algorithmic reasoner command line.
//
// Subcommands: gen-data, train, eval, bench, ablate, selftest.
// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 selftest failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dear/dear.hpp"

#ifndef DEAR_BUILD_ID
#define DEAR_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using dear::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fully resolved run configuration. Precedence: defaults < preset < config
// file < explicit flags.
struct RunConfig {
    dear::DatasetSpec dataset;
    dear::ModelConfig model;
    dear::SolverConfig solver;
    dear::BackwardConfig backward;

    dear::RunMode mode = dear::RunMode::dear;
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 3e-4;
    dear::JacRegConfig jac_reg;
    uint64_t seed = 1;
    int workers = 1;

    int repetitions = 3;
    bool include_encode_in_timing = false;

    json file_echo;  // raw config file content, echoed into reports verbatim

    void set_algorithm(dear::Algo a) {
        dataset.algorithm = a;
        model.algorithm = a;
    }

    dear::TrainConfig train_config() const {
        dear::TrainConfig tc;
        tc.mode = mode;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.learning_rate = learning_rate;
        tc.solver = solver;
        tc.backward = backward;
        tc.jac_reg = jac_reg;
        tc.seed = seed;
        tc.workers = workers;
        return tc;
    }

    json resolved() const {
        return json{
            {"dataset", dear::spec_to_json(dataset)},
            {"model", dear::model_config_to_json(model)},
            {"solver",
             {{"method", dear::to_string(solver.method)},
              {"max_iters", solver.max_iters},
              {"stop_mode", dear::to_string(solver.stop_mode)},
              {"epsilon", solver.epsilon},
              {"anderson_m", solver.anderson_m},
              {"anderson_ridge", solver.anderson_ridge},
              {"damping", solver.damping},
              {"adjoint_max_iters", backward.max_iters},
              {"adjoint_tolerance", backward.tolerance}}},
            {"train",
             {{"mode", dear::to_string(mode)},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"jac_reg_weight", jac_reg.weight},
              {"jac_reg_probes", jac_reg.probes},
              {"jac_reg_enabled", jac_reg.enabled},
              {"seed", seed},
              {"workers", workers}}},
            {"eval",
             {{"repetitions", repetitions},
              {"include_encode_in_timing", include_encode_in_timing}}}};
    }
};

void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "desk") {
        cfg.dataset.train_count = 5000;
        cfg.dataset.val_count = 100;
        cfg.dataset.test_count = 100;
        cfg.dataset.n_test = cfg.dataset.algorithm == dear::Algo::insertion_sort ? 32 : 64;
        cfg.model.latent_dim = 64;
        cfg.epochs = 20;
    } else if (name == "paper") {
        cfg.dataset.train_count = 100000;
        cfg.dataset.val_count = 100;
        cfg.dataset.test_count = 100;
        cfg.dataset.n_test = 64;
        cfg.model.latent_dim = 128;
        cfg.epochs = 100;
    } else if (!name.empty()) {
        throw UsageError("unknown preset '" + name + "' (expected desk or paper)");
    }
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
    if (!obj.is_object()) throw UsageError("config section '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw UsageError("unknown key '" + key + "' in config section '" + where + "'");
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw UsageError("config parse error in " + path + ": " + e.what());
    }
    cfg.file_echo = doc;
    check_keys(doc, {"dataset", "model", "solver", "train", "eval"}, "<top level>");

    if (doc.contains("dataset")) {
        const json& d = doc.at("dataset");
        check_keys(d,
                   {"algorithm", "train_count", "val_count", "test_count", "n_train_min",
                    "n_train_max", "n_val", "n_test", "edge_p_grid", "seed"},
                   "dataset");
        if (d.contains("algorithm"))
            cfg.set_algorithm(dear::algo_from_string(d.at("algorithm").get<std::string>()));
        maybe(d, "train_count", cfg.dataset.train_count);
        maybe(d, "val_count", cfg.dataset.val_count);
        maybe(d, "test_count", cfg.dataset.test_count);
        maybe(d, "n_train_min", cfg.dataset.n_train_min);
        maybe(d, "n_train_max", cfg.dataset.n_train_max);
        maybe(d, "n_val", cfg.dataset.n_val);
        maybe(d, "n_test", cfg.dataset.n_test);
        maybe(d, "edge_p_grid", cfg.dataset.edge_p_grid);
        maybe(d, "seed", cfg.dataset.seed);
    }
    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_keys(m, {"algorithm", "latent_dim", "msg_hidden_layers", "msg_hidden_dim"},
                   "model");
        if (m.contains("algorithm"))
            cfg.model.algorithm = dear::algo_from_string(m.at("algorithm").get<std::string>());
        maybe(m, "latent_dim", cfg.model.latent_dim);
        maybe(m, "msg_hidden_layers", cfg.model.msg_hidden_layers);
        maybe(m, "msg_hidden_dim", cfg.model.msg_hidden_dim);
    }
    if (doc.contains("solver")) {
        const json& s = doc.at("solver");
        check_keys(s,
                   {"method", "max_iters", "stop_mode", "epsilon", "anderson_m",
                    "anderson_ridge", "damping", "adjoint_max_iters", "adjoint_tolerance"},
                   "solver");
        if (s.contains("method")) {
            const auto v = s.at("method").get<std::string>();
            if (v == "picard") cfg.solver.method = dear::SolveMethod::picard;
            else if (v == "anderson") cfg.solver.method = dear::SolveMethod::anderson;
            else throw UsageError("unknown solver method '" + v + "'");
        }
        if (s.contains("stop_mode")) {
            const auto v = s.at("stop_mode").get<std::string>();
            if (v == "absolute") cfg.solver.stop_mode = dear::StopMode::absolute;
            else if (v == "relative") cfg.solver.stop_mode = dear::StopMode::relative;
            else throw UsageError("unknown stop_mode '" + v + "'");
            if (!s.contains("epsilon"))
                cfg.solver.epsilon = dear::SolverConfig::default_epsilon(cfg.solver.stop_mode);
        }
        maybe(s, "max_iters", cfg.solver.max_iters);
        maybe(s, "epsilon", cfg.solver.epsilon);
        maybe(s, "anderson_m", cfg.solver.anderson_m);
        maybe(s, "anderson_ridge", cfg.solver.anderson_ridge);
        maybe(s, "damping", cfg.solver.damping);
        maybe(s, "adjoint_max_iters", cfg.backward.max_iters);
        maybe(s, "adjoint_tolerance", cfg.backward.tolerance);
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        check_keys(t,
                   {"mode", "epochs", "batch_size", "learning_rate", "jac_reg_weight",
                    "jac_reg_probes", "jac_reg_enabled", "seed", "workers"},
                   "train");
        if (t.contains("mode")) cfg.mode = dear::run_mode_from_string(t.at("mode").get<std::string>());
        maybe(t, "epochs", cfg.epochs);
        maybe(t, "batch_size", cfg.batch_size);
        maybe(t, "learning_rate", cfg.learning_rate);
        maybe(t, "jac_reg_weight", cfg.jac_reg.weight);
        maybe(t, "jac_reg_probes", cfg.jac_reg.probes);
        maybe(t, "jac_reg_enabled", cfg.jac_reg.enabled);
        maybe(t, "seed", cfg.seed);
        maybe(t, "workers", cfg.workers);
    }
    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        check_keys(e, {"repetitions", "include_encode_in_timing"}, "eval");
        maybe(e, "repetitions", cfg.repetitions);
        maybe(e, "include_encode_in_timing", cfg.include_encode_in_timing);
    }
}

json report_header(const RunConfig& cfg) {
    json j{{"build_id", DEAR_BUILD_ID}, {"config", cfg.resolved()}};
    if (!cfg.file_echo.is_null()) j["config_file"] = cfg.file_echo;
    return j;
}

// shared option state collected by CLI11 before the run configuration is built
struct CommonArgs {
    std::string config_path;
    std::string preset;
    std::string algorithm;
    std::string out_dir;
    int64_t seed = -1;
    int workers = 0;

    void attach(CLI::App* cmd, const char* default_out) {
        out_dir = default_out;
        cmd->add_option("--config", config_path, "JSON run configuration file");
        cmd->add_option("--preset", preset, "configuration preset: desk or paper");
        cmd->add_option("--algorithm", algorithm,
                        "bellman_ford | floyd_warshall | scc | insertion_sort");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "seed for data generation and training");
        cmd->add_option("--workers", workers, "batch-parallel worker threads");
    }

    RunConfig build() const {
        RunConfig cfg;
        if (!algorithm.empty()) cfg.set_algorithm(dear::algo_from_string(algorithm));
        apply_preset(cfg, preset);
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        if (seed >= 0) {
            cfg.seed = static_cast<uint64_t>(seed);
            cfg.dataset.seed = static_cast<uint64_t>(seed);
        }
        if (workers > 0) cfg.workers = workers;
        return cfg;
    }
};

std::vector<dear::Sample> load_split(const std::string& path) {
    auto samples = dear::load_dataset(path);
    if (samples.empty()) throw std::runtime_error("dataset is empty: " + path);
    return samples;
}

json eval_report(const dear::EvalResult& r, bool with_per_sample = true) {
    json j = dear::eval_to_json(r);
    if (with_per_sample) {
        json rows = json::array();
        for (const auto& s : r.per_sample)
            rows.push_back({{"n", s.n},
                            {"iterations", s.iterations},
                            {"residual", s.residual},
                            {"converged", s.converged},
                            {"diameter", s.diameter},
                            {"slots", s.slots},
                            {"correct", s.correct}});
        j["per_sample"] = std::move(rows);
    }
    return j;
}

int cmd_gen_data(const CommonArgs& args) {
    RunConfig cfg = args.build();
    fs::create_directories(args.out_dir);
    const auto paths = dear::make_dataset(cfg.dataset, args.out_dir);
    std::printf("wrote %s (%d samples)\n", paths.train.c_str(), cfg.dataset.train_count);
    std::printf("wrote %s (%d samples)\n", paths.val.c_str(), cfg.dataset.val_count);
    std::printf("wrote %s (%d samples)\n", paths.test.c_str(), cfg.dataset.test_count);
    std::printf("wrote %s (seed %llu)\n", paths.meta.c_str(),
                static_cast<unsigned long long>(cfg.dataset.seed));
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir, const std::string& mode) {
    RunConfig cfg = args.build();
    if (!mode.empty()) cfg.mode = dear::run_mode_from_string(mode);
    fs::create_directories(args.out_dir);

    const auto paths = dear::dataset_paths(data_dir, cfg.dataset.algorithm);
    auto train_set = load_split(paths.train);
    auto val_set = load_split(paths.val);
    auto test_set = load_split(paths.test);

    dear::Model model = dear::Model::init(cfg.model, cfg.seed);
    dear::TrainConfig tc = cfg.train_config();
    std::printf("training %s on %s: %zu train / %zu val samples, d=%d, %d epochs\n",
                dear::to_string(cfg.mode), dear::to_string(cfg.dataset.algorithm),
                train_set.size(), val_set.size(), cfg.model.latent_dim, cfg.epochs);
    dear::TrainOutput out = dear::train(model, train_set, val_set, tc, stdout);

    dear::EvalResult test =
        dear::evaluate_dataset(out.best_model, test_set, cfg.mode, cfg.solver, cfg.workers);
    out.metrics.test = test;

    const std::string ckpt = args.out_dir + "/checkpoint.json";
    dear::save_checkpoint(ckpt, out.best_model);
    dear::write_metrics_csv(args.out_dir + "/metrics.csv", out.metrics);
    json summary = report_header(cfg);
    summary["best_epoch"] = out.metrics.best_epoch;
    summary["best_val_loss"] = out.metrics.best_val_loss;
    summary["test"] = eval_report(test);
    summary["checkpoint"] = ckpt;
    dear::write_json_file(args.out_dir + "/train_summary.json", summary);

    std::printf("best epoch %d (val loss %.6f)\n", out.metrics.best_epoch,
                out.metrics.best_val_loss);
    std::printf("test accuracy %.4f (chance %.4f) over %d samples\n", test.accuracy,
                test.chance_level, test.samples);
    std::printf("reports in %s\n", args.out_dir.c_str());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& data_dir,
             const std::string& dataset_path, const std::string& mode,
             const std::string& stop_mode, double epsilon) {
    RunConfig cfg = args.build();
    dear::Model model = dear::load_checkpoint(checkpoint);
    cfg.model = model.cfg;
    cfg.dataset.algorithm = model.cfg.algorithm;
    if (!mode.empty()) cfg.mode = dear::run_mode_from_string(mode);
    if (!stop_mode.empty()) {
        cfg.solver.stop_mode = stop_mode == "relative" ? dear::StopMode::relative
                                                       : dear::StopMode::absolute;
        cfg.solver.epsilon = dear::SolverConfig::default_epsilon(cfg.solver.stop_mode);
    }
    if (epsilon > 0.0) cfg.solver.epsilon = epsilon;

    const std::string path = dataset_path.empty()
                                 ? dear::dataset_paths(data_dir, model.cfg.algorithm).test
                                 : dataset_path;
    auto data = load_split(path);
    dear::EvalResult r = dear::evaluate_dataset(model, data, cfg.mode, cfg.solver, cfg.workers);

    fs::create_directories(args.out_dir);
    json doc = report_header(cfg);
    doc["checkpoint"] = checkpoint;
    doc["dataset"] = path;
    doc["mode"] = dear::to_string(cfg.mode);
    doc["result"] = eval_report(r);
    dear::write_json_file(args.out_dir + "/eval.json", doc);
    std::printf("accuracy %.4f (chance %.4f), mean iterations %.2f, report %s/eval.json\n",
                r.accuracy, r.chance_level, r.mean_iterations, args.out_dir.c_str());
    return 0;
}

int cmd_bench(const CommonArgs& args, const std::string& checkpoint,
              const std::string& data_dir, const std::string& dataset_path, int repetitions,
              bool include_encode) {
    RunConfig cfg = args.build();
    dear::Model model = dear::load_checkpoint(checkpoint);
    cfg.dataset.algorithm = model.cfg.algorithm;
    if (repetitions > 0) cfg.repetitions = repetitions;
    if (include_encode) cfg.include_encode_in_timing = true;

    const std::string path = dataset_path.empty()
                                 ? dear::dataset_paths(data_dir, model.cfg.algorithm).test
                                 : dataset_path;
    auto data = load_split(path);

    dear::SolverConfig rel = cfg.solver;
    rel.stop_mode = dear::StopMode::relative;
    rel.epsilon = dear::SolverConfig::default_epsilon(dear::StopMode::relative);

    dear::BenchResult r_dear = dear::benchmark_inference(
        model, data, dear::RunMode::dear, rel, cfg.repetitions, cfg.include_encode_in_timing);
    dear::BenchResult r_nar = dear::benchmark_inference(
        model, data, dear::RunMode::nar_baseline, rel, cfg.repetitions,
        cfg.include_encode_in_timing);

    fs::create_directories(args.out_dir);
    json doc = report_header(cfg);
    doc["checkpoint"] = checkpoint;
    doc["dataset"] = path;
    doc["dear"] = dear::bench_to_json(r_dear);
    doc["nar_baseline"] = dear::bench_to_json(r_nar);
    doc["speedup_nar_over_dear"] =
        r_dear.seconds_per_sample_mean > 0.0
            ? r_nar.seconds_per_sample_mean / r_dear.seconds_per_sample_mean
            : 0.0;
    dear::write_json_file(args.out_dir + "/bench.json", doc);
    std::printf("dear (rel tol): %.6f s/sample (std %.6f)\n", r_dear.seconds_per_sample_mean,
                r_dear.seconds_per_sample_std);
    std::printf("nar_baseline:   %.6f s/sample (std %.6f)\n", r_nar.seconds_per_sample_mean,
                r_nar.seconds_per_sample_std);
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& checkpoint,
               const std::string& data_dir, const std::string& dataset_path) {
    RunConfig cfg = args.build();
    dear::Model model = dear::load_checkpoint(checkpoint);
    cfg.dataset.algorithm = model.cfg.algorithm;
    const std::string path = dataset_path.empty()
                                 ? dear::dataset_paths(data_dir, model.cfg.algorithm).test
                                 : dataset_path;
    auto data = load_split(path);
    dear::AblationResult r =
        dear::ablation_relative_tolerance(model, data, cfg.solver, cfg.workers);

    fs::create_directories(args.out_dir);
    json doc = report_header(cfg);
    doc["checkpoint"] = checkpoint;
    doc["dataset"] = path;
    doc["absolute"] = eval_report(r.absolute, false);
    doc["relative"] = eval_report(r.relative, false);
    doc["accuracy_delta"] = r.accuracy_delta;
    doc["mean_iterations_delta"] = r.mean_iterations_delta;
    doc["relative_leq_absolute_per_sample"] = r.relative_leq_absolute_per_sample;
    dear::write_json_file(args.out_dir + "/ablate.json", doc);

    std::ofstream csv(args.out_dir + "/ablate.csv", std::ios::binary);
    csv << "stop_mode,epsilon,accuracy,mean_iterations,max_iterations\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "absolute,%.17g,%.17g,%.17g,%d\n", 1e-3,
                  r.absolute.accuracy, r.absolute.mean_iterations, r.absolute.max_iterations);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "relative,%.17g,%.17g,%.17g,%d\n", 0.1,
                  r.relative.accuracy, r.relative.mean_iterations, r.relative.max_iterations);
    csv << buf;

    std::printf("absolute eps=1e-3: accuracy %.4f, mean iters %.2f\n", r.absolute.accuracy,
                r.absolute.mean_iterations);
    std::printf("relative eps=0.1:  accuracy %.4f, mean iters %.2f\n", r.relative.accuracy,
                r.relative.mean_iterations);
    return 0;
}

int cmd_selftest(uint64_t seed) {
    const auto results = dear::run_selftest(seed);
    int failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] %-45s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        if (!r.pass) ++failures;
    }
    std::printf("%zu checks, %d failures\n", results.size(), failures);
    return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep equilibrium algorithmic reasoner"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, bench_args, ablate_args;
    std::string data_dir_train = "data", data_dir_eval = "data", data_dir_bench = "data",
                data_dir_ablate = "data";
    std::string train_mode, eval_mode, eval_stop_mode;
    std::string eval_ckpt, bench_ckpt, ablate_ckpt;
    std::string eval_dataset, bench_dataset, ablate_dataset;
    double eval_epsilon = -1.0;
    int bench_reps = 0;
    bool bench_include_encode = false;
    int64_t selftest_seed = 1;

    CLI::App* gen = app.add_subcommand("gen-data", "generate datasets with oracle targets");
    gen_args.attach(gen, "data");

    CLI::App* train = app.add_subcommand("train", "train a model and evaluate on the test split");
    train_args.attach(train, "runs/latest");
    train->add_option("--data", data_dir_train, "directory holding the generated datasets");
    train->add_option("--mode", train_mode, "dear | nar_baseline");

    CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_args.attach(evalc, "runs/eval");
    evalc->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    evalc->add_option("--data", data_dir_eval, "dataset directory");
    evalc->add_option("--dataset", eval_dataset, "explicit dataset path (overrides --data)");
    evalc->add_option("--mode", eval_mode, "dear | nar_baseline");
    evalc->add_option("--stop-mode", eval_stop_mode, "absolute | relative");
    evalc->add_option("--epsilon", eval_epsilon, "solver stopping tolerance");

    CLI::App* bench = app.add_subcommand("bench", "inference-time benchmark: dear vs baseline");
    bench_args.attach(bench, "runs/bench");
    bench->add_option("--checkpoint", bench_ckpt, "checkpoint file")->required();
    bench->add_option("--data", data_dir_bench, "dataset directory");
    bench->add_option("--dataset", bench_dataset, "explicit dataset path");
    bench->add_option("--repetitions", bench_reps, "timed repetitions (default 3)");
    bench->add_flag("--include-encode", bench_include_encode, "time the encoder too");

    CLI::App* ablate = app.add_subcommand("ablate", "absolute vs relative stopping ablation");
    ablate_args.attach(ablate, "runs/ablate");
    ablate->add_option("--checkpoint", ablate_ckpt, "checkpoint file")->required();
    ablate->add_option("--data", data_dir_ablate, "dataset directory");
    ablate->add_option("--dataset", ablate_dataset, "explicit dataset path");

    CLI::App* selftest = app.add_subcommand("selftest", "run the built-in verification suites");
    selftest->add_option("--seed", selftest_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args, data_dir_train, train_mode);
        if (evalc->parsed())
            return cmd_eval(eval_args, eval_ckpt, data_dir_eval, eval_dataset, eval_mode,
                            eval_stop_mode, eval_epsilon);
        if (bench->parsed())
            return cmd_bench(bench_args, bench_ckpt, data_dir_bench, bench_dataset, bench_reps,
                             bench_include_encode);
        if (ablate->parsed())
            return cmd_ablate(ablate_args, ablate_ckpt, data_dir_ablate, ablate_dataset);
        if (selftest->parsed()) return cmd_selftest(static_cast<uint64_t>(selftest_seed));
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
