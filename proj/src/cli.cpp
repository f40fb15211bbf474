#include "dlb/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dlb/config.hpp"
#include "dlb/errors.hpp"
#include "dlb/experiment.hpp"
#include "dlb/network.hpp"
#include "dlb/ntk.hpp"
#include "dlb/results.hpp"

namespace dlb {

using nlohmann::json;
namespace fs = std::filesystem;

json dataset_to_json(const Dataset& data, bool materialize) {
    json j;
    j["format"] = "dlb-dataset";
    j["version"] = 1;
    j["target"] = to_json(data.spec);
    j["n"] = data.size();
    j["seed"] = data.seed;
    j["stream_id"] = data.stream_id;
    if (materialize) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
            std::vector<double> row(data.inputs.cols());
            for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) row[c] = data.inputs(i, c);
            rows.push_back(row);
        }
        j["inputs"] = rows;
        j["labels"] = std::vector<double>(data.labels.data(), data.labels.data() + data.labels.size());
        j["clean_targets"] =
            std::vector<double>(data.clean_targets.data(), data.clean_targets.data() + data.clean_targets.size());
    }
    return j;
}

Dataset dataset_from_json(const json& j, const std::string& source) {
    try {
        if (j.at("format") != "dlb-dataset") throw ParseError(source, "format", "not a dataset file");
        if (j.at("version") != 1) throw ParseError(source, "version", "unsupported version");
        const TargetSpec spec = target_from_json(j.at("target"), source);
        const auto n = j.at("n").get<std::size_t>();
        if (n == 0) throw ParseError(source, "n", "must be >= 1");
        Dataset data = make_dataset(spec, n, j.at("seed").get<std::uint64_t>(), j.at("stream_id").get<std::uint64_t>());
        if (j.contains("inputs")) {
            const auto rows = j.at("inputs").get<std::vector<std::vector<double>>>();
            const auto labels = j.at("labels").get<std::vector<double>>();
            bool same = rows.size() == n && labels.size() == n;
            for (std::size_t i = 0; same && i < n; ++i) {
                same = rows[i].size() == static_cast<std::size_t>(spec.d) && labels[i] == data.labels(i);
                for (int c = 0; same && c < spec.d; ++c) same = rows[i][c] == data.inputs(i, c);
            }
            if (!same) throw ParseError(source, "inputs", "materialized arrays differ from the regenerated data");
        }
        return data;
    } catch (const json::exception& e) {
        throw ParseError(source, "<root>", e.what());
    }
}

Dataset load_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("dataset file '" + path + "' not found");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path, "<root>", std::string("invalid JSON: ") + e.what());
    }
    return dataset_from_json(j, path);
}

namespace {

struct OutputPaths {
    std::string csv;
    std::string manifest;
    std::string timing;
};

/// `--out x.csv` names the CSV and puts sidecars beside it; any other value is a directory.
std::optional<OutputPaths> resolve_output(const std::string& flag, const ExperimentConfig& config) {
    std::string target = flag;
    if (target.empty() && config.output_dir) target = *config.output_dir;
    if (target.empty()) return std::nullopt;
    const fs::path p(target);
    if (p.extension() == ".csv") {
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        fs::path stem = p;
        stem.replace_extension();
        return OutputPaths{p.string(), stem.string() + ".manifest.json", stem.string() + ".timing.json"};
    }
    fs::create_directories(p);
    return OutputPaths{(p / "results.csv").string(), (p / "manifest.json").string(), (p / "timing.json").string()};
}

void emit(const std::vector<RunRecord>& records, const std::string& out_flag, const ExperimentConfig& config,
          const std::string& command, const json& arguments, std::ostream& out) {
    const auto paths = resolve_output(out_flag, config);
    if (!paths) {
        out << results_csv(records);
        return;
    }
    write_results(records, paths->csv);
    json manifest = make_manifest(to_json(config), command);
    if (!arguments.is_null()) manifest["arguments"] = arguments;
    write_json(manifest, paths->manifest);
    write_json(make_timing(records), paths->timing);
}

ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig c = parse_config(path);
    c.sweep.workers = workers_from_env(c.sweep.workers);
    return c;
}

int cell_width(const SweepConfig& s, int depth, std::optional<int> flag) {
    if (flag) return *flag;
    if (s.width) return *s.width;
    return width_for_depth(*s.budget, s.target.d, depth);
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Depth, locality and NTK experiments for deep ReLU networks", "dlb"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DLB_VERSION);

    std::string config_path, out_path, split = "train";
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::size_t> n_flag;
    std::optional<int> width_flag;
    int depth = 1;
    double lr = 0.0;
    bool materialize = false, by_lr = false;
    std::string save_path;
    std::vector<std::string> inputs;

    auto* gen = app.add_subcommand("gen", "Write a dataset file");
    gen->add_option("--config", config_path, "Config JSON")->required();
    gen->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    gen->add_option("--seed", seed_flag, "Seed (default: config seed)");
    gen->add_option("--n", n_flag, "Sample count (default: n_train or n_test)");
    gen->add_option("--out", out_path, "Dataset file")->required();
    gen->add_flag("--materialize", materialize, "Also write the raw arrays");

    auto* train = app.add_subcommand("train", "Single SGD run");
    train->add_option("--config", config_path, "Config JSON")->required();
    train->add_option("--depth", depth, "Hidden layers")->required()->check(CLI::PositiveNumber);
    train->add_option("--lr", lr, "Learning rate")->required()->check(CLI::PositiveNumber);
    train->add_option("--seed", seed_flag, "Seed (default: config seed)");
    train->add_option("--width", width_flag, "Width (default: from config)")->check(CLI::PositiveNumber);
    train->add_option("--out", out_path, "CSV file or directory");
    train->add_option("--save-model", save_path, "Checkpoint of the trained network");

    auto* ntk = app.add_subcommand("ntk", "Fit and evaluate the NTK baseline");
    ntk->add_option("--config", config_path, "Config JSON")->required();
    ntk->add_option("--depth", depth, "Hidden layers")->required()->check(CLI::PositiveNumber);
    ntk->add_option("--seed", seed_flag, "Seed (default: config seed)");
    ntk->add_option("--out", out_path, "CSV file or directory");
    ntk->add_option("--save-model", save_path, "Fitted kernel model");

    auto* lr_scan = app.add_subcommand("lr-scan", "Fixed-width learning-rate sweep");
    lr_scan->add_option("--config", config_path, "Config JSON")->required();
    lr_scan->add_option("--out", out_path, "CSV file or directory");

    auto* sweep = app.add_subcommand("sweep", "Fixed-budget depth sweep");
    sweep->add_option("--config", config_path, "Config JSON")->required();
    sweep->add_option("--out", out_path, "CSV file or directory");

    auto* report = app.add_subcommand("report", "Aggregate result CSVs");
    report->add_option("inputs", inputs, "Result CSVs")->required();
    report->add_option("--out", out_path, "Plot CSV (default: stdout)");
    report->add_flag("--by-lr", by_lr, "Group by learning rate as well");

    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << DLB_VERSION << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "dlb: " << e.what() << "\n";
        return kExitConfig;
    }

    // Configuration errors.
    ExperimentConfig config;
    try {
        if (!config_path.empty()) config = load_config(config_path);
        if ((*train || *ntk) && config.sweep.batch_size > config.sweep.n_train)
            throw InvalidArgument("batch_size: exceeds n_train");
        if (*lr_scan && !config.sweep.width) throw ParseError(config_path, "width", "lr-scan needs a fixed width");
        if (*sweep && !config.sweep.budget) throw ParseError(config_path, "budget", "sweep needs a parameter budget");
    } catch (const Error& e) {
        err << "dlb: config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        const std::uint64_t seed = seed_flag.value_or(config.seed);
        const SweepConfig& s = config.sweep;
        if (*gen) {
            const bool test = split == "test";
            TargetSpec spec = s.target;
            if (test) spec.noise_eps = 0.0;
            const std::size_t n = n_flag.value_or(static_cast<std::size_t>(test ? s.n_test : s.n_train));
            const Dataset data = make_dataset(
                spec, n, seed, make_stream_id(test ? StreamPurpose::kTestData : StreamPurpose::kTrainData));
            write_json(dataset_to_json(data, materialize), out_path);
        } else if (*train) {
            const int width = cell_width(s, depth, width_flag);
            const Dataset trainset = sweep_train_set(s, seed);
            const Dataset testset = sweep_test_set(s, seed);
            MlpModel model;
            const RunRecord rec = run_cell(s, trainset, testset, depth, width, lr, seed, &model);
            if (!save_path.empty()) save_model(model, save_path);
            emit({rec}, out_path, config, "train", {{"depth", depth}, {"lr", lr}, {"seed", seed}, {"width", width}},
                 out);
        } else if (*ntk) {
            const Dataset trainset = sweep_train_set(s, seed);
            const Dataset testset = sweep_test_set(s, seed);
            const RunRecord rec = run_ntk_cell(s, trainset, testset, depth, seed);
            if (!save_path.empty()) save_ntk(ntk_fit(trainset, KernelSpec{depth, s.beta, s.target.d}), save_path);
            emit({rec}, out_path, config, "ntk", {{"depth", depth}, {"seed", seed}}, out);
        } else if (*lr_scan) {
            emit(lr_sweep(s), out_path, config, "lr-scan", nullptr, out);
        } else if (*sweep) {
            emit(depth_sweep(s), out_path, config, "sweep", nullptr, out);
        } else if (*report) {
            std::vector<RunRecord> all;
            for (const std::string& path : inputs) {
                const auto rows = read_results(path);
                all.insert(all.end(), rows.begin(), rows.end());
            }
            const std::string text = report_csv(aggregate(all, by_lr), by_lr);
            if (out_path.empty()) {
                out << text;
            } else {
                std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
                if (!(f << text)) throw IoError("cannot write '" + out_path + "'");
            }
        }
    } catch (const ParseError& e) {
        err << "dlb: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NotFound& e) {
        err << "dlb: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "dlb: runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace dlb
