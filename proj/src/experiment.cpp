#include "dlb/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "dlb/errors.hpp"

namespace dlb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void validate(const SweepConfig& c) {
    validate(c.target);
    if (c.n_train < 1) throw InvalidArgument("sweep.n_train: must be >= 1");
    if (c.n_test < 1) throw InvalidArgument("sweep.n_test: must be >= 1");
    if (c.budget.has_value() == c.width.has_value())
        throw InvalidArgument("sweep.budget: exactly one of budget and width must be set");
    if (c.budget && *c.budget <= c.target.d) throw InvalidArgument("sweep.budget: must exceed d");
    if (c.width && *c.width < 1) throw InvalidArgument("sweep.width: must be >= 1");
    if (c.depths.empty()) throw InvalidArgument("sweep.depths: must be non-empty");
    for (int l : c.depths)
        if (l < 1) throw InvalidArgument("sweep.depths: depths must be >= 1");
    if (!(c.lr_search.grid_lo > 0.0) || !(c.lr_search.grid_lo < c.lr_search.grid_hi))
        throw InvalidArgument("sweep.lr_search: need 0 < grid_lo < grid_hi");
    if (c.lr_search.points_per_decade < 1) throw InvalidArgument("sweep.lr_search.points_per_decade: must be >= 1");
    if (c.lr_search.refine_rounds < 0) throw InvalidArgument("sweep.lr_search.refine_rounds: must be >= 0");
    if (c.folds < 2 || c.folds > c.n_train) throw InvalidArgument("sweep.folds: need 2 <= folds <= n_train");
    if (c.batch_size < 1 || c.batch_size > c.n_train) throw InvalidArgument("sweep.batch_size: need 1 <= B <= n_train");
    if (c.epoch_cap < 1) throw InvalidArgument("sweep.epoch_cap: must be >= 1");
    if (c.cv_epoch_cap < 0) throw InvalidArgument("sweep.cv_epoch_cap: must be >= 0");
    if (c.check_every < 1) throw InvalidArgument("sweep.check_every: must be >= 1");
    if (c.seeds.empty()) throw InvalidArgument("sweep.seeds: must be non-empty");
    if (!(c.beta >= 0.0)) throw InvalidArgument("sweep.beta: must be >= 0");
    if (c.centered && c.init != InitKind::kNtk) throw InvalidArgument("sweep.centered: requires ntk init");
    for (double lr : c.learning_rates)
        if (!(lr > 0.0)) throw InvalidArgument("sweep.learning_rates: rates must be > 0");
    if (c.workers < 1) throw InvalidArgument("sweep.workers: must be >= 1");
}

bool canonical_less(const RunRecord& a, const RunRecord& b) {
    return std::tie(a.depth, a.lr, a.seed, a.kind) < std::tie(b.depth, b.lr, b.seed, b.kind);
}

void canonicalize(std::vector<RunRecord>& records) { std::stable_sort(records.begin(), records.end(), canonical_less); }

// ---------------------------------------------------------------------------
// Metrics

double test_error(const Eigen::VectorXd& predictions, const Dataset& testset) {
    if (predictions.size() != testset.clean_targets.size())
        throw DimensionMismatch("test_error: prediction count does not match the test set");
    return (predictions - testset.clean_targets).squaredNorm() / static_cast<double>(predictions.size());
}

double test_error(const std::function<double(const Eigen::VectorXd&)>& predict, const Dataset& testset) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(testset.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = predict(testset.inputs.row(i).transpose());
    return test_error(p, testset);
}

double misclassification_rate(const Eigen::VectorXd& predictions, const Dataset& testset) {
    if (predictions.size() != testset.labels.size())
        throw DimensionMismatch("misclassification_rate: prediction count does not match the test set");
    Eigen::Index wrong = 0;
    for (Eigen::Index i = 0; i < predictions.size(); ++i)
        wrong += ((predictions[i] >= 0.0 ? 1.0 : -1.0) != testset.labels[i]) ? 1 : 0;
    return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

double misclassification_rate(const std::function<double(const Eigen::VectorXd&)>& predict_sign,
                              const Dataset& testset) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(testset.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = predict_sign(testset.inputs.row(i).transpose());
    return misclassification_rate(p, testset);
}

// ---------------------------------------------------------------------------
// Cross-validation and learning-rate search

std::vector<Fold> kfold_split(std::size_t n, int folds, RngStream& rng) {
    if (folds < 2 || n < static_cast<std::size_t>(folds)) throw InvalidArgument("kfold_split: need 2 <= folds <= N");
    const std::vector<std::size_t> order = permutation(n, rng);
    const std::size_t k = static_cast<std::size_t>(folds);
    const std::size_t base = n / k;
    const std::size_t extra = n % k;
    std::vector<Fold> out(k);
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= start && i < start + len)
                out[f].validation.push_back(order[i]);
            else
                out[f].train.push_back(order[i]);
        }
        start += len;
    }
    return out;
}

std::vector<double> log_grid(double lo, double hi, int points_per_decade) {
    if (!(lo > 0.0) || !(lo < hi) || points_per_decade < 1) throw InvalidArgument("log_grid: need 0 < lo < hi");
    const int steps = static_cast<int>(std::lround(std::log10(hi / lo) * points_per_decade));
    std::vector<double> grid;
    for (int j = 0; j <= steps; ++j) grid.push_back(lo * std::pow(10.0, static_cast<double>(j) / points_per_decade));
    return grid;
}

LrSearchResult lr_grid_search(const LrGrid& grid, const LrObjective& objective) {
    std::map<double, double> scores;
    auto evaluate = [&](double lr) {
        for (const auto& [seen, score] : scores)
            if (std::abs(seen - lr) <= 1e-12 * lr) return;
        scores.emplace(lr, objective(lr));
    };
    auto incumbent = [&]() {
        double best_lr = 0.0, best = kInf;
        for (const auto& [lr, score] : scores)  // ascending lr, strict < keeps the smaller on ties
            if (score < best) {
                best = score;
                best_lr = lr;
            }
        return std::pair{best_lr, best};
    };

    for (double lr : log_grid(grid.grid_lo, grid.grid_hi, grid.points_per_decade)) evaluate(lr);
    int density = grid.points_per_decade;
    for (int round = 1; round <= grid.refine_rounds; ++round) {
        const auto [center, score] = incumbent();
        if (!std::isfinite(score)) break;
        density *= 2;
        const int half = std::max(1, density / 2);
        for (int j = -half; j <= half; ++j) {
            const double lr = center * std::pow(10.0, static_cast<double>(j) / density);
            if (lr >= grid.grid_lo * (1 - 1e-12) && lr <= grid.grid_hi * (1 + 1e-12)) evaluate(lr);
        }
    }
    const auto [best_lr, best] = incumbent();
    if (!std::isfinite(best)) throw AllDiverged("lr_search: every learning rate diverged");
    LrSearchResult out;
    out.best_lr = best_lr;
    out.table.assign(scores.begin(), scores.end());
    return out;
}

namespace {

Architecture sweep_arch(const SweepConfig& c, int depth, int width) {
    return Architecture{c.target.d, depth, width, c.init, c.beta, c.centered};
}

TrainOptions train_options(const SweepConfig& c, double lr, int epoch_cap) {
    TrainOptions o;
    o.learning_rate = lr;
    o.batch_size = c.batch_size;
    o.epoch_cap = epoch_cap;
    o.check_every = c.check_every;
    o.loss = c.loss_kind();
    o.loss_threshold = c.loss_threshold;
    o.accuracy_threshold = 1.0;
    return o;
}

double validation_score(const MlpModel& model, const Dataset& val, LossKind kind) {
    try {
        const Eigen::VectorXd p = predict(model, val.inputs);
        if (kind == LossKind::kCrossEntropy) return misclassification_rate(p, val);
        return (p - val.labels).squaredNorm() / static_cast<double>(p.size());
    } catch (const NonFinite&) {
        return kInf;
    }
}

}  // namespace

LrSearchResult lr_search(const Dataset& data, const Architecture& arch, const SweepConfig& config,
                         std::uint64_t seed) {
    RngStream fold_rng(seed, make_stream_id(StreamPurpose::kFolds));
    const std::vector<Fold> folds = kfold_split(data.size(), config.folds, fold_rng);
    const int batch = config.batch_size;
    std::vector<Dataset> train_parts, val_parts;
    for (const Fold& f : folds) {
        train_parts.push_back(data.subset(f.train));
        val_parts.push_back(data.subset(f.validation));
    }
    const LossKind kind = config.loss_kind();
    const auto depth = static_cast<std::uint32_t>(arch.depth);
    auto objective = [&](double lr) {
        double total = 0.0;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const auto tag = static_cast<std::uint32_t>(f + 1);
            RngStream init_rng(seed, make_stream_id(StreamPurpose::kInit, depth, tag));
            RngStream shuffle_rng(seed, make_stream_id(StreamPurpose::kShuffle, depth, tag));
            TrainOptions o = train_options(config, lr, config.effective_cv_epoch_cap());
            o.batch_size = std::min<int>(batch, static_cast<int>(train_parts[f].size()));
            TrainResult r = sgd_train(init(arch, init_rng), train_parts[f], o, shuffle_rng);
            if (r.report.stop_reason == StopReason::kDiverged) return kInf;
            const double score = validation_score(r.model, val_parts[f], kind);
            if (!std::isfinite(score)) return kInf;
            total += score;
        }
        return total / static_cast<double>(folds.size());
    };
    return lr_grid_search(config.lr_search, objective);
}

// ---------------------------------------------------------------------------
// Sweeps

Dataset sweep_train_set(const SweepConfig& config, std::uint64_t seed) {
    return make_dataset(config.target, static_cast<std::size_t>(config.n_train), seed,
                        make_stream_id(StreamPurpose::kTrainData));
}

Dataset sweep_test_set(const SweepConfig& config, std::uint64_t seed) {
    TargetSpec clean = config.target;
    clean.noise_eps = 0.0;
    return make_dataset(clean, static_cast<std::size_t>(config.n_test), seed, make_stream_id(StreamPurpose::kTestData));
}

RunRecord run_cell(const SweepConfig& config, const Dataset& train, const Dataset& test, int depth, int width,
                   double lr, std::uint64_t seed, MlpModel* trained) {
    const auto start = std::chrono::steady_clock::now();
    const Architecture arch = sweep_arch(config, depth, width);
    RngStream init_rng(seed, make_stream_id(StreamPurpose::kInit, static_cast<std::uint32_t>(depth)));
    RngStream shuffle_rng(seed, make_stream_id(StreamPurpose::kShuffle, static_cast<std::uint32_t>(depth)));
    TrainResult r = sgd_train(init(arch, init_rng), train, train_options(config, lr, config.epoch_cap), shuffle_rng);

    RunRecord rec;
    rec.kind = "sgd";
    rec.depth = depth;
    rec.width = width;
    rec.params = parameter_count(arch);
    rec.lr = lr;
    rec.seed = seed;
    rec.epochs = r.report.epochs_run;
    rec.stop_reason = to_string(r.report.stop_reason);
    const bool classify = config.target.task == Task::kClassification;
    if (r.report.stop_reason == StopReason::kDiverged) {
        rec.train_metric = classify ? 0.0 : kInf;
        rec.test_metric = classify ? 1.0 : kInf;
    } else {
        rec.train_metric = classify ? r.report.final_train_accuracy : r.report.final_train_loss;
        try {
            const Eigen::VectorXd p = predict(r.model, test.inputs);
            rec.test_metric = classify ? misclassification_rate(p, test) : test_error(p, test);
        } catch (const NonFinite&) {
            rec.stop_reason = to_string(StopReason::kDiverged);
            rec.test_metric = classify ? 1.0 : kInf;
        }
    }
    if (trained) *trained = std::move(r.model);
    rec.wall_time = seconds_since(start);
    return rec;
}

RunRecord run_ntk_cell(const SweepConfig& config, const Dataset& train, const Dataset& test, int depth,
                       std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const KernelSpec spec{depth, config.beta, config.target.d};
    RunRecord rec;
    rec.kind = "ntk";
    rec.depth = depth;
    rec.seed = seed;
    rec.stop_reason = "kernel";
    const bool classify = config.target.task == Task::kClassification;
    try {
        const NtkModel model = ntk_fit(train, spec);
        const Eigen::VectorXd fit = ntk_predict_batch(model, train.inputs);
        const Eigen::VectorXd p = ntk_predict_batch(model, test.inputs);
        if (classify) {
            rec.train_metric = 1.0 - misclassification_rate(fit, train);
            rec.test_metric = misclassification_rate(p, test);
        } else {
            rec.train_metric = (fit - train.labels).squaredNorm() / static_cast<double>(fit.size());
            rec.test_metric = test_error(p, test);
        }
    } catch (const SingularSystem&) {
        rec.stop_reason = "singular";
        rec.train_metric = kInf;
        rec.test_metric = kInf;
    }
    rec.wall_time = seconds_since(start);
    return rec;
}

namespace {

struct SeedData {
    Dataset train;
    Dataset test;
};

std::vector<SeedData> make_seed_data(const SweepConfig& config) {
    std::vector<SeedData> data;
    for (std::uint64_t s : config.seeds) data.push_back({sweep_train_set(config, s), sweep_test_set(config, s)});
    return data;
}

RunRecord failed_record(const SweepConfig& config, int depth, int width, std::uint64_t seed, const std::string& why) {
    RunRecord rec;
    rec.depth = depth;
    rec.width = width;
    rec.params = parameter_count(sweep_arch(config, depth, width));
    rec.seed = seed;
    rec.stop_reason = why;
    const bool classify = config.target.task == Task::kClassification;
    rec.train_metric = classify ? 0.0 : kInf;
    rec.test_metric = classify ? 1.0 : kInf;
    return rec;
}

}  // namespace

std::vector<RunRecord> depth_sweep(const SweepConfig& config) {
    validate(config);
    if (!config.budget) throw InvalidArgument("sweep.budget: depth_sweep needs a parameter budget");
    const std::vector<SeedData> data = make_seed_data(config);
    const std::size_t n_depths = config.depths.size();
    const std::size_t n_seeds = config.seeds.size();

    std::vector<int> widths(n_depths);
    for (std::size_t i = 0; i < n_depths; ++i)
        widths[i] = width_for_depth(*config.budget, config.target.d, config.depths[i]);

    // Learning rate per depth from the first seed's data; NaN marks an all-diverged search.
    std::vector<double> best_lr(n_depths, std::numeric_limits<double>::quiet_NaN());
    parallel_for(n_depths, config.workers, [&](std::size_t i) {
        try {
            best_lr[i] = lr_search(data.front().train, sweep_arch(config, config.depths[i], widths[i]), config,
                                   config.seeds.front())
                             .best_lr;
        } catch (const AllDiverged&) {
        }
    });

    const std::size_t per_depth = config.ntk_baseline ? 2 * n_seeds : n_seeds;
    std::vector<RunRecord> records(n_depths * per_depth);
    parallel_for(records.size(), config.workers, [&](std::size_t job) {
        const std::size_t i = job / per_depth;
        const std::size_t rest = job % per_depth;
        const std::size_t s = rest % n_seeds;
        const int depth = config.depths[i];
        const std::uint64_t seed = config.seeds[s];
        if (rest >= n_seeds) {
            records[job] = run_ntk_cell(config, data[s].train, data[s].test, depth, seed);
        } else if (std::isnan(best_lr[i])) {
            records[job] = failed_record(config, depth, widths[i], seed, "all_diverged");
        } else {
            records[job] = run_cell(config, data[s].train, data[s].test, depth, widths[i], best_lr[i], seed);
        }
    });
    canonicalize(records);
    return records;
}

std::vector<RunRecord> lr_sweep(const SweepConfig& config) {
    validate(config);
    if (!config.width) throw InvalidArgument("sweep.width: lr_sweep needs a fixed width");
    const std::vector<double> rates =
        config.learning_rates.empty()
            ? log_grid(config.lr_search.grid_lo, config.lr_search.grid_hi, config.lr_search.points_per_decade)
            : config.learning_rates;
    const std::vector<SeedData> data = make_seed_data(config);
    const std::size_t n_seeds = config.seeds.size();
    const std::size_t per_depth = rates.size() * n_seeds + (config.ntk_baseline ? n_seeds : 0);
    std::vector<RunRecord> records(config.depths.size() * per_depth);
    parallel_for(records.size(), config.workers, [&](std::size_t job) {
        const int depth = config.depths[job / per_depth];
        const std::size_t rest = job % per_depth;
        const std::size_t s = rest % n_seeds;
        if (rest >= rates.size() * n_seeds) {
            records[job] = run_ntk_cell(config, data[s].train, data[s].test, depth, config.seeds[s]);
        } else {
            records[job] = run_cell(config, data[s].train, data[s].test, depth, *config.width, rates[rest / n_seeds],
                                    config.seeds[s]);
        }
    });
    canonicalize(records);
    return records;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

int workers_from_env(int fallback) {
    if (const char* env = std::getenv("DLB_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    }
    return fallback;
}

}  // namespace dlb
