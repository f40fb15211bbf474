#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dlb/network.hpp"
#include "dlb/ntk.hpp"
#include "dlb/targets.hpp"

namespace dlb {

struct LrGrid {
    double grid_lo = 1e-3;
    double grid_hi = 1.0;
    int points_per_decade = 4;
    int refine_rounds = 2;
};

/// Everything a depth sweep or learning-rate sweep needs. Exactly one of `budget` (fixed
/// parameter count, depth sweep) and `width` (fixed width, learning-rate sweep) is set.
struct SweepConfig {
    TargetSpec target;
    int n_train = 1000;
    int n_test = 100000;
    std::optional<std::int64_t> budget;
    std::optional<int> width;
    std::vector<int> depths{1, 2, 3};
    LrGrid lr_search;
    int folds = 10;
    int batch_size = 50;
    int epoch_cap = 2500;
    /// Epoch cap of cross-validation runs; 0 means epoch_cap / 5.
    int cv_epoch_cap = 0;
    int check_every = 50;
    double loss_threshold = 1e-4;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    InitKind init = InitKind::kGlorot;
    bool centered = false;
    /// Bias scale of the NTK baseline (and of kNtk-initialized networks).
    double beta = 0.1;
    bool ntk_baseline = false;
    /// Learning rates of lr_sweep; empty means the lr_search grid without refinement.
    std::vector<double> learning_rates;
    int workers = 1;

    LossKind loss_kind() const {
        return target.task == Task::kClassification ? LossKind::kCrossEntropy : LossKind::kMse;
    }
    int effective_cv_epoch_cap() const { return cv_epoch_cap > 0 ? cv_epoch_cap : std::max(1, epoch_cap / 5); }
};

void validate(const SweepConfig& config);

/// One experiment cell. For kind == "ntk" rows width, params, lr and epochs are 0.
/// train_metric is the training loss (regression) or accuracy (classification); test_metric
/// the test error or the misclassification rate.
struct RunRecord {
    std::string kind = "sgd";
    int depth = 0;
    int width = 0;
    std::int64_t params = 0;
    double lr = 0.0;
    std::uint64_t seed = 0;
    int epochs = 0;
    std::string stop_reason;
    double train_metric = 0.0;
    double test_metric = 0.0;
    double wall_time = 0.0;
};

/// Canonical order: depth, lr, seed, then kind.
bool canonical_less(const RunRecord& a, const RunRecord& b);
void canonicalize(std::vector<RunRecord>& records);

/// Mean squared deviation from the noiseless test targets.
double test_error(const std::function<double(const Eigen::VectorXd&)>& predict, const Dataset& testset);
double test_error(const Eigen::VectorXd& predictions, const Dataset& testset);

/// Fraction of test points whose predicted sign differs from the label.
double misclassification_rate(const std::function<double(const Eigen::VectorXd&)>& predict_sign,
                              const Dataset& testset);
double misclassification_rate(const Eigen::VectorXd& predictions, const Dataset& testset);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Random permutation cut into `folds` contiguous validation blocks whose sizes differ by at
/// most one (the first N mod folds blocks get the extra element).
std::vector<Fold> kfold_split(std::size_t n, int folds, RngStream& rng);

struct LrSearchResult {
    double best_lr = 0.0;
    std::vector<std::pair<double, double>> table;  // (lr, mean validation error), ascending lr
};

/// Scores one learning rate; +infinity marks divergence.
using LrObjective = std::function<double(double)>;

/// Coarse-to-fine log-grid search. Round 0 evaluates points_per_decade points per decade on
/// [grid_lo, grid_hi]; each refinement round evaluates a one-decade window centred on the
/// incumbent at twice the previous density, clipped to [grid_lo, grid_hi]. Ties go to the
/// smaller learning rate.
/// Throws AllDiverged when every evaluated rate scores +infinity.
LrSearchResult lr_grid_search(const LrGrid& grid, const LrObjective& objective);

/// The round-0 grid of lr_grid_search.
std::vector<double> log_grid(double lo, double hi, int points_per_decade);

/// k-fold cross-validated learning-rate search for a network of the given architecture.
/// The objective is the mean validation MSE (regression) or misclassification rate.
LrSearchResult lr_search(const Dataset& data, const Architecture& arch, const SweepConfig& config,
                         std::uint64_t seed);

/// Datasets a sweep cell uses for a seed.
Dataset sweep_train_set(const SweepConfig& config, std::uint64_t seed);
Dataset sweep_test_set(const SweepConfig& config, std::uint64_t seed);

/// Trains one network and evaluates it; never throws for divergence. The trained network is
/// stored in `trained` when non-null.
RunRecord run_cell(const SweepConfig& config, const Dataset& train, const Dataset& test, int depth, int width,
                   double lr, std::uint64_t seed, MlpModel* trained = nullptr);

/// NTK baseline at the same depth, beta = config.beta.
RunRecord run_ntk_cell(const SweepConfig& config, const Dataset& train, const Dataset& test, int depth,
                       std::uint64_t seed);

/// For each depth: width from the budget, CV learning-rate search on the first seed's data,
/// then one trained network per seed (plus optional NTK rows).
std::vector<RunRecord> depth_sweep(const SweepConfig& config);

/// For each depth and learning rate on the grid, one trained network per seed at fixed width.
std::vector<RunRecord> lr_sweep(const SweepConfig& config);

/// Runs jobs 0..n-1 on up to `workers` threads; rethrows the first job exception.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job);

/// Worker count from DLB_WORKERS if set, else `fallback`.
int workers_from_env(int fallback);

}  // namespace dlb
