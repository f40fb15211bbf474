// Acceptance runner. Usage: dlb_acceptance [criterion ...]; no arguments runs 1..12.
// Prints one "Criterion N: PASS|FAIL <detail>" line per criterion and exits 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlb/cli.hpp"
#include "dlb/experiment.hpp"
#include "dlb/linalg.hpp"
#include "dlb/network.hpp"
#include "dlb/ntk.hpp"
#include "dlb/results.hpp"
#include "dlb/rng.hpp"
#include "dlb/targets.hpp"

using namespace dlb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

TargetSpec monomial2(Scope scope, int d) {
    TargetSpec t;
    t.g = GFunction::monomial(2);
    t.scope = scope;
    t.d = d;
    t.indices = {0, 1};
    return t;
}

Outcome mc_vs_analytic() {
    const int d = 10;
    RngStream pts(101, make_stream_id(StreamPurpose::kTestData, 1));
    const MatrixXd xs = gaussian_matrix(pts, 5, d), ys = gaussian_matrix(pts, 5, d);
    double worst_rel = 0.0, worst_z = 0.0;
    bool pass = true;
    for (int depth = 1; depth <= 3; ++depth) {
        const KernelSpec spec{depth, 0.1, d};
        RngStream rng(7, make_stream_id(StreamPurpose::kMonteCarlo, static_cast<std::uint32_t>(depth)));
        const auto est = mc_ntk_estimate_pairs(xs, ys, spec, 4096, 64, rng);
        for (Eigen::Index i = 0; i < xs.rows(); ++i) {
            const double exact = ntk_kernel(xs.row(i).transpose(), ys.row(i).transpose(), spec);
            const McEstimate& e = est[static_cast<std::size_t>(i)];
            const double r = std::abs(e.mean - exact) / std::abs(exact);
            const double z = std::abs(e.mean - exact) / e.stderr_;
            worst_rel = std::max(worst_rel, r);
            worst_z = std::max(worst_z, z);
            pass = pass && r <= 0.05 && z <= 3.0;
        }
    }
    return {pass, fmt("max rel err %.4f (<= 0.05), max |z| %.2f (<= 3)", worst_rel, worst_z)};
}

Outcome bias_free_equivalence() {
    RngStream rng(202, 1);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int d = 2 + static_cast<int>(rng.uniform_index(15));
        const VectorXd x = gaussian_vector(rng, d), y = gaussian_vector(rng, d);
        for (int depth = 1; depth <= 5; ++depth)
            worst = std::max(worst, rel(ntk_kernel(x, y, {depth, 0.0, d}), ntk_kernel_bias_free(x, y, depth)));
    }
    return {worst <= 1e-10, fmt("max rel err %.3e (<= 1e-10)", worst)};
}

Outcome diagonal_closed_form() {
    RngStream rng(303, 1);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int d = 1 + static_cast<int>(rng.uniform_index(20));
        const double beta = rng.uniform(0.0, 1.0);
        const VectorXd x = gaussian_vector(rng, d);
        const RecursionTrace t = sigma_recursion(x, x, {10, beta, d});
        for (int l = 0; l <= 10; ++l) {
            const double expected = x.squaredNorm() / d + (l + 1) * beta * beta;
            worst = std::max(worst, rel(t.sigma[static_cast<std::size_t>(l)], expected));
        }
    }
    return {worst <= 1e-12, fmt("max rel err %.3e (<= 1e-12)", worst)};
}

bool kink_safe(const MlpModel& m, const MatrixXd& batch, double margin) {
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        VectorXd z = batch.row(i).transpose();
        for (int l = 0; l < m.arch.depth; ++l) {
            const auto L = static_cast<std::size_t>(l);
            const VectorXd a = m.weight_scale[L] * (m.params.weights[L] * z) + m.bias_scale * m.params.biases[L];
            if (a.cwiseAbs().minCoeff() <= margin) return false;
            z = a.cwiseMax(0.0);
        }
    }
    return true;
}

Outcome gradient_check() {
    const double step = 1e-5;
    int checked = 0, attempts = 0;
    double worst = 0.0;
    RngStream rng(404, 1);
    while (checked < 20 && attempts < 200) {
        ++attempts;
        const int depth = 1 + checked % 3;
        const InitKind kind = checked % 2 == 0 ? InitKind::kGlorot : InitKind::kNtk;
        const MlpModel m = init(Architecture{4, depth, 5, kind, 0.1, false}, rng);
        const MatrixXd x = gaussian_matrix(rng, 6, 4);
        const VectorXd y = gaussian_vector(rng, 6);
        if (!kink_safe(m, x, 1e-3)) continue;
        const bool ob = m.arch.has_output_bias();
        const auto analytic = backward(m, x, y, LossKind::kMse).gradient.flatten(ob);
        const auto theta = m.params.flatten(ob);
        MlpModel probe = m;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            auto t = theta;
            t[i] = theta[i] + step;
            probe.params.assign(t, ob);
            const double up = loss(probe, x, y, LossKind::kMse);
            t[i] = theta[i] - step;
            probe.params.assign(t, ob);
            const double fd = (up - loss(probe, x, y, LossKind::kMse)) / (2 * step);
            num += (fd - analytic[i]) * (fd - analytic[i]);
            den += std::max(fd * fd, analytic[i] * analytic[i]);
        }
        worst = std::max(worst, std::sqrt(num / den));
        ++checked;
    }
    return {checked == 20 && worst <= 1e-4, fmt("%d pairs, max rel err %.3e (<= 1e-4)", checked, worst)};
}

Outcome kernel_interpolation() {
    const Dataset data = make_dataset(monomial2(Scope::kLocal, 10), 200, 505, make_stream_id(StreamPurpose::kTrainData));
    const KernelSpec spec{2, 0.1, 10};
    const NtkModel model = ntk_fit(data, spec);
    const VectorXd fit = ntk_predict_batch(model, data.inputs);
    const double rmse = std::sqrt((fit - data.labels).squaredNorm() / 200.0);
    const MatrixXd k = gram(data.inputs, spec);
    const double min_eig = min_eigenvalue_estimate(k);
    const double floor = -1e-8 * k.trace() / 200.0;
    return {rmse <= 1e-5 && min_eig >= floor,
            fmt("train RMSE %.3e (<= 1e-5), min eigenvalue %.3e (>= %.3e)", rmse, min_eig, floor)};
}

Outcome lazy_regime() {
    const int d = 10;
    const TargetSpec target = monomial2(Scope::kLocal, d);
    const Dataset train = make_dataset(target, 50, 606, make_stream_id(StreamPurpose::kTrainData));
    const Dataset test = make_dataset(target, 100, 606, make_stream_id(StreamPurpose::kTestData));

    RngStream init_rng(606, make_stream_id(StreamPurpose::kInit));
    const MlpModel m0 = init(Architecture{d, 1, 2048, InitKind::kNtk, 0.1, false}, init_rng);
    const VectorXd f0_train = predict(m0, train.inputs);
    const VectorXd f0_test = predict(m0, test.inputs);

    TrainOptions opt;
    opt.learning_rate = 1.0;
    opt.batch_size = 50;
    opt.epoch_cap = 30000;
    opt.check_every = 100;
    opt.loss_threshold = 1e-6;
    RngStream shuffle_rng(606, make_stream_id(StreamPurpose::kShuffle));
    const TrainResult r = sgd_train(m0, train, opt, shuffle_rng);
    if (r.report.stop_reason != StopReason::kLossThreshold)
        return {false, fmt("training stopped by %s at loss %.3e", to_string(r.report.stop_reason).c_str(),
                           r.report.final_train_loss)};

    const VectorXd moved = predict(r.model, test.inputs) - f0_test;
    const NtkModel kernel = ntk_fit(train.inputs, train.labels - f0_train, {1, 0.1, d});
    const VectorXd linear = ntk_predict_batch(kernel, test.inputs);
    const double err = (moved - linear).norm() / linear.norm();
    return {err <= 0.10, fmt("%d epochs, relative RMSE %.4f (<= 0.10)", r.report.epochs_run, err)};
}

Outcome width_solver() {
    auto enumerate = [](std::int64_t p, std::int64_t d, std::int64_t depth, std::int64_t h_max) {
        std::int64_t best = 1, gap = std::numeric_limits<std::int64_t>::max();
        for (std::int64_t h = 1; h <= h_max; ++h) {
            const std::int64_t g = std::abs(d * h + (depth - 1) * h * h - p);
            if (g < gap) {
                gap = g;
                best = h;
            }
        }
        return static_cast<int>(best);
    };
    const int h1 = width_for_depth(1'000'000, 500, 1), h5 = width_for_depth(1'000'000, 500, 5);
    bool pass = h1 == 2000 && h5 == 441;
    int mismatches = 0;
    for (std::int64_t p : {1'000'000LL, 20'000LL, 123'457LL})
        for (int d : {10, 30, 500})
            for (int depth = 1; depth <= 6; ++depth)
                if (width_for_depth(p, d, depth) != enumerate(p, d, depth, p / d + 1)) ++mismatches;
    pass = pass && h1 == enumerate(1'000'000, 500, 1, 5000) && h5 == enumerate(1'000'000, 500, 5, 5000) && mismatches == 0;
    return {pass, fmt("h(L=1) = %d, h(L=5) = %d, %d enumeration mismatches", h1, h5, mismatches)};
}

SweepConfig desk_config(Scope scope, Task task, double noise) {
    SweepConfig c;
    c.target = monomial2(scope, 30);
    c.target.task = task;
    c.target.noise_eps = noise;
    c.n_train = 4000;
    c.n_test = 10000;
    c.budget = 20000;
    c.depths = {1, 2, 3};
    c.seeds = {1, 2, 3};
    c.lr_search = {0.01, 0.3, 2, 1};
    c.folds = 3;
    c.epoch_cap = 1000;
    c.cv_epoch_cap = 200;
    c.workers = workers_from_env(1);
    return c;
}

std::map<int, double> mean_by_depth(const std::vector<RunRecord>& recs) {
    std::map<int, std::pair<double, int>> acc;
    for (const RunRecord& r : recs) {
        if (r.kind != "sgd") continue;
        acc[r.depth].first += r.test_metric;
        acc[r.depth].second += 1;
    }
    std::map<int, double> out;
    for (const auto& [depth, s] : acc) out[depth] = s.first / s.second;
    return out;
}

std::string describe(const char* label, const std::map<int, double>& m) {
    return fmt("%s L1 %.4g L2 %.4g L3 %.4g", label, m.at(1), m.at(2), m.at(3));
}

// deep_wins: min over L in {2,3} below L = 1 (strictly when `strict`).
bool ordering(const std::map<int, double>& m, bool deep_wins, bool strict) {
    const double deep = std::min(m.at(2), m.at(3));
    if (deep_wins) return strict ? deep < m.at(1) : deep <= m.at(1);
    return strict ? m.at(1) < deep : m.at(1) <= deep;
}

Outcome depth_locality(Task task, bool strict) {
    const auto local = mean_by_depth(depth_sweep(desk_config(Scope::kLocal, task, 0.0)));
    const auto global = mean_by_depth(depth_sweep(desk_config(Scope::kGlobal, task, 0.0)));
    const bool pass = ordering(local, true, strict) && ordering(global, false, strict);
    return {pass, describe("local", local) + "; " + describe("global", global)};
}

Outcome noise_robustness() {
    const auto local = mean_by_depth(depth_sweep(desk_config(Scope::kLocal, Task::kRegression, 0.3)));
    return {ordering(local, true, true), describe("local eps=0.3", local)};
}

Outcome target_suite() {
    RngStream rng(1111, 1);
    int failures = 0;
    std::vector<std::string> failed;
    auto check = [&](bool ok, const char* name) {
        if (!ok) {
            ++failures;
            failed.emplace_back(name);
        }
    };

    // Locality: coordinates outside the index set never change a local target.
    const TargetSpec local3{GFunction::monomial(3), Scope::kLocal, 12, {1, 4, 7}};
    bool locality = true;
    for (int i = 0; i < 200; ++i) {
        VectorXd x = gaussian_vector(rng, 12);
        const double before = target_eval(local3, x);
        for (int j : {0, 2, 3, 5, 6, 8, 9, 10, 11}) x(j) = rng.gaussian() * 10.0;
        locality = locality && target_eval(local3, x) == before;
    }
    check(locality, "locality");

    // Cyclic shifts leave global targets unchanged.
    TargetSpec global = monomial2(Scope::kGlobal, 9);
    global.indices = {0, 3};
    double shift_err = 0.0;
    for (int i = 0; i < 200; ++i) {
        const VectorXd x = gaussian_vector(rng, 9);
        VectorXd y(9);
        const int m = 1 + i % 8;
        for (int j = 0; j < 9; ++j) y((j + m) % 9) = x(j);
        shift_err = std::max(shift_err, std::abs(target_eval(global, x) - target_eval(global, y)));
    }
    check(shift_err <= 1e-12, "shift invariance");

    // f(c x) = c^k f(x) for monomials.
    double scale_err = 0.0;
    for (int k = 1; k <= 4; ++k) {
        TargetSpec t = monomial2(Scope::kLocal, 6);
        t.g = GFunction::monomial(k);
        t.indices = default_indices(k);
        TargetSpec g = t;
        g.scope = Scope::kGlobal;
        for (int i = 0; i < 50; ++i) {
            const VectorXd x = gaussian_vector(rng, 6);
            const double c = rng.uniform(-3.0, 3.0);
            for (const TargetSpec* s : {&t, &g}) {
                const double lhs = target_eval(*s, VectorXd(c * x)), rhs = std::pow(c, k) * target_eval(*s, x);
                scale_err = std::max(scale_err, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
            }
        }
    }
    check(scale_err <= 1e-12, "scaling law");

    // Unit label variance for monomials with distinct indices, local and global.
    for (Scope scope : {Scope::kLocal, Scope::kGlobal}) {
        const Dataset data = make_dataset(monomial2(scope, 20), 200000, 1112, make_stream_id(StreamPurpose::kTrainData));
        const double mean = data.labels.mean();
        const double var = (data.labels.array() - mean).square().sum() / (data.labels.size() - 1.0);
        const double se = std::sqrt(8.0 / data.labels.size());  // Var(x^2 y^2) = 8 for a product of two
        check(std::abs(var - 1.0) <= 4 * se, scope == Scope::kLocal ? "local variance" : "global variance");
    }

    // Zero-mean g for the non-monomial examples.
    RngStream mean_rng(1113, make_stream_id(StreamPurpose::kGMean));
    check(!estimate_g_mean(GFunction::sin_linear(), 1000000, mean_rng).violates_zero_mean(), "sin_linear mean");
    check(!estimate_g_mean(GFunction::tanh_sin(), 1000000, mean_rng).violates_zero_mean(), "tanh_sin mean");

    std::string detail = failures == 0 ? "all 7 checks pass" : "failed:";
    for (const auto& f : failed) detail += " " + f;
    return {failures == 0, detail};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "dlb_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream cfg(root / "config.json");
        cfg << R"({"target": {"d": 30, "k": 2}, "n_train": 400, "n_test": 2000, "budget": 2000,
                  "depths": [1, 2, 3], "lr_search": {"grid_lo": 0.01, "grid_hi": 0.3, "points_per_decade": 2,
                  "refine_rounds": 1}, "folds": 3, "epoch_cap": 200, "seeds": [1, 2, 3], "ntk_baseline": true})";
    }
    std::ostringstream out, err;
    const std::string cfg = (root / "config.json").string();
    const int a = run_command({"dlb", "sweep", "--config", cfg, "--out", (root / "a").string()}, out, err);
    const int b = run_command({"dlb", "sweep", "--config", cfg, "--out", (root / "b").string()}, out, err);
    if (a != 0 || b != 0) return {false, "sweep failed: " + err.str()};
    const bool csv = slurp(root / "a" / "results.csv") == slurp(root / "b" / "results.csv");
    const bool manifest = slurp(root / "a" / "manifest.json") == slurp(root / "b" / "manifest.json");
    const auto rows = read_results((root / "a" / "results.csv").string());
    return {csv && manifest && rows.size() == 18,
            fmt("%zu rows; CSV %s, manifest %s", rows.size(), csv ? "identical" : "differs",
                manifest ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<int, std::function<Outcome()>> criteria{
        {1, mc_vs_analytic},
        {2, bias_free_equivalence},
        {3, diagonal_closed_form},
        {4, gradient_check},
        {5, kernel_interpolation},
        {6, lazy_regime},
        {7, width_solver},
        {8, [] { return depth_locality(Task::kRegression, true); }},
        {9, [] { return depth_locality(Task::kClassification, false); }},
        {10, noise_robustness},
        {11, target_suite},
        {12, cli_determinism},
    };

    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
    if (selected.empty())
        for (const auto& [n, fn] : criteria) selected.push_back(n);

    int failures = 0;
    for (int n : selected) {
        const auto it = criteria.find(n);
        if (it == criteria.end()) {
            std::printf("Criterion %d: FAIL unknown criterion\n", n);
            ++failures;
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = it->second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("Criterion %d: %s %s [%.1f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
