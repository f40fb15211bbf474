#include <doctest.h>

#include "dlb/errors.hpp"
#include "dlb/network.hpp"
#include "dlb/rng.hpp"
#include "test_util.hpp"

using namespace dlb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int enumerate_width(std::int64_t p, std::int64_t d, std::int64_t depth, std::int64_t h_max) {
    std::int64_t best = 1;
    std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
    for (std::int64_t h = 1; h <= h_max; ++h) {
        const std::int64_t gap = std::abs(d * h + (depth - 1) * h * h - p);
        if (gap < best_gap) {
            best_gap = gap;
            best = h;
        }
    }
    return static_cast<int>(best);
}

MlpModel make_model(int d, int depth, int width, InitKind kind, std::uint64_t seed, double beta = 0.1) {
    RngStream rng(seed, make_stream_id(StreamPurpose::kInit));
    return init(Architecture{d, depth, width, kind, beta, false}, rng);
}

// Effective pre-activations of every hidden unit, recomputed outside the library.
std::vector<VectorXd> preactivations(const MlpModel& m, const VectorXd& x) {
    std::vector<VectorXd> out;
    VectorXd z = x;
    for (int l = 0; l < m.arch.depth; ++l) {
        const auto L = static_cast<std::size_t>(l);
        VectorXd a = m.weight_scale[L] * (m.params.weights[L] * z) + m.bias_scale * m.params.biases[L];
        out.push_back(a);
        z = a.cwiseMax(0.0);
    }
    return out;
}

bool kink_safe(const MlpModel& m, const MatrixXd& batch, double margin) {
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
        for (const VectorXd& a : preactivations(m, batch.row(i).transpose()))
            if (a.cwiseAbs().minCoeff() <= margin) return false;
    return true;
}

// Central differences of the batch loss over every trainable parameter.
std::vector<double> fd_gradient(const MlpModel& m, const MatrixXd& x, const VectorXd& y, LossKind kind, double step) {
    const bool ob = m.arch.has_output_bias();
    const std::vector<double> theta = m.params.flatten(ob);
    std::vector<double> g(theta.size());
    MlpModel probe = m;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        std::vector<double> t = theta;
        t[i] = theta[i] + step;
        probe.params.assign(t, ob);
        const double up = loss(probe, x, y, kind);
        t[i] = theta[i] - step;
        probe.params.assign(t, ob);
        const double down = loss(probe, x, y, kind);
        g[i] = (up - down) / (2 * step);
    }
    return g;
}

double vec_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += std::max(a[i] * a[i], b[i] * b[i]);
    }
    return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// L = 1, h = 1, glorot scales: f(x) = w2 relu(w1 . x + b).
MlpModel unit_model(int d, const VectorXd& w1, double b, double w2) {
    MlpModel m = make_model(d, 1, 1, InitKind::kGlorot, 1);
    m.params.weights[0] = w1.transpose();
    m.params.biases[0] = VectorXd::Constant(1, b);
    m.params.weights[1] = MatrixXd::Constant(1, 1, w2);
    return m;
}

Dataset dataset_from(const MatrixXd& x, const VectorXd& y) {
    Dataset ds;
    ds.inputs = x;
    ds.labels = y;
    ds.clean_targets = y;
    ds.spec.d = static_cast<int>(x.cols());
    return ds;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("width_for_depth examples and enumeration oracle") {
    CHECK(width_for_depth(1000000, 500, 1) == 2000);
    CHECK(width_for_depth(1000000, 500, 5) == 441);
    CHECK(width_for_depth(100000000, 1000, 2) == 9512);
    CHECK(enumerate_width(1000000, 500, 5, 5000) == 441);
    CHECK(enumerate_width(100000000, 1000, 2, 20000) == 9512);
    for (int depth = 1; depth <= 6; ++depth)
        for (std::int64_t p : {2000, 20000, 123457, 1000000})
            for (int d : {3, 30, 500})
                if (p > d) CHECK(width_for_depth(p, d, depth) == enumerate_width(p, d, depth, p / d + 1));
}

TEST_CASE("width is non-increasing in depth at fixed budget") {
    for (std::int64_t p : {20000, 1000000})
        for (int d : {10, 30, 500}) {
            int prev = width_for_depth(p, d, 1);
            for (int depth = 2; depth <= 8; ++depth) {
                const int h = width_for_depth(p, d, depth);
                CHECK(h <= prev);
                prev = h;
            }
        }
}

TEST_CASE("parameter count matches constructed models") {
    for (InitKind kind : {InitKind::kGlorot, InitKind::kNtk})
        for (int depth = 1; depth <= 4; ++depth) {
            const MlpModel m = make_model(7, depth, 5, kind, 3);
            CHECK(m.params.size(m.arch.has_output_bias()) == parameter_count(m.arch));
            CHECK(static_cast<std::int64_t>(m.params.flatten(m.arch.has_output_bias()).size()) ==
                  parameter_count(m.arch));
        }
    CHECK(parameter_count(30, 1, 667) == 30 * 667 + 667 + 667);
    CHECK(parameter_count(30, 3, 93) == 30 * 93 + 93 + 2 * (93 * 93 + 93) + 93);
    // Single depth-1 cell: bias terms are the only gap to the budget formula.
    const int h = width_for_depth(20000, 30, 1);
    CHECK(parameter_count(30, 1, h) - budget_count(30, 1, h) == 2 * h);
}

TEST_CASE("shapes") {
    const MlpModel m = make_model(4, 3, 6, InitKind::kGlorot, 1);
    REQUIRE(m.params.weights.size() == 4);
    REQUIRE(m.params.biases.size() == 3);
    CHECK(m.params.weights[0].rows() == 6);
    CHECK(m.params.weights[0].cols() == 4);
    CHECK(m.params.weights[1].rows() == 6);
    CHECK(m.params.weights[1].cols() == 6);
    CHECK(m.params.weights[3].rows() == 1);
    CHECK(m.params.weights[3].cols() == 6);
}

TEST_CASE("glorot initialization") {
    const MlpModel m = make_model(50, 3, 100, InitKind::kGlorot, 2);
    for (const VectorXd& b : m.params.biases) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.params.output_bias == 0.0);
    const double bound = std::sqrt(6.0 / 200.0);
    CHECK(m.params.weights[1].cwiseAbs().maxCoeff() <= bound);
    CHECK(m.params.weights[1].cwiseAbs().maxCoeff() > 0.95 * bound);
    CHECK(bound == doctest::Approx(0.1732).epsilon(1e-3));
}

TEST_CASE("ntk parameterization scales") {
    MlpModel m = make_model(10, 2, 8, InitKind::kNtk, 4, 0.1);
    CHECK(m.weight_scale[0] == doctest::Approx(std::sqrt(1.0 / 10)));
    CHECK(m.weight_scale[1] == doctest::Approx(std::sqrt(2.0 / 8)));
    CHECK(m.weight_scale[2] == doctest::Approx(std::sqrt(2.0 / 8)));
    CHECK(m.bias_scale == 0.1);
    for (auto& w : m.params.weights) w.setZero();
    for (auto& b : m.params.biases) b.setOnes();
    const ForwardResult r = forward(m, VectorXd::Random(10));
    CHECK(r.activations[1].isApproxToConstant(0.1, 1e-15));
}

TEST_CASE("forward examples") {
    MlpModel zero = make_model(5, 2, 4, InitKind::kGlorot, 1);
    for (auto& w : zero.params.weights) w.setZero();
    CHECK(forward(zero, VectorXd::Random(5)).output == 0.0);

    VectorXd w1 = VectorXd::Zero(3);
    w1[0] = 1.0;
    const MlpModel unit = unit_model(3, w1, 0.0, 1.0);
    CHECK(forward(unit, (VectorXd(3) << -5, 1, 1).finished()).output == 0.0);
    CHECK(forward(unit, (VectorXd(3) << 3, 1, 1).finished()).output == 3.0);
    const ForwardResult r = forward(unit, (VectorXd(3) << 3, 1, 1).finished());
    CHECK(r.activations.size() == 2);
    CHECK(r.activations[0][0] == 3.0);
}

TEST_CASE("forward rejects wrong dimensions and overflow") {
    MlpModel m = make_model(3, 1, 2, InitKind::kGlorot, 1);
    CHECK_THROWS_AS(forward(m, VectorXd::Ones(4)), DimensionMismatch);
    m.params.weights[0].setConstant(1e300);
    m.params.weights[1].setConstant(1e300);
    CHECK_THROWS_AS(forward(m, VectorXd::Constant(3, 1e10)), NonFinite);
}

TEST_CASE("predict agrees with forward row by row") {
    const MlpModel m = make_model(6, 3, 9, InitKind::kNtk, 5);
    RngStream rng(1, 1);
    const MatrixXd x = gaussian_matrix(rng, 2100, 6);
    const VectorXd p = predict(m, x);
    for (Eigen::Index i = 0; i < x.rows(); i += 97)
        CHECK(p[i] == doctest::Approx(forward(m, x.row(i).transpose()).output).epsilon(1e-12));
}

TEST_CASE("loss examples") {
    VectorXd w1 = VectorXd::Zero(2);
    w1[0] = 1.0;
    const MlpModel unit = unit_model(2, w1, 0.0, 1.0);
    const MatrixXd x = (MatrixXd(2, 2) << 1, 0, 2, 5).finished();
    CHECK(loss(unit, x, (VectorXd(2) << 1, 2).finished(), LossKind::kMse) == 0.0);
    CHECK(loss(unit, x.topRows(1) * 2, VectorXd::Constant(1, 1.0), LossKind::kMse) == 1.0);

    MlpModel zero = unit;
    zero.params.weights[1].setZero();
    CHECK(loss(zero, x, (VectorXd(2) << 1, -1).finished(), LossKind::kCrossEntropy) ==
          doctest::Approx(std::log(2.0)));

    // log(1 + e^-1000) underflows naively; the stable form returns ~0 and ~1000.
    const MlpModel big = unit_model(2, w1, 0.0, 1000.0);
    CHECK(loss(big, x.topRows(1), VectorXd::Constant(1, 1.0), LossKind::kCrossEntropy) == doctest::Approx(0.0));
    CHECK(loss(big, x.topRows(1), VectorXd::Constant(1, -1.0), LossKind::kCrossEntropy) ==
          doctest::Approx(1000.0));
}

TEST_CASE("backward examples") {
    VectorXd w1 = VectorXd::Zero(2);
    w1[0] = 1.0;
    const MlpModel unit = unit_model(2, w1, 0.5, 2.0);
    const MatrixXd x = (MatrixXd(1, 2) << 1.5, -3).finished();
    // z1 = 1.5 + 0.5 = 2, f = 4, y = 1.
    const LossAndGradient lg = backward(unit, x, VectorXd::Constant(1, 1.0), LossKind::kMse);
    CHECK(lg.loss == 9.0);
    CHECK(lg.gradient.weights[1](0, 0) == doctest::Approx(2 * (4.0 - 1.0) * 2.0));
    CHECK(lg.gradient.biases[0][0] == doctest::Approx(2 * 3.0 * 2.0));
    CHECK(lg.gradient.weights[0](0, 1) == doctest::Approx(2 * 3.0 * 2.0 * -3.0));

    const MlpModel m = make_model(4, 2, 3, InitKind::kGlorot, 8);
    RngStream rng(2, 2);
    const MatrixXd xs = gaussian_matrix(rng, 5, 4);
    const LossAndGradient zero = backward(m, xs, predict(m, xs), LossKind::kMse);
    for (double g : zero.gradient.flatten(false)) CHECK(g == 0.0);
}

TEST_CASE("backprop matches central finite differences") {
    RngStream rng(3, 3);
    int checked = 0;
    for (std::uint64_t trial = 0; checked < 24 && trial < 400; ++trial) {
        const InitKind kind = trial % 2 == 0 ? InitKind::kGlorot : InitKind::kNtk;
        const LossKind lk = trial % 3 == 0 ? LossKind::kCrossEntropy : LossKind::kMse;
        MlpModel m = make_model(4, 2, 3, kind, 100 + trial);
        if (kind == InitKind::kGlorot)
            for (auto& b : m.params.biases) b = 0.1 * gaussian_vector(rng, b.size());
        const MatrixXd x = gaussian_matrix(rng, 4, 4);
        VectorXd y = gaussian_vector(rng, 4);
        if (lk == LossKind::kCrossEntropy) y = y.unaryExpr([](double v) { return v >= 0 ? 1.0 : -1.0; });
        if (!kink_safe(m, x, 1e-3)) continue;
        const auto analytic = backward(m, x, y, lk).gradient.flatten(m.arch.has_output_bias());
        CHECK(vec_rel_err(analytic, fd_gradient(m, x, y, lk, 1e-5)) <= 1e-4);
        ++checked;
    }
    CHECK(checked >= 20);
}

TEST_CASE("centered models vanish at initialization and keep exact gradients") {
    RngStream rng(9, 9);
    Architecture arch{5, 2, 6, InitKind::kNtk, 0.1, true};
    const MlpModel m = init(arch, rng);
    const MatrixXd x = gaussian_matrix(rng, 6, 5);
    CHECK(predict(m, x).cwiseAbs().maxCoeff() == 0.0);
    MlpModel moved = m;
    moved.params.axpy(0.01, m.params);
    const VectorXd y = gaussian_vector(rng, 6);
    if (kink_safe(moved, x, 1e-3)) {
        const auto analytic = backward(moved, x, y, LossKind::kMse).gradient.flatten(true);
        CHECK(vec_rel_err(analytic, fd_gradient(moved, x, y, LossKind::kMse, 1e-5)) <= 1e-4);
    }
}

TEST_CASE("output_gradient matches finite differences of the output") {
    const MlpModel m = make_model(3, 2, 4, InitKind::kNtk, 12);
    const VectorXd x = (VectorXd(3) << 0.3, -1.2, 0.8).finished();
    REQUIRE(kink_safe(m, x.transpose(), 1e-3));
    const auto g = output_gradient(m, x).flatten(true);
    const auto theta = m.params.flatten(true);
    MlpModel probe = m;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        auto t = theta;
        t[i] += 1e-6;
        probe.params.assign(t, true);
        const double up = forward(probe, x).output;
        t[i] -= 2e-6;
        probe.params.assign(t, true);
        const double down = forward(probe, x).output;
        CHECK(g[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-5));
    }
}

TEST_CASE("zero-bias networks are positively homogeneous") {
    RngStream rng(4, 4);
    for (int depth = 1; depth <= 4; ++depth) {
        const MlpModel m = make_model(6, depth, 7, InitKind::kGlorot, 20 + static_cast<std::uint64_t>(depth));
        for (int trial = 0; trial < 10; ++trial) {
            const VectorXd x = gaussian_vector(rng, 6);
            const double a = rng.uniform(0.1, 10.0);
            CHECK(dlb::test::rel_err(forward(m, a * x).output, a * forward(m, x).output) <= 1e-10);
        }
    }
}

TEST_CASE("predict_sign tie rule") {
    VectorXd w1 = VectorXd::Zero(2);
    w1[0] = 1.0;
    const VectorXd x = (VectorXd(2) << 1, 0).finished();
    CHECK(predict_sign(unit_model(2, w1, 0.0, 3.0), x) == 1.0);
    CHECK(predict_sign(unit_model(2, w1, 0.0, -0.01), x) == -1.0);
    CHECK(predict_sign(unit_model(2, w1, 0.0, 0.0), x) == 1.0);
}

TEST_CASE("sgd with zero learning rate leaves parameters unchanged") {
    const MlpModel m = make_model(3, 2, 4, InitKind::kGlorot, 1);
    RngStream rng(1, 1);
    const MatrixXd x = gaussian_matrix(rng, 20, 3);
    const Dataset ds = dataset_from(x, gaussian_vector(rng, 20));
    TrainOptions opt;
    opt.learning_rate = 0.0;
    opt.batch_size = 5;
    opt.epoch_cap = 60;
    RngStream shuffle(1, 2);
    const TrainResult r = sgd_train(m, ds, opt, shuffle);
    CHECK(r.model.params.flatten(false) == m.params.flatten(false));
    CHECK(r.report.stop_reason == StopReason::kEpochCap);
    CHECK(r.report.epochs_run == 60);
    REQUIRE(r.report.loss_history.size() == 2);
    CHECK(r.report.loss_history[0].first == 50);
    CHECK(r.report.loss_history[1].first == 60);
}

TEST_CASE("single sgd step matches a hand computation") {
    // d = 1, L = 1, h = 1: f = w2 relu(w1 x + b). One sample, B = 1, one epoch.
    VectorXd w1 = VectorXd::Constant(1, 0.5);
    const MlpModel m = unit_model(1, w1, 0.25, 2.0);
    const Dataset ds = dataset_from(MatrixXd::Constant(1, 1, 3.0), VectorXd::Constant(1, 1.0));
    TrainOptions opt;
    opt.learning_rate = 0.01;
    opt.batch_size = 1;
    opt.epoch_cap = 1;
    opt.check_every = 1;
    RngStream rng(1, 1);
    const TrainResult r = sgd_train(m, ds, opt, rng);
    // z = 1.75, f = 3.5, r = 2(f - y) = 5.
    const double z = 1.75, res = 5.0;
    CHECK(r.model.params.weights[1](0, 0) == doctest::Approx(2.0 - 0.01 * res * z));
    CHECK(r.model.params.weights[0](0, 0) == doctest::Approx(0.5 - 0.01 * res * 2.0 * 3.0));
    CHECK(r.model.params.biases[0][0] == doctest::Approx(0.25 - 0.01 * res * 2.0));
}

TEST_CASE("interpolated data stops at the first check") {
    const MlpModel m = make_model(3, 1, 5, InitKind::kGlorot, 2);
    RngStream rng(3, 3);
    const MatrixXd x = gaussian_matrix(rng, 40, 3);
    const Dataset ds = dataset_from(x, predict(m, x));
    TrainOptions opt;
    opt.learning_rate = 0.1;
    opt.batch_size = 10;
    RngStream shuffle(3, 4);
    const TrainResult r = sgd_train(m, ds, opt, shuffle);
    CHECK(r.report.stop_reason == StopReason::kLossThreshold);
    CHECK(r.report.epochs_run == 50);
}

TEST_CASE("full-batch training is deterministic") {
    const MlpModel m = make_model(4, 2, 6, InitKind::kGlorot, 3);
    RngStream rng(5, 5);
    const MatrixXd x = gaussian_matrix(rng, 30, 4);
    const Dataset ds = dataset_from(x, gaussian_vector(rng, 30));
    TrainOptions opt;
    opt.learning_rate = 0.05;
    opt.batch_size = 30;
    opt.epoch_cap = 100;
    RngStream a(7, 7), b(7, 7);
    CHECK(sgd_train(m, ds, opt, a).model.params.flatten(false) == sgd_train(m, ds, opt, b).model.params.flatten(false));
}

TEST_CASE("divergence is recorded, not thrown") {
    const MlpModel m = make_model(4, 3, 10, InitKind::kGlorot, 3);
    RngStream rng(6, 6);
    const MatrixXd x = gaussian_matrix(rng, 50, 4);
    const Dataset ds = dataset_from(x, gaussian_vector(rng, 50));
    TrainOptions opt;
    opt.learning_rate = 1e6;
    opt.batch_size = 10;
    RngStream shuffle(1, 1);
    const TrainResult r = sgd_train(m, ds, opt, shuffle);
    CHECK(r.report.stop_reason == StopReason::kDiverged);
    CHECK_FALSE(r.report.loss_history.empty());
}

TEST_CASE("full-batch training loss at checks mostly decreases below the divergence edge") {
    const MlpModel m = make_model(5, 2, 20, InitKind::kGlorot, 4);
    RngStream rng(8, 8);
    const MatrixXd x = gaussian_matrix(rng, 200, 5);
    VectorXd y(200);
    for (int i = 0; i < 200; ++i) y[i] = x(i, 0) * x(i, 1);
    const Dataset ds = dataset_from(x, y);
    TrainOptions opt;
    opt.learning_rate = 0.02;
    opt.batch_size = 200;
    opt.epoch_cap = 2000;
    opt.check_every = 50;
    opt.loss_threshold = 0.0;
    RngStream shuffle(8, 9);
    const TrainReport rep = sgd_train(m, ds, opt, shuffle).report;
    int down = 0;
    for (std::size_t i = 1; i < rep.loss_history.size(); ++i)
        if (rep.loss_history[i].second <= rep.loss_history[i - 1].second) ++down;
    CHECK(down >= 0.9 * static_cast<double>(rep.loss_history.size() - 1));
}

TEST_CASE("classification stops at full accuracy") {
    const MlpModel m = make_model(2, 1, 16, InitKind::kGlorot, 5);
    RngStream rng(9, 9);
    const MatrixXd x = gaussian_matrix(rng, 40, 2);
    VectorXd y(40);
    for (int i = 0; i < 40; ++i) y[i] = x(i, 0) > 0 ? 1.0 : -1.0;
    TrainOptions opt;
    opt.learning_rate = 0.5;
    opt.batch_size = 10;
    opt.loss = LossKind::kCrossEntropy;
    RngStream shuffle(9, 10);
    const TrainResult r = sgd_train(m, dataset_from(x, y), opt, shuffle);
    CHECK(r.report.stop_reason == StopReason::kAccuracyThreshold);
    CHECK(r.report.final_train_accuracy == 1.0);
}

TEST_CASE("checkpoints round-trip") {
    for (bool centered : {false, true}) {
        RngStream rng(1, 1);
        const MlpModel m = init(Architecture{4, 2, 5, InitKind::kNtk, 0.2, centered}, rng);
        const std::string path = dlb::test::temp_path(centered ? "model_c.bin" : "model.bin");
        save_model(m, path);
        const MlpModel back = load_model(path);
        CHECK(back.arch.depth == 2);
        CHECK(back.arch.beta == 0.2);
        CHECK(back.arch.centered == centered);
        CHECK(back.params.flatten(true) == m.params.flatten(true));
        const VectorXd x = VectorXd::LinSpaced(4, -1, 1);
        CHECK(forward(back, x).output == forward(m, x).output);
    }
    CHECK_THROWS(load_model(dlb::test::temp_path("missing.bin")));
}

TEST_CASE("stop reasons round-trip through strings") {
    for (StopReason s : {StopReason::kLossThreshold, StopReason::kAccuracyThreshold, StopReason::kEpochCap,
                         StopReason::kDiverged})
        CHECK(parse_stop_reason(to_string(s)) == s);
    CHECK(to_string(StopReason::kLossThreshold) == "loss_threshold");
}

}  // TEST_SUITE
