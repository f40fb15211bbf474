#include "dlb/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dlb/container.hpp"
#include "dlb/errors.hpp"
#include "dlb/network.hpp"

namespace dlb {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDegenerateDet = 1e-30;

void check_pair(Index nx, Index ny, int d) {
    if (nx != d || ny != d)
        throw DimensionMismatch("ntk: inputs have " + std::to_string(nx) + " and " + std::to_string(ny) +
                                " entries, expected " + std::to_string(d));
}

struct LevelUpdate {
    double sigma;
    double sigma_dot;
};

// One ReLU level: given the 2x2 covariance [[a, c], [c, b]] of the previous level.
LevelUpdate relu_level(double a, double b, double c, double beta2) {
    const double det = a * b - c * c;
    double root = 0.0;
    double angle;  // arctan(c / sqrt(det)), with c / 0+ -> sign(c) pi/2
    if (det <= kDegenerateDet) {
        angle = c > 0.0 ? kPi / 2 : (c < 0.0 ? -kPi / 2 : 0.0);
    } else {
        root = std::sqrt(det);
        angle = std::atan(c / root);
    }
    return {root / kPi + (c / kPi) * (kPi / 2 + angle) + beta2, 0.5 * (1.0 + (2.0 / kPi) * angle)};
}

}  // namespace

void validate(const KernelSpec& spec) {
    if (spec.depth < 1) throw InvalidArgument("kernel: depth must be >= 1");
    if (!(spec.beta >= 0.0)) throw InvalidArgument("kernel: beta must be >= 0");
    if (spec.d < 1) throw InvalidArgument("kernel: d must be >= 1");
}

RecursionTrace sigma_recursion_from_scalars(double cross, double self_x, double self_y, int depth, double beta) {
    const double beta2 = beta * beta;
    const auto levels = static_cast<std::size_t>(depth) + 1;
    RecursionTrace t;
    t.sigma.resize(levels);
    t.sigma_xx.resize(levels);
    t.sigma_yy.resize(levels);
    t.sigma_dot.assign(levels + 1, 1.0);
    t.sigma[0] = cross;
    t.sigma_xx[0] = self_x;
    t.sigma_yy[0] = self_y;
    for (std::size_t l = 1; l < levels; ++l) {
        const double a = t.sigma_xx[l - 1];
        const double b = t.sigma_yy[l - 1];
        const LevelUpdate u = relu_level(a, b, t.sigma[l - 1], beta2);
        t.sigma[l] = u.sigma;
        t.sigma_dot[l] = u.sigma_dot;
        t.sigma_xx[l] = relu_level(a, a, a, beta2).sigma;
        t.sigma_yy[l] = relu_level(b, b, b, beta2).sigma;
    }
    return t;
}

RecursionTrace sigma_recursion(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& y,
                               const KernelSpec& spec) {
    validate(spec);
    check_pair(x.size(), y.size(), spec.d);
    const double beta2 = spec.beta * spec.beta;
    const double inv_d = 1.0 / spec.d;
    return sigma_recursion_from_scalars(x.dot(y) * inv_d + beta2, x.squaredNorm() * inv_d + beta2,
                                        y.squaredNorm() * inv_d + beta2, spec.depth, spec.beta);
}

double ntk_from_trace(const RecursionTrace& t) {
    const std::size_t top = t.sigma.size();  // index of the output level L + 1
    double product = 1.0;
    double theta = 0.0;
    for (std::size_t l = top; l >= 1; --l) {
        product *= t.sigma_dot[l];
        theta += t.sigma[l - 1] * product;
    }
    return theta;
}

namespace {

// Allocation-free evaluation via T_l = T_{l-1} SigmaDot^(l) + Sigma^(l), T_0 = Sigma^(0),
// which expands to the same sum as ntk_from_trace.
double kernel_from_scalars(double dot, double nx2, double ny2, const KernelSpec& spec) {
    const double beta2 = spec.beta * spec.beta;
    const double inv_d = 1.0 / spec.d;
    double c = dot * inv_d + beta2;
    double a = nx2 * inv_d + beta2;
    double b = ny2 * inv_d + beta2;
    double theta = c;
    for (int l = 1; l <= spec.depth; ++l) {
        const LevelUpdate u = relu_level(a, b, c, beta2);
        a = relu_level(a, a, a, beta2).sigma;
        b = relu_level(b, b, b, beta2).sigma;
        c = u.sigma;
        theta = theta * u.sigma_dot + c;
    }
    return theta;
}

}  // namespace

double ntk_kernel(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& y, const KernelSpec& spec) {
    validate(spec);
    check_pair(x.size(), y.size(), spec.d);
    return kernel_from_scalars(x.dot(y), x.squaredNorm(), y.squaredNorm(), spec);
}

double ntk_kernel_bias_free(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& y, int depth) {
    if (depth < 1) throw InvalidArgument("kernel: depth must be >= 1");
    if (x.size() != y.size()) throw DimensionMismatch("ntk_kernel_bias_free: input sizes differ");
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx == 0.0 || ny == 0.0) throw ZeroVector("ntk_kernel_bias_free: zero input vector");
    const double scale = nx * ny / static_cast<double>(x.size());

    // Track the versine v = 1 - cos t so that nearly parallel inputs keep full precision.
    const auto levels = static_cast<std::size_t>(depth) + 1;
    std::vector<double> sigma(levels), sigma_dot(levels + 1, 1.0);
    double v = std::min(2.0, 0.5 * (x / nx - y / ny).squaredNorm());
    sigma[0] = scale * (1.0 - v);
    for (std::size_t l = 1; l < levels; ++l) {
        const double t = 2.0 * std::asin(std::sqrt(v / 2.0));
        const double t2 = t * t;
        // t cos t - sin t, by its Taylor series near 0 where the direct form cancels.
        const double odd = t < 1e-2 ? -t * t2 * (1.0 / 3.0 - t2 * (1.0 / 30.0 - t2 / 840.0))
                                    : t * std::cos(t) - std::sin(t);
        v = std::clamp((kPi * v + odd) / kPi, 0.0, 2.0);
        sigma[l] = scale * (1.0 - v);
        sigma_dot[l] = 1.0 - t / kPi;
    }
    double product = 1.0;
    double theta = 0.0;
    for (std::size_t l = levels; l >= 1; --l) {
        product *= sigma_dot[l];
        theta += sigma[l - 1] * product;
    }
    return theta;
}

MatrixXd gram(const Eigen::Ref<const MatrixXd>& inputs, const KernelSpec& spec) {
    validate(spec);
    if (inputs.cols() != spec.d) throw DimensionMismatch("gram: inputs do not have d columns");
    const Index n = inputs.rows();
    const MatrixXd xt = inputs.transpose();
    VectorXd norms(n);
    for (Index i = 0; i < n; ++i) norms[i] = xt.col(i).squaredNorm();
    MatrixXd k(n, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i <= j; ++i) {
            k(i, j) = kernel_from_scalars(xt.col(i).dot(xt.col(j)), norms[i], norms[j], spec);
            k(j, i) = k(i, j);
        }
    }
    return k;
}

MatrixXd cross_kernel(const Eigen::Ref<const MatrixXd>& a, const Eigen::Ref<const MatrixXd>& b, const KernelSpec& spec) {
    validate(spec);
    if (a.cols() != spec.d || b.cols() != spec.d) throw DimensionMismatch("cross_kernel: inputs do not have d columns");
    const MatrixXd at = a.transpose();
    const MatrixXd bt = b.transpose();
    VectorXd na(a.rows()), nb(b.rows());
    for (Index i = 0; i < a.rows(); ++i) na[i] = at.col(i).squaredNorm();
    for (Index j = 0; j < b.rows(); ++j) nb[j] = bt.col(j).squaredNorm();
    MatrixXd k(a.rows(), b.rows());
    for (Index j = 0; j < b.rows(); ++j)
        for (Index i = 0; i < a.rows(); ++i) k(i, j) = kernel_from_scalars(at.col(i).dot(bt.col(j)), na[i], nb[j], spec);
    return k;
}

NtkModel ntk_fit(const Eigen::Ref<const MatrixXd>& inputs, const Eigen::Ref<const VectorXd>& targets,
                 const KernelSpec& spec, double base_jitter) {
    if (inputs.rows() < 1) throw InvalidArgument("ntk_fit: need at least one sample");
    if (targets.size() != inputs.rows()) throw DimensionMismatch("ntk_fit: targets do not match inputs");
    const MatrixXd k = gram(inputs, spec);
    const double jitter = base_jitter < 0.0 ? default_base_jitter(k) : base_jitter;
    SpdSolution sol = spd_solve(k, targets, jitter);
    return NtkModel{spec, inputs, std::move(sol.x), sol.jitter_used};
}

NtkModel ntk_fit(const Dataset& data, const KernelSpec& spec, double base_jitter) {
    return ntk_fit(data.inputs, data.labels, spec, base_jitter);
}

double ntk_predict(const NtkModel& model, const Eigen::Ref<const VectorXd>& x) {
    if (x.size() != model.spec.d) throw DimensionMismatch("ntk_predict: input has the wrong dimension");
    const double nx = x.squaredNorm();
    double s = 0.0;
    for (Index i = 0; i < model.inputs.rows(); ++i) {
        const auto row = model.inputs.row(i);
        s += kernel_from_scalars(row.dot(x.transpose()), row.squaredNorm(), nx, model.spec) * model.alpha[i];
    }
    return s;
}

VectorXd ntk_predict_batch(const NtkModel& model, const Eigen::Ref<const MatrixXd>& inputs) {
    constexpr Index kChunk = 512;
    VectorXd out(inputs.rows());
    for (Index start = 0; start < inputs.rows(); start += kChunk) {
        const Index n = std::min(kChunk, inputs.rows() - start);
        out.segment(start, n) = cross_kernel(inputs.middleRows(start, n), model.inputs, model.spec) * model.alpha;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle

std::vector<McEstimate> mc_ntk_estimate_pairs(const Eigen::Ref<const MatrixXd>& xs, const Eigen::Ref<const MatrixXd>& ys,
                                              const KernelSpec& spec, int width, int n_init, RngStream& rng) {
    validate(spec);
    if (width < 64) throw InvalidArgument("mc_ntk_estimate: width must be >= 64");
    if (n_init < 8) throw InvalidArgument("mc_ntk_estimate: n_init must be >= 8");
    if (xs.rows() != ys.rows() || xs.cols() != spec.d || ys.cols() != spec.d)
        throw DimensionMismatch("mc_ntk_estimate: pair matrices must both be P x d");
    const Index pairs = xs.rows();
    const auto depth = static_cast<std::size_t>(spec.depth);

    // Columns 0..P-1 hold the x side, P..2P-1 the x' side.
    MatrixXd inputs(spec.d, 2 * pairs);
    inputs.leftCols(pairs) = xs.transpose();
    inputs.rightCols(pairs) = ys.transpose();

    const Architecture arch{spec.d, spec.depth, width, InitKind::kNtk, spec.beta, false};
    std::vector<double> sum(static_cast<std::size_t>(pairs), 0.0), sum_sq(static_cast<std::size_t>(pairs), 0.0);
    for (int trial = 0; trial < n_init; ++trial) {
        const MlpModel m = init(arch, rng);
        std::vector<MatrixXd> z{inputs};
        for (std::size_t l = 0; l < depth; ++l) {
            MatrixXd a = m.weight_scale[l] * (m.params.weights[l] * z.back());
            a.colwise() += m.bias_scale * m.params.biases[l];
            z.push_back(a.cwiseMax(0.0));
        }
        const double s_out = m.weight_scale[depth];
        const double bias2 = m.bias_scale * m.bias_scale;
        // Output weights and output bias.
        VectorXd theta(pairs);
        for (Index p = 0; p < pairs; ++p)
            theta[p] = s_out * s_out * z[depth].col(p).dot(z[depth].col(pairs + p)) + bias2;
        // delta: d f / d pre-activation, one column per input.
        MatrixXd delta = (s_out * m.params.weights[depth].transpose()).replicate(1, 2 * pairs);
        for (std::size_t l = depth; l-- > 0;) {
            delta = delta.cwiseProduct((z[l + 1].array() > 0.0).cast<double>().matrix());
            const double s = m.weight_scale[l];
            for (Index p = 0; p < pairs; ++p) {
                const double dd = delta.col(p).dot(delta.col(pairs + p));
                theta[p] += s * s * dd * z[l].col(p).dot(z[l].col(pairs + p)) + bias2 * dd;
            }
            if (l > 0) delta = s * (m.params.weights[l].transpose() * delta);
        }
        for (Index p = 0; p < pairs; ++p) {
            sum[static_cast<std::size_t>(p)] += theta[p];
            sum_sq[static_cast<std::size_t>(p)] += theta[p] * theta[p];
        }
    }
    std::vector<McEstimate> out(static_cast<std::size_t>(pairs));
    const double n = n_init;
    for (std::size_t p = 0; p < out.size(); ++p) {
        const double mean = sum[p] / n;
        const double var = std::max(0.0, (sum_sq[p] - n * mean * mean) / (n - 1.0));
        out[p] = {mean, std::sqrt(var / n)};
    }
    return out;
}

McEstimate mc_ntk_estimate(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& y,
                           const KernelSpec& spec, int width, int n_init, RngStream& rng) {
    return mc_ntk_estimate_pairs(x.transpose(), y.transpose(), spec, width, n_init, rng).front();
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::array<char, 4> kNtkMagic = {'D', 'L', 'B', 'K'};
constexpr std::uint32_t kNtkVersion = 1;
}  // namespace

void save_ntk(const NtkModel& model, const std::string& path) {
    BinaryWriter w(path, kNtkMagic, kNtkVersion);
    w.u64(static_cast<std::uint64_t>(model.spec.depth));
    w.f64(model.spec.beta);
    w.u64(static_cast<std::uint64_t>(model.spec.d));
    w.f64(model.jitter_used);
    w.matrix(model.inputs);
    w.matrix(model.alpha);
    w.close();
}

NtkModel load_ntk(const std::string& path) {
    BinaryReader r(path, kNtkMagic, kNtkVersion);
    NtkModel m;
    m.spec.depth = static_cast<int>(r.u64());
    m.spec.beta = r.f64();
    m.spec.d = static_cast<int>(r.u64());
    validate(m.spec);
    m.jitter_used = r.f64();
    m.inputs = r.matrix();
    const MatrixXd alpha = r.matrix();
    if (m.inputs.cols() != m.spec.d || alpha.cols() != 1 || alpha.rows() != m.inputs.rows())
        throw IoError("ntk model: shapes do not match header");
    m.alpha = alpha.col(0);
    r.expect_end();
    return m;
}

}  // namespace dlb
