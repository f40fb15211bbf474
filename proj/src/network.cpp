#include "dlb/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dlb/container.hpp"
#include "dlb/errors.hpp"

namespace dlb {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(InitKind kind) { return kind == InitKind::kGlorot ? "glorot" : "ntk"; }

InitKind parse_init_kind(const std::string& name) {
    if (name == "glorot") return InitKind::kGlorot;
    if (name == "ntk") return InitKind::kNtk;
    throw InvalidArgument("unknown init kind '" + name + "'");
}

std::string to_string(StopReason reason) {
    switch (reason) {
        case StopReason::kLossThreshold: return "loss_threshold";
        case StopReason::kAccuracyThreshold: return "accuracy_threshold";
        case StopReason::kEpochCap: return "epoch_cap";
        case StopReason::kDiverged: return "diverged";
    }
    return "unknown";
}

StopReason parse_stop_reason(const std::string& name) {
    for (auto r : {StopReason::kLossThreshold, StopReason::kAccuracyThreshold, StopReason::kEpochCap,
                   StopReason::kDiverged})
        if (to_string(r) == name) return r;
    throw InvalidArgument("unknown stop reason '" + name + "'");
}

void validate(const Architecture& arch) {
    if (arch.d < 1) throw InvalidArgument("architecture: d must be >= 1");
    if (arch.depth < 1) throw InvalidArgument("architecture: depth must be >= 1");
    if (arch.width < 1) throw InvalidArgument("architecture: width must be >= 1");
    if (!(arch.beta >= 0.0)) throw InvalidArgument("architecture: beta must be >= 0");
    if (arch.centered && arch.init != InitKind::kNtk)
        throw InvalidArgument("architecture: only ntk-parameterized models can be centered");
}

std::int64_t budget_count(std::int64_t d, std::int64_t depth, std::int64_t width) {
    return d * width + (depth - 1) * width * width;
}

std::int64_t parameter_count(std::int64_t d, std::int64_t depth, std::int64_t width) {
    return d * width + width + (depth - 1) * (width * width + width) + width;
}

std::int64_t parameter_count(const Architecture& arch) {
    return parameter_count(arch.d, arch.depth, arch.width) + (arch.has_output_bias() ? 1 : 0);
}

int width_for_depth(std::int64_t budget, int d, int depth) {
    if (budget <= d) throw InvalidArgument("width_for_depth: budget must exceed d");
    if (depth < 1) throw InvalidArgument("width_for_depth: depth must be >= 1");
    const double p = static_cast<double>(budget);
    const double dd = static_cast<double>(d);
    const double root = depth == 1 ? p / dd
                                   : (-dd + std::sqrt(dd * dd + 4.0 * (depth - 1) * p)) / (2.0 * (depth - 1));
    const auto lo = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(root)) - 2);
    const auto hi = static_cast<std::int64_t>(std::ceil(root)) + 2;
    std::int64_t best = lo;
    std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
    for (std::int64_t h = lo; h <= hi; ++h) {
        const std::int64_t gap = std::abs(budget_count(d, depth, h) - budget);
        if (gap < best_gap) {
            best_gap = gap;
            best = h;
        }
    }
    return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::zeros_like() const {
    Parameters z;
    for (const auto& w : weights) z.weights.push_back(MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) z.biases.push_back(VectorXd::Zero(b.size()));
    return z;
}

bool Parameters::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return std::isfinite(output_bias);
}

void Parameters::axpy(double alpha, const Parameters& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) weights[l] += alpha * other.weights[l];
    for (std::size_t l = 0; l < biases.size(); ++l) biases[l] += alpha * other.biases[l];
    output_bias += alpha * other.output_bias;
}

double Parameters::dot(const Parameters& other) const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l) s += weights[l].cwiseProduct(other.weights[l]).sum();
    for (std::size_t l = 0; l < biases.size(); ++l) s += biases[l].dot(other.biases[l]);
    return s + output_bias * other.output_bias;
}

std::int64_t Parameters::size(bool with_output_bias) const {
    std::int64_t n = with_output_bias ? 1 : 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

std::vector<double> Parameters::flatten(bool with_output_bias) const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(size(with_output_bias)));
    for (std::size_t l = 0; l < weights.size(); ++l) {
        for (Index r = 0; r < weights[l].rows(); ++r)
            for (Index c = 0; c < weights[l].cols(); ++c) flat.push_back(weights[l](r, c));
        if (l < biases.size())
            for (Index i = 0; i < biases[l].size(); ++i) flat.push_back(biases[l][i]);
    }
    if (with_output_bias) flat.push_back(output_bias);
    return flat;
}

void Parameters::assign(const std::vector<double>& flat, bool with_output_bias) {
    if (static_cast<std::int64_t>(flat.size()) != size(with_output_bias))
        throw DimensionMismatch("Parameters::assign: wrong number of values");
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        for (Index r = 0; r < weights[l].rows(); ++r)
            for (Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[k++];
        if (l < biases.size())
            for (Index i = 0; i < biases[l].size(); ++i) biases[l][i] = flat[k++];
    }
    if (with_output_bias) output_bias = flat[k++];
}

// ---------------------------------------------------------------------------
// Construction

void apply_parameterization(MlpModel& model) {
    const Architecture& a = model.arch;
    model.weight_scale.assign(static_cast<std::size_t>(a.depth + 1), 1.0);
    model.bias_scale = 1.0;
    if (a.init == InitKind::kNtk) {
        // Layer-1 variance 1/d makes the first pre-activation covariance x.x'/d + beta^2.
        model.weight_scale[0] = std::sqrt(1.0 / a.d);
        for (int l = 1; l <= a.depth; ++l) model.weight_scale[static_cast<std::size_t>(l)] = std::sqrt(2.0 / a.width);
        model.bias_scale = a.beta;
    }
}

MlpModel init(const Architecture& arch, RngStream& rng) {
    validate(arch);
    MlpModel model;
    model.arch = arch;
    apply_parameterization(model);
    for (int l = 0; l <= arch.depth; ++l) {
        const int fan_in = l == 0 ? arch.d : arch.width;
        const int fan_out = l == arch.depth ? 1 : arch.width;
        MatrixXd w(fan_out, fan_in);
        if (arch.init == InitKind::kGlorot) {
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (Index r = 0; r < w.rows(); ++r)
                for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
        } else {
            w = gaussian_matrix(rng, fan_out, fan_in);
        }
        model.params.weights.push_back(std::move(w));
        if (l < arch.depth) {
            model.params.biases.push_back(arch.init == InitKind::kGlorot ? VectorXd::Zero(arch.width)
                                                                         : gaussian_vector(rng, arch.width));
        }
    }
    if (arch.has_output_bias()) model.params.output_bias = rng.gaussian();
    if (arch.centered) model.reference = model.params;
    return model;
}

// ---------------------------------------------------------------------------
// Forward / backward on column batches (d x B)

namespace {

struct BatchTrace {
    std::vector<MatrixXd> z;  // z[0] = inputs, z[l] = post-ReLU activations of hidden layer l
    VectorXd output;
};

VectorXd forward_columns(const MlpModel& m, const Parameters& p, const Eigen::Ref<const MatrixXd>& xt,
                         std::vector<MatrixXd>* keep) {
    MatrixXd z = xt;
    if (keep) keep->push_back(z);
    const auto depth = static_cast<std::size_t>(m.arch.depth);
    for (std::size_t l = 0; l < depth; ++l) {
        MatrixXd a = m.weight_scale[l] * (p.weights[l] * z);
        if (m.bias_scale != 0.0) a.colwise() += m.bias_scale * p.biases[l];
        z = a.cwiseMax(0.0);
        if (keep) keep->push_back(z);
    }
    VectorXd out = m.weight_scale[depth] * (p.weights[depth] * z).transpose();
    if (m.arch.has_output_bias()) out.array() += m.bias_scale * p.output_bias;
    return out;
}

BatchTrace forward_trace(const MlpModel& m, const Eigen::Ref<const MatrixXd>& xt) {
    BatchTrace t;
    t.output = forward_columns(m, m.params, xt, &t.z);
    if (m.reference) t.output -= forward_columns(m, *m.reference, xt, nullptr);
    if (!t.output.allFinite()) throw NonFinite("forward: non-finite network output");
    return t;
}

VectorXd outputs_columns(const MlpModel& m, const Eigen::Ref<const MatrixXd>& xt) {
    VectorXd out = forward_columns(m, m.params, xt, nullptr);
    if (m.reference) out -= forward_columns(m, *m.reference, xt, nullptr);
    if (!out.allFinite()) throw NonFinite("forward: non-finite network output");
    return out;
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double mean_loss(const VectorXd& out, const Eigen::Ref<const VectorXd>& y, LossKind kind) {
    double s = 0.0;
    if (kind == LossKind::kMse) {
        for (Index i = 0; i < out.size(); ++i) s += (out[i] - y[i]) * (out[i] - y[i]);
    } else {
        for (Index i = 0; i < out.size(); ++i) s += softplus(-y[i] * out[i]);
    }
    return s / static_cast<double>(out.size());
}

// d(mean loss)/d(output_i)
VectorXd output_sensitivity(const VectorXd& out, const Eigen::Ref<const VectorXd>& y, LossKind kind) {
    const double inv_b = 1.0 / static_cast<double>(out.size());
    VectorXd r(out.size());
    for (Index i = 0; i < out.size(); ++i) {
        r[i] = kind == LossKind::kMse ? 2.0 * (out[i] - y[i]) * inv_b : -y[i] * sigmoid(-y[i] * out[i]) * inv_b;
    }
    return r;
}

Parameters backprop(const MlpModel& m, const BatchTrace& t, const VectorXd& r) {
    const auto depth = static_cast<std::size_t>(m.arch.depth);
    Parameters g;
    g.weights.resize(depth + 1);
    g.biases.resize(depth);
    g.weights[depth] = m.weight_scale[depth] * (r.transpose() * t.z[depth].transpose());
    g.output_bias = m.arch.has_output_bias() ? m.bias_scale * r.sum() : 0.0;
    // delta = d loss / d pre-activation of the current layer, h x B
    MatrixXd delta = m.weight_scale[depth] * (m.params.weights[depth].transpose() * r.transpose());
    for (std::size_t l = depth; l-- > 0;) {
        delta = delta.cwiseProduct((t.z[l + 1].array() > 0.0).cast<double>().matrix());
        g.weights[l] = m.weight_scale[l] * (delta * t.z[l].transpose());
        g.biases[l] = m.bias_scale * delta.rowwise().sum();
        if (l > 0) delta = m.weight_scale[l] * (m.params.weights[l].transpose() * delta);
    }
    return g;
}

void check_inputs(const MlpModel& m, Index cols) {
    if (cols != m.arch.d)
        throw DimensionMismatch("network: input has " + std::to_string(cols) + " features, expected " +
                                std::to_string(m.arch.d));
}

constexpr Index kEvalChunk = 1024;

}  // namespace

ForwardResult forward(const MlpModel& model, const Eigen::Ref<const VectorXd>& x) {
    check_inputs(model, x.size());
    BatchTrace t = forward_trace(model, x);
    ForwardResult r;
    r.output = t.output[0];
    for (auto& z : t.z) r.activations.push_back(z.col(0));
    return r;
}

VectorXd predict(const MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs) {
    check_inputs(model, inputs.cols());
    VectorXd out(inputs.rows());
    for (Index start = 0; start < inputs.rows(); start += kEvalChunk) {
        const Index n = std::min(kEvalChunk, inputs.rows() - start);
        out.segment(start, n) = outputs_columns(model, inputs.middleRows(start, n).transpose());
    }
    return out;
}

double predict_sign(const MlpModel& model, const Eigen::Ref<const VectorXd>& x) {
    return forward(model, x).output >= 0.0 ? 1.0 : -1.0;
}

double loss(const MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs, const Eigen::Ref<const VectorXd>& labels,
            LossKind kind) {
    if (inputs.rows() == 0) throw InvalidArgument("loss: empty batch");
    if (labels.size() != inputs.rows()) throw DimensionMismatch("loss: labels do not match inputs");
    return mean_loss(predict(model, inputs), labels, kind);
}

LossAndGradient backward(const MlpModel& model, const Eigen::Ref<const MatrixXd>& inputs,
                         const Eigen::Ref<const VectorXd>& labels, LossKind kind) {
    if (inputs.rows() == 0) throw InvalidArgument("backward: empty batch");
    if (labels.size() != inputs.rows()) throw DimensionMismatch("backward: labels do not match inputs");
    check_inputs(model, inputs.cols());
    const BatchTrace t = forward_trace(model, inputs.transpose());
    LossAndGradient out;
    out.loss = mean_loss(t.output, labels, kind);
    out.gradient = backprop(model, t, output_sensitivity(t.output, labels, kind));
    return out;
}

Parameters output_gradient(const MlpModel& model, const Eigen::Ref<const VectorXd>& x) {
    check_inputs(model, x.size());
    const BatchTrace t = forward_trace(model, x);
    return backprop(model, t, VectorXd::Ones(1));
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

Evaluation evaluate(const MlpModel& m, const MatrixXd& xt, const VectorXd& y, LossKind kind) {
    VectorXd out(xt.cols());
    for (Index start = 0; start < xt.cols(); start += kEvalChunk) {
        const Index n = std::min(kEvalChunk, xt.cols() - start);
        out.segment(start, n) = outputs_columns(m, xt.middleCols(start, n));
    }
    Evaluation e;
    e.loss = mean_loss(out, y, kind);
    Index correct = 0;
    for (Index i = 0; i < out.size(); ++i) correct += ((out[i] >= 0.0 ? 1.0 : -1.0) == y[i]) ? 1 : 0;
    e.accuracy = static_cast<double>(correct) / static_cast<double>(out.size());
    return e;
}

}  // namespace

TrainResult sgd_train(MlpModel model, const Dataset& data, const TrainOptions& options, RngStream& rng) {
    const auto n = static_cast<Index>(data.size());
    if (options.batch_size < 1 || options.batch_size > n)
        throw InvalidArgument("sgd_train: batch size must be in [1, N]");
    if (!(options.learning_rate >= 0.0)) throw InvalidArgument("sgd_train: learning rate must be >= 0");
    if (options.epoch_cap < 1 || options.check_every < 1) throw InvalidArgument("sgd_train: caps must be >= 1");
    check_inputs(model, data.inputs.cols());

    const MatrixXd xt = data.inputs.transpose();
    const VectorXd& y = data.labels;
    const Index b = options.batch_size;
    const Index batches = n / b;
    const bool classify = options.loss == LossKind::kCrossEntropy;

    TrainReport report;
    MatrixXd xb(xt.rows(), b);
    VectorXd yb(b);
    auto diverged = [&](int epoch) {
        report.epochs_run = epoch;
        report.stop_reason = StopReason::kDiverged;
        report.final_train_loss = std::numeric_limits<double>::infinity();
        report.loss_history.emplace_back(epoch, report.final_train_loss);
        return TrainResult{std::move(model), std::move(report)};
    };

    for (int epoch = 1; epoch <= options.epoch_cap; ++epoch) {
        const std::vector<std::size_t> order = permutation(static_cast<std::size_t>(n), rng);
        try {
            for (Index k = 0; k < batches; ++k) {
                for (Index j = 0; j < b; ++j) {
                    const auto src = static_cast<Index>(order[static_cast<std::size_t>(k * b + j)]);
                    xb.col(j) = xt.col(src);
                    yb[j] = y[src];
                }
                const BatchTrace t = forward_trace(model, xb);
                const double batch_loss = mean_loss(t.output, yb, options.loss);
                if (!std::isfinite(batch_loss)) return diverged(epoch);
                const Parameters g = backprop(model, t, output_sensitivity(t.output, yb, options.loss));
                model.params.axpy(-options.learning_rate, g);
            }
        } catch (const NonFinite&) {
            return diverged(epoch);
        }
        if (epoch % options.check_every != 0 && epoch != options.epoch_cap) continue;
        if (!model.params.all_finite()) return diverged(epoch);
        Evaluation e;
        try {
            e = evaluate(model, xt, y, options.loss);
        } catch (const NonFinite&) {
            return diverged(epoch);
        }
        if (!std::isfinite(e.loss)) return diverged(epoch);
        report.epochs_run = epoch;
        report.final_train_loss = e.loss;
        report.final_train_accuracy = e.accuracy;
        report.loss_history.emplace_back(epoch, e.loss);
        if (!classify && e.loss < options.loss_threshold) {
            report.stop_reason = StopReason::kLossThreshold;
            return {std::move(model), std::move(report)};
        }
        if (classify && e.accuracy >= options.accuracy_threshold) {
            report.stop_reason = StopReason::kAccuracyThreshold;
            return {std::move(model), std::move(report)};
        }
    }
    report.stop_reason = StopReason::kEpochCap;
    return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 4> kModelMagic = {'D', 'L', 'B', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void write_params(BinaryWriter& w, const Parameters& p) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        w.matrix(p.weights[l]);
        if (l < p.biases.size()) w.matrix(p.biases[l]);
    }
    w.f64(p.output_bias);
}

Parameters read_params(BinaryReader& r, const Architecture& a) {
    Parameters p;
    for (int l = 0; l <= a.depth; ++l) {
        MatrixXd w = r.matrix();
        const Index rows = l == a.depth ? 1 : a.width;
        const Index cols = l == 0 ? a.d : a.width;
        if (w.rows() != rows || w.cols() != cols) throw IoError("checkpoint: weight shape does not match header");
        p.weights.push_back(std::move(w));
        if (l < a.depth) {
            MatrixXd b = r.matrix();
            if (b.rows() != a.width || b.cols() != 1) throw IoError("checkpoint: bias shape does not match header");
            p.biases.push_back(b.col(0));
        }
    }
    p.output_bias = r.f64();
    return p;
}

}  // namespace

void save_model(const MlpModel& model, const std::string& path) {
    BinaryWriter w(path, kModelMagic, kModelVersion);
    const Architecture& a = model.arch;
    w.u64(static_cast<std::uint64_t>(a.d));
    w.u64(static_cast<std::uint64_t>(a.depth));
    w.u64(static_cast<std::uint64_t>(a.width));
    w.u32(a.init == InitKind::kGlorot ? 0u : 1u);
    w.f64(a.beta);
    w.u32(a.centered ? 1u : 0u);
    write_params(w, model.params);
    if (model.reference) write_params(w, *model.reference);
    w.close();
}

MlpModel load_model(const std::string& path) {
    BinaryReader r(path, kModelMagic, kModelVersion);
    MlpModel m;
    m.arch.d = static_cast<int>(r.u64());
    m.arch.depth = static_cast<int>(r.u64());
    m.arch.width = static_cast<int>(r.u64());
    const auto init_code = r.u32();
    if (init_code > 1) throw IoError("checkpoint: unknown init kind");
    m.arch.init = init_code == 0 ? InitKind::kGlorot : InitKind::kNtk;
    m.arch.beta = r.f64();
    m.arch.centered = r.u32() != 0;
    validate(m.arch);
    apply_parameterization(m);
    m.params = read_params(r, m.arch);
    if (m.arch.centered) m.reference = read_params(r, m.arch);
    r.expect_end();
    return m;
}

}  // namespace dlb
