#include "dlb/targets.hpp"

#include <cmath>
#include <string>

#include "dlb/errors.hpp"

namespace dlb {

std::string to_string(GKind kind) {
    switch (kind) {
        case GKind::kMonomial: return "monomial";
        case GKind::kSinLinear: return "sin_linear";
        case GKind::kTanhSin: return "tanh_sin";
        case GKind::kCustom: return "custom";
    }
    return "unknown";
}

std::string to_string(Scope scope) { return scope == Scope::kLocal ? "local" : "global"; }
std::string to_string(Task task) { return task == Task::kRegression ? "regression" : "classification"; }

GKind parse_g_kind(const std::string& name) {
    if (name == "monomial") return GKind::kMonomial;
    if (name == "sin_linear") return GKind::kSinLinear;
    if (name == "tanh_sin") return GKind::kTanhSin;
    throw InvalidArgument("unknown g kind '" + name + "'");
}

Scope parse_scope(const std::string& name) {
    if (name == "local") return Scope::kLocal;
    if (name == "global") return Scope::kGlobal;
    throw InvalidArgument("unknown scope '" + name + "'");
}

Task parse_task(const std::string& name) {
    if (name == "regression") return Task::kRegression;
    if (name == "classification") return Task::kClassification;
    throw InvalidArgument("unknown task '" + name + "'");
}

GFunction GFunction::monomial(int k) {
    GFunction g;
    g.kind = GKind::kMonomial;
    g.arity = k;
    return g;
}

GFunction GFunction::sin_linear(std::vector<double> coefficients) {
    GFunction g;
    g.kind = GKind::kSinLinear;
    g.arity = static_cast<int>(coefficients.size());
    g.parameters = std::move(coefficients);
    return g;
}

GFunction GFunction::tanh_sin() {
    GFunction g;
    g.kind = GKind::kTanhSin;
    g.arity = 2;
    return g;
}

GFunction GFunction::make_custom(int k, std::function<double(std::span<const double>)> fn) {
    GFunction g;
    g.kind = GKind::kCustom;
    g.arity = k;
    g.custom = std::move(fn);
    return g;
}

double GFunction::operator()(std::span<const double> args) const {
    switch (kind) {
        case GKind::kMonomial: {
            double p = 1.0;
            for (double a : args) p *= a;
            return p;
        }
        case GKind::kSinLinear: {
            double s = 0.0;
            for (std::size_t i = 0; i < args.size(); ++i) s += parameters[i] * args[i];
            return std::sin(s);
        }
        case GKind::kTanhSin:
            return std::tanh(args[0]) * std::sin(args[1]);
        case GKind::kCustom:
            return custom(args);
    }
    return 0.0;
}

std::vector<int> default_indices(int k) {
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
}

void validate(const TargetSpec& spec) {
    if (spec.d < 1) throw InvalidArgument("target.d: must be >= 1");
    if (spec.indices.empty()) throw InvalidArgument("target.indices: must be non-empty");
    if (spec.k() > spec.d) throw InvalidArgument("target.indices: k exceeds d");
    for (std::size_t i = 0; i < spec.indices.size(); ++i) {
        const int v = spec.indices[i];
        if (v < 0 || v >= spec.d) throw InvalidArgument("target.indices: index out of [1, d]");
        if (i > 0 && v <= spec.indices[i - 1]) throw InvalidArgument("target.indices: must be strictly increasing");
    }
    if (spec.g.arity != spec.k()) throw InvalidArgument("target.g: arity does not match number of indices");
    if (spec.g.kind == GKind::kSinLinear && spec.g.parameters.size() != spec.indices.size())
        throw InvalidArgument("target.g.parameters: need one coefficient per index");
    if (spec.g.kind == GKind::kTanhSin && spec.k() != 2) throw InvalidArgument("target.g: tanh_sin has arity 2");
    if (spec.g.kind == GKind::kCustom && !spec.g.custom) throw InvalidArgument("target.g: custom g without callable");
    if (!(spec.noise_eps >= 0.0) || !std::isfinite(spec.noise_eps)) throw InvalidArgument("target.noise_eps: must be >= 0");
    if (spec.task == Task::kClassification && spec.noise_eps != 0.0)
        throw InvalidArgument("target.noise_eps: must be 0 for classification");
}

namespace {

void check_dim(const TargetSpec& spec, std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.d)
        throw DimensionMismatch("target: input has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(spec.d));
}

// Fixed small buffer; k is tiny in every experiment.
template <typename F>
double with_args(std::size_t k, F&& fill_and_eval) {
    if (k <= 8) {
        double buf[8];
        return fill_and_eval(std::span<double>(buf, k));
    }
    std::vector<double> buf(k);
    return fill_and_eval(std::span<double>(buf));
}

}  // namespace

double local_eval(const TargetSpec& spec, std::span<const double> x) {
    check_dim(spec, x);
    return with_args(spec.indices.size(), [&](std::span<double> args) {
        for (std::size_t i = 0; i < args.size(); ++i) args[i] = x[static_cast<std::size_t>(spec.indices[i])];
        return spec.g(args);
    });
}

double global_eval(const TargetSpec& spec, std::span<const double> x) {
    check_dim(spec, x);
    const std::size_t d = x.size();
    return with_args(spec.indices.size(), [&](std::span<double> args) {
        double sum = 0.0;
        // 0-based offset o corresponds to x_{j + o + 1} for 1-based j.
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t i = 0; i < args.size(); ++i)
                args[i] = x[(j + static_cast<std::size_t>(spec.indices[i]) + 1) % d];
            sum += spec.g(args);
        }
        return sum / std::sqrt(static_cast<double>(d));
    });
}

double target_eval(const TargetSpec& spec, std::span<const double> x) {
    return spec.scope == Scope::kLocal ? local_eval(spec, x) : global_eval(spec, x);
}

bool MeanEstimate::violates_zero_mean() const { return std::abs(mean) >= 4.0 * stderr_; }

MeanEstimate estimate_g_mean(const GFunction& g, std::size_t n_samples, RngStream& rng) {
    if (n_samples < 100) throw InvalidArgument("estimate_g_mean: need at least 100 samples");
    std::vector<double> args(static_cast<std::size_t>(g.arity));
    double mean = 0.0, m2 = 0.0;
    for (std::size_t n = 1; n <= n_samples; ++n) {
        for (double& a : args) a = rng.gaussian();
        const double v = g(args);
        const double delta = v - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (v - mean);
    }
    const double var = m2 / static_cast<double>(n_samples - 1);
    return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
    out.labels.resize(static_cast<Eigen::Index>(idx.size()));
    out.clean_targets.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = static_cast<Eigen::Index>(idx[r]);
        out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(src);
        out.labels[static_cast<Eigen::Index>(r)] = labels[src];
        out.clean_targets[static_cast<Eigen::Index>(r)] = clean_targets[src];
    }
    out.spec = spec;
    out.seed = seed;
    out.stream_id = stream_id;
    return out;
}

Dataset make_dataset(const TargetSpec& spec, std::size_t n, std::uint64_t seed, std::uint64_t stream_id) {
    validate(spec);
    if (n < 1) throw InvalidArgument("make_dataset: N must be >= 1");
    if (spec.g.kind == GKind::kCustom) {
        RngStream check(seed, make_stream_id(StreamPurpose::kGMean));
        if (estimate_g_mean(spec.g, 100000, check).violates_zero_mean())
            throw InvalidArgument("target.g: custom g is not zero-mean under standard normal inputs");
    }
    const auto rows = static_cast<Eigen::Index>(n);
    Dataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.stream_id = stream_id;
    ds.inputs.resize(rows, spec.d);
    ds.labels.resize(rows);
    ds.clean_targets.resize(rows);

    RngStream data(seed, stream_id);
    RngStream noise(seed, noise_stream_of(stream_id));
    Eigen::VectorXd x(spec.d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double f;
        for (;;) {
            for (int c = 0; c < spec.d; ++c) x[c] = data.gaussian();
            f = target_eval(spec, x);
            if (spec.task == Task::kRegression || f != 0.0) break;
            ++ds.resampled;
        }
        ds.inputs.row(r) = x.transpose();
        ds.clean_targets[r] = f;
        if (spec.task == Task::kClassification) {
            ds.labels[r] = f > 0.0 ? 1.0 : -1.0;
        } else {
            ds.labels[r] = f + spec.noise_eps * noise.gaussian();
        }
    }
    return ds;
}

}  // namespace dlb
