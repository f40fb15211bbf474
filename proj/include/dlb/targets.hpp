#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlb/rng.hpp"

namespace dlb {

enum class GKind { kMonomial, kSinLinear, kTanhSin, kCustom };
enum class Scope { kLocal, kGlobal };
enum class Task { kRegression, kClassification };

std::string to_string(GKind kind);
std::string to_string(Scope scope);
std::string to_string(Task task);
GKind parse_g_kind(const std::string& name);
Scope parse_scope(const std::string& name);
Task parse_task(const std::string& name);

/// The elementary function g: R^k -> R that local and global targets are built from.
///
///   monomial   g = x_1 x_2 ... x_k
///   sin_linear g = sin(c_1 x_1 + ... + c_k x_k), default c = (2, 1)
///   tanh_sin   g = tanh(x_1) sin(x_2)
///   custom     user callable; must be zero-mean under standard normal inputs
struct GFunction {
    GKind kind = GKind::kMonomial;
    int arity = 1;
    std::vector<double> parameters;
    std::function<double(std::span<const double>)> custom;

    static GFunction monomial(int k);
    static GFunction sin_linear(std::vector<double> coefficients = {2.0, 1.0});
    static GFunction tanh_sin();
    static GFunction make_custom(int k, std::function<double(std::span<const double>)> fn);

    double operator()(std::span<const double> args) const;
};

/// Which target to learn. `indices` are 0-based here; configs and files use 1-based values.
/// For local targets they are the fixed coordinates, for global targets the offsets.
struct TargetSpec {
    GFunction g = GFunction::monomial(2);
    Scope scope = Scope::kLocal;
    int d = 1;
    std::vector<int> indices{0, 1};
    Task task = Task::kRegression;
    double noise_eps = 0.0;

    int k() const { return static_cast<int>(indices.size()); }
};

/// Throws InvalidArgument naming the violated field (e.g. "target.indices").
void validate(const TargetSpec& spec);

/// Default local indices (1..k), matching the usual permutation-symmetry choice.
std::vector<int> default_indices(int k);

/// g(x_{i_1}, ..., x_{i_k}).
double local_eval(const TargetSpec& spec, std::span<const double> x);
/// (1/sqrt d) sum_j g(x_{j+i_1}, ..., x_{j+i_k}) with periodic indices, j ascending.
double global_eval(const TargetSpec& spec, std::span<const double> x);
/// Dispatches on spec.scope.
double target_eval(const TargetSpec& spec, std::span<const double> x);

inline double target_eval(const TargetSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return target_eval(spec, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

struct MeanEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;

    /// |mean| >= 4 standard errors.
    bool violates_zero_mean() const;
};

/// Monte-Carlo estimate of E[g] under i.i.d. standard normal arguments.
MeanEstimate estimate_g_mean(const GFunction& g, std::size_t n_samples, RngStream& rng);

/// Labelled sample set. Rows of `inputs` are samples.
struct Dataset {
    Eigen::MatrixXd inputs;          // N x d
    Eigen::VectorXd labels;          // regression: f(x) + eps xi, classification: sign f(x)
    Eigen::VectorXd clean_targets;   // f(x), noiseless
    TargetSpec spec;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::size_t resampled = 0;       // classification ties redrawn

    std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
    int dim() const { return static_cast<int>(inputs.cols()); }

    /// Rows selected by `idx`, keeping spec and provenance.
    Dataset subset(std::span<const std::size_t> idx) const;
};

/// Draws N inputs from N(0, I_d) on stream (seed, stream_id) and labels them.
/// Label noise comes from a companion stream, so the inputs do not depend on noise_eps.
/// Classification inputs with f(x) == 0 exactly are redrawn.
Dataset make_dataset(const TargetSpec& spec, std::size_t n, std::uint64_t seed, std::uint64_t stream_id);

/// Companion stream carrying the label noise of dataset stream `stream_id`.
constexpr std::uint64_t noise_stream_of(std::uint64_t stream_id) { return stream_id ^ (std::uint64_t{1} << 63); }

}  // namespace dlb
