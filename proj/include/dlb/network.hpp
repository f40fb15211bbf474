#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dlb/rng.hpp"
#include "dlb/targets.hpp"

namespace dlb {

enum class InitKind { kGlorot, kNtk };
enum class LossKind { kMse, kCrossEntropy };

std::string to_string(InitKind kind);
InitKind parse_init_kind(const std::string& name);

/// Fully connected ReLU network shape: d inputs, `depth` hidden layers of `width` units,
/// scalar output.
///
/// kGlorot: weights uniform on +-sqrt(6 / (fan_in + fan_out)), zero biases, no output bias.
/// kNtk:    trainable parameters are standard normal; the forward pass multiplies layer-1
///          weights by sqrt(1/d), later weights by sqrt(2/width) and every bias (including a
///          scalar output bias) by beta. `centered` subtracts the output of the frozen
///          initial network so that f == 0 at initialization.
struct Architecture {
    int d = 1;
    int depth = 1;
    int width = 1;
    InitKind init = InitKind::kGlorot;
    double beta = 0.1;
    bool centered = false;

    bool has_output_bias() const { return init == InitKind::kNtk; }
};

void validate(const Architecture& arch);

/// d h + (L - 1) h^2, the dominant terms used to size networks at a fixed budget.
std::int64_t budget_count(std::int64_t d, std::int64_t depth, std::int64_t width);

/// Exact number of trainable parameters: d h + h + (L - 1)(h^2 + h) + h, plus one output
/// bias for kNtk models.
std::int64_t parameter_count(const Architecture& arch);
std::int64_t parameter_count(std::int64_t d, std::int64_t depth, std::int64_t width);

/// Integer h minimizing |d h + (L - 1) h^2 - P|; ties go to the smaller h.
int width_for_depth(std::int64_t budget, int d, int depth);

/// Trainable parameters, also used as the gradient type.
/// weights[l] is the matrix of layer l + 1 (width x d, width x width, ..., 1 x width).
struct Parameters {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;  // hidden layers only
    double output_bias = 0.0;

    Parameters zeros_like() const;
    bool all_finite() const;
    /// this += alpha * other
    void axpy(double alpha, const Parameters& other);
    double dot(const Parameters& other) const;
    std::int64_t size(bool with_output_bias) const;

    std::vector<double> flatten(bool with_output_bias) const;
    void assign(const std::vector<double>& flat, bool with_output_bias);
};

struct MlpModel {
    Architecture arch;
    Parameters params;
    std::vector<double> weight_scale;  // effective weight = scale * trainable weight
    double bias_scale = 1.0;
    std::optional<Parameters> reference;  // frozen initial parameters of a centered model

    std::int64_t parameter_count() const { return dlb::parameter_count(arch); }
};

/// Sets the per-layer scales implied by the architecture's initialization scheme.
void apply_parameterization(MlpModel& model);

MlpModel init(const Architecture& arch, RngStream& rng);

struct ForwardResult {
    double output = 0.0;
    std::vector<Eigen::VectorXd> activations;  // z^(0) = x, z^(1), ..., z^(L)
};

/// Single-input forward pass. Throws NonFinite when an activation overflows.
ForwardResult forward(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Outputs for every row of `inputs` (N x d).
Eigen::VectorXd predict(const MlpModel& model, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

/// Sign of the output; 0 maps to +1.
double predict_sign(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Mean squared error, or mean log(1 + exp(-y f)) for +-1 labels.
double loss(const MlpModel& model, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
            const Eigen::Ref<const Eigen::VectorXd>& labels, LossKind kind);

struct LossAndGradient {
    double loss = 0.0;
    Parameters gradient;
};

/// Exact gradient of the batch-mean loss with respect to the trainable parameters.
/// ReLU derivative at 0 is taken as 0.
LossAndGradient backward(const MlpModel& model, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                         const Eigen::Ref<const Eigen::VectorXd>& labels, LossKind kind);

/// Per-sample output gradient d f(x) / d theta (output bias included for kNtk).
Parameters output_gradient(const MlpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

enum class StopReason { kLossThreshold, kAccuracyThreshold, kEpochCap, kDiverged };
std::string to_string(StopReason reason);
StopReason parse_stop_reason(const std::string& name);

struct TrainOptions {
    double learning_rate = 0.1;
    int batch_size = 50;
    int epoch_cap = 2500;
    int check_every = 50;
    LossKind loss = LossKind::kMse;
    double loss_threshold = 1e-4;      // regression stop
    double accuracy_threshold = 1.0;   // classification stop
};

struct TrainReport {
    int epochs_run = 0;
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
    std::vector<std::pair<int, double>> loss_history;
    StopReason stop_reason = StopReason::kEpochCap;
};

struct TrainResult {
    MlpModel model;
    TrainReport report;
};

/// Mini-batch SGD. Each epoch shuffles with `rng` and walks floor(N / B) batches of exactly
/// B samples. Every `check_every` epochs (and at the cap) the full training loss, or the
/// accuracy for cross-entropy, is measured and compared to the stopping threshold.
/// Non-finite losses or parameters end the run with kDiverged.
TrainResult sgd_train(MlpModel model, const Dataset& data, const TrainOptions& options, RngStream& rng);

/// Binary checkpoint: magic, version, d, L, h, init kind, beta, centered, then little-endian
/// doubles layer by layer (weights row-major, then bias), output bias, and the reference
/// parameters of centered models.
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace dlb
