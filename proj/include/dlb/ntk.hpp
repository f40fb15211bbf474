#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlb/linalg.hpp"
#include "dlb/rng.hpp"
#include "dlb/targets.hpp"

namespace dlb {

/// Infinite-width ReLU network kernel: L hidden layers, bias scale beta, input dimension d.
struct KernelSpec {
    int depth = 1;
    double beta = 0.1;
    int d = 1;
};

void validate(const KernelSpec& spec);

/// Per-level covariances for one input pair.
///   sigma[l]      Sigma^(l)(x, x'),  l = 0..L
///   sigma_xx[l]   Sigma^(l)(x, x)
///   sigma_yy[l]   Sigma^(l)(x', x')
///   sigma_dot[l]  derivative covariance of hidden layer l for l = 1..L; sigma_dot[0] unused,
///                 sigma_dot[L + 1] == 1 for the linear output layer
struct RecursionTrace {
    std::vector<double> sigma;
    std::vector<double> sigma_xx;
    std::vector<double> sigma_yy;
    std::vector<double> sigma_dot;
};

/// Runs the arc-cosine covariance recursion from the three level-0 scalars
/// x.x'/d + beta^2, |x|^2/d + beta^2, |x'|^2/d + beta^2.
RecursionTrace sigma_recursion_from_scalars(double cross, double self_x, double self_y, int depth, double beta);

RecursionTrace sigma_recursion(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                               const KernelSpec& spec);

/// Theta^(L) = sum_{l=1}^{L+1} Sigma^(l-1) prod_{l'=l}^{L+1} SigmaDot^(l').
double ntk_from_trace(const RecursionTrace& trace);

double ntk_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                  const KernelSpec& spec);

/// beta = 0 kernel through the angle map
///   cos t_l = (sin t_{l-1} + (pi - t_{l-1}) cos t_{l-1}) / pi.
/// Throws ZeroVector for a zero input.
double ntk_kernel_bias_free(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                            int depth);

/// K_ij = Theta(x_i, x_j) over the rows of `inputs`; upper triangle computed, then mirrored.
Eigen::MatrixXd gram(const Eigen::Ref<const Eigen::MatrixXd>& inputs, const KernelSpec& spec);

/// Theta(a_i, b_j) for rows a_i of `a` and b_j of `b`.
Eigen::MatrixXd cross_kernel(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b,
                             const KernelSpec& spec);

/// Kernel regression predictor with dual coefficients alpha = (K + jitter I)^-1 y.
struct NtkModel {
    KernelSpec spec;
    Eigen::MatrixXd inputs;
    Eigen::VectorXd alpha;
    double jitter_used = 0.0;
};

/// Fits on the dataset labels (+-1 labels are regressed directly for classification).
NtkModel ntk_fit(const Dataset& data, const KernelSpec& spec, double base_jitter = -1.0);
/// Same, from raw inputs and targets. A negative base_jitter selects 1e-10 x mean diagonal.
NtkModel ntk_fit(const Eigen::Ref<const Eigen::MatrixXd>& inputs, const Eigen::Ref<const Eigen::VectorXd>& targets,
                 const KernelSpec& spec, double base_jitter = -1.0);

double ntk_predict(const NtkModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd ntk_predict_batch(const NtkModel& model, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Monte-Carlo tangent kernel of finite networks in NTK parameterization: averages
/// grad f(x) . grad f(x') over `n_init` independent networks of the given width.
McEstimate mc_ntk_estimate(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                           const KernelSpec& spec, int width, int n_init, RngStream& rng);

/// Batched variant: every initialization is shared by all pairs (xs.row(i), ys.row(i)).
std::vector<McEstimate> mc_ntk_estimate_pairs(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                                              const Eigen::Ref<const Eigen::MatrixXd>& ys, const KernelSpec& spec,
                                              int width, int n_init, RngStream& rng);

/// Container layout: magic "DLBK", version, L, beta, d, jitter, inputs matrix, alpha matrix.
void save_ntk(const NtkModel& model, const std::string& path);
NtkModel load_ntk(const std::string& path);

}  // namespace dlb
