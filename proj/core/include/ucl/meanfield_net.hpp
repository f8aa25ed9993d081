#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ucl/rng.hpp"

namespace ucl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// --- sigma parameterization -------------------------------------------------

/// log(1 + exp(x)), stable for large |x|.
double softplus(double x);
/// Inverse of softplus on s > 0: log(exp(s) - 1).
double softplus_inverse(double s);
/// Derivative of softplus.
double sigmoid(double x);

Vector softplus(const Vector& rho);

// --- initialization ---------------------------------------------------------

/// Resolved per-layer initialization: the node standard deviation and the
/// variance of the zero-mean uniform draw used for the weight means.
struct LayerInit {
    double sigma_init = 0.06;
    double mu_variance = 0.0;
};

/// sigma_init = sqrt(r * 2 / fan_in), Var[mu] = (1 - r) * 2 / fan_in.
/// Throws ConfigError for r outside [0, 1] or fan_in < 1. r = 0 is allowed
/// here and yields sigma_init = 0, which init_layer rejects.
LayerInit adaptive_sigma_init(int fan_in, double r);

/// Either a constant sigma_init for every layer with He-scaled means
/// (Var[mu] = 2 / fan_in), or the adaptive scheme above.
struct InitScheme {
    enum class Kind { constant, adaptive };

    Kind kind = Kind::constant;
    double sigma_init = 0.06;  // constant scheme
    double ratio = 0.5;        // adaptive scheme

    static InitScheme constant(double sigma) { return {Kind::constant, sigma, 0.5}; }
    static InitScheme adaptive(double r) { return {Kind::adaptive, 0.06, r}; }

    [[nodiscard]] LayerInit resolve(int fan_in) const;
};

// --- layers and networks ----------------------------------------------------

/// Fully-connected layer with Gaussian weights whose incoming weights (bias
/// included, stored as the last column of mu) share one standard deviation
/// per output node: sigma_i = softplus(rho_i).
struct GaussianNodeLayer {
    Matrix mu;   // n_out x (n_in + 1)
    Vector rho;  // n_out

    [[nodiscard]] Eigen::Index n_in() const { return mu.cols() - 1; }
    [[nodiscard]] Eigen::Index n_out() const { return mu.rows(); }
    [[nodiscard]] Vector sigma() const { return softplus(rho); }
};

GaussianNodeLayer init_layer(int n_in, int n_out, const LayerInit& init, Rng& rng);

enum class HeadMode { single, multi };

/// ReLU hidden layers shared by all tasks, plus one softmax output layer per
/// task (multi-head) or a single shared one (single-head).
class Network {
public:
    Network() = default;
    Network(std::vector<GaussianNodeLayer> shared, std::vector<GaussianNodeLayer> heads,
            HeadMode mode, std::vector<double> sigma_init);

    /// Builds shared layers input_dim -> hidden... and, in single-head mode,
    /// the one output head. Multi-head networks start with no heads and need
    /// at least one shared layer.
    static Network build(int input_dim, std::span<const int> hidden, int single_head_classes,
                         HeadMode mode, const InitScheme& init, Rng& rng);

    /// Appends a freshly initialized head. Multi-head mode only.
    int add_head(int classes, const InitScheme& init, Rng& rng);

    [[nodiscard]] HeadMode mode() const { return mode_; }
    [[nodiscard]] int input_dim() const;
    [[nodiscard]] int head_count() const { return static_cast<int>(heads_.size()); }
    [[nodiscard]] int classes(int head) const;
    [[nodiscard]] std::size_t depth() const { return shared_.size() + 1; }

    [[nodiscard]] const std::vector<GaussianNodeLayer>& shared() const { return shared_; }
    [[nodiscard]] const std::vector<GaussianNodeLayer>& heads() const { return heads_; }
    std::vector<GaussianNodeLayer>& shared() { return shared_; }
    std::vector<GaussianNodeLayer>& heads() { return heads_; }

    [[nodiscard]] const GaussianNodeLayer& head(int index) const;

    /// sigma_init per layer position: shared layers first, then the output
    /// layer (all heads share the output-layer value).
    [[nodiscard]] const std::vector<double>& sigma_init() const { return sigma_init_; }
    [[nodiscard]] double head_sigma_init() const { return sigma_init_.back(); }

    /// Layers on the forward path of a head, input to output.
    [[nodiscard]] std::vector<const GaussianNodeLayer*> path(int head) const;

    /// Total number of (mu, rho) scalars, used by the checkpoint blob.
    [[nodiscard]] std::size_t parameter_count() const;

private:
    void check_shapes() const;

    std::vector<GaussianNodeLayer> shared_;
    std::vector<GaussianNodeLayer> heads_;
    HeadMode mode_ = HeadMode::single;
    std::vector<double> sigma_init_;
};

// --- sampling, forward, backward --------------------------------------------

/// One standard-normal matrix per layer on a head's path, each shaped like
/// that layer's mu. One draw is taken per minibatch and shared by the whole
/// batch.
struct SampleDraw {
    std::vector<Matrix> epsilon;
};

SampleDraw draw_noise(const Network& net, int head, Rng& rng);

/// w = mu + softplus(rho) (row-broadcast) * epsilon.
Matrix sample_weights(const GaussianNodeLayer& layer, const Matrix& epsilon);

/// Everything backward needs from a forward pass.
struct ForwardPass {
    int head = 0;
    bool sampled = false;
    Matrix logits;                 // batch x classes
    std::vector<Matrix> inputs;    // input to each layer on the path
    std::vector<Matrix> preacts;   // pre-activation of each layer
    std::vector<Matrix> weights;   // weights actually used (sampled or mu)
    SampleDraw draw;               // empty in mean mode
};

/// Mean-mode forward (w = mu). Read-only; safe to call concurrently.
ForwardPass forward(const Network& net, int head, const Matrix& x);
/// Sample-mode forward with the given draw.
ForwardPass forward(const Network& net, int head, const Matrix& x, const SampleDraw& draw);

/// Logits only, mean mode, without keeping the cache.
Matrix predict_logits(const Network& net, int head, const Matrix& x);

struct LayerGrad {
    Matrix mu;
    Vector rho;
};

/// Gradient containers aligned one-to-one with Network::shared() and heads().
struct NetworkGradients {
    std::vector<LayerGrad> shared;
    std::vector<LayerGrad> heads;

    static NetworkGradients zeros_like(const Network& net);
    NetworkGradients& operator+=(const NetworkGradients& other);
};

/// Backpropagates an arbitrary dL/dlogits through the cached pass.
///   dL/dmu_ij  = g_ij                       (g = dL/dw on the used weights)
///   dL/drho_i  = sum_j g_ij eps_ij * sigmoid(rho_i)   (zero in mean mode)
NetworkGradients backward(const Network& net, const ForwardPass& pass, const Matrix& grad_logits);

struct DataLossResult {
    double loss = 0.0;  // mean cross-entropy over the batch
    NetworkGradients grads;
};

/// Mean softmax cross-entropy and its gradient. Labels index the head's
/// classes; an out-of-range label throws ShapeError.
DataLossResult backward_data_loss(const Network& net, const ForwardPass& pass,
                                  std::span<const int> labels);

/// Mean cross-entropy only (used by finite-difference oracles).
double cross_entropy(const Matrix& logits, std::span<const int> labels);

} // namespace ucl
