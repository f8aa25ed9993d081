#pragma once

#include <vector>

#include "ucl/meanfield_net.hpp"

namespace ucl {

/// Mean weights and per-node standard deviations of one layer.
struct GaussianParams {
    Matrix mu;     // n_out x (n_in + 1)
    Vector sigma;  // n_out, strictly positive
};

/// Posterior after a finished task, used as the anchor for the next one.
/// Immutable once built; sigma is validated to be strictly positive.
class TaskSnapshot {
public:
    TaskSnapshot() = default;
    TaskSnapshot(std::vector<GaussianParams> shared, std::vector<GaussianParams> heads);

    [[nodiscard]] const std::vector<GaussianParams>& shared() const { return shared_; }
    [[nodiscard]] const std::vector<GaussianParams>& heads() const { return heads_; }

    friend bool operator==(const TaskSnapshot& a, const TaskSnapshot& b);

private:
    std::vector<GaussianParams> shared_;
    std::vector<GaussianParams> heads_;
};

/// Deep copy of every mu plus sigma = softplus(rho) for all layers and heads.
TaskSnapshot snapshot_posterior(const Network& net);

/// How the sigma terms are counted under node tying.
enum class SigmaAccounting {
    per_node,    // one term per node
    per_weight,  // one term per incoming weight (node term times row length)
};

struct RegularizerConfig {
    double beta = 0.03;
    /// One entry per layer position (shared layers, then the output layer).
    std::vector<double> sigma_init;
    bool enable_upper_freeze = true;
    bool enable_l1 = true;
    bool enable_sigma_relax = true;
    SigmaAccounting sigma_accounting = SigmaAccounting::per_node;

    /// Throws ConfigError on beta <= 0 or a non-positive sigma_init.
    void validate() const;
};

// --- closed-form KL (reference) -----------------------------------------------

struct KlResult {
    double value = 0.0;
    std::vector<Matrix> grad_mu;  // per layer
};

/// 1/2 sum_l [ ||(mu_t - mu_prev) / sigma_prev||^2
///            + 1^T{ (sigma_t/sigma_prev)^2 - log (sigma_t/sigma_prev)^2 } ]
/// evaluated per weight (node sigma broadcast along each row). The -D/2
/// constant of the true KL is omitted, so identical arguments give D/2.
KlResult kl_closed_form(const std::vector<GaussianParams>& current,
                        const std::vector<GaussianParams>& previous);

// --- individual terms -------------------------------------------------------

/// Regularization strength per weight:
///   L_ij = max{ sigma_init_out / sigma_prev_out_i, sigma_init_in / sigma_prev_in_j }.
/// The bias column and, with upper freeze disabled, every column use the
/// output-node ratio alone.
Matrix compute_lambda(const Vector& sigma_prev_out, double sigma_init_out,
                      const Vector& sigma_prev_in, double sigma_init_in, bool enable_upper_freeze);

/// First-layer variant: input pixels carry no uncertainty, so only the
/// output-node ratio applies.
Matrix compute_lambda_input_layer(const Vector& sigma_prev_out, double sigma_init_out,
                                  Eigen::Index n_in);

struct MuTerm {
    double value = 0.0;
    Matrix grad;
};

/// 1/2 ||lambda (.) (mu_t - mu_prev)||_F^2, gradient lambda^2 (.) (mu_t - mu_prev).
MuTerm mu_quadratic_term(const Matrix& mu_t, const Matrix& mu_prev, const Matrix& lambda);

/// sigma_init^2 || (mu_prev / sigma_prev)^2 (.) (mu_t - mu_prev) ||_1 with the
/// subgradient sign(0) = 0.
MuTerm mu_l1_term(const Matrix& mu_t, const Matrix& mu_prev, const Vector& sigma_prev,
                  double sigma_init);

struct SigmaTerm {
    double value = 0.0;
    Vector grad_rho;
};

/// (beta/2) sum_i multiplicity * [ r_i^2 - log r_i^2 + sigma_i^2 - log sigma_i^2 ],
/// r = sigma_t / sigma_prev, sigma_t = softplus(rho_t). The last two summands
/// are dropped when enable_sigma_relax is false. Gradient is w.r.t. rho.
SigmaTerm sigma_term(const Vector& rho_t, const Vector& sigma_prev, double beta,
                     bool enable_sigma_relax, double multiplicity = 1.0);

/// Per-node argmin of sigma_term: sqrt(2 / (1/sigma_prev^2 + 1)) with the
/// relaxation, sigma_prev without it.
double sigma_term_minimizer(double sigma_prev, bool enable_sigma_relax);

// --- combined ------------------------------------------------------------------

struct RegularizerBreakdown {
    double mu_quadratic = 0.0;
    double mu_l1 = 0.0;
    double sigma = 0.0;
    [[nodiscard]] double total() const { return mu_quadratic + mu_l1 + sigma; }
};

struct RegularizerResult {
    double value = 0.0;
    RegularizerBreakdown parts;
    NetworkGradients grads;
};

/// Full UCL regularizer of the live network against a snapshot. Heads not
/// covered by the snapshot (a task's fresh head) contribute only their sigma
/// term, anchored at the output-layer sigma_init.
RegularizerResult total_regularizer(const Network& net, const TaskSnapshot& snapshot,
                                    const RegularizerConfig& config);

} // namespace ucl
