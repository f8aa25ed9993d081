#include "ucl/ucl_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ucl/errors.hpp"

namespace ucl {

namespace {

void require_positive(const Vector& sigma, const char* what) {
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i])) {
            throw DomainError(std::string(what) + ": sigma[" + std::to_string(i) +
                              "] must be positive and finite, got " + std::to_string(sigma[i]));
        }
    }
}

void require_positive(double s, const char* what) {
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw DomainError(std::string(what) + " must be positive, got " + std::to_string(s));
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

void require_rows(const Matrix& m, const Vector& v, const char* what) {
    if (m.rows() != v.size()) {
        throw ShapeError(std::string(what) + ": " + std::to_string(v.size()) +
                         " node sigmas for " + std::to_string(m.rows()) + " rows");
    }
}

} // namespace

// --- snapshot ------------------------------------------------------------------

TaskSnapshot::TaskSnapshot(std::vector<GaussianParams> shared, std::vector<GaussianParams> heads)
    : shared_(std::move(shared)), heads_(std::move(heads)) {
    for (const auto& p : shared_) {
        require_rows(p.mu, p.sigma, "snapshot");
        require_positive(p.sigma, "snapshot");
    }
    for (const auto& p : heads_) {
        require_rows(p.mu, p.sigma, "snapshot");
        require_positive(p.sigma, "snapshot");
    }
}

bool operator==(const TaskSnapshot& a, const TaskSnapshot& b) {
    auto same = [](const std::vector<GaussianParams>& x, const std::vector<GaussianParams>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (x[k].mu.rows() != y[k].mu.rows() || x[k].mu.cols() != y[k].mu.cols()) return false;
            if (x[k].sigma.size() != y[k].sigma.size()) return false;
            if (x[k].mu != y[k].mu || x[k].sigma != y[k].sigma) return false;
        }
        return true;
    };
    return same(a.shared_, b.shared_) && same(a.heads_, b.heads_);
}

TaskSnapshot snapshot_posterior(const Network& net) {
    std::vector<GaussianParams> shared;
    std::vector<GaussianParams> heads;
    for (const auto& l : net.shared()) shared.push_back({l.mu, l.sigma()});
    for (const auto& l : net.heads()) heads.push_back({l.mu, l.sigma()});
    return TaskSnapshot(std::move(shared), std::move(heads));
}

void RegularizerConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw ConfigError("regularizer: beta must be > 0, got " + std::to_string(beta));
    }
    for (double s : sigma_init) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ConfigError("regularizer: sigma_init must be > 0, got " + std::to_string(s));
        }
    }
}

// --- KL --------------------------------------------------------------------------

KlResult kl_closed_form(const std::vector<GaussianParams>& current,
                        const std::vector<GaussianParams>& previous) {
    if (current.size() != previous.size()) {
        throw ShapeError("kl_closed_form: layer counts differ");
    }
    KlResult out;
    for (std::size_t l = 0; l < current.size(); ++l) {
        const auto& cur = current[l];
        const auto& prev = previous[l];
        require_same_shape(cur.mu, prev.mu, "kl_closed_form");
        require_rows(cur.mu, cur.sigma, "kl_closed_form");
        require_rows(prev.mu, prev.sigma, "kl_closed_form");
        require_positive(cur.sigma, "kl_closed_form");
        require_positive(prev.sigma, "kl_closed_form");

        const auto row_len = static_cast<double>(cur.mu.cols());
        Matrix grad(cur.mu.rows(), cur.mu.cols());
        double value = 0.0;
        for (Eigen::Index i = 0; i < cur.mu.rows(); ++i) {
            const double inv_var = 1.0 / (prev.sigma[i] * prev.sigma[i]);
            const auto delta = (cur.mu.row(i) - prev.mu.row(i)).eval();
            value += delta.squaredNorm() * inv_var;
            const double ratio_sq = cur.sigma[i] * cur.sigma[i] * inv_var;
            value += row_len * (ratio_sq - std::log(ratio_sq));
            grad.row(i) = delta * inv_var;
        }
        out.value += 0.5 * value;
        out.grad_mu.push_back(std::move(grad));
    }
    return out;
}

// --- lambda --------------------------------------------------------------------

Matrix compute_lambda(const Vector& sigma_prev_out, double sigma_init_out,
                      const Vector& sigma_prev_in, double sigma_init_in, bool enable_upper_freeze) {
    require_positive(sigma_prev_out, "compute_lambda (output nodes)");
    require_positive(sigma_prev_in, "compute_lambda (input nodes)");
    require_positive(sigma_init_out, "compute_lambda: sigma_init_out");
    require_positive(sigma_init_in, "compute_lambda: sigma_init_in");

    const Eigen::Index n_out = sigma_prev_out.size();
    const Eigen::Index n_in = sigma_prev_in.size();
    const Vector out_ratio = sigma_init_out * sigma_prev_out.cwiseInverse();
    Matrix lambda(n_out, n_in + 1);
    if (enable_upper_freeze) {
        const Eigen::RowVectorXd in_ratio = (sigma_init_in * sigma_prev_in.cwiseInverse()).transpose();
        lambda.leftCols(n_in) = in_ratio.replicate(n_out, 1);
        lambda.leftCols(n_in) = lambda.leftCols(n_in).cwiseMax(out_ratio.replicate(1, n_in));
    } else {
        lambda.leftCols(n_in) = out_ratio.replicate(1, n_in);
    }
    lambda.col(n_in) = out_ratio;
    return lambda;
}

Matrix compute_lambda_input_layer(const Vector& sigma_prev_out, double sigma_init_out,
                                  Eigen::Index n_in) {
    require_positive(sigma_prev_out, "compute_lambda (output nodes)");
    require_positive(sigma_init_out, "compute_lambda: sigma_init_out");
    const Vector out_ratio = sigma_init_out * sigma_prev_out.cwiseInverse();
    return out_ratio.replicate(1, n_in + 1);
}

// --- mu terms --------------------------------------------------------------------

MuTerm mu_quadratic_term(const Matrix& mu_t, const Matrix& mu_prev, const Matrix& lambda) {
    require_same_shape(mu_t, mu_prev, "mu_quadratic_term");
    require_same_shape(mu_t, lambda, "mu_quadratic_term (lambda)");
    const auto delta = (mu_t - mu_prev).array();
    const auto lam_sq = lambda.array().square();
    MuTerm out;
    out.value = 0.5 * (lam_sq * delta.square()).sum();
    out.grad = (lam_sq * delta).matrix();
    return out;
}

MuTerm mu_l1_term(const Matrix& mu_t, const Matrix& mu_prev, const Vector& sigma_prev,
                  double sigma_init) {
    require_same_shape(mu_t, mu_prev, "mu_l1_term");
    require_rows(mu_prev, sigma_prev, "mu_l1_term");
    require_positive(sigma_prev, "mu_l1_term");
    require_positive(sigma_init, "mu_l1_term: sigma_init");

    const double s0_sq = sigma_init * sigma_init;
    MuTerm out;
    out.grad.resize(mu_t.rows(), mu_t.cols());
    for (Eigen::Index i = 0; i < mu_t.rows(); ++i) {
        const double inv_var = 1.0 / (sigma_prev[i] * sigma_prev[i]);
        for (Eigen::Index j = 0; j < mu_t.cols(); ++j) {
            const double weight = s0_sq * mu_prev(i, j) * mu_prev(i, j) * inv_var;
            const double delta = mu_t(i, j) - mu_prev(i, j);
            out.value += weight * std::abs(delta);
            const double sign = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
            out.grad(i, j) = weight * sign;
        }
    }
    return out;
}

// --- sigma term ------------------------------------------------------------------

SigmaTerm sigma_term(const Vector& rho_t, const Vector& sigma_prev, double beta,
                     bool enable_sigma_relax, double multiplicity) {
    if (rho_t.size() != sigma_prev.size()) {
        throw ShapeError("sigma_term: " + std::to_string(rho_t.size()) + " nodes vs " +
                         std::to_string(sigma_prev.size()) + " prior sigmas");
    }
    require_positive(sigma_prev, "sigma_term");
    SigmaTerm out;
    out.grad_rho.resize(rho_t.size());
    const double scale = beta * multiplicity;
    double value = 0.0;
    for (Eigen::Index i = 0; i < rho_t.size(); ++i) {
        const double s = softplus(rho_t[i]);
        if (!(s > 0.0)) throw DomainError("sigma_term: sigma underflowed to zero");
        const double inv_prev_sq = 1.0 / (sigma_prev[i] * sigma_prev[i]);
        const double ratio_sq = s * s * inv_prev_sq;
        value += ratio_sq - std::log(ratio_sq);
        // d/ds of 1/2 (r^2 - log r^2) = s / prev^2 - 1 / s
        double dvalue_ds = s * inv_prev_sq - 1.0 / s;
        if (enable_sigma_relax) {
            value += s * s - std::log(s * s);
            dvalue_ds += s - 1.0 / s;
        }
        out.grad_rho[i] = scale * dvalue_ds * sigmoid(rho_t[i]);
    }
    out.value = 0.5 * scale * value;
    return out;
}

double sigma_term_minimizer(double sigma_prev, bool enable_sigma_relax) {
    require_positive(sigma_prev, "sigma_term_minimizer: sigma_prev");
    if (!enable_sigma_relax) return sigma_prev;
    return std::sqrt(2.0 / (1.0 / (sigma_prev * sigma_prev) + 1.0));
}

// --- total -----------------------------------------------------------------------

RegularizerResult total_regularizer(const Network& net, const TaskSnapshot& snapshot,
                                    const RegularizerConfig& config) {
    const auto& shared = net.shared();
    const auto& heads = net.heads();
    if (snapshot.shared().size() != shared.size()) {
        throw ShapeError("total_regularizer: snapshot has " +
                         std::to_string(snapshot.shared().size()) + " shared layers, network has " +
                         std::to_string(shared.size()));
    }
    if (snapshot.heads().size() > heads.size()) {
        throw ShapeError("total_regularizer: snapshot covers more heads than the network has");
    }
    if (config.sigma_init.size() != shared.size() + 1) {
        throw ShapeError("total_regularizer: sigma_init needs " +
                         std::to_string(shared.size() + 1) + " entries, got " +
                         std::to_string(config.sigma_init.size()));
    }

    RegularizerResult out;
    out.grads = NetworkGradients::zeros_like(net);

    auto multiplicity = [&](const GaussianNodeLayer& layer) {
        return config.sigma_accounting == SigmaAccounting::per_weight
                   ? static_cast<double>(layer.mu.cols())
                   : 1.0;
    };

    // mu terms and sigma term for one covered layer
    auto regularize = [&](const GaussianNodeLayer& layer, const GaussianParams& prior,
                          const Matrix& lambda, double sigma_init, LayerGrad& grad) {
        require_same_shape(layer.mu, prior.mu, "total_regularizer");
        const MuTerm quad = mu_quadratic_term(layer.mu, prior.mu, lambda);
        out.parts.mu_quadratic += quad.value;
        grad.mu += quad.grad;
        if (config.enable_l1) {
            const MuTerm l1 = mu_l1_term(layer.mu, prior.mu, prior.sigma, sigma_init);
            out.parts.mu_l1 += l1.value;
            grad.mu += l1.grad;
        }
        const SigmaTerm sig = sigma_term(layer.rho, prior.sigma, config.beta,
                                         config.enable_sigma_relax, multiplicity(layer));
        out.parts.sigma += sig.value;
        grad.rho += sig.grad_rho;
    };

    for (std::size_t l = 0; l < shared.size(); ++l) {
        const auto& prior = snapshot.shared()[l];
        const Matrix lambda =
            l == 0 ? compute_lambda_input_layer(prior.sigma, config.sigma_init[0], shared[0].n_in())
                   : compute_lambda(prior.sigma, config.sigma_init[l], snapshot.shared()[l - 1].sigma,
                                    config.sigma_init[l - 1], config.enable_upper_freeze);
        regularize(shared[l], prior, lambda, config.sigma_init[l], out.grads.shared[l]);
    }

    const double head_init = config.sigma_init.back();
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const auto& layer = heads[h];
        if (h < snapshot.heads().size()) {
            const auto& prior = snapshot.heads()[h];
            const Matrix lambda =
                shared.empty()
                    ? compute_lambda_input_layer(prior.sigma, head_init, layer.n_in())
                    : compute_lambda(prior.sigma, head_init, snapshot.shared().back().sigma,
                                     config.sigma_init[shared.size() - 1],
                                     config.enable_upper_freeze);
            regularize(layer, prior, lambda, head_init, out.grads.heads[h]);
        } else {
            const Vector anchor = Vector::Constant(layer.rho.size(), head_init);
            const SigmaTerm sig = sigma_term(layer.rho, anchor, config.beta,
                                             config.enable_sigma_relax, multiplicity(layer));
            out.parts.sigma += sig.value;
            out.grads.heads[h].rho += sig.grad_rho;
        }
    }

    out.value = out.parts.total();
    return out;
}

} // namespace ucl
