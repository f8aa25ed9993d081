#include "ucl/meanfield_net.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ucl/errors.hpp"

namespace ucl {

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double softplus_inverse(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw DomainError("softplus_inverse: argument must be positive and finite, got " +
                          std::to_string(s));
    }
    // log(exp(s) - 1) = s + log(1 - exp(-s)) for large s
    if (s > 20.0) return s + std::log(-std::expm1(-s));
    return std::log(std::expm1(s));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector softplus(const Vector& rho) {
    Vector out(rho.size());
    for (Eigen::Index i = 0; i < rho.size(); ++i) out[i] = softplus(rho[i]);
    return out;
}

LayerInit adaptive_sigma_init(int fan_in, double r) {
    if (fan_in < 1) throw ConfigError("adaptive init: fan_in must be >= 1");
    if (!(r >= 0.0 && r <= 1.0)) {
        throw ConfigError("adaptive init: ratio r must lie in [0, 1], got " + std::to_string(r));
    }
    const double he = 2.0 / static_cast<double>(fan_in);
    return {std::sqrt(r * he), (1.0 - r) * he};
}

LayerInit InitScheme::resolve(int fan_in) const {
    if (kind == Kind::adaptive) return adaptive_sigma_init(fan_in, ratio);
    if (fan_in < 1) throw ConfigError("init: fan_in must be >= 1");
    return {sigma_init, 2.0 / static_cast<double>(fan_in)};
}

GaussianNodeLayer init_layer(int n_in, int n_out, const LayerInit& init, Rng& rng) {
    if (n_in < 1 || n_out < 1) {
        throw ConfigError("init_layer: layer sizes must be >= 1 (got " + std::to_string(n_in) +
                          " -> " + std::to_string(n_out) + ")");
    }
    if (!(init.sigma_init > 0.0) || !std::isfinite(init.sigma_init)) {
        throw ConfigError("init_layer: sigma_init must be > 0, got " +
                          std::to_string(init.sigma_init));
    }
    if (init.mu_variance < 0.0) throw ConfigError("init_layer: negative mean variance");

    GaussianNodeLayer layer;
    layer.mu = Matrix::Zero(n_out, n_in + 1);
    // zero-mean uniform with the requested variance; bias column stays zero
    const double half_width = std::sqrt(3.0 * init.mu_variance);
    for (int i = 0; i < n_out; ++i) {
        for (int j = 0; j < n_in; ++j) layer.mu(i, j) = rng.uniform(-half_width, half_width);
    }
    layer.rho = Vector::Constant(n_out, softplus_inverse(init.sigma_init));
    return layer;
}

// --- Network ----------------------------------------------------------------

Network::Network(std::vector<GaussianNodeLayer> shared, std::vector<GaussianNodeLayer> heads,
                 HeadMode mode, std::vector<double> sigma_init)
    : shared_(std::move(shared)),
      heads_(std::move(heads)),
      mode_(mode),
      sigma_init_(std::move(sigma_init)) {
    check_shapes();
}

Network Network::build(int input_dim, std::span<const int> hidden, int single_head_classes,
                       HeadMode mode, const InitScheme& init, Rng& rng) {
    if (input_dim < 1) throw ConfigError("network: input dimension must be >= 1");
    // heads are attached later and read their fan-in from the last shared layer
    if (mode == HeadMode::multi && hidden.empty()) {
        throw ConfigError("network: multi-head mode needs at least one shared layer");
    }
    std::vector<GaussianNodeLayer> shared;
    std::vector<double> sigma_init;
    int fan_in = input_dim;
    for (int width : hidden) {
        const LayerInit li = init.resolve(fan_in);
        shared.push_back(init_layer(fan_in, width, li, rng));
        sigma_init.push_back(li.sigma_init);
        fan_in = width;
    }
    const LayerInit head_init = init.resolve(fan_in);
    if (!(head_init.sigma_init > 0.0)) {
        throw ConfigError("network: output-layer sigma_init must be > 0");
    }
    sigma_init.push_back(head_init.sigma_init);

    std::vector<GaussianNodeLayer> heads;
    if (mode == HeadMode::single) {
        heads.push_back(init_layer(fan_in, single_head_classes, head_init, rng));
    }
    return Network(std::move(shared), std::move(heads), mode, std::move(sigma_init));
}

int Network::add_head(int classes, const InitScheme& init, Rng& rng) {
    if (mode_ != HeadMode::multi) throw ShapeError("add_head: network is single-head");
    const int fan_in = shared_.empty() ? input_dim() : static_cast<int>(shared_.back().n_out());
    heads_.push_back(init_layer(fan_in, classes, init.resolve(fan_in), rng));
    return head_count() - 1;
}

int Network::input_dim() const {
    if (!shared_.empty()) return static_cast<int>(shared_.front().n_in());
    if (!heads_.empty()) return static_cast<int>(heads_.front().n_in());
    return 0;
}

int Network::classes(int head_index) const {
    return static_cast<int>(head(head_index).n_out());
}

const GaussianNodeLayer& Network::head(int index) const {
    if (index < 0 || index >= head_count()) {
        throw ShapeError("unknown head index " + std::to_string(index) + " (network has " +
                         std::to_string(head_count()) + " heads)");
    }
    return heads_[static_cast<std::size_t>(index)];
}

std::vector<const GaussianNodeLayer*> Network::path(int head_index) const {
    std::vector<const GaussianNodeLayer*> layers;
    layers.reserve(shared_.size() + 1);
    for (const auto& l : shared_) layers.push_back(&l);
    layers.push_back(&head(head_index));
    return layers;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : shared_) n += static_cast<std::size_t>(l.mu.size() + l.rho.size());
    for (const auto& l : heads_) n += static_cast<std::size_t>(l.mu.size() + l.rho.size());
    return n;
}

void Network::check_shapes() const {
    for (std::size_t k = 1; k < shared_.size(); ++k) {
        if (shared_[k].n_in() != shared_[k - 1].n_out()) {
            throw ShapeError("network: layer " + std::to_string(k) + " fan-in " +
                             std::to_string(shared_[k].n_in()) + " does not match layer " +
                             std::to_string(k - 1) + " width " +
                             std::to_string(shared_[k - 1].n_out()));
        }
    }
    for (const auto& l : shared_) {
        if (l.rho.size() != l.n_out()) throw ShapeError("network: rho size != layer width");
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        const auto& l = heads_[h];
        if (l.rho.size() != l.n_out()) throw ShapeError("network: rho size != head width");
        if (!shared_.empty() && l.n_in() != shared_.back().n_out()) {
            throw ShapeError("network: head " + std::to_string(h) +
                             " fan-in does not match last shared layer");
        }
    }
    if (mode_ == HeadMode::single && heads_.size() != 1) {
        throw ShapeError("network: single-head mode requires exactly one head");
    }
    if (sigma_init_.size() != shared_.size() + 1) {
        throw ShapeError("network: sigma_init needs one entry per layer position");
    }
}

// --- sampling ----------------------------------------------------------------

SampleDraw draw_noise(const Network& net, int head, Rng& rng) {
    SampleDraw draw;
    for (const GaussianNodeLayer* layer : net.path(head)) {
        Matrix eps(layer->mu.rows(), layer->mu.cols());
        double* data = eps.data();
        for (Eigen::Index k = 0; k < eps.size(); ++k) data[k] = rng.normal();
        draw.epsilon.push_back(std::move(eps));
    }
    return draw;
}

Matrix sample_weights(const GaussianNodeLayer& layer, const Matrix& epsilon) {
    if (epsilon.rows() != layer.mu.rows() || epsilon.cols() != layer.mu.cols()) {
        throw ShapeError("sample_weights: noise shape " + std::to_string(epsilon.rows()) + "x" +
                         std::to_string(epsilon.cols()) + " does not match mu shape " +
                         std::to_string(layer.mu.rows()) + "x" +
                         std::to_string(layer.mu.cols()));
    }
    const Vector sigma = layer.sigma();
    return layer.mu + sigma.asDiagonal() * epsilon;
}

// --- forward -----------------------------------------------------------------

namespace {

ForwardPass run_forward(const Network& net, int head, const Matrix& x, const SampleDraw* draw) {
    const auto layers = net.path(head);
    if (x.cols() != net.input_dim()) {
        throw ShapeError("forward: input has " + std::to_string(x.cols()) +
                         " columns, network expects " + std::to_string(net.input_dim()));
    }
    if (!x.allFinite()) throw NumericError("forward: input contains non-finite values");
    if (draw != nullptr && draw->epsilon.size() != layers.size()) {
        throw ShapeError("forward: draw covers " + std::to_string(draw->epsilon.size()) +
                         " layers, path has " + std::to_string(layers.size()));
    }

    ForwardPass pass;
    pass.head = head;
    pass.sampled = draw != nullptr;
    if (draw != nullptr) pass.draw = *draw;
    pass.inputs.reserve(layers.size());
    pass.preacts.reserve(layers.size());
    pass.weights.reserve(layers.size());

    Matrix activation = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const GaussianNodeLayer& layer = *layers[k];
        Matrix w = draw != nullptr ? sample_weights(layer, draw->epsilon[k]) : layer.mu;
        const Eigen::Index n_in = layer.n_in();
        Matrix z = activation * w.leftCols(n_in).transpose();
        z.rowwise() += w.col(n_in).transpose();
        pass.inputs.push_back(std::move(activation));
        if (k + 1 < layers.size()) {
            activation = z.cwiseMax(0.0);
        }
        pass.preacts.push_back(std::move(z));
        pass.weights.push_back(std::move(w));
    }
    pass.logits = pass.preacts.back();
    return pass;
}

} // namespace

ForwardPass forward(const Network& net, int head, const Matrix& x) {
    return run_forward(net, head, x, nullptr);
}

ForwardPass forward(const Network& net, int head, const Matrix& x, const SampleDraw& draw) {
    return run_forward(net, head, x, &draw);
}

Matrix predict_logits(const Network& net, int head, const Matrix& x) {
    const auto layers = net.path(head);
    if (x.cols() != net.input_dim()) throw ShapeError("predict_logits: input width mismatch");
    Matrix activation = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const GaussianNodeLayer& layer = *layers[k];
        const Eigen::Index n_in = layer.n_in();
        Matrix z = activation * layer.mu.leftCols(n_in).transpose();
        z.rowwise() += layer.mu.col(n_in).transpose();
        activation = k + 1 < layers.size() ? Matrix(z.cwiseMax(0.0)) : std::move(z);
    }
    return activation;
}

// --- gradients ---------------------------------------------------------------

NetworkGradients NetworkGradients::zeros_like(const Network& net) {
    NetworkGradients g;
    for (const auto& l : net.shared()) {
        g.shared.push_back({Matrix::Zero(l.mu.rows(), l.mu.cols()), Vector::Zero(l.rho.size())});
    }
    for (const auto& l : net.heads()) {
        g.heads.push_back({Matrix::Zero(l.mu.rows(), l.mu.cols()), Vector::Zero(l.rho.size())});
    }
    return g;
}

NetworkGradients& NetworkGradients::operator+=(const NetworkGradients& other) {
    if (shared.size() != other.shared.size() || heads.size() != other.heads.size()) {
        throw ShapeError("gradient accumulation: container layouts differ");
    }
    for (std::size_t k = 0; k < shared.size(); ++k) {
        shared[k].mu += other.shared[k].mu;
        shared[k].rho += other.shared[k].rho;
    }
    for (std::size_t k = 0; k < heads.size(); ++k) {
        heads[k].mu += other.heads[k].mu;
        heads[k].rho += other.heads[k].rho;
    }
    return *this;
}

NetworkGradients backward(const Network& net, const ForwardPass& pass, const Matrix& grad_logits) {
    const auto layers = net.path(pass.head);
    if (pass.preacts.size() != layers.size() || pass.inputs.size() != layers.size()) {
        throw ShapeError("backward: forward cache missing or built for another network");
    }
    if (grad_logits.rows() != pass.logits.rows() || grad_logits.cols() != pass.logits.cols()) {
        throw ShapeError("backward: gradient shape does not match logits");
    }

    NetworkGradients grads = NetworkGradients::zeros_like(net);
    Matrix delta = grad_logits;  // dL/dz for the current layer
    for (std::size_t k = layers.size(); k-- > 0;) {
        const GaussianNodeLayer& layer = *layers[k];
        const Eigen::Index n_in = layer.n_in();
        LayerGrad& out = k + 1 == layers.size()
                             ? grads.heads[static_cast<std::size_t>(pass.head)]
                             : grads.shared[k];

        out.mu.leftCols(n_in).noalias() = delta.transpose() * pass.inputs[k];
        out.mu.col(n_in) = delta.colwise().sum().transpose();

        if (pass.sampled) {
            const Matrix& eps = pass.draw.epsilon[k];
            for (Eigen::Index i = 0; i < out.rho.size(); ++i) {
                out.rho[i] = out.mu.row(i).dot(eps.row(i)) * sigmoid(layer.rho[i]);
            }
        }

        if (k > 0) {
            Matrix upstream = delta * pass.weights[k].leftCols(n_in);
            const Matrix& z_below = pass.preacts[k - 1];
            delta = upstream.cwiseProduct((z_below.array() > 0.0).cast<double>().matrix());
        }
    }
    return grads;
}

double cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
        throw ShapeError("cross_entropy: label count does not match batch size");
    }
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= logits.cols()) {
            throw ShapeError("label " + std::to_string(y) + " out of range for head with " +
                             std::to_string(logits.cols()) + " classes");
        }
        const double m = logits.row(r).maxCoeff();
        const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
        total += lse - logits(r, y);
    }
    return total / static_cast<double>(logits.rows());
}

DataLossResult backward_data_loss(const Network& net, const ForwardPass& pass,
                                  std::span<const int> labels) {
    const Matrix& logits = pass.logits;
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
        throw ShapeError("backward_data_loss: label count does not match batch size");
    }
    const auto batch = static_cast<double>(logits.rows());
    Matrix probs(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= logits.cols()) {
            throw ShapeError("label " + std::to_string(y) + " out of range for head with " +
                             std::to_string(logits.cols()) + " classes");
        }
        const double m = logits.row(r).maxCoeff();
        probs.row(r) = (logits.row(r).array() - m).exp().matrix();
        const double z = probs.row(r).sum();
        total += m + std::log(z) - logits(r, y);
        probs.row(r) /= z;
        probs(r, y) -= 1.0;
    }
    probs /= batch;
    return {total / batch, backward(net, pass, probs)};
}

} // namespace ucl
