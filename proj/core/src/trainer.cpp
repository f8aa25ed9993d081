#include "ucl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "ucl/errors.hpp"

namespace ucl {

namespace {

constexpr Eigen::Index kEvalBatch = 1024;
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kTaskStreamBase = 1000;

// Names the first non-finite tensor in parameters or gradients.
std::string first_non_finite(const Network& net, const NetworkGradients& grads) {
    auto scan = [](const std::vector<GaussianNodeLayer>& layers, const char* group) -> std::string {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            if (!layers[k].mu.allFinite()) return std::string(group) + "[" + std::to_string(k) + "].mu";
            if (!layers[k].rho.allFinite()) return std::string(group) + "[" + std::to_string(k) + "].rho";
        }
        return {};
    };
    auto scan_grads = [](const std::vector<LayerGrad>& layers, const char* group) -> std::string {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            if (!layers[k].mu.allFinite()) {
                return std::string("gradient of ") + group + "[" + std::to_string(k) + "].mu";
            }
            if (!layers[k].rho.allFinite()) {
                return std::string("gradient of ") + group + "[" + std::to_string(k) + "].rho";
            }
        }
        return {};
    };
    for (auto name : {scan(net.shared(), "shared"), scan(net.heads(), "head"),
                      scan_grads(grads.shared, "shared"), scan_grads(grads.heads, "head")}) {
        if (!name.empty()) return name;
    }
    return "loss value";
}

void scale_gradients(NetworkGradients& grads, double factor) {
    for (auto& g : grads.shared) {
        g.mu *= factor;
        g.rho *= factor;
    }
    for (auto& g : grads.heads) {
        g.mu *= factor;
        g.rho *= factor;
    }
}

SigmaSnapshot path_sigma(const Network& net, int head) {
    SigmaSnapshot out;
    for (const GaussianNodeLayer* layer : net.path(head)) out.push_back(layer->sigma());
    return out;
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) {
        throw ConfigError("train: batch_size must be >= 1, got " + std::to_string(batch_size));
    }
    if (!(lr_mu > 0.0) || !(lr_rho > 0.0)) throw ConfigError("train: learning rates must be > 0");
    if (init.kind == InitScheme::Kind::adaptive && !(init.ratio >= 0.0 && init.ratio <= 1.0)) {
        throw ConfigError("train: init ratio r must lie in [0, 1]");
    }
    if (init.kind == InitScheme::Kind::constant && !(init.sigma_init > 0.0)) {
        throw ConfigError("train: sigma_init must be > 0");
    }
    if (method == Method::ucl) regularizer.validate();
}

// --- Adam ------------------------------------------------------------------------

Adam::Adam(const Network& net, double lr_mu, double lr_rho, AdamParams params)
    : lr_mu_(lr_mu),
      lr_rho_(lr_rho),
      params_(params),
      m_(NetworkGradients::zeros_like(net)),
      v_(NetworkGradients::zeros_like(net)) {}

void Adam::reset() {
    steps_ = 0;
    for (auto* group : {&m_, &v_}) {
        for (auto& g : group->shared) {
            g.mu.setZero();
            g.rho.setZero();
        }
        for (auto& g : group->heads) {
            g.mu.setZero();
            g.rho.setZero();
        }
    }
}

bool Adam::moments_are_zero() const {
    for (const auto* group : {&m_, &v_}) {
        for (const auto& g : group->shared) {
            if (!g.mu.isZero(0.0) || !g.rho.isZero(0.0)) return false;
        }
        for (const auto& g : group->heads) {
            if (!g.mu.isZero(0.0) || !g.rho.isZero(0.0)) return false;
        }
    }
    return true;
}

void Adam::step(Network& net, const NetworkGradients& grads) {
    if (grads.shared.size() != net.shared().size() || grads.heads.size() != net.heads().size() ||
        m_.heads.size() != net.heads().size()) {
        throw ShapeError("Adam: gradient layout does not match the network");
    }
    ++steps_;
    const double b1 = params_.beta1;
    const double b2 = params_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));

    auto update = [&](auto& param, const auto& grad, auto& m, auto& v, double lr) {
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        const double step = lr / correction1;
        param.array() -= step * m.array() /
                         ((v.array() / correction2).sqrt() + params_.epsilon);
    };
    auto update_layers = [&](std::vector<GaussianNodeLayer>& layers, const std::vector<LayerGrad>& g,
                             std::vector<LayerGrad>& m, std::vector<LayerGrad>& v) {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            update(layers[k].mu, g[k].mu, m[k].mu, v[k].mu, lr_mu_);
            update(layers[k].rho, g[k].rho, m[k].rho, v[k].rho, lr_rho_);
        }
    };
    update_layers(net.shared(), grads.shared, m_.shared, v_.shared);
    update_layers(net.heads(), grads.heads, m_.heads, v_.heads);
}

// --- AccuracyMatrix ------------------------------------------------------------------

AccuracyMatrix::AccuracyMatrix(int tasks) : rows_(static_cast<std::size_t>(tasks)) {}

void AccuracyMatrix::set(int after_task, int eval_task, double accuracy) {
    if (after_task < 0 || after_task >= tasks() || eval_task < 0 || eval_task > after_task) {
        throw ShapeError("accuracy matrix: entry (" + std::to_string(after_task) + ", " +
                         std::to_string(eval_task) + ") outside the lower triangle");
    }
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw DomainError("accuracy outside [0, 1]");
    auto& row = rows_[static_cast<std::size_t>(after_task)];
    if (row.size() <= static_cast<std::size_t>(eval_task)) {
        row.resize(static_cast<std::size_t>(eval_task) + 1, 0.0);
    }
    row[static_cast<std::size_t>(eval_task)] = accuracy;
}

double AccuracyMatrix::at(int after_task, int eval_task) const {
    const auto& r = row(after_task);
    if (eval_task < 0 || static_cast<std::size_t>(eval_task) >= r.size()) {
        throw ShapeError("accuracy matrix: entry not populated");
    }
    return r[static_cast<std::size_t>(eval_task)];
}

const std::vector<double>& AccuracyMatrix::row(int after_task) const {
    if (after_task < 0 || after_task >= tasks()) throw ShapeError("accuracy matrix: row out of range");
    return rows_[static_cast<std::size_t>(after_task)];
}

double AccuracyMatrix::average(int after_task) const {
    const auto& r = row(after_task);
    if (r.empty()) throw ShapeError("accuracy matrix: empty row");
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

int AccuracyMatrix::populated(int after_task) const {
    return static_cast<int>(row(after_task).size());
}

// --- evaluation --------------------------------------------------------------------

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.size(); ++c) {
        if (logits[c] > logits[best]) best = static_cast<int>(c);
    }
    return best;
}

double evaluate(const Network& net, int head, const LabeledDataset& data) {
    if (data.size() == 0) throw ShapeError("evaluate: empty test set");
    std::size_t correct = 0;
    const Eigen::Index n = data.images.rows();
    for (Eigen::Index start = 0; start < n; start += kEvalBatch) {
        const Eigen::Index len = std::min(kEvalBatch, n - start);
        const Matrix logits = predict_logits(net, head, data.images.middleRows(start, len));
        for (Eigen::Index r = 0; r < len; ++r) {
            if (argmax_lowest(logits.row(r)) == data.labels[static_cast<std::size_t>(start + r)]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// --- training ----------------------------------------------------------------------

TaskTrainLog train_task(Network& net, const TaskSpec& task, int head, const TaskSnapshot& snapshot,
                        const TrainConfig& config, Rng& rng, const StepHook& first_step) {
    config.validate();
    const LabeledDataset& data = task.train;
    if (data.size() == 0) throw ShapeError("train_task: task has no training data");
    if (data.dim() != net.input_dim()) {
        throw ShapeError("train_task: task inputs have " + std::to_string(data.dim()) +
                         " features, network expects " + std::to_string(net.input_dim()));
    }
    (void)net.head(head);

    RegularizerConfig reg = config.regularizer;
    if (reg.sigma_init.empty()) reg.sigma_init = net.sigma_init();
    const bool regularized = config.method == Method::ucl;

    Adam adam(net, config.lr_mu, config.lr_rho, config.adam);
    adam.reset();

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);

    TaskTrainLog log;
    Matrix x;
    std::vector<int> y;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        EpochRecord record;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            x.resize(static_cast<Eigen::Index>(len), data.images.cols());
            y.resize(len);
            for (std::size_t k = 0; k < len; ++k) {
                x.row(static_cast<Eigen::Index>(k)) =
                    data.images.row(static_cast<Eigen::Index>(order[start + k]));
                y[k] = data.labels[order[start + k]];
            }

            NetworkGradients grads;
            double data_loss = 0.0;
            double reg_value = 0.0;
            if (regularized) {
                const SampleDraw draw = draw_noise(net, head, rng);
                const ForwardPass pass = forward(net, head, x, draw);
                DataLossResult dl = backward_data_loss(net, pass, y);
                RegularizerResult rr = total_regularizer(net, snapshot, reg);
                if (config.normalization == RegularizerNormalization::per_batch) {
                    scale_gradients(rr.grads, 1.0 / static_cast<double>(len));
                    rr.value /= static_cast<double>(len);
                }
                grads = std::move(dl.grads);
                grads += rr.grads;
                data_loss = dl.loss;
                reg_value = rr.value;
            } else {
                const ForwardPass pass = forward(net, head, x);
                DataLossResult dl = backward_data_loss(net, pass, y);
                grads = std::move(dl.grads);
                data_loss = dl.loss;
            }
            if (!std::isfinite(data_loss) || !std::isfinite(reg_value)) {
                throw NumericError("task " + std::to_string(task.id) + " epoch " +
                                   std::to_string(epoch) + ": non-finite loss; first non-finite "
                                   "tensor: " + first_non_finite(net, grads));
            }
            if (adam.steps() == 0 && first_step) first_step(net, adam);
            adam.step(net, grads);
            record.data_loss += data_loss;
            record.regularizer += reg_value;
            ++batches;
        }
        record.data_loss /= static_cast<double>(batches);
        record.regularizer /= static_cast<double>(batches);
        if (config.capture_sigma_per_epoch) record.sigma = path_sigma(net, head);
        log.epochs.push_back(std::move(record));
    }
    return log;
}

Network initial_network(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                        const TrainConfig& config) {
    if (tasks.empty()) throw ConfigError("run_sequence: need at least one task");
    Rng init_rng(Rng::derive(config.seed, kInitStream));
    Network net = Network::build(tasks.front().train.dim(), model.hidden,
                                 tasks.front().train.num_classes, config.head_mode, config.init,
                                 init_rng);
    if (config.head_mode == HeadMode::multi) {
        net.add_head(tasks.front().train.num_classes, config.init, init_rng);
    }
    return net;
}

SequenceResult run_sequence(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                            const TrainConfig& config) {
    config.validate();
    if (tasks.empty()) throw ConfigError("run_sequence: need at least one task");
    for (const auto& t : tasks) {
        if (t.train.dim() != tasks.front().train.dim() || t.test.dim() != t.train.dim()) {
            throw ConfigError("run_sequence: tasks disagree on input dimension");
        }
        if (config.head_mode == HeadMode::single && t.train.num_classes != tasks.front().train.num_classes) {
            throw ConfigError("run_sequence: single-head tasks must share one label space");
        }
    }

    Rng init_rng(Rng::derive(config.seed, kInitStream));
    Network net = Network::build(tasks.front().train.dim(), model.hidden,
                                 tasks.front().train.num_classes, config.head_mode, config.init,
                                 init_rng);
    TaskSnapshot snapshot = snapshot_posterior(net);

    const int num_tasks = static_cast<int>(tasks.size());
    SequenceResult result;
    result.accuracy = AccuracyMatrix(num_tasks);
    for (int t = 0; t < num_tasks; ++t) {
        const auto started = std::chrono::steady_clock::now();
        int head = 0;
        if (config.head_mode == HeadMode::multi) {
            head = net.add_head(tasks[static_cast<std::size_t>(t)].train.num_classes, config.init, init_rng);
        }
        Rng task_rng(Rng::derive(config.seed, kTaskStreamBase + static_cast<std::uint64_t>(t)));
        result.logs.push_back(
            train_task(net, tasks[static_cast<std::size_t>(t)], head, snapshot, config, task_rng));
        snapshot = snapshot_posterior(net);

        for (int i = 0; i <= t; ++i) {
            const int eval_head = config.head_mode == HeadMode::multi ? i : 0;
            result.accuracy.set(t, i, evaluate(net, eval_head, tasks[static_cast<std::size_t>(i)].test));
        }
        if (config.method == Method::ucl) result.sigma_history.push_back(path_sigma(net, head));
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
        result.seconds_per_task.push_back(elapsed.count());
    }
    result.network = std::move(net);
    return result;
}

SequenceResult finetune_baseline(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                                 TrainConfig config) {
    config.method = Method::finetune;
    return run_sequence(tasks, model, config);
}

} // namespace ucl
