#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ucl/datasets.hpp"
#include "ucl/meanfield_net.hpp"
#include "ucl/ucl_loss.hpp"

namespace ucl {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// How the regularizer is weighted against the mean minibatch cross-entropy.
enum class RegularizerNormalization {
    /// (sum of minibatch NLL + R) / batch: the minibatch stands in for the
    /// task data in -log p(D|W) + R.
    per_batch,
    /// mean NLL + R.
    none,
};

enum class Method {
    ucl,       // sampled weights, UCL regularizer
    finetune,  // deterministic weights (sigma fixed at 0), no regularizer
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 256;
    double lr_mu = 1e-3;
    double lr_rho = 1e-3;
    AdamParams adam;
    std::uint64_t seed = 0;
    HeadMode head_mode = HeadMode::single;
    Method method = Method::ucl;
    InitScheme init = InitScheme::constant(0.06);
    /// beta, ablation switches and sigma accounting. sigma_init is filled in
    /// from the network when left empty.
    RegularizerConfig regularizer;
    RegularizerNormalization normalization = RegularizerNormalization::per_batch;
    /// Record sigma after every epoch as well as after every task.
    bool capture_sigma_per_epoch = false;

    void validate() const;
};

/// Adam with separate learning rates for the mu and rho parameter groups.
class Adam {
public:
    Adam(const Network& net, double lr_mu, double lr_rho, AdamParams params);

    void step(Network& net, const NetworkGradients& grads);
    /// Clears both moment buffers and the step counter.
    void reset();

    [[nodiscard]] long steps() const { return steps_; }
    /// True when every moment buffer is exactly zero.
    [[nodiscard]] bool moments_are_zero() const;

private:
    double lr_mu_;
    double lr_rho_;
    AdamParams params_;
    long steps_ = 0;
    NetworkGradients m_;
    NetworkGradients v_;
};

/// A[t][i]: accuracy on task i after training task t (0-based, i <= t).
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(int tasks);

    [[nodiscard]] int tasks() const { return static_cast<int>(rows_.size()); }
    void set(int after_task, int eval_task, double accuracy);
    [[nodiscard]] double at(int after_task, int eval_task) const;
    [[nodiscard]] const std::vector<double>& row(int after_task) const;
    /// Mean of row t over the tasks seen so far.
    [[nodiscard]] double average(int after_task) const;
    [[nodiscard]] int populated(int after_task) const;

    friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

private:
    std::vector<std::vector<double>> rows_;
};

/// sigma per node for every layer position on the trained head's path
/// (shared layers, then the output head used by that task).
using SigmaSnapshot = std::vector<Vector>;

struct EpochRecord {
    double data_loss = 0.0;    // mean over minibatches
    double regularizer = 0.0;  // mean over minibatches
    SigmaSnapshot sigma;       // only with capture_sigma_per_epoch
};

struct TaskTrainLog {
    std::vector<EpochRecord> epochs;
};

/// Observer called at the first optimizer step of a task, before the update;
/// tests use it to check parameter continuity and optimizer reset.
using StepHook = std::function<void(const Network&, const Adam&)>;

/// Minimizes data NLL + UCL regularizer (or plain NLL for fine-tuning) on one
/// task, starting from the current parameters. One noise draw per minibatch,
/// Adam moments reset on entry. Throws NumericError naming the first
/// non-finite tensor when the loss diverges.
TaskTrainLog train_task(Network& net, const TaskSpec& task, int head, const TaskSnapshot& snapshot,
                        const TrainConfig& config, Rng& rng, const StepHook& first_step = {});

/// Mean-mode argmax accuracy; ties go to the lowest class index.
double evaluate(const Network& net, int head, const LabeledDataset& data);

/// Index of the largest logit, lowest index on ties.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& logits);

struct ModelSpec {
    std::vector<int> hidden = {400, 400};
};

struct SequenceResult {
    AccuracyMatrix accuracy;
    /// sigma_history[t] = sigma per layer after task t (empty for fine-tuning)
    std::vector<SigmaSnapshot> sigma_history;
    std::vector<TaskTrainLog> logs;
    std::vector<double> seconds_per_task;
    Network network;  // final parameters
};

/// Trains the tasks in order: (multi-head) attach a head, train, snapshot,
/// evaluate every task seen so far, record sigma.
SequenceResult run_sequence(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                            const TrainConfig& config);

/// run_sequence with Method::finetune.
SequenceResult finetune_baseline(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                                 TrainConfig config);

/// The network run_sequence starts task 1 from (same seed stream; in
/// multi-head mode with task 1's head attached).
Network initial_network(const std::vector<TaskSpec>& tasks, const ModelSpec& model,
                        const TrainConfig& config);

} // namespace ucl
