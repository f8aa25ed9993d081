#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <optional>

#include "oracles.hpp"
#include "ucl/errors.hpp"
#include "ucl/trainer.hpp"

using namespace ucl;

namespace {

TrainConfig quick_config(int epochs = 3) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.lr_mu = 1e-2;
    c.lr_rho = 1e-2;
    c.seed = 4;
    return c;
}

// Plain loops: relu hidden layers, linear output, bias as the last mu column.
int loop_predict(const Network& net, int head, const Matrix& x, Eigen::Index row) {
    std::vector<double> act(x.row(row).begin(), x.row(row).end());
    const auto path = net.path(head);
    for (std::size_t k = 0; k < path.size(); ++k) {
        const Matrix& mu = path[k]->mu;
        std::vector<double> next(static_cast<std::size_t>(mu.rows()));
        for (Eigen::Index i = 0; i < mu.rows(); ++i) {
            double z = mu(i, mu.cols() - 1);
            for (Eigen::Index j = 0; j + 1 < mu.cols(); ++j) z += mu(i, j) * act[static_cast<std::size_t>(j)];
            next[static_cast<std::size_t>(i)] = (k + 1 < path.size()) ? std::max(z, 0.0) : z;
        }
        act = std::move(next);
    }
    int best = 0;
    for (std::size_t c = 1; c < act.size(); ++c) {
        if (act[c] > act[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    }
    return best;
}

double mean_sigma(const Network& net) {
    double s = 0.0;
    Eigen::Index n = 0;
    for (const auto& l : net.shared()) {
        s += l.sigma().sum();
        n += l.rho.size();
    }
    return s / static_cast<double>(n);
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("argmax ties go to the lowest index") {
    Eigen::RowVectorXd equal = Eigen::RowVectorXd::Constant(10, 0.3);
    CHECK(argmax_lowest(equal) == 0);
    Eigen::RowVectorXd v(4);
    v << 1.0, 3.0, 3.0, -2.0;
    CHECK(argmax_lowest(v) == 1);
}

TEST_CASE("evaluate matches a loop oracle") {
    Rng rng(21);
    const Network net = oracle::random_network(rng, 6, {5, 4}, 3);
    LabeledDataset data;
    data.images = oracle::random_matrix(rng, 100, 6);
    data.num_classes = 3;
    for (int k = 0; k < 100; ++k) data.labels.push_back(static_cast<int>(rng.below(3)));
    int correct = 0;
    for (Eigen::Index r = 0; r < 100; ++r) correct += loop_predict(net, 0, data.images, r) == data.labels[static_cast<std::size_t>(r)];
    CHECK(evaluate(net, 0, data) == correct / 100.0);

    // zero weights: every logit ties, so every prediction is class 0
    Network zero = net;
    for (auto& l : zero.shared()) l.mu.setZero();
    for (auto& l : zero.heads()) l.mu.setZero();
    const double zeros = static_cast<double>(std::count(data.labels.begin(), data.labels.end(), 0));
    CHECK(evaluate(zero, 0, data) == zeros / 100.0);
}

TEST_CASE("accuracy matrix") {
    AccuracyMatrix a(3);
    a.set(0, 0, 0.9);
    a.set(1, 0, 0.8);
    a.set(1, 1, 0.6);
    CHECK(a.populated(0) == 1);
    CHECK(a.populated(1) == 2);
    CHECK(a.populated(2) == 0);
    CHECK(a.average(1) == doctest::Approx(0.7));
    CHECK(a.at(1, 0) == 0.8);
    CHECK_THROWS_AS(a.set(0, 1, 0.5), ShapeError);
    CHECK_THROWS_AS((void)a.at(3, 0), ShapeError);
}

TEST_CASE("configuration validation") {
    const auto tasks = synthetic_gaussian_tasks(1, 20, 2, 0);
    ModelSpec model{{4}};
    TrainConfig c = quick_config();
    c.epochs = 0;
    CHECK_THROWS_AS(run_sequence(tasks, model, c), ConfigError);
    c = quick_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(run_sequence(tasks, model, c), ConfigError);
    c = quick_config();
    c.regularizer.beta = 0.0;
    CHECK_THROWS_AS(run_sequence(tasks, model, c), ConfigError);
    c.method = Method::finetune;
    CHECK_NOTHROW(run_sequence(tasks, model, c));
    CHECK_THROWS_AS(run_sequence({}, model, quick_config()), ConfigError);
}

TEST_CASE("parameters carry over between tasks and Adam restarts") {
    const auto tasks = synthetic_gaussian_tasks(2, 40, 3, 2);
    const ModelSpec model{{8}};
    const TrainConfig c = quick_config();
    Network net = initial_network(tasks, model, c);
    TaskSnapshot snap = snapshot_posterior(net);
    Rng rng(1);

    int calls = 0;
    std::optional<Network> seen;
    bool fresh = false;
    auto hook = [&](const Network& n, const Adam& adam) {
        ++calls;
        seen = n;
        fresh = adam.steps() == 0 && adam.moments_are_zero();
    };
    train_task(net, tasks[0], 0, snap, c, rng, hook);
    CHECK(calls == 1);
    CHECK(fresh);
    CHECK(seen->shared()[0].mu == initial_network(tasks, model, c).shared()[0].mu);

    const Network after_first = net;
    snap = snapshot_posterior(net);
    fresh = false;
    train_task(net, tasks[1], 0, snap, c, rng, hook);
    CHECK(calls == 2);
    CHECK(fresh);
    for (std::size_t k = 0; k < net.shared().size(); ++k) {
        CHECK(seen->shared()[k].mu == after_first.shared()[k].mu);
        CHECK(seen->shared()[k].rho == after_first.shared()[k].rho);
    }
    CHECK(seen->heads()[0].mu == after_first.heads()[0].mu);
    CHECK(net.shared()[0].mu != after_first.shared()[0].mu);
}

TEST_CASE("run_sequence structure and determinism") {
    const auto tasks = synthetic_gaussian_tasks(3, 30, 2, 8);
    const ModelSpec model{{6, 6}};
    const TrainConfig c = quick_config(2);
    const SequenceResult a = run_sequence(tasks, model, c);
    const SequenceResult b = run_sequence(tasks, model, c);

    CHECK(a.accuracy.tasks() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(a.accuracy.populated(t) == t + 1);
        for (int i = 0; i <= t; ++i) {
            CHECK(a.accuracy.at(t, i) >= 0.0);
            CHECK(a.accuracy.at(t, i) <= 1.0);
        }
    }
    CHECK(a.accuracy == b.accuracy);
    for (std::size_t k = 0; k < a.network.shared().size(); ++k) {
        CHECK(a.network.shared()[k].mu == b.network.shared()[k].mu);
        CHECK(a.network.shared()[k].rho == b.network.shared()[k].rho);
    }
    REQUIRE(a.sigma_history.size() == 3);
    for (const auto& snap : a.sigma_history) {
        REQUIRE(snap.size() == 3);
        CHECK(snap[0].size() == 6);
        CHECK(snap[2].size() == 2);
        for (const auto& v : snap) CHECK(v.minCoeff() > 0.0);
    }
    CHECK(a.logs.size() == 3);
    CHECK(a.logs[0].epochs.size() == 2);
    CHECK(a.seconds_per_task.size() == 3);

    TrainConfig other = c;
    other.seed = 5;
    CHECK(run_sequence(tasks, model, other).network.shared()[0].mu != a.network.shared()[0].mu);

    const SequenceResult one = run_sequence({tasks[0]}, model, c);
    CHECK(one.accuracy.tasks() == 1);
    CHECK(one.accuracy.populated(0) == 1);
}

TEST_CASE("multi-head sequences attach one head per task") {
    const auto tasks = synthetic_gaussian_tasks(3, 20, 2, 3);
    TrainConfig c = quick_config(1);
    c.head_mode = HeadMode::multi;
    const SequenceResult r = run_sequence(tasks, ModelSpec{{5}}, c);
    CHECK(r.network.head_count() == 3);
    CHECK(r.accuracy.populated(2) == 3);
    CHECK(initial_network(tasks, ModelSpec{{5}}, c).head_count() == 1);
    // the initial network is the one task 1 starts from
    const Network init = initial_network(tasks, ModelSpec{{5}}, c);
    const SequenceResult first = run_sequence({tasks[0]}, ModelSpec{{5}}, c);
    CHECK(first.network.heads()[0].mu.rows() == init.heads()[0].mu.rows());
}

TEST_CASE("fine-tuning keeps rho and matches the method switch") {
    const auto tasks = synthetic_gaussian_tasks(2, 30, 2, 6);
    const ModelSpec model{{5}};
    TrainConfig c = quick_config(2);
    const Network init = initial_network(tasks, model, c);
    const SequenceResult ft = finetune_baseline(tasks, model, c);
    CHECK(ft.sigma_history.empty());
    for (std::size_t k = 0; k < init.shared().size(); ++k) CHECK(ft.network.shared()[k].rho == init.shared()[k].rho);
    CHECK(ft.network.heads()[0].rho == init.heads()[0].rho);

    c.method = Method::finetune;
    const SequenceResult direct = run_sequence(tasks, model, c);
    CHECK(direct.accuracy == ft.accuracy);
    CHECK(direct.network.shared()[0].mu == ft.network.shared()[0].mu);
}

TEST_CASE("learns separable synthetic data") {
    const auto tasks = synthetic_gaussian_tasks(1, 200, 2, 11);
    TrainConfig c = quick_config(50);
    c.lr_mu = 1e-3;
    c.lr_rho = 1e-3;
    const SequenceResult r = run_sequence(tasks, ModelSpec{{16, 16}}, c);
    CHECK(evaluate(r.network, 0, tasks[0].train) >= 0.99);

    TrainConfig det = quick_config(20);
    det.method = Method::finetune;
    const SequenceResult linear = run_sequence(tasks, ModelSpec{{}}, det);
    CHECK(linear.network.depth() == 1);
    CHECK(evaluate(linear.network, 0, tasks[0].train) > 0.99);
}

TEST_CASE("a dominant sigma term drives sigma to its minimizer") {
    const auto tasks = synthetic_gaussian_tasks(2, 100, 2, 13);
    const ModelSpec model{{8}};
    TrainConfig c = quick_config(3);
    Network base = initial_network(tasks, model, c);
    Rng rng0(3);
    train_task(base, tasks[0], 0, snapshot_posterior(base), c, rng0);
    const TaskSnapshot snap = snapshot_posterior(base);
    const Vector prev = snap.shared()[0].sigma;

    auto distance_after = [&](double beta, bool relax) {
        TrainConfig tc = c;
        tc.epochs = 5;
        tc.regularizer.beta = beta;
        tc.regularizer.enable_sigma_relax = relax;
        Network net = base;
        Rng rng(9);
        train_task(net, tasks[1], 0, snap, tc, rng);
        const Vector sigma = net.shared()[0].sigma();
        double worst = 0.0;
        double d = 0.0;
        for (Eigen::Index i = 0; i < sigma.size(); ++i) {
            const double target = sigma_term_minimizer(prev[i], relax);
            d += std::abs(sigma[i] - target);
            worst = std::max(worst, std::max(sigma[i] / prev[i], prev[i] / sigma[i]));
        }
        return std::pair{d, worst};
    };
    const auto strong = distance_after(1e6, true);
    const auto weak = distance_after(1e-3, true);
    CHECK(strong.first < weak.first);
    CHECK(mean_sigma(base) > 0.0);

    // without relaxation the minimizer is sigma_prev: sigma stays put
    const auto frozen = distance_after(1e6, false);
    CHECK(frozen.second <= 1.05);
}

TEST_CASE("per-epoch sigma capture") {
    const auto tasks = synthetic_gaussian_tasks(1, 20, 2, 1);
    TrainConfig c = quick_config(3);
    c.capture_sigma_per_epoch = true;
    const SequenceResult r = run_sequence(tasks, ModelSpec{{4}}, c);
    REQUIRE(r.logs[0].epochs.size() == 3);
    for (const auto& e : r.logs[0].epochs) {
        CHECK(e.sigma.size() == 2);
        CHECK(std::isfinite(e.data_loss));
        CHECK(e.regularizer >= 0.0);
    }
    CHECK(r.logs[0].epochs.back().sigma[0] == r.sigma_history[0][0]);
}

}
