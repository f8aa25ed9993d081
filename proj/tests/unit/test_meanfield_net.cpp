#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "ucl/errors.hpp"
#include "ucl/meanfield_net.hpp"
#include "ucl/trainer.hpp"

using namespace ucl;

TEST_SUITE("meanfield_net") {

TEST_CASE("softplus round trip") {
    const double rho = softplus_inverse(0.06);
    CHECK(rho == doctest::Approx(std::log(std::exp(0.06) - 1.0)).epsilon(1e-14));
    CHECK(rho == doctest::Approx(-2.7833).epsilon(1e-4));
    CHECK(std::abs(softplus(rho) - 0.06) <= 1e-12);
    for (double s = 1e-6; s <= 10.0; s *= 1.7) {
        CHECK(std::abs(softplus(softplus_inverse(s)) - s) / s <= 1e-10);
    }
    CHECK_THROWS_AS(softplus_inverse(0.0), DomainError);
    CHECK_THROWS_AS(softplus_inverse(-1.0), DomainError);
    CHECK(sigmoid(0.0) == 0.5);
    // softplus' = sigmoid
    for (double x : {-30.0, -2.0, 0.3, 5.0, 40.0}) {
        const double h = 1e-6;
        CHECK(sigmoid(x) == doctest::Approx((softplus(x + h) - softplus(x - h)) / (2 * h)).epsilon(1e-8));
    }
}

TEST_CASE("constant init: every node starts at sigma_init, bias column zero") {
    Rng rng(0);
    const GaussianNodeLayer l = init_layer(50, 30, InitScheme::constant(0.06).resolve(50), rng);
    CHECK(l.mu.rows() == 30);
    CHECK(l.mu.cols() == 51);
    for (Eigen::Index i = 0; i < l.n_out(); ++i) {
        CHECK(std::abs(l.sigma()[i] - 0.06) <= 1e-12);
        CHECK(l.mu(i, 50) == 0.0);
    }
    // uniform on +-sqrt(3 var) with var = 2/50
    const double bound = std::sqrt(3.0 * 2.0 / 50.0);
    CHECK(l.mu.leftCols(50).cwiseAbs().maxCoeff() <= bound);
    const double var = l.mu.leftCols(50).array().square().mean();
    CHECK(var == doctest::Approx(2.0 / 50.0).epsilon(0.1));

    CHECK_THROWS_AS(init_layer(3, 2, LayerInit{0.0, 0.1}, rng), ConfigError);
    CHECK_THROWS_AS(init_layer(3, 2, LayerInit{-0.1, 0.1}, rng), ConfigError);
}

TEST_CASE("adaptive init") {
    const LayerInit a = adaptive_sigma_init(400, 0.5);
    CHECK(a.sigma_init == doctest::Approx(0.05).epsilon(1e-14));
    CHECK(a.mu_variance == doctest::Approx(0.0025).epsilon(1e-14));
    const LayerInit b = adaptive_sigma_init(2, 1.0);
    CHECK(b.sigma_init == doctest::Approx(1.0));
    CHECK(b.mu_variance == 0.0);
    CHECK(adaptive_sigma_init(10, 0.0).sigma_init == 0.0);
    CHECK_THROWS_AS(adaptive_sigma_init(10, 1.5), ConfigError);
    CHECK_THROWS_AS(adaptive_sigma_init(10, -0.1), ConfigError);
    // r = 0 gives sigma_init = 0, which layer construction rejects
    Rng rng(0);
    CHECK_THROWS_AS(init_layer(10, 3, adaptive_sigma_init(10, 0.0), rng), ConfigError);
    TrainConfig config;
    config.init = InitScheme::adaptive(2.0);
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("sample_weights") {
    GaussianNodeLayer l;
    l.mu = Matrix::Constant(2, 3, 0.1);
    l.rho = Vector::Constant(2, softplus_inverse(0.06));
    CHECK(sample_weights(l, Matrix::Zero(2, 3)) == l.mu);
    Matrix eps = Matrix::Constant(2, 3, 1.5);
    CHECK(sample_weights(l, eps)(1, 2) == doctest::Approx(0.19).epsilon(1e-14));
    CHECK_THROWS_AS(sample_weights(l, Matrix::Zero(3, 3)), ShapeError);
}

TEST_CASE("sampled weights average to mu; rows follow their own sigma") {
    Rng rng(11);
    GaussianNodeLayer l;
    l.mu = Matrix(2, 2);
    l.mu << 0.3, -0.2, 1.0, 0.0;
    l.rho = Vector(2);
    l.rho << softplus_inverse(0.1), softplus_inverse(0.5);
    const int n = 100000;
    Matrix sum = Matrix::Zero(2, 2);
    Matrix sq = Matrix::Zero(2, 2);
    for (int s = 0; s < n; ++s) {
        Matrix eps(2, 2);
        for (Eigen::Index i = 0; i < 4; ++i) eps.data()[i] = rng.normal();
        const Matrix w = sample_weights(l, eps);
        sum += w;
        sq += (w - l.mu).cwiseProduct(w - l.mu);
    }
    const Matrix mean = sum / n;
    for (Eigen::Index i = 0; i < 2; ++i) {
        const double sigma = l.sigma()[i];
        for (Eigen::Index j = 0; j < 2; ++j) {
            CHECK(std::abs(mean(i, j) - l.mu(i, j)) <= 3.0 * sigma / std::sqrt(double(n)));
            CHECK(std::sqrt(sq(i, j) / n) == doctest::Approx(sigma).epsilon(0.02));
        }
    }
}

TEST_CASE("perturbing rho_i changes only row i of the sampled weights") {
    Rng rng(5);
    Network net = oracle::random_network(rng, 4, {3}, 2);
    const SampleDraw draw = draw_noise(net, 0, rng);
    const Matrix before = sample_weights(net.shared()[0], draw.epsilon[0]);
    net.shared()[0].rho[1] += 0.5;
    const Matrix after = sample_weights(net.shared()[0], draw.epsilon[0]);
    CHECK(before.row(0) == after.row(0));
    CHECK(before.row(2) == after.row(2));
    CHECK(before.row(1) != after.row(1));
}

TEST_CASE("forward examples") {
    Rng rng(0);
    SUBCASE("zero weights give uniform probabilities") {
        Network net = Network::build(5, std::vector<int>{4}, 3, HeadMode::single,
                                     InitScheme::constant(0.06), rng);
        for (auto& l : net.shared()) l.mu.setZero();
        for (auto& l : net.heads()) l.mu.setZero();
        const Matrix x = oracle::random_matrix(rng, 6, 5);
        const ForwardPass p = forward(net, 0, x);
        CHECK(p.logits.cwiseAbs().maxCoeff() == 0.0);
        std::vector<int> labels(6, 1);
        CHECK(cross_entropy(p.logits, labels) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    }
    SUBCASE("one input, one output: mu = [2, 0], x = 3 gives logit 6") {
        GaussianNodeLayer l;
        l.mu = Matrix(1, 2);
        l.mu << 2.0, 0.0;
        l.rho = Vector::Constant(1, softplus_inverse(0.06));
        const Network net({}, {l}, HeadMode::single, {0.06});
        const Matrix x = Matrix::Constant(1, 1, 3.0);
        CHECK(forward(net, 0, x).logits(0, 0) == 6.0);
    }
    SUBCASE("sample mode with rho = -40 equals mean mode") {
        Network net = oracle::random_network(rng, 6, {5, 4}, 3);
        for (auto& l : net.shared()) l.rho.setConstant(-40.0);
        for (auto& l : net.heads()) l.rho.setConstant(-40.0);
        const Matrix x = oracle::random_matrix(rng, 7, 6);
        const SampleDraw draw = draw_noise(net, 0, rng);
        const Matrix a = forward(net, 0, x, draw).logits;
        const Matrix b = forward(net, 0, x).logits;
        CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("mean mode is pure") {
        Network net = oracle::random_network(rng, 6, {5}, 3);
        const Matrix x = oracle::random_matrix(rng, 4, 6);
        CHECK(forward(net, 0, x).logits == forward(net, 0, x).logits);
        CHECK(predict_logits(net, 0, x) == forward(net, 0, x).logits);
    }
    SUBCASE("errors") {
        Network net = oracle::random_network(rng, 6, {5}, 3);
        CHECK_THROWS_AS(forward(net, 0, Matrix::Zero(2, 5)), ShapeError);
        CHECK_THROWS_AS(forward(net, 1, Matrix::Zero(2, 6)), ShapeError);
        Matrix bad = Matrix::Zero(2, 6);
        bad(1, 3) = std::nan("");
        CHECK_THROWS(forward(net, 0, bad));
        const ForwardPass p = forward(net, 0, Matrix::Zero(2, 6));
        std::vector<int> labels = {0, 3};
        CHECK_THROWS_AS(backward_data_loss(net, p, labels), ShapeError);
    }
}

TEST_CASE("multi-head network grows one head at a time") {
    Rng rng(1);
    Network net = Network::build(4, std::vector<int>{3}, 0, HeadMode::multi,
                                 InitScheme::constant(0.06), rng);
    CHECK(net.head_count() == 0);
    CHECK(net.add_head(2, InitScheme::constant(0.06), rng) == 0);
    CHECK(net.add_head(5, InitScheme::constant(0.06), rng) == 1);
    CHECK(net.classes(1) == 5);
    CHECK(forward(net, 1, Matrix::Zero(2, 4)).logits.cols() == 5);
    Network single = oracle::random_network(rng, 4, {3}, 2);
    CHECK_THROWS_AS(single.add_head(2, InitScheme::constant(0.06), rng), ShapeError);
    CHECK_THROWS_AS(Network::build(4, std::vector<int>{}, 0, HeadMode::multi, InitScheme::constant(0.06), rng),
                    ConfigError);
}

TEST_CASE("zero-noise linear layer: gradient equals the closed-form least-squares gradient") {
    Rng rng(3);
    GaussianNodeLayer l;
    l.mu = oracle::random_matrix(rng, 2, 4);
    l.rho = Vector::Constant(2, softplus_inverse(0.1));
    const Network net({}, {l}, HeadMode::single, {0.1});
    const Matrix x = oracle::random_matrix(rng, 5, 3);
    const Matrix y = oracle::random_matrix(rng, 5, 2);
    SampleDraw zero;
    zero.epsilon = {Matrix::Zero(2, 4)};
    const ForwardPass p = forward(net, 0, x, zero);
    // L = 1/2 ||X W^T + b - Y||^2  =>  dL/dW = (XW^T + b - Y)^T X, dL/db = column sums
    const Matrix residual = p.logits - y;
    const NetworkGradients g = backward(net, p, residual);
    Matrix xa(5, 4);
    xa << x, Matrix::Ones(5, 1);
    const Matrix expected = residual.transpose() * xa;
    CHECK((g.heads[0].mu - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(g.heads[0].rho.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("epsilon = 0 gives zero rho gradients") {
    Rng rng(4);
    const Network net = oracle::random_network(rng, 5, {4, 4}, 3);
    SampleDraw zero = draw_noise(net, 0, rng);
    for (auto& e : zero.epsilon) e.setZero();
    const Matrix x = oracle::random_matrix(rng, 8, 5);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
    const DataLossResult r = backward_data_loss(net, forward(net, 0, x, zero), labels);
    for (const auto& g : r.grads.shared) CHECK(g.rho.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& g : r.grads.heads) CHECK(g.rho.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data-loss gradients match central finite differences") {
    Rng rng(2024);
    int configs = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int in = 1 + static_cast<int>(rng.below(6));
        std::vector<int> hidden;
        const int depth = static_cast<int>(rng.below(3));  // 1 to 3 layers in total
        for (int k = 0; k < depth; ++k) hidden.push_back(1 + static_cast<int>(rng.below(10)));
        const int classes = 2 + static_cast<int>(rng.below(5));
        const Network net = oracle::random_network(rng, in, hidden, classes);
        const int batch = 1 + static_cast<int>(rng.below(8));
        const Matrix x = oracle::random_matrix(rng, batch, in);
        std::vector<int> labels(static_cast<std::size_t>(batch));
        for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
        const SampleDraw draw = draw_noise(net, 0, rng);
        const auto report = oracle::fd_data_loss(net, 0, x, labels, draw);
        CHECK(report.max_rel <= 1e-4);
        CHECK(report.checked > 0);
        ++configs;
    }
    CHECK(configs == 30);
}

TEST_CASE("checkpointed-free determinism: same seed, same parameters after training steps") {
    auto run = [] {
        Rng rng(9);
        Network net = oracle::random_network(rng, 4, {6}, 3);
        Adam adam(net, 1e-2, 1e-2, {});
        const Matrix x = oracle::random_matrix(rng, 16, 4);
        std::vector<int> labels(16);
        for (auto& y : labels) y = static_cast<int>(rng.below(3));
        for (int step = 0; step < 25; ++step) {
            const SampleDraw draw = draw_noise(net, 0, rng);
            adam.step(net, backward_data_loss(net, forward(net, 0, x, draw), labels).grads);
        }
        return net;
    };
    const Network a = run();
    const Network b = run();
    CHECK(a.shared()[0].mu == b.shared()[0].mu);
    CHECK(a.shared()[0].rho == b.shared()[0].rho);
    CHECK(a.heads()[0].mu == b.heads()[0].mu);
    CHECK(a.heads()[0].rho == b.heads()[0].rho);
}

}
