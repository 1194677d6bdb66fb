#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vflbed/mlp.hpp"
#include "vflbed/rng.hpp"

using namespace vflbed;

namespace {

double loss_of(const MLPModel& m, const DenseMatrix& x, const std::vector<int>& y) {
    return softmax_cross_entropy(mlp_forward(m, x), y).mean_loss();
}

struct FdCase {
    MLPModel model;
    DenseMatrix x;
    std::vector<int> y;
};

// Random model + batch whose hidden pre-activations sit safely away from the
// ReLU kink, so central differences are valid.
FdCase make_fd_case(std::uint64_t seed) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(seed + attempt * 7919);
        std::vector<std::size_t> dims;
        dims.push_back(1 + rng.uniform_index(5));
        const std::size_t hidden_layers = rng.uniform_index(3);
        for (std::size_t l = 0; l < hidden_layers; ++l) dims.push_back(1 + rng.uniform_index(6));
        const std::size_t classes = 2 + rng.uniform_index(4);
        dims.push_back(classes);

        FdCase c;
        c.model = MLPModel::init(dims, rng.stream("init"));
        const std::size_t batch = 1 + rng.uniform_index(8);
        c.x = DenseMatrix(batch, dims.front());
        for (double& v : c.x.data) v = rng.uniform(-2.0, 2.0);
        c.y.resize(batch);
        for (int& label : c.y) label = static_cast<int>(rng.uniform_index(classes));

        ForwardCache cache;
        mlp_forward(c.model, c.x, &cache);
        bool near_kink = false;
        for (std::size_t l = 0; l + 1 < c.model.layers.size(); ++l)
            for (double z : cache.preacts[l].data)
                if (std::abs(z) < 1e-4) near_kink = true;
        if (!near_kink) return c;
    }
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

} // namespace

TEST_CASE("backprop matches central finite differences") {
    const double h = 1e-6;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        FdCase c = make_fd_case(seed);
        ForwardCache cache;
        const DenseMatrix logits = mlp_forward(c.model, c.x, &cache);
        const SoftmaxCE ce = softmax_cross_entropy(logits, c.y);
        const Gradients g = mlp_backward(c.model, cache, ce.error);
        const double inv_b = 1.0 / static_cast<double>(c.x.rows);

        double worst = 0.0;
        for (std::size_t l = 0; l < c.model.layers.size(); ++l) {
            for (std::size_t i = 0; i < c.model.layers[l].w.size(); ++i) {
                MLPModel p = c.model, q = c.model;
                p.layers[l].w.data[i] += h;
                q.layers[l].w.data[i] -= h;
                const double fd = (loss_of(p, c.x, c.y) - loss_of(q, c.x, c.y)) / (2.0 * h);
                worst = std::max(worst, rel_err(fd, g.layers[l].dw.data[i] * inv_b));
            }
            for (std::size_t i = 0; i < c.model.layers[l].b.size(); ++i) {
                MLPModel p = c.model, q = c.model;
                p.layers[l].b[i] += h;
                q.layers[l].b[i] -= h;
                const double fd = (loss_of(p, c.x, c.y) - loss_of(q, c.x, c.y)) / (2.0 * h);
                worst = std::max(worst, rel_err(fd, g.layers[l].db[i] * inv_b));
            }
        }
        INFO("seed " << seed << " worst parameter-gradient error " << worst);
        REQUIRE(worst < 1e-6);
    }
}

TEST_CASE("input gradients match central finite differences") {
    const double h = 1e-6;
    FdCase c = make_fd_case(77);
    ForwardCache cache;
    const DenseMatrix logits = mlp_forward(c.model, c.x, &cache);
    const SoftmaxCE ce = softmax_cross_entropy(logits, c.y);
    const Gradients g = mlp_backward(c.model, cache, ce.error);
    const double inv_b = 1.0 / static_cast<double>(c.x.rows);

    double worst = 0.0;
    for (std::size_t i = 0; i < c.x.size(); ++i) {
        DenseMatrix xp = c.x, xq = c.x;
        xp.data[i] += h;
        xq.data[i] -= h;
        const double fd = (loss_of(c.model, xp, c.y) - loss_of(c.model, xq, c.y)) / (2.0 * h);
        worst = std::max(worst, rel_err(fd, g.input_grad.data[i] * inv_b));
    }
    REQUIRE(worst < 1e-6);
}

TEST_CASE("two-layer input gradient equals the hand-chained expression") {
    // W1^T pass, ReLU gate, W2^T pass, written as explicit loops.
    MLPModel m = MLPModel::init({2, 3, 2}, Rng(1));
    m.layers[0].w.data = {0.5, -0.3, 0.2, 0.1, 0.4, -0.2};
    m.layers[0].b = {0.1, -0.2, 0.05};
    m.layers[1].w.data = {0.3, -0.1, 0.2, 0.6, -0.4, 0.25};
    m.layers[1].b = {0.05, -0.05};
    DenseMatrix x(1, 2);
    x.data = {0.7, -1.2};
    const std::vector<int> y = {1};

    ForwardCache cache;
    const DenseMatrix logits = mlp_forward(m, x, &cache);
    const SoftmaxCE ce = softmax_cross_entropy(logits, y);
    const Gradients g = mlp_backward(m, cache, ce.error);

    // Hand recomputation.
    double z1[3], a1[3];
    for (int j = 0; j < 3; ++j) {
        z1[j] = m.layers[0].b[j];
        for (int i = 0; i < 2; ++i) z1[j] += x.data[i] * m.layers[0].w.at(i, j);
        a1[j] = z1[j] > 0.0 ? z1[j] : 0.0;
    }
    double z2[2];
    for (int k = 0; k < 2; ++k) {
        z2[k] = m.layers[1].b[k];
        for (int j = 0; j < 3; ++j) z2[k] += a1[j] * m.layers[1].w.at(j, k);
    }
    const double zmax = std::max(z2[0], z2[1]);
    const double denom = std::exp(z2[0] - zmax) + std::exp(z2[1] - zmax);
    double eps[2];
    for (int k = 0; k < 2; ++k) eps[k] = std::exp(z2[k] - zmax) / denom - (k == 1 ? 1.0 : 0.0);
    double gate[3];
    for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 2; ++k) s += m.layers[1].w.at(j, k) * eps[k];
        gate[j] = z1[j] > 0.0 ? s : 0.0;
    }
    for (int i = 0; i < 2; ++i) {
        double expect = 0.0;
        for (int j = 0; j < 3; ++j) expect += m.layers[0].w.at(i, j) * gate[j];
        CHECK(g.input_grad.at(0, i) == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("zero input gives uniform class probabilities and log-C loss") {
    const MLPModel m = MLPModel::init({3, 2}, Rng(2));
    const DenseMatrix x(4, 3);  // all zeros; biases are zero at init
    const std::vector<int> y = {0, 1, 0, 1};
    const SoftmaxCE ce = softmax_cross_entropy(mlp_forward(m, x), y);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(ce.probs.at(i, 0) == 0.5);
        CHECK(ce.probs.at(i, 1) == 0.5);
    }
    CHECK(ce.mean_loss() == Catch::Approx(0.6931471805599453).margin(1e-15));
}

TEST_CASE("two-logit cross entropy matches the closed form") {
    DenseMatrix logits(1, 2);
    logits.data = {2.0, -2.0};
    const SoftmaxCE ce = softmax_cross_entropy(logits, std::vector<int>{0});
    CHECK(ce.losses[0] == Catch::Approx(std::log1p(std::exp(-4.0))).margin(1e-15));
    const double p1 = 1.0 / (1.0 + std::exp(4.0));
    CHECK(ce.probs.at(0, 1) == Catch::Approx(p1).margin(1e-16));
    CHECK(ce.error.at(0, 0) == Catch::Approx(-p1).margin(1e-16));
    CHECK(ce.error.at(0, 1) == Catch::Approx(p1).margin(1e-16));
}

TEST_CASE("saturated logits keep a tiny positive loss") {
    DenseMatrix logits(1, 2);
    logits.data = {10.0, -10.0};
    const SoftmaxCE ce = softmax_cross_entropy(logits, std::vector<int>{0});
    CHECK(ce.losses[0] == Catch::Approx(std::log1p(std::exp(-20.0))).margin(1e-16));
    CHECK(ce.losses[0] > 0.0);
    CHECK(ce.losses[0] < 1e-8);
}

TEST_CASE("huge logits stay finite through the shifted softmax") {
    DenseMatrix logits(2, 3);
    logits.data = {1000.0, 1000.0, -1000.0, 5000.0, 4999.0, 0.0};
    const SoftmaxCE ce = softmax_cross_entropy(logits, std::vector<int>{0, 1});
    CHECK(ce.probs.all_finite());
    for (double l : ce.losses) CHECK(std::isfinite(l));
    CHECK(ce.probs.at(0, 0) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("cross entropy rejects bad labels and shapes") {
    DenseMatrix logits(2, 2, 0.0);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 2}), InputError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{-1, 0}), InputError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0}), InputError);
    CHECK_THROWS_AS(softmax_cross_entropy(DenseMatrix(0, 2), std::vector<int>{}), InputError);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    SGDSchedule s(0.1, 10);
    CHECK(s.lr() == 0.1);
    for (int i = 0; i < 5; ++i) s.advance();
    CHECK(s.lr() == Catch::Approx(0.05).margin(1e-16));
    for (int i = 0; i < 20; ++i) s.advance();  // capped at total
    CHECK(s.current_step == 10);
    CHECK(s.lr() == 0.0);
    CHECK_THROWS_AS(SGDSchedule(0.1, 0), ConfigError);
    CHECK_THROWS_AS(SGDSchedule(-0.1, 5), ConfigError);
}

TEST_CASE("one descent step with hand numbers") {
    MLPModel m = MLPModel::init({1, 1}, Rng(3));
    m.layers[0].w.data = {1.0};
    m.layers[0].b = {0.5};
    Gradients g;
    g.layers.resize(1);
    g.layers[0].dw = DenseMatrix(1, 1);
    g.layers[0].dw.data = {2.0};
    g.layers[0].db = {4.0};
    sgd_step(m, g, 0.05);
    CHECK(m.layers[0].w.data[0] == 0.9);
    CHECK(m.layers[0].b[0] == 0.3);
}

TEST_CASE("zero gradients leave the model bit-identical") {
    MLPModel m = MLPModel::init({3, 4, 2}, Rng(4));
    const MLPModel before = m;
    Gradients g;
    g.layers.resize(2);
    g.layers[0].dw = DenseMatrix(3, 4);
    g.layers[0].db.assign(4, 0.0);
    g.layers[1].dw = DenseMatrix(4, 2);
    g.layers[1].db.assign(2, 0.0);
    sgd_step(m, g, 0.5);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        CHECK(m.layers[l].w.data == before.layers[l].w.data);
        CHECK(m.layers[l].b == before.layers[l].b);
    }
}

TEST_CASE("initialization is deterministic and bounded") {
    const MLPModel a = MLPModel::init({5, 7, 3}, Rng(9));
    const MLPModel b = MLPModel::init({5, 7, 3}, Rng(9));
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].w.data == b.layers[l].w.data);
        for (double bias : a.layers[l].b) CHECK(bias == 0.0);
        const double bound = std::sqrt(6.0 / static_cast<double>(a.layers[l].w.rows));
        for (double v : a.layers[l].w.data) {
            CHECK(v >= -bound);
            CHECK(v < bound);
        }
    }
    CHECK_THROWS_AS(MLPModel::init({4}, Rng(1)), ConfigError);
    CHECK_THROWS_AS(MLPModel::init({4, 0, 2}, Rng(1)), ConfigError);
}

TEST_CASE("argmax breaks ties toward the lower class") {
    DenseMatrix m(3, 3);
    m.data = {1.0, 3.0, 3.0, 2.0, 2.0, 2.0, -1.0, -5.0, 0.0};
    CHECK(argmax_rows(m) == std::vector<int>{1, 0, 2});
}

TEST_CASE("forward cache can be reused across passes") {
    const MLPModel m = MLPModel::init({2, 3, 2}, Rng(5));
    DenseMatrix x1(2, 2), x2(3, 2);
    Rng rng(6);
    for (double& v : x1.data) v = rng.uniform(-1.0, 1.0);
    for (double& v : x2.data) v = rng.uniform(-1.0, 1.0);
    ForwardCache cache;
    mlp_forward(m, x1, &cache);
    mlp_forward(m, x2, &cache);  // must fully reset
    REQUIRE(cache.inputs.size() == 2);
    CHECK(cache.inputs[0].rows == 3);
    const SoftmaxCE ce = softmax_cross_entropy(mlp_forward(m, x2), std::vector<int>{0, 1, 0});
    CHECK_NOTHROW(mlp_backward(m, cache, ce.error));
}
