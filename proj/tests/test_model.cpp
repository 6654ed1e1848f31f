#include "oracles.hpp"

#include <doctest.h>

#include <numeric>

using namespace acs;

namespace
{
Matrix batch(acs::Rng& rng, int n, int d)
{
    return oracle::random_matrix(n, d, rng);
}

std::vector<int> labels(acs::Rng& rng, int n, int k)
{
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y)
        v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    return y;
}
} // namespace

TEST_CASE("zero-weight net gives ln 2 for two classes")
{
    const ModelParams p = ModelParams::zeros({3, 4, 2}, Activation::relu);
    Matrix x(1, 3);
    x << 0.5, -1.0, 2.0;
    const auto r = forward_loss(p, x, Target::hard({1}));
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("soft target equal to the model output gives its entropy")
{
    acs::Rng rng(7);
    const ModelParams p = oracle::random_net({4, 5, 3}, Activation::relu, 11);
    const Matrix x = batch(rng, 6, 4);
    const Matrix probs = forward(p, x).probs;
    const auto r = forward_loss(p, x, Target::soft(probs));
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index c = 0; c < probs.cols(); ++c)
            entropy -= probs(i, c) * std::log(probs(i, c));
    CHECK(r.loss == doctest::Approx(entropy / 6.0).epsilon(1e-12));
}

TEST_CASE("single-sample loss matches a straight-line recomputation")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        acs::Rng rng(seed);
        const ModelParams p = oracle::random_net({5, 7, 3}, Activation::relu, seed + 100);
        const Matrix x = batch(rng, 1, 5);
        const int y = static_cast<int>(seed % 3);
        const double expected = oracle::soft_ce(oracle::logits(p, oracle::row(x, 0)), oracle::onehot(y, 3));
        CHECK(std::abs(forward_loss(p, x, Target::hard({y})).loss - expected) < 1e-12);
    }
}

TEST_CASE("softmax is stable and normalized for extreme logits")
{
    Matrix z(3, 4);
    z << 1000, -1000, 0, 999, -800, -801, -799, -802, 0, 0, 0, 0;
    const Matrix p = softmax(z);
    CHECK(p.allFinite());
    for (Eigen::Index i = 0; i < 3; ++i)
    {
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-9);
        CHECK((p.row(i).array() >= 0.0).all());
    }
    CHECK(log_softmax(z).allFinite());
}

TEST_CASE("bias-free net with zero input has zero input-layer weight gradient")
{
    ModelParams p = oracle::random_net({3, 4, 2}, Activation::identity, 5);
    for (auto& b : p.biases)
        b.setZero();
    const Matrix x = Matrix::Zero(2, 3);
    const Target t = Target::hard({0, 1});
    const auto r = forward_loss(p, x, t);
    const ModelParams g = backward_grads(p, r.cache, t);
    CHECK(g.weights[0].norm() == 0.0);
}

TEST_CASE("backward_grads matches independent central differences")
{
    const std::vector<std::vector<int>> shapes = {{2, 3}, {3, 4, 2}, {4, 6, 3}, {8, 16, 4}, {5, 8, 6, 3}};
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        const auto& sizes = shapes[seed % shapes.size()];
        const Activation act = seed % 2 ? Activation::relu : Activation::identity;
        acs::Rng rng(seed + 1);
        const ModelParams p = oracle::random_net(sizes, act, seed + 31);
        const Matrix x = batch(rng, 5, sizes.front());
        const auto y = labels(rng, 5, sizes.back());
        const Target t = Target::hard(y);
        const ModelParams g = backward_grads(p, forward_loss(p, x, t).cache, t);

        ModelParams probe = p;
        const Vector fd = oracle::central_diff(
            [&](const Vector& th) {
                probe.assign(th);
                return oracle::mean_ce(probe, x, y);
            },
            p.flatten(), 1e-5);
        CHECK(oracle::rel_err(g.flatten(), fd) < 1e-5);
    }
}

TEST_CASE("duplicating a sample leaves the mean gradient unchanged")
{
    acs::Rng rng(3);
    const ModelParams p = oracle::random_net({3, 5, 3}, Activation::relu, 9);
    const Matrix one = batch(rng, 1, 3);
    Matrix two(2, 3);
    two << one, one;
    const Target t1 = Target::hard({2});
    const Target t2 = Target::hard({2, 2});
    const Vector g1 = backward_grads(p, forward(p, one), t1).flatten();
    const Vector g2 = backward_grads(p, forward(p, two), t2).flatten();
    CHECK((g1 - g2).lpNorm<Eigen::Infinity>() < 1e-15);
}

TEST_CASE("per-sample last-layer rows")
{
    SUBCASE("confidently correct sample has a zero row")
    {
        ModelParams p = ModelParams::zeros({2, 3}, Activation::identity);
        p.biases[0] << 0.0, 800.0, 0.0;
        Matrix x(1, 2);
        x << 0.1, 0.2;
        const Matrix rows = per_sample_last_layer_grad(p, x, Target::hard({1}));
        CHECK(rows.norm() == 0.0);
    }
    SUBCASE("mean of rows is the last-layer block of backward_grads")
    {
        acs::Rng rng(4);
        const ModelParams p = oracle::random_net({4, 6, 3}, Activation::relu, 12);
        const Matrix x = batch(rng, 9, 4);
        const Target t = Target::hard(labels(rng, 9, 3));
        const Matrix rows = per_sample_last_layer_grad(p, x, t);
        CHECK(rows.cols() == p.last_layer_size());
        const Vector full = backward_grads(p, forward(p, x), t).flatten();
        const Vector mean = rows.colwise().mean().transpose();
        CHECK((mean - full.tail(p.last_layer_size())).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SUBCASE("each row matches finite differences on the last layer")
    {
        for (std::uint64_t seed = 0; seed < 5; ++seed)
        {
            acs::Rng rng(seed + 50);
            const ModelParams p = oracle::random_net({3, 5, 4}, Activation::relu, seed + 60);
            const Matrix x = batch(rng, 4, 3);
            const auto y = labels(rng, 4, 4);
            const Matrix rows = per_sample_last_layer_grad(p, x, Target::hard(y));
            const Eigen::Index last = p.last_layer_size();
            const Vector flat = p.flatten();
            for (Eigen::Index i = 0; i < 4; ++i)
            {
                ModelParams probe = p;
                const Vector fd = oracle::central_diff(
                    [&](const Vector& tail) {
                        Vector th = flat;
                        th.tail(last) = tail;
                        probe.assign(th);
                        return oracle::soft_ce(oracle::logits(probe, oracle::row(x, i)),
                                               oracle::onehot(y[static_cast<std::size_t>(i)], 4));
                    },
                    flat.tail(last), 1e-5);
                CHECK(oracle::rel_err(rows.row(i).transpose(), fd) < 1e-5);
            }
        }
    }
}

TEST_CASE("finite_diff_grad")
{
    SUBCASE("exact on a quadratic")
    {
        const Vector at = Vector::LinSpaced(4, -1.0, 2.0);
        const Vector g = finite_diff_grad([](const Vector& v) { return 0.5 * v.squaredNorm() + 3.0 * v.sum(); }, at,
                                          1e-3);
        CHECK((g - (at.array() + 3.0).matrix()).lpNorm<Eigen::Infinity>() < 1e-9);
    }
    SUBCASE("agrees with backward_grads")
    {
        acs::Rng rng(8);
        const ModelParams p = oracle::random_net({3, 4, 3}, Activation::identity, 2);
        const Matrix x = batch(rng, 3, 3);
        const Target t = Target::hard({0, 2, 1});
        const Vector fd = finite_diff_grad(p, x, t, 1e-5).flatten();
        const Vector an = backward_grads(p, forward(p, x), t).flatten();
        CHECK(oracle::rel_err(fd, an) < 1e-6);
    }
    SUBCASE("step 0 is rejected")
    {
        const ModelParams p = ModelParams::zeros({2, 2}, Activation::identity);
        CHECK_THROWS_AS(finite_diff_grad(p, Matrix::Zero(1, 2), Target::hard({0}), 0.0), InvalidArgument);
    }
}

TEST_CASE("loss is invariant under batch permutation")
{
    acs::Rng rng(21);
    const ModelParams p = oracle::random_net({4, 8, 3}, Activation::relu, 22);
    const Matrix x = batch(rng, 12, 4);
    const auto y = labels(rng, 12, 3);
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix xp(12, 4);
    std::vector<int> yp(12);
    for (int i = 0; i < 12; ++i)
    {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    CHECK(std::abs(forward_loss(p, x, Target::hard(y)).loss - forward_loss(p, xp, Target::hard(yp)).loss) < 1e-12);
}

TEST_CASE("flatten and assign round-trip, last layer is the tail")
{
    const ModelParams p = oracle::random_net({3, 4, 5, 2}, Activation::relu, 77);
    ModelParams q = p.zeros_like();
    q.assign(p.flatten());
    CHECK(q.flatten() == p.flatten());
    CHECK(p.last_layer_size() == (5 + 1) * 2);
    const Vector tail = p.flatten().tail(p.last_layer_size());
    CHECK(tail(0) == p.weights[2](0, 0));
    CHECK(tail(4) == p.weights[2](0, 4));
    CHECK(tail(5) == p.weights[2](1, 0));
    CHECK(tail(10) == p.biases[2](0));
}

TEST_CASE("errors")
{
    const ModelParams p = oracle::random_net({3, 4, 2}, Activation::relu, 1);
    CHECK_THROWS_AS(forward(p, Matrix::Zero(2, 4)), DimensionError);
    Matrix bad = Matrix::Zero(1, 3);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(forward(p, bad), NumericError);
    CHECK_THROWS_AS(forward_loss(p, Matrix::Zero(1, 3), Target::hard({2})), InvalidArgument);
    CHECK_THROWS_AS(forward_loss(p, Matrix::Zero(2, 3), Target::hard({0})), DimensionError);

    const ModelParams other = oracle::random_net({3, 6, 2}, Activation::relu, 1);
    const ForwardCache stale = forward(other, Matrix::Zero(2, 3));
    CHECK_THROWS_AS(backward_grads(p, stale, Target::hard({0, 1})), CacheError);

    Dataset d;
    d.features = Matrix::Zero(2, 2);
    d.labels = {0, 3};
    d.num_classes = 2;
    CHECK_THROWS_AS(d.validate(), InvalidArgument);
}
