#include "acs/adv_gradients.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace acs;

namespace
{
Dataset make_data(std::uint64_t seed, int n, int d, int k)
{
    acs::Rng rng(seed);
    Dataset data;
    data.features = oracle::random_matrix(n, d, rng);
    data.num_classes = k;
    for (int i = 0; i < n; ++i)
        data.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    return data;
}

GradientFeatures sample_features(const Matrix& rows)
{
    GradientFeatures f;
    f.rows = rows;
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        f.index_map.push_back({static_cast<int>(i)});
    return f;
}
} // namespace

TEST_CASE("adversarial features at epsilon 0 equal vanilla features")
{
    const Dataset data = make_data(1, 12, 4, 3);
    const ModelParams p = oracle::random_net({4, 6, 3}, Activation::relu, 2);
    AttackConfig attack;
    attack.epsilon = 0.0;
    const auto adv = adv_grad_features(p, data, {ObjectiveTag::adversarial_ce, 1.0}, attack);
    const auto van = adv_grad_features(p, data, {ObjectiveTag::vanilla, 1.0}, attack);
    CHECK(adv.rows == van.rows);
    CHECK(adv.unit_kind == UnitKind::sample);
    adv.validate(12);
}

TEST_CASE("mean of adversarial rows equals the last-layer gradient on the adversarial batch")
{
    const Dataset data = make_data(3, 15, 3, 4);
    const ModelParams p = oracle::random_net({3, 7, 4}, Activation::relu, 4);
    AttackConfig attack;
    attack.epsilon = 0.2;
    attack.step_size = 0.05;
    const auto f = adv_grad_features(p, data, {ObjectiveTag::adversarial_ce, 1.0}, attack);
    const Matrix x_adv = pgd_attack(p, data.features, Target::hard(data.labels), attack).x_adv;
    const Vector full = backward_grads(p, forward(p, x_adv), Target::hard(data.labels)).flatten();
    const Vector mean = f.rows.colwise().mean().transpose();
    CHECK((mean - full.tail(p.last_layer_size())).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("TRADES terms vanish for an all-zero model")
{
    const Dataset data = make_data(5, 6, 3, 3);
    const ModelParams p = ModelParams::zeros({3, 4, 3}, Activation::relu);
    const TradesTerms t = trades_last_layer_terms(p, data.features, data.labels, data.features.array() + 0.1);
    CHECK(t.adv_side.norm() == 0.0);
    CHECK(t.clean_prediction.norm() == 0.0);
}

TEST_CASE("TRADES regularizer terms match finite differences with x_adv frozen")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        const Dataset data = make_data(seed + 10, 3, 3, 3);
        const ModelParams p = oracle::random_net({3, 5, 3}, Activation::relu, seed + 20);
        AttackConfig attack;
        attack.epsilon = 0.3;
        attack.step_size = 0.1;
        const Matrix x_adv = trades_inner_max(p, data.features, attack).x_adv;
        const double lambda = 1.0 + static_cast<double>(seed % 6);
        const TradesTerms t = trades_last_layer_terms(p, data.features, data.labels, x_adv);
        const Eigen::Index last = p.last_layer_size();
        const Vector flat = p.flatten();
        for (Eigen::Index i = 0; i < 3; ++i)
        {
            ModelParams probe = p;
            auto reg = [&](const Vector& tail) {
                Vector th = flat;
                th.tail(last) = tail;
                probe.assign(th);
                const auto target = oracle::softmax(oracle::logits(probe, oracle::row(data.features, i)));
                return oracle::soft_ce(oracle::logits(probe, oracle::row(x_adv, i)), target) / lambda;
            };
            const Vector fd = oracle::central_diff(reg, flat.tail(last), 1e-5);
            const Vector an = ((t.adv_side.row(i) + t.clean_prediction.row(i)) / lambda).transpose();
            CHECK(oracle::rel_err(an, fd) < 1e-4);

            // Whole per-sample objective: clean CE plus the regularizer.
            auto full = [&](const Vector& tail) {
                Vector th = flat;
                th.tail(last) = tail;
                probe.assign(th);
                const int y = data.labels[static_cast<std::size_t>(i)];
                return oracle::soft_ce(oracle::logits(probe, oracle::row(data.features, i)), oracle::onehot(y, 3)) +
                       reg(tail);
            };
            const Vector fd_full = oracle::central_diff(full, flat.tail(last), 1e-5);
            CHECK(oracle::rel_err(an + t.clean_ce.row(i).transpose(), fd_full) < 1e-4);
        }
    }
}

TEST_CASE("TRADES features combine the three terms with 1/lambda")
{
    const Dataset data = make_data(8, 5, 2, 3);
    const ModelParams p = oracle::random_net({2, 4, 3}, Activation::relu, 9);
    AttackConfig attack;
    attack.epsilon = 0.2;
    const auto f = adv_grad_features(p, data, {ObjectiveTag::trades, 6.0}, attack);
    const Matrix x_adv = trades_inner_max(p, data.features, attack).x_adv;
    const TradesTerms t = trades_last_layer_terms(p, data.features, data.labels, x_adv);
    CHECK((f.rows - (t.clean_ce + (t.adv_side + t.clean_prediction) / 6.0)).norm() < 1e-14);
    CHECK_THROWS_AS(adv_grad_features(p, data, {ObjectiveTag::trades, 0.0}, attack), InvalidArgument);
}

TEST_CASE("batch_aggregate")
{
    acs::Rng rng(3);
    const GradientFeatures f = sample_features(oracle::random_matrix(10, 4, rng));

    SUBCASE("b = 1 is a permutation of the input")
    {
        const auto g = batch_aggregate(f, 1, 99);
        CHECK(g.units() == 10);
        for (Eigen::Index u = 0; u < 10; ++u)
            CHECK(g.rows.row(u) == f.rows.row(g.index_map[static_cast<std::size_t>(u)][0]));
    }
    SUBCASE("ceiling partition with summed rows")
    {
        const auto g = batch_aggregate(f, 3, 7);
        CHECK(g.unit_kind == UnitKind::batch);
        REQUIRE(g.units() == 4);
        std::vector<std::size_t> sizes;
        std::set<int> seen;
        for (Eigen::Index u = 0; u < 4; ++u)
        {
            const auto& members = g.index_map[static_cast<std::size_t>(u)];
            sizes.push_back(members.size());
            RowVector s = RowVector::Zero(4);
            for (int m : members)
            {
                s += f.rows.row(m);
                seen.insert(m);
            }
            CHECK((s - g.rows.row(u)).norm() < 1e-12);
        }
        CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
        CHECK(seen.size() == 10);
        g.validate(10);
        CHECK((g.rows.colwise().sum() - f.rows.colwise().sum()).norm() < 1e-10);
    }
    SUBCASE("deterministic in the seed")
    {
        CHECK(batch_aggregate(f, 4, 5).index_map == batch_aggregate(f, 4, 5).index_map);
    }
}

TEST_CASE("ACSF round trip")
{
    acs::Rng rng(12);
    const GradientFeatures f = batch_aggregate(sample_features(oracle::random_matrix(7, 3, rng)), 2, 1);
    std::stringstream buf;
    write_features(buf, f);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "ACSF");
    const GradientFeatures g = read_features(buf);
    CHECK(g.rows == f.rows);
    CHECK(g.index_map == f.index_map);
    CHECK(g.unit_kind == f.unit_kind);

    std::stringstream bad("ACSX0000");
    CHECK_THROWS_AS(read_features(bad), ParseError);
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_features(truncated), ParseError);
}

TEST_CASE("non-finite features name the sample")
{
    Dataset data = make_data(1, 4, 2, 2);
    ModelParams p = oracle::random_net({2, 3, 2}, Activation::identity, 1);
    p.weights[1](0, 0) = 1e308;
    p.weights[0].setConstant(1e308);
    try
    {
        adv_grad_features(p, data, {ObjectiveTag::vanilla, 1.0}, AttackConfig{});
        FAIL("expected an error");
    }
    catch (const NumericError& e)
    {
        CHECK(std::string(e.what()).find("sample") != std::string::npos);
    }
}
