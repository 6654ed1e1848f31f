#include "acs/adv_gradients.hpp"
#include "acs/rng.hpp"

#include "binary_io.hpp"

#include <cmath>
#include <numeric>

namespace acs
{
void ObjectiveKind::validate() const
{
    if (tag == ObjectiveTag::trades)
        require(std::isfinite(trades_lambda) && trades_lambda > 0.0, "TRADES lambda must be finite and > 0");
}

void GradientFeatures::validate(int n_samples) const
{
    if (static_cast<Eigen::Index>(index_map.size()) != rows.rows())
        throw DimensionError("index map has " + std::to_string(index_map.size()) + " units, matrix has " +
                             std::to_string(rows.rows()));
    if (!rows.allFinite())
        throw NumericError("gradient features contain NaN or Inf");
    std::vector<int> seen(static_cast<std::size_t>(n_samples), 0);
    for (const auto& unit : index_map)
        for (int s : unit)
        {
            require(s >= 0 && s < n_samples, "index map entry out of range");
            ++seen[static_cast<std::size_t>(s)];
        }
    if (unit_kind == UnitKind::batch)
        for (int c : seen)
            require(c == 1, "batch index map must partition the samples");
}

TradesTerms trades_last_layer_terms(const ModelParams& params, const Matrix& x, const std::vector<int>& y,
                                    const Matrix& x_adv)
{
    params.validate();
    if (x.rows() != x_adv.rows() || x.cols() != x_adv.cols())
        throw DimensionError("clean and adversarial batches differ in shape");
    const int k = params.num_classes();
    const ForwardCache clean = forward(params, x);
    const ForwardCache adv = forward(params, x_adv);
    const Target labels = Target::hard(y);
    labels.check(x.rows(), k);

    TradesTerms terms;
    terms.clean_ce = last_layer_rows(clean, clean.probs - labels.dense(k));
    terms.adv_side = last_layer_rows(adv, adv.probs - clean.probs);

    // d/dz of -sum_c softmax(z)_c * l_c with l = log softmax(z_adv) held fixed.
    const Matrix& p = clean.probs;
    const Matrix& l = adv.log_probs;
    const Vector expected = (p.array() * l.array()).rowwise().sum().matrix();
    const Matrix g3 = -(p.array() * (l.colwise() - expected).array()).matrix();
    terms.clean_prediction = last_layer_rows(clean, g3);
    return terms;
}

GradientFeatures adv_grad_features(const ModelParams& params, const Dataset& data, const ObjectiveKind& objective,
                                   const AttackConfig& attack)
{
    data.validate();
    params.validate();
    objective.validate();
    if (params.input_dim() != data.d() || params.num_classes() != data.num_classes)
        throw DimensionError("model does not match dataset dimensions");

    GradientFeatures out;
    out.unit_kind = UnitKind::sample;
    const Target labels = Target::hard(data.labels);
    switch (objective.tag)
    {
    case ObjectiveTag::vanilla:
        out.rows = per_sample_last_layer_grad(params, data.features, labels);
        break;
    case ObjectiveTag::adversarial_ce: {
        const AdvBatch adv = pgd_attack(params, data.features, labels, attack);
        out.rows = per_sample_last_layer_grad(params, adv.x_adv, labels);
        break;
    }
    case ObjectiveTag::trades: {
        const AdvBatch adv = trades_inner_max(params, data.features, attack);
        const TradesTerms t = trades_last_layer_terms(params, data.features, data.labels, adv.x_adv);
        out.rows = t.clean_ce + (t.adv_side + t.clean_prediction) / objective.trades_lambda;
        break;
    }
    }
    for (Eigen::Index i = 0; i < out.rows.rows(); ++i)
        if (!out.rows.row(i).allFinite())
            throw NumericError("gradient feature of sample " + std::to_string(i) + " is not finite");

    out.index_map.resize(static_cast<std::size_t>(data.n()));
    for (int i = 0; i < data.n(); ++i)
        out.index_map[static_cast<std::size_t>(i)] = {i};
    return out;
}

GradientFeatures batch_aggregate(const GradientFeatures& features, int batch_size, std::uint64_t shuffle_seed)
{
    require(batch_size >= 1, "selection batch size must be >= 1");
    const Eigen::Index m = features.units();
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(shuffle_seed);
    rng.shuffle(order);

    const Eigen::Index chunks = (m + batch_size - 1) / batch_size;
    GradientFeatures out;
    out.unit_kind = UnitKind::batch;
    out.rows = Matrix::Zero(chunks, features.rows.cols());
    out.index_map.resize(static_cast<std::size_t>(chunks));
    for (Eigen::Index pos = 0; pos < m; ++pos)
    {
        const Eigen::Index chunk = pos / batch_size;
        const int unit = order[static_cast<std::size_t>(pos)];
        out.rows.row(chunk) += features.rows.row(unit);
        auto& members = out.index_map[static_cast<std::size_t>(chunk)];
        const auto& underlying = features.index_map[static_cast<std::size_t>(unit)];
        members.insert(members.end(), underlying.begin(), underlying.end());
    }
    return out;
}

namespace
{
constexpr char kFeatureMagic[5] = "ACSF";
constexpr std::uint32_t kFeatureVersion = 1;
} // namespace

void write_features(std::ostream& out, const GradientFeatures& f)
{
    detail::put_magic(out, kFeatureMagic);
    detail::put_le<std::uint32_t>(out, kFeatureVersion);
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(f.rows.rows()));
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(f.rows.cols()));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(f.unit_kind));
    for (Eigen::Index i = 0; i < f.rows.rows(); ++i)
        for (Eigen::Index j = 0; j < f.rows.cols(); ++j)
            detail::put_f64(out, f.rows(i, j));
    for (const auto& unit : f.index_map)
    {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(unit.size()));
        for (int s : unit)
            detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s));
    }
}

GradientFeatures read_features(std::istream& in)
{
    detail::expect_magic(in, kFeatureMagic);
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kFeatureVersion)
        throw ParseError("unsupported ACSF version " + std::to_string(version), 0);
    const auto m = detail::get_le<std::uint64_t>(in);
    const auto p = detail::get_le<std::uint64_t>(in);
    const auto kind = detail::get_le<std::uint8_t>(in);
    if (kind > 1)
        throw ParseError("unknown unit kind " + std::to_string(kind), 0);
    GradientFeatures f;
    f.unit_kind = static_cast<UnitKind>(kind);
    f.rows.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < f.rows.rows(); ++i)
        for (Eigen::Index j = 0; j < f.rows.cols(); ++j)
            f.rows(i, j) = detail::get_f64(in);
    f.index_map.resize(m);
    for (auto& unit : f.index_map)
    {
        const auto len = detail::get_le<std::uint32_t>(in);
        unit.resize(len);
        for (auto& s : unit)
            s = static_cast<int>(detail::get_le<std::uint32_t>(in));
    }
    return f;
}

} // namespace acs
