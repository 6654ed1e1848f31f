#pragma once

#include "acs/attacks.hpp"

#include <iosfwd>

namespace acs
{
enum class ObjectiveTag
{
    vanilla,
    adversarial_ce,
    trades
};

struct ObjectiveKind
{
    ObjectiveTag tag = ObjectiveTag::adversarial_ce;
    double trades_lambda = 1.0;

    void validate() const;
};

enum class UnitKind : std::uint8_t
{
    sample = 0,
    batch = 1
};

/// One row of last-layer gradient per selection unit.
struct GradientFeatures
{
    Matrix rows;
    UnitKind unit_kind = UnitKind::sample;
    /// Underlying sample indices of each unit.
    std::vector<IndexList> index_map;

    Eigen::Index units() const { return rows.rows(); }
    void validate(int n_samples) const;
};

/// The three last-layer terms of the per-sample TRADES gradient, unscaled by 1/lambda.
struct TradesTerms
{
    Matrix clean_ce;         // grad CE(f(x), y)
    Matrix adv_side;         // grad CE(f(x_adv), freeze(f(x)))
    Matrix clean_prediction; // grad CE(freeze(f(x_adv)), f(x))
};

TradesTerms trades_last_layer_terms(const ModelParams& params, const Matrix& x, const std::vector<int>& y,
                                    const Matrix& x_adv);

/// Per-sample selection features under the given objective.
GradientFeatures adv_grad_features(const ModelParams& params, const Dataset& data, const ObjectiveKind& objective,
                                   const AttackConfig& attack);

/// Shuffle units with `shuffle_seed`, chunk into groups of `batch_size`, sum each chunk.
GradientFeatures batch_aggregate(const GradientFeatures& features, int batch_size, std::uint64_t shuffle_seed);

/// Binary ACSF encoding, little-endian.
void write_features(std::ostream& out, const GradientFeatures& features);
GradientFeatures read_features(std::istream& in);

} // namespace acs
