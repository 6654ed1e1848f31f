#pragma once

#include "acs/adv_gradients.hpp"

#include <iosfwd>
#include <string>

namespace acs
{
enum class SolverMethod
{
    craig,
    gradmatch_omp,
    random
};

/// Coreset size, either a fraction of the units or an absolute count.
struct Budget
{
    double fraction = 0.5;
    int count = 0; // > 0 overrides fraction

    static Budget of_fraction(double f) { return {f, 0}; }
    static Budget of_count(int k) { return {0.0, k}; }

    /// Number of units to select out of m, in [1, m].
    int resolve(Eigen::Index m) const;
};

struct SolverConfig
{
    SolverMethod method = SolverMethod::gradmatch_omp;
    Budget budget;
    double omp_lambda = 0.0;
    double tolerance = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    /// FNV-1a hash of the canonical text form, as 16 hex digits.
    std::string hash() const;
};

struct Coreset
{
    IndexList indices;
    std::vector<double> weights;
    std::string solver;
    std::string config_hash;
    int epoch = 0;

    std::size_t size() const { return indices.size(); }
    double total_weight() const;
    void validate(Eigen::Index units) const;
};

/// Euclidean distances between feature rows.
Matrix pairwise_distances(const Matrix& rows);

struct CraigTrace
{
    /// Facility-location value L(S + {s0}); entry 0 is the empty selection.
    std::vector<double> cover_loss;
    /// Marginal gain of each greedy pick.
    std::vector<double> gains;
    double phantom_distance = 0.0;
};

struct CraigResult
{
    Coreset coreset;
    CraigTrace trace;
};

CraigResult craig_greedy(const GradientFeatures& features, const SolverConfig& cfg);
Coreset craig_select(const GradientFeatures& features, const SolverConfig& cfg);

struct OmpResult
{
    Coreset coreset;
    /// ||b - A gamma|| after each refit.
    std::vector<double> residuals;
};

OmpResult omp_greedy(const GradientFeatures& features, const SolverConfig& cfg);
Coreset omp_select(const GradientFeatures& features, const SolverConfig& cfg);

/// argmin ||b - A g||^2 + lambda ||g||^2 subject to g >= 0 (Lawson-Hanson active set).
Vector nonneg_ridge_fit(const Matrix& A, const Vector& b, double lambda);

Coreset random_select(Eigen::Index m, const SolverConfig& cfg);

/// Dispatch on cfg.method.
Coreset select_units(const GradientFeatures& features, const SolverConfig& cfg);

/// ||sum_i row_i - sum_{j in S} w_j row_j||
double matching_residual(const Matrix& rows, const IndexList& indices, const std::vector<double>& weights);

struct OracleResult
{
    IndexList subset;
    Vector weights;
    double residual = 0.0;
};

/// Exhaustive search over all size-k subsets (m <= 12, k <= 4) with a clamped least-squares fit.
OracleResult brute_force_subset_oracle(const GradientFeatures& features, int k);

/// Map a unit-level coreset onto samples; each sample inherits its unit's weight.
Coreset expand_to_samples(const Coreset& units, const GradientFeatures& features);

/// Text form: a `# provenance:` line, then one `index weight` line per unit.
void write_coreset(std::ostream& out, const Coreset& coreset);
Coreset read_coreset(std::istream& in);

std::string to_string(SolverMethod method);
SolverMethod solver_method_from_string(const std::string& name);

} // namespace acs
