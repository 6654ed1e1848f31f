#pragma once

#include "acs/solvers.hpp"

#include <string>

namespace acs
{
/// ||sum_i row_i - sum_{j in S} gamma_j row_j||, rows taken from the sample-level features.
double gamma_error(const GradientFeatures& features_full, const Coreset& coreset);

struct GammaRecord
{
    int epoch = 0;
    double gamma = 0.0;
    std::size_t coreset_size = 0;
    std::string solver;
};

struct GammaTrace
{
    std::vector<GammaRecord> records;

    void add(int epoch, double gamma, std::size_t coreset_size, const std::string& solver);
};

// Robust linear-logistic probe. theta = (w, b), labels y in {-1, +1}.
// phi(theta) = max_{||delta|| <= eps} log(1 + exp(-y (w.(x + delta) + b)))
//            = softplus(-y (w.x + b) + eps ||w||_dual).

double robust_logistic_loss(const Vector& theta, const RowVector& x, int y, double epsilon, Norm norm);
/// Gradient at the worst-case input; w = 0 under l2 uses the zero subgradient of ||w||.
Vector robust_logistic_grad(const Vector& theta, const RowVector& x, int y, double epsilon, Norm norm);
/// Largest l2 norm a perturbation in the ball can have: eps (l2) or eps sqrt(d) (linf).
double perturbation_radius(int d, double epsilon, Norm norm);
/// sup over theta and the ball of the per-sample gradient norm, max_i sqrt((||x_i|| + r)^2 + 1).
double analytic_lipschitz(const Matrix& x, double epsilon, Norm norm);

enum class BoundPart
{
    part1,
    part2
};

enum class BoundStatus
{
    pass,
    fail,
    inconclusive
};

std::string to_string(BoundStatus status);

struct ProbeConfig
{
    int n = 200;
    int d = 5;
    double epsilon = 0.05;
    Norm norm = Norm::l2;
    int T = 100;
    /// Coreset fraction per iteration; 1 means the full set with unit weights.
    double fraction = 0.5;
    double mu = 0.1;
    SolverMethod method = SolverMethod::gradmatch_omp;
    /// Distance between the two class means.
    double separation = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Two overlapping unit-variance Gaussian classes; label 1 <-> y = +1.
Dataset probe_dataset(const ProbeConfig& cfg);

struct BoundReport
{
    BoundPart part = BoundPart::part1;
    double sigma = 0.0;
    double mu = 0.0;
    double delta = 0.0;
    int T = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    double sum_gamma = 0.0;
    /// ||grad L(theta*)|| of the reference solution.
    double reference_grad_norm = 0.0;
    BoundStatus status = BoundStatus::inconclusive;

    std::string to_json() const;
};

/// Coreset gradient descent on the convex probe and its convergence bound, in sum form L = sum_i phi_i.
BoundReport theorem1_check(BoundPart part, const Dataset& data, const ProbeConfig& cfg);

/// Max relative error between a finite-difference gradient of the max-function and the
/// gradient at the fixed maximizer. Throws DegeneracyError when the maximizer is not unique.
double danskin_check(const Vector& w, double b, const Vector& x, int y, double epsilon, Norm norm,
                     double fd_step);

struct LemmaReport
{
    int pairs = 0;
    int lipschitz_violations = 0;
    int convexity_violations = 0;
    /// Smallest slack seen (negative means violated).
    double worst_lipschitz_slack = 0.0;
    double worst_convexity_slack = 0.0;

    bool passed() const { return lipschitz_violations == 0 && convexity_violations == 0; }
    std::string to_json() const;
};

/// Monte-Carlo probes of Lipschitz continuity and (strong) convexity of the robust loss
/// on small random datasets, both norms, mu in {0, `mu`}.
LemmaReport lemma_probes(int seed_count, std::uint64_t base_seed = 0, int pairs_per_seed = 1000, double mu = 0.1);

} // namespace acs
