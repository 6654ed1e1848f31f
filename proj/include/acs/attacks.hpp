#pragma once

#include "acs/model.hpp"

namespace acs
{
enum class Norm
{
    linf,
    l2
};

struct AttackConfig
{
    Norm norm = Norm::linf;
    double epsilon = 0.1;
    double step_size = 0.025;
    int iterations = 10;
    int restarts = 1;
    bool random_init = false;
    /// Clamp adversarial inputs to [0, 1] (image-like data only).
    bool clip_unit_box = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdvBatch
{
    Matrix x_adv;
    /// Loss achieved at x_adv, per sample.
    Vector losses;
    int iterations_used = 0;
};

/// Project perturbations (one per row) onto the norm ball of radius epsilon.
Matrix project(const Matrix& delta, Norm norm, double epsilon);

/// Largest per-row norm of (x_adv - x) under `norm`.
double max_perturbation(const Matrix& x_adv, const Matrix& x, Norm norm);

/// Projected gradient ascent on the cross-entropy against `target`.
///
/// Sign steps under linf, normalized-gradient steps under l2. The returned
/// point for each sample is the highest-loss iterate seen across all restarts,
/// the clean input included, so losses never fall below the clean loss.
AdvBatch pgd_attack(const ModelParams& params, const Matrix& x, const Target& target,
                    const AttackConfig& cfg);

/// Inner maximization of the TRADES regularizer: pgd_attack against the
/// model's own clean softmax output, frozen before the first step.
AdvBatch trades_inner_max(const ModelParams& params, const Matrix& x, const AttackConfig& cfg);

/// Exact loss maximizer for the binary logistic model sign(w.x + b), y in {-1, +1}.
Vector closed_form_linear_adversary(const Vector& w, double b, const Vector& x, int y, double epsilon,
                                    Norm norm);

/// log(1 + exp(-y (w.x + b))), evaluated stably.
double logistic_loss(const Vector& w, double b, const Vector& x, int y);

/// Two-class softmax model equivalent to the binary logistic model (w, b):
/// logits [0, w.x + b], so label 1 <-> y = +1.
ModelParams binary_logistic_model(const Vector& w, double b);

} // namespace acs
