#include "acs/attacks.hpp"
#include "acs/rng.hpp"

#include <cmath>

namespace acs
{
void AttackConfig::validate() const
{
    require(std::isfinite(epsilon) && epsilon >= 0.0, "attack epsilon must be >= 0");
    require(std::isfinite(step_size) && step_size > 0.0, "attack step size must be > 0");
    require(iterations >= 0, "attack iterations must be >= 0");
    require(restarts >= 1, "attack restarts must be >= 1");
}

Matrix project(const Matrix& delta, Norm norm, double epsilon)
{
    require(epsilon >= 0.0, "projection radius must be >= 0");
    if (norm == Norm::linf)
        return delta.cwiseMax(-epsilon).cwiseMin(epsilon);
    Matrix out = delta;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
    {
        const double r = out.row(i).norm();
        if (r > epsilon)
            out.row(i) *= epsilon / r;
    }
    return out;
}

double max_perturbation(const Matrix& x_adv, const Matrix& x, Norm norm)
{
    if (x_adv.rows() != x.rows() || x_adv.cols() != x.cols())
        throw DimensionError("max_perturbation: shapes differ");
    if (x.size() == 0)
        return 0.0;
    const Matrix delta = x_adv - x;
    if (norm == Norm::linf)
        return delta.cwiseAbs().maxCoeff();
    return delta.rowwise().norm().maxCoeff();
}

namespace
{
RowVector random_start(Rng& rng, Eigen::Index d, Norm norm, double epsilon)
{
    RowVector delta(d);
    if (norm == Norm::linf)
    {
        for (Eigen::Index j = 0; j < d; ++j)
            delta(j) = rng.uniform(-epsilon, epsilon);
        return delta;
    }
    for (Eigen::Index j = 0; j < d; ++j)
        delta(j) = rng.normal();
    const double len = delta.norm();
    if (len == 0.0)
        return RowVector::Zero(d);
    const double radius = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    return delta * (radius / len);
}

Matrix ascent_direction(const Matrix& grad, Norm norm)
{
    if (norm == Norm::linf)
        return grad.unaryExpr([](double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); });
    Matrix dir = grad;
    for (Eigen::Index i = 0; i < dir.rows(); ++i)
    {
        const double len = dir.row(i).norm();
        if (len > 0.0)
            dir.row(i) /= len;
        else
            dir.row(i).setZero();
    }
    return dir;
}

Matrix to_feasible(const Matrix& x, const Matrix& candidate, const AttackConfig& cfg)
{
    Matrix out = x + project(candidate - x, cfg.norm, cfg.epsilon);
    if (cfg.clip_unit_box)
        out = out.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}
} // namespace

AdvBatch pgd_attack(const ModelParams& params, const Matrix& x, const Target& target, const AttackConfig& cfg)
{
    cfg.validate();
    params.validate();
    const int k = params.num_classes();
    target.check(x.rows(), k);
    const Matrix dense_target = target.dense(k);

    AdvBatch out;
    out.x_adv = x;
    out.losses = per_sample_losses(forward(params, x), target);
    if (!out.losses.allFinite())
        throw NumericError("clean loss is not finite");
    if (cfg.epsilon == 0.0)
        return out;

    auto keep_best = [&](const Matrix& candidate, const Vector& losses) {
        for (Eigen::Index i = 0; i < candidate.rows(); ++i)
        {
            if (losses(i) > out.losses(i))
            {
                out.losses(i) = losses(i);
                out.x_adv.row(i) = candidate.row(i);
            }
        }
    };

    for (int restart = 0; restart < cfg.restarts; ++restart)
    {
        Matrix current = x;
        if (cfg.random_init)
        {
            for (Eigen::Index i = 0; i < x.rows(); ++i)
            {
                Rng rng = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(i),
                                                 static_cast<std::uint64_t>(restart)});
                current.row(i) += random_start(rng, x.cols(), cfg.norm, cfg.epsilon);
            }
            current = to_feasible(x, current, cfg);
        }
        for (int it = 0;; ++it)
        {
            const ForwardCache cache = forward(params, current);
            keep_best(current, per_sample_losses(cache, target));
            if (it == cfg.iterations)
                break;
            const Matrix grad = input_grad_from_logit_grad(params, cache, cache.probs - dense_target);
            current = to_feasible(x, current + cfg.step_size * ascent_direction(grad, cfg.norm), cfg);
        }
        if (!cfg.random_init && cfg.restarts > 1)
        {
            // Without random starts every restart retraces the same path.
            break;
        }
    }
    out.iterations_used = cfg.iterations;
    return out;
}

AdvBatch trades_inner_max(const ModelParams& params, const Matrix& x, const AttackConfig& cfg)
{
    params.validate();
    const Matrix clean_probs = forward(params, x).probs;
    return pgd_attack(params, x, Target::soft(clean_probs), cfg);
}

double logistic_loss(const Vector& w, double b, const Vector& x, int y)
{
    const double margin = static_cast<double>(y) * (w.dot(x) + b);
    // log(1 + exp(-m))
    return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

Vector closed_form_linear_adversary(const Vector& w, double b, const Vector& x, int y, double epsilon,
                                    Norm norm)
{
    (void)b;
    require(y == 1 || y == -1, "binary label must be +1 or -1");
    require(epsilon >= 0.0, "epsilon must be >= 0");
    if (w.size() != x.size())
        throw DimensionError("weight and input dimensions differ");
    if (epsilon == 0.0)
        return x;
    const double sy = static_cast<double>(y);
    if (norm == Norm::linf)
    {
        if ((w.array() == 0.0).any())
            throw DegeneracyError("linf adversary is not unique when a weight coordinate is zero");
        return x - epsilon * sy * w.unaryExpr([](double v) { return v > 0.0 ? 1.0 : -1.0; });
    }
    const double len = w.norm();
    if (len == 0.0)
        throw DegeneracyError("l2 adversary is not unique for a zero weight vector");
    return x - (epsilon * sy / len) * w;
}

ModelParams binary_logistic_model(const Vector& w, double b)
{
    ModelParams p = ModelParams::zeros({static_cast<int>(w.size()), 2}, Activation::identity);
    p.weights[0].row(1) = w.transpose();
    p.biases[0](1) = b;
    return p;
}

} // namespace acs
