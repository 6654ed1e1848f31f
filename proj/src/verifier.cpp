#include "acs/verifier.hpp"
#include "acs/rng.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace acs
{
double gamma_error(const GradientFeatures& features_full, const Coreset& coreset)
{
    coreset.validate(features_full.units());
    return matching_residual(features_full.rows, coreset.indices, coreset.weights);
}

void GammaTrace::add(int epoch, double gamma, std::size_t coreset_size, const std::string& solver)
{
    require(gamma >= 0.0, "gamma must be >= 0");
    records.push_back({epoch, gamma, coreset_size, solver});
}

namespace
{
double softplus(double m)
{
    return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

double sigmoid(double m)
{
    if (m >= 0.0)
        return 1.0 / (1.0 + std::exp(-m));
    const double e = std::exp(m);
    return e / (1.0 + e);
}

double dual_norm(const Vector& w, Norm norm)
{
    return norm == Norm::linf ? w.lpNorm<1>() : w.norm();
}

/// A subgradient of the dual norm of w.
Vector dual_norm_grad(const Vector& w, Norm norm)
{
    if (norm == Norm::linf)
        return w.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    const double len = w.norm();
    return len > 0.0 ? Vector(w / len) : Vector::Zero(w.size());
}

double robust_margin(const Vector& theta, const RowVector& x, int y, double epsilon, Norm norm)
{
    const Eigen::Index d = x.size();
    if (theta.size() != d + 1)
        throw DimensionError("probe parameters must have d + 1 entries");
    const Vector w = theta.head(d);
    return -static_cast<double>(y) * (x.dot(w.transpose()) + theta(d)) + epsilon * dual_norm(w, norm);
}

int sign_label(int label)
{
    return label == 1 ? 1 : -1;
}

struct Objective
{
    const Dataset& data;
    double epsilon;
    Norm norm;
    /// Coefficient of the n mu / 2 ||theta||^2 term (0 for part 1).
    double mu;

    double value(const Vector& theta) const
    {
        double s = 0.0;
        for (int i = 0; i < data.n(); ++i)
            s += robust_logistic_loss(theta, data.features.row(i), sign_label(data.labels[i]), epsilon, norm);
        return s + 0.5 * data.n() * mu * theta.squaredNorm();
    }

    /// Per-sample data-term gradients, one row each.
    Matrix sample_grads(const Vector& theta) const
    {
        Matrix g(data.n(), theta.size());
        for (int i = 0; i < data.n(); ++i)
            g.row(i) = robust_logistic_grad(theta, data.features.row(i), sign_label(data.labels[i]), epsilon, norm)
                           .transpose();
        return g;
    }

    Vector grad(const Vector& theta) const
    {
        return sample_grads(theta).colwise().sum().transpose() + data.n() * mu * theta;
    }

    Matrix hessian(const Vector& theta) const
    {
        const Eigen::Index d = data.d();
        const Vector w = theta.head(d);
        Matrix h = Matrix::Identity(d + 1, d + 1) * (data.n() * mu);
        const double len = w.norm();
        for (int i = 0; i < data.n(); ++i)
        {
            const int y = sign_label(data.labels[i]);
            const double m = robust_margin(theta, data.features.row(i), y, epsilon, norm);
            const double s = sigmoid(m);
            Vector dm(d + 1);
            dm.head(d) = -static_cast<double>(y) * data.features.row(i).transpose() + epsilon * dual_norm_grad(w, norm);
            dm(d) = -static_cast<double>(y);
            h += s * (1.0 - s) * dm * dm.transpose();
            if (norm == Norm::l2 && len > 0.0)
                h.topLeftCorner(d, d) +=
                    s * epsilon * (Matrix::Identity(d, d) / len - w * w.transpose() / (len * len * len));
        }
        return h;
    }
};

/// Minimizer of the probe objective: Armijo gradient descent, then damped Newton until the
/// gradient norm is certified below the tolerance.
Vector reference_minimizer(const Objective& obj, int dim, double tolerance, double& grad_norm)
{
    Vector theta = Vector::Zero(dim);
    double step = 1.0;
    Vector g = obj.grad(theta);
    double f = obj.value(theta);
    for (int it = 0; it < 20000 && g.norm() > 1e-4; ++it)
    {
        step *= 2.0;
        while (true)
        {
            const Vector cand = theta - step * g;
            const double fc = obj.value(cand);
            if (fc <= f - 0.5 * step * g.squaredNorm() || step < 1e-18)
            {
                theta = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
        g = obj.grad(theta);
    }
    // Near the optimum decreases in L fall below rounding, so Newton steps are accepted on the gradient norm.
    for (int it = 0; it < 200 && g.norm() >= tolerance; ++it)
    {
        const Vector dir = obj.hessian(theta).ldlt().solve(g);
        double t = 1.0;
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt, t *= 0.5)
        {
            const Vector cand = theta - t * dir;
            const Vector gc = obj.grad(cand);
            if (gc.norm() < g.norm())
            {
                theta = cand;
                g = gc;
                moved = true;
                break;
            }
        }
        if (!moved)
            break;
    }
    grad_norm = g.norm();
    return theta;
}

/// n * (sum_j gamma_j row_j) / (sum_j gamma_j), the coreset estimate of the summed gradient.
Vector coreset_direction(const Matrix& grads, const Coreset& c)
{
    Vector dir = Vector::Zero(grads.cols());
    const double total = c.total_weight();
    if (total <= 0.0)
        return dir;
    for (std::size_t q = 0; q < c.size(); ++q)
        dir += (c.weights[q] / total) * grads.row(c.indices[q]).transpose();
    return static_cast<double>(grads.rows()) * dir;
}

Coreset probe_coreset(const Matrix& grads, const ProbeConfig& cfg, int iteration)
{
    const Eigen::Index n = grads.rows();
    if (cfg.fraction >= 1.0)
    {
        Coreset full;
        full.solver = "full";
        for (Eigen::Index i = 0; i < n; ++i)
        {
            full.indices.push_back(static_cast<int>(i));
            full.weights.push_back(1.0);
        }
        return full;
    }
    GradientFeatures f;
    f.rows = grads;
    f.unit_kind = UnitKind::sample;
    for (Eigen::Index i = 0; i < n; ++i)
        f.index_map.push_back({static_cast<int>(i)});
    SolverConfig sc;
    sc.method = cfg.method;
    sc.budget = Budget::of_fraction(cfg.fraction);
    sc.seed = Rng::derive(cfg.seed, {0x7431, static_cast<std::uint64_t>(iteration)}).next_u64();
    return select_units(f, sc);
}

BoundStatus judge(double slack, double ref_grad_norm)
{
    if (!(ref_grad_norm < 1e-8))
        return BoundStatus::inconclusive;
    return slack >= -1e-9 ? BoundStatus::pass : BoundStatus::fail;
}
} // namespace

double robust_logistic_loss(const Vector& theta, const RowVector& x, int y, double epsilon, Norm norm)
{
    return softplus(robust_margin(theta, x, y, epsilon, norm));
}

Vector robust_logistic_grad(const Vector& theta, const RowVector& x, int y, double epsilon, Norm norm)
{
    const Eigen::Index d = x.size();
    const double s = sigmoid(robust_margin(theta, x, y, epsilon, norm));
    Vector g(d + 1);
    g.head(d) = s * (-static_cast<double>(y) * x.transpose() + epsilon * dual_norm_grad(theta.head(d), norm));
    g(d) = -s * static_cast<double>(y);
    return g;
}

double perturbation_radius(int d, double epsilon, Norm norm)
{
    return norm == Norm::l2 ? epsilon : epsilon * std::sqrt(static_cast<double>(d));
}

double analytic_lipschitz(const Matrix& x, double epsilon, Norm norm)
{
    const double r = perturbation_radius(static_cast<int>(x.cols()), epsilon, norm);
    double best = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
    {
        const double len = x.row(i).norm() + r;
        best = std::max(best, std::sqrt(len * len + 1.0));
    }
    return best;
}

std::string to_string(BoundStatus status)
{
    switch (status)
    {
    case BoundStatus::pass:
        return "PASS";
    case BoundStatus::fail:
        return "FAIL";
    case BoundStatus::inconclusive:
        return "inconclusive";
    }
    return "inconclusive";
}

void ProbeConfig::validate() const
{
    require(n >= 2 && d >= 1, "probe needs n >= 2 and d >= 1");
    require(epsilon >= 0.0, "epsilon must be >= 0");
    require(T >= 2, "T must be >= 2");
    require(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0, 1]");
    require(mu > 0.0, "mu must be > 0");
}

Dataset probe_dataset(const ProbeConfig& cfg)
{
    cfg.validate();
    Rng rng = Rng::derive(cfg.seed, {0x7072});
    Dataset data;
    data.num_classes = 2;
    data.features.resize(cfg.n, cfg.d);
    data.labels.resize(static_cast<std::size_t>(cfg.n));
    for (int i = 0; i < cfg.n; ++i)
    {
        const int label = i % 2;
        data.labels[static_cast<std::size_t>(i)] = label;
        for (int j = 0; j < cfg.d; ++j)
            data.features(i, j) = rng.normal();
        data.features(i, 0) += (label == 1 ? 0.5 : -0.5) * cfg.separation;
    }
    return data;
}

std::string BoundReport::to_json() const
{
    nlohmann::ordered_json j;
    j["part"] = part == BoundPart::part1 ? 1 : 2;
    j["status"] = to_string(status);
    j["sigma"] = sigma;
    j["mu"] = mu;
    j["delta"] = delta;
    j["T"] = T;
    j["lhs"] = lhs;
    j["rhs"] = rhs;
    j["slack"] = slack;
    j["sum_gamma"] = sum_gamma;
    j["reference_grad_norm"] = reference_grad_norm;
    return j.dump();
}

BoundReport theorem1_check(BoundPart part, const Dataset& data, const ProbeConfig& cfg)
{
    cfg.validate();
    data.validate();
    require(data.num_classes == 2, "theorem1_check needs a binary dataset");
    const int n = data.n();
    const int dim = data.d() + 1;
    const int T = cfg.T;
    const double mu = part == BoundPart::part2 ? cfg.mu : 0.0;
    const Objective obj{data, cfg.epsilon, cfg.norm, mu};

    BoundReport report;
    report.part = part;
    report.mu = mu;
    report.T = T;
    const Vector theta_star = reference_minimizer(obj, dim, 1e-8, report.reference_grad_norm);
    const double f_star = obj.value(theta_star);
    const double data_sigma = analytic_lipschitz(data.features, cfg.epsilon, cfg.norm);

    Vector theta = Vector::Zero(dim);
    std::vector<double> gammas;
    double best_gap = std::numeric_limits<double>::infinity();
    double delta = (theta - theta_star).norm();
    double max_theta = theta.norm();

    const double delta0 = delta;
    const double sigma1 = n * data_sigma;
    const double alpha1 = delta0 / (sigma1 * std::sqrt(static_cast<double>(T)));

    for (int t = 0; t < T; ++t)
    {
        best_gap = std::min(best_gap, obj.value(theta) - f_star);
        const Matrix grads = obj.sample_grads(theta);
        const Vector full = grads.colwise().sum().transpose();
        const Coreset c = probe_coreset(grads, cfg, t);
        const Vector approx = coreset_direction(grads, c);
        gammas.push_back((full - approx).norm());
        // The regularizer gradient n mu theta is exact under normalized weights and cancels in Gamma.
        const Vector step_dir = approx + n * mu * theta;
        const double alpha = part == BoundPart::part1 ? alpha1 : 2.0 / (n * mu * (t + 2.0));
        theta -= alpha * step_dir;
        delta = std::max(delta, (theta - theta_star).norm());
        max_theta = std::max(max_theta, theta.norm());
    }

    report.delta = delta;
    report.lhs = best_gap;
    double sum_gamma = 0.0;
    for (double g : gammas)
        sum_gamma += g;
    report.sum_gamma = sum_gamma;
    const double Td = static_cast<double>(T);
    if (part == BoundPart::part1)
    {
        report.sigma = sigma1;
        report.rhs = delta * report.sigma / std::sqrt(Td) + delta / Td * sum_gamma;
    }
    else
    {
        // Iterations are numbered t = 1..T with alpha_t = 2 / (n mu (1 + t)).
        report.sigma = n * (data_sigma + mu * max_theta);
        double weighted = 0.0;
        for (int t = 1; t <= T; ++t)
            weighted += 2.0 * delta * t * gammas[static_cast<std::size_t>(t - 1)] / (Td * (Td - 1.0));
        report.rhs = 2.0 * report.sigma * report.sigma / (n * mu * (Td - 1.0)) + weighted;
    }
    report.slack = report.rhs - report.lhs;
    report.status = judge(report.slack, report.reference_grad_norm);
    return report;
}

double danskin_check(const Vector& w, double b, const Vector& x, int y, double epsilon, Norm norm, double fd_step)
{
    require(fd_step > 0.0, "fd_step must be > 0");
    const Eigen::Index d = w.size();
    Vector theta(d + 1);
    theta << w, b;
    auto phi = [&](const Vector& th) {
        const Vector wt = th.head(d);
        const Vector x_adv = closed_form_linear_adversary(wt, th(d), x, y, epsilon, norm);
        return logistic_loss(wt, th(d), x_adv, y);
    };
    const Vector x_star = closed_form_linear_adversary(w, b, x, y, epsilon, norm);
    const double sy = static_cast<double>(y);
    const double s = sigmoid(-sy * (w.dot(x_star) + b));
    Vector analytic(d + 1);
    analytic << -sy * s * x_star, -sy * s;

    const Vector fd = finite_diff_grad(phi, theta, fd_step);
    const double scale = analytic.lpNorm<Eigen::Infinity>();
    const double err = (fd - analytic).lpNorm<Eigen::Infinity>();
    return scale > 0.0 ? err / scale : err;
}

std::string LemmaReport::to_json() const
{
    nlohmann::ordered_json j;
    j["pairs"] = pairs;
    j["lipschitz_violations"] = lipschitz_violations;
    j["convexity_violations"] = convexity_violations;
    j["worst_lipschitz_slack"] = worst_lipschitz_slack;
    j["worst_convexity_slack"] = worst_convexity_slack;
    j["status"] = passed() ? "PASS" : "FAIL";
    return j.dump();
}

LemmaReport lemma_probes(int seed_count, std::uint64_t base_seed, int pairs_per_seed, double mu)
{
    require(seed_count >= 1 && pairs_per_seed >= 1, "lemma_probes needs at least one seed and pair");
    require(mu >= 0.0, "mu must be >= 0");
    constexpr int kPoints = 8;
    constexpr int kDim = 4;
    constexpr double kSlack = 1e-9;

    LemmaReport report;
    report.worst_lipschitz_slack = std::numeric_limits<double>::infinity();
    report.worst_convexity_slack = std::numeric_limits<double>::infinity();
    for (int s = 0; s < seed_count; ++s)
    {
        Rng rng = Rng::derive(base_seed, {0x6c656d, static_cast<std::uint64_t>(s)});
        Matrix x(kPoints, kDim);
        std::vector<int> y(kPoints);
        for (int i = 0; i < kPoints; ++i)
        {
            for (int j = 0; j < kDim; ++j)
                x(i, j) = rng.normal();
            y[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? -1 : 1;
        }
        const double epsilon = rng.uniform(0.0, 0.5);

        for (Norm norm : {Norm::linf, Norm::l2})
        {
            const double lip = analytic_lipschitz(x, epsilon, norm);
            for (double m : {0.0, mu})
            {
                auto value = [&](const Vector& th) {
                    double v = 0.0;
                    for (int i = 0; i < kPoints; ++i)
                        v += robust_logistic_loss(th, x.row(i), y[static_cast<std::size_t>(i)], epsilon, norm);
                    return v / kPoints + 0.5 * m * th.squaredNorm();
                };
                auto grad = [&](const Vector& th) {
                    Vector g = Vector::Zero(kDim + 1);
                    for (int i = 0; i < kPoints; ++i)
                        g += robust_logistic_grad(th, x.row(i), y[static_cast<std::size_t>(i)], epsilon, norm);
                    return Vector(g / kPoints + m * th);
                };
                for (int p = 0; p < pairs_per_seed; ++p)
                {
                    Vector t1(kDim + 1), t2(kDim + 1);
                    const double scale = rng.uniform(0.1, 3.0);
                    for (int j = 0; j <= kDim; ++j)
                    {
                        t1(j) = scale * rng.normal();
                        t2(j) = p == 0 ? t1(j) : scale * rng.normal();
                    }
                    const double f1 = value(t1);
                    const double f2 = value(t2);
                    const double dist = (t2 - t1).norm();
                    ++report.pairs;
                    if (m == 0.0)
                    {
                        const double slack = lip * dist - std::abs(f1 - f2);
                        report.worst_lipschitz_slack = std::min(report.worst_lipschitz_slack, slack);
                        if (slack < -kSlack)
                            ++report.lipschitz_violations;
                    }
                    const double slack = grad(t2).dot(t2 - t1) - (f2 - f1) - 0.5 * m * dist * dist;
                    report.worst_convexity_slack = std::min(report.worst_convexity_slack, slack);
                    if (slack < -kSlack)
                        ++report.convexity_violations;
                }
            }
        }
    }
    return report;
}

} // namespace acs
