#include "acs/solvers.hpp"
#include "acs/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace acs
{
int Budget::resolve(Eigen::Index m) const
{
    require(m >= 1, "cannot select from an empty set");
    if (count > 0)
    {
        require(count <= m, "coreset size " + std::to_string(count) + " exceeds " + std::to_string(m) + " units");
        return count;
    }
    require(fraction > 0.0 && fraction <= 1.0, "coreset fraction must be in (0, 1]");
    const auto k = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(m)));
    return static_cast<int>(std::clamp<Eigen::Index>(k, 1, m));
}

void SolverConfig::validate() const
{
    require(std::isfinite(omp_lambda) && omp_lambda >= 0.0, "omp lambda must be >= 0");
    require(std::isfinite(tolerance) && tolerance >= 0.0, "solver tolerance must be >= 0");
    require(budget.count > 0 || (budget.fraction > 0.0 && budget.fraction <= 1.0), "invalid coreset budget");
}

std::string SolverConfig::hash() const
{
    std::ostringstream s;
    s << to_string(method) << ';' << format_double(budget.fraction) << ';' << budget.count << ';'
      << format_double(omp_lambda) << ';' << format_double(tolerance) << ';' << seed;
    return hex64(fnv1a64(s.str()));
}

double Coreset::total_weight() const
{
    return std::accumulate(weights.begin(), weights.end(), 0.0);
}

void Coreset::validate(Eigen::Index units) const
{
    if (indices.size() != weights.size())
        throw DimensionError("coreset has " + std::to_string(indices.size()) + " indices and " +
                             std::to_string(weights.size()) + " weights");
    require(!indices.empty() || units == 0, "coreset is empty");
    std::vector<char> seen(static_cast<std::size_t>(units), 0);
    for (std::size_t i = 0; i < indices.size(); ++i)
    {
        const int j = indices[i];
        require(j >= 0 && j < units, "coreset index " + std::to_string(j) + " out of range");
        require(!seen[static_cast<std::size_t>(j)], "coreset index " + std::to_string(j) + " repeated");
        seen[static_cast<std::size_t>(j)] = 1;
        require(std::isfinite(weights[i]) && weights[i] >= 0.0, "coreset weights must be finite and >= 0");
    }
}

std::string to_string(SolverMethod method)
{
    switch (method)
    {
    case SolverMethod::craig:
        return "craig";
    case SolverMethod::gradmatch_omp:
        return "gradmatch-omp";
    case SolverMethod::random:
        return "random";
    }
    return "?";
}

SolverMethod solver_method_from_string(const std::string& name)
{
    if (name == "craig")
        return SolverMethod::craig;
    if (name == "gradmatch-omp" || name == "gradmatch" || name == "omp")
        return SolverMethod::gradmatch_omp;
    if (name == "random")
        return SolverMethod::random;
    throw InvalidArgument("unknown solver '" + name + "'");
}

Matrix pairwise_distances(const Matrix& rows)
{
    const Eigen::Index m = rows.rows();
    Matrix d = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
        {
            const double v = (rows.row(i) - rows.row(j)).norm();
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

namespace
{
Coreset tagged(const SolverConfig& cfg)
{
    Coreset c;
    c.solver = to_string(cfg.method);
    c.config_hash = cfg.hash();
    return c;
}

double ordered_sum(const Vector& v)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        s += v(i);
    return s;
}
} // namespace

CraigResult craig_greedy(const GradientFeatures& features, const SolverConfig& cfg)
{
    cfg.validate();
    const Eigen::Index m = features.units();
    if (m == 0)
        throw InvalidArgument("craig: empty feature set");
    const int k = cfg.budget.resolve(m);
    const Matrix dist = pairwise_distances(features.rows);

    CraigResult result;
    result.coreset = tagged(cfg);
    CraigTrace& trace = result.trace;
    trace.phantom_distance = dist.maxCoeff();

    // Distance of every unit to its closest member of S + {s0}.
    Vector nearest = Vector::Constant(m, trace.phantom_distance);
    trace.cover_loss.push_back(ordered_sum(nearest));
    std::vector<char> chosen(static_cast<std::size_t>(m), 0);

    while (static_cast<int>(result.coreset.size()) < k)
    {
        if (!result.coreset.indices.empty() && trace.cover_loss.back() <= cfg.tolerance)
            break;
        Eigen::Index best = -1;
        double best_gain = -1.0;
        for (Eigen::Index e = 0; e < m; ++e)
        {
            if (chosen[static_cast<std::size_t>(e)])
                continue;
            double gain = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                gain += std::max(0.0, nearest(i) - dist(i, e));
            if (gain > best_gain)
            {
                best_gain = gain;
                best = e;
            }
        }
        chosen[static_cast<std::size_t>(best)] = 1;
        result.coreset.indices.push_back(static_cast<int>(best));
        nearest = nearest.cwiseMin(dist.col(best));
        trace.gains.push_back(best_gain);
        trace.cover_loss.push_back(ordered_sum(nearest));
    }

    const auto& sel = result.coreset.indices;
    std::vector<int> by_index = sel;
    std::sort(by_index.begin(), by_index.end());
    std::vector<double> counts(static_cast<std::size_t>(m), 0.0);
    for (Eigen::Index i = 0; i < m; ++i)
    {
        int owner = -1;
        if (chosen[static_cast<std::size_t>(i)])
            owner = static_cast<int>(i);
        else
        {
            double closest = std::numeric_limits<double>::infinity();
            for (int j : by_index)
                if (dist(i, j) < closest)
                {
                    closest = dist(i, j);
                    owner = j;
                }
        }
        counts[static_cast<std::size_t>(owner)] += 1.0;
    }
    for (int j : sel)
        result.coreset.weights.push_back(counts[static_cast<std::size_t>(j)]);
    return result;
}

Coreset craig_select(const GradientFeatures& features, const SolverConfig& cfg)
{
    return craig_greedy(features, cfg).coreset;
}

namespace
{
// Lawson-Hanson active set on the normal equations of min ||b - Ag||^2 + lambda ||g||^2, g >= 0,
// with Q = A'A + lambda I and c = A'b. Starts from a feasible x so refits can be warm-started.
Vector nnls_gram(const Matrix& Q, const Vector& c, Vector x)
{
    const Eigen::Index s = Q.rows();
    const double tol = 1e-8 * std::max(1.0, c.cwiseAbs().maxCoeff());
    std::vector<char> passive(static_cast<std::size_t>(s), 0);
    for (Eigen::Index j = 0; j < s; ++j)
        passive[static_cast<std::size_t>(j)] = x(j) > 0.0;

    auto solve_passive = [&] {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = 0; j < s; ++j)
            if (passive[static_cast<std::size_t>(j)])
                cols.push_back(j);
        const auto np = static_cast<Eigen::Index>(cols.size());
        Matrix Qp(np, np);
        Vector cp(np);
        for (Eigen::Index a = 0; a < np; ++a)
        {
            cp(a) = c(cols[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < np; ++b)
                Qp(a, b) = Q(cols[static_cast<std::size_t>(a)], cols[static_cast<std::size_t>(b)]);
        }
        const Vector sol = Eigen::CompleteOrthogonalDecomposition<Matrix>(Qp).solve(cp);
        Vector z = Vector::Zero(s);
        for (Eigen::Index a = 0; a < np; ++a)
            z(cols[static_cast<std::size_t>(a)]) = sol(a);
        return z;
    };

    Vector w = c - Q * x;
    const int max_outer = static_cast<int>(30 * s + 100);
    int outer = 0;
    while (true)
    {
        Eigen::Index enter = -1;
        double best = tol;
        for (Eigen::Index j = 0; j < s; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w(j) > best)
            {
                best = w(j);
                enter = j;
            }
        if (enter < 0 || ++outer > max_outer)
            break;
        passive[static_cast<std::size_t>(enter)] = 1;
        for (int inner = 0; inner <= static_cast<int>(s); ++inner)
        {
            const Vector z = solve_passive();
            bool feasible = true;
            double alpha = 1.0;
            for (Eigen::Index j = 0; j < s; ++j)
                if (passive[static_cast<std::size_t>(j)] && z(j) <= 0.0)
                {
                    feasible = false;
                    const double denom = x(j) - z(j);
                    alpha = denom > 0.0 ? std::min(alpha, x(j) / denom) : 0.0;
                }
            if (feasible)
            {
                x = z;
                break;
            }
            x += alpha * (z - x);
            for (Eigen::Index j = 0; j < s; ++j)
                if (passive[static_cast<std::size_t>(j)] && x(j) <= 1e-15 * std::max(1.0, x.cwiseAbs().maxCoeff()))
                {
                    passive[static_cast<std::size_t>(j)] = 0;
                    x(j) = 0.0;
                }
        }
        w = c - Q * x;
    }

    x = x.cwiseMax(0.0);
    w = c - Q * x;
    double kkt = 0.0;
    for (Eigen::Index j = 0; j < s; ++j)
        kkt = std::max(kkt, x(j) > 0.0 ? std::abs(w(j)) : std::max(0.0, w(j)));
    if (kkt > tol)
        throw SolverError("nonneg_ridge_fit did not converge, KKT residual " + format_double(kkt), kkt);
    return x;
}
} // namespace

Vector nonneg_ridge_fit(const Matrix& A, const Vector& b, double lambda)
{
    require(A.cols() >= 1, "nonneg_ridge_fit needs at least one column");
    require(lambda >= 0.0 && std::isfinite(lambda), "ridge lambda must be >= 0");
    if (A.rows() != b.size())
        throw DimensionError("nonneg_ridge_fit: A has " + std::to_string(A.rows()) + " rows, b has " +
                             std::to_string(b.size()));
    const Matrix Q = A.transpose() * A + lambda * Matrix::Identity(A.cols(), A.cols());
    return nnls_gram(Q, A.transpose() * b, Vector::Zero(A.cols()));
}

OmpResult omp_greedy(const GradientFeatures& features, const SolverConfig& cfg)
{
    cfg.validate();
    const Eigen::Index m = features.units();
    if (m == 0)
        throw InvalidArgument("omp: empty feature set");
    const int k = cfg.budget.resolve(m);
    const Matrix A = features.rows.transpose(); // p x m, one column per unit
    const Vector b = A.rowwise().sum();
    const double lambda = cfg.omp_lambda;

    OmpResult result;
    result.coreset = tagged(cfg);
    auto& S = result.coreset.indices;
    Vector gamma = Vector::Zero(m);
    Vector residual = b;
    std::vector<char> chosen(static_cast<std::size_t>(m), 0);
    // Gram block and A'b restricted to the support, grown one unit at a time.
    Matrix Q(k, k);
    Vector c(k);
    Vector fitted;
    auto objective = [&] { return residual.norm() + lambda * gamma.squaredNorm(); };

    while (static_cast<int>(S.size()) < k)
    {
        if (!S.empty() && objective() <= cfg.tolerance)
            break;
        const Vector r = A.transpose() * residual - lambda * gamma;
        Eigen::Index pick = -1;
        double best = -1.0;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!chosen[static_cast<std::size_t>(j)] && std::abs(r(j)) > best)
            {
                best = std::abs(r(j));
                pick = j;
            }
        chosen[static_cast<std::size_t>(pick)] = 1;
        const auto s = static_cast<Eigen::Index>(S.size());
        for (Eigen::Index q = 0; q < s; ++q)
            Q(q, s) = Q(s, q) = A.col(S[static_cast<std::size_t>(q)]).dot(A.col(pick));
        Q(s, s) = A.col(pick).squaredNorm() + lambda;
        c(s) = A.col(pick).dot(b);
        S.push_back(static_cast<int>(pick));

        Vector start = Vector::Zero(s + 1);
        if (s > 0)
            start.head(s) = fitted;
        fitted = nnls_gram(Q.topLeftCorner(s + 1, s + 1), c.head(s + 1), start);
        gamma.setZero();
        residual = b;
        for (Eigen::Index q = 0; q <= s; ++q)
        {
            gamma(S[static_cast<std::size_t>(q)]) = fitted(q);
            residual -= fitted(q) * A.col(S[static_cast<std::size_t>(q)]);
        }
        result.residuals.push_back(residual.norm());
    }
    for (int j : S)
        result.coreset.weights.push_back(gamma(j));
    return result;
}

Coreset omp_select(const GradientFeatures& features, const SolverConfig& cfg)
{
    return omp_greedy(features, cfg).coreset;
}

Coreset random_select(Eigen::Index m, const SolverConfig& cfg)
{
    cfg.validate();
    const int k = cfg.budget.resolve(m);
    std::vector<int> pool(static_cast<std::size_t>(m));
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(cfg.seed);
    for (int i = 0; i < k; ++i)
    {
        const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(m - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    Coreset c = tagged(cfg);
    c.indices.assign(pool.begin(), pool.begin() + k);
    std::sort(c.indices.begin(), c.indices.end());
    c.weights.assign(static_cast<std::size_t>(k), static_cast<double>(m) / static_cast<double>(k));
    return c;
}

Coreset select_units(const GradientFeatures& features, const SolverConfig& cfg)
{
    switch (cfg.method)
    {
    case SolverMethod::craig:
        return craig_select(features, cfg);
    case SolverMethod::gradmatch_omp:
        return omp_select(features, cfg);
    case SolverMethod::random:
        return random_select(features.units(), cfg);
    }
    throw InvalidArgument("unknown solver");
}

double matching_residual(const Matrix& rows, const IndexList& indices, const std::vector<double>& weights)
{
    if (indices.size() != weights.size())
        throw DimensionError("matching_residual: index/weight count mismatch");
    RowVector diff = rows.colwise().sum();
    for (std::size_t q = 0; q < indices.size(); ++q)
    {
        require(indices[q] >= 0 && indices[q] < rows.rows(), "matching_residual: index out of range");
        diff -= weights[q] * rows.row(indices[q]);
    }
    return diff.norm();
}

OracleResult brute_force_subset_oracle(const GradientFeatures& features, int k)
{
    const Eigen::Index m = features.units();
    if (m > 12 || k > 4)
        throw InvalidArgument("brute-force oracle refuses m > 12 or k > 4");
    require(k >= 1 && k <= m, "oracle subset size must be in [1, m]");
    const Matrix A = features.rows.transpose();
    const Vector b = A.rowwise().sum();

    OracleResult best;
    best.residual = std::numeric_limits<double>::infinity();
    std::vector<int> subset(static_cast<std::size_t>(k));
    std::iota(subset.begin(), subset.end(), 0);
    while (true)
    {
        Matrix cols(A.rows(), k);
        for (int q = 0; q < k; ++q)
            cols.col(q) = A.col(subset[static_cast<std::size_t>(q)]);
        Vector g = Eigen::CompleteOrthogonalDecomposition<Matrix>(cols).solve(b);
        g = g.cwiseMax(0.0);
        const double res = (b - cols * g).norm();
        if (res < best.residual)
        {
            best.residual = res;
            best.subset = subset;
            best.weights = g;
        }
        int pos = k - 1;
        while (pos >= 0 && subset[static_cast<std::size_t>(pos)] == m - k + pos)
            --pos;
        if (pos < 0)
            break;
        ++subset[static_cast<std::size_t>(pos)];
        for (int q = pos + 1; q < k; ++q)
            subset[static_cast<std::size_t>(q)] = subset[static_cast<std::size_t>(q - 1)] + 1;
    }
    return best;
}

Coreset expand_to_samples(const Coreset& units, const GradientFeatures& features)
{
    Coreset out = units;
    out.indices.clear();
    out.weights.clear();
    for (std::size_t q = 0; q < units.indices.size(); ++q)
    {
        const auto& members = features.index_map.at(static_cast<std::size_t>(units.indices[q]));
        for (int s : members)
        {
            out.indices.push_back(s);
            out.weights.push_back(units.weights[q]);
        }
    }
    return out;
}

void write_coreset(std::ostream& out, const Coreset& c)
{
    out << "# provenance: solver=" << c.solver << " config=" << c.config_hash << " epoch=" << c.epoch << '\n';
    for (std::size_t q = 0; q < c.indices.size(); ++q)
        out << c.indices[q] << ' ' << format_double(c.weights[q]) << '\n';
}

Coreset read_coreset(std::istream& in)
{
    Coreset c;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
            continue;
        if (line.rfind("# provenance:", 0) == 0)
        {
            have_header = true;
            std::istringstream fields(line.substr(13));
            std::string kv;
            while (fields >> kv)
            {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    continue;
                const std::string key = kv.substr(0, eq);
                const std::string value = kv.substr(eq + 1);
                if (key == "solver")
                    c.solver = value;
                else if (key == "config")
                    c.config_hash = value;
                else if (key == "epoch")
                    c.epoch = std::stoi(value);
            }
            continue;
        }
        if (line[0] == '#')
            continue;
        std::istringstream fields(line);
        int index;
        double weight;
        std::string extra;
        if (!(fields >> index >> weight) || (fields >> extra))
            throw ParseError("expected 'index weight'", line_no);
        c.indices.push_back(index);
        c.weights.push_back(weight);
    }
    if (!have_header)
        throw ParseError("missing '# provenance:' line", 0);
    return c;
}

} // namespace acs
