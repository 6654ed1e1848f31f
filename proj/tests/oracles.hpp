#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's forward/backward code: everything is written with plain loops.

#include "acs/model.hpp"
#include "acs/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle
{
using acs::Matrix;
using acs::Vector;

/// Random net with Glorot weights and random biases so no gradient block is trivially zero.
inline acs::ModelParams random_net(const std::vector<int>& sizes, acs::Activation act, std::uint64_t seed)
{
    acs::ModelParams p = acs::ModelParams::glorot(sizes, act, seed);
    acs::Rng rng(seed ^ 0xb1a5);
    for (auto& b : p.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i)
            b(i) = 0.3 * rng.normal();
    return p;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, acs::Rng& rng, double scale = 1.0)
{
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = scale * rng.normal();
    return m;
}

/// Logits of one sample, straight-line loops.
inline std::vector<double> logits(const acs::ModelParams& p, const std::vector<double>& x)
{
    std::vector<double> a = x;
    for (int l = 0; l < p.num_layers(); ++l)
    {
        const auto& W = p.weights[static_cast<std::size_t>(l)];
        std::vector<double> z(static_cast<std::size_t>(W.rows()));
        for (Eigen::Index r = 0; r < W.rows(); ++r)
        {
            double s = p.biases[static_cast<std::size_t>(l)](r);
            for (Eigen::Index c = 0; c < W.cols(); ++c)
                s += W(r, c) * a[static_cast<std::size_t>(c)];
            z[static_cast<std::size_t>(r)] = s;
        }
        if (l + 1 < p.num_layers() && p.activation == acs::Activation::relu)
            for (double& v : z)
                v = std::max(0.0, v);
        a = z;
    }
    return a;
}

/// -sum_c t_c log softmax(z)_c with log-sum-exp written out.
inline double soft_ce(const std::vector<double>& z, const std::vector<double>& t)
{
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z)
        s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    double loss = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c)
        loss -= t[c] * (z[c] - lse);
    return loss;
}

inline std::vector<double> softmax(const std::vector<double>& z)
{
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c)
        s += (p[c] = std::exp(z[c] - mx));
    for (double& v : p)
        v /= s;
    return p;
}

inline std::vector<double> row(const Matrix& m, Eigen::Index i)
{
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        r[static_cast<std::size_t>(j)] = m(i, j);
    return r;
}

inline std::vector<double> onehot(int y, int k)
{
    std::vector<double> t(static_cast<std::size_t>(k), 0.0);
    t[static_cast<std::size_t>(y)] = 1.0;
    return t;
}

/// Mean hard-label CE over the batch.
inline double mean_ce(const acs::ModelParams& p, const Matrix& x, const std::vector<int>& y)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        s += soft_ce(logits(p, row(x, i)), onehot(y[static_cast<std::size_t>(i)], p.num_classes()));
    return s / static_cast<double>(x.rows());
}

/// Central differences over a flat parameter vector.
inline Vector central_diff(const std::function<double(const Vector&)>& f, const Vector& at, double h)
{
    Vector g(at.size());
    Vector t = at;
    for (Eigen::Index i = 0; i < at.size(); ++i)
    {
        const double keep = t(i);
        t(i) = keep + h;
        const double up = f(t);
        t(i) = keep - h;
        const double down = f(t);
        t(i) = keep;
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

inline double rel_err(const Vector& a, const Vector& b)
{
    const double scale = std::max(b.lpNorm<Eigen::Infinity>(), 1e-12);
    return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

/// Facility-location value of a selection: sum_i min(dmax, min_{j in S} ||g_i - g_j||).
inline double cover_loss(const Matrix& rows, const std::vector<int>& sel, double dmax)
{
    double total = 0.0;
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
    {
        double best = dmax;
        for (int j : sel)
            best = std::min(best, (rows.row(i) - rows.row(j)).norm());
        total += best;
    }
    return total;
}

/// Normal-approximation 3-sigma band of a binomial proportion.
inline bool within_binomial(double observed, double p, int trials)
{
    return std::abs(observed - p) <= 3.0 * std::sqrt(p * (1.0 - p) / trials);
}

} // namespace oracle
