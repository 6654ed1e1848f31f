#include "acs/model.hpp"
#include "acs/rng.hpp"

#include <cmath>

namespace acs
{
void Dataset::validate() const
{
    require(n() >= 1 && d() >= 1, "dataset needs n >= 1 and d >= 1");
    require(num_classes >= 2, "dataset needs at least two classes");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows())
        throw DimensionError("dataset has " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(features.rows()) + " rows");
    for (std::size_t i = 0; i < labels.size(); ++i)
        require(labels[i] >= 0 && labels[i] < num_classes,
                "label " + std::to_string(labels[i]) + " of row " + std::to_string(i) + " out of range");
    if (!features.allFinite())
        throw NumericError("dataset features contain NaN or Inf");
}

Dataset Dataset::subset(const IndexList& rows) const
{
    Dataset out;
    out.num_classes = num_classes;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
        out.labels.push_back(labels[rows[i]]);
    }
    return out;
}

ModelParams ModelParams::zeros(const std::vector<int>& sizes, Activation act)
{
    require(sizes.size() >= 2, "a model needs at least input and output sizes");
    ModelParams p;
    p.activation = act;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    {
        require(sizes[l] >= 1 && sizes[l + 1] >= 1, "layer sizes must be positive");
        p.weights.push_back(Matrix::Zero(sizes[l + 1], sizes[l]));
        p.biases.push_back(Vector::Zero(sizes[l + 1]));
    }
    return p;
}

ModelParams ModelParams::glorot(const std::vector<int>& sizes, Activation act, std::uint64_t seed)
{
    ModelParams p = zeros(sizes, act);
    Rng rng(seed);
    for (auto& w : p.weights)
    {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = rng.uniform(-limit, limit);
    }
    return p;
}

std::vector<int> ModelParams::layer_sizes() const
{
    std::vector<int> sizes{input_dim()};
    for (const auto& w : weights)
        sizes.push_back(static_cast<int>(w.rows()));
    return sizes;
}

Eigen::Index ModelParams::size() const
{
    Eigen::Index total = 0;
    for (int l = 0; l < num_layers(); ++l)
        total += weights[l].size() + biases[l].size();
    return total;
}

Eigen::Index ModelParams::last_layer_size() const
{
    return weights.back().size() + biases.back().size();
}

Vector ModelParams::flatten() const
{
    Vector flat(size());
    Eigen::Index at = 0;
    for (int l = 0; l < num_layers(); ++l)
    {
        const Matrix& w = weights[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                flat(at++) = w(i, j);
        flat.segment(at, biases[l].size()) = biases[l];
        at += biases[l].size();
    }
    return flat;
}

void ModelParams::assign(const Eigen::Ref<const Vector>& flat)
{
    if (flat.size() != size())
        throw DimensionError("flat parameter vector has " + std::to_string(flat.size()) +
                             " entries, model has " + std::to_string(size()));
    Eigen::Index at = 0;
    for (int l = 0; l < num_layers(); ++l)
    {
        Matrix& w = weights[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = flat(at++);
        biases[l] = flat.segment(at, biases[l].size());
        at += biases[l].size();
    }
}

ModelParams ModelParams::zeros_like() const
{
    return zeros(layer_sizes(), activation);
}

void ModelParams::axpy(double scale, const ModelParams& other)
{
    if (other.layer_sizes() != layer_sizes())
        throw DimensionError("axpy between models of different shapes");
    for (int l = 0; l < num_layers(); ++l)
    {
        weights[l] += scale * other.weights[l];
        biases[l] += scale * other.biases[l];
    }
}

void ModelParams::validate() const
{
    require(!weights.empty() && weights.size() == biases.size(), "model has no layers");
    for (int l = 0; l < num_layers(); ++l)
    {
        if (biases[l].size() != weights[l].rows())
            throw DimensionError("bias of layer " + std::to_string(l) + " does not match its weights");
        if (l > 0 && weights[l].cols() != weights[l - 1].rows())
            throw DimensionError("layer " + std::to_string(l) + " input does not chain");
        if (!weights[l].allFinite() || !biases[l].allFinite())
            throw NumericError("non-finite parameter in layer " + std::to_string(l));
    }
    require(num_classes() >= 2, "output layer needs at least two classes");
}

Target Target::hard(std::vector<int> labels)
{
    return Target(std::move(labels));
}

Target Target::soft(Matrix probs)
{
    return Target(std::move(probs));
}

Eigen::Index Target::rows() const
{
    return is_hard() ? static_cast<Eigen::Index>(labels().size()) : probs().rows();
}

Matrix Target::dense(int num_classes) const
{
    if (!is_hard())
        return probs();
    Matrix t = Matrix::Zero(rows(), num_classes);
    for (std::size_t i = 0; i < labels().size(); ++i)
        t(static_cast<Eigen::Index>(i), labels()[i]) = 1.0;
    return t;
}

Target Target::subset(const IndexList& rows) const
{
    if (is_hard())
    {
        std::vector<int> out;
        out.reserve(rows.size());
        for (int r : rows)
            out.push_back(labels()[r]);
        return hard(std::move(out));
    }
    Matrix out(static_cast<Eigen::Index>(rows.size()), probs().cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = probs().row(rows[i]);
    return soft(std::move(out));
}

void Target::check(Eigen::Index batch, int num_classes) const
{
    if (rows() != batch)
        throw DimensionError("target has " + std::to_string(rows()) + " rows for a batch of " +
                             std::to_string(batch));
    if (is_hard())
    {
        for (int y : labels())
            require(y >= 0 && y < num_classes, "label " + std::to_string(y) + " out of range");
        return;
    }
    const Matrix& p = probs();
    if (p.cols() != num_classes)
        throw DimensionError("soft target has " + std::to_string(p.cols()) + " columns, model has " +
                             std::to_string(num_classes) + " classes");
    if (!p.allFinite())
        throw NumericError("soft target contains NaN or Inf");
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        require((p.row(i).array() >= 0.0).all() && std::abs(p.row(i).sum() - 1.0) <= 1e-9,
                "soft target row " + std::to_string(i) + " is not a probability vector");
}

Matrix log_softmax(const Matrix& logits)
{
    const Vector row_max = logits.rowwise().maxCoeff();
    Matrix shifted = logits.colwise() - row_max;
    const Vector log_norm = shifted.array().exp().rowwise().sum().log().matrix();
    shifted.colwise() -= log_norm;
    return shifted;
}

Matrix softmax(const Matrix& logits)
{
    return log_softmax(logits).array().exp().matrix();
}

namespace
{
void check_input(const ModelParams& params, const Matrix& x)
{
    if (x.cols() != params.input_dim())
        throw DimensionError("batch has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(params.input_dim()));
    if (!x.allFinite())
        throw NumericError("input batch contains NaN or Inf");
}

void check_cache(const ModelParams& params, const ForwardCache& cache)
{
    if (cache.layer_sizes != params.layer_sizes() ||
        cache.pre.size() != static_cast<std::size_t>(params.num_layers()))
        throw CacheError("forward cache was produced by a model of a different shape");
}

void check_logit_grad(const ForwardCache& cache, const Matrix& g)
{
    if (g.rows() != cache.batch() || g.cols() != cache.logits.cols())
        throw CacheError("logit gradient shape does not match the cached batch");
}
} // namespace

ForwardCache forward(const ModelParams& params, const Matrix& x)
{
    check_input(params, x);
    ForwardCache cache;
    cache.layer_sizes = params.layer_sizes();
    cache.post.push_back(x);
    for (int l = 0; l < params.num_layers(); ++l)
    {
        Matrix z = cache.post.back() * params.weights[l].transpose();
        z.rowwise() += params.biases[l].transpose();
        cache.pre.push_back(z);
        const bool hidden = l + 1 < params.num_layers();
        if (hidden && params.activation == Activation::relu)
            cache.post.push_back(z.cwiseMax(0.0));
        else
            cache.post.push_back(std::move(z));
    }
    cache.logits = cache.pre.back();
    cache.log_probs = log_softmax(cache.logits);
    cache.probs = cache.log_probs.array().exp().matrix();
    return cache;
}

Vector per_sample_losses(const ForwardCache& cache, const Target& target)
{
    target.check(cache.batch(), static_cast<int>(cache.logits.cols()));
    Vector losses(cache.batch());
    if (target.is_hard())
    {
        for (Eigen::Index i = 0; i < cache.batch(); ++i)
            losses(i) = -cache.log_probs(i, target.labels()[static_cast<std::size_t>(i)]);
    }
    else
    {
        losses = -(target.probs().array() * cache.log_probs.array()).rowwise().sum().matrix();
    }
    return losses;
}

LossResult forward_loss(const ModelParams& params, const Matrix& x, const Target& target)
{
    params.validate();
    ForwardCache cache = forward(params, x);
    const Vector losses = per_sample_losses(cache, target);
    double total = 0.0;
    for (Eigen::Index i = 0; i < losses.size(); ++i)
        total += losses(i);
    const double loss = total / static_cast<double>(losses.size());
    if (!std::isfinite(loss))
        throw NumericError("cross-entropy is not finite");
    return {loss, std::move(cache)};
}

namespace
{
/// Gradient w.r.t. pre-activations of every layer, last layer first seeded by logit_grad.
std::vector<Matrix> backprop_deltas(const ModelParams& params, const ForwardCache& cache,
                                    const Matrix& logit_grad)
{
    const int layers = params.num_layers();
    std::vector<Matrix> delta(static_cast<std::size_t>(layers));
    delta[layers - 1] = logit_grad;
    for (int l = layers - 1; l > 0; --l)
    {
        Matrix upstream = delta[l] * params.weights[l];
        if (params.activation == Activation::relu)
            upstream.array() *= (cache.pre[l - 1].array() > 0.0).cast<double>();
        delta[l - 1] = std::move(upstream);
    }
    return delta;
}
} // namespace

ModelParams backward_from_logit_grad(const ModelParams& params, const ForwardCache& cache,
                                     const Matrix& logit_grad)
{
    check_cache(params, cache);
    check_logit_grad(cache, logit_grad);
    const auto delta = backprop_deltas(params, cache, logit_grad);
    ModelParams grad = params.zeros_like();
    for (int l = 0; l < params.num_layers(); ++l)
    {
        grad.weights[l].noalias() = delta[l].transpose() * cache.post[l];
        grad.biases[l] = delta[l].colwise().sum().transpose();
    }
    return grad;
}

Matrix input_grad_from_logit_grad(const ModelParams& params, const ForwardCache& cache,
                                  const Matrix& logit_grad)
{
    check_cache(params, cache);
    check_logit_grad(cache, logit_grad);
    const auto delta = backprop_deltas(params, cache, logit_grad);
    return delta.front() * params.weights.front();
}

ModelParams backward_grads(const ModelParams& params, const ForwardCache& cache, const Target& target)
{
    check_cache(params, cache);
    target.check(cache.batch(), static_cast<int>(cache.logits.cols()));
    const Matrix g = (cache.probs - target.dense(static_cast<int>(cache.logits.cols()))) /
                     static_cast<double>(cache.batch());
    return backward_from_logit_grad(params, cache, g);
}

Matrix last_layer_rows(const ForwardCache& cache, const Matrix& logit_grad)
{
    check_logit_grad(cache, logit_grad);
    const Matrix& a = cache.penultimate();
    const Eigen::Index k = logit_grad.cols();
    const Eigen::Index h = a.cols();
    Matrix rows(cache.batch(), (h + 1) * k);
    for (Eigen::Index c = 0; c < k; ++c)
        rows.middleCols(c * h, h) = a.array().colwise() * logit_grad.col(c).array();
    rows.rightCols(k) = logit_grad;
    return rows;
}

Matrix per_sample_last_layer_grad(const ModelParams& params, const Matrix& x, const Target& target)
{
    params.validate();
    const ForwardCache cache = forward(params, x);
    target.check(cache.batch(), params.num_classes());
    const Matrix g = cache.probs - target.dense(params.num_classes());
    return last_layer_rows(cache, g);
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& at, double step)
{
    require(step > 0.0, "finite-difference step must be positive");
    Vector grad(at.size());
    Vector probe = at;
    for (Eigen::Index i = 0; i < at.size(); ++i)
    {
        probe(i) = at(i) + step;
        const double up = f(probe);
        probe(i) = at(i) - step;
        const double down = f(probe);
        probe(i) = at(i);
        grad(i) = (up - down) / (2.0 * step);
    }
    return grad;
}

ModelParams finite_diff_grad(const ModelParams& params, const Matrix& x, const Target& target, double step)
{
    require(step > 0.0, "finite-difference step must be positive");
    ModelParams probe = params;
    const Vector flat = finite_diff_grad(
        [&](const Vector& theta) {
            probe.assign(theta);
            return forward_loss(probe, x, target).loss;
        },
        params.flatten(), step);
    ModelParams grad = params.zeros_like();
    grad.assign(flat);
    return grad;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels)
{
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
        throw DimensionError("accuracy: label count does not match logits");
    if (labels.empty())
        return 0.0;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
    {
        Eigen::Index best;
        logits.row(i).maxCoeff(&best);
        correct += (best == labels[static_cast<std::size_t>(i)]);
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

} // namespace acs
