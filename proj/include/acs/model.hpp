#pragma once

#include "acs/common.hpp"

#include <functional>
#include <variant>

namespace acs
{
/// Labeled feature matrix: row i of `features` has label `labels[i]` in [0, num_classes).
struct Dataset
{
    Matrix features;
    std::vector<int> labels;
    int num_classes = 2;

    int n() const { return static_cast<int>(features.rows()); }
    int d() const { return static_cast<int>(features.cols()); }

    /// Throws InvalidArgument / NumericError if any invariant is broken.
    void validate() const;

    Dataset subset(const IndexList& rows) const;
};

enum class Activation
{
    relu,
    identity
};

/// Fully connected softmax classifier. weights[l] is (out x in), biases[l] has `out` entries.
struct ModelParams
{
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Activation activation = Activation::relu;

    static ModelParams zeros(const std::vector<int>& layer_sizes, Activation act);
    /// Uniform Glorot initialization, biases zero.
    static ModelParams glorot(const std::vector<int>& layer_sizes, Activation act, std::uint64_t seed);

    int num_layers() const { return static_cast<int>(weights.size()); }
    int input_dim() const { return static_cast<int>(weights.front().cols()); }
    int num_classes() const { return static_cast<int>(weights.back().rows()); }
    std::vector<int> layer_sizes() const;

    /// Total parameter count.
    Eigen::Index size() const;
    /// Parameter count of the final linear layer: (h_{L-1} + 1) * k.
    Eigen::Index last_layer_size() const;

    /// Layer by layer: weights row-major, then bias. The last-layer block is the tail.
    Vector flatten() const;
    void assign(const Eigen::Ref<const Vector>& flat);
    ModelParams zeros_like() const;

    /// this += scale * other
    void axpy(double scale, const ModelParams& other);

    void validate() const;
};

/// Hard labels or row-stochastic soft targets for a batch.
class Target
{
public:
    static Target hard(std::vector<int> labels);
    static Target soft(Matrix probs);

    bool is_hard() const { return std::holds_alternative<std::vector<int>>(value_); }
    Eigen::Index rows() const;
    const std::vector<int>& labels() const { return std::get<std::vector<int>>(value_); }
    const Matrix& probs() const { return std::get<Matrix>(value_); }

    /// batch x k matrix (one-hot rows for hard labels).
    Matrix dense(int num_classes) const;
    Target subset(const IndexList& rows) const;

    void check(Eigen::Index batch, int num_classes) const;

private:
    explicit Target(std::variant<std::vector<int>, Matrix> v) : value_(std::move(v)) {}
    std::variant<std::vector<int>, Matrix> value_;
};

struct ForwardCache
{
    std::vector<Matrix> pre;  // pre[l]: batch x out_l
    std::vector<Matrix> post; // post[0] = input batch, post[l + 1] = activation of layer l
    Matrix logits;
    Matrix probs;
    Matrix log_probs;
    std::vector<int> layer_sizes;

    Eigen::Index batch() const { return logits.rows(); }
    /// Input of the final linear layer.
    const Matrix& penultimate() const { return post[post.size() - 2]; }
};

Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);

ForwardCache forward(const ModelParams& params, const Matrix& x);

struct LossResult
{
    double loss;
    ForwardCache cache;
};

/// Mean softmax cross-entropy over the batch.
LossResult forward_loss(const ModelParams& params, const Matrix& x, const Target& target);

/// Per-sample cross-entropy -sum_c t_c log p_c.
Vector per_sample_losses(const ForwardCache& cache, const Target& target);

/// Gradient of the mean loss.
ModelParams backward_grads(const ModelParams& params, const ForwardCache& cache, const Target& target);

/// Backpropagate an arbitrary logit gradient (batch x k, already scaled) to the parameters.
ModelParams backward_from_logit_grad(const ModelParams& params, const ForwardCache& cache,
                                     const Matrix& logit_grad);

/// Backpropagate a logit gradient to the inputs; row i is d/dx_i.
Matrix input_grad_from_logit_grad(const ModelParams& params, const ForwardCache& cache,
                                  const Matrix& logit_grad);

/// Row i: [logit_grad_i (x) penultimate_i  (row-major k x h),  logit_grad_i].
Matrix last_layer_rows(const ForwardCache& cache, const Matrix& logit_grad);

/// Gradient of each sample's own loss w.r.t. the last linear layer, one row per sample.
Matrix per_sample_last_layer_grad(const ModelParams& params, const Matrix& x, const Target& target);

/// Central differences of a scalar function.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& at, double step);

/// Central differences of the mean loss w.r.t. every parameter.
ModelParams finite_diff_grad(const ModelParams& params, const Matrix& x, const Target& target,
                             double step);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const Matrix& logits, const std::vector<int>& labels);

} // namespace acs
