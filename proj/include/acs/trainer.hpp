#pragma once

#include "acs/solvers.hpp"

#include <functional>
#include <iosfwd>
#include <optional>

namespace acs
{
/// Multi-step learning-rate decay: lr(t) = initial * factor^(number of decay epochs < t).
struct LrSchedule
{
    double initial = 0.1;
    std::vector<int> decay_epochs;
    double decay_factor = 0.1;

    double at(int epoch) const;
};

struct TrainConfig
{
    int epochs = 40;
    /// Warm-start coefficient kappa: the first round(kappa * epochs * fraction) epochs use all data.
    double warm_start = 0.5;
    /// Epochs between coreset selections.
    int period = 10;
    /// Coreset size as a fraction of the selection units.
    double fraction = 0.5;
    int batch_size = 64;
    int selection_batch_size = 20;
    LrSchedule lr;
    double weight_decay = 0.0;
    /// One step per epoch over the whole (weighted) training set.
    bool full_batch = false;

    std::vector<int> hidden{32};
    Activation activation = Activation::relu;

    ObjectiveKind objective;
    AttackConfig attack;
    AttackConfig selection_attack;
    AttackConfig eval_attack;
    SolverConfig solver;
    std::uint64_t seed = 0;

    void validate() const;
    int warm_epochs() const;
    std::vector<int> layer_sizes(int input_dim, int num_classes) const;
};

enum class EpochAction
{
    warm_full_data,
    select_then_coreset,
    reuse_coreset
};

EpochAction epoch_plan(const TrainConfig& cfg, int epoch);

/// Instrumentation for the gradient budget.
struct Counters
{
    /// Per-sample loss gradients taken in SGD steps (one per sample per step).
    std::uint64_t sgd_sample_grads = 0;
    /// Per-sample gradients taken while computing selection features.
    std::uint64_t selection_sample_grads = 0;
};

struct Timers
{
    double selection_seconds = 0.0;
    double attack_seconds = 0.0;
    double step_seconds = 0.0;
};

struct TrainState
{
    ModelParams params;
    int epoch = 0; // last completed epoch
    std::optional<Coreset> coreset;
    Counters counters;
    Timers timers;
};

struct MetricsRecord
{
    int epoch = 0;
    double loss = 0.0;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    std::optional<double> gamma;
    double epoch_seconds = 0.0;
    int coreset_samples = 0;
    EpochAction action = EpochAction::warm_full_data;
};

/// One JSON object, keys in the fixed order
/// epoch, loss, clean_acc, robust_acc, gamma, epoch_seconds, coreset_samples.
/// With include_wall_clock=false epoch_seconds is written as 0 so the line is reproducible.
std::string metrics_json(const MetricsRecord& record, bool include_wall_clock);

struct Selection
{
    Coreset samples;
    Coreset units;
    GradientFeatures unit_features;
    double gamma_before = 0.0;
    double gamma_after = 0.0;
};

/// Adversarial features -> batch-wise units -> greedy solver -> sample-level coreset.
Selection select_coreset(TrainState& state, const Dataset& data, const TrainConfig& cfg, int epoch);

/// Weighted adversarial SGD over the coreset for one epoch. Loss and coreset size are filled in the record.
MetricsRecord weighted_sgd_epoch(TrainState& state, const Dataset& data, const Coreset& coreset,
                                 const TrainConfig& cfg, int epoch);

struct EvalResult
{
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

EvalResult evaluate(const ModelParams& params, const Dataset& data, const AttackConfig& attack);

/// Seed of the attack used for the given SGD batch; exposed so reference loops can reproduce it.
std::uint64_t batch_attack_seed(const TrainConfig& cfg, int epoch, int batch_no);
/// Seed of the per-epoch shuffle of the training set.
std::uint64_t epoch_shuffle_seed(const TrainConfig& cfg, int epoch);
std::uint64_t init_seed(const TrainConfig& cfg);

enum class CheckpointReason
{
    selection,
    abort,
    final
};

struct TrainOptions
{
    std::function<void(const MetricsRecord&)> on_epoch;
    std::function<void(const TrainState&, CheckpointReason)> on_checkpoint;
    std::function<void(const Selection&, int epoch)> on_selection;
    /// Continue from a checkpointed state instead of a fresh initialization.
    std::optional<TrainState> resume;
    bool evaluate_each_epoch = true;
};

struct TrainResult
{
    ModelParams params;
    std::vector<MetricsRecord> metrics;
    Counters counters;
    Timers timers;
    double total_seconds = 0.0;
    double selection_share = 0.0;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data, const Dataset& eval_data,
                  const TrainOptions& options = {});

struct Checkpoint
{
    std::uint64_t config_hash = 0;
    ModelParams params;
    std::uint64_t seed = 0;
    /// Last completed epoch.
    int epoch = 0;
};

/// Binary ACSC encoding, little-endian.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

} // namespace acs
