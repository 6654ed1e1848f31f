#include "acs/trainer.hpp"
#include "acs/rng.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>

namespace acs
{
namespace
{
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stream tags for seed derivation.
constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kShuffleTag = 2;
constexpr std::uint64_t kAttackTag = 3;
constexpr std::uint64_t kSelectAttackTag = 4;
constexpr std::uint64_t kSelectBatchTag = 5;
constexpr std::uint64_t kSolverTag = 6;
} // namespace

double LrSchedule::at(int epoch) const
{
    double lr = initial;
    for (int m : decay_epochs)
        if (m < epoch)
            lr *= decay_factor;
    return lr;
}

void TrainConfig::validate() const
{
    require(epochs >= 1, "epochs must be >= 1");
    require(warm_start >= 0.0 && warm_start <= 1.0, "warm-start coefficient must be in [0, 1]");
    require(period >= 1, "selection period must be >= 1");
    require(fraction > 0.0 && fraction <= 1.0, "coreset fraction must be in (0, 1]");
    require(batch_size >= 1 && selection_batch_size >= 1, "batch sizes must be >= 1");
    require(std::isfinite(lr.initial) && lr.initial > 0.0, "learning rate must be > 0");
    for (std::size_t i = 0; i < lr.decay_epochs.size(); ++i)
    {
        require(lr.decay_epochs[i] < epochs, "decay epochs must be < total epochs");
        require(i == 0 || lr.decay_epochs[i] > lr.decay_epochs[i - 1], "decay epochs must be strictly increasing");
    }
    require(weight_decay >= 0.0, "weight decay must be >= 0");
    for (int h : hidden)
        require(h >= 1, "hidden widths must be >= 1");
    objective.validate();
    attack.validate();
    selection_attack.validate();
    eval_attack.validate();
    solver.validate();
}

int TrainConfig::warm_epochs() const
{
    return static_cast<int>(std::llround(warm_start * static_cast<double>(epochs) * fraction));
}

std::vector<int> TrainConfig::layer_sizes(int input_dim, int num_classes) const
{
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(num_classes);
    return sizes;
}

EpochAction epoch_plan(const TrainConfig& cfg, int epoch)
{
    require(epoch >= 1 && epoch <= cfg.epochs, "epoch out of range");
    if (cfg.fraction >= 1.0)
        return EpochAction::warm_full_data;
    const int warm = cfg.warm_epochs();
    if (epoch <= warm)
        return EpochAction::warm_full_data;
    return (epoch - (warm + 1)) % cfg.period == 0 ? EpochAction::select_then_coreset : EpochAction::reuse_coreset;
}

std::uint64_t batch_attack_seed(const TrainConfig& cfg, int epoch, int batch_no)
{
    return Rng::derive(cfg.seed, {kAttackTag, static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(batch_no)})
        .next_u64();
}

std::uint64_t epoch_shuffle_seed(const TrainConfig& cfg, int epoch)
{
    return Rng::derive(cfg.seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)}).next_u64();
}

std::uint64_t init_seed(const TrainConfig& cfg)
{
    return Rng::derive(cfg.seed, {kInitTag}).next_u64();
}

std::string metrics_json(const MetricsRecord& r, bool include_wall_clock)
{
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["clean_acc"] = r.clean_acc;
    j["robust_acc"] = r.robust_acc;
    j["gamma"] = r.gamma ? nlohmann::ordered_json(*r.gamma) : nlohmann::ordered_json(nullptr);
    j["epoch_seconds"] = include_wall_clock ? r.epoch_seconds : 0.0;
    j["coreset_samples"] = r.coreset_samples;
    return j.dump();
}

Selection select_coreset(TrainState& state, const Dataset& data, const TrainConfig& cfg, int epoch)
{
    const auto start = Clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);

    AttackConfig attack = cfg.selection_attack;
    attack.seed = Rng::derive(cfg.seed, {kSelectAttackTag, e}).next_u64();
    const GradientFeatures samples = adv_grad_features(state.params, data, cfg.objective, attack);
    const int attack_grads = cfg.objective.tag == ObjectiveTag::vanilla || attack.epsilon == 0.0
                                 ? 0
                                 : attack.iterations * (attack.random_init ? attack.restarts : 1);
    state.counters.selection_sample_grads +=
        static_cast<std::uint64_t>(data.n()) * static_cast<std::uint64_t>(attack_grads + 1);

    Selection sel;
    sel.unit_features =
        batch_aggregate(samples, cfg.selection_batch_size, Rng::derive(cfg.seed, {kSelectBatchTag, e}).next_u64());

    SolverConfig solver = cfg.solver;
    solver.budget = Budget::of_fraction(cfg.fraction);
    solver.seed = Rng::derive(cfg.seed, {kSolverTag, e}).next_u64() ^ cfg.solver.seed;
    sel.units = select_units(sel.unit_features, solver);
    sel.units.epoch = epoch;
    sel.units.validate(sel.unit_features.units());
    sel.gamma_before = matching_residual(sel.unit_features.rows, {}, {});
    sel.gamma_after = matching_residual(sel.unit_features.rows, sel.units.indices, sel.units.weights);
    sel.samples = expand_to_samples(sel.units, sel.unit_features);
    state.timers.selection_seconds += seconds_since(start);
    return sel;
}

namespace
{
struct BatchObjective
{
    double loss;
    ModelParams grad;
};

/// Weighted mean objective sum_i w_i phi_i / sum_i w_i and its parameter gradient.
BatchObjective weighted_objective(const ModelParams& params, const Matrix& x, const std::vector<int>& y,
                                  const Vector& w, const TrainConfig& cfg, std::uint64_t attack_seed,
                                  Timers& timers)
{
    const int k = params.num_classes();
    const Target labels = Target::hard(y);
    const Matrix onehot = labels.dense(k);
    double total_w = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        total_w += w(i);
    require(total_w > 0.0, "coreset batch has zero total weight");

    auto scaled = [&](const Matrix& g) -> Matrix { return (g.array().colwise() * w.array()).matrix() / total_w; };
    auto weighted_mean = [&](const Vector& phi) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < phi.size(); ++i)
            s += w(i) * phi(i);
        return s / total_w;
    };

    AttackConfig attack = cfg.attack;
    attack.seed = attack_seed;

    if (cfg.objective.tag == ObjectiveTag::trades)
    {
        const double lambda = cfg.objective.trades_lambda;
        auto t0 = Clock::now();
        const AdvBatch adv = trades_inner_max(params, x, attack);
        timers.attack_seconds += seconds_since(t0);
        const ForwardCache clean = forward(params, x);
        const ForwardCache advc = forward(params, adv.x_adv);
        const Vector phi = per_sample_losses(clean, labels) + per_sample_losses(advc, Target::soft(clean.probs)) / lambda;

        const Matrix& p = clean.probs;
        const Matrix& l = advc.log_probs;
        const Vector expected = (p.array() * l.array()).rowwise().sum().matrix();
        const Matrix through_clean = (p - onehot) - (p.array() * (l.colwise() - expected).array()).matrix() / lambda;
        ModelParams grad = backward_from_logit_grad(params, clean, scaled(through_clean));
        grad.axpy(1.0, backward_from_logit_grad(params, advc, scaled((advc.probs - p) / lambda)));
        return {weighted_mean(phi), std::move(grad)};
    }

    Matrix input = x;
    if (cfg.objective.tag == ObjectiveTag::adversarial_ce)
    {
        auto t0 = Clock::now();
        input = pgd_attack(params, x, labels, attack).x_adv;
        timers.attack_seconds += seconds_since(t0);
    }
    const ForwardCache cache = forward(params, input);
    const Vector phi = per_sample_losses(cache, labels);
    return {weighted_mean(phi), backward_from_logit_grad(params, cache, scaled(cache.probs - onehot))};
}
} // namespace

MetricsRecord weighted_sgd_epoch(TrainState& state, const Dataset& data, const Coreset& coreset,
                                 const TrainConfig& cfg, int epoch)
{
    require(!coreset.indices.empty(), "cannot train on an empty coreset");
    coreset.validate(data.n());

    std::vector<int> order(coreset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(epoch_shuffle_seed(cfg, epoch));
    shuffle.shuffle(order);

    const double lr = cfg.lr.at(epoch);
    const std::size_t bs = cfg.full_batch ? order.size() : static_cast<std::size_t>(cfg.batch_size);
    MetricsRecord record;
    record.epoch = epoch;
    record.coreset_samples = static_cast<int>(coreset.size());

    double loss_sum = 0.0;
    double weight_sum = 0.0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no)
    {
        const std::size_t end = std::min(order.size(), start + bs);
        const auto len = static_cast<Eigen::Index>(end - start);
        Matrix xb(len, data.d());
        std::vector<int> yb(static_cast<std::size_t>(len));
        Vector wb(len);
        for (Eigen::Index r = 0; r < len; ++r)
        {
            const int pos = order[start + static_cast<std::size_t>(r)];
            const int sample = coreset.indices[static_cast<std::size_t>(pos)];
            xb.row(r) = data.features.row(sample);
            yb[static_cast<std::size_t>(r)] = data.labels[static_cast<std::size_t>(sample)];
            wb(r) = coreset.weights[static_cast<std::size_t>(pos)];
        }

        const auto t0 = Clock::now();
        BatchObjective obj =
            weighted_objective(state.params, xb, yb, wb, cfg, batch_attack_seed(cfg, epoch, batch_no), state.timers);
        if (!std::isfinite(obj.loss) || !obj.grad.flatten().allFinite())
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_no));
        if (cfg.weight_decay > 0.0)
            for (int l = 0; l < state.params.num_layers(); ++l)
                obj.grad.weights[l] += cfg.weight_decay * state.params.weights[l];
        state.params.axpy(-lr, obj.grad);
        state.timers.step_seconds += seconds_since(t0);
        state.counters.sgd_sample_grads += static_cast<std::uint64_t>(len);

        const double bw = wb.sum();
        loss_sum += obj.loss * bw;
        weight_sum += bw;
    }
    record.loss = loss_sum / weight_sum;
    return record;
}

EvalResult evaluate(const ModelParams& params, const Dataset& data, const AttackConfig& attack)
{
    data.validate();
    EvalResult r;
    r.clean_acc = accuracy(forward(params, data.features).logits, data.labels);
    if (attack.epsilon == 0.0)
    {
        r.robust_acc = r.clean_acc;
        return r;
    }
    // The clean point is inside the ball, so a sample only counts as robust if both points are right.
    const AdvBatch adv = pgd_attack(params, data.features, Target::hard(data.labels), attack);
    const Matrix clean_logits = forward(params, data.features).logits;
    const Matrix adv_logits = forward(params, adv.x_adv).logits;
    int robust = 0;
    for (int i = 0; i < data.n(); ++i)
    {
        Eigen::Index c = 0, a = 0;
        clean_logits.row(i).maxCoeff(&c);
        adv_logits.row(i).maxCoeff(&a);
        const int y = data.labels[static_cast<std::size_t>(i)];
        robust += (c == y && a == y) ? 1 : 0;
    }
    r.robust_acc = static_cast<double>(robust) / data.n();
    return r;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const Dataset& eval_data, const TrainOptions& options)
{
    cfg.validate();
    data.validate();
    eval_data.validate();
    const auto run_start = Clock::now();

    TrainState state;
    if (options.resume)
    {
        state = *options.resume;
        if (state.params.layer_sizes() != cfg.layer_sizes(data.d(), data.num_classes))
            throw DimensionError("resumed parameters do not match the configured architecture");
    }
    else
    {
        state.params = ModelParams::glorot(cfg.layer_sizes(data.d(), data.num_classes), cfg.activation, init_seed(cfg));
    }

    Coreset full;
    full.solver = "full";
    full.indices.resize(static_cast<std::size_t>(data.n()));
    std::iota(full.indices.begin(), full.indices.end(), 0);
    full.weights.assign(static_cast<std::size_t>(data.n()), 1.0);

    TrainResult result;
    for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch)
    {
        const auto epoch_start = Clock::now();
        const EpochAction action = epoch_plan(cfg, epoch);
        std::optional<double> gamma;
        if (action == EpochAction::select_then_coreset ||
            (action == EpochAction::reuse_coreset && !state.coreset))
        {
            if (options.on_checkpoint)
                options.on_checkpoint(state, CheckpointReason::selection);
            Selection sel = select_coreset(state, data, cfg, epoch);
            gamma = sel.gamma_after;
            if (options.on_selection)
                options.on_selection(sel, epoch);
            state.coreset = std::move(sel.samples);
        }
        const Coreset& active = action == EpochAction::warm_full_data ? full : *state.coreset;

        MetricsRecord record;
        try
        {
            record = weighted_sgd_epoch(state, data, active, cfg, epoch);
        }
        catch (const NumericError&)
        {
            if (options.on_checkpoint)
                options.on_checkpoint(state, CheckpointReason::abort);
            throw;
        }
        record.epoch_seconds = seconds_since(epoch_start);
        record.gamma = gamma;
        record.action = action;
        state.epoch = epoch;

        if (options.evaluate_each_epoch || epoch == cfg.epochs)
        {
            const EvalResult ev = evaluate(state.params, eval_data, cfg.eval_attack);
            record.clean_acc = ev.clean_acc;
            record.robust_acc = ev.robust_acc;
        }
        if (options.on_epoch)
            options.on_epoch(record);
        result.metrics.push_back(record);
    }
    if (options.on_checkpoint)
        options.on_checkpoint(state, CheckpointReason::final);

    result.params = state.params;
    result.counters = state.counters;
    result.timers = state.timers;
    result.total_seconds = seconds_since(run_start);
    result.selection_share = result.total_seconds > 0.0 ? state.timers.selection_seconds / result.total_seconds : 0.0;
    return result;
}

namespace
{
constexpr char kCheckpointMagic[5] = "ACSC";
constexpr std::uint32_t kCheckpointVersion = 1;
} // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt)
{
    detail::put_magic(out, kCheckpointMagic);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint64_t>(out, ckpt.config_hash);
    const auto sizes = ckpt.params.layer_sizes();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sizes.size()));
    for (int s : sizes)
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s));
    detail::put_le<std::uint8_t>(out, ckpt.params.activation == Activation::relu ? 0 : 1);
    const Vector flat = ckpt.params.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i)
        detail::put_f64(out, flat(i));
    detail::put_le<std::uint64_t>(out, ckpt.seed);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.epoch));
}

Checkpoint read_checkpoint(std::istream& in)
{
    detail::expect_magic(in, kCheckpointMagic);
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
    Checkpoint ckpt;
    ckpt.config_hash = detail::get_le<std::uint64_t>(in);
    const auto layers = detail::get_le<std::uint32_t>(in);
    if (layers < 2 || layers > 64)
        throw ParseError("implausible layer count " + std::to_string(layers), 0);
    std::vector<int> sizes(layers);
    for (auto& s : sizes)
        s = static_cast<int>(detail::get_le<std::uint32_t>(in));
    const auto act = detail::get_le<std::uint8_t>(in);
    ckpt.params = ModelParams::zeros(sizes, act == 0 ? Activation::relu : Activation::identity);
    Vector flat(ckpt.params.size());
    for (Eigen::Index i = 0; i < flat.size(); ++i)
        flat(i) = detail::get_f64(in);
    ckpt.params.assign(flat);
    ckpt.seed = detail::get_le<std::uint64_t>(in);
    ckpt.epoch = static_cast<int>(detail::get_le<std::uint32_t>(in));
    return ckpt;
}

} // namespace acs
