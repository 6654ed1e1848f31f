#pragma once

#include "acs/trainer.hpp"
#include "acs/verifier.hpp"

#include <iosfwd>
#include <string>

namespace acs
{
enum class SynthKind
{
    gaussian_blobs,
    two_rings
};

SynthKind synth_kind_from_string(const std::string& name);
std::string to_string(SynthKind kind);

/// gaussian-blobs: k unit-covariance classes whose means sit on a simplex with pairwise
/// distance `margin` (on a circle when d < k - 1). two-rings: class c on a ring of radius
/// (c + 1) * margin in the first two coordinates.
Dataset synth_dataset(SynthKind kind, int n, int d, int k, double margin, std::uint64_t seed);

/// Label first, then features. No header.
Dataset read_csv(std::istream& in);
Dataset load_csv(const std::string& path);
void write_csv(std::ostream& out, const Dataset& data);
void save_csv(const std::string& path, const Dataset& data);

/// Everything a CLI run needs, as flat dotted keys.
struct RunConfig
{
    std::uint64_t seed = 0;

    std::string data_source = "synth"; // synth | csv
    std::string data_path;
    std::string data_eval_path;
    SynthKind data_kind = SynthKind::gaussian_blobs;
    int data_n = 2000;
    int data_d = 20;
    int data_k = 4;
    double data_margin = 3.0;
    int data_eval_n = 1000;

    std::vector<int> hidden{32};
    Activation activation = Activation::relu;

    int epochs = 20;
    double warm_start = 0.5;
    int period = 5;
    double fraction = 0.5;
    int batch_size = 64;
    int selection_batch_size = 20;
    double lr = 0.1;
    std::vector<int> lr_decay_epochs;
    double lr_decay_factor = 0.1;
    double weight_decay = 0.0;
    bool full_batch = false;

    ObjectiveTag objective = ObjectiveTag::adversarial_ce;
    double trades_lambda = 1.0;

    Norm attack_norm = Norm::linf;
    double attack_epsilon = 0.1;
    double attack_step_size = 0.025;
    int attack_iterations = 10;
    int attack_restarts = 1;
    bool attack_random_init = false;
    bool attack_clip = false;

    /// -1 inherits attack.iterations.
    int selection_attack_iterations = -1;

    SolverMethod solver_method = SolverMethod::gradmatch_omp;
    double omp_lambda = 0.0;
    double solver_tolerance = 0.0;

    int eval_restarts = 1;
    int eval_iterations = 20;

    bool wall_clock = false;

    int verify_seeds = 10;
    int verify_n = 200;
    int verify_d = 5;
    double verify_epsilon = 0.05;
    int verify_T = 100;
    double verify_fraction = 0.5;
    double verify_mu = 0.1;
    Norm verify_norm = Norm::l2;
    int verify_lemma_seeds = 10;

    /// Set one key from text; unknown keys and malformed values throw ParseError.
    void set(const std::string& key, const std::string& value, std::size_t line_no = 0);
    /// Apply a `key=value` override.
    void apply_override(const std::string& assignment);

    /// Canonical text: every key, one `key = value` line each, fixed order.
    std::string serialize() const;
    std::uint64_t hash() const;

    /// Cross-field checks, including that referenced files exist.
    void validate() const;

    TrainConfig train_config() const;
    ProbeConfig probe_config(std::uint64_t probe_seed) const;

    bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);

/// Train and eval sets named by the config (synthesized or loaded).
std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg);

/// Command-line entry: argv[1] is the subcommand. Returns the process exit code
/// (0 ok, 1 usage, 2 runtime error, 3 verification failure).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace acs
