#include "acs/io.hpp"
#include "acs/rng.hpp"

#include <Eigen/QR>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace acs
{
SynthKind synth_kind_from_string(const std::string& name)
{
    if (name == "gaussian-blobs")
        return SynthKind::gaussian_blobs;
    if (name == "two-rings")
        return SynthKind::two_rings;
    throw InvalidArgument("unknown dataset kind '" + name + "'");
}

std::string to_string(SynthKind kind)
{
    return kind == SynthKind::gaussian_blobs ? "gaussian-blobs" : "two-rings";
}

namespace
{
/// k x d class means with pairwise distance `margin`.
Matrix simplex_means(int k, int d, double margin)
{
    Matrix means = Matrix::Zero(k, d);
    if (d >= k - 1)
    {
        // Scaled basis vectors are pairwise margin apart; rotate them into the k-1 dimensional
        // subspace orthogonal to the all-ones direction.
        Matrix ones = Matrix::Identity(k, k);
        ones.col(0).setOnes();
        const Matrix q = Eigen::HouseholderQR<Matrix>(ones).householderQ();
        const Matrix centered =
            (margin / std::numbers::sqrt2) * (Matrix::Identity(k, k) - Matrix::Constant(k, k, 1.0 / k));
        means.leftCols(k - 1) = centered * q.rightCols(k - 1);
    }
    else if (d == 1)
    {
        for (int c = 0; c < k; ++c)
            means(c, 0) = margin * c;
    }
    else
    {
        const double radius = margin / (2.0 * std::sin(std::numbers::pi / k));
        for (int c = 0; c < k; ++c)
        {
            means(c, 0) = radius * std::cos(2.0 * std::numbers::pi * c / k);
            means(c, 1) = radius * std::sin(2.0 * std::numbers::pi * c / k);
        }
    }
    return means;
}
} // namespace

Dataset synth_dataset(SynthKind kind, int n, int d, int k, double margin, std::uint64_t seed)
{
    require(k >= 2 && n >= k, "synth needs n >= k >= 2");
    require(d >= 1, "synth needs d >= 1");
    require(std::isfinite(margin) && margin >= 0.0, "margin must be finite and >= 0");
    if (kind == SynthKind::two_rings)
        require(d >= 2, "two-rings needs d >= 2");

    Rng rng(seed);
    Dataset data;
    data.num_classes = k;
    data.features.resize(n, d);
    data.labels.resize(static_cast<std::size_t>(n));
    const Matrix means = kind == SynthKind::gaussian_blobs ? simplex_means(k, d, margin) : Matrix();
    for (int i = 0; i < n; ++i)
    {
        const int c = i % k;
        data.labels[static_cast<std::size_t>(i)] = c;
        if (kind == SynthKind::gaussian_blobs)
        {
            for (int j = 0; j < d; ++j)
                data.features(i, j) = means(c, j) + rng.normal();
        }
        else
        {
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double radius = (c + 1) * margin;
            for (int j = 0; j < d; ++j)
                data.features(i, j) = 0.1 * rng.normal();
            data.features(i, 0) += radius * std::cos(angle);
            data.features(i, 1) += radius * std::sin(angle);
        }
    }
    return data;
}

Dataset read_csv(std::istream& in)
{
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    int max_label = -1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::vector<double> values;
        int label = 0;
        std::size_t field = 0;
        std::size_t pos = 0;
        while (true)
        {
            const std::size_t comma = line.find(',', pos);
            const std::size_t end = comma == std::string::npos ? line.size() : comma;
            const char* first = line.data() + pos;
            const char* last = line.data() + end;
            while (first < last && *first == ' ')
                ++first;
            while (last > first && last[-1] == ' ')
                --last;
            if (field == 0)
            {
                const auto res = std::from_chars(first, last, label);
                if (res.ec != std::errc() || res.ptr != last || label < 0)
                    throw ParseError("label must be a non-negative integer", line_no);
            }
            else
            {
                double v = 0.0;
                const auto res = std::from_chars(first, last, v);
                if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
                    throw ParseError("field " + std::to_string(field + 1) + " is not a finite number", line_no);
                values.push_back(v);
            }
            ++field;
            if (comma == std::string::npos)
                break;
            pos = comma + 1;
        }
        if (values.empty())
            throw ParseError("row has no features", line_no);
        if (!rows.empty() && values.size() != rows.front().size())
            throw ParseError("expected " + std::to_string(rows.front().size() + 1) + " fields, found " +
                                 std::to_string(values.size() + 1),
                             line_no);
        rows.push_back(std::move(values));
        labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    if (rows.empty())
        throw ParseError("empty dataset", line_no);

    Dataset data;
    data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    data.labels = std::move(labels);
    data.num_classes = max_label + 1;
    return data;
}

Dataset load_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open " + path);
    return read_csv(in);
}

void write_csv(std::ostream& out, const Dataset& data)
{
    for (int i = 0; i < data.n(); ++i)
    {
        out << data.labels[static_cast<std::size_t>(i)];
        for (int j = 0; j < data.d(); ++j)
            out << ',' << format_double(data.features(i, j));
        out << '\n';
    }
}

void save_csv(const std::string& path, const Dataset& data)
{
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write " + path);
    write_csv(out, data);
}

// ---------------------------------------------------------------------------
// Configuration

namespace
{
template <typename T>
T parse_number(const std::string& text, const std::string& key, std::size_t line_no)
{
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError("bad value '" + text + "' for " + key, line_no);
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v))
            throw ParseError("non-finite value for " + key, line_no);
    return v;
}

bool parse_bool(const std::string& text, const std::string& key, std::size_t line_no)
{
    if (text == "true" || text == "1")
        return true;
    if (text == "false" || text == "0")
        return false;
    throw ParseError("bad boolean '" + text + "' for " + key, line_no);
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key, std::size_t line_no)
{
    std::vector<int> out;
    if (text.empty())
        return out;
    std::size_t pos = 0;
    while (true)
    {
        const std::size_t comma = text.find(',', pos);
        out.push_back(parse_number<int>(text.substr(pos, comma - pos), key, line_no));
        if (comma == std::string::npos)
            break;
        pos = comma + 1;
    }
    return out;
}

std::string join(const std::vector<int>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string norm_name(Norm n)
{
    return n == Norm::linf ? "linf" : "l2";
}

Norm parse_norm(const std::string& text, const std::string& key, std::size_t line_no)
{
    if (text == "linf")
        return Norm::linf;
    if (text == "l2")
        return Norm::l2;
    throw ParseError("bad norm '" + text + "' for " + key + " (linf or l2)", line_no);
}

std::string objective_name(ObjectiveTag t)
{
    switch (t)
    {
    case ObjectiveTag::vanilla:
        return "vanilla";
    case ObjectiveTag::adversarial_ce:
        return "adversarial-ce";
    case ObjectiveTag::trades:
        return "trades";
    }
    return "adversarial-ce";
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field
{
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, std::size_t)> set;
};

#define ACS_INT(name, member)                                                                              \
    Field                                                                                                  \
    {                                                                                                      \
        name, [](const RunConfig& c) { return std::to_string(c.member); },                                \
            [](RunConfig& c, const std::string& v, std::size_t l) { c.member = parse_number<int>(v, name, l); } \
    }
#define ACS_REAL(name, member)                                                                             \
    Field                                                                                                  \
    {                                                                                                      \
        name, [](const RunConfig& c) { return format_double(c.member); },                                 \
            [](RunConfig& c, const std::string& v, std::size_t l) { c.member = parse_number<double>(v, name, l); } \
    }
#define ACS_BOOL(name, member)                                                                             \
    Field                                                                                                  \
    {                                                                                                      \
        name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },                \
            [](RunConfig& c, const std::string& v, std::size_t l) { c.member = parse_bool(v, name, l); }   \
    }
#define ACS_TEXT(name, member)                                                                             \
    Field                                                                                                  \
    {                                                                                                      \
        name, [](const RunConfig& c) { return c.member; },                                                 \
            [](RunConfig& c, const std::string& v, std::size_t) { c.member = v; }                          \
    }
#define ACS_NORM(name, member)                                                                             \
    Field                                                                                                  \
    {                                                                                                      \
        name, [](const RunConfig& c) { return norm_name(c.member); },                                      \
            [](RunConfig& c, const std::string& v, std::size_t l) { c.member = parse_norm(v, name, l); }   \
    }

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v, std::size_t l) { c.seed = parse_number<std::uint64_t>(v, "seed", l); }},
        {"data.source", [](const RunConfig& c) { return c.data_source; },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             if (v != "synth" && v != "csv")
                 throw ParseError("data.source must be synth or csv", l);
             c.data_source = v;
         }},
        ACS_TEXT("data.path", data_path),
        ACS_TEXT("data.eval_path", data_eval_path),
        {"data.kind", [](const RunConfig& c) { return to_string(c.data_kind); },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             try
             {
                 c.data_kind = synth_kind_from_string(v);
             }
             catch (const InvalidArgument& e)
             {
                 throw ParseError(e.what(), l);
             }
         }},
        ACS_INT("data.n", data_n),
        ACS_INT("data.d", data_d),
        ACS_INT("data.k", data_k),
        ACS_REAL("data.margin", data_margin),
        ACS_INT("data.eval_n", data_eval_n),
        {"model.hidden", [](const RunConfig& c) { return join(c.hidden); },
         [](RunConfig& c, const std::string& v, std::size_t l) { c.hidden = parse_int_list(v, "model.hidden", l); }},
        {"model.activation", [](const RunConfig& c) { return std::string(c.activation == Activation::relu ? "relu" : "identity"); },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             if (v == "relu")
                 c.activation = Activation::relu;
             else if (v == "identity")
                 c.activation = Activation::identity;
             else
                 throw ParseError("model.activation must be relu or identity", l);
         }},
        ACS_INT("train.epochs", epochs),
        ACS_REAL("train.warm_start", warm_start),
        ACS_INT("train.period", period),
        ACS_REAL("train.fraction", fraction),
        ACS_INT("train.batch_size", batch_size),
        ACS_INT("train.selection_batch_size", selection_batch_size),
        ACS_REAL("train.lr", lr),
        {"train.lr_decay_epochs", [](const RunConfig& c) { return join(c.lr_decay_epochs); },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             c.lr_decay_epochs = parse_int_list(v, "train.lr_decay_epochs", l);
         }},
        ACS_REAL("train.lr_decay_factor", lr_decay_factor),
        ACS_REAL("train.weight_decay", weight_decay),
        ACS_BOOL("train.full_batch", full_batch),
        {"objective.kind", [](const RunConfig& c) { return objective_name(c.objective); },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             if (v == "vanilla")
                 c.objective = ObjectiveTag::vanilla;
             else if (v == "adversarial-ce")
                 c.objective = ObjectiveTag::adversarial_ce;
             else if (v == "trades")
                 c.objective = ObjectiveTag::trades;
             else
                 throw ParseError("objective.kind must be vanilla, adversarial-ce or trades", l);
         }},
        ACS_REAL("objective.trades_lambda", trades_lambda),
        ACS_NORM("attack.norm", attack_norm),
        ACS_REAL("attack.epsilon", attack_epsilon),
        ACS_REAL("attack.step_size", attack_step_size),
        ACS_INT("attack.iterations", attack_iterations),
        ACS_INT("attack.restarts", attack_restarts),
        ACS_BOOL("attack.random_init", attack_random_init),
        ACS_BOOL("attack.clip", attack_clip),
        ACS_INT("selection.attack_iterations", selection_attack_iterations),
        {"solver.method", [](const RunConfig& c) { return to_string(c.solver_method); },
         [](RunConfig& c, const std::string& v, std::size_t l) {
             try
             {
                 c.solver_method = solver_method_from_string(v);
             }
             catch (const Error& e)
             {
                 throw ParseError(e.what(), l);
             }
         }},
        ACS_REAL("solver.omp_lambda", omp_lambda),
        ACS_REAL("solver.tolerance", solver_tolerance),
        ACS_INT("eval.restarts", eval_restarts),
        ACS_INT("eval.iterations", eval_iterations),
        ACS_BOOL("metrics.wall_clock", wall_clock),
        ACS_INT("verify.seeds", verify_seeds),
        ACS_INT("verify.n", verify_n),
        ACS_INT("verify.d", verify_d),
        ACS_REAL("verify.epsilon", verify_epsilon),
        ACS_INT("verify.T", verify_T),
        ACS_REAL("verify.fraction", verify_fraction),
        ACS_REAL("verify.mu", verify_mu),
        ACS_NORM("verify.norm", verify_norm),
        ACS_INT("verify.lemma_seeds", verify_lemma_seeds),
    };
    return table;
}

#undef ACS_INT
#undef ACS_REAL
#undef ACS_BOOL
#undef ACS_TEXT
#undef ACS_NORM
} // namespace

void RunConfig::set(const std::string& key, const std::string& value, std::size_t line_no)
{
    for (const Field& f : fields())
        if (key == f.key)
        {
            f.set(*this, value, line_no);
            return;
        }
    throw ParseError("unknown key '" + key + "'", line_no);
}

void RunConfig::apply_override(const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ParseError("override '" + assignment + "' is not key=value", 0);
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::serialize() const
{
    std::string out;
    for (const Field& f : fields())
        out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

std::uint64_t RunConfig::hash() const
{
    return fnv1a64(serialize());
}

void RunConfig::validate() const
{
    if (data_source == "csv")
    {
        require(!data_path.empty(), "data.source = csv needs data.path");
        require(std::filesystem::exists(data_path), "data.path does not exist: " + data_path);
        require(data_eval_path.empty() || std::filesystem::exists(data_eval_path),
                "data.eval_path does not exist: " + data_eval_path);
    }
    else
    {
        require(data_k >= 2 && data_n >= data_k && data_eval_n >= 1, "synthetic sizes need n >= k >= 2");
        require(data_d >= 1, "data.d must be >= 1");
    }
    require(selection_attack_iterations >= -1, "selection.attack_iterations must be >= -1");
    require(eval_iterations >= 0 && eval_restarts >= 1, "eval attack needs iterations >= 0 and restarts >= 1");
    require(verify_seeds >= 1 && verify_lemma_seeds >= 1, "verify seed counts must be >= 1");
    train_config().validate();
    probe_config(0).validate();
}

TrainConfig RunConfig::train_config() const
{
    TrainConfig t;
    t.epochs = epochs;
    t.warm_start = warm_start;
    t.period = period;
    t.fraction = fraction;
    t.batch_size = batch_size;
    t.selection_batch_size = selection_batch_size;
    t.lr.initial = lr;
    t.lr.decay_epochs = lr_decay_epochs;
    t.lr.decay_factor = lr_decay_factor;
    t.weight_decay = weight_decay;
    t.full_batch = full_batch;
    t.hidden = hidden;
    t.activation = activation;
    t.objective.tag = objective;
    t.objective.trades_lambda = trades_lambda;

    t.attack.norm = attack_norm;
    t.attack.epsilon = attack_epsilon;
    t.attack.step_size = attack_step_size;
    t.attack.iterations = attack_iterations;
    t.attack.restarts = attack_restarts;
    t.attack.random_init = attack_random_init;
    t.attack.clip_unit_box = attack_clip;

    t.selection_attack = t.attack;
    if (selection_attack_iterations >= 0)
        t.selection_attack.iterations = selection_attack_iterations;

    t.eval_attack = t.attack;
    t.eval_attack.iterations = eval_iterations;
    t.eval_attack.restarts = eval_restarts;
    t.eval_attack.seed = Rng::derive(seed, {0xe7a1}).next_u64();

    t.solver.method = solver_method;
    t.solver.budget = Budget::of_fraction(fraction);
    t.solver.omp_lambda = omp_lambda;
    t.solver.tolerance = solver_tolerance;
    t.seed = seed;
    return t;
}

ProbeConfig RunConfig::probe_config(std::uint64_t probe_seed) const
{
    ProbeConfig p;
    p.n = verify_n;
    p.d = verify_d;
    p.epsilon = verify_epsilon;
    p.norm = verify_norm;
    p.T = verify_T;
    p.fraction = verify_fraction;
    p.mu = verify_mu;
    p.method = solver_method;
    p.seed = probe_seed;
    return p;
}

RunConfig parse_config(std::istream& in)
{
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected 'key = value'", line_no);
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw ParseError("missing key", line_no);
        cfg.set(key, trim(line.substr(eq + 1)), line_no);
    }
    return cfg;
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open config " + path);
    return parse_config(in);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg)
{
    if (cfg.data_source == "csv")
    {
        Dataset train = load_csv(cfg.data_path);
        Dataset eval = cfg.data_eval_path.empty() ? train : load_csv(cfg.data_eval_path);
        const int k = std::max({2, train.num_classes, eval.num_classes});
        train.num_classes = k;
        eval.num_classes = k;
        if (train.d() != eval.d())
            throw DimensionError("train and eval CSVs have different feature counts");
        return {train, eval};
    }
    const std::uint64_t train_seed = Rng::derive(cfg.seed, {0x7e, 0}).next_u64();
    const std::uint64_t eval_seed = Rng::derive(cfg.seed, {0x7e, 1}).next_u64();
    return {synth_dataset(cfg.data_kind, cfg.data_n, cfg.data_d, cfg.data_k, cfg.data_margin, train_seed),
            synth_dataset(cfg.data_kind, cfg.data_eval_n, cfg.data_d, cfg.data_k, cfg.data_margin, eval_seed)};
}

} // namespace acs
