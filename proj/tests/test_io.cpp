#include "acs/io.hpp"

#include "oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace acs;
namespace fs = std::filesystem;

namespace
{
struct TempDir
{
    fs::path path;
    explicit TempDir(const std::string& tag)
    {
        path = fs::temp_directory_path() / ("acs_test_io_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CliRun
{
    int code;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "acs");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Softmax-linear probe trained with full-batch gradient descent.
ModelParams linear_probe(const Dataset& data, int epochs)
{
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.fraction = 1.0;
    cfg.hidden = {};
    cfg.activation = Activation::identity;
    cfg.objective = {ObjectiveTag::vanilla, 1.0};
    cfg.full_batch = true;
    cfg.lr.initial = 0.5;
    TrainOptions opt;
    opt.evaluate_each_epoch = false;
    return train(cfg, data, data, opt).params;
}

double clean_accuracy(const ModelParams& p, const Dataset& data)
{
    AttackConfig none;
    none.epsilon = 0.0;
    return evaluate(p, data, none).clean_acc;
}
} // namespace

TEST_CASE("CSV parsing")
{
    std::istringstream in("1,0.5,-0.25\n0,1.0,2.0");
    const Dataset d = read_csv(in);
    CHECK(d.n() == 2);
    CHECK(d.d() == 2);
    CHECK(d.num_classes == 2);
    CHECK(d.labels == std::vector<int>{1, 0});
    CHECK(d.features(0, 1) == -0.25);

    SUBCASE("ragged rows name line 2")
    {
        std::istringstream bad("1,0.5,0.25\n0,1.0,2.0,3.0\n");
        try
        {
            read_csv(bad);
            FAIL("expected a parse error");
        }
        catch (const ParseError& e)
        {
            CHECK(e.line == 2);
        }
    }
    SUBCASE("non-numeric field")
    {
        std::istringstream bad("1,0.5\n0,abc\n");
        CHECK_THROWS_AS(read_csv(bad), ParseError);
    }
    SUBCASE("empty input")
    {
        std::istringstream empty("");
        CHECK_THROWS_AS(read_csv(empty), ParseError);
    }
}

TEST_CASE("CSV round trip")
{
    const Dataset d = synth_dataset(SynthKind::two_rings, 50, 3, 3, 1.5, 4);
    std::stringstream buf;
    write_csv(buf, d);
    const Dataset e = read_csv(buf);
    CHECK(e.labels == d.labels);
    CHECK(e.num_classes == d.num_classes);
    CHECK((e.features - d.features).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("synthetic data")
{
    SUBCASE("deterministic in the seed")
    {
        std::stringstream a, b, c;
        write_csv(a, synth_dataset(SynthKind::gaussian_blobs, 100, 4, 3, 2.0, 8));
        write_csv(b, synth_dataset(SynthKind::gaussian_blobs, 100, 4, 3, 2.0, 8));
        write_csv(c, synth_dataset(SynthKind::gaussian_blobs, 100, 4, 3, 2.0, 9));
        CHECK(a.str() == b.str());
        CHECK(a.str() != c.str());
    }
    SUBCASE("class means sit at the requested pairwise distance")
    {
        const int k = 4;
        const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 8000, 6, k, 5.0, 2);
        Matrix means = Matrix::Zero(k, 6);
        std::vector<int> count(k, 0);
        for (int i = 0; i < d.n(); ++i)
        {
            means.row(d.labels[static_cast<std::size_t>(i)]) += d.features.row(i);
            ++count[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            means.row(c) /= count[static_cast<std::size_t>(c)];
        for (int a = 0; a < k; ++a)
            for (int b = a + 1; b < k; ++b)
                CHECK((means.row(a) - means.row(b)).norm() == doctest::Approx(5.0).epsilon(0.05));
    }
    SUBCASE("wide margin is linearly separable")
    {
        const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 1000, 2, 2, 10.0, 3);
        CHECK(clean_accuracy(linear_probe(d, 100), d) > 0.99);
    }
    SUBCASE("zero margin is chance level")
    {
        const int k = 4;
        const Dataset train_set = synth_dataset(SynthKind::gaussian_blobs, 1000, 5, k, 0.0, 4);
        const Dataset held_out = synth_dataset(SynthKind::gaussian_blobs, 2000, 5, k, 0.0, 5);
        const double acc = clean_accuracy(linear_probe(train_set, 50), held_out);
        CHECK(oracle::within_binomial(acc, 1.0 / k, held_out.n()));
    }
    SUBCASE("invalid sizes")
    {
        CHECK_THROWS_AS(synth_dataset(SynthKind::gaussian_blobs, 1, 2, 2, 1.0, 0), InvalidArgument);
        CHECK_THROWS_AS(synth_dataset(SynthKind::gaussian_blobs, 10, 2, 1, 1.0, 0), InvalidArgument);
        CHECK_THROWS_AS(synth_kind_from_string("spirals"), InvalidArgument);
    }
}

TEST_CASE("configuration text")
{
    std::istringstream in("# comment\nseed = 7\nattack.epsilon = 0.25   # trailing\n\nmodel.hidden = 16,8\n"
                          "objective.kind = trades\nsolver.method = craig\n");
    const RunConfig c = parse_config(in);
    CHECK(c.seed == 7);
    CHECK(c.attack_epsilon == 0.25);
    CHECK(c.hidden == std::vector<int>{16, 8});
    CHECK(c.objective == ObjectiveTag::trades);
    CHECK(c.solver_method == SolverMethod::craig);

    SUBCASE("serialize then parse is the identity")
    {
        std::istringstream again(c.serialize());
        const RunConfig d = parse_config(again);
        CHECK(d == c);
        CHECK(d.serialize() == c.serialize());
        CHECK(d.hash() == c.hash());
    }
    SUBCASE("unknown keys and bad values are rejected with a line number")
    {
        std::istringstream unknown("seed = 1\nattack.epsilonn = 0.1\n");
        try
        {
            parse_config(unknown);
            FAIL("expected a parse error");
        }
        catch (const ParseError& e)
        {
            CHECK(e.line == 2);
        }
        std::istringstream bad("train.epochs = ten\n");
        CHECK_THROWS_AS(parse_config(bad), ParseError);
    }
    SUBCASE("overrides")
    {
        RunConfig d = c;
        d.apply_override("train.epochs=3");
        CHECK(d.epochs == 3);
        CHECK(d.hash() != c.hash());
        CHECK_THROWS_AS(d.apply_override("train.epochs"), ParseError);
    }
    SUBCASE("missing CSV files fail validation")
    {
        RunConfig d = c;
        d.data_source = "csv";
        d.data_path = "/nonexistent/train.csv";
        CHECK_THROWS(d.validate());
    }
    SUBCASE("selection attack inherits the training attack")
    {
        const TrainConfig t = c.train_config();
        CHECK(t.selection_attack.iterations == c.attack_iterations);
        CHECK(t.eval_attack.iterations == c.eval_iterations);
        CHECK(t.attack.epsilon == 0.25);
    }
}

TEST_CASE("command line")
{
    SUBCASE("usage errors exit 1")
    {
        CHECK(cli({"train", "--no-such-flag"}).code == 1);
        CHECK(cli({}).code == 1);
        CHECK(cli({"train", "--set", "bogus.key=1"}).code == 1);
    }
    SUBCASE("verify with defaults exits 0")
    {
        TempDir dir("verify");
        const CliRun r = cli({"verify", "--out", dir.path.string()});
        CHECK(r.code == 0);
        CHECK(fs::exists(dir.path / "verify.json"));
    }
    SUBCASE("train then attack-eval reproduces the final record")
    {
        TempDir dir("train");
        const std::vector<std::string> common{"--set", "data.n=200",       "--set", "data.eval_n=100",
                                              "--set", "train.epochs=3",   "--set", "train.period=1",
                                              "--set", "model.hidden=8",   "--set", "attack.iterations=3",
                                              "--set", "eval.iterations=5", "--seed", "4"};
        std::vector<std::string> train_args{"train", "--out", dir.path.string()};
        train_args.insert(train_args.end(), common.begin(), common.end());
        REQUIRE(cli(train_args).code == 0);

        std::ifstream metrics(dir.path / "metrics.jsonl");
        std::string line, last;
        int lines = 0;
        while (std::getline(metrics, line))
        {
            last = line;
            ++lines;
            CHECK_NOTHROW((void)nlohmann::json::parse(line));
        }
        CHECK(lines == 3);
        const auto final_record = nlohmann::json::parse(last);

        const fs::path eval_dir = dir.path / "eval";
        std::vector<std::string> eval_args{"attack-eval", "--out", eval_dir.string(), "--checkpoint",
                                           (dir.path / "final.acsc").string()};
        eval_args.insert(eval_args.end(), common.begin(), common.end());
        const CliRun r = cli(eval_args);
        REQUIRE(r.code == 0);
        const auto report = nlohmann::json::parse(slurp(eval_dir / "eval.json"));
        CHECK(std::abs(report["robust_acc"].get<double>() - final_record["robust_acc"].get<double>()) <= 1e-9);
        CHECK(std::abs(report["clean_acc"].get<double>() - final_record["clean_acc"].get<double>()) <= 1e-9);
    }
}
