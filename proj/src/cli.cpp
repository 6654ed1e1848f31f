#include "acs/io.hpp"
#include "acs/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace acs
{
namespace
{
struct CommonArgs
{
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::string checkpoint;
    std::string resume;
};

void add_common(CLI::App* cmd, CommonArgs& args)
{
    cmd->add_option("--config", args.config, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--set", args.sets, "Override a configuration key: key=value")->allow_extra_args(false);
    cmd->add_option("--seed", args.seed, "Master seed (overrides the config)");
    cmd->add_option("--out", args.out, "Output directory");
}

RunConfig resolve_config(const CommonArgs& args)
{
    RunConfig cfg = args.config.empty() ? RunConfig{} : load_config(args.config);
    for (const auto& s : args.sets)
        cfg.apply_override(s);
    if (args.seed)
        cfg.seed = *args.seed;
    cfg.validate();
    return cfg;
}

std::string epoch_name(const char* prefix, int epoch, const char* ext)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%04d%s", prefix, epoch, ext);
    return buf;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
}

void save_checkpoint(const fs::path& path, const RunConfig& cfg, const ModelParams& params, int epoch)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    write_checkpoint(out, Checkpoint{cfg.hash(), params, cfg.seed, epoch});
}

Checkpoint open_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open checkpoint " + path);
    return read_checkpoint(in);
}

int cmd_synth(const RunConfig& cfg, const fs::path& out, std::ostream& os)
{
    require(cfg.data_source == "synth", "synth needs data.source = synth");
    const auto [train, eval] = load_datasets(cfg);
    save_csv((out / "train.csv").string(), train);
    save_csv((out / "eval.csv").string(), eval);
    os << "wrote " << train.n() << " training and " << eval.n() << " evaluation rows to " << out.string() << '\n';
    return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& out, const std::string& resume, std::ostream& os,
              std::ostream& es)
{
    const auto [train_data, eval_data] = load_datasets(cfg);
    const TrainConfig tc = cfg.train_config();
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "coresets");
    write_text(out / "config.txt", cfg.serialize());

    TrainOptions opts;
    if (!resume.empty())
    {
        const Checkpoint ckpt = open_checkpoint(resume);
        if (ckpt.config_hash != cfg.hash())
            throw Error("checkpoint " + resume + " was written under a different configuration");
        TrainState st;
        st.params = ckpt.params;
        st.epoch = ckpt.epoch;
        opts.resume = st;
    }

    std::ofstream metrics(out / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics)
        throw Error("cannot write metrics");
    opts.on_epoch = [&](const MetricsRecord& r) {
        metrics << metrics_json(r, cfg.wall_clock) << '\n';
        metrics.flush();
    };
    opts.on_checkpoint = [&](const TrainState& st, CheckpointReason why) {
        switch (why)
        {
        case CheckpointReason::selection:
            save_checkpoint(out / "checkpoints" / epoch_name("epoch_", st.epoch, ".acsc"), cfg, st.params, st.epoch);
            break;
        case CheckpointReason::abort:
            save_checkpoint(out / "abort.acsc", cfg, st.params, st.epoch);
            break;
        case CheckpointReason::final:
            save_checkpoint(out / "final.acsc", cfg, st.params, st.epoch);
            break;
        }
    };
    opts.on_selection = [&](const Selection& sel, int epoch) {
        Coreset tagged = sel.samples;
        tagged.config_hash = hex64(cfg.hash());
        std::ofstream c(out / "coresets" / epoch_name("epoch_", epoch, ".txt"), std::ios::binary);
        write_coreset(c, tagged);
    };

    const TrainResult res = train(tc, train_data, eval_data, opts);
    const MetricsRecord& last = res.metrics.back();
    os << "final clean_acc=" << format_double(last.clean_acc) << " robust_acc=" << format_double(last.robust_acc)
       << '\n';
    es << "total_seconds=" << res.total_seconds << " selection_share=" << res.selection_share
       << " sgd_sample_grads=" << res.counters.sgd_sample_grads
       << " selection_sample_grads=" << res.counters.selection_sample_grads << '\n';
    return 0;
}

int cmd_select(const RunConfig& cfg, const fs::path& out, const std::string& checkpoint, std::ostream& os)
{
    require(!checkpoint.empty(), "select needs --checkpoint");
    const Checkpoint ckpt = open_checkpoint(checkpoint);
    const auto [train_data, eval_data] = load_datasets(cfg);
    (void)eval_data;
    const TrainConfig tc = cfg.train_config();
    TrainState st;
    st.params = ckpt.params;
    st.epoch = ckpt.epoch;
    if (st.params.layer_sizes() != tc.layer_sizes(train_data.d(), train_data.num_classes))
        throw DimensionError("checkpoint architecture does not match the configuration");
    const Selection sel = select_coreset(st, train_data, tc, ckpt.epoch + 1);
    std::ofstream c(out / "coreset.txt", std::ios::binary);
    if (!c)
        throw Error("cannot write coreset");
    Coreset tagged = sel.samples;
    tagged.config_hash = hex64(cfg.hash());
    write_coreset(c, tagged);

    nlohmann::ordered_json j;
    j["units"] = sel.units.size();
    j["samples"] = sel.samples.size();
    j["gamma_before"] = sel.gamma_before;
    j["gamma_after"] = sel.gamma_after;
    os << j.dump() << '\n';
    return 0;
}

int cmd_attack_eval(const RunConfig& cfg, const fs::path& out, const std::string& checkpoint, std::ostream& os,
                    std::ostream& es)
{
    require(!checkpoint.empty(), "attack-eval needs --checkpoint");
    const Checkpoint ckpt = open_checkpoint(checkpoint);
    if (ckpt.config_hash != cfg.hash())
        es << "warning: checkpoint was written under a different configuration\n";
    const auto [train_data, eval_data] = load_datasets(cfg);
    (void)train_data;
    const EvalResult r = evaluate(ckpt.params, eval_data, cfg.train_config().eval_attack);
    nlohmann::ordered_json j;
    j["epoch"] = ckpt.epoch;
    j["clean_acc"] = r.clean_acc;
    j["robust_acc"] = r.robust_acc;
    write_text(out / "eval.json", j.dump() + "\n");
    os << j.dump() << '\n';
    return 0;
}

int cmd_verify(const RunConfig& cfg, const fs::path& out, std::ostream& os)
{
    nlohmann::ordered_json doc;
    bool failed = false;
    auto line = [&](const std::string& name, const std::string& status, const std::string& detail) {
        os << name << ": " << status << "  " << detail << '\n';
        if (status == "FAIL")
            failed = true;
    };

    nlohmann::ordered_json bounds = nlohmann::ordered_json::array();
    for (int s = 0; s < cfg.verify_seeds; ++s)
    {
        const ProbeConfig pc = cfg.probe_config(Rng::derive(cfg.seed, {0x7431, static_cast<std::uint64_t>(s)}).next_u64());
        const Dataset data = probe_dataset(pc);
        for (BoundPart part : {BoundPart::part1, BoundPart::part2})
        {
            const BoundReport r = theorem1_check(part, data, pc);
            bounds.push_back(nlohmann::ordered_json::parse(r.to_json()));
            line("theorem1 part " + std::string(part == BoundPart::part1 ? "1" : "2") + " seed " + std::to_string(s),
                 to_string(r.status), "slack=" + format_double(r.slack));
        }
    }
    doc["theorem1"] = bounds;

    struct DanskinCase
    {
        Vector w;
        double b;
        Vector x;
        int y;
        double eps;
        Norm norm;
    };
    const std::vector<DanskinCase> cases = {
        {Vector{{1.0, -0.5}}, 0.0, Vector::Zero(2), 1, 0.1, Norm::linf},
        {Vector{{3.0, 4.0}}, 0.0, Vector::Zero(2), 1, 0.1, Norm::l2},
        {Vector{{0.7, -1.2, 0.4}}, 0.3, Vector{{0.5, 0.1, -0.2}}, -1, 0.0, Norm::linf},
    };
    nlohmann::ordered_json danskin = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < cases.size(); ++i)
    {
        const auto& c = cases[i];
        const double err = danskin_check(c.w, c.b, c.x, c.y, c.eps, c.norm, 1e-5);
        const bool ok = err < 1e-4;
        danskin.push_back({{"case", i}, {"error", err}, {"status", ok ? "PASS" : "FAIL"}});
        line("danskin case " + std::to_string(i), ok ? "PASS" : "FAIL", "error=" + format_double(err));
    }
    doc["danskin"] = danskin;

    const LemmaReport lemma = lemma_probes(cfg.verify_lemma_seeds, cfg.seed, 1000, cfg.verify_mu);
    doc["lemma"] = nlohmann::ordered_json::parse(lemma.to_json());
    line("lemma probes", lemma.passed() ? "PASS" : "FAIL",
         "pairs=" + std::to_string(lemma.pairs) + " violations=" +
             std::to_string(lemma.lipschitz_violations + lemma.convexity_violations));

    doc["status"] = failed ? "FAIL" : "PASS";
    write_text(out / "verify.json", doc.dump(2) + "\n");
    return failed ? 3 : 0;
}
} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Adversarial coreset selection for efficient robust training", "acs"};
    app.require_subcommand(1);
    CommonArgs args;
    auto* synth = app.add_subcommand("synth", "Write a synthetic train/eval CSV pair");
    auto* train_cmd = app.add_subcommand("train", "Run coreset adversarial training");
    auto* select = app.add_subcommand("select", "One-shot coreset from a checkpoint");
    auto* attack = app.add_subcommand("attack-eval", "Clean and robust accuracy of a checkpoint");
    auto* verify = app.add_subcommand("verify", "Numerical checks of the convergence theory");
    for (auto* cmd : {synth, train_cmd, select, attack, verify})
        add_common(cmd, args);
    train_cmd->add_option("--resume", args.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
    select->add_option("--checkpoint", args.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    attack->add_option("--checkpoint", args.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e, out, err);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    }

    try
    {
        RunConfig cfg;
        try
        {
            cfg = resolve_config(args);
        }
        catch (const ParseError& e)
        {
            err << "config error: " << e.what() << '\n';
            return 1;
        }
        catch (const InvalidArgument& e)
        {
            err << "config error: " << e.what() << '\n';
            return 1;
        }
        const fs::path outdir(args.out);
        fs::create_directories(outdir);
        if (synth->parsed())
            return cmd_synth(cfg, outdir, out);
        if (train_cmd->parsed())
            return cmd_train(cfg, outdir, args.resume, out, err);
        if (select->parsed())
            return cmd_select(cfg, outdir, args.checkpoint, out);
        if (attack->parsed())
            return cmd_attack_eval(cfg, outdir, args.checkpoint, out, err);
        return cmd_verify(cfg, outdir, out);
    }
    catch (const std::exception& e)
    {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

} // namespace acs
