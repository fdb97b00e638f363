#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowkv/error.hpp"
#include "flowkv/harness.hpp"
#include "flowkv/loss.hpp"
#include "flowkv/metrics.hpp"

using namespace flowkv;

namespace {

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigError:
        case ErrorKind::IoError: return 2;
        case ErrorKind::InvariantViolation: return 3;
        default: return 4;
    }
}

struct Common {
    std::string config;
    std::string scenarios;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    bool invert_ratio = false;
};

SweepConfig resolve_config(const Common& c) {
    SweepConfig cfg = c.config.empty() ? SweepConfig{} : load_sweep_config(c.config);
    if (!c.scenarios.empty()) {
        cfg.scenario_path = c.scenarios;
        cfg.synthetic.reset();
    }
    if (c.seed) cfg.seeds = {*c.seed};
    if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
    if (c.invert_ratio) cfg.invert_ratio = true;
    if (!cfg.scenario_path && !cfg.synthetic) cfg.synthetic = SyntheticSpec{.vocab = cfg.model.vocab};
    cfg.validate();
    return cfg;
}

void write_file(const std::filesystem::path& p, const std::string& body) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + p.string());
    out << body;
}

void add_common(CLI::App* cmd, Common& c, bool with_scenarios = true) {
    cmd->add_option("--config", c.config, "JSON config file (see docs/config.md)");
    if (with_scenarios) cmd->add_option("--scenarios", c.scenarios, "scenario JSONL file; overrides the config");
    cmd->add_option("--seed", c.seed, "run a single seed instead of the config's seed list");
    cmd->add_option("--output-dir", c.output_dir, "directory for output files");
    cmd->add_flag("--invert-ratio", c.invert_ratio, "treat ratios as retention fractions");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlowKV multi-turn KV-cache simulator"};
    app.require_subcommand(1);

    Common common;

    auto* run = app.add_subcommand("run", "run one (strategy, ratio, seed) cell on one scenario");
    add_common(run, common);
    std::string run_strategy = "flowkv", run_scenario_id;
    double run_ratio = 0.5;
    bool full_dump = false;
    run->add_option("--strategy", run_strategy, "full | baseline | flowkv");
    run->add_option("--ratio", run_ratio, "compression ratio");
    run->add_option("--scenario-id", run_scenario_id, "scenario to run (default: first)");
    run->add_flag("--full-dump", full_dump, "include key/value payloads in the snapshot");

    auto* sweep = app.add_subcommand("sweep", "run the full strategy x ratio x seed grid");
    add_common(sweep, common);
    std::size_t jobs = 1;
    sweep->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

    auto* loss = app.add_subcommand("loss-model", "nested vs isolated information-decay table");
    InfoLossModel lm{0.7, 64, 0.1, 0};
    int loss_turns = 10;
    std::string loss_out;
    loss->add_option("--alpha", lm.alpha, "retention factor in [0, 1)");
    loss->add_option("--dim", lm.dim, "representation dimension");
    loss->add_option("--noise", lm.noise_scale, "noise standard deviation");
    loss->add_option("--turns", loss_turns, "number of turns");
    loss->add_option("--seed", lm.seed, "noise seed");
    loss->add_option("--output", loss_out, "CSV path (default: stdout)");

    auto* bench = app.add_subcommand("bench", "single long prompt: cache size and timing per strategy");
    add_common(bench, common, false);
    std::size_t prompt_len = 8192, query_len = 32;
    double bench_ratio = 0.9;
    std::string bench_policy = "chunkkv";
    bench->add_option("--prompt-len", prompt_len, "system prompt tokens");
    bench->add_option("--query-len", query_len, "query tokens");
    bench->add_option("--ratio", bench_ratio, "compression ratio");
    bench->add_option("--policy", bench_policy, "compression policy");

    auto* gen = app.add_subcommand("gen-scenarios", "write a seeded synthetic scenario corpus");
    SyntheticSpec spec;
    std::string gen_out;
    gen->add_option("--count", spec.count, "number of scenarios");
    gen->add_option("--turns", spec.turns, "turns per scenario");
    gen->add_option("--vocab", spec.vocab, "vocabulary size");
    gen->add_option("--seed", spec.seed, "corpus seed");
    gen->add_option("--output", gen_out, "JSONL path (default: stdout)");

    auto* ifr_cmd = app.add_subcommand("ifr", "aggregate instruction-following results");
    std::string ifr_in, ifr_out;
    ifr_cmd->add_option("--input", ifr_in, "JSONL prompt results")->required();
    ifr_cmd->add_option("--output", ifr_out, "JSON summary path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            SweepConfig cfg = resolve_config(common);
            const auto scenarios = load_scenarios(cfg);
            const Scenario* chosen = &scenarios.front();
            if (!run_scenario_id.empty()) {
                chosen = nullptr;
                for (const auto& s : scenarios)
                    if (s.id == run_scenario_id) chosen = &s;
                if (!chosen) throw Error(ErrorKind::ConfigError, "no scenario '" + run_scenario_id + "'");
            }
            const Cell cell{parse_strategy(run_strategy), run_ratio, cfg.seeds.front()};
            const auto rep = run_scenario(*chosen, cell, cfg);
            for (const auto& t : rep.turns) std::cout << to_json(t).dump() << '\n';
            nlohmann::json summary = {{"scenario_id", rep.scenario_id},
                                      {"strategy", std::string(to_string(cell.strategy))},
                                      {"ratio", cell.ratio},
                                      {"seed", cell.seed},
                                      {"cache_fraction", rep.cache_fraction},
                                      {"ledger", ledger_string(rep.ledger)},
                                      {"responses", rep.responses},
                                      {"timing", to_json(rep.timing)}};
            std::cout << summary.dump() << '\n';
            if (!common.output_dir.empty() || full_dump)
                write_file(cfg.output_dir / "snapshot.json", snapshot_json(rep.pool, full_dump).dump(1) + "\n");
            if (auto v = check_ledger_laws(rep)) throw Error(ErrorKind::InvariantViolation, *v);
            if (auto v = check_budget(rep)) throw Error(ErrorKind::InvariantViolation, *v);
            return 0;
        }
        if (*sweep) {
            SweepConfig cfg = resolve_config(common);
            const auto report = run_sweep(load_scenarios(cfg), cfg, jobs);
            write_sweep_outputs(report, cfg.output_dir);
            std::cerr << report.rows.size() << " rows, " << report.failed_cells << " failed cells, "
                      << report.invariant_violations.size() << " invariant violations -> " << cfg.output_dir.string()
                      << '\n';
            for (const auto& v : report.invariant_violations) std::cerr << "violation: " << v << '\n';
            return report.exit_code();
        }
        if (*loss) {
            const auto csv = loss_csv(loss_table(lm, loss_turns));
            if (loss_out.empty()) std::cout << csv;
            else write_file(loss_out, csv);
            return 0;
        }
        if (*bench) {
            SweepConfig cfg = common.config.empty() ? SweepConfig{} : load_sweep_config(common.config);
            if (common.seed) cfg.seeds = {*common.seed};
            cfg.invert_ratio = cfg.invert_ratio || common.invert_ratio;
            cfg.policy.kind = parse_policy_kind(bench_policy);
            cfg.model.max_seq = static_cast<int>(prompt_len + query_len) + cfg.max_response_tokens + 1;
            cfg.validate();
            SyntheticSpec one{.count = 1, .turns = 1, .sys_min = prompt_len, .sys_max = prompt_len,
                              .query_min = query_len, .query_max = query_len, .vocab = cfg.model.vocab,
                              .seed = cfg.seeds.front()};
            const auto scenario = generate_scenarios(one).front();
            const Model model(model_for_seed(cfg, cfg.seeds.front()));
            std::printf("%-10s %-10s %6s %12s %12s %12s %10s %14s\n", "strategy", "policy", "ratio", "prefill_s",
                        "ttft_s", "tpot_ms", "tokens", "cache_fraction");
            for (auto strategy : {Strategy::Full, Strategy::Baseline, Strategy::FlowKV}) {
                const auto rep = run_scenario(scenario, Cell{strategy, bench_ratio, cfg.seeds.front()}, cfg, model);
                const auto& t = rep.timing;
                std::printf("%-10s %-10s %6.2f %12.4f %12.4f %12.4f %10zu %14.6f\n",
                            std::string(to_string(strategy)).c_str(),
                            strategy == Strategy::Full ? "-" : bench_policy.c_str(), bench_ratio, t.prefill_s,
                            t.ttft_s, t.tpot_ms, t.tokens, rep.cache_fraction);
            }
            return 0;
        }
        if (*gen) {
            std::ostringstream os;
            write_scenarios(os, generate_scenarios(spec));
            if (gen_out.empty()) std::cout << os.str();
            else write_file(gen_out, os.str());
            return 0;
        }
        if (*ifr_cmd) {
            const auto prompts = read_prompt_results(std::filesystem::path(ifr_in));
            const auto body = to_json(ifr(prompts)).dump(2) + "\n";
            if (ifr_out.empty()) std::cout << body;
            else write_file(ifr_out, body);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "flowkv: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "flowkv: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
