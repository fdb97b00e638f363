#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowkv/cache.hpp"
#include "flowkv/decoder.hpp"
#include "flowkv/metrics.hpp"
#include "flowkv/policies.hpp"
#include "flowkv/strategies.hpp"

namespace flowkv {

struct Scenario {
    std::string id;
    std::vector<std::int32_t> system_prompt;
    std::vector<std::vector<std::int32_t>> turns;

    void validate(int vocab) const;  // throws ConfigError
};

nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

// One scenario per line: {"id": "...", "system_prompt": [...], "turns": [[...], ...]}
std::vector<Scenario> read_scenarios(std::istream& in);
std::vector<Scenario> read_scenarios(const std::filesystem::path& path);
void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios);

struct SyntheticSpec {
    std::size_t count = 10;
    int turns = 3;
    std::size_t sys_min = 64, sys_max = 128;
    std::size_t query_min = 16, query_max = 48;
    int vocab = 256;
    std::uint64_t seed = 0;

    void validate() const;
};

// Lengths uniform on the inclusive ranges, token ids uniform on [1, vocab).
std::vector<Scenario> generate_scenarios(const SyntheticSpec& spec);

struct SweepConfig {
    std::vector<double> ratios{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<Strategy> strategies{Strategy::Full, Strategy::Baseline, Strategy::FlowKV};
    PolicyConfig policy;
    ModelConfig model;
    int max_response_tokens = 32;
    int eos_id = 0;  // negative: never stop early
    bool invert_ratio = false;
    bool strict_budget = false;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::filesystem::path output_dir = "flowkv-out";
    std::optional<std::filesystem::path> scenario_path;
    std::optional<SyntheticSpec> synthetic;

    void validate() const;  // throws ConfigError
};

SweepConfig sweep_config_from_json(const nlohmann::json& j);
SweepConfig load_sweep_config(const std::filesystem::path& path);
nlohmann::json to_json(const SweepConfig& cfg);

// Scenarios named by the config (file or synthetic spec).
std::vector<Scenario> load_scenarios(const SweepConfig& cfg);

// Per-seed model and policy: the run seed is mixed into both base seeds.
ModelConfig model_for_seed(const SweepConfig& cfg, std::uint64_t seed);
PolicyConfig policy_for_seed(const SweepConfig& cfg, std::uint64_t seed);

struct Cell {
    Strategy strategy = Strategy::FlowKV;
    double ratio = 0.5;
    std::uint64_t seed = 1;
};

struct SegmentSurvival {
    SegmentKind kind;
    std::size_t kept = 0;
    std::size_t original = 0;
    double fraction = 1.0;
};

// Fraction of each segment's original tokens still cached. The uncompressed
// reference is carried by the segments themselves (original_len).
std::vector<SegmentSurvival> survival_report(const CachePool& pool);

struct SessionReport {
    std::string scenario_id;
    Cell cell;
    std::vector<TurnRecord> turns;
    std::vector<std::vector<std::int32_t>> responses;
    std::vector<std::vector<SegmentSurvival>> survival;  // after each turn
    CompressionLedger ledger;
    double cache_fraction = 1.0;  // final turn, post-compression / full
    TimingStats timing;           // final turn
    CachePool pool{PoolShape{}};
};

// Runs every turn of `s` under one cell with an already-built model.
SessionReport run_scenario(const Scenario& s, const Cell& cell, const SweepConfig& cfg, const Model& model);
// Convenience overload that builds the seed's model.
SessionReport run_scenario(const Scenario& s, const Cell& cell, const SweepConfig& cfg);

// Ledger-law check for a finished session; empty when the ledger is as
// expected for the strategy.
std::optional<std::string> check_ledger_laws(const SessionReport& r);
// Budget check: every compressed turn ends at its target unless clamped.
std::optional<std::string> check_budget(const SessionReport& r);

struct SweepRow {
    std::string scenario_id;
    Strategy strategy = Strategy::Full;
    std::string policy;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    int turn = 0;
    std::string status = "ok";
    TurnRecord record;
    double cache_fraction = 1.0;
    double sys_survival = 1.0;
    double mean_survival = 1.0;
    double min_survival = 1.0;
    std::optional<TimingStats> timing;  // final turn only
};

struct SweepReport {
    std::vector<SweepRow> rows;  // canonical order
    std::vector<std::string> invariant_violations;
    std::size_t failed_cells = 0;

    int exit_code() const;  // 0 ok, 3 invariant violation, 4 partial failures
};

SweepReport run_sweep(const std::vector<Scenario>& scenarios, const SweepConfig& cfg, std::size_t jobs = 1);

inline constexpr const char* kSweepHeader = "# flowkv-sweep v1";
inline constexpr const char* kSummaryHeader = "# flowkv-sweep-summary v1";

std::string sweep_csv(const SweepReport& report);
// Mean and sample standard deviation over seeds per (scenario, strategy, ratio, turn).
std::string summary_csv(const SweepReport& report);

// Writes sweep.csv, summary.csv and violations.txt (when any) into dir.
void write_sweep_outputs(const SweepReport& report, const std::filesystem::path& dir);

}  // namespace flowkv
