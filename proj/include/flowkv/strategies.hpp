#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "flowkv/cache.hpp"
#include "flowkv/decoder.hpp"
#include "flowkv/policies.hpp"

namespace flowkv {

enum class Strategy { Full, Baseline, FlowKV };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);  // throws ConfigError

// Fraction of the full cache kept. The public knob is the compression ratio
// r (higher = smaller cache); retention = 1 - r unless the ratio is declared
// to already be a retention (invert_ratio).
struct GlobalBudget {
    double retention = 1.0;

    static GlobalBudget from_ratio(double ratio, bool invert_ratio = false);
};

// round(s_full * retention), half-up, at least 1 for a non-empty history.
std::size_t target_budget(std::size_t s_full, GlobalBudget g);

struct BudgetState {
    std::size_t s_full = 0;       // uncompressed size of all history so far
    std::size_t s_preserved = 0;  // size of already-compressed, frozen segments
    int turn = 0;
};

struct BudgetDecision {
    std::size_t keep = 0;
    std::size_t target = 0;
    bool clamped = false;  // the min-keep floor overrode target - s_preserved
};

// B_new = target(s_full) - s_preserved, floored at min_keep. With `strict` the
// floor case throws BudgetExhausted instead of being reported.
BudgetDecision new_data_budget(const BudgetState& state, GlobalBudget g, std::size_t min_keep = 1, bool strict = false);

double local_retention(std::size_t b_new, std::size_t s_new_full);

struct TurnRecord {
    int turn = 0;
    std::size_t s_full = 0;
    std::size_t s_preserved = 0;
    std::size_t target = 0;
    std::size_t pre_compress_len = 0;
    std::size_t post_compress_len = 0;
    std::size_t range_len = 0;  // tokens in the compressed range before eviction
    std::size_t local_keep_count = 0;
    double local_retention = 1.0;
    bool compressed = false;
    bool clamped = false;
    std::size_t query_len = 0;
    std::size_t response_len = 0;
    CompressionLedger ledger;  // after the turn completes
};

nlohmann::json to_json(const TurnRecord& record);

// Optional timing hooks fired from inside a turn.
struct TurnObserver {
    std::function<void()> on_prefill_done;       // compression and query prefill finished
    std::function<void(std::size_t)> on_token;  // each generated token
};

struct TurnConfig {
    PolicyConfig policy;
    GlobalBudget budget;
    int max_response_tokens = 32;
    int eos_id = 0;
    bool strict_budget = false;
    bool capture_attention = false;
};

struct TurnOutput {
    std::vector<std::int32_t> response;
    TurnRecord record;
};

// Builds the initial pool C_0 = KV(P_sys).
CachePool start_session(const Model& model, std::span<const std::int32_t> system_prompt);

// Indices to keep from `range` under `policy`, exactly `keep` of them, with at
// least one survivor per segment (the min-keep floor). `turn` salts the
// Random policy's seed so successive compressions draw independently.
std::vector<std::size_t> select_for_range(const CachePool& pool, SegmentRange range, std::size_t keep,
                                          const PolicyConfig& policy, int turn);

// Attention of the last `window` tokens of `range` over all tokens of `range`,
// recomputed from the stored query projections and surviving keys, causally
// masked, renormalized over the range and averaged over layers and heads.
AttentionObservation observe_range(const CachePool& pool, SegmentRange range, std::size_t window);

TurnOutput run_turn_fullkv(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                           const TurnConfig& cfg, const TurnObserver* observer = nullptr);
TurnOutput run_turn_baseline(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                             const TurnConfig& cfg, const TurnObserver* observer = nullptr);
TurnOutput run_turn_flowkv(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                           const TurnConfig& cfg, const TurnObserver* observer = nullptr);
TurnOutput run_turn(Strategy strategy, CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                    const TurnConfig& cfg, const TurnObserver* observer = nullptr);

}  // namespace flowkv
