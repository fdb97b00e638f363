#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowkv/cache.hpp"

namespace flowkv {

struct InstructionResult {
    bool strict_pass = false;
    bool loose_pass = false;
};

struct PromptResult {
    std::string prompt_id;
    std::vector<InstructionResult> instructions;
};

struct IfrScores {
    double spa = 0.0;  // prompts with every instruction passing strictly
    double sia = 0.0;  // instructions passing strictly, pooled over all prompts
    double lpa = 0.0;
    double lia = 0.0;
    double ifr = 0.0;  // mean of the four
};

// Throws EmptyInput for no prompts or a prompt without instructions, and
// InvariantViolation when an instruction passes strictly but not loosely.
IfrScores ifr(std::span<const PromptResult> prompts);

// JSONL: {"prompt_id": "...", "instructions": [{"strict": true, "loose": true}, ...]}
std::vector<PromptResult> read_prompt_results(std::istream& in);
std::vector<PromptResult> read_prompt_results(const std::filesystem::path& path);
nlohmann::json to_json(const IfrScores& s);

// post-compression size over full size. Throws InvariantViolation if the pool
// is larger than full_len.
double cache_fraction(const CachePool& pool_after, std::size_t full_len);
double cache_fraction(std::size_t kept, std::size_t full_len);

struct TimingStats {
    double prefill_s = 0.0;    // start until the prompt is in the cache
    double ttft_s = 0.0;       // start until the first generated token
    double tpot_ms = 0.0;      // mean gap between later tokens
    double total_gen_s = 0.0;  // start until generation ends
    double cache_fraction = 1.0;
    std::size_t tokens = 0;
};

nlohmann::json to_json(const TimingStats& t);

// Collects wall-clock marks from inside a run. Marks before start() or after
// finish() are ignored; only the first prefill mark counts.
class TimingProbe {
public:
    using Clock = std::chrono::steady_clock;

    void start();
    void mark_prefill();
    void mark_token();
    void finish();

    TimingStats stats(double cache_fraction) const;

private:
    Clock::time_point start_{};
    Clock::time_point prefill_{};
    Clock::time_point first_token_{};
    Clock::time_point end_{};
    std::size_t tokens_ = 0;
    bool running_ = false;
    bool have_prefill_ = false;
};

// Runs `session` with a started probe; the closure returns the cache fraction.
TimingStats measure_timing(const std::function<double(TimingProbe&)>& session);

}  // namespace flowkv
