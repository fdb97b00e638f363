#include "flowkv/metrics.hpp"

#include <fstream>
#include <istream>

#include "flowkv/error.hpp"

namespace flowkv {

IfrScores ifr(std::span<const PromptResult> prompts) {
    if (prompts.empty()) throw Error(ErrorKind::EmptyInput, "IFR needs at least one prompt");
    std::size_t strict_prompts = 0, loose_prompts = 0;
    std::size_t strict_instr = 0, loose_instr = 0, total_instr = 0;
    for (const auto& p : prompts) {
        if (p.instructions.empty())
            throw Error(ErrorKind::EmptyInput, "prompt '" + p.prompt_id + "' has no instructions");
        bool all_strict = true, all_loose = true;
        for (const auto& ins : p.instructions) {
            if (ins.strict_pass && !ins.loose_pass)
                throw Error(ErrorKind::InvariantViolation,
                            "prompt '" + p.prompt_id + "': instruction passes strictly but fails loosely");
            all_strict = all_strict && ins.strict_pass;
            all_loose = all_loose && ins.loose_pass;
            strict_instr += ins.strict_pass;
            loose_instr += ins.loose_pass;
        }
        strict_prompts += all_strict;
        loose_prompts += all_loose;
        total_instr += p.instructions.size();
    }
    const double np = static_cast<double>(prompts.size());
    const double ni = static_cast<double>(total_instr);
    IfrScores s;
    s.spa = static_cast<double>(strict_prompts) / np;
    s.sia = static_cast<double>(strict_instr) / ni;
    s.lpa = static_cast<double>(loose_prompts) / np;
    s.lia = static_cast<double>(loose_instr) / ni;
    s.ifr = (s.spa + s.sia + s.lpa + s.lia) / 4.0;
    return s;
}

std::vector<PromptResult> read_prompt_results(std::istream& in) {
    std::vector<PromptResult> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PromptResult p;
            p.prompt_id = j.value("prompt_id", std::to_string(lineno));
            for (const auto& ins : j.at("instructions"))
                p.instructions.push_back({ins.at("strict").get<bool>(), ins.at("loose").get<bool>()});
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ConfigError, "prompt results line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<PromptResult> read_prompt_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    return read_prompt_results(in);
}

nlohmann::json to_json(const IfrScores& s) {
    return {{"spa", s.spa}, {"sia", s.sia}, {"lpa", s.lpa}, {"lia", s.lia}, {"ifr", s.ifr}};
}

double cache_fraction(std::size_t kept, std::size_t full_len) {
    if (full_len == 0) throw Error(ErrorKind::EmptyInput, "cache fraction of an empty history");
    if (kept > full_len) throw Error(ErrorKind::InvariantViolation, "cache is larger than its uncompressed size");
    return static_cast<double>(kept) / static_cast<double>(full_len);
}

double cache_fraction(const CachePool& pool_after, std::size_t full_len) {
    return cache_fraction(pool_after.total_len(), full_len);
}

nlohmann::json to_json(const TimingStats& t) {
    return {{"prefill_s", t.prefill_s}, {"ttft_s", t.ttft_s},           {"tpot_ms", t.tpot_ms},
            {"total_gen_s", t.total_gen_s}, {"cache_fraction", t.cache_fraction}, {"tokens", t.tokens}};
}

void TimingProbe::start() {
    *this = TimingProbe{};
    start_ = Clock::now();
    running_ = true;
}

void TimingProbe::mark_prefill() {
    if (!running_ || have_prefill_) return;
    prefill_ = Clock::now();
    have_prefill_ = true;
}

void TimingProbe::mark_token() {
    if (!running_) return;
    const auto now = Clock::now();
    if (!have_prefill_) {
        prefill_ = now;
        have_prefill_ = true;
    }
    if (tokens_ == 0) first_token_ = now;
    ++tokens_;
}

void TimingProbe::finish() {
    if (!running_) return;
    end_ = Clock::now();
    if (!have_prefill_) {
        prefill_ = end_;
        have_prefill_ = true;
    }
    running_ = false;
}

TimingStats TimingProbe::stats(double fraction) const {
    using secs = std::chrono::duration<double>;
    TimingStats s;
    s.cache_fraction = fraction;
    s.tokens = tokens_;
    s.prefill_s = secs(prefill_ - start_).count();
    s.ttft_s = tokens_ > 0 ? secs(first_token_ - start_).count() : secs(end_ - start_).count();
    s.total_gen_s = secs(end_ - start_).count();
    if (tokens_ >= 2) s.tpot_ms = (s.total_gen_s - s.ttft_s) * 1000.0 / static_cast<double>(tokens_ - 1);
    return s;
}

TimingStats measure_timing(const std::function<double(TimingProbe&)>& session) {
    TimingProbe probe;
    probe.start();
    const double fraction = session(probe);
    probe.finish();
    return probe.stats(fraction);
}

}  // namespace flowkv
