#pragma once

#include <cstdint>
#include <vector>

#include "flowkv/cache.hpp"
#include "flowkv/harness.hpp"

namespace fixtures {

inline flowkv::TokenKV token(const flowkv::PoolShape& shape, std::int64_t origin, float fill = 0.0f) {
    flowkv::TokenKV t;
    t.key.assign(shape.kv_width(), fill + static_cast<float>(origin));
    t.value.assign(shape.kv_width(), -fill - static_cast<float>(origin));
    t.origin_index = origin;
    t.token_id = static_cast<std::int32_t>(origin % 200);
    return t;
}

inline std::vector<flowkv::TokenKV> tokens(const flowkv::PoolShape& shape, std::int64_t first, std::size_t n) {
    std::vector<flowkv::TokenKV> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(token(shape, first + static_cast<std::int64_t>(i)));
    return out;
}

// Small, fast config used across tests: responses never stop early so
// history sizes depend only on the scenario.
inline flowkv::SweepConfig small_config() {
    flowkv::SweepConfig cfg;
    cfg.model.max_seq = 2048;
    cfg.max_response_tokens = 8;
    cfg.eos_id = -1;
    cfg.seeds = {1};
    return cfg;
}

inline flowkv::SyntheticSpec small_corpus(std::size_t count, int turns, std::uint64_t seed) {
    flowkv::SyntheticSpec s;
    s.count = count;
    s.turns = turns;
    s.seed = seed;
    return s;
}

}  // namespace fixtures
