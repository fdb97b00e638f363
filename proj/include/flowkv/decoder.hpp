#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "flowkv/cache.hpp"
#include "flowkv/policies.hpp"

namespace flowkv {

struct ModelConfig {
    int vocab = 256;
    int layers = 2;
    int heads = 2;
    int head_dim = 8;
    int d_model = 16;  // must equal heads * head_dim
    int ffn_mult = 4;
    int max_seq = 512;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
    PoolShape pool_shape() const { return {layers, heads, head_dim}; }
};

// Tiny pre-norm decoder-only transformer with rotary positions taken from
// each token's origin_index. Weights are immutable after construction.
//
// Initialization: parameters are laid out in one flat array in the order
//   embed[vocab x d], then per layer {wq, wk, wv, wo}[d x d], w1[d x f], w2[f x d],
//   then unembed[d x vocab]
// and parameter i is set to float(to_unit(counter_draw(seed, i)) * 0.2 - 0.1),
// i.e. SplitMix64 over the counter (seed + (i+1) * 0x9E3779B97F4A7C15), top 53
// bits scaled to [0,1), mapped to [-0.1, 0.1).
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    std::span<const float> parameters() const { return params_; }
    std::uint64_t checksum() const;  // FNV-1a over the parameter bytes

    // Single-matrix views used by the forward pass.
    std::span<const float> embedding() const;
    std::span<const float> unembedding() const;
    struct LayerWeights {
        std::span<const float> wq, wk, wv, wo, w1, w2;
    };
    LayerWeights layer(int l) const;

private:
    ModelConfig cfg_;
    std::vector<float> params_;
    std::vector<std::size_t> layer_offsets_;
    std::size_t unembed_offset_ = 0;
};

Model init_model(const ModelConfig& cfg);

struct PrefillOptions {
    // Tokens computed earlier in the same step sequence that are not yet in
    // the pool (e.g. the partial response during generation).
    std::span<const TokenKV> pending{};
    // Origin of the first new token; defaults to the next stream position.
    std::int64_t first_origin = -1;
    bool capture_attention = true;
};

struct PrefillResult {
    std::vector<TokenKV> tokens;
    // One observation per (layer, head), index layer * heads + head. Rows are
    // the new tokens; columns are pool tokens, then pending, then new tokens.
    std::vector<AttentionObservation> attention;
    std::vector<float> logits;  // final position
};

PrefillResult prefill(const Model& model, const CachePool& pool, std::span<const std::int32_t> new_tokens,
                      const PrefillOptions& opts = {});

struct DecodeState {
    std::size_t position = 0;      // number of cached tokens visible to the next step
    std::int64_t next_origin = 0;  // rotary position of the next token
    std::vector<float> last_logits;
};

// State after prefilling the pool's last segment.
DecodeState decode_state_after(const CachePool& pool, std::vector<float> last_logits);

struct Generation {
    std::vector<std::int32_t> token_ids;
    std::vector<TokenKV> kv;
};

using TokenCallback = std::function<void(std::size_t index)>;

// Greedy decoding (argmax, lowest id on ties) until eos_id is emitted or
// max_tokens are produced. The emitted tokens are fed back so every returned
// token has KV; the pool itself is not modified.
Generation generate(const Model& model, const CachePool& pool, DecodeState& state, int max_tokens, int eos_id,
                    const TokenCallback& on_token = {});

std::int32_t argmax(std::span<const float> logits);

// Flat little-endian float32 dump with a 16-byte header:
//   "TDKV" | version u32 | param_count u64
void write_weights(const Model& model, const std::filesystem::path& path);
std::vector<float> read_weights(const std::filesystem::path& path);

}  // namespace flowkv
