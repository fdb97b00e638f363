#include "flowkv/decoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "flowkv/error.hpp"
#include "flowkv/rng.hpp"

namespace flowkv {

void ModelConfig::validate() const {
    if (vocab <= 0 || layers <= 0 || heads <= 0 || head_dim <= 0 || d_model <= 0 || ffn_mult <= 0 || max_seq <= 0)
        throw Error(ErrorKind::ConfigError, "model dimensions must be positive");
    if (heads * head_dim != d_model)
        throw Error(ErrorKind::ConfigError, "heads * head_dim (" + std::to_string(heads * head_dim) +
                                                ") must equal d_model (" + std::to_string(d_model) + ")");
    if (head_dim % 2 != 0) throw Error(ErrorKind::ConfigError, "head_dim must be even for rotary embedding");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t v = static_cast<std::size_t>(cfg_.vocab);
    const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
    const std::size_t f = d * static_cast<std::size_t>(cfg_.ffn_mult);

    std::size_t offset = v * d;
    for (int l = 0; l < cfg_.layers; ++l) {
        layer_offsets_.push_back(offset);
        offset += 4 * d * d + 2 * d * f;
    }
    unembed_offset_ = offset;
    offset += d * v;

    params_.resize(offset);
    for (std::size_t i = 0; i < params_.size(); ++i)
        params_[i] = static_cast<float>(to_unit(counter_draw(cfg_.seed, i)) * 0.2 - 0.1);
}

std::uint64_t Model::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (float p : params_) {
        std::array<unsigned char, sizeof(float)> bytes;
        std::memcpy(bytes.data(), &p, sizeof(float));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::span<const float> Model::embedding() const {
    return std::span<const float>(params_).subspan(0, static_cast<std::size_t>(cfg_.vocab) * cfg_.d_model);
}

std::span<const float> Model::unembedding() const {
    return std::span<const float>(params_).subspan(unembed_offset_, static_cast<std::size_t>(cfg_.vocab) * cfg_.d_model);
}

Model::LayerWeights Model::layer(int l) const {
    const std::size_t d = static_cast<std::size_t>(cfg_.d_model);
    const std::size_t f = d * static_cast<std::size_t>(cfg_.ffn_mult);
    std::span<const float> all(params_);
    std::size_t o = layer_offsets_.at(static_cast<std::size_t>(l));
    LayerWeights w;
    w.wq = all.subspan(o, d * d), o += d * d;
    w.wk = all.subspan(o, d * d), o += d * d;
    w.wv = all.subspan(o, d * d), o += d * d;
    w.wo = all.subspan(o, d * d), o += d * d;
    w.w1 = all.subspan(o, d * f), o += d * f;
    w.w2 = all.subspan(o, f * d);
    return w;
}

Model init_model(const ModelConfig& cfg) { return Model(cfg); }

namespace {

void rmsnorm(std::span<const float> x, std::span<float> out) {
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const float inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-5));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
}

// out[o] = sum_i x[i] * w[i * out_dim + o]
void matvec(std::span<const float> x, std::span<const float> w, std::span<float> out) {
    std::fill(out.begin(), out.end(), 0.0f);
    const std::size_t n_out = out.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float xi = x[i];
        const float* row = w.data() + i * n_out;
        for (std::size_t o = 0; o < n_out; ++o) out[o] += xi * row[o];
    }
}

float gelu(float x) {
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

void apply_rotary(std::span<float> v, int heads, int head_dim, std::int64_t pos) {
    const int half = head_dim / 2;
    for (int i = 0; i < half; ++i) {
        const double theta = static_cast<double>(pos) * std::pow(10000.0, -2.0 * i / head_dim);
        const float c = static_cast<float>(std::cos(theta));
        const float s = static_cast<float>(std::sin(theta));
        for (int h = 0; h < heads; ++h) {
            float& x0 = v[static_cast<std::size_t>(h * head_dim + 2 * i)];
            float& x1 = v[static_cast<std::size_t>(h * head_dim + 2 * i + 1)];
            const float a = x0 * c - x1 * s;
            const float b = x0 * s + x1 * c;
            x0 = a;
            x1 = b;
        }
    }
}

}  // namespace

PrefillResult prefill(const Model& model, const CachePool& pool, std::span<const std::int32_t> new_tokens,
                      const PrefillOptions& opts) {
    const ModelConfig& cfg = model.config();
    if (pool.shape() != cfg.pool_shape()) throw Error(ErrorKind::ShapeMismatch, "pool shape does not match model");
    const std::size_t n = new_tokens.size();
    if (n == 0) throw Error(ErrorKind::EmptyInput, "prefill needs at least one token");

    std::vector<const TokenKV*> ctx;
    ctx.reserve(pool.total_len() + opts.pending.size());
    pool.for_each_token([&](const TokenKV& t) { ctx.push_back(&t); });
    for (const auto& t : opts.pending) ctx.push_back(&t);
    const std::size_t m = ctx.size();
    if (m + n > static_cast<std::size_t>(cfg.max_seq))
        throw Error(ErrorKind::SeqOverflow,
                    std::to_string(m + n) + " cached tokens exceed max_seq " + std::to_string(cfg.max_seq));

    std::int64_t first_origin = opts.first_origin;
    if (first_origin < 0) first_origin = opts.pending.empty() ? pool.next_origin() : opts.pending.back().origin_index + 1;

    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t f = d * static_cast<std::size_t>(cfg.ffn_mult);
    const int heads = cfg.heads;
    const int hd = cfg.head_dim;
    const std::size_t width = pool.shape().kv_width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    PrefillResult result;
    result.tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (new_tokens[i] < 0 || new_tokens[i] >= cfg.vocab)
            throw Error(ErrorKind::IndexOutOfRange, "token id " + std::to_string(new_tokens[i]) + " outside vocab");
        auto& t = result.tokens[i];
        t.key.resize(width);
        t.value.resize(width);
        t.attn_query.resize(width);
        t.origin_index = first_origin + static_cast<std::int64_t>(i);
        t.token_id = new_tokens[i];
    }

    std::vector<float> x(n * d);
    const auto emb = model.embedding();
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(new_tokens[i]) * d), d,
                    x.begin() + static_cast<std::ptrdiff_t>(i * d));

    std::vector<std::vector<double>> attn_data;
    if (opts.capture_attention)
        attn_data.assign(static_cast<std::size_t>(cfg.layers * heads), std::vector<double>(n * (m + n), 0.0));

    std::vector<float> h(d), q(n * d), k(n * d), v(n * d), attn_out(d), proj(d), hidden(f);
    std::vector<double> probs(m + n);
    std::vector<double> acc(static_cast<std::size_t>(hd));
    // Context keys/values for one layer, gathered contiguously.
    std::vector<float> ctx_k(m * d), ctx_v(m * d);

    for (int l = 0; l < cfg.layers; ++l) {
        const auto w = model.layer(l);
        const std::size_t layer_off = static_cast<std::size_t>(l) * d;

        for (std::size_t c = 0; c < m; ++c) {
            std::copy_n(ctx[c]->key.begin() + static_cast<std::ptrdiff_t>(layer_off), d, ctx_k.begin() + static_cast<std::ptrdiff_t>(c * d));
            std::copy_n(ctx[c]->value.begin() + static_cast<std::ptrdiff_t>(layer_off), d, ctx_v.begin() + static_cast<std::ptrdiff_t>(c * d));
        }

        for (std::size_t i = 0; i < n; ++i) {
            std::span<const float> xi(x.data() + i * d, d);
            rmsnorm(xi, h);
            std::span<float> qi(q.data() + i * d, d), ki(k.data() + i * d, d), vi(v.data() + i * d, d);
            matvec(h, w.wq, qi);
            matvec(h, w.wk, ki);
            matvec(h, w.wv, vi);
            const std::int64_t pos = result.tokens[i].origin_index;
            apply_rotary(qi, heads, hd, pos);
            apply_rotary(ki, heads, hd, pos);
            auto& tok = result.tokens[i];
            std::copy(qi.begin(), qi.end(), tok.attn_query.begin() + static_cast<std::ptrdiff_t>(layer_off));
            std::copy(ki.begin(), ki.end(), tok.key.begin() + static_cast<std::ptrdiff_t>(layer_off));
            std::copy(vi.begin(), vi.end(), tok.value.begin() + static_cast<std::ptrdiff_t>(layer_off));
        }

        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t visible = m + i + 1;
            for (int hh = 0; hh < heads; ++hh) {
                const std::size_t ho = static_cast<std::size_t>(hh * hd);
                const float* qv = q.data() + i * d + ho;
                double max_logit = -INFINITY;
                for (std::size_t j = 0; j < visible; ++j) {
                    const float* kv = j < m ? ctx_k.data() + j * d + ho : k.data() + (j - m) * d + ho;
                    double dot = 0.0;
                    for (int e = 0; e < hd; ++e) dot += static_cast<double>(qv[e]) * kv[e];
                    probs[j] = dot * scale;
                    max_logit = std::max(max_logit, probs[j]);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < visible; ++j) {
                    probs[j] = std::exp(probs[j] - max_logit);
                    denom += probs[j];
                }
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t j = 0; j < visible; ++j) {
                    probs[j] /= denom;
                    const float* vv = j < m ? ctx_v.data() + j * d + ho : v.data() + (j - m) * d + ho;
                    for (int e = 0; e < hd; ++e) acc[static_cast<std::size_t>(e)] += probs[j] * vv[e];
                }
                for (int e = 0; e < hd; ++e) attn_out[ho + static_cast<std::size_t>(e)] = static_cast<float>(acc[static_cast<std::size_t>(e)]);
                if (opts.capture_attention) {
                    auto& block = attn_data[static_cast<std::size_t>(l * heads + hh)];
                    std::copy_n(probs.begin(), visible, block.begin() + static_cast<std::ptrdiff_t>(i * (m + n)));
                }
            }
            matvec(attn_out, w.wo, proj);
            float* xi = x.data() + i * d;
            for (std::size_t e = 0; e < d; ++e) xi[e] += proj[e];

            rmsnorm(std::span<const float>(xi, d), h);
            matvec(h, w.w1, hidden);
            for (auto& u : hidden) u = gelu(u);
            matvec(hidden, w.w2, proj);
            for (std::size_t e = 0; e < d; ++e) xi[e] += proj[e];
        }
    }

    rmsnorm(std::span<const float>(x.data() + (n - 1) * d, d), h);
    result.logits.resize(static_cast<std::size_t>(cfg.vocab));
    matvec(h, model.unembedding(), result.logits);

    if (opts.capture_attention) {
        result.attention.reserve(attn_data.size());
        for (auto& block : attn_data) result.attention.emplace_back(n, m + n, std::move(block));
    }
    return result;
}

DecodeState decode_state_after(const CachePool& pool, std::vector<float> last_logits) {
    return DecodeState{pool.total_len(), pool.next_origin(), std::move(last_logits)};
}

std::int32_t argmax(std::span<const float> logits) {
    if (logits.empty()) throw Error(ErrorKind::EmptyInput, "argmax of empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<std::int32_t>(best);
}

Generation generate(const Model& model, const CachePool& pool, DecodeState& state, int max_tokens, int eos_id,
                    const TokenCallback& on_token) {
    if (pool.empty()) throw Error(ErrorKind::EmptyInput, "generation needs a non-empty pool");
    Generation gen;
    for (int step = 0; step < max_tokens; ++step) {
        const std::int32_t tok = argmax(state.last_logits);
        gen.token_ids.push_back(tok);
        PrefillOptions opts;
        opts.pending = gen.kv;
        opts.first_origin = state.next_origin;
        opts.capture_attention = false;
        auto step_result = prefill(model, pool, std::span<const std::int32_t>(&tok, 1), opts);
        gen.kv.push_back(std::move(step_result.tokens.front()));
        state.last_logits = std::move(step_result.logits);
        ++state.position;
        ++state.next_origin;
        if (on_token) on_token(static_cast<std::size_t>(step));
        if (tok == eos_id) break;
    }
    return gen;
}

namespace {

constexpr std::array<char, 4> kMagic{'T', 'D', 'K', 'V'};
constexpr std::uint32_t kWeightsVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
    std::array<unsigned char, sizeof(T)> bytes;
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!is) throw Error(ErrorKind::IoError, "truncated weight file");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace

void write_weights(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, kWeightsVersion);
    const auto params = model.parameters();
    put_le<std::uint64_t>(os, params.size());
    for (float p : params) {
        std::uint32_t bits;
        std::memcpy(&bits, &p, sizeof bits);
        put_le<std::uint32_t>(os, bits);
    }
    if (!os) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

std::vector<float> read_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw Error(ErrorKind::IoError, "bad weight file magic");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kWeightsVersion) throw Error(ErrorKind::IoError, "unsupported weight file version");
    const auto count = get_le<std::uint64_t>(is);
    std::vector<float> params(count);
    for (auto& p : params) {
        const auto bits = get_le<std::uint32_t>(is);
        std::memcpy(&p, &bits, sizeof bits);
    }
    return params;
}

}  // namespace flowkv
