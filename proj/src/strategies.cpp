#include "flowkv/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowkv/error.hpp"
#include "flowkv/rng.hpp"

namespace flowkv {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::Full: return "full";
        case Strategy::Baseline: return "baseline";
        case Strategy::FlowKV: return "flowkv";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (auto s : {Strategy::Full, Strategy::Baseline, Strategy::FlowKV})
        if (to_string(s) == name) return s;
    throw Error(ErrorKind::ConfigError, "unknown strategy '" + std::string(name) + "'");
}

GlobalBudget GlobalBudget::from_ratio(double ratio, bool invert_ratio) {
    const double retention = invert_ratio ? ratio : 1.0 - ratio;
    if (!(retention > 0.0) || retention > 1.0)
        throw Error(ErrorKind::ConfigError, "compression ratio " + std::to_string(ratio) + " gives retention outside (0, 1]");
    return GlobalBudget{retention};
}

std::size_t target_budget(std::size_t s_full, GlobalBudget g) {
    if (s_full == 0) return 0;
    const auto t = static_cast<std::size_t>(std::floor(static_cast<double>(s_full) * g.retention + 0.5));
    return std::clamp<std::size_t>(t, 1, s_full);
}

BudgetDecision new_data_budget(const BudgetState& state, GlobalBudget g, std::size_t min_keep, bool strict) {
    BudgetDecision d;
    d.target = target_budget(state.s_full, g);
    const auto available = static_cast<long long>(d.target) - static_cast<long long>(state.s_preserved);
    if (available < static_cast<long long>(min_keep)) {
        if (strict)
            throw Error(ErrorKind::BudgetExhausted, "turn " + std::to_string(state.turn) + ": target " +
                                                        std::to_string(d.target) + " leaves " + std::to_string(available) +
                                                        " tokens for new data, floor is " + std::to_string(min_keep));
        d.keep = min_keep;
        d.clamped = true;
    } else {
        d.keep = static_cast<std::size_t>(available);
    }
    return d;
}

double local_retention(std::size_t b_new, std::size_t s_new_full) {
    if (s_new_full == 0) throw Error(ErrorKind::EmptyInput, "local retention of an empty range");
    return static_cast<double>(b_new) / static_cast<double>(s_new_full);
}

nlohmann::json to_json(const TurnRecord& r) {
    nlohmann::json ledger = nlohmann::json::object();
    for (const auto& [kind, count] : r.ledger) ledger[kind.label()] = count;
    return {
        {"turn", r.turn},
        {"s_full", r.s_full},
        {"s_preserved", r.s_preserved},
        {"target", r.target},
        {"pre_compress_len", r.pre_compress_len},
        {"post_compress_len", r.post_compress_len},
        {"range_len", r.range_len},
        {"local_keep_count", r.local_keep_count},
        {"local_retention", r.local_retention},
        {"compressed", r.compressed},
        {"clamped", r.clamped},
        {"query_len", r.query_len},
        {"response_len", r.response_len},
        {"ledger", ledger},
    };
}

CachePool start_session(const Model& model, std::span<const std::int32_t> system_prompt) {
    CachePool pool(model.config().pool_shape());
    PrefillOptions opts;
    opts.capture_attention = false;
    auto pre = prefill(model, pool, system_prompt, opts);
    pool.append_segment(SegmentKind::system(), std::move(pre.tokens));
    return pool;
}

namespace {

std::vector<const TokenKV*> range_tokens(const CachePool& pool, SegmentRange range) {
    std::vector<const TokenKV*> out;
    for (std::size_t s = range.first; s < range.end(); ++s)
        for (const auto& t : pool.segment(s).tokens) out.push_back(&t);
    return out;
}

// Mean over layers and heads of a [layer][head][dim] vector.
std::vector<double> head_average(std::span<const float> v, const PoolShape& shape) {
    std::vector<double> out(static_cast<std::size_t>(shape.head_dim), 0.0);
    const std::size_t groups = static_cast<std::size_t>(shape.layers * shape.heads);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t e = 0; e < out.size(); ++e) out[e] += v[g * out.size() + e];
    for (auto& x : out) x /= static_cast<double>(groups);
    return out;
}

Ranking rank_expected_attention(const std::vector<const TokenKV*>& toks, const PoolShape& shape, std::size_t window) {
    const std::size_t n = toks.size();
    const std::size_t d = static_cast<std::size_t>(shape.head_dim);
    KeyMatrix keys{n, d, {}};
    keys.data.reserve(n * d);
    for (const auto* t : toks) {
        const auto k = head_average(t->key, shape);
        keys.data.insert(keys.data.end(), k.begin(), k.end());
    }
    QueryStats stats{std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
    std::vector<std::vector<double>> qs;
    for (std::size_t i = n - window; i < n; ++i) qs.push_back(head_average(toks[i]->attn_query, shape));
    for (const auto& q : qs)
        for (std::size_t e = 0; e < d; ++e) stats.mean[e] += q[e] / static_cast<double>(qs.size());
    for (const auto& q : qs)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                stats.covariance[a * d + b] +=
                    (q[a] - stats.mean[a]) * (q[b] - stats.mean[b]) / static_cast<double>(qs.size());
    // Enforce exact symmetry against round-off in the accumulation order.
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a + 1; b < d; ++b) stats.covariance[b * d + a] = stats.covariance[a * d + b];
    return rank_by_score(expected_attention_scores(keys, stats));
}

}  // namespace

AttentionObservation observe_range(const CachePool& pool, SegmentRange range, std::size_t window) {
    const auto toks = range_tokens(pool, range);
    const std::size_t n = toks.size();
    if (n == 0) throw Error(ErrorKind::EmptyInput, "observation over an empty range");
    window = std::clamp<std::size_t>(window, 1, n);
    const PoolShape& shape = pool.shape();
    const std::size_t width = shape.kv_width();
    for (std::size_t i = n - window; i < n; ++i)
        if (toks[i]->attn_query.size() != width)
            throw Error(ErrorKind::ShapeMismatch, "observer token has no stored query projection");

    const std::size_t hd = static_cast<std::size_t>(shape.head_dim);
    const std::size_t groups = static_cast<std::size_t>(shape.layers * shape.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores(window * n, 0.0);
    std::vector<double> logits(n);
    for (std::size_t r = 0; r < window; ++r) {
        const std::size_t obs = n - window + r;
        const std::size_t visible = obs + 1;
        double* row = scores.data() + r * n;
        for (std::size_t g = 0; g < groups; ++g) {
            const float* q = toks[obs]->attn_query.data() + g * hd;
            double mx = -INFINITY;
            for (std::size_t j = 0; j < visible; ++j) {
                const float* k = toks[j]->key.data() + g * hd;
                double dot = 0.0;
                for (std::size_t e = 0; e < hd; ++e) dot += static_cast<double>(q[e]) * k[e];
                logits[j] = dot * scale;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                denom += logits[j];
            }
            for (std::size_t j = 0; j < visible; ++j) row[j] += logits[j] / denom / static_cast<double>(groups);
        }
    }
    return AttentionObservation(window, n, std::move(scores));
}

std::vector<std::size_t> select_for_range(const CachePool& pool, SegmentRange range, std::size_t keep,
                                          const PolicyConfig& policy, int turn) {
    const std::size_t n = pool.len_of(range);
    if (range.count > keep)
        throw Error(ErrorKind::BudgetTooSmall, "keep " + std::to_string(keep) + " is below one token per segment");
    if (keep >= n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }

    Ranking ranking;
    const std::size_t window = std::min(policy.obs_window, n);
    switch (policy.kind) {
        case PolicyKind::Streaming: ranking = rank_streaming(n, policy.sink_count); break;
        case PolicyKind::SnapKV:
            ranking = rank_snapkv(observe_range(pool, range, window), policy.pool_kernel, window);
            break;
        case PolicyKind::ChunkKV: ranking = rank_chunkkv(observe_range(pool, range, window), policy.chunk_size); break;
        case PolicyKind::H2O: {
            const auto cumulative = observe_range(pool, range, n).column_sums();
            ranking = rank_by_score(cumulative);
            break;
        }
        case PolicyKind::ExpectedAttention:
            ranking = rank_expected_attention(range_tokens(pool, range), pool.shape(), window);
            break;
        case PolicyKind::Random:
            ranking = rank_random(n, derive_seed(policy.seed, static_cast<std::uint64_t>(turn)));
            break;
    }

    // Min-keep floor: each segment contributes its best-ranked token first,
    // the rest of the budget follows the ranking. When the plain top-k
    // already covers every segment this is exactly the top-k.
    std::vector<std::size_t> seg_of(n);
    {
        std::size_t off = 0;
        for (std::size_t s = 0; s < range.count; ++s) {
            const std::size_t len = pool.segment(range.first + s).size();
            std::fill_n(seg_of.begin() + static_cast<std::ptrdiff_t>(off), len, s);
            off += len;
        }
    }
    std::vector<bool> chosen(n, false), seg_covered(range.count, false);
    std::size_t picked = 0;
    for (std::size_t idx : ranking) {
        if (!seg_covered[seg_of[idx]]) {
            seg_covered[seg_of[idx]] = true;
            chosen[idx] = true;
            ++picked;
        }
    }
    for (std::size_t idx : ranking) {
        if (picked == keep) break;
        if (!chosen[idx]) {
            chosen[idx] = true;
            ++picked;
        }
    }
    std::vector<std::size_t> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < n; ++i)
        if (chosen[i]) out.push_back(i);
    return out;
}

namespace {

struct CompressionPlan {
    SegmentRange range;
    std::size_t s_preserved = 0;
};

void compress_step(CachePool& pool, const CompressionPlan& plan, const TurnConfig& cfg, TurnRecord& rec) {
    rec.s_full = pool.full_len();
    rec.pre_compress_len = pool.total_len();
    rec.s_preserved = plan.s_preserved;
    rec.range_len = pool.len_of(plan.range);

    BudgetState state{rec.s_full, plan.s_preserved, rec.turn};
    const auto decision = new_data_budget(state, cfg.budget, plan.range.count, cfg.strict_budget);
    rec.target = decision.target;
    rec.clamped = decision.clamped;
    const std::size_t keep = std::min(decision.keep, rec.range_len);
    rec.local_keep_count = keep;
    rec.local_retention = local_retention(keep, rec.range_len);

    const auto indices = select_for_range(pool, plan.range, keep, cfg.policy, rec.turn);
    pool.compress_segments(plan.range, indices);
    rec.compressed = true;
    rec.post_compress_len = pool.total_len();
}

TurnOutput finish_turn(CachePool& pool, const Model& model, std::span<const std::int32_t> query, const TurnConfig& cfg,
                       const TurnObserver* observer, TurnRecord rec) {
    if (query.empty()) throw Error(ErrorKind::EmptyInput, "turn query is empty");
    if (cfg.max_response_tokens < 1) throw Error(ErrorKind::ConfigError, "max_response_tokens must be at least 1");
    PrefillOptions opts;
    opts.capture_attention = cfg.capture_attention;
    auto pre = prefill(model, pool, query, opts);
    pool.append_segment(SegmentKind::query(rec.turn), std::move(pre.tokens));
    if (observer && observer->on_prefill_done) observer->on_prefill_done();

    auto state = decode_state_after(pool, std::move(pre.logits));
    TokenCallback cb;
    if (observer && observer->on_token) cb = observer->on_token;
    auto gen = generate(model, pool, state, cfg.max_response_tokens, cfg.eos_id, cb);
    pool.append_segment(SegmentKind::response(rec.turn), std::move(gen.kv));

    rec.query_len = query.size();
    rec.response_len = gen.token_ids.size();
    rec.ledger = pool.compression_ledger();
    return TurnOutput{std::move(gen.token_ids), std::move(rec)};
}

TurnRecord begin_record(const CachePool& pool) {
    if (pool.empty() || pool.next_kind().type != SegmentType::Query)
        throw Error(ErrorKind::OrderViolation, "a turn must start from a pool ending in the system prompt or a response");
    TurnRecord rec;
    rec.turn = pool.next_kind().turn;
    return rec;
}

}  // namespace

TurnOutput run_turn_fullkv(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                           const TurnConfig& cfg, const TurnObserver* observer) {
    TurnRecord rec = begin_record(pool);
    rec.s_full = pool.full_len();
    rec.target = rec.s_full;
    rec.pre_compress_len = rec.post_compress_len = pool.total_len();
    return finish_turn(pool, model, query, cfg, observer, std::move(rec));
}

TurnOutput run_turn_baseline(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                             const TurnConfig& cfg, const TurnObserver* observer) {
    TurnRecord rec = begin_record(pool);
    compress_step(pool, CompressionPlan{SegmentRange{0, pool.segment_count()}, 0}, cfg, rec);
    return finish_turn(pool, model, query, cfg, observer, std::move(rec));
}

TurnOutput run_turn_flowkv(CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                           const TurnConfig& cfg, const TurnObserver* observer) {
    TurnRecord rec = begin_record(pool);
    // Frozen prefix: every segment already compressed once. Only the
    // never-compressed tail (sys at turn 1, Q/R of the last turn afterwards)
    // enters the compressor.
    std::size_t first_fresh = pool.segment_count();
    while (first_fresh > 0 && pool.segment(first_fresh - 1).compression_count == 0) --first_fresh;
    for (std::size_t s = 0; s < first_fresh; ++s)
        if (pool.segment(s).compression_count == 0)
            throw Error(ErrorKind::InvariantViolation, "uncompressed segment inside the frozen prefix");
    const SegmentRange fresh{first_fresh, pool.segment_count() - first_fresh};
    const std::size_t preserved = first_fresh == 0 ? 0 : pool.len_of(SegmentRange{0, first_fresh});
    compress_step(pool, CompressionPlan{fresh, preserved}, cfg, rec);
    return finish_turn(pool, model, query, cfg, observer, std::move(rec));
}

TurnOutput run_turn(Strategy strategy, CachePool& pool, const Model& model, std::span<const std::int32_t> query,
                    const TurnConfig& cfg, const TurnObserver* observer) {
    switch (strategy) {
        case Strategy::Full: return run_turn_fullkv(pool, model, query, cfg, observer);
        case Strategy::Baseline: return run_turn_baseline(pool, model, query, cfg, observer);
        case Strategy::FlowKV: return run_turn_flowkv(pool, model, query, cfg, observer);
    }
    throw Error(ErrorKind::ConfigError, "unknown strategy");
}

}  // namespace flowkv
