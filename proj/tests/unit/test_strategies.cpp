#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "flowkv/error.hpp"
#include "flowkv/harness.hpp"
#include "flowkv/strategies.hpp"

using namespace flowkv;

namespace {

const PolicyKind kAllPolicies[] = {PolicyKind::Streaming, PolicyKind::SnapKV, PolicyKind::ChunkKV,
                                   PolicyKind::ExpectedAttention, PolicyKind::H2O, PolicyKind::Random};

ModelConfig model_cfg() {
    ModelConfig c;
    c.max_seq = 2048;
    return c;
}

TurnConfig turn_cfg(double ratio, PolicyKind kind = PolicyKind::SnapKV) {
    TurnConfig tc;
    tc.policy.kind = kind;
    tc.budget = GlobalBudget::from_ratio(ratio);
    tc.max_response_tokens = 6;
    tc.eos_id = -1;
    return tc;
}

Scenario scenario(int turns, std::uint64_t seed = 3) {
    auto spec = fixtures::small_corpus(1, turns, seed);
    return generate_scenarios(spec).front();
}

struct Session {
    CachePool pool;
    std::vector<TurnRecord> records;
    std::vector<std::vector<std::int32_t>> responses;
};

Session run(Strategy s, const Model& m, const Scenario& sc, const TurnConfig& tc, int turns = -1) {
    Session out{start_session(m, sc.system_prompt), {}, {}};
    const int n = turns < 0 ? static_cast<int>(sc.turns.size()) : turns;
    for (int t = 0; t < n; ++t) {
        auto o = run_turn(s, out.pool, m, sc.turns[static_cast<std::size_t>(t)], tc);
        out.records.push_back(o.record);
        out.responses.push_back(o.response);
    }
    return out;
}

}  // namespace

TEST_CASE("target budget") {
    CHECK(target_budget(100, {0.5}) == 50);
    CHECK(target_budget(100, {1.0}) == 100);
    CHECK(target_budget(8192, GlobalBudget::from_ratio(0.9)) == 819);
    CHECK(target_budget(5, {0.5}) == 3);  // 2.5 rounds up
    CHECK(target_budget(7, {0.5}) == 4);
    CHECK(target_budget(1, {0.1}) == 1);
    CHECK(target_budget(0, {0.5}) == 0);
}

TEST_CASE("ratio conventions") {
    CHECK(GlobalBudget::from_ratio(0.0).retention == 1.0);
    CHECK(GlobalBudget::from_ratio(0.25).retention == 0.75);
    CHECK(GlobalBudget::from_ratio(0.25, true).retention == 0.25);
    CHECK_THROWS_AS(GlobalBudget::from_ratio(1.0), Error);
    CHECK_THROWS_AS(GlobalBudget::from_ratio(0.0, true), Error);
    CHECK(parse_strategy("flowkv") == Strategy::FlowKV);
    CHECK_THROWS_AS(parse_strategy("nested"), Error);
}

TEST_CASE("new data budget") {
    auto d = new_data_budget({100, 30, 2}, {0.5});
    CHECK(d.keep == 20);
    CHECK(d.target == 50);
    CHECK_FALSE(d.clamped);

    d = new_data_budget({100, 50, 2}, {0.5}, 2);
    CHECK(d.keep == 2);
    CHECK(d.clamped);
    try {
        new_data_budget({100, 50, 2}, {0.5}, 2, true);
        FAIL("expected BudgetExhausted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BudgetExhausted);
    }

    CHECK(new_data_budget({100, 30, 2}, {1.0}).keep == 70);
    // Later-turn squeeze: local retention falls below the global one.
    d = new_data_budget({100, 45, 3}, {0.5});
    CHECK(d.keep == 5);
    CHECK(local_retention(d.keep, 55) < 0.5);
}

TEST_CASE("local retention") {
    CHECK(local_retention(20, 40) == 0.5);
    CHECK(local_retention(40, 40) == 1.0);
    CHECK_THROWS_AS(local_retention(1, 0), Error);
}

TEST_CASE("floor repair keeps one token per segment") {
    const PoolShape shape{1, 1, 2};
    CachePool pool(shape);
    pool.append_segment(SegmentKind::system(), fixtures::tokens(shape, 0, 5));
    pool.append_segment(SegmentKind::query(1), fixtures::tokens(shape, 5, 3));
    pool.append_segment(SegmentKind::response(1), fixtures::tokens(shape, 8, 4));
    PolicyConfig p;
    p.kind = PolicyKind::Streaming;
    p.sink_count = 0;
    // Plain top-3 would be 9, 10, 11: all inside r1. Each segment's
    // most-recent token is forced, then the ranking fills the last slot.
    CHECK(select_for_range(pool, {0, 3}, 3, p, 1) == std::vector<std::size_t>{4, 7, 11});
    CHECK(select_for_range(pool, {0, 3}, 4, p, 1) == std::vector<std::size_t>{4, 7, 10, 11});
    // When top-k already covers every segment it is returned unchanged.
    p.sink_count = 1;
    CHECK(select_for_range(pool, {2, 1}, 2, p, 1) == std::vector<std::size_t>{0, 3});
    CHECK_THROWS_AS(select_for_range(pool, {0, 3}, 2, p, 1), Error);
}

TEST_CASE("observation over a range") {
    const Model m(model_cfg());
    const auto sc = scenario(1);
    CachePool pool = start_session(m, sc.system_prompt);
    const std::size_t n = pool.total_len();
    const auto obs = observe_range(pool, {0, 1}, 32);
    CHECK(obs.observers() == 32);
    CHECK(obs.candidates() == n);
    for (std::size_t r = 0; r < 32; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += obs.at(r, c);
        CHECK(std::abs(s - 1.0) < 1e-9);
        for (std::size_t c = n - 32 + r + 1; c < n; ++c) CHECK(obs.at(r, c) == 0.0);
    }
    CHECK(observe_range(pool, {0, 1}, 10000).observers() == n);
}

TEST_CASE("fullkv never compresses") {
    const Model m(model_cfg());
    const auto sc = scenario(3);
    const auto s = run(Strategy::Full, m, sc, turn_cfg(0.5));
    CHECK(s.pool.total_len() == s.pool.full_len());
    for (const auto& [k, c] : s.pool.compression_ledger()) CHECK(c == 0);
    CHECK(s.pool.segment_count() == 7);
    for (const auto& r : s.records) CHECK_FALSE(r.compressed);
}

TEST_CASE("baseline turn one halves a ten-token system prompt") {
    const Model m(model_cfg());
    Scenario sc{"tiny", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {{11, 12, 13}}};
    CachePool pool = start_session(m, sc.system_prompt);
    const auto out = run_turn_baseline(pool, m, sc.turns[0], turn_cfg(0.5));
    CHECK(pool.segment(0).size() == 5);
    CHECK(pool.segment(1).size() == 3);
    CHECK(out.record.post_compress_len == 5);
    CHECK(out.record.pre_compress_len == 10);
    CHECK(out.record.local_retention == 0.5);
}

TEST_CASE("ledger laws up to ten turns") {
    const Model m(model_cfg());
    const auto sc = scenario(10);
    for (int T : {1, 3, 10}) {
        const auto base = run(Strategy::Baseline, m, sc, turn_cfg(0.3), T);
        const auto flow = run(Strategy::FlowKV, m, sc, turn_cfg(0.3), T);
        for (const auto& [k, c] : base.pool.compression_ledger()) CHECK(c == T - k.turn);
        for (const auto& [k, c] : flow.pool.compression_ledger()) CHECK(c == (k.turn < T ? 1 : 0));
    }
}

TEST_CASE("turn one is identical for every policy") {
    const Model m(model_cfg());
    const auto sc = scenario(1, 9);
    for (auto kind : kAllPolicies)
        for (double ratio : {0.1, 0.5, 0.9}) {
            const auto base = run(Strategy::Baseline, m, sc, turn_cfg(ratio, kind));
            const auto flow = run(Strategy::FlowKV, m, sc, turn_cfg(ratio, kind));
            CHECK(base.pool == flow.pool);
            CHECK(base.responses == flow.responses);
        }
}

TEST_CASE("flowkv freezes compressed history and matches the baseline size") {
    const Model m(model_cfg());
    const auto sc = scenario(5, 4);
    for (auto kind : kAllPolicies) {
        const auto tc = turn_cfg(0.5, kind);
        CachePool pool = start_session(m, sc.system_prompt);
        std::vector<Segment> frozen;
        std::set<std::int64_t> old_origins;
        for (std::size_t t = 0; t < sc.turns.size(); ++t) {
            const auto out = run_turn_flowkv(pool, m, sc.turns[t], tc);
            for (std::size_t i = 0; i < frozen.size(); ++i) CHECK(pool.segment(i) == frozen[i]);
            frozen.clear();
            for (const auto& seg : pool.segments())
                if (seg.compression_count >= 1) frozen.push_back(seg);
            CHECK(out.record.post_compress_len == out.record.target);
            CHECK(out.record.post_compress_len ==
                  target_budget(out.record.s_full, tc.budget));
            // Origins from turns <= t-2 never change once frozen.
            std::set<std::int64_t> now;
            for (const auto& seg : pool.segments())
                if (seg.kind.turn + 2 <= out.record.turn)
                    for (const auto& tok : seg.tokens) now.insert(tok.origin_index);
            if (out.record.turn >= 3) {
                for (auto o : old_origins) CHECK(now.count(o) == 1);
            }
            old_origins = now;
        }
    }
}

TEST_CASE("baseline hits the same target every turn") {
    const Model m(model_cfg());
    const auto sc = scenario(5, 4);
    const auto tc = turn_cfg(0.7, PolicyKind::ChunkKV);
    const auto base = run(Strategy::Baseline, m, sc, tc);
    for (const auto& r : base.records) {
        CHECK(r.post_compress_len == target_budget(r.s_full, tc.budget));
        CHECK(r.post_compress_len <= r.pre_compress_len);
    }
}

TEST_CASE("retention one makes every strategy identical") {
    const Model m(model_cfg());
    const auto sc = scenario(4, 12);
    for (auto kind : kAllPolicies) {
        const auto tc = turn_cfg(0.0, kind);
        const auto full = run(Strategy::Full, m, sc, tc);
        const auto base = run(Strategy::Baseline, m, sc, tc);
        const auto flow = run(Strategy::FlowKV, m, sc, tc);
        CHECK(full.pool.same_content(base.pool));
        CHECK(full.pool.same_content(flow.pool));
        CHECK(full.responses == base.responses);
        CHECK(full.responses == flow.responses);
    }
}

TEST_CASE("turns must follow a response") {
    const Model m(model_cfg());
    const auto sc = scenario(1);
    CachePool pool = start_session(m, sc.system_prompt);
    auto q = prefill(m, pool, sc.turns[0]);
    pool.append_segment(SegmentKind::query(1), std::move(q.tokens));
    CHECK_THROWS_AS(run_turn_flowkv(pool, m, sc.turns[0], turn_cfg(0.5)), Error);
    CachePool fresh = start_session(m, sc.system_prompt);
    CHECK_THROWS_AS(run_turn_flowkv(fresh, m, std::vector<std::int32_t>{}, turn_cfg(0.5)), Error);
}

TEST_CASE("turn records serialize") {
    const Model m(model_cfg());
    const auto s = run(Strategy::FlowKV, m, scenario(2), turn_cfg(0.5));
    const auto j = to_json(s.records.back());
    CHECK(j["turn"] == 2);
    CHECK(j["ledger"]["sys"] == 1);
    CHECK(j["ledger"]["r2"] == 0);
}
