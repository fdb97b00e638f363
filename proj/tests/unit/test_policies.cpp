#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "flowkv/error.hpp"
#include "flowkv/policies.hpp"
#include "flowkv/rng.hpp"
#include "oracles.hpp"

using namespace flowkv;
using Idx = std::vector<std::size_t>;

namespace {

PolicyConfig cfg_with(auto&& edit) {
    PolicyConfig c;
    edit(c);
    return c;
}

AttentionObservation uniform_obs(std::size_t rows, std::size_t cols) {
    return AttentionObservation(rows, cols, std::vector<double>(rows * cols, 1.0 / static_cast<double>(cols)));
}

Idx iota_idx(std::size_t n) {
    Idx v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

}  // namespace

TEST_CASE("rng reference values") {
    CHECK(counter_draw(0, 0) == 0xe220a8397b1dcdafULL);
    CHECK(counter_draw(42, 7) == 0xccf635ee9e9e2fa4ULL);
    SplitMix64 g(0);
    CHECK(g() == 0xe220a8397b1dcdafULL);
}

TEST_CASE("streaming examples") {
    auto c = cfg_with([](auto& p) { p.sink_count = 2; });
    CHECK(select_streaming(10, {4}, c) == Idx{0, 1, 8, 9});
    CHECK(select_streaming(10, {10}, c) == iota_idx(10));
    CHECK(select_streaming(10, {1}, c) == Idx{0});
    CHECK_THROWS_AS(select_streaming(10, {0}, c), Error);
    CHECK_THROWS_AS(select_streaming(10, {11}, c), Error);
}

TEST_CASE("snapkv examples") {
    PolicyConfig k1 = cfg_with([](auto& p) { p.pool_kernel = 1; });
    CHECK(select_snapkv(uniform_obs(3, 8), {3}, k1) == Idx{0, 1, 2});

    std::vector<double> m(2 * 8, 0.0);
    m[0 * 8 + 3] = 0.6;
    m[0 * 8 + 6] = 0.4;
    m[1 * 8 + 3] = 0.3;
    m[1 * 8 + 6] = 0.7;
    const AttentionObservation obs(2, 8, m);
    CHECK(select_snapkv(obs, {2}, k1) == Idx{3, 6});
    CHECK(select_snapkv(obs, {8}, k1) == iota_idx(8));
    // Kernel 3 spreads the peak at 6 over 5..7; 5 wins the tie on index
    // against 6 and 7, and 2..4 carry 3's pooled score 0.45.
    PolicyConfig k3 = cfg_with([](auto& p) { p.pool_kernel = 3; });
    CHECK(select_snapkv(obs, {3}, k3) == Idx{5, 6, 7});
    // Forced window of two: 6 and 7 come first regardless of score.
    CHECK(select_snapkv(obs, {3}, k1, 2) == Idx{3, 6, 7});
    CHECK_THROWS_AS(select_snapkv(obs, {2}, cfg_with([](auto& p) { p.pool_kernel = 4; })), Error);
}

TEST_CASE("chunkkv examples") {
    std::vector<double> m(8, 0.0);
    m[5] = 1.0;
    const AttentionObservation obs(1, 8, m);
    auto c4 = cfg_with([](auto& p) { p.chunk_size = 4; });
    CHECK(select_chunkkv(obs, {4}, c4) == Idx{4, 5, 6, 7});
    CHECK(select_chunkkv(obs, {8}, c4) == iota_idx(8));
    // Five slots: the winning chunk plus the best token of chunk 0 (all tie, so 0).
    CHECK(select_chunkkv(obs, {5}, c4) == Idx{0, 4, 5, 6, 7});
    // Two slots: partial fill from the winning chunk, best token first.
    CHECK(select_chunkkv(obs, {2}, c4) == Idx{4, 5});
}

TEST_CASE("chunk size one matches snapkv with kernel one") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng.below(3), cols = 1 + rng.below(12);
        std::vector<double> m(rows * cols);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += (m[r * cols + c] = static_cast<double>(rng.below(4)));
            if (s == 0.0) m[r * cols] = s = 1.0;
            for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] /= s;
        }
        const AttentionObservation obs(rows, cols, m);
        const KeepBudget b{1 + rng.below(cols)};
        CHECK(select_chunkkv(obs, b, cfg_with([](auto& p) { p.chunk_size = 1; })) ==
              select_snapkv(obs, b, cfg_with([](auto& p) { p.pool_kernel = 1; })));
    }
}

TEST_CASE("h2o examples") {
    CHECK(select_h2o(std::vector<double>{3, 1, 2}, {2}) == Idx{0, 2});
    CHECK(select_h2o(std::vector<double>{1, 1, 1, 1}, {2}) == Idx{0, 1});
    CHECK_THROWS_AS(select_h2o(std::vector<double>{1, -1}, {1}), Error);
}

TEST_CASE("uniform snapkv equals uniform h2o") {
    for (std::size_t k = 1; k <= 9; ++k)
        CHECK(select_snapkv(uniform_obs(2, 9), {k}, cfg_with([](auto& p) { p.pool_kernel = 1; })) ==
              select_h2o(std::vector<double>(9, 0.5), {k}));
}

TEST_CASE("expected attention examples") {
    // Sigma = 0, mu aligned with key 2.
    KeyMatrix keys{3, 2, {1, 0, 0, 1, 3, 3}};
    QueryStats aligned{{1, 1}, {0, 0, 0, 0}};
    CHECK(select_expected_attention(keys, aligned, {1}) == Idx{2});
    // mu = 0, Sigma = I: ranking by squared norm.
    KeyMatrix norms{4, 2, {1, 0, 2, 2, 0, 3, 1, 1}};
    QueryStats iso{{0, 0}, {1, 0, 0, 1}};
    CHECK(select_expected_attention(norms, iso, {2}) == Idx{1, 2});
    CHECK(select_expected_attention(norms, iso, {3}) == Idx{1, 2, 3});
}

TEST_CASE("expected attention rejects bad covariance") {
    KeyMatrix keys{2, 2, {1, 0, 0, 1}};
    auto kind = [&](std::vector<double> sigma) {
        try {
            select_expected_attention(keys, {{0, 0}, sigma}, {1});
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::IoError;
    };
    CHECK(kind({1, 0.5, 0.4, 1}) == ErrorKind::NonPSDCovariance);  // asymmetric
    CHECK(kind({1, 2, 2, 1}) == ErrorKind::NonPSDCovariance);      // eigenvalue -1
    CHECK(kind({1, 1, 1, 1}) == ErrorKind::IoError);                // singular PSD is fine
    CHECK(kind({0, 1, 1, 0}) == ErrorKind::NonPSDCovariance);      // zero diagonal, indefinite
    CHECK(kind({1, 0, 0}) == ErrorKind::ShapeMismatch);
}

TEST_CASE("expected attention is permutation-equivariant") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 6, d = 4;
        KeyMatrix keys{n, d, std::vector<double>(n * d)};
        for (auto& x : keys.data) x = static_cast<double>(rng.below(7)) - 3.0;
        QueryStats st{std::vector<double>(d), std::vector<double>(d * d, 0.0)};
        for (auto& x : st.mean) x = static_cast<double>(rng.below(5)) - 2.0;
        std::vector<double> a(d * d);
        for (auto& x : a) x = static_cast<double>(rng.below(3)) - 1.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t l = 0; l < d; ++l) st.covariance[i * d + j] += a[l * d + i] * a[l * d + j];

        const auto scores = expected_attention_scores(keys, st);
        std::vector<std::size_t> perm = iota_idx(n);
        std::shuffle(perm.begin(), perm.end(), rng);
        KeyMatrix permuted{n, d, std::vector<double>(n * d)};
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(keys.data.begin() + static_cast<long>(perm[r] * d), d,
                        permuted.data.begin() + static_cast<long>(r * d));
        const auto pscores = expected_attention_scores(permuted, st);
        for (std::size_t r = 0; r < n; ++r) CHECK(pscores[r] == scores[perm[r]]);
        // With distinct scores the kept sets map through the permutation.
        if (std::set<double>(scores.begin(), scores.end()).size() == n) {
            std::set<std::size_t> mapped;
            for (auto i : select_expected_attention(permuted, st, {3})) mapped.insert(perm[i]);
            const auto direct = select_expected_attention(keys, st, {3});
            CHECK(mapped == std::set<std::size_t>(direct.begin(), direct.end()));
        }
    }
}

TEST_CASE("random selection") {
    const auto c = cfg_with([](auto& p) { p.seed = 42; });
    // Reference permutation computed with an independent SplitMix64 script.
    CHECK(rank_random(10, 42) == Idx{3, 2, 4, 5, 8, 7, 0, 9, 6, 1});
    CHECK(select_random(10, {4}, c) == Idx{2, 3, 4, 5});
    CHECK(select_random(10, {10}, c) == iota_idx(10));
    CHECK(select_random(100, {50}, c) == select_random(100, {50}, c));
}

TEST_CASE("random selection is uniform") {
    // Each of 8 candidates should be kept with probability 3/8.
    std::vector<int> hits(8, 0);
    const int trials = 8000;
    for (int s = 0; s < trials; ++s)
        for (auto i : select_random(8, {3}, cfg_with([&](auto& p) { p.seed = static_cast<std::uint64_t>(s); }))) ++hits[i];
    const double expect = trials * 3.0 / 8.0;
    double chi2 = 0.0;
    for (int h : hits) chi2 += (h - expect) * (h - expect) / expect;
    CHECK(chi2 < 24.3);  // chi-square, 7 dof, p = 0.001
}

TEST_CASE("selectors agree with brute-force oracles on random instances") {
    SplitMix64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(16), rows = 1 + rng.below(4);
        const std::size_t k = 1 + rng.below(n);
        std::vector<double> m(rows * n);
        for (std::size_t r = 0; r < rows; ++r) {
            // Scores from a small set so ties are common.
            for (std::size_t c = 0; c < n; ++c) m[r * n + c] = static_cast<double>(rng.below(3));
            m[r * n + rng.below(n)] += 1.0;
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) s += m[r * n + c];
            for (std::size_t c = 0; c < n; ++c) m[r * n + c] /= s;
        }
        const AttentionObservation obs(rows, n, m);
        const std::size_t kernel = 1 + 2 * rng.below(3), chunk = 1 + rng.below(5), tail = rng.below(n + 1);
        auto as_set = [](const Idx& v) { return oracle::Set(v.begin(), v.end()); };
        PolicyConfig c;
        c.pool_kernel = kernel;
        c.chunk_size = chunk;
        c.sink_count = rng.below(6);
        CHECK(as_set(select_snapkv(obs, {k}, c, tail)) == oracle::snapkv(m, rows, n, kernel, tail, k));
        CHECK(as_set(select_chunkkv(obs, {k}, c)) == oracle::chunkkv(m, rows, n, chunk, k));
        CHECK(as_set(select_streaming(n, {k}, c)) == oracle::streaming(n, k, c.sink_count));
        const auto cum = obs.column_sums();
        CHECK(as_set(select_h2o(cum, {k})) == oracle::topk_by_counting(cum, k));
        c.seed = rng();
        CHECK(as_set(select_random(n, {k}, c)) == oracle::random_prefix(n, k, c.seed));
    }
}

TEST_CASE("score-based selectors are budget-monotone") {
    SplitMix64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(14);
        std::vector<double> cum(n);
        for (auto& x : cum) x = static_cast<double>(rng.below(5));
        std::vector<double> m(n);
        double s = 0.0;
        for (auto& x : m) s += (x = 1.0 + static_cast<double>(rng.below(4)));
        for (auto& x : m) x /= s;
        const AttentionObservation obs(1, n, m);
        const auto k1 = cfg_with([](auto& p) { p.pool_kernel = 1; });
        for (std::size_t k = 1; k < n; ++k) {
            auto sub = [](const Idx& a, const Idx& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); };
            CHECK(sub(select_h2o(cum, {k}), select_h2o(cum, {k + 1})));
            CHECK(sub(select_snapkv(obs, {k}, k1), select_snapkv(obs, {k + 1}, k1)));
        }
    }
}

TEST_CASE("observation validates rows") {
    CHECK_THROWS_AS(AttentionObservation(1, 2, {0.5, 0.4}), Error);
    CHECK_THROWS_AS(AttentionObservation(1, 2, {0.5}), Error);
    CHECK_THROWS_AS(AttentionObservation(1, 2, {1.5, -0.5}), Error);
    CHECK_NOTHROW(AttentionObservation(1, 2, {0.5, 0.5 + 5e-7}));
}

TEST_CASE("policy names round-trip") {
    for (auto k : {PolicyKind::Streaming, PolicyKind::SnapKV, PolicyKind::ChunkKV, PolicyKind::ExpectedAttention,
                   PolicyKind::H2O, PolicyKind::Random})
        CHECK(parse_policy_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_policy_kind("pyramid"), Error);
}
