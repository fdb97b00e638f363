#include "flowkv/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "flowkv/error.hpp"
#include "flowkv/rng.hpp"

namespace flowkv {

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Streaming: return "streaming";
        case PolicyKind::SnapKV: return "snapkv";
        case PolicyKind::ChunkKV: return "chunkkv";
        case PolicyKind::ExpectedAttention: return "expected_attention";
        case PolicyKind::H2O: return "h2o";
        case PolicyKind::Random: return "random";
    }
    return "unknown";
}

PolicyKind parse_policy_kind(std::string_view name) {
    for (auto kind : {PolicyKind::Streaming, PolicyKind::SnapKV, PolicyKind::ChunkKV, PolicyKind::ExpectedAttention,
                      PolicyKind::H2O, PolicyKind::Random}) {
        if (to_string(kind) == name) return kind;
    }
    throw Error(ErrorKind::ConfigError, "unknown policy '" + std::string(name) + "'");
}

void PolicyConfig::validate() const {
    if (obs_window == 0) throw Error(ErrorKind::ConfigError, "obs_window must be positive");
    if (pool_kernel == 0 || pool_kernel % 2 == 0) throw Error(ErrorKind::ConfigError, "pool_kernel must be a positive odd integer");
    if (chunk_size == 0) throw Error(ErrorKind::ConfigError, "chunk_size must be positive");
}

AttentionObservation::AttentionObservation(std::size_t observers, std::size_t candidates, std::vector<double> scores)
    : observers_(observers), candidates_(candidates), scores_(std::move(scores)) {
    if (observers_ == 0 || candidates_ == 0) throw Error(ErrorKind::ShapeMismatch, "observation must be non-empty");
    if (scores_.size() != observers_ * candidates_)
        throw Error(ErrorKind::ShapeMismatch, "observation data does not match observers x candidates");
    for (std::size_t r = 0; r < observers_; ++r) {
        double sum = 0.0;
        for (double v : row(r)) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw Error(ErrorKind::ShapeMismatch, "attention scores must be finite and non-negative");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowTolerance)
            throw Error(ErrorKind::ShapeMismatch, "attention row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
}

std::vector<double> AttentionObservation::column_sums() const {
    std::vector<double> out(candidates_, 0.0);
    for (std::size_t r = 0; r < observers_; ++r)
        for (std::size_t c = 0; c < candidates_; ++c) out[c] += at(r, c);
    return out;
}

std::vector<double> AttentionObservation::column_means() const {
    auto out = column_sums();
    for (auto& v : out) v /= static_cast<double>(observers_);
    return out;
}

void KeepBudget::check(std::size_t candidates) const {
    if (keep_count < 1) throw Error(ErrorKind::BudgetTooSmall, "keep_count must be at least 1");
    if (keep_count > candidates)
        throw Error(ErrorKind::IndexOutOfRange,
                    "keep_count " + std::to_string(keep_count) + " exceeds " + std::to_string(candidates) + " candidates");
}

std::vector<std::size_t> take_sorted(const Ranking& ranking, std::size_t k) {
    std::vector<std::size_t> out(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranking.size())));
    std::sort(out.begin(), out.end());
    return out;
}

Ranking rank_by_score(std::span<const double> scores) {
    Ranking order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

Ranking rank_streaming(std::size_t candidates, std::size_t sink_count) {
    Ranking order;
    order.reserve(candidates);
    const std::size_t sinks = std::min(sink_count, candidates);
    for (std::size_t i = 0; i < sinks; ++i) order.push_back(i);
    for (std::size_t i = candidates; i > sinks; --i) order.push_back(i - 1);
    return order;
}

namespace {

std::vector<double> max_pool_same(std::span<const double> x, std::size_t kernel) {
    const std::size_t half = kernel / 2;
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const std::size_t lo = j >= half ? j - half : 0;
        const std::size_t hi = std::min(x.size() - 1, j + half);
        double m = x[lo];
        for (std::size_t i = lo + 1; i <= hi; ++i) m = std::max(m, x[i]);
        out[j] = m;
    }
    return out;
}

}  // namespace

Ranking rank_snapkv(const AttentionObservation& obs, std::size_t pool_kernel, std::size_t forced_tail) {
    const std::size_t n = obs.candidates();
    const auto pooled = max_pool_same(obs.column_means(), pool_kernel);
    const Ranking by_score = rank_by_score(pooled);

    const std::size_t tail_begin = n - std::min(forced_tail, n);
    Ranking order;
    order.reserve(n);
    for (std::size_t idx : by_score)
        if (idx >= tail_begin) order.push_back(idx);
    for (std::size_t idx : by_score)
        if (idx < tail_begin) order.push_back(idx);
    return order;
}

Ranking rank_chunkkv(const AttentionObservation& obs, std::size_t chunk_size) {
    const std::size_t n = obs.candidates();
    const auto token_scores = obs.column_means();
    const std::size_t chunks = (n + chunk_size - 1) / chunk_size;

    std::vector<double> chunk_scores(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * chunk_size;
        const std::size_t hi = std::min(n, lo + chunk_size);
        double sum = 0.0;
        for (std::size_t j = lo; j < hi; ++j) sum += token_scores[j];
        chunk_scores[c] = sum / static_cast<double>(hi - lo);
    }

    // Whole chunks in score order, tokens inside a chunk in score order: a
    // prefix of this sequence is "whole chunks until the next would overflow,
    // then the best tokens of the next chunk".
    Ranking order;
    order.reserve(n);
    for (std::size_t c : rank_by_score(chunk_scores)) {
        const std::size_t lo = c * chunk_size;
        const std::size_t hi = std::min(n, lo + chunk_size);
        const auto local = rank_by_score(std::span<const double>(token_scores).subspan(lo, hi - lo));
        for (std::size_t j : local) order.push_back(lo + j);
    }
    return order;
}

Ranking rank_random(std::size_t candidates, std::uint64_t seed) {
    Ranking order(candidates);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    // Fisher-Yates; any prefix is a uniform sample without replacement.
    for (std::size_t i = 0; i + 1 < candidates; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates - i));
        std::swap(order[i], order[j]);
    }
    return order;
}

void check_psd(std::span<const double> covariance, std::size_t dim) {
    if (covariance.size() != dim * dim) throw Error(ErrorKind::ShapeMismatch, "covariance must be d x d");
    Eigen::MatrixXd sigma(dim, dim);
    double scale = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            const double a = covariance[i * dim + j];
            const double b = covariance[j * dim + i];
            if (!std::isfinite(a)) throw Error(ErrorKind::NonPSDCovariance, "covariance has non-finite entries");
            if (std::abs(a - b) > 1e-8) throw Error(ErrorKind::NonPSDCovariance, "covariance is not symmetric");
            sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a;
            scale = std::max(scale, std::abs(a));
        }
    }
    if (dim == 0) return;
    // Smallest eigenvalue; LDL^T with diagonal pivoting misreads singular
    // and zero-diagonal indefinite matrices.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma, Eigen::EigenvaluesOnly);
    const double tol = 1e-10 * std::max(1.0, scale) * static_cast<double>(dim);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -tol)
        throw Error(ErrorKind::NonPSDCovariance, "covariance is not positive semi-definite");
}

std::vector<double> expected_attention_scores(const KeyMatrix& keys, const QueryStats& stats) {
    const std::size_t d = keys.dim;
    if (d == 0 || keys.data.size() != keys.rows * d) throw Error(ErrorKind::ShapeMismatch, "key matrix shape");
    if (stats.mean.size() != d) throw Error(ErrorKind::ShapeMismatch, "query mean must have length d");
    check_psd(stats.covariance, d);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double inv_2d = 1.0 / (2.0 * static_cast<double>(d));
    std::vector<double> scores(keys.rows);
    for (std::size_t r = 0; r < keys.rows; ++r) {
        const auto k = keys.row(r);
        double linear = 0.0;
        for (std::size_t i = 0; i < d; ++i) linear += stats.mean[i] * k[i];
        double quad = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += stats.covariance[i * d + j] * k[j];
            quad += k[i] * acc;
        }
        scores[r] = linear * inv_sqrt_d + quad * inv_2d;
    }
    return scores;
}

std::vector<std::size_t> select_streaming(std::size_t candidates, KeepBudget budget, const PolicyConfig& cfg) {
    budget.check(candidates);
    return take_sorted(rank_streaming(candidates, cfg.sink_count), budget.keep_count);
}

std::vector<std::size_t> select_snapkv(const AttentionObservation& obs, KeepBudget budget, const PolicyConfig& cfg,
                                       std::size_t forced_tail) {
    cfg.validate();
    budget.check(obs.candidates());
    return take_sorted(rank_snapkv(obs, cfg.pool_kernel, forced_tail), budget.keep_count);
}

std::vector<std::size_t> select_chunkkv(const AttentionObservation& obs, KeepBudget budget, const PolicyConfig& cfg) {
    cfg.validate();
    budget.check(obs.candidates());
    return take_sorted(rank_chunkkv(obs, cfg.chunk_size), budget.keep_count);
}

std::vector<std::size_t> select_expected_attention(const KeyMatrix& keys, const QueryStats& stats, KeepBudget budget) {
    budget.check(keys.rows);
    const auto scores = expected_attention_scores(keys, stats);
    return take_sorted(rank_by_score(scores), budget.keep_count);
}

std::vector<std::size_t> select_h2o(std::span<const double> cumulative, KeepBudget budget) {
    budget.check(cumulative.size());
    for (double v : cumulative)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw Error(ErrorKind::ShapeMismatch, "cumulative scores must be finite and non-negative");
    return take_sorted(rank_by_score(cumulative), budget.keep_count);
}

std::vector<std::size_t> select_random(std::size_t candidates, KeepBudget budget, const PolicyConfig& cfg) {
    budget.check(candidates);
    return take_sorted(rank_random(candidates, cfg.seed), budget.keep_count);
}

}  // namespace flowkv
