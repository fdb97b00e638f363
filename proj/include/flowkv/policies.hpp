#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowkv {

enum class PolicyKind { Streaming, SnapKV, ChunkKV, ExpectedAttention, H2O, Random };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view name);  // throws ConfigError

struct PolicyConfig {
    PolicyKind kind = PolicyKind::SnapKV;
    std::size_t sink_count = 4;   // Streaming
    std::size_t obs_window = 32;  // SnapKV / ChunkKV / H2O observers, ExpectedAttention query stats
    std::size_t pool_kernel = 5;  // SnapKV, odd
    std::size_t chunk_size = 4;   // ChunkKV
    std::uint64_t seed = 0;       // Random

    void validate() const;  // throws ConfigError
};

// Post-softmax attention of observer tokens (rows) over the candidates under
// compression (columns), averaged over layers and heads. Rows are stochastic.
class AttentionObservation {
public:
    static constexpr double kRowTolerance = 1e-6;

    AttentionObservation(std::size_t observers, std::size_t candidates, std::vector<double> scores);

    std::size_t observers() const { return observers_; }
    std::size_t candidates() const { return candidates_; }
    double at(std::size_t row, std::size_t col) const { return scores_[row * candidates_ + col]; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(scores_).subspan(r * candidates_, candidates_);
    }

    std::vector<double> column_means() const;
    std::vector<double> column_sums() const;

private:
    std::size_t observers_;
    std::size_t candidates_;
    std::vector<double> scores_;
};

struct KeepBudget {
    std::size_t keep_count = 1;

    // Throws BudgetTooSmall for 0 and IndexOutOfRange above `candidates`.
    void check(std::size_t candidates) const;
};

// A priority order over candidates: the kept set for budget k is the first k
// entries. Every selector below is defined as a prefix of such an order, which
// makes budget-monotonicity and the per-segment floor repair straightforward.
using Ranking = std::vector<std::size_t>;

std::vector<std::size_t> take_sorted(const Ranking& ranking, std::size_t k);

// Order by descending score, lower index first on ties.
Ranking rank_by_score(std::span<const double> scores);

Ranking rank_streaming(std::size_t candidates, std::size_t sink_count);
Ranking rank_snapkv(const AttentionObservation& obs, std::size_t pool_kernel, std::size_t forced_tail = 0);
Ranking rank_chunkkv(const AttentionObservation& obs, std::size_t chunk_size);
Ranking rank_random(std::size_t candidates, std::uint64_t seed);

struct KeyMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> data;  // row-major [rows x dim]

    std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * dim, dim); }
};

struct QueryStats {
    std::vector<double> mean;        // length d
    std::vector<double> covariance;  // row-major d x d
};

// Gaussian-query log expected exponential logit per key:
//   mu.k / sqrt(d) + k' Sigma k / (2 d)
std::vector<double> expected_attention_scores(const KeyMatrix& keys, const QueryStats& stats);
// Throws NonPSDCovariance if Sigma is asymmetric beyond 1e-8 or not PSD.
void check_psd(std::span<const double> covariance, std::size_t dim);

// Selectors. All return exactly budget.keep_count distinct indices, ascending.

std::vector<std::size_t> select_streaming(std::size_t candidates, KeepBudget budget, const PolicyConfig& cfg);

// `forced_tail` trailing candidates are the observation window itself and are
// kept ahead of everything else.
std::vector<std::size_t> select_snapkv(const AttentionObservation& obs, KeepBudget budget, const PolicyConfig& cfg,
                                       std::size_t forced_tail = 0);

std::vector<std::size_t> select_chunkkv(const AttentionObservation& obs, KeepBudget budget, const PolicyConfig& cfg);

std::vector<std::size_t> select_expected_attention(const KeyMatrix& keys, const QueryStats& stats, KeepBudget budget);

std::vector<std::size_t> select_h2o(std::span<const double> cumulative, KeepBudget budget);

std::vector<std::size_t> select_random(std::size_t candidates, KeepBudget budget, const PolicyConfig& cfg);

}  // namespace flowkv
