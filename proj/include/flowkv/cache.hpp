#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace flowkv {

enum class SegmentType { SystemPrompt, Query, Response };

// Identifies a cache block. The system prompt carries turn 0; queries and
// responses carry their turn number (>= 1).
struct SegmentKind {
    SegmentType type = SegmentType::SystemPrompt;
    int turn = 0;

    static SegmentKind system() { return {SegmentType::SystemPrompt, 0}; }
    static SegmentKind query(int turn) { return {SegmentType::Query, turn}; }
    static SegmentKind response(int turn) { return {SegmentType::Response, turn}; }

    // Conversation order: sys < q1 < r1 < q2 < ...
    std::strong_ordering operator<=>(const SegmentKind& other) const {
        if (auto c = turn <=> other.turn; c != 0) return c;
        return static_cast<int>(type) <=> static_cast<int>(other.type);
    }
    bool operator==(const SegmentKind&) const = default;

    std::string label() const;  // "sys", "q3", "r3"
};

// Per-token cache payload. Vectors are laid out [layer][head][dim].
// `attn_query` holds the token's post-rotary query projection; it rides along
// with the entry so observation windows can be re-scored against whatever
// keys survive later evictions.
struct TokenKV {
    std::vector<float> key;
    std::vector<float> value;
    std::vector<float> attn_query;
    std::int64_t origin_index = 0;
    std::int32_t token_id = 0;

    bool operator==(const TokenKV&) const = default;
};

struct Segment {
    SegmentKind kind;
    std::vector<TokenKV> tokens;
    int compression_count = 0;
    std::size_t original_len = 0;
    // Origin span of the segment as appended, before any eviction.
    std::int64_t origin_begin = 0;
    std::int64_t origin_end = 0;

    std::size_t size() const { return tokens.size(); }
    double survival() const {
        return original_len == 0 ? 1.0 : static_cast<double>(tokens.size()) / static_cast<double>(original_len);
    }
    bool operator==(const Segment&) const = default;
};

struct PoolShape {
    int layers = 1;
    int heads = 1;
    int head_dim = 1;

    std::size_t kv_width() const {
        return static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads) *
               static_cast<std::size_t>(head_dim);
    }
    bool operator==(const PoolShape&) const = default;
};

// Half-open run of segment indices [first, first + count).
struct SegmentRange {
    std::size_t first = 0;
    std::size_t count = 0;

    std::size_t end() const { return first + count; }

    // Throws RangeNotContiguous unless the indices form one consecutive run.
    static SegmentRange from_indices(std::span<const std::size_t> indices);
};

using CompressionLedger = std::map<SegmentKind, int>;

class CachePool {
public:
    explicit CachePool(PoolShape shape);

    const PoolShape& shape() const { return shape_; }
    std::span<const Segment> segments() const { return segments_; }
    const Segment& segment(std::size_t i) const { return segments_.at(i); }
    std::size_t segment_count() const { return segments_.size(); }
    bool empty() const { return segments_.empty(); }

    std::size_t total_len() const;
    // Sum of original_len over all segments: the size the cache would have
    // without any eviction.
    std::size_t full_len() const;
    std::size_t len_of(SegmentRange range) const;

    // Next origin index in the conversation stream (one past the largest
    // original origin seen so far).
    std::int64_t next_origin() const;

    // The segment kind the ordering invariant allows next.
    SegmentKind next_kind() const;
    // Turn of the most recent query, 0 when none.
    int current_turn() const;

    // Appends one uncompressed segment. Throws OrderViolation / ShapeMismatch /
    // EmptySelection (for an empty token list).
    void append_segment(SegmentKind kind, std::vector<TokenKV> tokens);

    // Keeps only the listed positions (indices into the flattened token list
    // of `range`) and bumps compression_count of every segment in range by
    // one. A segment may not lose all of its tokens.
    void compress_segments(SegmentRange range, std::span<const std::size_t> keep);

    CompressionLedger compression_ledger() const;

    // Visits every token in pool order.
    template <typename Fn>
    void for_each_token(Fn&& fn) const {
        for (const auto& seg : segments_)
            for (const auto& tok : seg.tokens) fn(tok);
    }

    // Equality over segment kinds and token payloads, ignoring ledgers.
    bool same_content(const CachePool& other) const;

    bool operator==(const CachePool&) const = default;

private:
    PoolShape shape_;
    std::vector<Segment> segments_;
};

inline std::size_t total_len(const CachePool& pool) { return pool.total_len(); }
inline CompressionLedger compression_ledger(const CachePool& pool) { return pool.compression_ledger(); }

std::string ledger_string(const CompressionLedger& ledger);  // "sys:3|q1:2|r1:2"

// Snapshot document. Key/value payloads are included only with full_dump.
nlohmann::json snapshot_json(const CachePool& pool, bool full_dump = false);
nlohmann::json to_json(const SegmentKind& kind);

}  // namespace flowkv
