#include "flowkv/cache.hpp"

#include <algorithm>
#include <numeric>

#include "flowkv/error.hpp"

namespace flowkv {

std::string SegmentKind::label() const {
    switch (type) {
        case SegmentType::SystemPrompt: return "sys";
        case SegmentType::Query: return "q" + std::to_string(turn);
        case SegmentType::Response: return "r" + std::to_string(turn);
    }
    return "?";
}

SegmentRange SegmentRange::from_indices(std::span<const std::size_t> indices) {
    if (indices.empty()) throw Error(ErrorKind::RangeNotContiguous, "empty segment range");
    for (std::size_t i = 1; i < indices.size(); ++i) {
        if (indices[i] != indices[i - 1] + 1)
            throw Error(ErrorKind::RangeNotContiguous, "segment indices must be consecutive and ascending");
    }
    return {indices.front(), indices.size()};
}

CachePool::CachePool(PoolShape shape) : shape_(shape) {
    if (shape.layers <= 0 || shape.heads <= 0 || shape.head_dim <= 0)
        throw Error(ErrorKind::ShapeMismatch, "pool dimensions must be positive");
}

std::size_t CachePool::total_len() const {
    std::size_t n = 0;
    for (const auto& seg : segments_) n += seg.tokens.size();
    return n;
}

std::size_t CachePool::full_len() const {
    std::size_t n = 0;
    for (const auto& seg : segments_) n += seg.original_len;
    return n;
}

std::size_t CachePool::len_of(SegmentRange range) const {
    if (range.end() > segments_.size()) throw Error(ErrorKind::IndexOutOfRange, "segment range past end of pool");
    std::size_t n = 0;
    for (std::size_t i = range.first; i < range.end(); ++i) n += segments_[i].tokens.size();
    return n;
}

std::int64_t CachePool::next_origin() const {
    if (segments_.empty()) return 0;
    const auto& last = segments_.back();
    return last.origin_end;
}

SegmentKind CachePool::next_kind() const {
    if (segments_.empty()) return SegmentKind::system();
    const SegmentKind last = segments_.back().kind;
    switch (last.type) {
        case SegmentType::SystemPrompt: return SegmentKind::query(1);
        case SegmentType::Query: return SegmentKind::response(last.turn);
        case SegmentType::Response: return SegmentKind::query(last.turn + 1);
    }
    return SegmentKind::system();
}

int CachePool::current_turn() const {
    return segments_.empty() ? 0 : segments_.back().kind.turn;
}

void CachePool::append_segment(SegmentKind kind, std::vector<TokenKV> tokens) {
    if (tokens.empty()) throw Error(ErrorKind::EmptySelection, "cannot append an empty segment");
    const SegmentKind expected = next_kind();
    if (kind != expected)
        throw Error(ErrorKind::OrderViolation, "expected " + expected.label() + ", got " + kind.label());

    const std::size_t width = shape_.kv_width();
    std::int64_t prev = segments_.empty() ? -1 : next_origin() - 1;
    for (const auto& tok : tokens) {
        if (tok.key.size() != width || tok.value.size() != width ||
            (!tok.attn_query.empty() && tok.attn_query.size() != width))
            throw Error(ErrorKind::ShapeMismatch, "token vectors must have layers*heads*head_dim entries");
        if (tok.origin_index <= prev)
            throw Error(ErrorKind::OrderViolation, "origin_index must be strictly increasing across the pool");
        prev = tok.origin_index;
    }

    Segment seg;
    seg.kind = kind;
    seg.original_len = tokens.size();
    seg.origin_begin = tokens.front().origin_index;
    seg.origin_end = tokens.back().origin_index + 1;
    seg.tokens = std::move(tokens);
    segments_.push_back(std::move(seg));
}

void CachePool::compress_segments(SegmentRange range, std::span<const std::size_t> keep) {
    if (range.count == 0) throw Error(ErrorKind::RangeNotContiguous, "empty segment range");
    if (range.end() > segments_.size()) throw Error(ErrorKind::IndexOutOfRange, "segment range past end of pool");
    if (keep.empty()) throw Error(ErrorKind::EmptySelection, "keep set is empty");

    const std::size_t range_len = len_of(range);
    std::vector<std::size_t> sorted(keep.begin(), keep.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.back() >= range_len)
        throw Error(ErrorKind::IndexOutOfRange, "keep index " + std::to_string(sorted.back()) +
                                                    " outside range of length " + std::to_string(range_len));

    // Validate before mutating so a failed call leaves the pool untouched.
    std::vector<std::vector<TokenKV>> rebuilt(range.count);
    auto it = sorted.begin();
    std::size_t offset = 0;
    for (std::size_t s = 0; s < range.count; ++s) {
        const Segment& seg = segments_[range.first + s];
        const std::size_t seg_end = offset + seg.tokens.size();
        auto& out = rebuilt[s];
        for (; it != sorted.end() && *it < seg_end; ++it) out.push_back(seg.tokens[*it - offset]);
        if (out.empty())
            throw Error(ErrorKind::EmptySelection, "segment " + seg.kind.label() + " would be compressed to nothing");
        offset = seg_end;
    }

    for (std::size_t s = 0; s < range.count; ++s) {
        Segment& seg = segments_[range.first + s];
        seg.tokens = std::move(rebuilt[s]);
        ++seg.compression_count;
    }
}

CompressionLedger CachePool::compression_ledger() const {
    CompressionLedger ledger;
    for (const auto& seg : segments_) ledger[seg.kind] = seg.compression_count;
    return ledger;
}

bool CachePool::same_content(const CachePool& other) const {
    if (shape_ != other.shape_ || segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& a = segments_[i];
        const auto& b = other.segments_[i];
        if (a.kind != b.kind || a.original_len != b.original_len || a.tokens != b.tokens) return false;
    }
    return true;
}

std::string ledger_string(const CompressionLedger& ledger) {
    std::string out;
    for (const auto& [kind, count] : ledger) {
        if (!out.empty()) out += '|';
        out += kind.label() + ':' + std::to_string(count);
    }
    return out;
}

nlohmann::json to_json(const SegmentKind& kind) {
    switch (kind.type) {
        case SegmentType::SystemPrompt: return "system";
        case SegmentType::Query: return "query";
        case SegmentType::Response: return "response";
    }
    return "unknown";
}

nlohmann::json snapshot_json(const CachePool& pool, bool full_dump) {
    nlohmann::json doc;
    doc["layers"] = pool.shape().layers;
    doc["heads"] = pool.shape().heads;
    doc["head_dim"] = pool.shape().head_dim;
    auto segments = nlohmann::json::array();
    for (const auto& seg : pool.segments()) {
        nlohmann::json s;
        s["kind"] = to_json(seg.kind);
        s["turn"] = seg.kind.turn;
        s["compression_count"] = seg.compression_count;
        s["original_len"] = seg.original_len;
        auto tokens = nlohmann::json::array();
        for (const auto& tok : seg.tokens) {
            nlohmann::json t;
            t["origin_index"] = tok.origin_index;
            t["token_id"] = tok.token_id;
            if (full_dump) {
                t["key"] = tok.key;
                t["value"] = tok.value;
            }
            tokens.push_back(std::move(t));
        }
        s["tokens"] = std::move(tokens);
        segments.push_back(std::move(s));
    }
    doc["segments"] = std::move(segments);
    return doc;
}

}  // namespace flowkv
