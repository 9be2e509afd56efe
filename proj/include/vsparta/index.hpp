#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vsparta/binary_io.hpp"
#include "vsparta/corpus.hpp"
#include "vsparta/error.hpp"
#include "vsparta/scorer.hpp"

namespace vsparta {

/// Per-image truncation setting: keep the n highest term scores, or all of them.
class TopN {
public:
    constexpr TopN() = default;

    static constexpr TopN all() { return TopN{}; }

    static TopN keep(std::size_t n)
    {
        if (n == 0) {
            throw ConfigError("top-n must be at least 1 (or \"all\")");
        }
        TopN t;
        t.n_ = n;
        return t;
    }

    static TopN parse(std::string_view text)
    {
        if (text == "all") {
            return all();
        }
        std::size_t n = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            throw ConfigError("invalid top-n \"" + std::string(text) + "\"");
        }
        return keep(n);
    }

    [[nodiscard]] constexpr bool is_all() const noexcept { return n_ == 0; }
    /// 0 encodes "all" (the on-disk convention).
    [[nodiscard]] constexpr std::size_t value() const noexcept { return n_; }

    [[nodiscard]] std::string to_string() const { return is_all() ? "all" : std::to_string(n_); }

    constexpr bool operator==(const TopN&) const = default;

private:
    std::size_t n_ = 0;
};

/// Keeps the n entries with the largest phi; ties prefer smaller term ids.
inline TermScoreVector truncate_top_n(const TermScoreVector& v, TopN n)
{
    if (n.is_all() || v.entries.size() <= n.value()) {
        return v;
    }
    TermScoreVector out;
    out.image_id = v.image_id;
    out.entries = v.entries;
    std::partial_sort(out.entries.begin(),
                      out.entries.begin() + static_cast<std::ptrdiff_t>(n.value()),
                      out.entries.end(), [](const TermScore& a, const TermScore& b) {
                          return a.phi != b.phi ? a.phi > b.phi : a.term < b.term;
                      });
    out.entries.resize(n.value());
    std::sort(out.entries.begin(), out.entries.end(),
              [](const TermScore& a, const TermScore& b) { return a.term < b.term; });
    return out;
}

struct Posting {
    std::uint32_t image = 0;  ///< image ordinal
    float weight = 0.0F;      ///< ln(phi + 1)

    bool operator==(const Posting&) const = default;
};

/// term id -> postings sorted by image ordinal.
struct InvertedIndex {
    std::uint64_t vocab_hash = 0;
    TopN top_n;
    std::vector<std::string> image_ids;
    std::vector<std::vector<Posting>> postings;  ///< indexed by term id

    [[nodiscard]] std::size_t num_images() const noexcept { return image_ids.size(); }

    [[nodiscard]] std::span<const Posting> postings_for(TermId term) const
    {
        if (term >= postings.size()) {
            return {};
        }
        return postings[term];
    }

    [[nodiscard]] std::size_t total_postings() const
    {
        std::size_t n = 0;
        for (const auto& p : postings) {
            n += p.size();
        }
        return n;
    }

    [[nodiscard]] std::optional<std::uint32_t> ordinal_of(std::string_view image_id) const
    {
        auto it = std::find(image_ids.begin(), image_ids.end(), image_id);
        if (it == image_ids.end()) {
            return std::nullopt;
        }
        return static_cast<std::uint32_t>(it - image_ids.begin());
    }

    bool operator==(const InvertedIndex&) const = default;
};

/// Throws VocabMismatchError unless the index was built over `vocab`.
inline void require_vocab(const InvertedIndex& index, const Vocabulary& vocab)
{
    if (index.vocab_hash != vocab.hash()) {
        throw VocabMismatchError("index vocabulary hash does not match the tokenizer vocabulary");
    }
}

namespace detail {

inline void check_vector(const TermScoreVector& v)
{
    bool with_rows = false;
    bool without_rows = false;
    for (std::size_t i = 0; i < v.entries.size(); ++i) {
        const auto& e = v.entries[i];
        if (!(e.phi > 0.0F) || !std::isfinite(e.phi)) {
            throw CorruptDataError("term scores of \"" + v.image_id + "\": phi must be positive");
        }
        if (i > 0 && v.entries[i - 1].term >= e.term) {
            throw CorruptDataError("term scores of \"" + v.image_id
                                   + "\": term ids not strictly increasing");
        }
        (e.attended_row == kNoRow ? without_rows : with_rows) = true;
    }
    if (with_rows && without_rows) {
        throw CorruptDataError("term scores of \"" + v.image_id
                               + "\": attended rows recorded for only some entries");
    }
}

}  // namespace detail

/// Truncates each vector, transposes image -> term maps into postings and
/// stores ln(phi + 1). Image ordinals follow the input order.
inline InvertedIndex build_index(std::span<const TermScoreVector> vectors, std::uint64_t vocab_hash,
                                 TopN top_n)
{
    InvertedIndex index;
    index.vocab_hash = vocab_hash;
    index.top_n = top_n;
    std::unordered_set<std::string> seen;
    for (const auto& v : vectors) {
        if (!seen.insert(v.image_id).second) {
            throw DuplicateError("duplicate image id \"" + v.image_id + "\"");
        }
        detail::check_vector(v);
    }
    for (std::size_t ord = 0; ord < vectors.size(); ++ord) {
        index.image_ids.push_back(vectors[ord].image_id);
        for (const auto& e : truncate_top_n(vectors[ord], top_n).entries) {
            if (e.term >= index.postings.size()) {
                index.postings.resize(static_cast<std::size_t>(e.term) + 1);
            }
            index.postings[e.term].push_back(
                {static_cast<std::uint32_t>(ord), match_weight(e.phi)});
        }
    }
    return index;
}

struct RankedEntry {
    std::string image_id;
    std::uint32_t ordinal = 0;
    float score = 0.0F;

    bool operator==(const RankedEntry&) const = default;
};

/// Results by descending score, ties by ascending ordinal; only positive scores.
struct RankedList {
    std::vector<RankedEntry> entries;
    std::size_t k = 0;

    bool operator==(const RankedList&) const = default;
};

struct QueryStats {
    std::size_t accumulator_updates = 0;
};

namespace detail {

struct Candidate {
    float score;
    std::uint32_t ordinal;
};

/// Strict "ranks before" order.
inline bool ranks_before(const Candidate& a, const Candidate& b)
{
    return a.score != b.score ? a.score > b.score : a.ordinal < b.ordinal;
}

/// Bounded selection of the k best candidates, returned in rank order.
class TopKHeap {
public:
    explicit TopKHeap(std::size_t k)
        : k_(k)
    {
        heap_.reserve(k);
    }

    void offer(Candidate c)
    {
        // Max-heap under ranks_before keeps the worst kept candidate on top.
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
        } else if (ranks_before(c, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
            heap_.back() = c;
            std::push_heap(heap_.begin(), heap_.end(), ranks_before);
        }
    }

    std::vector<Candidate> take_sorted()
    {
        std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::vector<Candidate> heap_;
};

struct Accumulator {
    std::vector<float> scores;
    std::vector<std::uint32_t> touched;
};

inline Accumulator& thread_accumulator(std::size_t num_images)
{
    thread_local Accumulator acc;
    if (acc.scores.size() < num_images) {
        acc.scores.resize(num_images, 0.0F);
    }
    return acc;
}

inline RankedList to_ranked_list(std::vector<Candidate> best,
                                 const std::vector<std::string>& image_ids, std::size_t k)
{
    RankedList out;
    out.k = k;
    out.entries.reserve(best.size());
    for (const auto& c : best) {
        out.entries.push_back({image_ids[c.ordinal], c.ordinal, c.score});
    }
    return out;
}

}  // namespace detail

/// Term-at-a-time evaluation: each token occurrence adds its stored weight to
/// every image in its postings; the k best accumulators are returned.
inline RankedList query(const InvertedIndex& index, std::span<const TermId> query_tokens,
                        std::size_t k, QueryStats* stats = nullptr)
{
    if (k < 1) {
        throw ConfigError("k must be at least 1");
    }
    auto& acc = detail::thread_accumulator(index.num_images());
    std::size_t updates = 0;
    for (TermId t : query_tokens) {
        const auto list = index.postings_for(t);
        for (const auto& p : list) {
            float& slot = acc.scores[p.image];
            if (slot == 0.0F) {
                acc.touched.push_back(p.image);
            }
            slot += p.weight;
        }
        updates += list.size();
    }
    detail::TopKHeap heap(k);
    for (std::uint32_t ord : acc.touched) {
        heap.offer({acc.scores[ord], ord});
        acc.scores[ord] = 0.0F;
    }
    acc.touched.clear();
    if (stats != nullptr) {
        stats->accumulator_updates = updates;
    }
    return detail::to_ranked_list(heap.take_sorted(), index.image_ids, k);
}

/// Exhaustive baseline over cached vectors: for every image, sum ln(phi + 1)
/// over the query tokens by direct lookup.
inline RankedList dense_query(std::span<const TermScoreVector> vectors,
                              std::span<const TermId> query_tokens, std::size_t k)
{
    if (k < 1) {
        throw ConfigError("k must be at least 1");
    }
    detail::TopKHeap heap(k);
    for (std::size_t ord = 0; ord < vectors.size(); ++ord) {
        float score = 0.0F;
        for (TermId t : query_tokens) {
            score += match_weight(vectors[ord].phi(t));
        }
        if (score > 0.0F) {
            heap.offer({score, static_cast<std::uint32_t>(ord)});
        }
    }
    auto best = heap.take_sorted();
    RankedList out;
    out.k = k;
    for (const auto& c : best) {
        out.entries.push_back({vectors[c.ordinal].image_id, c.ordinal, c.score});
    }
    return out;
}

struct TermExplanation {
    TermId term = 0;
    float weight = 0.0F;                        ///< ln(phi + 1); 0 when the term does not match
    std::optional<std::uint32_t> attended_row;  ///< region row, or n + label position
};

/// Which image fragment produced each query token's score.
inline std::vector<TermExplanation> explain(std::span<const TermScoreVector> vectors,
                                            std::span<const TermId> query_tokens,
                                            std::string_view image_id)
{
    auto it = std::find_if(vectors.begin(), vectors.end(),
                           [&](const TermScoreVector& v) { return v.image_id == image_id; });
    if (it == vectors.end()) {
        throw UnavailableError("no term scores for image \"" + std::string(image_id) + "\"");
    }
    if (!it->entries.empty() && !it->has_attention()) {
        throw UnavailableError("attended regions were not recorded for \"" + std::string(image_id)
                               + "\" (encode with attention)");
    }
    std::vector<TermExplanation> out;
    for (TermId t : query_tokens) {
        TermExplanation e;
        e.term = t;
        if (const auto* s = it->find(t)) {
            e.weight = match_weight(s->phi);
            e.attended_row = s->attended_row;
        }
        out.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Index file: "VSPI" | version u32 | vocab_hash u64 | top_n u32 (0 = all)
//   | num_images u32 | image ids (u16 length + bytes) | num_terms_present u32
//   | per term (ascending): term u32, length u32, (ordinal u32, weight f32) x length
//   | checksum u64
//
// Term-score file: "VSPV" then, until end of file, per image: id (u16 length +
//   bytes), entry count u32, (term u32, phi f32, attended row u32 or 0xFFFFFFFF).
//   The final 8 bytes are the checksum, so "end of file" means the footer.

inline constexpr std::uint32_t kIndexVersion = 1;

inline Bytes serialize_index(const InvertedIndex& index)
{
    ByteWriter w;
    w.magic("VSPI");
    w.u32(kIndexVersion);
    w.u64(index.vocab_hash);
    w.u32(static_cast<std::uint32_t>(index.top_n.value()));
    w.u32(static_cast<std::uint32_t>(index.image_ids.size()));
    for (const auto& id : index.image_ids) {
        w.str16(id);
    }
    std::uint32_t present = 0;
    for (const auto& p : index.postings) {
        present += p.empty() ? 0 : 1;
    }
    w.u32(present);
    for (std::size_t t = 0; t < index.postings.size(); ++t) {
        const auto& list = index.postings[t];
        if (list.empty()) {
            continue;
        }
        w.u32(static_cast<std::uint32_t>(t));
        w.u32(static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            w.u32(p.image);
            w.f32(p.weight);
        }
    }
    return seal(std::move(w).bytes());
}

inline InvertedIndex parse_index(const Bytes& bytes)
{
    ByteReader r(bytes, sealed_body_size(bytes));
    r.expect_magic("VSPI");
    const auto version = r.u32();
    if (version != kIndexVersion) {
        throw FormatError("unsupported index version " + std::to_string(version));
    }
    InvertedIndex index;
    index.vocab_hash = r.u64();
    const std::uint32_t top_n = r.u32();
    index.top_n = top_n == 0 ? TopN::all() : TopN::keep(top_n);
    const std::uint32_t num_images = r.u32();
    r.need_items(num_images, 2);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < num_images; ++i) {
        index.image_ids.push_back(r.str16());
        if (!seen.insert(index.image_ids.back()).second) {
            throw CorruptDataError("index: duplicate image id \"" + index.image_ids.back() + "\"");
        }
    }
    const std::uint32_t present = r.u32();
    r.need_items(present, 8);
    std::vector<std::uint32_t> per_image(num_images, 0);
    std::int64_t previous_term = -1;
    std::vector<std::pair<std::uint32_t, std::vector<Posting>>> sparse;
    sparse.reserve(present);
    for (std::uint32_t i = 0; i < present; ++i) {
        const std::uint32_t term = r.u32();
        if (static_cast<std::int64_t>(term) <= previous_term) {
            throw CorruptDataError("index: term ids not strictly increasing");
        }
        previous_term = term;
        const std::uint32_t len = r.u32();
        if (len == 0) {
            throw CorruptDataError("index: empty postings list for term " + std::to_string(term));
        }
        r.need_items(len, 8);
        // Kept sparse until the checksum passes: a corrupt term id must not
        // size the dense table.
        sparse.emplace_back(term, std::vector<Posting>{});
        auto& list = sparse.back().second;
        list.reserve(len);
        for (std::uint32_t j = 0; j < len; ++j) {
            Posting p;
            p.image = r.u32();
            p.weight = r.f32();
            if (p.image >= num_images) {
                throw CorruptDataError("index: posting ordinal out of range");
            }
            if (!list.empty() && list.back().image >= p.image) {
                throw CorruptDataError("index: unsorted postings for term " + std::to_string(term));
            }
            if (!(p.weight > 0.0F) || !std::isfinite(p.weight)) {
                throw CorruptDataError("index: non-positive weight for term " + std::to_string(term));
            }
            ++per_image[p.image];
            list.push_back(p);
        }
    }
    if (!r.at_end()) {
        throw CorruptDataError("index: trailing bytes");
    }
    if (!index.top_n.is_all()) {
        for (std::uint32_t i = 0; i < num_images; ++i) {
            if (per_image[i] > index.top_n.value()) {
                throw CorruptDataError("index: image \"" + index.image_ids[i]
                                       + "\" exceeds the top-n limit");
            }
        }
    }
    verify_seal(bytes);
    if (!sparse.empty()) {
        index.postings.resize(static_cast<std::size_t>(sparse.back().first) + 1);
    }
    for (auto& [term, list] : sparse) {
        index.postings[term] = std::move(list);
    }
    return index;
}

inline void save_index(const InvertedIndex& index, const std::string& path)
{
    write_file(path, serialize_index(index));
}

inline InvertedIndex load_index(const std::string& path)
{
    return parse_index(read_file(path));
}

inline Bytes serialize_term_scores(std::span<const TermScoreVector> vectors)
{
    ByteWriter w;
    w.magic("VSPV");
    for (const auto& v : vectors) {
        w.str16(v.image_id);
        w.u32(static_cast<std::uint32_t>(v.entries.size()));
        for (const auto& e : v.entries) {
            w.u32(e.term);
            w.f32(e.phi);
            w.u32(e.attended_row);
        }
    }
    return seal(std::move(w).bytes());
}

inline std::vector<TermScoreVector> parse_term_scores(const Bytes& bytes)
{
    ByteReader r(bytes, sealed_body_size(bytes));
    r.expect_magic("VSPV");
    std::vector<TermScoreVector> out;
    std::unordered_set<std::string> seen;
    while (!r.at_end()) {
        TermScoreVector v;
        v.image_id = r.str16();
        if (!seen.insert(v.image_id).second) {
            throw CorruptDataError("term scores: duplicate image id \"" + v.image_id + "\"");
        }
        const std::uint32_t n = r.u32();
        r.need_items(n, 12);
        v.entries.resize(n);
        for (auto& e : v.entries) {
            e.term = r.u32();
            e.phi = r.f32();
            e.attended_row = r.u32();
        }
        detail::check_vector(v);
        out.push_back(std::move(v));
    }
    verify_seal(bytes);
    return out;
}

inline void save_term_scores(std::span<const TermScoreVector> vectors, const std::string& path)
{
    write_file(path, serialize_term_scores(vectors));
}

inline std::vector<TermScoreVector> load_term_scores(const std::string& path)
{
    return parse_term_scores(read_file(path));
}

}  // namespace vsparta
