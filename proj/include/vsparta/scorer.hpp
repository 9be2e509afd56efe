#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "vsparta/corpus.hpp"
#include "vsparta/encoder.hpp"
#include "vsparta/numerics.hpp"

namespace vsparta {

/// Sentinel for "no attended row recorded".
inline constexpr std::uint32_t kNoRow = 0xFFFFFFFFU;

template <typename T>
struct TermMatch {
    T value{0};
    std::size_t row = 0;
};

/// Max dot product of a term embedding over the rows of H; ties go to the
/// smallest row index.
template <typename T>
TermMatch<T> term_match(std::span<const T> term_embedding, const Matrix<T>& h)
{
    if (h.rows() == 0) {
        throw DimensionError("term_match: image representation has no rows");
    }
    if (term_embedding.size() != h.cols()) {
        throw DimensionError("term_match: embedding width " + std::to_string(term_embedding.size())
                             + " vs representation width " + std::to_string(h.cols()));
    }
    TermMatch<T> best{dot(term_embedding, h.row(0)), 0};
    for (std::size_t r = 1; r < h.rows(); ++r) {
        const T y = dot(term_embedding, h.row(r));
        if (y > best.value) {
            best = {y, r};
        }
    }
    return best;
}

template <typename T>
TermMatch<T> term_match(std::span<const T> term_embedding, const ImageRepresentation<T>& h)
{
    return term_match(term_embedding, h.matrix);
}

/// phi = relu(y + b).
template <typename T>
constexpr T sparsify(T y, T scoring_bias) noexcept
{
    return relu(y + scoring_bias);
}

/// Per-token contribution ln(phi + 1). Index weights and dense scoring both
/// go through this function so the two paths agree bit for bit.
template <typename T>
T match_weight(T phi)
{
    return std::log1p(phi);
}

/// f(q, v) = sum over token occurrences of ln(phi + 1).
template <typename T>
T score_pair(std::span<const TermId> query_tokens, const ImageRepresentation<T>& h,
             const ModelParams<T>& params)
{
    if (query_tokens.empty()) {
        throw ConfigError("score_pair: query has no tokens");
    }
    const T bias = params.scoring_bias.values[0];
    T total{0};
    for (TermId t : query_tokens) {
        if (t >= params.vocab_size()) {
            throw VocabError("query term id " + std::to_string(t) + " out of range");
        }
        if (h.rows() == 0) {
            continue;
        }
        const auto m = term_match<T>(params.token_embeddings.row(t), h.matrix);
        total += match_weight(sparsify(m.value, bias));
    }
    return total;
}

struct TermScore {
    TermId term = 0;
    float phi = 0.0F;
    std::uint32_t attended_row = kNoRow;

    bool operator==(const TermScore&) const = default;
};

/// Cached per-image term scores; entries sorted by term id, all phi > 0.
struct TermScoreVector {
    std::string image_id;
    std::vector<TermScore> entries;

    /// Attended rows are recorded for all entries or for none.
    [[nodiscard]] bool has_attention() const noexcept
    {
        return !entries.empty() && entries.front().attended_row != kNoRow;
    }

    [[nodiscard]] const TermScore* find(TermId term) const
    {
        auto it = std::lower_bound(entries.begin(), entries.end(), term,
                                   [](const TermScore& e, TermId t) { return e.term < t; });
        if (it == entries.end() || it->term != term) {
            return nullptr;
        }
        return &*it;
    }

    [[nodiscard]] float phi(TermId term) const
    {
        const auto* e = find(term);
        return e == nullptr ? 0.0F : e->phi;
    }

    bool operator==(const TermScoreVector&) const = default;
};

/// phi_t for every vocabulary term against an already-encoded image.
template <typename T>
TermScoreVector term_scores_from_representation(const std::string& image_id,
                                                const ImageRepresentation<T>& h,
                                                const ModelParams<T>& params, bool with_attention)
{
    TermScoreVector out;
    out.image_id = image_id;
    if (h.rows() == 0) {
        return out;
    }
    const T bias = params.scoring_bias.values[0];
    for (std::size_t t = 0; t < params.vocab_size(); ++t) {
        const auto m = term_match<T>(params.token_embeddings.row(t), h.matrix);
        const T phi = sparsify(m.value, bias);
        if (phi > T{0}) {
            out.entries.push_back({static_cast<TermId>(t), static_cast<float>(phi),
                                   with_attention ? static_cast<std::uint32_t>(m.row) : kNoRow});
        }
    }
    return out;
}

template <typename T>
TermScoreVector compute_term_scores(const ImageInput& image, const ModelParams<T>& params,
                                    const EncoderConfig& cfg, bool with_attention)
{
    return term_scores_from_representation(image.image_id, encode_image(image, params, cfg),
                                           params, with_attention);
}

/// Term scores for every image of a corpus. Work is split into contiguous
/// chunks; each image's output is independent of the thread count.
template <typename T>
std::vector<TermScoreVector> compute_corpus_term_scores(std::span<const ImageInput> images,
                                                        const ModelParams<T>& params,
                                                        const EncoderConfig& cfg,
                                                        bool with_attention,
                                                        unsigned threads = 0)
{
    if (params.vocab_size() == 0) {
        throw VocabError("model has an empty vocabulary");
    }
    std::vector<TermScoreVector> out(images.size());
    if (threads == 0) {
        threads = std::max(1U, std::thread::hardware_concurrency());
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, images.size())));
    std::vector<std::exception_ptr> failures(threads);
    auto work = [&](unsigned worker, std::size_t begin, std::size_t end) {
        try {
            for (std::size_t i = begin; i < end; ++i) {
                out[i] = compute_term_scores(images[i], params, cfg, with_attention);
            }
        } catch (...) {
            failures[worker] = std::current_exception();
        }
    };
    const std::size_t chunk = (images.size() + threads - 1) / threads;
    if (threads <= 1) {
        work(0, 0, images.size());
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(images.size(), begin + chunk);
            if (begin < end) {
                pool.emplace_back(work, w, begin, end);
            }
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    for (auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    return out;
}

}  // namespace vsparta
