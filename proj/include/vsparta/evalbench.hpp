#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "vsparta/corpus.hpp"
#include "vsparta/error.hpp"
#include "vsparta/index.hpp"

namespace vsparta {

/// A caption used as a query, with the id of the image it describes.
struct EvalQuery {
    std::vector<TermId> tokens;
    std::string ground_truth;
};

inline std::vector<EvalQuery> make_eval_queries(const CaptionedCorpus& corpus, CaptionSplit split)
{
    std::vector<EvalQuery> out;
    for (const auto& c : select_captions(corpus, split)) {
        out.push_back({c.tokens, corpus.images[c.image].image_id});
    }
    return out;
}

/// Hit flag per cutoff: the ground truth is within the first k entries.
inline std::vector<bool> recall_at_k(const RankedList& ranked, std::string_view ground_truth,
                                     std::span<const std::size_t> ks)
{
    std::size_t rank = 0;  // 1-based; 0 = absent
    for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
        if (ranked.entries[i].image_id == ground_truth) {
            rank = i + 1;
            break;
        }
    }
    std::vector<bool> hits;
    hits.reserve(ks.size());
    for (std::size_t k : ks) {
        hits.push_back(rank != 0 && rank <= k);
    }
    return hits;
}

struct EvalResult {
    std::map<std::size_t, double> recall_at;
    std::size_t num_queries = 0;
};

inline EvalResult evaluate(const InvertedIndex& index, std::span<const EvalQuery> queries,
                           std::span<const std::size_t> ks)
{
    if (queries.empty()) {
        throw ConfigError("evaluate: no queries");
    }
    if (ks.empty() || !std::is_sorted(ks.begin(), ks.end()) || ks.front() == 0) {
        throw ConfigError("evaluate: cutoffs must be positive and ascending");
    }
    std::vector<std::size_t> hits(ks.size(), 0);
    for (const auto& q : queries) {
        const auto flags = recall_at_k(query(index, q.tokens, ks.back()), q.ground_truth, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            hits[i] += flags[i] ? 1 : 0;
        }
    }
    EvalResult r;
    r.num_queries = queries.size();
    for (std::size_t i = 0; i < ks.size(); ++i) {
        r.recall_at[ks[i]] = static_cast<double>(hits[i]) / static_cast<double>(queries.size());
    }
    return r;
}

struct BenchOptions {
    std::size_t warmup = 100;
    std::size_t count = 5000;  ///< timed queries (the query set is cycled)
    unsigned threads = 1;
    std::size_t k = 10;
};

struct BenchResult {
    std::size_t index_size = 0;
    TopN top_n;
    double queries_per_second = 0.0;
    double mean_latency_ms = 0.0;
    double p99_latency_ms = 0.0;
    unsigned threads = 1;
};

/// Nearest-rank percentile of an unsorted sample (p in (0, 100]).
inline double percentile_nearest_rank(std::vector<double> sample, double p)
{
    if (sample.empty()) {
        return 0.0;
    }
    std::sort(sample.begin(), sample.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sample.size())));
    rank = std::clamp<std::size_t>(rank, 1, sample.size());
    return sample[rank - 1];
}

/// Times `run_query(tokens)` over the query set. Warmup runs are excluded.
/// Worker w runs timed queries w, w + threads, ...; QPS is total over wall time.
template <typename Fn>
BenchResult bench_queries(std::span<const std::vector<TermId>> queries, const BenchOptions& opt,
                          Fn&& run_query)
{
    if (queries.empty()) {
        throw ConfigError("bench: no queries");
    }
    if (opt.threads == 0 || opt.count == 0) {
        throw ConfigError("bench: threads and count must be positive");
    }
    using Clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < opt.warmup; ++i) {
        run_query(queries[i % queries.size()]);
    }
    std::vector<double> latency_ms(opt.count);
    auto worker = [&](unsigned w) {
        for (std::size_t i = w; i < opt.count; i += opt.threads) {
            const auto t0 = Clock::now();
            run_query(queries[i % queries.size()]);
            const auto t1 = Clock::now();
            latency_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
    };
    const auto start = Clock::now();
    if (opt.threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < opt.threads; ++w) {
            pool.emplace_back(worker, w);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    const double wall_s = std::chrono::duration<double>(Clock::now() - start).count();

    BenchResult r;
    r.threads = opt.threads;
    double total = 0.0;
    for (double v : latency_ms) {
        total += v;
    }
    r.mean_latency_ms = total / static_cast<double>(latency_ms.size());
    r.p99_latency_ms = percentile_nearest_rank(latency_ms, 99.0);
    r.queries_per_second = wall_s > 0 ? static_cast<double>(opt.count) / wall_s : 0.0;
    return r;
}

/// Benchmarks `query` alone (no I/O, no index construction).
inline BenchResult bench(const InvertedIndex& index, std::span<const std::vector<TermId>> queries,
                         const BenchOptions& opt)
{
    auto r = bench_queries(queries, opt, [&](const std::vector<TermId>& q) {
        (void)query(index, q, opt.k);
    });
    r.index_size = index.num_images();
    r.top_n = index.top_n;
    return r;
}

/// Same harness over the exhaustive cached-vector scorer.
inline BenchResult bench_dense(std::span<const TermScoreVector> vectors,
                               std::span<const std::vector<TermId>> queries,
                               const BenchOptions& opt)
{
    auto r = bench_queries(queries, opt, [&](const std::vector<TermId>& q) {
        (void)dense_query(vectors, q, opt.k);
    });
    r.index_size = vectors.size();
    return r;
}

struct SweepRow {
    TopN n;
    double recall_1 = 0.0;
    double recall_5 = 0.0;
    double recall_10 = 0.0;
    double latency_ms = 0.0;
    double qps = 0.0;
};

struct SweepOptions {
    BenchOptions bench;
    std::size_t rounds = 3;  ///< timing rounds; each n keeps its fastest round
};

/// Re-truncates the same cached vectors at every n, then evaluates recall and
/// query latency. Timing rounds are interleaved across n so that drift in
/// machine load affects all settings alike.
inline std::vector<SweepRow> sweep_top_n(std::span<const TermScoreVector> vectors,
                                         std::uint64_t vocab_hash,
                                         std::span<const EvalQuery> queries,
                                         std::span<const TopN> ns, const SweepOptions& opt = {})
{
    const std::vector<std::size_t> ks{1, 5, 10};
    std::vector<InvertedIndex> indexes;
    std::vector<SweepRow> rows;
    std::vector<std::vector<TermId>> bench_set;
    for (const auto& q : queries) {
        bench_set.push_back(q.tokens);
    }
    for (TopN n : ns) {
        indexes.push_back(build_index(vectors, vocab_hash, n));
        const auto e = evaluate(indexes.back(), queries, ks);
        SweepRow row;
        row.n = n;
        row.recall_1 = e.recall_at.at(1);
        row.recall_5 = e.recall_at.at(5);
        row.recall_10 = e.recall_at.at(10);
        row.latency_ms = std::numeric_limits<double>::infinity();
        rows.push_back(row);
    }
    for (std::size_t round = 0; round < std::max<std::size_t>(1, opt.rounds); ++round) {
        for (std::size_t i = 0; i < indexes.size(); ++i) {
            const auto b = bench(indexes[i], bench_set, opt.bench);
            if (b.mean_latency_ms < rows[i].latency_ms) {
                rows[i].latency_ms = b.mean_latency_ms;
                rows[i].qps = b.queries_per_second;
            }
        }
    }
    return rows;
}

/// True when recall@1 never drops between consecutive rows by more than
/// `slack_per_query * num_queries` queries (rounded down, minimum 0).
inline bool recall_non_decreasing(std::span<const SweepRow> rows, std::size_t num_queries,
                                  double slack_per_query)
{
    const double allowed =
        std::floor(slack_per_query * static_cast<double>(num_queries)) / static_cast<double>(num_queries);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].recall_1 < rows[i - 1].recall_1 - allowed - 1e-12) {
            return false;
        }
    }
    return true;
}

namespace detail {

inline std::ofstream open_csv(const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    out << std::setprecision(9);
    return out;
}

}  // namespace detail

inline void write_eval_csv(const EvalResult& r, const std::string& path)
{
    auto out = detail::open_csv(path);
    out << "k,recall\n";
    for (const auto& [k, v] : r.recall_at) {
        out << k << ',' << v << '\n';
    }
}

inline void write_sweep_csv(std::span<const SweepRow> rows, const std::string& path)
{
    auto out = detail::open_csv(path);
    out << "n,r1,r5,r10,latency_ms,qps\n";
    for (const auto& row : rows) {
        out << row.n.to_string() << ',' << row.recall_1 << ',' << row.recall_5 << ','
            << row.recall_10 << ',' << row.latency_ms << ',' << row.qps << '\n';
    }
}

inline void write_bench_csv(std::span<const BenchResult> results, const std::string& path)
{
    auto out = detail::open_csv(path);
    out << "index_size,top_n,qps,mean_ms,p99_ms\n";
    for (const auto& r : results) {
        out << r.index_size << ',' << r.top_n.to_string() << ',' << r.queries_per_second << ','
            << r.mean_latency_ms << ',' << r.p99_latency_ms << '\n';
    }
}

}  // namespace vsparta
