#pragma once

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vsparta/corpus.hpp"
#include "vsparta/encoder.hpp"
#include "vsparta/error.hpp"
#include "vsparta/evalbench.hpp"
#include "vsparta/index.hpp"
#include "vsparta/scorer.hpp"
#include "vsparta/trainer.hpp"

namespace vsparta::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kDataError = 2,
    kNumericalError = 3,
};

/// Vectors and index files carry only a vocabulary hash; the token list
/// travels next to them as "<file>.vocab", one token per line.
inline std::string vocab_sidecar(const std::string& path)
{
    return path + ".vocab";
}

inline void write_vocab_file(const Vocabulary& vocab, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    for (const auto& t : vocab.tokens()) {
        out << t << '\n';
    }
}

inline Vocabulary read_vocab_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open vocabulary " + path);
    }
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            tokens.push_back(line);
        }
    }
    return Vocabulary(std::move(tokens));
}

inline CountRange parse_range(const std::string& text)
{
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("range \"" + text + "\" must look like MIN:MAX");
    }
    auto parse = [&](std::string_view part) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || ptr != part.data() + part.size()) {
            throw ConfigError("range \"" + text + "\" must look like MIN:MAX");
        }
        return v;
    };
    const std::string_view s(text);
    return {parse(s.substr(0, colon)), parse(s.substr(colon + 1))};
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*convert)(const std::string&))
{
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(convert(item));
        }
    }
    if (out.empty()) {
        throw ConfigError("empty list \"" + text + "\"");
    }
    return out;
}

inline std::size_t to_count(const std::string& s)
{
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError("expected a non-negative integer, got \"" + s + "\"");
    }
    return v;
}

inline TopN to_top_n(const std::string& s)
{
    return TopN::parse(s);
}

inline double to_real(const std::string& s)
{
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) {
        throw ConfigError("expected a number, got \"" + s + "\"");
    }
    return v;
}

inline bool to_flag(const std::string& s)
{
    if (s == "1" || s == "true" || s == "on") {
        return true;
    }
    if (s == "0" || s == "false" || s == "off") {
        return false;
    }
    throw ConfigError("expected a boolean, got \"" + s + "\"");
}

/// Applies one "key=value" override to the training/encoder configuration.
inline void apply_override(const std::string& assignment, TrainConfig& tc, EncoderConfig& ec)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override \"" + assignment + "\" must look like key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    static const std::map<std::string, void (*)(const std::string&, TrainConfig&, EncoderConfig&)>
        setters{
            {"d_hidden", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.d_hidden = to_count(v); }},
            {"num_layers", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.num_layers = to_count(v); }},
            {"num_heads", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.num_heads = to_count(v); }},
            {"max_positions", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.max_positions = to_count(v); }},
            {"use_visual", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.use_visual = to_flag(v); }},
            {"use_labels", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.use_labels = to_flag(v); }},
            {"use_attributes", [](const std::string& v, TrainConfig&, EncoderConfig& e) { e.use_attributes = to_flag(v); }},
            {"batch_size", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.batch_size = to_count(v); }},
            {"epochs", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.epochs = to_count(v); }},
            {"learning_rate", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.learning_rate = to_real(v); }},
            {"adam_beta1", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.adam_beta1 = to_real(v); }},
            {"adam_beta2", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.adam_beta2 = to_real(v); }},
            {"adam_epsilon", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.adam_epsilon = to_real(v); }},
            {"seed", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.seed = to_count(v); }},
            {"wide_precision", [](const std::string& v, TrainConfig& t, EncoderConfig&) { t.wide_precision = to_flag(v); }},
        };
    auto it = setters.find(key);
    if (it == setters.end()) {
        throw ConfigError("unknown setting \"" + key + "\"");
    }
    it->second(value, tc, ec);
}

inline void require_file(const std::string& flag, const std::string& path)
{
    if (path.empty()) {
        throw ConfigError(flag + " is required");
    }
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
        throw FormatError("cannot open " + path + " (" + flag + ")");
    }
}

inline void require_output(const std::string& flag, const std::string& path)
{
    if (path.empty()) {
        throw ConfigError(flag + " is required");
    }
}

inline std::vector<TermId> tokenize_for_search(const Vocabulary& vocab, const std::string& text,
                                               std::ostream& err)
{
    auto q = tokenize_query(vocab, text);
    for (const auto& w : q.dropped) {
        err << "warning: dropping out-of-vocabulary token \"" << w << "\"\n";
    }
    return q.ids;
}

/// Entry point shared by the vsparta binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr)
{
    CLI::App app{"Sparse cross-modal text-to-image retrieval"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
    SyntheticConfig sc;
    std::string gen_regions = "3:6";
    std::string gen_labels = "2:6";
    std::string gen_out;
    gen->add_option("--seed", sc.seed);
    gen->add_option("--images", sc.num_images);
    gen->add_option("--vocab", sc.vocab_size);
    gen->add_option("--d-rcnn", sc.d_rcnn);
    gen->add_option("--regions", gen_regions, "MIN:MAX regions per image");
    gen->add_option("--labels", gen_labels, "MIN:MAX label tokens per image");
    gen->add_option("--captions-per-image", sc.captions_per_image);
    gen->add_option("--out", gen_out);

    // train
    auto* tr = app.add_subcommand("train", "train a model on a corpus");
    TrainConfig tc;
    EncoderConfig ec;
    std::string tr_corpus;
    std::string tr_model;
    std::string tr_loss;
    std::vector<std::string> overrides;
    bool no_visual = false;
    bool no_labels = false;
    bool no_attributes = false;
    tr->add_option("--corpus", tr_corpus);
    tr->add_option("--epochs", tc.epochs);
    tr->add_option("--batch-size", tc.batch_size);
    tr->add_option("--lr", tc.learning_rate);
    tr->add_option("--d-h", ec.d_hidden);
    tr->add_option("--layers", ec.num_layers);
    tr->add_option("--heads", ec.num_heads);
    tr->add_option("--seed", tc.seed);
    tr->add_option("--out-model", tr_model);
    tr->add_option("--loss-csv", tr_loss);
    tr->add_option("--set", overrides, "key=value configuration override (repeatable)");
    tr->add_flag("--wide", tc.wide_precision, "optimize in double precision");
    auto* nv = tr->add_flag("--no-visual", no_visual, "drop region features");
    auto* nl = tr->add_flag("--no-labels", no_labels, "drop detector labels");
    auto* na = tr->add_flag("--no-attributes", no_attributes, "drop attribute label tokens");
    nv->excludes(nl);
    nv->excludes(na);
    nl->excludes(na);

    // encode
    auto* en = app.add_subcommand("encode", "cache term scores for every image");
    std::string en_corpus;
    std::string en_model;
    std::string en_out;
    bool en_attention = false;
    unsigned en_threads = 0;
    en->add_option("--corpus", en_corpus);
    en->add_option("--model", en_model);
    en->add_option("--out-vectors", en_out);
    en->add_flag("--with-attention", en_attention);
    en->add_option("--threads", en_threads);

    // index
    auto* ix = app.add_subcommand("index", "build an inverted index from term scores");
    std::string ix_vectors;
    std::string ix_top_n = "all";
    std::string ix_out;
    std::string ix_vocab;
    ix->add_option("--vectors", ix_vectors);
    ix->add_option("--top-n", ix_top_n, "N or all");
    ix->add_option("--out-index", ix_out);
    ix->add_option("--vocab", ix_vocab, "vocabulary file (default: <vectors>.vocab)");

    // search
    auto* se = app.add_subcommand("search", "rank images for a text query");
    std::string se_index;
    std::string se_query;
    std::string se_vocab;
    std::size_t se_k = 10;
    se->add_option("--index", se_index);
    se->add_option("--query", se_query);
    se->add_option("--k", se_k);
    se->add_option("--vocab", se_vocab, "vocabulary file (default: <index>.vocab)");

    // eval
    auto* ev = app.add_subcommand("eval", "Recall@k of caption queries");
    std::string ev_index;
    std::string ev_corpus;
    std::string ev_split = "heldout";
    std::string ev_ks = "1,5,10";
    std::string ev_csv;
    ev->add_option("--index", ev_index);
    ev->add_option("--corpus", ev_corpus);
    ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "heldout", "all"}));
    ev->add_option("--ks", ev_ks);
    ev->add_option("--out-csv", ev_csv);

    // bench
    auto* be = app.add_subcommand("bench", "measure query throughput and latency");
    std::string be_index;
    std::string be_queries;
    std::string be_corpus;
    std::string be_csv;
    std::string be_vocab;
    BenchOptions bo;
    be->add_option("--index", be_index);
    auto* bq = be->add_option("--queries-file", be_queries, "one free-text query per line");
    auto* bc = be->add_option("--corpus", be_corpus, "use the corpus captions as queries");
    bq->excludes(bc);
    be->add_option("--warmup", bo.warmup);
    be->add_option("--count", bo.count);
    be->add_option("--threads", bo.threads);
    be->add_option("--k", bo.k);
    be->add_option("--out-csv", be_csv);
    be->add_option("--vocab", be_vocab, "vocabulary file (default: <index>.vocab)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "top-n speed/accuracy sweep");
    std::string sw_vectors;
    std::string sw_corpus;
    std::string sw_ns = "50,100,500,all";
    std::string sw_csv;
    std::string sw_split = "heldout";
    SweepOptions so;
    sw->add_option("--vectors", sw_vectors);
    sw->add_option("--corpus", sw_corpus);
    sw->add_option("--ns", sw_ns);
    sw->add_option("--out-csv", sw_csv);
    sw->add_option("--split", sw_split)->check(CLI::IsMember({"train", "heldout", "all"}));
    sw->add_option("--rounds", so.rounds);
    sw->add_option("--count", so.bench.count);

    // explain
    auto* ex = app.add_subcommand("explain", "show which fragment matched each query term");
    std::string ex_vectors;
    std::string ex_image;
    std::string ex_query;
    std::string ex_vocab;
    ex->add_option("--vectors", ex_vectors);
    ex->add_option("--image-id", ex_image);
    ex->add_option("--query", ex_query);
    ex->add_option("--vocab", ex_vocab, "vocabulary file (default: <vectors>.vocab)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    }

    auto split_of = [](const std::string& s) {
        return s == "train" ? CaptionSplit::train
                            : (s == "heldout" ? CaptionSplit::heldout : CaptionSplit::all);
    };

    try {
        if (gen->parsed()) {
            require_output("--out", gen_out);
            sc.regions = parse_range(gen_regions);
            sc.labels = parse_range(gen_labels);
            const auto corpus = generate_synthetic(sc);
            save_corpus(corpus, gen_out);
            err << "wrote " << corpus.images.size() << " images, " << corpus.captions.size()
                << " captions to " << gen_out << "\n";
        } else if (tr->parsed()) {
            require_file("--corpus", tr_corpus);
            require_output("--out-model", tr_model);
            for (const auto& o : overrides) {
                apply_override(o, tc, ec);
            }
            ec.use_visual = ec.use_visual && !no_visual;
            ec.use_labels = ec.use_labels && !no_labels;
            ec.use_attributes = ec.use_attributes && !no_attributes;
            const auto corpus = load_corpus(tr_corpus);
            ec.d_rcnn = corpus.d_rcnn;
            auto result = train(corpus, tc, ec, [&](std::size_t epoch, double loss) {
                err << "epoch " << epoch + 1 << "/" << tc.epochs << " loss " << loss << "\n";
            });
            save_model(result.params, tr_model);
            if (!tr_loss.empty()) {
                write_loss_csv(result.epoch_losses, tr_loss);
            }
        } else if (en->parsed()) {
            require_file("--corpus", en_corpus);
            require_file("--model", en_model);
            require_output("--out-vectors", en_out);
            const auto corpus = load_corpus(en_corpus);
            const auto model = load_model(en_model);
            if (model.vocab_hash != corpus.vocab.hash()
                || model.vocab_size() != corpus.vocab.size()) {
                throw VocabMismatchError("model was trained on a different vocabulary");
            }
            const auto vectors = compute_corpus_term_scores<float>(corpus.images, model,
                                                                   model.config, en_attention,
                                                                   en_threads);
            save_term_scores(vectors, en_out);
            write_vocab_file(corpus.vocab, vocab_sidecar(en_out));
            std::size_t total = 0;
            for (const auto& v : vectors) {
                total += v.entries.size();
            }
            err << "encoded " << vectors.size() << " images, " << total << " term scores\n";
        } else if (ix->parsed()) {
            require_file("--vectors", ix_vectors);
            require_output("--out-index", ix_out);
            const auto vocab =
                read_vocab_file(ix_vocab.empty() ? vocab_sidecar(ix_vectors) : ix_vocab);
            const auto vectors = load_term_scores(ix_vectors);
            for (const auto& v : vectors) {
                if (!v.entries.empty() && v.entries.back().term >= vocab.size()) {
                    throw VocabMismatchError("term scores reference ids beyond the vocabulary");
                }
            }
            const auto index = build_index(vectors, vocab.hash(), TopN::parse(ix_top_n));
            save_index(index, ix_out);
            write_vocab_file(vocab, vocab_sidecar(ix_out));
            err << "indexed " << index.num_images() << " images, " << index.total_postings()
                << " postings (top-n " << index.top_n.to_string() << ")\n";
        } else if (se->parsed()) {
            require_file("--index", se_index);
            if (se_query.empty()) {
                throw ConfigError("--query is required");
            }
            const auto index = load_index(se_index);
            const auto vocab =
                read_vocab_file(se_vocab.empty() ? vocab_sidecar(se_index) : se_vocab);
            require_vocab(index, vocab);
            const auto tokens = tokenize_for_search(vocab, se_query, err);
            const auto ranked = query(index, tokens, se_k);
            out << std::setprecision(6);
            for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
                out << (i + 1) << '\t' << ranked.entries[i].image_id << '\t'
                    << ranked.entries[i].score << '\n';
            }
        } else if (ev->parsed()) {
            require_file("--index", ev_index);
            require_file("--corpus", ev_corpus);
            const auto index = load_index(ev_index);
            const auto corpus = load_corpus(ev_corpus);
            require_vocab(index, corpus.vocab);
            const auto ks = parse_list<std::size_t>(ev_ks, &to_count);
            const auto queries = make_eval_queries(corpus, split_of(ev_split));
            const auto result = evaluate(index, queries, ks);
            for (const auto& [k, r] : result.recall_at) {
                out << "R@" << k << '\t' << r << '\n';
            }
            if (!ev_csv.empty()) {
                write_eval_csv(result, ev_csv);
            }
        } else if (be->parsed()) {
            require_file("--index", be_index);
            const auto index = load_index(be_index);
            std::vector<std::vector<TermId>> queries;
            if (!be_corpus.empty()) {
                require_file("--corpus", be_corpus);
                const auto corpus = load_corpus(be_corpus);
                require_vocab(index, corpus.vocab);
                for (const auto& c : corpus.captions) {
                    queries.push_back(c.tokens);
                }
            } else {
                require_file("--queries-file", be_queries);
                const auto vocab =
                    read_vocab_file(be_vocab.empty() ? vocab_sidecar(be_index) : be_vocab);
                require_vocab(index, vocab);
                std::ifstream in(be_queries);
                std::string line;
                while (std::getline(in, line)) {
                    auto ids = tokenize_query(vocab, line).ids;
                    if (!ids.empty()) {
                        queries.push_back(std::move(ids));
                    }
                }
            }
            const auto result = bench(index, queries, bo);
            out << "index_size\t" << result.index_size << "\ntop_n\t" << result.top_n.to_string()
                << "\nqps\t" << result.queries_per_second << "\nmean_ms\t"
                << result.mean_latency_ms << "\np99_ms\t" << result.p99_latency_ms << '\n';
            if (!be_csv.empty()) {
                write_bench_csv(std::span<const BenchResult>(&result, 1), be_csv);
            }
        } else if (sw->parsed()) {
            require_file("--vectors", sw_vectors);
            require_file("--corpus", sw_corpus);
            const auto corpus = load_corpus(sw_corpus);
            if (std::ifstream(vocab_sidecar(sw_vectors)).good()
                && read_vocab_file(vocab_sidecar(sw_vectors)).hash() != corpus.vocab.hash()) {
                throw VocabMismatchError("term scores were computed over a different vocabulary");
            }
            const auto vectors = load_term_scores(sw_vectors);
            const auto ns = parse_list<TopN>(sw_ns, &to_top_n);
            const auto queries = make_eval_queries(corpus, split_of(sw_split));
            const auto rows = sweep_top_n(vectors, corpus.vocab.hash(), queries, ns, so);
            out << "n\tr1\tr5\tr10\tlatency_ms\tqps\n";
            for (const auto& r : rows) {
                out << r.n.to_string() << '\t' << r.recall_1 << '\t' << r.recall_5 << '\t'
                    << r.recall_10 << '\t' << r.latency_ms << '\t' << r.qps << '\n';
            }
            if (!recall_non_decreasing(rows, queries.size(), 1e-3)) {
                err << "warning: recall@1 is not monotone in n\n";
            }
            if (!sw_csv.empty()) {
                write_sweep_csv(rows, sw_csv);
            }
        } else if (ex->parsed()) {
            require_file("--vectors", ex_vectors);
            if (ex_image.empty() || ex_query.empty()) {
                throw ConfigError("--image-id and --query are required");
            }
            const auto vocab =
                read_vocab_file(ex_vocab.empty() ? vocab_sidecar(ex_vectors) : ex_vocab);
            const auto vectors = load_term_scores(ex_vectors);
            const auto tokens = tokenize_for_search(vocab, ex_query, err);
            out << std::setprecision(6);
            for (const auto& e : explain(vectors, tokens, ex_image)) {
                out << vocab.token(e.term) << '\t' << e.weight << '\t';
                if (e.attended_row) {
                    out << *e.attended_row;
                } else {
                    out << '-';
                }
                out << '\n';
            }
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumericalError;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kOk;
}

}  // namespace vsparta::cli
