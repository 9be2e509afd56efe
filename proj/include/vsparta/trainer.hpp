#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vsparta/binary_io.hpp"
#include "vsparta/corpus.hpp"
#include "vsparta/encoder.hpp"
#include "vsparta/scorer.hpp"

namespace vsparta {

struct TrainPair {
    std::vector<TermId> tokens;
    std::size_t positive = 0;  ///< index into TrainBatch::images
};

/// Query/positive pairs plus the distinct images they point at. Each image
/// doubles as an in-batch negative for every other pair.
struct TrainBatch {
    std::vector<TrainPair> pairs;
    std::vector<const ImageInput*> images;

    void validate() const
    {
        if (pairs.size() < 2 || images.size() < 2) {
            throw ConfigError("a training batch needs at least two pairs and two images");
        }
        for (const auto& p : pairs) {
            if (p.positive >= images.size()) {
                throw ConfigError("batch positive index out of range");
            }
            if (p.tokens.empty()) {
                throw ConfigError("batch query has no tokens");
            }
        }
    }
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    double learning_rate = 5e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 7;
    bool wide_precision = false;  ///< run the optimizer in double precision
    CaptionSplit split = CaptionSplit::train;

    void validate() const
    {
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
            throw ConfigError("Adam betas must lie in (0, 1)");
        }
        if (!(learning_rate > 0.0)) {
            throw ConfigError("learning rate must be positive");
        }
        if (batch_size < 2) {
            throw ConfigError("batch size must be at least 2");
        }
        if (!(adam_epsilon > 0.0)) {
            throw ConfigError("Adam epsilon must be positive");
        }
    }
};

/// Softmax cross-entropy of each row of `scores` against its positive column,
/// averaged over rows. The denominator runs over every image in the batch.
template <typename T>
T cross_entropy_from_scores(const Matrix<T>& scores, std::span<const std::size_t> positives)
{
    T total{0};
    for (std::size_t p = 0; p < scores.rows(); ++p) {
        total += log_sum_exp<T>(scores.row(p)) - scores(p, positives[p]);
    }
    const T loss = total / static_cast<T>(scores.rows());
    if (!std::isfinite(loss)) {
        throw NumericalError("batch loss is not finite");
    }
    return loss;
}

template <typename T>
struct BatchLoss {
    T loss{0};
    Matrix<T> scores;  ///< pairs x images, raw f(q, v)
};

template <typename T>
std::vector<std::size_t> batch_positives(const TrainBatch& batch)
{
    std::vector<std::size_t> out;
    for (const auto& p : batch.pairs) {
        out.push_back(p.positive);
    }
    return out;
}

template <typename T>
BatchLoss<T> batch_loss(const TrainBatch& batch, const ModelParams<T>& params,
                        const EncoderConfig& cfg)
{
    batch.validate();
    std::vector<ImageRepresentation<T>> reps;
    reps.reserve(batch.images.size());
    for (const auto* img : batch.images) {
        reps.push_back(encode_image(*img, params, cfg));
    }
    BatchLoss<T> out;
    out.scores = Matrix<T>(batch.pairs.size(), batch.images.size());
    for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
        for (std::size_t j = 0; j < reps.size(); ++j) {
            out.scores(p, j) = score_pair<T>(batch.pairs[p].tokens, reps[j], params);
        }
    }
    const auto positives = batch_positives<T>(batch);
    out.loss = cross_entropy_from_scores<T>(out.scores, positives);
    return out;
}

/// Forward and backward pass over one batch. Gradients are accumulated into
/// params (call zero_grad first for a fresh gradient). The max over rows routes
/// gradient to the argmax row only; the ReLU passes gradient iff y + b > 0.
template <typename T>
T backward(const TrainBatch& batch, ModelParams<T>& params, const EncoderConfig& cfg)
{
    batch.validate();
    const std::size_t num_images = batch.images.size();
    const std::size_t num_pairs = batch.pairs.size();
    std::vector<EncodeTrace<T>> traces(num_images);
    for (std::size_t j = 0; j < num_images; ++j) {
        encode_image(*batch.images[j], params, cfg, &traces[j]);
    }
    Matrix<T> scores(num_pairs, num_images);
    for (std::size_t p = 0; p < num_pairs; ++p) {
        for (std::size_t j = 0; j < num_images; ++j) {
            scores(p, j) = score_pair<T>(batch.pairs[p].tokens, traces[j].output, params);
        }
    }
    const auto positives = batch_positives<T>(batch);
    const T loss = cross_entropy_from_scores<T>(scores, positives);

    // dL/df = (softmax - onehot) / pairs
    Matrix<T> dscores = scores;
    for (std::size_t p = 0; p < num_pairs; ++p) {
        softmax_inplace(dscores.row(p));
        dscores(p, positives[p]) -= T{1};
        for (auto& g : dscores.row(p)) {
            g /= static_cast<T>(num_pairs);
        }
    }

    const T bias = params.scoring_bias.values[0];
    const std::size_t d = cfg.d_hidden;
    std::vector<Matrix<T>> dh(num_images);
    for (std::size_t j = 0; j < num_images; ++j) {
        dh[j] = Matrix<T>(traces[j].output.rows(), d);
    }
    for (std::size_t p = 0; p < num_pairs; ++p) {
        for (std::size_t j = 0; j < num_images; ++j) {
            const auto& h = traces[j].output.matrix;
            if (h.rows() == 0) {
                continue;
            }
            const T g = dscores(p, j);
            for (TermId t : batch.pairs[p].tokens) {
                const auto emb = params.token_embeddings.row(t);
                const auto m = term_match<T>(emb, h);
                if (!(m.value + bias > T{0})) {
                    continue;
                }
                const T c = g / (sparsify(m.value, bias) + T{1});
                params.scoring_bias.grad[0] += c;
                auto demb = params.token_embeddings.grad_row(t);
                auto hrow = h.row(m.row);
                auto dhrow = dh[j].row(m.row);
                for (std::size_t e = 0; e < d; ++e) {
                    demb[e] += c * hrow[e];
                    dhrow[e] += c * emb[e];
                }
            }
        }
    }
    for (std::size_t j = 0; j < num_images; ++j) {
        backward_image(traces[j], dh[j], params, cfg);
    }
    bool finite = true;
    params.for_each_tensor([&](const std::string&, const ParamTensor<T>& p) {
        finite = finite && all_finite<T>(p.grad);
    });
    if (!finite) {
        throw NumericalError("non-finite gradient");
    }
    return loss;
}

/// Per-tensor first/second moment estimates.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first;
    std::vector<std::vector<T>> second;
    std::size_t step = 0;
};

/// One bias-corrected Adam update; gradients are zeroed afterwards.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, const TrainConfig& cfg)
{
    auto tensors = params.tensors();
    if (state.first.empty()) {
        for (auto* p : tensors) {
            state.first.emplace_back(p->size(), T{0});
            state.second.emplace_back(p->size(), T{0});
        }
    }
    ++state.step;
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        auto& p = *tensors[k];
        auto& m = state.first[k];
        auto& v = state.second[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T g = p.grad[i];
            m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g);
            v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * g * g);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.values[i] -= static_cast<T>(cfg.learning_rate * mhat
                                          / (std::sqrt(vhat) + cfg.adam_epsilon));
        }
        p.zero_grad();
    }
}

/// Groups shuffled captions into batches whose images are pairwise distinct.
/// A caption whose image is already in the current batch is deferred to the
/// next one. A final batch with fewer than two pairs is dropped.
inline std::vector<std::vector<std::size_t>> plan_batches(const std::vector<Caption>& captions,
                                                          std::size_t batch_size,
                                                          std::mt19937_64& rng)
{
    std::vector<std::size_t> order(captions.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::deque<std::size_t> pending(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> batches;
    while (!pending.empty()) {
        std::vector<std::size_t> batch;
        std::unordered_set<std::uint32_t> used;
        std::vector<std::size_t> deferred;
        while (!pending.empty() && batch.size() < batch_size) {
            const std::size_t c = pending.front();
            pending.pop_front();
            if (used.insert(captions[c].image).second) {
                batch.push_back(c);
            } else {
                deferred.push_back(c);
            }
        }
        pending.insert(pending.begin(), deferred.begin(), deferred.end());
        if (batch.size() < 2) {
            break;
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

template <typename T>
TrainBatch make_batch(const CaptionedCorpus& corpus, const std::vector<Caption>& captions,
                      const std::vector<std::size_t>& members)
{
    TrainBatch b;
    for (std::size_t c : members) {
        b.pairs.push_back({captions[c].tokens, b.images.size()});
        b.images.push_back(&corpus.images[captions[c].image]);
    }
    return b;
}

struct TrainResult {
    ModelParams<float> params;
    std::vector<double> epoch_losses;
};

template <typename T>
std::vector<double> train_loop(const CaptionedCorpus& corpus, const std::vector<Caption>& captions,
                               const TrainConfig& tc, const EncoderConfig& ec,
                               ModelParams<T>& params,
                               const std::function<void(std::size_t, double)>& on_epoch)
{
    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState<T> state;
    std::vector<double> history;
    params.zero_grad();
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        double total = 0.0;
        std::size_t count = 0;
        for (const auto& members : plan_batches(captions, tc.batch_size, rng)) {
            const TrainBatch batch = make_batch<T>(corpus, captions, members);
            total += static_cast<double>(backward(batch, params, ec));
            ++count;
            adam_step(params, state, tc);
        }
        history.push_back(count == 0 ? 0.0 : total / static_cast<double>(count));
        if (on_epoch) {
            on_epoch(epoch, history.back());
        }
    }
    return history;
}

/// Trains from a seeded initialization. Deterministic in (corpus, configs).
inline TrainResult train(const CaptionedCorpus& corpus, const TrainConfig& tc,
                         const EncoderConfig& ec,
                         const std::function<void(std::size_t, double)>& on_epoch = {})
{
    tc.validate();
    ec.validate();
    if (ec.use_visual && ec.d_rcnn != corpus.d_rcnn) {
        throw ConfigError("encoder d_rcnn " + std::to_string(ec.d_rcnn)
                          + " does not match corpus d_rcnn " + std::to_string(corpus.d_rcnn));
    }
    const auto captions = select_captions(corpus, tc.split);
    if (captions.size() < 2 * tc.batch_size) {
        throw ConfigError("need at least " + std::to_string(2 * tc.batch_size)
                          + " training captions, have " + std::to_string(captions.size()));
    }
    std::unordered_set<std::uint32_t> distinct;
    for (const auto& c : captions) {
        distinct.insert(c.image);
    }
    if (distinct.size() < tc.batch_size) {
        throw ConfigError("only " + std::to_string(distinct.size())
                          + " distinct images; cannot form batches of "
                          + std::to_string(tc.batch_size));
    }
    TrainResult result;
    auto init = ModelParams<float>::init(ec, corpus.vocab.size(), corpus.vocab.hash(), tc.seed);
    if (tc.wide_precision) {
        auto wide = init.cast<double>();
        result.epoch_losses = train_loop<double>(corpus, captions, tc, ec, wide, on_epoch);
        result.params = wide.cast<float>();
    } else {
        result.epoch_losses = train_loop<float>(corpus, captions, tc, ec, init, on_epoch);
        result.params = std::move(init);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   "VSPM" | version u32
//   d_hidden u32 | d_rcnn u32 | num_layers u32 | num_heads u32 | max_positions u32
//   flags u32 (bit0 use_visual, bit1 use_labels, bit2 use_attributes) | vocab_size u32
//   vocab_hash u64 | tensor_count u32
//   per tensor: ndims u32, dims u32 x ndims, values f32 x prod(dims)
//   checksum u64 (see binary_io.hpp)
//
// Tensor order: token_embeddings, position_embeddings, segment_embeddings,
// projection_w, projection_b, then for each layer ln1_gain, ln1_shift, query_w,
// query_b, key_w, value_w, value_b, out_w, out_b, ln2_gain, ln2_shift,
// ff1_w, ff1_b, ff2_w, ff2_b, and finally scoring_bias.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Bytes serialize_model(const ModelParams<float>& m)
{
    ByteWriter w;
    w.magic("VSPM");
    w.u32(kCheckpointVersion);
    const auto& c = m.config;
    w.u32(static_cast<std::uint32_t>(c.d_hidden));
    w.u32(static_cast<std::uint32_t>(c.d_rcnn));
    w.u32(static_cast<std::uint32_t>(c.num_layers));
    w.u32(static_cast<std::uint32_t>(c.num_heads));
    w.u32(static_cast<std::uint32_t>(c.max_positions));
    w.u32((c.use_visual ? 1U : 0U) | (c.use_labels ? 2U : 0U) | (c.use_attributes ? 4U : 0U));
    w.u32(static_cast<std::uint32_t>(m.vocab_size()));
    w.u64(m.vocab_hash);
    std::uint32_t count = 0;
    m.for_each_tensor([&](const std::string&, const ParamTensor<float>&) { ++count; });
    w.u32(count);
    m.for_each_tensor([&](const std::string&, const ParamTensor<float>& p) {
        w.u32(static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (float v : p.values) {
            w.f32(v);
        }
    });
    return seal(std::move(w).bytes());
}

inline ModelParams<float> parse_model(const Bytes& bytes)
{
    ByteReader r(bytes, sealed_body_size(bytes));
    r.expect_magic("VSPM");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    EncoderConfig c;
    c.d_hidden = r.u32();
    c.d_rcnn = r.u32();
    c.num_layers = r.u32();
    c.num_heads = r.u32();
    c.max_positions = r.u32();
    const auto flags = r.u32();
    if ((flags & ~7U) != 0) {
        throw CorruptDataError("checkpoint: unknown config flags");
    }
    c.use_visual = (flags & 1U) != 0;
    c.use_labels = (flags & 2U) != 0;
    c.use_attributes = (flags & 4U) != 0;
    const std::uint32_t vocab_size = r.u32();
    const std::uint64_t vocab_hash = r.u64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw CorruptDataError(std::string("checkpoint config: ") + e.what());
    }
    // Reject absurd shapes before allocating anything.
    // Counted in double so corrupt headers cannot overflow the product.
    const double d = static_cast<double>(c.d_hidden);
    const double expected_floats =
        (static_cast<double>(vocab_size) + static_cast<double>(c.max_positions) + kNumSegments
         + static_cast<double>(c.d_rcnn) + kLocationDims + 1) * d
        + static_cast<double>(c.num_layers) * (12 * d * d + 12 * d) + 1;
    if (expected_floats * 4 > static_cast<double>(r.remaining())) {
        throw CorruptDataError("checkpoint: header declares more parameters than the file holds");
    }

    auto m = ModelParams<float>::zeros(c, vocab_size, vocab_hash);
    const std::uint32_t count = r.u32();
    std::uint32_t expected_count = 0;
    m.for_each_tensor([&](const std::string&, const ParamTensor<float>&) { ++expected_count; });
    if (count != expected_count) {
        throw CorruptDataError("checkpoint: tensor count " + std::to_string(count) + ", expected "
                               + std::to_string(expected_count));
    }
    m.for_each_tensor([&](const std::string& name, ParamTensor<float>& p) {
        const std::uint32_t ndims = r.u32();
        if (ndims != p.shape.size()) {
            throw CorruptDataError("checkpoint: tensor " + name + " rank mismatch");
        }
        for (auto dim : p.shape) {
            if (r.u32() != dim) {
                throw CorruptDataError("checkpoint: tensor " + name + " shape mismatch");
            }
        }
        for (auto& v : p.values) {
            v = r.f32();
        }
        if (!all_finite<float>(p.values)) {
            throw CorruptDataError("checkpoint: tensor " + name + " has non-finite values");
        }
    });
    if (!r.at_end()) {
        throw CorruptDataError("checkpoint: trailing bytes");
    }
    verify_seal(bytes);
    return m;
}

inline void save_model(const ModelParams<float>& m, const std::string& path)
{
    write_file(path, serialize_model(m));
}

inline ModelParams<float> load_model(const std::string& path)
{
    return parse_model(read_file(path));
}

inline void write_loss_csv(const std::vector<double>& losses, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    out << "epoch,mean_loss\n";
    out << std::setprecision(9);
    for (std::size_t e = 0; e < losses.size(); ++e) {
        out << e + 1 << ',' << losses[e] << '\n';
    }
}

}  // namespace vsparta
