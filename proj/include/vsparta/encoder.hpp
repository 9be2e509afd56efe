#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vsparta/corpus.hpp"
#include "vsparta/error.hpp"
#include "vsparta/numerics.hpp"
#include "vsparta/transformer.hpp"

namespace vsparta {

/// Label tokens use segment 1; segment 0 is reserved for text.
inline constexpr std::size_t kLabelSegment = 1;
inline constexpr std::size_t kNumSegments = 2;

struct EncoderConfig {
    std::size_t d_hidden = 64;
    std::size_t d_rcnn = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t max_positions = 128;
    bool use_visual = true;
    bool use_labels = true;
    bool use_attributes = true;

    void validate() const
    {
        if (d_hidden == 0 || num_heads == 0 || d_hidden % num_heads != 0) {
            throw ConfigError("d_hidden must be a positive multiple of num_heads");
        }
        if (!use_visual && !use_labels) {
            throw ConfigError("at least one of use_visual / use_labels must be enabled");
        }
        if (max_positions == 0) {
            throw ConfigError("max_positions must be positive");
        }
    }

    bool operator==(const EncoderConfig&) const = default;
};

/// Every trainable tensor of the model. The scalar type selects precision:
/// float for training and inference, double for gradient verification.
template <typename T>
struct ModelParams {
    EncoderConfig config;
    std::uint64_t vocab_hash = 0;

    ParamTensor<T> token_embeddings;     ///< |V| x d_H, shared by queries and labels
    ParamTensor<T> position_embeddings;  ///< max_positions x d_H
    ParamTensor<T> segment_embeddings;   ///< 2 x d_H
    ParamTensor<T> projection_w;         ///< (d_rcnn + 6) x d_H
    ParamTensor<T> projection_b;         ///< d_H
    std::vector<LayerParams<T>> layers;
    ParamTensor<T> scoring_bias;         ///< scalar threshold inside the ReLU

    [[nodiscard]] std::size_t vocab_size() const noexcept { return token_embeddings.rows(); }

    /// Visits (name, tensor) pairs in the fixed checkpoint/optimizer order.
    template <typename Fn>
    void for_each_tensor(Fn&& fn)
    {
        visit_all(*this, fn);
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const
    {
        visit_all(*this, fn);
    }

    std::vector<ParamTensor<T>*> tensors()
    {
        std::vector<ParamTensor<T>*> out;
        for_each_tensor([&](const std::string&, ParamTensor<T>& p) { out.push_back(&p); });
        return out;
    }

    std::vector<std::string> tensor_names() const
    {
        std::vector<std::string> out;
        for_each_tensor([&](const std::string& n, const ParamTensor<T>&) { out.push_back(n); });
        return out;
    }

    void zero_grad()
    {
        for_each_tensor([](const std::string&, ParamTensor<T>& p) { p.zero_grad(); });
    }

    template <typename U>
    [[nodiscard]] ModelParams<U> cast() const
    {
        ModelParams<U> out;
        out.config = config;
        out.vocab_hash = vocab_hash;
        out.token_embeddings = token_embeddings.template cast<U>();
        out.position_embeddings = position_embeddings.template cast<U>();
        out.segment_embeddings = segment_embeddings.template cast<U>();
        out.projection_w = projection_w.template cast<U>();
        out.projection_b = projection_b.template cast<U>();
        out.scoring_bias = scoring_bias.template cast<U>();
        for (const auto& layer : layers) {
            LayerParams<U> l;
            auto src = layer;
            std::vector<ParamTensor<U>> converted;
            LayerParams<T>::visit(src, [&](const char*, ParamTensor<T>& p) {
                converted.push_back(p.template cast<U>());
            });
            std::size_t i = 0;
            LayerParams<U>::visit(l, [&](const char*, ParamTensor<U>& p) {
                p = std::move(converted[i++]);
            });
            out.layers.push_back(std::move(l));
        }
        return out;
    }

    /// Zero-filled tensors of the right shapes.
    static ModelParams zeros(const EncoderConfig& cfg, std::size_t vocab_size,
                             std::uint64_t vocab_hash)
    {
        cfg.validate();
        ModelParams m;
        m.config = cfg;
        m.vocab_hash = vocab_hash;
        const std::size_t d = cfg.d_hidden;
        m.token_embeddings = ParamTensor<T>({vocab_size, d});
        m.position_embeddings = ParamTensor<T>({cfg.max_positions, d});
        m.segment_embeddings = ParamTensor<T>({kNumSegments, d});
        m.projection_w = ParamTensor<T>({cfg.d_rcnn + kLocationDims, d});
        m.projection_b = ParamTensor<T>({d});
        m.layers.assign(cfg.num_layers, LayerParams<T>(d));
        m.scoring_bias = ParamTensor<T>({1});
        return m;
    }

    /// Seeded N(0, init_std) weights and embeddings; zero biases; unit norm gains.
    static ModelParams init(const EncoderConfig& cfg, std::size_t vocab_size,
                            std::uint64_t vocab_hash, std::uint64_t seed, double init_std = 0.02)
    {
        ModelParams m = zeros(cfg, vocab_size, vocab_hash);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, init_std);
        auto fill = [&](ParamTensor<T>& p) {
            for (auto& v : p.values) {
                v = static_cast<T>(gauss(rng));
            }
        };
        fill(m.token_embeddings);
        fill(m.position_embeddings);
        fill(m.segment_embeddings);
        fill(m.projection_w);
        for (auto& layer : m.layers) {
            fill(layer.query_w);
            fill(layer.key_w);
            fill(layer.value_w);
            fill(layer.out_w);
            fill(layer.ff1_w);
            fill(layer.ff2_w);
        }
        return m;
    }

private:
    template <typename Self, typename Fn>
    static void visit_all(Self& self, Fn& fn)
    {
        fn(std::string("token_embeddings"), self.token_embeddings);
        fn(std::string("position_embeddings"), self.position_embeddings);
        fn(std::string("segment_embeddings"), self.segment_embeddings);
        fn(std::string("projection_w"), self.projection_w);
        fn(std::string("projection_b"), self.projection_b);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            LayerParams<T>::visit(self.layers[l], [&](const char* name, auto& p) {
                fn("layer" + std::to_string(l) + "." + name, p);
            });
        }
        fn(std::string("scoring_bias"), self.scoring_bias);
    }
};

/// Contextualized image matrix: region rows first, then label-token rows.
template <typename T>
struct ImageRepresentation {
    Matrix<T> matrix;
    std::size_t regions = 0;
    std::size_t labels = 0;

    [[nodiscard]] std::size_t rows() const noexcept { return matrix.rows(); }
};

/// Query tokens are independent table lookups: no position, no context.
template <typename T>
Matrix<T> embed_query(std::span<const TermId> tokens, const ModelParams<T>& params)
{
    const std::size_t d = params.config.d_hidden;
    Matrix<T> out(tokens.size(), d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= params.vocab_size()) {
            throw VocabError("query term id " + std::to_string(tokens[i]) + " out of range");
        }
        auto src = params.token_embeddings.row(tokens[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

/// Concatenates each region's visual row with its six location features.
template <typename T = float>
Matrix<T> assemble_regions(const RegionFeatures& regions)
{
    const std::size_t dv = regions.visual.cols();
    Matrix<T> out(regions.count(), dv + kLocationDims);
    for (std::size_t r = 0; r < regions.count(); ++r) {
        auto dst = out.row(r);
        auto vis = regions.visual.row(r);
        auto loc = regions.locations.row(r);
        std::copy(vis.begin(), vis.end(), dst.begin());
        std::copy(loc.begin(), loc.end(), dst.begin() + static_cast<std::ptrdiff_t>(dv));
    }
    return out;
}

/// Label tokens that enter the encoder under the given config.
inline std::vector<TermId> active_labels(const LabelAnnotation& labels, const EncoderConfig& cfg)
{
    std::vector<TermId> out;
    if (!cfg.use_labels) {
        return out;
    }
    for (std::size_t i = 0; i < labels.count(); ++i) {
        if (cfg.use_attributes || !labels.is_attribute[i]) {
            out.push_back(labels.token_ids[i]);
        }
    }
    return out;
}

/// Row i = E_tok[o_i] + E_pos[i] + E_seg[label segment].
template <typename T>
Matrix<T> embed_label_tokens(std::span<const TermId> tokens, const ModelParams<T>& params)
{
    const std::size_t d = params.config.d_hidden;
    if (tokens.size() > params.config.max_positions) {
        throw SequenceLengthError(std::to_string(tokens.size()) + " label tokens exceed "
                                  + std::to_string(params.config.max_positions) + " positions");
    }
    Matrix<T> out(tokens.size(), d);
    auto seg = params.segment_embeddings.row(kLabelSegment);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= params.vocab_size()) {
            throw VocabError("label term id " + std::to_string(tokens[i]) + " out of range");
        }
        auto tok = params.token_embeddings.row(tokens[i]);
        auto pos = params.position_embeddings.row(i);
        auto dst = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            dst[j] = tok[j] + pos[j] + seg[j];
        }
    }
    return out;
}

template <typename T>
Matrix<T> embed_labels(const LabelAnnotation& labels, const ModelParams<T>& params)
{
    return embed_label_tokens<T>(labels.token_ids, params);
}

/// Everything the backward pass needs from one image's forward pass.
template <typename T>
struct EncodeTrace {
    Matrix<T> assembled;  ///< n x (d_rcnn + 6); empty when visual features are off
    std::vector<TermId> label_tokens;
    std::vector<LayerCache<T>> layers;
    ImageRepresentation<T> output;
};

namespace detail {

template <typename T>
void check_config_matches(const ModelParams<T>& params, const EncoderConfig& cfg)
{
    cfg.validate();
    const auto& pc = params.config;
    if (pc.d_hidden != cfg.d_hidden || pc.d_rcnn != cfg.d_rcnn || pc.num_layers != cfg.num_layers
        || pc.num_heads != cfg.num_heads || pc.max_positions != cfg.max_positions) {
        throw ConfigError("encoder config does not match model parameter shapes");
    }
}

}  // namespace detail

/// a = [E_image W + b ; E_label], then the encoder stack. Fills `trace` if given.
template <typename T>
ImageRepresentation<T> encode_image(const ImageInput& image, const ModelParams<T>& params,
                                    const EncoderConfig& cfg, EncodeTrace<T>* trace = nullptr)
{
    detail::check_config_matches(params, cfg);
    if (cfg.use_visual && image.regions.visual.cols() != cfg.d_rcnn) {
        throw DimensionError("image \"" + image.image_id + "\" has visual width "
                             + std::to_string(image.regions.visual.cols()) + ", model expects "
                             + std::to_string(cfg.d_rcnn));
    }

    ImageRepresentation<T> rep;
    Matrix<T> assembled;
    Matrix<T> a(0, cfg.d_hidden);
    if (cfg.use_visual) {
        assembled = assemble_regions<T>(image.regions);
        a = affine(assembled, params.projection_w, params.projection_b);
        rep.regions = a.rows();
    }
    auto labels = active_labels(image.labels, cfg);
    if (!labels.empty()) {
        a.append_rows(embed_label_tokens<T>(labels, params));
    }
    rep.labels = labels.size();

    if (trace != nullptr) {
        trace->layers.assign(cfg.num_layers, LayerCache<T>{});
    }
    if (a.rows() > 0) {
        for (std::size_t l = 0; l < cfg.num_layers; ++l) {
            a = encoder_layer_forward(params.layers[l], a, cfg.num_heads,
                                      trace != nullptr ? &trace->layers[l] : nullptr);
        }
    }
    rep.matrix = std::move(a);
    if (trace != nullptr) {
        trace->assembled = std::move(assembled);
        trace->label_tokens = std::move(labels);
        trace->output = rep;
    }
    return rep;
}

template <typename T>
ImageRepresentation<T> encode_image(const ImageInput& image, const ModelParams<T>& params)
{
    return encode_image(image, params, params.config);
}

/// Backpropagates dL/dH through the encoder and input embeddings of one image.
template <typename T>
void backward_image(const EncodeTrace<T>& trace, const Matrix<T>& grad_output,
                    ModelParams<T>& params, const EncoderConfig& cfg)
{
    if (trace.output.rows() == 0) {
        return;
    }
    Matrix<T> g = grad_output;
    for (std::size_t l = cfg.num_layers; l-- > 0;) {
        g = encoder_layer_backward(params.layers[l], trace.layers[l], g, cfg.num_heads);
    }
    const std::size_t d = cfg.d_hidden;
    const std::size_t n = trace.output.regions;
    if (n > 0) {
        Matrix<T> dregions(n, d, std::vector<T>(g.data().begin(),
                                                g.data().begin() + static_cast<std::ptrdiff_t>(n * d)));
        affine_backward(trace.assembled, dregions, params.projection_w, params.projection_b);
    }
    auto seg = params.segment_embeddings.grad_row(kLabelSegment);
    for (std::size_t i = 0; i < trace.label_tokens.size(); ++i) {
        auto src = g.row(n + i);
        auto tok = params.token_embeddings.grad_row(trace.label_tokens[i]);
        auto pos = params.position_embeddings.grad_row(i);
        for (std::size_t j = 0; j < d; ++j) {
            tok[j] += src[j];
            pos[j] += src[j];
            seg[j] += src[j];
        }
    }
}

}  // namespace vsparta
