#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vsparta/binary_io.hpp"
#include "vsparta/error.hpp"
#include "vsparta/numerics.hpp"

namespace vsparta {

using TermId = std::uint32_t;

/// Number of location features per region: xmin, xmax, ymin, ymax, width, height.
inline constexpr std::size_t kLocationDims = 6;

/// Lowercase, punctuation-stripped whitespace tokenization.
inline std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> out;
    std::string cur;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else if (std::ispunct(c)) {
            continue;
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

/// Ordered set of unique tokens with dense ids 0..size()-1.
class Vocabulary {
public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens)
        : tokens_(std::move(tokens))
    {
        lookup_.reserve(tokens_.size());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            const auto& t = tokens_[i];
            if (t.empty()) {
                throw VocabError("empty vocabulary token at id " + std::to_string(i));
            }
            for (char c : t) {
                const auto u = static_cast<unsigned char>(c);
                if (std::isspace(u) || std::isupper(u)) {
                    throw VocabError("vocabulary token \"" + t
                                     + "\" must be lowercase and whitespace-free");
                }
            }
            if (!lookup_.emplace(t, static_cast<TermId>(i)).second) {
                throw VocabError("duplicate vocabulary token \"" + t + "\"");
            }
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
    [[nodiscard]] const std::string& token(TermId id) const { return tokens_.at(id); }
    [[nodiscard]] const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    [[nodiscard]] std::optional<TermId> find(std::string_view token) const
    {
        auto it = lookup_.find(std::string(token));
        if (it == lookup_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /// FNV-1a 64 over the tokens, each followed by a 0 byte.
    [[nodiscard]] std::uint64_t hash() const
    {
        std::uint64_t h = fnv1a64({});
        const char sep = '\0';
        for (const auto& t : tokens_) {
            h = fnv1a64(t, h);
            h = fnv1a64(std::string_view(&sep, 1), h);
        }
        return h;
    }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TermId> lookup_;
};

struct TokenizedQuery {
    std::vector<TermId> ids;
    std::vector<std::string> dropped;  ///< out-of-vocabulary words, in order
};

inline TokenizedQuery tokenize_query(const Vocabulary& vocab, std::string_view text)
{
    TokenizedQuery q;
    for (auto& word : tokenize(text)) {
        if (auto id = vocab.find(word)) {
            q.ids.push_back(*id);
        } else {
            q.dropped.push_back(std::move(word));
        }
    }
    return q;
}

struct RegionFeatures {
    Matrix<float> visual;     ///< n x d_rcnn
    Matrix<float> locations;  ///< n x 6

    [[nodiscard]] std::size_t count() const noexcept { return visual.rows(); }
    bool operator==(const RegionFeatures&) const = default;
};

/// Detector labels for one image. `is_attribute[i]` marks attribute tokens
/// (colours, materials, ...) as opposed to object labels.
struct LabelAnnotation {
    std::vector<TermId> token_ids;
    std::vector<bool> is_attribute;

    [[nodiscard]] std::size_t count() const noexcept { return token_ids.size(); }
    bool operator==(const LabelAnnotation&) const = default;
};

struct ImageInput {
    std::string image_id;
    RegionFeatures regions;
    LabelAnnotation labels;

    bool operator==(const ImageInput&) const = default;
};

struct Caption {
    std::vector<TermId> tokens;
    std::uint32_t image = 0;

    bool operator==(const Caption&) const = default;
};

struct CaptionedCorpus {
    Vocabulary vocab;
    std::size_t d_rcnn = 0;
    std::vector<ImageInput> images;
    std::vector<Caption> captions;

    bool operator==(const CaptionedCorpus&) const = default;
};

/// Pixel-space bounding box, top-left inclusive.
struct Box {
    double xmin = 0;
    double ymin = 0;
    double xmax = 0;
    double ymax = 0;
};

/// [xmin/W, xmax/W, ymin/H, ymax/H, width/W, height/H].
inline std::array<float, kLocationDims> normalize_location(const Box& box, double image_width,
                                                           double image_height)
{
    if (!(image_width > 0) || !(image_height > 0)) {
        throw GeometryError("image dimensions must be positive");
    }
    if (!(box.xmin < box.xmax) || !(box.ymin < box.ymax)) {
        throw GeometryError("degenerate box (zero area)");
    }
    if (box.xmin < 0 || box.ymin < 0 || box.xmax > image_width || box.ymax > image_height) {
        throw GeometryError("box lies outside the image");
    }
    return {static_cast<float>(box.xmin / image_width),
            static_cast<float>(box.xmax / image_width),
            static_cast<float>(box.ymin / image_height),
            static_cast<float>(box.ymax / image_height),
            static_cast<float>((box.xmax - box.xmin) / image_width),
            static_cast<float>((box.ymax - box.ymin) / image_height)};
}

namespace detail {

[[noreturn]] inline void corrupt(const std::string& image_id, const std::string& field,
                                 const std::string& what)
{
    throw CorruptDataError("image \"" + image_id + "\": " + field + ": " + what);
}

inline void check_image(const ImageInput& img, std::size_t d_rcnn, std::size_t vocab_size)
{
    const auto& id = img.image_id;
    const auto& r = img.regions;
    if (r.count() == 0) {
        corrupt(id, "regions", "image has no regions");
    }
    if (r.visual.cols() != d_rcnn) {
        corrupt(id, "visual", "feature width != d_rcnn");
    }
    if (r.locations.rows() != r.count() || r.locations.cols() != kLocationDims) {
        corrupt(id, "locations", "shape mismatch");
    }
    if (!all_finite<float>(r.visual.data())) {
        corrupt(id, "visual", "non-finite feature value");
    }
    for (std::size_t i = 0; i < r.count(); ++i) {
        auto l = r.locations.row(i);
        for (float v : l) {
            if (!(v >= 0.0F && v <= 1.0F)) {
                corrupt(id, "locations",
                        "row " + std::to_string(i) + " entry " + std::to_string(v)
                            + " outside [0, 1]");
            }
        }
        if (std::abs(l[4] - (l[1] - l[0])) > 1e-6F || std::abs(l[5] - (l[3] - l[2])) > 1e-6F) {
            corrupt(id, "locations", "row " + std::to_string(i) + " width/height inconsistent");
        }
    }
    if (img.labels.is_attribute.size() != img.labels.token_ids.size()) {
        corrupt(id, "labels", "attribute flags length mismatch");
    }
    for (TermId t : img.labels.token_ids) {
        if (t >= vocab_size) {
            corrupt(id, "labels", "term id " + std::to_string(t) + " out of vocabulary");
        }
    }
}

}  // namespace detail

/// Checks every invariant; throws CorruptDataError naming the offending image/field.
inline void validate(const CaptionedCorpus& c)
{
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < c.images.size(); ++i) {
        const auto& img = c.images[i];
        if (!seen.emplace(img.image_id, i).second) {
            detail::corrupt(img.image_id, "image_id", "duplicate id");
        }
        detail::check_image(img, c.d_rcnn, c.vocab.size());
    }
    for (std::size_t i = 0; i < c.captions.size(); ++i) {
        const auto& cap = c.captions[i];
        const std::string where = "caption " + std::to_string(i);
        if (cap.image >= c.images.size()) {
            throw CorruptDataError(where + ": image index out of range");
        }
        if (cap.tokens.empty()) {
            throw CorruptDataError(where + ": empty caption");
        }
        for (TermId t : cap.tokens) {
            if (t >= c.vocab.size()) {
                throw CorruptDataError(where + ": term id out of vocabulary");
            }
        }
    }
}

// Corpus file: "VSPF" | version u32 | num_images u32 | vocab_size u32 | d_rcnn u32
//   | tokens (u16 length + bytes) x vocab_size
//   | per image: id, region count u32, visual f32 x (count * d_rcnn),
//     locations f32 x (count * 6), label count u32, label ids u32
//   | caption count u32 | per caption: image u32, length u16, term ids u32
//   | checksum u64
inline constexpr std::uint32_t kCorpusVersion = 1;
/// Label ids carry the attribute flag in their top bit on disk.
inline constexpr std::uint32_t kAttributeBit = 0x80000000U;

inline Bytes serialize_corpus(const CaptionedCorpus& c)
{
    if (c.vocab.size() >= kAttributeBit) {
        throw FormatError("vocabulary too large: label ids must stay below 2^31");
    }
    ByteWriter w;
    w.magic("VSPF");
    w.u32(kCorpusVersion);
    w.u32(static_cast<std::uint32_t>(c.images.size()));
    w.u32(static_cast<std::uint32_t>(c.vocab.size()));
    w.u32(static_cast<std::uint32_t>(c.d_rcnn));
    for (const auto& t : c.vocab.tokens()) {
        w.str16(t);
    }
    for (const auto& img : c.images) {
        w.str16(img.image_id);
        w.u32(static_cast<std::uint32_t>(img.regions.count()));
        for (float v : img.regions.visual.data()) {
            w.f32(v);
        }
        for (float v : img.regions.locations.data()) {
            w.f32(v);
        }
        w.u32(static_cast<std::uint32_t>(img.labels.count()));
        for (std::size_t i = 0; i < img.labels.count(); ++i) {
            w.u32(img.labels.token_ids[i] | (img.labels.is_attribute[i] ? kAttributeBit : 0U));
        }
    }
    w.u32(static_cast<std::uint32_t>(c.captions.size()));
    for (const auto& cap : c.captions) {
        if (cap.tokens.size() > 0xFFFF) {
            throw FormatError("caption too long for u16 token count");
        }
        w.u32(cap.image);
        w.u16(static_cast<std::uint16_t>(cap.tokens.size()));
        for (TermId t : cap.tokens) {
            w.u32(t);
        }
    }
    return seal(std::move(w).bytes());
}

inline CaptionedCorpus parse_corpus(const Bytes& bytes)
{
    ByteReader r(bytes, sealed_body_size(bytes));
    r.expect_magic("VSPF");
    const auto version = r.u32();
    if (version != kCorpusVersion) {
        throw FormatError("unsupported corpus version " + std::to_string(version));
    }
    CaptionedCorpus c;
    const std::uint32_t num_images = r.u32();
    const std::uint32_t vocab_size = r.u32();
    c.d_rcnn = r.u32();
    r.need_items(vocab_size, 2);
    std::vector<std::string> tokens;
    tokens.reserve(vocab_size);
    for (std::uint32_t i = 0; i < vocab_size; ++i) {
        tokens.push_back(r.str16());
    }
    try {
        c.vocab = Vocabulary(std::move(tokens));
    } catch (const VocabError& e) {
        throw CorruptDataError(std::string("vocabulary: ") + e.what());
    }
    r.need_items(num_images, 2 + 4 + 4);
    c.images.reserve(num_images);
    for (std::uint32_t i = 0; i < num_images; ++i) {
        ImageInput img;
        img.image_id = r.str16();
        const std::uint32_t n = r.u32();
        r.need_items(n, 4 * (static_cast<std::uint64_t>(c.d_rcnn) + kLocationDims));
        std::vector<float> visual(static_cast<std::size_t>(n) * c.d_rcnn);
        for (auto& v : visual) {
            v = r.f32();
        }
        std::vector<float> loc(static_cast<std::size_t>(n) * kLocationDims);
        for (auto& v : loc) {
            v = r.f32();
        }
        img.regions.visual = Matrix<float>(n, c.d_rcnn, std::move(visual));
        img.regions.locations = Matrix<float>(n, kLocationDims, std::move(loc));
        const std::uint32_t k = r.u32();
        r.need_items(k, 4);
        for (std::uint32_t j = 0; j < k; ++j) {
            const std::uint32_t raw = r.u32();
            img.labels.token_ids.push_back(raw & ~kAttributeBit);
            img.labels.is_attribute.push_back((raw & kAttributeBit) != 0);
        }
        c.images.push_back(std::move(img));
    }
    const std::uint32_t num_captions = r.u32();
    r.need_items(num_captions, 6);
    c.captions.reserve(num_captions);
    for (std::uint32_t i = 0; i < num_captions; ++i) {
        Caption cap;
        cap.image = r.u32();
        const std::uint16_t m = r.u16();
        r.need_items(m, 4);
        cap.tokens.resize(m);
        for (auto& t : cap.tokens) {
            t = r.u32();
        }
        c.captions.push_back(std::move(cap));
    }
    if (!r.at_end()) {
        throw CorruptDataError("trailing bytes after captions block");
    }
    validate(c);
    verify_seal(bytes);
    return c;
}

inline void save_corpus(const CaptionedCorpus& c, const std::string& path)
{
    write_file(path, serialize_corpus(c));
}

inline CaptionedCorpus load_corpus(const std::string& path)
{
    return parse_corpus(read_file(path));
}

enum class CaptionSplit { all, train, heldout };

/// Deterministic split: the last caption of every image that has two or more
/// captions is held out; everything else is training data.
inline std::vector<Caption> select_captions(const CaptionedCorpus& c, CaptionSplit split)
{
    if (split == CaptionSplit::all) {
        return c.captions;
    }
    std::vector<std::size_t> count(c.images.size(), 0);
    std::vector<std::size_t> last(c.images.size(), 0);
    for (std::size_t i = 0; i < c.captions.size(); ++i) {
        ++count[c.captions[i].image];
        last[c.captions[i].image] = i;
    }
    std::vector<Caption> out;
    for (std::size_t i = 0; i < c.captions.size(); ++i) {
        const auto img = c.captions[i].image;
        const bool held = count[img] >= 2 && last[img] == i;
        if (held == (split == CaptionSplit::heldout)) {
            out.push_back(c.captions[i]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct CountRange {
    std::size_t min = 0;
    std::size_t max = 0;
};

struct SyntheticConfig {
    std::uint64_t seed = 7;
    std::size_t num_images = 200;
    std::size_t vocab_size = 500;
    std::size_t d_rcnn = 64;
    CountRange regions{3, 6};
    CountRange labels{2, 6};
    std::size_t captions_per_image = 5;
};

/// Ground truth planted by the generator. Every vocabulary term t owns a latent
/// vector u_t; the planted linear map sends it to the visual code u_t * map, and
/// a region depicting object t carries that code plus noise.
struct PlantedStructure {
    Matrix<float> term_latents;  ///< |V| x d_latent
    Matrix<float> map;           ///< d_latent x d_rcnn
    Matrix<float> term_codes;    ///< |V| x d_rcnn  (= term_latents * map)
    std::vector<std::vector<TermId>> image_objects;
    std::vector<TermId> function_words;
    std::vector<TermId> attributes;
    std::vector<TermId> objects;
};

struct SyntheticCorpus {
    CaptionedCorpus corpus;
    PlantedStructure planted;
};

namespace detail {

inline const std::vector<std::string>& function_word_list()
{
    static const std::vector<std::string> words{
        "a",  "the",  "on",   "of",  "in",   "with", "and",  "near", "at",    "by",
        "is", "two",  "an",   "some", "its", "over", "under", "next", "to",   "from"};
    return words;
}

inline const std::vector<std::string>& attribute_word_list()
{
    static const std::vector<std::string> words{
        "red",   "blue",  "green",  "white",  "black", "yellow", "small", "large",
        "wooden", "old",  "young",  "tall",   "striped", "metal", "bright", "dark",
        "open",  "empty", "busy",   "wet"};
    return words;
}

inline const std::vector<std::string>& object_word_list()
{
    static const std::vector<std::string> words{
        "bus",    "street", "dog",    "cat",    "man",     "woman",   "car",    "tree",
        "table",  "plate",  "pizza",  "train",  "horse",   "boat",    "bird",   "kite",
        "clock",  "chair",  "bench",  "sign",   "road",    "window",  "building", "grass",
        "water",  "sky",    "child",  "umbrella", "bicycle", "truck", "shirt",  "hat",
        "ball",   "field",  "beach",  "wave",   "book",    "cup",     "phone",  "sink",
        "bed",    "couch",  "laptop", "bowl",   "banana",  "apple",   "sheep",  "cow",
        "giraffe", "zebra", "elephant", "surfboard", "skateboard", "fence", "door", "wall"};
    return words;
}

inline std::vector<std::string> pool_words(const std::vector<std::string>& base,
                                           std::string_view prefix, std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < base.size()) {
            out.push_back(base[i]);
        } else {
            out.push_back(std::string(prefix) + std::to_string(i));
        }
    }
    return out;
}

inline std::size_t uniform_in(std::mt19937_64& rng, const CountRange& r)
{
    return std::uniform_int_distribution<std::size_t>(r.min, r.max)(rng);
}

inline std::string image_name(std::size_t i)
{
    std::string digits = std::to_string(i);
    if (digits.size() < 6) {
        digits.insert(0, 6 - digits.size(), '0');
    }
    return "img" + digits;
}

}  // namespace detail

/// Deterministic synthetic corpus with a planted, learnable relevance structure.
///
/// The vocabulary is split into function words (caption noise, never depicted),
/// attributes and objects. Each image depicts a distinct set of objects, one per
/// region; a region's visual vector is its object's planted code plus half its
/// attribute's code plus Gaussian noise. The detector labels a random subset of
/// regions (attribute token, then object token) and mislabels objects at a fixed
/// rate, so labels are informative but incomplete. Captions name up to three of
/// the image's objects, sometimes an attribute, plus function words; the object
/// set of every caption is chosen so that no other image depicts all of it.
inline SyntheticCorpus generate_synthetic_with_truth(const SyntheticConfig& cfg)
{
    if (cfg.vocab_size < 10) {
        throw ConfigError("vocab_size must be at least 10");
    }
    if (cfg.num_images < 1) {
        throw ConfigError("num_images must be at least 1");
    }
    if (cfg.d_rcnn < 1) {
        throw ConfigError("d_rcnn must be at least 1");
    }
    if (cfg.regions.min < 1 || cfg.regions.min > cfg.regions.max) {
        throw ConfigError("regions range must satisfy 1 <= min <= max");
    }
    if (cfg.labels.min > cfg.labels.max) {
        throw ConfigError("labels range must satisfy min <= max");
    }
    const std::size_t num_function = std::max<std::size_t>(2, cfg.vocab_size / 20);
    const std::size_t num_attr = std::max<std::size_t>(2, cfg.vocab_size / 10);
    const std::size_t num_obj = cfg.vocab_size - num_function - num_attr;
    if (cfg.regions.max > num_obj) {
        throw ConfigError("regions.max exceeds the number of object terms ("
                          + std::to_string(num_obj) + ")");
    }

    constexpr float kNoise = 0.3F;
    constexpr float kAttributeMix = 0.5F;
    constexpr double kMislabelRate = 0.3;
    constexpr double kCaptionAttributeRate = 0.5;
    constexpr std::size_t kCaptionObjects = 3;
    constexpr int kUniquenessAttempts = 32;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<float> gauss(0.0F, 1.0F);

    SyntheticCorpus out;
    auto& planted = out.planted;
    auto& corpus = out.corpus;

    std::vector<std::string> tokens;
    for (auto& w : detail::pool_words(detail::function_word_list(), "fw", num_function)) {
        planted.function_words.push_back(static_cast<TermId>(tokens.size()));
        tokens.push_back(std::move(w));
    }
    for (auto& w : detail::pool_words(detail::attribute_word_list(), "attr", num_attr)) {
        planted.attributes.push_back(static_cast<TermId>(tokens.size()));
        tokens.push_back(std::move(w));
    }
    for (auto& w : detail::pool_words(detail::object_word_list(), "obj", num_obj)) {
        planted.objects.push_back(static_cast<TermId>(tokens.size()));
        tokens.push_back(std::move(w));
    }
    corpus.vocab = Vocabulary(std::move(tokens));
    corpus.d_rcnn = cfg.d_rcnn;

    const std::size_t d = cfg.d_rcnn;
    planted.term_latents = Matrix<float>(cfg.vocab_size, d);
    for (auto& v : planted.term_latents.data()) {
        v = gauss(rng);
    }
    planted.map = Matrix<float>(d, d);
    const float map_scale = 1.0F / std::sqrt(static_cast<float>(d));
    for (auto& v : planted.map.data()) {
        v = gauss(rng) * map_scale;
    }
    planted.term_codes = matmul(planted.term_latents, planted.map);

    std::vector<TermId> region_attr;
    std::vector<std::vector<std::uint32_t>> images_with_object(cfg.vocab_size);
    std::vector<std::vector<TermId>> image_region_attr;
    for (std::size_t i = 0; i < cfg.num_images; ++i) {
        const std::size_t n = detail::uniform_in(rng, cfg.regions);
        std::vector<TermId> objs;
        std::sample(planted.objects.begin(), planted.objects.end(), std::back_inserter(objs), n,
                    rng);
        std::shuffle(objs.begin(), objs.end(), rng);

        ImageInput img;
        img.image_id = detail::image_name(i);
        img.regions.visual = Matrix<float>(n, d);
        img.regions.locations = Matrix<float>(n, kLocationDims);
        region_attr.assign(n, 0);
        for (std::size_t r = 0; r < n; ++r) {
            region_attr[r] = planted.attributes[std::uniform_int_distribution<std::size_t>(
                0, planted.attributes.size() - 1)(rng)];
            auto row = img.regions.visual.row(r);
            auto obj_code = planted.term_codes.row(objs[r]);
            auto attr_code = planted.term_codes.row(region_attr[r]);
            for (std::size_t j = 0; j < d; ++j) {
                row[j] = obj_code[j] + kAttributeMix * attr_code[j] + kNoise * gauss(rng);
            }
            constexpr double kW = 640.0;
            constexpr double kH = 480.0;
            Box box;
            box.xmin = std::floor(std::uniform_real_distribution<double>(0.0, kW - 32.0)(rng));
            box.ymin = std::floor(std::uniform_real_distribution<double>(0.0, kH - 32.0)(rng));
            box.xmax = std::min(
                kW, box.xmin + 32.0
                        + std::floor(std::uniform_real_distribution<double>(0.0, kW / 2)(rng)));
            box.ymax = std::min(
                kH, box.ymin + 32.0
                        + std::floor(std::uniform_real_distribution<double>(0.0, kH / 2)(rng)));
            auto loc = normalize_location(box, kW, kH);
            std::copy(loc.begin(), loc.end(), img.regions.locations.row(r).begin());
        }

        const std::size_t k = detail::uniform_in(rng, cfg.labels);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t r : order) {
            if (img.labels.count() >= k) {
                break;
            }
            img.labels.token_ids.push_back(region_attr[r]);
            img.labels.is_attribute.push_back(true);
            if (img.labels.count() >= k) {
                break;
            }
            TermId label = objs[r];
            if (std::bernoulli_distribution(kMislabelRate)(rng)) {
                label = planted.objects[std::uniform_int_distribution<std::size_t>(
                    0, planted.objects.size() - 1)(rng)];
            }
            img.labels.token_ids.push_back(label);
            img.labels.is_attribute.push_back(false);
        }

        for (TermId t : objs) {
            images_with_object[t].push_back(static_cast<std::uint32_t>(i));
        }
        image_region_attr.push_back(region_attr);
        planted.image_objects.push_back(std::move(objs));
        corpus.images.push_back(std::move(img));
    }

    auto depicted_elsewhere = [&](const std::vector<TermId>& chosen, std::size_t self) {
        for (std::uint32_t other : images_with_object[chosen.front()]) {
            if (other == self) {
                continue;
            }
            const auto& objs = planted.image_objects[other];
            bool all = std::all_of(chosen.begin(), chosen.end(), [&](TermId t) {
                return std::find(objs.begin(), objs.end(), t) != objs.end();
            });
            if (all) {
                return true;
            }
        }
        return false;
    };

    for (std::size_t i = 0; i < cfg.num_images; ++i) {
        const auto& objs = planted.image_objects[i];
        for (std::size_t c = 0; c < cfg.captions_per_image; ++c) {
            std::vector<std::size_t> picked;
            for (int attempt = 0; attempt < kUniquenessAttempts; ++attempt) {
                picked.clear();
                std::vector<std::size_t> idx(objs.size());
                std::iota(idx.begin(), idx.end(), 0);
                std::sample(idx.begin(), idx.end(), std::back_inserter(picked),
                            std::min(kCaptionObjects, objs.size()), rng);
                std::vector<TermId> chosen;
                for (auto r : picked) {
                    chosen.push_back(objs[r]);
                }
                if (!depicted_elsewhere(chosen, i)) {
                    break;
                }
            }
            Caption cap;
            cap.image = static_cast<std::uint32_t>(i);
            for (auto r : picked) {
                cap.tokens.push_back(objs[r]);
            }
            if (std::bernoulli_distribution(kCaptionAttributeRate)(rng)) {
                cap.tokens.push_back(image_region_attr[i][picked.front()]);
            }
            const std::size_t fillers = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
            for (std::size_t f = 0; f < fillers; ++f) {
                cap.tokens.push_back(planted.function_words[std::uniform_int_distribution<
                    std::size_t>(0, planted.function_words.size() - 1)(rng)]);
            }
            std::shuffle(cap.tokens.begin(), cap.tokens.end(), rng);
            corpus.captions.push_back(std::move(cap));
        }
    }
    return out;
}

inline CaptionedCorpus generate_synthetic(const SyntheticConfig& cfg)
{
    return generate_synthetic_with_truth(cfg).corpus;
}

}  // namespace vsparta
