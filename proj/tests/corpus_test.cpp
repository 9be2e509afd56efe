#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <set>

#include "test_support.hpp"
#include "vsparta/corpus.hpp"

using namespace vsparta;

namespace {

SyntheticConfig small_config()
{
    SyntheticConfig cfg;
    cfg.num_images = 12;
    cfg.vocab_size = 60;
    cfg.d_rcnn = 8;
    cfg.captions_per_image = 3;
    return cfg;
}

void expect_location(const std::array<float, 6>& got, const std::array<float, 6>& want)
{
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(got[i], want[i], 1e-6) << "entry " << i;
    }
}

// Decodes each region back to the (object, attribute) pair whose planted code
// mix it is closest to, then counts caption objects the image depicts.
std::vector<std::vector<TermId>> decode_objects(const SyntheticCorpus& s)
{
    const auto& codes = s.planted.term_codes;
    const std::size_t d = codes.cols();
    std::vector<std::vector<TermId>> decoded;
    for (const auto& img : s.corpus.images) {
        std::vector<TermId> objs;
        for (std::size_t r = 0; r < img.regions.count(); ++r) {
            auto v = img.regions.visual.row(r);
            double best = std::numeric_limits<double>::infinity();
            TermId best_obj = 0;
            for (TermId o : s.planted.objects) {
                for (TermId a : s.planted.attributes) {
                    double dist = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double diff = v[j] - codes(o, j) - 0.5 * codes(a, j);
                        dist += diff * diff;
                    }
                    if (dist < best) {
                        best = dist;
                        best_obj = o;
                    }
                }
            }
            objs.push_back(best_obj);
        }
        decoded.push_back(std::move(objs));
    }
    return decoded;
}

}  // namespace

TEST(Tokenize, LowercasesAndStripsPunctuation)
{
    EXPECT_EQ(tokenize("  A Red-bus, on the STREET! "),
              (std::vector<std::string>{"a", "redbus", "on", "the", "street"}));
    EXPECT_TRUE(tokenize(" ,. ").empty());
}

TEST(Vocabulary, DenseIdsAndLookup)
{
    Vocabulary v({"red", "bus", "street"});
    EXPECT_EQ(v.size(), 3U);
    EXPECT_EQ(v.find("bus"), TermId{1});
    EXPECT_FALSE(v.find("car").has_value());
    EXPECT_EQ(v.token(2), "street");
}

TEST(Vocabulary, RejectsBadTokens)
{
    EXPECT_THROW(Vocabulary({"a", "a"}), VocabError);
    EXPECT_THROW(Vocabulary({"Red"}), VocabError);
    EXPECT_THROW(Vocabulary({"two words"}), VocabError);
    EXPECT_THROW(Vocabulary({""}), VocabError);
}

TEST(Vocabulary, HashSeparatesTokenBoundaries)
{
    EXPECT_NE(Vocabulary({"ab", "c"}).hash(), Vocabulary({"a", "bc"}).hash());
    EXPECT_EQ(Vocabulary({"x", "y"}).hash(), Vocabulary({"x", "y"}).hash());
}

TEST(TokenizeQuery, DropsUnknownWords)
{
    Vocabulary v({"red", "bus"});
    const auto q = tokenize_query(v, "Red bus on street");
    EXPECT_EQ(q.ids, (std::vector<TermId>{0, 1}));
    EXPECT_EQ(q.dropped, (std::vector<std::string>{"on", "street"}));
}

TEST(NormalizeLocation, HandComputedBoxes)
{
    expect_location(normalize_location({0, 0, 320, 240}, 640, 480), {0.0F, 0.5F, 0.0F, 0.5F, 0.5F, 0.5F});
    expect_location(normalize_location({0, 0, 640, 480}, 640, 480), {0, 1, 0, 1, 1, 1});
    expect_location(normalize_location({64, 48, 640, 480}, 640, 480), {0.1F, 1.0F, 0.1F, 1.0F, 0.9F, 0.9F});
}

TEST(NormalizeLocation, GeometryErrors)
{
    EXPECT_THROW(normalize_location({10, 10, 10, 20}, 640, 480), GeometryError);
    EXPECT_THROW(normalize_location({10, 20, 30, 20}, 640, 480), GeometryError);
    EXPECT_THROW(normalize_location({-1, 0, 30, 20}, 640, 480), GeometryError);
    EXPECT_THROW(normalize_location({0, 0, 641, 20}, 640, 480), GeometryError);
    EXPECT_THROW(normalize_location({0, 0, 10, 10}, 0, 480), GeometryError);
}

TEST(CorpusFile, RoundTripIsIdentity)
{
    test::TempDir dir;
    const auto corpus = generate_synthetic(small_config());
    save_corpus(corpus, dir.file("c.vspf"));
    const auto loaded = load_corpus(dir.file("c.vspf"));
    EXPECT_EQ(loaded, corpus);
    EXPECT_EQ(serialize_corpus(loaded), serialize_corpus(corpus));
}

TEST(CorpusFile, AttributeFlagsSurvive)
{
    const auto corpus = generate_synthetic(small_config());
    bool any_attr = false;
    for (const auto& img : corpus.images) {
        any_attr = any_attr || std::count(img.labels.is_attribute.begin(), img.labels.is_attribute.end(), true) > 0;
    }
    ASSERT_TRUE(any_attr);
    EXPECT_EQ(parse_corpus(serialize_corpus(corpus)).images, corpus.images);
}

TEST(CorpusFile, TruncationIsCorruptData)
{
    const auto bytes = serialize_corpus(generate_synthetic(small_config()));
    for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{20}, std::size_t{5}}) {
        Bytes part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(parse_corpus(part), CorruptDataError) << cut;
    }
}

TEST(CorpusFile, BadMagicAndVersionAreFormatErrors)
{
    auto bytes = serialize_corpus(generate_synthetic(small_config()));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(parse_corpus(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_THROW(parse_corpus(bad_version), FormatError);
    EXPECT_THROW(load_corpus("/nonexistent/dir/c.vspf"), FormatError);
}

TEST(CorpusFile, OutOfRangeLocationNamesImage)
{
    auto corpus = generate_synthetic(small_config());
    corpus.images[3].regions.locations(0, 1) = 1.5F;
    const auto bytes = serialize_corpus(corpus);
    try {
        parse_corpus(bytes);
        FAIL() << "expected CorruptDataError";
    } catch (const CorruptDataError& e) {
        EXPECT_NE(std::string(e.what()).find(corpus.images[3].image_id), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("locations"), std::string::npos) << e.what();
    }
}

TEST(CorpusFile, TrailingBytesRejected)
{
    auto bytes = serialize_corpus(generate_synthetic(small_config()));
    bytes.push_back(0);
    EXPECT_THROW(parse_corpus(bytes), CorruptDataError);
}

TEST(CorpusFile, EverySingleByteFlipIsRejected)
{
    const auto bytes = serialize_corpus(generate_synthetic(small_config()));
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        auto bad = bytes;
        bad[i] ^= 0x5A;
        EXPECT_THROW(parse_corpus(bad), Error) << "byte " << i;
    }
}

TEST(Checksum, FooterDetectsChangedPayload)
{
    const Bytes body{'a', 'b', 'c'};
    auto sealed = seal(body);
    ASSERT_EQ(sealed.size(), body.size() + kChecksumBytes);
    EXPECT_NO_THROW(verify_seal(sealed));
    sealed[1] = 'x';
    EXPECT_THROW(verify_seal(sealed), CorruptDataError);
    EXPECT_THROW(verify_seal(Bytes{1, 2, 3}), CorruptDataError);
}

TEST(Validate, CatchesInvariantViolations)
{
    const auto good = generate_synthetic(small_config());
    EXPECT_NO_THROW(validate(good));

    auto dup = good;
    dup.images[1].image_id = dup.images[0].image_id;
    EXPECT_THROW(validate(dup), CorruptDataError);

    auto bad_caption = good;
    bad_caption.captions[0].image = 999;
    EXPECT_THROW(validate(bad_caption), CorruptDataError);

    auto empty_caption = good;
    empty_caption.captions[0].tokens.clear();
    EXPECT_THROW(validate(empty_caption), CorruptDataError);

    auto bad_label = good;
    bad_label.images[0].labels.token_ids.push_back(60);
    bad_label.images[0].labels.is_attribute.push_back(false);
    EXPECT_THROW(validate(bad_label), CorruptDataError);

    auto inconsistent = good;
    inconsistent.images[0].regions.locations(0, 4) += 0.01F;
    EXPECT_THROW(validate(inconsistent), CorruptDataError);
}

TEST(Synthetic, DeterministicUnderSeed)
{
    const auto a = serialize_corpus(generate_synthetic(small_config()));
    const auto b = serialize_corpus(generate_synthetic(small_config()));
    EXPECT_EQ(a, b);
    auto other = small_config();
    other.seed = 8;
    EXPECT_NE(serialize_corpus(generate_synthetic(other)), a);
}

TEST(Synthetic, SingleImageOwnsEveryCaption)
{
    auto cfg = small_config();
    cfg.num_images = 1;
    const auto c = generate_synthetic(cfg);
    ASSERT_EQ(c.captions.size(), cfg.captions_per_image);
    for (const auto& cap : c.captions) {
        EXPECT_EQ(cap.image, 0U);
    }
}

TEST(Synthetic, RespectsConfiguredShapes)
{
    auto cfg = small_config();
    cfg.regions = {2, 4};
    cfg.labels = {0, 3};
    const auto c = generate_synthetic(cfg);
    EXPECT_EQ(c.vocab.size(), cfg.vocab_size);
    EXPECT_EQ(c.images.size(), cfg.num_images);
    EXPECT_EQ(c.captions.size(), cfg.num_images * cfg.captions_per_image);
    std::set<std::string> ids;
    for (const auto& img : c.images) {
        EXPECT_GE(img.regions.count(), 2U);
        EXPECT_LE(img.regions.count(), 4U);
        EXPECT_LE(img.labels.count(), 3U);
        EXPECT_EQ(img.regions.visual.cols(), cfg.d_rcnn);
        ids.insert(img.image_id);
    }
    EXPECT_EQ(ids.size(), c.images.size());
}

TEST(Synthetic, LocationRowsSatisfyInvariants)
{
    auto cfg = small_config();
    cfg.num_images = 100;
    const auto c = generate_synthetic(cfg);
    for (const auto& img : c.images) {
        for (std::size_t r = 0; r < img.regions.count(); ++r) {
            auto l = img.regions.locations.row(r);
            for (float v : l) {
                ASSERT_GE(v, 0.0F);
                ASSERT_LE(v, 1.0F);
            }
            ASSERT_NEAR(l[4], l[1] - l[0], 1e-6);
            ASSERT_NEAR(l[5], l[3] - l[2], 1e-6);
        }
    }
}

TEST(Synthetic, ConfigErrors)
{
    auto cfg = small_config();
    cfg.vocab_size = 9;
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
    cfg = small_config();
    cfg.num_images = 0;
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
    cfg = small_config();
    cfg.regions = {5, 2};
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
    cfg = small_config();
    cfg.labels = {4, 1};
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
    cfg = small_config();
    cfg.regions = {0, 2};
    EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

// The planted map is a brute-force retriever: decode every region to its
// object, then score a caption by how many of its objects the image shows.
TEST(Synthetic, PlantedMapOracleRetrievesEveryTrainingCaption)
{
    SyntheticConfig cfg;  // seed 7, 200 images, vocab 500
    const auto s = generate_synthetic_with_truth(cfg);
    const auto decoded = decode_objects(s);
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        ASSERT_EQ(decoded[i], s.planted.image_objects[i]) << "image " << i;
    }

    const std::set<TermId> objects(s.planted.objects.begin(), s.planted.objects.end());
    std::size_t hits = 0;
    const auto captions = select_captions(s.corpus, CaptionSplit::train);
    for (const auto& cap : captions) {
        std::size_t best_image = 0;
        long best_score = -1;
        for (std::size_t i = 0; i < decoded.size(); ++i) {
            long score = 0;
            for (TermId t : cap.tokens) {
                if (objects.count(t) != 0
                    && std::find(decoded[i].begin(), decoded[i].end(), t) != decoded[i].end()) {
                    ++score;
                }
            }
            if (score > best_score) {  // strict: ties go to the earlier image
                best_score = score;
                best_image = i;
            }
        }
        hits += best_image == cap.image ? 1 : 0;
    }
    EXPECT_EQ(hits, captions.size());
}

TEST(CaptionSplit, LastCaptionOfEachImageIsHeldOut)
{
    const auto c = generate_synthetic(small_config());
    const auto train = select_captions(c, CaptionSplit::train);
    const auto held = select_captions(c, CaptionSplit::heldout);
    EXPECT_EQ(train.size() + held.size(), c.captions.size());
    EXPECT_EQ(held.size(), c.images.size());
    for (std::size_t i = 0; i < held.size(); ++i) {
        EXPECT_EQ(held[i], c.captions[3 * i + 2]);
    }
    EXPECT_EQ(select_captions(c, CaptionSplit::all), c.captions);

    auto one = small_config();
    one.captions_per_image = 1;
    const auto single = generate_synthetic(one);
    EXPECT_TRUE(select_captions(single, CaptionSplit::heldout).empty());
}
