#include <vsparta/cli.hpp>

#include <gtest/gtest.h>

#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace vsparta {
namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::initializer_list<std::string> args)
{
    std::vector<std::string> owned{"vsparta"};
    owned.insert(owned.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : owned) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> result;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) {
        result.push_back(l);
    }
    return result;
}

// generate -> train -> encode -> index on a tiny corpus.
struct Pipeline {
    test::TempDir dir;
    std::string corpus = dir.file("c.vspf");
    std::string model = dir.file("m.vspm");
    std::string vectors = dir.file("v.vspv");
    std::string index = dir.file("i.vspi");
    std::string loss = dir.file("loss.csv");

    void build()
    {
        auto r = invoke({"generate", "--seed", "3", "--images", "40", "--vocab", "100", "--d-rcnn",
                         "16", "--out", corpus});
        ASSERT_EQ(r.code, 0) << r.err;
        r = invoke({"train", "--corpus", corpus, "--epochs", "2", "--batch-size", "8", "--d-h", "16",
                    "--layers", "1", "--heads", "2", "--seed", "5", "--out-model", model,
                    "--loss-csv", loss});
        ASSERT_EQ(r.code, 0) << r.err;
        r = invoke({"encode", "--corpus", corpus, "--model", model, "--out-vectors", vectors,
                    "--with-attention"});
        ASSERT_EQ(r.code, 0) << r.err;
        r = invoke({"index", "--vectors", vectors, "--out-index", index});
        ASSERT_EQ(r.code, 0) << r.err;
    }
};

TEST(Cli, NoCommandIsUsageError)
{
    EXPECT_EQ(invoke({}).code, 1);
    EXPECT_EQ(invoke({"frobnicate"}).code, 1);
}

TEST(Cli, HelpSucceeds)
{
    const auto r = invoke({"--help"});
    EXPECT_EQ(r.code, 0);
}

TEST(Cli, GenerateWritesLoadableCorpus)
{
    test::TempDir dir;
    const auto path = dir.file("c.vspf");
    const auto r = invoke({"generate", "--seed", "1", "--images", "12", "--vocab", "60", "--d-rcnn",
                           "8", "--out", path});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto corpus = load_corpus(path);
    EXPECT_EQ(corpus.images.size(), 12u);
    EXPECT_EQ(corpus.d_rcnn, 8u);
}

TEST(Cli, GenerateIsDeterministic)
{
    test::TempDir dir;
    for (const char* name : {"a.vspf", "b.vspf"}) {
        ASSERT_EQ(invoke({"generate", "--seed", "9", "--images", "10", "--vocab", "50", "--out",
                          dir.file(name)})
                      .code,
                  0);
    }
    EXPECT_EQ(slurp(dir.file("a.vspf")), slurp(dir.file("b.vspf")));
}

TEST(Cli, GenerateRejectsBadRange)
{
    test::TempDir dir;
    const auto r = invoke({"generate", "--regions", "6:3", "--out", dir.file("c.vspf")});
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, MissingOutputIsUsageError)
{
    EXPECT_EQ(invoke({"generate", "--images", "4"}).code, 1);
}

TEST(Cli, MissingInputFileIsDataError)
{
    test::TempDir dir;
    const auto r = invoke({"train", "--corpus", dir.file("absent.vspf"), "--out-model",
                           dir.file("m.vspm")});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST(Cli, UnknownSettingNamesTheKey)
{
    Pipeline p;
    ASSERT_EQ(invoke({"generate", "--images", "8", "--vocab", "40", "--out", p.corpus}).code, 0);
    const auto r = invoke({"train", "--corpus", p.corpus, "--out-model", p.model, "--set",
                           "warp_factor=9", "--batch-size", "4"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("warp_factor"), std::string::npos);
}

TEST(Cli, SettingOverridesAreApplied)
{
    Pipeline p;
    ASSERT_EQ(invoke({"generate", "--images", "8", "--vocab", "40", "--d-rcnn", "8", "--out",
                      p.corpus})
                  .code,
              0);
    const auto r = invoke({"train", "--corpus", p.corpus, "--out-model", p.model, "--epochs", "1",
                           "--batch-size", "4", "--set", "d_hidden=8", "--set", "num_layers=0", "--set", "num_heads=1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto model = load_model(p.model);
    EXPECT_EQ(model.config.d_hidden, 8u);
    EXPECT_EQ(model.config.num_layers, 0u);
}

TEST(Cli, AblationFlagsAreExclusive)
{
    Pipeline p;
    ASSERT_EQ(invoke({"generate", "--images", "8", "--vocab", "40", "--out", p.corpus}).code, 0);
    const auto r = invoke({"train", "--corpus", p.corpus, "--out-model", p.model, "--no-visual",
                           "--no-labels", "--batch-size", "4"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("no-"), std::string::npos);
}

TEST(Cli, InvalidHyperparameterIsUsageError)
{
    Pipeline p;
    ASSERT_EQ(invoke({"generate", "--images", "8", "--vocab", "40", "--out", p.corpus}).code, 0);
    EXPECT_EQ(invoke({"train", "--corpus", p.corpus, "--out-model", p.model, "--d-h", "15",
                      "--heads", "2", "--batch-size", "4"})
                  .code,
              1);
    const auto r = invoke({"train", "--corpus", p.corpus, "--out-model", p.model, "--lr", "-1",
                           "--batch-size", "4"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.find("training captions"), std::string::npos);
}

TEST(Cli, FullPipeline)
{
    Pipeline p;
    p.build();

    const auto csv = lines(slurp(p.loss));
    ASSERT_EQ(csv.size(), 3u);
    EXPECT_EQ(csv[0], "epoch,mean_loss");
    EXPECT_EQ(csv[1].rfind("1,", 0), 0u);

    const auto sr = invoke({"search", "--index", p.index, "--query", "the", "--k", "5"});
    ASSERT_EQ(sr.code, 0) << sr.err;
    const auto corpus = load_corpus(p.corpus);
    // Query with a real caption so there are hits.
    std::string q;
    for (TermId t : corpus.captions.front().tokens) {
        q += corpus.vocab.token(t) + " ";
    }
    const auto hit = invoke({"search", "--index", p.index, "--query", q, "--k", "3"});
    ASSERT_EQ(hit.code, 0) << hit.err;
    const auto rows = lines(hit.out);
    ASSERT_FALSE(rows.empty());
    ASSERT_LE(rows.size(), 3u);
    double previous = 1e300;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::istringstream in(rows[i]);
        std::string rank, id, score;
        ASSERT_TRUE(std::getline(in, rank, '\t'));
        ASSERT_TRUE(std::getline(in, id, '\t'));
        ASSERT_TRUE(std::getline(in, score, '\t'));
        EXPECT_EQ(std::stoul(rank), i + 1);
        EXPECT_FALSE(id.empty());
        EXPECT_LE(std::stod(score), previous);
        previous = std::stod(score);
    }

    const auto ev = invoke({"eval", "--index", p.index, "--corpus", p.corpus, "--out-csv",
                            p.dir.file("eval.csv")});
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto ev_rows = lines(ev.out);
    ASSERT_EQ(ev_rows.size(), 3u);
    EXPECT_EQ(ev_rows[0].rfind("R@1\t", 0), 0u);
    EXPECT_EQ(lines(slurp(p.dir.file("eval.csv"))).front(), "k,recall");

    const auto be = invoke({"bench", "--index", p.index, "--corpus", p.corpus, "--count", "50",
                            "--warmup", "5", "--out-csv", p.dir.file("bench.csv")});
    ASSERT_EQ(be.code, 0) << be.err;
    EXPECT_NE(be.out.find("qps\t"), std::string::npos);
    EXPECT_EQ(lines(slurp(p.dir.file("bench.csv"))).front(), "index_size,top_n,qps,mean_ms,p99_ms");

    const auto sw = invoke({"sweep", "--vectors", p.vectors, "--corpus", p.corpus, "--ns", "5,all",
                            "--rounds", "1", "--count", "20", "--out-csv", p.dir.file("sweep.csv")});
    ASSERT_EQ(sw.code, 0) << sw.err;
    EXPECT_EQ(lines(sw.out).size(), 3u);
    EXPECT_EQ(lines(slurp(p.dir.file("sweep.csv"))).front(), "n,r1,r5,r10,latency_ms,qps");

    const auto ex = invoke({"explain", "--vectors", p.vectors, "--image-id",
                            corpus.images.front().image_id, "--query", q});
    ASSERT_EQ(ex.code, 0) << ex.err;
    for (const auto& row : lines(ex.out)) {
        std::istringstream in(row);
        std::string token, weight, attended;
        ASSERT_TRUE(std::getline(in, token, '\t'));
        ASSERT_TRUE(std::getline(in, weight, '\t'));
        ASSERT_TRUE(std::getline(in, attended, '\t'));
        EXPECT_GE(std::stod(weight), 0.0);
        EXPECT_NE(attended, "-");  // encoded with attention
    }
}

TEST(Cli, OutOfVocabularyTokensWarn)
{
    Pipeline p;
    p.build();
    const auto r = invoke({"search", "--index", p.index, "--query", "zzzqqq"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("zzzqqq"), std::string::npos);
    EXPECT_TRUE(r.out.empty());
}

TEST(Cli, SearchValidatesArguments)
{
    Pipeline p;
    p.build();
    EXPECT_EQ(invoke({"search", "--index", p.index}).code, 1);
    EXPECT_EQ(invoke({"search", "--index", p.index, "--query", "a", "--k", "0"}).code, 1);
}

TEST(Cli, VocabularyMismatchIsDataError)
{
    Pipeline p;
    p.build();
    const auto other = p.dir.file("other.vspf");
    ASSERT_EQ(invoke({"generate", "--seed", "99", "--images", "10", "--vocab", "70", "--out", other})
                  .code,
              0);
    EXPECT_EQ(invoke({"eval", "--index", p.index, "--corpus", other}).code, 2);
    EXPECT_EQ(invoke({"encode", "--corpus", other, "--model", p.model, "--out-vectors",
                      p.dir.file("x.vspv")})
                  .code,
              2);
    EXPECT_EQ(invoke({"sweep", "--vectors", p.vectors, "--corpus", other}).code, 2);
}

TEST(Cli, CorruptIndexIsDataError)
{
    Pipeline p;
    p.build();
    {
        std::ofstream out(p.index, std::ios::binary | std::ios::trunc);
        out << "VSPI garbage";
    }
    EXPECT_EQ(invoke({"search", "--index", p.index, "--query", "a"}).code, 2);
}

TEST(Cli, ExplainUnknownImageIsDataError)
{
    Pipeline p;
    p.build();
    EXPECT_EQ(invoke({"explain", "--vectors", p.vectors, "--image-id", "no-such-image", "--query",
                      "a"})
                  .code,
              2);
}

TEST(Cli, BenchQuerySourcesAreExclusive)
{
    Pipeline p;
    p.build();
    const auto qfile = p.dir.file("q.txt");
    std::ofstream(qfile) << "a\n";
    EXPECT_EQ(invoke({"bench", "--index", p.index, "--corpus", p.corpus, "--queries-file", qfile})
                  .code,
              1);
}

TEST(Cli, PipelineIsDeterministic)
{
    Pipeline a, b;
    a.build();
    b.build();
    EXPECT_EQ(slurp(a.model), slurp(b.model));
    EXPECT_EQ(slurp(a.vectors), slurp(b.vectors));
    EXPECT_EQ(slurp(a.index), slurp(b.index));
}

}  // namespace
}  // namespace vsparta
