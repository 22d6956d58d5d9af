#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <promptforge/promptforge.hpp>

namespace fs = std::filesystem;
using promptforge::json;

namespace
{
    struct Outcome
    {
        int code = -1;
        std::string out, err;
    };

    std::string slurp(const fs::path& p)
    {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    std::vector<json> jsonl(const fs::path& p)
    {
        std::vector<json> out;
        std::ifstream in(p);
        for (std::string line; std::getline(in, line);)
            if (!line.empty())
                out.push_back(json::parse(line));
        return out;
    }

    /// Fresh scratch directory per test.
    class Cli : public ::testing::Test
    {
    protected:
        void SetUp() override
        {
            auto name = ::testing::UnitTest::GetInstance()->current_test_info()->name();
            dir_      = fs::temp_directory_path() / ("pf_cli_" + std::to_string(::getpid()) + "_" + name);
            fs::remove_all(dir_);
            fs::create_directories(dir_);
        }
        void TearDown() override
        {
            fs::remove_all(dir_);
        }

        Outcome run(const std::string& args)
        {
            auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
            auto cmd = std::string(PF_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
            int status = std::system(cmd.c_str());
            return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
        }

        static std::string sample(const std::string& rel)
        {
            return (fs::path(PF_SAMPLES_DIR) / rel).string();
        }

        /// Writes a config into the scratch directory; paths should be absolute.
        std::string config(const json& j, const std::string& name = "config.json")
        {
            auto p = dir_ / name;
            std::ofstream(p) << j.dump(2);
            return p.string();
        }

        json sentiment_config() const
        {
            return {{"task", "sentiment"},
                    {"train", sample("sentiment/train.jsonl")},
                    {"test", sample("sentiment/test.jsonl")},
                    {"pipeline", {{"n_prompts", 3}, {"k", 1}, {"strategy", "random"}}},
                    {"backend", {{"kind", "scripted"}, {"script", sample("sentiment/script.jsonl")}}},
                    {"rationales", (dir_ / "rationales.tsv").string()},
                    {"seed", 13},
                    {"output_dir", (dir_ / "out").string()}};
        }

        fs::path dir_;
    };
} // namespace

TEST_F(Cli, RunThenEvalOnSentimentSample)
{
    auto cfg = sample("sentiment/config.json");
    auto out = (dir_ / "out").string();
    auto r   = run("run -c " + cfg + " --output-dir " + out);
    ASSERT_EQ(r.code, 0) << r.err;
    auto preds = jsonl(dir_ / "out/predictions.jsonl");
    EXPECT_EQ(preds.size(), 5u);
    EXPECT_EQ(jsonl(dir_ / "out/ledger.jsonl").size(), 15u); // N=3 x 5 instances

    auto e = run("eval -c " + cfg + " -p " + out + "/predictions.jsonl --json " + (dir_ / "report.json").string());
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("accuracy"), std::string::npos);
    auto report = json::parse(slurp(dir_ / "report.json"));
    EXPECT_EQ(report["metrics"][0]["metric"], "accuracy");
    EXPECT_EQ(report["metrics"][0]["value"], 1.0);
    EXPECT_EQ(report["metrics"][0]["total"], 5);
}

TEST_F(Cli, NerSampleMatchesGold)
{
    auto cfg = sample("ner/config.json");
    auto out = (dir_ / "out").string();
    ASSERT_EQ(run("run -c " + cfg + " --output-dir " + out).code, 0);
    auto e = run("eval -c " + cfg + " -p " + out + "/predictions.jsonl --json " + (dir_ / "r.json").string());
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(json::parse(slurp(dir_ / "r.json"))["metrics"][0]["value"], 1.0);
}

TEST_F(Cli, RunsAreByteIdentical)
{
    auto cfg = sample("sentiment/config.json");
    ASSERT_EQ(run("run -c " + cfg + " --workers 4 --output-dir " + (dir_ / "a").string()).code, 0);
    ASSERT_EQ(run("run -c " + cfg + " --workers 1 --output-dir " + (dir_ / "b").string()).code, 0);
    EXPECT_EQ(slurp(dir_ / "a/predictions.jsonl"), slurp(dir_ / "b/predictions.jsonl"));
    EXPECT_EQ(slurp(dir_ / "a/ledger.jsonl"), slurp(dir_ / "b/ledger.jsonl"));
}

TEST_F(Cli, CacheRerunIsAllHits)
{
    auto cfg   = sample("sentiment/config.json");
    auto cache = (dir_ / "cache.tsv").string();
    ASSERT_EQ(run("run -c " + cfg + " --cache " + cache + " --output-dir " + (dir_ / "a").string()).code, 0);
    ASSERT_EQ(run("run -c " + cfg + " --cache " + cache + " --output-dir " + (dir_ / "b").string()).code, 0);
    for (const auto& e : jsonl(dir_ / "a/ledger.jsonl"))
        EXPECT_FALSE(e["cached"].get<bool>());
    auto second = jsonl(dir_ / "b/ledger.jsonl");
    ASSERT_EQ(second.size(), 15u);
    for (const auto& e : second)
        EXPECT_TRUE(e["cached"].get<bool>());
    EXPECT_EQ(slurp(dir_ / "a/predictions.jsonl"), slurp(dir_ / "b/predictions.jsonl"));

    auto l = run("cache list " + cache);
    EXPECT_EQ(l.code, 0);
    // identical prompts collapse into one entry each; 15 calls, at most 15 entries
    EXPECT_NE(l.out.find("entries "), std::string::npos);
    EXPECT_EQ(run("cache clear " + cache).code, 4);
    EXPECT_TRUE(fs::exists(cache));
    EXPECT_EQ(run("cache clear --yes " + cache).code, 0);
    EXPECT_FALSE(fs::exists(cache));
}

TEST_F(Cli, FlagsOverrideConfig)
{
    auto r = run("run -c " + sample("sentiment/config.json") + " --n-prompts 1 --output-dir " + (dir_ / "o").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(jsonl(dir_ / "o/ledger.jsonl").size(), 5u);
}

TEST_F(Cli, KnnRetrievalWithEmbeddingStores)
{
    auto r = run("run -c " + sample("sentiment/config_knn.json") + " --output-dir " + (dir_ / "o").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(jsonl(dir_ / "o/predictions.jsonl").size(), 5u);
}

TEST_F(Cli, EvalMissingOrUnknownIdExitsThree)
{
    auto cfg = sample("sentiment/config.json");
    ASSERT_EQ(run("run -c " + cfg + " --output-dir " + (dir_ / "o").string()).code, 0);
    auto preds = jsonl(dir_ / "o/predictions.jsonl");
    {
        std::ofstream out(dir_ / "missing.jsonl");
        for (std::size_t i = 0; i + 1 < preds.size(); ++i)
            out << preds[i].dump() << '\n';
    }
    auto r = run("eval -c " + cfg + " -p " + (dir_ / "missing.jsonl").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("te-5"), std::string::npos) << r.err;

    {
        std::ofstream out(dir_ / "extra.jsonl");
        for (const auto& p : preds)
            out << p.dump() << '\n';
        auto ghost  = preds[0];
        ghost["id"] = "ghost";
        out << ghost.dump() << '\n';
    }
    r = run("eval -c " + cfg + " -p " + (dir_ / "extra.jsonl").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("ghost"), std::string::npos);
}

TEST_F(Cli, HalfCorrectSentimentIsHalf)
{
    {
        std::ofstream t(dir_ / "test.jsonl");
        for (int i = 0; i < 4; ++i)
            t << json{{"id", "h" + std::to_string(i)}, {"text", "x"}, {"gold", {{"label", i % 2 ? "negative" : "positive"}}}}.dump()
              << '\n';
        std::ofstream p(dir_ / "preds.jsonl");
        for (int i = 0; i < 4; ++i)
            p << json{{"id", "h" + std::to_string(i)}, {"payload", {{"label", "positive"}}}}.dump() << '\n';
    }
    auto j    = sentiment_config();
    j["test"] = (dir_ / "test.jsonl").string();
    auto r    = run("eval -c " + config(j) + " -p " + (dir_ / "preds.jsonl").string() + " --json "
                    + (dir_ / "r.json").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(slurp(dir_ / "r.json"))["metrics"][0]["value"], 0.5);
}

TEST_F(Cli, PrepareRationalesIsIdempotentAndReportsFailures)
{
    auto j                 = sentiment_config();
    j["backend"]["script"] = sample("sentiment/rationale_script.jsonl");
    auto cfg               = config(j);
    auto r                 = run("prepare-rationales -c " + cfg);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("generated 6"), std::string::npos) << r.out;
    promptforge::RationaleStore store((dir_ / "rationales.tsv").string());
    EXPECT_EQ(store.size(), 6u);

    r = run("prepare-rationales -c " + cfg);
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("generated 0, skipped 6"), std::string::npos) << r.out;

    // run with rationales shown in the demonstrations
    auto run_cfg = sentiment_config();
    auto o       = run("run -c " + config(run_cfg, "run.json") + " --with-rationale");
    EXPECT_EQ(o.code, 0) << o.err;
}

TEST_F(Cli, PrepareRationalesFailureKeepsPartialStore)
{
    {
        std::ofstream s(dir_ / "script.jsonl");
        std::ifstream in(sample("sentiment/rationale_script.jsonl"));
        for (std::string line; std::getline(in, line);)
        {
            auto rule = json::parse(line);
            if (rule["tag"]["instance"] == "tr-4")
            {
                rule.erase("response");
                rule["error"] = "unavailable";
            }
            s << rule.dump() << '\n';
        }
    }
    auto j                 = sentiment_config();
    j["backend"]["script"] = (dir_ / "script.jsonl").string();
    auto r                 = run("prepare-rationales -c " + config(j));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("tr-4"), std::string::npos) << r.err;
    EXPECT_EQ(promptforge::RationaleStore((dir_ / "rationales.tsv").string()).size(), 5u);
}

TEST_F(Cli, BackendFailureStopsRunWithTwo)
{
    auto j                 = sentiment_config();
    j["backend"]["script"] = sample("sentiment/rationale_script.jsonl"); // no classify rules
    auto r                 = run("run -c " + config(j));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("te-1"), std::string::npos) << r.err;
}

TEST_F(Cli, IngestEmbeddings)
{
    auto r = run("ingest-embeddings " + sample("sentiment/pool_vectors.txt"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("dim 8, count 6"), std::string::npos) << r.out;

    std::ofstream(dir_ / "bad.txt") << "dim=2 level=sentence provider=p\na\t-\t1 0\nb\t-\t1\n";
    r = run("ingest-embeddings " + (dir_ / "bad.txt").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrors)
{
    auto j        = sentiment_config();
    j["test"]     = (dir_ / "nope.jsonl").string();
    auto r        = run("run -c " + config(j));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("does not exist"), std::string::npos);

    auto k                        = sentiment_config();
    k["pipeline"]["strategy"]     = "knn_sentence";
    EXPECT_EQ(run("run -c " + config(k, "knn.json")).code, 1); // kNN without embeddings
    EXPECT_NE(run("frobnicate").code, 0);
}
