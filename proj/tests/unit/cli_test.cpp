#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <cli.hpp>
#include <contextclip/errors.hpp>

using namespace contextclip;
using namespace contextclip::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

RunResult invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliWorkspace : public ::testing::Test {
  protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("contextclip_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = dir / "small.cfg";
        std::ofstream os(config);
        os << "# small model\n"
              "n_classes = 4\nn_pairs = 80\nd_img = 16\nvocab_size = 32\n"
              "tokens_per_caption = 6\nclass_token_block = 4\n"
              "d_hid = 12\nd_i = 10\nd_emb = 8\nd_t = 9\nd_e = 6\n"
              "epochs = 2\nbatch_size = 16\nlr_image = 1e-3\nlr_text = 1e-3\nk = 3\n";
    }
    void TearDown() override { fs::remove_all(dir); }

    RunResult cmd(const std::string& sub, const fs::path& out, std::vector<std::string> extra = {}) {
        std::vector<std::string> args{sub, "--config", config.string(), "--out", out.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return invoke(args);
    }

    fs::path dir;
    fs::path config;
};

TEST(ParseArgs, ReadsEveryFlag) {
    const std::vector<std::string> args{"train", "--seed", "9", "--out", "o", "--corpus", "c.jsonl", "--checkpoint",
                                        "k.txt", "--alpha", "0.25", "--epochs", "4", "--k", "2", "--config", "x.cfg"};
    const Command c = parse_args(args);
    EXPECT_EQ(c.kind, Subcommand::train);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.out, fs::path("o"));
    EXPECT_EQ(c.corpus, fs::path("c.jsonl"));
    EXPECT_EQ(c.checkpoint, fs::path("k.txt"));
    EXPECT_EQ(c.alpha, 0.25);
    EXPECT_EQ(c.epochs, 4u);
    EXPECT_EQ(c.k, 2u);
    EXPECT_EQ(c.config, fs::path("x.cfg"));
}

TEST(ParseArgs, KnowsEverySubcommand) {
    for (Subcommand s : {Subcommand::gen_data, Subcommand::train, Subcommand::fine_tune, Subcommand::grad_check,
                         Subcommand::eval_zeroshot, Subcommand::eval_retrieve, Subcommand::project,
                         Subcommand::compare}) {
        const std::vector<std::string> args{std::string(subcommand_name(s))};
        EXPECT_EQ(parse_args(args).kind, s);
        EXPECT_FALSE(parse_args(args).seed.has_value());
    }
}

TEST(ParseArgs, RejectsBadCommandLines) {
    EXPECT_THROW(parse_args(std::vector<std::string>{}), UsageError);
    EXPECT_THROW(parse_args(std::vector<std::string>{"fly"}), UsageError);
    EXPECT_THROW(parse_args(std::vector<std::string>{"train", "--bogus"}), UsageError);
    EXPECT_THROW(parse_args(std::vector<std::string>{"train", "--seed", "abc"}), UsageError);
    EXPECT_THROW(parse_args(std::vector<std::string>{"train", "stray"}), UsageError);
}

TEST(Settings, DefaultsShareTheSeed) {
    const Settings s = default_settings();
    EXPECT_EQ(s.seed, 7u);
    EXPECT_EQ(s.corpus.seed, 7u);
    EXPECT_EQ(s.train.seed, 7u);
    EXPECT_EQ(s.dims.d_img, s.corpus.d_img);
    EXPECT_EQ(s.dims.vocab_size, s.corpus.vocab_size);
}

TEST(Settings, WrittenSettingsReadBack) {
    Settings s = default_settings();
    apply_setting(s, "alpha", "0.3");
    apply_setting(s, "use_contextual", "false");
    apply_setting(s, "query", "9 10 11");
    std::stringstream ss;
    write_settings(ss, s);
    Settings back;
    read_settings(ss, back);
    std::stringstream again;
    write_settings(again, back);
    EXPECT_EQ(ss.str(), again.str());
    EXPECT_EQ(back.train.loss.alpha, 0.3);
    EXPECT_FALSE(back.train.use_contextual);
    EXPECT_EQ(back.query, (std::vector<int>{9, 10, 11}));
}

TEST(Settings, RejectsUnknownKeysAndBadValues) {
    Settings s;
    EXPECT_THROW(apply_setting(s, "colour", "red"), ConfigError);
    EXPECT_THROW(apply_setting(s, "epochs", "many"), ConfigError);
    EXPECT_THROW(apply_setting(s, "shuffle", "maybe"), ConfigError);
    std::istringstream missing_eq("epochs 3\n");
    EXPECT_THROW(read_settings(missing_eq, s), ConfigError);
}

TEST(Settings, FlagsOverrideConfigFile) {
    const fs::path path = fs::temp_directory_path() / "contextclip_cli_override.cfg";
    std::ofstream(path) << "seed = 3\nalpha = 0.1\nepochs = 9\n";
    Command c;
    c.config = path;
    c.alpha = 0.7;
    const Settings s = resolve_settings(c);
    EXPECT_EQ(s.seed, 3u);
    EXPECT_EQ(s.corpus.seed, 3u);
    EXPECT_EQ(s.train.loss.alpha, 0.7);
    EXPECT_EQ(s.train.epochs, 9u);
    fs::remove(path);
}

TEST(Run, ExitCodes) {
    EXPECT_EQ(invoke({}).code, kExitUsage);
    EXPECT_EQ(invoke({"fly"}).code, kExitUsage);
    EXPECT_EQ(invoke({"train", "--nope"}).code, kExitUsage);
    const RunResult help = invoke({"--help"});
    EXPECT_EQ(help.code, kExitOk);
    EXPECT_NE(help.out.find("usage: contextclip"), std::string::npos);
    const RunResult missing = invoke({"eval-zeroshot", "--checkpoint", "/nonexistent/ckpt.txt"});
    EXPECT_EQ(missing.code, kExitData);
    EXPECT_FALSE(missing.err.empty());
    EXPECT_EQ(invoke({"train", "--config", "/nonexistent/x.cfg"}).code, kExitData);
}

TEST_F(CliWorkspace, BadConfigValueIsAUsageExit) {
    std::ofstream(config, std::ios::app) << "batch_size = 0\n";
    EXPECT_EQ(cmd("gen-data", dir / "a").code, kExitUsage);
}

TEST_F(CliWorkspace, GradCheckPasses) {
    const RunResult r = cmd("grad-check", dir / "g");
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("loss,max_rel_error"), std::string::npos);
}

TEST_F(CliWorkspace, PipelineWritesEveryArtifact) {
    const fs::path out = dir / "run";
    ASSERT_EQ(cmd("gen-data", out).code, kExitOk);
    const RunResult trained = cmd("train", out);
    ASSERT_EQ(trained.code, kExitOk) << trained.err;
    EXPECT_EQ(cmd("eval-zeroshot", out).code, kExitOk);
    EXPECT_EQ(cmd("eval-retrieve", out).code, kExitOk);
    EXPECT_EQ(cmd("project", out).code, kExitOk);
    EXPECT_EQ(cmd("fine-tune", out).code, kExitOk);
    for (const char* name : {"corpus.jsonl", "checkpoint.txt", "loss_history.csv", "zeroshot.csv",
                             "zeroshot_predictions.csv", "retrieval.csv", "projection.csv",
                             "fine_tuned_checkpoint.txt", "fine_tune.csv"}) {
        EXPECT_TRUE(fs::exists(out / name)) << name;
    }
    EXPECT_EQ(slurp(out / "loss_history.csv").rfind("epoch,L,L_CLIP,L_CX\n1,", 0), 0u);
    EXPECT_EQ(slurp(out / "zeroshot.csv").rfind("metric,value\ntop1,", 0), 0u);
    EXPECT_NE(slurp(out / "zeroshot.csv").find("\ntop3,"), std::string::npos);
    EXPECT_EQ(slurp(out / "projection.csv").rfind("id,class,x,y\n", 0), 0u);
}

TEST_F(CliWorkspace, RetrievalForAConfiguredQuery) {
    const fs::path out = dir / "q";
    ASSERT_EQ(cmd("gen-data", out).code, kExitOk);
    ASSERT_EQ(cmd("train", out).code, kExitOk);
    std::ofstream(config, std::ios::app) << "query = 9 10 11 12\n";
    ASSERT_EQ(cmd("eval-retrieve", out).code, kExitOk);
    const std::string csv = slurp(out / "retrieval.csv");
    EXPECT_EQ(csv.rfind("rank,id,class,score\n1,", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(CliWorkspace, MissingCorpusIsADataExit) {
    const RunResult r = cmd("train", dir / "none", {"--corpus", (dir / "absent.jsonl").string()});
    EXPECT_EQ(r.code, kExitData);
}

TEST_F(CliWorkspace, OutputsAreByteReproducible) {
    for (const char* run_dir : {"r1", "r2"}) {
        ASSERT_EQ(cmd("gen-data", dir / run_dir).code, kExitOk);
        ASSERT_EQ(cmd("train", dir / run_dir).code, kExitOk);
        ASSERT_EQ(cmd("eval-zeroshot", dir / run_dir).code, kExitOk);
    }
    for (const char* name : {"corpus.jsonl", "checkpoint.txt", "loss_history.csv", "zeroshot.csv"}) {
        EXPECT_EQ(slurp(dir / "r1" / name), slurp(dir / "r2" / name)) << name;
    }
}

TEST_F(CliWorkspace, CompareTableHasBothColumns) {
    const RunResult r = cmd("compare", dir / "c");
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const std::string csv = slurp(dir / "c" / "compare.csv");
    EXPECT_EQ(csv.rfind("metric,alpha0,alpha05\nrecall_at_1,", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_EQ(csv, r.out);
}

}  // namespace
