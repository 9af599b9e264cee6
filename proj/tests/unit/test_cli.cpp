#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "ctxattn_cli_test"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    ASSERT_EQ(run_in(root() / "setup", "synth --out-dir " + (root() / "data").string() +
                                           " --train-docs 4 --episodes 1 --test-pairs 6 --max-distance 2"),
              0);
    ASSERT_EQ(train("base", "--regime baseline"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }

  static int run_in(const fs::path& report_dir, const std::string& args) {
    fs::create_directories(report_dir);
    const std::string cmd = "CTXATTN_REPORT_DIR='" + report_dir.string() + "' '" + CTXATTN_CLI + "' " + args +
                            " > '" + (report_dir / "stdout.txt").string() + "' 2> '" +
                            (report_dir / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string data(const std::string& name) { return (root() / "data" / name).string(); }

  static int train(const std::string& name, const std::string& extra) {
    return run_in(root() / name, "train --corpus " + data("train.txt") + " --scat " + data("scat.jsonl") +
                                     " --vocab " + data("vocab.txt") + " --out " + (root() / (name + ".ckpt")).string() +
                                     " --layers 1 --heads 2 --d-model 8 --d-ff 16 --steps 3 --batch-size 2"
                                     " --warmup 10 --context 2+2 --quiet " +
                                     extra);
  }

  static json report(const std::string& dir, const std::string& file) {
    std::ifstream in(root() / dir / file);
    return json::parse(in);
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
};

}  // namespace

TEST_F(Cli, VersionHelpAndUsageErrors) {
  EXPECT_EQ(run_in(root() / "v", "--version"), 0);
  EXPECT_EQ(run_in(root() / "v", "--help"), 0);
  EXPECT_EQ(run_in(root() / "v", ""), 1);
  EXPECT_EQ(run_in(root() / "v", "frobnicate"), 1);
  EXPECT_EQ(run_in(root() / "v", "train --no-such-flag"), 1);
  EXPECT_EQ(run_in(root() / "v", "scat-stats --scat /nonexistent/file.jsonl"), 1);
}

TEST_F(Cli, BaselineReportsZeroLambda) {
  const auto r = report("base", "train_report.json");
  EXPECT_EQ(r["command"], "train");
  EXPECT_EQ(r["regime"], "baseline");
  EXPECT_EQ(r["lambda"], 0.0);
  EXPECT_EQ(r["p_scat"], 0.0);
  EXPECT_EQ(r["steps_completed"], 3);
  EXPECT_TRUE(r.contains("config_hash"));
  EXPECT_TRUE(r.contains("seed"));
  EXPECT_TRUE(fs::exists(root() / "base.ckpt"));
  EXPECT_TRUE(fs::exists(root() / "base" / "train_log.jsonl"));
}

TEST_F(Cli, AttnregPreWithoutInitIsAValidationError) {
  EXPECT_EQ(train("pre", "--regime attnreg-pre"), 1);
  EXPECT_NE(read(root() / "pre" / "stderr.txt").find("--init"), std::string::npos);
  EXPECT_EQ(train("pre2", "--regime attnreg-pre --init " + (root() / "base.ckpt").string()), 0);
  EXPECT_EQ(report("pre2", "train_report.json")["regime"], "attnreg-pre");
}

TEST_F(Cli, TrainingIsDeterministic) {
  ASSERT_EQ(train("det1", "--regime attnreg-rand --p-scat 0.5"), 0);
  ASSERT_EQ(train("det2", "--regime attnreg-rand --p-scat 0.5"), 0);
  EXPECT_EQ(report("det1", "train_report.json")["checkpoint_hash"],
            report("det2", "train_report.json")["checkpoint_hash"]);
  ASSERT_EQ(run_in(root() / "det3", "--seed 9 train --corpus " + data("train.txt") + " --scat " + data("scat.jsonl") +
                                        " --vocab " + data("vocab.txt") + " --out " + (root() / "det3.ckpt").string() +
                                        " --layers 1 --heads 2 --d-model 8 --d-ff 16 --steps 3 --batch-size 2"
                                        " --warmup 10 --context 2+2 --quiet --p-scat 0.5"),
            0);
  EXPECT_NE(report("det1", "train_report.json")["checkpoint_hash"],
            report("det3", "train_report.json")["checkpoint_hash"]);
}

TEST_F(Cli, ContrastiveRunsAllSixMasks) {
  ASSERT_EQ(run_in(root() / "con", "contrastive --checkpoint " + (root() / "base.ckpt").string() + " --set " +
                                       data("test.jsonl")),
            0);
  const auto r = report("con", "contrastive.json");
  ASSERT_EQ(r["results"].size(), 6u);
  std::vector<std::string> masks;
  for (const auto& row : r["results"]) masks.push_back(row["mask"]);
  EXPECT_EQ(masks, (std::vector<std::string>{"none", "supporting", "random:0.1", "source-context", "target-context",
                                             "all-context"}));
  EXPECT_EQ(r["pairs"], 6);
  EXPECT_TRUE(fs::exists(root() / "con" / "contrastive.csv"));
  EXPECT_EQ(run_in(root() / "con2", "contrastive --checkpoint " + (root() / "base.ckpt").string() + " --set " +
                                        data("test.jsonl") + " --mask everything"),
            1);
}

TEST_F(Cli, AlignAuditWritesGrid) {
  ASSERT_EQ(run_in(root() / "aa", "align-audit --checkpoint " + (root() / "base.ckpt").string() + " --scat " +
                                      data("scat.jsonl") + " --head-mode avg"),
            0);
  std::istringstream csv(read(root() / "aa" / "align_audit.csv"));
  std::string header;
  while (std::getline(csv, header) && header.rfind('#', 0) == 0) {
  }
  EXPECT_EQ(header, "type,layer,head,dot,kl,probes,count,skipped");
  EXPECT_TRUE(fs::exists(root() / "aa" / "align_audit.json"));
  EXPECT_EQ(run_in(root() / "aa2", "align-audit --checkpoint " + (root() / "base.ckpt").string() + " --scat " +
                                       data("scat.jsonl") + " --head-mode sideways"),
            1);
}

TEST_F(Cli, TranslateReportsScores) {
  ASSERT_EQ(run_in(root() / "tr", "translate --checkpoint " + (root() / "base.ckpt").string() + " --corpus " +
                                      data("train.txt") + " --mode non-gold --max-len 4"),
            0);
  const auto r = report("tr", "translate.json");
  for (const char* k : {"bleu", "f_target", "f_other", "mode", "sentences"}) EXPECT_TRUE(r.contains(k)) << k;
  EXPECT_GE(r["bleu"].get<double>(), 0.0);
  EXPECT_LE(r["bleu"].get<double>(), 100.0);
  EXPECT_EQ(r["mode"], "non-gold");
  EXPECT_TRUE(fs::exists(root() / "tr" / "hypotheses.tsv"));
}

TEST_F(Cli, ScatStatsCountsExamples) {
  ASSERT_EQ(run_in(root() / "st", "scat-stats --scat " + data("test.jsonl")), 0);
  const auto r = report("st", "scat_stats.json");
  EXPECT_EQ(r["examples"], 6);
  EXPECT_EQ(r["malformed"], 0);
  std::size_t total = 0;
  for (const auto& [k, v] : r["context_levels"].items()) total += v.get<std::size_t>();
  EXPECT_EQ(total, 6u);
}

TEST_F(Cli, ForgeWsdEdgeCases) {
  const auto dir = root() / "wsd";
  fs::create_directories(dir);
  std::ofstream(dir / "corpus.txt") << "### doc d\nthe nail\tle clou\n";
  std::ofstream(dir / "ann.txt") << "the|the|DET nail|nail|NOUN\tle|le clou|clou\n";
  std::ofstream(dir / "empty.txt") << "";
  std::ofstream(dir / "ali.txt") << "1-1\n";
  const std::string base = "forge-wsd --corpus " + (dir / "corpus.txt").string() + " --annotations " +
                           (dir / "ann.txt").string() + " --min-count 1";
  EXPECT_EQ(run_in(dir / "r1", base + " --alignments " + (dir / "empty.txt").string()), 0);
  EXPECT_NE(read(dir / "r1" / "stderr.txt").find("empty"), std::string::npos);
  EXPECT_EQ(report("wsd/r1", "forge_wsd.json")["examples"], 0);

  EXPECT_EQ(run_in(dir / "r2", base + " --alignments " + (dir / "ali.txt").string()), 0);
  EXPECT_NE(read(dir / "r2" / "stderr.txt").find("no review file"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "r2" / "wsd_groups.tsv"));
}

TEST_F(Cli, ConvertScatRelease) {
  const auto dir = root() / "conv";
  fs::create_directories(dir);
  std::ofstream(dir / "src.txt") << "I saw the <hon>cat<hoff> . <brk> <p>It</p> was asleep .\n";
  std::ofstream(dir / "tgt.txt") << "J'ai vu le <hon>chat<hoff> . <brk> <p>Il</p> dormait .\n";
  ASSERT_EQ(run_in(dir, "convert-scat --src " + (dir / "src.txt").string() + " --tgt " + (dir / "tgt.txt").string() +
                            " --out " + (dir / "out.jsonl").string()),
            0);
  EXPECT_EQ(report("conv", "convert_scat.json")["converted"], 1);
  const auto line = read(dir / "out.jsonl");
  EXPECT_NE(line.find("\"tgt_incorrect\":\"Elle dormait .\""), std::string::npos) << line;
}
