#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "pali/cli/cli.hpp"
#include "pali/model/checkpoint.hpp"

using namespace pali;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("pali_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_text(path("small.json"), R"({"corpus": {"num_scenes": 200, "eval_per_task": 4}})");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string save_init_checkpoint(const std::string& name, std::uint64_t seed) const {
    Checkpoint<double> ckpt;
    const auto model = PaliModel<double>::init(ModelConfig::preset("toy"), seed);
    ckpt.config = model.config;
    ckpt.params = model.params;
    save_checkpoint(path(name), ckpt);
    return path(name);
  }

  fs::path dir_;
};

}  // namespace

TEST(RunConfig, DefaultsValidateAndRoundTrip) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  const nlohmann::json j = c;
  const auto back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(RunConfig, PartialConfigKeepsDefaults) {
  const auto c = nlohmann::json::parse(R"({"seed": 9, "pretrain": {"phase2": {"steps": 7}}})").get<RunConfig>();
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.corpus.seed, 9u);
  EXPECT_EQ(c.phase2.steps, 7);
  EXPECT_EQ(c.phase1.steps, RunConfig{}.phase1.steps);
  EXPECT_EQ(nlohmann::json(c.model), nlohmann::json(ModelConfig::preset("toy")));
}

TEST(RunConfig, ErrorsCarryFieldPaths) {
  auto field_of = [](const std::string& text) {
    try {
      nlohmann::json::parse(text).get<RunConfig>().validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(field_of(R"({"model": {"encdec": {"heads": -1}}})"), "model.encdec.heads");
  EXPECT_EQ(field_of(R"({"eval": {"tasks": ["vqa", "retrieval"]}})"), "eval.tasks");
  EXPECT_EQ(field_of(R"({"eval": {"beam": 0}})"), "eval.beam");
  EXPECT_EQ(field_of(R"({"pretrain": {"phase1": {"resolution": 112}}})"), "pretrain.phase1.resolution");
  EXPECT_EQ(field_of(R"({"pretrain": {"phase2": {"resolution": 100}}})"), "pretrain.phase2.resolution");
  EXPECT_EQ(field_of(R"({"finetune": {"preset": "nope"}})"), "finetune.preset");
  EXPECT_EQ(field_of(R"({"seed": 1, "corpus": {"seed": 2}})"), "corpus.seed");
  EXPECT_EQ(field_of(R"({"seed": "one"})"), "seed");
  EXPECT_EQ(field_of(R"({"unknown": 1})"), "unknown");
}

TEST(RunConfig, DivideStepsKeepsSchedulesValid) {
  RunConfig c;
  c.divide_steps(10);
  EXPECT_EQ(c.phase1.steps, 100);
  EXPECT_EQ(c.phase2.steps, 10);
  EXPECT_EQ(c.phase2.schedule.total_steps, 10);
  EXPECT_EQ(c.finetune.resolved_steps(), 20);
  EXPECT_NO_THROW(c.validate());
  RunConfig tiny;
  tiny.divide_steps(1000000);
  EXPECT_EQ(tiny.phase1.steps, 1);
  EXPECT_EQ(tiny.phase2.steps, 1);
  EXPECT_EQ(tiny.finetune.resolved_steps(), 1);
  EXPECT_NO_THROW(tiny.validate());
}

TEST_F(CliTest, SoupOfIdenticalCheckpointsEqualsInput) {
  const auto ckpt = save_init_checkpoint("a.ckpt", 11);
  const auto r = run({"soup", "--checkpoints", ckpt, ckpt, "--out", path("soup")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto in = load_checkpoint<double>(ckpt);
  const auto out = load_checkpoint<double>(path("soup/soup.ckpt"));
  EXPECT_EQ(nlohmann::json(out.config), nlohmann::json(in.config));
  ASSERT_EQ(out.params.names(), in.params.names());
  for (const auto& name : in.params.names()) EXPECT_TRUE(out.params.value(name).bit_equal(in.params.value(name))) << name;
}

TEST_F(CliTest, SoupOfTwoSeedsIsTheirMean) {
  const auto a = save_init_checkpoint("a.ckpt", 1);
  const auto b = save_init_checkpoint("b.ckpt", 2);
  ASSERT_EQ(run({"soup", "--checkpoints", a, b, "--out", path("soup")}).code, 0);
  const auto pa = load_checkpoint<double>(a).params;
  const auto pb = load_checkpoint<double>(b).params;
  const auto ps = load_checkpoint<double>(path("soup/soup.ckpt")).params;
  for (const auto& name : pa.names()) {
    const auto x = pa.value(name).values(), y = pb.value(name).values(), s = ps.value(name).values();
    for (std::size_t i = 0; i < s.size(); ++i) ASSERT_EQ(s[i], (x[i] + y[i]) / 2) << name;
  }
}

TEST_F(CliTest, BeamOneMatchesGreedy) {
  const auto ckpt = save_init_checkpoint("m.ckpt", 3);
  for (const char* scene : {"0", "7", "42"}) {
    const auto greedy = run({"generate", "--checkpoint", ckpt, "--scene", scene, "--out", path("greedy")});
    const auto beam1 = run({"generate", "--checkpoint", ckpt, "--scene", scene, "--beam", "1", "--out", path("beam1")});
    ASSERT_EQ(greedy.code, 0) << greedy.err;
    ASSERT_EQ(beam1.code, 0) << beam1.err;
    EXPECT_EQ(greedy.out, beam1.out);
    EXPECT_EQ(slurp(path("greedy/generation.json")), slurp(path("beam1/generation.json")));
  }
  const auto beam3 = run({"generate", "--checkpoint", ckpt, "--beam", "3", "--out", path("beam3")});
  ASSERT_EQ(beam3.code, 0) << beam3.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(path("beam3/generation.json"))).at("decode_mode"), "beam3");
}

TEST_F(CliTest, ClassifyWritesFullRanking) {
  const auto ckpt = save_init_checkpoint("m.ckpt", 4);
  const auto r = run({"classify", "--checkpoint", ckpt, "--scene", "3", "--classes", "ring,kite,cube", "--out", path("k")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("k/classification.json")));
  ASSERT_EQ(j.at("ranking").size(), 3u);
  EXPECT_EQ(r.out, j.at("ranking")[0].at("class").get<std::string>() + "\n");
}

TEST_F(CliTest, ExitCodeTaxonomy) {
  auto r = run({"evaluate", "--checkpoint", path("missing.ckpt"), "--corpus", path("nocorpus"), "--out", path("e")});
  EXPECT_EQ(r.code, kExitMissingArtifact);
  EXPECT_EQ(r.err.rfind("error[artifact] ", 0), 0u) << r.err;

  write_text(path("bad.json"), R"({"model": {"vit": {"heads": 0}}})");
  r = run({"build-corpus", "--config", path("bad.json"), "--out", path("c")});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_EQ(r.err, "error[config] model.vit.heads: must be positive, got 0\n");

  write_text(path("broken.json"), "{ not json");
  EXPECT_EQ(run({"build-corpus", "--config", path("broken.json"), "--out", path("c")}).code, kExitConfig);
  EXPECT_EQ(run({"build-corpus", "--config", path("absent.json"), "--out", path("c")}).code, kExitMissingArtifact);
  EXPECT_EQ(run({"build-corpus"}).code, kExitConfig);
  EXPECT_EQ(run({"no-such-command"}).code, kExitConfig);
  EXPECT_EQ(run({"--help"}).code, kExitOk);

  // A NaN weight makes the training loss non-finite.
  ASSERT_EQ(run({"build-corpus", "--config", path("small.json"), "--out", path("corpus")}).code, 0);
  auto ckpt = load_checkpoint<double>(save_init_checkpoint("nan.ckpt", 5));
  ckpt.params.value("encdec.lm_head").values()[0] = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint(path("nan.ckpt"), ckpt);
  r = run({"finetune", "--checkpoint", path("nan.ckpt"), "--corpus", path("corpus"), "--config", path("small.json"),
           "--steps-divisor", "10000", "--out", path("ft")});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
  EXPECT_EQ(r.err.rfind("error[numeric] ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, BinaryReportsExitCodes) {
  const std::string bin = PALI_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int raw = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(raw);
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("generate --checkpoint " + path("none.ckpt") + " --out " + path("g")), kExitMissingArtifact);
  EXPECT_EQ(status("build-corpus --out " + path("c") + " --threads 0"), kExitConfig);
}

TEST_F(CliTest, EffectiveConfigRevalidatesAndReproduces) {
  ASSERT_EQ(run({"build-corpus", "--config", path("small.json"), "--seed", "7", "--out", path("a")}).code, 0);
  const auto effective = path("a/effective_config.json");
  const auto c = load_run_config(effective);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.corpus.num_scenes, 200);
  ASSERT_EQ(run({"build-corpus", "--config", effective, "--out", path("b")}).code, 0);
  for (const char* f : {"effective_config.json", "manifest.json", "corpus.jsonl"}) {
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
  }
}

TEST_F(CliTest, BuildCorpusRerunIsByteIdentical) {
  ASSERT_EQ(run({"build-corpus", "--config", path("small.json"), "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"build-corpus", "--config", path("small.json"), "--out", path("b")}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), path("a"));
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 3u);
  const auto manifest = nlohmann::json::parse(slurp(path("a/manifest.json")));
  EXPECT_EQ(manifest.at("filtered"), 20);
}
