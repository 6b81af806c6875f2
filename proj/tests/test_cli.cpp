#include <algorithm>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "odformer/cli.hpp"
#include "test_util.hpp"

namespace odf {
namespace {

using testing::TempDir;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, {out, err});
  return {code, out.str(), err.str()};
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

std::string tiny_config_json(std::size_t steps) {
  ModelConfig c;
  c.depths = {2, 2};
  c.heads = {2, 2};
  c.channels = 8;
  c.window = 4;
  c.decoder_channels = 8;
  c.input_side = 32;
  c.crop = 32;
  c.atrous_branches = 2;
  c.augment = false;
  c.steps = steps;
  c.eval_every = 2;
  c.seed = 4;
  return config_to_json(c).dump();
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

TEST(Cli, SynthWritesSplitManifest) {
  TempDir dir("cli_synth");
  CliRun r = run_cli({"synth", "--count", "10", "--size", "48", "--out", dir.file("a"), "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "8 train, 2 val"));
  auto samples = load_manifest(dir.file("a/manifest.jsonl"));
  ASSERT_EQ(samples.size(), 10u);
  EXPECT_EQ(select_split(samples, Split::train).size(), 8u);
  EXPECT_EQ(samples[9].split, Split::val);
  EXPECT_EQ(samples[0].width(), 48u);
}

TEST(Cli, SynthIsDeterministicPerSeed) {
  TempDir dir("cli_synth_det");
  for (const char* sub : {"a", "b"}) ASSERT_EQ(run_cli({"synth", "--count", "3", "--out", dir.file(sub)}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--count", "3", "--out", dir.file("c"), "--seed", "1"}).code, 0);
  for (const char* f : {"synth_0000.ppm", "synth_0002.pgm", "manifest.jsonl"})
    EXPECT_EQ(detail::read_file(dir.file(std::string("a/") + f)), detail::read_file(dir.file(std::string("b/") + f))) << f;
  EXPECT_NE(detail::read_file(dir.file("a/synth_0000.ppm")), detail::read_file(dir.file("c/synth_0000.ppm")));
}

TEST(Cli, SynthRejectsBadArguments) {
  TempDir dir("cli_synth_bad");
  EXPECT_EQ(run_cli({"synth", "--count", "0", "--out", dir.file("x")}).code, 2);
  EXPECT_EQ(run_cli({"synth", "--size", "16", "--out", dir.file("x")}).code, 2);
  EXPECT_EQ(run_cli({"synth", "--count", "two", "--out", dir.file("x")}).code, 2);
}

class CliTrained : public ::testing::Test {
 protected:
  static inline TempDir* dir = nullptr;
  static inline CliRun trained{};

  static void SetUpTestSuite() {
    dir = new TempDir("cli_trained");
    run_cli({"synth", "--count", "5", "--size", "32", "--out", dir->file("data"), "--seed", "9"});
    write_text(dir->file("tiny.json"), tiny_config_json(4));
    trained = run_cli({"train", "--manifest", dir->file("data/manifest.jsonl"), "--config", dir->file("tiny.json"),
                       "--out", dir->file("m.ckpt")});
  }
  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }
};

TEST_F(CliTrained, TrainWritesCheckpointLogAndReport) {
  ASSERT_EQ(trained.code, 0) << trained.err;
  EXPECT_TRUE(contains(trained.out, "best val IoU"));
  EXPECT_TRUE(contains(trained.out, "final val IoU"));
  EXPECT_TRUE(contains(trained.out, "4 train / 1 val"));
  EXPECT_NO_THROW(load_model(dir->file("m.ckpt")));
  const std::string log = detail::read_file(dir->file("m.ckpt.loss.csv"));
  EXPECT_EQ(count_lines(log), 5u);
  EXPECT_EQ(log.rfind("step,loss,lr\n", 0), 0u);
  EXPECT_TRUE(contains(detail::read_file(dir->file("m.ckpt.val.md")), "| ODFormer |"));
  EXPECT_EQ(count_lines(detail::read_file(dir->file("m.ckpt.val.csv"))), 2u);
}

TEST_F(CliTrained, InferKeepsInputExtents) {
  for (std::size_t side : {64u, 128u}) {
    const std::string img = dir->file("in" + std::to_string(side) + ".ppm");
    write_image(img, synth_fundus(side, side).image);
    const std::string out = dir->file("out" + std::to_string(side) + ".pgm");
    CliRun r = run_cli({"infer", "--ckpt", dir->file("m.ckpt"), "--image", img, "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    const Mask m = read_mask(out);
    EXPECT_EQ(m.height, side);
    EXPECT_EQ(m.width, side);
  }
  write_image(dir->file("odd.ppm"), synth_fundus(1, 36).image);
  EXPECT_EQ(run_cli({"infer", "--ckpt", dir->file("m.ckpt"), "--image", dir->file("odd.ppm"), "--out",
                     dir->file("odd.pgm")})
                .code,
            2);
}

TEST_F(CliTrained, CorruptCheckpointIsIoError) {
  std::string bytes = detail::read_file(dir->file("m.ckpt"));
  bytes[0] = 'Z';
  detail::write_file(dir->file("bad.ckpt"), bytes);
  write_image(dir->file("x.ppm"), synth_fundus(2, 32).image);
  CliRun r = run_cli({"infer", "--ckpt", dir->file("bad.ckpt"), "--image", dir->file("x.ppm"), "--out", dir->file("x.pgm")});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(contains(r.err, "magic"));
  detail::write_file(dir->file("short.ckpt"), detail::read_file(dir->file("m.ckpt")).substr(0, 100));
  EXPECT_EQ(run_cli({"eval", "--ckpt", dir->file("short.ckpt"), "--manifest", dir->file("data/manifest.jsonl")}).code, 3);
  EXPECT_EQ(run_cli({"eval", "--ckpt", dir->file("none.ckpt"), "--manifest", dir->file("data/manifest.jsonl")}).code, 3);
}

TEST_F(CliTrained, EvalPrintsMetricsAndWritesReport) {
  CliRun r = run_cli({"eval", "--ckpt", dir->file("m.ckpt"), "--manifest", dir->file("data/manifest.jsonl"), "--split",
                   "train", "--report", dir->file("rep.md")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "train (4 samples) IoU "));
  EXPECT_TRUE(contains(detail::read_file(dir->file("rep.md")), "| Model | IoU (%) | Fsc (%) | Acc (%) |"));
  EXPECT_EQ(detail::read_file(dir->file("rep.csv")).rfind("model,iou,fsc,acc\nODFormer,", 0), 0u);
  EXPECT_EQ(run_cli({"eval", "--ckpt", dir->file("m.ckpt"), "--manifest", dir->file("data/manifest.jsonl"), "--split",
                     "test"})
                .code,
            2);
}

TEST_F(CliTrained, ZeroLrWarnsAndKeepsInitialWeights) {
  CliRun r = run_cli({"train", "--manifest", dir->file("data/manifest.jsonl"), "--config", dir->file("tiny.json"), "--out",
                   dir->file("frozen.ckpt"), "--lr", "0", "--steps", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.err, "lr is 0"));
  Model init(parse_config(tiny_config_json(4)));
  std::map<std::string, NamedArray> saved;
  for (auto& a : load_checkpoint(dir->file("frozen.ckpt"))) saved[a.name] = a;
  for (const auto& p : init.parameters()) {
    ASSERT_TRUE(saved.count(p.name)) << p.name;
    EXPECT_EQ(saved[p.name].values, to_array(p.name, p.tensor).values) << p.name;
  }
}

TEST_F(CliTrained, ParticipantLeakIsWarned) {
  write_image(dir->file("p.ppm"), synth_fundus(3, 32).image);
  write_mask(dir->file("p.pgm"), synth_fundus(3, 32).mask);
  write_text(dir->file("leak.jsonl"),
             "{\"image\":\"p.ppm\",\"mask\":\"p.pgm\",\"split\":\"train\",\"id\":\"a\",\"participant\":\"P1\"}\n"
             "{\"image\":\"p.ppm\",\"mask\":\"p.pgm\",\"split\":\"val\",\"id\":\"b\",\"participant\":\"P1\"}\n");
  CliRun r = run_cli({"train", "--manifest", dir->file("leak.jsonl"), "--config", dir->file("tiny.json"), "--out",
                   dir->file("leak.ckpt"), "--steps", "1"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.err, "participant P1 appears in both splits"));
}

TEST(Cli, InvalidConfigNamesField) {
  TempDir dir("cli_cfg");
  write_text(dir.file("bad.json"), "{\"window\": 0}");
  write_text(dir.file("m.jsonl"), "");
  CliRun r = run_cli({"train", "--manifest", dir.file("m.jsonl"), "--config", dir.file("bad.json"), "--out", dir.file("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "window")) << r.err;
  write_text(dir.file("broken.json"), "{\"window\": ");
  EXPECT_EQ(
      run_cli({"train", "--manifest", dir.file("m.jsonl"), "--config", dir.file("broken.json"), "--out", dir.file("o")}).code,
      3);
}

TEST(Cli, ParseErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"gradcheck", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({"infer", "--ckpt", "x"}).code, 2);
  CliRun help = run_cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_TRUE(contains(help.out, "synth"));
}

TEST(Cli, GradcheckExitCodesAndDeterminism) {
  CliRun a = run_cli({"gradcheck"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(contains(a.out, "cases passed"));
  CliRun b = run_cli({"gradcheck"});
  EXPECT_EQ(a.out, b.out);
  CliRun strict = run_cli({"gradcheck", "--tol", "1e-12"});
  EXPECT_EQ(strict.code, 1);
  EXPECT_TRUE(contains(strict.err, "worst op: "));
  EXPECT_EQ(run_cli({"gradcheck", "--tol", "0"}).code, 2);
}

// Trains the desk model to memorize two samples, then segments one through
// the CLI.
TEST(Cli, OverfitModelSegmentsTrainingImage) {
  TempDir dir("cli_overfit");
  for (std::size_t i = 0; i < 2; ++i) {
    FundusSample s = synth_fundus(500 + i, 64);
    write_image(dir.file("s" + std::to_string(i) + ".ppm"), s.image);
    write_mask(dir.file("s" + std::to_string(i) + ".pgm"), s.mask);
  }
  std::string manifest;
  for (const char* split : {"train", "val"})
    for (int i = 0; i < 2; ++i)
      manifest += format_manifest_line({"s" + std::to_string(i) + ".ppm", "s" + std::to_string(i) + ".pgm",
                                        parse_split(split, "test"), std::string(split) + std::to_string(i), ""}) +
                  "\n";
  write_text(dir.file("m.jsonl"), manifest);
  ModelConfig cfg = ModelConfig::desk();
  cfg.augment = false;
  write_text(dir.file("cfg.json"), config_to_json(cfg).dump());
  CliRun t = run_cli({"train", "--manifest", dir.file("m.jsonl"), "--config", dir.file("cfg.json"), "--out", dir.file("m.ckpt")});
  ASSERT_EQ(t.code, 0) << t.err;
  CliRun r = run_cli({"infer", "--ckpt", dir.file("m.ckpt"), "--image", dir.file("s0.ppm"), "--out", dir.file("p.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  ConfusionCounts acc(2);
  update_confusion(read_mask(dir.file("p.pgm")), read_mask(dir.file("s0.pgm")), acc);
  EXPECT_GE(metrics(acc, 1).iou, 0.95);
}

}  // namespace
}  // namespace odf
