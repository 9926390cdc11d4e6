// Copyright 2026 The simulst Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "run_config.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "simulst/error.h"
#include "simulst/metrics.h"
#include "temp_dir.h"

using namespace simulst;
using simulst::cli::RunConfig;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with `args`, stdout and stderr sent to `log`; returns the exit code.
int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + SIMULST_BINARY + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig =
    "size=40\n"
    "min_length=3\n"
    "max_length=5\n"
    "n_blocks=1\n"
    "layers_per_block=1\n"
    "d_model=16\n"
    "n_heads=2\n"
    "d_ff=32\n"
    "semantic_layers=1\n"
    "decoder_layers=1\n"
    "pretrain_epochs=1\n"
    "finetune_epochs=2\n"
    "average_last=2\n"
    "warmup_steps=10\n"
    "beam=2\n"
    "eval_k=1,inf\n"
    "eval_n=1,2\n"
    "eval_split=all\n";

}  // namespace

TEST_CASE("config defaults, overrides and errors") {
  RunConfig cfg;
  CHECK(cfg.get_double("blank_penalty_weight") == 0.5);
  CHECK(cfg.get_double("shrink_mu") == 1.0);
  CHECK(cfg.get_double("ctc_weight") == 1.0);
  CHECK(cfg.get_size("beam") == 5);
  CHECK(cfg.get_double("dropout") == 0.1);
  CHECK_NOTHROW(cfg.validate());

  cfg.set("wait_k=inf");
  CHECK(cfg.get_size("wait_k") == kWaitAll);
  cfg.set("eval_k", "1, 3,inf");
  CHECK(cfg.get_size_list("eval_k") == std::vector<std::size_t>{1, 3, kWaitAll});
  CHECK_THROWS_AS(cfg.set("no_such_key=1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("missing_equals"), ConfigError);
  cfg.set("beam=two");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.set("beam=5");
  cfg.set("eval_split=test");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  const auto model = RunConfig().model(16, 24, 24);
  CHECK(model.blank_penalty_weight == 0.5);
  CHECK(model.shrink.mu == 1.0);
  CHECK(model.wait_k == 3);
  CHECK(model.stride_n == 2);
}

TEST_CASE("config files report the failing line") {
  simulst::testing::TempDir dir;
  const auto path = dir.path() / "run.cfg";
  std::ofstream(path) << "# comment\nbeam = 3  # trailing\n\nbogus=1\n";
  RunConfig cfg;
  try {
    cfg.load_file(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:4") != std::string::npos);
  }
  CHECK(cfg.get_size("beam") == 3);
  CHECK_THROWS_AS(cfg.load_file(dir.path() / "absent.cfg"), IoError);
}

TEST_CASE("help lists every key with its default") {
  const auto help = cli::schema_help();
  for (const auto& k : cli::config_schema()) {
    CHECK_MESSAGE(help.find("  " + k.name + " ") != std::string::npos, k.name);
  }
  RunConfig cfg;
  std::istringstream dumped(cfg.dump());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(dumped, line)) ++lines;
  CHECK(lines == cli::config_schema().size());
}

TEST_CASE("command line recipe end to end") {
  simulst::testing::TempDir dir;
  const auto cfg = dir.path() / "tiny.cfg";
  std::ofstream(cfg) << kTinyConfig;
  const std::string c = "-c '" + cfg.string() + "' ";
  const auto log = dir.path() / "log.txt";
  const auto data = dir.path() / "data", again = dir.path() / "again", work = dir.path() / "work";

  REQUIRE(run(c + "gen-data -o '" + data.string() + "'", log) == 0);
  REQUIRE(run(c + "gen-data -o '" + again.string() + "'", log) == 0);
  for (const char* f : {"manifest.tsv", "source.vocab", "target.vocab"}) {
    CHECK(slurp(data / f) == slurp(again / f));
  }
  std::size_t feature_files = 0;
  for (const auto& e : fs::directory_iterator(data / "features")) {
    CHECK(slurp(e.path()) == slurp(again / "features" / e.path().filename()));
    ++feature_files;
  }
  CHECK(feature_files == 40);

  CHECK(run(c + "-s size=0 gen-data -o '" + (dir.path() / "empty").string() + "'", log) == 2);
  CHECK(run(c + "-s nope=1 print-config", log) == 2);
  CHECK(run(c + "print-config", log) == 0);
  CHECK(slurp(log).find("d_model=16") != std::string::npos);

  const std::string dw = "-d '" + data.string() + "' -w '" + work.string() + "'";
  REQUIRE(run(c + "pretrain " + dw, log) == 0);
  CHECK(fs::exists(work / "pretrain.ckpt"));
  CHECK(fs::exists(work / "pretrain.log.tsv"));
  REQUIRE(run(c + "finetune " + dw, log) == 0);
  CHECK(fs::exists(work / "finetune.epoch2.ckpt"));
  REQUIRE(fs::exists(work / "final.ckpt"));

  // A checkpoint from another architecture is rejected as a config error.
  CHECK(run(c + "-s d_model=32 evaluate -d '" + data.string() + "' -m '" + (work / "final.ckpt").string() + "'",
            log) == 2);

  const auto report = dir.path() / "eval.tsv", traces = dir.path() / "traces";
  REQUIRE(run(c + "evaluate -d '" + data.string() + "' -m '" + (work / "final.ckpt").string() + "' -o '" +
                  report.string() + "' --traces-dir '" + traces.string() + "'",
              log) == 0);
  std::istringstream rows(slurp(report));
  std::string line;
  std::size_t n_rows = 0;
  while (std::getline(rows, line)) n_rows += !line.empty();
  CHECK(n_rows == 1 + 4);
  CHECK(fs::exists(traces / "k1_n1.trace"));
  CHECK(fs::exists(traces / "kinf_n2.trace"));
  CHECK_NOTHROW(read_traces(traces / "k1_n1.trace"));

  const auto one = dir.path() / "one.trace";
  REQUIRE(run(c + "simulate -d '" + data.string() + "' -m '" + (work / "final.ckpt").string() + "' -o '" +
                  one.string() + "'",
              log) == 0);
  CHECK(read_traces(one).size() == 1);
}

TEST_CASE("score reproduces the hand-computed lagging") {
  simulst::testing::TempDir dir;
  const auto trace = dir.path() / "hand.trace";
  std::ofstream(trace) << "# utt=hand\n# src_frames=10\n# ts_ms=80\n# ref_len=5\n# lookahead_ms=140\n"
                          "# reference=a b c d e\n"
                          "0\tREAD\t1\n160\tWRITE\ta\n320\tWRITE\tb\n480\tWRITE\tc\n640\tWRITE\td\n800\tWRITE\te\n"
                          "800\tFINISH\t\n";
  const auto out = dir.path() / "score.tsv";
  REQUIRE(run("score -t '" + trace.string() + "' -o '" + out.string() + "'", dir.path() / "log.txt") == 0);
  const auto text = slurp(out);
  CHECK(text.find("BLEU=100\tAP=") != std::string::npos);
  CHECK(text.find("\tAL=300\n") != std::string::npos);

  std::ofstream(dir.path() / "bad.trace") << "0\tREAD\t1\n";
  CHECK(run("score -t '" + (dir.path() / "bad.trace").string() + "'", dir.path() / "log.txt") == 3);
  CHECK(run("score -t '" + (dir.path() / "absent.trace").string() + "'", dir.path() / "log.txt") != 0);
}
