#include <doctest.h>

#include "eeg2rep/cli.hpp"

#include "test_util.hpp"

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

using namespace eeg2rep;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "run_name": "tiny",
  "seed": 5,
  "data": { "synthetic": { "n": 40, "channels": 2, "length": 32, "subjects": 4 },
            "split": { "mode": "random" } },
  "embedding": { "num_filters": 8, "pool_size": 4 },
  "encoder": { "d_e": 8, "heads": 2, "layers": 1 },
  "predictor": { "heads": 2, "layers": 1 },
  "masking": { "beta": 2 },
  "training": { "batch_size": 8, "epochs": 3 },
  "evaluation": {
    "finetune": { "epochs": 1 },
    "sweep": { "rhos": [0.5], "betas": [1] },
    "robustness": { "kinds": ["gaussian", "dc_shift"], "magnitudes": [0.0, 1.0] }
  }
})";

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "eeg2rep");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path setup(const std::string& name) {
  const auto dir = test::temp_dir(name);
  test::write_file(dir / "tiny.json", kTinyConfig);
  return dir;
}

std::vector<std::string> base(const fs::path& dir) {
  return {"-c", (dir / "tiny.json").string(), "-o", (dir / "runs").string()};
}

std::vector<std::string> with(std::string cmd, std::vector<std::string> rest, const fs::path& dir) {
  std::vector<std::string> a{std::move(cmd)};
  for (auto& s : base(dir)) a.push_back(s);
  for (auto& s : rest) a.push_back(std::move(s));
  return a;
}

}  // namespace

TEST_CASE("pretrain then probe writes artifacts") {
  const auto dir = setup("cli_workflow");
  const auto run = dir / "runs" / "tiny";
  const Run p = cli(with("pretrain", {}, dir));
  REQUIRE_MESSAGE(p.code == kExitOk, p.err);
  CHECK(fs::exists(run / "last.ckpt"));
  CHECK(fs::exists(run / "best.ckpt"));
  CHECK(fs::exists(run / "resolved_config.json"));
  const std::string log = test::read_file(run / "train_log.csv");
  CHECK(log.rfind("# seed=5\n", 0) == 0);
  CHECK(log.find("step,") != std::string::npos);

  const Run q = cli(with("probe", {"--checkpoint", (run / "last.ckpt").string()}, dir));
  REQUIRE_MESSAGE(q.code == kExitOk, q.err);
  const std::string metrics = test::read_file(run / "probe_metrics.csv");
  CHECK(metrics.find("balanced_accuracy,") != std::string::npos);
  CHECK(metrics.find("auroc,") != std::string::npos);

  const Run r = cli(with("report", {}, dir));
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(fs::exists(run / "report.md"));
  CHECK(fs::exists(run / "loss_curve.svg"));

  const Run f = cli(with("finetune", {"--checkpoint", (run / "last.ckpt").string()}, dir));
  REQUIRE_MESSAGE(f.code == kExitOk, f.err);
  CHECK(test::read_file(run / "finetune_metrics.csv").find("eval_loss,") != std::string::npos);

  const Run b = cli(with("robustness", {"--checkpoint", (run / "last.ckpt").string()}, dir));
  REQUIRE_MESSAGE(b.code == kExitOk, b.err);
  const std::string rob = test::read_file(run / "robustness.csv");
  CHECK(rob.find("gaussian,0,") != std::string::npos);
  CHECK(rob.find("dc_shift,1,") != std::string::npos);
}

TEST_CASE("interrupted and resumed pretraining reproduces the uninterrupted log") {
  const auto dir = setup("cli_resume");
  const auto run = dir / "runs" / "tiny";
  REQUIRE(cli(with("pretrain", {}, dir)).code == kExitOk);
  const std::string full_log = test::read_file(run / "train_log.csv");
  const std::string full_ckpt = test::read_file(run / "last.ckpt");

  REQUIRE(cli(with("pretrain", {"--stop-after-epochs", "1"}, dir)).code == kExitOk);
  CHECK(test::read_file(run / "train_log.csv") != full_log);
  const Run r = cli({"pretrain", "--resume", (run / "last.ckpt").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);

  CHECK(test::read_file(run / "train_log.csv") == full_log);
  CHECK(test::read_file(run / "last.ckpt") == full_ckpt);
}

TEST_CASE("configuration and I/O failures map to exit codes") {
  const auto dir = setup("cli_errors");
  const Run unknown = cli(with("maskbench", {"--set", "masking.rhoo=0.3"}, dir));
  CHECK(unknown.code == kExitConfig);
  CHECK(unknown.err.find("masking.rhoo") != std::string::npos);

  const Run bad_value = cli(with("maskbench", {"--set", "masking.rho=1.5"}, dir));
  CHECK(bad_value.code == kExitConfig);

  const Run missing = cli({"probe", "-c", (dir / "nope.json").string(), "--random-init"});
  CHECK(missing.code == kExitIo);

  const Run ckpt = cli(with("probe", {"--checkpoint", (dir / "nope.ckpt").string()}, dir));
  CHECK(ckpt.code == kExitIo);

  const Run no_ckpt = cli(with("probe", {}, dir));
  CHECK(no_ckpt.code == kExitConfig);

  const Run diverged =
      cli(with("pretrain", {"--set", "training.lr0=1e9", "--set", "loss.lambda=1e300"}, dir));
  CHECK(diverged.code == kExitDiverged);
  CHECK(diverged.err.find("diverged") != std::string::npos);

  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"report", "--run-dir", (dir / "empty").string()}).code == kExitIo);
}

TEST_CASE("maskbench and sweep produce tables") {
  const auto dir = setup("cli_tables");
  const Run m = cli(with("maskbench", {"--trials", "50"}, dir));
  REQUIRE_MESSAGE(m.code == kExitOk, m.err);
  const std::string stats = test::read_file(dir / "runs" / "tiny" / "mask_stats.csv");
  CHECK(stats.find("ssp,0.5,1,") != std::string::npos);
  CHECK(stats.find("block,0.5,1,") != std::string::npos);

  const Run s = cli(with("sweep", {"--set", "training.epochs=1"}, dir));
  REQUIRE_MESSAGE(s.code == kExitOk, s.err);
  const std::string sweep = test::read_file(dir / "runs" / "tiny" / "sweep.csv");
  CHECK(sweep.find("\nssp,0.5,1,") != std::string::npos);
  CHECK(sweep.find("\nrandom,0.5,1,") != std::string::npos);
}

TEST_CASE("output directory precedence: flag, then environment, then config") {
  const auto dir = setup("cli_outdir");
  const std::vector<std::string> cfg{"maskbench", "-c", (dir / "tiny.json").string(), "--trials", "5",
                                     "--set", "output_dir=\"" + (dir / "from_config").string() + "\""};
  ::unsetenv("EEG2REP_OUTPUT_DIR");
  REQUIRE(cli(cfg).code == kExitOk);
  CHECK(fs::exists(dir / "from_config" / "tiny" / "mask_stats.csv"));

  ::setenv("EEG2REP_OUTPUT_DIR", (dir / "from_env").c_str(), 1);
  REQUIRE(cli(cfg).code == kExitOk);
  CHECK(fs::exists(dir / "from_env" / "tiny" / "mask_stats.csv"));

  auto flagged = cfg;
  flagged.insert(flagged.end(), {"-o", (dir / "from_flag").string()});
  REQUIRE(cli(flagged).code == kExitOk);
  CHECK(fs::exists(dir / "from_flag" / "tiny" / "mask_stats.csv"));
  ::unsetenv("EEG2REP_OUTPUT_DIR");
}

TEST_CASE("the installed binary reports exit codes to the shell") {
  const char* bin = std::getenv("EEG2REP_CLI");
  if (!bin) {
    MESSAGE("EEG2REP_CLI not set; skipping process-level check");
    return;
  }
  const auto dir = setup("cli_binary");
  const std::string quiet = " >/dev/null 2>&1";
  const auto status = [&](const std::string& tail) {
    const int s = std::system((std::string(bin) + " " + tail + quiet).c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(status("maskbench -c " + (dir / "tiny.json").string() + " -o " + (dir / "runs").string() +
               " --trials 5") == kExitOk);
  CHECK(status("maskbench -c " + (dir / "tiny.json").string() + " --set encoder.bogus=1") == kExitConfig);
  CHECK(status("maskbench -c " + (dir / "missing.json").string()) == kExitIo);
}
