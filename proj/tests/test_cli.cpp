#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "support/testutil.hpp"

using testutil::quote;
using testutil::run_process;

namespace {

std::string bin() { return testutil::cli_path(); }

void gen_small_corpus(const std::string& path, const std::string& extra = {}) {
  const auto r = run_process(bin() + " gen-corpus --out " + quote(path) +
                             " --samples-per-topic 30 --seed 7 " + extra);
  REQUIRE(r.exit_code == 0);
}

}  // namespace

TEST_CASE("unknown subcommands and flags exit 1 with usage text") {
  const auto r = run_process(bin() + " frobnicate");
  CHECK(r.exit_code == 1);
  const auto r2 = run_process(bin() + " train --no-such-flag");
  CHECK(r2.exit_code == 1);
  const auto r3 = run_process(bin() + " --help");
  CHECK(r3.exit_code == 0);
  CHECK(r3.output.find("gen-corpus") != std::string::npos);
}

TEST_CASE("repeating a train command reproduces the output tree byte for byte") {
  testutil::TempDir tmp("cli-repro");
  gen_small_corpus(tmp.str("c.jsonl"));

  const std::string command = bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                              " --strategy toremi --seed 9 --total-steps 300"
                              " --interval 100 --transition 100 --batch-size 4"
                              " --out " + quote(tmp.str("run"));
  REQUIRE(run_process(command).exit_code == 0);
  const auto first = testutil::snapshot_tree(tmp.path / "run");
  std::filesystem::remove_all(tmp.path / "run");
  REQUIRE(run_process(command).exit_code == 0);
  const auto second = testutil::snapshot_tree(tmp.path / "run");
  REQUIRE(!first.empty());
  CHECK(first == second);
}

TEST_CASE("training on an unlabeled corpus names the first offender") {
  testutil::TempDir tmp("cli-unlabeled");
  testutil::write_file(tmp.str("c.jsonl"),
                       "{\"id\":\"s0\",\"text\":\"!!##\",\"labels\":[\"T\"]}\n"
                       "{\"id\":\"s1\",\"text\":\"!!##\"}\n");
  const auto r = run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("run")) +
                             " --strategy toremi --total-steps 100 --transition 100");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("s1") != std::string::npos);
}

TEST_CASE("corrupt rewrites only the chosen topic's lines") {
  testutil::TempDir tmp("cli-corrupt");
  gen_small_corpus(tmp.str("c.jsonl"));
  const auto r = run_process(bin() + " corrupt --in " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("noisy.jsonl")) +
                             " --topic topicB --seed 3");
  REQUIRE(r.exit_code == 0);

  std::istringstream before(testutil::read_file(tmp.str("c.jsonl")));
  std::istringstream after(testutil::read_file(tmp.str("noisy.jsonl")));
  std::string line_a, line_b;
  bool saw_changed = false;
  while (std::getline(before, line_a) && std::getline(after, line_b)) {
    if (line_a.find("topicB") == std::string::npos) {
      CHECK(line_b == line_a);
    } else if (line_b != line_a) {
      saw_changed = true;
    }
  }
  CHECK(saw_changed);

  const auto missing = run_process(bin() + " corrupt --in " + quote(tmp.str("c.jsonl")) +
                                   " --out " + quote(tmp.str("x.jsonl")) +
                                   " --topic nope --seed 3");
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("topicA") != std::string::npos);
}

TEST_CASE("command-line flags override the config file") {
  testutil::TempDir tmp("cli-precedence");
  gen_small_corpus(tmp.str("c.jsonl"));
  testutil::write_file(tmp.str("conf.ini"),
                       "[train]\nalpha=2.25\nbeta=7.5\ntotal-steps=200\n");

  const auto r = run_process(bin() + " --config " + quote(tmp.str("conf.ini")) +
                             " train --corpus " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("run")) +
                             " --alpha 3.25 --transition 100 --interval 100");
  REQUIRE(r.exit_code == 0);

  const std::string resolved = testutil::read_file(tmp.str("run/resolved.cfg"));
  CHECK(resolved.find("alpha=3.25") != std::string::npos);  // flag beat the file
  CHECK(resolved.find("beta=7.5") != std::string::npos);    // file beat the default
  CHECK(resolved.find("total-steps=200") != std::string::npos);

  // Defaults reign when neither is given.
  const auto plain = run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                                 " --out " + quote(tmp.str("run2")) +
                                 " --total-steps 100 --transition 100");
  REQUIRE(plain.exit_code == 0);
  const std::string defaults = testutil::read_file(tmp.str("run2/resolved.cfg"));
  CHECK(defaults.find("alpha=1") != std::string::npos);
}

TEST_CASE("a poisoned checkpoint aborts the run with exit code 2") {
  testutil::TempDir tmp("cli-abort");
  gen_small_corpus(tmp.str("c.jsonl"));
  REQUIRE(run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                      " --out " + quote(tmp.str("warm")) +
                      " --total-steps 100 --transition 100")
              .exit_code == 0);

  auto ckpt = nlohmann::json::parse(testutil::read_file(tmp.str("warm/checkpoint.json")));
  ckpt["params"][0] = 1e308;
  ckpt["params"][1] = -1e308;
  testutil::write_file(tmp.str("poisoned.json"), ckpt.dump());

  const auto r = run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("resumed")) +
                             " --total-steps 200 --transition 100 --resume " +
                             quote(tmp.str("poisoned.json")));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("abort") != std::string::npos);
}

TEST_CASE("inspect reports constant weights for a standard run") {
  testutil::TempDir tmp("cli-inspect-std");
  gen_small_corpus(tmp.str("c.jsonl"));
  REQUIRE(run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                      " --out " + quote(tmp.str("run")) +
                      " --strategy standard --total-steps 300 --transition 100")
              .exit_code == 0);
  const auto r = run_process(bin() + " inspect --trace " + quote(tmp.str("run/trace.jsonl")));
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("topic topicA: weight in [1, 1]") != std::string::npos);
  CHECK(r.output.find("topic topicB: weight in [1, 1]") != std::string::npos);
}

TEST_CASE("inspect reports the default transition at interval 40") {
  testutil::TempDir tmp("cli-inspect-default");
  gen_small_corpus(tmp.str("c.jsonl"));
  // Default reweighting config: interval 100, transition 4000, 8000 steps.
  REQUIRE(run_process(bin() + " train --corpus " + quote(tmp.str("c.jsonl")) +
                      " --out " + quote(tmp.str("run")) + " --strategy toremi --seed 4")
              .exit_code == 0);
  const auto r = run_process(bin() + " inspect --trace " + quote(tmp.str("run/trace.jsonl")));
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("stage transition: interval 40 (step 4000)") != std::string::npos);

  const auto corrupt_trace = run_process(bin() + " inspect --trace " + quote(tmp.str("c.jsonl")));
  CHECK(corrupt_trace.exit_code == 1);
  CHECK(corrupt_trace.output.find("byte offset") != std::string::npos);
}

TEST_CASE("eval and compare consume training outputs") {
  testutil::TempDir tmp("cli-eval");
  gen_small_corpus(tmp.str("c.jsonl"));

  const std::string common = " --corpus " + quote(tmp.str("c.jsonl")) +
                             " --total-steps 300 --transition 100 --interval 100"
                             " --heldout-fraction 0.2 --seed 12";
  REQUIRE(run_process(bin() + " train --strategy standard --out " + quote(tmp.str("std")) +
                      common).exit_code == 0);
  REQUIRE(run_process(bin() + " train --strategy toremi --out " + quote(tmp.str("trm")) +
                      common).exit_code == 0);

  const auto eval_r = run_process(bin() + " eval --checkpoint " +
                                  quote(tmp.str("trm/checkpoint.json")) + " --corpus " +
                                  quote(tmp.str("trm/heldout.jsonl")) + " --out " +
                                  quote(tmp.str("eval")));
  REQUIRE(eval_r.exit_code == 0);
  const auto report = nlohmann::json::parse(testutil::read_file(tmp.str("eval/report.json")));
  CHECK(report.at("overall_perplexity").get<double>() > 1.0);

  const auto cmp = run_process(bin() + " compare --run standard=" + quote(tmp.str("std")) +
                               " --run toremi=" + quote(tmp.str("trm")) + " --out " +
                               quote(tmp.str("cmp")));
  REQUIRE(cmp.exit_code == 0);
  CHECK(testutil::read_file(tmp.str("cmp/curves.csv")).rfind("step,strategy,topic,loss,weight\n", 0) == 0);
  const auto summary = nlohmann::json::parse(testutil::read_file(tmp.str("cmp/summary.json")));
  CHECK(summary.at("runs").size() == 2);
}

TEST_CASE("annotate with the mock labeler labels every sample") {
  testutil::TempDir tmp("cli-annotate");
  gen_small_corpus(tmp.str("c.jsonl"));
  testutil::write_file(tmp.str("tax.txt"), "Technology\nHistory\nScience\n");

  const auto r = run_process(bin() + " annotate --in " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("l.jsonl")) +
                             " --mode select --taxonomy " + quote(tmp.str("tax.txt")) +
                             " --k 2 --mock-labeler --seed 5");
  REQUIRE(r.exit_code == 0);

  std::istringstream lines(testutil::read_file(tmp.str("l.jsonl")));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(!j.at("labels").empty());
    CHECK(j.contains("cluster"));
    ++count;
  }
  CHECK(count == 60);

  const auto none = run_process(bin() + " annotate --in " + quote(tmp.str("c.jsonl")) +
                                " --out " + quote(tmp.str("m.jsonl")) + " --k 2 --seed 5");
  CHECK(none.exit_code == 1);
  CHECK(none.output.find("labeler") != std::string::npos);
}

TEST_CASE("subcommands write only inside their --out targets") {
  testutil::TempDir tmp("cli-confined");
  std::filesystem::create_directories(tmp.str("cwd"));
  gen_small_corpus(tmp.str("c.jsonl"));

  const auto before = testutil::snapshot_tree(tmp.path / "cwd");
  const auto r = run_process("cd " + quote(tmp.str("cwd")) + " && " + bin() +
                             " train --corpus " + quote(tmp.str("c.jsonl")) +
                             " --out " + quote(tmp.str("out")) +
                             " --total-steps 100 --transition 100");
  REQUIRE(r.exit_code == 0);
  const auto after = testutil::snapshot_tree(tmp.path / "cwd");
  CHECK(before == after);
  CHECK(std::filesystem::exists(tmp.str("out/metrics.jsonl")));
}
