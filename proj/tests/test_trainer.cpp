#include "toremi/trainer.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "support/testutil.hpp"
#include "toremi/common.hpp"
#include "toremi/evalmetrics.hpp"

using namespace toremi;

namespace {

SyntheticSpec small_spec(int samples_per_topic = 40) {
  SyntheticSpec spec;
  spec.topics = {{"alpha", 0, 32, 1.0}, {"bravo", 32, 64, 1.0}};
  spec.samples_per_topic = samples_per_topic;
  spec.sequence_length = 64;
  spec.vocab_size = 64;
  spec.seed = 7;
  return spec;
}

TrainConfig small_config(Strategy strategy, long long steps = 400) {
  TrainConfig cfg;
  cfg.strategy = strategy;
  cfg.total_steps = steps;
  cfg.batch_size = 4;
  cfg.sequence_length = 32;
  cfg.learning_rate = 0.1;
  cfg.vocab_size = 64;
  cfg.seed = 42;
  cfg.reweighter.interval_steps = 100;
  cfg.reweighter.transition_step = 200;
  return cfg;
}

bool params_bitwise_equal(const Model& a, const Model& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  return std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg = small_config(Strategy::toremi);
  CHECK_NOTHROW(cfg.validate());
  cfg.total_steps = 450;  // not a multiple of the interval
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config(Strategy::toremi);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config(Strategy::toremi);
  cfg.model_kind = "rnn";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("unlabeled samples are rejected before any step runs") {
  testutil::TempDir tmp("unlabeled");
  auto corpus = generate_synthetic(small_spec(4));
  corpus[3].labels.clear();

  CHECK_THROWS_WITH_AS(
      run_training(corpus, small_config(Strategy::toremi, 100), tmp.str("run")),
      doctest::Contains(corpus[3].id.c_str()), ValidationError);
  CHECK_NOTHROW(run_training(corpus, small_config(Strategy::standard, 100),
                             tmp.str("run-std")));
}

TEST_CASE("a multiplied sample moves parameters exactly that much further") {
  const auto corpus = generate_synthetic(small_spec(2));
  const auto tokens = encode_tokens(corpus[0].text, TokenizerMode::alphabet, 64);
  const std::vector<const Sample*> batch = {&corpus[0]};
  const std::vector<std::span<const int>> batch_tokens = {std::span<const int>(tokens)};

  TrainConfig cfg = small_config(Strategy::toremi);
  IntervalAccumulator acc;

  TopicWeightTable unit_table;
  BigramModel base(64);
  BigramModel single = base;
  train_step(single, batch, batch_tokens, unit_table, acc, cfg, 0);

  TopicWeightTable doubled_table;
  doubled_table.set_weight(corpus[0].labels[0], 2.0);
  BigramModel doubled = base;
  train_step(doubled, batch, batch_tokens, doubled_table, acc, cfg, 0);

  const auto p0 = base.parameters();
  const auto p1 = single.parameters();
  const auto p2 = doubled.parameters();
  for (std::size_t i = 0; i < p0.size(); ++i) {
    CHECK(p2[i] - p0[i] == 2.0 * (p1[i] - p0[i]));
  }
}

TEST_CASE("degenerate bounds pin every weight to 1 and reproduce standard") {
  const auto corpus = generate_synthetic(small_spec(8));
  std::vector<std::vector<int>> tokens;
  for (const auto& s : corpus)
    tokens.push_back(encode_tokens(s.text, TokenizerMode::alphabet, 64));

  TrainConfig std_cfg = small_config(Strategy::standard);
  TrainConfig pin_cfg = small_config(Strategy::toremi);
  pin_cfg.reweighter.beta = 1.0;   // degenerate bounds, below the validated range
  pin_cfg.reweighter.gamma = 1.0;  // on purpose: weights cannot leave 1

  BigramModel std_model(64), pin_model(64);
  TopicWeightTable std_table, pin_table;
  IntervalAccumulator std_acc, pin_acc;

  for (long long step = 0; step < 60; ++step) {
    std::vector<const Sample*> batch;
    std::vector<std::span<const int>> batch_tokens;
    for (int b = 0; b < 4; ++b) {
      const std::size_t idx = (static_cast<std::size_t>(step) * 4 + b) % corpus.size();
      batch.push_back(&corpus[idx]);
      batch_tokens.emplace_back(tokens[idx]);
    }
    train_step(std_model, batch, batch_tokens, std_table, std_acc, std_cfg, step);
    train_step(pin_model, batch, batch_tokens, pin_table, pin_acc, pin_cfg, step);
    if ((step + 1) % 20 == 0) {
      std_acc.reset();
      pin_table.finalize_interval(pin_acc, pin_cfg.reweighter,
                                  stage_for_step(step + 1, pin_cfg.reweighter));
      for (const auto& [label, w] : pin_table.weights()) CHECK(w == 1.0);
    }
    REQUIRE(params_bitwise_equal(std_model, pin_model));
  }
}

TEST_CASE("run_training is byte-deterministic") {
  testutil::TempDir tmp("determinism");
  const auto corpus = generate_synthetic(small_spec());
  const TrainConfig cfg = small_config(Strategy::toremi);

  run_training(corpus, cfg, tmp.str("a"));
  run_training(corpus, cfg, tmp.str("b"));
  CHECK(testutil::read_file(tmp.str("a/metrics.jsonl")) ==
        testutil::read_file(tmp.str("b/metrics.jsonl")));
  CHECK(testutil::read_file(tmp.str("a/trace.jsonl")) ==
        testutil::read_file(tmp.str("b/trace.jsonl")));
  CHECK(testutil::read_file(tmp.str("a/checkpoint.json")) ==
        testutil::read_file(tmp.str("b/checkpoint.json")));
}

TEST_CASE("interval cadence and stage bookkeeping") {
  testutil::TempDir tmp("cadence");
  const auto corpus = generate_synthetic(small_spec());
  const TrainConfig cfg = small_config(Strategy::toremi);  // transition at step 200

  const auto result = run_training(corpus, cfg, tmp.str("run"));
  const auto trace = read_trace(result.trace_path);
  REQUIRE(trace.size() == 4);  // 400 steps / 100
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(trace[i].interval == static_cast<long long>(i + 1));
    CHECK(trace[i].step == static_cast<long long>((i + 1) * 100));
    CHECK(trace[i].stage == stage_for_step(trace[i].step, cfg.reweighter));
  }
  CHECK(trace[0].stage == Stage::stage1);
  CHECK(trace[1].stage == Stage::stage2);  // boundary step 200 == transition

  // Every step appears in the metrics with batch_size records.
  const auto metrics = read_metrics(result.metrics_path);
  CHECK(metrics.size() == static_cast<std::size_t>(cfg.total_steps * cfg.batch_size));
  for (const auto& r : metrics) {
    CHECK(r.weighted_loss == r.multiplier * r.raw_loss);
  }
}

TEST_CASE("stage1_only never emits a stage-2 record") {
  testutil::TempDir tmp("stage1only");
  const auto corpus = generate_synthetic(small_spec());
  const auto result =
      run_training(corpus, small_config(Strategy::stage1_only), tmp.str("run"));
  for (const auto& rec : read_trace(result.trace_path))
    CHECK(rec.stage == Stage::stage1);
  for (const auto& rec : read_metrics(result.metrics_path))
    CHECK(rec.stage == Stage::stage1);
}

TEST_CASE("standard runs keep multiplier 1 and weights 1") {
  testutil::TempDir tmp("standard");
  const auto corpus = generate_synthetic(small_spec());
  const auto result =
      run_training(corpus, small_config(Strategy::standard), tmp.str("run"));
  for (const auto& rec : read_metrics(result.metrics_path)) CHECK(rec.multiplier == 1.0);
  for (const auto& rec : read_trace(result.trace_path)) {
    for (const auto& [topic, entry] : rec.labels) CHECK(entry.weight == 1.0);
  }
  CHECK(result.table.weights().empty());
}

TEST_CASE("checkpoints resume to a bit-identical trajectory") {
  testutil::TempDir tmp("resume");
  const auto corpus = generate_synthetic(small_spec());
  TrainConfig cfg = small_config(Strategy::toremi);
  cfg.checkpoint_every = 200;

  const auto full = run_training(corpus, cfg, tmp.str("full"));
  const auto resumed = run_training(corpus, cfg, tmp.str("resumed"),
                                    tmp.str("full/checkpoint_step200.json"));
  CHECK(params_bitwise_equal(*full.model, *resumed.model));
  for (const auto& [label, w] : full.table.weights())
    CHECK(resumed.table.weight(label) == w);

  // The resumed metrics are exactly the tail of the full metrics.
  const std::string full_metrics = testutil::read_file(tmp.str("full/metrics.jsonl"));
  const std::string tail_metrics = testutil::read_file(tmp.str("resumed/metrics.jsonl"));
  REQUIRE(full_metrics.size() > tail_metrics.size());
  CHECK(full_metrics.substr(full_metrics.size() - tail_metrics.size()) == tail_metrics);
}

TEST_CASE("checkpoint files round-trip the model bit-exactly") {
  testutil::TempDir tmp("ckpt");
  const auto corpus = generate_synthetic(small_spec());
  const auto result = run_training(corpus, small_config(Strategy::toremi), tmp.str("run"));

  const auto ckpt = load_checkpoint(result.checkpoint_path);
  const auto restored = model_from_checkpoint(ckpt);
  CHECK(params_bitwise_equal(*result.model, *restored));
  CHECK(ckpt.step == 400);
  CHECK(ckpt.table.finalized_intervals() == result.table.finalized_intervals());
}

TEST_CASE("non-finite losses abort with context") {
  const auto corpus = generate_synthetic(small_spec(2));
  const auto tokens = encode_tokens(corpus[0].text, TokenizerMode::alphabet, 64);
  const std::vector<const Sample*> batch = {&corpus[0]};
  const std::vector<std::span<const int>> batch_tokens = {std::span<const int>(tokens)};

  BigramModel model(64);
  std::vector<double> params(model.parameter_count(), 0.0);
  params[0] = 1e308;
  params[1] = -1e308;
  model.set_parameters(params);

  TopicWeightTable table;
  IntervalAccumulator acc;
  const TrainConfig cfg = small_config(Strategy::standard);
  try {
    train_step(model, batch, batch_tokens, table, acc, cfg, 17);
    FAIL("expected RuntimeAbort");
  } catch (const RuntimeAbort& e) {
    const std::string what = e.what();
    CHECK(what.find("17") != std::string::npos);
    CHECK(what.find(corpus[0].id) != std::string::npos);
    CHECK(what.find("parameter norm") != std::string::npos);
  }
}

TEST_CASE("standard training beats the uniform model by 20% within 2000 steps") {
  testutil::TempDir tmp("sanity");
  SyntheticSpec spec;
  spec.topics = {{"solo", 0, 16, 1.0}};
  spec.samples_per_topic = 100;
  spec.sequence_length = 64;
  spec.vocab_size = 16;
  spec.seed = 11;
  const auto corpus = generate_synthetic(spec);
  const auto split = split_heldout(corpus, 0.2, 3);

  TrainConfig cfg = small_config(Strategy::standard, 2000);
  cfg.vocab_size = 16;
  cfg.reweighter.transition_step = 1000;
  const auto result = run_training(split.train, cfg, tmp.str("run"));

  double total = 0.0;
  for (const auto& s : split.heldout) {
    total += result.model->sequence_loss(
        encode_tokens(s.text, TokenizerMode::alphabet, 16));
  }
  const double heldout_loss = total / static_cast<double>(split.heldout.size());
  CHECK(heldout_loss < 0.8 * std::log(16.0));
}

TEST_CASE("character shuffle leaves the corrupted topic with the higher loss") {
  testutil::TempDir tmp("corruptloss");
  auto corpus = generate_synthetic(small_spec(60));
  corpus = corrupt_topic(corpus, "bravo", 19);

  TrainConfig cfg = small_config(Strategy::standard, 500);
  const auto result = run_training(corpus, cfg, tmp.str("run"));

  const auto report = evaluate(*result.model, corpus, TokenizerMode::alphabet);
  CHECK(std::log(report.per_topic.at("bravo")) > std::log(report.per_topic.at("alpha")));
}
