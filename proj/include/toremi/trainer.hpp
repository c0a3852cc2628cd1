// Training loop wiring the toy models to the reweighter.
//
// Every step: draw a batch with replacement, compute each sample's raw loss,
// record it into the interval accumulator, scale the sample's gradient by the
// capped product of its labels' weights (from the last finalized interval),
// and apply the averaged batch gradient. At every interval boundary the
// weight table is finalized and one trace record is written.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toremi/corpus.hpp"
#include "toremi/model.hpp"
#include "toremi/reweight.hpp"

namespace toremi {

enum class Strategy { standard, stage1_only, toremi };

const char* strategy_name(Strategy strategy);
Strategy strategy_from_name(std::string_view name);

struct TrainConfig {
  Strategy strategy = Strategy::toremi;
  long long total_steps = 8000;
  int batch_size = 8;
  int sequence_length = 64;  // predicted positions per training window
  double learning_rate = 0.1;
  int vocab_size = 64;
  TokenizerMode tokenizer = TokenizerMode::alphabet;
  std::string model_kind = "bigram";
  int hidden_size = 16;  // mlp only
  std::uint64_t seed = 0;
  long long checkpoint_every = 0;  // 0 = final checkpoint only
  ReweighterConfig reweighter;

  void validate() const;  // total_steps must be a positive multiple of the interval
};

struct StepRecord {
  long long step = 0;
  Stage stage = Stage::stage1;
  std::string sample_id;
  double raw_loss = 0.0;
  double multiplier = 1.0;
  double weighted_loss = 0.0;
};

void write_step_record(std::ostream& os, const StepRecord& record);
std::vector<StepRecord> read_metrics(const std::string& path);

// One optimization step over an already-tokenized batch. batch and
// batch_tokens are parallel; each token window must have >= 2 tokens.
// Raw losses are recorded into acc (when the sample has labels), multipliers
// come from the table (pinned at 1 for Strategy::standard), and the model is
// updated with the multiplier-scaled batch-mean gradient. Throws RuntimeAbort
// with step/sample/parameter-norm context when anything goes non-finite.
std::vector<StepRecord> train_step(Model& model,
                                   const std::vector<const Sample*>& batch,
                                   const std::vector<std::span<const int>>& batch_tokens,
                                   TopicWeightTable& table, IntervalAccumulator& acc,
                                   const TrainConfig& config, long long step);

struct Checkpoint {
  std::string model_kind = "bigram";
  int vocab_size = 0;
  int hidden_size = 0;
  TokenizerMode tokenizer = TokenizerMode::alphabet;
  int sequence_length = 0;
  double learning_rate = 0.0;
  std::vector<double> params;
  long long step = 0;       // completed steps
  std::string rng_state;    // serialized mt19937_64 stream
  TopicWeightTable table;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
  std::unique_ptr<Model> model;
  TopicWeightTable table;
  long long steps = 0;
  std::string trace_path;
  std::string metrics_path;
  std::string checkpoint_path;
};

// Runs config.total_steps steps (or the remainder when resuming) and writes
// trace.jsonl, metrics.jsonl and checkpoint.json under out_dir. Fully
// deterministic in (corpus, config): two runs produce byte-identical files.
// When strategy != standard every sample must carry at least one label; the
// first offender is named before any step runs.
TrainResult run_training(const std::vector<Sample>& corpus, const TrainConfig& config,
                         const std::string& out_dir,
                         const std::string& resume_checkpoint = {});

}  // namespace toremi
