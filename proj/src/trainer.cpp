#include "toremi/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "toremi/common.hpp"
#include "toremi/seeds.hpp"

namespace toremi {

const char* strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::standard: return "standard";
    case Strategy::stage1_only: return "stage1_only";
    case Strategy::toremi: return "toremi";
  }
  return "?";
}

Strategy strategy_from_name(std::string_view name) {
  if (name == "standard") return Strategy::standard;
  if (name == "stage1_only") return Strategy::stage1_only;
  if (name == "toremi") return Strategy::toremi;
  throw ValidationError("unknown strategy: '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  reweighter.validate();
  if (total_steps < 1) throw ValidationError("total_steps must be positive");
  if (total_steps % reweighter.interval_steps != 0)
    throw ValidationError("total_steps (" + std::to_string(total_steps) +
                          ") must be a multiple of interval_steps (" +
                          std::to_string(reweighter.interval_steps) + ")");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (sequence_length < 1) throw ValidationError("sequence_length must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (vocab_size < 2) throw ValidationError("vocab_size must be at least 2");
  if (model_kind != "bigram" && model_kind != "mlp")
    throw ValidationError("model kind must be 'bigram' or 'mlp'");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
}

void write_step_record(std::ostream& os, const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = stage_name(r.stage);
  j["sample_id"] = r.sample_id;
  j["raw_loss"] = r.raw_loss;
  j["multiplier"] = r.multiplier;
  j["weighted_loss"] = r.weighted_loss;
  os << j.dump() << '\n';
}

std::vector<StepRecord> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open metrics file: " + path);
  std::vector<StepRecord> records;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      StepRecord r;
      r.step = j.at("step").get<long long>();
      r.stage = stage_from_name(j.at("stage").get<std::string>());
      r.sample_id = j.at("sample_id").get<std::string>();
      r.raw_loss = j.at("raw_loss").get<double>();
      r.multiplier = j.at("multiplier").get<double>();
      r.weighted_loss = j.at("weighted_loss").get<double>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": malformed step record: " + e.what());
    }
  }
  return records;
}

namespace {

double parameter_norm(const Model& model) {
  double sum = 0.0;
  for (double p : model.parameters()) sum += p * p;
  return std::sqrt(sum);
}

[[noreturn]] void abort_non_finite(const char* what, long long step,
                                   const std::string& sample_id, const Model& model) {
  std::ostringstream msg;
  msg << "non-finite " << what << " at step " << step << " (sample '" << sample_id
      << "', parameter norm " << parameter_norm(model) << ")";
  throw RuntimeAbort(msg.str());
}

}  // namespace

std::vector<StepRecord> train_step(Model& model,
                                   const std::vector<const Sample*>& batch,
                                   const std::vector<std::span<const int>>& batch_tokens,
                                   TopicWeightTable& table, IntervalAccumulator& acc,
                                   const TrainConfig& config, long long step) {
  if (batch.empty() || batch.size() != batch_tokens.size())
    throw ValidationError("train_step: batch and token windows must align and be non-empty");

  const Stage stage = config.strategy == Strategy::stage1_only
                          ? Stage::stage1
                          : stage_for_step(step, config.reweighter);

  std::vector<double> grad(model.parameter_count(), 0.0);
  std::vector<StepRecord> records;
  records.reserve(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& sample = *batch[b];
    double multiplier = 1.0;
    if (config.strategy != Strategy::standard)
      multiplier = weighted_loss_multiplier(table, sample.labels, config.reweighter);

    const double raw_loss =
        model.accumulate_loss_gradient(batch_tokens[b], multiplier, grad);
    if (!std::isfinite(raw_loss)) abort_non_finite("loss", step, sample.id, model);

    if (!sample.labels.empty()) acc.record_sample(sample.labels, raw_loss, sample.id);

    StepRecord r;
    r.step = step;
    r.stage = stage;
    r.sample_id = sample.id;
    r.raw_loss = raw_loss;
    r.multiplier = multiplier;
    r.weighted_loss = multiplier * raw_loss;
    records.push_back(std::move(r));
  }

  for (double g : grad) {
    if (!std::isfinite(g)) abort_non_finite("gradient", step, batch[0]->id, model);
  }

  model.apply_gradient(grad, config.learning_rate / static_cast<double>(batch.size()));
  acc.note_step();
  return records;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["model_kind"] = ckpt.model_kind;
  j["vocab_size"] = ckpt.vocab_size;
  j["hidden_size"] = ckpt.hidden_size;
  j["tokenizer"] = tokenizer_name(ckpt.tokenizer);
  j["sequence_length"] = ckpt.sequence_length;
  j["learning_rate"] = ckpt.learning_rate;
  j["step"] = ckpt.step;
  j["rng_state"] = ckpt.rng_state;
  j["stage"] = stage_name(ckpt.table.stage());
  j["finalized_intervals"] = ckpt.table.finalized_intervals();
  j["weights"] = nlohmann::ordered_json::object();
  for (const auto& [label, w] : ckpt.table.weights()) j["weights"][label] = w;
  j["params"] = ckpt.params;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint: " + e.what());
  }
  try {
    Checkpoint c;
    c.model_kind = j.at("model_kind").get<std::string>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.tokenizer = tokenizer_from_name(j.at("tokenizer").get<std::string>());
    c.sequence_length = j.at("sequence_length").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.step = j.at("step").get<long long>();
    c.rng_state = j.at("rng_state").get<std::string>();
    c.params = j.at("params").get<std::vector<double>>();
    // Rebuild the table; the recorded stage is restored through a setter-free
    // path below, so keep weights first.
    for (const auto& [label, w] : j.at("weights").items())
      c.table.set_weight(label, w.get<double>());
    const Stage stage = stage_from_name(j.at("stage").get<std::string>());
    const long long finalized = j.at("finalized_intervals").get<long long>();
    c.table.restore_bookkeeping(stage, finalized);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint: " + e.what());
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = make_model(ckpt.model_kind, ckpt.vocab_size, ckpt.hidden_size, 0);
  model->set_parameters(ckpt.params);
  return model;
}

namespace {

struct MetricsWriter {
  std::ofstream out;
  explicit MetricsWriter(const std::string& path) : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw ValidationError("cannot write metrics file: " + path);
  }
};

}  // namespace

TrainResult run_training(const std::vector<Sample>& corpus, const TrainConfig& config,
                         const std::string& out_dir,
                         const std::string& resume_checkpoint) {
  config.validate();
  if (corpus.empty()) throw ValidationError("training corpus is empty");

  if (config.strategy != Strategy::standard) {
    for (const auto& s : corpus) {
      if (s.labels.empty())
        throw ValidationError("strategy '" + std::string(strategy_name(config.strategy)) +
                              "' requires labeled samples; sample '" + s.id +
                              "' has no labels");
    }
  }

  // Tokenize everything up front so bad input fails before any step runs.
  std::vector<std::vector<int>> tokens;
  tokens.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> t;
    try {
      t = encode_tokens(s.text, config.tokenizer, config.vocab_size);
    } catch (const ValidationError& e) {
      throw ValidationError("sample '" + s.id + "': " + e.what());
    }
    if (t.size() < 2)
      throw ValidationError("sample '" + s.id + "' has fewer than 2 tokens");
    tokens.push_back(std::move(t));
  }

  std::filesystem::create_directories(out_dir);
  const std::string trace_path = out_dir + "/trace.jsonl";
  const std::string metrics_path = out_dir + "/metrics.jsonl";
  const std::string checkpoint_path = out_dir + "/checkpoint.json";

  std::unique_ptr<Model> model;
  TopicWeightTable table;
  std::mt19937_64 rng;
  long long start_step = 0;

  if (!resume_checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_checkpoint);
    if (ckpt.model_kind != config.model_kind || ckpt.vocab_size != config.vocab_size)
      throw ValidationError("checkpoint does not match the configured model");
    model = model_from_checkpoint(ckpt);
    table = ckpt.table;
    std::istringstream rs(ckpt.rng_state);
    rs >> rng;
    if (!rs) throw ValidationError("checkpoint has a corrupt rng state");
    start_step = ckpt.step;
    if (start_step % config.reweighter.interval_steps != 0)
      throw ValidationError("checkpoint step is not an interval boundary");
    if (start_step >= config.total_steps)
      throw ValidationError("checkpoint is already past total_steps");
  } else {
    model = make_model(config.model_kind, config.vocab_size, config.hidden_size,
                       derive_seed(config.seed, "model-init"));
    rng.seed(derive_seed(config.seed, "train"));
  }

  std::ofstream trace_out(trace_path, std::ios::binary | std::ios::trunc);
  if (!trace_out) throw ValidationError("cannot write trace file: " + trace_path);
  MetricsWriter metrics(metrics_path);

  IntervalAccumulator acc;
  const int window = config.sequence_length + 1;  // tokens per training window

  auto save_state = [&](const std::string& path, long long step) {
    Checkpoint ckpt;
    ckpt.model_kind = config.model_kind;
    ckpt.vocab_size = config.vocab_size;
    ckpt.hidden_size = config.hidden_size;
    ckpt.tokenizer = config.tokenizer;
    ckpt.sequence_length = config.sequence_length;
    ckpt.learning_rate = config.learning_rate;
    ckpt.params.assign(model->parameters().begin(), model->parameters().end());
    ckpt.step = step;
    std::ostringstream rs;
    rs << rng;
    ckpt.rng_state = rs.str();
    ckpt.table = table;
    save_checkpoint(path, ckpt);
  };

  std::vector<const Sample*> batch(static_cast<std::size_t>(config.batch_size));
  std::vector<std::span<const int>> batch_tokens(static_cast<std::size_t>(config.batch_size));

  for (long long step = start_step; step < config.total_steps; ++step) {
    for (int b = 0; b < config.batch_size; ++b) {
      const std::size_t idx = next_index(rng, corpus.size());
      const std::vector<int>& t = tokens[idx];
      std::span<const int> span(t);
      if (static_cast<int>(t.size()) > window) {
        const std::size_t start = next_index(rng, t.size() - window + 1);
        span = span.subspan(start, static_cast<std::size_t>(window));
      }
      batch[static_cast<std::size_t>(b)] = &corpus[idx];
      batch_tokens[static_cast<std::size_t>(b)] = span;
    }

    const auto records = train_step(*model, batch, batch_tokens, table, acc, config, step);
    for (const auto& r : records) write_step_record(metrics.out, r);

    const long long boundary = step + 1;
    if (boundary % config.reweighter.interval_steps == 0) {
      const Stage stage = config.strategy == Strategy::stage1_only
                              ? Stage::stage1
                              : stage_for_step(boundary, config.reweighter);
      if (!acc.empty()) {
        const auto losses = acc.label_losses();
        const double avg = average_label_loss(losses);
        if (config.strategy == Strategy::standard) {
          acc.reset();  // weights stay at their initial 1
        } else {
          table.finalize_interval(acc, config.reweighter, stage);
        }
        TraceRecord rec;
        rec.interval = boundary / config.reweighter.interval_steps;
        rec.step = boundary;
        rec.stage = stage;
        rec.avg_label_loss = avg;
        for (const auto& [label, loss] : losses)
          rec.labels[label] = TraceLabelEntry{loss, table.weight(label)};
        write_trace_record(trace_out, rec);
      } else {
        acc.reset();
      }
      if (config.checkpoint_every > 0 && boundary % config.checkpoint_every == 0 &&
          boundary < config.total_steps) {
        save_state(out_dir + "/checkpoint_step" + std::to_string(boundary) + ".json",
                   boundary);
      }
    }
  }

  save_state(checkpoint_path, config.total_steps);
  trace_out.flush();
  metrics.out.flush();

  TrainResult result;
  result.model = std::move(model);
  result.table = table;
  result.steps = config.total_steps;
  result.trace_path = trace_path;
  result.metrics_path = metrics_path;
  result.checkpoint_path = checkpoint_path;
  return result;
}

}  // namespace toremi
