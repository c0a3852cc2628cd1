// toremi: single entry point wiring corpus generation, corruption, topic
// annotation, training, evaluation and reporting.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "toremi/annotate.hpp"
#include "toremi/common.hpp"
#include "toremi/corpus.hpp"
#include "toremi/evalmetrics.hpp"
#include "toremi/model.hpp"
#include "toremi/reweight.hpp"
#include "toremi/seeds.hpp"
#include "toremi/trainer.hpp"

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_resolved_config(const CLI::App& app, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/resolved.cfg", std::ios::binary | std::ios::trunc);
  if (!out) throw toremi::ValidationError("cannot write " + out_dir + "/resolved.cfg");
  out << app.config_to_str(true, false);
}

struct GenCorpusArgs {
  std::string out;
  std::string topics = "topicA,topicB";
  int samples_per_topic = 100;
  int seq_len = 128;
  int vocab_size = 64;
  double zipf = 1.0;
  std::uint64_t seed = 0;
};

struct CorruptArgs {
  std::string in;
  std::string out;
  std::string topic;
  std::uint64_t seed = 0;
};

struct AnnotateArgs {
  std::string in;
  std::string out;
  std::string mode = "generate";
  std::string granularity = "per-cluster";
  std::string taxonomy_path;
  std::string checkpoint;
  std::string labeler_url;
  std::string generate_template;
  std::string select_template;
  std::string embeddings;
  int k = 8;
  int embed_dim = 256;
  int top_keywords = 100;
  int max_labels = 3;
  int retries = 3;
  int timeout = 30;
  std::uint64_t seed = 0;
  bool mock_labeler = false;
  bool skip_labeled = false;
};

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string strategy = "toremi";
  std::string tokenizer = "alphabet";
  std::string model = "bigram";
  std::string stage2_below = "magnitude";
  std::string resume;
  long long total_steps = 8000;
  int batch_size = 8;
  int seq_len = 64;
  int vocab_size = 64;
  int hidden = 16;
  double lr = 0.1;
  double alpha = 1.0;
  double beta = 5.0;
  double gamma = 0.1;
  int interval = 100;
  int transition = 4000;
  long long checkpoint_every = 0;
  double heldout_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out;
};

struct CompareArgs {
  std::vector<std::string> runs;
  std::string out;
  double beta = 5.0;
  double gamma = 0.1;
};

struct InspectArgs {
  std::string trace;
  double beta = 5.0;
  double gamma = 0.1;
};

int run_gen_corpus(const GenCorpusArgs& args) {
  toremi::SyntheticSpec spec;
  spec.topics = toremi::partition_vocab(split_csv(args.topics), args.vocab_size, args.zipf);
  spec.samples_per_topic = args.samples_per_topic;
  spec.sequence_length = args.seq_len;
  spec.vocab_size = args.vocab_size;
  spec.seed = toremi::derive_seed(args.seed, "gen-corpus");
  const auto corpus = toremi::generate_synthetic(spec);
  toremi::save_corpus(args.out, corpus);
  std::cout << "wrote " << corpus.size() << " samples to " << args.out << "\n";
  return 0;
}

int run_corrupt(const CorruptArgs& args) {
  const auto corpus = toremi::load_corpus(args.in);
  const auto corrupted =
      toremi::corrupt_topic(corpus, args.topic, toremi::derive_seed(args.seed, "corrupt"));
  toremi::save_corpus(args.out, corrupted);
  long long touched = 0;
  for (const auto& s : corrupted) {
    for (const auto& l : s.labels) {
      if (l == args.topic) {
        ++touched;
        break;
      }
    }
  }
  std::cout << "shuffled " << touched << " '" << args.topic << "' samples into "
            << args.out << "\n";
  return 0;
}

int run_annotate(const AnnotateArgs& args) {
  toremi::AnnotateConfig config;
  config.embed_dim = args.embed_dim;
  config.k = args.k;
  config.top_keywords = args.top_keywords;
  config.mode = toremi::label_mode_from_name(args.mode);
  config.granularity = toremi::granularity_from_name(args.granularity);
  config.max_labels = args.max_labels;
  config.max_retries = args.retries;
  config.seed = toremi::derive_seed(args.seed, "annotate");
  config.skip_labeled = args.skip_labeled;
  config.checkpoint_path = args.checkpoint;
  if (!args.taxonomy_path.empty())
    config.taxonomy = toremi::Taxonomy::load(args.taxonomy_path);

  std::unique_ptr<toremi::Labeler> labeler;
  if (args.mock_labeler) {
    labeler = std::make_unique<toremi::MockLabeler>();
  } else if (!args.labeler_url.empty()) {
    toremi::HttpLabeler::Options options;
    options.url = args.labeler_url;
    options.timeout_seconds = args.timeout;
    options.attempts = args.retries;
    if (!args.generate_template.empty())
      options.generate_template = toremi::load_template_file(args.generate_template);
    if (!args.select_template.empty())
      options.select_template = toremi::load_template_file(args.select_template);
    labeler = std::make_unique<toremi::HttpLabeler>(options);
  } else {
    throw toremi::ValidationError(
        "no labeler configured: pass --mock-labeler or set --labeler-url / "
        "TOREMI_LABELER_URL");
  }

  std::unique_ptr<toremi::Embedder> embedder;
  if (!args.embeddings.empty())
    embedder = std::make_unique<toremi::FileEmbedder>(args.embeddings);

  const auto corpus = toremi::load_corpus(args.in);
  const auto labeled =
      toremi::annotate_corpus(corpus, config, *labeler, embedder.get());
  toremi::save_corpus(args.out, labeled);
  std::cout << "labeled " << labeled.size() << " samples into " << args.out << "\n";
  return 0;
}

int run_train(const CLI::App& app, const TrainArgs& args) {
  toremi::TrainConfig config;
  config.strategy = toremi::strategy_from_name(args.strategy);
  config.total_steps = args.total_steps;
  config.batch_size = args.batch_size;
  config.sequence_length = args.seq_len;
  config.learning_rate = args.lr;
  config.vocab_size = args.vocab_size;
  config.tokenizer = toremi::tokenizer_from_name(args.tokenizer);
  config.model_kind = args.model;
  config.hidden_size = args.hidden;
  config.seed = args.seed;
  config.checkpoint_every = args.checkpoint_every;
  config.reweighter.alpha = args.alpha;
  config.reweighter.beta = args.beta;
  config.reweighter.gamma = args.gamma;
  config.reweighter.interval_steps = args.interval;
  config.reweighter.transition_step = args.transition;
  config.reweighter.below_mode = toremi::stage2_below_mode_from_name(args.stage2_below);
  config.validate();

  write_resolved_config(app, args.out);
  auto corpus = toremi::load_corpus(args.corpus);

  if (args.heldout_fraction > 0.0) {
    auto split = toremi::split_heldout(corpus, args.heldout_fraction,
                                       toremi::derive_seed(args.seed, "split"));
    toremi::save_corpus(args.out + "/heldout.jsonl", split.heldout);
    corpus = std::move(split.train);
    std::cout << "held out " << split.heldout.size() << " samples to " << args.out
              << "/heldout.jsonl\n";
  }

  const auto result = toremi::run_training(corpus, config, args.out, args.resume);
  std::cout << "trained " << result.steps << " steps (" << args.strategy << ")\n";
  for (const auto& [label, weight] : result.table.weights())
    std::cout << "  final weight " << label << " = " << weight << "\n";
  std::cout << "trace:      " << result.trace_path << "\n"
            << "metrics:    " << result.metrics_path << "\n"
            << "checkpoint: " << result.checkpoint_path << "\n";
  return 0;
}

int run_eval(const CLI::App& app, const EvalArgs& args) {
  const auto ckpt = toremi::load_checkpoint(args.checkpoint);
  const auto model = toremi::model_from_checkpoint(ckpt);
  const auto corpus = toremi::load_corpus(args.corpus);
  const auto report = toremi::evaluate(*model, corpus, ckpt.tokenizer, ckpt.step);

  write_resolved_config(app, args.out);
  toremi::write_report_json(args.out + "/report.json", report);
  std::cout << "overall perplexity: " << report.overall << " (" << report.sample_count
            << " samples)\n";
  for (const auto& [topic, ppl] : report.per_topic)
    std::cout << "  " << topic << ": " << ppl << "\n";
  return 0;
}

int run_compare(const CLI::App& app, const CompareArgs& args) {
  std::vector<toremi::RunInput> inputs;
  for (const auto& spec : args.runs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw toremi::ValidationError("--run expects NAME=DIR, got '" + spec + "'");
    toremi::RunInput input;
    input.name = spec.substr(0, eq);
    const std::string dir = spec.substr(eq + 1);
    input.metrics_path = dir + "/metrics.jsonl";
    input.trace_path = dir + "/trace.jsonl";
    inputs.push_back(std::move(input));
  }
  write_resolved_config(app, args.out);
  const auto result = toremi::compare_runs(inputs, args.out, args.beta, args.gamma);
  for (const auto& run : result.runs) {
    std::cout << run.name << ": intervals=" << run.intervals
              << " transition_interval=" << run.transition_interval
              << " final_mean_raw_loss=" << run.final_mean_raw_loss << "\n";
  }
  std::cout << "curves:  " << result.curves_csv << "\n"
            << "summary: " << result.summary_json << "\n";
  return 0;
}

int run_inspect(const InspectArgs& args) {
  const auto records = toremi::read_trace(args.trace);
  std::cout << "records: " << records.size() << "\n";

  long long transition_interval = 0;
  for (const auto& r : records) {
    if (r.stage == toremi::Stage::stage2) {
      transition_interval = r.interval;
      break;
    }
  }
  if (transition_interval > 0) {
    std::cout << "stage transition: interval " << transition_interval << " (step "
              << transition_interval *
                     (records.empty() ? 0 : records[0].step / records[0].interval)
              << ")\n";
  } else {
    std::cout << "stage transition: none\n";
  }

  struct TopicStats {
    double min_w = 0.0;
    double max_w = 0.0;
    bool seen = false;
    long long beta_clips = 0;
    long long gamma_floors = 0;
  };
  std::map<std::string, TopicStats> topics;
  for (const auto& r : records) {
    for (const auto& [topic, entry] : r.labels) {
      auto& t = topics[topic];
      if (!t.seen) {
        t.min_w = t.max_w = entry.weight;
        t.seen = true;
      } else {
        t.min_w = std::min(t.min_w, entry.weight);
        t.max_w = std::max(t.max_w, entry.weight);
      }
      if (entry.weight == args.beta) ++t.beta_clips;
      if (entry.weight == args.gamma) ++t.gamma_floors;
    }
  }
  for (const auto& [topic, t] : topics) {
    std::cout << "topic " << topic << ": weight in [" << t.min_w << ", " << t.max_w
              << "], beta-clips " << t.beta_clips << ", gamma-floors " << t.gamma_floors
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topic-based loss reweighting for training-data selection"};
  app.option_defaults()->always_capture_default();  // echoed into resolved.cfg
  app.set_config("--config", "", "INI/TOML config file; sections named per subcommand");
  app.require_subcommand(1);

  GenCorpusArgs gen_args;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic multi-topic corpus");
  gen->add_option("--out", gen_args.out, "Output corpus JSONL")->required();
  gen->add_option("--topics", gen_args.topics, "Comma-separated topic names");
  gen->add_option("--samples-per-topic", gen_args.samples_per_topic, "Samples per topic");
  gen->add_option("--seq-len", gen_args.seq_len, "Tokens per sample");
  gen->add_option("--vocab-size", gen_args.vocab_size, "Vocabulary size (max 94)");
  gen->add_option("--zipf", gen_args.zipf, "Zipf exponent for token ranks");
  gen->add_option("--seed", gen_args.seed, "Random seed");

  CorruptArgs corrupt_args;
  auto* corrupt = app.add_subcommand("corrupt", "Character-shuffle every sample of one topic");
  corrupt->add_option("--in", corrupt_args.in, "Input corpus JSONL")->required();
  corrupt->add_option("--out", corrupt_args.out, "Output corpus JSONL")->required();
  corrupt->add_option("--topic", corrupt_args.topic, "Topic to corrupt")->required();
  corrupt->add_option("--seed", corrupt_args.seed, "Random seed");

  AnnotateArgs annotate_args;
  auto* annotate = app.add_subcommand("annotate", "Assign topic labels via clustering + labeler");
  annotate->add_option("--in", annotate_args.in, "Input corpus JSONL")->required();
  annotate->add_option("--out", annotate_args.out, "Labeled corpus JSONL")->required();
  annotate->add_option("--mode", annotate_args.mode, "generate or select");
  annotate->add_option("--granularity", annotate_args.granularity, "per-cluster or per-sample");
  annotate->add_option("--taxonomy", annotate_args.taxonomy_path, "Taxonomy file (select mode)");
  annotate->add_option("--k", annotate_args.k, "Number of clusters");
  annotate->add_option("--embed-dim", annotate_args.embed_dim, "Embedding dimension");
  annotate->add_option("--top-keywords", annotate_args.top_keywords, "Keywords per cluster");
  annotate->add_option("--max-labels", annotate_args.max_labels, "Labels per request");
  annotate->add_option("--retries", annotate_args.retries, "Labeler attempts before aborting");
  annotate->add_option("--timeout", annotate_args.timeout, "HTTP timeout in seconds");
  annotate->add_option("--seed", annotate_args.seed, "Random seed");
  annotate->add_option("--checkpoint", annotate_args.checkpoint, "Resumable progress file");
  annotate->add_option("--labeler-url", annotate_args.labeler_url, "Labeler endpoint")
      ->envname("TOREMI_LABELER_URL");
  annotate->add_option("--generate-template", annotate_args.generate_template,
                       "Prompt template file for generate mode");
  annotate->add_option("--select-template", annotate_args.select_template,
                       "Prompt template file for select mode");
  annotate->add_option("--embeddings", annotate_args.embeddings,
                       "Precomputed embeddings JSONL keyed by sample id");
  annotate->add_flag("--mock-labeler", annotate_args.mock_labeler,
                     "Use the deterministic offline labeler");
  annotate->add_flag("--skip-labeled", annotate_args.skip_labeled,
                     "Keep existing labels instead of re-labeling");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a toy model with loss reweighting");
  train->add_option("--corpus", train_args.corpus, "Labeled corpus JSONL")->required();
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--strategy", train_args.strategy, "standard, stage1_only or toremi");
  train->add_option("--total-steps", train_args.total_steps, "Training steps");
  train->add_option("--batch-size", train_args.batch_size, "Samples per step");
  train->add_option("--seq-len", train_args.seq_len, "Predicted positions per window");
  train->add_option("--lr", train_args.lr, "SGD learning rate");
  train->add_option("--vocab-size", train_args.vocab_size, "Vocabulary size");
  train->add_option("--tokenizer", train_args.tokenizer, "alphabet or byte");
  train->add_option("--model", train_args.model, "bigram or mlp");
  train->add_option("--hidden", train_args.hidden, "Hidden units (mlp)");
  train->add_option("--alpha", train_args.alpha, "Weight adjustment scale");
  train->add_option("--beta", train_args.beta, "Upper weight limit");
  train->add_option("--gamma", train_args.gamma, "Lower weight limit");
  train->add_option("--interval", train_args.interval, "Steps per reweighting interval");
  train->add_option("--transition", train_args.transition, "First stage-2 step");
  train->add_option("--stage2-below", train_args.stage2_below,
                    "Below-average branch: magnitude or literal");
  train->add_option("--checkpoint-every", train_args.checkpoint_every,
                    "Periodic checkpoint cadence in steps (0 = final only)");
  train->add_option("--heldout-fraction", train_args.heldout_fraction,
                    "Stratified held-out fraction written to heldout.jsonl");
  train->add_option("--resume", train_args.resume, "Checkpoint to resume from");
  train->add_option("--seed", train_args.seed, "Random seed");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out corpus");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval->add_option("--corpus", eval_args.corpus, "Held-out corpus JSONL")->required();
  eval->add_option("--out", eval_args.out, "Output directory")->required();

  CompareArgs compare_args;
  auto* compare = app.add_subcommand("compare", "Compare training runs");
  compare->add_option("--run", compare_args.runs, "NAME=DIR of a training run")
      ->required()
      ->expected(-1);
  compare->add_option("--out", compare_args.out, "Output directory")->required();
  compare->add_option("--beta", compare_args.beta, "Upper weight limit used for clip counts");
  compare->add_option("--gamma", compare_args.gamma, "Lower weight limit used for floor counts");

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "Summarize a weight trace");
  inspect->add_option("--trace", inspect_args.trace, "Weight trace JSONL")->required();
  inspect->add_option("--beta", inspect_args.beta, "Upper weight limit used for clip counts");
  inspect->add_option("--gamma", inspect_args.gamma, "Lower weight limit used for floor counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return run_gen_corpus(gen_args);
    if (*corrupt) return run_corrupt(corrupt_args);
    if (*annotate) return run_annotate(annotate_args);
    if (*train) return run_train(app, train_args);
    if (*eval) return run_eval(app, eval_args);
    if (*compare) return run_compare(app, compare_args);
    if (*inspect) return run_inspect(inspect_args);
  } catch (const toremi::RuntimeAbort& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return 2;
  } catch (const toremi::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
