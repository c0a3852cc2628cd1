// Held-out evaluation (per-topic perplexity) and cross-run comparison
// reports over metrics and weight-trace files.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "toremi/corpus.hpp"
#include "toremi/model.hpp"

namespace toremi {

struct PerplexityReport {
  double overall = 0.0;  // exp of the mean per-sample NLL over all samples
  std::map<std::string, double> per_topic;
  std::map<std::string, long long> per_topic_counts;
  long long sample_count = 0;
  long long step = 0;  // training step the evaluated model came from
};

// Perplexity = exp(mean over samples of the sample's mean NLL). Multi-label
// samples count once per topic they carry. Never updates the model; the
// reduction uses compensated summation so the result is stable to sample
// order. Throws ValidationError on an empty held-out set.
PerplexityReport evaluate(const Model& model, const std::vector<Sample>& heldout,
                          TokenizerMode tokenizer, long long step = 0);

void write_report_json(const std::string& path, const PerplexityReport& report);

// ---------------------------------------------------------------------------
// Run comparison

struct RunInput {
  std::string name;  // strategy label used in the report
  std::string metrics_path;
  std::string trace_path;
};

struct RunSummary {
  std::string name;
  long long intervals = 0;
  long long transition_interval = 0;  // first stage2 interval, 0 = never
  double final_mean_raw_loss = 0.0;   // over the last step's samples
  double max_multiplier = 0.0;
  std::map<std::string, double> final_weights;
  std::map<std::string, long long> beta_clips;   // intervals with weight == beta-cap value seen in trace
  std::map<std::string, long long> gamma_floors;
  std::map<std::string, long long> first_beta_clip_step;
  std::map<std::string, long long> first_gamma_floor_step;
};

struct CompareResult {
  std::vector<RunSummary> runs;
  std::string curves_csv;        // step,strategy,topic,loss,weight per interval
  std::string loss_by_step_csv;  // step,strategy,mean_raw_loss
  std::string summary_json;
};

// All runs must share the same interval step grid; mismatches are rejected
// naming the offending files. Writes curves.csv, loss_by_step.csv and
// summary.json under out_dir; with exactly two runs the summary also carries
// per-topic weight and final-loss deltas.
CompareResult compare_runs(const std::vector<RunInput>& runs, const std::string& out_dir,
                           double beta = 5.0, double gamma = 0.1);

}  // namespace toremi
