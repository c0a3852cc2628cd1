// Two-stage topic reweighting.
//
// A training run is divided into fixed-length intervals. During an interval,
// raw (unweighted) sample losses are accumulated per topic label. At the
// interval boundary the weight table is updated from the per-label mean
// losses: stage 1 upweights labels whose loss is above the cross-label
// average (and resets the rest to 1), stage 2 downweights persistently
// hard labels towards a floor and upweights the easy ones towards the cap.
// Samples in the next interval are scaled by the capped product of their
// labels' weights.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace toremi {

enum class Stage { stage1, stage2 };

const char* stage_name(Stage stage);
Stage stage_from_name(std::string_view name);

// How the stage-2 "loss at or below average" branch treats the (non-positive)
// loss delta:
//   magnitude - add alpha * |delta| so easy labels are upweighted
//   literal   - add the signed delta (which decreases the weight), floored
//               at gamma so the weight range invariant still holds
enum class Stage2BelowMode { magnitude, literal };

const char* stage2_below_mode_name(Stage2BelowMode mode);
Stage2BelowMode stage2_below_mode_from_name(std::string_view name);

struct ReweighterConfig {
  double alpha = 1.0;        // adjustment scale
  double beta = 5.0;         // upper weight limit, also caps the product multiplier
  double gamma = 0.1;        // lower weight limit
  int interval_steps = 100;  // steps per interval
  int transition_step = 4000;  // first step governed by stage 2
  Stage2BelowMode below_mode = Stage2BelowMode::magnitude;

  // Throws ValidationError unless gamma < 1 < beta, alpha > 0,
  // interval_steps >= 1 and transition_step is a positive multiple of
  // interval_steps (a stage must never flip mid-interval).
  void validate() const;
};

// Pure: stage1 iff step < transition_step. Steps are counted from 0, so the
// boundary after N completed steps is step index N.
Stage stage_for_step(long long step, const ReweighterConfig& config);

struct LabelStats {
  double loss_sum = 0.0;
  long long sample_count = 0;
};

// Per-interval raw-loss bookkeeping. A sample carrying k labels contributes
// its full loss once to each of the k labels.
class IntervalAccumulator {
 public:
  // Throws ValidationError for an empty label set and RuntimeAbort for a
  // non-finite loss; sample_id only decorates the diagnostics.
  void record_sample(const std::vector<std::string>& labels, double raw_loss,
                     std::string_view sample_id = {});

  // Mean raw loss per label seen this interval. Throws ValidationError when
  // nothing was recorded.
  std::map<std::string, double> label_losses() const;

  bool empty() const { return per_label_.empty(); }
  const std::map<std::string, LabelStats>& per_label() const { return per_label_; }
  long long steps_seen() const { return steps_seen_; }
  void note_step() { ++steps_seen_; }
  void reset();

 private:
  std::map<std::string, LabelStats> per_label_;
  long long steps_seen_ = 0;
};

// Unweighted mean over labels (not over samples). Throws on an empty map.
double average_label_loss(const std::map<std::string, double>& label_losses);

class TopicWeightTable {
 public:
  // Labels never touched by a finalization sit at the initial weight 1.
  double weight(const std::string& label) const;
  const std::map<std::string, double>& weights() const { return weights_; }
  Stage stage() const { return stage_; }
  long long finalized_intervals() const { return finalized_; }

  // Applies the stage's update rule to every label observed in the interval,
  // leaves the rest untouched, then resets the accumulator. Throws
  // ValidationError if the stage would move backwards and RuntimeAbort if a
  // label loss is non-finite.
  void finalize_interval(IntervalAccumulator& acc, const ReweighterConfig& config,
                         Stage stage);

  void set_weight(const std::string& label, double w) { weights_[label] = w; }

  // Checkpoint restore only.
  void restore_bookkeeping(Stage stage, long long finalized) {
    stage_ = stage;
    finalized_ = finalized;
  }

 private:
  std::map<std::string, double> weights_;
  Stage stage_ = Stage::stage1;
  long long finalized_ = 0;
};

// min(product of the labels' weights, beta). Unknown labels contribute 1.
// Throws ValidationError for an empty label set.
double weighted_loss_multiplier(const TopicWeightTable& table,
                                const std::vector<std::string>& labels,
                                const ReweighterConfig& config);

// ---------------------------------------------------------------------------
// Weight trace: one JSON object per finalized interval, newline-delimited.
// {"interval": int, "step": int, "stage": "stage1"|"stage2",
//  "avg_label_loss": float, "labels": {"<name>": {"loss": f, "weight": f}}}

struct TraceLabelEntry {
  double loss = 0.0;
  double weight = 1.0;
};

struct TraceRecord {
  long long interval = 0;  // 1-based finalization index
  long long step = 0;      // boundary step (interval * interval_steps)
  Stage stage = Stage::stage1;
  double avg_label_loss = 0.0;
  std::map<std::string, TraceLabelEntry> labels;
};

void write_trace_record(std::ostream& os, const TraceRecord& record);

// Throws ValidationError naming the byte offset of the offending line.
std::vector<TraceRecord> read_trace(const std::string& path);

}  // namespace toremi
