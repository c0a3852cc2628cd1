#include "toremi/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "toremi/common.hpp"

namespace toremi {

const char* stage_name(Stage stage) {
  return stage == Stage::stage1 ? "stage1" : "stage2";
}

Stage stage_from_name(std::string_view name) {
  if (name == "stage1") return Stage::stage1;
  if (name == "stage2") return Stage::stage2;
  throw ValidationError("unknown stage name: '" + std::string(name) + "'");
}

const char* stage2_below_mode_name(Stage2BelowMode mode) {
  return mode == Stage2BelowMode::magnitude ? "magnitude" : "literal";
}

Stage2BelowMode stage2_below_mode_from_name(std::string_view name) {
  if (name == "magnitude") return Stage2BelowMode::magnitude;
  if (name == "literal") return Stage2BelowMode::literal;
  throw ValidationError("unknown stage2-below mode: '" + std::string(name) + "'");
}

void ReweighterConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw ValidationError("reweighter: alpha must be a positive real");
  if (!(beta > 1.0) || !std::isfinite(beta))
    throw ValidationError("reweighter: beta must be > 1");
  if (!(gamma > 0.0) || !(gamma < 1.0))
    throw ValidationError("reweighter: gamma must lie in (0, 1)");
  if (interval_steps < 1)
    throw ValidationError("reweighter: interval_steps must be >= 1");
  if (transition_step < 1)
    throw ValidationError("reweighter: transition_step must be positive");
  if (transition_step % interval_steps != 0)
    throw ValidationError(
        "reweighter: transition_step (" + std::to_string(transition_step) +
        ") must be a multiple of interval_steps (" + std::to_string(interval_steps) +
        ") so the stage never changes mid-interval");
}

Stage stage_for_step(long long step, const ReweighterConfig& config) {
  return step < config.transition_step ? Stage::stage1 : Stage::stage2;
}

void IntervalAccumulator::record_sample(const std::vector<std::string>& labels,
                                        double raw_loss, std::string_view sample_id) {
  if (labels.empty()) {
    std::string who = sample_id.empty() ? "sample" : "sample '" + std::string(sample_id) + "'";
    throw ValidationError(who + " has no topic labels and would be invisible to reweighting");
  }
  if (!std::isfinite(raw_loss)) {
    std::string who = sample_id.empty() ? "a sample" : "sample '" + std::string(sample_id) + "'";
    throw RuntimeAbort("non-finite loss recorded for " + who);
  }
  for (const auto& label : labels) {
    LabelStats& stats = per_label_[label];
    stats.loss_sum += raw_loss;
    stats.sample_count += 1;
  }
}

std::map<std::string, double> IntervalAccumulator::label_losses() const {
  if (per_label_.empty())
    throw ValidationError("interval accumulator is empty; no label losses to report");
  std::map<std::string, double> losses;
  for (const auto& [label, stats] : per_label_)
    losses[label] = stats.loss_sum / static_cast<double>(stats.sample_count);
  return losses;
}

void IntervalAccumulator::reset() {
  per_label_.clear();
  steps_seen_ = 0;
}

double average_label_loss(const std::map<std::string, double>& label_losses) {
  if (label_losses.empty())
    throw ValidationError("cannot average an empty label-loss map");
  double sum = 0.0;
  for (const auto& [label, loss] : label_losses) sum += loss;
  return sum / static_cast<double>(label_losses.size());
}

double TopicWeightTable::weight(const std::string& label) const {
  auto it = weights_.find(label);
  return it == weights_.end() ? 1.0 : it->second;
}

void TopicWeightTable::finalize_interval(IntervalAccumulator& acc,
                                         const ReweighterConfig& config, Stage stage) {
  if (stage_ == Stage::stage2 && stage == Stage::stage1)
    throw ValidationError("stage regression: table already finalized under stage2");

  const auto losses = acc.label_losses();
  for (const auto& [label, loss] : losses) {
    if (!std::isfinite(loss))
      throw RuntimeAbort("non-finite interval loss for label '" + label + "'");
  }
  const double avg = average_label_loss(losses);

  for (const auto& [label, loss] : losses) {
    const double prev = weight(label);
    const double delta = loss - avg;
    double next;
    if (stage == Stage::stage1) {
      next = loss > avg ? std::min(prev + config.alpha * delta, config.beta) : 1.0;
    } else if (loss > avg) {
      next = std::max(prev - config.alpha * delta, config.gamma);
    } else if (config.below_mode == Stage2BelowMode::magnitude) {
      next = std::min(prev + config.alpha * std::fabs(delta), config.beta);
    } else {
      next = std::max(std::min(prev + config.alpha * delta, config.beta), config.gamma);
    }
    weights_[label] = next;
  }

  stage_ = stage;
  ++finalized_;
  acc.reset();
}

double weighted_loss_multiplier(const TopicWeightTable& table,
                                const std::vector<std::string>& labels,
                                const ReweighterConfig& config) {
  if (labels.empty())
    throw ValidationError("weighted_loss_multiplier: label set must be non-empty");
  double product = 1.0;
  for (const auto& label : labels) product *= table.weight(label);
  return std::min(product, config.beta);
}

void write_trace_record(std::ostream& os, const TraceRecord& record) {
  nlohmann::ordered_json j;
  j["interval"] = record.interval;
  j["step"] = record.step;
  j["stage"] = stage_name(record.stage);
  j["avg_label_loss"] = record.avg_label_loss;
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& [name, entry] : record.labels) {
    labels[name] = {{"loss", entry.loss}, {"weight", entry.weight}};
  }
  j["labels"] = std::move(labels);
  os << j.dump() << '\n';
}

std::vector<TraceRecord> read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open trace file: " + path);

  std::vector<TraceRecord> records;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ValidationError(path + ": corrupt trace record at byte offset " +
                            std::to_string(line_start));
    }
    try {
      TraceRecord r;
      r.interval = j.at("interval").get<long long>();
      r.step = j.at("step").get<long long>();
      r.stage = stage_from_name(j.at("stage").get<std::string>());
      r.avg_label_loss = j.at("avg_label_loss").get<double>();
      for (const auto& [name, entry] : j.at("labels").items()) {
        TraceLabelEntry e;
        e.loss = entry.at("loss").get<double>();
        e.weight = entry.at("weight").get<double>();
        r.labels[name] = e;
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(path + ": corrupt trace record at byte offset " +
                            std::to_string(line_start));
    }
  }
  return records;
}

}  // namespace toremi
