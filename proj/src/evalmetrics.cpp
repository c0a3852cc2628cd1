#include "toremi/evalmetrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "toremi/common.hpp"
#include "toremi/reweight.hpp"
#include "toremi/trainer.hpp"

namespace toremi {

namespace {

// Kahan-compensated accumulator; keeps reductions order-stable.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PerplexityReport evaluate(const Model& model, const std::vector<Sample>& heldout,
                          TokenizerMode tokenizer, long long step) {
  if (heldout.empty()) throw ValidationError("held-out set is empty");

  PerplexityReport report;
  report.step = step;
  KahanSum total;
  std::map<std::string, KahanSum> per_topic;

  for (const auto& sample : heldout) {
    std::vector<int> tokens;
    try {
      tokens = encode_tokens(sample.text, tokenizer, model.vocab_size());
    } catch (const ValidationError& e) {
      throw ValidationError("sample '" + sample.id + "': " + e.what());
    }
    const double loss = model.sequence_loss(tokens);
    total.add(loss);
    ++report.sample_count;
    for (const auto& label : sample.labels) {
      per_topic[label].add(loss);
      ++report.per_topic_counts[label];
    }
  }

  report.overall = std::exp(total.sum / static_cast<double>(report.sample_count));
  for (const auto& [label, acc] : per_topic) {
    report.per_topic[label] =
        std::exp(acc.sum / static_cast<double>(report.per_topic_counts[label]));
  }
  return report;
}

void write_report_json(const std::string& path, const PerplexityReport& report) {
  nlohmann::ordered_json j;
  j["step"] = report.step;
  j["sample_count"] = report.sample_count;
  j["overall_perplexity"] = report.overall;
  j["per_topic"] = nlohmann::ordered_json::object();
  for (const auto& [label, ppl] : report.per_topic) {
    j["per_topic"][label] = {{"perplexity", ppl},
                             {"samples", report.per_topic_counts.at(label)}};
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

CompareResult compare_runs(const std::vector<RunInput>& runs, const std::string& out_dir,
                           double beta, double gamma) {
  if (runs.empty()) throw ValidationError("compare needs at least one run");
  std::filesystem::create_directories(out_dir);

  std::vector<std::vector<TraceRecord>> traces;
  traces.reserve(runs.size());
  for (const auto& run : runs) traces.push_back(read_trace(run.trace_path));

  // Every run must report on the same interval grid.
  std::vector<long long> grid;
  for (const auto& r : traces[0]) grid.push_back(r.step);
  for (std::size_t i = 1; i < traces.size(); ++i) {
    std::vector<long long> other;
    for (const auto& r : traces[i]) other.push_back(r.step);
    if (other != grid) {
      throw ValidationError("step grids differ between trace files " +
                            runs[0].trace_path + " and " + runs[i].trace_path);
    }
  }

  CompareResult result;
  result.curves_csv = out_dir + "/curves.csv";
  result.loss_by_step_csv = out_dir + "/loss_by_step.csv";
  result.summary_json = out_dir + "/summary.json";

  std::ofstream curves(result.curves_csv, std::ios::binary | std::ios::trunc);
  if (!curves) throw ValidationError("cannot write " + result.curves_csv);
  curves << "step,strategy,topic,loss,weight\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (const auto& rec : traces[i]) {
      for (const auto& [topic, entry] : rec.labels) {
        curves << rec.step << ',' << runs[i].name << ',' << topic << ','
               << format_double(entry.loss) << ',' << format_double(entry.weight) << '\n';
      }
    }
  }
  curves.flush();

  std::ofstream by_step(result.loss_by_step_csv, std::ios::binary | std::ios::trunc);
  if (!by_step) throw ValidationError("cannot write " + result.loss_by_step_csv);
  by_step << "step,strategy,mean_raw_loss\n";

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto metrics = read_metrics(runs[i].metrics_path);
    RunSummary summary;
    summary.name = runs[i].name;

    long long cur_step = -1;
    KahanSum step_sum;
    long long step_n = 0;
    auto flush_step = [&]() {
      if (step_n > 0) {
        const double mean = step_sum.sum / static_cast<double>(step_n);
        by_step << cur_step << ',' << runs[i].name << ',' << format_double(mean) << '\n';
        summary.final_mean_raw_loss = mean;
      }
    };
    for (const auto& rec : metrics) {
      if (rec.step != cur_step) {
        flush_step();
        cur_step = rec.step;
        step_sum = KahanSum{};
        step_n = 0;
      }
      step_sum.add(rec.raw_loss);
      ++step_n;
      summary.max_multiplier = std::max(summary.max_multiplier, rec.multiplier);
    }
    flush_step();

    summary.intervals = static_cast<long long>(traces[i].size());
    for (const auto& rec : traces[i]) {
      if (rec.stage == Stage::stage2 && summary.transition_interval == 0)
        summary.transition_interval = rec.interval;
      for (const auto& [topic, entry] : rec.labels) {
        summary.final_weights[topic] = entry.weight;
        if (entry.weight == beta) {
          ++summary.beta_clips[topic];
          if (!summary.first_beta_clip_step.count(topic))
            summary.first_beta_clip_step[topic] = rec.step;
        }
        if (entry.weight == gamma) {
          ++summary.gamma_floors[topic];
          if (!summary.first_gamma_floor_step.count(topic))
            summary.first_gamma_floor_step[topic] = rec.step;
        }
      }
    }
    result.runs.push_back(std::move(summary));
  }
  by_step.flush();

  nlohmann::ordered_json j;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& s : result.runs) {
    nlohmann::ordered_json r;
    r["name"] = s.name;
    r["intervals"] = s.intervals;
    r["transition_interval"] = s.transition_interval;
    r["final_mean_raw_loss"] = s.final_mean_raw_loss;
    r["max_multiplier"] = s.max_multiplier;
    r["final_weights"] = nlohmann::ordered_json::object();
    for (const auto& [topic, w] : s.final_weights) r["final_weights"][topic] = w;
    r["beta_clips"] = nlohmann::ordered_json::object();
    for (const auto& [topic, n] : s.beta_clips) r["beta_clips"][topic] = n;
    r["gamma_floors"] = nlohmann::ordered_json::object();
    for (const auto& [topic, n] : s.gamma_floors) r["gamma_floors"][topic] = n;
    r["first_beta_clip_step"] = nlohmann::ordered_json::object();
    for (const auto& [topic, st] : s.first_beta_clip_step)
      r["first_beta_clip_step"][topic] = st;
    r["first_gamma_floor_step"] = nlohmann::ordered_json::object();
    for (const auto& [topic, st] : s.first_gamma_floor_step)
      r["first_gamma_floor_step"][topic] = st;
    j["runs"].push_back(std::move(r));
  }

  if (result.runs.size() == 2) {
    nlohmann::ordered_json delta;
    delta["final_mean_raw_loss"] =
        result.runs[1].final_mean_raw_loss - result.runs[0].final_mean_raw_loss;
    delta["final_weights"] = nlohmann::ordered_json::object();
    std::set<std::string> topics;
    for (const auto& [t, w] : result.runs[0].final_weights) topics.insert(t);
    for (const auto& [t, w] : result.runs[1].final_weights) topics.insert(t);
    for (const auto& t : topics) {
      const auto& a = result.runs[0].final_weights;
      const auto& b = result.runs[1].final_weights;
      const double wa = a.count(t) ? a.at(t) : 1.0;
      const double wb = b.count(t) ? b.at(t) : 1.0;
      delta["final_weights"][t] = wb - wa;
    }
    j["delta"] = std::move(delta);
  }

  std::ofstream summary_out(result.summary_json, std::ios::binary | std::ios::trunc);
  if (!summary_out) throw ValidationError("cannot write " + result.summary_json);
  summary_out << j.dump(2) << '\n';
  return result;
}

}  // namespace toremi
