// Topic annotation pipeline: embed samples, cluster with k-means, extract
// per-cluster TF-IDF keywords, and turn the keywords into topic labels via a
// labeling client (an HTTP endpoint or a deterministic mock).

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "toremi/corpus.hpp"

namespace toremi {

// ---------------------------------------------------------------------------
// Embedding

class Embedder {
 public:
  virtual ~Embedder() = default;
  // L2-normalized vector; deterministic for identical input.
  virtual std::vector<double> embed(const Sample& sample) const = 0;
  virtual int dim() const = 0;
};

// Hashed character 3-grams with signed buckets. Dependency-free stand-in for
// a real sentence embedder; separates desk-scale topical corpora.
class HashedNgramEmbedder : public Embedder {
 public:
  explicit HashedNgramEmbedder(int dim = 256);
  std::vector<double> embed(const Sample& sample) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
};

// Precomputed vectors keyed by sample id, loaded from JSONL
// {"id": string, "vector": [float, ...]}.
class FileEmbedder : public Embedder {
 public:
  explicit FileEmbedder(const std::string& path);
  std::vector<double> embed(const Sample& sample) const override;
  int dim() const override { return dim_; }

 private:
  int dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

// ---------------------------------------------------------------------------
// Clustering

struct ClusterAssignment {
  int k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;           // sample index -> cluster
  double inertia = 0.0;                  // sum of squared distances
  std::vector<double> inertia_history;   // one entry per assignment pass
};

// Seeded k-means++ initialization followed by Lloyd iterations until the
// largest centroid shift drops below tol or max_iters is reached. Empty
// clusters are reseeded to the point farthest from its assigned centroid.
// Deterministic in (vectors, k, seed).
ClusterAssignment kmeans(const std::vector<std::vector<double>>& vectors, int k,
                         std::uint64_t seed, int max_iters = 100, double tol = 1e-6);

// ---------------------------------------------------------------------------
// Keywords

struct KeywordSet {
  int cluster_index = 0;
  std::vector<std::pair<std::string, double>> keywords;  // descending score,
                                                         // ties broken lexicographically
};

// Lowercase, split on non-alphanumeric bytes, drop tokens shorter than 2
// characters and a fixed 50-word stopword list.
std::vector<std::string> tokenize_for_keywords(const std::string& text);

// Each cluster's token lists form one concatenated cluster-document.
// tf = term count / document length, idf = ln((1+C)/(1+df)) + 1 over the C
// cluster-documents, score = tf * idf. At least 2 clusters required.
std::vector<KeywordSet> tfidf_keywords(
    const std::vector<std::vector<std::string>>& cluster_docs, int top_k = 100);

// ---------------------------------------------------------------------------
// Taxonomy and prompts

struct Taxonomy {
  std::vector<std::string> labels;

  bool contains(const std::string& label) const;
  void validate() const;  // >= 2 unique non-empty entries
  // One label per line, '#' comments and blank lines ignored.
  static Taxonomy load(const std::string& path);
};

enum class LabelMode { generate, select };

const char* label_mode_name(LabelMode mode);
LabelMode label_mode_from_name(std::string_view name);

struct LabelerRequest {
  LabelMode mode = LabelMode::generate;
  std::vector<std::string> keywords;
  std::optional<Taxonomy> taxonomy;  // required iff mode == select
  int max_labels = 3;
};

struct LabelerResponse {
  std::vector<std::string> labels;
};

std::string default_generate_template();
std::string default_select_template();
std::string load_template_file(const std::string& path);

// Deterministic substitution of {{keywords}}, {{taxonomy}} and {{max_labels}}
// into the mode's template. Select mode without a taxonomy is rejected.
std::string build_prompt(const LabelerRequest& request);
std::string build_prompt(const LabelerRequest& request, std::string_view template_text);

// Strict JSON array of non-empty strings; anything else throws.
std::vector<std::string> parse_label_array(const std::string& text);

// ---------------------------------------------------------------------------
// Labeling clients

class Labeler {
 public:
  virtual ~Labeler() = default;
  virtual LabelerResponse label(const LabelerRequest& request) = 0;
};

// Maps keyword fingerprints to fixed labels. A rule fires when the keywords
// contain characters from its marker set; the rule with the highest overlap
// wins. Without a matching rule the fallback picks deterministically by
// keyword hash: a taxonomy entry in select mode, a synthetic "Topic-xxxx"
// name in generate mode.
struct MockRule {
  std::string marker_chars;
  std::vector<std::string> labels;
};

class MockLabeler : public Labeler {
 public:
  MockLabeler() = default;
  explicit MockLabeler(std::vector<MockRule> rules) : rules_(std::move(rules)) {}
  LabelerResponse label(const LabelerRequest& request) override;

 private:
  std::vector<MockRule> rules_;
};

// POSTs {"prompt": ..., "max_tokens": ...} to the endpoint and expects
// {"text": "<JSON array of labels>"}. Transport failures are retried with
// exponential backoff before giving up.
class HttpLabeler : public Labeler {
 public:
  struct Options {
    std::string url;  // e.g. http://host:port/path
    int timeout_seconds = 30;
    int max_tokens = 64;
    int attempts = 3;
    int backoff_initial_ms = 200;
    std::string generate_template;  // empty = builtin
    std::string select_template;
  };

  explicit HttpLabeler(Options options);
  LabelerResponse label(const LabelerRequest& request) override;

 private:
  Options options_;
  std::string host_;
  int port_ = 80;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Pipeline

enum class LabelGranularity { per_cluster, per_sample };

const char* granularity_name(LabelGranularity granularity);
LabelGranularity granularity_from_name(std::string_view name);

struct AnnotateConfig {
  int embed_dim = 256;
  int k = 8;
  int kmeans_max_iters = 100;
  double kmeans_tol = 1e-6;
  int top_keywords = 100;
  LabelMode mode = LabelMode::generate;
  LabelGranularity granularity = LabelGranularity::per_cluster;
  int max_labels = 3;
  int max_retries = 3;
  std::uint64_t seed = 0;
  std::optional<Taxonomy> taxonomy;
  bool skip_labeled = false;
  std::string checkpoint_path;  // empty = no checkpointing

  void validate() const;
};

// Embeds, clusters and labels the corpus. Output preserves input order and
// ids; every sample gains its cluster index and at least one label. In select
// mode responses outside the taxonomy are rejected and retried; after
// max_retries the run aborts, leaving completed work in the checkpoint file
// so a rerun resumes instead of re-labeling.
std::vector<Sample> annotate_corpus(const std::vector<Sample>& corpus,
                                    const AnnotateConfig& config, Labeler& labeler,
                                    const Embedder* embedder = nullptr);

}  // namespace toremi
