#include "toremi/annotate.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "httplib.h"
#include "json.hpp"
#include "toremi/common.hpp"
#include "toremi/seeds.hpp"

namespace toremi {

// ---------------------------------------------------------------------------
// Embedding

HashedNgramEmbedder::HashedNgramEmbedder(int dim) : dim_(dim) {
  if (dim < 1) throw ValidationError("embedding dimension must be positive");
}

std::vector<double> HashedNgramEmbedder::embed(const Sample& sample) const {
  std::string_view text = sample.text;
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front())))
    text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back())))
    text.remove_suffix(1);
  if (text.empty())
    throw ValidationError("sample '" + sample.id + "' has empty text; cannot embed");

  // Boundary sentinels so one- and two-character texts still produce 3-grams.
  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back('\x02');
  padded.append(text);
  padded.push_back('\x03');

  std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a64(std::string_view(padded.data() + i, 3));
    const std::size_t bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  }

  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    v[static_cast<std::size_t>(fnv1a64(text) % static_cast<std::uint64_t>(dim_))] = 1.0;
    norm = 1.0;
  }
  for (double& x : v) x /= norm;
  return v;
}

FileEmbedder::FileEmbedder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open embedding file: " + path);
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      const std::string id = j.at("id").get<std::string>();
      std::vector<double> vec = j.at("vector").get<std::vector<double>>();
      if (vec.empty()) throw ValidationError("empty vector");
      if (dim_ == 0) dim_ = static_cast<int>(vec.size());
      if (static_cast<int>(vec.size()) != dim_)
        throw ValidationError("vector dimension mismatch");
      vectors_[id] = std::move(vec);
    } catch (const std::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": bad embedding record: " + e.what());
    }
  }
  if (vectors_.empty()) throw ValidationError("embedding file is empty: " + path);
}

std::vector<double> FileEmbedder::embed(const Sample& sample) const {
  auto it = vectors_.find(sample.id);
  if (it == vectors_.end())
    throw ValidationError("no precomputed embedding for sample '" + sample.id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

}  // namespace

ClusterAssignment kmeans(const std::vector<std::vector<double>>& vectors, int k,
                         std::uint64_t seed, int max_iters, double tol) {
  const std::size_t n = vectors.size();
  if (k <= 0) throw ValidationError("k must be positive");
  if (static_cast<std::size_t>(k) > n)
    throw ValidationError("k (" + std::to_string(k) + ") exceeds the number of vectors (" +
                          std::to_string(n) + ")");
  if (max_iters < 1) throw ValidationError("max_iters must be positive");
  const std::size_t dim = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw ValidationError("embedding vectors differ in dimension");
  }

  std::mt19937_64 rng(seed);
  ClusterAssignment result;
  result.k = k;

  // k-means++ seeding: first center uniform, the rest proportional to the
  // squared distance to the nearest chosen center.
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  result.centroids.push_back(vectors[next_index(rng, n)]);
  for (std::size_t i = 0; i < n; ++i)
    min_dist[i] = squared_distance(vectors[i], result.centroids.back());
  while (static_cast<int>(result.centroids.size()) < k) {
    double total = 0.0;
    for (double d : min_dist) total += d;
    std::size_t pick;
    if (total > 0.0) {
      const double r = next_unit(rng) * total;
      double cum = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += min_dist[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    } else {
      pick = next_index(rng, n);
    }
    result.centroids.push_back(vectors[pick]);
    for (std::size_t i = 0; i < n; ++i)
      min_dist[i] = std::min(min_dist[i], squared_distance(vectors[i], result.centroids.back()));
  }

  result.assignment.assign(n, 0);
  auto assign_pass = [&]() {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(vectors[i], result.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(vectors[i], result.centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      result.assignment[i] = best;
      inertia += best_d;
    }
    result.inertia = inertia;
    result.inertia_history.push_back(inertia);
  };

  assign_pass();
  for (int iter = 0; iter < max_iters; ++iter) {
    // Repair empty clusters: hand each one the point farthest from its
    // currently assigned centroid (never emptying a singleton cluster).
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : result.assignment) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t farthest = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const int owner = result.assignment[i];
        if (counts[static_cast<std::size_t>(owner)] < 2) continue;
        const double d =
            squared_distance(vectors[i], result.centroids[static_cast<std::size_t>(owner)]);
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      if (farthest == n) continue;  // k <= n makes this unreachable
      --counts[static_cast<std::size_t>(result.assignment[farthest])];
      result.assignment[farthest] = c;
      ++counts[static_cast<std::size_t>(c)];
    }

    std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(result.assignment[i]);
      ++sizes[c];
      for (std::size_t d = 0; d < dim; ++d) next[c][d] += vectors[i][d];
    }
    double max_shift = 0.0;
    for (int c = 0; c < k; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      for (std::size_t d = 0; d < dim; ++d) next[ci][d] /= static_cast<double>(sizes[ci]);
      max_shift = std::max(max_shift, std::sqrt(squared_distance(next[ci], result.centroids[ci])));
    }
    result.centroids = std::move(next);
    assign_pass();
    if (max_shift < tol) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Keywords

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a",    "about", "all",  "an",   "and",  "are",   "as",    "at",   "be",   "but",
      "by",   "can",   "for",  "from", "had",  "has",   "have",  "he",   "her",  "his",
      "if",   "in",    "is",   "it",   "its",  "not",   "of",    "on",   "or",   "our",
      "she",  "so",    "that", "the",  "their", "them",  "then",  "there", "they", "this",
      "to",   "was",   "we",   "were", "what", "when",  "which", "who",  "will", "with"};
  return words;
}

}  // namespace

std::vector<std::string> tokenize_for_keywords(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (current.size() >= 2 && !stopwords().count(current)) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::vector<KeywordSet> tfidf_keywords(
    const std::vector<std::vector<std::string>>& cluster_docs, int top_k) {
  const std::size_t c_count = cluster_docs.size();
  if (c_count < 2)
    throw ValidationError("TF-IDF over cluster-documents needs at least 2 clusters; "
                          "raise k to 2 or more");
  if (top_k < 1) throw ValidationError("top_k must be positive");

  std::map<std::string, int> df;
  std::vector<std::map<std::string, long long>> counts(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (const auto& term : cluster_docs[c]) ++counts[c][term];
    for (const auto& [term, cnt] : counts[c]) ++df[term];
  }

  std::vector<KeywordSet> out;
  out.reserve(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    KeywordSet set;
    set.cluster_index = static_cast<int>(c);
    const double total = static_cast<double>(cluster_docs[c].size());
    if (total > 0.0) {
      for (const auto& [term, cnt] : counts[c]) {
        const double tf = static_cast<double>(cnt) / total;
        const double idf =
            std::log((1.0 + static_cast<double>(c_count)) /
                     (1.0 + static_cast<double>(df[term]))) + 1.0;
        set.keywords.emplace_back(term, tf * idf);
      }
      std::sort(set.keywords.begin(), set.keywords.end(),
                [](const auto& a, const auto& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
                });
      if (static_cast<int>(set.keywords.size()) > top_k)
        set.keywords.resize(static_cast<std::size_t>(top_k));
    }
    out.push_back(std::move(set));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Taxonomy and prompts

bool Taxonomy::contains(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

void Taxonomy::validate() const {
  if (labels.size() < 2)
    throw ValidationError("taxonomy needs at least 2 labels, got " +
                          std::to_string(labels.size()));
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw ValidationError("taxonomy contains an empty label");
    if (!seen.insert(l).second)
      throw ValidationError("taxonomy contains duplicate label '" + l + "'");
  }
}

namespace {

std::string trim_copy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open taxonomy file: " + path);
  Taxonomy tax;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string label = trim_copy(line);
    if (!label.empty()) tax.labels.push_back(label);
  }
  tax.validate();
  return tax;
}

const char* label_mode_name(LabelMode mode) {
  return mode == LabelMode::generate ? "generate" : "select";
}

LabelMode label_mode_from_name(std::string_view name) {
  if (name == "generate") return LabelMode::generate;
  if (name == "select") return LabelMode::select;
  throw ValidationError("unknown label mode: '" + std::string(name) + "'");
}

std::string default_generate_template() {
  return "You are labeling one cluster of documents drawn from a large text corpus.\n"
         "The cluster is characterized by the following representative keywords:\n"
         "{{keywords}}\n"
         "\n"
         "Propose up to {{max_labels}} short topic labels that best describe what\n"
         "these documents are about.\n"
         "Answer with a JSON array of strings and nothing else.\n";
}

std::string default_select_template() {
  return "You are labeling one cluster of documents drawn from a large text corpus.\n"
         "The cluster is characterized by the following representative keywords:\n"
         "{{keywords}}\n"
         "\n"
         "Choose up to {{max_labels}} topics from the list below that best match\n"
         "these documents:\n"
         "{{taxonomy}}\n"
         "\n"
         "Answer with a JSON array of strings chosen only from the list, and\n"
         "nothing else.\n";
}

std::string load_template_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open prompt template: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void replace_all(std::string& text, std::string_view needle, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

}  // namespace

std::string build_prompt(const LabelerRequest& request) {
  return build_prompt(request, request.mode == LabelMode::generate
                                   ? default_generate_template()
                                   : default_select_template());
}

std::string build_prompt(const LabelerRequest& request, std::string_view template_text) {
  if (request.mode == LabelMode::select && !request.taxonomy)
    throw ValidationError("select mode requires a taxonomy");
  if (request.max_labels < 1) throw ValidationError("max_labels must be positive");

  std::string keywords;
  for (std::size_t i = 0; i < request.keywords.size(); ++i) {
    if (i) keywords += ", ";
    keywords += request.keywords[i];
  }
  std::string taxonomy;
  if (request.taxonomy) {
    for (std::size_t i = 0; i < request.taxonomy->labels.size(); ++i) {
      if (i) taxonomy += '\n';
      taxonomy += "- " + request.taxonomy->labels[i];
    }
  }

  std::string prompt(template_text);
  replace_all(prompt, "{{keywords}}", keywords);
  replace_all(prompt, "{{taxonomy}}", taxonomy);
  replace_all(prompt, "{{max_labels}}", std::to_string(request.max_labels));
  return prompt;
}

std::vector<std::string> parse_label_array(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_array())
    throw ValidationError("labeler response is not a JSON array: " + text);
  std::vector<std::string> labels;
  for (const auto& item : j) {
    if (!item.is_string())
      throw ValidationError("labeler response contains a non-string entry");
    const std::string label = trim_copy(item.get<std::string>());
    if (label.empty()) throw ValidationError("labeler response contains an empty label");
    labels.push_back(label);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Labeling clients

LabelerResponse MockLabeler::label(const LabelerRequest& request) {
  if (request.mode == LabelMode::select && !request.taxonomy)
    throw ValidationError("select mode requires a taxonomy");

  const MockRule* best = nullptr;
  long long best_score = 0;
  for (const auto& rule : rules_) {
    long long score = 0;
    for (const auto& kw : request.keywords) {
      for (char c : kw) {
        if (rule.marker_chars.find(c) != std::string::npos) ++score;
      }
    }
    if (score > best_score) {
      best_score = score;
      best = &rule;
    }
  }

  LabelerResponse resp;
  if (best) {
    resp.labels = best->labels;
  } else {
    std::string joined;
    for (const auto& kw : request.keywords) {
      joined += kw;
      joined += '\n';
    }
    const std::uint64_t fp = fnv1a64(joined);
    if (request.mode == LabelMode::select) {
      const auto& labels = request.taxonomy->labels;
      resp.labels = {labels[static_cast<std::size_t>(fp % labels.size())]};
    } else {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "Topic-%04x", static_cast<unsigned>(fp & 0xffff));
      resp.labels = {buf};
    }
  }
  if (static_cast<int>(resp.labels.size()) > request.max_labels)
    resp.labels.resize(static_cast<std::size_t>(request.max_labels));
  return resp;
}

HttpLabeler::HttpLabeler(Options options) : options_(std::move(options)) {
  std::string_view url = options_.url;
  constexpr std::string_view scheme = "http://";
  if (url.substr(0, scheme.size()) != scheme)
    throw ValidationError("labeler URL must start with http:// : " + options_.url);
  url.remove_prefix(scheme.size());
  const auto slash = url.find('/');
  std::string_view authority = url.substr(0, slash);
  path_ = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
  const auto colon = authority.find(':');
  if (colon == std::string_view::npos) {
    host_ = std::string(authority);
    port_ = 80;
  } else {
    host_ = std::string(authority.substr(0, colon));
    try {
      port_ = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ValidationError("bad port in labeler URL: " + options_.url);
    }
  }
  if (host_.empty()) throw ValidationError("empty host in labeler URL: " + options_.url);
}

LabelerResponse HttpLabeler::label(const LabelerRequest& request) {
  const std::string& tpl = request.mode == LabelMode::generate
                               ? options_.generate_template
                               : options_.select_template;
  const std::string prompt = tpl.empty() ? build_prompt(request) : build_prompt(request, tpl);

  nlohmann::ordered_json body;
  body["prompt"] = prompt;
  body["max_tokens"] = options_.max_tokens;
  const std::string payload = body.dump();

  std::string last_error = "no attempt made";
  int backoff_ms = options_.backoff_initial_ms;
  for (int attempt = 0; attempt < options_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
      backoff_ms *= 2;
    }
    httplib::Client client(host_, port_);
    client.set_connection_timeout(options_.timeout_seconds, 0);
    client.set_read_timeout(options_.timeout_seconds, 0);
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      nlohmann::json j = nlohmann::json::parse(res->body);
      LabelerResponse out;
      out.labels = parse_label_array(j.at("text").get<std::string>());
      return out;
    } catch (const std::exception& e) {
      last_error = std::string("bad response body: ") + e.what();
      continue;
    }
  }
  throw RuntimeAbort("labeler endpoint " + options_.url + " failed after " +
                     std::to_string(options_.attempts) + " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Pipeline

const char* granularity_name(LabelGranularity granularity) {
  return granularity == LabelGranularity::per_cluster ? "per-cluster" : "per-sample";
}

LabelGranularity granularity_from_name(std::string_view name) {
  if (name == "per-cluster") return LabelGranularity::per_cluster;
  if (name == "per-sample") return LabelGranularity::per_sample;
  throw ValidationError("unknown label granularity: '" + std::string(name) + "'");
}

void AnnotateConfig::validate() const {
  if (embed_dim < 1) throw ValidationError("embed_dim must be positive");
  if (k < 2) throw ValidationError("k must be at least 2 (TF-IDF needs multiple clusters)");
  if (top_keywords < 1) throw ValidationError("top_keywords must be positive");
  if (max_labels < 1) throw ValidationError("max_labels must be positive");
  if (max_retries < 1) throw ValidationError("max_retries must be positive");
  if (mode == LabelMode::select) {
    if (!taxonomy) throw ValidationError("select mode requires a taxonomy");
    taxonomy->validate();
  }
}

namespace {

std::vector<std::string> clean_labels(std::vector<std::string> labels, int max_labels) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (auto& l : labels) {
    const std::string t = trim_copy(l);
    if (t.empty()) continue;
    if (seen.insert(t).second) out.push_back(t);
    if (static_cast<int>(out.size()) == max_labels) break;
  }
  return out;
}

std::string annotation_fingerprint(const std::vector<Sample>& corpus,
                                   const AnnotateConfig& config) {
  std::uint64_t h = fnv1a64_u64(config.seed);
  h = fnv1a64(label_mode_name(config.mode), h);
  h = fnv1a64(granularity_name(config.granularity), h);
  h = fnv1a64_u64(static_cast<std::uint64_t>(config.k), h);
  h = fnv1a64_u64(static_cast<std::uint64_t>(config.max_labels), h);
  for (const auto& s : corpus) {
    h = fnv1a64(s.id, h);
    h = fnv1a64("\x1f", h);
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct LabelCheckpoint {
  std::string fingerprint;
  std::map<std::string, std::vector<std::string>> done;
};

LabelCheckpoint load_label_checkpoint(const std::string& path) {
  LabelCheckpoint ckpt;
  std::ifstream in(path, std::ios::binary);
  if (!in) return ckpt;
  try {
    nlohmann::json j;
    in >> j;
    ckpt.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& [key, labels] : j.at("done").items())
      ckpt.done[key] = labels.get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw ValidationError(path + ": malformed annotation checkpoint: " + e.what());
  }
  return ckpt;
}

void save_label_checkpoint(const std::string& path, const LabelCheckpoint& ckpt) {
  if (path.empty()) return;
  nlohmann::ordered_json j;
  j["fingerprint"] = ckpt.fingerprint;
  j["done"] = nlohmann::ordered_json::object();
  for (const auto& [key, labels] : ckpt.done) j["done"][key] = labels;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write annotation checkpoint: " + path);
  out << j.dump() << '\n';
}

}  // namespace

std::vector<Sample> annotate_corpus(const std::vector<Sample>& corpus,
                                    const AnnotateConfig& config, Labeler& labeler,
                                    const Embedder* embedder) {
  config.validate();
  if (corpus.empty()) throw ValidationError("cannot annotate an empty corpus");

  if (config.skip_labeled) {
    const bool all_labeled = std::all_of(corpus.begin(), corpus.end(),
                                         [](const Sample& s) { return !s.labels.empty(); });
    if (all_labeled) return corpus;
  }

  HashedNgramEmbedder default_embedder(config.embed_dim);
  const Embedder& emb = embedder ? *embedder : default_embedder;

  std::vector<std::vector<double>> vectors;
  vectors.reserve(corpus.size());
  for (const auto& s : corpus) vectors.push_back(emb.embed(s));

  const ClusterAssignment clusters =
      kmeans(vectors, config.k, derive_seed(config.seed, "kmeans"),
             config.kmeans_max_iters, config.kmeans_tol);

  std::vector<std::vector<std::string>> cluster_docs(static_cast<std::size_t>(config.k));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto tokens = tokenize_for_keywords(corpus[i].text);
    auto& doc = cluster_docs[static_cast<std::size_t>(clusters.assignment[i])];
    doc.insert(doc.end(), tokens.begin(), tokens.end());
  }
  const auto keyword_sets = tfidf_keywords(cluster_docs, config.top_keywords);

  LabelCheckpoint ckpt;
  ckpt.fingerprint = annotation_fingerprint(corpus, config);
  if (!config.checkpoint_path.empty() &&
      std::filesystem::exists(config.checkpoint_path)) {
    LabelCheckpoint loaded = load_label_checkpoint(config.checkpoint_path);
    if (loaded.fingerprint != ckpt.fingerprint)
      throw ValidationError("annotation checkpoint " + config.checkpoint_path +
                            " belongs to a different corpus or configuration");
    ckpt.done = std::move(loaded.done);
  }

  auto keywords_of = [&](int cluster) {
    std::vector<std::string> terms;
    for (const auto& [term, score] : keyword_sets[static_cast<std::size_t>(cluster)].keywords)
      terms.push_back(term);
    return terms;
  };

  auto label_once = [&](const std::string& key,
                        std::vector<std::string> keywords) -> std::vector<std::string> {
    if (auto it = ckpt.done.find(key); it != ckpt.done.end()) return it->second;
    LabelerRequest req;
    req.mode = config.mode;
    req.keywords = std::move(keywords);
    req.taxonomy = config.taxonomy;
    req.max_labels = config.max_labels;

    std::string last_error;
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
      std::vector<std::string> labels;
      try {
        labels = clean_labels(labeler.label(req).labels, config.max_labels);
      } catch (const std::exception& e) {
        last_error = e.what();
        continue;
      }
      if (labels.empty()) {
        last_error = "labeler returned no usable labels";
        continue;
      }
      if (config.mode == LabelMode::select) {
        std::string offender;
        for (const auto& l : labels) {
          if (!config.taxonomy->contains(l)) {
            offender = l;
            break;
          }
        }
        if (!offender.empty()) {
          last_error = "label '" + offender + "' is not in the taxonomy";
          continue;
        }
      }
      ckpt.done[key] = labels;
      save_label_checkpoint(config.checkpoint_path, ckpt);
      return labels;
    }
    save_label_checkpoint(config.checkpoint_path, ckpt);
    std::string msg = "labeling failed for " + key + " after " +
                      std::to_string(config.max_retries) + " attempts: " + last_error;
    if (!config.checkpoint_path.empty())
      msg += "; completed work saved to " + config.checkpoint_path;
    throw RuntimeAbort(msg);
  };

  std::vector<Sample> out = corpus;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].cluster = clusters.assignment[i];

  if (config.granularity == LabelGranularity::per_cluster) {
    std::vector<bool> needed(static_cast<std::size_t>(config.k), false);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (config.skip_labeled && !out[i].labels.empty()) continue;
      needed[static_cast<std::size_t>(clusters.assignment[i])] = true;
    }
    std::vector<std::vector<std::string>> cluster_labels(static_cast<std::size_t>(config.k));
    for (int c = 0; c < config.k; ++c) {
      if (!needed[static_cast<std::size_t>(c)]) continue;
      cluster_labels[static_cast<std::size_t>(c)] =
          label_once("cluster:" + std::to_string(c), keywords_of(c));
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (config.skip_labeled && !out[i].labels.empty()) continue;
      out[i].labels = cluster_labels[static_cast<std::size_t>(clusters.assignment[i])];
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (config.skip_labeled && !out[i].labels.empty()) continue;
      out[i].labels = label_once("sample:" + out[i].id,
                                 keywords_of(clusters.assignment[i]));
    }
  }
  return out;
}

}  // namespace toremi
