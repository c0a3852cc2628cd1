#include "toremi/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "toremi/common.hpp"
#include "toremi/seeds.hpp"

namespace toremi {

namespace {

std::vector<std::string> dedup_labels(const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (seen.insert(l).second) out.push_back(l);
  }
  return out;
}

}  // namespace

Sample sample_from_json_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  if (!j.is_object()) throw ValidationError("line is not a JSON object");
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.text = j.at("text").get<std::string>();
  if (s.id.empty()) throw ValidationError("sample id is empty");
  if (j.contains("labels")) {
    s.labels = dedup_labels(j.at("labels").get<std::vector<std::string>>());
  }
  if (j.contains("cluster") && !j.at("cluster").is_null()) {
    s.cluster = j.at("cluster").get<int>();
  }
  return s;
}

std::string sample_to_json_line(const Sample& sample) {
  nlohmann::ordered_json j;
  j["id"] = sample.id;
  j["text"] = sample.text;
  j["labels"] = sample.labels;
  if (sample.cluster) j["cluster"] = *sample.cluster;
  return j.dump();
}

std::vector<Sample> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus file: " + path);

  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s;
    try {
      s = sample_from_json_line(line);
    } catch (const std::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": malformed sample: " + e.what());
    }
    if (!ids.insert(s.id).second) {
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": duplicate sample id '" + s.id + "'");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_corpus(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write corpus file: " + path);
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
}

const char* tokenizer_name(TokenizerMode mode) {
  return mode == TokenizerMode::alphabet ? "alphabet" : "byte";
}

TokenizerMode tokenizer_from_name(std::string_view name) {
  if (name == "alphabet") return TokenizerMode::alphabet;
  if (name == "byte") return TokenizerMode::byte;
  throw ValidationError("unknown tokenizer: '" + std::string(name) + "'");
}

char alphabet_char(int token) {
  if (token < 0 || token >= kMaxAlphabetVocab)
    throw ValidationError("token id " + std::to_string(token) +
                          " does not fit the printable alphabet (max " +
                          std::to_string(kMaxAlphabetVocab) + ")");
  return static_cast<char>(kAlphabetBase + token);
}

std::vector<int> encode_tokens(const std::string& text, TokenizerMode mode,
                               int vocab_size) {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    int token;
    if (mode == TokenizerMode::alphabet) {
      token = static_cast<int>(c) - kAlphabetBase;
    } else {
      token = static_cast<int>(c);
    }
    if (token < 0 || token >= vocab_size) {
      throw ValidationError("character at position " + std::to_string(i) +
                            " (byte " + std::to_string(static_cast<int>(c)) +
                            ") encodes token " + std::to_string(token) +
                            " outside vocab of size " + std::to_string(vocab_size));
    }
    tokens.push_back(token);
  }
  return tokens;
}

void SyntheticSpec::validate() const {
  if (topics.empty()) throw ValidationError("synthetic spec has no topics");
  if (samples_per_topic < 1)
    throw ValidationError("samples_per_topic must be positive");
  if (sequence_length < 2)
    throw ValidationError("sequence_length must be at least 2");
  if (vocab_size < 1 || vocab_size > kMaxAlphabetVocab)
    throw ValidationError("synthetic vocab_size must lie in [1, " +
                          std::to_string(kMaxAlphabetVocab) + "]");
  std::set<std::string> names;
  std::vector<bool> used(static_cast<std::size_t>(vocab_size), false);
  for (const auto& t : topics) {
    if (t.name.empty()) throw ValidationError("topic name must be non-empty");
    if (!names.insert(t.name).second)
      throw ValidationError("duplicate topic name '" + t.name + "'");
    if (t.vocab_lo < 0 || t.vocab_hi > vocab_size || t.vocab_lo >= t.vocab_hi)
      throw ValidationError("topic '" + t.name + "' has an invalid vocab slice [" +
                            std::to_string(t.vocab_lo) + ", " +
                            std::to_string(t.vocab_hi) + ")");
    if (t.zipf_exponent < 0.0)
      throw ValidationError("topic '" + t.name + "' has a negative zipf exponent");
    for (int v = t.vocab_lo; v < t.vocab_hi; ++v) {
      if (used[static_cast<std::size_t>(v)])
        throw ValidationError("topic vocab slices overlap at token " + std::to_string(v));
      used[static_cast<std::size_t>(v)] = true;
    }
  }
}

namespace {

// Cumulative Zipf table over `size` ranks: weight(rank) = (rank+1)^-s.
std::vector<double> zipf_cumulative(int size, double exponent) {
  std::vector<double> cum(static_cast<std::size_t>(size));
  double total = 0.0;
  for (int r = 0; r < size; ++r) {
    total += std::pow(static_cast<double>(r + 1), -exponent);
    cum[static_cast<std::size_t>(r)] = total;
  }
  return cum;
}

int draw_rank(std::mt19937_64& rng, const std::vector<double>& cum) {
  const double u = next_unit(rng) * cum.back();
  auto it = std::upper_bound(cum.begin(), cum.end(), u);
  if (it == cum.end()) --it;
  return static_cast<int>(it - cum.begin());
}

}  // namespace

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(spec.topics.size()) *
                  static_cast<std::size_t>(spec.samples_per_topic));

  for (const auto& topic : spec.topics) {
    const int slice = topic.vocab_hi - topic.vocab_lo;
    const auto cum = zipf_cumulative(slice, topic.zipf_exponent);
    std::mt19937_64 rng(derive_seed(spec.seed, topic.name));

    for (int s = 0; s < spec.samples_per_topic; ++s) {
      Sample sample;
      sample.id = topic.name + "-" + std::to_string(s);
      sample.labels = {topic.name};
      sample.text.reserve(static_cast<std::size_t>(spec.sequence_length));
      while (static_cast<int>(sample.text.size()) < spec.sequence_length) {
        const int token = topic.vocab_lo + draw_rank(rng, cum);
        const char c = alphabet_char(token);
        sample.text.push_back(c);
        if (static_cast<int>(sample.text.size()) < spec.sequence_length)
          sample.text.push_back(c);
      }
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

std::vector<TopicSpec> partition_vocab(const std::vector<std::string>& names,
                                       int vocab_size, double zipf_exponent) {
  if (names.empty()) throw ValidationError("need at least one topic name");
  const int n = static_cast<int>(names.size());
  if (vocab_size < n)
    throw ValidationError("vocab_size " + std::to_string(vocab_size) +
                          " is smaller than the topic count " + std::to_string(n));
  const int slice = vocab_size / n;
  std::vector<TopicSpec> topics;
  for (int i = 0; i < n; ++i) {
    TopicSpec t;
    t.name = names[static_cast<std::size_t>(i)];
    t.vocab_lo = i * slice;
    t.vocab_hi = (i + 1) * slice;
    t.zipf_exponent = zipf_exponent;
    topics.push_back(std::move(t));
  }
  return topics;
}

std::vector<Sample> corrupt_topic(const std::vector<Sample>& corpus,
                                  const std::string& topic, std::uint64_t seed) {
  bool found = false;
  for (const auto& s : corpus) {
    if (std::find(s.labels.begin(), s.labels.end(), topic) != s.labels.end()) {
      found = true;
      break;
    }
  }
  if (!found) {
    std::set<std::string> available;
    for (const auto& s : corpus)
      available.insert(s.labels.begin(), s.labels.end());
    std::string msg = "topic '" + topic + "' not present in corpus; available topics:";
    if (available.empty()) msg += " (none)";
    for (const auto& t : available) msg += " '" + t + "'";
    throw ValidationError(msg);
  }

  std::vector<Sample> out = corpus;
  for (auto& s : out) {
    if (std::find(s.labels.begin(), s.labels.end(), topic) == s.labels.end()) continue;
    std::mt19937_64 rng(fnv1a64(s.id, fnv1a64_u64(seed)));
    std::string& text = s.text;
    for (std::size_t i = text.size(); i > 1; --i) {
      const std::size_t j = next_index(rng, i);
      std::swap(text[i - 1], text[j]);
    }
  }
  return out;
}

SplitResult split_heldout(const std::vector<Sample>& corpus, double fraction,
                          std::uint64_t seed) {
  if (!(fraction > 0.0) || !(fraction < 1.0))
    throw ValidationError("held-out fraction must lie in (0, 1)");

  // Stratum key: first label, or "" for unlabeled samples.
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string key = corpus[i].labels.empty() ? std::string() : corpus[i].labels[0];
    strata[key].push_back(i);
  }

  std::vector<bool> heldout_mask(corpus.size(), false);
  for (const auto& [key, indices] : strata) {
    if (indices.size() < 2) {
      throw ValidationError("topic '" + key + "' has only " +
                            std::to_string(indices.size()) +
                            " sample(s); need at least 2 to split");
    }
    const std::size_t take = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(indices.size())));
    std::vector<std::size_t> shuffled = indices;
    std::mt19937_64 rng(fnv1a64(key, fnv1a64_u64(seed)));
    for (std::size_t i = shuffled.size(); i > 1; --i) {
      const std::size_t j = next_index(rng, i);
      std::swap(shuffled[i - 1], shuffled[j]);
    }
    for (std::size_t i = 0; i < take && i < shuffled.size(); ++i)
      heldout_mask[shuffled[i]] = true;
  }

  SplitResult result;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (heldout_mask[i] ? result.heldout : result.train).push_back(corpus[i]);
  }
  return result;
}

}  // namespace toremi
