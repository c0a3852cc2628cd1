// Corpus utilities: JSONL ingestion, synthetic multi-topic generation,
// character-shuffle corruption, tokenization for the toy models, and
// stratified train/held-out splitting.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace toremi {

struct Sample {
  std::string id;
  std::string text;
  std::vector<std::string> labels;  // deduplicated, first occurrence wins
  std::optional<int> cluster;
};

// JSONL, one {"id", "text"[, "labels"][, "cluster"]} object per line.
// Order-preserving; duplicate ids and malformed lines are rejected with the
// line number in the message. An empty file is a valid empty corpus.
std::vector<Sample> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<Sample>& samples);

Sample sample_from_json_line(const std::string& line);
std::string sample_to_json_line(const Sample& sample);

// ---------------------------------------------------------------------------
// Tokenization.
//
// alphabet: one printable character per token, '!' (33) encodes id 0. Used by
//           synthetic corpora so a character shuffle is exactly a token
//           shuffle. Supports vocabularies up to 94 tokens.
// byte:     token id = byte value; for real text with vocab_size 256.

enum class TokenizerMode { alphabet, byte };

const char* tokenizer_name(TokenizerMode mode);
TokenizerMode tokenizer_from_name(std::string_view name);

inline constexpr int kAlphabetBase = 33;
inline constexpr int kMaxAlphabetVocab = 94;

char alphabet_char(int token);

// Throws ValidationError on characters that decode outside [0, vocab_size).
std::vector<int> encode_tokens(const std::string& text, TokenizerMode mode,
                               int vocab_size);

// ---------------------------------------------------------------------------
// Synthetic corpora.

struct TopicSpec {
  std::string name;
  int vocab_lo = 0;  // token range [vocab_lo, vocab_hi), disjoint across topics
  int vocab_hi = 0;
  double zipf_exponent = 1.0;
};

struct SyntheticSpec {
  std::vector<TopicSpec> topics;
  int samples_per_topic = 100;
  int sequence_length = 128;  // tokens per sample
  int vocab_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Token ranks are drawn i.i.d. from the topic's Zipf distribution and each
// draw is emitted twice in a row, so the marginal token distribution is the
// Zipf distribution while adjacent-pair structure gives a next-token learner
// something a character shuffle destroys. Samples are labeled with their
// topic name. Deterministic in the spec.
std::vector<Sample> generate_synthetic(const SyntheticSpec& spec);

// Returns a copy of the spec's equal partition of [0, vocab_size) used by the
// CLI when only topic names are given.
std::vector<TopicSpec> partition_vocab(const std::vector<std::string>& names,
                                       int vocab_size, double zipf_exponent);

// Fisher-Yates shuffle of every character of every sample bearing `topic`,
// with a per-sample sub-seed hashed from (seed, sample id). Other samples are
// returned byte-identical. Throws ValidationError listing the available
// topics when `topic` is absent.
std::vector<Sample> corrupt_topic(const std::vector<Sample>& corpus,
                                  const std::string& topic, std::uint64_t seed);

struct SplitResult {
  std::vector<Sample> train;
  std::vector<Sample> heldout;
};

// Stratified by each sample's first label: every stratum contributes
// ceil(fraction * n) samples to the held-out side. Both halves preserve
// corpus order. Throws ValidationError if a stratum has fewer than 2 samples.
SplitResult split_heldout(const std::vector<Sample>& corpus, double fraction,
                          std::uint64_t seed);

}  // namespace toremi
