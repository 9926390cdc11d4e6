// Copyright 2026 The simulst Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Corpus types, feature/manifest/vocabulary files, batching, and the
// synthetic speech-translation task.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace simulst {

// frames x dim matrix of 32-bit features, one row per 10 ms frame.
struct FeatureSequence {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  FeatureSequence() = default;
  FeatureSequence(std::size_t frames_, std::size_t dim_, std::vector<float> values_);

  std::span<const float> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
  // First `n` frames.
  FeatureSequence prefix(std::size_t n) const;
  bool operator==(const FeatureSequence&) const = default;
};

// Per-utterance mean/variance normalization of every feature dimension.
void normalize_cmvn(FeatureSequence& features);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kFirstToken = 3;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Total ids including the reserved ones.
  std::size_t size() const { return tokens_.size() + kFirstToken; }
  std::size_t token_count() const { return tokens_.size(); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Whitespace tokenization; unknown tokens map to kUnk and are counted.
  std::vector<int> encode(std::string_view text, std::size_t* unknown = nullptr) const;
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Utterance {
  std::string id;
  FeatureSequence features;
  std::vector<int> transcript;   // source-vocabulary ids
  std::vector<int> translation;  // target-vocabulary ids
};

struct Corpus {
  std::vector<Utterance> utterances;
  Vocab source_vocab;
  Vocab target_vocab;

  std::size_t size() const { return utterances.size(); }
};

struct SyntheticTaskConfig {
  std::size_t vocab_size = 20;
  std::size_t min_frames_per_token = 2;
  std::size_t max_frames_per_token = 5;
  std::size_t feature_dim = 16;
  double noise_stddev = 0.1;
  // Target tokens are reversed in non-overlapping windows of this size when
  // the window's first source token belongs to the trigger set (0 or 1
  // disables reordering).
  std::size_t reorder_window = 0;
  // Fraction of source tokens in the trigger set.
  double swap_probability = 0.5;
  std::size_t min_length = 4;
  std::size_t max_length = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

// The fixed pieces of a synthetic task: token embeddings, the target
// relabeling, and the reorder trigger set.
struct SyntheticTask {
  SyntheticTaskConfig config;
  Vocab source_vocab;
  Vocab target_vocab;
  std::vector<std::vector<float>> embeddings;  // per source token
  std::vector<int> translation_map;            // source token index -> target token index
  std::vector<bool> swap_trigger;              // per source token index

  explicit SyntheticTask(const SyntheticTaskConfig& cfg);
  // Maps a source id sequence to its translation.
  std::vector<int> translate(std::span<const int> source) const;
};

// Deterministic for a given config: utterance i is drawn from a stream seeded
// by (seed, i), so corpora of different sizes share their prefixes.
Corpus generate_synthetic_corpus(const SyntheticTaskConfig& cfg, std::size_t size);

// "RTFX", u32 LE frames, u32 LE dim, frames*dim f32 LE.
FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureSequence& features);
FeatureSequence decode_features(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_features(const FeatureSequence& features);

struct ManifestEntry {
  std::string id;
  std::string feature_path;
  std::string transcript;
  std::string translation;
  bool operator==(const ManifestEntry&) const = default;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct ManifestLoadStats {
  std::size_t unknown_source_tokens = 0;
  std::size_t unknown_target_tokens = 0;
};

// Relative feature paths resolve against the manifest's directory.
Corpus load_manifest(const std::filesystem::path& path, const Vocab& source_vocab, const Vocab& target_vocab,
                     bool apply_cmvn = false, ManifestLoadStats* stats = nullptr);

struct Batch {
  std::vector<std::size_t> indices;  // into the corpus
  std::size_t padded_frames = 0;     // longest member * member count
};

// Length-bucketed packing: members sorted by length, each batch's
// (count * longest) stays within max_frames.
std::vector<Batch> make_batches(const Corpus& corpus, std::size_t max_frames);
std::vector<Batch> make_batches(const Corpus& corpus, std::span<const std::size_t> indices, std::size_t max_frames);

// Deterministic ~5% validation split keyed on the utterance id.
bool in_validation_split(std::string_view id);

}  // namespace simulst
