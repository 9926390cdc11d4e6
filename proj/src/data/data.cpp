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

#include "simulst/data.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "simulst/error.h"

namespace simulst {

namespace {

constexpr char kFeatureMagic[4] = {'R', 'T', 'F', 'X'};
constexpr std::size_t kFeatureHeaderBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> numbered_tokens(const char* prefix, std::size_t count) {
  std::vector<std::string> tokens;
  tokens.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tokens.push_back(prefix + std::to_string(i));
  return tokens;
}

}  // namespace

FeatureSequence::FeatureSequence(std::size_t frames_, std::size_t dim_, std::vector<float> values_)
    : frames(frames_), dim(dim_), values(std::move(values_)) {
  if (values.size() != frames * dim) {
    throw DimensionError("feature sequence " + std::to_string(frames) + "x" + std::to_string(dim) + " holds " +
                         std::to_string(values.size()) + " values");
  }
}

FeatureSequence FeatureSequence::prefix(std::size_t n) const {
  n = std::min(n, frames);
  return FeatureSequence(n, dim, std::vector<float>(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n * dim)));
}

void normalize_cmvn(FeatureSequence& features) {
  if (features.frames == 0) return;
  for (std::size_t c = 0; c < features.dim; ++c) {
    double mean = 0;
    for (std::size_t t = 0; t < features.frames; ++t) mean += features.values[t * features.dim + c];
    mean /= static_cast<double>(features.frames);
    double var = 0;
    for (std::size_t t = 0; t < features.frames; ++t) {
      const double d = features.values[t * features.dim + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(features.frames);
    const double inv = 1.0 / std::sqrt(var + 1e-10);
    for (std::size_t t = 0; t < features.frames; ++t) {
      float& v = features.values[t * features.dim + c];
      v = static_cast<float>((v - mean) * inv);
    }
  }
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& t = tokens_[i];
    if (t.empty() || std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isspace(c); })) {
      throw ValueError("vocabulary token " + std::to_string(i) + " is empty or contains whitespace");
    }
    if (!index_.emplace(t, static_cast<int>(i) + kFirstToken).second) {
      throw ValueError("duplicate vocabulary token '" + t + "'");
    }
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty vocabulary line");
    tokens.push_back(line);
  }
  try {
    return Vocab(std::move(tokens));
  } catch (const ValueError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

const std::string& Vocab::token(int id) const {
  static const std::string reserved[] = {"<pad>", "</s>", "<unk>"};
  if (id >= 0 && id < kFirstToken) return reserved[id];
  const auto i = static_cast<std::size_t>(id - kFirstToken);
  if (id < 0 || i >= tokens_.size()) throw ValueError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[i];
}

std::vector<int> Vocab::encode(std::string_view text, std::size_t* unknown) const {
  std::vector<int> ids;
  for (const auto& tok : split_whitespace(text)) {
    const int i = id(tok);
    if (i == kUnk && unknown) ++*unknown;
    ids.push_back(i);
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

// ---------------------------------------------------------------- synthetic task

void SyntheticTaskConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("synthetic vocab_size must be >= 1");
  if (min_frames_per_token == 0 || min_frames_per_token > max_frames_per_token) {
    throw ConfigError("synthetic frames-per-token range is empty");
  }
  if (feature_dim == 0) throw ConfigError("synthetic feature_dim must be >= 1");
  if (!(noise_stddev >= 0) || !std::isfinite(noise_stddev)) throw ConfigError("synthetic noise must be finite and >= 0");
  if (!(swap_probability >= 0 && swap_probability <= 1)) throw ConfigError("swap_probability must lie in [0,1]");
  if (min_length == 0 || min_length > max_length) throw ConfigError("synthetic length range is empty");
}

SyntheticTask::SyntheticTask(const SyntheticTaskConfig& cfg)
    : config(cfg),
      source_vocab(numbered_tokens("s", cfg.vocab_size)),
      target_vocab(numbered_tokens("t", cfg.vocab_size)) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  embeddings.assign(cfg.vocab_size, std::vector<float>(cfg.feature_dim));
  for (auto& e : embeddings) {
    for (auto& v : e) v = static_cast<float>(gauss(rng));
  }
  translation_map.resize(cfg.vocab_size);
  std::iota(translation_map.begin(), translation_map.end(), 0);
  std::shuffle(translation_map.begin(), translation_map.end(), rng);
  std::bernoulli_distribution trigger(cfg.swap_probability);
  swap_trigger.resize(cfg.vocab_size);
  for (std::size_t i = 0; i < cfg.vocab_size; ++i) swap_trigger[i] = trigger(rng);
}

std::vector<int> SyntheticTask::translate(std::span<const int> source) const {
  std::vector<int> out;
  out.reserve(source.size());
  for (int s : source) out.push_back(translation_map[static_cast<std::size_t>(s - Vocab::kFirstToken)] + Vocab::kFirstToken);
  const std::size_t w = config.reorder_window;
  if (w >= 2) {
    for (std::size_t begin = 0; begin + w <= source.size(); begin += w) {
      if (swap_trigger[static_cast<std::size_t>(source[begin] - Vocab::kFirstToken)]) {
        std::reverse(out.begin() + static_cast<std::ptrdiff_t>(begin), out.begin() + static_cast<std::ptrdiff_t>(begin + w));
      }
    }
  }
  return out;
}

Corpus generate_synthetic_corpus(const SyntheticTaskConfig& cfg, std::size_t size) {
  if (size == 0) throw ValueError("synthetic corpus size must be >= 1");
  const SyntheticTask task(cfg);
  Corpus corpus;
  corpus.source_vocab = task.source_vocab;
  corpus.target_vocab = task.target_vocab;
  corpus.utterances.reserve(size);
  const std::size_t width = std::to_string(size - 1).size();
  for (std::size_t u = 0; u < size; ++u) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(u), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> length(cfg.min_length, cfg.max_length);
    std::uniform_int_distribution<std::size_t> token(0, cfg.vocab_size - 1);
    std::uniform_int_distribution<std::size_t> span(cfg.min_frames_per_token, cfg.max_frames_per_token);
    std::normal_distribution<double> noise(0.0, 1.0);

    Utterance utt;
    std::string id = std::to_string(u);
    utt.id = "syn" + std::string(width - id.size(), '0') + id;
    const std::size_t L = length(rng);
    std::size_t previous = cfg.vocab_size;
    std::vector<float> values;
    for (std::size_t i = 0; i < L; ++i) {
      // Immediate repeats are redrawn (when the vocabulary allows) so every
      // source token is acoustically separable from its neighbour.
      std::size_t s = token(rng);
      while (cfg.vocab_size > 1 && s == previous) s = token(rng);
      previous = s;
      utt.transcript.push_back(static_cast<int>(s) + Vocab::kFirstToken);
      const std::size_t frames = span(rng);
      for (std::size_t f = 0; f < frames; ++f) {
        for (float e : task.embeddings[s]) values.push_back(static_cast<float>(e + cfg.noise_stddev * noise(rng)));
      }
    }
    const std::size_t frames = values.size() / cfg.feature_dim;
    utt.features = FeatureSequence(frames, cfg.feature_dim, std::move(values));
    utt.translation = task.translate(utt.transcript);
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

// ---------------------------------------------------------------- features

std::vector<std::uint8_t> encode_features(const FeatureSequence& features) {
  std::vector<std::uint8_t> out(kFeatureMagic, kFeatureMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(features.frames));
  put_u32(out, static_cast<std::uint32_t>(features.dim));
  out.reserve(out.size() + features.values.size() * 4);
  for (float v : features.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw FormatError("feature file truncated at byte " + std::to_string(bytes.size()) + ": missing magic");
  }
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) throw FormatError("bad feature magic at byte 0");
  if (bytes.size() < kFeatureHeaderBytes) {
    throw FormatError("feature file truncated at byte " + std::to_string(bytes.size()) + ": incomplete header");
  }
  const std::size_t frames = get_u32(bytes, 4);
  const std::size_t dim = get_u32(bytes, 8);
  const std::size_t expected = kFeatureHeaderBytes + frames * dim * 4;
  if (bytes.size() < expected) {
    throw FormatError("feature payload truncated at byte " + std::to_string(bytes.size()) + ": header declares " +
                      std::to_string(frames) + "x" + std::to_string(dim) + " floats (" + std::to_string(expected) +
                      " bytes)");
  }
  if (bytes.size() > expected) {
    throw FormatError("unexpected trailing data at byte " + std::to_string(expected));
  }
  std::vector<float> values(frames * dim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes, kFeatureHeaderBytes + 4 * i));
  }
  return FeatureSequence(frames, dim, std::move(values));
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_features(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_features(const std::filesystem::path& path, const FeatureSequence& features) {
  const auto bytes = encode_features(features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------- manifest

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 tab-separated columns, found " +
                        std::to_string(cols.size()));
    }
    entries.push_back({cols[0], cols[1], cols[2], cols[3]});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : entries) out << e.id << '\t' << e.feature_path << '\t' << e.transcript << '\t' << e.translation << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Corpus load_manifest(const std::filesystem::path& path, const Vocab& source_vocab, const Vocab& target_vocab,
                     bool apply_cmvn, ManifestLoadStats* stats) {
  Corpus corpus;
  corpus.source_vocab = source_vocab;
  corpus.target_vocab = target_vocab;
  ManifestLoadStats local;
  const auto base = path.parent_path();
  for (const auto& e : read_manifest(path)) {
    Utterance utt;
    utt.id = e.id;
    std::filesystem::path fp(e.feature_path);
    utt.features = read_features(fp.is_absolute() ? fp : base / fp);
    if (apply_cmvn) normalize_cmvn(utt.features);
    utt.transcript = source_vocab.encode(e.transcript, &local.unknown_source_tokens);
    utt.translation = target_vocab.encode(e.translation, &local.unknown_target_tokens);
    corpus.utterances.push_back(std::move(utt));
  }
  if (stats) *stats = local;
  return corpus;
}

// ---------------------------------------------------------------- batching

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t max_frames) {
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batches(corpus, all, max_frames);
}

std::vector<Batch> make_batches(const Corpus& corpus, std::span<const std::size_t> indices, std::size_t max_frames) {
  std::vector<std::size_t> order(indices.begin(), indices.end());
  for (std::size_t i : order) {
    if (i >= corpus.size()) throw ValueError("batch index " + std::to_string(i) + " outside corpus");
    const std::size_t len = corpus.utterances[i].features.frames;
    if (len > max_frames) {
      throw ValueError("utterance " + corpus.utterances[i].id + " has " + std::to_string(len) +
                       " frames, more than max_frames " + std::to_string(max_frames));
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.utterances[a].features.frames < corpus.utterances[b].features.frames;
  });
  std::vector<Batch> batches;
  Batch current;
  std::size_t longest = 0;
  for (std::size_t i : order) {
    const std::size_t len = std::max<std::size_t>(corpus.utterances[i].features.frames, 1);
    const std::size_t grown = std::max(longest, len) * (current.indices.size() + 1);
    if (!current.indices.empty() && grown > max_frames) {
      batches.push_back(std::move(current));
      current = Batch{};
      longest = 0;
    }
    current.indices.push_back(i);
    longest = std::max(longest, len);
    current.padded_frames = longest * current.indices.size();
  }
  if (!current.indices.empty()) batches.push_back(std::move(current));
  return batches;
}

bool in_validation_split(std::string_view id) { return fnv1a(id) % 20 == 0; }

}  // namespace simulst
