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

#include "run_config.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "simulst/error.h"

namespace simulst::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : config_schema()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("key " + key + ": cannot parse '" + text + "'");
  return value;
}

}  // namespace

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      // synthetic data
      {"size", "2000", "utterances generated by gen-data"},
      {"vocab_size", "20", "synthetic source/target vocabulary size"},
      {"min_frames_per_token", "2", "shortest acoustic realization of a token"},
      {"max_frames_per_token", "5", "longest acoustic realization of a token"},
      {"feature_dim", "16", "synthetic feature dimension"},
      {"noise", "0.1", "Gaussian feature noise stddev"},
      {"reorder_window", "0", "target reversal window (0 or 1: monotone)"},
      {"swap_probability", "0.5", "fraction of source tokens that trigger a reversal"},
      {"min_length", "4", "shortest sentence in tokens"},
      {"max_length", "10", "longest sentence in tokens"},
      {"data_seed", "1", "synthetic data seed"},
      {"cmvn", "false", "per-utterance mean/variance normalization on load"},
      // model
      {"n_blocks", "3", "acoustic blocks, each downsampling by 2"},
      {"convs_per_block", "3", "convolutions per block"},
      {"conv_kernel", "3", "convolution width"},
      {"conv_lookahead", "1,1,0", "right context of each conv in a block"},
      {"layers_per_block", "2", "Transformer layers per acoustic block"},
      {"d_model", "64", "model width"},
      {"n_heads", "4", "attention heads"},
      {"d_ff", "256", "feed-forward width"},
      {"semantic_layers", "6", "semantic encoder layers"},
      {"decoder_layers", "4", "decoder layers"},
      {"unidirectional", "true", "causal acoustic and semantic encoders"},
      {"gradual_downsampling", "true", "interleave downsampling with encoder layers"},
      {"use_shrink", "true", "CTC segmentation and shrinking (false: frame-level decoder input)"},
      {"shrink_mu", "1.0", "shrink temperature mu"},
      {"shrink_mode", "weighted", "weighted | average | drop_blank | argmax_frame"},
      {"blank_penalty_weight", "0.5", "blank penalty lambda"},
      {"blank_penalty_mode", "argmax_blank_frames", "argmax_blank_frames | all_frames"},
      {"ctc_weight", "1.0", "CTC loss weight alpha during fine-tuning"},
      {"wait_k", "3", "training wait budget k (inf: full sentence)"},
      {"stride_n", "2", "training stride n"},
      {"dropout", "0.1", "dropout rate"},
      {"frame_ms", "10", "input frame shift in ms"},
      {"model_seed", "1", "parameter initialization seed"},
      // training
      {"lr", "0.002", "peak learning rate"},
      {"warmup_steps", "500", "inverse square root warm-up steps"},
      {"beta1", "0.9", "Adam beta1"},
      {"beta2", "0.98", "Adam beta2"},
      {"eps", "1e-08", "Adam epsilon"},
      {"max_batch_frames", "400", "padded input frames per batch"},
      {"pretrain_epochs", "10", "CTC pre-training epochs (0 skips pre-training)"},
      {"finetune_epochs", "20", "joint fine-tuning epochs"},
      {"average_last", "10", "fine-tuning checkpoints averaged for the final model"},
      {"train_seed", "1", "data order and dropout seed"},
      {"hold_out_validation", "true", "exclude the validation split from training"},
      // decoding
      {"beam", "5", "beam width per stride"},
      {"extra_length", "10", "post-stream length cap is 2 * segments + this"},
      {"eval_k", "", "comma list of k to evaluate (inf allowed; empty: wait_k)"},
      {"eval_n", "", "comma list of n to evaluate (empty: stride_n)"},
      {"eval_split", "valid", "valid | train | all"},
      {"chunk_frames", "0", "input frames per push when streaming (0: whole utterance)"},
      {"threads", "1", "evaluation worker threads"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set(std::string_view(line));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const auto& v = get(key);
  if (v == "inf") return kWaitAll;
  return parse_number<std::size_t>(key, v);
}

std::int64_t RunConfig::get_int(const std::string& key) const { return parse_number<std::int64_t>(key, get(key)); }

double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key " + key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("key " + key + ": empty list item");
    out.push_back(item == "inf" ? kWaitAll : parse_number<std::size_t>(key, item));
  }
  return out;
}

SyntheticTaskConfig RunConfig::synthetic() const {
  SyntheticTaskConfig c;
  c.vocab_size = get_size("vocab_size");
  c.min_frames_per_token = get_size("min_frames_per_token");
  c.max_frames_per_token = get_size("max_frames_per_token");
  c.feature_dim = get_size("feature_dim");
  c.noise_stddev = get_double("noise");
  c.reorder_window = get_size("reorder_window");
  c.swap_probability = get_double("swap_probability");
  c.min_length = get_size("min_length");
  c.max_length = get_size("max_length");
  c.seed = static_cast<std::uint64_t>(get_size("data_seed"));
  c.validate();
  return c;
}

ModelConfig RunConfig::model(std::size_t d_feat, std::size_t source_vocab, std::size_t target_vocab) const {
  ModelConfig c;
  c.d_feat = d_feat;
  c.source_vocab = source_vocab;
  c.target_vocab = target_vocab;
  c.n_blocks = get_size("n_blocks");
  c.convs_per_block = get_size("convs_per_block");
  c.conv_kernel = get_size("conv_kernel");
  c.conv_lookahead = get_size_list("conv_lookahead");
  c.layers_per_block = get_size("layers_per_block");
  c.d_model = get_size("d_model");
  c.n_heads = get_size("n_heads");
  c.d_ff = get_size("d_ff");
  c.semantic_layers = get_size("semantic_layers");
  c.decoder_layers = get_size("decoder_layers");
  c.unidirectional = get_bool("unidirectional");
  c.gradual_downsampling = get_bool("gradual_downsampling");
  c.use_shrink = get_bool("use_shrink");
  c.shrink.mu = get_double("shrink_mu");
  c.shrink.mode = parse_shrink_mode(get("shrink_mode"));
  c.blank_penalty_weight = get_double("blank_penalty_weight");
  c.blank_penalty_mode = parse_blank_penalty_mode(get("blank_penalty_mode"));
  c.ctc_weight = get_double("ctc_weight");
  c.wait_k = get_size("wait_k");
  c.stride_n = get_size("stride_n");
  c.dropout = get_double("dropout");
  c.frame_ms = get_size("frame_ms");
  c.validate();
  return c;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.lr = get_double("lr");
  t.warmup_steps = get_int("warmup_steps");
  t.beta1 = get_double("beta1");
  t.beta2 = get_double("beta2");
  t.eps = get_double("eps");
  t.max_batch_frames = get_size("max_batch_frames");
  t.seed = static_cast<std::uint64_t>(get_size("train_seed"));
  t.hold_out_validation = get_bool("hold_out_validation");
  t.validate();
  return t;
}

SimulConfig RunConfig::simul(std::size_t k, std::size_t n) const {
  SimulConfig s{.k = k, .n = n, .beam = get_size("beam"), .extra_length = get_size("extra_length")};
  s.validate();
  return s;
}

void RunConfig::validate() const {
  synthetic();
  model(1, Vocab::kFirstToken + 1, Vocab::kFirstToken + 1);
  training();
  simul(1, 1);
  for (const char* key : {"size", "pretrain_epochs", "finetune_epochs", "average_last", "model_seed", "chunk_frames",
                          "threads"}) {
    get_size(key);
  }
  get_bool("cmvn");
  if (!get("eval_k").empty()) get_size_list("eval_k");
  if (!get("eval_n").empty()) get_size_list("eval_n");
  const auto& split = get("eval_split");
  if (split != "valid" && split != "train" && split != "all") {
    throw ConfigError("key eval_split: expected valid, train or all, got '" + split + "'");
  }
  if (get_size("average_last") == 0) throw ConfigError("average_last must be >= 1");
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : config_schema()) out += k.name + "=" + get(k.name) + "\n";
  return out;
}

std::string schema_help() {
  std::size_t width = 0, dwidth = 0;
  for (const auto& k : config_schema()) {
    width = std::max(width, k.name.size());
    dwidth = std::max(dwidth, k.default_value.size());
  }
  std::string out = "Config keys (key=value in --config files or --set):\n";
  for (const auto& k : config_schema()) {
    const std::string shown = k.default_value.empty() ? "\"\"" : k.default_value;
    out += "  " + k.name + std::string(width - k.name.size() + 2, ' ') + shown +
           std::string(dwidth + 4 - std::min(dwidth + 2, shown.size()), ' ') + k.help + "\n";
  }
  return out;
}

}  // namespace simulst::cli
