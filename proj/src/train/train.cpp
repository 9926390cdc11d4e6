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

#include "simulst/train.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "simulst/error.h"

namespace simulst {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> get_floats(const std::string& in, std::size_t& at, std::size_t count) {
  if (in.size() - at < count * 4) {
    throw FormatError("checkpoint payload truncated at byte " + std::to_string(in.size()));
  }
  std::vector<float> out(count);
  for (auto& f : out) {
    f = std::bit_cast<float>(get_u32(in, at));
    at += 4;
  }
  return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw FormatError("checkpoint RNG state is malformed");
  return rng;
}

bool finite(const TensorF& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

std::string_view to_string(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view text) {
  if (text == "pretrain") return Stage::kPretrain;
  if (text == "finetune") return Stage::kFinetune;
  throw FormatError("unknown training stage '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (max_batch_frames == 0) throw ConfigError("max_batch_frames must be >= 1");
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (ck.first_moment.size() != ck.optimizer_parameters.size() ||
      ck.second_moment.size() != ck.optimizer_parameters.size()) {
    throw DimensionError("checkpoint optimizer state does not match its parameter list");
  }
  nlohmann::json header;
  header["format"] = 1;
  header["fingerprint"] = ck.fingerprint;
  header["stage"] = std::string(to_string(ck.stage));
  header["step"] = ck.step;
  header["epoch"] = ck.epoch;
  header["rng"] = ck.rng_state;
  header["parameters"] = nlohmann::json::array();
  for (const auto& p : ck.parameters) {
    if (p.values.size() != numel(p.shape)) throw DimensionError("parameter " + p.name + " has the wrong size");
    header["parameters"].push_back({{"name", p.name}, {"shape", p.shape}});
  }
  header["optimizer"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.optimizer_parameters.size(); ++i) {
    if (ck.first_moment[i].size() != ck.second_moment[i].size()) {
      throw DimensionError("moment sizes differ for " + ck.optimizer_parameters[i]);
    }
    header["optimizer"].push_back({{"name", ck.optimizer_parameters[i]}, {"size", ck.first_moment[i].size()}});
  }
  const std::string text = header.dump();
  std::string bytes(kMagic, 4);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  for (const auto& p : ck.parameters) put_floats(bytes, p.values);
  for (std::size_t i = 0; i < ck.first_moment.size(); ++i) {
    put_floats(bytes, ck.first_moment[i]);
    put_floats(bytes, ck.second_moment[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic at byte 0)");
  }
  const std::size_t header_len = get_u32(bytes, 4);
  if (bytes.size() - 8 < header_len) throw FormatError(path.string() + ": header truncated at byte 8");
  Checkpoint ck;
  std::size_t at = 8 + header_len;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(8, header_len));
    ck.fingerprint = header.at("fingerprint").get<std::string>();
    ck.stage = parse_stage(header.at("stage").get<std::string>());
    ck.step = header.at("step").get<std::int64_t>();
    ck.epoch = header.at("epoch").get<std::size_t>();
    ck.rng_state = header.at("rng").get<std::string>();
    for (const auto& p : header.at("parameters")) {
      NamedArray a{p.at("name").get<std::string>(), p.at("shape").get<Shape>(), {}};
      a.values = get_floats(bytes, at, numel(a.shape));
      ck.parameters.push_back(std::move(a));
    }
    for (const auto& o : header.at("optimizer")) {
      const auto size = o.at("size").get<std::size_t>();
      ck.optimizer_parameters.push_back(o.at("name").get<std::string>());
      ck.first_moment.push_back(get_floats(bytes, at, size));
      ck.second_moment.push_back(get_floats(bytes, at, size));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (at != bytes.size()) throw FormatError(path.string() + ": trailing data at byte " + std::to_string(at));
  return ck;
}

std::vector<NamedArray> snapshot_parameters(const Model& model) {
  std::vector<NamedArray> out;
  for (const auto& p : model.parameters()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return out;
}

void load_parameters(Model& model, const Checkpoint& ck) {
  if (ck.fingerprint != model.config().fingerprint()) {
    throw ConfigError("checkpoint architecture " + ck.fingerprint + " does not match model " +
                      model.config().fingerprint());
  }
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& p : ck.parameters) by_name[p.name] = &p;
  for (const auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DimensionError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape()) throw DimensionError("checkpoint parameter " + p.name + " has another shape");
    TensorF t = p.tensor;
    std::copy(it->second->values.begin(), it->second->values.end(), t.mutable_data().begin());
  }
}

Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw ValueError("average_checkpoints needs at least one checkpoint");
  const Checkpoint& first = checkpoints.front();
  for (const auto& ck : checkpoints) {
    if (ck.fingerprint != first.fingerprint) throw ConfigError("cannot average checkpoints of different architectures");
    if (ck.parameters.size() != first.parameters.size()) throw DimensionError("checkpoints hold different parameters");
    for (std::size_t i = 0; i < ck.parameters.size(); ++i) {
      if (ck.parameters[i].name != first.parameters[i].name || ck.parameters[i].shape != first.parameters[i].shape) {
        throw DimensionError("checkpoint parameter " + ck.parameters[i].name + " does not line up");
      }
    }
  }
  Checkpoint out = checkpoints.back();
  const double m = static_cast<double>(checkpoints.size());
  for (std::size_t i = 0; i < out.parameters.size(); ++i) {
    auto& values = out.parameters[i].values;
    for (std::size_t j = 0; j < values.size(); ++j) {
      double sum = 0;
      for (const auto& ck : checkpoints) sum += static_cast<double>(ck.parameters[i].values[j]);
      values[j] = static_cast<float>(sum / m);
    }
  }
  return out;
}

Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths) {
  std::vector<Checkpoint> cks;
  for (const auto& p : paths) cks.push_back(load_checkpoint(p));
  return average_checkpoints(cks);
}

// ---------------------------------------------------------------- training

void TrainLog::write(const StepRecord& r) {
  if (!out_) return;
  if (!header_written_) {
    *out_ << "step\tlr\tst_loss\tctc_loss\tblank_fraction\n";
    header_written_ = true;
  }
  *out_ << r.step << '\t' << r.lr << '\t' << r.st_loss << '\t' << r.ctc_loss << '\t' << r.blank_fraction << '\n';
}

Trainer::Trainer(Model& model, Stage stage, const TrainConfig& cfg)
    : model_(model), stage_(stage), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  for (const auto& p : model_.parameters()) {
    if (stage_ == Stage::kFinetune || model_.is_encoder_parameter(p.name)) {
      names_.push_back(p.name);
      params_.push_back(p.tensor);
    }
  }
  opt_.beta1 = cfg_.beta1;
  opt_.beta2 = cfg_.beta2;
  opt_.eps = cfg_.eps;
  opt_.base_lr = cfg_.lr;
  opt_.warmup_steps = cfg_.warmup_steps;
  opt_.reset(params_);
}

void Trainer::restore(const Checkpoint& ck) {
  load_parameters(model_, ck);
  if (ck.stage != stage_) return;
  if (ck.optimizer_parameters != names_) throw ConfigError("checkpoint optimizer state covers other parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (ck.first_moment[i].size() != params_[i].size()) throw DimensionError("moment size differs for " + names_[i]);
  }
  opt_.first_moment = ck.first_moment;
  opt_.second_moment = ck.second_moment;
  opt_.step = ck.step;
  epoch_ = ck.epoch;
  rng_ = rng_from_string(ck.rng_state);
}

TrainObjective Trainer::objective() const {
  const ModelConfig& mc = model_.config();
  if (stage_ == Stage::kPretrain) return {false, 1.0, mc.blank_penalty_weight};
  return {true, mc.ctc_weight, mc.blank_penalty_weight};
}

EpochStats Trainer::train_epoch(const Corpus& corpus, TrainLog* log) {
  std::vector<std::size_t> indices;
  if (cfg_.hold_out_validation) {
    indices = split_indices(corpus, false);
  } else {
    indices.resize(corpus.utterances.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  }
  auto batches = make_batches(corpus, indices, cfg_.max_batch_frames);
  std::shuffle(batches.begin(), batches.end(), rng_);

  const TrainObjective obj = objective();
  const ForwardContext ctx{true, &rng_};
  EpochStats stats;
  std::size_t enc_frames = 0, blank_frames = 0;
  double st_sum = 0, ctc_sum = 0;
  std::size_t st_count = 0, ctc_count = 0;

  for (const auto& batch : batches) {
    for (auto& p : params_) {
      p.mutable_grad();
      p.zero_grad();
    }
    std::size_t used = 0, batch_enc = 0, batch_blank = 0;
    double batch_st = 0, batch_ctc = 0;
    for (std::size_t idx : batch.indices) {
      const Utterance& utt = corpus.utterances[idx];
      Tape<float> tape;
      auto out = model_.forward_train(utt, obj, ctx);
      if (out.diagnostics.skipped) {
        ++stats.skipped;
        continue;
      }
      if (!finite(out.total)) {
        throw NumericError("non-finite loss on utterance " + utt.id + " at step " + std::to_string(opt_.step + 1));
      }
      tape.backward(out.total);
      ++used;
      batch_enc += out.diagnostics.encoder_frames;
      batch_blank += out.diagnostics.blank_frames;
      if (out.st_loss.defined()) batch_st += out.st_loss.data()[0];
      if (out.ctc_loss.defined()) batch_ctc += out.ctc_loss.data()[0];
    }
    if (used == 0) continue;
    const float inv = 1.0f / static_cast<float>(used);
    for (auto& p : params_) {
      for (auto& g : p.mutable_grad()) g *= inv;
    }
    const double lr = inverse_sqrt_lr(opt_.step + 1, cfg_.lr, cfg_.warmup_steps);
    adam_step<float>(params_, opt_, lr);

    ++stats.steps;
    stats.utterances += used;
    enc_frames += batch_enc;
    blank_frames += batch_blank;
    st_sum += batch_st;
    ctc_sum += batch_ctc;
    if (obj.translation) st_count += used;
    if (obj.ctc_weight > 0) ctc_count += used;
    if (log) {
      log->write({opt_.step, lr, obj.translation ? batch_st / static_cast<double>(used) : 0.0,
                  obj.ctc_weight > 0 ? batch_ctc / static_cast<double>(used) : 0.0,
                  batch_enc ? static_cast<double>(batch_blank) / static_cast<double>(batch_enc) : 0.0});
    }
  }
  ++epoch_;
  stats.mean_st_loss = st_count ? st_sum / static_cast<double>(st_count) : 0;
  stats.mean_ctc_loss = ctc_count ? ctc_sum / static_cast<double>(ctc_count) : 0;
  stats.blank_fraction = enc_frames ? static_cast<double>(blank_frames) / static_cast<double>(enc_frames) : 0;
  return stats;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.fingerprint = model_.config().fingerprint();
  ck.stage = stage_;
  ck.parameters = snapshot_parameters(model_);
  ck.optimizer_parameters = names_;
  ck.first_moment = opt_.first_moment;
  ck.second_moment = opt_.second_moment;
  ck.step = opt_.step;
  ck.epoch = epoch_;
  ck.rng_state = rng_to_string(rng_);
  return ck;
}

Checkpoint pretrain_ctc(Model& model, const Corpus& corpus, const TrainConfig& cfg, std::size_t epochs,
                        TrainLog* log) {
  Trainer trainer(model, Stage::kPretrain, cfg);
  for (std::size_t e = 0; e < epochs; ++e) trainer.train_epoch(corpus, log);
  return trainer.checkpoint();
}

Checkpoint finetune(Model& model, const Corpus& corpus, const Checkpoint& start, const TrainConfig& cfg,
                    std::size_t epochs, TrainLog* log) {
  Trainer trainer(model, Stage::kFinetune, cfg);
  trainer.restore(start);
  for (std::size_t e = 0; e < epochs; ++e) trainer.train_epoch(corpus, log);
  return trainer.checkpoint();
}

// ---------------------------------------------------------------- evaluation

std::vector<std::size_t> split_indices(const Corpus& corpus, bool validation) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (in_validation_split(corpus.utterances[i].id) == validation) out.push_back(i);
  }
  return out;
}

double validation_st_loss(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices) {
  NoGradGuard<float> no_grad;
  double sum = 0;
  std::size_t tokens = 0;
  for (std::size_t idx : indices) {
    const auto& utt = corpus.utterances[idx];
    auto out = model.forward_train(utt, {true, 0.0, 0.0}, {});
    const std::size_t n = utt.translation.size() + 1;
    sum += static_cast<double>(out.st_loss.data()[0]) * static_cast<double>(n);
    tokens += n;
  }
  if (tokens == 0) throw ValueError("validation_st_loss over an empty set");
  return sum / static_cast<double>(tokens);
}

double validation_ctc_loss(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices) {
  NoGradGuard<float> no_grad;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t idx : indices) {
    auto out = model.forward_train(corpus.utterances[idx], {false, 1.0, 0.0}, {});
    if (out.diagnostics.skipped) continue;
    sum += out.ctc_loss.data()[0];
    ++count;
  }
  if (count == 0) throw ValueError("validation_ctc_loss: no feasible utterance");
  return sum / static_cast<double>(count);
}

EvalReport evaluate(const Model& model, const Corpus& corpus, std::span<const std::size_t> indices,
                    const SimulConfig& simul, std::size_t chunk_frames, std::size_t threads) {
  if (indices.empty()) throw ValueError("evaluate over an empty set");
  simul.validate();
  const std::size_t n = indices.size();
  std::vector<Trace> traces(n);
  std::vector<std::size_t> segment_counts(n), transcript_lengths(n), matches(n), blanks(n), frames(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      NoGradGuard<float> no_grad;
      const auto& utt = corpus.utterances[indices[i]];
      const auto result = simulate(model, utt.features, simul, chunk_frames);
      traces[i] = make_trace(utt.id, result, corpus.target_vocab, corpus.target_vocab.decode(utt.translation));
      for (std::size_t j = 0; j < std::min(result.hypothesis.size(), utt.translation.size()); ++j) {
        matches[i] += result.hypothesis[j] == utt.translation[j];
      }
      const auto ac = model.acoustic_forward(utt.features);
      const auto path = greedy_path<float>(ac.probs.data(), ac.probs.dim(0), ac.probs.dim(1));
      segment_counts[i] = detect_boundaries(path, model.config().blank()).size();
      transcript_lengths[i] = utt.transcript.size();
      blanks[i] = static_cast<std::size_t>(std::count(path.begin(), path.end(), model.config().blank()));
      frames[i] = path.size();
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport report;
  const auto scores = score_traces(traces);
  report.bleu = scores.bleu;
  report.mean_ap = scores.mean_ap;
  report.mean_al = scores.mean_al;
  report.shrink = shrink_quality(segment_counts, transcript_lengths);
  std::size_t ref_tokens = 0, hit = 0, blank_total = 0, frame_total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ref_tokens += corpus.utterances[indices[i]].translation.size();
    hit += matches[i];
    blank_total += blanks[i];
    frame_total += frames[i];
  }
  report.token_accuracy = ref_tokens ? static_cast<double>(hit) / static_cast<double>(ref_tokens) : 0;
  report.blank_fraction = frame_total ? static_cast<double>(blank_total) / static_cast<double>(frame_total) : 0;
  report.utterances = n;
  report.traces = std::move(traces);
  return report;
}

void write_eval_report(std::ostream& out, const EvalReport& report, const SimulConfig& simul) {
  const auto k = simul.k == kWaitAll ? std::string("inf") : std::to_string(simul.k);
  out << "k\tn\tbeam\tutterances\tBLEU\tAP\tAL\ttoken_accuracy\tblank_fraction\tdiff_le2\tdiff_le4\tdiff_le6\n";
  out << k << '\t' << simul.n << '\t' << simul.beam << '\t' << report.utterances << '\t' << report.bleu << '\t'
      << report.mean_ap << '\t' << report.mean_al << '\t' << report.token_accuracy << '\t' << report.blank_fraction
      << '\t' << report.shrink.within2 << '\t' << report.shrink.within4 << '\t' << report.shrink.within6 << '\n';
}

}  // namespace simulst
