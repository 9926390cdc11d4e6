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

#include "simulst/model.h"

#include <random>
#include <set>

#include "doctest.h"
#include "simulst/error.h"
#include "simulst/optim.h"

using namespace simulst;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_feat = 6;
  cfg.source_vocab = 8;
  cfg.target_vocab = 8;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.layers_per_block = 1;
  cfg.semantic_layers = 1;
  cfg.decoder_layers = 1;
  cfg.dropout = 0;
  return cfg;
}

FeatureSequence random_features(std::size_t frames, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0, 1);
  std::vector<float> v(frames * dim);
  for (auto& x : v) x = g(rng);
  return FeatureSequence(frames, dim, std::move(v));
}

bool rows_equal(const TensorF& a, std::size_t ra, const TensorF& b, std::size_t rb) {
  for (std::size_t c = 0; c < a.dim(1); ++c) {
    if (a.at(ra, c) != b.at(rb, c)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("downsampling arithmetic") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 1);
  std::mt19937_64 rng(3);
  CHECK(model.acoustic_encode(random_features(16, 6, rng)).states.dim(0) == 2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t T = 8 + rng() % 60;
    CHECK(encoder_frames(cfg, T) == (T + 7) / 8);
    auto out = model.acoustic_encode(random_features(T, 6, rng));
    CHECK(out.states.dim(0) == (T + 7) / 8);
    CHECK(out.logits.dim(1) == cfg.ctc_classes());
  }
  CHECK_THROWS_AS(model.acoustic_encode(random_features(7, 6, rng)), ValueError);
  CHECK(cfg.encoder_frame_ms() == 80);
}

TEST_CASE("effective lookahead") {
  ModelConfig cfg;
  CHECK(effective_lookahead_ms(cfg) == 140);
  cfg.conv_lookahead = {0, 0, 0};
  CHECK(effective_lookahead_ms(cfg) == 0);
  const ConvSpec one[] = {{1, 2}};
  CHECK(effective_lookahead_ms(one) == 20);
  // Per block t -> 2t + 2: horizons of frames 0 and 1 with three blocks.
  ModelConfig defaults;
  CHECK(input_horizon(defaults, 0) == 14);
  CHECK(input_horizon(defaults, 1) == 22);
}

TEST_CASE("cross-attention mask formula") {
  CHECK(visible_segments(2, 2, 5, 6) == std::vector<std::size_t>{2, 2, 4, 4, 6});
  CHECK(visible_segments(1, 1, 4, 10) == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(visible_segments(kWaitAll, 2, 3, 4) == std::vector<std::size_t>{4, 4, 4});
  CHECK_THROWS_AS(build_cross_attention_mask(2, 2, 3, 0), ValueError);

  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + rng() % 6, n = 1 + rng() % 4, T = 1 + rng() % 12, S = 1 + rng() % 12;
    auto mask = build_cross_attention_mask(k, n, T, S);
    CHECK(mask.count_row(0) == std::min(k, S));
    for (std::size_t t = 1; t <= T; ++t) {
      const std::size_t expected = std::min(n * ((t - 1) / n) + k, S);
      REQUIRE(mask.count_row(t - 1) == expected);
      for (std::size_t j = 0; j < S; ++j) CHECK(mask(t - 1, j) == (j < expected));
      if (t > 1) {
        const std::size_t prev = mask.count_row(t - 2);
        CHECK(prev <= expected);
        if ((t - 1) % n == 0) {
          CHECK(expected == std::min(prev + n, S));
        } else {
          CHECK(expected == prev);
        }
      }
    }
  }
}

TEST_CASE("acoustic states ignore frames beyond their horizon") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 5);
  std::mt19937_64 rng(9);
  auto x = random_features(64, 6, rng);
  auto base = model.acoustic_encode(x).states;
  for (std::size_t t = 0; t < base.dim(0); ++t) {
    const std::size_t h = input_horizon(cfg, t);
    if (h + 1 >= x.frames) continue;
    auto y = x;
    for (std::size_t i = (h + 1) * 6; i < y.values.size(); ++i) y.values[i] += 3.0f;
    auto perturbed = model.acoustic_encode(y).states;
    CHECK(rows_equal(base, t, perturbed, t));
    // The horizon is tight: moving frame h itself changes row t.
    auto z = x;
    for (std::size_t c = 0; c < 6; ++c) z.values[h * 6 + c] += 3.0f;
    CHECK_FALSE(rows_equal(base, t, model.acoustic_encode(z).states, t));
  }
}

TEST_CASE("bidirectional encoder sees the future") {
  ModelConfig cfg = tiny_config();
  cfg.unidirectional = false;
  cfg.wait_k = kWaitAll;
  Model model(cfg, 5);
  std::mt19937_64 rng(9);
  auto x = random_features(64, 6, rng);
  auto base = model.acoustic_encode(x).states;
  auto y = x;
  for (std::size_t i = 60 * 6; i < y.values.size(); ++i) y.values[i] += 3.0f;
  CHECK_FALSE(rows_equal(base, 0, model.acoustic_encode(y).states, 0));

  cfg.wait_k = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("semantic encoder is causal") {
  ModelConfig cfg = tiny_config();
  cfg.semantic_layers = 2;
  Model model(cfg, 2);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g(0, 1);
  std::vector<float> v(5 * 8);
  for (auto& x : v) x = g(rng);
  auto shrunk = TensorF::from({5, 8}, v);
  auto out = model.semantic_encode(shrunk);
  for (std::size_t s = 0; s + 1 < 5; ++s) {
    auto w = v;
    for (std::size_t i = (s + 1) * 8; i < w.size(); ++i) w[i] -= 1.0f;
    auto other = model.semantic_encode(TensorF::from({5, 8}, w));
    CHECK(rows_equal(out, s, other, s));
  }
  auto single = model.semantic_encode(slice_rows(shrunk, 0, 1));
  CHECK(rows_equal(single, 0, out, 0));

  cfg.semantic_layers = 0;
  Model plain(cfg, 2);
  auto pe = sinusoidal_positions(5, 8);
  auto id = plain.semantic_encode(shrunk);
  for (std::size_t i = 0; i < id.size(); ++i) CHECK(id.at(i) == shrunk.at(i) + pe.at(i));
}

TEST_CASE("decoder output for token t depends only on its visible segments") {
  ModelConfig cfg = tiny_config();
  cfg.n_blocks = 1;
  cfg.wait_k = 2;
  cfg.stride_n = 2;
  Model model(cfg, 11);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_features(40 + rng() % 20, 6, rng);
    auto full_ac = model.acoustic_encode(x);
    const std::size_t T = full_ac.states.dim(0);
    // Frozen segmentation: fixed-size pieces.
    std::vector<Segment> segs;
    for (std::size_t b = 0; b < T; b += 3) segs.push_back({b, std::min(T, b + 3)});
    SegmentSet segments(segs, T);
    const std::vector<int> path(T, cfg.blank());
    auto mem = model.memory(full_ac.states, full_ac.probs, path, segments);
    const std::vector<int> inputs{Vocab::kEos, 4, 5, 6, 7};
    const auto visible = visible_segments(cfg.wait_k, cfg.stride_n, inputs.size(), segments.size());
    auto logits = model.decode(mem, inputs, visible);
    for (std::size_t t = 1; t <= inputs.size(); ++t) {
      const std::size_t m = visible[t - 1];
      const std::size_t last_frame = segments[m - 1].end - 1;
      const std::size_t needed = std::min(x.frames, input_horizon(cfg, last_frame) + 1);
      auto ac = model.acoustic_forward(x.prefix(needed));
      const std::size_t kept = segments[m - 1].end;
      SegmentSet head(std::vector<Segment>(segs.begin(), segs.begin() + static_cast<std::ptrdiff_t>(m)), kept);
      auto part_mem = model.memory(slice_rows(ac.states, 0, kept), slice_rows(ac.probs, 0, kept),
                                   std::span<const int>(path).first(kept), head);
      std::vector<std::size_t> capped(t);
      for (std::size_t i = 0; i < t; ++i) capped[i] = std::min(visible[i], m);
      auto part = model.decode(part_mem, std::span<const int>(inputs).first(t), capped);
      CHECK(rows_equal(logits, t - 1, part, t - 1));
    }
  }
}

TEST_CASE("forward_train objectives") {
  ModelConfig cfg = tiny_config();
  cfg.n_blocks = 1;
  Model model(cfg, 3);
  std::mt19937_64 rng(8);
  Utterance utt{"u", random_features(20, 6, rng), {3, 4, 5}, {6, 7}};

  auto st_only = model.forward_train(utt, TrainObjective{true, 0.0, 0.5}, {});
  REQUIRE(st_only.total.defined());
  CHECK_FALSE(st_only.ctc_loss.defined());
  CHECK(st_only.total.item() == st_only.st_loss.item());

  auto joint = model.forward_train(utt, TrainObjective{true, 1.0, 0.5}, {});
  CHECK(joint.total.item() == doctest::Approx(joint.st_loss.item() + joint.ctc_loss.item()));
  CHECK(joint.diagnostics.encoder_frames == 10);

  auto ctc = model.forward_train(utt, TrainObjective{false, 1.0, 0.0}, {});
  CHECK_FALSE(ctc.st_loss.defined());

  Utterance too_long{"v", random_features(4, 6, rng), {3, 4, 5}, {6}};
  CHECK(model.forward_train(too_long, TrainObjective{}, {}).diagnostics.skipped);
}

TEST_CASE("full-sentence mask equals unrestricted decoding") {
  ModelConfig cfg = tiny_config();
  cfg.n_blocks = 1;
  cfg.wait_k = kWaitAll;
  Model model(cfg, 3);
  std::mt19937_64 rng(8);
  Utterance utt{"u", random_features(30, 6, rng), {3, 4, 5}, {6, 7, 4}};
  auto enc = model.encode(utt.features);
  const std::vector<int> inputs{Vocab::kEos, 6, 7, 4};
  const std::vector<std::size_t> all(inputs.size(), enc.memory.dim(0));
  auto expected = cross_entropy(model.decode(enc.memory, inputs, all), std::vector<int>{6, 7, 4, Vocab::kEos}, 0);
  CHECK(model.forward_train(utt, TrainObjective{true, 0.0, 0.0}, {}).st_loss.item() == expected.item());
}

TEST_CASE("ablation variants run") {
  std::mt19937_64 rng(8);
  Utterance utt{"u", random_features(30, 6, rng), {3, 4, 5}, {6, 7, 4}};
  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig cfg = tiny_config();
    cfg.n_blocks = 1;
    if (variant == 1) cfg.use_shrink = false;
    if (variant == 2) cfg.gradual_downsampling = false;
    if (variant == 3) cfg.shrink.mode = ShrinkMode::kDropBlank;
    Model model(cfg, 1);
    auto out = model.forward_train(utt, TrainObjective{}, {});
    CHECK(std::isfinite(out.total.item()));
    if (variant == 1) CHECK(out.diagnostics.segments == out.diagnostics.encoder_frames);
  }
  ModelConfig a = tiny_config(), b = tiny_config();
  b.gradual_downsampling = false;
  CHECK(a.fingerprint() != b.fingerprint());
  b = a;
  b.blank_penalty_weight = 0;
  b.wait_k = 7;
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("parameters are uniquely named and initialized as documented") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 1);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) {
    CHECK(names.insert(p.name).second);
    CHECK(p.tensor.requires_grad());
    if (p.name.ends_with(".gain")) {
      for (float v : p.tensor.data()) CHECK(v == 1.0f);
    } else if (p.name.ends_with(".bias")) {
      for (float v : p.tensor.data()) CHECK(v == 0.0f);
    } else if (p.name.ends_with(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.tensor.dim(0)));
      for (float v : p.tensor.data()) CHECK(std::abs(v) <= bound);
    }
  }
  CHECK(names.count("ctc.out.weight") == 1);
  CHECK(model.encoder_parameters().size() < model.parameters().size());
}

TEST_CASE("a tiny batch is fit by 200 optimizer steps") {
  ModelConfig cfg = tiny_config();
  cfg.n_blocks = 1;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  Model model(cfg, 7);
  std::mt19937_64 rng(12);
  std::vector<Utterance> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back({"u" + std::to_string(i), random_features(16 + 2 * i, 6, rng), {3, 4 + i, 5}, {6, 3 + i}});
  }
  auto params = model.parameter_tensors();
  OptimizerState<float> opt;
  opt.reset(params);
  auto batch_loss = [&]() {
    double total = 0;
    for (const auto& u : batch) total += model.forward_train(u, TrainObjective{}, {}).total.item();
    return total;
  };
  const double before = batch_loss();
  for (int step = 0; step < 200; ++step) {
    for (auto& p : params) {
      p.mutable_grad();
      p.zero_grad();
    }
    for (const auto& u : batch) {
      Tape<float> tape;
      auto out = model.forward_train(u, TrainObjective{}, {});
      tape.backward(scale(out.total, 1.0f / static_cast<float>(batch.size())));
    }
    adam_step<float>(params, opt, 3e-3);
  }
  CHECK(batch_loss() < 0.5 * before);
}
