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

#include "simulst/simul.h"

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "doctest.h"
#include "simulst/error.h"

using namespace simulst;

namespace {

constexpr std::size_t kVocab = 8;

using Scorer = std::function<std::vector<double>(const std::vector<int>&)>;

// One segment per input frame, 10 ms each; scores come from a callback.
class ScriptedBackend : public StreamBackend {
 public:
  explicit ScriptedBackend(Scorer scorer) : scorer_(std::move(scorer)) {}

  std::vector<SegmentEvent> push(const FeatureSequence& chunk) override {
    std::vector<SegmentEvent> out;
    for (std::size_t i = 0; i < chunk.frames; ++i, ++frames_) {
      out.push_back({{frames_, frames_ + 1}, 10.0 * static_cast<double>(frames_ + 1)});
    }
    return out;
  }
  std::vector<SegmentEvent> finish() override { return {}; }
  std::size_t encoder_frames() const override { return frames_; }
  double encoder_frame_ms() const override { return 10; }
  double lookahead_ms() const override { return 0; }
  std::vector<double> next_log_probs(std::span<const int> prefix, std::span<const std::size_t> visible) override {
    REQUIRE(visible.size() == prefix.size() + 1);
    seen_visible.assign(visible.begin(), visible.end());
    return scorer_(std::vector<int>(prefix.begin(), prefix.end()));
  }

  std::vector<std::size_t> seen_visible;

 private:
  Scorer scorer_;
  std::size_t frames_ = 0;
};

std::vector<double> distribution(std::map<int, double> probs) {
  std::vector<double> out(kVocab, std::log(1e-9));
  for (auto [id, p] : probs) out[static_cast<std::size_t>(id)] = std::log(p);
  return out;
}

// Emits `reference` token by token, then EOS.
Scorer copy_scorer(std::vector<int> reference) {
  return [reference](const std::vector<int>& prefix) {
    if (prefix.size() >= reference.size()) return distribution({{Vocab::kEos, 0.9}});
    return distribution({{reference[prefix.size()], 0.9}});
  };
}

FeatureSequence frames(std::size_t n, std::size_t dim = 1) { return FeatureSequence(n, dim, std::vector<float>(n * dim)); }

std::string kinds(const std::vector<SessionAction>& actions) {
  std::string s;
  for (const auto& a : actions) {
    if (a.kind == ActionKind::kRead) s += "R";
    if (a.kind == ActionKind::kWrite) s += "W" + std::to_string(a.tokens.size());
    if (a.kind == ActionKind::kFinish) s += "F";
  }
  return s;
}

SessionResult run_scripted(std::size_t segments, std::vector<int> reference, SimulConfig cfg) {
  ScriptedBackend backend(copy_scorer(std::move(reference)));
  StreamSession session(backend, cfg);
  session.push_frames(frames(segments));
  return session.finalize();
}

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

FeatureSequence random_features(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  std::vector<float> v(n * dim);
  for (auto& x : v) x = g(rng);
  return FeatureSequence(n, dim, std::move(v));
}

}  // namespace

TEST_CASE("wait-3 stride-2 schedule") {
  auto r = run_scripted(6, {3, 4, 5, 6}, {.k = 3, .n = 2, .beam = 1});
  CHECK(kinds(r.actions) == "RRRW2RRW2RF");
  CHECK(r.hypothesis == std::vector<int>{3, 4, 5, 6});
  CHECK(r.latency.delays_ms == std::vector<double>{30, 30, 50, 50});
  CHECK(r.visible_segments == std::vector<std::size_t>{3, 3, 5, 5});
  CHECK(r.latency.total_ms() == 60);
}

TEST_CASE("wait-1 alternates reads and writes") {
  auto r = run_scripted(6, {3, 4, 5, 6}, {.k = 1, .n = 1, .beam = 1});
  CHECK(kinds(r.actions) == "RW1RW1RW1RW1RF");
  CHECK(r.latency.delays_ms == std::vector<double>{10, 20, 30, 40});
}

TEST_CASE("beam search finds the better two-token stride") {
  auto scorer = [](const std::vector<int>& prefix) {
    if (prefix.empty()) return distribution({{3, 0.6}, {4, 0.4}});
    if (prefix == std::vector<int>{3}) return distribution({{5, 0.35}, {6, 0.35}, {Vocab::kEos, 0.3}});
    if (prefix == std::vector<int>{4}) return distribution({{5, 0.9}});
    return distribution({{Vocab::kEos, 1.0}});
  };
  ScriptedBackend b1(scorer), b5(scorer);
  StreamSession greedy(b1, {.k = 1, .n = 2, .beam = 1});
  StreamSession beam(b5, {.k = 1, .n = 2, .beam = 5});
  CHECK(greedy.search_stride(2) == std::pair<std::vector<int>, bool>{{3, 5}, false});
  CHECK(beam.search_stride(2) == std::pair<std::vector<int>, bool>{{4, 5}, false});
}

TEST_CASE("beam of one is greedy decoding") {
  std::mt19937_64 rng(9);
  std::map<std::vector<int>, std::vector<double>> table;
  auto scorer = [&](const std::vector<int>& prefix) {
    auto it = table.find(prefix);
    if (it != table.end()) return it->second;
    std::vector<double> lp(kVocab);
    std::uniform_real_distribution<double> u(0.01, 1);
    double z = 0;
    for (auto& v : lp) z += (v = u(rng));
    for (auto& v : lp) v = std::log(v / z);
    return table[prefix] = lp;
  };
  for (int trial = 0; trial < 20; ++trial) {
    table.clear();
    ScriptedBackend backend(scorer);
    StreamSession session(backend, {.k = 1, .n = 4, .beam = 1});
    auto [tokens, eos] = session.search_stride(4);
    std::vector<int> expect;
    bool expect_eos = false;
    for (int step = 0; step < 4; ++step) {
      const auto& lp = table.at(expect);
      int best = 1;
      for (int id = 1; id < static_cast<int>(kVocab); ++id) {
        if (lp[static_cast<std::size_t>(id)] > lp[static_cast<std::size_t>(best)]) best = id;
      }
      if (best == Vocab::kEos) {
        expect_eos = true;
        break;
      }
      expect.push_back(best);
    }
    CHECK(tokens == expect);
    CHECK(eos == expect_eos);
  }
}

TEST_CASE("immediate EOS gives an empty hypothesis") {
  auto r = run_scripted(4, {}, {.k = 2, .n = 1, .beam = 3});
  CHECK(r.hypothesis.empty());
  CHECK(r.latency.delays_ms.empty());
  CHECK(kinds(r.actions) == "RRF");
}

TEST_CASE("k beyond the source length waits for the whole stream") {
  auto r = run_scripted(3, {3, 4, 5, 6, 7}, {.k = 10, .n = 2, .beam = 2});
  CHECK(r.hypothesis.size() == 5);
  for (double d : r.latency.delays_ms) CHECK(d == 30);
  auto full = run_scripted(3, {3, 4}, {.k = kWaitAll, .n = 1, .beam = 1});
  CHECK(full.latency.delays_ms == std::vector<double>{30, 30});
}

TEST_CASE("post-stream decoding stops at the length cap") {
  auto babble = [](const std::vector<int>&) { return distribution({{3, 0.9}}); };
  ScriptedBackend backend(babble);
  StreamSession session(backend, {.k = 1, .n = 3, .beam = 2, .extra_length = 4});
  session.push_frames(frames(2));
  auto r = session.finalize();
  CHECK(r.hypothesis.size() == 2 * 2 + 4);
  CHECK(r.actions.back().kind == ActionKind::kFinish);
}

TEST_CASE("schedule invariants over random settings") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t S = 1 + rng() % 12, len = rng() % std::min<std::size_t>(15, 2 * S + 11);
    const std::size_t k = 1 + rng() % 6, n = 1 + rng() % 4;
    std::vector<int> ref(len);
    for (auto& t : ref) t = 3 + static_cast<int>(rng() % 5);
    auto r = run_scripted(S, ref, {.k = k, .n = n, .beam = 1});
    REQUIRE(r.hypothesis == ref);
    const double total = r.latency.total_ms();
    const auto& d = r.latency.delays_ms;
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d[i] <= total);
      if (i) CHECK(d[i] >= d[i - 1]);
      // A token written after the last segment was read carries the full duration.
      if (r.visible_segments[i] == S && wait_budget(k, n, i + 1) > S) CHECK(d[i] == total);
    }
    if (len) CHECK(r.visible_segments == visible_segments(k, n, len, S));
    if (len) CHECK_NOTHROW(average_lagging(LatencyRecord{d, S, 10, std::max<std::size_t>(len, 1), 0}));

    // More waiting never makes any token earlier.
    auto later = run_scripted(S, ref, {.k = k + 1, .n = n, .beam = 1});
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(later.latency.delays_ms[i] >= d[i]);
  }
}

TEST_CASE("scorer sees the per-position visibility") {
  ScriptedBackend backend(copy_scorer({3, 4, 5, 6, 7}));
  StreamSession session(backend, {.k = 2, .n = 2, .beam = 1});
  session.push_frames(frames(8));
  auto r = session.finalize();
  CHECK(backend.seen_visible == std::vector<std::size_t>{2, 2, 4, 4, 6, 6});
  CHECK(r.visible_segments == std::vector<std::size_t>{2, 2, 4, 4, 6});
}

TEST_CASE("push after end of stream throws") {
  ScriptedBackend backend(copy_scorer({3}));
  StreamSession session(backend, {});
  session.push_frames(frames(2));
  session.end_stream();
  CHECK_THROWS_AS(session.push_frames(frames(1)), ValueError);
  CHECK_THROWS_AS((SimulConfig{.k = 0}.validate()), ConfigError);
}

TEST_CASE("session blocks until input arrives") {
  ScriptedBackend backend(copy_scorer({3, 4}));
  StreamSession session(backend, {.k = 2, .n = 1, .beam = 1});
  CHECK_FALSE(session.step().has_value());
  session.push_frames(frames(1));
  session.run();
  CHECK(session.committed().empty());
  session.push_frames(frames(1));
  session.run();
  CHECK(session.committed() == std::vector<int>{3});
  CHECK(session.phase() != SessionPhase::kFinished);
}

TEST_CASE("streamed acoustic states equal the offline encoder") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 5);
  std::mt19937_64 rng(17);
  for (std::size_t T : {1u, 7u, 8u, 23u, 41u}) {
    auto x = random_features(T, cfg.d_feat, rng);
    NoGradGuard<float> no_grad;
    auto offline = model.acoustic_forward(x);
    auto path = greedy_path<float>(offline.probs.data(), offline.probs.dim(0), offline.probs.dim(1));
    for (std::size_t chunk : {1u, 3u, 8u, 100u}) {
      ModelStreamBackend backend(model);
      std::vector<SegmentEvent> events;
      for (std::size_t b = 0; b < T; b += chunk) {
        const std::size_t e = std::min(T, b + chunk);
        auto got = backend.push(FeatureSequence(e - b, x.dim, std::vector<float>(x.values.begin() + b * x.dim,
                                                                                  x.values.begin() + e * x.dim)));
        events.insert(events.end(), got.begin(), got.end());
      }
      auto tail = backend.finish();
      events.insert(events.end(), tail.begin(), tail.end());
      auto states = backend.final_states();
      REQUIRE(states.dim(0) == offline.states.dim(0));
      CHECK(std::equal(states.data().begin(), states.data().end(), offline.states.data().begin()));
      CHECK(backend.final_path() == path);
      const auto expect = detect_boundaries(path, cfg.blank());
      REQUIRE(events.size() == expect.size());
      for (std::size_t i = 0; i < events.size(); ++i) {
        CHECK(events[i].segment == expect[i]);
        CHECK(events[i].ready_ms <= backend.encoder_frames() * backend.encoder_frame_ms());
        if (i) CHECK(events[i].ready_ms >= events[i - 1].ready_ms);
      }
      CHECK(events.back().ready_ms == backend.encoder_frames() * backend.encoder_frame_ms());
    }
  }
}

TEST_CASE("a blank-only stream is one segment") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 2);
  for (auto& p : model.parameters()) {
    TensorF t = p.tensor;
    if (p.name == "ctc.out.bias") t.mutable_data()[static_cast<std::size_t>(cfg.blank())] = 1e4f;
  }
  std::mt19937_64 rng(8);
  auto r = simulate(model, random_features(40, cfg.d_feat, rng), {.k = 1, .n = 1, .beam = 1}, 5);
  CHECK(r.segments == 1);
}

TEST_CASE("simulation is independent of chunking") {
  std::mt19937_64 rng(31);
  for (bool shrink : {true, false}) {
    ModelConfig cfg = tiny_config();
    cfg.use_shrink = shrink;
    Model model(cfg, 7);
    for (int trial = 0; trial < 4; ++trial) {
      auto x = random_features(20 + rng() % 40, cfg.d_feat, rng);
      const SimulConfig sc{.k = 2, .n = 2, .beam = 3};
      auto base = simulate(model, x, sc);
      for (std::size_t chunk : {1u, 4u, 13u}) {
        auto r = simulate(model, x, sc, chunk);
        CHECK(r.hypothesis == base.hypothesis);
        CHECK(r.latency.delays_ms == base.latency.delays_ms);
        CHECK(r.visible_segments == base.visible_segments);
        CHECK(r.segments == base.segments);
      }
      CHECK_NOTHROW(base.latency.validate());
      CHECK(base.hypothesis.size() <= 2 * base.segments + sc.extra_length);
    }
  }
}

TEST_CASE("trace of a session parses back") {
  ScriptedBackend backend(copy_scorer({3, 4, 5}));
  StreamSession session(backend, {.k = 1, .n = 1, .beam = 1});
  session.push_frames(frames(3));
  auto r = session.finalize();
  Vocab vocab({"a", "b", "c", "d", "e"});
  auto t = make_trace("u1", r, vocab, "a b c");
  auto parsed = parse_traces(format_trace(t));
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0] == t);
  CHECK(t.hypothesis() == std::vector<std::string>{"a", "b", "c"});
  CHECK(t.latency().delays_ms == r.latency.delays_ms);
}
