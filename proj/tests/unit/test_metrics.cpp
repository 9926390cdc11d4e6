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

#include "simulst/metrics.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "simulst/error.h"

using namespace simulst;

namespace {

LatencyRecord record(std::vector<double> d, std::size_t frames, std::size_t ref_len, double offset = 0) {
  LatencyRecord rec;
  rec.delays_ms = std::move(d);
  rec.source_frames = frames;
  rec.frame_ms = 80;
  rec.reference_length = ref_len;
  rec.lookahead_ms = offset;
  return rec;
}

}  // namespace

TEST_CASE("average proportion") {
  CHECK(average_proportion(record({800, 800, 800}, 10, 3)) == 1.0);
  CHECK(average_proportion(record({200, 400, 600, 800}, 10, 4)) == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(average_proportion(record({400}, 10, 1)) == 0.5);
  CHECK_THROWS_AS(average_proportion(record({}, 10, 1)), ValueError);
  CHECK_THROWS_AS(average_proportion(record({900}, 10, 1)), ValueError);
  CHECK_THROWS_AS(average_proportion(record({400, 300}, 10, 1)), ValueError);
}

TEST_CASE("average lagging") {
  CHECK(average_lagging(record({160, 320, 480, 640, 800}, 10, 5, 140)) == 300.0);
  CHECK(average_lagging(record({0, 160, 320, 480, 640}, 10, 5, 140)) == 140.0);
  CHECK(average_lagging(record({0, 160, 320, 480, 640}, 10, 5, 0)) == 0.0);
  CHECK(average_lagging(record({800}, 10, 3, 140)) == 800.0 + 140.0);
  // tau stops at the first token written after the whole source.
  CHECK(average_lagging(record({400, 800, 800}, 10, 2)) == doctest::Approx((400 + (800 - 400)) / 2.0));
  CHECK_THROWS_AS(average_lagging(record({100}, 10, 0)), ValueError);
}

TEST_CASE("average proportion strictly decreases with any single delay") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<double> d(n);
    for (auto& v : d) v = std::floor(unit(rng) * 800);
    std::sort(d.begin(), d.end());
    const double base = average_proportion(record(d, 10, n));
    const std::size_t i = rng() % n;
    const double lower = i == 0 ? 0 : d[i - 1];
    if (d[i] <= lower) continue;
    auto e = d;
    e[i] = lower + (d[i] - lower) / 2;
    CHECK(average_proportion(record(e, 10, n)) < base);
  }
}

TEST_CASE("bleu") {
  const std::vector<std::string> hyp{"a b c d"}, ref{"a b c d e"};
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(100 * std::exp(-0.25)).epsilon(1e-12));
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(77.88).epsilon(1e-4));
  const std::vector<std::string> same{"x y z w v", "p q r s"};
  CHECK(corpus_bleu(same, same) == 100.0);
  CHECK(corpus_bleu(std::vector<std::string>{"q q q q"}, std::vector<std::string>{"a b c d"}) == 0.0);
  CHECK_THROWS_AS(corpus_bleu(hyp, same), ValueError);
  // Clipping: repeated unigrams only match as often as the reference has them.
  auto stats = sentence_bleu_stats(tokenize("the the the"), tokenize("the cat"));
  CHECK(stats.matches[0] == 1);
  CHECK(stats.totals[0] == 3);
}

TEST_CASE("bleu is invariant to corpus order") {
  std::vector<std::string> hyps{"a b c d e", "f g h", "a a b b c", "x y z w"};
  std::vector<std::string> refs{"a b c d", "f g h i", "a b b c", "x y w z"};
  const double base = corpus_bleu(hyps, refs);
  std::vector<std::size_t> order{0, 1, 2, 3};
  while (std::next_permutation(order.begin(), order.end())) {
    std::vector<std::string> h, r;
    for (auto i : order) h.push_back(hyps[i]), r.push_back(refs[i]);
    CHECK(corpus_bleu(h, r) == base);
  }
}

TEST_CASE("trace text round-trips and scores") {
  Trace t;
  t.utterance = "hand";
  t.source_frames = 10;
  t.frame_ms = 80;
  t.reference_length = 5;
  t.lookahead_ms = 140;
  t.reference = "a b c d e";
  t.actions = {{0, ActionKind::kRead, "1"},      {160, ActionKind::kWrite, "a"}, {320, ActionKind::kWrite, "b"},
               {480, ActionKind::kWrite, "c"},   {640, ActionKind::kWrite, "d"}, {800, ActionKind::kWrite, "e"},
               {800, ActionKind::kFinish, ""}};
  const auto text = format_trace(t);
  auto parsed = parse_traces(text + format_trace(t));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == t);
  CHECK(parsed[0].hypothesis() == std::vector<std::string>{"a", "b", "c", "d", "e"});
  auto report = score_traces(parsed);
  CHECK(report.rows[0].al == 300.0);
  CHECK(report.bleu == 100.0);

  CHECK_THROWS_WITH_AS(parse_traces("# utt=x\n0\tJUMP\t\n"), doctest::Contains("line 2"), FormatError);
  CHECK_THROWS_AS(parse_traces("0\tREAD\t1\n"), FormatError);
  CHECK_THROWS_AS(parse_traces("# utt=x\n# src_frames=abc\n"), FormatError);
}

TEST_CASE("metrics are deterministic") {
  auto rec = record({80, 240, 240, 560, 800}, 10, 4, 140);
  CHECK(average_lagging(rec) == average_lagging(rec));
  CHECK(average_proportion(rec) == average_proportion(rec));
}
