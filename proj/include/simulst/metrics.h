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

// Latency (average proportion, average lagging), corpus BLEU, and the action
// trace format shared with the streaming engine.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace simulst {

struct LatencyRecord {
  std::vector<double> delays_ms;      // d(y_i), one per emitted token
  std::size_t source_frames = 0;      // |x|, encoder frames
  double frame_ms = 80;               // T_s
  std::size_t reference_length = 0;   // |y*|
  double lookahead_ms = 0;            // added to AL

  double total_ms() const { return static_cast<double>(source_frames) * frame_ms; }
  // Throws ValueError unless 0 <= d <= total and d is non-decreasing.
  void validate() const;
};

// (1 / (|x| |y|)) * sum_i d(y_i) / T_s.
double average_proportion(const LatencyRecord& rec);
// tau = first i with d(y_i) == total (|y| if none);
// (1 / tau) * sum_{i <= tau} [d(y_i) - (i - 1) * |x| * T_s / |y*|] + offset.
double average_lagging(const LatencyRecord& rec);

// Clipped n-gram matches and totals for one sentence pair; sums over a
// corpus give corpus BLEU.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& other);
};

std::vector<std::string> tokenize(std::string_view text);
BleuStats sentence_bleu_stats(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                              std::size_t max_n = 4);
// 0..100; zero when any n-gram precision is zero.
double bleu_from_stats(const BleuStats& stats, std::size_t max_n = 4);
double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                   std::size_t max_n = 4);

enum class ActionKind { kRead, kWrite, kFinish };

std::string_view to_string(ActionKind kind);

struct TraceAction {
  double ms = 0;          // audio consumed when the action was taken
  ActionKind kind = ActionKind::kRead;
  std::string payload;    // READ: segments now visible; WRITE: tokens
  bool operator==(const TraceAction&) const = default;
};

// One utterance. Text form:
//   # utt=<id>
//   # src_frames=<|x|>
//   # ts_ms=<T_s>
//   # ref_len=<|y*|>
//   # lookahead_ms=<offset>
//   # reference=<text>          (optional)
//   <ms>\t<READ|WRITE|FINISH>\t<payload>
struct Trace {
  std::string utterance;
  std::size_t source_frames = 0;
  double frame_ms = 80;
  std::size_t reference_length = 0;
  double lookahead_ms = 0;
  std::string reference;
  std::vector<TraceAction> actions;

  std::vector<std::string> hypothesis() const;
  LatencyRecord latency() const;
  bool operator==(const Trace&) const = default;
};

void write_trace(std::ostream& out, const Trace& trace);
std::string format_trace(const Trace& trace);
// A file may hold several traces, each opening with "# utt=".
std::vector<Trace> parse_traces(std::string_view text);
std::vector<Trace> read_traces(const std::filesystem::path& path);

struct UtteranceScore {
  std::string utterance;
  BleuStats bleu;
  double ap = 0;
  double al = 0;
};

struct ScoreReport {
  std::vector<UtteranceScore> rows;
  double bleu = 0;
  double mean_ap = 0;
  double mean_al = 0;
};

// Rows carry the BLEU sufficient statistics, so the report can be re-summed.
ScoreReport score_traces(std::span<const Trace> traces);
void write_score_report(std::ostream& out, const ScoreReport& report);

}  // namespace simulst
