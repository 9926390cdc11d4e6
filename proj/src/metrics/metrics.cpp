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

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "simulst/error.h"

namespace simulst {

void LatencyRecord::validate() const {
  if (!(frame_ms > 0)) throw ValueError("frame duration must be positive");
  const double total = total_ms();
  double previous = 0;
  for (std::size_t i = 0; i < delays_ms.size(); ++i) {
    const double d = delays_ms[i];
    if (!(d >= 0 && d <= total)) {
      throw ValueError("delay " + std::to_string(d) + " of token " + std::to_string(i + 1) + " outside [0, " +
                       std::to_string(total) + "]");
    }
    if (d < previous) throw ValueError("delays decrease at token " + std::to_string(i + 1));
    previous = d;
  }
}

double average_proportion(const LatencyRecord& rec) {
  rec.validate();
  if (rec.delays_ms.empty()) throw ValueError("average proportion of an empty hypothesis");
  if (rec.source_frames == 0) throw ValueError("average proportion needs a nonempty source");
  double frames = 0;
  for (double d : rec.delays_ms) frames += d / rec.frame_ms;
  return frames / (static_cast<double>(rec.source_frames) * static_cast<double>(rec.delays_ms.size()));
}

double average_lagging(const LatencyRecord& rec) {
  rec.validate();
  if (rec.delays_ms.empty()) throw ValueError("average lagging of an empty hypothesis");
  if (rec.reference_length == 0) throw ValueError("average lagging needs a nonempty reference");
  const double total = rec.total_ms();
  std::size_t tau = rec.delays_ms.size();
  for (std::size_t i = 0; i < rec.delays_ms.size(); ++i) {
    if (rec.delays_ms[i] >= total) {
      tau = i + 1;
      break;
    }
  }
  const double rate = total / static_cast<double>(rec.reference_length);
  double lag = 0;
  for (std::size_t i = 0; i < tau; ++i) lag += rec.delays_ms[i] - static_cast<double>(i) * rate;
  return lag / static_cast<double>(tau) + rec.lookahead_ms;
}

// ---------------------------------------------------------------- BLEU

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hypothesis_length += other.hypothesis_length;
  reference_length += other.reference_length;
  return *this;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

BleuStats sentence_bleu_stats(std::span<const std::string> hypothesis, std::span<const std::string> reference,
                              std::size_t max_n) {
  if (max_n == 0 || max_n > 4) throw ValueError("BLEU order must lie in [1, 4]");
  BleuStats stats;
  stats.hypothesis_length = hypothesis.size();
  stats.reference_length = reference.size();
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[std::vector<std::string>(reference.begin() + static_cast<std::ptrdiff_t>(i),
                                            reference.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    std::map<std::vector<std::string>, std::size_t> hyp_counts;
    for (std::size_t i = 0; i + n <= hypothesis.size(); ++i) {
      ++hyp_counts[std::vector<std::string>(hypothesis.begin() + static_cast<std::ptrdiff_t>(i),
                                            hypothesis.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) stats.matches[n - 1] += std::min(count, it->second);
      stats.totals[n - 1] += count;
    }
  }
  return stats;
}

double bleu_from_stats(const BleuStats& stats, std::size_t max_n) {
  if (stats.hypothesis_length == 0) return 0;
  double log_precision = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (stats.matches[n] == 0 || stats.totals[n] == 0) return 0;
    log_precision += std::log(static_cast<double>(stats.matches[n]) / static_cast<double>(stats.totals[n]));
  }
  const double c = static_cast<double>(stats.hypothesis_length);
  const double r = static_cast<double>(stats.reference_length);
  const double log_bp = c < r ? 1.0 - r / c : 0.0;
  return 100.0 * std::exp(log_bp + log_precision / static_cast<double>(max_n));
}

double corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                   std::size_t max_n) {
  if (hypotheses.size() != references.size()) {
    throw ValueError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ValueError("corpus_bleu: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    total += sentence_bleu_stats(tokenize(hypotheses[i]), tokenize(references[i]), max_n);
  }
  return bleu_from_stats(total, max_n);
}

// ---------------------------------------------------------------- traces

std::string_view to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::kRead:
      return "READ";
    case ActionKind::kWrite:
      return "WRITE";
    case ActionKind::kFinish:
      return "FINISH";
  }
  return "?";
}

std::vector<std::string> Trace::hypothesis() const {
  std::vector<std::string> out;
  for (const auto& a : actions) {
    if (a.kind != ActionKind::kWrite) continue;
    for (auto& tok : tokenize(a.payload)) out.push_back(std::move(tok));
  }
  return out;
}

LatencyRecord Trace::latency() const {
  LatencyRecord rec;
  rec.source_frames = source_frames;
  rec.frame_ms = frame_ms;
  rec.reference_length = reference_length;
  rec.lookahead_ms = lookahead_ms;
  for (const auto& a : actions) {
    if (a.kind != ActionKind::kWrite) continue;
    const std::size_t n = tokenize(a.payload).size();
    rec.delays_ms.insert(rec.delays_ms.end(), n, a.ms);
  }
  return rec;
}

namespace {

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_number(std::string_view text, std::size_t line) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw FormatError("trace line " + std::to_string(line) + ": bad number '" + std::string(text) + "'");
  }
  return v;
}

std::size_t parse_count(std::string_view text, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("trace line " + std::to_string(line) + ": bad count '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

void write_trace(std::ostream& out, const Trace& trace) {
  out << "# utt=" << trace.utterance << '\n'
      << "# src_frames=" << trace.source_frames << '\n'
      << "# ts_ms=" << format_number(trace.frame_ms) << '\n'
      << "# ref_len=" << trace.reference_length << '\n'
      << "# lookahead_ms=" << format_number(trace.lookahead_ms) << '\n';
  if (!trace.reference.empty()) out << "# reference=" << trace.reference << '\n';
  for (const auto& a : trace.actions) out << format_number(a.ms) << '\t' << to_string(a.kind) << '\t' << a.payload << '\n';
}

std::string format_trace(const Trace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

std::vector<Trace> parse_traces(std::string_view text) {
  std::vector<Trace> traces;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_open = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string_view body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const std::size_t eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw FormatError("trace line " + std::to_string(line_no) + ": header without '='");
      }
      const std::string_view key = body.substr(0, eq);
      const std::string_view value = body.substr(eq + 1);
      if (key == "utt") {
        traces.emplace_back();
        traces.back().utterance = std::string(value);
        header_open = true;
        continue;
      }
      if (traces.empty() || !header_open) {
        throw FormatError("trace line " + std::to_string(line_no) + ": header '" + std::string(key) +
                          "' outside a trace header");
      }
      Trace& t = traces.back();
      if (key == "src_frames") {
        t.source_frames = parse_count(value, line_no);
      } else if (key == "ts_ms") {
        t.frame_ms = parse_number(value, line_no);
      } else if (key == "ref_len") {
        t.reference_length = parse_count(value, line_no);
      } else if (key == "lookahead_ms") {
        t.lookahead_ms = parse_number(value, line_no);
      } else if (key == "reference") {
        t.reference = std::string(value);
      } else {
        throw FormatError("trace line " + std::to_string(line_no) + ": unknown header '" + std::string(key) + "'");
      }
      continue;
    }
    if (traces.empty()) throw FormatError("trace line " + std::to_string(line_no) + ": action before '# utt=' header");
    header_open = false;
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab1 == std::string_view::npos) {
      throw FormatError("trace line " + std::to_string(line_no) + ": expected <ms>\\t<action>\\t<payload>");
    }
    TraceAction a;
    a.ms = parse_number(line.substr(0, tab1), line_no);
    const std::string_view kind =
        tab2 == std::string_view::npos ? line.substr(tab1 + 1) : line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (kind == "READ") {
      a.kind = ActionKind::kRead;
    } else if (kind == "WRITE") {
      a.kind = ActionKind::kWrite;
    } else if (kind == "FINISH") {
      a.kind = ActionKind::kFinish;
    } else {
      throw FormatError("trace line " + std::to_string(line_no) + ": unknown action '" + std::string(kind) + "'");
    }
    if (tab2 != std::string_view::npos) a.payload = std::string(line.substr(tab2 + 1));
    traces.back().actions.push_back(std::move(a));
  }
  return traces;
}

std::vector<Trace> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_traces(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ScoreReport score_traces(std::span<const Trace> traces) {
  if (traces.empty()) throw ValueError("no traces to score");
  ScoreReport report;
  BleuStats total;
  for (const auto& t : traces) {
    UtteranceScore row;
    row.utterance = t.utterance;
    const auto hyp = t.hypothesis();
    row.bleu = sentence_bleu_stats(hyp, tokenize(t.reference));
    const auto rec = t.latency();
    if (!rec.delays_ms.empty()) {
      row.ap = average_proportion(rec);
      row.al = average_lagging(rec);
    } else {
      row.ap = 0;
      row.al = t.lookahead_ms;
    }
    total += row.bleu;
    report.mean_ap += row.ap;
    report.mean_al += row.al;
    report.rows.push_back(std::move(row));
  }
  report.bleu = bleu_from_stats(total);
  report.mean_ap /= static_cast<double>(traces.size());
  report.mean_al /= static_cast<double>(traces.size());
  return report;
}

void write_score_report(std::ostream& out, const ScoreReport& report) {
  out << "utterance\thyp_len\tref_len\tmatch1\tmatch2\tmatch3\tmatch4\ttotal1\ttotal2\ttotal3\ttotal4\tAP\tAL\n";
  for (const auto& r : report.rows) {
    out << r.utterance << '\t' << r.bleu.hypothesis_length << '\t' << r.bleu.reference_length;
    for (auto m : r.bleu.matches) out << '\t' << m;
    for (auto t : r.bleu.totals) out << '\t' << t;
    out << '\t' << format_number(r.ap) << '\t' << format_number(r.al) << '\n';
  }
  out << "# corpus\tBLEU=" << format_number(report.bleu) << "\tAP=" << format_number(report.mean_ap)
      << "\tAL=" << format_number(report.mean_al) << '\n';
}

}  // namespace simulst
