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

// simulst: data generation, training, evaluation and scoring.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data error,
// 4 numeric failure. SIMULST_LOG_LEVEL=error|warn|info|debug sets stderr
// verbosity (default info).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "run_config.h"
#include "simulst/error.h"
#include "simulst/metrics.h"
#include "simulst/simul.h"
#include "simulst/train.h"

namespace fs = std::filesystem;
using namespace simulst;
using simulst::cli::RunConfig;

namespace {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("SIMULST_LOG_LEVEL");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::kError;
    if (v == "warn") return Level::kWarn;
    if (v == "debug") return Level::kDebug;
    return Level::kInfo;
  }();
  return level;
}

void log(Level level, const std::string& msg) {
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << '\n';
}

struct UsageError : Error {
  using Error::Error;
};

struct Dataset {
  Corpus corpus;
  std::size_t d_feat = 0;
};

Dataset load_data(const fs::path& dir, const RunConfig& cfg) {
  const auto src = Vocab::load(dir / "source.vocab");
  const auto tgt = Vocab::load(dir / "target.vocab");
  ManifestLoadStats stats;
  Dataset d;
  d.corpus = load_manifest(dir / "manifest.tsv", src, tgt, cfg.get_bool("cmvn"), &stats);
  if (d.corpus.utterances.empty()) throw FormatError((dir / "manifest.tsv").string() + ": no utterances");
  d.d_feat = d.corpus.utterances.front().features.dim;
  if (stats.unknown_source_tokens || stats.unknown_target_tokens) {
    log(Level::kWarn, "unknown tokens: " + std::to_string(stats.unknown_source_tokens) + " source, " +
                          std::to_string(stats.unknown_target_tokens) + " target");
  }
  log(Level::kInfo, "loaded " + std::to_string(d.corpus.utterances.size()) + " utterances from " + dir.string());
  return d;
}

ModelConfig model_config(const RunConfig& cfg, const Dataset& d) {
  return cfg.model(d.d_feat, d.corpus.source_vocab.size(), d.corpus.target_vocab.size());
}

std::vector<std::size_t> eval_indices(const RunConfig& cfg, const Corpus& corpus) {
  const auto& split = cfg.get("eval_split");
  if (split == "all") {
    std::vector<std::size_t> all(corpus.utterances.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  auto idx = split_indices(corpus, split == "valid");
  if (idx.empty()) throw FormatError("the " + split + " split is empty");
  return idx;
}

std::vector<std::size_t> list_or(const RunConfig& cfg, const std::string& key, const std::string& fallback) {
  return cfg.get(key).empty() ? std::vector<std::size_t>{cfg.get_size(fallback)} : cfg.get_size_list(key);
}

std::string k_name(std::size_t k) { return k == kWaitAll ? "inf" : std::to_string(k); }

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw IoError("cannot write " + path);
  return file;
}

void save(const fs::path& path, const Checkpoint& ck) {
  save_checkpoint(path, ck);
  log(Level::kDebug, "wrote " + path.string());
}

// ---------------------------------------------------------------- commands

void gen_data(const RunConfig& cfg, const fs::path& out) {
  const std::size_t size = cfg.get_size("size");
  if (size == 0) throw UsageError("size must be >= 1");
  const auto corpus = generate_synthetic_corpus(cfg.synthetic(), size);
  std::error_code ec;
  fs::create_directories(out / "features", ec);
  if (ec) throw IoError("cannot create " + (out / "features").string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (const auto& u : corpus.utterances) {
    const std::string rel = "features/" + u.id + ".rtfx";
    write_features(out / rel, u.features);
    entries.push_back({u.id, rel, corpus.source_vocab.decode(u.transcript), corpus.target_vocab.decode(u.translation)});
  }
  write_manifest(out / "manifest.tsv", entries);
  corpus.source_vocab.save(out / "source.vocab");
  corpus.target_vocab.save(out / "target.vocab");
  log(Level::kInfo, "wrote " + std::to_string(size) + " utterances to " + out.string());
}

struct TrainPaths {
  fs::path data, work, init;
  bool resume = false;
};

void write_epoch(Stage stage, const Trainer& t, const EpochStats& s) {
  std::ostringstream os;
  os << to_string(stage) << " epoch " << t.epoch() << ": steps=" << s.steps << " utterances=" << s.utterances
     << " skipped=" << s.skipped << " st_loss=" << s.mean_st_loss << " ctc_loss=" << s.mean_ctc_loss
     << " blank_fraction=" << s.blank_fraction;
  log(Level::kInfo, os.str());
  if (s.skipped) log(Level::kWarn, std::to_string(s.skipped) + " utterances skipped (infeasible CTC alignment)");
}

void pretrain(const RunConfig& cfg, const TrainPaths& p) {
  const auto data = load_data(p.data, cfg);
  Model model(model_config(cfg, data), cfg.get_size("model_seed"));
  fs::create_directories(p.work);
  Trainer trainer(model, Stage::kPretrain, cfg.training());
  const fs::path state = p.work / "pretrain.ckpt";
  if (p.resume && fs::exists(state)) {
    trainer.restore(load_checkpoint(state));
    log(Level::kInfo, "resumed pre-training at epoch " + std::to_string(trainer.epoch()));
  }
  std::ofstream log_file(p.work / "pretrain.log.tsv", p.resume ? std::ios::app : std::ios::trunc);
  TrainLog train_log(&log_file, !(p.resume && trainer.epoch() > 0));
  const std::size_t epochs = cfg.get_size("pretrain_epochs");
  while (trainer.epoch() < epochs) {
    const auto stats = trainer.train_epoch(data.corpus, &train_log);
    write_epoch(Stage::kPretrain, trainer, stats);
    save(state, trainer.checkpoint());
  }
  if (epochs == 0) save(state, trainer.checkpoint());
  const auto valid = split_indices(data.corpus, true);
  if (!valid.empty()) {
    SimulConfig sc = cfg.simul(1, 1);
    const auto report = evaluate(model, data.corpus, valid, sc, 0, cfg.get_size("threads"));
    std::ostringstream os;
    os << "validation shrink quality: diff<=2 " << report.shrink.within2 << "% diff<=4 " << report.shrink.within4
       << "% diff<=6 " << report.shrink.within6 << "%";
    log(Level::kInfo, os.str());
  }
}

void finetune_cmd(const RunConfig& cfg, const TrainPaths& p) {
  const auto data = load_data(p.data, cfg);
  Model model(model_config(cfg, data), cfg.get_size("model_seed"));
  fs::create_directories(p.work);
  Trainer trainer(model, Stage::kFinetune, cfg.training());
  const fs::path init = p.init.empty() ? p.work / "pretrain.ckpt" : p.init;
  if (fs::exists(init)) {
    trainer.restore(load_checkpoint(init));
    log(Level::kInfo, "initialized from " + init.string());
  } else if (!p.init.empty() || cfg.get_size("pretrain_epochs") > 0) {
    throw IoError("missing checkpoint " + init.string());
  } else {
    log(Level::kInfo, "no pre-training: starting from random initialization");
  }
  const fs::path state = p.work / "finetune.ckpt";
  if (p.resume && fs::exists(state)) {
    trainer.restore(load_checkpoint(state));
    log(Level::kInfo, "resumed fine-tuning at epoch " + std::to_string(trainer.epoch()));
  }
  const auto valid = split_indices(data.corpus, true);
  if (!valid.empty()) log(Level::kInfo, "validation st_loss before: " + std::to_string(validation_st_loss(model, data.corpus, valid)));

  std::ofstream log_file(p.work / "finetune.log.tsv", p.resume ? std::ios::app : std::ios::trunc);
  TrainLog train_log(&log_file, !(p.resume && trainer.epoch() > 0));
  const std::size_t epochs = cfg.get_size("finetune_epochs");
  while (trainer.epoch() < epochs) {
    const auto stats = trainer.train_epoch(data.corpus, &train_log);
    write_epoch(Stage::kFinetune, trainer, stats);
    const auto ck = trainer.checkpoint();
    save(state, ck);
    save(p.work / ("finetune.epoch" + std::to_string(trainer.epoch()) + ".ckpt"), ck);
  }
  std::vector<fs::path> recent;
  const std::size_t m = cfg.get_size("average_last");
  for (std::size_t e = epochs; e >= 1 && recent.size() < m; --e) {
    const fs::path path = p.work / ("finetune.epoch" + std::to_string(e) + ".ckpt");
    if (fs::exists(path)) recent.insert(recent.begin(), path);
  }
  const Checkpoint final_ck = recent.empty() ? trainer.checkpoint() : average_checkpoints(recent);
  save(p.work / "final.ckpt", final_ck);
  log(Level::kInfo, "averaged " + std::to_string(recent.size()) + " checkpoints into " + (p.work / "final.ckpt").string());
  if (!valid.empty()) {
    load_parameters(model, final_ck);
    log(Level::kInfo, "validation st_loss after: " + std::to_string(validation_st_loss(model, data.corpus, valid)));
  }
}

void evaluate_cmd(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint, const std::string& out,
                  const std::string& traces_dir) {
  const auto data = load_data(data_dir, cfg);
  Model model(model_config(cfg, data), cfg.get_size("model_seed"));
  load_parameters(model, load_checkpoint(checkpoint));
  const auto indices = eval_indices(cfg, data.corpus);
  std::ofstream file;
  std::ostream& os = open_output(out, file);
  bool header = true;
  for (std::size_t n : list_or(cfg, "eval_n", "stride_n")) {
    for (std::size_t k : list_or(cfg, "eval_k", "wait_k")) {
      const auto sc = cfg.simul(k, n);
      const auto report = evaluate(model, data.corpus, indices, sc, cfg.get_size("chunk_frames"), cfg.get_size("threads"));
      std::ostringstream row;
      write_eval_report(row, report, sc);
      std::string text = row.str();
      if (!header) text = text.substr(text.find('\n') + 1);
      header = false;
      os << text << std::flush;
      log(Level::kInfo, "k=" + k_name(k) + " n=" + std::to_string(n) + " BLEU=" + std::to_string(report.bleu) +
                            " AL=" + std::to_string(report.mean_al));
      if (!traces_dir.empty()) {
        fs::create_directories(traces_dir);
        std::ofstream tf(fs::path(traces_dir) / ("k" + k_name(k) + "_n" + std::to_string(n) + ".trace"));
        if (!tf) throw IoError("cannot write traces into " + traces_dir);
        for (const auto& t : report.traces) write_trace(tf, t);
      }
    }
  }
}

void simulate_cmd(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint, const std::string& utt_id,
                  const std::string& out) {
  const auto data = load_data(data_dir, cfg);
  Model model(model_config(cfg, data), cfg.get_size("model_seed"));
  load_parameters(model, load_checkpoint(checkpoint));
  const Utterance* utt = &data.corpus.utterances.front();
  if (!utt_id.empty()) {
    utt = nullptr;
    for (const auto& u : data.corpus.utterances) {
      if (u.id == utt_id) utt = &u;
    }
    if (!utt) throw FormatError("no utterance '" + utt_id + "' in the manifest");
  }
  const auto sc = cfg.simul(list_or(cfg, "eval_k", "wait_k").front(), list_or(cfg, "eval_n", "stride_n").front());
  const auto result = simulate(model, utt->features, sc, cfg.get_size("chunk_frames"));
  std::ofstream file;
  write_trace(open_output(out, file), make_trace(utt->id, result, data.corpus.target_vocab,
                                                 data.corpus.target_vocab.decode(utt->translation)));
}

void score_cmd(const fs::path& traces, const std::string& out) {
  const auto parsed = read_traces(traces);
  const auto report = score_traces(parsed);
  std::ofstream file;
  write_score_report(open_output(out, file), report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simultaneous speech translation: synthetic data, training, streaming evaluation, scoring."};
  app.footer(cli::schema_help());
  app.require_subcommand(1);
  app.fallthrough();

  std::vector<std::string> config_files, overrides;
  app.add_option("-c,--config", config_files, "key=value config file (repeatable, later files win)");
  app.add_option("-s,--set", overrides, "key=value override (repeatable, applied after config files)");

  std::string out, data, work, init, checkpoint, traces, utterance, traces_dir;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus (manifest, vocabularies, features)");
  gen->add_option("-o,--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "CTC pre-training of the acoustic encoder");
  auto* fine = app.add_subcommand("finetune", "joint fine-tuning; writes final.ckpt (averaged)");
  for (auto* sub : {pre, fine}) {
    sub->add_option("-d,--data", data, "data directory from gen-data")->required();
    sub->add_option("-w,--work", work, "directory for checkpoints and logs")->required();
    sub->add_flag("--resume", resume, "continue from the stage checkpoint in the work directory");
  }
  fine->add_option("--init", init, "start checkpoint (default: <work>/pretrain.ckpt)");

  auto* eval = app.add_subcommand("evaluate", "streaming evaluation over the eval_k x eval_n grid");
  auto* sim = app.add_subcommand("simulate", "replay one utterance and emit its action trace");
  for (auto* sub : {eval, sim}) {
    sub->add_option("-d,--data", data, "data directory")->required();
    sub->add_option("-m,--checkpoint", checkpoint, "model checkpoint")->required();
    sub->add_option("-o,--out", out, "output file (default stdout)");
  }
  eval->add_option("--traces-dir", traces_dir, "write one trace file per grid point");
  sim->add_option("-u,--utterance", utterance, "utterance id (default: first)");

  auto* score = app.add_subcommand("score", "BLEU, AP and AL from trace files");
  score->add_option("-t,--traces", traces, "trace file")->required();
  score->add_option("-o,--out", out, "output file (default stdout)");

  auto* show = app.add_subcommand("print-config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    for (const auto& f : config_files) cfg.load_file(f);
    for (const auto& o : overrides) cfg.set(std::string_view(o));
    cfg.validate();
    const TrainPaths paths{data, work, init, resume};
    if (gen->parsed()) gen_data(cfg, out);
    if (pre->parsed()) pretrain(cfg, paths);
    if (fine->parsed()) finetune_cmd(cfg, paths);
    if (eval->parsed()) evaluate_cmd(cfg, data, checkpoint, out, traces_dir);
    if (sim->parsed()) simulate_cmd(cfg, data, checkpoint, utterance, out);
    if (score->parsed()) score_cmd(traces, out);
    if (show->parsed()) std::cout << cfg.dump();
    return 0;
  } catch (const UsageError& e) {
    log(Level::kError, std::string("usage error: ") + e.what());
    return 2;
  } catch (const ConfigError& e) {
    log(Level::kError, std::string("config error: ") + e.what());
    return 2;
  } catch (const NumericError& e) {
    log(Level::kError, std::string("numeric error: ") + e.what());
    return 4;
  } catch (const IoError& e) {
    log(Level::kError, std::string("io error: ") + e.what());
    return 3;
  } catch (const FormatError& e) {
    log(Level::kError, std::string("format error: ") + e.what());
    return 3;
  } catch (const Error& e) {
    log(Level::kError, std::string("data error: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    log(Level::kError, e.what());
    return 3;
  }
}
