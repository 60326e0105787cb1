#pragma once

// The command-line operations, callable in-process. Each returns the exit
// status; usage and configuration problems throw UsageError (exit 2).

#include "hmctc/cli/align.hpp"
#include "hmctc/cli/config.hpp"

#include <iostream>

namespace hmctc::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNotConverged = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command-line values that take precedence over the config document.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<int> aux_layer;
  std::optional<std::string> regime;
  std::optional<double> fraction;
  std::optional<long long> max_updates;
  std::optional<int> num_layers;
  std::optional<int> hidden;
};

inline json apply_overrides(json doc, const Overrides& o) {
  if (!doc.is_object()) throw ConfigError("", "expected an object");
  if (o.seed) doc["seed"] = *o.seed;
  if (o.lambda) doc["multitask"]["lambda"] = *o.lambda;
  if (o.aux_layer) doc["multitask"]["aux_layer"] = *o.aux_layer;
  if (o.regime) doc["multitask"]["regime"] = *o.regime;
  if (o.fraction) doc["fraction"] = *o.fraction;
  if (o.max_updates) doc["schedule"]["max_updates"] = *o.max_updates;
  if (o.num_layers) doc["encoder"]["num_layers"] = *o.num_layers;
  if (o.hidden) doc["encoder"]["hidden"] = *o.hidden;
  return doc;
}

// Config file (if any), then flags, then the cross-field checks.
inline RunDocument resolve_document(const std::optional<std::string>& config_path, const Overrides& o = {}) {
  const json raw = config_path ? read_json_file(*config_path) : json::object();
  RunDocument d = parse_run_document(apply_overrides(raw, o));
  check_document(d);
  return d;
}

// Creates `dir`; its parent must already exist.
inline void prepare_out_dir(const fs::path& dir) {
  const auto parent = fs::absolute(dir).parent_path();
  if (!fs::is_directory(parent)) throw UsageError("output parent directory " + parent.string() + " does not exist");
  fs::create_directories(dir);
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline void save_lexicon(const fs::path& p, const tokenize::Lexicon& lex) {
  std::ofstream os(p);
  tokenize::write_lexicon(os, lex);
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

// ---- synth ----

inline data::SyntheticSpec load_synthetic_spec(const std::optional<std::string>& path,
                                               std::optional<std::uint64_t> seed) {
  json j = path ? read_json_file(*path) : json::object();
  if (seed) j["seed"] = *seed;
  detail::validate(j, synthetic_schema(), "");
  return synthetic_from_json(j);
}

inline int cmd_synth(const std::optional<std::string>& spec_path, std::optional<std::uint64_t> seed,
                     const fs::path& out, std::ostream& log) {
  const auto spec = load_synthetic_spec(spec_path, seed);
  prepare_out_dir(out);
  const auto c = data::gen_synthetic(spec);
  data::save_split(out / "train", c.train);
  data::save_split(out / "dev", c.dev);
  data::save_split(out / "test", c.test);
  save_lexicon(out / "lexicon.tsv", c.lexicon);
  write_text(out / "spec.json", synthetic_to_json(spec).dump(2) + "\n");
  log << "wrote " << c.train.size() << "/" << c.dev.size() << "/" << c.test.size() << " train/dev/test utterances to "
      << out.string() << "\n";
  return kExitOk;
}

// ---- vocab ----

// Word counts from a transcript file or from <dir>/train.txt.
inline tokenize::WordCounts corpus_word_counts(const fs::path& corpus) {
  const fs::path file = fs::is_directory(corpus) ? corpus / "train.txt" : corpus;
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  tokenize::WordCounts counts;
  for (const auto& [id, words] : data::read_transcripts(is)) {
    for (const auto& w : words) ++counts[w];
  }
  return counts;
}

inline int cmd_vocab(const fs::path& corpus, std::size_t size, const fs::path& out, std::ostream& log) {
  const auto counts = corpus_word_counts(corpus);
  tokenize::WordpieceVocab v;
  try {
    v = tokenize::learn_bpe(counts, size);
  } catch (const tokenize::ConfigError& e) {
    throw UsageError(e.what());
  }
  if (out.has_parent_path() && !fs::is_directory(out.parent_path())) {
    throw UsageError("output directory " + out.parent_path().string() + " does not exist");
  }
  tokenize::save_vocab(out.string(), v);
  log << "wrote " << v.size() << " pieces to " << out.string() << "\n";
  return kExitOk;
}

// ---- train ----

inline void save_model_dir(const fs::path& dir, multitask::Model& model, const train::PreparedData& data,
                           const train::ScheduleState* st, const train::AdamState* adam,
                           const ordered_json& extra) {
  train::save_checkpoint(dir, model, st, adam, extra);
  tokenize::save_vocab((dir / "vocab.txt").string(), data.vocab);
  save_lexicon(dir / "lexicon.tsv", data.lexicon);
}

inline ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); }

// The closing line of metrics.jsonl.
inline ordered_json summary_json(const train::RunResult& r) {
  ordered_json j;
  j["phase"] = "summary";
  j["status"] = r.status;
  j["stop_reason"] = r.stop_reason;
  j["dev_wer"] = opt_json(r.dev_wer);
  j["dev_per"] = opt_json(r.dev_per);
  j["skipped"] = r.skipped.size();
  return j;
}

// Writes into `out`: config.json, metrics.jsonl, timing.jsonl, vocab.txt,
// lexicon.tsv, checkpoints/last (refreshed at every checkpoint, with
// optimizer state), model (the selected checkpoint) and, for the
// pretraining regimes, pretrain.
inline int cmd_train(RunDocument doc, const fs::path& out, std::ostream& log) {
  prepare_out_dir(out);
  auto corpus = load_corpus(doc);
  const auto& data = corpus.data;
  const auto resolved = resolved_json(doc);
  write_text(out / "config.json", resolved.dump(2) + "\n");
  tokenize::save_vocab((out / "vocab.txt").string(), data.vocab);
  save_lexicon(out / "lexicon.tsv", data.lexicon);

  std::ofstream metrics(out / "metrics.jsonl");
  std::ofstream timing(out / "timing.jsonl");
  if (!metrics || !timing) throw std::runtime_error("cannot write logs in " + out.string());
  train::RunHooks hooks;
  hooks.on_checkpoint = [&](const train::CheckpointEvent& ev) {
    metrics << train::metrics_line(ev.record) << '\n' << std::flush;
    timing << train::timing_line(ev.record) << '\n' << std::flush;
    ordered_json extra{{"phase", ev.record.phase}, {"checkpoint", ev.record.index}, {"config", resolved}};
    save_model_dir(out / "checkpoints" / "last", ev.model, data, &ev.schedule, &ev.adam, extra);
    log << ev.record.phase << " checkpoint " << ev.record.index << ": updates " << ev.record.updates << ", lr "
        << ev.record.lr << ", dev WER " << train::format_rate(ev.record.dev_wer) << ", dev PER "
        << train::format_rate(ev.record.dev_per) << (ev.is_best ? " (best)" : "") << "\n";
  };
  auto res = train::run_training(doc.run, data, hooks);
  const auto summary = summary_json(res);
  metrics << summary.dump() << '\n';
  if (res.pretrained) multitask::save_pretrain(out / "pretrain", *res.pretrained);
  ordered_json extra{{"phase", "selected"}, {"updates", res.selected_updates}, {"config", resolved}, {"result", summary}};
  save_model_dir(out / "model", res.model, data, nullptr, nullptr, extra);
  log << "status: " << res.status << " (" << res.stop_reason << "), dev WER " << train::format_rate(res.dev_wer)
      << ", dev PER " << train::format_rate(res.dev_per) << "\n";
  return res.status == train::kStatusOk ? kExitOk : kExitNotConverged;
}

// ---- eval / align ----

struct LoadedModel {
  multitask::Model model;
  tokenize::WordpieceVocab vocab;
  tokenize::Lexicon lexicon;
  long long updates = 0;
  double lambda = 1.0;
};

inline LoadedModel load_model_dir(const fs::path& dir) {
  auto ck = train::load_checkpoint(dir);
  const long long updates = ck.schedule ? ck.schedule->updates : ck.extra.value("updates", 0LL);
  LoadedModel m{std::move(ck.model), tokenize::load_vocab((dir / "vocab.txt").string()),
                tokenize::load_lexicon((dir / "lexicon.tsv").string()), updates, 1.0};
  if (ck.extra.contains("config")) m.lambda = ck.extra["config"]["multitask"].value("lambda", 1.0);
  if (m.model.has_subword_head() && m.model.subword_head()->classes() != m.vocab.size()) {
    throw multitask::CompatibilityError("checkpoint vocabulary does not match its subword head");
  }
  return m;
}

// Where evaluation utterances come from: a directory written by `synth`, or
// the data section of a run config.
struct DataSource {
  std::string dir;
  std::optional<RunDocument> doc;
};

// Loads one split, labels it with the model's vocabulary and lexicon and
// applies per-speaker normalization.
inline data::Dataset load_eval_split(const DataSource& src, const std::string& split, const LoadedModel& m,
                                     std::vector<data::SkippedUtterance>* skipped = nullptr) {
  if (split != "train" && split != "dev" && split != "test") throw UsageError("unknown split '" + split + "'");
  data::Dataset ds;
  if (!src.dir.empty()) {
    ds = data::load_split(fs::path(src.dir) / split);
  } else if (src.doc && src.doc->synthetic) {
    auto c = data::gen_synthetic(*src.doc->synthetic);
    ds = split == "train" ? std::move(c.train) : split == "dev" ? std::move(c.dev) : std::move(c.test);
  } else if (src.doc && !src.doc->data_dir.empty()) {
    ds = data::load_split(fs::path(src.doc->data_dir) / split);
  } else {
    throw UsageError("no evaluation data given (use --data or a config with a data section)");
  }
  auto s = data::attach_labels(ds, m.vocab, m.lexicon);
  if (skipped) *skipped = std::move(s);
  if (ds.empty()) throw std::runtime_error("split '" + split + "' has no usable utterances");
  return data::normalize_per_speaker(std::move(ds));
}

inline ordered_json report_json(const train::MetricsReport& r) {
  ordered_json j;
  j["wer"] = opt_json(r.dev_wer);
  j["per"] = opt_json(r.dev_per);
  j["loss"] = opt_json(r.loss);
  j["loss_subword"] = opt_json(r.loss_subword);
  j["loss_phone"] = opt_json(r.loss_phone);
  j["updates"] = r.updates;
  return j;
}

inline int cmd_eval(const fs::path& checkpoint, const DataSource& src, const std::string& split, std::ostream& out) {
  const auto m = load_model_dir(checkpoint);
  std::vector<data::SkippedUtterance> skipped;
  const auto ds = load_eval_split(src, split, m, &skipped);
  auto report = train::evaluate(m.model, ds, m.vocab, m.model.has_subword_head(), m.model.has_phone_head());
  train::add_losses(report, m.model, ds, m.lambda);
  report.updates = m.updates;
  auto j = report_json(report);
  j["split"] = split;
  j["utterances"] = ds.size();
  j["skipped"] = skipped.size();
  out << j.dump() << "\n";
  return kExitOk;
}

inline int cmd_align(const fs::path& checkpoint, const DataSource& src, const std::string& split,
                     const std::vector<std::string>& ids, std::size_t limit, std::ostream& out, std::ostream& warn) {
  const auto m = load_model_dir(checkpoint);
  if (!m.model.has_subword_head()) throw UsageError("alignment needs a model with a subword head");
  if (!m.model.has_phone_head()) warn << "warning: model has no phone head; omitting the phone row\n";
  const auto ds = load_eval_split(src, split, m);
  std::vector<const data::Utterance*> picked;
  if (ids.empty()) {
    for (std::size_t k = 0; k < ds.size() && k < limit; ++k) picked.push_back(&ds[k]);
  } else {
    for (const auto& id : ids) {
      auto it = std::find_if(ds.begin(), ds.end(), [&](const data::Utterance& u) { return u.id == id; });
      if (it == ds.end()) throw UsageError("utterance '" + id + "' not found in split '" + split + "'");
      picked.push_back(&*it);
    }
  }
  for (const auto* u : picked) write_alignment(out, align_utterance(m.model, m.vocab, m.lexicon, *u));
  return kExitOk;
}

// ---- sweep ----

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

// Rows are written as each run finishes. Exit 1 if any cell failed to run;
// cells that ran but did not converge are results ("X"), not failures.
inline int cmd_sweep(RunDocument doc, const std::string& axis_name, const std::vector<std::string>& grid,
                     std::vector<std::uint64_t> seeds, std::ostream& out, std::ostream& log) {
  const auto axis = train::parse_axis(axis_name);
  if (!axis) throw UsageError("unknown sweep axis '" + axis_name + "' (lambda, layer, fraction or regime)");
  if (seeds.empty()) seeds = doc.seeds.empty() ? std::vector<std::uint64_t>{doc.run.seed} : doc.seeds;
  std::vector<train::SweepCell> cells;
  try {
    cells = train::expand_grid(doc.run, *axis, grid);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto corpus = load_corpus(doc);
  for (auto& c : cells) c.config.encoder.input_dim = doc.run.encoder.input_dim;
  out << train::sweep_header() << '\n' << std::flush;
  bool failed = false;
  train::SweepObserver obs;
  obs.on_row = [&](const train::SweepRow& r) {
    out << train::sweep_line(r) << '\n' << std::flush;
    log << r.axis << "=" << r.value << " " << r.regime << " seed " << r.seed << ": " << r.status << "\n";
    failed = failed || r.status == "error";
  };
  train::run_sweep(cells, *axis, seeds, corpus.data, obs);
  return failed ? kExitFailure : kExitOk;
}

}  // namespace hmctc::cli
