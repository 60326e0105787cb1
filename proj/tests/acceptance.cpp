// Acceptance suite. Prints one PASS/FAIL line per criterion; indented lines
// carry the measurements behind each verdict.
//
//   acceptance [--criteria 1,2,...] [--config trend.json] [--cache runs.tsv]
//
// The trend criteria (8, 9, 10) share training runs through the cache file,
// so they can run as separate processes without retraining shared cells.

#include "hmctc/cli/commands.hpp"
#include "hmctc/numeric/grad_check.hpp"

#include "fingerprint.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace hmctc;
using multitask::Regime;

namespace {

// ---- pinned tolerances and limits ----

constexpr double kOracleTol = 1e-9;
constexpr double kCtcGradTol = 1e-5;
constexpr double kRowSumTol = 1e-10;
constexpr double kFiniteDiffStep = 1e-5;
constexpr double kStackGradTol = 1e-4;
constexpr double kLinearityTol = 1e-12;
constexpr double kTrendMarginWer = 5.0;
constexpr double kSeconds1 = 10, kSeconds2 = 30, kSeconds3 = 60;
constexpr double kSeconds8 = 20 * 60, kSeconds10 = 15 * 60;

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

Tensor random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& x : t.values()) x = n(rng);
  return t;
}

// Random labels over 1..classes-1 that fit in `frames`, or nullopt.
std::optional<ctc::LabelSequence> random_labels(std::size_t frames, std::size_t classes, std::size_t max_len,
                                                std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> label(1, static_cast<int>(classes) - 1);
  ctc::LabelSequence z(len(rng));
  for (auto& c : z) c = label(rng);
  std::size_t needed = z.size();
  for (std::size_t k = 1; k < z.size(); ++k) needed += z[k] == z[k - 1];
  if (needed > frames) return std::nullopt;
  return z;
}

// ---- criterion 1: CTC against exhaustive path enumeration ----

// Sums every frame path whose collapse (merge repeats, drop blanks) equals z.
double enumerate_log_likelihood(const Tensor& lp, const ctc::LabelSequence& z) {
  const std::size_t T = lp.rows(), C = lp.cols();
  std::vector<std::size_t> path(T, 0);
  double acc = -std::numeric_limits<double>::infinity();
  while (true) {
    ctc::LabelSequence out;
    int prev = -1;
    for (std::size_t t = 0; t < T; ++t) {
      const int c = static_cast<int>(path[t]);
      if (c != prev && c != 0) out.push_back(c);
      prev = c;
    }
    if (out == z) {
      double s = 0;
      for (std::size_t t = 0; t < T; ++t) s += lp(t, path[t]);
      const double hi = std::max(acc, s);
      acc = hi + std::log(std::exp(acc - hi) + std::exp(s - hi));
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == C) path[t++] = 0;
    if (t == T) break;
  }
  return acc;
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int instances = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> T_of(1, 6), C_of(2, 4);
    int made = 0;
    while (made < 20) {
      const std::size_t T = T_of(rng), C = C_of(rng);
      const auto z = random_labels(T, C, 3, rng);
      if (!z) continue;
      const Tensor lp = log_softmax_rows(random_normal(T, C, rng, 2.0));
      worst = std::max(worst, std::abs(ctc::log_likelihood(lp, *z) - enumerate_log_likelihood(lp, *z)));
      ++made;
      ++instances;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= kOracleTol && secs <= kSeconds1;
  o.summary = "CTC oracle equivalence: " + std::to_string(instances) + " instances, max |diff| " + sci(worst) +
              " (<= " + sci(kOracleTol) + "), " + fixed(secs) + " s";
  return o;
}

// ---- criterion 2: CTC gradient against central differences ----

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> T_of(1, 6), C_of(2, 5);
  double worst = 0, worst_row = 0;
  int made = 0;
  while (made < 50) {
    const std::size_t T = T_of(rng), C = C_of(rng);
    const auto z = random_labels(T, C, 3, rng);
    if (!z) continue;
    Tensor logits = random_normal(T, C, rng, 2.0);
    const Tensor g = ctc::grad(logits, *z).grad_logits;
    auto nll = [&] { return -ctc::log_likelihood(log_softmax_rows(logits), *z); };
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double saved = logits[i];
      logits[i] = saved + kFiniteDiffStep;
      const double up = nll();
      logits[i] = saved - kFiniteDiffStep;
      const double down = nll();
      logits[i] = saved;
      const double numeric = (up - down) / (2 * kFiniteDiffStep);
      worst = std::max(worst, std::abs(g[i] - numeric) / std::max(1.0, std::abs(g[i])));
    }
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) s += g(t, c);
      worst_row = std::max(worst_row, std::abs(s));
    }
    ++made;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst <= kCtcGradTol && worst_row <= kRowSumTol && secs <= kSeconds2;
  o.summary = "CTC gradient: 50 instances, max rel error " + sci(worst) + " (<= " + sci(kCtcGradTol) +
              "), max |row sum| " + sci(worst_row) + " (<= " + sci(kRowSumTol) + "), " + fixed(secs) + " s";
  return o;
}

// ---- small synthetic corpus for the model-level criteria ----

const train::PreparedData& small_data() {
  static const train::PreparedData d = [] {
    data::SyntheticSpec s;
    s.num_phones = 8;
    s.num_words = 12;
    s.feature_dim = 4;
    s.min_words = 1;
    s.max_words = 2;
    s.max_word_phones = 3;
    s.train_size = 60;
    s.dev_size = 8;
    s.test_size = 0;
    s.speakers_per_split = 2;
    s.seed = 5;
    auto c = data::gen_synthetic(s);
    auto vocab = tokenize::learn_bpe(data::word_counts(c.train), 30);
    return train::prepare_data(std::move(c.train), std::move(c.dev), std::move(vocab), std::move(c.lexicon),
                               {8, 8, 8, 8, 8});
  }();
  return d;
}

// Training utterances whose subword and phone targets both fit.
std::vector<const data::Utterance*> feasible_utterances() {
  std::vector<const data::Utterance*> out;
  for (const auto& u : small_data().train) {
    const auto frames = multitask::encoded_frames(u);
    if (ctc::feasible(u.subword, frames) && ctc::feasible(u.phones, frames)) out.push_back(&u);
  }
  return out;
}

multitask::Model small_model(int layers, int hidden, int aux_layer, double dropout, std::uint64_t seed) {
  encoder::EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden = hidden;
  cfg.input_dim = 4;
  cfg.dropout = dropout;
  return multitask::Model(cfg, small_data().vocab.size(), small_data().lexicon.num_phones(), aux_layer, seed);
}

// ---- criterion 3: full-stack gradient ----

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  auto m = small_model(2, 8, 1, 0.0, 3);
  const auto pool = feasible_utterances();
  const std::vector<const data::Utterance*> batch{pool.at(0), pool.at(1)};
  const auto w = multitask::LossWeights::from_lambda(0.5);
  const auto res = grad_check(
      [&] { return multitask::combined_loss(m, batch, w, encoder::Mode::eval, nullptr).total; }, m.parameters(),
      kFiniteDiffStep);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = res.max_rel_error <= kStackGradTol && secs <= kSeconds3;
  o.summary = "full-stack gradient: 2 layers, hidden 8, phone head at layer 1, batch of 2, max rel error " +
              sci(res.max_rel_error) + " at " + res.worst_param + " (<= " + sci(kStackGradTol) + "), " +
              fixed(secs) + " s";
  return o;
}

// ---- criterion 4: loss linearity in lambda ----

Outcome criterion4() {
  auto m = small_model(3, 6, 2, 0.0, 4);
  const auto pool = feasible_utterances();
  const std::vector<const data::Utterance*> batch(pool.begin(), pool.begin() + 4);
  double sub = 0, ph = 0;
  for (const auto* u : batch) {
    const auto [ls, lp] = multitask::head_losses(m, *u);
    sub += ls;
    ph += lp;
  }
  sub /= static_cast<double>(batch.size());
  ph /= static_cast<double>(batch.size());
  double worst = 0;
  Outcome o;
  for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double measured =
        multitask::combined_loss(m, batch, multitask::LossWeights::from_lambda(lambda), encoder::Mode::eval, nullptr)
            .total;
    const double line = lambda * sub + (1 - lambda) * ph;
    worst = std::max(worst, std::abs(measured - line));
    o.details.push_back("lambda " + fixed(lambda) + ": L " + fixed(measured, 12) + ", line " + fixed(line, 12));
  }
  o.pass = worst <= kLinearityTol;
  o.summary = "loss linearity: max |L(lambda) - line| " + sci(worst) + " (<= " + sci(kLinearityTol) + ")";
  return o;
}

// ---- criterion 5: lambda = 1 multitask equals baseline ----

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("hmctc_acceptance_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};


nlohmann::json small_run_json(const std::string& regime, double lambda) {
  auto j = nlohmann::json::parse(R"({
    "seed": 7, "vocab_size": 40,
    "data": {"synthetic": {"num_phones": 10, "num_words": 20, "feature_dim": 8, "min_words": 1, "max_words": 3,
                           "max_word_phones": 3, "train_size": 300, "dev_size": 30, "test_size": 0,
                           "speakers_per_split": 4, "seed": 5}},
    "encoder": {"num_layers": 3, "hidden": 16, "dropout": 0.1},
    "adam": {"lr": 0.01},
    "schedule": {"checkpoint_interval": 50, "warm_updates": 200, "max_updates": 1000},
    "batch_sizes": [16, 16, 16, 16, 16]
  })");
  j["multitask"] = {{"regime", regime}, {"lambda", lambda}, {"aux_layer", 2}};
  return j;
}

Outcome criterion5() {
  TempDir dir("baseline");
  std::ostringstream log;
  const int mt = cli::cmd_train(cli::parse_run_document(small_run_json("multitask", 1.0)), dir.path / "mt", log);
  const int base = cli::cmd_train(cli::parse_run_document(small_run_json("baseline", 1.0)), dir.path / "base", log);
  const auto a = read_file(dir.path / "mt" / "metrics.jsonl");
  const auto b = read_file(dir.path / "base" / "metrics.jsonl");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  Outcome o;
  o.pass = mt == cli::kExitOk && base == cli::kExitOk && lines > 1 && a == b;
  o.summary = "baseline equivalence: lambda=1 multitask and baseline metrics logs " +
              std::string(a == b ? "byte-identical" : "differ") + " (" + std::to_string(a.size()) + " bytes, " +
              std::to_string(lines) + " lines, exit codes " + std::to_string(mt) + "/" + std::to_string(base) + ")";
  return o;
}

// ---- criterion 6: dead gradients ----

struct GradCensus {
  bool dead_all_zero = true;
  bool live_some_nonzero = true;
};

GradCensus census(multitask::Model& m, const std::set<std::string>& dead) {
  GradCensus c;
  std::map<std::string, bool> nonzero;
  for (auto* p : m.parameters()) {
    bool any = false;
    for (double g : p->grad.values()) any = any || g != 0.0;
    if (dead.count(p->name)) c.dead_all_zero = c.dead_all_zero && !any;
    nonzero[p->name] = any;
  }
  // Every live block must receive some gradient, so the check is not vacuous.
  for (const auto& [name, any] : nonzero) {
    if (!dead.count(name) && !any) c.live_some_nonzero = false;
  }
  return c;
}

std::set<std::string> names_of(const ParameterRefs& ps) {
  std::set<std::string> out;
  for (auto* p : ps) out.insert(p->name);
  return out;
}

Outcome criterion6() {
  auto m = small_model(5, 6, 3, 0.1, 6);
  std::set<std::string> upper = names_of(m.subword_head()->parameters());
  for (int l = 3; l < 5; ++l) {
    const auto ns = names_of(m.encoder().layers()[static_cast<std::size_t>(l)].parameters());
    upper.insert(ns.begin(), ns.end());
  }
  const auto phone_head = names_of(m.phone_head()->parameters());
  const auto pool = feasible_utterances();
  std::mt19937_64 pick(6), dropout(60);
  std::uniform_int_distribution<std::size_t> idx(0, pool.size() - 1);
  int phone_only_ok = 0, subword_only_ok = 0;
  bool live = true;
  for (int b = 0; b < 5; ++b) {
    std::vector<const data::Utterance*> batch;
    for (int k = 0; k < 4; ++k) batch.push_back(pool[idx(pick)]);
    zero_grads(m.parameters());
    multitask::combined_loss(m, batch, multitask::LossWeights::from_lambda(0.0), encoder::Mode::train, &dropout);
    const auto a = census(m, upper);
    phone_only_ok += a.dead_all_zero;
    live = live && a.live_some_nonzero;
    zero_grads(m.parameters());
    multitask::combined_loss(m, batch, multitask::LossWeights::from_lambda(1.0), encoder::Mode::train, &dropout);
    const auto c = census(m, phone_head);
    subword_only_ok += c.dead_all_zero;
    live = live && c.live_some_nonzero;
  }
  Outcome o;
  o.pass = phone_only_ok == 5 && subword_only_ok == 5 && live;
  o.summary = "dead gradients: lambda=0 leaves layers 4-5 and the subword head exactly zero on " +
              std::to_string(phone_only_ok) + "/5 batches; lambda=1 leaves the phone head exactly zero on " +
              std::to_string(subword_only_ok) + "/5; live blocks " + (live ? "all receive gradient" : "NOT all live");
  return o;
}

// ---- criterion 7: learning-rate and stopping rules ----

Outcome criterion7() {
  using train::ScheduleConfig;
  using train::ScheduleState;
  Outcome o;
  int failed = 0;
  auto check = [&](bool ok, const std::string& what) {
    o.details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    failed += !ok;
  };
  ScheduleConfig cfg;
  check(cfg.lr_window == 3 && cfg.patience == 10, "defaults: window of 3 checkpoints, patience of 10");
  cfg.warm_updates = 1000;

  // Feeds `values` as successive checkpoints past `updates`, returning the
  // halving decisions.
  auto feed = [&](ScheduleState& s, std::initializer_list<double> values, long long updates) {
    std::vector<bool> out;
    for (double v : values) {
      s.updates = updates;
      train::record_checkpoint(s, v);
      out.push_back(train::lr_update(s, cfg));
    }
    return out;
  };
  {
    ScheduleState s;
    const auto h = feed(s, {30, 29, 28, 31}, 2000);
    check(h == std::vector<bool>{false, false, false, true} && s.lr == 0.0005,
          "history 30,29,28 then 31: halves once, lr 0.001 -> 0.0005");
  }
  {
    ScheduleState s;
    const auto h = feed(s, {30, 29, 28, 29.5}, 2000);
    check(h.back() == false && s.lr == 0.001, "history 30,29,28 then 29.5: unchanged");
  }
  {
    ScheduleState s;
    feed(s, {30, 29, 28, 30}, 2000);
    check(s.lr == 0.001, "history 30,29,28 then 30 (equal to the worst): unchanged");
  }
  {
    ScheduleState s;
    feed(s, {40, 30, 29, 28, 35}, 2000);
    check(s.lr == 0.0005, "history 40,30,29,28 then 35: only the previous 3 count, halves");
  }
  {
    ScheduleState s;
    feed(s, {30, 29, 28, 31, 32}, 2000);
    check(s.lr == 0.00025 && s.halvings == 2, "31 then 32: one halving at each of the two checkpoints");
  }
  {
    ScheduleState s;
    const auto h = feed(s, {30, 29, 28, 31, 35, 50}, 1000);
    check(std::none_of(h.begin(), h.end(), [](bool b) { return b; }) && s.lr == 0.001,
          "within the warm period (updates <= warm_updates): frozen for any history");
    s.updates = 1001;
    train::record_checkpoint(s, 60);
    check(train::lr_update(s, cfg) && s.lr == 0.0005, "first checkpoint past the warm period: rule applies");
  }
  {
    ScheduleState s;
    bool stopped = false;
    for (int k = 0; k < 30; ++k) {
      train::record_checkpoint(s, 100.0 - k);
      stopped = stopped || train::should_stop(s, cfg);
    }
    check(!stopped, "strictly decreasing WER: never stops");
  }
  {
    ScheduleState s;
    train::record_checkpoint(s, 20);
    std::vector<bool> stops;
    for (int k = 0; k < 10; ++k) {
      train::record_checkpoint(s, k % 2 ? 20 : 25);
      stops.push_back(train::should_stop(s, cfg));
    }
    check(std::count(stops.begin(), stops.end(), true) == 1 && stops.back(),
          "best then 10 non-improving (ties included): stops exactly at the 10th");
  }
  {
    ScheduleState s;
    train::record_checkpoint(s, 20);
    bool early = false;
    for (int k = 0; k < 9; ++k) {
      train::record_checkpoint(s, 21);
      early = early || train::should_stop(s, cfg);
    }
    train::record_checkpoint(s, 19);
    const bool reset = !train::should_stop(s, cfg) && s.no_improve == 0;
    for (int k = 0; k < 9; ++k) {
      train::record_checkpoint(s, 19.5);
      early = early || train::should_stop(s, cfg);
    }
    train::record_checkpoint(s, 19.5);
    check(!early && reset && train::should_stop(s, cfg), "streak of 9 then a new best: counter resets");
  }
  o.pass = failed == 0;
  o.summary = "schedule state machine: " + std::to_string(o.details.size() - failed) + "/" +
              std::to_string(o.details.size()) + " scenarios";
  return o;
}

// ---- trend criteria: shared, cached training runs ----

struct Cell {
  Regime regime = Regime::baseline;
  double lambda = 1.0;
  int aux_layer = 3;
  double fraction = 1.0;
  std::uint64_t seed = 1;
};

struct TrendRun {
  std::string status;
  std::optional<double> wer;
  std::optional<double> per;
  double seconds = 0;

  bool ok() const { return status == train::kStatusOk && wer.has_value(); }
  // Non-converged runs count as an infinitely bad WER.
  double wer_or_inf() const { return ok() ? *wer : std::numeric_limits<double>::infinity(); }
};

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string opt_number(const std::optional<double>& v) { return v ? number(*v) : "-"; }

std::optional<double> parse_opt(const std::string& s) {
  if (s == "-") return std::nullopt;
  return std::stod(s);
}

std::string cell_key(const Cell& c) {
  return multitask::to_string(c.regime) + " lambda=" + number(c.lambda) + " i=" + std::to_string(c.aux_layer) +
         " fraction=" + number(c.fraction) + " seed=" + std::to_string(c.seed);
}

class TrendRunner {
 public:
  TrendRunner(const fs::path& config, fs::path cache) : cache_(std::move(cache)) {
    doc_ = cli::load_run_document(config.string());
    // Any change to the library headers or the config invalidates the cache.
    stamp_ = std::string(HMCTC_LIBRARY_FINGERPRINT) + " " + std::to_string(std::hash<std::string>{}(read_file(config)));
    load_cache();
  }

  const cli::RunDocument& document() const { return doc_; }

  std::vector<std::uint64_t> seeds() const {
    return doc_.seeds.empty() ? std::vector<std::uint64_t>{doc_.run.seed} : doc_.seeds;
  }

  const TrendRun& get(const Cell& c) {
    const auto key = cell_key(c);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    if (!corpus_) {
      const auto t0 = std::chrono::steady_clock::now();
      corpus_ = cli::load_corpus(doc_);
      std::cerr << "  prepared the trend corpus in " << fixed(seconds_since(t0), 1) << " s\n";
    }
    auto cfg = doc_.run;
    cfg.multitask.regime = c.regime;
    cfg.multitask.lambda = c.lambda;
    cfg.multitask.aux_layer = c.aux_layer;
    cfg.fraction = c.fraction;
    cfg.seed = c.seed;
    const auto share_key = std::to_string(c.seed) + "|" + std::to_string(c.aux_layer) + "|" + number(c.fraction);
    const auto t0 = std::chrono::steady_clock::now();
    TrendRun r;
    try {
      const auto shared = pretrained_.find(share_key);
      auto res = train::run_training(cfg, corpus_->data, {}, shared == pretrained_.end() ? nullptr : &shared->second);
      if (res.pretrained && shared == pretrained_.end()) pretrained_.emplace(share_key, *res.pretrained);
      r.status = res.status;
      r.wer = res.dev_wer;
      r.per = res.dev_per;
    } catch (const std::exception& e) {
      r.status = std::string("error: ") + e.what();
    }
    r.seconds = seconds_since(t0);
    std::cerr << "  trained " << key << ": " << r.status << ", WER " << train::format_rate(r.wer) << ", PER "
              << train::format_rate(r.per) << ", " << fixed(r.seconds, 1) << " s\n";
    append_cache(key, r);
    return runs_.emplace(key, r).first->second;
  }

 private:
  void load_cache() {
    std::ifstream is(cache_);
    std::string line;
    if (!std::getline(is, line) || line != "#\t" + stamp_) return;
    while (std::getline(is, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string x; std::getline(ss, x, '\t');) f.push_back(x);
      if (f.size() != 5) continue;
      runs_[f[0]] = TrendRun{f[1], parse_opt(f[2]), parse_opt(f[3]), std::stod(f[4])};
    }
  }

  void append_cache(const std::string& key, const TrendRun& r) {
    std::ifstream probe(cache_);
    std::string first;
    const bool fresh = !std::getline(probe, first) || first != "#\t" + stamp_;
    std::ofstream os(cache_, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) os << "#\t" << stamp_ << '\n';
    os << key << '\t' << r.status << '\t' << opt_number(r.wer) << '\t' << opt_number(r.per) << '\t'
       << number(r.seconds) << '\n';
  }

  fs::path cache_;
  cli::RunDocument doc_;
  std::string stamp_;
  std::optional<cli::Corpus> corpus_;
  std::map<std::string, TrendRun> runs_;
  std::map<std::string, multitask::PretrainCheckpoint> pretrained_;
};

constexpr double kTrendLambda = 0.5;
constexpr int kTrendAuxLayer = 3;
constexpr int kTrendLayers = 5;
constexpr std::size_t kTrendSeeds = 5;

std::optional<std::string> trend_precondition(const TrendRunner& tr) {
  if (tr.document().run.encoder.num_layers != kTrendLayers) return "trend config must use a 5-layer encoder";
  if (tr.seeds().size() != kTrendSeeds) return "trend config must ship exactly 5 seeds";
  return std::nullopt;
}

Cell mt_cell(std::uint64_t seed, double fraction = 1.0, int aux = kTrendAuxLayer) {
  return {Regime::multitask, kTrendLambda, aux, fraction, seed};
}

Cell baseline_cell(std::uint64_t seed, double fraction) { return {Regime::baseline, 1.0, kTrendAuxLayer, fraction, seed}; }

std::string rate(const TrendRun& r) { return r.ok() ? fixed(*r.wer) : train::kNonConverged; }

Outcome criterion8(TrendRunner& tr) {
  Outcome o;
  if (auto bad = trend_precondition(tr)) return {false, "multitask benefit: " + *bad, {}};
  int full_wins = 0, low_wins = 0;
  double secs = 0;
  for (auto seed : tr.seeds()) {
    const auto& b1 = tr.get(baseline_cell(seed, 1.0));
    const auto& m1 = tr.get(mt_cell(seed, 1.0));
    const auto& b10 = tr.get(baseline_cell(seed, 0.1));
    const auto& m10 = tr.get(mt_cell(seed, 0.1));
    secs += b1.seconds + m1.seconds + b10.seconds + m10.seconds;
    const bool full = m1.ok() && m1.wer_or_inf() < b1.wer_or_inf();
    const bool low = !b10.ok() || (m10.ok() && *b10.wer - *m10.wer >= kTrendMarginWer);
    full_wins += full;
    low_wins += low;
    o.details.push_back("seed " + std::to_string(seed) + ": 100% baseline " + rate(b1) + " vs multitask " + rate(m1) +
                        (full ? " (win)" : " (no win)") + "; 10% baseline " + rate(b10) + " vs multitask " +
                        rate(m10) + (low ? " (win)" : " (no win)"));
  }
  o.pass = full_wins >= 4 && low_wins >= 4 && secs <= kSeconds8;
  o.summary = "multitask benefit: lower WER at 100% data on " + std::to_string(full_wins) +
              "/5 seeds, baseline X or >= 5 points behind at 10% on " + std::to_string(low_wins) + "/5 (need 4/5); " +
              fixed(secs, 0) + " s of training (<= " + fixed(kSeconds8, 0) + ")";
  return o;
}

Outcome criterion9(TrendRunner& tr) {
  Outcome o;
  if (auto bad = trend_precondition(tr)) return {false, "PER monotonicity: " + *bad, {}};
  int monotone = 0;
  double secs = 0;
  for (auto seed : tr.seeds()) {
    std::string line = "seed " + std::to_string(seed) + ": PER by layer";
    bool ok = true;
    std::optional<double> prev;
    for (int i = 1; i <= kTrendLayers; ++i) {
      const auto& r = tr.get(mt_cell(seed, 1.0, i));
      secs += r.seconds;
      line += " " + (r.ok() && r.per ? fixed(*r.per) : std::string(train::kNonConverged));
      if (!r.ok() || !r.per) {
        ok = false;
        continue;
      }
      if (prev && *r.per > *prev) ok = false;
      prev = r.per;
    }
    monotone += ok;
    o.details.push_back(line + (ok ? " (non-increasing)" : " (not monotone)"));
  }
  o.pass = monotone >= 4;
  o.summary = "PER monotonicity: PER non-increasing from layer 1 to 5 on " + std::to_string(monotone) +
              "/5 seeds (need 4/5); " + fixed(secs, 0) + " s of training";
  return o;
}

Outcome criterion10(TrendRunner& tr) {
  Outcome o;
  if (auto bad = trend_precondition(tr)) return {false, "regime ordering: " + *bad, {}};
  int best = 0;
  double own = 0;
  for (auto seed : tr.seeds()) {
    const auto& pm = tr.get({Regime::pretrain_multitask, kTrendLambda, kTrendAuxLayer, 1.0, seed});
    const auto& p = tr.get({Regime::pretrain, 1.0, kTrendAuxLayer, 1.0, seed});
    const auto& m = tr.get(mt_cell(seed));
    own += pm.seconds + p.seconds;
    const bool ok = pm.ok() && pm.wer_or_inf() <= std::min(m.wer_or_inf(), p.wer_or_inf());
    best += ok;
    o.details.push_back("seed " + std::to_string(seed) + ": pretrain+multitask " + rate(pm) + ", multitask " +
                        rate(m) + ", pretrain " + rate(p) + (ok ? " (best)" : " (not best)"));
  }
  o.pass = best >= 3 && own <= kSeconds10;
  o.summary = "regime ordering: pretrain+multitask <= min(multitask, pretrain) on " + std::to_string(best) +
              "/5 seeds (need 3/5); " + fixed(own, 0) + " s of pretraining-regime training (<= " +
              fixed(kSeconds10, 0) + ", multitask runs shared with criterion 8)";
  return o;
}

// ---- criterion 11: BPE determinism and coverage ----

Outcome criterion11() {
  Outcome o;
  auto corpus = data::word_counts(data::gen_synthetic(data::SyntheticSpec{}).train);
  tokenize::WordCounts extra{{"naïve", 3}, {"café", 5}, {"straße", 2}, {"über", 4}, {"a", 9}, {"aaaa", 1}};
  bool all = true;
  for (const auto& [name, words, size] : {std::tuple{"synthetic", corpus, std::size_t{200}},
                                          std::tuple{"mixed-script", extra, std::size_t{40}}}) {
    const auto a = tokenize::learn_bpe(words, size);
    const auto b = tokenize::learn_bpe(words, size);
    const bool same = a.merges() == b.merges() && !a.merges().empty();
    std::size_t round = 0;
    for (const auto& [w, n] : words) round += a.decode(a.encode(w)) == std::vector<std::string>{w};
    all = all && same && round == words.size();
    o.details.push_back(std::string(name) + ": " + std::to_string(a.merges().size()) + " merges, " +
                        (same ? "identical" : "DIFFERENT") + " across runs; " + std::to_string(round) + "/" +
                        std::to_string(words.size()) + " words round-trip");
  }
  o.pass = all;
  o.summary = std::string("BPE determinism and coverage: ") + (all ? "merge lists identical, every word round-trips"
                                                                   : "mismatch");
  return o;
}

// ---- criterion 12: checkpoint fidelity ----

bool bit_equal(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::memcmp(&*a, &*b, sizeof(double)) == 0;
}

Outcome criterion12() {
  TempDir dir("checkpoint");
  train::RunConfig cfg;
  cfg.encoder.num_layers = 3;
  cfg.encoder.hidden = 4;
  cfg.encoder.input_dim = 4;
  cfg.multitask = {0.5, 2, Regime::multitask};
  cfg.train.adam.lr = 0.01;
  cfg.train.schedule.checkpoint_interval = 4;
  cfg.train.schedule.warm_updates = 4;
  cfg.train.schedule.max_updates = 12;
  cfg.train.batch_sizes = {8, 8, 8, 8, 8};
  cfg.seed = 12;
  const auto& data = small_data();
  auto measure = [&](const multitask::Model& m) {
    auto r = train::evaluate(m, data.dev, data.vocab, true, true);
    train::add_losses(r, m, data.dev, 0.5);
    return r;
  };
  std::optional<train::MetricsReport> before;
  std::vector<Tensor> params_before;
  train::RunHooks hooks;
  hooks.on_checkpoint = [&](const train::CheckpointEvent& ev) {
    if (ev.record.index != 1) return;
    train::save_checkpoint(dir.path / "mid", ev.model, &ev.schedule, &ev.adam);
    before = measure(ev.model);
    params_before = ev.model.snapshot();
  };
  train::run_training(cfg, data, hooks);
  Outcome o;
  if (!before) return {false, "serialization fidelity: no mid-training checkpoint was reached", {}};
  auto ck = train::load_checkpoint(dir.path / "mid");
  const auto after = measure(ck.model);
  const auto params_after = ck.model.snapshot();
  const bool params_same = params_before.size() == params_after.size() &&
                           std::equal(params_before.begin(), params_before.end(), params_after.begin());
  const bool metrics_same = bit_equal(before->dev_wer, after.dev_wer) && bit_equal(before->dev_per, after.dev_per) &&
                            bit_equal(before->loss, after.loss) && bit_equal(before->loss_subword, after.loss_subword) &&
                            bit_equal(before->loss_phone, after.loss_phone);
  const bool state = ck.schedule && ck.adam && ck.schedule->updates == 8 && ck.adam->step == 8;
  o.pass = params_same && metrics_same && state;
  o.summary = "serialization fidelity: at update 8, WER " + train::format_rate(after.dev_wer) + ", PER " +
              train::format_rate(after.dev_per) + ", loss " + opt_number(after.loss) + "; metrics " +
              (metrics_same ? "bit-identical" : "DIFFER") + ", parameters " + (params_same ? "bit-identical" : "DIFFER") +
              ", optimizer and schedule state " + (state ? "restored" : "MISSING");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the multitask CTC library"};
  std::string criteria = "1,2,3,4,5,6,7,8,9,10,11,12";
  std::string config = std::string(HMCTC_SOURCE_DIR) + "/configs/trend.json";
  std::string cache = "acceptance_runs.tsv";
  app.add_option("--criteria", criteria, "Comma-separated criterion numbers");
  app.add_option("--config", config, "Run config for the trend criteria");
  app.add_option("--cache", cache, "Cache of trend training runs");
  CLI11_PARSE(app, argc, argv);

  std::optional<TrendRunner> trend;
  auto runner = [&]() -> TrendRunner& {
    if (!trend) trend.emplace(config, cache);
    return *trend;
  };
  const std::map<int, std::function<Outcome()>> all{
      {1, criterion1},  {2, criterion2},  {3, criterion3},
      {4, criterion4},  {5, criterion5},  {6, criterion6},
      {7, criterion7},  {8, [&] { return criterion8(runner()); }},
      {9, [&] { return criterion9(runner()); }}, {10, [&] { return criterion10(runner()); }},
      {11, criterion11}, {12, criterion12},
  };
  bool pass = true;
  for (const auto& item : cli::split_list(criteria)) {
    int n = 0;
    try {
      n = std::stoi(item);
    } catch (const std::exception&) {
    }
    const auto it = all.find(n);
    if (it == all.end()) {
      std::cerr << "unknown criterion: " << item << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), {}};
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.summary << "\n";
    for (const auto& d : o.details) std::cout << "    " << d << "\n";
    std::cout << std::flush;
    pass = pass && o.pass;
  }
  return pass ? 0 : 1;
}
