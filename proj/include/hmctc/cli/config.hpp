#pragma once

// Run configuration documents: a JSON object validated against a fixed
// schema before any work starts. Unknown keys and out-of-range values are
// reported with the path of the offending field.

#include "hmctc/data/feature_io.hpp"
#include "hmctc/data/synthetic.hpp"
#include "hmctc/train/checkpoint.hpp"
#include "hmctc/train/sweep.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace hmctc::cli {

using nlohmann::json;
using nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error((path.empty() ? std::string("config") : path) + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class Kind { object, integer, number, string, boolean, integer_array };

struct Field {
  std::string key;
  Kind kind = Kind::object;
  std::string doc;
  std::optional<double> min;
  std::optional<double> max;
  bool exclusive_min = false;
  bool exclusive_max = false;
  std::vector<std::string> choices;
  std::size_t array_length = 0;  // 0 = any
  std::vector<Field> children;
};

namespace detail {

inline Field make(std::string key, Kind kind, std::string doc) {
  Field f;
  f.key = std::move(key);
  f.kind = kind;
  f.doc = std::move(doc);
  return f;
}

inline Field integer(std::string key, std::string doc, std::optional<double> min = {}, std::optional<double> max = {}) {
  Field f = make(std::move(key), Kind::integer, std::move(doc));
  f.min = min;
  f.max = max;
  return f;
}

inline Field number(std::string key, std::string doc, std::optional<double> min = {}, std::optional<double> max = {},
                    bool exclusive_min = false, bool exclusive_max = false) {
  Field f = make(std::move(key), Kind::number, std::move(doc));
  f.min = min;
  f.max = max;
  f.exclusive_min = exclusive_min;
  f.exclusive_max = exclusive_max;
  return f;
}

inline Field string(std::string key, std::string doc, std::vector<std::string> choices = {}) {
  Field f = make(std::move(key), Kind::string, std::move(doc));
  f.choices = std::move(choices);
  return f;
}

inline Field object(std::string key, std::string doc, std::vector<Field> children) {
  Field f = make(std::move(key), Kind::object, std::move(doc));
  f.children = std::move(children);
  return f;
}

inline Field integers(std::string key, std::string doc, std::size_t length, double min) {
  Field f = make(std::move(key), Kind::integer_array, std::move(doc));
  f.array_length = length;
  f.min = min;
  return f;
}

}  // namespace detail

inline Field synthetic_schema() {
  using namespace detail;
  return object("synthetic", "generate the seeded synthetic task in memory",
                {integer("num_phones", "phone inventory size", 2, 40),
                 integer("num_words", "lexicon size", 1),
                 integer("feature_dim", "feature vector width", 1),
                 integer("min_words", "fewest words per utterance", 1),
                 integer("max_words", "most words per utterance", 1),
                 integer("min_word_phones", "shortest pronunciation", 1),
                 integer("max_word_phones", "longest pronunciation", 1),
                 integer("min_duration", "fewest frames per phone", 1),
                 integer("max_duration", "most frames per phone", 1),
                 number("noise", "frame noise standard deviation", 0),
                 number("speaker_shift", "speaker offset standard deviation", 0),
                 number("coarticulation", "neighbour blend at phone edges", 0, 1, false, true),
                 integer("accents", "number of shared speaker rotations", 0),
                 number("zipf_exponent", "word frequency skew", 0),
                 integer("speakers_per_split", "speakers in each split", 1),
                 integer("train_size", "training utterances", 0),
                 integer("dev_size", "development utterances", 0),
                 integer("test_size", "test utterances", 0),
                 integer("seed", "generator seed", 0)});
}

inline Field run_schema() {
  using namespace detail;
  return object(
      "", "hmctc run configuration",
      {integer("seed", "run seed", 0),
       integers("seeds", "seeds for sweep cells", 0, 0),
       integer("vocab_size", "wordpiece vocabulary size when learning one", 2),
       integer("dedupe_cap", "maximum copies of one training transcript", 1),
       number("fraction", "stratified fraction of the training set", 0, 1, true, false),
       object("data", "corpus location (exactly one of dir or synthetic)",
              {string("dir", "directory written by the synth command"),
               string("vocab", "wordpiece vocabulary file; learned from training transcripts if absent"),
               synthetic_schema()}),
       object("encoder", "BiLSTM encoder",
              {integer("num_layers", "encoder depth N", 1), integer("hidden", "units per direction", 1),
               number("dropout", "dropout rate on every layer output", 0, 1, false, true),
               integer("input_dim", "feature width; inferred from the data if absent", 1)}),
       object("multitask", "loss combination",
              {number("lambda", "weight of the subword loss", 0, 1), integer("aux_layer", "phone head layer i", 1),
               string("regime", "training regime", {"baseline", "multitask", "pretrain", "pretrain_multitask"})}),
       object("adam", "optimizer",
              {number("lr", "initial learning rate", 0, {}, true), number("beta1", "first moment decay", 0, 1, false, true),
               number("beta2", "second moment decay", 0, 1, false, true), number("eps", "denominator floor", 0, {}, true)}),
       object("schedule", "checkpointing, learning-rate halving and early stopping",
              {integer("checkpoint_interval", "updates between dev evaluations", 1),
               integer("warm_updates", "updates before the learning rate may change", 0),
               integer("lr_window", "checkpoints compared when halving", 1),
               integer("patience", "checkpoints without a new best before stopping", 1),
               integer("max_updates", "update budget, 0 for none", 0),
               integer("max_epochs", "epoch budget, 0 for none", 0)}),
       integers("batch_sizes", "batch size of each length bucket, shortest first", data::kNumBuckets, 1)});
}

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline std::string bound_text(const Field& f) {
  std::string s;
  auto num = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  if (f.min) s += (f.exclusive_min ? " > " : " >= ") + num(*f.min);
  if (f.max) s += std::string(s.empty() ? "" : " and") + (f.exclusive_max ? " < " : " <= ") + num(*f.max);
  return s;
}

inline void check_range(const Field& f, double v, const std::string& path) {
  const bool lo = !f.min || (f.exclusive_min ? v > *f.min : v >= *f.min);
  const bool hi = !f.max || (f.exclusive_max ? v < *f.max : v <= *f.max);
  if (!lo || !hi) throw ConfigError(path, "value must be" + bound_text(f));
}

inline void validate(const json& j, const Field& f, const std::string& path) {
  switch (f.kind) {
    case Kind::object: {
      if (!j.is_object()) throw ConfigError(path, "expected an object");
      for (const auto& [k, v] : j.items()) {
        auto it = std::find_if(f.children.begin(), f.children.end(), [&](const Field& c) { return c.key == k; });
        if (it == f.children.end()) throw ConfigError(join_path(path, k), "unknown key");
        validate(v, *it, join_path(path, k));
      }
      return;
    }
    case Kind::integer:
      if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
      check_range(f, j.get<double>(), path);
      return;
    case Kind::number:
      if (!j.is_number()) throw ConfigError(path, "expected a number");
      check_range(f, j.get<double>(), path);
      return;
    case Kind::string:
      if (!j.is_string()) throw ConfigError(path, "expected a string");
      if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), j.get<std::string>()) == f.choices.end()) {
        std::string all;
        for (const auto& c : f.choices) all += (all.empty() ? "" : ", ") + c;
        throw ConfigError(path, "expected one of " + all);
      }
      return;
    case Kind::boolean:
      if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
      return;
    case Kind::integer_array:
      if (!j.is_array()) throw ConfigError(path, "expected an array of integers");
      if (f.array_length && j.size() != f.array_length) {
        throw ConfigError(path, "expected exactly " + std::to_string(f.array_length) + " entries");
      }
      for (std::size_t k = 0; k < j.size(); ++k) {
        const auto p = path + "[" + std::to_string(k) + "]";
        if (!j[k].is_number_integer()) throw ConfigError(p, "expected an integer");
        check_range(f, j[k].get<double>(), p);
      }
      return;
  }
}

inline ordered_json schema_node(const Field& f) {
  ordered_json s;
  if (!f.doc.empty()) s["description"] = f.doc;
  const bool whole = f.kind == Kind::integer || f.kind == Kind::integer_array;
  auto bound = [&](double v) { return whole ? ordered_json(static_cast<std::int64_t>(v)) : ordered_json(v); };
  auto bounds = [&](ordered_json& n) {
    if (f.min) n[f.exclusive_min ? "exclusiveMinimum" : "minimum"] = bound(*f.min);
    if (f.max) n[f.exclusive_max ? "exclusiveMaximum" : "maximum"] = bound(*f.max);
  };
  switch (f.kind) {
    case Kind::object:
      s["type"] = "object";
      s["properties"] = ordered_json::object();
      for (const auto& c : f.children) s["properties"][c.key] = schema_node(c);
      s["additionalProperties"] = false;
      break;
    case Kind::integer:
      s["type"] = "integer";
      bounds(s);
      break;
    case Kind::number:
      s["type"] = "number";
      bounds(s);
      break;
    case Kind::string:
      s["type"] = "string";
      if (!f.choices.empty()) s["enum"] = f.choices;
      break;
    case Kind::boolean:
      s["type"] = "boolean";
      break;
    case Kind::integer_array: {
      s["type"] = "array";
      ordered_json item{{"type", "integer"}};
      if (f.min) item["minimum"] = bound(*f.min);
      s["items"] = item;
      if (f.array_length) s["minItems"] = s["maxItems"] = f.array_length;
      break;
    }
  }
  return s;
}

}  // namespace detail

// JSON Schema (draft 2020-12) rendering of the run configuration schema.
inline ordered_json json_schema() {
  auto s = detail::schema_node(run_schema());
  ordered_json out;
  out["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  out["title"] = "hmctc run configuration";
  for (auto& [k, v] : s.items()) {
    if (k != "description") out[k] = v;
  }
  return out;
}

struct RunDocument {
  train::RunConfig run;
  bool input_dim_given = false;
  std::optional<data::SyntheticSpec> synthetic;
  std::string data_dir;
  std::string vocab_path;
  std::size_t vocab_size = 200;
  std::size_t dedupe_cap = 300;
  std::vector<std::uint64_t> seeds;
};

namespace detail {

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline data::SyntheticSpec synthetic_from_json(const json& j) {
  using detail::take;
  data::SyntheticSpec s;
  take(j, "num_phones", s.num_phones);
  take(j, "num_words", s.num_words);
  take(j, "feature_dim", s.feature_dim);
  take(j, "min_words", s.min_words);
  take(j, "max_words", s.max_words);
  take(j, "min_word_phones", s.min_word_phones);
  take(j, "max_word_phones", s.max_word_phones);
  take(j, "min_duration", s.min_duration);
  take(j, "max_duration", s.max_duration);
  take(j, "noise", s.noise);
  take(j, "speaker_shift", s.speaker_shift);
  take(j, "coarticulation", s.coarticulation);
  take(j, "accents", s.accents);
  take(j, "zipf_exponent", s.zipf_exponent);
  take(j, "speakers_per_split", s.speakers_per_split);
  take(j, "train_size", s.train_size);
  take(j, "dev_size", s.dev_size);
  take(j, "test_size", s.test_size);
  take(j, "seed", s.seed);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("data.synthetic", e.what());
  }
  return s;
}

inline ordered_json synthetic_to_json(const data::SyntheticSpec& s) {
  return {{"num_phones", s.num_phones},
          {"num_words", s.num_words},
          {"feature_dim", s.feature_dim},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"min_word_phones", s.min_word_phones},
          {"max_word_phones", s.max_word_phones},
          {"min_duration", s.min_duration},
          {"max_duration", s.max_duration},
          {"noise", s.noise},
          {"speaker_shift", s.speaker_shift},
          {"coarticulation", s.coarticulation},
          {"accents", s.accents},
          {"zipf_exponent", s.zipf_exponent},
          {"speakers_per_split", s.speakers_per_split},
          {"train_size", s.train_size},
          {"dev_size", s.dev_size},
          {"test_size", s.test_size},
          {"seed", s.seed}};
}

// Validates `j` against the schema and fills a document; missing keys keep
// their defaults.
inline RunDocument parse_run_document(const json& j) {
  using detail::take;
  detail::validate(j, run_schema(), "");
  RunDocument d;
  auto& r = d.run;
  take(j, "seed", r.seed);
  if (j.contains("seeds")) d.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  take(j, "vocab_size", d.vocab_size);
  take(j, "dedupe_cap", d.dedupe_cap);
  take(j, "fraction", r.fraction);
  if (j.contains("data")) {
    const auto& dj = j.at("data");
    take(dj, "dir", d.data_dir);
    take(dj, "vocab", d.vocab_path);
    if (dj.contains("synthetic")) d.synthetic = synthetic_from_json(dj.at("synthetic"));
    if (dj.contains("dir") && dj.contains("synthetic")) throw ConfigError("data", "give either dir or synthetic, not both");
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    take(e, "num_layers", r.encoder.num_layers);
    take(e, "hidden", r.encoder.hidden);
    take(e, "dropout", r.encoder.dropout);
    d.input_dim_given = e.contains("input_dim");
    take(e, "input_dim", r.encoder.input_dim);
  }
  if (j.contains("multitask")) {
    const auto& m = j.at("multitask");
    take(m, "lambda", r.multitask.lambda);
    take(m, "aux_layer", r.multitask.aux_layer);
    if (m.contains("regime")) r.multitask.regime = *multitask::parse_regime(m.at("regime").get<std::string>());
  }
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    take(a, "lr", r.train.adam.lr);
    take(a, "beta1", r.train.adam.beta1);
    take(a, "beta2", r.train.adam.beta2);
    take(a, "eps", r.train.adam.eps);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    take(s, "checkpoint_interval", r.train.schedule.checkpoint_interval);
    take(s, "warm_updates", r.train.schedule.warm_updates);
    take(s, "lr_window", r.train.schedule.lr_window);
    take(s, "patience", r.train.schedule.patience);
    take(s, "max_updates", r.train.schedule.max_updates);
    take(s, "max_epochs", r.train.schedule.max_epochs);
  }
  if (j.contains("batch_sizes")) {
    const auto v = j.at("batch_sizes").get<std::vector<std::size_t>>();
    std::copy(v.begin(), v.end(), r.train.batch_sizes.begin());
  }
  return d;
}

// Cross-field rules, checked once every override has been applied.
inline void check_document(const RunDocument& d) {
  const auto& m = d.run.multitask;
  if (m.aux_layer > d.run.encoder.num_layers) {
    throw ConfigError("multitask.aux_layer", "layer " + std::to_string(m.aux_layer) + " exceeds encoder.num_layers " +
                                                 std::to_string(d.run.encoder.num_layers));
  }
  if ((m.regime == multitask::Regime::baseline || m.regime == multitask::Regime::pretrain) && m.lambda != 1.0) {
    throw ConfigError("multitask.lambda", "regime " + multitask::to_string(m.regime) + " requires lambda = 1");
  }
  try {
    d.run.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path + " is not valid JSON: " + e.what());
  }
}

inline RunDocument load_run_document(const std::string& path) { return parse_run_document(read_json_file(path)); }

// The document with every default filled in, as written next to outputs.
inline ordered_json resolved_json(const RunDocument& d) {
  const auto& r = d.run;
  ordered_json j;
  j["seed"] = r.seed;
  if (!d.seeds.empty()) j["seeds"] = d.seeds;
  j["vocab_size"] = d.vocab_size;
  j["dedupe_cap"] = d.dedupe_cap;
  j["fraction"] = r.fraction;
  ordered_json data = ordered_json::object();
  if (!d.data_dir.empty()) data["dir"] = d.data_dir;
  if (!d.vocab_path.empty()) data["vocab"] = d.vocab_path;
  if (d.synthetic) data["synthetic"] = synthetic_to_json(*d.synthetic);
  j["data"] = data;
  j["encoder"] = train::encoder_to_json(r.encoder);
  j["multitask"] = {{"lambda", r.multitask.lambda},
                    {"aux_layer", r.multitask.aux_layer},
                    {"regime", multitask::to_string(r.multitask.regime)}};
  j["adam"] = {{"lr", r.train.adam.lr}, {"beta1", r.train.adam.beta1}, {"beta2", r.train.adam.beta2},
               {"eps", r.train.adam.eps}};
  const auto& s = r.train.schedule;
  j["schedule"] = {{"checkpoint_interval", s.checkpoint_interval}, {"warm_updates", s.warm_updates},
                   {"lr_window", s.lr_window},                     {"patience", s.patience},
                   {"max_updates", s.max_updates},                 {"max_epochs", s.max_epochs}};
  j["batch_sizes"] = r.train.batch_sizes;
  return j;
}

struct Corpus {
  train::PreparedData data;
  data::Dataset test;
};

// Loads or generates the corpus named by the document and prepares it for
// training. Fills encoder.input_dim from the features when it was not given.
inline Corpus load_corpus(RunDocument& d) {
  data::Dataset train, dev, test;
  tokenize::Lexicon lexicon;
  if (d.synthetic) {
    auto c = data::gen_synthetic(*d.synthetic);
    train = std::move(c.train);
    dev = std::move(c.dev);
    test = std::move(c.test);
    lexicon = std::move(c.lexicon);
  } else if (!d.data_dir.empty()) {
    const std::filesystem::path dir(d.data_dir);
    train = data::load_split(dir / "train");
    dev = data::load_split(dir / "dev");
    if (std::filesystem::exists(dir / "test.feats")) test = data::load_split(dir / "test");
    lexicon = tokenize::load_lexicon((dir / "lexicon.tsv").string());
  } else {
    throw ConfigError("data", "no corpus given (set data.dir or data.synthetic)");
  }
  if (train.empty()) throw ConfigError("data", "training split is empty");
  const int dim = static_cast<int>(train.front().features.cols());
  if (!d.input_dim_given) {
    d.run.encoder.input_dim = dim;
  } else if (d.run.encoder.input_dim != dim) {
    throw ConfigError("encoder.input_dim", "is " + std::to_string(d.run.encoder.input_dim) +
                                               " but the features have width " + std::to_string(dim));
  }
  auto vocab = d.vocab_path.empty() ? tokenize::learn_bpe(data::word_counts(train), d.vocab_size)
                                    : tokenize::load_vocab(d.vocab_path);
  Corpus c{train::prepare_data(std::move(train), std::move(dev), std::move(vocab), std::move(lexicon),
                               d.run.train.batch_sizes, d.dedupe_cap),
           {}};
  if (!test.empty()) {
    data::attach_labels(test, c.data.vocab, c.data.lexicon);
    c.test = data::normalize_per_speaker(std::move(test));
  }
  return c;
}

}  // namespace hmctc::cli
