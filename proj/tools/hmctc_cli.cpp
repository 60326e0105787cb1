#include "hmctc/cli/commands.hpp"

#include <CLI11.hpp>

namespace {

using namespace hmctc;
using namespace hmctc::cli;

// Shared by the commands that read a run config.
struct RunFlags {
  std::optional<std::string> config;
  Overrides overrides;

  void attach(CLI::App* app, bool training_flags) {
    app->add_option("--config", config, "run config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--seed", overrides.seed, "run seed (overrides the config)");
    if (!training_flags) return;
    app->add_option("--lambda", overrides.lambda, "subword loss weight");
    app->add_option("--aux-layer", overrides.aux_layer, "encoder layer of the phone head");
    app->add_option("--regime", overrides.regime, "baseline, multitask, pretrain or pretrain_multitask");
    app->add_option("--fraction", overrides.fraction, "fraction of the training set");
    app->add_option("--max-updates", overrides.max_updates, "update budget");
    app->add_option("--layers", overrides.num_layers, "encoder depth");
    app->add_option("--hidden", overrides.hidden, "units per direction");
  }
  RunDocument document() const { return resolve_document(config, overrides); }
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& v : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(v, &used));
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw UsageError("seed '" + v + "' is not a non-negative integer");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multitask CTC: data, training, evaluation and sweeps"};
  app.require_subcommand(1);

  std::optional<std::string> synth_spec;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write the seeded synthetic corpus");
  synth->add_option("--config", synth_spec, "synthetic spec (JSON)")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "generator seed (overrides the spec)");
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string vocab_corpus, vocab_out;
  std::size_t vocab_size = 200;
  auto* vocab = app.add_subcommand("vocab", "learn a wordpiece vocabulary");
  vocab->add_option("--corpus", vocab_corpus, "transcript file or corpus directory")->required();
  vocab->add_option("--size", vocab_size, "vocabulary size including blank");
  vocab->add_option("--out", vocab_out, "vocabulary file")->required();

  RunFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one model");
  train_flags.attach(train, true);
  train->add_option("--out", train_out, "output directory")->required();

  std::string eval_ckpt, eval_data, eval_split = "dev";
  RunFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "score a checkpoint and print its metrics as JSON");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "corpus directory written by synth");
  eval->add_option("--split", eval_split, "train, dev or test");
  eval_flags.attach(eval, false);

  RunFlags sweep_flags;
  std::string sweep_axis, sweep_grid, sweep_seeds, sweep_out;
  auto* sweep = app.add_subcommand("sweep", "train a grid of seeded runs and emit a TSV table");
  sweep_flags.attach(sweep, true);
  sweep->add_option("--axis", sweep_axis, "lambda, layer, fraction or regime")->required();
  sweep->add_option("--grid", sweep_grid, "comma-separated grid values")->required();
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds (default: config seeds, else the run seed)");
  sweep->add_option("--out", sweep_out, "TSV file (default: standard output)");

  std::string align_ckpt, align_data, align_split = "dev", align_ids, align_out;
  std::size_t align_limit = 5;
  RunFlags align_flags;
  auto* align = app.add_subcommand("align", "per-frame argmax tables of each head");
  align->add_option("--checkpoint", align_ckpt, "checkpoint directory")->required();
  align->add_option("--data", align_data, "corpus directory written by synth");
  align->add_option("--split", align_split, "train, dev or test");
  align->add_option("--utterances", align_ids, "comma-separated utterance ids");
  align->add_option("--limit", align_limit, "number of utterances when no ids are given");
  align->add_option("--out", align_out, "TSV file (default: standard output)");
  align_flags.attach(align, false);

  auto* schema = app.add_subcommand("schema", "print the JSON Schema of run configs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  auto source = [](const std::string& dir, const RunFlags& flags) {
    DataSource s{dir, std::nullopt};
    if (dir.empty() && flags.config) s.doc = flags.document();
    return s;
  };
  auto open_out = [](const std::string& path, std::ofstream& file) -> std::ostream& {
    if (path.empty()) return std::cout;
    const auto parent = fs::absolute(path).parent_path();
    if (!fs::is_directory(parent)) throw UsageError("output directory " + parent.string() + " does not exist");
    file.open(path);
    if (!file) throw std::runtime_error("cannot write " + path);
    return file;
  };

  try {
    if (*schema) {
      std::cout << json_schema().dump(2) << "\n";
      return kExitOk;
    }
    if (*synth) return cmd_synth(synth_spec, synth_seed, synth_out, std::cerr);
    if (*vocab) return cmd_vocab(vocab_corpus, vocab_size, vocab_out, std::cerr);
    if (*train) return cmd_train(train_flags.document(), train_out, std::cerr);
    if (*eval) return cmd_eval(eval_ckpt, source(eval_data, eval_flags), eval_split, std::cout);
    if (*sweep) {
      auto doc = sweep_flags.document();
      std::ofstream file;
      return cmd_sweep(std::move(doc), sweep_axis, split_list(sweep_grid), parse_seeds(sweep_seeds),
                       open_out(sweep_out, file), std::cerr);
    }
    if (*align) {
      std::ofstream file;
      return cmd_align(align_ckpt, source(align_data, align_flags), align_split, split_list(align_ids), align_limit,
                       open_out(align_out, file), std::cerr);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
