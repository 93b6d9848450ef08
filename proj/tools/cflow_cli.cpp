// Command-line front end: gen-data, train, sample, eval, selfcheck.
//
// Every subcommand accepts --config FILE with key = value lines whose keys
// are the long flag names without dashes; flags given on the command line
// take precedence.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cflow/data.hpp"
#include "cflow/errors.hpp"
#include "cflow/pipeline.hpp"
#include "cflow/verify.hpp"

namespace {

using namespace cflow;

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
}

nlohmann::json mask_rows(const Mask& m, std::uint32_t width) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index start = 0; start < m.size(); start += width) {
    std::string row;
    for (Index i = start; i < start + width; ++i) row += m(i) ? '1' : '0';
    rows.push_back(row);
  }
  return rows;
}

struct GenOptions {
  GeneratorConfig gen;
  std::string preset = "standard";
  std::string out;
  bool ambiguity_given = false;
};

struct TrainOptions {
  TrainConfig train;
  std::string flow = "planar";
  std::string rater_mode = "all";
  std::string data;
  std::string out;
  std::string log;
  bool quiet = false;
};

struct SampleOptions {
  std::string checkpoint;
  std::string data;
  std::uint32_t index = 0;
  int n = 16;
  std::uint64_t seed = 0;
  std::string out = "-";
};

struct EvalOptions {
  EvalConfig eval;
  std::string mode = "all";
  std::string checkpoint;
  std::string data;
  std::string out = "-";
  std::string table;
};

int run_gen(const GenOptions& o) {
  GeneratorConfig config = o.gen;
  config.preset = parse_rater_preset(o.preset);
  if (config.preset == RaterPreset::Bimodal && !o.ambiguity_given)
    config.ambiguity = GeneratorConfig::bimodal().ambiguity;
  const DatasetSplit split = generate(config);
  save(split, o.out);
  std::cerr << "wrote " << split.samples.size() << " samples (" << split.train.size() << " train, "
            << split.val.size() << " val, " << split.test.size() << " test) to " << o.out << '\n';
  return 0;
}

int run_train(const TrainOptions& o) {
  TrainConfig config = o.train;
  config.flow_kind = parse_flow_kind(o.flow);
  if (config.flow_kind == FlowKind::None) config.flow_steps = 0;
  config.rater_mode = parse_rater_mode(o.rater_mode);
  const DatasetSplit data = load(o.data);
  const TrainResult result = train(config, data, [&](const EpochLog& e) {
    if (o.quiet) return;
    std::cerr << "epoch " << e.epoch << "  train " << std::fixed << std::setprecision(4) << e.train.total
              << "  recon " << e.train.recon << "  kl " << e.train.kl_mc << "  val " << e.val.total << '\n';
  });
  save_checkpoint(result.best, o.out);
  if (!o.log.empty()) write_text(o.log, epoch_log_csv(result.log));
  std::cerr << "best epoch " << result.best.epoch << " of " << result.epochs_run << ", val loss "
            << result.best.best_val_loss << '\n';
  return 0;
}

int run_sample(const SampleOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const DatasetSplit data = load(o.data);
  if (o.index >= data.samples.size())
    throw ContractError("image index " + std::to_string(o.index) + " out of range (dataset has " +
                        std::to_string(data.samples.size()) + " samples)");
  const SampleSet set = sample(ckpt.model, data.samples[o.index].image, o.n, o.seed);

  nlohmann::json masks = nlohmann::json::array();
  for (const Mask& m : set.masks) masks.push_back(mask_rows(m, data.width));
  const std::vector<double> mean(set.mean_probability.data(),
                                 set.mean_probability.data() + set.mean_probability.size());
  const nlohmann::json j{{"index", o.index},   {"n", o.n},
                         {"seed", o.seed},     {"height", data.height},
                         {"width", data.width}, {"distinct", count_distinct(set.masks)},
                         {"masks", masks},     {"mean_probability", mean}};
  write_text(o.out, j.dump(2) + "\n");
  return 0;
}

int run_eval(EvalOptions o) {
  o.eval.mode = parse_rater_mode(o.mode);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const DatasetSplit data = load(o.data);
  const MetricsReport report = evaluate(ckpt.model, data, o.eval);
  write_text(o.out, report_json(report));
  if (!o.table.empty()) write_text(o.table, report_table(report));
  return 0;
}

int run_selfcheck() {
  bool ok = true;
  for (const verify::SuiteResult& r : verify::run_selfcheck()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << " worst "
              << std::scientific << std::setprecision(3) << r.worst << " tol " << r.tolerance << std::defaultfloat
              << "  cases " << r.cases << "  " << std::fixed << std::setprecision(1) << r.seconds << "s"
              << std::defaultfloat;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

// Fills options that were not given on the command line from a key = value
// file. Keys may use '-' or '_'.
void apply_config(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") throw ConfigError("unknown key '" + item.name + "' in " + path);
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required (flag or config key)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cflow: conditional flow VAE for multi-rater segmentation"};
  app.require_subcommand(1);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic multi-rater dataset (CFDS)");
  std::string gen_config;
  gen_cmd->add_option("--config", gen_config, "key = value file; command-line flags override it");
  gen_cmd->add_option("--out", gen.out, "output .cfds path");
  gen_cmd->add_option("--n-samples", gen.gen.n_samples, "number of images")->capture_default_str();
  gen_cmd->add_option("--img-size", gen.gen.img_size, "image side length")->capture_default_str();
  gen_cmd->add_option("--n-raters", gen.gen.n_raters, "raters per image")->capture_default_str();
  CLI::Option* ambiguity =
      gen_cmd->add_option("--ambiguity", gen.gen.ambiguity, "rater disagreement in [0, 1] (bimodal default 0.9)")
          ->capture_default_str();
  gen_cmd->add_option("--p-empty", gen.gen.p_empty_rater, "chance a rater marks nothing")->capture_default_str();
  gen_cmd->add_option("--seed", gen.gen.seed)->capture_default_str();
  gen_cmd->add_option("--preset", gen.preset, "standard or bimodal")->capture_default_str();
  gen_cmd->add_option("--train-fraction", gen.gen.train_fraction)->capture_default_str();
  gen_cmd->add_option("--val-fraction", gen.gen.val_fraction)->capture_default_str();

  TrainOptions tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write the best-validation checkpoint (CFCK)");
  std::string train_config;
  train_cmd->add_option("--config", train_config, "key = value file; command-line flags override it");
  train_cmd->add_option("--data", tr.data, "input .cfds path");
  train_cmd->add_option("--out", tr.out, "output .cfck path");
  train_cmd->add_option("--log", tr.log, "per-epoch CSV log path");
  train_cmd->add_option("--flow", tr.flow, "planar, glow or none")->capture_default_str();
  train_cmd->add_option("--K", tr.train.flow_steps, "flow steps")->capture_default_str();
  train_cmd->add_option("--L", tr.train.latent_dim, "latent dimension")->capture_default_str();
  train_cmd->add_option("--H", tr.train.context_dim, "context dimension")->capture_default_str();
  train_cmd->add_option("--hidden", tr.train.hidden, "encoder/prior/decoder width")->capture_default_str();
  train_cmd->add_option("--conditioner-hidden", tr.train.conditioner_hidden)->capture_default_str();
  train_cmd->add_option("--lr", tr.train.lr)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
  train_cmd->add_option("--max-epochs", tr.train.max_epochs)->capture_default_str();
  train_cmd->add_option("--patience", tr.train.patience)->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed)->capture_default_str();
  train_cmd->add_option("--rater-mode", tr.rater_mode, "all or single")->capture_default_str();
  train_cmd->add_flag("--quiet", tr.quiet, "no per-epoch progress on stderr");

  SampleOptions so;
  CLI::App* sample_cmd = app.add_subcommand("sample", "draw segmentations for one image");
  std::string sample_config;
  sample_cmd->add_option("--config", sample_config, "key = value file; command-line flags override it");
  sample_cmd->add_option("--checkpoint", so.checkpoint);
  sample_cmd->add_option("--data", so.data);
  sample_cmd->add_option("--index", so.index, "image index in the dataset")->capture_default_str();
  sample_cmd->add_option("--n", so.n, "number of samples")->capture_default_str();
  sample_cmd->add_option("--seed", so.seed)->capture_default_str();
  sample_cmd->add_option("--out", so.out, "JSON output path, - for stdout")->capture_default_str();

  EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "GED, -CLL and Dice on the test split");
  std::string eval_config;
  eval_cmd->add_option("--config", eval_config, "key = value file; command-line flags override it");
  eval_cmd->add_option("--checkpoint", ev.checkpoint);
  eval_cmd->add_option("--data", ev.data);
  eval_cmd->add_option("--n-samples", ev.eval.n_samples, "samples per image for GED and Dice")->capture_default_str();
  eval_cmd->add_option("--n-cll", ev.eval.n_cll, "prior samples per CLL estimate")->capture_default_str();
  eval_cmd->add_option("--seed", ev.eval.seed)->capture_default_str();
  eval_cmd->add_option("--mode", ev.mode, "all or single")->capture_default_str();
  eval_cmd->add_option("--model-id", ev.eval.model_id)->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "JSON report path, - for stdout")->capture_default_str();
  eval_cmd->add_option("--table", ev.table, "tab-separated summary path");

  CLI::App* check_cmd = app.add_subcommand("selfcheck", "run the numerical oracles");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      apply_config(gen_cmd, gen_config);
      require(gen.out, "--out");
      gen.ambiguity_given = ambiguity->count() > 0;
      return run_gen(gen);
    }
    if (*train_cmd) {
      apply_config(train_cmd, train_config);
      require(tr.data, "--data");
      require(tr.out, "--out");
      return run_train(tr);
    }
    if (*sample_cmd) {
      apply_config(sample_cmd, sample_config);
      require(so.checkpoint, "--checkpoint");
      require(so.data, "--data");
      return run_sample(so);
    }
    if (*eval_cmd) {
      apply_config(eval_cmd, eval_config);
      require(ev.checkpoint, "--checkpoint");
      require(ev.data, "--data");
      return run_eval(ev);
    }
    if (*check_cmd) return run_selfcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
