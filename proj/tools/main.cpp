#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tonguerx/commands.hpp"

namespace cmds = tonguerx::commands;

namespace {

struct FlagState {
  std::string config_path;
  std::string manifest, aliases, rules, topic_model, doc_topics, checkpoint;
  std::string out, preset, variant;
  std::uint64_t seed = 0;
  std::size_t fold = 0, fold_count = 0, test_size = 0;
  double valid_fraction = 0.0;
  bool augment = false, self_test = false;
  std::size_t epochs = 0, batch = 0, lda_topics = 0;
  double lambda = 0.0, threshold = 0.0;
  std::vector<std::string> inputs;
};

using OptionMap = std::map<std::string, CLI::Option*>;

OptionMap add_common(CLI::App* cmd, FlagState& st) {
  OptionMap m;
  m["config"] = cmd->add_option("--config", st.config_path,
                                "JSON config file; flags override its fields");
  m["seed"] = cmd->add_option("--seed", st.seed, "run seed");
  m["out"] = cmd->add_option("--out", st.out, "parent directory for run dirs");
  m["fold"] = cmd->add_option("--fold", st.fold, "fold index");
  m["fold_count"] = cmd->add_option("--folds", st.fold_count, "fold count");
  m["test_size"] =
      cmd->add_option("--test-size", st.test_size, "held-out ids per fold");
  m["valid_fraction"] = cmd->add_option("--valid-fraction", st.valid_fraction,
                                        "share of train ids held for "
                                        "validation");
  m["variant"] = cmd->add_option("--variant", st.variant, "network variant")
                     ->check(CLI::IsMember({"1cnn", "2cnn", "2cnn-aux"}));
  m["preset"] = cmd->add_option("--preset", st.preset, "size preset")
                    ->check(CLI::IsMember({"paper", "mini"}));
  m["augment"] =
      cmd->add_flag("--augment", st.augment, "grow the training pool with "
                                             "affine-distorted copies");
  m["self_test"] = cmd->add_flag("--self-test", st.self_test,
                                 "score ground truth against itself");
  m["manifest"] = cmd->add_option("--manifest", st.manifest, "dataset TSV");
  m["aliases"] = cmd->add_option("--aliases", st.aliases, "herb alias file");
  m["rules"] = cmd->add_option("--rules", st.rules, "pair-rule table");
  m["topic_model"] =
      cmd->add_option("--topic-model", st.topic_model, "fitted topic model");
  m["doc_topics"] = cmd->add_option("--doc-topics", st.doc_topics,
                                    "per-document distributions CSV");
  m["checkpoint"] =
      cmd->add_option("--checkpoint", st.checkpoint, "trained weights");
  m["epochs"] = cmd->add_option("--epochs", st.epochs, "training epochs");
  m["batch"] = cmd->add_option("--batch", st.batch, "batch size");
  m["lambda"] =
      cmd->add_option("--lambda", st.lambda, "topic-loss weight");
  m["threshold"] =
      cmd->add_option("--threshold", st.threshold, "herb decision threshold");
  m["lda_topics"] = cmd->add_option("--topics", st.lda_topics, "topic count");
  return m;
}

cmds::RunConfig assemble(const FlagState& st, const OptionMap& m) {
  cmds::RunConfig config;
  if (m.at("config")->count()) config = cmds::load_config(st.config_path);
  auto set = [&](const char* key, auto&& apply) {
    if (m.at(key)->count()) apply();
  };
  set("manifest", [&] { config.manifest = st.manifest; });
  set("aliases", [&] { config.aliases = st.aliases; });
  set("rules", [&] { config.rules = st.rules; });
  set("topic_model", [&] { config.topic_model = st.topic_model; });
  set("doc_topics", [&] { config.doc_topics = st.doc_topics; });
  set("checkpoint", [&] { config.checkpoint = st.checkpoint; });
  set("out", [&] { config.out = st.out; });
  set("preset", [&] { config.preset = st.preset; });
  set("variant", [&] { config.variant = st.variant; });
  set("seed", [&] { config.seed = st.seed; });
  set("fold", [&] { config.fold = st.fold; });
  set("fold_count", [&] { config.fold_count = st.fold_count; });
  set("test_size", [&] { config.test_size = st.test_size; });
  set("valid_fraction", [&] { config.valid_fraction = st.valid_fraction; });
  set("augment", [&] { config.use_augment = st.augment; });
  set("self_test", [&] { config.self_test = st.self_test; });
  set("epochs", [&] { config.train.epochs = st.epochs; });
  set("batch", [&] { config.train.batch_size = st.batch; });
  set("lambda", [&] { config.train.lambda = st.lambda; });
  set("threshold", [&] { config.train.threshold = st.threshold; });
  set("lda_topics", [&] { config.lda_topics = st.lda_topics; });
  if (!st.inputs.empty()) config.inputs = st.inputs;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tongue-image prescription pipeline"};
  app.require_subcommand(1);

  FlagState st;
  const std::map<std::string,
                 std::function<std::string(const cmds::RunConfig&)>>
      dispatch = {
          {"lda-fit", cmds::cmd_lda_fit}, {"train", cmds::cmd_train},
          {"eval", cmds::cmd_eval},       {"synth", cmds::cmd_synth},
          {"augment", cmds::cmd_augment}, {"stats", cmds::cmd_stats},
          {"report", cmds::cmd_report},
      };
  const std::map<std::string, std::string> about = {
      {"lda-fit", "fit the herb topic model on one fold's training split"},
      {"train", "train a prescription network on one fold"},
      {"eval", "score a checkpoint on one fold's held-out split"},
      {"synth", "generate a synthetic image/prescription dataset"},
      {"augment", "write affine-distorted copies of a dataset"},
      {"stats", "summarize a dataset manifest"},
      {"report", "pool per-fold summaries into one table"},
  };

  std::map<std::string, CLI::App*> subs;
  std::map<std::string, OptionMap> opts;
  for (const auto& [name, fn] : dispatch) {
    CLI::App* cmd = app.add_subcommand(name, about.at(name));
    opts[name] = add_common(cmd, st);
    if (name == "report")
      cmd->add_option("inputs", st.inputs, "per-fold summary CSV files");
    subs[name] = cmd;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const cmds::RunConfig config = assemble(st, opts.at(name));
    const std::string dir = dispatch.at(name)(config);
    std::cout << dir << '\n';
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
