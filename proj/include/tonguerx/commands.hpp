#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tonguerx/augment.hpp"
#include "tonguerx/data.hpp"
#include "tonguerx/model.hpp"

namespace tonguerx::commands {

/// One run's effective settings. Loaded from a JSON config file; individual
/// command-line flags override single fields afterwards.
struct RunConfig {
  std::string manifest;
  std::string aliases;      // optional alias file: "alias<TAB>canonical" lines
  std::string rules;        // optional pair-rule table
  std::string topic_model;  // fitted topic model (produced by lda-fit)
  std::string doc_topics;   // per-document distributions CSV (lda-fit output)
  std::string checkpoint;   // trained network weights (produced by train)
  std::string out = "runs";

  std::string preset = "mini";       // paper | mini
  std::string variant = "2cnn-aux";  // 1cnn | 2cnn | 2cnn-aux

  std::size_t fold = 0;
  std::size_t fold_count = 5;
  std::size_t test_size = 500;
  double valid_fraction = 0.1;

  bool use_augment = false;
  bool self_test = false;  // eval: score ground truth against itself

  std::uint64_t seed = 0;

  model::TrainConfig train;

  std::size_t lda_topics = 16;
  double lda_alpha = 0.0;  // 0 resolves to the 50/m convention
  double lda_beta = 0.01;
  std::size_t lda_burnin = 200;
  std::size_t lda_sampling = 100;

  augment::AugmentConfig augment;
  std::size_t augment_batch = 64;
  std::size_t augment_rounds = 200;

  data::SynthConfig synth;

  std::vector<std::string> inputs;  // report: per-fold summary CSV paths
};

RunConfig load_config(const std::string& path);
std::string config_json(const RunConfig& config);

/// FNV-1a over the effective config serialization, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Creates (or reuses) `<out>/<command>-<hash>` and drops the effective
/// config inside; every command writes its outputs there.
std::string prepare_run_dir(const RunConfig& config, const std::string& command);

model::Variant variant_from_flag(const std::string& flag);

/// Each command returns the run directory it wrote to.
std::string cmd_lda_fit(const RunConfig& config);
std::string cmd_train(const RunConfig& config);
std::string cmd_eval(const RunConfig& config);
std::string cmd_synth(const RunConfig& config);
std::string cmd_augment(const RunConfig& config);
std::string cmd_stats(const RunConfig& config);
std::string cmd_report(const RunConfig& config);

}  // namespace tonguerx::commands
