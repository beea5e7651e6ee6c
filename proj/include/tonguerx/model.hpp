#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tonguerx/autodiff.hpp"
#include "tonguerx/rng.hpp"
#include "tonguerx/tensor.hpp"

namespace tonguerx::model {

enum class Variant { SingleChannel, DualChannel, DualChannelAux };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ArchitectureSpec {
  Variant variant = Variant::DualChannelAux;
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t kernel_size = 3;
  std::size_t conv_blocks = 3;
  std::size_t main_kernels = 80;
  std::size_t aux_kernels = 40;
  std::size_t main_encode_width = 160;
  std::size_t aux_encode_width = 80;
  std::size_t merge_width = 256;
  double dropout_main = 0.5;
  double dropout_aux = 0.5;
  double dropout_merge = 0.6;
  std::size_t herb_count = 0;
  std::size_t topic_count = 0;  // DualChannelAux only

  void validate() const;
  bool uses_aux_channel() const { return variant != Variant::SingleChannel; }
  bool has_topic_head() const { return variant == Variant::DualChannelAux; }

  /// Full-scale layout: 224x224, 80/40 kernels, widths 160/80/256.
  static ArchitectureSpec paper_preset(Variant variant, std::size_t herbs,
                                       std::size_t topics = 0);
  /// Desk-scale layout: 32x32, 8/4 kernels, widths 32/16/48.
  static ArchitectureSpec mini_preset(Variant variant, std::size_t herbs,
                                      std::size_t topics = 0);
};

/// Parameters and batchnorm running statistics, in a fixed creation order
/// (auxiliary topic head last, so variants share a common prefix under the
/// same seed).
struct Model {
  ArchitectureSpec spec;
  std::vector<std::string> param_names;
  std::vector<Tensor> params;
  std::vector<std::string> state_names;  // batchnorm running stats
  std::vector<BatchNormState> bn_states;

  std::size_t param_index(const std::string& name) const;
};

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed);

/// Expected parameter shapes in creation order, derived from the spec alone.
std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_shapes(
    const ArchitectureSpec& spec);

struct ForwardResult {
  std::shared_ptr<Tape> tape;
  NodeId herb_node = 0;
  NodeId topic_node = 0;  // valid only when the spec has a topic head
  std::vector<NodeId> param_nodes;

  const Tensor& herb_probs() const { return tape->value(herb_node); }
  const Tensor& topic_probs() const { return tape->value(topic_node); }
};

/// Runs the network on [N,H,W,3] pixels already scaled to [0,1]. Train mode
/// draws dropout masks from `rng` and updates batchnorm running statistics.
ForwardResult forward(Model& model, const Tensor& batch, Mode mode, Rng* rng);

/// Mean binary cross-entropy between per-herb probabilities and 0/1 labels.
double loss_main(const Tensor& herb_probs, const Tensor& labels);
/// Batch mean of the per-row topic divergence (1/m) sum p log(p/g).
double loss_aux(const Tensor& topic_probs, const Tensor& topic_gt);
double loss_total(double main_loss, double aux_loss, double lambda);

struct TrainConfig {
  double lambda = 0.5;
  double threshold = 0.5;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  std::size_t early_stopping_patience = 0;  // 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// Model-facing dataset view: images scaled to [0,1], n-hot labels, and an
/// optional per-sample topic distribution.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<double>> topic_gt;

  std::size_t size() const { return images.size(); }
};

struct EpochStats {
  double train_main = 0.0;
  double train_aux = 0.0;
  double train_total = 0.0;
  double valid_main = 0.0;
  double valid_aux = 0.0;
  double valid_total = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // index into history
};

/// Minibatch Adam training; the model keeps the parameters of the epoch with
/// the smallest validation total loss. A non-finite loss aborts.
TrainResult train(Model& model, const Dataset& train_set,
                  const Dataset& valid_set, const TrainConfig& config);

std::string history_csv(const std::vector<EpochStats>& history);

struct PrescriptionPrediction {
  std::vector<std::size_t> herbs;
  bool empty_warning = false;
};

/// Herbs whose probability reaches the threshold.
PrescriptionPrediction predict_prescription(const std::vector<double>& probs,
                                            double threshold);

struct Checkpoint {
  Model model;
  std::size_t epoch = 0;
  std::uint64_t vocab_hash = 0;  // herb dictionary the label order came from
  bool has_optimizer = false;
  std::vector<Tensor> adam_m;
  std::vector<Tensor> adam_v;
  std::uint64_t adam_step = 0;
  std::string rng_state;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);

/// Loads and validates a checkpoint; when `expected` is given, the embedded
/// architecture must match it exactly.
Checkpoint load_checkpoint(const std::string& path,
                           const ArchitectureSpec* expected = nullptr);

}  // namespace tonguerx::model
