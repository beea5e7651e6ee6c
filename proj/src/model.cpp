#include "tonguerx/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"
#include "tonguerx/binio.hpp"

namespace tonguerx::model {

namespace {

using json = nlohmann::json;

constexpr char kCheckpointMagic[5] = "RXF1";
constexpr std::uint32_t kCheckpointVersion = 1;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::SingleChannel: return "single";
    case Variant::DualChannel: return "dual";
    case Variant::DualChannelAux: return "dual_aux";
  }
  throw std::invalid_argument("unknown variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "single") return Variant::SingleChannel;
  if (name == "dual") return Variant::DualChannel;
  if (name == "dual_aux") return Variant::DualChannelAux;
  throw std::invalid_argument("unknown variant name '" + name + "'");
}

void ArchitectureSpec::validate() const {
  require(herb_count >= 1, "spec: herb count must be positive");
  require(conv_blocks >= 1, "spec: need at least one conv block");
  require(kernel_size >= 1 && kernel_size % 2 == 1,
          "spec: kernel size must be odd");
  require(main_kernels >= 1 && main_encode_width >= 1 && merge_width >= 1,
          "spec: widths must be positive");
  const std::size_t factor = std::size_t{1} << conv_blocks;
  require(height % factor == 0 && width % factor == 0 && height > 0 && width > 0,
          "spec: extents must divide by 2^convBlocks");
  require(dropout_main >= 0.0 && dropout_main < 1.0 && dropout_aux >= 0.0 &&
              dropout_aux < 1.0 && dropout_merge >= 0.0 && dropout_merge < 1.0,
          "spec: dropout rates must be in [0,1)");
  if (uses_aux_channel())
    require(aux_kernels >= 1 && aux_encode_width >= 1,
            "spec: auxiliary widths must be positive");
  if (has_topic_head())
    require(topic_count >= 1, "spec: topic head needs a topic count");
  else
    require(topic_count == 0, "spec: topic count only applies to dual_aux");
}

ArchitectureSpec ArchitectureSpec::paper_preset(Variant variant,
                                               std::size_t herbs,
                                               std::size_t topics) {
  ArchitectureSpec spec;
  spec.variant = variant;
  spec.herb_count = herbs;
  spec.topic_count = variant == Variant::DualChannelAux ? topics : 0;
  spec.validate();
  return spec;
}

ArchitectureSpec ArchitectureSpec::mini_preset(Variant variant,
                                              std::size_t herbs,
                                              std::size_t topics) {
  ArchitectureSpec spec;
  spec.variant = variant;
  spec.height = 32;
  spec.width = 32;
  spec.main_kernels = 8;
  spec.aux_kernels = 4;
  spec.main_encode_width = 32;
  spec.aux_encode_width = 16;
  spec.merge_width = 48;
  spec.herb_count = herbs;
  spec.topic_count = variant == Variant::DualChannelAux ? topics : 0;
  spec.validate();
  return spec;
}

namespace {

std::size_t pooled_extent(std::size_t extent, std::size_t blocks) {
  return extent >> blocks;
}

std::size_t flat_width(const ArchitectureSpec& spec, std::size_t kernels) {
  return pooled_extent(spec.height, spec.conv_blocks) *
         pooled_extent(spec.width, spec.conv_blocks) * kernels;
}

struct ParamPlan {
  std::string name;
  std::vector<std::size_t> shape;
  enum class Init { HeConv, HeDense, Glorot, One, Zero } init;
};

std::vector<ParamPlan> parameter_plan(const ArchitectureSpec& spec) {
  spec.validate();
  std::vector<ParamPlan> plan;
  auto conv_channel = [&](const std::string& prefix, std::size_t kernels) {
    std::size_t cin = 3;
    for (std::size_t b = 1; b <= spec.conv_blocks; ++b) {
      const std::string base = prefix + ".block" + std::to_string(b);
      plan.push_back({base + ".kernel",
                      {spec.kernel_size, spec.kernel_size, cin, kernels},
                      ParamPlan::Init::HeConv});
      plan.push_back({base + ".bias", {kernels}, ParamPlan::Init::Zero});
      plan.push_back({base + ".gamma", {kernels}, ParamPlan::Init::One});
      plan.push_back({base + ".beta", {kernels}, ParamPlan::Init::Zero});
      cin = kernels;
    }
  };

  conv_channel("main", spec.main_kernels);
  if (spec.uses_aux_channel()) conv_channel("aux", spec.aux_kernels);

  plan.push_back({"main.encode.weight",
                  {flat_width(spec, spec.main_kernels), spec.main_encode_width},
                  ParamPlan::Init::HeDense});
  plan.push_back(
      {"main.encode.bias", {spec.main_encode_width}, ParamPlan::Init::Zero});
  if (spec.uses_aux_channel()) {
    plan.push_back({"aux.encode.weight",
                    {flat_width(spec, spec.aux_kernels), spec.aux_encode_width},
                    ParamPlan::Init::HeDense});
    plan.push_back(
        {"aux.encode.bias", {spec.aux_encode_width}, ParamPlan::Init::Zero});
  }

  const std::size_t merge_in =
      spec.uses_aux_channel() ? spec.main_encode_width + spec.aux_encode_width
                              : spec.main_encode_width;
  plan.push_back({"merge.weight", {merge_in, spec.merge_width},
                  ParamPlan::Init::HeDense});
  plan.push_back({"merge.bias", {spec.merge_width}, ParamPlan::Init::Zero});
  plan.push_back({"herbs.weight", {spec.merge_width, spec.herb_count},
                  ParamPlan::Init::Glorot});
  plan.push_back({"herbs.bias", {spec.herb_count}, ParamPlan::Init::Zero});
  if (spec.has_topic_head()) {
    plan.push_back({"topics.weight", {spec.aux_encode_width, spec.topic_count},
                    ParamPlan::Init::Glorot});
    plan.push_back({"topics.bias", {spec.topic_count}, ParamPlan::Init::Zero});
  }
  return plan;
}

std::vector<std::pair<std::string, std::size_t>> state_plan(
    const ArchitectureSpec& spec) {
  std::vector<std::pair<std::string, std::size_t>> plan;
  for (std::size_t b = 1; b <= spec.conv_blocks; ++b)
    plan.emplace_back("main.block" + std::to_string(b), spec.main_kernels);
  if (spec.uses_aux_channel())
    for (std::size_t b = 1; b <= spec.conv_blocks; ++b)
      plan.emplace_back("aux.block" + std::to_string(b), spec.aux_kernels);
  return plan;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_shapes(
    const ArchitectureSpec& spec) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  for (const ParamPlan& p : parameter_plan(spec))
    shapes.emplace_back(p.name, p.shape);
  return shapes;
}

std::size_t Model::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return i;
  throw std::invalid_argument("model: no parameter named '" + name + "'");
}

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  Model model;
  model.spec = spec;
  Rng rng(seed);
  for (const ParamPlan& p : parameter_plan(spec)) {
    Tensor t(p.shape);
    switch (p.init) {
      case ParamPlan::Init::HeConv: {
        const double fan_in = static_cast<double>(
            p.shape[0] * p.shape[1] * p.shape[2]);
        const double scale = std::sqrt(2.0 / fan_in);
        for (double& v : t.data) v = rng.normal() * scale;
        break;
      }
      case ParamPlan::Init::HeDense: {
        const double scale = std::sqrt(2.0 / static_cast<double>(p.shape[0]));
        for (double& v : t.data) v = rng.normal() * scale;
        break;
      }
      case ParamPlan::Init::Glorot: {
        const double scale = std::sqrt(
            2.0 / static_cast<double>(p.shape[0] + p.shape[1]));
        for (double& v : t.data) v = rng.normal() * scale;
        break;
      }
      case ParamPlan::Init::One:
        for (double& v : t.data) v = 1.0;
        break;
      case ParamPlan::Init::Zero:
        break;
    }
    model.param_names.push_back(p.name);
    model.params.push_back(std::move(t));
  }
  for (const auto& [name, channels] : state_plan(spec)) {
    model.state_names.push_back(name);
    model.bn_states.emplace_back(channels);
  }
  return model;
}

ForwardResult forward(Model& model, const Tensor& batch, Mode mode, Rng* rng) {
  const ArchitectureSpec& spec = model.spec;
  require(batch.rank() == 4 && batch.shape[1] == spec.height &&
              batch.shape[2] == spec.width && batch.shape[3] == 3,
          "forward: batch extents do not match the architecture");
  require(batch.shape[0] >= 1, "forward: empty batch");
  if (mode == Mode::Train) {
    require(rng != nullptr, "forward: train mode needs an RNG for dropout");
    require(batch.shape[0] >= 2,
            "forward: train mode needs at least two samples for batchnorm");
  }
  for (double v : batch.data)
    require(v >= 0.0 && v <= 1.0 + 1e-9,
            "forward: pixels must be scaled to [0,1]");

  ForwardResult result;
  result.tape = std::make_shared<Tape>();
  Tape& tape = *result.tape;
  Rng idle(0);
  Rng& drop_rng = mode == Mode::Train ? *rng : idle;

  const bool track = mode == Mode::Train;
  for (const Tensor& p : model.params)
    result.param_nodes.push_back(tape.leaf(p, track));
  const NodeId input = tape.leaf(batch, false);

  std::size_t bn_cursor = 0;
  auto conv_channel = [&](const std::string& prefix) {
    NodeId x = input;
    for (std::size_t b = 1; b <= spec.conv_blocks; ++b) {
      const std::string base = prefix + ".block" + std::to_string(b);
      const NodeId k = result.param_nodes[model.param_index(base + ".kernel")];
      const NodeId bias = result.param_nodes[model.param_index(base + ".bias")];
      const NodeId gamma =
          result.param_nodes[model.param_index(base + ".gamma")];
      const NodeId beta = result.param_nodes[model.param_index(base + ".beta")];
      x = tape.conv2d(x, k, bias);
      x = tape.batchnorm2d(x, gamma, beta, model.bn_states[bn_cursor++], mode);
      x = tape.relu(x);
      x = tape.maxpool2(x);
    }
    return x;
  };

  auto encode = [&](NodeId features, const std::string& prefix, double rate) {
    const NodeId w = result.param_nodes[model.param_index(prefix + ".weight")];
    const NodeId b = result.param_nodes[model.param_index(prefix + ".bias")];
    NodeId x = tape.relu(tape.dense(tape.flatten(features), w, b));
    return tape.dropout(x, rate, drop_rng, mode);
  };

  NodeId f_main = encode(conv_channel("main"), "main.encode", spec.dropout_main);
  NodeId f_aux = 0;
  NodeId merged_in = f_main;
  if (spec.uses_aux_channel()) {
    f_aux = encode(conv_channel("aux"), "aux.encode", spec.dropout_aux);
    merged_in = tape.concat(f_main, f_aux);
  }

  const NodeId w_o = result.param_nodes[model.param_index("merge.weight")];
  const NodeId b_o = result.param_nodes[model.param_index("merge.bias")];
  NodeId f_z = tape.relu(tape.dense(merged_in, w_o, b_o));
  f_z = tape.dropout(f_z, spec.dropout_merge, drop_rng, mode);

  const NodeId w_z = result.param_nodes[model.param_index("herbs.weight")];
  const NodeId b_z = result.param_nodes[model.param_index("herbs.bias")];
  result.herb_node = tape.sigmoid(tape.dense(f_z, w_z, b_z));

  if (spec.has_topic_head()) {
    const NodeId w_t = result.param_nodes[model.param_index("topics.weight")];
    const NodeId b_t = result.param_nodes[model.param_index("topics.bias")];
    result.topic_node = tape.softmax(tape.dense(f_aux, w_t, b_t));
  }
  return result;
}

double loss_main(const Tensor& herb_probs, const Tensor& labels) {
  Tape tape;
  return tape.scalar_value(tape.bce_mean(tape.leaf(herb_probs), labels));
}

double loss_aux(const Tensor& topic_probs, const Tensor& topic_gt) {
  Tape tape;
  return tape.scalar_value(tape.kl_mean(tape.leaf(topic_probs), topic_gt));
}

double loss_total(double main_loss, double aux_loss, double lambda) {
  require(lambda >= 0.0, "loss: lambda must be non-negative");
  return main_loss + lambda * aux_loss;
}

void TrainConfig::validate() const {
  require(lambda >= 0.0, "train config: lambda must be non-negative");
  require(threshold > 0.0 && threshold < 1.0,
          "train config: threshold must lie in (0,1)");
  require(learning_rate > 0.0, "train config: learning rate must be positive");
  require(batch_size >= 2, "train config: batch size must be at least 2");
  require(epochs >= 1, "train config: need at least one epoch");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 &&
              adam_beta2 < 1.0 && adam_epsilon > 0.0,
          "train config: optimizer settings out of range");
}

namespace {

void check_dataset(const Dataset& set, const ArchitectureSpec& spec,
                   const char* which) {
  require(set.size() >= 1, std::string("train: empty ") + which + " set");
  require(set.labels.size() == set.size(),
          std::string("train: ") + which + " labels/images mismatch");
  if (spec.has_topic_head())
    require(set.topic_gt.size() == set.size(),
            std::string("train: ") + which +
                " set lacks topic ground truth for the topic head");
  for (std::size_t i = 0; i < set.size(); ++i) {
    require(set.images[i].rank() == 3 && set.images[i].shape[0] == spec.height &&
                set.images[i].shape[1] == spec.width &&
                set.images[i].shape[2] == 3,
            std::string("train: ") + which + " image extents mismatch");
    require(set.labels[i].size() == spec.herb_count,
            std::string("train: ") + which + " label width mismatch");
    if (spec.has_topic_head())
      require(set.topic_gt[i].size() == spec.topic_count,
              std::string("train: ") + which + " topic width mismatch");
  }
}

struct BatchTensors {
  Tensor images;
  Tensor labels;
  Tensor topic_gt;
};

BatchTensors gather(const Dataset& set, const std::vector<std::size_t>& order,
                    std::size_t begin, std::size_t end,
                    const ArchitectureSpec& spec) {
  const std::size_t count = end - begin;
  BatchTensors batch;
  batch.images = Tensor({count, spec.height, spec.width, 3});
  batch.labels = Tensor({count, spec.herb_count});
  if (spec.has_topic_head())
    batch.topic_gt = Tensor({count, spec.topic_count});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order[begin + i];
    const Tensor& image = set.images[src];
    std::copy(image.data.begin(), image.data.end(),
              batch.images.data.begin() +
                  static_cast<std::ptrdiff_t>(i * image.size()));
    for (std::size_t j = 0; j < spec.herb_count; ++j)
      batch.labels.at2(i, j) = set.labels[src][j];
    if (spec.has_topic_head())
      for (std::size_t j = 0; j < spec.topic_count; ++j)
        batch.topic_gt.at2(i, j) = set.topic_gt[src][j];
  }
  return batch;
}

struct LossValues {
  double main = 0.0;
  double aux = 0.0;
  double total = 0.0;
};

}  // namespace

TrainResult train(Model& model, const Dataset& train_set,
                  const Dataset& valid_set, const TrainConfig& config) {
  config.validate();
  model.spec.validate();
  check_dataset(train_set, model.spec, "train");
  check_dataset(valid_set, model.spec, "validation");
  require(train_set.size() >= 2, "train: need at least two training samples");

  const ArchitectureSpec& spec = model.spec;
  const bool aux_head = spec.has_topic_head();
  Rng rng(config.seed);

  std::vector<Tensor> adam_m, adam_v;
  for (const Tensor& p : model.params) {
    adam_m.emplace_back(Tensor::zeros(p.shape));
    adam_v.emplace_back(Tensor::zeros(p.shape));
  }
  std::uint64_t step = 0;

  auto run_batches = [&](const Dataset& set, bool training,
                         const std::vector<std::size_t>& order) {
    LossValues sums;
    std::size_t done = 0;
    while (done < order.size()) {
      std::size_t count = std::min(config.batch_size, order.size() - done);
      if (training && count < 2) break;  // batchnorm needs two; remainder skipped
      BatchTensors batch = gather(set, order, done, done + count, spec);
      done += count;

      ForwardResult fwd = forward(model, batch.images,
                                  training ? Mode::Train : Mode::Infer, &rng);
      Tape& tape = *fwd.tape;
      const NodeId main_node = tape.bce_mean(fwd.herb_node, batch.labels);
      NodeId total_node = main_node;
      double aux_value = 0.0;
      if (aux_head) {
        const NodeId aux_node = tape.kl_mean(fwd.topic_node, batch.topic_gt);
        aux_value = tape.scalar_value(aux_node);
        total_node = tape.add_scaled(main_node, aux_node, config.lambda);
      }
      const double main_value = tape.scalar_value(main_node);
      const double total_value = tape.scalar_value(total_node);
      if (!std::isfinite(total_value))
        throw std::runtime_error(
            "train: non-finite loss (main " + std::to_string(main_value) +
            ", aux " + std::to_string(aux_value) + ") at step " +
            std::to_string(step));

      const double weight = static_cast<double>(count);
      sums.main += main_value * weight;
      sums.aux += aux_value * weight;
      sums.total += total_value * weight;

      if (training) {
        GradientSet grads = tape.backward(total_node);
        ++step;
        const double correction1 =
            1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
        const double correction2 =
            1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < model.params.size(); ++i) {
          Tensor& p = model.params[i];
          const Tensor& g = grads.grads[i];
          Tensor& m = adam_m[i];
          Tensor& v = adam_v[i];
          for (std::size_t j = 0; j < p.size(); ++j) {
            m.data[j] = config.adam_beta1 * m.data[j] +
                        (1.0 - config.adam_beta1) * g.data[j];
            v.data[j] = config.adam_beta2 * v.data[j] +
                        (1.0 - config.adam_beta2) * g.data[j] * g.data[j];
            const double m_hat = m.data[j] / correction1;
            const double v_hat = v.data[j] / correction2;
            p.data[j] -= config.learning_rate * m_hat /
                         (std::sqrt(v_hat) + config.adam_epsilon);
          }
        }
      }
    }
    const double n = static_cast<double>(done);
    sums.main /= n;
    sums.aux /= n;
    sums.total /= n;
    return sums;
  };

  std::vector<std::size_t> train_order(train_set.size());
  for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;
  std::vector<std::size_t> valid_order(valid_set.size());
  for (std::size_t i = 0; i < valid_order.size(); ++i) valid_order[i] = i;

  TrainResult result;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = model.params;
  std::vector<BatchNormState> best_bn = model.bn_states;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train_order);
    LossValues train_losses = run_batches(train_set, true, train_order);
    LossValues valid_losses = run_batches(valid_set, false, valid_order);

    EpochStats stats;
    stats.train_main = train_losses.main;
    stats.train_aux = train_losses.aux;
    stats.train_total = train_losses.total;
    stats.valid_main = valid_losses.main;
    stats.valid_aux = valid_losses.aux;
    stats.valid_total = valid_losses.total;
    result.history.push_back(stats);

    if (valid_losses.total < best_valid) {
      best_valid = valid_losses.total;
      best_params = model.params;
      best_bn = model.bn_states;
      result.best_epoch = result.history.size() - 1;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (config.early_stopping_patience > 0 &&
          since_improvement >= config.early_stopping_patience)
        break;
    }
  }

  model.params = std::move(best_params);
  model.bn_states = std::move(best_bn);
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,train_main,train_aux,train_total,valid_main,valid_aux,"
         "valid_total\n";
  out.precision(17);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const EpochStats& s = history[i];
    out << (i + 1) << ',' << s.train_main << ',' << s.train_aux << ','
        << s.train_total << ',' << s.valid_main << ',' << s.valid_aux << ','
        << s.valid_total << '\n';
  }
  return out.str();
}

PrescriptionPrediction predict_prescription(const std::vector<double>& probs,
                                            double threshold) {
  require(threshold > 0.0 && threshold < 1.0,
          "predict: threshold must lie in (0,1)");
  PrescriptionPrediction prediction;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] >= threshold) prediction.herbs.push_back(i);
  prediction.empty_warning = prediction.herbs.empty();
  return prediction;
}

namespace {

json spec_to_json(const ArchitectureSpec& spec) {
  return json{{"variant", variant_name(spec.variant)},
              {"height", spec.height},
              {"width", spec.width},
              {"kernel_size", spec.kernel_size},
              {"conv_blocks", spec.conv_blocks},
              {"main_kernels", spec.main_kernels},
              {"aux_kernels", spec.aux_kernels},
              {"main_encode_width", spec.main_encode_width},
              {"aux_encode_width", spec.aux_encode_width},
              {"merge_width", spec.merge_width},
              {"dropout_main", spec.dropout_main},
              {"dropout_aux", spec.dropout_aux},
              {"dropout_merge", spec.dropout_merge},
              {"herb_count", spec.herb_count},
              {"topic_count", spec.topic_count}};
}

ArchitectureSpec spec_from_json(const json& j) {
  ArchitectureSpec spec;
  spec.variant = variant_from_name(j.at("variant").get<std::string>());
  spec.height = j.at("height").get<std::size_t>();
  spec.width = j.at("width").get<std::size_t>();
  spec.kernel_size = j.at("kernel_size").get<std::size_t>();
  spec.conv_blocks = j.at("conv_blocks").get<std::size_t>();
  spec.main_kernels = j.at("main_kernels").get<std::size_t>();
  spec.aux_kernels = j.at("aux_kernels").get<std::size_t>();
  spec.main_encode_width = j.at("main_encode_width").get<std::size_t>();
  spec.aux_encode_width = j.at("aux_encode_width").get<std::size_t>();
  spec.merge_width = j.at("merge_width").get<std::size_t>();
  spec.dropout_main = j.at("dropout_main").get<double>();
  spec.dropout_aux = j.at("dropout_aux").get<double>();
  spec.dropout_merge = j.at("dropout_merge").get<double>();
  spec.herb_count = j.at("herb_count").get<std::size_t>();
  spec.topic_count = j.at("topic_count").get<std::size_t>();
  return spec;
}

bool same_spec(const ArchitectureSpec& a, const ArchitectureSpec& b) {
  return a.variant == b.variant && a.height == b.height && a.width == b.width &&
         a.kernel_size == b.kernel_size && a.conv_blocks == b.conv_blocks &&
         a.main_kernels == b.main_kernels && a.aux_kernels == b.aux_kernels &&
         a.main_encode_width == b.main_encode_width &&
         a.aux_encode_width == b.aux_encode_width &&
         a.merge_width == b.merge_width && a.dropout_main == b.dropout_main &&
         a.dropout_aux == b.dropout_aux && a.dropout_merge == b.dropout_merge &&
         a.herb_count == b.herb_count && a.topic_count == b.topic_count;
}

void write_tensor_payload(std::ostream& os, const Tensor& t) {
  for (double v : t.data) binio::put_f64(os, v);
}

Tensor read_tensor_payload(std::istream& is,
                           const std::vector<std::size_t>& shape) {
  Tensor t(shape);
  for (double& v : t.data) v = binio::get_f64(is);
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const Model& model = checkpoint.model;
  json meta;
  meta["spec"] = spec_to_json(model.spec);
  meta["epoch"] = checkpoint.epoch;
  meta["vocab_hash"] = checkpoint.vocab_hash;
  json params = json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i)
    params.push_back(
        {{"name", model.param_names[i]}, {"shape", model.params[i].shape}});
  meta["params"] = params;
  json states = json::array();
  for (std::size_t i = 0; i < model.bn_states.size(); ++i)
    states.push_back({{"name", model.state_names[i]},
                      {"channels", model.bn_states[i].running_mean.size()}});
  meta["state"] = states;
  meta["optimizer"] = {{"present", checkpoint.has_optimizer},
                       {"step", checkpoint.adam_step}};
  meta["rng"] = checkpoint.rng_state;
  const std::string meta_text = meta.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  binio::put_magic(os, kCheckpointMagic);
  binio::put_u32(os, kCheckpointVersion);
  binio::put_u64(os, meta_text.size());
  os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  for (const Tensor& p : model.params) write_tensor_payload(os, p);
  for (const BatchNormState& state : model.bn_states) {
    write_tensor_payload(os, state.running_mean);
    write_tensor_payload(os, state.running_var);
  }
  if (checkpoint.has_optimizer) {
    for (const Tensor& t : checkpoint.adam_m) write_tensor_payload(os, t);
    for (const Tensor& t : checkpoint.adam_v) write_tensor_payload(os, t);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path,
                           const ArchitectureSpec* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
  binio::expect_magic(is, kCheckpointMagic, "checkpoint: bad format");
  const std::uint32_t version = binio::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version mismatch");
  const std::uint64_t meta_size = binio::get_u64(is);
  std::string meta_text(meta_size, '\0');
  is.read(meta_text.data(), static_cast<std::streamsize>(meta_size));
  if (!is) throw std::runtime_error("checkpoint: truncated metadata");

  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::parse_error&) {
    throw std::runtime_error("checkpoint: bad format (metadata)");
  }

  Checkpoint checkpoint;
  checkpoint.model.spec = spec_from_json(meta.at("spec"));
  checkpoint.model.spec.validate();
  if (expected != nullptr && !same_spec(*expected, checkpoint.model.spec))
    throw std::runtime_error("checkpoint: spec mismatch");
  checkpoint.epoch = meta.at("epoch").get<std::size_t>();
  checkpoint.vocab_hash = meta.value("vocab_hash", std::uint64_t{0});
  checkpoint.rng_state = meta.value("rng", std::string{});

  const auto expected_shapes = parameter_shapes(checkpoint.model.spec);
  const json& params = meta.at("params");
  if (params.size() != expected_shapes.size())
    throw std::runtime_error("checkpoint: shape mismatch (parameter count)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = params[i].at("name").get<std::string>();
    const auto shape = params[i].at("shape").get<std::vector<std::size_t>>();
    if (name != expected_shapes[i].first || shape != expected_shapes[i].second)
      throw std::runtime_error("checkpoint: shape mismatch at '" + name + "'");
  }
  for (const auto& [name, shape] : expected_shapes) {
    checkpoint.model.param_names.push_back(name);
    checkpoint.model.params.push_back(read_tensor_payload(is, shape));
  }
  const auto states = state_plan(checkpoint.model.spec);
  const json& state_meta = meta.at("state");
  if (state_meta.size() != states.size())
    throw std::runtime_error("checkpoint: shape mismatch (state count)");
  for (const auto& [name, channels] : states) {
    checkpoint.model.state_names.push_back(name);
    BatchNormState state(channels);
    state.running_mean = read_tensor_payload(is, {channels});
    state.running_var = read_tensor_payload(is, {channels});
    checkpoint.model.bn_states.push_back(std::move(state));
  }
  checkpoint.has_optimizer = meta.at("optimizer").at("present").get<bool>();
  checkpoint.adam_step = meta.at("optimizer").at("step").get<std::uint64_t>();
  if (checkpoint.has_optimizer) {
    for (const auto& [name, shape] : expected_shapes) {
      (void)name;
      checkpoint.adam_m.push_back(read_tensor_payload(is, shape));
    }
    for (const auto& [name, shape] : expected_shapes) {
      (void)name;
      checkpoint.adam_v.push_back(read_tensor_payload(is, shape));
    }
  }
  if (!is) throw std::runtime_error("checkpoint: truncated payload");
  return checkpoint;
}

}  // namespace tonguerx::model
