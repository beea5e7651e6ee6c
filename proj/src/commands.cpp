#include "tonguerx/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"
#include "tonguerx/image_io.hpp"
#include "tonguerx/metrics.hpp"

namespace tonguerx::commands {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void fail_config(const std::string& msg) { throw std::invalid_argument(msg); }

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      fail_config("config: unknown field '" + where + key + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream out;
  out << is.rdbuf();
  return out.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct World {
  std::vector<data::ManifestRow> rows;
  lda::HerbVocabulary vocab;
  std::vector<lda::Prescription> prescriptions;
};

std::vector<std::pair<std::string, std::string>> load_aliases(
    const std::string& path) {
  std::vector<std::pair<std::string, std::string>> aliases;
  if (path.empty()) return aliases;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("aliases: cannot read " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      fail_config("aliases line " + std::to_string(lineno) +
                  ": expected 'alias<TAB>canonical'");
    aliases.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return aliases;
}

World load_world(const RunConfig& config) {
  if (config.manifest.empty()) fail_config("config: 'manifest' is required");
  World world;
  world.rows = data::read_manifest(config.manifest);
  std::vector<std::vector<std::string>> raw;
  for (const data::ManifestRow& row : world.rows) raw.push_back(row.herbs);
  world.vocab = lda::build_vocabulary(raw, load_aliases(config.aliases));
  for (const data::ManifestRow& row : world.rows) {
    std::set<std::size_t> ids;
    for (const std::string& herb : row.herbs)
      ids.insert(world.vocab.id_of(herb));
    world.prescriptions.emplace_back(ids.begin(), ids.end());
  }
  return world;
}

std::pair<std::size_t, std::size_t> preset_extents(const std::string& preset) {
  if (preset == "paper") return {224, 224};
  if (preset == "mini") return {32, 32};
  fail_config("config: unknown preset '" + preset + "'");
  return {};
}

model::ArchitectureSpec build_spec(const RunConfig& config, std::size_t herbs,
                                   std::size_t topics) {
  const model::Variant variant = variant_from_flag(config.variant);
  if (config.preset == "paper")
    return model::ArchitectureSpec::paper_preset(variant, herbs, topics);
  if (config.preset == "mini")
    return model::ArchitectureSpec::mini_preset(variant, herbs, topics);
  fail_config("config: unknown preset '" + config.preset + "'");
  return {};
}

data::FoldSplit fold_of(const RunConfig& config, std::size_t count) {
  if (config.fold >= config.fold_count)
    fail_config("config: fold index " + std::to_string(config.fold) +
                " out of range for " + std::to_string(config.fold_count) +
                " folds");
  auto splits = data::make_folds(count, config.fold_count, config.test_size,
                                 config.valid_fraction, config.seed);
  return splits[config.fold];
}

lda::TopicModel require_topic_model(const RunConfig& config,
                                    const lda::HerbVocabulary& vocab,
                                    const char* consumer) {
  if (config.topic_model.empty())
    fail_config(std::string("config: '") + consumer +
                "' needs a fitted topic model; run lda-fit first and pass its "
                "topic_model.bin as 'topic_model'");
  lda::TopicModel model = lda::load_topic_model(config.topic_model);
  if (model.vocab_hash != vocab.hash())
    fail_config("topic model was fitted against a different herb dictionary "
                "(vocabulary hash mismatch)");
  return model;
}

std::map<std::string, std::vector<double>> read_doc_topics(
    const fs::path& path, std::size_t topic_count) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot read per-document distributions at " +
                             path.string() + "; run lda-fit first");
  std::map<std::string, std::vector<double>> table;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != topic_count + 1)
      fail_config("doc topics file " + path.string() +
                  ": column count does not match the topic model");
    std::vector<double> probs;
    for (std::size_t i = 1; i < fields.size(); ++i)
      probs.push_back(std::stod(fields[i]));
    table[fields[0]] = std::move(probs);
  }
  return table;
}

std::string doubles_row(const std::vector<double>& values) {
  std::ostringstream out;
  out.precision(17);
  for (double v : values) out << ',' << v;
  return out.str();
}

lda::LdaConfig lda_config_of(const RunConfig& config) {
  lda::LdaConfig lc;
  lc.topic_count = config.lda_topics;
  lc.alpha = config.lda_alpha > 0.0
                 ? config.lda_alpha
                 : 50.0 / static_cast<double>(config.lda_topics);
  lc.beta = config.lda_beta;
  lc.burnin_sweeps = config.lda_burnin;
  lc.sampling_sweeps = config.lda_sampling;
  lc.seed = config.seed;
  return lc;
}

}  // namespace

model::Variant variant_from_flag(const std::string& flag) {
  if (flag == "1cnn") return model::Variant::SingleChannel;
  if (flag == "2cnn") return model::Variant::DualChannel;
  if (flag == "2cnn-aux") return model::Variant::DualChannelAux;
  fail_config("config: unknown variant '" + flag +
              "' (expected 1cnn, 2cnn, or 2cnn-aux)");
  return {};
}

RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail_config("config: " + path + " is not valid JSON: " + e.what());
  }

  check_keys(j, "",
             {"manifest", "aliases", "rules", "topic_model", "doc_topics",
              "checkpoint", "out", "preset", "variant", "fold", "fold_count",
              "test_size", "valid_fraction", "use_augment", "self_test",
              "seed", "train", "lda", "augment", "synth", "inputs"});

  RunConfig config;
  config.manifest = j.value("manifest", config.manifest);
  config.aliases = j.value("aliases", config.aliases);
  config.rules = j.value("rules", config.rules);
  config.topic_model = j.value("topic_model", config.topic_model);
  config.doc_topics = j.value("doc_topics", config.doc_topics);
  config.checkpoint = j.value("checkpoint", config.checkpoint);
  config.out = j.value("out", config.out);
  config.preset = j.value("preset", config.preset);
  config.variant = j.value("variant", config.variant);
  config.fold = j.value("fold", config.fold);
  config.fold_count = j.value("fold_count", config.fold_count);
  config.test_size = j.value("test_size", config.test_size);
  config.valid_fraction = j.value("valid_fraction", config.valid_fraction);
  config.use_augment = j.value("use_augment", config.use_augment);
  config.self_test = j.value("self_test", config.self_test);
  config.seed = j.value("seed", config.seed);
  if (j.contains("inputs"))
    config.inputs = j.at("inputs").get<std::vector<std::string>>();

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train.",
               {"lambda", "threshold", "learning_rate", "batch_size", "epochs",
                "early_stopping_patience"});
    config.train.lambda = t.value("lambda", config.train.lambda);
    config.train.threshold = t.value("threshold", config.train.threshold);
    config.train.learning_rate =
        t.value("learning_rate", config.train.learning_rate);
    config.train.batch_size = t.value("batch_size", config.train.batch_size);
    config.train.epochs = t.value("epochs", config.train.epochs);
    config.train.early_stopping_patience = t.value(
        "early_stopping_patience", config.train.early_stopping_patience);
  }
  if (j.contains("lda")) {
    const json& l = j.at("lda");
    check_keys(l, "lda.", {"topics", "alpha", "beta", "burnin", "sampling"});
    config.lda_topics = l.value("topics", config.lda_topics);
    config.lda_alpha = l.value("alpha", config.lda_alpha);
    config.lda_beta = l.value("beta", config.lda_beta);
    config.lda_burnin = l.value("burnin", config.lda_burnin);
    config.lda_sampling = l.value("sampling", config.lda_sampling);
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, "augment.",
               {"rotation", "width_shift", "height_shift", "shear", "zoom",
                "horizontal_flip", "batch", "rounds"});
    config.augment.rotation_range_deg =
        a.value("rotation", config.augment.rotation_range_deg);
    config.augment.width_shift_range =
        a.value("width_shift", config.augment.width_shift_range);
    config.augment.height_shift_range =
        a.value("height_shift", config.augment.height_shift_range);
    config.augment.shear_range = a.value("shear", config.augment.shear_range);
    config.augment.zoom_range = a.value("zoom", config.augment.zoom_range);
    config.augment.horizontal_flip =
        a.value("horizontal_flip", config.augment.horizontal_flip);
    config.augment_batch = a.value("batch", config.augment_batch);
    config.augment_rounds = a.value("rounds", config.augment_rounds);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s, "synth.",
               {"samples", "height", "width", "topics", "herbs_per_topic",
                "min_herbs", "max_herbs", "mixture_alpha", "noise"});
    config.synth.samples = s.value("samples", config.synth.samples);
    config.synth.height = s.value("height", config.synth.height);
    config.synth.width = s.value("width", config.synth.width);
    config.synth.topic_count = s.value("topics", config.synth.topic_count);
    config.synth.herbs_per_topic =
        s.value("herbs_per_topic", config.synth.herbs_per_topic);
    config.synth.min_herbs = s.value("min_herbs", config.synth.min_herbs);
    config.synth.max_herbs = s.value("max_herbs", config.synth.max_herbs);
    config.synth.mixture_alpha =
        s.value("mixture_alpha", config.synth.mixture_alpha);
    config.synth.noise = s.value("noise", config.synth.noise);
  }
  return config;
}

std::string config_json(const RunConfig& config) {
  json j;
  j["manifest"] = config.manifest;
  j["aliases"] = config.aliases;
  j["rules"] = config.rules;
  j["topic_model"] = config.topic_model;
  j["doc_topics"] = config.doc_topics;
  j["checkpoint"] = config.checkpoint;
  j["out"] = config.out;
  j["preset"] = config.preset;
  j["variant"] = config.variant;
  j["fold"] = config.fold;
  j["fold_count"] = config.fold_count;
  j["test_size"] = config.test_size;
  j["valid_fraction"] = config.valid_fraction;
  j["use_augment"] = config.use_augment;
  j["self_test"] = config.self_test;
  j["seed"] = config.seed;
  j["inputs"] = config.inputs;
  j["train"] = {{"lambda", config.train.lambda},
                {"threshold", config.train.threshold},
                {"learning_rate", config.train.learning_rate},
                {"batch_size", config.train.batch_size},
                {"epochs", config.train.epochs},
                {"early_stopping_patience",
                 config.train.early_stopping_patience}};
  j["lda"] = {{"topics", config.lda_topics},
              {"alpha", config.lda_alpha},
              {"beta", config.lda_beta},
              {"burnin", config.lda_burnin},
              {"sampling", config.lda_sampling}};
  j["augment"] = {{"rotation", config.augment.rotation_range_deg},
                  {"width_shift", config.augment.width_shift_range},
                  {"height_shift", config.augment.height_shift_range},
                  {"shear", config.augment.shear_range},
                  {"zoom", config.augment.zoom_range},
                  {"horizontal_flip", config.augment.horizontal_flip},
                  {"batch", config.augment_batch},
                  {"rounds", config.augment_rounds}};
  j["synth"] = {{"samples", config.synth.samples},
                {"height", config.synth.height},
                {"width", config.synth.width},
                {"topics", config.synth.topic_count},
                {"herbs_per_topic", config.synth.herbs_per_topic},
                {"min_herbs", config.synth.min_herbs},
                {"max_herbs", config.synth.max_herbs},
                {"mixture_alpha", config.synth.mixture_alpha},
                {"noise", config.synth.noise}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& config) {
  const std::string text = config_json(config);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string prepare_run_dir(const RunConfig& config,
                            const std::string& command) {
  const fs::path dir =
      fs::path(config.out) / (command + "-" + config_hash(config));
  fs::create_directories(dir);
  write_text(dir / "config.json", config_json(config));
  return dir.string();
}

std::string cmd_stats(const RunConfig& config) {
  World world = load_world(config);
  const std::string dir = prepare_run_dir(config, "stats");
  data::DatasetStats stats =
      data::dataset_stats(world.prescriptions, world.vocab.size());
  write_text(fs::path(dir) / "stats.csv", data::stats_csv(stats));
  std::ostringstream log;
  log << "samples=" << world.rows.size() << "\nvocabulary=" << world.vocab.size()
      << "\nseed=" << config.seed << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_lda_fit(const RunConfig& config) {
  World world = load_world(config);
  const data::FoldSplit split = fold_of(config, world.rows.size());
  const std::string dir = prepare_run_dir(config, "lda-fit");

  lda::Corpus corpus;
  corpus.vocab_size = world.vocab.size();
  for (std::size_t idx : split.train)
    corpus.docs.push_back(world.prescriptions[idx]);

  const lda::LdaConfig lc = lda_config_of(config);
  lda::FitResult result = lda::fit(corpus, lc);
  result.model.vocab_hash = world.vocab.hash();
  lda::save_topic_model(result.model, (fs::path(dir) / "topic_model.bin").string());

  std::ostringstream csv;
  csv.precision(17);
  csv << "id";
  for (std::size_t k = 0; k < lc.topic_count; ++k) csv << ",t" << k;
  csv << '\n';
  std::ostringstream used;
  for (std::size_t d = 0; d < split.train.size(); ++d) {
    const std::string& id = world.rows[split.train[d]].id;
    csv << id << doubles_row(result.doc_topics[d]) << '\n';
    used << id << '\n';
  }
  write_text(fs::path(dir) / "doc_topics.csv", csv.str());
  write_text(fs::path(dir) / "used_samples.txt", used.str());

  std::ostringstream log;
  log << "fold=" << config.fold << "\ndocs=" << corpus.docs.size()
      << "\nvocabulary=" << corpus.vocab_size << "\ntopics=" << lc.topic_count
      << "\nalpha=" << lc.alpha << "\nbeta=" << lc.beta
      << "\nburnin_sweeps=" << lc.burnin_sweeps
      << "\nsampling_sweeps=" << lc.sampling_sweeps << "\nseed=" << lc.seed
      << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_synth(const RunConfig& config) {
  data::SynthConfig sc = config.synth;
  sc.seed = config.seed;
  sc.validate();
  const std::string dir = prepare_run_dir(config, "synth");
  fs::create_directories(fs::path(dir) / "images");

  data::SynthResult world = data::synth_generate(sc);

  std::vector<data::ManifestRow> rows;
  std::ostringstream mixtures;
  mixtures.precision(17);
  mixtures << "id";
  for (std::size_t k = 0; k < sc.topic_count; ++k) mixtures << ",t" << k;
  mixtures << '\n';
  for (const data::SynthSample& sample : world.samples) {
    Tensor scaled = sample.image;
    for (double& v : scaled.data) v *= 255.0;
    const std::string rel = "images/" + sample.id + ".png";
    imageio::write_png((fs::path(dir) / rel).string(), scaled);
    data::ManifestRow row;
    row.id = sample.id;
    row.image_path = rel;
    for (std::size_t id : sample.herbs)
      row.herbs.push_back(world.vocab.names[id]);
    rows.push_back(std::move(row));
    mixtures << sample.id << doubles_row(sample.mixture) << '\n';
  }
  data::write_manifest((fs::path(dir) / "manifest.tsv").string(), rows);
  write_text(fs::path(dir) / "mixtures.csv", mixtures.str());
  lda::save_topic_model(world.planted,
                        (fs::path(dir) / "planted_model.bin").string());

  std::ostringstream log;
  log << "samples=" << world.samples.size() << "\nvocabulary="
      << world.vocab.size() << "\ntopics=" << sc.topic_count
      << "\nseed=" << sc.seed << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_augment(const RunConfig& config) {
  World world = load_world(config);
  const std::string dir = prepare_run_dir(config, "augment");
  fs::create_directories(fs::path(dir) / "images");

  const fs::path base = fs::path(config.manifest).parent_path();
  std::vector<Tensor> images;
  for (const data::ManifestRow& row : world.rows)
    images.push_back(imageio::read_png((base / row.image_path).string()));

  augment::AugmentConfig ac = config.augment;
  ac.seed = config.seed;

  std::vector<data::ManifestRow> rows;
  std::size_t emitted = 0;
  augment::augment_round(
      images, ac, config.augment_batch, config.augment_rounds,
      [&](std::size_t source, const augment::TransformParams&,
          const Tensor& image) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "aug_%06zu", emitted++);
        data::ManifestRow row;
        row.id = buf;
        row.image_path = std::string("images/") + buf + ".png";
        row.herbs = world.rows[source].herbs;
        imageio::write_png((fs::path(dir) / row.image_path).string(), image);
        rows.push_back(std::move(row));
      });
  data::write_manifest((fs::path(dir) / "manifest.tsv").string(), rows);

  std::ostringstream log;
  log << "sources=" << images.size() << "\nemitted=" << emitted
      << "\nbatch=" << config.augment_batch
      << "\nrounds=" << config.augment_rounds << "\nseed=" << ac.seed << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_train(const RunConfig& config) {
  World world = load_world(config);
  const auto [height, width] = preset_extents(config.preset);
  data::LoadedDataset loaded =
      data::load_manifest(config.manifest, world.vocab, height, width);
  const data::FoldSplit split = fold_of(config, loaded.size());

  const model::Variant variant = variant_from_flag(config.variant);
  const bool aux = variant == model::Variant::DualChannelAux;

  lda::TopicModel topic_model;
  std::map<std::string, std::vector<double>> doc_topics;
  if (aux) {
    topic_model = require_topic_model(config, world.vocab, "train");
    const fs::path topics_path =
        config.doc_topics.empty()
            ? fs::path(config.topic_model).parent_path() / "doc_topics.csv"
            : fs::path(config.doc_topics);
    doc_topics = read_doc_topics(topics_path, topic_model.topic_count);
  }
  const model::ArchitectureSpec spec = build_spec(
      config, world.vocab.size(), aux ? topic_model.topic_count : 0);

  const std::string dir = prepare_run_dir(config, "train");

  std::set<std::size_t> valid_ids(split.valid.begin(), split.valid.end());
  model::Dataset fit_set, valid_set;
  auto topic_row = [&](std::size_t idx) {
    const std::string& id = loaded.samples[idx].id;
    auto it = doc_topics.find(id);
    if (it == doc_topics.end())
      fail_config("sample '" + id +
                  "' has no fitted topic distribution; rerun lda-fit on this "
                  "fold before training the 2cnn-aux variant");
    return it->second;
  };
  auto push = [&](model::Dataset& set, std::size_t idx) {
    set.images.push_back(loaded.samples[idx].image);
    set.labels.push_back(
        data::label_vector(loaded.samples[idx].herbs, world.vocab.size()));
    if (aux) set.topic_gt.push_back(topic_row(idx));
  };
  for (std::size_t idx : split.train)
    if (!valid_ids.count(idx)) push(fit_set, idx);
  for (std::size_t idx : split.valid) push(valid_set, idx);
  if (valid_set.size() == 0)
    fail_config("config: validation slice is empty; raise valid_fraction");

  std::size_t augmented = 0;
  if (config.use_augment) {
    std::vector<Tensor> pool = fit_set.images;
    std::vector<std::vector<double>> pool_labels = fit_set.labels;
    std::vector<std::vector<double>> pool_topics = fit_set.topic_gt;
    augment::AugmentConfig ac = config.augment;
    ac.seed = config.seed;
    augment::augment_round(
        pool, ac, config.augment_batch, config.augment_rounds,
        [&](std::size_t source, const augment::TransformParams&,
            const Tensor& image) {
          fit_set.images.push_back(image);
          fit_set.labels.push_back(pool_labels[source]);
          if (aux) fit_set.topic_gt.push_back(pool_topics[source]);
          ++augmented;
        });
  }

  model::TrainConfig tc = config.train;
  tc.seed = config.seed;
  model::Model net = model::build_model(spec, config.seed);
  model::TrainResult result = model::train(net, fit_set, valid_set, tc);

  model::Checkpoint checkpoint;
  checkpoint.model = net;
  checkpoint.epoch = result.best_epoch;
  checkpoint.vocab_hash = world.vocab.hash();
  model::save_checkpoint(checkpoint, (fs::path(dir) / "checkpoint.bin").string());
  write_text(fs::path(dir) / "history.csv", model::history_csv(result.history));

  std::ostringstream log;
  log << "fold=" << config.fold << "\nvariant=" << config.variant
      << "\npreset=" << config.preset << "\ntrain_samples=" << fit_set.size()
      << "\naugmented=" << augmented << "\nvalid_samples=" << valid_set.size()
      << "\nepochs_run=" << result.history.size()
      << "\nbest_epoch=" << result.best_epoch << "\nseed=" << config.seed
      << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_eval(const RunConfig& config) {
  World world = load_world(config);
  const auto [height, width] = preset_extents(config.preset);
  data::LoadedDataset loaded =
      data::load_manifest(config.manifest, world.vocab, height, width);
  const data::FoldSplit split = fold_of(config, loaded.size());

  lda::TopicModel topic_model =
      require_topic_model(config, world.vocab, "eval");
  const model::Variant variant = variant_from_flag(config.variant);
  const bool aux = variant == model::Variant::DualChannelAux;
  const model::ArchitectureSpec spec = build_spec(
      config, world.vocab.size(), aux ? topic_model.topic_count : 0);

  if (config.checkpoint.empty())
    fail_config("config: 'eval' needs a checkpoint; run train first");
  model::Checkpoint checkpoint =
      model::load_checkpoint(config.checkpoint, &spec);
  if (checkpoint.vocab_hash != 0 &&
      checkpoint.vocab_hash != world.vocab.hash())
    fail_config("checkpoint was trained against a different herb dictionary "
                "(vocabulary hash mismatch)");

  const std::string dir = prepare_run_dir(config, "eval");

  std::vector<metrics::SetPair> pairs;
  std::vector<std::string> ids;
  for (std::size_t begin = 0; begin < split.test.size();
       begin += config.train.batch_size) {
    const std::size_t count =
        std::min(config.train.batch_size, split.test.size() - begin);
    Tensor batch({count, height, width, 3});
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor& image = loaded.samples[split.test[begin + i]].image;
      std::copy(image.data.begin(), image.data.end(),
                batch.data.begin() +
                    static_cast<std::ptrdiff_t>(i * image.size()));
    }
    auto fwd = model::forward(checkpoint.model, batch, Mode::Infer, nullptr);
    const Tensor& probs = fwd.herb_probs();
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = split.test[begin + i];
      std::vector<double> row(world.vocab.size());
      for (std::size_t h = 0; h < row.size(); ++h) row[h] = probs.at2(i, h);
      auto prediction =
          model::predict_prescription(row, config.train.threshold);
      metrics::SetPair pair;
      pair.second = loaded.samples[idx].herbs;
      pair.first = config.self_test ? pair.second : prediction.herbs;
      pairs.push_back(std::move(pair));
      ids.push_back(loaded.samples[idx].id);
    }
  }

  metrics::MetricsReport report =
      metrics::build_report(pairs, &topic_model, config.seed);

  std::ostringstream per_sample;
  per_sample.precision(17);
  per_sample << "id,nc,np,ng,p,r,iou\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto sim = metrics::similarity(pairs[i].first, pairs[i].second);
    per_sample << ids[i] << ',' << sim.nc << ',' << sim.np << ',' << sim.ng
               << ',' << sim.p << ',' << sim.r << ',' << sim.iou << '\n';
  }
  write_text(fs::path(dir) / "per_sample.csv", per_sample.str());
  write_text(fs::path(dir) / "summary.csv",
             metrics::format_report_csv({report}));

  std::ostringstream real_csv, gen_csv;
  real_csv.precision(17);
  gen_csv.precision(17);
  real_csv << "id";
  gen_csv << "id";
  for (std::size_t k = 0; k < topic_model.topic_count; ++k) {
    real_csv << ",t" << k;
    gen_csv << ",t" << k;
  }
  real_csv << '\n';
  gen_csv << '\n';
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::uint64_t base = splitmix(config.seed ^ (2654435761ULL * i));
    real_csv << ids[i]
             << doubles_row(lda::infer_topics(topic_model, pairs[i].second,
                                              base))
             << '\n';
    if (!pairs[i].first.empty())
      gen_csv << ids[i]
              << doubles_row(lda::infer_topics(topic_model, pairs[i].first,
                                               base ^ 1))
              << '\n';
  }
  write_text(fs::path(dir) / "topics_real.csv", real_csv.str());
  write_text(fs::path(dir) / "topics_generated.csv", gen_csv.str());

  if (!config.rules.empty()) {
    metrics::PairRuleTable rules =
        metrics::load_rule_table(config.rules, world.vocab);
    std::ostringstream logic;
    logic << "id,s_pos,s_neg,s_total\n";
    long total = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto score = metrics::logic_score(pairs[i].first, rules);
      logic << ids[i] << ',' << score.s_pos << ',' << score.s_neg << ','
            << score.s_total << '\n';
      total += score.s_total;
    }
    logic << "mean,,,"
          << (static_cast<double>(total) / static_cast<double>(pairs.size()))
          << '\n';
    write_text(fs::path(dir) / "logic.csv", logic.str());
  }

  std::ostringstream log;
  log << "fold=" << config.fold << "\nsamples=" << pairs.size()
      << "\nself_test=" << (config.self_test ? 1 : 0)
      << "\nempty_generated=" << report.empty_generated
      << "\nseed=" << config.seed << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

std::string cmd_report(const RunConfig& config) {
  if (config.inputs.size() < 2)
    fail_config("report needs at least two per-fold summary files");

  std::vector<metrics::MetricsReport> folds;
  for (const std::string& path : config.inputs) {
    const std::string text = read_text(path);
    std::istringstream is(text);
    std::string header, line;
    if (!std::getline(is, header))
      fail_config("summary file " + path + " is empty");
    const std::vector<std::string> names = split_csv_line(header);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> values = split_csv_line(line);
      if (values.size() != names.size())
        fail_config("summary file " + path + " has a ragged row");
      metrics::MetricsReport r;
      for (std::size_t i = 0; i < names.size(); ++i) {
        const std::string& name = names[i];
        if (name == "samples") r.samples = std::stoul(values[i]);
        else if (name == "p_sim") r.p_sim = std::stod(values[i]);
        else if (name == "r_sim") r.r_sim = std::stod(values[i]);
        else if (name == "iou_sim") r.iou_sim = std::stod(values[i]);
        else if (name == "nb_p") r.counts.nb_p = std::stod(values[i]);
        else if (name == "nb_c") r.counts.nb_c = std::stod(values[i]);
        else if (name == "nb_d") r.counts.nb_d = std::stod(values[i]);
        else if (name == "nb_d_mean_abs")
          r.counts.nb_d_mean_abs = std::stod(values[i]);
        else if (name == "kl_t") r.kl_t = std::stod(values[i]);
        else if (name == "empty_generated")
          r.empty_generated = std::stoul(values[i]);
        else if (name != "fold")
          fail_config("summary file " + path + ": unknown column '" + name +
                      "'");
      }
      folds.push_back(r);
    }
  }
  if (folds.size() < 2)
    fail_config("report needs at least two fold rows across its inputs");

  const std::string dir = prepare_run_dir(config, "report");
  write_text(fs::path(dir) / "pooled_summary.csv",
             metrics::format_report_csv(folds));
  write_text(fs::path(dir) / "fold_table.txt",
             metrics::format_fold_table(folds));
  std::ostringstream log;
  log << "folds=" << folds.size() << "\n";
  write_text(fs::path(dir) / "log.txt", log.str());
  return dir;
}

}  // namespace tonguerx::commands
