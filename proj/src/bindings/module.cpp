#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <utility>

#include "tonguerx/augment.hpp"
#include "tonguerx/commands.hpp"
#include "tonguerx/data.hpp"
#include "tonguerx/lda.hpp"
#include "tonguerx/metrics.hpp"
#include "tonguerx/model.hpp"

namespace py = pybind11;
using namespace tonguerx;

namespace {

Tensor tensor_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> array) {
  std::vector<std::size_t> shape(array.ndim());
  for (py::ssize_t i = 0; i < array.ndim(); ++i)
    shape[static_cast<std::size_t>(i)] =
        static_cast<std::size_t>(array.shape(i));
  Tensor t(shape);
  std::memcpy(t.data.data(), array.data(), t.size() * sizeof(double));
  return t;
}

py::buffer_info tensor_buffer(Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  std::vector<py::ssize_t> strides(t.rank());
  py::ssize_t step = static_cast<py::ssize_t>(sizeof(double));
  for (std::size_t i = t.rank(); i-- > 0;) {
    strides[i] = step;
    step *= static_cast<py::ssize_t>(t.shape[i]);
  }
  return py::buffer_info(t.data.data(), sizeof(double),
                         py::format_descriptor<double>::format(),
                         static_cast<py::ssize_t>(t.rank()), shape, strides);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "tongue-image prescription pipeline, native core";
  m.attr("__version__") = "0.1.0";

  py::class_<Tensor>(m, "Tensor", py::buffer_protocol())
      .def(py::init(&tensor_from_array), py::arg("array"))
      .def_buffer(tensor_buffer)
      .def_property_readonly(
          "shape", [](const Tensor& t) { return t.shape; })
      .def("__len__", [](const Tensor& t) { return t.size(); })
      .def("numpy", [](const Tensor& t) {
        std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
        py::array_t<double> out(shape);
        std::memcpy(out.mutable_data(), t.data.data(),
                    t.size() * sizeof(double));
        return out;
      });

  // herb dictionary
  py::class_<lda::HerbVocabulary>(m, "HerbVocabulary")
      .def_readonly("names", &lda::HerbVocabulary::names)
      .def("__len__", &lda::HerbVocabulary::size)
      .def("id_of", &lda::HerbVocabulary::id_of, py::arg("name"))
      .def("contains", &lda::HerbVocabulary::contains, py::arg("name"))
      .def("hash", &lda::HerbVocabulary::hash);
  m.def("build_vocabulary", &lda::build_vocabulary, py::arg("prescriptions"),
        py::arg("aliases") = std::vector<std::pair<std::string, std::string>>{},
        "Canonical sorted herb dictionary from raw name lists.");

  // topic model
  py::class_<lda::LdaConfig>(m, "LdaConfig")
      .def(py::init<>())
      .def_readwrite("topic_count", &lda::LdaConfig::topic_count)
      .def_readwrite("alpha", &lda::LdaConfig::alpha)
      .def_readwrite("beta", &lda::LdaConfig::beta)
      .def_readwrite("burnin_sweeps", &lda::LdaConfig::burnin_sweeps)
      .def_readwrite("sampling_sweeps", &lda::LdaConfig::sampling_sweeps)
      .def_readwrite("seed", &lda::LdaConfig::seed)
      .def_static("defaults", &lda::LdaConfig::defaults, py::arg("topics"),
                  py::arg("seed") = 0);
  py::class_<lda::TopicModel>(m, "TopicModel")
      .def_readonly("topic_count", &lda::TopicModel::topic_count)
      .def_readonly("alpha", &lda::TopicModel::alpha)
      .def_readonly("beta", &lda::TopicModel::beta)
      .def_readonly("vocab_hash", &lda::TopicModel::vocab_hash)
      .def_readonly("vocab_size", &lda::TopicModel::vocab_size)
      .def("phi", &lda::TopicModel::phi, py::arg("topic"), py::arg("herb"))
      .def("phi_row", &lda::TopicModel::phi_row, py::arg("topic"));
  m.def(
      "fit_lda",
      [](const std::vector<lda::Prescription>& docs, std::size_t vocab_size,
         const lda::LdaConfig& config) {
        lda::Corpus corpus;
        corpus.docs = docs;
        corpus.vocab_size = vocab_size;
        lda::FitResult r = lda::fit(corpus, config);
        return py::make_tuple(r.model, r.doc_topics);
      },
      py::arg("docs"), py::arg("vocab_size"), py::arg("config"),
      "Collapsed Gibbs fit; returns (model, per-document distributions).");
  m.def("infer_topics", &lda::infer_topics, py::arg("model"),
        py::arg("prescription"), py::arg("seed"),
        "Fold-in distribution for one herb set against a frozen model.");
  m.def("kl_topics", &lda::kl_topics, py::arg("p"), py::arg("g"),
        "Mean directed divergence; exactly zero for bitwise-equal inputs.");
  m.def("save_topic_model", &lda::save_topic_model, py::arg("model"),
        py::arg("path"));
  m.def("load_topic_model", &lda::load_topic_model, py::arg("path"));

  // evaluation
  py::class_<metrics::SampleSimilarity>(m, "SampleSimilarity")
      .def_readonly("nc", &metrics::SampleSimilarity::nc)
      .def_readonly("np", &metrics::SampleSimilarity::np)
      .def_readonly("ng", &metrics::SampleSimilarity::ng)
      .def_readonly("p", &metrics::SampleSimilarity::p)
      .def_readonly("r", &metrics::SampleSimilarity::r)
      .def_readonly("iou", &metrics::SampleSimilarity::iou);
  py::class_<metrics::CountMetrics>(m, "CountMetrics")
      .def_readonly("nb_p", &metrics::CountMetrics::nb_p)
      .def_readonly("nb_c", &metrics::CountMetrics::nb_c)
      .def_readonly("nb_d", &metrics::CountMetrics::nb_d)
      .def_readonly("nb_d_mean_abs", &metrics::CountMetrics::nb_d_mean_abs);
  py::class_<metrics::MetricsReport>(m, "MetricsReport")
      .def_readonly("samples", &metrics::MetricsReport::samples)
      .def_readonly("p_sim", &metrics::MetricsReport::p_sim)
      .def_readonly("r_sim", &metrics::MetricsReport::r_sim)
      .def_readonly("iou_sim", &metrics::MetricsReport::iou_sim)
      .def_readonly("counts", &metrics::MetricsReport::counts)
      .def_readonly("kl_t", &metrics::MetricsReport::kl_t)
      .def_readonly("empty_generated", &metrics::MetricsReport::empty_generated);
  m.def("similarity", &metrics::similarity, py::arg("generated"),
        py::arg("real"));
  m.def("count_metrics", &metrics::count_metrics, py::arg("pairs"));
  m.def(
      "build_report",
      [](const std::vector<metrics::SetPair>& pairs,
         const lda::TopicModel* model, std::uint64_t seed) {
        return metrics::build_report(pairs, model, seed);
      },
      py::arg("pairs"), py::arg("model") = nullptr, py::arg("seed") = 0);
  m.def("format_fold_table", &metrics::format_fold_table, py::arg("folds"));
  m.def("format_report_csv", &metrics::format_report_csv, py::arg("folds"));

  // affine distortion
  py::class_<augment::AugmentConfig>(m, "AugmentConfig")
      .def(py::init<>())
      .def_readwrite("rotation_range_deg",
                     &augment::AugmentConfig::rotation_range_deg)
      .def_readwrite("width_shift_range",
                     &augment::AugmentConfig::width_shift_range)
      .def_readwrite("height_shift_range",
                     &augment::AugmentConfig::height_shift_range)
      .def_readwrite("shear_range", &augment::AugmentConfig::shear_range)
      .def_readwrite("zoom_range", &augment::AugmentConfig::zoom_range)
      .def_readwrite("horizontal_flip",
                     &augment::AugmentConfig::horizontal_flip)
      .def_readwrite("seed", &augment::AugmentConfig::seed);
  m.def(
      "augment_images",
      [](const std::vector<Tensor>& images,
         const augment::AugmentConfig& config, std::size_t batch,
         std::size_t rounds) {
        std::vector<std::pair<std::size_t, Tensor>> out;
        augment::augment_round(images, config, batch, rounds,
                               [&](std::size_t source,
                                   const augment::TransformParams&,
                                   const Tensor& image) {
                                 out.emplace_back(source, image);
                               });
        return out;
      },
      py::arg("images"), py::arg("config"), py::arg("batch"),
      py::arg("rounds"),
      "Distorted copies as (source index, image) pairs, batch*rounds total.");

  // synthetic data
  py::class_<data::SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("samples", &data::SynthConfig::samples)
      .def_readwrite("height", &data::SynthConfig::height)
      .def_readwrite("width", &data::SynthConfig::width)
      .def_readwrite("topic_count", &data::SynthConfig::topic_count)
      .def_readwrite("herbs_per_topic", &data::SynthConfig::herbs_per_topic)
      .def_readwrite("min_herbs", &data::SynthConfig::min_herbs)
      .def_readwrite("max_herbs", &data::SynthConfig::max_herbs)
      .def_readwrite("mixture_alpha", &data::SynthConfig::mixture_alpha)
      .def_readwrite("noise", &data::SynthConfig::noise)
      .def_readwrite("seed", &data::SynthConfig::seed);
  py::class_<data::SynthSample>(m, "SynthSample")
      .def_readonly("id", &data::SynthSample::id)
      .def_readonly("image", &data::SynthSample::image)
      .def_readonly("herbs", &data::SynthSample::herbs)
      .def_readonly("mixture", &data::SynthSample::mixture);
  py::class_<data::SynthResult>(m, "SynthResult")
      .def_readonly("vocab", &data::SynthResult::vocab)
      .def_readonly("samples", &data::SynthResult::samples)
      .def_readonly("planted", &data::SynthResult::planted);
  m.def("synth_generate", &data::synth_generate, py::arg("config"));
  m.def("resize_area", &data::resize_area, py::arg("image"), py::arg("height"),
        py::arg("width"));

  // networks
  py::class_<model::ArchitectureSpec>(m, "ArchitectureSpec")
      .def_readwrite("herb_count", &model::ArchitectureSpec::herb_count)
      .def_readwrite("topic_count", &model::ArchitectureSpec::topic_count)
      .def_readonly("height", &model::ArchitectureSpec::height)
      .def_readonly("width", &model::ArchitectureSpec::width)
      .def_static(
          "paper",
          [](const std::string& variant, std::size_t herbs,
             std::size_t topics) {
            return model::ArchitectureSpec::paper_preset(
                commands::variant_from_flag(variant), herbs, topics);
          },
          py::arg("variant"), py::arg("herbs"), py::arg("topics") = 0)
      .def_static(
          "mini",
          [](const std::string& variant, std::size_t herbs,
             std::size_t topics) {
            return model::ArchitectureSpec::mini_preset(
                commands::variant_from_flag(variant), herbs, topics);
          },
          py::arg("variant"), py::arg("herbs"), py::arg("topics") = 0);
  py::class_<model::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &model::TrainConfig::lambda)
      .def_readwrite("threshold", &model::TrainConfig::threshold)
      .def_readwrite("learning_rate", &model::TrainConfig::learning_rate)
      .def_readwrite("batch_size", &model::TrainConfig::batch_size)
      .def_readwrite("epochs", &model::TrainConfig::epochs)
      .def_readwrite("early_stopping_patience",
                     &model::TrainConfig::early_stopping_patience)
      .def_readwrite("seed", &model::TrainConfig::seed);
  py::class_<model::Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("images", &model::Dataset::images)
      .def_readwrite("labels", &model::Dataset::labels)
      .def_readwrite("topic_gt", &model::Dataset::topic_gt)
      .def(
          "add",
          [](model::Dataset& d, const Tensor& image,
             const std::vector<double>& label,
             const std::vector<double>& topics) {
            d.images.push_back(image);
            d.labels.push_back(label);
            if (!topics.empty()) d.topic_gt.push_back(topics);
          },
          py::arg("image"), py::arg("label"),
          py::arg("topics") = std::vector<double>{})
      .def("__len__", &model::Dataset::size);
  py::class_<model::Model>(m, "Model")
      .def_readonly("param_names", &model::Model::param_names)
      .def_property_readonly(
          "spec", [](const model::Model& net) { return net.spec; });
  py::class_<model::EpochStats>(m, "EpochStats")
      .def_readonly("train_main", &model::EpochStats::train_main)
      .def_readonly("train_aux", &model::EpochStats::train_aux)
      .def_readonly("train_total", &model::EpochStats::train_total)
      .def_readonly("valid_main", &model::EpochStats::valid_main)
      .def_readonly("valid_aux", &model::EpochStats::valid_aux)
      .def_readonly("valid_total", &model::EpochStats::valid_total);
  m.def("build_model", &model::build_model, py::arg("spec"), py::arg("seed"));
  m.def(
      "train_model",
      [](model::Model& net, const model::Dataset& fit,
         const model::Dataset& valid, const model::TrainConfig& config) {
        model::TrainResult r = model::train(net, fit, valid, config);
        return py::make_tuple(r.history, r.best_epoch);
      },
      py::arg("model"), py::arg("fit"), py::arg("valid"), py::arg("config"),
      "Adam on the joint loss; returns (per-epoch stats, best epoch).");
  m.def(
      "infer_herbs",
      [](model::Model& net, const Tensor& batch) {
        auto fwd = model::forward(net, batch, Mode::Infer, nullptr);
        const Tensor& probs = fwd.herb_probs();
        std::vector<std::vector<double>> rows(probs.shape[0]);
        for (std::size_t i = 0; i < probs.shape[0]; ++i) {
          rows[i].resize(probs.shape[1]);
          for (std::size_t h = 0; h < probs.shape[1]; ++h)
            rows[i][h] = probs.at2(i, h);
        }
        return rows;
      },
      py::arg("model"), py::arg("batch"),
      "Per-herb probabilities for a [N,H,W,3] batch, inference mode.");
  m.def(
      "predict_prescription",
      [](const std::vector<double>& probs, double threshold) {
        auto p = model::predict_prescription(probs, threshold);
        return py::make_tuple(p.herbs, p.empty_warning);
      },
      py::arg("probs"), py::arg("threshold") = 0.5);
  m.def(
      "save_checkpoint",
      [](model::Model& net, const std::string& path, std::size_t epoch,
         std::uint64_t vocab_hash) {
        model::Checkpoint c;
        c.model = net;
        c.epoch = epoch;
        c.vocab_hash = vocab_hash;
        model::save_checkpoint(c, path);
      },
      py::arg("model"), py::arg("path"), py::arg("epoch") = 0,
      py::arg("vocab_hash") = 0);
  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        model::Checkpoint c = model::load_checkpoint(path, nullptr);
        return py::make_tuple(c.model, c.epoch, c.vocab_hash);
      },
      py::arg("path"));

  // pipeline commands, same surface the command-line tool drives
  py::class_<commands::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("manifest", &commands::RunConfig::manifest)
      .def_readwrite("aliases", &commands::RunConfig::aliases)
      .def_readwrite("rules", &commands::RunConfig::rules)
      .def_readwrite("topic_model", &commands::RunConfig::topic_model)
      .def_readwrite("doc_topics", &commands::RunConfig::doc_topics)
      .def_readwrite("checkpoint", &commands::RunConfig::checkpoint)
      .def_readwrite("out", &commands::RunConfig::out)
      .def_readwrite("preset", &commands::RunConfig::preset)
      .def_readwrite("variant", &commands::RunConfig::variant)
      .def_readwrite("fold", &commands::RunConfig::fold)
      .def_readwrite("fold_count", &commands::RunConfig::fold_count)
      .def_readwrite("test_size", &commands::RunConfig::test_size)
      .def_readwrite("valid_fraction", &commands::RunConfig::valid_fraction)
      .def_readwrite("use_augment", &commands::RunConfig::use_augment)
      .def_readwrite("self_test", &commands::RunConfig::self_test)
      .def_readwrite("seed", &commands::RunConfig::seed)
      .def_readwrite("train", &commands::RunConfig::train)
      .def_readwrite("lda_topics", &commands::RunConfig::lda_topics)
      .def_readwrite("lda_alpha", &commands::RunConfig::lda_alpha)
      .def_readwrite("lda_beta", &commands::RunConfig::lda_beta)
      .def_readwrite("lda_burnin", &commands::RunConfig::lda_burnin)
      .def_readwrite("lda_sampling", &commands::RunConfig::lda_sampling)
      .def_readwrite("augment", &commands::RunConfig::augment)
      .def_readwrite("augment_batch", &commands::RunConfig::augment_batch)
      .def_readwrite("augment_rounds", &commands::RunConfig::augment_rounds)
      .def_readwrite("synth", &commands::RunConfig::synth)
      .def_readwrite("inputs", &commands::RunConfig::inputs);
  m.def("load_config", &commands::load_config, py::arg("path"));
  m.def("config_json", &commands::config_json, py::arg("config"));
  m.def("config_hash", &commands::config_hash, py::arg("config"));
  m.def("run_lda_fit", &commands::cmd_lda_fit, py::arg("config"));
  m.def("run_train", &commands::cmd_train, py::arg("config"));
  m.def("run_eval", &commands::cmd_eval, py::arg("config"));
  m.def("run_synth", &commands::cmd_synth, py::arg("config"));
  m.def("run_augment", &commands::cmd_augment, py::arg("config"));
  m.def("run_stats", &commands::cmd_stats, py::arg("config"));
  m.def("run_report", &commands::cmd_report, py::arg("config"));
}
