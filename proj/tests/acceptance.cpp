// Acceptance gate for the whole pipeline: each numbered criterion prints one
// [PASS]/[FAIL] line; the process exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "planted.hpp"
#include "tonguerx/augment.hpp"
#include "tonguerx/autodiff.hpp"
#include "tonguerx/commands.hpp"
#include "tonguerx/data.hpp"
#include "tonguerx/lda.hpp"
#include "tonguerx/metrics.hpp"
#include "tonguerx/model.hpp"
#include "tonguerx/rng.hpp"
#include "tonguerx/tensor.hpp"

using namespace tonguerx;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------- gradients

// The scale floor has to sit above the central-difference noise level: with
// h = 1e-5 and loss values of order one, the estimate of a genuinely zero
// gradient (dead relu path) is cancellation noise of order 1e-11, so any
// floor below 1e-6 would flag those coordinates at the 1e-4 tolerance even
// when the analytic gradient is exact.
double rel_gap(double numeric, double analytic) {
  const double scale =
      std::max({std::abs(numeric), std::abs(analytic), 1e-6});
  return std::abs(numeric - analytic) / scale;
}

Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// values kept away from zero so relu/maxpool decisions cannot flip under
// the finite-difference step
Tensor random_tensor_separated(const std::vector<std::size_t>& shape,
                               Rng& rng) {
  Tensor t = random_tensor(shape, rng);
  for (double& v : t.data)
    if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
  return t;
}

Tensor random_simplex_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      t.at2(r, c) = 0.05 + rng.uniform();
      sum += t.at2(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) t.at2(r, c) /= sum;
  }
  return t;
}

Tensor random_labels(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

struct FdStats {
  double worst = 0.0;
  std::size_t coords = 0;
  std::string worst_site;
};

// central differences on every leaf of a scalar graph; the builder must be
// deterministic given the same input values (fresh rngs seeded inside)
void fd_check(const char* name, std::vector<Tensor>& inputs,
              const std::function<NodeId(Tape&, const std::vector<NodeId>&)>&
                  wire,
              Rng& pick, FdStats& stats, double h = 1e-5) {
  auto eval = [&](std::vector<Tensor>* grads_out) {
    Tape tape;
    std::vector<NodeId> leaves;
    for (const Tensor& v : inputs) leaves.push_back(tape.leaf(v, true));
    const NodeId loss = wire(tape, leaves);
    const double value = tape.scalar_value(loss);
    if (grads_out) *grads_out = tape.backward(loss).grads;
    return value;
  };
  std::vector<Tensor> grads;
  eval(&grads);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const std::size_t numel = inputs[t].size();
    std::set<std::size_t> coords;
    if (numel <= 32)
      for (std::size_t i = 0; i < numel; ++i) coords.insert(i);
    else
      while (coords.size() < 32) coords.insert(pick.uniform_index(numel));
    for (std::size_t coord : coords) {
      double& slot = inputs[t].data[coord];
      const double saved = slot;
      slot = saved + h;
      const double up = eval(nullptr);
      slot = saved - h;
      const double down = eval(nullptr);
      slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double gap = rel_gap(numeric, grads[t].data[coord]);
      if (gap > stats.worst) {
        stats.worst = gap;
        std::ostringstream site;
        site << name << " leaf " << t << " coord " << coord << " numeric "
             << numeric << " analytic " << grads[t].data[coord];
        stats.worst_site = site.str();
      }
      ++stats.coords;
    }
  }
}

Result criterion_gradients() {
  const auto start = Clock::now();
  Rng data_rng(101);
  Rng pick(202);
  FdStats stats;

  {  // convolution, bias included
    std::vector<Tensor> in = {random_tensor({2, 5, 6, 3}, data_rng),
                              random_tensor({3, 3, 3, 4}, data_rng),
                              random_tensor({4}, data_rng)};
    fd_check("conv2d", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.conv2d(l[0], l[1], l[2]));
             },
             pick, stats);
  }
  {  // max pooling on odd extents (replication pad path)
    std::vector<Tensor> in = {random_tensor_separated({2, 5, 5, 2}, data_rng)};
    fd_check("maxpool2", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.maxpool2(l[0]));
             },
             pick, stats);
  }
  {  // relu
    std::vector<Tensor> in = {random_tensor_separated({2, 4, 4, 3}, data_rng)};
    fd_check("relu", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.relu(l[0]));
             },
             pick, stats);
  }
  {  // sigmoid feeding binary cross-entropy
    std::vector<Tensor> in = {random_tensor({3, 6}, data_rng, -2.0, 2.0)};
    const Tensor labels = random_labels(3, 6, data_rng);
    fd_check("sigmoid+bce", in,
             [labels](Tape& t, const std::vector<NodeId>& l) {
               return t.bce_mean(t.sigmoid(l[0]), labels);
             },
             pick, stats);
  }
  {  // softmax feeding the topic divergence
    std::vector<Tensor> in = {random_tensor({3, 5}, data_rng, -2.0, 2.0)};
    const Tensor target = random_simplex_rows(3, 5, data_rng);
    fd_check("softmax+kl", in,
             [target](Tape& t, const std::vector<NodeId>& l) {
               return t.kl_mean(t.softmax(l[0]), target);
             },
             pick, stats);
  }
  {  // dense
    std::vector<Tensor> in = {random_tensor({3, 6}, data_rng),
                              random_tensor({6, 4}, data_rng),
                              random_tensor({4}, data_rng)};
    fd_check("dense", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.dense(l[0], l[1], l[2]));
             },
             pick, stats);
  }
  {  // batch normalization, training statistics
    std::vector<Tensor> in = {random_tensor({3, 4, 4, 2}, data_rng),
                              random_tensor({2}, data_rng, 0.5, 1.5),
                              random_tensor({2}, data_rng)};
    fd_check("batchnorm", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               BatchNormState state(2);
               return t.sum(
                   t.relu(t.batchnorm2d(l[0], l[1], l[2], state, Mode::Train)));
             },
             pick, stats);
  }
  {  // dropout with a fixed mask stream
    std::vector<Tensor> in = {random_tensor({2, 4, 4, 2}, data_rng)};
    fd_check("dropout", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               Rng mask_rng(7);
               return t.sum(t.dropout(l[0], 0.4, mask_rng, Mode::Train));
             },
             pick, stats);
  }
  {  // feature concatenation
    std::vector<Tensor> in = {random_tensor_separated({2, 5}, data_rng),
                              random_tensor_separated({2, 3}, data_rng)};
    fd_check("concat", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.relu(t.concat(l[0], l[1])));
             },
             pick, stats);
  }
  {  // flatten into dense
    std::vector<Tensor> in = {random_tensor({2, 3, 3, 2}, data_rng),
                              random_tensor({18, 4}, data_rng),
                              random_tensor({4}, data_rng)};
    fd_check("flatten+dense", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.dense(t.flatten(l[0]), l[1], l[2]));
             },
             pick, stats);
  }
  {  // weighted sum of two scalar heads
    std::vector<Tensor> in = {random_tensor_separated({2, 4}, data_rng),
                              random_tensor({2, 4}, data_rng)};
    fd_check("add_scaled", in,
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.add_scaled(t.sum(t.relu(l[0])),
                                   t.sum(t.sigmoid(l[1])), 0.3);
             },
             pick, stats);
  }

  // full architecture variants at the small preset
  for (const model::Variant variant :
       {model::Variant::SingleChannel, model::Variant::DualChannel,
        model::Variant::DualChannelAux}) {
    const bool aux = variant == model::Variant::DualChannelAux;
    const model::ArchitectureSpec spec =
        model::ArchitectureSpec::mini_preset(variant, 10, aux ? 4 : 0);
    model::Model net = model::build_model(spec, 55);
    Rng batch_rng(66);
    Tensor batch = random_tensor({2, spec.height, spec.width, 3}, batch_rng,
                                 0.0, 1.0);
    const Tensor labels = random_labels(2, spec.herb_count, batch_rng);
    const Tensor topics =
        aux ? random_simplex_rows(2, spec.topic_count, batch_rng) : Tensor({1});

    auto eval = [&](std::vector<Tensor>* grads_out) {
      Rng drop_rng(77);
      auto fwd = model::forward(net, batch, Mode::Train, &drop_rng);
      Tape& tape = *fwd.tape;
      NodeId loss = tape.bce_mean(fwd.herb_node, labels);
      if (aux)
        loss = tape.add_scaled(loss, tape.kl_mean(fwd.topic_node, topics), 0.7);
      const double value = tape.scalar_value(loss);
      if (grads_out) *grads_out = tape.backward(loss).grads;
      return value;
    };
    std::vector<Tensor> grads;
    eval(&grads);
    if (grads.size() != net.params.size())
      return {false, "gradient count mismatch for " +
                         model::variant_name(variant)};
    const double h = 1e-5;
    for (std::size_t t = 0; t < net.params.size(); ++t) {
      const std::size_t numel = net.params[t].size();
      std::set<std::size_t> coords;
      if (numel <= 32)
        for (std::size_t i = 0; i < numel; ++i) coords.insert(i);
      else
        while (coords.size() < 32) coords.insert(pick.uniform_index(numel));
      for (std::size_t coord : coords) {
        double& slot = net.params[t].data[coord];
        const double saved = slot;
        slot = saved + h;
        const double up = eval(nullptr);
        slot = saved - h;
        const double down = eval(nullptr);
        slot = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double gap = rel_gap(numeric, grads[t].data[coord]);
        if (gap > stats.worst) {
          stats.worst = gap;
          std::ostringstream site;
          site << model::variant_name(variant) << " " << net.param_names[t]
               << " coord " << coord << " numeric " << numeric << " analytic "
               << grads[t].data[coord];
          stats.worst_site = site.str();
        }
        ++stats.coords;
      }
    }
  }

  const double elapsed = seconds_since(start);
  const bool pass = stats.worst <= 1e-4 && elapsed <= 120.0;
  std::string detail = "max rel err " + fmt(stats.worst) + " over " +
                       std::to_string(stats.coords) + " coordinates, " +
                       fmt(elapsed) + "s";
  if (!pass && !stats.worst_site.empty())
    detail += " [worst at " + stats.worst_site + "]";
  return {pass, detail};
}

// ------------------------------------------------------------ kl identities

Result criterion_kl_identities() {
  Rng rng(220);
  double worst_self = 0.0;
  double lowest = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 2 + rng.uniform_index(31);
    std::vector<double> p(m), g(m);
    double ps = 0.0, gs = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      p[k] = 1e-3 + rng.uniform();
      g[k] = 1e-3 + rng.uniform();
      ps += p[k];
      gs += g[k];
    }
    for (std::size_t k = 0; k < m; ++k) {
      p[k] /= ps;
      g[k] /= gs;
    }
    worst_self = std::max(worst_self, std::abs(lda::kl_topics(g, g)));
    lowest = std::min(lowest, lda::kl_topics(p, g));
  }
  const bool pass = worst_self <= 1e-12 && lowest >= -1e-12;
  return {pass, "self divergence max " + fmt(worst_self) +
                    ", lowest cross divergence " + fmt(lowest) +
                    " over 1000 pairs"};
}

// ----------------------------------------------------------- gibbs sampler

Result criterion_gibbs_invariants() {
  // random 200-document corpus, counts re-derived after every sweep
  Rng rng(330);
  lda::Corpus corpus;
  corpus.vocab_size = 25;
  for (int d = 0; d < 200; ++d) {
    std::set<std::size_t> doc;
    const std::size_t len = 1 + rng.uniform_index(12);
    while (doc.size() < len) doc.insert(rng.uniform_index(corpus.vocab_size));
    corpus.docs.emplace_back(doc.begin(), doc.end());
  }
  lda::LdaConfig config;
  config.topic_count = 6;
  config.alpha = 0.5;
  config.beta = 0.01;
  config.seed = 330;
  Rng chain(config.seed);
  lda::GibbsState state = lda::init_state(corpus, config, chain);
  const std::size_t tokens = corpus.token_count();
  for (int sweep = 0; sweep < 100; ++sweep) {
    lda::gibbs_sweep(state, corpus, config, chain);
    try {
      lda::check_state(state, corpus, config.topic_count);
    } catch (const std::exception& e) {
      return {false, "count conservation broke at sweep " +
                         std::to_string(sweep) + ": " + e.what()};
    }
    std::size_t total = 0;
    for (std::size_t n : state.n_k) total += n;
    if (total != tokens)
      return {false, "token total drifted at sweep " + std::to_string(sweep)};
  }

  // a single-topic corpus has nothing to resample
  planted::World tiny = planted::make(20, 1, 6, 5);
  lda::LdaConfig one = lda::LdaConfig::defaults(1, 5);
  Rng one_rng(5);
  lda::GibbsState fixed = lda::init_state(tiny.corpus, one, one_rng);
  for (int sweep = 0; sweep < 5; ++sweep)
    lda::gibbs_sweep(fixed, tiny.corpus, one, one_rng);
  for (const auto& doc : fixed.z)
    for (std::size_t z : doc)
      if (z != 0) return {false, "single-topic assignments moved"};

  // worked two-topic conditional: counts chosen so the normalized weights
  // are (0.6, 0.4) in rational arithmetic; the float result lands within
  // one rounding step of those values
  std::vector<std::vector<std::size_t>> n_kh = {{1, 4, 0, 0}, {3, 2, 0, 0}};
  std::vector<std::size_t> n_k = {5, 5};
  const std::vector<double> p =
      lda::token_conditional({2, 0}, 0, n_kh, n_k, 1.0, 1.0, 4);
  if (p.size() != 2 || std::abs(p[0] - 0.6) > 1e-15 ||
      std::abs(p[1] - 0.4) > 1e-15)
    return {false, "worked conditional gave (" + fmt(p[0], 17) + ", " +
                       fmt(p[1], 17) + ")"};

  return {true,
          "100 sweeps conserved counts, single-topic chain fixed, worked "
          "conditional matches (0.6, 0.4) within 1e-15"};
}

// ------------------------------------------------------- planted recovery

Result criterion_planted_recovery() {
  const auto start = Clock::now();
  std::string tvs;
  double worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    planted::World world = planted::make(500, 4, 8, seed);
    lda::LdaConfig config;
    config.topic_count = 4;
    config.alpha = 0.5;  // short documents need a prior below 50/m
    config.beta = 0.01;
    config.burnin_sweeps = 200;
    config.sampling_sweeps = 100;
    config.seed = seed;
    lda::FitResult fit = lda::fit(world.corpus, config);
    const double tv = planted::aligned_tv(fit.model, world);
    worst = std::max(worst, tv);
    tvs += (tvs.empty() ? "" : ", ") + fmt(tv);
  }
  const double elapsed = seconds_since(start);
  const bool pass = worst <= 0.15 && elapsed <= 120.0;
  return {pass, "aligned total variation per seed: " + tvs + " (limit 0.15), " +
                    fmt(elapsed) + "s"};
}

// ------------------------------------------------------- metric oracles

Result criterion_metric_oracles() {
  Rng rng(404);
  const std::size_t vocab = 40;
  std::vector<metrics::SetPair> pairs;
  for (int i = 0; i < 200; ++i) {
    metrics::SetPair pair;
    pair.first = oracles::random_herb_set(rng, vocab, 12, true);
    pair.second = oracles::random_herb_set(rng, vocab, 12);
    pairs.push_back(std::move(pair));
  }
  for (const auto& [generated, real] : pairs) {
    const auto lib = metrics::similarity(generated, real);
    const auto ref = oracles::similarity(generated, real);
    if (lib.nc != ref.nc || lib.np != ref.np || lib.ng != ref.ng ||
        lib.p != ref.p || lib.r != ref.r || lib.iou != ref.iou)
      return {false, "similarity disagreed with the set oracle"};
  }
  const auto lib_counts = metrics::count_metrics(pairs);
  const auto ref_counts = oracles::count_metrics(pairs);
  if (lib_counts.nb_p != ref_counts.nb_p || lib_counts.nb_c != ref_counts.nb_c ||
      lib_counts.nb_d != ref_counts.nb_d ||
      lib_counts.nb_d_mean_abs != ref_counts.nb_d_mean_abs)
    return {false, "count metrics disagreed with the set oracle"};

  // 50-pair rule table: 25 beneficial, 25 taboo, disjoint
  metrics::PairRuleTable rules;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto draw_pair = [&]() {
    while (true) {
      std::size_t a = rng.uniform_index(vocab);
      std::size_t b = rng.uniform_index(vocab);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (seen.insert({a, b}).second) return std::make_pair(a, b);
    }
  };
  for (int i = 0; i < 25; ++i) rules.common.push_back(draw_pair());
  for (int i = 0; i < 25; ++i) rules.taboo.push_back(draw_pair());

  for (int i = 0; i < 200; ++i) {
    const auto prescription = oracles::random_herb_set(rng, vocab, 14, true);
    const auto lib = metrics::logic_score(prescription, rules);
    const auto ref = oracles::logic_score(prescription, rules);
    if (lib.s_pos != ref.s_pos || lib.s_neg != ref.s_neg ||
        lib.s_total != ref.s_pos + ref.s_neg)
      return {false, "logic score disagreed with the pair scanner"};
  }
  return {true,
          "200 similarity/count pairs and 200 rule scores match the oracles "
          "exactly"};
}

// ---------------------------------------------------- augmentation contract

Result criterion_augmentation() {
  Rng rng(550);
  std::vector<Tensor> images = {random_tensor({7, 6, 3}, rng, 0.0, 255.0),
                                random_tensor({5, 5, 3}, rng, 0.0, 255.0),
                                random_tensor({8, 4, 3}, rng, 0.0, 255.0)};

  augment::AugmentConfig zero;
  zero.rotation_range_deg = 0.0;
  zero.width_shift_range = 0.0;
  zero.height_shift_range = 0.0;
  zero.shear_range = 0.0;
  zero.zoom_range = 0.0;
  zero.horizontal_flip = false;
  zero.seed = 12;
  bool identity = true;
  std::size_t zero_count = 0;
  augment::augment_round(images, zero, 4, 3,
                         [&](std::size_t source, const augment::TransformParams&,
                             const Tensor& image) {
                           ++zero_count;
                           if (image.shape != images[source].shape ||
                               image.data != images[source].data)
                             identity = false;
                         });
  if (!identity || zero_count != 12)
    return {false, "zero-range distortion was not a bit-exact identity"};

  augment::AugmentConfig full;  // stock ranges
  full.seed = 34;
  std::size_t emitted = 0;
  augment::augment_round(images, full, 64, 200,
                         [&](std::size_t, const augment::TransformParams&,
                             const Tensor&) { ++emitted; });
  if (emitted != 12800)
    return {false, "64x200 regime emitted " + std::to_string(emitted)};

  Rng draw(33);
  double max_rot = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto params = augment::sample_params(draw, full, 32, 32);
    max_rot = std::max(max_rot, std::abs(params.rotation_deg));
    if (std::abs(params.rotation_deg) > 25.0)
      return {false, "rotation " + fmt(params.rotation_deg) +
                         " exceeded 25 degrees"};
  }
  return {true, "identity exact, 12800 samples emitted, max |rotation| " +
                    fmt(max_rot) + " degrees over 10000 draws"};
}

// ------------------------------------------------- synthetic learnability

struct SynthSplit {
  model::Dataset fit, valid;
  std::vector<metrics::SetPair> test_real;  // second = real herbs
  std::vector<Tensor> test_images;
  std::vector<lda::Prescription> train_prescriptions;
  lda::TopicModel topic_model;
};

SynthSplit prepare_synth_world(std::size_t samples, std::size_t train,
                               std::size_t valid_count, std::uint64_t seed,
                               bool aux_targets) {
  data::SynthConfig config;
  config.samples = samples;
  config.height = 32;
  config.width = 32;
  config.topic_count = 4;
  config.herbs_per_topic = 8;
  config.min_herbs = 3;
  config.max_herbs = 9;
  config.mixture_alpha = 0.2;
  config.noise = 0.05;
  config.seed = seed;
  data::SynthResult world = data::synth_generate(config);
  const std::size_t vocab = config.vocab_size();

  SynthSplit split;
  for (std::size_t i = 0; i < train; ++i)
    split.train_prescriptions.emplace_back(world.samples[i].herbs.begin(),
                                           world.samples[i].herbs.end());

  std::vector<lda::TopicDistribution> doc_topics;
  if (aux_targets) {
    lda::Corpus corpus;
    corpus.vocab_size = vocab;
    corpus.docs = split.train_prescriptions;
    lda::LdaConfig lc;
    lc.topic_count = 4;
    lc.alpha = 0.5;
    lc.beta = 0.01;
    lc.burnin_sweeps = 150;
    lc.sampling_sweeps = 75;
    lc.seed = seed;
    lda::FitResult fit = lda::fit(corpus, lc);
    split.topic_model = fit.model;
    doc_topics = fit.doc_topics;
  }

  auto label_of = [&](const data::SynthSample& s) {
    std::vector<double> label(vocab, 0.0);
    for (std::size_t h : s.herbs) label[h] = 1.0;
    return label;
  };
  const std::size_t fit_count = train - valid_count;
  for (std::size_t i = 0; i < train; ++i) {
    model::Dataset& set = i < fit_count ? split.fit : split.valid;
    set.images.push_back(world.samples[i].image);
    set.labels.push_back(label_of(world.samples[i]));
    if (aux_targets) set.topic_gt.push_back(doc_topics[i]);
  }
  for (std::size_t i = train; i < samples; ++i) {
    metrics::SetPair pair;
    pair.second.assign(world.samples[i].herbs.begin(),
                       world.samples[i].herbs.end());
    split.test_real.push_back(std::move(pair));
    split.test_images.push_back(world.samples[i].image);
  }
  return split;
}

std::vector<metrics::SetPair> predict_pairs(model::Model& net,
                                            const SynthSplit& split,
                                            double threshold) {
  std::vector<metrics::SetPair> pairs = split.test_real;
  const std::size_t batch_size = 32;
  const std::size_t height = net.spec.height, width = net.spec.width;
  for (std::size_t begin = 0; begin < pairs.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, pairs.size() - begin);
    Tensor batch({count, height, width, 3});
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor& image = split.test_images[begin + i];
      std::copy(image.data.begin(), image.data.end(),
                batch.data.begin() +
                    static_cast<std::ptrdiff_t>(i * image.size()));
    }
    auto fwd = model::forward(net, batch, Mode::Infer, nullptr);
    const Tensor& probs = fwd.herb_probs();
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<double> row(probs.shape[1]);
      for (std::size_t h = 0; h < row.size(); ++h) row[h] = probs.at2(i, h);
      pairs[begin + i].first =
          model::predict_prescription(row, threshold).herbs;
    }
  }
  return pairs;
}

double frequency_baseline_iou(const SynthSplit& split) {
  std::map<std::size_t, std::size_t> freq;
  double total_size = 0.0;
  for (const auto& doc : split.train_prescriptions) {
    total_size += static_cast<double>(doc.size());
    for (std::size_t h : doc) ++freq[h];
  }
  const std::size_t k = static_cast<std::size_t>(std::llround(
      total_size / static_cast<double>(split.train_prescriptions.size())));
  std::vector<std::pair<std::size_t, std::size_t>> ranked;  // (count, herb)
  for (const auto& [herb, count] : freq) ranked.push_back({count, herb});
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < k && i < ranked.size(); ++i)
    top.push_back(ranked[i].second);
  std::sort(top.begin(), top.end());

  std::vector<metrics::SetPair> pairs = split.test_real;
  for (auto& pair : pairs) pair.first = top;
  return metrics::build_report(pairs, nullptr, 0).iou_sim;
}

Result criterion_learnability() {
  const auto start = Clock::now();
  SynthSplit split = prepare_synth_world(1200, 1000, 100, 1207, true);

  const model::ArchitectureSpec spec = model::ArchitectureSpec::mini_preset(
      model::Variant::DualChannelAux, 32, 4);
  model::TrainConfig tc;
  tc.lambda = 0.5;
  tc.epochs = 30;
  tc.batch_size = 32;
  tc.seed = 1207;
  model::Model net = model::build_model(spec, 1207);
  model::train(net, split.fit, split.valid, tc);

  const auto pairs = predict_pairs(net, split, tc.threshold);
  const double model_iou = metrics::build_report(pairs, nullptr, 0).iou_sim;
  const double baseline_iou = frequency_baseline_iou(split);

  const double elapsed = seconds_since(start);
  const bool pass = model_iou >= 2.0 * baseline_iou && elapsed <= 900.0;
  return {pass, "held-out IoU " + fmt(model_iou) + " vs frequency baseline " +
                    fmt(baseline_iou) + " (need 2x), " + fmt(elapsed) + "s"};
}

// --------------------------------------------------- auxiliary-loss trend

Result criterion_aux_trend() {
  const auto start = Clock::now();
  const std::vector<model::Variant> variants = {
      model::Variant::SingleChannel, model::Variant::DualChannel,
      model::Variant::DualChannelAux};
  std::map<std::string, std::vector<double>> iou, klt;

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSplit split = prepare_synth_world(1200, 1000, 100, 9000 + seed, true);
    for (model::Variant variant : variants) {
      const bool aux = variant == model::Variant::DualChannelAux;
      const model::ArchitectureSpec spec =
          model::ArchitectureSpec::mini_preset(variant, 32, aux ? 4 : 0);
      model::Dataset fit = split.fit, valid = split.valid;
      if (!aux) {
        fit.topic_gt.clear();
        valid.topic_gt.clear();
      }
      model::TrainConfig tc;
      tc.lambda = aux ? 0.5 : 0.0;
      tc.epochs = 30;
      tc.batch_size = 32;
      tc.seed = seed;
      model::Model net = model::build_model(spec, seed);
      model::train(net, fit, valid, tc);
      const auto pairs = predict_pairs(net, split, tc.threshold);
      const auto report =
          metrics::build_report(pairs, &split.topic_model, seed);
      const std::string name = model::variant_name(variant);
      iou[name].push_back(report.iou_sim);
      klt[name].push_back(report.kl_t);
    }
  }

  std::cout << "  variant      iou_sim            kl_t\n";
  for (model::Variant variant : variants) {
    const std::string name = model::variant_name(variant);
    const auto is = metrics::fold_stat(iou[name]);
    const auto ks = metrics::fold_stat(klt[name]);
    std::ostringstream row;
    row << "  " << name;
    for (std::size_t pad = name.size(); pad < 13; ++pad) row << ' ';
    row << fmt(is.mean) << " ± " << fmt(is.stddev) << "    " << fmt(ks.mean)
        << " ± " << fmt(ks.stddev);
    std::cout << row.str() << "\n";
  }

  const auto aux_iou = metrics::fold_stat(iou["dual_aux"]);
  const auto dual_iou = metrics::fold_stat(iou["dual"]);
  const auto aux_kl = metrics::fold_stat(klt["dual_aux"]);
  const auto single_kl = metrics::fold_stat(klt["single"]);
  const double pooled = std::sqrt(
      (aux_iou.stddev * aux_iou.stddev + dual_iou.stddev * dual_iou.stddev) /
      2.0);
  const bool iou_ok = aux_iou.mean >= dual_iou.mean - pooled;
  const bool kl_ok = aux_kl.mean <= single_kl.mean;
  const bool strict = aux_iou.mean > dual_iou.mean;
  std::string detail = "aux IoU " + fmt(aux_iou.mean) + " vs dual " +
                       fmt(dual_iou.mean) + " (pooled std " + fmt(pooled) +
                       "), aux kl_t " + fmt(aux_kl.mean) + " vs single " +
                       fmt(single_kl.mean) + "; strict IoU ordering " +
                       (strict ? "held" : "NOT held (logged, tolerated)") +
                       ", " + fmt(seconds_since(start)) + "s";
  return {iou_ok && kl_ok, detail};
}

// ----------------------------------------------------- protocol fidelity

Result criterion_protocol() {
  // fold geometry at the clinical-scale counts
  const auto folds = data::make_folds(9585, 5, 500, 0.1, 77);
  if (folds.size() != 5) return {false, "expected 5 folds"};
  std::set<std::size_t> all_test;
  for (const auto& fold : folds) {
    if (fold.test.size() != 500)
      return {false, "test fold size " + std::to_string(fold.test.size())};
    if (fold.train.size() != 9085)
      return {false, "train size " + std::to_string(fold.train.size())};
    std::set<std::size_t> test_ids(fold.test.begin(), fold.test.end());
    for (std::size_t id : fold.test)
      if (!all_test.insert(id).second)
        return {false, "test folds overlap"};
    for (std::size_t id : fold.train)
      if (test_ids.count(id))
        return {false, "train and test share an id"};
    std::set<std::size_t> train_ids(fold.train.begin(), fold.train.end());
    for (std::size_t id : fold.valid)
      if (!train_ids.count(id))
        return {false, "validation id outside the training split"};
  }

  // checkpoint round trip, file level
  const fs::path dir =
      fs::temp_directory_path() / "tonguerx_acceptance_protocol";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const model::ArchitectureSpec spec = model::ArchitectureSpec::mini_preset(
      model::Variant::DualChannelAux, 12, 3);
  model::Checkpoint original;
  original.model = model::build_model(spec, 91);
  original.epoch = 4;
  original.vocab_hash = 0xabcdef0123456789ULL;
  const std::string first = (dir / "a.bin").string();
  const std::string second = (dir / "b.bin").string();
  model::save_checkpoint(original, first);
  model::Checkpoint loaded = model::load_checkpoint(first, &spec);
  model::save_checkpoint(loaded, second);
  auto bytes = [](const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  if (bytes(first) != bytes(second))
    return {false, "checkpoint round trip changed bytes"};
  for (std::size_t i = 0; i < original.model.params.size(); ++i)
    if (loaded.model.params[i].data != original.model.params[i].data)
      return {false, "checkpoint round trip changed a parameter"};

  // command reruns: identical effective configs must write identical bytes,
  // and the output must not depend on where the run directory lives
  commands::RunConfig config;
  config.out = (dir / "runs_a").string();
  config.seed = 5;
  config.fold_count = 2;
  config.test_size = 4;
  config.synth.samples = 24;
  config.synth.topic_count = 2;
  config.synth.herbs_per_topic = 4;
  config.synth.min_herbs = 2;
  config.synth.max_herbs = 4;
  config.lda_topics = 2;
  config.lda_alpha = 0.5;
  config.lda_burnin = 20;
  config.lda_sampling = 10;

  const std::string synth_a = commands::cmd_synth(config);
  const std::string manifest_bytes = bytes(synth_a + "/manifest.tsv");
  const std::string png_bytes = bytes(synth_a + "/images/synth_000000.png");
  commands::cmd_synth(config);  // rerun into the same directory
  if (bytes(synth_a + "/manifest.tsv") != manifest_bytes ||
      bytes(synth_a + "/images/synth_000000.png") != png_bytes)
    return {false, "synth rerun changed bytes"};

  config.manifest = synth_a + "/manifest.tsv";
  const std::string lda_a = commands::cmd_lda_fit(config);
  const std::string model_bytes = bytes(lda_a + "/topic_model.bin");
  const std::string topics_bytes = bytes(lda_a + "/doc_topics.csv");
  commands::cmd_lda_fit(config);
  if (bytes(lda_a + "/topic_model.bin") != model_bytes ||
      bytes(lda_a + "/doc_topics.csv") != topics_bytes)
    return {false, "topic-model rerun changed bytes"};

  commands::RunConfig moved = config;
  moved.out = (dir / "runs_b").string();
  const std::string lda_b = commands::cmd_lda_fit(moved);
  if (bytes(lda_b + "/topic_model.bin") != model_bytes ||
      bytes(lda_b + "/doc_topics.csv") != topics_bytes)
    return {false, "moving the run directory changed output bytes"};

  fs::remove_all(dir);
  return {true,
          "folds disjoint at 9585/5x500/9085, checkpoint bytes stable, "
          "reruns byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int number;
    const char* title;
    std::function<Result()> run;
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<Criterion> criteria = {
      {1, "analytic gradients match central finite differences",
       criterion_gradients},
      {2, "topic divergence identities", criterion_kl_identities},
      {3, "collapsed sampler invariants", criterion_gibbs_invariants},
      {4, "planted topics recovered within tolerance",
       criterion_planted_recovery},
      {5, "evaluation metrics equal brute-force oracles",
       criterion_metric_oracles},
      {6, "distortion regime contract", criterion_augmentation},
      {7, "synthetic end-to-end learnability beats frequency baseline",
       criterion_learnability},
      {8, "auxiliary-loss trend across seeds", criterion_aux_trend},
      {9, "fold protocol, checkpoints, rerun determinism",
       criterion_protocol},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    if (!only.empty() && !only.count(criterion.number)) continue;
    const auto start = Clock::now();
    Result result;
    try {
      result = criterion.run();
    } catch (const std::exception& e) {
      result = {false, std::string("unhandled error: ") + e.what()};
    }
    if (!result.pass) ++failures;
    std::cout << (result.pass ? "[PASS]" : "[FAIL]") << " criterion "
              << criterion.number << ": " << criterion.title << " ("
              << fmt(seconds_since(start)) << "s) - " << result.detail
              << "\n";
    std::cout.flush();
  }
  if (failures > 0)
    std::cout << failures << " criterion(s) failed\n";
  else
    std::cout << "all criteria passed\n";
  return failures == 0 ? 0 : 1;
}
