#include "tonguerx/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tonguerx/image_io.hpp"
#include "tonguerx/rng.hpp"

namespace tonguerx::data {

namespace {

constexpr double kIntensityFloor = 0.15;

// Six saturated tints, cycled when there are more topics than tints.
constexpr int kTints[6][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                              {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : line) {
    if (c == sep) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct GridLayout {
  std::size_t rows;
  std::size_t cols;
};

GridLayout grid_for(std::size_t topics) {
  GridLayout g;
  g.cols = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(topics))));
  g.rows = (topics + g.cols - 1) / g.cols;
  return g;
}

// Shape < 1 handled through the alpha-boost identity.
double draw_gamma(Rng& rng, double shape) {
  if (shape < 1.0) {
    const double u = rng.uniform();
    return draw_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

std::vector<double> draw_dirichlet(Rng& rng, std::size_t m, double alpha) {
  std::vector<double> pi(m);
  double total = 0.0;
  for (double& v : pi) {
    v = draw_gamma(rng, alpha);
    total += v;
  }
  if (total < 1e-300) {
    std::fill(pi.begin(), pi.end(), 1.0 / static_cast<double>(m));
    return pi;
  }
  for (double& v : pi) v /= total;
  return pi;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot read " + path);
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split(line, '\t');
    if (fields.size() != 3)
      throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                  ": expected 3 tab-separated fields");
    ManifestRow row;
    row.id = trim(fields[0]);
    row.image_path = trim(fields[1]);
    if (row.id.empty() || row.image_path.empty())
      throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                  ": empty id or image path");
    if (!seen.insert(row.id).second)
      throw std::invalid_argument("manifest: duplicate id '" + row.id + "'");
    for (const std::string& herb : split(fields[2], '|')) {
      const std::string name = trim(herb);
      if (!name.empty()) row.herbs.push_back(name);
    }
    if (row.herbs.empty())
      throw std::invalid_argument("manifest sample '" + row.id +
                                  "': empty herb list");
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("manifest: cannot write " + path);
  for (const ManifestRow& row : rows) {
    os << row.id << '\t' << row.image_path << '\t';
    for (std::size_t i = 0; i < row.herbs.size(); ++i) {
      if (i) os << '|';
      os << row.herbs[i];
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("manifest: write failed for " + path);
}

LoadedDataset load_manifest(const std::string& path,
                            const lda::HerbVocabulary& vocab,
                            std::size_t height, std::size_t width) {
  if (height == 0 || width == 0)
    throw std::invalid_argument("load: target extents must be positive");
  const std::vector<ManifestRow> rows = read_manifest(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  std::set<std::string> unknown;
  for (const ManifestRow& row : rows)
    for (const std::string& herb : row.herbs)
      if (!vocab.contains(herb)) unknown.insert(herb);
  if (!unknown.empty()) {
    std::string msg = "manifest: unknown herb names:";
    for (const std::string& name : unknown) msg += " '" + name + "'";
    throw std::invalid_argument(msg);
  }

  LoadedDataset out;
  out.height = height;
  out.width = width;
  for (const ManifestRow& row : rows) {
    LoadedSample sample;
    sample.id = row.id;
    const std::filesystem::path image_path = base / row.image_path;
    Tensor raw;
    try {
      raw = imageio::read_png(image_path.string());
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest sample '" + row.id +
                               "': " + e.what());
    }
    Tensor resized = resize_area(raw, height, width);
    for (double& v : resized.data) v /= 255.0;
    sample.image = std::move(resized);

    std::set<std::size_t> ids;
    for (const std::string& herb : row.herbs) ids.insert(vocab.id_of(herb));
    sample.herbs.assign(ids.begin(), ids.end());
    out.samples.push_back(std::move(sample));
  }
  return out;
}

Tensor resize_area(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3)
    throw std::invalid_argument("resize: expected a [H,W,C] image");
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("resize: target extents must be positive");
  const std::size_t in_h = image.shape[0];
  const std::size_t in_w = image.shape[1];
  const std::size_t channels = image.shape[2];
  if (in_h == out_h && in_w == out_w) return image;

  const double scale_y = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double scale_x = static_cast<double>(in_w) / static_cast<double>(out_w);
  Tensor out({out_h, out_w, channels});
  for (std::size_t ty = 0; ty < out_h; ++ty) {
    const double y0 = static_cast<double>(ty) * scale_y;
    const double y1 = static_cast<double>(ty + 1) * scale_y;
    const std::size_t ya = static_cast<std::size_t>(y0);
    const std::size_t yb = std::min(
        in_h, static_cast<std::size_t>(std::ceil(y1)));
    for (std::size_t tx = 0; tx < out_w; ++tx) {
      const double x0 = static_cast<double>(tx) * scale_x;
      const double x1 = static_cast<double>(tx + 1) * scale_x;
      const std::size_t xa = static_cast<std::size_t>(x0);
      const std::size_t xb = std::min(
          in_w, static_cast<std::size_t>(std::ceil(x1)));
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        double area = 0.0;
        for (std::size_t y = ya; y < yb; ++y) {
          const double wy = std::min(y1, static_cast<double>(y + 1)) -
                            std::max(y0, static_cast<double>(y));
          for (std::size_t x = xa; x < xb; ++x) {
            const double wx = std::min(x1, static_cast<double>(x + 1)) -
                              std::max(x0, static_cast<double>(x));
            acc += wy * wx * image.data[(y * in_w + x) * channels + c];
            area += wy * wx;
          }
        }
        out.data[(ty * out_w + tx) * channels + c] = acc / area;
      }
    }
  }
  return out;
}

std::vector<double> label_vector(const lda::Prescription& herbs,
                                 std::size_t vocab_size) {
  std::vector<double> label(vocab_size, 0.0);
  for (std::size_t id : herbs) {
    if (id >= vocab_size)
      throw std::invalid_argument("label: herb id out of range");
    label[id] = 1.0;
  }
  return label;
}

std::vector<FoldSplit> make_folds(std::size_t count, std::size_t fold_count,
                                  std::size_t test_size, double valid_fraction,
                                  std::uint64_t seed) {
  if (fold_count == 0 || test_size == 0)
    throw std::invalid_argument("folds: fold count and test size must be positive");
  if (valid_fraction < 0.0 || valid_fraction >= 1.0)
    throw std::invalid_argument("folds: validation fraction must be in [0,1)");
  if (fold_count * test_size > count)
    throw std::invalid_argument(
        "folds: not enough samples for the requested disjoint test sets");

  Rng rng(seed);
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<FoldSplit> splits;
  for (std::size_t f = 0; f < fold_count; ++f) {
    FoldSplit split;
    split.fold = f;
    const std::size_t begin = f * test_size;
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                      order.begin() + static_cast<std::ptrdiff_t>(begin + test_size));
    std::sort(split.test.begin(), split.test.end());
    for (std::size_t i = 0; i < count; ++i)
      if (i < begin || i >= begin + test_size) split.train.push_back(order[i]);
    std::sort(split.train.begin(), split.train.end());

    const std::size_t valid_count = static_cast<std::size_t>(
        valid_fraction * static_cast<double>(split.train.size()));
    if (valid_count > 0) {
      std::vector<std::size_t> pool = split.train;
      rng.shuffle(pool);
      split.valid.assign(pool.begin(),
                         pool.begin() + static_cast<std::ptrdiff_t>(valid_count));
      std::sort(split.valid.begin(), split.valid.end());
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

DatasetStats dataset_stats(const std::vector<lda::Prescription>& prescriptions,
                           std::size_t vocab_size,
                           std::size_t common_threshold) {
  if (prescriptions.empty())
    throw std::invalid_argument("stats: empty dataset");
  if (vocab_size == 0) throw std::invalid_argument("stats: empty vocabulary");

  DatasetStats stats;
  stats.samples = prescriptions.size();
  stats.vocab_size = vocab_size;
  stats.min_herbs = prescriptions.front().size();
  std::vector<std::size_t> appearances(vocab_size, 0);
  std::size_t total = 0;
  for (const lda::Prescription& p : prescriptions) {
    stats.max_herbs = std::max(stats.max_herbs, p.size());
    stats.min_herbs = std::min(stats.min_herbs, p.size());
    total += p.size();
    for (std::size_t id : p) {
      if (id >= vocab_size)
        throw std::invalid_argument("stats: herb id out of range");
      ++appearances[id];
    }
  }
  stats.mean_herbs =
      static_cast<double>(total) / static_cast<double>(stats.samples);
  stats.mean_appearances =
      static_cast<double>(total) / static_cast<double>(vocab_size);
  std::size_t common = 0;
  for (std::size_t count : appearances)
    if (count > common_threshold) ++common;
  stats.common_fraction =
      static_cast<double>(common) / static_cast<double>(vocab_size);
  return stats;
}

std::string stats_csv(const DatasetStats& stats) {
  std::ostringstream out;
  out.precision(17);
  out << "statistic,value\n";
  out << "samples," << stats.samples << '\n';
  out << "herb_dictionary_size," << stats.vocab_size << '\n';
  out << "max_herbs_per_prescription," << stats.max_herbs << '\n';
  out << "min_herbs_per_prescription," << stats.min_herbs << '\n';
  out << "mean_herbs_per_prescription," << stats.mean_herbs << '\n';
  out << "mean_appearances_per_herb," << stats.mean_appearances << '\n';
  out << "common_herb_fraction," << stats.common_fraction << '\n';
  return out.str();
}

void SynthConfig::validate() const {
  if (samples == 0) throw std::invalid_argument("synth: sample count must be positive");
  if (topic_count == 0 || herbs_per_topic == 0)
    throw std::invalid_argument("synth: topic layout must be positive");
  if (min_herbs < 2)
    throw std::invalid_argument("synth: prescriptions need at least 2 herbs");
  if (max_herbs < min_herbs)
    throw std::invalid_argument("synth: herb count range is inverted");
  if (max_herbs > vocab_size())
    throw std::invalid_argument(
        "synth: max herbs exceeds the synthetic vocabulary");
  if (mixture_alpha <= 0.0)
    throw std::invalid_argument("synth: mixture concentration must be positive");
  if (noise < 0.0 || noise > 0.5)
    throw std::invalid_argument("synth: noise level must be in [0, 0.5]");
  const GridLayout grid = grid_for(topic_count);
  if (height < grid.rows || width < grid.cols)
    throw std::invalid_argument("synth: image too small for the topic grid");
}

Tensor render_topic_image(const std::vector<double>& mixture,
                          const SynthConfig& config) {
  if (mixture.size() != config.topic_count)
    throw std::invalid_argument("render: mixture width mismatch");
  const GridLayout grid = grid_for(config.topic_count);
  Tensor image = Tensor::full({config.height, config.width, 3},
                              kIntensityFloor);
  for (std::size_t j = 0; j < config.topic_count; ++j) {
    const std::size_t row = j / grid.cols;
    const std::size_t col = j % grid.cols;
    const std::size_t y0 = row * config.height / grid.rows;
    const std::size_t y1 = (row + 1) * config.height / grid.rows;
    const std::size_t x0 = col * config.width / grid.cols;
    const std::size_t x1 = (col + 1) * config.width / grid.cols;
    const int* tint = kTints[j % 6];
    const double level = kIntensityFloor + (1.0 - kIntensityFloor) * mixture[j];
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          if (tint[c]) image.data[(y * config.width + x) * 3 + c] = level;
  }
  return image;
}

std::size_t probe_dominant_topic(const Tensor& image,
                                 const SynthConfig& config) {
  if (image.rank() != 3 || image.shape[0] != config.height ||
      image.shape[1] != config.width || image.shape[2] != 3)
    throw std::invalid_argument("probe: image extents mismatch");
  const GridLayout grid = grid_for(config.topic_count);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t j = 0; j < config.topic_count; ++j) {
    const std::size_t row = j / grid.cols;
    const std::size_t col = j % grid.cols;
    const std::size_t y0 = row * config.height / grid.rows;
    const std::size_t y1 = (row + 1) * config.height / grid.rows;
    const std::size_t x0 = col * config.width / grid.cols;
    const std::size_t x1 = (col + 1) * config.width / grid.cols;
    const int* tint = kTints[j % 6];
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          if (tint[c]) {
            acc += image.data[(y * config.width + x) * 3 + c];
            ++count;
          }
    const double score = acc / static_cast<double>(count);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

SynthResult synth_generate(const SynthConfig& config) {
  config.validate();

  SynthResult result;
  std::vector<std::vector<std::string>> name_rows(1);
  for (std::size_t h = 0; h < config.vocab_size(); ++h) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "herb_%03zu", h);
    name_rows[0].push_back(buf);
  }
  result.vocab = lda::build_vocabulary(name_rows, {});

  Rng rng(config.seed);
  for (std::size_t i = 0; i < config.samples; ++i) {
    SynthSample sample;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "synth_%06zu", i);
    sample.id = buf;
    sample.mixture =
        draw_dirichlet(rng, config.topic_count, config.mixture_alpha);

    const std::size_t want =
        config.min_herbs +
        rng.uniform_index(config.max_herbs - config.min_herbs + 1);
    std::set<std::size_t> picked;
    while (picked.size() < want) {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t topic = config.topic_count - 1;
      for (std::size_t j = 0; j < config.topic_count; ++j) {
        cum += sample.mixture[j];
        if (u < cum) {
          topic = j;
          break;
        }
      }
      picked.insert(topic * config.herbs_per_topic +
                    rng.uniform_index(config.herbs_per_topic));
    }
    sample.herbs.assign(picked.begin(), picked.end());

    sample.image = render_topic_image(sample.mixture, config);
    if (config.noise > 0.0)
      for (double& v : sample.image.data)
        v = std::clamp(v + config.noise * (2.0 * rng.uniform() - 1.0), 0.0,
                       1.0);
    result.samples.push_back(std::move(sample));
  }

  // The planted topic-herb model: equal mass on each block's herbs.
  result.planted.topic_count = config.topic_count;
  result.planted.alpha = 0.5;
  result.planted.beta = 0.01;
  result.planted.vocab_hash = result.vocab.hash();
  result.planted.vocab_size = config.vocab_size();
  result.planted.n_kh.assign(
      config.topic_count, std::vector<std::uint64_t>(config.vocab_size(), 0));
  result.planted.n_k.assign(config.topic_count, 0);
  constexpr std::uint64_t kMass = 1000;
  for (std::size_t j = 0; j < config.topic_count; ++j) {
    for (std::size_t h = 0; h < config.herbs_per_topic; ++h)
      result.planted.n_kh[j][j * config.herbs_per_topic + h] = kMass;
    result.planted.n_k[j] = kMass * config.herbs_per_topic;
  }
  return result;
}

}  // namespace tonguerx::data
