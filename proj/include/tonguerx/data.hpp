#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tonguerx/lda.hpp"
#include "tonguerx/tensor.hpp"

namespace tonguerx::data {

/// One manifest line: sample id, image path, raw herb names.
struct ManifestRow {
  std::string id;
  std::string image_path;
  std::vector<std::string> herbs;
};

/// Parses the tab-separated manifest (id, image path, "|"-joined herb names)
/// without touching the referenced images.
std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<ManifestRow>& rows);

struct LoadedSample {
  std::string id;
  Tensor image;  // [H,W,3], scaled to [0,1]
  lda::Prescription herbs;
};

struct LoadedDataset {
  std::vector<LoadedSample> samples;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return samples.size(); }
};

/// Decodes, resizes, and scales every image in the manifest; herb names are
/// folded through the vocabulary's alias map into sorted id sets. Image paths
/// are resolved relative to the manifest's directory.
LoadedDataset load_manifest(const std::string& path,
                            const lda::HerbVocabulary& vocab,
                            std::size_t height, std::size_t width);

/// Box-filter resampling with exact fractional pixel coverage; resizing to the
/// source extents is the identity.
Tensor resize_area(const Tensor& image, std::size_t out_h, std::size_t out_w);

std::vector<double> label_vector(const lda::Prescription& herbs,
                                 std::size_t vocab_size);

struct FoldSplit {
  std::size_t fold = 0;
  std::vector<std::size_t> test;
  std::vector<std::size_t> train;  // everything outside this fold's test slice
  std::vector<std::size_t> valid;  // subset of train, for checkpoint selection
};

/// Deterministic disjoint test slices: one shuffle of [0, count) cut into
/// fold-sized pieces, remainder as training, a seeded fraction of training
/// reserved for validation.
std::vector<FoldSplit> make_folds(std::size_t count, std::size_t fold_count,
                                  std::size_t test_size, double valid_fraction,
                                  std::uint64_t seed);

struct DatasetStats {
  std::size_t samples = 0;
  std::size_t vocab_size = 0;
  std::size_t max_herbs = 0;
  std::size_t min_herbs = 0;
  double mean_herbs = 0.0;
  double mean_appearances = 0.0;
  double common_fraction = 0.0;  // herbs appearing in > threshold prescriptions
};

DatasetStats dataset_stats(const std::vector<lda::Prescription>& prescriptions,
                           std::size_t vocab_size,
                           std::size_t common_threshold = 100);
std::string stats_csv(const DatasetStats& stats);

/// Synthetic world with planted topics: disjoint blocks of herbs, one tinted
/// image region per topic, block brightness encoding the mixture weight.
struct SynthConfig {
  std::size_t samples = 1000;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t topic_count = 4;
  std::size_t herbs_per_topic = 8;
  std::size_t min_herbs = 2;
  std::size_t max_herbs = 12;
  double mixture_alpha = 0.3;
  double noise = 0.05;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return topic_count * herbs_per_topic; }
  void validate() const;
};

struct SynthSample {
  std::string id;
  Tensor image;  // [H,W,3], scaled to [0,1]
  lda::Prescription herbs;
  std::vector<double> mixture;  // planted topic weights, sums to 1
};

struct SynthResult {
  lda::HerbVocabulary vocab;
  std::vector<SynthSample> samples;
  lda::TopicModel planted;
};

SynthResult synth_generate(const SynthConfig& config);

/// Noise-free rendering of a topic mixture: the grid cell of topic j carries
/// floor + (1 - floor)·mixture[j] on its tinted channels, floor elsewhere.
Tensor render_topic_image(const std::vector<double>& mixture,
                          const SynthConfig& config);

/// Fixed linear readout of the dominant topic from block-mean intensities.
std::size_t probe_dominant_topic(const Tensor& image,
                                 const SynthConfig& config);

}  // namespace tonguerx::data
