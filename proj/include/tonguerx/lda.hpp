#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tonguerx/rng.hpp"

namespace tonguerx::lda {

/// Canonical herb dictionary shared by training and test data. Ids are dense,
/// assigned by lexicographic order of the canonical names, so the same inputs
/// always produce the same ids.
struct HerbVocabulary {
  std::vector<std::string> names;
  std::unordered_map<std::string, std::size_t> ids;
  std::unordered_map<std::string, std::string> aliases;

  std::size_t size() const { return names.size(); }

  /// Resolves aliases, throws std::invalid_argument for unknown names.
  std::size_t id_of(const std::string& name) const;
  bool contains(const std::string& name) const;

  /// FNV-1a over the canonical name list; persisted with topic models so a
  /// model is never applied against a different dictionary.
  std::uint64_t hash() const;
};

HerbVocabulary build_vocabulary(
    const std::vector<std::vector<std::string>>& raw_prescriptions,
    const std::vector<std::pair<std::string, std::string>>& aliases);

/// A prescription is a set of herb ids (sorted, unique).
using Prescription = std::vector<std::size_t>;

struct Corpus {
  std::vector<Prescription> docs;
  std::size_t vocab_size = 0;

  std::size_t token_count() const;
};

struct LdaConfig {
  std::size_t topic_count = 16;
  double alpha = 50.0 / 16.0;
  double beta = 0.01;
  std::size_t burnin_sweeps = 200;
  std::size_t sampling_sweeps = 100;
  std::uint64_t seed = 0;

  /// Conventional priors for a given topic count: alpha = 50/m, beta = 0.01.
  static LdaConfig defaults(std::size_t m, std::uint64_t seed = 0);
};

struct GibbsState {
  std::vector<std::vector<std::size_t>> z;     // per doc, per token
  std::vector<std::vector<std::size_t>> n_pk;  // doc x topic
  std::vector<std::vector<std::size_t>> n_kh;  // topic x herb
  std::vector<std::size_t> n_k;                // per-topic totals
};

/// Throws std::invalid_argument when the redundant counts disagree with the
/// assignments.
void check_state(const GibbsState& state, const Corpus& corpus,
                 std::size_t topic_count);

GibbsState init_state(const Corpus& corpus, const LdaConfig& config, Rng& rng);

/// One full pass: every token is decremented out of the counts, resampled from
/// the collapsed conditional, and re-incremented.
void gibbs_sweep(GibbsState& state, const Corpus& corpus,
                 const LdaConfig& config, Rng& rng);

/// Normalized collapsed conditional for one token of one document, with the
/// token itself already removed from all counts.
std::vector<double> token_conditional(
    const std::vector<std::size_t>& doc_counts, std::size_t herb,
    const std::vector<std::vector<std::size_t>>& n_kh,
    const std::vector<std::size_t>& n_k, double alpha, double beta,
    std::size_t vocab_size);

using TopicDistribution = std::vector<double>;

/// Smoothed per-document distribution: (count_k + alpha) / (total + m*alpha).
TopicDistribution doc_topic_distribution(const std::vector<std::size_t>& counts,
                                         double alpha, std::size_t m);

struct TopicModel {
  std::size_t topic_count = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t vocab_hash = 0;
  std::size_t vocab_size = 0;
  std::vector<std::vector<std::uint64_t>> n_kh;  // topic x herb
  std::vector<std::uint64_t> n_k;                // row sums of n_kh

  /// Smoothed topic-herb probability (n_kh + beta) / (n_k + n*beta).
  double phi(std::size_t k, std::size_t h) const;
  std::vector<double> phi_row(std::size_t k) const;
};

struct FitResult {
  TopicModel model;
  std::vector<TopicDistribution> doc_topics;
};

FitResult fit(const Corpus& corpus, const LdaConfig& config);

/// Fold-in inference on a frozen model: only the document's own topic counts
/// move. 50 sweeps, distributions averaged over the last 25. Herb ids outside
/// the model's vocabulary are dropped with a warning on stderr.
TopicDistribution infer_topics(const TopicModel& model,
                               const Prescription& prescription,
                               std::uint64_t seed);

/// Mean directed divergence (1/m) * sum_k p_k * log(p_k / g_k).
/// Bitwise-equal inputs give exactly zero.
double kl_topics(const TopicDistribution& p, const TopicDistribution& g);

void save_topic_model(const TopicModel& model, const std::string& path);
TopicModel load_topic_model(const std::string& path);

}  // namespace tonguerx::lda
