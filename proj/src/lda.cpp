#include "tonguerx/lda.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "tonguerx/binio.hpp"

namespace tonguerx::lda {

namespace {

constexpr char kModelMagic[5] = "RXT1";
constexpr std::uint32_t kModelVersion = 1;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::size_t HerbVocabulary::id_of(const std::string& name) const {
  auto alias = aliases.find(name);
  const std::string& canonical = alias == aliases.end() ? name : alias->second;
  auto it = ids.find(canonical);
  if (it == ids.end())
    throw std::invalid_argument("vocabulary: unknown herb name '" + name + "'");
  return it->second;
}

bool HerbVocabulary::contains(const std::string& name) const {
  auto alias = aliases.find(name);
  const std::string& canonical = alias == aliases.end() ? name : alias->second;
  return ids.count(canonical) != 0;
}

std::uint64_t HerbVocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::string& name : names) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

HerbVocabulary build_vocabulary(
    const std::vector<std::vector<std::string>>& raw_prescriptions,
    const std::vector<std::pair<std::string, std::string>>& aliases) {
  require(!raw_prescriptions.empty(), "vocabulary: no prescriptions");

  HerbVocabulary vocab;
  for (const auto& [variant, canonical] : aliases) {
    require(variant != canonical, "vocabulary: alias maps a name to itself");
    auto [it, fresh] = vocab.aliases.emplace(variant, canonical);
    if (!fresh && it->second != canonical)
      throw std::invalid_argument("vocabulary: alias '" + variant +
                                  "' resolves to two canonical names");
  }
  for (const auto& [variant, canonical] : vocab.aliases)
    if (vocab.aliases.count(canonical))
      throw std::invalid_argument("vocabulary: alias target '" + canonical +
                                  "' is itself an alias (chain or cycle)");

  std::set<std::string> canonical_names;
  for (const auto& prescription : raw_prescriptions)
    for (const std::string& name : prescription) {
      auto alias = vocab.aliases.find(name);
      canonical_names.insert(alias == vocab.aliases.end() ? name
                                                          : alias->second);
    }
  for (const auto& [variant, canonical] : vocab.aliases)
    if (!canonical_names.count(canonical))
      throw std::invalid_argument("vocabulary: alias target '" + canonical +
                                  "' names no known herb");

  vocab.names.assign(canonical_names.begin(), canonical_names.end());
  for (std::size_t i = 0; i < vocab.names.size(); ++i)
    vocab.ids.emplace(vocab.names[i], i);
  return vocab;
}

std::size_t Corpus::token_count() const {
  std::size_t total = 0;
  for (const auto& doc : docs) total += doc.size();
  return total;
}

LdaConfig LdaConfig::defaults(std::size_t m, std::uint64_t seed) {
  LdaConfig config;
  config.topic_count = m;
  config.alpha = 50.0 / static_cast<double>(m);
  config.seed = seed;
  return config;
}

void check_state(const GibbsState& state, const Corpus& corpus,
                 std::size_t topic_count) {
  const std::size_t docs = corpus.docs.size();
  require(state.z.size() == docs && state.n_pk.size() == docs,
          "gibbs state: document count mismatch");
  require(state.n_kh.size() == topic_count && state.n_k.size() == topic_count,
          "gibbs state: topic count mismatch");

  std::vector<std::vector<std::size_t>> n_pk(docs,
                                             std::vector<std::size_t>(topic_count, 0));
  std::vector<std::vector<std::size_t>> n_kh(
      topic_count, std::vector<std::size_t>(corpus.vocab_size, 0));
  std::vector<std::size_t> n_k(topic_count, 0);
  for (std::size_t d = 0; d < docs; ++d) {
    require(state.z[d].size() == corpus.docs[d].size(),
            "gibbs state: token count mismatch");
    for (std::size_t i = 0; i < state.z[d].size(); ++i) {
      const std::size_t k = state.z[d][i];
      require(k < topic_count, "gibbs state: topic id out of range");
      ++n_pk[d][k];
      ++n_kh[k][corpus.docs[d][i]];
      ++n_k[k];
    }
  }
  require(n_pk == state.n_pk, "gibbs state: document-topic counts inconsistent");
  require(n_kh == state.n_kh, "gibbs state: topic-herb counts inconsistent");
  require(n_k == state.n_k, "gibbs state: topic totals inconsistent");
}

GibbsState init_state(const Corpus& corpus, const LdaConfig& config, Rng& rng) {
  const std::size_t m = config.topic_count;
  GibbsState state;
  state.z.resize(corpus.docs.size());
  state.n_pk.assign(corpus.docs.size(), std::vector<std::size_t>(m, 0));
  state.n_kh.assign(m, std::vector<std::size_t>(corpus.vocab_size, 0));
  state.n_k.assign(m, 0);
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    state.z[d].resize(corpus.docs[d].size());
    for (std::size_t i = 0; i < corpus.docs[d].size(); ++i) {
      const std::size_t k = rng.uniform_index(m);
      state.z[d][i] = k;
      ++state.n_pk[d][k];
      ++state.n_kh[k][corpus.docs[d][i]];
      ++state.n_k[k];
    }
  }
  return state;
}

namespace {

// Unnormalized Eq-style conditional written into a reusable buffer; returns
// the total weight. Counts must already exclude the token being resampled.
template <typename CountMatrix, typename CountRow>
double conditional_into(std::vector<double>& weight,
                        const std::vector<std::size_t>& doc_counts,
                        std::size_t herb, const CountMatrix& n_kh,
                        const CountRow& n_k, double alpha, double beta,
                        std::size_t vocab_size, double doc_denom) {
  const std::size_t m = weight.size();
  const double n_beta = static_cast<double>(vocab_size) * beta;
  double total = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double doc_part =
        (static_cast<double>(doc_counts[k]) + alpha) / doc_denom;
    const double herb_part = (static_cast<double>(n_kh[k][herb]) + beta) /
                             (static_cast<double>(n_k[k]) + n_beta);
    weight[k] = doc_part * herb_part;
    total += weight[k];
  }
  return total;
}

std::size_t draw_index(const std::vector<double>& weight, double total,
                       Rng& rng) {
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  for (std::size_t k = 0; k + 1 < weight.size(); ++k) {
    cumulative += weight[k];
    if (u < cumulative) return k;
  }
  return weight.size() - 1;
}

}  // namespace

std::vector<double> token_conditional(
    const std::vector<std::size_t>& doc_counts, std::size_t herb,
    const std::vector<std::vector<std::size_t>>& n_kh,
    const std::vector<std::size_t>& n_k, double alpha, double beta,
    std::size_t vocab_size) {
  const std::size_t m = doc_counts.size();
  require(m >= 1 && n_kh.size() == m && n_k.size() == m,
          "conditional: topic dimensions disagree");
  require(herb < vocab_size, "conditional: herb id out of range");
  std::size_t remaining = 0;
  for (std::size_t c : doc_counts) remaining += c;
  const double doc_denom =
      static_cast<double>(remaining) + static_cast<double>(m) * alpha;
  std::vector<double> weight(m);
  const double total = conditional_into(weight, doc_counts, herb, n_kh, n_k,
                                        alpha, beta, vocab_size, doc_denom);
  for (double& w : weight) w /= total;
  return weight;
}

void gibbs_sweep(GibbsState& state, const Corpus& corpus,
                 const LdaConfig& config, Rng& rng) {
  check_state(state, corpus, config.topic_count);

  const std::size_t m = config.topic_count;
  std::vector<double> weight(m);

  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const Prescription& doc = corpus.docs[d];
    auto& doc_counts = state.n_pk[d];
    const double doc_denom = static_cast<double>(doc.size() - 1) +
                             static_cast<double>(m) * config.alpha;
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const std::size_t herb = doc[i];
      const std::size_t old_k = state.z[d][i];
      --doc_counts[old_k];
      --state.n_kh[old_k][herb];
      --state.n_k[old_k];

      const double total =
          conditional_into(weight, doc_counts, herb, state.n_kh, state.n_k,
                           config.alpha, config.beta, corpus.vocab_size,
                           doc_denom);
      const std::size_t new_k = draw_index(weight, total, rng);

      state.z[d][i] = new_k;
      ++doc_counts[new_k];
      ++state.n_kh[new_k][herb];
      ++state.n_k[new_k];
    }
  }
}

TopicDistribution doc_topic_distribution(const std::vector<std::size_t>& counts,
                                         double alpha, std::size_t m) {
  require(counts.size() == m, "doc distribution: count vector length mismatch");
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  const double denom =
      static_cast<double>(total) + static_cast<double>(m) * alpha;
  TopicDistribution dist(m);
  for (std::size_t k = 0; k < m; ++k)
    dist[k] = (static_cast<double>(counts[k]) + alpha) / denom;
  return dist;
}

namespace {

TopicModel freeze_model(const GibbsState& state, const LdaConfig& config,
                        std::size_t vocab_size) {
  TopicModel model;
  model.topic_count = config.topic_count;
  model.alpha = config.alpha;
  model.beta = config.beta;
  model.vocab_size = vocab_size;
  model.n_kh.assign(config.topic_count,
                    std::vector<std::uint64_t>(vocab_size, 0));
  model.n_k.assign(config.topic_count, 0);
  for (std::size_t k = 0; k < config.topic_count; ++k)
    for (std::size_t h = 0; h < vocab_size; ++h) {
      model.n_kh[k][h] = state.n_kh[k][h];
      model.n_k[k] += state.n_kh[k][h];
    }
  return model;
}

}  // namespace

FitResult fit(const Corpus& corpus, const LdaConfig& config) {
  require(!corpus.docs.empty(), "lda fit: empty corpus");
  require(config.topic_count >= 1, "lda fit: topic count must be >= 1");
  require(config.alpha > 0.0 && config.beta > 0.0,
          "lda fit: priors must be positive");
  require(config.sampling_sweeps >= 1, "lda fit: need at least one sweep");
  for (const auto& doc : corpus.docs) {
    require(!doc.empty(), "lda fit: empty prescription");
    for (std::size_t id : doc)
      require(id < corpus.vocab_size, "lda fit: herb id out of range");
  }
  require(config.topic_count <= corpus.token_count(),
          "lda fit: more topics than tokens");

  Rng rng(config.seed);
  GibbsState state = init_state(corpus, config, rng);
  for (std::size_t s = 0; s < config.burnin_sweeps; ++s)
    gibbs_sweep(state, corpus, config, rng);

  std::vector<TopicDistribution> averaged(
      corpus.docs.size(), TopicDistribution(config.topic_count, 0.0));
  for (std::size_t s = 0; s < config.sampling_sweeps; ++s) {
    gibbs_sweep(state, corpus, config, rng);
    for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
      TopicDistribution dist =
          doc_topic_distribution(state.n_pk[d], config.alpha, config.topic_count);
      for (std::size_t k = 0; k < config.topic_count; ++k)
        averaged[d][k] += dist[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(config.sampling_sweeps);
  for (auto& dist : averaged)
    for (double& p : dist) p *= inv;

  FitResult result;
  result.model = freeze_model(state, config, corpus.vocab_size);
  result.doc_topics = std::move(averaged);
  return result;
}

double TopicModel::phi(std::size_t k, std::size_t h) const {
  return (static_cast<double>(n_kh[k][h]) + beta) /
         (static_cast<double>(n_k[k]) +
          static_cast<double>(vocab_size) * beta);
}

std::vector<double> TopicModel::phi_row(std::size_t k) const {
  std::vector<double> row(vocab_size);
  for (std::size_t h = 0; h < vocab_size; ++h) row[h] = phi(k, h);
  return row;
}

TopicDistribution infer_topics(const TopicModel& model,
                               const Prescription& prescription,
                               std::uint64_t seed) {
  require(!prescription.empty(), "infer: empty prescription");
  Prescription kept;
  for (std::size_t id : prescription) {
    if (id < model.vocab_size) {
      kept.push_back(id);
    } else {
      std::fprintf(stderr,
                   "infer: dropping herb id %zu outside vocabulary of %zu\n",
                   id, model.vocab_size);
    }
  }
  require(!kept.empty(), "infer: no herb in the prescription is known");

  constexpr std::size_t kSweeps = 50;
  constexpr std::size_t kAveraged = 25;
  const std::size_t m = model.topic_count;

  Rng rng(seed);
  std::vector<std::size_t> z(kept.size());
  std::vector<std::size_t> doc_counts(m, 0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    z[i] = rng.uniform_index(m);
    ++doc_counts[z[i]];
  }

  const double doc_denom = static_cast<double>(kept.size() - 1) +
                           static_cast<double>(m) * model.alpha;
  std::vector<double> weight(m);
  TopicDistribution averaged(m, 0.0);
  for (std::size_t s = 0; s < kSweeps; ++s) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const std::size_t herb = kept[i];
      --doc_counts[z[i]];
      const double total =
          conditional_into(weight, doc_counts, herb, model.n_kh, model.n_k,
                           model.alpha, model.beta, model.vocab_size,
                           doc_denom);
      const std::size_t new_k = draw_index(weight, total, rng);
      z[i] = new_k;
      ++doc_counts[new_k];
    }
    if (s + kAveraged >= kSweeps) {
      TopicDistribution dist = doc_topic_distribution(doc_counts, model.alpha, m);
      for (std::size_t k = 0; k < m; ++k) averaged[k] += dist[k];
    }
  }
  for (double& p : averaged) p /= static_cast<double>(kAveraged);
  return averaged;
}

double kl_topics(const TopicDistribution& p, const TopicDistribution& g) {
  require(!p.empty() && p.size() == g.size(),
          "kl: distributions must share a positive length");
  double sum_p = 0.0, sum_g = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    require(p[k] > 0.0 && g[k] > 0.0, "kl: entries must be strictly positive");
    sum_p += p[k];
    sum_g += g[k];
  }
  require(std::fabs(sum_p - 1.0) <= 1e-6 && std::fabs(sum_g - 1.0) <= 1e-6,
          "kl: inputs must sum to 1");
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    total += p[k] * std::log(p[k] / g[k]);
  return total / static_cast<double>(p.size());
}

void save_topic_model(const TopicModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("topic model: cannot write " + path);
  binio::put_magic(os, kModelMagic);
  binio::put_u32(os, kModelVersion);
  binio::put_u64(os, model.topic_count);
  binio::put_f64(os, model.alpha);
  binio::put_f64(os, model.beta);
  binio::put_u64(os, model.vocab_hash);
  binio::put_u64(os, model.vocab_size);
  for (const auto& row : model.n_kh)
    for (std::uint64_t count : row) binio::put_u64(os, count);
  if (!os) throw std::runtime_error("topic model: write failed for " + path);
}

TopicModel load_topic_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("topic model: cannot read " + path);
  binio::expect_magic(is, kModelMagic, "topic model");
  const std::uint32_t version = binio::get_u32(is);
  if (version != kModelVersion)
    throw std::runtime_error("topic model: unsupported version");
  TopicModel model;
  model.topic_count = binio::get_u64(is);
  model.alpha = binio::get_f64(is);
  model.beta = binio::get_f64(is);
  model.vocab_hash = binio::get_u64(is);
  model.vocab_size = binio::get_u64(is);
  model.n_kh.assign(model.topic_count,
                    std::vector<std::uint64_t>(model.vocab_size, 0));
  model.n_k.assign(model.topic_count, 0);
  for (std::size_t k = 0; k < model.topic_count; ++k)
    for (std::size_t h = 0; h < model.vocab_size; ++h) {
      model.n_kh[k][h] = binio::get_u64(is);
      model.n_k[k] += model.n_kh[k][h];
    }
  return model;
}

}  // namespace tonguerx::lda
